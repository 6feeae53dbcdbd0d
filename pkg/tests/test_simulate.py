import numpy as np
import pytest

from isodot import (
    Scenario,
    draw_counts,
    make_case_control_scenario,
    make_eqtl_scenario,
    random_cluster,
)
from isodot.simulate import default_fraglen_dist


def eqtl_cluster(seed=0):
    return random_cluster(f"cl{seed}", seed=seed, n_exons=4, n_isoforms=3)


class TestDrawCounts:
    def test_zero_truth_zero_counts(self):
        cluster = eqtl_cluster(1)
        p = len(cluster.annotated_isoforms)
        sc = Scenario(
            cluster=cluster, dist=default_fraglen_dist(),
            a=np.zeros(p), b=np.zeros(p), phi=0.1,
            t=np.ones(3), G=np.array([[0.0], [0.5], [1.0]]), hypothesis="null",
        )
        _, counts = draw_counts(sc, seed=4)
        assert counts.sum() == 0

    def test_seed_determinism(self):
        sc = make_eqtl_scenario(eqtl_cluster(2), [0, 0.5, 1.0], "null", seed=9)
        _, c1 = draw_counts(sc, seed=11)
        _, c2 = draw_counts(sc, seed=11)
        _, c3 = draw_counts(sc, seed=12)
        assert np.array_equal(c1, c2)
        assert not np.array_equal(c1, c3)

    def test_poisson_limit_mean_variance(self):
        cluster = eqtl_cluster(3)
        p = len(cluster.annotated_isoforms)
        sc = Scenario(
            cluster=cluster, dist=default_fraglen_dist(),
            a=np.full(p, 0.8), b=np.full(p, 0.8), phi=0.0,
            t=np.ones(1), G=np.array([[0.0]]), hypothesis="null",
        )
        draws = np.array([draw_counts(sc, seed=s)[1][0] for s in range(10_000)])
        mu = sc.means()[0]
        big = mu >= 50
        ratio = draws.var(axis=0)[big] / draws.mean(axis=0)[big]
        assert np.all(np.abs(ratio - 1.0) < 0.1)

    def test_mean_and_nb_variance(self):
        cluster = eqtl_cluster(4)
        p = len(cluster.annotated_isoforms)
        phi = 0.15
        sc = Scenario(
            cluster=cluster, dist=default_fraglen_dist(),
            a=np.full(p, 0.9), b=np.full(p, 0.9), phi=phi,
            t=np.ones(1), G=np.array([[0.0]]), hypothesis="null",
        )
        draws = np.array([draw_counts(sc, seed=s)[1][0] for s in range(10_000)])
        mu = sc.means()[0]
        se = np.sqrt((mu + phi * mu**2) / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - mu) <= 3 * se + 1e-9)
        big = mu >= 50
        expected_var = (mu + phi * mu**2)[big]
        assert np.all(np.abs(draws.var(axis=0)[big] / expected_var - 1.0) < 0.15)

    def test_count_cap_enforced(self):
        cluster = eqtl_cluster(5)
        p = len(cluster.annotated_isoforms)
        sc = Scenario(
            cluster=cluster, dist=default_fraglen_dist(),
            a=np.full(p, 1e9), b=np.full(p, 1e9), phi=0.0,
            t=np.full(1, 1e3), G=np.array([[0.0]]), hypothesis="null",
        )
        with pytest.raises(OverflowError):
            draw_counts(sc, seed=1)


class TestEqtlScenario:
    def test_null_blocks_equal(self):
        sc = make_eqtl_scenario(eqtl_cluster(6), [0, 0.5, 1], "null", seed=2)
        assert np.array_equal(sc.a, sc.b)

    def test_alternative_expressed_sets_differ(self):
        for seed in range(5):
            sc = make_eqtl_scenario(eqtl_cluster(7), [0, 0.5, 1], "alternative", seed=seed)
            assert set(np.flatnonzero(sc.a > 0)) != set(np.flatnonzero(sc.b > 0))

    def test_half_isoforms_silent(self):
        sc = make_eqtl_scenario(eqtl_cluster(8), [0, 0.5, 1], "null", seed=3)
        p = sc.a.size
        assert np.count_nonzero(sc.a == 0) == p // 2
        expressed = sc.a[sc.a > 0]
        assert np.all((expressed >= 0.5) & (expressed <= 1.0))

    def test_genotype_coding_in_unit_interval(self):
        with pytest.raises(ValueError):
            make_eqtl_scenario(eqtl_cluster(9), [0, 1, 2], "null", seed=1)
        sc = make_eqtl_scenario(eqtl_cluster(9), [0.0, 0.5, 1.0], "null", seed=1)
        assert set(np.unique(sc.G)) <= {0.0, 0.5, 1.0}

    def test_needs_two_isoforms(self):
        cluster = random_cluster("tiny", seed=1, n_exons=3, n_isoforms=1)
        if cluster.annotated_isoforms and len(cluster.annotated_isoforms) >= 2:
            pytest.skip("generator produced extra isoforms")
        with pytest.raises(ValueError):
            make_eqtl_scenario(cluster, [0, 1.0], "null", seed=1)


class TestCaseControlScenario:
    def clusters(self, n=6):
        return [random_cluster(f"cc{i}", seed=i, n_exons=4, n_isoforms=3) for i in range(n)]

    def test_null_truth_identical(self):
        scenarios = make_case_control_scenario(
            self.clusters(), "die", labels=["null"] * 6, seed=4
        )
        for sc in scenarios:
            assert np.array_equal(sc.a, sc.b)
            assert sc.hypothesis == "null"

    def test_die_alternative_fold_in_range(self):
        scenarios = make_case_control_scenario(
            self.clusters(), "die", labels=["alternative"] * 6, seed=5
        )
        for sc in scenarios:
            mask = sc.a > 0
            folds = sc.b[mask] / sc.a[mask]
            assert np.allclose(folds, folds[0])
            fold = folds[0] if folds[0] >= 1 else 1.0 / folds[0]
            assert 2.0 <= fold <= 4.0

    def test_diu_alternative_equal_totals_different_proportions(self):
        scenarios = make_case_control_scenario(
            self.clusters(), "diu", labels=["alternative"] * 6, seed=6
        )
        for sc in scenarios:
            assert sc.b.sum() == pytest.approx(sc.a.sum(), rel=1e-12)
            assert not np.allclose(sc.a / sc.a.sum(), sc.b / sc.b.sum())

    def test_two_samples_binary_covariate(self):
        scenarios = make_case_control_scenario(self.clusters(2), "die", seed=7)
        for sc in scenarios:
            assert sc.t.shape == (2,)
            assert sc.G.tolist() == [[0.0], [1.0]]
