"""Differential isoform expression (DIE) and usage (DIU) tests.

Both tests compare penalized NB fits of a null model (covariates of
interest removed) and an alternative model (covariate-expanded design) via
the likelihood-ratio statistic 2*(l1 - l0) evaluated with unpenalized
log-likelihoods at the penalized estimates.  Because the fits are penalized,
the LR statistic has no standard asymptotic null; p-values come from a
parametric bootstrap (valid at any sample size, including one case versus
one control) or from permutation of the tested covariates.

DIE scales samples by read depth; DIU conditions on the per-sample cluster
totals, so it asks about relative isoform usage.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .annotation import ExonSetKey
from .candidates import build_covariate_design
from .rng import stream
from .solver import (
    MU_FLOOR,
    PHI_MIN,
    PenalizedFit,
    fit_grid,
    fit_penalized_nb,
)

__all__ = [
    "ClusterData",
    "TestSpec",
    "TestResult",
    "fit_null_alt",
    "lr_statistic",
    "mc_pvalue",
    "bootstrap_pvalue",
    "permutation_pvalue",
    "run_cluster_test",
    "bh_adjust",
    "combine_pvalues",
]

logger = logging.getLogger("isodot.testing")

EARLY_STOP_AT = 100
EARLY_STOP_PV = 0.25
EARLY_STOP_Z = 2.5758293035489004  # two-sided 99%


@dataclass(frozen=True)
class ClusterData:
    """Per-cluster inputs for fitting and testing.

    ``X`` is the m-by-p effective-length design (elen_min included), ``Y``
    the n-by-m counts with one row per sample, and ``depths`` the per-sample
    read-depth scales used by DIE (DIU derives its scales from ``Y``).
    """

    cluster_id: str
    X: np.ndarray
    Y: np.ndarray
    isoform_ids: tuple[str, ...]
    row_keys: tuple[ExonSetKey, ...] = ()
    depths: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float))
        object.__setattr__(self, "Y", np.asarray(self.Y, dtype=float))
        if self.Y.ndim != 2 or self.Y.shape[1] != self.X.shape[0]:
            raise ValueError("counts and design are misaligned")

    @property
    def n_samples(self) -> int:
        return self.Y.shape[0]


@dataclass(frozen=True)
class TestSpec:
    """What to test and how to calibrate it."""

    __test__ = False  # not a pytest class

    kind: str = "diu"                 # 'die' or 'diu'
    method: str = "bootstrap"         # 'bootstrap' or 'permutation'
    n_replicates: int = 1000
    seed: int = 0
    covariate_columns: Optional[tuple[int, ...]] = None  # None = all columns
    fast_boot: bool = False
    early_stop: bool = False

    def __post_init__(self):
        if self.kind not in ("die", "diu"):
            raise ValueError(f"unknown test kind {self.kind!r}")
        if self.method not in ("bootstrap", "permutation"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be >= 1")


@dataclass(frozen=True)
class TestResult:
    """Outcome of one cluster-level test.

    ``pvalue`` uses the add-one Monte Carlo convention
    ``(1 + #{LR* >= LR}) / (replicates + 1)``; ``raw_prop`` is the plain
    proportion.  ``pvalue`` is None for skipped clusters.
    """

    __test__ = False  # not a pytest class

    cluster_id: str
    kind: str
    lr: Optional[float]
    pvalue: Optional[float]
    raw_prop: Optional[float]
    method: str
    replicates_used: int
    null_loglik: Optional[float] = None
    alt_loglik: Optional[float] = None
    null_nonzero: Optional[int] = None
    alt_nonzero: Optional[int] = None
    flags: tuple[str, ...] = ()


def _normalized_scales(kind: str, Y: np.ndarray, depths: Optional[np.ndarray]) -> np.ndarray:
    if kind == "diu":
        totals = Y.sum(axis=1).astype(float)
        mean = totals.mean()
        if mean <= 0:
            raise ValueError("cluster has zero total counts")
        return totals / mean
    if depths is None:
        raise ValueError("DIE requires per-sample read depths")
    t = np.asarray(depths, dtype=float)
    if np.any(t <= 0):
        raise ValueError("read depths must be positive")
    return t / t.mean()


def _tested_columns(G: np.ndarray, spec_cols: Optional[tuple[int, ...]]) -> list[int]:
    q = G.shape[1]
    cols = list(range(q)) if spec_cols is None else sorted(set(spec_cols))
    if not cols or any(c < 0 or c >= q for c in cols):
        raise ValueError("tested covariate columns out of range")
    for c in cols:
        if np.ptp(G[:, c]) == 0:
            raise ValueError("covariate has no variation")
    return cols


def _null_alt_designs(
    X: np.ndarray,
    scales: np.ndarray,
    G: np.ndarray,
    tested: Sequence[int],
) -> tuple[np.ndarray, np.ndarray]:
    keep = [c for c in range(G.shape[1]) if c not in set(tested)]
    G0 = G[:, keep] if keep else None
    W0 = build_covariate_design(X, scales, G0).matrix
    W1 = build_covariate_design(X, scales, G).matrix
    return W0, W1


def fit_null_alt(
    data: ClusterData,
    covariates: np.ndarray,
    spec: TestSpec,
) -> tuple[PenalizedFit, PenalizedFit, str]:
    """Fit null and alternative models for one cluster.

    The null design drops the tested covariate blocks (width p when every
    covariate is tested); the alternative keeps all (q+1)p columns.  Both run
    the full tuning grid under the selection rule implied by the
    alternative's observation/parameter counts.
    """
    G = np.asarray(covariates, dtype=float)
    tested = _tested_columns(G, spec.covariate_columns)
    scales = _normalized_scales(spec.kind, data.Y, data.depths)
    W0, W1 = _null_alt_designs(data.X, scales, G, tested)
    y = data.Y.reshape(-1)
    rule = "bic" if y.size > W1.shape[1] else "extbic"
    fit0 = fit_grid(y, W0, rule=rule)
    fit1 = fit_grid(y, W1, rule=rule)
    return fit0, fit1, rule


def lr_statistic(fit0: PenalizedFit, fit1: PenalizedFit) -> float:
    """2*(l1 - l0) with unpenalized log-likelihoods; may be negative."""
    return 2.0 * (fit1.loglik - fit0.loglik)


def mc_pvalue(lr_obs: float, draws: Sequence[float]) -> tuple[float, float]:
    """Add-one Monte Carlo p-value and the raw exceedance proportion.

    Ties (LR* == LR) count against significance.
    """
    draws = np.asarray(list(draws), dtype=float)
    hits = int(np.count_nonzero(draws >= lr_obs))
    return (1.0 + hits) / (draws.size + 1.0), hits / max(draws.size, 1)


def _sample_counts(rng: np.random.Generator, mu: np.ndarray, phi: float) -> np.ndarray:
    """Independent NB (or Poisson-limit) draws per exon set per sample."""
    mu = np.clip(mu, 0.0, None)
    if phi < PHI_MIN:
        return rng.poisson(mu).astype(float)
    size = 1.0 / phi
    p = 1.0 / (1.0 + phi * mu)
    return rng.negative_binomial(size, p).astype(float)


def _refit_lr(
    data: ClusterData,
    Ystar: np.ndarray,
    G: np.ndarray,
    tested: Sequence[int],
    spec: TestSpec,
    rule: str,
    frozen: Optional[tuple] = None,
) -> float:
    """Refit null and alternative on resampled counts and return their LR.

    DIU scales are recomputed from the resampled counts (the refit applies
    the full procedure to the new data); DIE depths stay fixed.
    """
    scales = _normalized_scales(spec.kind, Ystar, data.depths)
    W0, W1 = _null_alt_designs(data.X, scales, G, tested)
    y = Ystar.reshape(-1)
    if frozen is not None:
        pen0, pen1 = frozen
        fit0 = fit_penalized_nb(y, W0, pen0)
        fit1 = fit_penalized_nb(y, W1, pen1)
    else:
        fit0 = fit_grid(y, W0, rule=rule)
        fit1 = fit_grid(y, W1, rule=rule)
    return lr_statistic(fit0, fit1)


def _early_stop(hits: int, used: int) -> bool:
    phat = (1.0 + hits) / (used + 1.0)
    half = EARLY_STOP_Z * math.sqrt(max(phat * (1.0 - phat), 1e-12) / used)
    return phat - half > EARLY_STOP_PV


def bootstrap_pvalue(
    data: ClusterData,
    covariates: np.ndarray,
    spec: TestSpec,
    observed: Optional[tuple[PenalizedFit, PenalizedFit, str]] = None,
) -> TestResult:
    """Parametric-bootstrap p-value for one cluster.

    Counts are resampled from the fitted null model (independently per exon
    set per sample), both models are refit on each resample, and the
    add-one exceedance proportion of the LR statistics is reported.
    Deterministic given the spec seed.
    """
    G = np.asarray(covariates, dtype=float)
    tested = _tested_columns(G, spec.covariate_columns)
    if observed is None:
        observed = fit_null_alt(data, G, spec)
    fit0, fit1, rule = observed
    lr_obs = lr_statistic(fit0, fit1)

    scales = _normalized_scales(spec.kind, data.Y, data.depths)
    W0 = _null_alt_designs(data.X, scales, G, tested)[0]
    mu0 = (W0 @ fit0.b).reshape(data.Y.shape)
    if fit0.n_nonzero == 0 or float(mu0.max(initial=0.0)) <= MU_FLOOR:
        return TestResult(
            cluster_id=data.cluster_id, kind=spec.kind, lr=lr_obs, pvalue=1.0,
            raw_prop=1.0, method="bootstrap", replicates_used=0,
            null_loglik=fit0.loglik, alt_loglik=fit1.loglik,
            null_nonzero=fit0.n_nonzero, alt_nonzero=fit1.n_nonzero,
            flags=("degenerate_null",),
        )

    frozen = (fit0.tuning, fit1.tuning) if spec.fast_boot else None
    draws = []
    hits = 0
    flags = []
    for r in range(spec.n_replicates):
        rng = stream(spec.seed, data.cluster_id, "boot", r)
        Ystar = _sample_counts(rng, mu0, fit0.phi)
        if Ystar.sum() <= 0:
            draws.append(0.0)  # degenerate resample carries no signal
        else:
            draws.append(_refit_lr(data, Ystar, G, tested, spec, rule, frozen))
        if draws[-1] >= lr_obs:
            hits += 1
        if spec.early_stop and (r + 1) == EARLY_STOP_AT and _early_stop(hits, r + 1):
            flags.append("early_stop")
            break
    pvalue, raw = mc_pvalue(lr_obs, draws)
    return TestResult(
        cluster_id=data.cluster_id, kind=spec.kind, lr=lr_obs, pvalue=pvalue,
        raw_prop=raw, method="bootstrap", replicates_used=len(draws),
        null_loglik=fit0.loglik, alt_loglik=fit1.loglik,
        null_nonzero=fit0.n_nonzero, alt_nonzero=fit1.n_nonzero,
        flags=tuple(flags),
    )


def _distinct_orderings(values: list[tuple]):
    """All distinct orderings of a multiset, in lexicographic order."""
    counter = Counter(values)
    n = len(values)
    prefix: list[tuple] = []

    def rec():
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for v in sorted(counter):
            if counter[v] > 0:
                counter[v] -= 1
                prefix.append(v)
                yield from rec()
                prefix.pop()
                counter[v] += 1

    yield from rec()


def _n_distinct_orderings(values: list[tuple]) -> int:
    counter = Counter(values)
    total = math.factorial(len(values))
    for c in counter.values():
        total //= math.factorial(c)
    return total


def permutation_pvalue(
    data: ClusterData,
    covariates: np.ndarray,
    spec: TestSpec,
    observed: Optional[tuple[PenalizedFit, PenalizedFit, str]] = None,
) -> TestResult:
    """Permutation p-value: shuffle the tested covariates, refit the alternative.

    The null fit does not involve the tested covariates, so its
    log-likelihood is fixed across permutations.  When fewer distinct
    non-identity orderings exist than requested replicates, all of them are
    used and the result is flagged as truncated.
    """
    G = np.asarray(covariates, dtype=float)
    tested = _tested_columns(G, spec.covariate_columns)
    n = G.shape[0]
    if n < 10:
        logger.warning(
            "cluster %s: permutation test with n=%d samples; "
            "population-level inference needs roughly >=5 per group",
            data.cluster_id, n,
        )
    if observed is None:
        observed = fit_null_alt(data, G, spec)
    fit0, fit1, rule = observed
    lr_obs = lr_statistic(fit0, fit1)

    rows = [tuple(G[i, tested]) for i in range(n)]
    available = _n_distinct_orderings(rows) - 1  # excluding the observed order
    flags = []
    orderings = None
    if available <= 0:
        raise ValueError("covariate has no variation")
    if available <= spec.n_replicates:
        observed_order = tuple(rows)
        orderings = [o for o in _distinct_orderings(rows) if o != observed_order]
        if available < spec.n_replicates:
            flags.append("permutations_truncated")

    scales = _normalized_scales(spec.kind, data.Y, data.depths)
    y = data.Y.reshape(-1)
    draws = []
    hits = 0
    n_reps = len(orderings) if orderings is not None else spec.n_replicates
    for r in range(n_reps):
        Gp = G.copy()
        if orderings is not None:
            Gp[:, tested] = np.asarray(orderings[r])
        else:
            rng = stream(spec.seed, data.cluster_id, "perm", r)
            perm = rng.permutation(n)
            Gp[:, tested] = G[np.ix_(perm, tested)]
        W1 = build_covariate_design(data.X, scales, Gp).matrix
        fit1_star = fit_grid(y, W1, rule=rule)
        draws.append(2.0 * (fit1_star.loglik - fit0.loglik))
        if draws[-1] >= lr_obs:
            hits += 1
        if spec.early_stop and (r + 1) == EARLY_STOP_AT and _early_stop(hits, r + 1):
            flags.append("early_stop")
            break
    pvalue, raw = mc_pvalue(lr_obs, draws)
    return TestResult(
        cluster_id=data.cluster_id, kind=spec.kind, lr=lr_obs, pvalue=pvalue,
        raw_prop=raw, method="permutation", replicates_used=len(draws),
        null_loglik=fit0.loglik, alt_loglik=fit1.loglik,
        null_nonzero=fit0.n_nonzero, alt_nonzero=fit1.n_nonzero,
        flags=tuple(flags),
    )


def run_cluster_test(
    data: ClusterData,
    covariates: np.ndarray,
    spec: TestSpec,
) -> TestResult:
    """Run one DIE or DIU test on a cluster, dispatching on the spec.

    Clusters with zero total counts are skipped with an NA record.
    """
    if float(data.Y.sum()) <= 0:
        return TestResult(
            cluster_id=data.cluster_id, kind=spec.kind, lr=None, pvalue=None,
            raw_prop=None, method=spec.method, replicates_used=0,
            flags=("skipped_zero_counts",),
        )
    if spec.method == "permutation":
        return permutation_pvalue(data, covariates, spec)
    return bootstrap_pvalue(data, covariates, spec)


def bh_adjust(pvalues: Sequence[float]) -> np.ndarray:
    """Benjamini-Hochberg step-up q-values."""
    p = np.asarray(list(pvalues), dtype=float)
    if p.size == 0:
        return p
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("p-values must lie in (0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.minimum(q_sorted, 1.0)
    return q


def combine_pvalues(pvalues: Sequence[float], method: str = "fisher") -> float:
    """Meta-analytic combination of independent p-values.

    Fisher: -2*sum(log p) against chi-squared with 2k df.  Stouffer:
    sum(z_i)/sqrt(k) against standard normal.
    """
    p = np.asarray(list(pvalues), dtype=float)
    if p.size == 0:
        raise ValueError("no p-values to combine")
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("p-values must lie in (0, 1]")
    if method == "fisher":
        stat = -2.0 * float(np.sum(np.log(p)))
        return float(stats.chi2.sf(stat, df=2 * p.size))
    if method == "stouffer":
        z = stats.norm.isf(p)
        return float(stats.norm.sf(float(np.sum(z)) / math.sqrt(p.size)))
    raise ValueError(f"unknown combination method {method!r}")
