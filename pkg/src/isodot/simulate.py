"""Count-level scenario generation for calibration and power studies.

Scenarios pin a cluster structure, per-isoform truth (a baseline block and,
under a covariate, an endpoint block), a dispersion, per-sample scales and
covariates.  ``draw_counts`` samples exon-set counts from the implied NB
means, independently per cell, deterministically per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .annotation import ExonSetKey, Isoform, TranscriptCluster, Exon
from .candidates import DesignMatrix, build_design_matrix, DEFAULT_ELEN_MIN
from .efflen import FragmentLengthDist
from .rng import stream
from .solver import PHI_MIN

__all__ = [
    "Scenario",
    "draw_counts",
    "make_eqtl_scenario",
    "make_case_control_scenario",
    "random_cluster",
    "default_fraglen_dist",
]

COUNT_CAP = 2**31 - 1
DEFAULT_PHI = 0.1


def default_fraglen_dist() -> FragmentLengthDist:
    """A simple paired-end fragment length distribution (76 bp reads)."""
    return FragmentLengthDist(d=76, l_M=400, probs={150: 0.3, 200: 0.4, 250: 0.3})


@dataclass(frozen=True)
class Scenario:
    """One cluster's generative truth.

    ``a`` holds the per-isoform baseline expression; ``b`` the per-isoform
    expression at covariate value 1 (equal to ``a`` under the null).  Sample
    ``i`` expresses isoform ``u`` at ``a_u*(1-g_i) + b_u*g_i`` scaled by
    ``t_i``.
    """

    cluster: TranscriptCluster
    dist: FragmentLengthDist
    a: np.ndarray
    b: np.ndarray
    phi: float
    t: np.ndarray
    G: np.ndarray
    hypothesis: str                     # 'null' or 'alternative'
    kind: Optional[str] = None          # case-control flavor: 'die' or 'diu'
    elen_min: float = DEFAULT_ELEN_MIN
    design: DesignMatrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if np.any(a < 0) or np.any(b < 0):
            raise ValueError("isoform expressions must be nonnegative")
        if self.hypothesis == "null" and not np.array_equal(a, b):
            raise ValueError("null scenario requires equal a and b blocks")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        G = np.asarray(self.G, dtype=float)
        if G.ndim == 1:
            G = G[:, None]
        object.__setattr__(self, "G", G)
        design = build_design_matrix(
            self.cluster,
            self.cluster.annotated_isoforms,
            self.dist,
            elen_min=self.elen_min,
        )
        object.__setattr__(self, "design", design)

    @property
    def n_samples(self) -> int:
        return self.t.shape[0]

    @property
    def isoforms(self) -> tuple[Isoform, ...]:
        return self.cluster.annotated_isoforms

    def means(self) -> np.ndarray:
        """Expected counts, one row per sample, columns aligned to design rows."""
        g = self.G[:, 0]
        gamma = np.outer(1.0 - g, self.a) + np.outer(g, self.b)  # n x p
        return self.t[:, None] * (gamma @ self.design.values.T)


def draw_counts(scenario: Scenario, seed: int) -> tuple[tuple[ExonSetKey, ...], np.ndarray]:
    """Sample exon-set counts from the scenario, independently per cell."""
    mu = scenario.means()
    rng = stream(seed, scenario.cluster.cluster_id, "counts")
    if scenario.phi < PHI_MIN:
        counts = rng.poisson(mu)
    else:
        size = 1.0 / scenario.phi
        p = 1.0 / (1.0 + scenario.phi * mu)
        counts = rng.negative_binomial(size, p)
    if counts.max(initial=0) > COUNT_CAP:
        raise OverflowError("simulated count exceeds 2^31 - 1")
    return scenario.design.rows, counts.astype(np.int64)


def _draw_expression(rng: np.random.Generator, p: int) -> np.ndarray:
    """Half the isoforms silent, the rest uniform on [0.5, 1]."""
    gamma = np.zeros(p)
    expressed = rng.permutation(p)[p // 2 :]
    gamma[expressed] = rng.uniform(0.5, 1.0, size=expressed.size)
    return gamma


def _expressed_set(gamma: np.ndarray) -> frozenset[int]:
    return frozenset(int(i) for i in np.flatnonzero(gamma > 0))


def make_eqtl_scenario(
    cluster: TranscriptCluster,
    genotypes: Sequence[float],
    hypothesis: str,
    *,
    dist: Optional[FragmentLengthDist] = None,
    phi: float = DEFAULT_PHI,
    seed: int = 0,
    elen_min: float = DEFAULT_ELEN_MIN,
) -> Scenario:
    """Genotype-covariate scenario for one cluster.

    Genotypes are coded 0, 0.5, 1 (AA, AB, BB).  Under the null one
    expression draw is shared across genotypes; under the alternative the
    baseline and endpoint blocks get independent draws with distinct
    expressed subsets.
    """
    if cluster.annotated_isoforms is None or len(cluster.annotated_isoforms) < 2:
        raise ValueError("eQTL scenario needs a cluster with >= 2 isoforms")
    g = np.asarray(genotypes, dtype=float)
    if np.any((g < 0) | (g > 1)):
        raise ValueError("genotypes must be coded within [0, 1]")
    p = len(cluster.annotated_isoforms)
    rng = stream(seed, cluster.cluster_id, "truth")
    a = _draw_expression(rng, p)
    if hypothesis == "null":
        b = a.copy()
    elif hypothesis == "alternative":
        b = _draw_expression(rng, p)
        for _ in range(64):
            if _expressed_set(b) != _expressed_set(a):
                break
            b = _draw_expression(rng, p)
        else:
            raise RuntimeError("could not draw a distinct expressed subset")
    else:
        raise ValueError(f"unknown hypothesis {hypothesis!r}")
    t = rng.uniform(0.75, 1.25, size=g.size)
    return Scenario(
        cluster=cluster, dist=dist or default_fraglen_dist(), a=a, b=b,
        phi=phi, t=t, G=g[:, None], hypothesis=hypothesis, elen_min=elen_min,
    )


def make_case_control_scenario(
    clusters: Sequence[TranscriptCluster],
    mode: str,
    *,
    labels: Optional[Sequence[str]] = None,
    dist: Optional[FragmentLengthDist] = None,
    phi: float = DEFAULT_PHI,
    seed: int = 0,
    elen_min: float = DEFAULT_ELEN_MIN,
) -> list[Scenario]:
    """One-case-versus-one-control scenarios across clusters.

    ``mode`` picks the alternative flavor: 'die' scales total expression by a
    fold drawn uniformly from [2, 4] (applied to case or control
    alternately, keeping overall depth balanced), 'diu' redraws the
    expressed subset and rescales so the expression totals match while the
    proportions differ.  ``labels`` gives each cluster's hypothesis
    ('null'/'alternative'); default alternates.
    """
    if mode not in ("die", "diu"):
        raise ValueError(f"unknown case-control mode {mode!r}")
    if not clusters:
        raise ValueError("no clusters to simulate")
    if labels is None:
        labels = ["null" if i % 2 == 0 else "alternative" for i in range(len(clusters))]
    if len(labels) != len(clusters):
        raise ValueError("one label per cluster required")
    dist = dist or default_fraglen_dist()
    scenarios = []
    for i, (cluster, hypothesis) in enumerate(zip(clusters, labels)):
        if cluster.annotated_isoforms is None or not cluster.annotated_isoforms:
            raise ValueError(f"cluster {cluster.cluster_id} has no isoforms")
        p = len(cluster.annotated_isoforms)
        rng = stream(seed, cluster.cluster_id, "truth")
        if p >= 2:
            a = _draw_expression(rng, p)
        else:
            a = rng.uniform(0.5, 1.0, size=1)
        if hypothesis == "null":
            b = a.copy()
        elif mode == "die":
            fold = rng.uniform(2.0, 4.0)
            if i % 2 == 0:
                b = a * fold
            else:
                b = a / fold
        else:
            b = _draw_expression(rng, p)
            for _ in range(64):
                if p < 2 or _expressed_set(b) != _expressed_set(a):
                    break
                b = _draw_expression(rng, p)
            total = b.sum()
            if total <= 0:
                b = a[::-1].copy()
                total = b.sum()
            b = b * (a.sum() / total)
        scenarios.append(
            Scenario(
                cluster=cluster, dist=dist, a=a, b=b, phi=phi,
                t=np.ones(2), G=np.array([[0.0], [1.0]]),
                hypothesis=hypothesis, kind=mode, elen_min=elen_min,
            )
        )
    return scenarios


def random_cluster(
    cluster_id: str,
    *,
    seed: int = 0,
    n_exons: Optional[int] = None,
    n_isoforms: Optional[int] = None,
) -> TranscriptCluster:
    """A small random cluster with annotated isoforms, for simulations.

    Exon lengths are drawn from [80, 250] bp; isoforms are the full exon
    chain plus variants that each drop one exon (keeping at least two).
    """
    rng = stream(seed, cluster_id, "structure")
    k = int(n_exons if n_exons is not None else rng.integers(3, 6))
    lengths = rng.integers(80, 251, size=k)
    start = 1000
    exons = []
    for i, ln in enumerate(lengths, start=1):
        exons.append(Exon(index=i, length_bp=int(ln), genomic_start=start, genomic_end=start + int(ln) - 1))
        start += int(ln) + 100
    full = tuple(range(1, k + 1))
    variants = {full}
    want = int(n_isoforms if n_isoforms is not None else rng.integers(2, 4))
    dropped = list(rng.permutation(k))
    for drop in dropped:
        if len(variants) >= want:
            break
        reduced = tuple(e for e in full if e != drop + 1)
        if len(reduced) >= 2:
            variants.add(reduced)
    isoforms = tuple(Isoform(t) for t in sorted(variants))
    return TranscriptCluster(
        cluster_id=cluster_id,
        exons=tuple(exons),
        gene_ids=frozenset({cluster_id}),
        annotated_isoforms=isoforms,
    )
