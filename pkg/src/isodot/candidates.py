"""Candidate-isoform selection and design-matrix assembly.

Candidates are built from the observed exon-set counts: start/end exons come
from the observed sets plus read-depth break points, consecutive-exon
isoforms span every (start, end) pair, and expressed exon-skipping sets are
spliced into compatible isoforms until the candidate budget is spent.
Annotated isoforms, when available, bypass generation entirely.

The design matrix stacks per-isoform effective-length profiles over the
informative exon sets; covariate-expanded forms turn multi-sample models
with per-sample scales and [0,1] covariates into one nonnegative regression.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .annotation import ExonSetKey, Isoform, TranscriptCluster
from .efflen import FragmentLengthDist, eff_len_profile, eff_len_single

__all__ = [
    "CandidateParams",
    "DesignMatrix",
    "CovariateDesign",
    "detect_break_points",
    "initial_start_end_exons",
    "score_exon_set_expression",
    "enumerate_candidate_isoforms",
    "build_design_matrix",
    "build_covariate_design",
    "rescale_covariates",
    "encode_categorical",
]

DEFAULT_ELEN_MIN = 1.0


@dataclass(frozen=True)
class CandidateParams:
    """Tunable knobs of candidate selection."""

    max_breaks: int = 5
    pval_breaks: float = 0.05
    pval_express: float = 0.01
    fold_express: float = 1.0 / 5.0
    p_max_rel: float = 10.0
    p_max_abs: int = 2000
    elen_min: float = DEFAULT_ELEN_MIN

    def __post_init__(self):
        if self.max_breaks < 1 or self.p_max_rel <= 0 or self.p_max_abs < 1:
            raise ValueError("candidate caps must be positive")
        if not (0 < self.pval_breaks < 1 and 0 < self.pval_express < 1):
            raise ValueError("p-value cutoffs must lie in (0, 1)")
        if self.fold_express <= 0 or self.elen_min <= 0:
            raise ValueError("fold_express and elen_min must be positive")


@dataclass(frozen=True)
class DesignMatrix:
    """Exon-set by candidate-isoform effective lengths (+ elen_min)."""

    rows: tuple[ExonSetKey, ...]
    cols: tuple[Isoform, ...]
    values: np.ndarray
    elen_min: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.rows), len(self.cols)):
            raise ValueError("design matrix shape disagrees with labels")
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return len(self.rows)

    @property
    def p(self) -> int:
        return len(self.cols)

    def counts_vector(self, counts: Mapping[ExonSetKey, float]) -> np.ndarray:
        """Counts aligned to the design rows; unobserved rows are zero."""
        return np.array([float(counts.get(key, 0)) for key in self.rows])


@dataclass(frozen=True)
class CovariateDesign:
    """Stacked multi-sample design with per-sample scales and covariates.

    ``matrix`` has one block of ``m`` rows per sample.  Without covariates
    the block is ``scale_i * X`` (width p); with q covariates it is
    ``[scale_i X sum_v(1-g_iv), scale_i X g_i1, ..., scale_i X g_iq]``
    (width (q+1)p).
    """

    matrix: np.ndarray
    n_samples: int
    m: int
    p: int
    q: int
    scales: np.ndarray
    covariates: Optional[np.ndarray]

    @property
    def width(self) -> int:
        return self.matrix.shape[1]


def detect_break_points(
    per_exon_counts: Sequence[float],
    per_exon_efflens: Sequence[float],
    params: CandidateParams,
) -> tuple[list[int], list[int]]:
    """Read-depth break points between adjacent exons.

    For each adjacent pair (k-1, k) a two-cell Pearson chi-squared test (1 df,
    no continuity correction) compares the observed counts against the split
    implied by the exons' effective lengths.  The ``min(max_breaks, #{p <
    pval_breaks})`` most significant breaks are kept, ties going to the lower
    exon index.  A break before exon k makes exon k-1 an end exon and exon k
    a start exon.  Pairs with zero combined count or nonpositive expected
    counts are skipped.
    """
    h = len(per_exon_counts)
    if h < 2 or len(per_exon_efflens) != h:
        return [], []
    pvals = []  # (pvalue, k) for a break between exons k-1 and k (1-based)
    for k in range(2, h + 1):
        y_prev, y_cur = float(per_exon_counts[k - 2]), float(per_exon_counts[k - 1])
        l_prev, l_cur = float(per_exon_efflens[k - 2]), float(per_exon_efflens[k - 1])
        total = y_prev + y_cur
        l_total = l_prev + l_cur
        if total <= 0 or l_prev <= 0 or l_cur <= 0 or l_total <= 0:
            continue
        exp_prev = total * l_prev / l_total
        exp_cur = total * l_cur / l_total
        stat = (y_prev - exp_prev) ** 2 / exp_prev + (y_cur - exp_cur) ** 2 / exp_cur
        pvals.append((float(stats.chi2.sf(stat, df=1)), k))
    significant = sorted((p, k) for p, k in pvals if p < params.pval_breaks)
    selected = significant[: params.max_breaks]
    start_exons = sorted(k for _, k in selected)
    end_exons = sorted(k - 1 for _, k in selected)
    return start_exons, end_exons


def initial_start_end_exons(
    observed_keys: Iterable[ExonSetKey],
) -> tuple[list[int], list[int]]:
    """Start/end exons read off the observed exon sets.

    An exon is a start when it never appears after another exon within any
    observed set, and an end when it never appears before another.  Exons
    absent from all observed sets get no status.
    """
    seen: set[int] = set()
    not_start: set[int] = set()
    not_end: set[int] = set()
    for key in observed_keys:
        idx = key.indices
        seen.update(idx)
        not_start.update(idx[1:])
        not_end.update(idx[:-1])
    starts = sorted(seen - not_start)
    ends = sorted(seen - not_end)
    return starts, ends


def score_exon_set_expression(
    n_j: float, n_T: float, l_j: float, l_T: float, params: CandidateParams
) -> tuple[float, bool]:
    """Expression call for one exon set.

    ``pE`` is the lower-tail binomial CDF of the set's count given its share
    of effective length; the set is expressed when ``pE >= pval_express`` and
    its length-normalized abundance exceeds ``fold_express`` times the
    cluster average.
    """
    if l_j <= 0:
        return 0.0, False
    if l_T <= 0 or n_T < n_j or n_j < 0:
        raise ValueError("invalid expression-score inputs")
    p_e = float(stats.binom.cdf(round(n_j), round(n_T), min(l_j / l_T, 1.0)))
    if n_T <= 0:
        return p_e, False
    fold = (n_j / l_j) / (n_T / l_T)
    return p_e, bool(p_e >= params.pval_express and fold > params.fold_express)


def _insert_skip(iso: tuple[int, ...], skip: tuple[int, ...]) -> Optional[tuple[int, ...]]:
    """Splice a skip set into an isoform, replacing its interior span.

    Compatible when both flanking exons of the skip set are present in the
    isoform; exons strictly inside the span that the skip set omits are
    dropped.  Returns None when incompatible or when nothing changes.
    """
    lo, hi = skip[0], skip[-1]
    members = set(iso)
    if lo not in members or hi not in members:
        return None
    new = tuple(sorted(set(e for e in iso if e < lo or e > hi) | set(skip)))
    return None if new == iso else new


def enumerate_candidate_isoforms(
    cluster: TranscriptCluster,
    start_exons: Sequence[int],
    end_exons: Sequence[int],
    expressed_skip_sets: Sequence[tuple[ExonSetKey, float]],
    m: int,
    params: CandidateParams,
) -> list[Isoform]:
    """Candidate isoforms from start/end exons plus expressed skip sets.

    Consecutive-exon isoforms span every (start, end) pair with start <= end.
    Skip sets (expressed exon sets containing at least one skipping event,
    ordered by descending expression p-value) are then spliced into each
    existing isoform they are compatible with.  Insertion stops once the
    candidate count reaches ``min(p_max_rel * m, p_max_abs)``.
    """
    base = sorted(
        {
            tuple(range(s, e + 1))
            for s in start_exons
            for e in end_exons
            if s <= e
        }
    )
    if not base:
        raise ValueError(f"cluster {cluster.cluster_id}: no candidate isoforms")
    cap = min(int(params.p_max_rel * max(m, 1)), params.p_max_abs)
    ordered: list[tuple[int, ...]] = list(base)
    seen = set(base)
    skip_order = sorted(expressed_skip_sets, key=lambda kp: (-kp[1], kp[0].indices))
    budget_left = True
    for key, _ in skip_order:
        if not budget_left:
            break
        for iso in list(ordered):
            if len(ordered) >= cap:
                budget_left = False
                break
            variant = _insert_skip(iso, key.indices)
            if variant is not None and variant not in seen:
                seen.add(variant)
                ordered.append(variant)
    return [Isoform(t) for t in sorted(seen)]


def build_design_matrix(
    cluster: TranscriptCluster,
    candidates: Sequence[Isoform],
    dist: FragmentLengthDist,
    elen_min: float = DEFAULT_ELEN_MIN,
    extra_keys: Iterable[ExonSetKey] = (),
) -> DesignMatrix:
    """Stack candidate effective-length profiles into a design matrix.

    Rows are the union of the candidates' observable exon sets and
    ``extra_keys`` (typically the exon sets observed in the data).  Rows
    whose effective length is zero for every candidate are uninformative and
    dropped; ``elen_min`` is then added to every remaining cell.
    """
    if not candidates:
        raise ValueError(f"cluster {cluster.cluster_id}: no candidate isoforms")
    lengths = cluster.exon_lengths
    profiles = [eff_len_profile(iso, lengths, dist) for iso in candidates]
    keys: set[ExonSetKey] = set(extra_keys)
    for profile in profiles:
        keys.update(profile.entries)
    rows = sorted(keys, key=lambda k: (len(k.indices), k.indices))
    raw = np.array([[prof.get(key) for prof in profiles] for key in rows])
    informative = raw.max(axis=1) > 0.0
    if not np.any(informative):
        raise ValueError(f"cluster {cluster.cluster_id} has no informative exon sets")
    rows = tuple(key for key, keep in zip(rows, informative) if keep)
    values = raw[informative] + elen_min
    return DesignMatrix(rows=rows, cols=tuple(candidates), values=values, elen_min=elen_min)


def rescale_covariates(G: np.ndarray) -> np.ndarray:
    """Rescale each covariate column to [0, 1] with min 0 and max 1."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 2:
        raise ValueError("covariates must be a 2-D array")
    lo = G.min(axis=0)
    hi = G.max(axis=0)
    if np.any(hi <= lo):
        raise ValueError("covariate has no variation")
    return (G - lo) / (hi - lo)


def encode_categorical(labels: Sequence) -> np.ndarray:
    """Encode a d-level categorical covariate as d-1 indicator columns.

    Levels are ordered by first appearance; the first level is the
    reference.
    """
    levels: list = []
    for lab in labels:
        if lab not in levels:
            levels.append(lab)
    if len(levels) < 2:
        raise ValueError("covariate has no variation")
    out = np.zeros((len(labels), len(levels) - 1))
    for i, lab in enumerate(labels):
        j = levels.index(lab)
        if j > 0:
            out[i, j - 1] = 1.0
    return out


def build_covariate_design(
    X: np.ndarray | Sequence[np.ndarray],
    scales: Sequence[float],
    covariates: Optional[np.ndarray] = None,
) -> CovariateDesign:
    """Expand per-sample designs into one stacked nonnegative regression.

    ``X`` is either one m-by-p effective-length matrix shared by all samples
    or a per-sample sequence of them.  ``scales`` are the per-sample scale
    factors (read depths for expression-level models, cluster totals for
    usage-level models).  ``covariates`` is an n-by-q matrix with every entry
    in [0, 1]; omit it for the covariate-free model.
    """
    scales = np.asarray(scales, dtype=float)
    n = len(scales)
    if np.any(scales < 0):
        raise ValueError("sample scales must be nonnegative")
    if isinstance(X, np.ndarray) and X.ndim == 2:
        mats = [X] * n
    else:
        mats = [np.asarray(x, dtype=float) for x in X]
        if len(mats) != n:
            raise ValueError("one design matrix per sample required")
    m, p = mats[0].shape
    if any(mat.shape != (m, p) for mat in mats):
        raise ValueError("per-sample design matrices must share a shape")

    if covariates is None:
        blocks = [scales[i] * mats[i] for i in range(n)]
        return CovariateDesign(
            matrix=np.vstack(blocks), n_samples=n, m=m, p=p, q=0,
            scales=scales, covariates=None,
        )

    G = np.asarray(covariates, dtype=float)
    if G.ndim != 2 or G.shape[0] != n:
        raise ValueError("covariates must be n-by-q")
    if np.any(G < 0) or np.any(G > 1):
        raise ValueError("covariate not scaled")
    q = G.shape[1]
    blocks = []
    for i in range(n):
        base = scales[i] * mats[i]
        parts = [base * float(q - G[i].sum())] + [base * float(G[i, v]) for v in range(q)]
        blocks.append(np.hstack(parts))
    return CovariateDesign(
        matrix=np.vstack(blocks), n_samples=n, m=m, p=p, q=q,
        scales=scales, covariates=G,
    )
