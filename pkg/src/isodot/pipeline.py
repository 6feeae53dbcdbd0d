"""Per-cluster assembly: counts to candidates to design to fit/test.

This is the glue between the file formats and the numerical modules.  Each
cluster is processed independently so batch runs can parallelize and so a
failure in one cluster never aborts the others.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .annotation import ExonSetKey, Isoform, TranscriptCluster
from .candidates import (
    CandidateParams,
    DesignMatrix,
    build_design_matrix,
    detect_break_points,
    enumerate_candidate_isoforms,
    initial_start_end_exons,
    score_exon_set_expression,
)
from .efflen import FragmentLengthDist, eff_len_profile, eff_len_single
from .solver import fit_grid
from .testing import ClusterData, TestResult, TestSpec, run_cluster_test

__all__ = [
    "select_candidates",
    "prepare_cluster_data",
    "estimate_cluster",
    "test_cluster",
]


def _pooled_counts(
    counts_by_sample: Mapping[str, Mapping[ExonSetKey, int]]
) -> dict[ExonSetKey, int]:
    pooled: dict[ExonSetKey, int] = {}
    for per_sample in counts_by_sample.values():
        for key, value in per_sample.items():
            pooled[key] = pooled.get(key, 0) + int(value)
    return pooled


def select_candidates(
    cluster: TranscriptCluster,
    pooled: Mapping[ExonSetKey, int],
    dist: FragmentLengthDist,
    params: CandidateParams,
) -> list[Isoform]:
    """Data-driven candidate isoforms for one cluster.

    Start/end exons come from the observed exon sets plus read-depth break
    points; expressed exon-skipping sets (scored against the full-exon-chain
    effective lengths) are then spliced in.  Counts are pooled across
    samples so that all samples share one candidate set.
    """
    lengths = cluster.exon_lengths
    k = cluster.n_exons
    observed = [key for key, value in pooled.items() if value > 0]
    starts, ends = initial_start_end_exons(observed)

    per_exon_counts = np.zeros(k)
    for key, value in pooled.items():
        for e in key.indices:
            per_exon_counts[e - 1] += value
    per_exon_eff = [eff_len_single(lengths[e], dist) for e in range(1, k + 1)]
    b_starts, b_ends = detect_break_points(per_exon_counts, per_exon_eff, params)
    starts = sorted(set(starts) | set(b_starts))
    ends = sorted(set(ends) | set(b_ends))

    # Expression scores against the full exon chain; gapped sets that pass
    # become skip candidates.
    full = Isoform(tuple(range(1, k + 1)))
    full_profile = eff_len_profile(full, lengths, dist)
    l_total = eff_len_single(sum(lengths.values()), dist)
    n_total = sum(pooled.values())
    skip_sets: list[tuple[ExonSetKey, float]] = []
    for key in observed:
        if key.is_contiguous:
            continue
        p_e, expressed = score_exon_set_expression(
            pooled[key], n_total, full_profile.get(key), l_total, params
        )
        if expressed:
            skip_sets.append((key, p_e))

    return enumerate_candidate_isoforms(
        cluster, starts, ends, skip_sets, m=len(observed), params=params
    )


def prepare_cluster_data(
    cluster: TranscriptCluster,
    counts_by_sample: Mapping[str, Mapping[ExonSetKey, int]],
    samples: Sequence[str],
    dist: FragmentLengthDist,
    params: CandidateParams,
    depths: Optional[np.ndarray] = None,
    isoform_ids: Optional[Sequence[str]] = None,
) -> tuple[ClusterData, DesignMatrix]:
    """Validate counts, pick candidates, and align everything on one design.

    Annotated isoforms on the cluster short-circuit candidate generation
    (``isoform_ids`` names them in reports).  Exon sets observed in the
    data join the design rows; rows uninformative for every candidate are
    dropped (their counts with them).
    """
    for per_sample in counts_by_sample.values():
        for key in per_sample:
            cluster.validate_key(key)
    pooled = _pooled_counts(counts_by_sample)
    if cluster.annotated_isoforms:
        candidates = list(cluster.annotated_isoforms)
        if isoform_ids is not None and len(isoform_ids) == len(candidates):
            iso_ids = list(isoform_ids)
        else:
            iso_ids = [f"iso{i + 1:03d}" for i in range(len(candidates))]
    else:
        candidates = select_candidates(cluster, pooled, dist, params)
        iso_ids = [f"novel{i + 1:03d}" for i in range(len(candidates))]
    design = build_design_matrix(
        cluster, candidates, dist, elen_min=params.elen_min, extra_keys=pooled.keys()
    )
    Y = np.zeros((len(samples), design.m))
    for i, sample in enumerate(samples):
        per_sample = counts_by_sample.get(sample, {})
        Y[i] = design.counts_vector(per_sample)
    data = ClusterData(
        cluster_id=cluster.cluster_id,
        X=design.values,
        Y=Y,
        isoform_ids=tuple(iso_ids),
        row_keys=design.rows,
        depths=None if depths is None else np.asarray(depths, dtype=float),
    )
    return data, design


@dataclass(frozen=True)
class EstimateRow:
    cluster_id: str
    isoform_id: str
    exon_indices: str
    coefficient: float
    phi: float
    loglik: float
    criterion: float
    lam: float
    tau: float


def estimate_cluster(
    cluster: TranscriptCluster,
    counts_by_sample: Mapping[str, Mapping[ExonSetKey, int]],
    samples: Sequence[str],
    dist: FragmentLengthDist,
    params: CandidateParams,
    depths: np.ndarray,
    isoform_ids: Optional[Sequence[str]] = None,
) -> list[EstimateRow]:
    """Joint multi-sample abundance fit; one row per candidate isoform."""
    data, design = prepare_cluster_data(
        cluster, counts_by_sample, samples, dist, params, depths=depths,
        isoform_ids=isoform_ids,
    )
    t = np.asarray(depths, dtype=float)
    scales = t / t.mean()
    stacked = np.vstack([scales[i] * data.X for i in range(len(samples))])
    y = data.Y.reshape(-1)
    fit = fit_grid(y, stacked)
    rows = []
    for j, iso in enumerate(design.cols):
        rows.append(
            EstimateRow(
                cluster_id=cluster.cluster_id,
                isoform_id=data.isoform_ids[j],
                exon_indices=",".join(str(e) for e in iso.exon_indices),
                coefficient=float(fit.b[j]),
                phi=fit.phi,
                loglik=fit.loglik,
                criterion=fit.criterion,
                lam=fit.tuning.lam,
                tau=fit.tuning.tau,
            )
        )
    return rows


def test_cluster(
    cluster: TranscriptCluster,
    counts_by_sample: Mapping[str, Mapping[ExonSetKey, int]],
    samples: Sequence[str],
    dist: FragmentLengthDist,
    params: CandidateParams,
    covariates: np.ndarray,
    spec: TestSpec,
    depths: Optional[np.ndarray] = None,
) -> TestResult:
    """Prepare one cluster and run the requested DIE/DIU test."""
    if not counts_by_sample or sum(
        sum(v.values()) for v in counts_by_sample.values()
    ) <= 0:
        return TestResult(
            cluster_id=cluster.cluster_id, kind=spec.kind, lr=None, pvalue=None,
            raw_prop=None, method=spec.method, replicates_used=0,
            flags=("skipped_zero_counts",),
        )
    data, _ = prepare_cluster_data(
        cluster, counts_by_sample, samples, dist, params, depths=depths
    )
    return run_cluster_test(data, covariates, spec)
