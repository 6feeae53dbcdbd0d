"""Batch command line: estimate / test / simulate / efflen.

Clusters are independent jobs on a worker pool; all randomness is derived
from the single ``--seed`` through per-cluster streams, and results are
merged in cluster-id order, so outputs are byte-identical for any worker
count.  A failing cluster is recorded in ``errors.tsv`` (exit code 2)
without aborting the rest; malformed inputs exit 1 with a line number.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from .annotation import ExonSetKey, TranscriptCluster
from .candidates import CandidateParams
from .efflen import eff_len_profile
from .io import (
    InputError,
    fmt_float,
    read_annotation,
    read_counts,
    read_covariates,
    read_fraglens,
    read_isoforms,
    write_tsv,
)
from .pipeline import estimate_cluster, test_cluster
from .rng import stream
from .simulate import (
    Scenario,
    default_fraglen_dist,
    draw_counts,
    make_case_control_scenario,
    make_eqtl_scenario,
    random_cluster,
)
from .testing import TestSpec, bh_adjust

logger = logging.getLogger("isodot.cli")


def _configure_logging() -> None:
    level = os.environ.get("ISODOT_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _candidate_params(args) -> CandidateParams:
    return CandidateParams(
        max_breaks=args.max_breaks,
        pval_breaks=args.pval_breaks,
        pval_express=args.pval_express,
        fold_express=args.fold_express,
        p_max_rel=args.pmax_rel,
        p_max_abs=args.pmax_abs,
        elen_min=args.elen_min,
    )


def _add_candidate_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-breaks", type=int, default=5)
    parser.add_argument("--pval-breaks", type=float, default=0.05)
    parser.add_argument("--pval-express", type=float, default=0.01)
    parser.add_argument("--fold-express", type=float, default=0.2)
    parser.add_argument("--pmax-rel", type=float, default=10.0)
    parser.add_argument("--pmax-abs", type=int, default=2000)
    parser.add_argument("--elen-min", type=float, default=1.0)


def _add_common_inputs(parser: argparse.ArgumentParser, counts: bool = True) -> None:
    parser.add_argument("--annotation", required=True)
    parser.add_argument("--fraglens", required=True)
    parser.add_argument("--isoforms", default=None)
    if counts:
        parser.add_argument("--counts", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isodot",
        description="Isoform abundance estimation and DIE/DIU testing from exon-set counts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="penalized isoform abundance fits per cluster")
    _add_common_inputs(est)
    _add_candidate_flags(est)

    tst = sub.add_parser("test", help="differential isoform expression/usage tests")
    _add_common_inputs(tst)
    _add_candidate_flags(tst)
    tst.add_argument("--covariates", required=True)
    tst.add_argument("--kind", choices=("die", "diu"), required=True)
    tst.add_argument("--method", choices=("bootstrap", "permutation"), default="bootstrap")
    tst.add_argument("--replicates", type=int, default=1000)
    tst.add_argument("--fast-boot", action="store_true")
    tst.add_argument("--early-stop", action="store_true")

    sim = sub.add_parser("simulate", help="emit count-level scenario files")
    sim.add_argument("--scenario", choices=("eqtl", "case-control"), required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--clusters", type=int, default=20)
    sim.add_argument("--samples", type=int, default=20)
    sim.add_argument("--hypothesis", choices=("null", "alternative", "mixed"), default="null")
    sim.add_argument("--mode", choices=("die", "diu"), default="die")
    sim.add_argument("--n-null", type=int, default=None)
    sim.add_argument("--n-alt", type=int, default=None)
    sim.add_argument("--phi", type=float, default=0.1)

    eff = sub.add_parser("efflen", help="dump effective-length profiles")
    eff.add_argument("--annotation", required=True)
    eff.add_argument("--fraglens", required=True)
    eff.add_argument("--isoforms", required=True)
    eff.add_argument("--out", required=True)
    return parser


def _attach_isoforms(cluster: TranscriptCluster, iso_map):
    if not iso_map:
        return cluster, None
    ids = sorted(iso_map)
    ordered = tuple(iso_map[i] for i in ids)
    return dataclasses.replace(cluster, annotated_isoforms=ordered), ids


def _depths(samples, counts) -> np.ndarray:
    totals = {s: 0.0 for s in samples}
    for per_cluster in counts.values():
        for sample, per_key in per_cluster.items():
            if sample in totals:
                totals[sample] += float(sum(per_key.values()))
    return np.array([totals[s] for s in samples])


def _run_jobs(worker, payloads, n_workers: Optional[int]):
    """Run per-cluster jobs, serially or on a process pool; order-stable."""
    n_workers = n_workers or os.cpu_count() or 1
    if n_workers <= 1 or len(payloads) <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(worker, payloads, chunksize=max(1, len(payloads) // (4 * n_workers))))


def _estimate_worker(payload):
    cluster, iso_map, per_cluster_counts, samples, dist, params, depths = payload
    try:
        cluster, iso_ids = _attach_isoforms(cluster, iso_map)
        rows = estimate_cluster(
            cluster, per_cluster_counts, samples, dist, params, depths,
            isoform_ids=iso_ids,
        )
        return cluster.cluster_id, rows, None
    except Exception as exc:  # crash isolation: report, keep going
        return cluster.cluster_id, None, f"{type(exc).__name__}: {exc}"


def cmd_estimate(args) -> int:
    clusters = read_annotation(args.annotation)
    iso_maps = read_isoforms(args.isoforms) if args.isoforms else {}
    dist = read_fraglens(args.fraglens)
    samples, counts = read_counts(args.counts)
    if not samples:
        raise InputError(args.counts, 2, "no samples in counts")
    params = _candidate_params(args)
    depths = _depths(samples, counts)

    errors = [
        (cid, "unknown cluster_id in counts") for cid in sorted(counts) if cid not in clusters
    ]
    payloads = [
        (clusters[cid], iso_maps.get(cid), counts.get(cid, {}), samples, dist, params, depths)
        for cid in sorted(clusters)
    ]
    os.makedirs(args.out, exist_ok=True)
    fit_rows = []
    for cid, rows, err in _run_jobs(_estimate_worker, payloads, args.workers):
        if err is not None:
            errors.append((cid, err))
        else:
            fit_rows.extend(rows)
    write_tsv(
        os.path.join(args.out, "fits.tsv"),
        ["cluster_id", "isoform_id", "coefficient", "phi", "loglik", "criterion",
         "lambda", "tau", "exon_indices"],
        [
            (r.cluster_id, r.isoform_id, r.coefficient, r.phi, r.loglik,
             r.criterion, r.lam, r.tau, r.exon_indices)
            for r in fit_rows
        ],
    )
    _write_errors(args.out, errors)
    return 2 if errors else 0


def _write_errors(out_dir, errors) -> None:
    write_tsv(
        os.path.join(out_dir, "errors.tsv"),
        ["cluster_id", "error"],
        sorted(errors),
    )


def _test_worker(payload):
    cluster, iso_map, per_cluster_counts, samples, dist, params, covariates, spec, depths = payload
    try:
        cluster, _ = _attach_isoforms(cluster, iso_map)
        result = test_cluster(
            cluster, per_cluster_counts, samples, dist, params, covariates, spec, depths
        )
        return cluster.cluster_id, result, None
    except Exception as exc:
        return cluster.cluster_id, None, f"{type(exc).__name__}: {exc}"


def cmd_test(args) -> int:
    clusters = read_annotation(args.annotation)
    iso_maps = read_isoforms(args.isoforms) if args.isoforms else {}
    dist = read_fraglens(args.fraglens)
    samples, counts = read_counts(args.counts)
    cov_samples, _, G = read_covariates(args.covariates)
    if samples and samples != cov_samples:
        raise InputError(args.covariates, 2, "sample sets in counts and covariates differ")
    samples = cov_samples
    if np.any(G < 0) or np.any(G > 1):
        raise InputError(args.covariates, 2, "covariate not scaled to [0, 1]")
    params = _candidate_params(args)
    spec = TestSpec(
        kind=args.kind,
        method=args.method,
        n_replicates=args.replicates,
        seed=args.seed,
        fast_boot=args.fast_boot,
        early_stop=args.early_stop,
    )
    depths = _depths(samples, counts) if args.kind == "die" else None
    if args.kind == "die" and np.any(depths <= 0):
        raise InputError(args.counts, 2, "every sample needs nonzero total counts for DIE")

    errors = [
        (cid, "unknown cluster_id in counts") for cid in sorted(counts) if cid not in clusters
    ]
    payloads = [
        (clusters[cid], iso_maps.get(cid), counts.get(cid, {}), samples, dist,
         params, G, spec, depths)
        for cid in sorted(clusters)
    ]
    os.makedirs(args.out, exist_ok=True)
    results = []
    for cid, result, err in _run_jobs(_test_worker, payloads, args.workers):
        if err is not None:
            errors.append((cid, err))
        else:
            results.append(result)
    results.sort(key=lambda r: r.cluster_id)

    tested = [r for r in results if r.pvalue is not None]
    qvalues = dict(
        zip((r.cluster_id for r in tested), bh_adjust([r.pvalue for r in tested]))
    )
    rows = []
    for r in results:
        na = r.pvalue is None
        rows.append(
            (
                r.cluster_id,
                r.kind,
                "NA" if na else fmt_float(r.lr),
                "NA" if na else fmt_float(r.pvalue),
                "NA" if na else fmt_float(qvalues[r.cluster_id]),
                r.method,
                r.replicates_used,
                "NA" if na else fmt_float(r.raw_prop),
                ";".join(r.flags) if r.flags else "-",
            )
        )
    write_tsv(
        os.path.join(args.out, "results.tsv"),
        ["cluster_id", "kind", "lr", "pvalue", "qvalue", "method", "replicates",
         "raw_prop", "flags"],
        rows,
    )
    _write_errors(args.out, errors)
    return 2 if errors else 0


def _genotypes(rng: np.random.Generator, n: int) -> np.ndarray:
    """Hardy-Weinberg genotype codes 0/0.5/1 with a usable spread."""
    for _ in range(100):
        maf = rng.uniform(0.2, 0.45)
        probs = [(1 - maf) ** 2, 2 * maf * (1 - maf), maf**2]
        g = rng.choice([0.0, 0.5, 1.0], size=n, p=probs)
        if np.ptp(g) > 0:
            return g
    g = np.zeros(n)
    g[: max(1, n // 2)] = 1.0
    return g


def _scenario_files(out_dir, scenarios: list[Scenario], sample_ids, seed: int) -> None:
    annotation_rows = []
    isoform_rows = []
    count_rows = []
    truth_rows = []
    for sc in scenarios:
        cluster = sc.cluster
        for exon in cluster.exons:
            for gene in sorted(cluster.gene_ids):
                annotation_rows.append(
                    (cluster.cluster_id, gene, exon.index, exon.genomic_start, exon.genomic_end)
                )
        for j, iso in enumerate(cluster.annotated_isoforms):
            iso_id = f"iso{j + 1:03d}"
            isoform_rows.append(
                (cluster.cluster_id, iso_id, ",".join(str(e) for e in iso.exon_indices))
            )
            truth_rows.append(
                (cluster.cluster_id, sc.hypothesis, iso_id, float(sc.a[j]), float(sc.b[j]))
            )
        keys, Y = draw_counts(sc, seed)
        for i, sample in enumerate(sample_ids):
            for key, value in zip(keys, Y[i]):
                if value > 0:
                    count_rows.append((sample, cluster.cluster_id, str(key), int(value)))
    write_tsv(
        os.path.join(out_dir, "annotation.tsv"),
        ["cluster_id", "gene_id", "exon_index", "start", "end"],
        annotation_rows,
    )
    write_tsv(
        os.path.join(out_dir, "isoforms.tsv"),
        ["cluster_id", "isoform_id", "exon_indices"],
        isoform_rows,
    )
    write_tsv(
        os.path.join(out_dir, "counts.tsv"),
        ["sample_id", "cluster_id", "exon_set", "count"],
        count_rows,
    )
    write_tsv(
        os.path.join(out_dir, "truth.tsv"),
        ["cluster_id", "hypothesis", "isoform_id", "a", "b"],
        truth_rows,
    )
    dist = scenarios[0].dist
    hist = dict(dist.probs)
    hist.setdefault(dist.d, 0.0)
    hist.setdefault(dist.l_M, 0.0)
    write_tsv(
        os.path.join(out_dir, "fraglens.tsv"),
        ["length", "weight"],
        [(l, float(w)) for l, w in sorted(hist.items())],
    )


def cmd_simulate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.scenario == "eqtl":
        n = args.samples
        sample_ids = [f"s{i + 1:03d}" for i in range(n)]
        # One genotype vector shared by all clusters: the covariates file
        # carries a single set of per-sample covariates.
        g = _genotypes(stream(args.seed, "genotype"), n)
        scenarios = []
        for c in range(args.clusters):
            cid = f"sim{c + 1:04d}"
            cluster = random_cluster(cid, seed=args.seed)
            if args.hypothesis == "mixed":
                hypothesis = "null" if c % 2 == 0 else "alternative"
            else:
                hypothesis = args.hypothesis
            scenarios.append(
                make_eqtl_scenario(cluster, g, hypothesis, phi=args.phi, seed=args.seed)
            )
        covariate_rows = [(sample_ids[i], float(g[i])) for i in range(n)]
    else:
        n_null = args.n_null if args.n_null is not None else args.clusters // 2
        n_alt = args.n_alt if args.n_alt is not None else args.clusters - args.clusters // 2
        labels = ["null"] * n_null + ["alternative"] * n_alt
        clusters = [
            random_cluster(f"sim{c + 1:04d}", seed=args.seed) for c in range(len(labels))
        ]
        scenarios = make_case_control_scenario(
            clusters, args.mode, labels=labels, phi=args.phi, seed=args.seed
        )
        sample_ids = ["control", "case"]
        covariate_rows = [("case", 1.0), ("control", 0.0)]
    if not scenarios:
        print("isodot simulate: empty scenario", file=sys.stderr)
        return 1
    write_tsv(
        os.path.join(args.out, "covariates.tsv"),
        ["sample_id", "g1"],
        sorted(covariate_rows),
    )
    _scenario_files(args.out, scenarios, sample_ids, args.seed)
    return 0


def cmd_efflen(args) -> int:
    clusters = read_annotation(args.annotation)
    iso_maps = read_isoforms(args.isoforms)
    dist = read_fraglens(args.fraglens)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for cid in sorted(clusters):
        cluster = clusters[cid]
        for iso_id in sorted(iso_maps.get(cid, {})):
            isoform = iso_maps[cid][iso_id]
            cluster.validate_key(ExonSetKey(isoform.exon_indices))
            profile = eff_len_profile(isoform, cluster.exon_lengths, dist)
            for key in sorted(profile.entries, key=lambda k: (len(k.indices), k.indices)):
                rows.append((cid, iso_id, str(key), float(profile.get(key))))
    write_tsv(
        os.path.join(args.out, "profiles.tsv"),
        ["cluster_id", "isoform_id", "exon_set", "efflen"],
        rows,
    )
    return 0


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(args)
        if args.command == "test":
            return cmd_test(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "efflen":
            return cmd_efflen(args)
    except InputError as exc:
        print(f"isodot {args.command}: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
