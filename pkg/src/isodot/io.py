"""TSV interfaces: annotation, counts, fragment lengths, covariates, results.

All files are tab-separated with a header row, UTF-8, LF line endings.
Floats are written with six significant digits so reruns are byte-stable.
Structural problems (wrong column count, unparseable numbers) raise
``InputError`` with the offending line number; semantic problems (unknown
cluster ids, out-of-range exon sets) are left to per-cluster error handling
so one bad cluster cannot abort a batch.
"""

from __future__ import annotations

import csv
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .annotation import Exon, ExonSetKey, Isoform, TranscriptCluster
from .efflen import FragmentLengthDist, normalize_fraglen_dist

__all__ = [
    "InputError",
    "fmt_float",
    "read_annotation",
    "read_isoforms",
    "read_counts",
    "read_fraglens",
    "read_covariates",
    "write_tsv",
]


class InputError(Exception):
    """Malformed input file; carries the path and 1-based line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def fmt_float(x: float) -> str:
    return f"{x:.6g}"


def _rows(path, expected_header: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(path, 1, "empty file") from None
        if [h.strip() for h in header[: len(expected_header)]] != list(expected_header):
            raise InputError(
                path, 1, f"expected header starting with {list(expected_header)}, got {header}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            yield line_no, row, header


def _parse_int(path, line_no, token, what) -> int:
    try:
        return int(token)
    except ValueError:
        raise InputError(path, line_no, f"{what} must be an integer, got {token!r}") from None


def _parse_float(path, line_no, token, what) -> float:
    try:
        return float(token)
    except ValueError:
        raise InputError(path, line_no, f"{what} must be a number, got {token!r}") from None


def read_annotation(path) -> dict[str, TranscriptCluster]:
    """Read ``cluster_id, gene_id, exon_index, start, end`` into clusters."""
    raw: dict[str, dict[int, tuple[int, int, set[str]]]] = {}
    for line_no, row, _ in _rows(path, ("cluster_id", "gene_id", "exon_index", "start", "end")):
        if len(row) < 5:
            raise InputError(path, line_no, "expected 5 columns")
        cid, gene = row[0].strip(), row[1].strip()
        idx = _parse_int(path, line_no, row[2], "exon_index")
        start = _parse_int(path, line_no, row[3], "start")
        end = _parse_int(path, line_no, row[4], "end")
        if start > end:
            raise InputError(path, line_no, f"start {start} > end {end}")
        entry = raw.setdefault(cid, {})
        if idx in entry:
            prev = entry[idx]
            if (start, end) != (prev[0], prev[1]):
                raise InputError(path, line_no, f"conflicting coordinates for exon {idx} of {cid}")
            prev[2].add(gene)
        else:
            entry[idx] = (start, end, {gene})
    clusters = {}
    for cid, exon_map in raw.items():
        exons = []
        genes: set[str] = set()
        for idx in sorted(exon_map):
            start, end, gene_ids = exon_map[idx]
            genes.update(gene_ids)
            exons.append(
                Exon(index=idx, length_bp=end - start + 1, genomic_start=start, genomic_end=end)
            )
        clusters[cid] = TranscriptCluster(
            cluster_id=cid, exons=tuple(exons), gene_ids=frozenset(genes)
        )
    return clusters


def read_isoforms(path) -> dict[str, dict[str, Isoform]]:
    """Read ``cluster_id, isoform_id, exon_indices`` (comma form)."""
    out: dict[str, dict[str, Isoform]] = {}
    for line_no, row, _ in _rows(path, ("cluster_id", "isoform_id", "exon_indices")):
        if len(row) < 3:
            raise InputError(path, line_no, "expected 3 columns")
        cid, iso_id = row[0].strip(), row[1].strip()
        try:
            key = ExonSetKey.from_text(row[2].strip())
            isoform = Isoform(key.indices)
        except ValueError as exc:
            raise InputError(path, line_no, str(exc)) from None
        per = out.setdefault(cid, {})
        if iso_id in per:
            raise InputError(path, line_no, f"duplicate isoform id {iso_id!r} in {cid}")
        per[iso_id] = isoform
    return out


def read_counts(path) -> tuple[list[str], dict[str, dict[str, dict[ExonSetKey, int]]]]:
    """Read ``sample_id, cluster_id, exon_set, count``.

    Returns the sorted sample ids and a cluster -> sample -> key -> count
    mapping.  Exon-set validity against the cluster is checked downstream.
    """
    counts: dict[str, dict[str, dict[ExonSetKey, int]]] = {}
    samples: set[str] = set()
    for line_no, row, _ in _rows(path, ("sample_id", "cluster_id", "exon_set", "count")):
        if len(row) < 4:
            raise InputError(path, line_no, "expected 4 columns")
        sample, cid = row[0].strip(), row[1].strip()
        try:
            key = ExonSetKey.from_text(row[2].strip())
        except ValueError as exc:
            raise InputError(path, line_no, str(exc)) from None
        value = _parse_int(path, line_no, row[3], "count")
        if value < 0:
            raise InputError(path, line_no, "count must be nonnegative")
        samples.add(sample)
        per_sample = counts.setdefault(cid, {}).setdefault(sample, {})
        per_sample[key] = per_sample.get(key, 0) + value
    return sorted(samples), counts


def read_fraglens(path) -> FragmentLengthDist:
    """Read ``length, weight`` and normalize.

    The file's smallest and largest lengths define the bounds [d, l_M]; rows
    may carry zero weight purely to pin the bounds (the minimum fragment
    length equals the read length).
    """
    hist: dict[int, float] = {}
    for line_no, row, _ in _rows(path, ("length", "weight")):
        if len(row) < 2:
            raise InputError(path, line_no, "expected 2 columns")
        length = _parse_int(path, line_no, row[0], "length")
        weight = _parse_float(path, line_no, row[1], "weight")
        if length < 1:
            raise InputError(path, line_no, "length must be >= 1")
        if weight < 0:
            raise InputError(path, line_no, "weight must be nonnegative")
        hist[length] = hist.get(length, 0.0) + weight
    if not hist:
        raise InputError(path, 2, "no fragment lengths")
    d, l_m = min(hist), max(hist)
    try:
        return normalize_fraglen_dist(hist, d, l_m)
    except ValueError as exc:
        raise InputError(path, 2, str(exc)) from None


def read_covariates(path) -> tuple[list[str], list[str], np.ndarray]:
    """Read ``sample_id, g1..gq``; returns (sample ids, names, n-by-q array)."""
    rows = []
    names: Optional[list[str]] = None
    for line_no, row, header in _rows(path, ("sample_id",)):
        if names is None:
            names = [h.strip() for h in header[1:]]
            if not names:
                raise InputError(path, 1, "no covariate columns")
        if len(row) != len(names) + 1:
            raise InputError(path, line_no, f"expected {len(names) + 1} columns")
        values = [_parse_float(path, line_no, tok, "covariate") for tok in row[1:]]
        rows.append((row[0].strip(), values))
    if not rows:
        raise InputError(path, 2, "no samples")
    rows.sort(key=lambda r: r[0])
    sample_ids = [r[0] for r in rows]
    if len(set(sample_ids)) != len(sample_ids):
        raise InputError(path, 2, "duplicate sample ids")
    return sample_ids, names, np.array([r[1] for r in rows], dtype=float)


def write_tsv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write rows as TSV with LF endings; floats via :func:`fmt_float`."""
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        handle.write("\t".join(header) + "\n")
        for row in rows:
            cells = []
            for cell in row:
                if isinstance(cell, float) or isinstance(cell, np.floating):
                    cells.append(fmt_float(float(cell)))
                else:
                    cells.append(str(cell))
            handle.write("\t".join(cells) + "\n")
