"""Transcript clusters, exon structure, and exon-set keys.

Exon coordinates are closed integer intervals in genomic base pairs.
Overlapping exons are split into disjoint pieces, genes connected through
exon overlaps are grouped into transcript clusters, and exons are indexed
1..k in genomic order within each cluster.  All downstream counting and
design-matrix keys use these per-cluster indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

__all__ = [
    "Exon",
    "Isoform",
    "TranscriptCluster",
    "ExonSetKey",
    "split_overlapping_exons",
    "assemble_clusters",
    "canonical_exon_set_key",
]


@dataclass(frozen=True)
class Exon:
    """One disjoint exon piece within a cluster.

    ``index`` is the 1-based position in genomic order; ``length_bp`` is the
    closed-interval length ``genomic_end - genomic_start + 1``.
    """

    index: int
    length_bp: int
    genomic_start: int
    genomic_end: int

    def __post_init__(self):
        if self.length_bp < 1:
            raise ValueError(f"exon {self.index}: length must be >= 1 bp")
        if self.genomic_end - self.genomic_start + 1 != self.length_bp:
            raise ValueError(f"exon {self.index}: coordinates disagree with length")


@dataclass(frozen=True)
class Isoform:
    """A transcript variant: a strictly increasing sequence of exon indices."""

    exon_indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.exon_indices)
        object.__setattr__(self, "exon_indices", idx)
        if not idx:
            raise ValueError("isoform must contain at least one exon")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"exon indices must be strictly increasing: {idx}")

    def __len__(self) -> int:
        return len(self.exon_indices)


@dataclass(frozen=True)
class ExonSetKey:
    """Canonical identity of an exon set: ascending, deduplicated indices.

    The textual form is comma-separated, e.g. ``"1,2,4"``; that form is used
    in all TSV interfaces.
    """

    indices: tuple[int, ...]

    def __str__(self) -> str:
        return ",".join(str(i) for i in self.indices)

    @classmethod
    def from_text(cls, text: str) -> "ExonSetKey":
        try:
            raw = [int(tok) for tok in text.split(",")]
        except ValueError as exc:
            raise ValueError(f"malformed exon set {text!r}") from exc
        return canonical_exon_set_key(raw)

    @property
    def is_contiguous(self) -> bool:
        return self.indices[-1] - self.indices[0] + 1 == len(self.indices)


@dataclass(frozen=True)
class TranscriptCluster:
    """A maximal group of genes connected through exon overlaps.

    ``exons`` are pairwise disjoint and indexed 1..k in genomic order.
    ``annotated_isoforms`` is optional; when present, candidate generation
    is skipped downstream and these isoforms are used directly.
    """

    cluster_id: str
    exons: tuple[Exon, ...]
    gene_ids: frozenset[str] = field(default_factory=frozenset)
    annotated_isoforms: Optional[tuple[Isoform, ...]] = None

    def __post_init__(self):
        if not self.exons:
            raise ValueError(f"cluster {self.cluster_id}: no exons")
        for pos, exon in enumerate(self.exons, start=1):
            if exon.index != pos:
                raise ValueError(
                    f"cluster {self.cluster_id}: exon indices must be consecutive from 1"
                )
        for a, b in zip(self.exons, self.exons[1:]):
            if b.genomic_start <= a.genomic_end:
                raise ValueError(
                    f"cluster {self.cluster_id}: exons must be disjoint and ordered"
                )

    @property
    def n_exons(self) -> int:
        return len(self.exons)

    @property
    def exon_lengths(self) -> dict[int, int]:
        return {e.index: e.length_bp for e in self.exons}

    def validate_key(self, key: ExonSetKey) -> None:
        if key.indices[0] < 1 or key.indices[-1] > self.n_exons:
            raise ValueError(
                f"cluster {self.cluster_id}: exon set {key} out of range 1..{self.n_exons}"
            )


def split_overlapping_exons(raw_exons: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Split possibly-overlapping closed intervals into disjoint pieces.

    Every output interval lies entirely inside or entirely outside each input
    interval, and the union of outputs equals the union of inputs.  Adjacent
    intervals (end+1 == start) are not merged.
    """
    if not raw_exons:
        raise ValueError("no exons")
    for start, end in raw_exons:
        if start > end:
            raise ValueError(f"invalid interval ({start}, {end}): start > end")
    # Atomic boundaries: interval starts and one-past-ends.
    cuts = sorted({s for s, _ in raw_exons} | {e + 1 for _, e in raw_exons})
    covered = sorted(raw_exons)
    pieces = []
    for lo, hi in zip(cuts, cuts[1:]):
        # piece is [lo, hi-1]; emit when covered by at least one input
        if any(s <= lo and hi - 1 <= e for s, e in covered):
            pieces.append((lo, hi - 1))
    return pieces


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def assemble_clusters(
    genes: Sequence[tuple[str, Sequence[tuple[int, int]]]],
) -> list[TranscriptCluster]:
    """Group genes into transcript clusters by transitive exon overlap.

    Two genes share a cluster iff they are connected through a chain of exon
    overlaps.  Within each cluster the member genes' exons are split to
    disjointness and indexed 1..k in genomic order.  Cluster ids join the
    sorted member gene ids with ``+``.
    """
    if not genes:
        return []
    for gene_id, intervals in genes:
        if not intervals:
            raise ValueError(f"gene {gene_id}: no exons")
        for start, end in intervals:
            if start > end:
                raise ValueError(f"gene {gene_id}: invalid interval ({start}, {end})")

    uf = _UnionFind(len(genes))
    # Sweep all intervals by start; overlapping intervals connect their genes.
    events = sorted(
        (start, end, gi)
        for gi, (_, intervals) in enumerate(genes)
        for start, end in intervals
    )
    active: list[tuple[int, int]] = []  # (end, gene index)
    for start, end, gi in events:
        active = [(e, g) for e, g in active if e >= start]
        for _, g in active:
            uf.union(g, gi)
        active.append((end, gi))

    groups: dict[int, list[int]] = {}
    for gi in range(len(genes)):
        groups.setdefault(uf.find(gi), []).append(gi)

    clusters = []
    for members in groups.values():
        gene_ids = sorted(genes[gi][0] for gi in members)
        intervals = [iv for gi in members for iv in genes[gi][1]]
        pieces = split_overlapping_exons(intervals)
        exons = tuple(
            Exon(index=i, length_bp=end - start + 1, genomic_start=start, genomic_end=end)
            for i, (start, end) in enumerate(pieces, start=1)
        )
        clusters.append(
            TranscriptCluster(
                cluster_id="+".join(gene_ids),
                exons=exons,
                gene_ids=frozenset(gene_ids),
            )
        )
    clusters.sort(key=lambda c: (c.exons[0].genomic_start, c.cluster_id))
    return clusters


def canonical_exon_set_key(raw: Iterable[int], n_exons: Optional[int] = None) -> ExonSetKey:
    """Canonicalize an unordered index list: sort ascending, drop duplicates.

    If ``n_exons`` is given, indices outside 1..n_exons raise.
    """
    indices = tuple(sorted({int(i) for i in raw}))
    if not indices:
        raise ValueError("empty exon set")
    if indices[0] < 1:
        raise ValueError(f"exon index {indices[0]} out of range")
    if n_exons is not None and indices[-1] > n_exons:
        raise ValueError(f"exon index {indices[-1]} out of range 1..{n_exons}")
    return ExonSetKey(indices)
