"""Effective lengths of exon sets under a fragment-length distribution.

The effective length of an exon set within an isoform is the
probability-weighted number of distinct fragment placements on the isoform's
transcript that produce that exon-set observation.  A fragment of length
``l`` is sequenced as two ends of exactly ``d`` bp each (the ends overlap
when ``l < 2d``); an end overlaps an exon when they share at least one base
pair.

Closed-form pieces (single exon, adjacent pair, triple, and the
skipped-middle term) combine recursively into a full per-isoform profile.
``brute_force_eff_len`` enumerates placements directly and serves as the
independent ground truth for all of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .annotation import ExonSetKey, Isoform

__all__ = [
    "FragmentLengthDist",
    "EffLenProfile",
    "normalize_fraglen_dist",
    "eff_len_single",
    "eff_len_adjacent_pair",
    "eff_len_skip_middle",
    "eff_len_triple",
    "eff_len_profile",
    "brute_force_eff_len",
]

BRUTE_FORCE_MAX_BP = 10_000


@dataclass(frozen=True)
class FragmentLengthDist:
    """Discrete fragment-length distribution on ``[d, l_M]``.

    ``d`` is the read length (the minimum possible fragment length, reached
    when the two ends fully overlap); ``l_M`` is the maximum fragment length.
    """

    d: int
    l_M: int
    probs: Mapping[int, float]
    _lengths: np.ndarray = field(init=False, repr=False, compare=False)
    _weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 1 or self.l_M < self.d:
            raise ValueError(f"invalid fragment length bounds [{self.d}, {self.l_M}]")
        probs = {int(l): float(p) for l, p in self.probs.items()}
        if any(p < 0 for p in probs.values()):
            raise ValueError("negative fragment length probability")
        if any(p > 0 for l, p in probs.items() if l < self.d or l > self.l_M):
            raise ValueError("probability mass outside [d, l_M]")
        total = sum(probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"fragment length probabilities sum to {total}, not 1")
        object.__setattr__(self, "probs", probs)
        lengths = np.array(sorted(probs), dtype=np.int64)
        weights = np.array([probs[l] for l in lengths], dtype=float)
        object.__setattr__(self, "_lengths", lengths)
        object.__setattr__(self, "_weights", weights)

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted lengths and matching probabilities."""
        return self._lengths, self._weights


@dataclass(frozen=True)
class EffLenProfile:
    """Effective length of every exon set observable from one isoform."""

    entries: Mapping[ExonSetKey, float]

    def __post_init__(self):
        object.__setattr__(self, "entries", dict(self.entries))

    def get(self, key: ExonSetKey, default: float = 0.0) -> float:
        return self.entries.get(key, default)

    def total(self) -> float:
        return float(sum(self.entries.values()))

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def normalize_fraglen_dist(
    histogram: Mapping[int, float], d: int, l_M: int
) -> FragmentLengthDist:
    """Truncate a length histogram to ``[d, l_M]`` and renormalize to sum 1."""
    if any(c < 0 for c in histogram.values()):
        raise ValueError("negative count in fragment length histogram")
    kept = {int(l): float(c) for l, c in histogram.items() if d <= l <= l_M and c > 0}
    total = sum(kept.values())
    if total <= 0:
        raise ValueError("empty fragment length distribution")
    return FragmentLengthDist(d=d, l_M=l_M, probs={l: c / total for l, c in kept.items()})


def eff_len_single(r: int, dist: FragmentLengthDist) -> float:
    """Effective length of a single exon of ``r`` bp.

    Zero when the exon is shorter than the shortest fragment; otherwise each
    fragment length ``l <= min(r, l_M)`` contributes ``r + 1 - l`` placements,
    weighted by its probability.
    """
    if r < dist.d:
        return 0.0
    lengths, weights = dist.support()
    usable = lengths <= min(r, dist.l_M)
    if not np.any(usable):
        return 0.0
    return float(np.dot(weights[usable], r + 1 - lengths[usable]))


def _pair_raw(r_j: int, r_k: int, dist: FragmentLengthDist) -> float:
    return eff_len_single(r_j + r_k, dist) - eff_len_single(r_j, dist) - eff_len_single(r_k, dist)


def eff_len_adjacent_pair(r_j: int, r_k: int, dist: FragmentLengthDist) -> float:
    """Effective length for fragments covering both of two adjacent exons."""
    return max(_pair_raw(r_j, r_k, dist), 0.0)


def _skip_block(
    block_left: list[int], gap_total: int, block_right: list[int], dist: FragmentLengthDist
) -> float:
    """Placements whose ends cover exactly the left and right exon runs.

    The first end must start in the first left-block exon and stop in the
    last one; symmetrically for the second end.  Everything between the ends
    (including ``gap_total`` bp of skipped exons) is unsequenced insert.
    """
    d = dist.d
    total_left = sum(block_left)
    total_right = sum(block_right)
    lo1 = max(d, total_left - block_left[0] + 1)
    hi1 = min(d + block_left[-1] - 1, total_left)
    lo2 = max(d, total_right - block_right[-1] + 1)
    hi2 = min(d + block_right[0] - 1, total_right)
    if lo1 > hi1 or lo2 > hi2:
        return 0.0
    lengths, weights = dist.support()
    result = 0.0
    for l, p in zip(lengths, weights):
        if p == 0.0:
            continue
        rest = int(l) - gap_total
        delta = min(hi1, rest - lo2) - max(lo1, rest - hi2) + 1
        if delta > 0:
            result += p * delta
    return result


def eff_len_skip_middle(r_j: int, r_h: int, r_k: int, dist: FragmentLengthDist) -> float:
    """Effective length for reads covering exons j and k but skipping h.

    The transcript runs through consecutive exons j, h, k; the fragment's two
    ends land in j and k while the insert spans all of h.
    """
    d, l_M = dist.d, dist.l_M
    if r_j < d or r_k < d or r_h + 2 * d > l_M:
        return 0.0
    lengths, weights = dist.support()
    lo_l = 2 * d + r_h
    hi_l = min(r_j + r_h + r_k, l_M)
    result = 0.0
    for l, p in zip(lengths, weights):
        if p == 0.0 or l < lo_l or l > hi_l:
            continue
        delta = min(r_j, int(l) - r_h - d) - max(d, int(l) - r_h - r_k) + 1
        if delta > 0:
            result += p * delta
    return result


def _triple_raw(r_j: int, r_h: int, r_k: int, dist: FragmentLengthDist) -> tuple[float, ...]:
    """All seven placement classes for a 3-exon window, pre-floor.

    Returns (total, pair_jh, pair_hk, skip, single_j, single_h, single_k,
    triple) where total is the placement count of the whole window and the
    identity total == sum of the other seven holds by construction.
    """
    f3 = eff_len_single(r_j + r_h + r_k, dist)
    e_j = eff_len_single(r_j, dist)
    e_h = eff_len_single(r_h, dist)
    e_k = eff_len_single(r_k, dist)
    p_jh = _pair_raw(r_j, r_h, dist)
    p_hk = _pair_raw(r_h, r_k, dist)
    skip = eff_len_skip_middle(r_j, r_h, r_k, dist)
    triple = f3 - p_jh - p_hk - skip - e_j - e_h - e_k
    return f3, p_jh, p_hk, skip, e_j, e_h, e_k, triple


def eff_len_triple(r_j: int, r_h: int, r_k: int, dist: FragmentLengthDist) -> float:
    """Effective length for fragments covering all of three adjacent exons."""
    return max(_triple_raw(r_j, r_h, r_k, dist)[-1], 0.0)


def eff_len_profile(isoform: Isoform, exon_lengths: Mapping[int, int], dist: FragmentLengthDist) -> EffLenProfile:
    """Effective length of every exon set observable from ``isoform``.

    Covers contiguous runs of the isoform's exon sequence and skip patterns
    where the paired ends straddle unsequenced interior exons.  Non-adjacent
    cluster exons are adjacent in the transcript, so e.g. isoform (1,3)
    yields a pair entry keyed ``"1,3"``.

    Contiguous-run values come from the recursion: the placements of a window
    equal the window's total count minus every strictly smaller observable
    class within it.  Values are floored at zero on output.
    """
    lens = [int(exon_lengths[e]) for e in isoform.exon_indices]
    n = len(lens)
    prefix = np.concatenate([[0], np.cumsum(lens)])

    def window_f(a: int, b: int) -> float:
        return eff_len_single(int(prefix[b + 1] - prefix[a]), dist)

    # Gapped classes are direct placement counts; runs use the subtraction
    # recursion in increasing window width.
    gapped: dict[tuple[tuple[int, int], tuple[int, int]], float] = {}
    for a in range(n):
        for b in range(a, n):
            for c in range(b + 2, n):
                for e in range(c, n):
                    gap_total = int(prefix[c] - prefix[b + 1])
                    gapped[((a, b), (c, e))] = _skip_block(
                        lens[a : b + 1], gap_total, lens[c : e + 1], dist
                    )

    runs: dict[tuple[int, int], float] = {}
    for width in range(1, n + 1):
        for a in range(0, n - width + 1):
            b = a + width - 1
            if width == 1:
                runs[(a, b)] = eff_len_single(lens[a], dist)
                continue
            value = window_f(a, b)
            for x in range(a, b + 1):
                for y in range(x, b + 1):
                    if (x, y) != (a, b):
                        value -= runs[(x, y)]
            for (x, y), (c, e) in (
                key for key in gapped if a <= key[0][0] and key[1][1] <= b
            ):
                value -= gapped[((x, y), (c, e))]
            runs[(a, b)] = value

    def key_for(positions) -> ExonSetKey:
        return ExonSetKey(tuple(isoform.exon_indices[p] for p in positions))

    entries: dict[ExonSetKey, float] = {}
    for (a, b), value in runs.items():
        entries[key_for(range(a, b + 1))] = max(value, 0.0)
    for ((a, b), (c, e)), value in gapped.items():
        key = key_for(list(range(a, b + 1)) + list(range(c, e + 1)))
        entries[key] = entries.get(key, 0.0) + max(value, 0.0)
    return EffLenProfile(entries)


def brute_force_eff_len(
    isoform: Isoform, exon_lengths: Mapping[int, int], dist: FragmentLengthDist
) -> EffLenProfile:
    """Ground-truth profile by enumerating every fragment placement.

    Walks all (start, length) placements on the concatenated transcript,
    classifies which exons the two ``d``-bp ends overlap, and accumulates the
    length probabilities.  Desk-scale only.
    """
    lens = [int(exon_lengths[e]) for e in isoform.exon_indices]
    total = sum(lens)
    if total > BRUTE_FORCE_MAX_BP:
        raise ValueError(f"brute force scale guard exceeded: {total} > {BRUTE_FORCE_MAX_BP} bp")
    bounds = np.cumsum(lens)  # 1-based end position of each transcript exon
    d = dist.d
    entries: dict[ExonSetKey, float] = {}
    lengths, weights = dist.support()
    for l, p in zip(lengths, weights):
        l = int(l)
        if p == 0.0 or l > total:
            continue
        starts = np.arange(1, total - l + 2)
        first_a = np.searchsorted(bounds, starts)
        first_b = np.searchsorted(bounds, starts + d - 1)
        second_a = np.searchsorted(bounds, starts + l - d)
        second_b = np.searchsorted(bounds, starts + l - 1)
        for fa, fb, sa, sb in zip(first_a, first_b, second_a, second_b):
            positions = sorted(set(range(fa, fb + 1)) | set(range(sa, sb + 1)))
            key = ExonSetKey(tuple(isoform.exon_indices[q] for q in positions))
            entries[key] = entries.get(key, 0.0) + p
    return EffLenProfile(entries)
