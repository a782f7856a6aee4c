"""Closed-form evaluators for the scheme's privacy and resource
quantities, plus exact enumeration oracles used to validate them on
small instances.

The combinatorial model: a user's index marks `occupied` distinct
positions out of m (the expected distinct count, rounded to nearest
before entering these formulas). Intersections between two such position
sets follow a hypergeometric law.

- prob_index_overlap(m, occupied, r): probability two users' position sets
  share at least r positions. High values mean an observer cannot read
  keyword co-occurrence from raw overlap.
- prob_keyword_cover(m, occupied, r, q): probability that, for one of a
  user's q keywords, all r of its positions are covered by another
  user's set, i.e. a spurious full match. Linear in q; not clamped.
- blinding_collision_bound(t, occupied, r, l, gamma, m): union-style upper
  bound on any of t users' blinding load fully covering some vocabulary
  keyword at some location: t * C(occupied, r) * l * gamma * r! / m^r.

Evaluation is exact big-integer arithmetic up to a size threshold and
log-gamma arithmetic above it; the two are cross-checked at the
boundary in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

from .crypto import HANDLE_BYTES, SEAL_OVERHEAD_BYTES, TRANSPORT_OVERHEAD_BYTES, position_width
from .params import SystemParams

EXACT_M_THRESHOLD = 3000


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class OverlapReport:
    m: int
    occupied: int
    r: int
    q: int
    pr_overlap: float
    pr_keyword_cover: float


@dataclass(frozen=True)
class CollisionBound:
    t: int
    l: int
    gamma_count: int
    r: int
    m: int
    occupied: int
    bound: float
    clamped: bool


def _check_overlap_args(m: int, occupied: int, r: int) -> None:
    if not 0 <= occupied <= m:
        raise AnalysisError(f"need 0 <= occupied <= m, got occupied={occupied}, m={m}")
    if not 1 <= r <= occupied:
        raise AnalysisError(f"need 1 <= r <= occupied, got r={r}, occupied={occupied}")


def _log_comb(n: int, k: int) -> float:
    if k < 0 or k > n:
        return float("-inf")
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def prob_index_overlap(m: int, occupied: int, r: int, method: str = "auto") -> float:
    """P(|A n B| >= r) for independent uniform occupied-subsets A, B of m
    positions: one minus the hypergeometric lower tail up to r - 1."""
    _check_overlap_args(m, occupied, r)
    if _use_exact(m, method):
        denom = math.comb(m, occupied)
        tail = sum(math.comb(occupied, k) * math.comb(m - occupied, occupied - k) for k in range(r))
        return float(1 - Fraction(tail, denom))
    log_denom = _log_comb(m, occupied)
    tail = sum(
        math.exp(_log_comb(occupied, k) + _log_comb(m - occupied, occupied - k) - log_denom)
        for k in range(r)
    )
    return 1.0 - tail


def prob_keyword_cover(m: int, occupied: int, r: int, q: int, method: str = "auto") -> float:
    """(q / C(occupied, r)) * sum_{k=r}^{occupied} P(|A n B| = k) * C(k, r).

    Expected number of a user's q keyword position sets fully covered by
    another user's occupied-subset. Linear in q by construction."""
    _check_overlap_args(m, occupied, r)
    if q < 1:
        raise AnalysisError("q must be at least 1")
    if _use_exact(m, method):
        denom = math.comb(m, occupied)
        total = sum(
            math.comb(occupied, k) * math.comb(m - occupied, occupied - k) * math.comb(k, r)
            for k in range(r, occupied + 1)
        )
        return float(Fraction(q * total, denom * math.comb(occupied, r)))
    log_denom = _log_comb(m, occupied) + _log_comb(occupied, r)
    logs = [
        _log_comb(occupied, k) + _log_comb(m - occupied, occupied - k) + _log_comb(k, r) - log_denom
        for k in range(r, occupied + 1)
    ]
    peak = max(logs)
    if peak == float("-inf"):
        return 0.0
    return q * math.exp(peak) * sum(math.exp(v - peak) for v in logs)


def _use_exact(m: int, method: str) -> bool:
    if method == "exact":
        return True
    if method == "log":
        return False
    if method != "auto":
        raise AnalysisError(f"unknown method {method!r}")
    return m <= EXACT_M_THRESHOLD


def blinding_collision_bound(
    t: int, occupied: int, r: int, l: int, gamma_count: int, m: int
) -> CollisionBound:
    """Upper bound t * C(occupied, r) * l * gamma * r! / m^r, clamped at 1
    with a flag. occupied below r is allowed and yields a zero bound."""
    if t < 0 or l < 1 or gamma_count < 1 or r < 1:
        raise AnalysisError("invalid bound arguments")
    if not 0 <= occupied <= m:
        raise AnalysisError(f"need 0 <= occupied <= m, got occupied={occupied}, m={m}")
    raw = Fraction(t * math.comb(occupied, r) * l * gamma_count * math.factorial(r), m**r)
    clamped = raw > 1
    return CollisionBound(
        t=t, l=l, gamma_count=gamma_count, r=r, m=m, occupied=occupied,
        bound=float(min(raw, Fraction(1))), clamped=clamped,
    )


def overlap_report(params: SystemParams, occupied: int) -> OverlapReport:
    return OverlapReport(
        m=params.m, occupied=occupied, r=params.r, q=params.q,
        pr_overlap=prob_index_overlap(params.m, occupied, params.r),
        pr_keyword_cover=prob_keyword_cover(params.m, occupied, params.r, params.q),
    )


# --- exact enumeration oracles (small m only) --------------------------------

def enumerate_overlap(m: int, occupied: int, r: int) -> Fraction:
    """Exhaustively place one occupied-subset against a fixed occupied-subset and
    count placements intersecting in >= r positions. Exact; O(C(m, occupied))."""
    _check_overlap_args(m, occupied, r)
    fixed = set(range(occupied))
    hits = sum(1 for a in combinations(range(m), occupied) if len(fixed.intersection(a)) >= r)
    return Fraction(hits, math.comb(m, occupied))


def enumerate_keyword_cover(m: int, occupied: int, r: int, q: int) -> Fraction:
    """Same exhaustive placement, accumulating C(|intersection|, r)
    weights: the expected number of covered r-subsets, scaled to q
    keywords out of the C(occupied, r) possible position sets."""
    _check_overlap_args(m, occupied, r)
    fixed = set(range(occupied))
    weight = sum(
        math.comb(len(fixed.intersection(a)), r) for a in combinations(range(m), occupied)
    )
    return Fraction(q * weight, math.comb(m, occupied) * math.comb(occupied, r))


# --- communication and memory models ----------------------------------------

UPLOAD_FRAMING_BYTES = HANDLE_BYTES + 4 + 4  # handle + two length prefixes


def meta_record_bytes(keyword_count: int, n_bits: int) -> int:
    """Serialized record size: three fixed tokens plus keyword_count list
    tokens and two one-byte count prefixes."""
    n_bytes = (n_bits + 7) // 8
    return (3 + keyword_count) * n_bytes + 2


def sparse_filter_bound_bytes(set_bits: int, m: int) -> int:
    return 4 + (set_bits * position_width(m) + 7) // 8


def upload_size_bits(
    params: SystemParams,
    pk_overhead_bits: int = SEAL_OVERHEAD_BYTES * 8,
    sym_overhead_bits: int = TRANSPORT_OVERHEAD_BYTES * 8,
    include_transport: bool = False,
) -> int:
    """Worst-case upload payload size in bits: sealed record for q
    keywords, compressed filter at q*r set bits, zone token, and packet
    framing. Matches UploadPacket.to_bytes() exactly; add the transport
    overhead with include_transport."""
    mi_bits = meta_record_bytes(params.q, params.n_bits) * 8
    sealed_bits = mi_bits + pk_overhead_bits
    sparse_bits = sparse_filter_bound_bytes(params.q * params.r, params.m) * 8
    zone_bits = params.n_bytes * 8
    total = sealed_bits + sparse_bits + zone_bits + UPLOAD_FRAMING_BYTES * 8
    if include_transport:
        total += sym_overhead_bits
    return total


RESULT_RECORD_PREFIX_BITS = 32  # per-record length prefix on the wire
RESULT_HEADER_BITS = 32         # match-count field


def result_size_bits(matches: int, sealed_bits: int) -> int:
    """Search response payload: per-match sealed record with its length
    prefix, plus the count header."""
    if matches < 0:
        raise AnalysisError("matches must be non-negative")
    return matches * (sealed_bits + RESULT_RECORD_PREFIX_BITS) + RESULT_HEADER_BITS


def capacity_model_bytes(m: int, beta: int, tau_bits: int) -> int:
    """Raw capacity model m * beta * tau, in bytes. Linear in beta;
    beta=0 is a legal degenerate input here (an unprovisioned store)."""
    if m < 1 or beta < 0 or tau_bits < 1:
        raise AnalysisError("invalid capacity model arguments")
    return m * beta * tau_bits // 8


def provisioned_memory_bytes(params: SystemParams) -> int:
    """Capacity model m * beta * tau, in bytes."""
    return capacity_model_bytes(params.m, params.beta, params.tau_bits)


def bytes_to_mib(n: int) -> float:
    return n / 2**20
