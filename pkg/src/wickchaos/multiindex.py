"""Sparse multi-indices, truncations of the index set and their combinatorics.

A multi-index is a finitely supported sequence of nonnegative integers
``(alpha_1, alpha_2, ...)``.  It is stored sparsely as strictly increasing
``(coordinate, exponent)`` pairs with coordinates starting at 1 and no zero
exponents, so structural equality is mathematical equality.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Optional, Sequence


class MultiIndex:
    """Immutable sparse multi-index.

    >>> MultiIndex.from_dense((1, 0, 2))
    MultiIndex((1, 0, 2))
    >>> MultiIndex.from_dense((1, 0, 2)).length
    3
    """

    __slots__ = ("_pairs", "_hash")

    def __init__(self, pairs: Iterable[tuple[int, int]] = ()):
        cleaned = []
        last = 0
        for coord, exp in pairs:
            coord, exp = int(coord), int(exp)
            if coord <= last:
                raise ValueError("coordinates must be positive and strictly increasing")
            if exp < 0:
                raise ValueError("exponents must be nonnegative")
            if exp:
                cleaned.append((coord, exp))
            last = coord
        self._pairs = tuple(cleaned)
        self._hash = hash(self._pairs)

    @classmethod
    def from_dense(cls, exponents: Sequence[int]) -> "MultiIndex":
        return cls((i + 1, e) for i, e in enumerate(exponents))

    @classmethod
    def unit(cls, coord: int, exp: int = 1) -> "MultiIndex":
        return cls(((coord, exp),))

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return self._pairs

    @property
    def length(self) -> int:
        return sum(e for _, e in self._pairs)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(c for c, _ in self._pairs)

    @property
    def max_coord(self) -> int:
        return self._pairs[-1][0] if self._pairs else 0

    def is_zero(self) -> bool:
        return not self._pairs

    def __getitem__(self, coord: int) -> int:
        for c, e in self._pairs:
            if c == coord:
                return e
            if c > coord:
                break
        return 0

    def dense(self, width: Optional[int] = None) -> tuple[int, ...]:
        width = self.max_coord if width is None else width
        if width < self.max_coord:
            raise ValueError(f"width {width} is smaller than max coordinate {self.max_coord}")
        out = [0] * width
        for c, e in self._pairs:
            out[c - 1] = e
        return tuple(out)

    def factorial(self) -> int:
        return math.prod(math.factorial(e) for _, e in self._pairs)

    def order_key(self) -> tuple:
        """Sort key: by length, then descending lexicographic on the dense vector.

        Comparing ``(coord, -exp)`` pairs reproduces descending dense lex, so
        ``(1,0)`` precedes ``(0,1)`` and ``(2,0)`` precedes ``(1,1)``.
        """
        return (self.length, tuple((c, -e) for c, e in self._pairs))

    def __eq__(self, other):
        if not isinstance(other, MultiIndex):
            return NotImplemented
        return self._pairs == other._pairs

    def __hash__(self):
        return self._hash

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        return add(self, other)

    def __repr__(self):
        return f"MultiIndex({self.dense()!r})" if self._pairs else "MultiIndex(())"

    def __str__(self):
        return "(" + ",".join(map(str, self.dense())) + ")" if self._pairs else "0"


ZERO = MultiIndex()


class Shape(enum.Enum):
    TOTAL = "total"
    BOX = "box"


@dataclass(frozen=True)
class TruncationSpec:
    """Finite slice of the index set: support in ``{1..m}`` and a degree cap ``n``.

    ``Shape.TOTAL`` caps the length, ``Shape.BOX`` caps every exponent.
    """

    m: int
    n: int
    shape: Shape = Shape.TOTAL

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be positive")
        if self.n < 0:
            raise ValueError("n must be nonnegative")
        if not isinstance(self.shape, Shape):
            object.__setattr__(self, "shape", Shape(self.shape))

    def admits(self, alpha: MultiIndex) -> bool:
        if alpha.max_coord > self.m:
            return False
        if self.shape is Shape.TOTAL:
            return alpha.length <= self.n
        return all(e <= self.n for _, e in alpha.pairs)

    def size(self) -> int:
        if self.shape is Shape.TOTAL:
            return math.comb(self.m + self.n, self.n)
        return (self.n + 1) ** self.m

    def to_dict(self) -> dict:
        return {"m": self.m, "n": self.n, "shape": self.shape.value}

    @classmethod
    def from_dict(cls, d: dict) -> "TruncationSpec":
        return cls(int(d["m"]), int(d["n"]), Shape(d.get("shape", "total")))


def add(alpha: MultiIndex, beta: MultiIndex) -> MultiIndex:
    if not alpha.pairs:
        return beta
    if not beta.pairs:
        return alpha
    acc = dict(alpha.pairs)
    for c, e in beta.pairs:
        acc[c] = acc.get(c, 0) + e
    return MultiIndex(sorted(acc.items()))


def try_subtract(alpha: MultiIndex, beta: MultiIndex) -> Optional[MultiIndex]:
    """Return ``alpha - beta`` when ``beta <= alpha``, otherwise ``None``."""
    acc = dict(alpha.pairs)
    for c, e in beta.pairs:
        rem = acc.get(c, 0) - e
        if rem < 0:
            return None
        acc[c] = rem
    return MultiIndex(sorted(acc.items()))


def leq(alpha: MultiIndex, beta: MultiIndex) -> bool:
    return all(e <= beta[c] for c, e in alpha.pairs)


def strictly_less(alpha: MultiIndex, beta: MultiIndex) -> bool:
    return alpha != beta and leq(alpha, beta)


def canonical_order(indices: Iterable[MultiIndex]) -> list[MultiIndex]:
    return sorted(indices, key=MultiIndex.order_key)


def enumerate_indices(spec: TruncationSpec) -> list[MultiIndex]:
    """All admitted multi-indices in canonical (length, lex) order, ``ZERO`` first."""
    return list(_enumerate_cached(spec))


@lru_cache(maxsize=64)
def _enumerate_cached(spec: TruncationSpec) -> tuple[MultiIndex, ...]:
    if spec.shape is Shape.BOX:
        dense = itertools.product(range(spec.n + 1), repeat=spec.m)
    else:
        dense = _total_degree_dense(spec.m, spec.n)
    return tuple(canonical_order(MultiIndex.from_dense(d) for d in dense))


def _total_degree_dense(m: int, n: int) -> Iterator[tuple[int, ...]]:
    if m == 1:
        for j in range(n + 1):
            yield (j,)
        return
    for j in range(n + 1):
        for rest in _total_degree_dense(m - 1, n - j):
            yield (j,) + rest


def lower_set(alpha: MultiIndex) -> list[MultiIndex]:
    """All ``beta <= alpha`` (including ``ZERO`` and ``alpha``), canonical order."""
    coords = alpha.support
    ranges = [range(e + 1) for _, e in alpha.pairs]
    out = [MultiIndex(zip(coords, combo)) for combo in itertools.product(*ranges)]
    return canonical_order(out)


def log_weight_2N(alpha: MultiIndex) -> float:
    """Natural log of ``prod_i (2i)^{alpha_i}``."""
    return math.fsum(e * math.log(2 * c) for c, e in alpha.pairs)


def weight_2N(alpha: MultiIndex) -> float:
    """``(2N)^alpha = prod_i (2i)^{alpha_i}``, exact product over the support.

    Raises ``OverflowError`` if the result exceeds the float range.
    """
    if log_weight_2N(alpha) > math.log(1.7976931348623157e308):
        raise OverflowError(f"weight_2N({alpha}) exceeds the floating point range")
    return float(math.prod((2 * c) ** e for c, e in alpha.pairs))


def weight_2N_pow(alpha: MultiIndex, p: float) -> float:
    """``(2N)^{p alpha}`` evaluated in log space."""
    return math.exp(p * log_weight_2N(alpha))


class Mode(enum.Enum):
    NONZERO = "nonzero"
    STRICTLY_SMALLER = "strictly_smaller"


def count_decompositions(alpha: MultiIndex, k: int, mode: Mode = Mode.NONZERO) -> int:
    """Number of ordered k-tuples of nonzero multi-indices summing to ``alpha``.

    With ``Mode.STRICTLY_SMALLER`` every part must also differ from ``alpha``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    excluded = alpha if mode is Mode.STRICTLY_SMALLER else None
    return _count(alpha, k, excluded)


@lru_cache(maxsize=None)
def _count(rest: MultiIndex, k: int, excluded: Optional[MultiIndex]) -> int:
    if k == 0:
        return 1 if rest.is_zero() else 0
    if rest.length < k:
        return 0
    total = 0
    for theta in lower_set(rest):
        if theta.is_zero() or theta == excluded:
            continue
        total += _count(try_subtract(rest, theta), k - 1, excluded)
    return total


def weighted_decomposition_sum(delta: MultiIndex, k: int, norms: dict) -> float:
    """Sum over ordered nonzero k-tuples summing to ``delta`` of ``prod norms[theta_i]``.

    Missing keys in ``norms`` count as zero.
    """
    cache: dict = {}

    def rec(rest: MultiIndex, j: int) -> float:
        if j == 0:
            return 1.0 if rest.is_zero() else 0.0
        if rest.length < j:
            return 0.0
        key = (rest, j)
        if key in cache:
            return cache[key]
        total = 0.0
        for theta in lower_set(rest):
            c = 0.0 if theta.is_zero() else norms.get(theta, 0.0)
            if c:
                total += c * rec(try_subtract(rest, theta), j - 1)
        cache[key] = total
        return total

    return rec(delta, k)


@dataclass
class DecompositionBoundReport:
    checked: int
    worst_ratio: float
    worst: Optional[tuple[MultiIndex, int]]
    violations: list

    @property
    def passed(self) -> bool:
        return not self.violations


def verify_lemma1a(spec: TruncationSpec) -> DecompositionBoundReport:
    """Check ``N(alpha, k) <= 2^{k|alpha|}`` for all admitted alpha and ``1 <= k <= |alpha|``."""
    checked = 0
    worst_ratio = 0.0
    worst = None
    violations = []
    for alpha in enumerate_indices(spec):
        n = alpha.length
        for k in range(1, n + 1):
            count = count_decompositions(alpha, k, Mode.STRICTLY_SMALLER)
            bound = 2 ** (k * n)
            ratio = count / bound
            checked += 1
            if ratio > worst_ratio or worst is None:
                worst_ratio, worst = ratio, (alpha, k)
            if count > bound:
                violations.append((alpha, k, count, bound))
    return DecompositionBoundReport(checked, worst_ratio, worst, violations)


def zeta_sum(p: float, spec: TruncationSpec, method: str = "auto") -> float:
    """Partial sum of ``(2N)^{-p alpha}`` over the admitted set.

    ``method="enumerate"`` sums term by term over :func:`enumerate_indices`;
    ``method="levels"`` convolves the per-coordinate geometric sequences level
    by level, which scales to truncations too large to enumerate.
    """
    if method == "auto":
        method = "enumerate" if spec.size() <= 250_000 else "levels"
    if method == "enumerate":
        return math.fsum(math.exp(-p * log_weight_2N(a)) for a in enumerate_indices(spec))
    if method != "levels":
        raise ValueError(f"unknown method {method!r}")
    # levels[l] = sum of weights of admitted indices with length l over the coordinates seen so far
    cap = spec.n if spec.shape is Shape.TOTAL else spec.m * spec.n
    levels = [1.0] + [0.0] * cap
    for i in range(1, spec.m + 1):
        r = (2.0 * i) ** (-p)
        powers = [r ** j for j in range(spec.n + 1)]
        new = [0.0] * (cap + 1)
        for l, v in enumerate(levels):
            if v == 0.0:
                continue
            for j, pw in enumerate(powers):
                if l + j > cap:
                    break
                new[l + j] += v * pw
        levels = new
    return math.fsum(levels)


def zeta_box_product(p: float, m: int, n: int) -> float:
    """Closed form ``prod_{i<=m} sum_{j<=n} (2i)^{-pj}`` for the box truncation."""
    out = 1.0
    for i in range(1, m + 1):
        r = (2.0 * i) ** (-p)
        out *= (n + 1.0) if r == 1.0 else (1.0 - r ** (n + 1)) / (1.0 - r)
    return out


def find_s(c: float) -> float:
    """Smallest ``s >= 0`` with ``c^{|alpha|} <= (2N)^{s alpha}`` for every alpha."""
    if c <= 0:
        raise ValueError("c must be positive")
    return max(0.0, math.log2(c))


def check_find_s(c: float, spec: TruncationSpec, rtol: float = 1e-12) -> bool:
    """Scan check of both inequalities guaranteed by :func:`find_s`."""
    s = find_s(c)
    logc = math.log(c)
    for alpha in enumerate_indices(spec):
        rhs = s * log_weight_2N(alpha)
        lhs_len = alpha.length * logc
        lhs_prod = math.fsum(e * logc for _, e in alpha.pairs)
        slack = rtol * max(1.0, abs(rhs))
        if lhs_len > rhs + slack or lhs_prod > rhs + slack:
            return False
    return True
