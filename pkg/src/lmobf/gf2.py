"""GF(2) vectors, subspaces, and affine cosets.

Bit order convention used across the whole package: coordinate 1 is the
leftmost character of the textual form, and indexing a BitVector uses
those 1-based coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Iterator, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class BitVector:
    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0/1")

    @staticmethod
    def from_string(s: str) -> "BitVector":
        if not set(s) <= {"0", "1"}:
            raise ValueError(f"not a bit string: {s!r}")
        return BitVector(tuple(int(c) for c in s))

    @staticmethod
    def zeros(n: int) -> "BitVector":
        return BitVector((0,) * n)

    @staticmethod
    def from_ints(vals: Sequence[int]) -> "BitVector":
        return BitVector(tuple(int(v) & 1 for v in vals))

    def __len__(self) -> int:
        return len(self.bits)

    def __getitem__(self, coord: int) -> int:
        if not 1 <= coord <= len(self.bits):
            raise IndexError(f"coordinate {coord} out of range 1..{len(self.bits)}")
        return self.bits[coord - 1]

    def __xor__(self, other: "BitVector") -> "BitVector":
        if len(self) != len(other):
            raise ValueError("length mismatch")
        return BitVector(tuple(a ^ b for a, b in zip(self.bits, other.bits)))

    def dot(self, other: "BitVector") -> int:
        if len(self) != len(other):
            raise ValueError("length mismatch")
        return sum(a & b for a, b in zip(self.bits, other.bits)) & 1

    def is_zero(self) -> bool:
        return not any(self.bits)

    def to_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.uint8)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class BitMatrix:
    rows: tuple[BitVector, ...]

    def __post_init__(self) -> None:
        if self.rows:
            n = len(self.rows[0])
            if any(len(r) != n for r in self.rows):
                raise ValueError("ragged matrix")

    @staticmethod
    def from_strings(rows: Sequence[str]) -> "BitMatrix":
        return BitMatrix(tuple(BitVector.from_string(r) for r in rows))

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    def num_cols(self, default: int = 0) -> int:
        return len(self.rows[0]) if self.rows else default

    def to_array(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, 0), dtype=np.uint8)
        return np.array([r.bits for r in self.rows], dtype=np.uint8)


def rref(m: BitMatrix) -> BitMatrix:
    """Reduced row-echelon form over GF(2); zero rows dropped."""
    rows = [list(r.bits) for r in m.rows]
    ncols = m.num_cols()
    pivot_row = 0
    for col in range(ncols):
        hit = next((r for r in range(pivot_row, len(rows)) if rows[r][col]), None)
        if hit is None:
            continue
        rows[pivot_row], rows[hit] = rows[hit], rows[pivot_row]
        for r in range(len(rows)):
            if r != pivot_row and rows[r][col]:
                rows[r] = [a ^ b for a, b in zip(rows[r], rows[pivot_row])]
        pivot_row += 1
        if pivot_row == len(rows):
            break
    kept = [r for r in rows if any(r)]
    return BitMatrix(tuple(BitVector(tuple(r)) for r in kept))


@dataclass(frozen=True)
class Subspace:
    """Linear subspace of F2^ambient_dim with canonical RREF basis."""

    ambient_dim: int
    basis: BitMatrix

    def __post_init__(self) -> None:
        if self.basis.rows and self.basis.num_cols() != self.ambient_dim:
            raise ValueError("basis width != ambient_dim")
        if self.basis != rref(self.basis):
            raise ValueError("basis must be in RREF (use span())")

    @staticmethod
    def span(ambient_dim: int, rows: Sequence[BitVector]) -> "Subspace":
        return Subspace(ambient_dim, rref(BitMatrix(tuple(rows))))

    @staticmethod
    def span_strings(ambient_dim: int, rows: Sequence[str]) -> "Subspace":
        return Subspace.span(ambient_dim, [BitVector.from_string(r) for r in rows])

    @staticmethod
    def zero(ambient_dim: int) -> "Subspace":
        return Subspace(ambient_dim, BitMatrix(()))

    @property
    def dim(self) -> int:
        return self.basis.num_rows

    @cached_property
    def _pivots(self) -> tuple[int, ...]:
        return tuple(next(i for i, b in enumerate(r.bits) if b) for r in self.basis.rows)

    def reduce(self, v: BitVector) -> BitVector:
        """Canonical (lexicographically least) representative of v + self."""
        bits = list(v.bits)
        for row, piv in zip(self.basis.rows, self._pivots):
            if bits[piv]:
                bits = [a ^ b for a, b in zip(bits, row.bits)]
        return BitVector(tuple(bits))

    def contains(self, v: BitVector) -> bool:
        if len(v) != self.ambient_dim:
            raise ValueError("length mismatch")
        return self.reduce(v).is_zero()

    def contains_batch(self, vs: np.ndarray) -> np.ndarray:
        """Vectorized membership for an (N, ambient_dim) uint8 array."""
        work = vs.copy()
        for row, piv in zip(self.basis.rows, self._pivots):
            mask = work[:, piv] == 1
            work[mask] ^= row.to_array()
        return ~work.any(axis=1)

    def elements(self) -> Iterator[BitVector]:
        for combo in product((0, 1), repeat=self.dim):
            acc = BitVector.zeros(self.ambient_dim)
            for c, row in zip(combo, self.basis.rows):
                if c:
                    acc = acc ^ row
            yield acc

    def to_text(self) -> str:
        return "\n".join(str(r) for r in self.basis.rows)


@dataclass(frozen=True)
class AffineCoset:
    space: Subspace
    shift: BitVector

    def __post_init__(self) -> None:
        if len(self.shift) != self.space.ambient_dim:
            raise ValueError("shift length mismatch")
        reduced = self.space.reduce(self.shift)
        if reduced != self.shift:
            object.__setattr__(self, "shift", reduced)


def contains(c: AffineCoset, v: BitVector) -> bool:
    return c.space.contains(v ^ c.shift)


def sample_subspace(ambient: int, dim: int, rng: np.random.Generator) -> Subspace:
    """Uniformly random dim-dimensional subspace (rejection on full rank)."""
    if not 0 <= dim <= ambient:
        raise ValueError("need 0 <= dim <= ambient")
    if dim == 0:
        return Subspace.zero(ambient)
    while True:
        rows = rng.integers(0, 2, size=(dim, ambient), dtype=np.uint8)
        cand = BitMatrix(tuple(BitVector(tuple(int(b) for b in r)) for r in rows))
        reduced = rref(cand)
        if reduced.num_rows == dim:
            return Subspace(ambient, reduced)


def dual(s: Subspace) -> Subspace:
    """Orthogonal complement {v : v.w = 0 for all w in s}."""
    n = s.ambient_dim
    if s.dim == 0:
        return Subspace.span(n, [BitVector(tuple(1 if j == i else 0 for j in range(n))) for i in range(n)])
    basis = s.basis.to_array()
    pivots = set(s._pivots)
    free_cols = [c for c in range(n) if c not in pivots]
    null_rows = []
    for fc in free_cols:
        v = np.zeros(n, dtype=np.uint8)
        v[fc] = 1
        for row, piv in zip(basis, sorted(pivots)):
            if row[fc]:
                v[piv] ^= 1
        null_rows.append(BitVector(tuple(int(b) for b in v)))
    return Subspace.span(n, null_rows)


def canonical_delta_hat(s: Subspace, delta: BitVector) -> BitVector:
    """Least vector of dual(s) \\ dual(span(s, delta)).

    The returned vector d satisfies d.delta = 1, d.w = 0 for w in s, and
    dual(s) = shat ∪ (shat + d) where shat = dual(span(s, delta)).
    """
    if s.contains(delta):
        raise ValueError("delta must lie outside the subspace")
    s_delta = Subspace.span(s.ambient_dim, list(s.basis.rows) + [delta])
    s_perp = dual(s)
    s_hat = dual(s_delta)
    for row in s_perp.basis.rows:
        if not s_hat.contains(row):
            return s_hat.reduce(row)
    raise AssertionError("dual(s) \\ dual(s+delta) cannot be empty")


def sample_coset_vector(c: AffineCoset, rng: np.random.Generator) -> BitVector:
    acc = c.shift
    if c.space.dim:
        combo = rng.integers(0, 2, size=c.space.dim)
        for bit, row in zip(combo, c.space.basis.rows):
            if bit:
                acc = acc ^ row
    return acc


def coset_decode(s: Subspace, delta: BitVector, shift: BitVector, v: BitVector) -> Optional[int]:
    """0 if v in s+shift, 1 if v in s+delta+shift, None otherwise."""
    if s.contains(delta):
        raise ValueError("delta must lie outside the subspace")
    w = v ^ shift
    if s.contains(w):
        return 0
    if s.contains(w ^ delta):
        return 1
    return None


def coset_decode_batch(s: Subspace, delta: BitVector, shift: BitVector, vs: np.ndarray) -> np.ndarray:
    """Vectorized coset_decode over an (N, ambient) array; -1 encodes the reject value."""
    w = vs ^ shift.to_array()
    in0 = s.contains_batch(w)
    in1 = s.contains_batch(w ^ delta.to_array())
    out = np.full(len(vs), -1, dtype=np.int8)
    out[in0] = 0
    out[in1] = 1
    return out
