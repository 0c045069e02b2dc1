"""Exact dense statevector simulator.

Qubit 1 is the leftmost qubit: basis-state index = sum over qubits q of
bit_q * 2^(n-q), matching the bit-string order used by the gf2 module.
Operations never mutate their inputs; every one returns a fresh state.

Measurements follow the partial-collapse rule: qubits tagged Z or X are
read out, the outcome function maps the observed substring to a label,
and only the distinction between labels collapses the state. Basis
states that share a label keep their relative amplitudes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, Optional, Sequence

import numpy as np

from .gf2 import BitVector, Subspace

QUBIT_CAP = 24

_SQRT2 = np.sqrt(2.0)
_GATES_1Q = {
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
    "H": np.array([[1, 1], [1, -1]], dtype=np.complex128) / _SQRT2,
    "T": np.array([[1, 0], [0, np.exp(1j * np.pi / 4)]], dtype=np.complex128),
}
_CNOT = np.array(
    [[1, 0, 0, 0],
     [0, 1, 0, 0],
     [0, 0, 0, 1],
     [0, 0, 1, 0]],
    dtype=np.complex128,
)

# Outcome functions take a (rows, k) uint8 matrix of observed substrings and
# return one hashable label per row. None means the identity labelling
# (each substring is its own outcome, as a tuple of bits).
OutcomeFn = Callable[[np.ndarray], Sequence[Hashable]]


class QubitCapError(ValueError):
    """An operation would exceed the configured qubit cap."""


def _check_cap(num_qubits: int) -> None:
    if num_qubits > QUBIT_CAP:
        raise QubitCapError(f"{num_qubits} qubits exceeds cap of {QUBIT_CAP}")


def _to_index(v: BitVector) -> int:
    idx = 0
    for b in v.bits:
        idx = (idx << 1) | b
    return idx


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized pure state on num_qubits qubits.

    Equality of states is physical, not structural: compare with
    state_distance, which ignores global phase.
    """

    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        _check_cap(self.num_qubits)
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (2**self.num_qubits,):
            raise ValueError("amplitude count does not match qubit count")
        norm = float(np.linalg.norm(amps))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"state norm {norm!r} outside tolerance")
        object.__setattr__(self, "amplitudes", amps)

    @staticmethod
    def zero(num_qubits: int) -> "StateVector":
        _check_cap(num_qubits)
        amps = np.zeros(2**num_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return StateVector(num_qubits, amps)

    @staticmethod
    def basis(bits: BitVector) -> "StateVector":
        _check_cap(len(bits))
        amps = np.zeros(2 ** len(bits), dtype=np.complex128)
        amps[_to_index(bits)] = 1.0
        return StateVector(len(bits), amps)

    @staticmethod
    def from_amplitudes(amps: Sequence[complex]) -> "StateVector":
        arr = np.asarray(amps, dtype=np.complex128)
        n = int(arr.shape[0]).bit_length() - 1
        if 2**n != arr.shape[0]:
            raise ValueError("amplitude count must be a power of two")
        return StateVector(n, arr)


@dataclass(frozen=True)
class MeasurementSpec:
    """Per-qubit basis tags ('Z', 'X', or None to skip) plus an outcome
    function over the observed substring of the measured qubits, listed
    in ascending qubit order."""

    basis: tuple[Optional[str], ...]
    outcome_fn: Optional[OutcomeFn] = None

    def __post_init__(self) -> None:
        for b in self.basis:
            if b not in ("Z", "X", None):
                raise ValueError(f"bad basis tag {b!r}")

    @property
    def measured_qubits(self) -> tuple[int, ...]:
        return tuple(q + 1 for q, b in enumerate(self.basis) if b is not None)


@dataclass(frozen=True)
class MeasurementResult:
    outcome: Hashable
    raw_bits: BitVector
    post_state: StateVector


def rowwise(fn: Callable[[tuple[int, ...]], Hashable]) -> OutcomeFn:
    """Adapt a per-substring function to the batch outcome protocol."""
    return lambda m: [fn(tuple(int(b) for b in row)) for row in m]


def apply_gate(state: StateVector, gate: str, targets: Sequence[int]) -> StateVector:
    n = state.num_qubits
    targets = tuple(targets)
    if len(set(targets)) != len(targets):
        raise ValueError("duplicate target qubits")
    for q in targets:
        if not 1 <= q <= n:
            raise ValueError(f"qubit {q} out of range 1..{n}")
    psi = state.amplitudes.reshape((2,) * n)
    if gate in _GATES_1Q:
        (q,) = targets
        block = np.moveaxis(psi, q - 1, 0).reshape(2, -1)
        block = _GATES_1Q[gate] @ block
        out = np.moveaxis(block.reshape((2,) * n), 0, q - 1)
    elif gate == "CNOT":
        c, t = targets
        block = np.moveaxis(psi, (c - 1, t - 1), (0, 1)).reshape(4, -1)
        block = _CNOT @ block
        out = np.moveaxis(block.reshape((2,) * n), (0, 1), (c - 1, t - 1))
    else:
        raise ValueError(f"unknown gate {gate!r}")
    return StateVector(n, out.reshape(-1))


def apply_pauli_mask(state: StateVector, x_mask: BitVector, z_mask: BitVector) -> StateVector:
    """Apply X^x Z^z: phases from z first, then bit flips from x."""
    n = state.num_qubits
    if len(x_mask) != n or len(z_mask) != n:
        raise ValueError("mask length must equal qubit count")
    x_int = _to_index(x_mask)
    z_int = _to_index(z_mask)
    idx = np.arange(2**n, dtype=np.int64)
    par = idx & z_int
    par ^= par >> 16
    par ^= par >> 8
    par ^= par >> 4
    par ^= par >> 2
    par ^= par >> 1
    signs = 1.0 - 2.0 * (par & 1)
    out = np.empty_like(state.amplitudes)
    out[idx ^ x_int] = state.amplitudes * signs
    return StateVector(n, out)


def prepare_subspace_state(s: Subspace, shift: Optional[BitVector] = None) -> StateVector:
    """Uniform superposition over the coset s + shift."""
    n = s.ambient_dim
    _check_cap(n)
    if shift is None:
        shift = BitVector.zeros(n)
    k = s.dim
    combos = ((np.arange(2**k, dtype=np.int64)[:, None] >> np.arange(k - 1, -1, -1)) & 1)
    words = combos.astype(np.uint8) @ s.basis.to_array() if k else np.zeros((1, n), np.uint8)
    words = (words + shift.to_array()) % 2
    indices = words.astype(np.int64) @ (1 << np.arange(n - 1, -1, -1, dtype=np.int64))
    amps = np.zeros(2**n, dtype=np.complex128)
    amps[indices] = 1.0 / np.sqrt(2.0**k)
    return StateVector(n, amps)


def apply_encoding_isometry(
    state: StateVector, qubit: int, s: Subspace, delta: BitVector
) -> StateVector:
    """Replace one qubit by ambient_dim qubits via |0> -> |s>, |1> -> |s+delta|>."""
    n = state.num_qubits
    p = s.ambient_dim
    if not 1 <= qubit <= n:
        raise ValueError(f"qubit {qubit} out of range 1..{n}")
    new_n = n - 1 + p
    _check_cap(new_n)
    iso = np.stack(
        [prepare_subspace_state(s).amplitudes,
         prepare_subspace_state(s, delta).amplitudes],
        axis=1,
    )
    psi = state.amplitudes.reshape((2,) * n)
    block = np.moveaxis(psi, qubit - 1, 0).reshape(2, -1)
    out = (iso @ block).reshape((2,) * p + (2,) * (n - 1))
    out = np.moveaxis(out, tuple(range(p)), tuple(range(qubit - 1, qubit - 1 + p)))
    return StateVector(new_n, out.reshape(-1))


def tensor(a: StateVector, b: StateVector) -> StateVector:
    _check_cap(a.num_qubits + b.num_qubits)
    return StateVector(a.num_qubits + b.num_qubits, np.kron(a.amplitudes, b.amplitudes))


def _measurement_classes(state: StateVector, spec: MeasurementSpec):
    """Shared core: rotate X qubits, group rows of the measured register
    by outcome label. Returns everything measure/measure_branches need."""
    n = state.num_qubits
    if len(spec.basis) != n:
        raise ValueError("spec length must equal qubit count")
    axes = tuple(q for q, b in enumerate(spec.basis) if b is not None)
    k = len(axes)
    work = state
    for q, b in enumerate(spec.basis):
        if b == "X":
            work = apply_gate(work, "H", (q + 1,))
    psi = np.moveaxis(work.amplitudes.reshape((2,) * n), axes, range(k))
    psi = np.ascontiguousarray(psi).reshape(2**k, -1)
    row_probs = (psi.real**2 + psi.imag**2).sum(axis=1)
    rows = np.flatnonzero(row_probs > 1e-24)
    bits = ((rows[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8)
    if spec.outcome_fn is None:
        labels = [tuple(int(b) for b in row) for row in bits]
    else:
        labels = list(spec.outcome_fn(bits))
    classes: dict[Hashable, list[int]] = {}
    order: list[Hashable] = []
    for pos, lab in enumerate(labels):
        if lab not in classes:
            classes[lab] = []
            order.append(lab)
        classes[lab].append(pos)
    return axes, psi, row_probs, rows, bits, classes, order


def _collapse(
    state: StateVector,
    spec: MeasurementSpec,
    axes: tuple[int, ...],
    psi: np.ndarray,
    keep_rows: np.ndarray,
    class_prob: float,
) -> StateVector:
    n = state.num_qubits
    k = len(axes)
    post = np.zeros_like(psi)
    post[keep_rows] = psi[keep_rows] / np.sqrt(class_prob)
    post = np.moveaxis(post.reshape((2,) * n), range(k), axes)
    result = StateVector(n, post.reshape(-1))
    for q, b in enumerate(spec.basis):
        if b == "X":
            result = apply_gate(result, "H", (q + 1,))
    return result


def measure(
    state: StateVector, spec: MeasurementSpec, rng: np.random.Generator
) -> MeasurementResult:
    """Sample one outcome label, collapse onto its class, and draw a
    concrete substring from within the class. The substring draw does not
    collapse the state further."""
    axes, psi, row_probs, rows, bits, classes, order = _measurement_classes(state, spec)
    if not order:
        raise ValueError("state has no support")
    class_probs = np.array(
        [row_probs[rows[classes[lab]]].sum() for lab in order], dtype=np.float64
    )
    pick = int(rng.choice(len(order), p=class_probs / class_probs.sum()))
    outcome = order[pick]
    positions = classes[outcome]
    keep_rows = rows[positions]
    within = row_probs[keep_rows]
    raw_pos = positions[int(rng.choice(len(positions), p=within / within.sum()))]
    raw_bits = BitVector(tuple(int(b) for b in bits[raw_pos]))
    post = _collapse(state, spec, axes, psi, keep_rows, float(class_probs[pick]))
    return MeasurementResult(outcome, raw_bits, post)


def measure_branches(
    state: StateVector, spec: MeasurementSpec
) -> list[tuple[Hashable, float, StateVector]]:
    """All outcome labels with their exact probabilities and post states,
    in first-occurrence order of the labels."""
    axes, psi, row_probs, rows, bits, classes, order = _measurement_classes(state, spec)
    out = []
    for lab in order:
        keep_rows = rows[classes[lab]]
        prob = float(row_probs[keep_rows].sum())
        out.append((lab, prob, _collapse(state, spec, axes, psi, keep_rows, prob)))
    return out


def state_distance(a: StateVector, b: StateVector) -> float:
    """1 - |<a|b>|, invariant under global phase."""
    if a.num_qubits != b.num_qubits:
        raise ValueError("qubit counts differ")
    return float(1.0 - abs(np.vdot(a.amplitudes, b.amplitudes)))


def dump(state: StateVector) -> str:
    """One line per nonzero amplitude: 'bitstring re im'."""
    lines = []
    n = state.num_qubits
    for idx, amp in enumerate(state.amplitudes):
        if abs(amp) > 1e-12:
            bits = format(idx, f"0{n}b") if n else ""
            lines.append(f"{bits} {amp.real:.12g} {amp.imag:.12g}")
    return "\n".join(lines)
