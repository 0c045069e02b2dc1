"""Measurement-based program model and compiler.

A program here is an alternating sequence of CNOT layers and partial
measurements over wires 1..n. Wires collapse in waves: at layer i the
wires in v_sets[i-1] collapse fully (standard or Hadamard basis per
theta), the two wires in w_sets[i-1] collapse only down to one output
bit r_i of a grouped standard-basis measurement, and everything still
active stays coherent. Classical inputs never touch the quantum state:
they enter through the measurement functions as virtual Pauli frames.

The compiler rewrites any {CNOT, H, T} circuit into this shape using
teleportation gadgets, two fresh wires per H or T gate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .gf2 import BitVector
from .sim import (
    MeasurementSpec,
    StateVector,
    apply_gate,
    measure,
    measure_branches,
    tensor,
)

GATE_KINDS = ("CNOT", "H", "T")


@dataclass(frozen=True)
class Gate:
    kind: str
    wires: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unsupported gate kind {self.kind!r}")
        want = 2 if self.kind == "CNOT" else 1
        if len(self.wires) != want or len(set(self.wires)) != want:
            raise ValueError(f"{self.kind} needs {want} distinct wire(s)")


@dataclass(frozen=True)
class Circuit:
    """Gate list over num_logical_qubits wires; the first num_input_bits
    wires carry the classical input, the rest start at |0>."""

    num_input_bits: int
    num_logical_qubits: int
    gates: tuple[Gate, ...]
    output_wires: tuple[int, ...]

    def __post_init__(self) -> None:
        if not 0 <= self.num_input_bits <= self.num_logical_qubits:
            raise ValueError("input count out of range")
        for g in self.gates:
            if any(not 1 <= w <= self.num_logical_qubits for w in g.wires):
                raise ValueError(f"gate {g} references a wire out of range")
        if len(set(self.output_wires)) != len(self.output_wires):
            raise ValueError("duplicate output wires")
        for w in self.output_wires:
            if not 1 <= w <= self.num_logical_qubits:
                raise ValueError(f"output wire {w} out of range")


def parse_circuit(text: str) -> Circuit:
    """Header 'qubits N inputs M outputs w1,w2,...' then one gate per line."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty circuit text")
    head = lines[0].split()
    if len(head) != 6 or head[0] != "qubits" or head[2] != "inputs" or head[4] != "outputs":
        raise ValueError(f"bad header {lines[0]!r}")
    outputs = tuple(int(w) for w in head[5].split(","))
    gates = []
    for ln in lines[1:]:
        parts = ln.split()
        gates.append(Gate(parts[0], tuple(int(w) for w in parts[1:])))
    return Circuit(int(head[3]), int(head[1]), tuple(gates), outputs)


def format_circuit(c: Circuit) -> str:
    head = (
        f"qubits {c.num_logical_qubits} inputs {c.num_input_bits} "
        f"outputs {','.join(str(w) for w in c.output_wires)}"
    )
    return "\n".join([head] + [f"{g.kind} {' '.join(str(w) for w in g.wires)}" for g in c.gates])


@dataclass(frozen=True)
class ClassicalFn:
    """GF(2) computation as a DAG. Node forms: ('in', name), ('const', v),
    ('xor', a, b), ('and', a, b) with a, b indices of earlier nodes.
    Outputs are (name, node index) pairs."""

    nodes: tuple[tuple, ...]
    outputs: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        for idx, node in enumerate(self.nodes):
            kind = node[0]
            if kind == "in":
                if not isinstance(node[1], str):
                    raise ValueError("input node needs a name")
            elif kind == "const":
                if node[1] not in (0, 1):
                    raise ValueError("const must be 0/1")
            elif kind in ("xor", "and"):
                if not all(0 <= a < idx for a in node[1:]):
                    raise ValueError("node references must point backward")
            else:
                raise ValueError(f"unknown node kind {kind!r}")
        for name, nid in self.outputs:
            if not 0 <= nid < len(self.nodes):
                raise ValueError(f"output {name} references missing node")

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(n[1] for n in self.nodes if n[0] == "in")

    @property
    def output_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.outputs)


def eval_classical_fn(fn: ClassicalFn, bindings: dict[str, int]) -> dict[str, int]:
    vals: list[int] = []
    for node in fn.nodes:
        if node[0] == "in":
            if node[1] not in bindings:
                raise KeyError(f"unbound input {node[1]!r}")
            vals.append(bindings[node[1]] & 1)
        elif node[0] == "const":
            vals.append(node[1])
        elif node[0] == "xor":
            vals.append(vals[node[1]] ^ vals[node[2]])
        else:
            vals.append(vals[node[1]] & vals[node[2]])
    return {name: vals[nid] for name, nid in fn.outputs}


def eval_classical_fn_batch(
    fn: ClassicalFn, bindings: dict[str, np.ndarray], num_rows: int
) -> dict[str, np.ndarray]:
    """Vectorized evaluation: every binding is a uint8 array of num_rows."""
    vals: list[np.ndarray] = []
    for node in fn.nodes:
        if node[0] == "in":
            if node[1] not in bindings:
                raise KeyError(f"unbound input {node[1]!r}")
            vals.append(bindings[node[1]])
        elif node[0] == "const":
            vals.append(np.full(num_rows, node[1], dtype=np.uint8))
        elif node[0] == "xor":
            vals.append(vals[node[1]] ^ vals[node[2]])
        else:
            vals.append(vals[node[1]] & vals[node[2]])
    return {name: vals[nid] for name, nid in fn.outputs}


class FnBuilder:
    """Append-only DAG builder with hash-consing and constant folding.
    Node ids stay valid as the graph grows, so expression snapshots taken
    mid-build remain usable."""

    def __init__(self) -> None:
        self.nodes: list[tuple] = []
        self._memo: dict[tuple, int] = {}

    def _add(self, node: tuple) -> int:
        if node in self._memo:
            return self._memo[node]
        self.nodes.append(node)
        self._memo[node] = len(self.nodes) - 1
        return len(self.nodes) - 1

    def _const_val(self, a: int) -> Optional[int]:
        node = self.nodes[a]
        return node[1] if node[0] == "const" else None

    def inp(self, name: str) -> int:
        return self._add(("in", name))

    def const(self, v: int) -> int:
        return self._add(("const", v & 1))

    def xor(self, a: int, b: int) -> int:
        if a == b:
            return self.const(0)
        ca, cb = self._const_val(a), self._const_val(b)
        if ca == 0:
            return b
        if cb == 0:
            return a
        if ca is not None and cb is not None:
            return self.const(ca ^ cb)
        return self._add(("xor", min(a, b), max(a, b)))

    def and_(self, a: int, b: int) -> int:
        if a == b:
            return a
        ca, cb = self._const_val(a), self._const_val(b)
        if ca == 0 or cb == 0:
            return self.const(0)
        if ca == 1:
            return b
        if cb == 1:
            return a
        return self._add(("and", min(a, b), max(a, b)))

    def extract(self, outputs: Sequence[tuple[str, int]]) -> ClassicalFn:
        """Garbage-collect to the nodes reachable from outputs."""
        reachable: set[int] = set()
        stack = [nid for _, nid in outputs]
        while stack:
            nid = stack.pop()
            if nid in reachable:
                continue
            reachable.add(nid)
            node = self.nodes[nid]
            if node[0] in ("xor", "and"):
                stack.extend(node[1:])
        order = sorted(reachable)
        renum = {old: new for new, old in enumerate(order)}
        nodes = []
        for old in order:
            node = self.nodes[old]
            if node[0] in ("xor", "and"):
                node = (node[0], renum[node[1]], renum[node[2]])
            nodes.append(node)
        return ClassicalFn(tuple(nodes), tuple((n, renum[i]) for n, i in outputs))


def magic_state(kind: str) -> StateVector:
    if kind == "H":
        return StateVector(2, np.array([0.5, 0.5, 0.5, -0.5], dtype=np.complex128))
    if kind == "T":
        return StateVector(1, np.array([1, np.exp(1j * np.pi / 4)]) / np.sqrt(2))
    if kind == "PX":
        return StateVector(1, np.array([1j, 1]) / np.sqrt(2))
    raise ValueError(f"unknown magic state kind {kind!r}")


# state_spec tags: ("zero",), ("input", j), ("magic_t",), ("magic_px",),
# ("magic_h", pair_id, half) with half in {"a", "b"}
StateTag = tuple


@dataclass(frozen=True)
class LMProgram:
    num_wires: int
    num_input_bits: int
    state_spec: tuple[StateTag, ...]
    t: int
    linear_layers: tuple[tuple[tuple[int, int], ...], ...]
    thetas: tuple[tuple[Optional[int], ...], ...]
    v_sets: tuple[tuple[int, ...], ...]
    w_sets: tuple[tuple[int, ...], ...]
    measurement_fns: tuple[ClassicalFn, ...]
    final_fn: ClassicalFn

    def __post_init__(self) -> None:
        if len(self.linear_layers) != self.t + 1 or len(self.thetas) != self.t + 1:
            raise ValueError("need t+1 linear layers and theta strings")
        if len(self.v_sets) != self.t + 1 or len(self.w_sets) != self.t:
            raise ValueError("need t+1 V sets and t W sets")
        if len(self.measurement_fns) != self.t:
            raise ValueError("need t measurement functions")
        if len(self.state_spec) != self.num_wires:
            raise ValueError("state_spec length must equal wire count")
        for th in self.thetas:
            if len(th) != self.num_wires:
                raise ValueError("theta length must equal wire count")

    @property
    def num_outputs(self) -> int:
        return len(self.final_fn.outputs)

    def phi(self, i: int) -> tuple[int, ...]:
        """Wires the i-th measurement operates on (1-based layer index)."""
        wires: set[int] = set()
        for v in self.v_sets[:i]:
            wires.update(v)
        if i <= self.t:
            wires.update(self.w_sets[i - 1])
        return tuple(sorted(wires))


def prepare_program_state(program: LMProgram) -> StateVector:
    state = StateVector(0, np.array([1.0], dtype=np.complex128))
    w = 1
    n = program.num_wires
    while w <= n:
        tag = program.state_spec[w - 1]
        if tag[0] in ("zero", "input"):
            state = tensor(state, StateVector.zero(1))
            w += 1
        elif tag[0] == "magic_t":
            state = tensor(state, magic_state("T"))
            w += 1
        elif tag[0] == "magic_px":
            state = tensor(state, magic_state("PX"))
            w += 1
        elif tag[0] == "magic_h":
            if tag[2] != "a" or w == n or program.state_spec[w] != ("magic_h", tag[1], "b"):
                raise ValueError(f"magic_h pair {tag[1]} is not two adjacent wires")
            state = tensor(state, magic_state("H"))
            w += 2
        else:
            raise ValueError(f"unknown state tag {tag!r}")
    return state


def apply_cnot_layer(state: StateVector, cnots: Iterable[tuple[int, int]]) -> StateVector:
    for c, t in cnots:
        state = apply_gate(state, "CNOT", (c, t))
    return state


def _mname(w: int) -> str:
    return f"m{w}"


def compile_circuit(circuit: Circuit) -> LMProgram:
    """Rewrite the circuit as layered CNOTs plus partial measurements.

    Pauli frames (one X/Z expression pair per active wire) start as
    (x_j, 0) and absorb every gate's correction, so the physical state is
    input-independent and all input dependence lives in the functions."""
    b = FnBuilder()
    nq = circuit.num_logical_qubits
    n = nq
    tags: list[StateTag] = [
        ("input", j) if j <= circuit.num_input_bits else ("zero",) for j in range(1, nq + 1)
    ]
    pos = {q: q for q in range(1, nq + 1)}
    frames = {
        q: (b.inp(f"x{q}") if q <= circuit.num_input_bits else b.const(0), b.const(0))
        for q in range(1, nq + 1)
    }
    layers: list[list[tuple[int, int]]] = [[]]
    theta_dicts: list[dict[int, int]] = []
    v_sets: list[set[int]] = []
    w_sets: list[set[int]] = []
    fns: list[ClassicalFn] = []
    collapsed_theta: dict[int, int] = {}
    v_star: set[int] = set()
    theta_star: dict[int, int] = {}
    h_pairs = 0

    for gate in circuit.gates:
        if gate.kind == "CNOT":
            i, j = pos[gate.wires[0]], pos[gate.wires[1]]
            layers[-1].append((i, j))
            xi, zi = frames[i]
            xj, zj = frames[j]
            frames[i] = (xi, b.xor(zi, zj))
            frames[j] = (b.xor(xi, xj), zj)
        elif gate.kind == "H":
            i = pos[gate.wires[0]]
            w1, w2 = n + 1, n + 2
            n += 2
            h_pairs += 1
            tags += [("magic_h", h_pairs, "a"), ("magic_h", h_pairs, "b")]
            layers[-1].append((i, w1))
            v_star.update((i, w1))
            theta_star[i] = 1
            theta_star[w1] = 0
            xi, zi = frames.pop(i)
            frames[w2] = (b.xor(b.inp(_mname(i)), zi), b.xor(b.inp(_mname(w1)), xi))
            pos[gate.wires[0]] = w2
        else:  # T
            i = pos[gate.wires[0]]
            w1, w2 = n + 1, n + 2
            n += 2
            tags += [("magic_t",), ("magic_px",)]
            layers[-1].append((w1, i))
            xi, zi = frames.pop(i)
            c = b.xor(b.inp(_mname(i)), xi)
            v_new = v_star | {i}
            r_node = b.xor(b.inp(_mname(w2)), b.and_(c, b.inp(_mname(w1))))
            f_out = [(f"v{w}", b.inp(_mname(w))) for w in sorted(v_new)] + [("r", r_node)]
            fns.append(b.extract(f_out))
            v_sets.append(v_new)
            w_sets.append({w1, w2})
            theta = dict(collapsed_theta)
            theta.update(theta_star)
            theta[i] = 0
            theta[w1] = 0
            theta[w2] = 0
            theta_dicts.append(theta)
            collapsed_theta.update(theta_star)
            collapsed_theta[i] = 0
            r_in = b.inp(f"r{len(fns)}")
            frames[w1] = (c, b.xor(b.and_(c, b.xor(b.inp(_mname(w2)), r_in)), zi))
            v_star = {w2}
            theta_star = {w2: 1}
            layers.append([])
            pos[gate.wires[0]] = w1

    active = sorted(frames)
    v_final = v_star | set(active)
    theta = dict(collapsed_theta)
    theta.update(theta_star)
    theta.update({w: 0 for w in active})
    theta_dicts.append(theta)
    v_sets.append(v_final)
    g_out = []
    for idx, q in enumerate(circuit.output_wires, start=1):
        w = pos[q]
        g_out.append((f"y{idx}", b.xor(b.inp(_mname(w)), frames[w][0])))
    g = b.extract(g_out)

    return LMProgram(
        num_wires=n,
        num_input_bits=circuit.num_input_bits,
        state_spec=tuple(tags),
        t=len(fns),
        linear_layers=tuple(tuple(layer) for layer in layers),
        thetas=tuple(
            tuple(d.get(w) for w in range(1, n + 1)) for d in theta_dicts
        ),
        v_sets=tuple(tuple(sorted(v)) for v in v_sets),
        w_sets=tuple(tuple(sorted(w)) for w in w_sets),
        measurement_fns=tuple(fns),
        final_fn=g,
    )


def _bind_and_label(
    fn: ClassicalFn,
    bits: np.ndarray,
    col_of: dict[int, int],
    x: BitVector,
    stored: dict[int, int],
    rs: dict[int, int],
) -> list[tuple[int, ...]]:
    """Run fn over every observed substring; label = output tuple."""
    num = len(bits)
    binds: dict[str, np.ndarray] = {}
    for name in fn.input_names:
        if name[0] == "m":
            w = int(name[1:])
            if w in col_of:
                binds[name] = bits[:, col_of[w]]
            else:
                binds[name] = np.full(num, stored[w], dtype=np.uint8)
        elif name[0] == "x":
            binds[name] = np.full(num, x[int(name[1:])], dtype=np.uint8)
        elif name[0] == "r":
            binds[name] = np.full(num, rs[int(name[1:])], dtype=np.uint8)
        else:
            raise KeyError(f"unrecognized input {name!r}")
    outs = eval_classical_fn_batch(fn, binds, num)
    cols = np.stack([outs[name] for name in fn.output_names], axis=1)
    return [tuple(int(v) for v in row) for row in cols]


def _layer_spec(
    program: LMProgram,
    layer: int,
    live: list[int],
    x: BitVector,
    stored: dict[int, int],
    rs: dict[int, int],
) -> tuple[MeasurementSpec, list[int]]:
    """Measurement over the newly collapsing wires of the given layer
    (1-based; layer t+1 is the final read). Returns a MeasurementSpec
    over the live-wire state plus the measured wires in column order."""
    final = layer == program.t + 1
    v_new = program.v_sets[layer - 1]
    w_new = () if final else program.w_sets[layer - 1]
    theta = program.thetas[layer - 1]
    measured = sorted(set(v_new) | set(w_new))
    pos_of = {w: q + 1 for q, w in enumerate(live)}
    basis: list[Optional[str]] = [None] * len(live)
    for w in measured:
        basis[pos_of[w] - 1] = "X" if theta[w - 1] == 1 else "Z"
    col_of = {w: idx for idx, w in enumerate(measured)}
    fn = program.final_fn if final else program.measurement_fns[layer - 1]

    def outcome_fn(bits: np.ndarray) -> list[tuple[int, ...]]:
        return _bind_and_label(fn, bits, col_of, x, stored, rs)

    return MeasurementSpec(tuple(basis), outcome_fn), measured


def _store_v_bits(
    program: LMProgram, layer: int, label: tuple[int, ...], stored: dict[int, int]
) -> None:
    fn = program.measurement_fns[layer - 1]
    by_name = dict(zip(fn.output_names, label))
    for w in program.v_sets[layer - 1]:
        stored[w] = by_name[f"v{w}"]


def _discard_collapsed(
    state: StateVector, live: list[int], wires: Sequence[int], theta, stored: dict[int, int]
) -> tuple[StateVector, list[int]]:
    """Slice fully collapsed wires out of the state (Hadamard-rotating
    the X-basis ones first so the slice lands on a basis axis)."""
    pos_of = {w: q + 1 for q, w in enumerate(live)}
    for w in sorted(wires, key=lambda w: -pos_of[w]):
        q = pos_of[w]
        if theta[w - 1] == 1:
            state = apply_gate(state, "H", (q,))
        psi = state.amplitudes.reshape((2,) * state.num_qubits)
        psi = np.take(psi, stored[w], axis=q - 1).reshape(-1)
        psi = psi / np.linalg.norm(psi)
        state = StateVector(state.num_qubits - 1, psi)
    return state, [w for w in live if w not in set(wires)]


def _layer_cnots(
    program: LMProgram, layer: int, live: list[int]
) -> list[tuple[int, int]]:
    pos_of = {w: q + 1 for q, w in enumerate(live)}
    return [(pos_of[c], pos_of[t]) for c, t in program.linear_layers[layer - 1]]


def lmeval(x: BitVector, program: LMProgram, rng: np.random.Generator) -> BitVector:
    """Sample one run of the program on classical input x."""
    if len(x) != program.num_input_bits:
        raise ValueError("input length mismatch")
    state = prepare_program_state(program)
    live = list(range(1, program.num_wires + 1))
    stored: dict[int, int] = {}
    rs: dict[int, int] = {}
    for layer in range(1, program.t + 2):
        state = apply_cnot_layer(state, _layer_cnots(program, layer, live))
        spec, _ = _layer_spec(program, layer, live, x, stored, rs)
        result = measure(state, spec, rng)
        if layer == program.t + 1:
            return BitVector(result.outcome)
        _store_v_bits(program, layer, result.outcome, stored)
        rs[layer] = result.outcome[-1]
        state, live = _discard_collapsed(
            result.post_state, live, program.v_sets[layer - 1], program.thetas[layer - 1], stored
        )
    raise AssertionError("unreachable")


def lmeval_distribution(x: BitVector, program: LMProgram) -> dict[tuple[int, ...], float]:
    """Exact output distribution via branch enumeration, no sampling."""
    if len(x) != program.num_input_bits:
        raise ValueError("input length mismatch")
    dist: dict[tuple[int, ...], float] = {}

    def walk(layer, prob, state, live, stored, rs):
        state = apply_cnot_layer(state, _layer_cnots(program, layer, live))
        spec, _ = _layer_spec(program, layer, live, x, stored, rs)
        for label, p, post in measure_branches(state, spec):
            branch_prob = prob * p
            if branch_prob <= 1e-15:
                continue
            if layer == program.t + 1:
                dist[label] = dist.get(label, 0.0) + branch_prob
                continue
            stored2 = dict(stored)
            _store_v_bits(program, layer, label, stored2)
            rs2 = dict(rs)
            rs2[layer] = label[-1]
            shrunk, live2 = _discard_collapsed(
                post, live, program.v_sets[layer - 1], program.thetas[layer - 1], stored2
            )
            walk(layer + 1, branch_prob, shrunk, live2, stored2, rs2)

    walk(1, 1.0, prepare_program_state(program), list(range(1, program.num_wires + 1)), {}, {})
    return dist


def simulate_circuit(circuit: Circuit, x: BitVector) -> StateVector:
    """Plain statevector run: inputs loaded, gates applied in order."""
    if len(x) != circuit.num_input_bits:
        raise ValueError("input length mismatch")
    bits = tuple(x.bits) + (0,) * (circuit.num_logical_qubits - circuit.num_input_bits)
    state = StateVector.basis(BitVector(bits))
    for g in circuit.gates:
        state = apply_gate(state, g.kind, g.wires)
    return state


def circuit_output_distribution(
    circuit: Circuit, x: BitVector
) -> dict[tuple[int, ...], float]:
    """Exact distribution of the standard-basis read of the output wires."""
    state = simulate_circuit(circuit, x)
    n = circuit.num_logical_qubits
    probs = (state.amplitudes.real**2 + state.amplitudes.imag**2).reshape((2,) * n)
    axes = tuple(w - 1 for w in circuit.output_wires)
    k = len(axes)
    moved = np.moveaxis(probs, axes, range(k)).reshape(2**k, -1).sum(axis=1)
    out = {}
    for idx in np.flatnonzero(moved > 1e-15):
        bits = tuple(int(b) for b in f"{idx:0{k}b}") if k else ()
        out[bits] = float(moved[idx])
    return out


def total_variation(
    a: dict[tuple[int, ...], float], b: dict[tuple[int, ...], float]
) -> float:
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)


def check_lm_invariants(program: LMProgram) -> list[str]:
    """Validate the structural rules; returns human-readable violations."""
    bad: list[str] = []
    n, t = program.num_wires, program.t
    all_v: set[int] = set()
    for i, v in enumerate(program.v_sets, start=1):
        if all_v & set(v):
            bad.append(f"V{i} overlaps an earlier V set")
        all_v.update(v)
    all_w: set[int] = set()
    for i, w in enumerate(program.w_sets, start=1):
        if len(w) and all_w & set(w):
            bad.append(f"W{i} overlaps an earlier W set")
        all_w.update(w)
    if all_v != set(range(1, n + 1)):
        bad.append("V sets do not cover every wire by the final layer")

    for i in range(1, t + 2):
        theta = program.thetas[i - 1]
        support = {w for w in range(1, n + 1) if theta[w - 1] is not None}
        if support != set(program.phi(i)):
            bad.append(f"theta{i} support differs from the layer-{i} measured set")
        for j in range(1, i):
            for w in program.v_sets[j - 1]:
                if theta[w - 1] != program.thetas[j - 1][w - 1]:
                    bad.append(f"theta{i} re-measures wire {w} in a different basis")

    for i, layer in enumerate(program.linear_layers, start=1):
        collapsed = set().union(*program.v_sets[: i - 1]) if i > 1 else set()
        for c, tgt in layer:
            if not (1 <= c <= n and 1 <= tgt <= n and c != tgt):
                bad.append(f"L{i} has an invalid CNOT ({c},{tgt})")
            if c in collapsed or tgt in collapsed:
                bad.append(f"linear layer {i} touches collapsed wire")

    for i, w_set in enumerate(program.w_sets, start=1):
        theta = program.thetas[i - 1]
        for w in w_set:
            if theta[w - 1] != 0:
                bad.append(f"wire {w} in W{i} is not standard-basis measured")
        earlier_phi = set()
        for j in range(1, i):
            earlier_phi.update(program.phi(j))
        if earlier_phi & set(w_set):
            bad.append(f"W{i} intersects an earlier measured set")
        for j in range(1, i + 1):
            for c, tgt in program.linear_layers[j - 1]:
                if tgt in w_set:
                    bad.append(f"L{j} targets wire {tgt} of W{i}; controls only")

    for i in range(1, t + 1):
        fn = program.measurement_fns[i - 1]
        allowed = (
            {_mname(w) for w in program.phi(i)}
            | {f"x{j}" for j in range(1, program.num_input_bits + 1)}
            | {f"r{j}" for j in range(1, i)}
        )
        extra = set(fn.input_names) - allowed
        if extra:
            bad.append(f"f{i} reads unavailable inputs {sorted(extra)}")
        want = tuple(f"v{w}" for w in program.v_sets[i - 1]) + ("r",)
        if fn.output_names != want:
            bad.append(f"f{i} outputs {fn.output_names}, expected {want}")
    g_allowed = (
        {_mname(w) for w in range(1, n + 1)}
        | {f"x{j}" for j in range(1, program.num_input_bits + 1)}
        | {f"r{j}" for j in range(1, t + 1)}
    )
    extra = set(program.final_fn.input_names) - g_allowed
    if extra:
        bad.append(f"final function reads unavailable inputs {sorted(extra)}")
    for idx, name in enumerate(program.final_fn.output_names, start=1):
        if name != f"y{idx}":
            bad.append(f"final output {idx} is named {name!r}")

    input_tags = [tag for tag in program.state_spec if tag[0] == "input"]
    want_tags = [("input", j) for j in range(1, program.num_input_bits + 1)]
    if input_tags != want_tags or list(program.state_spec[: len(want_tags)]) != want_tags:
        bad.append("input tags must sit on the first wires, one per input bit")
    pairs: dict[int, list] = {}
    for w, tag in enumerate(program.state_spec, start=1):
        if tag[0] == "magic_h":
            pairs.setdefault(tag[1], []).append((w, tag[2]))
    for pid, halves in pairs.items():
        if sorted(h for _, h in halves) != ["a", "b"]:
            bad.append(f"magic pair {pid} must have exactly halves a and b")
    return bad


# --- serialization ---------------------------------------------------------


def _tag_to_text(tag: StateTag) -> str:
    if tag[0] == "zero":
        return "zero"
    if tag[0] == "input":
        return f"input {tag[1]}"
    if tag[0] == "magic_t":
        return "magic-T"
    if tag[0] == "magic_px":
        return "magic-PX"
    return f"magic-H {tag[1]} {tag[2]}"


def _tag_from_text(text: str) -> StateTag:
    parts = text.split()
    if parts[0] == "zero":
        return ("zero",)
    if parts[0] == "input":
        return ("input", int(parts[1]))
    if parts[0] == "magic-T":
        return ("magic_t",)
    if parts[0] == "magic-PX":
        return ("magic_px",)
    if parts[0] == "magic-H":
        return ("magic_h", int(parts[1]), parts[2])
    raise ValueError(f"unknown state tag {text!r}")


def _fn_to_lines(fn: ClassicalFn) -> list[str]:
    lines = [f"nodes {len(fn.nodes)}"]
    for idx, node in enumerate(fn.nodes):
        lines.append(f"{idx} " + " ".join(str(p) for p in node))
    for name, nid in fn.outputs:
        lines.append(f"out {name} {nid}")
    return lines


def _fn_from_lines(lines: list[str], at: int) -> tuple[ClassicalFn, int]:
    count = int(lines[at].split()[1])
    at += 1
    nodes = []
    for _ in range(count):
        parts = lines[at].split()[1:]
        if parts[0] == "in":
            nodes.append(("in", parts[1]))
        elif parts[0] == "const":
            nodes.append(("const", int(parts[1])))
        else:
            nodes.append((parts[0], int(parts[1]), int(parts[2])))
        at += 1
    outputs = []
    while at < len(lines) and lines[at].startswith("out "):
        _, name, nid = lines[at].split()
        outputs.append((name, int(nid)))
        at += 1
    return ClassicalFn(tuple(nodes), tuple(outputs)), at


def program_to_text(program: LMProgram) -> str:
    lines = [
        f"wires {program.num_wires}",
        f"inputs {program.num_input_bits}",
        f"t {program.t}",
    ]
    for w, tag in enumerate(program.state_spec, start=1):
        lines.append(f"state {w} {_tag_to_text(tag)}")
    for i, layer in enumerate(program.linear_layers, start=1):
        body = " ".join(f"{c}>{t}" for c, t in layer) or "-"
        lines.append(f"L{i}: {body}")
    for i, theta in enumerate(program.thetas, start=1):
        body = " ".join(
            f"{w}={theta[w - 1]}" for w in range(1, program.num_wires + 1)
            if theta[w - 1] is not None
        )
        lines.append(f"theta{i}: {body}")
    for i, v in enumerate(program.v_sets, start=1):
        lines.append(f"V{i}: " + (" ".join(str(w) for w in v) or "-"))
    for i, w_set in enumerate(program.w_sets, start=1):
        lines.append(f"W{i}: " + (" ".join(str(w) for w in w_set) or "-"))
    for i, fn in enumerate(program.measurement_fns, start=1):
        lines.append(f"f{i}:")
        lines.extend(_fn_to_lines(fn))
    lines.append("g:")
    lines.extend(_fn_to_lines(program.final_fn))
    return "\n".join(lines)


def program_from_text(text: str) -> LMProgram:
    lines = [ln.rstrip() for ln in text.strip().splitlines()]
    n = int(lines[0].split()[1])
    m = int(lines[1].split()[1])
    t = int(lines[2].split()[1])
    at = 3
    tags = []
    for _ in range(n):
        parts = lines[at].split(maxsplit=2)
        tags.append(_tag_from_text(parts[2]))
        at += 1
    layers = []
    for i in range(1, t + 2):
        body = lines[at].split(":", 1)[1].strip()
        layer = []
        if body != "-":
            for item in body.split():
                c, tgt = item.split(">")
                layer.append((int(c), int(tgt)))
        layers.append(tuple(layer))
        at += 1
    thetas = []
    for i in range(1, t + 2):
        body = lines[at].split(":", 1)[1].strip()
        theta: list[Optional[int]] = [None] * n
        for item in body.split():
            w, v = item.split("=")
            theta[int(w) - 1] = int(v)
        thetas.append(tuple(theta))
        at += 1
    v_sets = []
    for i in range(1, t + 2):
        body = lines[at].split(":", 1)[1].strip()
        v_sets.append(tuple(int(w) for w in body.split()) if body != "-" else ())
        at += 1
    w_sets = []
    for i in range(1, t + 1):
        body = lines[at].split(":", 1)[1].strip()
        w_sets.append(tuple(int(w) for w in body.split()) if body != "-" else ())
        at += 1
    fns = []
    for i in range(1, t + 1):
        assert lines[at] == f"f{i}:"
        fn, at = _fn_from_lines(lines, at + 1)
        fns.append(fn)
    assert lines[at] == "g:"
    g, at = _fn_from_lines(lines, at + 1)
    return LMProgram(
        num_wires=n,
        num_input_bits=m,
        state_spec=tuple(tags),
        t=t,
        linear_layers=tuple(layers),
        thetas=tuple(thetas),
        v_sets=tuple(v_sets),
        w_sets=tuple(w_sets),
        measurement_fns=tuple(fns),
        final_fn=g,
    )
