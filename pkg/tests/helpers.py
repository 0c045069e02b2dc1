"""Shared test utilities."""

from __future__ import annotations

import numpy as np

from lmobf.gf2 import BitVector
from lmobf.lm import (
    Circuit,
    Gate,
    circuit_output_distribution,
    compile_circuit,
    lmeval_distribution,
    total_variation,
)


def random_circuit(
    rng: np.random.Generator,
    max_qubits: int = 3,
    max_gates: int = 6,
    max_t: int = 2,
) -> Circuit:
    nq = int(rng.integers(1, max_qubits + 1))
    m = int(rng.integers(1, nq + 1))
    num_gates = int(rng.integers(0, max_gates + 1))
    gates = []
    t_left = max_t
    for _ in range(num_gates):
        kinds = ["H"] + (["CNOT"] if nq >= 2 else []) + (["T"] if t_left else [])
        kind = kinds[rng.integers(len(kinds))]
        if kind == "CNOT":
            c, t = rng.choice(nq, size=2, replace=False) + 1
            gates.append(Gate("CNOT", (int(c), int(t))))
        else:
            gates.append(Gate(kind, (int(rng.integers(1, nq + 1)),)))
            if kind == "T":
                t_left -= 1
    num_out = int(rng.integers(1, nq + 1))
    outs = tuple(sorted(int(w) + 1 for w in rng.choice(nq, size=num_out, replace=False)))
    return Circuit(m, nq, tuple(gates), outs)


def all_inputs(m: int):
    for v in range(2**m):
        yield BitVector(tuple((v >> (m - 1 - j)) & 1 for j in range(m)))


def max_equivalence_gap(circuit: Circuit) -> float:
    """Worst-case total variation between the compiled program and the
    plain statevector run, over every classical input."""
    program = compile_circuit(circuit)
    worst = 0.0
    for x in all_inputs(circuit.num_input_bits):
        direct = circuit_output_distribution(circuit, x)
        compiled = lmeval_distribution(x, program)
        worst = max(worst, total_variation(direct, compiled))
    return worst
