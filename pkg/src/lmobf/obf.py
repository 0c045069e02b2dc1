"""Obfuscated evaluation of compiled measurement programs.

The obfuscator wraps a program's initial state in the coset-code
authentication layer, attaches a one-shot signature token for the
classical input, and publishes one classical oracle per measurement
layer plus a final output oracle. Each layer oracle checks the token,
replays a hash chain that commits to every earlier measurement record,
decodes the submitted codewords, and answers with the next chained
label; the output oracle repeats the checks and releases the program
output. Simulated variants of both oracles (membership checks instead
of decoding, labels with a fixed chain bit) exercise the boundary the
security argument rests on: they reject exactly the same queries.

Evaluation drives the encoded register through the transversal CNOT
layers. Each layer fully reads the blocks of the newly collapsing
wires but takes only one bit from the layer's measurement pair, the
bit the layer function exposes, so the pair's blocks stay in coherent
coset superpositions for their deferred reads; the pair vectors handed
to the oracle are a consistent sample from inside the observed class.
A logical evaluation route produces the same records from the
unencoded program state and dresses them in random coset
representatives, which keeps larger parameter choices inside the
simulator's qubit budget.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, replace
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .auth import (
    AuthKey,
    BOT,
    BasisString,
    CodewordTuple,
    _wire_decoder,
    dec,
    dec_batch,
    enc,
    gen,
    honest_codeword,
    key_from_text,
    key_to_text,
    lin_eval,
    pauli_update,
    ver,
)
from .gf2 import BitVector, Subspace, coset_decode
from .lm import (
    LMProgram,
    _discard_collapsed,
    _layer_cnots,
    _layer_spec,
    _store_v_bits,
    apply_cnot_layer,
    check_lm_invariants,
    eval_classical_fn,
    eval_classical_fn_batch,
    lmeval_distribution,
    prepare_program_state,
    program_from_text,
    program_to_text,
)
from .sim import QUBIT_CAP, MeasurementSpec, StateVector, apply_gate, measure
from .tokens import (
    Signature,
    TokenKeypair,
    tok_gen,
    tok_sign,
    tok_ver,
    vk_from_text,
    vk_to_text,
)

REASON_BAD_TOKEN = "bad-token"
REASON_BAD_LABEL = "bad-label"
REASON_COLLISION = "label-collision"
REASON_DECODE = "decode-fail"


# --- parameters and key material ---------------------------------------------


@dataclass(frozen=True)
class ObfParams:
    """Knobs of one obfuscation run.

    security sizes the per-wire code (length 2*security+1), label_bits
    sizes the chained labels, token_dim sizes the signature token's
    hidden subspaces. With scaled_labels the label width grows as
    max(security, wires**4) instead of staying at the fixed default.
    """

    security: int = 2
    label_bits: int = 64
    token_dim: int = 4
    scaled_labels: bool = False

    def __post_init__(self) -> None:
        if self.security < 1:
            raise ValueError("security must be at least 1")
        if self.token_dim < 1:
            raise ValueError("token_dim must be at least 1")
        if self.label_bits < 8:
            raise ValueError("labels shorter than 8 bits are not collision safe")

    def labels_for(self, num_wires: int) -> int:
        if self.scaled_labels:
            return max(8, self.security, num_wires**4)
        return self.label_bits


@dataclass(frozen=True)
class OracleKey:
    """Everything the classical oracles close over: the authentication
    key, the token verification subspaces, the label PRF key, and the
    program's classical part."""

    auth_key: AuthKey
    token_dim: int
    token_vk: tuple[Subspace, ...]
    prf_key: bytes
    label_bits: int
    program: LMProgram

    def __post_init__(self) -> None:
        if self.auth_key.num_wires != self.program.num_wires:
            raise ValueError("authentication key width must match the program")
        if len(self.token_vk) != self.program.num_input_bits:
            raise ValueError("token must cover every input bit")
        if any(s.ambient_dim != 2 * self.token_dim for s in self.token_vk):
            raise ValueError("token subspace width must be 2*token_dim")
        if self.label_bits < 8:
            raise ValueError("labels shorter than 8 bits are not collision safe")
        if not self.prf_key:
            raise ValueError("empty PRF key")

    def layer_cnots(self, i: int) -> tuple[tuple[int, int], ...]:
        """All CNOTs applied before the i-th measurement, in order."""
        return tuple(c for layer in self.program.linear_layers[:i] for c in layer)

    def layer_basis(self, i: int) -> BasisString:
        return BasisString(self.program.thetas[i - 1], self.auth_key.code_length)


# --- label PRF and transcript framing ----------------------------------------


def prf(key: bytes, message: bytes, num_bits: int) -> BitVector:
    """Deterministic keyed hash truncated to num_bits (HMAC-SHA256 core,
    counter-extended when the requested width passes one digest)."""
    if num_bits < 1:
        raise ValueError("label width must be positive")
    digest = b""
    counter = 0
    while 8 * len(digest) < num_bits:
        block = message + counter.to_bytes(4, "big")
        digest += hmac.new(key, block, hashlib.sha256).digest()
        counter += 1
    bits = np.unpackbits(np.frombuffer(digest, dtype=np.uint8))[:num_bits]
    return BitVector(tuple(int(b) for b in bits))


def frame_bits(bits: Sequence[int]) -> bytes:
    """Length-prefixed packing: 4-byte big-endian bit count, then the
    bits MSB-first. Unambiguous under concatenation."""
    arr = np.asarray(bits, dtype=np.uint8)
    return len(arr).to_bytes(4, "big") + np.packbits(arr).tobytes()


def frame_group(vectors: Sequence[BitVector]) -> bytes:
    """One frame holding the concatenation of several equal-role vectors
    (a signature, or one layer's codewords in wire order)."""
    return frame_bits([b for v in vectors for b in v.bits])


def read_frames(raw: bytes) -> list[BitVector]:
    """Inverse of a frame sequence; rejects truncated bytes."""
    out = []
    at = 0
    while at < len(raw):
        if at + 4 > len(raw):
            raise ValueError("truncated frame header")
        n = int.from_bytes(raw[at : at + 4], "big")
        at += 4
        nbytes = (n + 7) // 8
        if at + nbytes > len(raw):
            raise ValueError("truncated frame body")
        chunk = np.frombuffer(raw[at : at + nbytes], dtype=np.uint8)
        bits = np.unpackbits(chunk)[:n] if nbytes else np.zeros(0, np.uint8)
        out.append(BitVector(tuple(int(b) for b in bits)))
        at += nbytes
    return out


@dataclass(frozen=True)
class Transcript:
    """Growing record of one evaluation: the input, its signature, and
    per layer the submitted codewords (ascending wire order within each
    layer) interleaved with the labels the oracles handed back."""

    x: BitVector
    signature: Signature
    v_layers: tuple[CodewordTuple, ...] = ()
    labels: tuple[BitVector, ...] = ()

    def __post_init__(self) -> None:
        if len(self.labels) not in (len(self.v_layers), len(self.v_layers) - 1):
            raise ValueError("labels must trail the codeword layers by at most one")

    def with_codewords(self, v: CodewordTuple) -> "Transcript":
        return replace(self, v_layers=self.v_layers + (v,))

    def with_label(self, label: BitVector) -> "Transcript":
        return replace(self, labels=self.labels + (label,))


def label_message(transcript: Transcript, upto: int, trailing_bit: int) -> bytes:
    """Canonical bytes hashed for the layer-upto label: the input, the
    signature, then codeword layers interleaved with the earlier labels,
    and the chain bit last."""
    parts = [
        frame_bits(transcript.x.bits),
        frame_group(transcript.signature),
    ]
    for idx in range(upto):
        parts.append(frame_group(transcript.v_layers[idx]))
        if idx < upto - 1:
            parts.append(frame_bits(transcript.labels[idx].bits))
    parts.append(frame_bits((trailing_bit & 1,)))
    return b"".join(parts)


def chain_label(key: OracleKey, transcript: Transcript, upto: int, bit: int) -> BitVector:
    return prf(key.prf_key, label_message(transcript, upto, bit), key.label_bits)


# --- oracle internals ---------------------------------------------------------


def is_bot(reply: object) -> bool:
    """True for a rejection in either reply shape (bare or diagnostic)."""
    return reply is BOT or (isinstance(reply, tuple) and len(reply) == 2 and reply[0] is BOT)


def _reject(diagnostics: bool, reason: str):
    return (BOT, reason) if diagnostics else BOT


def _shape_ok(
    key: OracleKey, transcript: Transcript, upto: int, w_pair: Optional[CodewordTuple]
) -> bool:
    program = key.program
    p = key.auth_key.code_length
    if len(transcript.x) != program.num_input_bits:
        return False
    if len(transcript.v_layers) != upto or len(transcript.labels) != upto - 1:
        return False
    for idx, layer in enumerate(transcript.v_layers):
        if len(layer) != len(program.v_sets[idx]):
            return False
        if any(len(c) != p for c in layer):
            return False
    if w_pair is not None:
        if len(w_pair) != len(program.w_sets[upto - 1]):
            return False
        if any(len(c) != p for c in w_pair):
            return False
    return True


def _recover_chain(
    key: OracleKey, transcript: Transcript, upto: int
) -> tuple[Optional[dict[int, int]], Optional[str]]:
    """Walk labels 1..upto against the two candidate hashes per layer;
    the matching trailing bit is that layer's recovered chain bit."""
    rs: dict[int, int] = {}
    for idx in range(1, upto + 1):
        cand0 = chain_label(key, transcript, idx, 0)
        cand1 = chain_label(key, transcript, idx, 1)
        if cand0 == cand1:
            return None, REASON_COLLISION
        given = transcript.labels[idx - 1]
        if given == cand0:
            rs[idx] = 0
        elif given == cand1:
            rs[idx] = 1
        else:
            return None, REASON_BAD_LABEL
    return rs, None


def _codewords_for_decode(
    key: OracleKey, i: int, transcript: Transcript, w_pair: Optional[CodewordTuple]
) -> CodewordTuple:
    """Rearrange per-layer tuples into ascending wire order over the
    wires the i-th measurement covers."""
    program = key.program
    by_wire: dict[int, BitVector] = {}
    for idx, layer in enumerate(transcript.v_layers):
        for wire, c in zip(sorted(program.v_sets[idx]), layer):
            by_wire[wire] = c
    if w_pair is not None:
        for wire, c in zip(program.w_sets[i - 1], w_pair):
            by_wire[wire] = c
    return tuple(by_wire[w] for w in key.layer_basis(i).phi)


def _decoded_bindings(
    key: OracleKey, i: int, transcript: Transcript, w_pair: Optional[CodewordTuple]
) -> Optional[dict[int, int]]:
    ordered = _codewords_for_decode(key, i, transcript, w_pair)
    basis = key.layer_basis(i)
    decoded = dec(key.auth_key, key.layer_cnots(i), basis, ordered)
    if decoded is None:
        return None
    return {wire: decoded[idx + 1] for idx, wire in enumerate(basis.phi)}


def _eval_layer_fn(
    fn, x: BitVector, bits_by_wire: dict[int, int], rs: dict[int, int]
) -> dict[str, int]:
    bindings: dict[str, int] = {}
    for name in fn.input_names:
        if name[0] == "m":
            bindings[name] = bits_by_wire[int(name[1:])]
        elif name[0] == "x":
            bindings[name] = x[int(name[1:])]
        elif name[0] == "r":
            bindings[name] = rs[int(name[1:])]
        else:
            raise KeyError(f"unrecognized input {name!r}")
    return eval_classical_fn(fn, bindings)


# --- the four oracles ---------------------------------------------------------


def oracle_f(
    key: OracleKey,
    i: int,
    transcript: Transcript,
    w_pair: CodewordTuple,
    diagnostics: bool = False,
    log: Optional[list] = None,
):
    """Layer-i oracle: token check, label-chain replay, decode of every
    codeword the i-th measurement covers, then the next chained label.
    Accepts with (echoed layer codewords, label); rejects with the bare
    sentinel, or (sentinel, reason) when diagnostics are on."""
    if not 1 <= i <= key.program.t:
        raise ValueError(f"layer {i} out of range 1..{key.program.t}")
    if not tok_ver(key.token_vk, transcript.x, transcript.signature):
        return _reject(diagnostics, REASON_BAD_TOKEN)
    if not _shape_ok(key, transcript, i, w_pair):
        return _reject(diagnostics, REASON_DECODE)
    rs, reason = _recover_chain(key, transcript, i - 1)
    if reason is not None:
        return _reject(diagnostics, reason)
    bits_by_wire = _decoded_bindings(key, i, transcript, w_pair)
    if bits_by_wire is None:
        return _reject(diagnostics, REASON_DECODE)
    outs = _eval_layer_fn(key.program.measurement_fns[i - 1], transcript.x, bits_by_wire, rs)
    label = chain_label(key, transcript, i, outs["r"])
    if log is not None:
        log.append((i, label_message(transcript, i, outs["r"]), label))
    return transcript.v_layers[-1], label


def oracle_g(
    key: OracleKey,
    transcript: Transcript,
    diagnostics: bool = False,
):
    """Output oracle: token check, full label-chain replay, decode over
    the final measurement's wires, then the program's output bits."""
    t = key.program.t
    if not tok_ver(key.token_vk, transcript.x, transcript.signature):
        return _reject(diagnostics, REASON_BAD_TOKEN)
    if not _shape_ok(key, transcript, t + 1, None):
        return _reject(diagnostics, REASON_DECODE)
    rs, reason = _recover_chain(key, transcript, t)
    if reason is not None:
        return _reject(diagnostics, reason)
    bits_by_wire = _decoded_bindings(key, t + 1, transcript, None)
    if bits_by_wire is None:
        return _reject(diagnostics, REASON_DECODE)
    outs = _eval_layer_fn(key.program.final_fn, transcript.x, bits_by_wire, rs)
    return BitVector(tuple(outs[name] for name in key.program.final_fn.output_names))


def oracle_f_sim(
    key: OracleKey,
    i: int,
    transcript: Transcript,
    w_pair: CodewordTuple,
    diagnostics: bool = False,
):
    """Simulated layer oracle: same token and label-chain checks, but the
    codewords are only membership-verified, never decoded, and the label
    always commits to chain bit 0."""
    if not 1 <= i <= key.program.t:
        raise ValueError(f"layer {i} out of range 1..{key.program.t}")
    if not tok_ver(key.token_vk, transcript.x, transcript.signature):
        return _reject(diagnostics, REASON_BAD_TOKEN)
    if not _shape_ok(key, transcript, i, w_pair):
        return _reject(diagnostics, REASON_DECODE)
    _, reason = _recover_chain(key, transcript, i - 1)
    if reason is not None:
        return _reject(diagnostics, reason)
    ordered = _codewords_for_decode(key, i, transcript, w_pair)
    if not ver(key.auth_key, key.layer_cnots(i), key.layer_basis(i), ordered):
        return _reject(diagnostics, REASON_DECODE)
    return transcript.v_layers[-1], chain_label(key, transcript, i, 0)


def oracle_g_sim(
    key: OracleKey,
    q_fn: Callable[[BitVector], BitVector],
    transcript: Transcript,
    diagnostics: bool = False,
):
    """Simulated output oracle: verify instead of decode, then answer
    from the induced classical map on x alone."""
    t = key.program.t
    if not tok_ver(key.token_vk, transcript.x, transcript.signature):
        return _reject(diagnostics, REASON_BAD_TOKEN)
    if not _shape_ok(key, transcript, t + 1, None):
        return _reject(diagnostics, REASON_DECODE)
    _, reason = _recover_chain(key, transcript, t)
    if reason is not None:
        return _reject(diagnostics, reason)
    ordered = _codewords_for_decode(key, t + 1, transcript, None)
    if not ver(key.auth_key, key.layer_cnots(t + 1), key.layer_basis(t + 1), ordered):
        return _reject(diagnostics, REASON_DECODE)
    return q_fn(transcript.x)


@dataclass(frozen=True)
class OracleSuite:
    """In-process oracle handle: one callable serving every layer query
    plus the output callable. Calls are pure; the optional emission log
    is per-suite test instrumentation."""

    query_f: Callable[[int, Transcript, CodewordTuple], object]
    query_g: Callable[[Transcript], object]


def real_suite(
    key: OracleKey, diagnostics: bool = False, log: Optional[list] = None
) -> OracleSuite:
    return OracleSuite(
        query_f=lambda i, tr, w: oracle_f(key, i, tr, w, diagnostics, log),
        query_g=lambda tr: oracle_g(key, tr, diagnostics),
    )


def simulated_suite(
    key: OracleKey,
    q_fn: Callable[[BitVector], BitVector],
    diagnostics: bool = False,
) -> OracleSuite:
    return OracleSuite(
        query_f=lambda i, tr, w: oracle_f_sim(key, i, tr, w, diagnostics),
        query_g=lambda tr: oracle_g_sim(key, q_fn, tr, diagnostics),
    )


# --- obfuscation --------------------------------------------------------------


@dataclass
class ObfuscatedProgram:
    """Handle on one obfuscation: the oracle key (private to the suite
    in a real deployment), the one-shot token registers, and the program
    state. The encoded register is materialized on demand so that wide
    parameter choices stay constructible."""

    params: ObfParams
    key: OracleKey
    token: TokenKeypair
    logical_state: StateVector
    suite: OracleSuite

    @property
    def num_code_qubits(self) -> int:
        return self.key.program.num_wires * self.key.auth_key.code_length

    @property
    def num_token_qubits(self) -> int:
        return 2 * self.token.kappa_prime * self.token.num_bits

    def encoded_state(self) -> StateVector:
        """The authenticated register, exactly the encoding isometry
        applied to the program state. Raises past the simulator cap."""
        return enc(self.key.auth_key, self.logical_state)


def qobf(
    params: ObfParams,
    program: LMProgram,
    rng: np.random.Generator,
    logical_state: Optional[StateVector] = None,
    diagnostics: bool = False,
) -> ObfuscatedProgram:
    """Sample all key material for one obfuscation of the program and
    package the oracle suite. The default initial state is the program's
    own (inputs zeroed, magic wires loaded)."""
    violations = check_lm_invariants(program)
    if violations:
        raise ValueError("program fails structural checks: " + "; ".join(violations))
    if logical_state is None:
        logical_state = prepare_program_state(program)
    if logical_state.num_qubits != program.num_wires:
        raise ValueError("initial state width must match the program")
    auth_key = gen(params.security, program.num_wires, rng)
    keypair = tok_gen(params.token_dim, program.num_input_bits, rng)
    key = OracleKey(
        auth_key=auth_key,
        token_dim=params.token_dim,
        token_vk=keypair.vk,
        prf_key=rng.bytes(32),
        label_bits=params.labels_for(program.num_wires),
        program=program,
    )
    return ObfuscatedProgram(
        params=params,
        key=key,
        token=keypair,
        logical_state=logical_state,
        suite=real_suite(key, diagnostics),
    )


# --- evaluation ---------------------------------------------------------------


LayerRecord = tuple[dict[int, int], dict[int, BitVector], tuple[BitVector, ...]]


def _measured_wires(program: LMProgram, layer: int) -> list[int]:
    wires = set(program.v_sets[layer - 1])
    if layer <= program.t:
        wires.update(program.w_sets[layer - 1])
    return sorted(wires)


def _discard_blocks(
    state: StateVector,
    live: list[int],
    wires: Sequence[int],
    theta: Sequence[Optional[int]],
    raw: dict[int, BitVector],
    p: int,
) -> tuple[StateVector, list[int]]:
    """Slice fully collapsed code blocks out of the register, highest
    position first (X-read blocks rotate back onto the observed bits)."""
    pos_of = {w: q for q, w in enumerate(live)}
    for w in sorted(wires, key=lambda w: -pos_of[w]):
        base = pos_of[w] * p
        if theta[w - 1] == 1:
            for q in range(base + 1, base + p + 1):
                state = apply_gate(state, "H", (q,))
        for offset in range(p - 1, -1, -1):
            psi = state.amplitudes.reshape((2,) * state.num_qubits)
            psi = np.take(psi, raw[w].bits[offset], axis=base + offset).reshape(-1)
            psi = psi / np.linalg.norm(psi)
            state = StateVector(state.num_qubits - 1, psi)
    return state, [w for w in live if w not in set(wires)]


def _physical_layers(
    key: OracleKey, logical_state: StateVector, x: BitVector, rng: np.random.Generator
) -> Iterator[LayerRecord]:
    """Drive the encoded register through the program. Each layer reads
    the blocks of its newly collapsing wires down to their raw bits, but
    the layer's measurement pair only down to the single bit its
    function exposes, leaving the pair blocks coherent for the deferred
    reads of later layers. The pair vectors placed in the record are the
    in-class sample, which carries everything the layer oracle checks."""
    program = key.program
    auth_key = key.auth_key
    p = auth_key.code_length
    state = enc(auth_key, logical_state)
    live = list(range(1, program.num_wires + 1))
    stored: dict[int, int] = {}
    rs: dict[int, int] = {}
    for layer in range(1, program.t + 2):
        state = lin_eval(_layer_cnots(program, layer, live), state, p)
        final = layer == program.t + 1
        theta = program.thetas[layer - 1]
        measured = _measured_wires(program, layer)
        cnots = key.layer_cnots(layer)
        pos_of = {w: q for q, w in enumerate(live)}
        tags: list[Optional[str]] = [None] * state.num_qubits
        for w in measured:
            tag = "X" if theta[w - 1] == 1 else "Z"
            for q in range(pos_of[w] * p, pos_of[w] * p + p):
                tags[q] = tag
        v_wires = program.v_sets[layer - 1]
        if final:
            spec = MeasurementSpec(tuple(tags))
        else:
            fn = program.measurement_fns[layer - 1]
            col_of = {w: idx for idx, w in enumerate(measured)}
            v_cols = np.concatenate(
                [np.arange(col_of[w] * p, col_of[w] * p + p) for w in v_wires]
            )
            decode_basis = BasisString(
                tuple(
                    theta[w - 1] if w in col_of else None
                    for w in range(1, program.num_wires + 1)
                ),
                p,
            )

            def outcome_fn(bits: np.ndarray) -> list[object]:
                num = len(bits)
                decoded = dec_batch(auth_key, cnots, decode_basis, bits)
                good = ~(decoded == -1).any(axis=1)
                clean = (decoded == 1).astype(np.uint8)
                binds: dict[str, np.ndarray] = {}
                for name in fn.input_names:
                    if name[0] == "m":
                        w = int(name[1:])
                        if w in col_of:
                            binds[name] = clean[:, col_of[w]]
                        else:
                            binds[name] = np.full(num, stored[w], dtype=np.uint8)
                    elif name[0] == "x":
                        binds[name] = np.full(num, x[int(name[1:])], dtype=np.uint8)
                    else:
                        binds[name] = np.full(num, rs[int(name[1:])], dtype=np.uint8)
                r_col = eval_classical_fn_batch(fn, binds, num)["r"]
                labels: list[object] = []
                for row in range(num):
                    if good[row]:
                        labels.append(
                            (tuple(int(b) for b in bits[row, v_cols]), int(r_col[row]))
                        )
                    else:
                        labels.append(BOT)
                return labels

            spec = MeasurementSpec(tuple(tags), outcome_fn)
        result = measure(state, spec, rng)
        assert result.outcome is not BOT, "honest read fell outside the code"
        raw: dict[int, BitVector] = {}
        at = 0
        for w in measured:
            raw[w] = BitVector(result.raw_bits.bits[at : at + p])
            at += p
        xs, zs = pauli_update(cnots, auth_key.x_masks, auth_key.z_masks)
        v_bits: dict[int, int] = {}
        for w in v_wires:
            space, delta, shift = _wire_decoder(auth_key, theta[w - 1], xs[w - 1], zs[w - 1])
            bit = coset_decode(space, delta, shift, raw[w])
            assert bit is not None, "honest read fell outside the code"
            v_bits[w] = bit
        v_raw = {w: raw[w] for w in v_wires}
        if final:
            yield v_bits, v_raw, ()
            return
        yield v_bits, v_raw, tuple(raw[w] for w in program.w_sets[layer - 1])
        stored.update(v_bits)
        rs[layer] = result.outcome[1]
        state, live = _discard_blocks(result.post_state, live, v_wires, theta, raw, p)


def _logical_layers(
    key: OracleKey, logical_state: StateVector, x: BitVector, rng: np.random.Generator
) -> Iterator[LayerRecord]:
    """Same per-layer records from the unencoded register: follow the
    plain program semantics, then dress every exposed bit in a fresh
    random representative of its wire's coset. The pair bits come from
    the in-class sample, so the dressed pair decodes consistently with
    the bit the layer exposed."""
    program = key.program
    auth_key = key.auth_key
    state = logical_state
    live = list(range(1, program.num_wires + 1))
    stored: dict[int, int] = {}
    rs: dict[int, int] = {}
    for layer in range(1, program.t + 2):
        state = apply_cnot_layer(state, _layer_cnots(program, layer, live))
        spec, measured = _layer_spec(program, layer, live, x, stored, rs)
        result = measure(state, spec, rng)
        theta = program.thetas[layer - 1]
        col_of = {w: idx for idx, w in enumerate(measured)}
        xs, zs = pauli_update(key.layer_cnots(layer), auth_key.x_masks, auth_key.z_masks)

        def dress(w: int) -> BitVector:
            bit = result.raw_bits.bits[col_of[w]]
            return honest_codeword(auth_key, theta[w - 1], bit, xs[w - 1], zs[w - 1], rng)

        v_wires = program.v_sets[layer - 1]
        v_bits = {w: result.raw_bits.bits[col_of[w]] for w in v_wires}
        v_raw = {w: dress(w) for w in v_wires}
        if layer == program.t + 1:
            yield v_bits, v_raw, ()
            return
        yield v_bits, v_raw, tuple(dress(w) for w in program.w_sets[layer - 1])
        _store_v_bits(program, layer, result.outcome, stored)
        rs[layer] = result.outcome[-1]
        state, live = _discard_collapsed(result.post_state, live, v_wires, theta, stored)


def qeval(
    x: BitVector,
    program: ObfuscatedProgram,
    rng: np.random.Generator,
    mode: str = "auto",
    suite: Optional[OracleSuite] = None,
    trace: Optional[list] = None,
) -> object:
    """Honest evaluation on input x: sign, walk the layers, query the
    layer oracle on each batch of raw codewords, finish with the output
    oracle. Returns the output bits, or the rejection sentinel if some
    oracle refuses (an honest run never triggers one).

    mode picks the register the measurements run on: "physical" drives
    the full encoded state, "logical" samples wire records from the
    unencoded state and dresses them in coset representatives, "auto"
    takes the physical route whenever it fits the simulator cap.
    """
    key = program.key
    lm = key.program
    if len(x) != lm.num_input_bits:
        raise ValueError("input length mismatch")
    if mode == "auto":
        mode = "physical" if program.num_code_qubits <= QUBIT_CAP else "logical"
    if mode == "physical":
        layers = _physical_layers(key, program.logical_state, x, rng)
    elif mode == "logical":
        layers = _logical_layers(key, program.logical_state, x, rng)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if suite is None:
        suite = program.suite
    sigma = tok_sign(x, program.token, rng)
    transcript = Transcript(x=x, signature=sigma)
    for layer, (_, v_raw, w_part) in enumerate(layers, start=1):
        v_part = tuple(v_raw[w] for w in sorted(lm.v_sets[layer - 1]))
        transcript = transcript.with_codewords(v_part)
        if layer <= lm.t:
            reply = suite.query_f(layer, transcript, w_part)
            if is_bot(reply):
                return BOT
            _, label = reply
            transcript = transcript.with_label(label)
            if trace is not None:
                trace.append((layer, v_part, w_part, label))
        else:
            if trace is not None:
                trace.append((layer, v_part, None, None))
            return suite.query_g(transcript)
    raise AssertionError("unreachable")


def induced_map(program: LMProgram) -> Callable[[BitVector], BitVector]:
    """The classical map the program computes, by exact enumeration;
    raises if some input's output distribution is not a point mass."""
    cache: dict[tuple[int, ...], BitVector] = {}

    def q_fn(x: BitVector) -> BitVector:
        if x.bits not in cache:
            dist = lmeval_distribution(x, program)
            top, prob = max(dist.items(), key=lambda kv: kv[1])
            if prob < 1.0 - 1e-9:
                raise ValueError(f"program output on {x} is not deterministic")
            cache[x.bits] = BitVector(top)
        return cache[x.bits]

    return q_fn


# --- attack harness -----------------------------------------------------------


@dataclass
class AttackReport:
    kind: str
    trials: int
    rejected: int
    accepted: int
    reasons: dict[str, int]
    notes: tuple[str, ...] = ()

    def to_text(self) -> str:
        lines = [
            f"attack {self.kind}",
            f"trials {self.trials}",
            f"rejected {self.rejected}",
            f"accepted {self.accepted}",
        ]
        for reason in sorted(self.reasons):
            lines.append(f"reason {reason} {self.reasons[reason]}")
        lines.extend(f"note {n}" for n in self.notes)
        return "\n".join(lines)


def _tally(report: AttackReport, reply: object) -> None:
    if is_bot(reply):
        report.rejected += 1
        if isinstance(reply, tuple):
            report.reasons[reply[1]] = report.reasons.get(reply[1], 0) + 1
    else:
        report.accepted += 1


def _sample_outside(space: Subspace, rng: np.random.Generator) -> BitVector:
    """Uniform vector of the ambient space outside the given subspace."""
    while True:
        v = BitVector(tuple(int(b) for b in rng.integers(0, 2, size=space.ambient_dim)))
        if not space.contains(v):
            return v


def _honest_context(
    program: ObfuscatedProgram, x: BitVector, rng: np.random.Generator
) -> tuple[Transcript, list[LayerRecord]]:
    """Sign and walk the logical route once, collecting the per-layer
    records and the labels of an honest evaluation."""
    key = program.key
    lm = key.program
    sigma = tok_sign(x, program.token, rng)
    transcript = Transcript(x=x, signature=sigma)
    records: list[LayerRecord] = []
    layers = _logical_layers(key, program.logical_state, x, rng)
    for layer, (v_bits, v_raw, w_part) in enumerate(layers, start=1):
        records.append((v_bits, v_raw, w_part))
        v_part = tuple(v_raw[w] for w in sorted(lm.v_sets[layer - 1]))
        transcript = transcript.with_codewords(v_part)
        if layer <= lm.t:
            reply = oracle_f(key, layer, transcript, w_part)
            if is_bot(reply):
                raise AssertionError("honest context was rejected")
            transcript = transcript.with_label(reply[1])
    return transcript, records


def attack_harness(
    kind: str,
    program: ObfuscatedProgram,
    rng: np.random.Generator,
    trials: Optional[int] = None,
) -> AttackReport:
    """Scripted adversaries against one obfuscation. Each returns a
    tally of oracle responses; the reasons come from querying in
    diagnostic mode (the adversarial surface shows a bare sentinel).

    pauli-tamper  flip an out-of-code error onto one honest codeword
    label-forge   guess a chained label uniformly at random
    replay        reuse a genuine label under fresh layer-1 codewords
    mixed-input   try to obtain signatures on two different inputs
    """
    key = program.key
    lm = key.program
    x = BitVector.zeros(lm.num_input_bits)
    if kind == "pauli-tamper":
        trials = 1000 if trials is None else trials
        report = AttackReport(kind, trials, 0, 0, {})
        transcript, records = _honest_context(program, x, rng)
        accept_z = key.auth_key.accept_space_z
        theta1 = lm.thetas[0]
        z_wires = [w for w in _measured_wires(lm, 1) if theta1[w - 1] == 0]
        v1_wires = sorted(lm.v_sets[0])
        for _ in range(trials):
            target = z_wires[int(rng.integers(len(z_wires)))]
            err = _sample_outside(accept_z, rng)
            v1 = list(transcript.v_layers[0])
            if lm.t == 0:
                v1[v1_wires.index(target)] ^= err
                tampered = replace(transcript, v_layers=(tuple(v1),))
                reply = oracle_g(key, tampered, diagnostics=True)
            else:
                w1 = list(records[0][2])
                if target in v1_wires:
                    v1[v1_wires.index(target)] ^= err
                else:
                    w1[lm.w_sets[0].index(target)] ^= err
                tampered = replace(transcript, v_layers=(tuple(v1),), labels=())
                reply = oracle_f(key, 1, tampered, tuple(w1), diagnostics=True)
            _tally(report, reply)
        return report
    if kind == "label-forge":
        trials = 10_000 if trials is None else trials
        if lm.t < 1:
            raise ValueError("label forgery needs at least one measurement layer")
        report = AttackReport(kind, trials, 0, 0, {})
        transcript, records = _honest_context(program, x, rng)
        kappa = key.label_bits
        for _ in range(trials):
            guess = BitVector(tuple(int(b) for b in rng.integers(0, 2, size=kappa)))
            if lm.t >= 2:
                forged = replace(transcript, v_layers=transcript.v_layers[:2], labels=(guess,))
                reply = oracle_f(key, 2, forged, records[1][2], diagnostics=True)
            else:
                forged = replace(transcript, labels=(guess,))
                reply = oracle_g(key, forged, diagnostics=True)
            _tally(report, reply)
        return report
    if kind == "replay":
        trials = 100 if trials is None else trials
        if lm.t < 1:
            raise ValueError("label replay needs at least one measurement layer")
        report = AttackReport(kind, trials, 0, 0, {})
        transcript, records = _honest_context(program, x, rng)
        bits1 = records[0][0]
        xs, zs = pauli_update(key.layer_cnots(1), key.auth_key.x_masks, key.auth_key.z_masks)
        theta1 = lm.thetas[0]
        v1_wires = sorted(lm.v_sets[0])
        for _ in range(trials):
            fresh = tuple(
                honest_codeword(key.auth_key, theta1[w - 1], bits1[w], xs[w - 1], zs[w - 1], rng)
                for w in v1_wires
            )
            if fresh == transcript.v_layers[0]:
                report.trials -= 1
                continue
            if lm.t >= 2:
                swapped = replace(
                    transcript,
                    v_layers=(fresh,) + transcript.v_layers[1:2],
                    labels=transcript.labels[:1],
                )
                reply = oracle_f(key, 2, swapped, records[1][2], diagnostics=True)
            else:
                swapped = replace(transcript, v_layers=(fresh,) + transcript.v_layers[1:])
                reply = oracle_g(key, swapped, diagnostics=True)
            _tally(report, reply)
        return report
    if kind == "mixed-input":
        trials = 100 if trials is None else trials
        report = AttackReport(kind, trials, 0, 0, {})
        m = lm.num_input_bits
        x_other = BitVector((1,) + (0,) * (m - 1))
        transcript, records = _honest_context(program, x, rng)
        for _ in range(trials):
            try:
                tok_sign(x_other, program.token, rng)
            except RuntimeError:
                report.rejected += 1
                report.reasons["sign-consumed"] = report.reasons.get("sign-consumed", 0) + 1
            else:
                report.accepted += 1
        if lm.t >= 1:
            swapped = replace(transcript, x=x_other, v_layers=transcript.v_layers[:1], labels=())
            reply = oracle_f(key, 1, swapped, records[0][2], diagnostics=True)
        else:
            swapped = replace(transcript, x=x_other)
            reply = oracle_g(key, swapped, diagnostics=True)
        verdict = "rejected" if is_bot(reply) else "accepted"
        report.notes = (f"signature replay under flipped input: {verdict}",)
        return report
    raise ValueError(f"unknown attack kind {kind!r}")


# --- serialization and the wire protocol --------------------------------------


_SECTION_AUTH = "[auth-key]"
_SECTION_VK = "[token-vk]"
_SECTION_PROGRAM = "[program]"


def oracle_key_to_text(key: OracleKey) -> str:
    parts = [
        f"label-bits {key.label_bits}",
        f"prf-key {key.prf_key.hex()}",
        _SECTION_AUTH,
        key_to_text(key.auth_key),
        _SECTION_VK,
        vk_to_text(key.token_dim, key.token_vk),
        _SECTION_PROGRAM,
        program_to_text(key.program),
    ]
    return "\n".join(parts) + "\n"


def oracle_key_from_text(text: str) -> OracleKey:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("label-bits "):
        raise ValueError("missing label-bits header")
    label_bits = int(lines[0].split()[1])
    if not lines[1].startswith("prf-key "):
        raise ValueError("missing prf-key header")
    prf_key = bytes.fromhex(lines[1].split()[1])
    sections: dict[str, list[str]] = {}
    current: Optional[str] = None
    for ln in lines[2:]:
        if ln in (_SECTION_AUTH, _SECTION_VK, _SECTION_PROGRAM):
            current = ln
            sections[current] = []
        elif current is not None:
            sections[current].append(ln)
    auth_key = key_from_text("\n".join(sections[_SECTION_AUTH]))
    token_dim, vk = vk_from_text("\n".join(sections[_SECTION_VK]))
    program = program_from_text("\n".join(sections[_SECTION_PROGRAM]))
    return OracleKey(
        auth_key=auth_key,
        token_dim=token_dim,
        token_vk=vk,
        prf_key=prf_key,
        label_bits=label_bits,
        program=program,
    )


def _request_payload(transcript: Transcript) -> list[bytes]:
    parts = [frame_bits(transcript.x.bits), frame_group(transcript.signature)]
    for idx, layer in enumerate(transcript.v_layers):
        parts.append(frame_group(layer))
        if idx < len(transcript.labels):
            parts.append(frame_bits(transcript.labels[idx].bits))
    return parts


def encode_f_request(i: int, transcript: Transcript, w_pair: CodewordTuple) -> str:
    parts = _request_payload(transcript) + [frame_group(w_pair)]
    return f"F {i} {b''.join(parts).hex()}"


def encode_g_request(transcript: Transcript) -> str:
    return f"G {b''.join(_request_payload(transcript)).hex()}"


def _split_group(vec: BitVector, count: int, width: int) -> Optional[tuple[BitVector, ...]]:
    if len(vec) != count * width:
        return None
    return tuple(BitVector(vec.bits[k * width : (k + 1) * width]) for k in range(count))


def _parse_request_fields(
    key: OracleKey, fields: list[BitVector], upto: int, with_w: bool
) -> Optional[tuple[Transcript, Optional[CodewordTuple]]]:
    program = key.program
    p = key.auth_key.code_length
    want = 2 + 2 * upto - 1 + (1 if with_w else 0)
    if len(fields) != want:
        return None
    sigma = _split_group(fields[1], program.num_input_bits, 2 * key.token_dim)
    if sigma is None:
        return None
    v_layers = []
    labels = []
    at = 2
    for idx in range(upto):
        layer = _split_group(fields[at], len(program.v_sets[idx]), p)
        if layer is None:
            return None
        v_layers.append(layer)
        at += 1
        if idx < upto - 1:
            labels.append(fields[at])
            at += 1
    w_pair: Optional[CodewordTuple] = None
    if with_w:
        w_pair = _split_group(fields[at], len(program.w_sets[upto - 1]), p)
        if w_pair is None:
            return None
    try:
        transcript = Transcript(fields[0], sigma, tuple(v_layers), tuple(labels))
    except ValueError:
        return None
    return transcript, w_pair


def handle_request_line(key: OracleKey, line: str) -> str:
    """One request line of the newline protocol -> one response line."""
    parts = line.strip().split()
    try:
        if len(parts) == 3 and parts[0] == "F":
            i = int(parts[1])
            if not 1 <= i <= key.program.t:
                return "BOT"
            fields = read_frames(bytes.fromhex(parts[2]))
            parsed = _parse_request_fields(key, fields, i, with_w=True)
            if parsed is None:
                return "BOT"
            transcript, w_pair = parsed
            reply = oracle_f(key, i, transcript, w_pair)
            if is_bot(reply):
                return "BOT"
            echo, label = reply
            return f"OK {frame_group(echo).hex()} {frame_bits(label.bits).hex()}"
        if len(parts) == 2 and parts[0] == "G":
            fields = read_frames(bytes.fromhex(parts[1]))
            parsed = _parse_request_fields(key, fields, key.program.t + 1, with_w=False)
            if parsed is None:
                return "BOT"
            transcript, _ = parsed
            reply = oracle_g(key, transcript)
            if is_bot(reply):
                return "BOT"
            return f"OK {frame_bits(reply.bits).hex()}"
    except (ValueError, OverflowError):
        return "BOT"
    return "BOT"


def remote_suite(key_text: str, send: Callable[[str], str]) -> OracleSuite:
    """Oracle suite that speaks the wire protocol through a transport
    callable (request line in, response line out). The key text is used
    only for the response parsing widths."""
    key = oracle_key_from_text(key_text)
    p = key.auth_key.code_length

    def query_f(i: int, transcript: Transcript, w_pair: CodewordTuple):
        answer = send(encode_f_request(i, transcript, w_pair)).strip()
        if answer == "BOT":
            return BOT
        tag, echo_hex, label_hex = answer.split()
        if tag != "OK":
            raise ValueError(f"malformed oracle response {answer!r}")
        echo_flat = read_frames(bytes.fromhex(echo_hex))[0]
        echo = _split_group(echo_flat, len(key.program.v_sets[i - 1]), p)
        label = read_frames(bytes.fromhex(label_hex))[0]
        return echo, label

    def query_g(transcript: Transcript):
        answer = send(encode_g_request(transcript)).strip()
        if answer == "BOT":
            return BOT
        tag, y_hex = answer.split()
        if tag != "OK":
            raise ValueError(f"malformed oracle response {answer!r}")
        return read_frames(bytes.fromhex(y_hex))[0]

    return OracleSuite(query_f=query_f, query_g=query_g)
