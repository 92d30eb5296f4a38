"""Memory-experiment circuit, circuit-level Pauli noise and Pauli-frame sampling.

Qubits are numbered globally: data D1..D9 -> 0..8, ancillas Z1..Z4 -> 9..12.
Measurement records are ordered ancilla-major within a round:
record (r, a) = 4 * (r - 1) + a for r = 1..R, then the nine final data
measurements at 4 * R + k.

Frames are simulated for many shots at once; each frame bit array has shape
(n_qubits, n_shots). A measurement records the X component of the frame on
the measured qubit and then clears its Z component (Z acts trivially on the
collapsed state).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterator, Optional

import numpy as np

from .code_model import CodeLayout, _as_bits, bits_to_str

CHUNK_SIZE = 4096

# Pauli codes: 0 = I, 1 = X, 2 = Y, 3 = Z
_HAS_X = np.array([0, 1, 1, 0], dtype=np.uint8)
_HAS_Z = np.array([0, 0, 1, 1], dtype=np.uint8)


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseParams:
    """Circuit-level noise. Probabilities are dimensionless, T1/T2 in us, durations in ns.

    Defaults are the lower-bound (noise-floor) parameters; the two unlabelled
    "30" rows of that table are read as T1 = T2 = 30 us.
    """

    p_1q: float = 0.5e-3
    p_2q: float = 5e-3
    p_reset: float = 0.0
    p_meas_qubit: float = 1e-3
    p_meas_class: float = 1e-3
    p_leak_meas: float = 0.0
    T1: float = 30.0
    T2: float = 30.0
    t_1q: float = 20.0
    t_2q: float = 60.0
    t_meas: float = 420.0
    t_round: float = 700.0

    def __post_init__(self):
        for name in ("p_1q", "p_2q", "p_reset", "p_meas_qubit", "p_meas_class", "p_leak_meas"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")
        for name in ("t_1q", "t_2q", "t_meas", "t_round"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not math.isinf(self.T1) or not math.isinf(self.T2):
            if self.T1 <= 0 or self.T2 <= 0:
                raise ValueError("T1 and T2 must be positive")
            if self.T2 > 2 * self.T1:
                raise ValueError(f"T2={self.T2} exceeds 2*T1={2 * self.T1}")

    @classmethod
    def noiseless(cls) -> "NoiseParams":
        return cls(p_1q=0, p_2q=0, p_meas_qubit=0, p_meas_class=0, T1=math.inf, T2=math.inf)

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseParams":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown noise parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in doc.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **changes) -> "NoiseParams":
        return replace(self, **changes)


def idle_twirl_probs(t: float, T1: float, T2: float) -> tuple[float, float, float]:
    """Pauli-twirled amplitude damping plus dephasing for an idle of length ``t``.

    ``t``, ``T1`` and ``T2`` must share units.
    """
    if t < 0:
        raise ValueError("idle time must be non-negative")
    if T1 <= 0 or T2 <= 0:
        raise ValueError("T1 and T2 must be positive")
    if T2 > 2 * T1:
        raise ValueError(f"T2={T2} > 2*T1={2 * T1} gives a negative Z probability")
    damp = -math.expm1(-t / T1)
    deph = -math.expm1(-t / T2)
    px = py = damp / 4
    pz = max(deph / 2 - damp / 4, 0.0)
    return px, py, pz


@dataclass(frozen=True)
class Op:
    """One circuit instruction.

    name is one of: H, CZ, X, M, IDLE (skeleton) or DEP1, DEP2, PAULI, XERR,
    FLIP (noise locations). ``record`` is the measurement index for M/FLIP.
    """

    name: str
    targets: tuple[int, ...] = ()
    duration: float = 0.0
    probs: tuple[float, ...] = ()
    record: int = -1
    round: int = 0


NOISE_OPS = ("DEP1", "DEP2", "PAULI", "XERR", "FLIP")


@dataclass(frozen=True)
class NoisyCircuit:
    layout: CodeLayout
    rounds: int
    ops: tuple[Op, ...]
    params: Optional[NoiseParams] = None
    classification_flips: bool = False
    record_qubits: tuple[int, ...] = field(default=(), repr=False)

    @property
    def n_qubits(self) -> int:
        return self.layout.n_data + self.layout.n_ancilla

    @property
    def n_records(self) -> int:
        return self.layout.n_ancilla * self.rounds + self.layout.n_data

    @property
    def noise_attached(self) -> bool:
        return self.params is not None

    def record_index(self, round_: int, ancilla: int | str) -> int:
        a = self.layout.ancilla_index(ancilla) if isinstance(ancilla, str) else ancilla
        if not 1 <= round_ <= self.rounds:
            raise IndexError(f"round {round_} outside 1..{self.rounds}")
        return self.layout.n_ancilla * (round_ - 1) + a

    def data_record_index(self, k: int) -> int:
        return self.layout.n_ancilla * self.rounds + k

    @property
    def ancilla_records(self) -> slice:
        return slice(0, self.layout.n_ancilla * self.rounds)

    @property
    def data_records(self) -> slice:
        return slice(self.layout.n_ancilla * self.rounds, self.n_records)

    def ancilla_qubit(self, a: int) -> int:
        return self.layout.n_data + a

    def count(self, name: str) -> int:
        return sum(op.name == name for op in self.ops)

    def noise_locations(self) -> list[int]:
        return [i for i, op in enumerate(self.ops) if op.name in NOISE_OPS]


def build_memory_circuit(layout: CodeLayout, rounds: int, params: NoiseParams | None = None) -> NoisyCircuit:
    """Noise-free skeleton of the R-round memory experiment.

    Each round: H on ancillas, four CZ layers, H on ancillas, then ancilla
    measurement concurrent with a transversal X on the data. Ancillas are never
    reset. All data qubits are measured after the last round. Durations come
    from ``params`` (defaults when omitted).
    """
    if rounds < 1:
        raise CircuitError("rounds must be >= 1")
    t = params or NoiseParams()
    n_data, n_anc = layout.n_data, layout.n_ancilla
    anc = [n_data + a for a in range(n_anc)]
    data = list(range(n_data))
    busy = t.t_1q * 2 + t.t_2q * len(layout.cz_schedule) + t.t_meas
    if busy > t.t_round + 1e-9:
        raise CircuitError(f"operations take {busy} ns, more than t_round={t.t_round}")
    if t.t_meas < t.t_1q:
        raise CircuitError("transversal X does not fit inside the measurement window")

    ops: list[Op] = []
    records = [0] * (n_anc * rounds + n_data)

    def single_layer(r):
        for q in anc:
            ops.append(Op("H", (q,), t.t_1q, round=r))
        for q in data:
            ops.append(Op("IDLE", (q,), t.t_1q, round=r))

    for r in range(1, rounds + 1):
        single_layer(r)
        for layer in layout.cz_schedule:
            used = set()
            for anc_name, d in layer:
                a = n_data + layout.ancilla_index(anc_name)
                ops.append(Op("CZ", (a, d), t.t_2q, round=r))
                used.update((a, d))
            for q in data + anc:
                if q not in used:
                    ops.append(Op("IDLE", (q,), t.t_2q, round=r))
        single_layer(r)
        half = (t.t_meas - t.t_1q) / 2
        for a, q in enumerate(anc):
            rec = n_anc * (r - 1) + a
            records[rec] = q
            ops.append(Op("M", (q,), t.t_meas, record=rec, round=r))
        for q in data:
            ops.append(Op("IDLE", (q,), half, round=r))
        for q in data:
            ops.append(Op("X", (q,), t.t_1q, round=r))
        for q in data:
            ops.append(Op("IDLE", (q,), half, round=r))
        pad = t.t_round - busy
        if pad > 1e-9:
            for q in data + anc:
                ops.append(Op("IDLE", (q,), pad, round=r))
    for k, q in enumerate(data):
        rec = n_anc * rounds + k
        records[rec] = q
        ops.append(Op("M", (q,), t.t_meas, record=rec, round=rounds + 1))
    return NoisyCircuit(layout, rounds, tuple(ops), None, False, tuple(records))


def attach_noise(circuit: NoisyCircuit, params: NoiseParams, classification_flips: bool = True) -> NoisyCircuit:
    """Insert noise locations after gates, before measurements and on idles.

    ``classification_flips`` adds an outcome-flip location after every
    measurement (hard-only mode and noise-floor graphs). Leave it off when
    outcomes are produced from simulated IQ points.
    """
    T1 = params.T1 * 1000.0
    T2 = params.T2 * 1000.0
    out: list[Op] = []
    for op in circuit.ops:
        if op.name in NOISE_OPS:
            raise CircuitError("noise already attached")
        if op.name == "IDLE":
            if math.isinf(T1) and math.isinf(T2):
                continue
            probs = idle_twirl_probs(op.duration, T1, T2)
            out.append(Op("PAULI", op.targets, op.duration, probs, round=op.round))
            continue
        if op.name == "M":
            out.append(Op("XERR", op.targets, 0.0, (params.p_meas_qubit,), round=op.round))
            out.append(op)
            if classification_flips:
                out.append(Op("FLIP", op.targets, 0.0, (params.p_meas_class,), record=op.record, round=op.round))
            continue
        out.append(op)
        if op.name in ("H", "X"):
            out.append(Op("DEP1", op.targets, 0.0, (params.p_1q,), round=op.round))
        elif op.name == "CZ":
            out.append(Op("DEP2", op.targets, 0.0, (params.p_2q,), round=op.round))
    return NoisyCircuit(circuit.layout, circuit.rounds, tuple(out), params, classification_flips, circuit.record_qubits)


def reference_outcomes(circuit: NoisyCircuit, initial_state) -> np.ndarray:
    """Noiseless measurement record for a computational-basis data state.

    Ancillas only ever sit in Z eigenstates or, between their two H gates, in
    Z^k|+>; CZs with data in Z eigenstates just accumulate k. That makes the
    noiseless circuit classically simulable.
    """
    n_data = circuit.layout.n_data
    bits = np.zeros(circuit.n_qubits, dtype=np.uint8)
    bits[:n_data] = _as_bits(initial_state, n_data)
    x_basis = np.zeros(circuit.n_qubits, dtype=bool)
    rec = np.zeros(circuit.n_records, dtype=np.uint8)
    for op in circuit.ops:
        if op.name == "H":
            (q,) = op.targets
            x_basis[q] = not x_basis[q]
        elif op.name == "CZ":
            a, d = op.targets
            if x_basis[a] == x_basis[d]:
                raise CircuitError("reference simulation needs exactly one X-basis qubit per CZ")
            if x_basis[a]:
                bits[a] ^= bits[d]
            else:
                bits[d] ^= bits[a]
        elif op.name == "X":
            (q,) = op.targets
            bits[q] ^= 1
        elif op.name == "M":
            (q,) = op.targets
            if x_basis[q]:
                raise CircuitError("measurement of an X-basis qubit is not deterministic")
            rec[op.record] = bits[q]
    return rec


# --------------------------------------------------------------------------- frames


NoiseSource = Callable[[int, Op, int], Optional[np.ndarray]]


def _run_frames(circuit: NoisyCircuit, n: int, source: NoiseSource):
    """Propagate X/Z frames for ``n`` shots.

    ``source(op_index, op, n)`` returns, for a noise op, an array of Pauli
    codes with shape (len(targets), n) (or a flip mask of shape (n,) for FLIP),
    or None for no error. Returns (measurement flips, classification flips).
    """
    X = np.zeros((circuit.n_qubits, n), dtype=np.uint8)
    Z = np.zeros((circuit.n_qubits, n), dtype=np.uint8)
    rec = np.zeros((circuit.n_records, n), dtype=np.uint8)
    cls = np.zeros((circuit.n_records, n), dtype=np.uint8)
    for i, op in enumerate(circuit.ops):
        name = op.name
        if name == "H":
            (q,) = op.targets
            X[q], Z[q] = Z[q].copy(), X[q].copy()
        elif name == "CZ":
            a, b = op.targets
            Z[b] ^= X[a]
            Z[a] ^= X[b]
        elif name == "M":
            (q,) = op.targets
            rec[op.record] = X[q]
            Z[q] = 0
        elif name in ("X", "IDLE"):
            pass
        elif name == "FLIP":
            flips = source(i, op, n)
            if flips is not None:
                cls[op.record] ^= flips
        else:
            paulis = source(i, op, n)
            if paulis is None:
                continue
            for j, q in enumerate(op.targets):
                X[q] ^= _HAS_X[paulis[j]]
                Z[q] ^= _HAS_Z[paulis[j]]
    return rec, cls


def _sampling_source(rng: np.random.Generator) -> NoiseSource:
    def source(i, op, n):
        if op.name == "FLIP":
            (p,) = op.probs
            return (rng.random(n) < p).astype(np.uint8) if p > 0 else None
        u = rng.random(n)
        if op.name == "DEP1":
            (p,) = op.probs
            if p <= 0:
                return None
            code = np.where(u < p, np.minimum((u / (p / 3)).astype(np.int64), 2) + 1, 0)
            return code[None, :]
        if op.name == "DEP2":
            (p,) = op.probs
            if p <= 0:
                return None
            k = np.where(u < p, np.minimum((u / (p / 15)).astype(np.int64), 14) + 1, 0)
            return np.stack([k // 4, k % 4])
        if op.name == "PAULI":
            px, py, pz = op.probs
            code = np.zeros(n, dtype=np.int64)
            code[u < px + py + pz] = 3
            code[u < px + py] = 2
            code[u < px] = 1
            return code[None, :]
        if op.name == "XERR":
            (p,) = op.probs
            return (u < p).astype(np.int64)[None, :]
        raise CircuitError(f"unknown noise op {op.name}")

    return source


@dataclass(frozen=True)
class ElementaryError:
    """A single Pauli (or outcome flip) at one noise location."""

    op_index: int
    paulis: tuple[int, ...]
    probability: float
    flip: bool = False


def elementary_errors(circuit: NoisyCircuit) -> list[ElementaryError]:
    """Every non-identity Pauli at every noise location, with its probability."""
    if not circuit.noise_attached:
        raise CircuitError("noise not attached")
    errors = []
    for i, op in enumerate(circuit.ops):
        if op.name == "DEP1":
            (p,) = op.probs
            if p > 0:
                errors += [ElementaryError(i, (c,), p / 3) for c in (1, 2, 3)]
        elif op.name == "DEP2":
            (p,) = op.probs
            if p > 0:
                errors += [ElementaryError(i, (k // 4, k % 4), p / 15) for k in range(1, 16)]
        elif op.name == "PAULI":
            errors += [ElementaryError(i, (c,), p) for c, p in zip((1, 2, 3), op.probs) if p > 0]
        elif op.name == "XERR":
            (p,) = op.probs
            if p > 0:
                errors.append(ElementaryError(i, (1,), p))
        elif op.name == "FLIP":
            (p,) = op.probs
            if p > 0:
                errors.append(ElementaryError(i, (), p, flip=True))
    return errors


def propagate_errors(circuit: NoisyCircuit, errors: list[ElementaryError]) -> tuple[np.ndarray, np.ndarray]:
    """Measurement flips caused by each error, one error per column.

    Several errors may share a column only through :func:`inject_errors`.
    Returns (frame flips, classification flips), each (n_records, n_errors).
    """
    return inject_errors(circuit, [[e] for e in errors])


def inject_errors(circuit: NoisyCircuit, error_sets: list[list[ElementaryError]]):
    n = len(error_sets)
    by_op: dict[int, list[tuple[int, ElementaryError]]] = {}
    for col, errs in enumerate(error_sets):
        for e in errs:
            by_op.setdefault(e.op_index, []).append((col, e))

    def source(i, op, n_):
        hits = by_op.get(i)
        if not hits:
            return None
        if op.name == "FLIP":
            out = np.zeros(n_, dtype=np.uint8)
            for col, _ in hits:
                out[col] ^= 1
            return out
        out = np.zeros((len(op.targets), n_), dtype=np.int64)
        for col, e in hits:
            for j, c in enumerate(e.paulis):
                # compose Paulis on the same location (codes multiply up to phase)
                out[j, col] = _compose(out[j, col], c)
        return out

    return _run_frames(circuit, n, source)


def _compose(a: int, b: int) -> int:
    x = _HAS_X[a] ^ _HAS_X[b]
    z = _HAS_Z[a] ^ _HAS_Z[b]
    return int({(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}[(int(x), int(z))])


# --------------------------------------------------------------------------- shots


@dataclass
class ShotBatch:
    """Shots for one (initial state, rounds) pair.

    Bit arrays have shape (n_shots, n_records) except ``leak_flags``
    (n_shots, n_ancilla_records) and ``truth_flip`` (n_shots,). ``iq`` is
    (n_shots, n_records, 2) once the readout model has been applied.
    """

    state: str
    rounds: int
    shot_ids: np.ndarray
    true_bits: np.ndarray
    hard_bits: np.ndarray
    leak_flags: np.ndarray
    truth_flip: np.ndarray
    iq: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.shot_ids)

    def __iter__(self) -> Iterator["ShotRecord"]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> "ShotRecord":
        return ShotRecord(
            state=self.state,
            shot_id=int(self.shot_ids[i]),
            true_bits=self.true_bits[i],
            hard_bits=self.hard_bits[i],
            leak_flags=self.leak_flags[i],
            iq_points=None if self.iq is None else self.iq[i],
            truth_logical_flip=int(self.truth_flip[i]),
        )

    def subset(self, mask) -> "ShotBatch":
        return ShotBatch(
            self.state,
            self.rounds,
            self.shot_ids[mask],
            self.true_bits[mask],
            self.hard_bits[mask],
            self.leak_flags[mask],
            self.truth_flip[mask],
            None if self.iq is None else self.iq[mask],
        )

    @classmethod
    def concat(cls, batches: list["ShotBatch"]) -> "ShotBatch":
        first = batches[0]
        if any(b.state != first.state or b.rounds != first.rounds for b in batches):
            raise ValueError("can only concatenate batches of one (state, rounds)")
        iq = None if first.iq is None else np.concatenate([b.iq for b in batches])
        return cls(
            first.state,
            first.rounds,
            np.concatenate([b.shot_ids for b in batches]),
            np.concatenate([b.true_bits for b in batches]),
            np.concatenate([b.hard_bits for b in batches]),
            np.concatenate([b.leak_flags for b in batches]),
            np.concatenate([b.truth_flip for b in batches]),
            iq,
        )


@dataclass
class ShotRecord:
    state: str
    shot_id: int
    true_bits: np.ndarray
    hard_bits: np.ndarray
    leak_flags: np.ndarray
    iq_points: Optional[np.ndarray]
    truth_logical_flip: int


def chunk_seed(seed: int, state: str, rounds: int, chunk: int) -> np.random.SeedSequence:
    """RNG stream for one fixed-size chunk of shots.

    Streams depend only on (seed, state, rounds, chunk), so results do not
    change with the number of workers.
    """
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(state, 2), int(rounds), int(chunk)))


def sample_chunk(circuit: NoisyCircuit, initial_state, seed: int, chunk: int, n: int) -> ShotBatch:
    if not circuit.noise_attached:
        raise CircuitError("noise not attached")
    state = bits_to_str(_as_bits(initial_state, circuit.layout.n_data))
    frame_seq, leak_seq = chunk_seed(seed, state, circuit.rounds, chunk).spawn(2)
    ref = reference_outcomes(circuit, state)
    flips, cls = _run_frames(circuit, n, _sampling_source(np.random.default_rng(frame_seq)))
    true_bits = (flips.T ^ ref[None, :]).astype(np.uint8)
    hard_bits = true_bits ^ cls.T
    n_anc = circuit.layout.n_ancilla * circuit.rounds
    p_leak = circuit.params.p_leak_meas
    leak = (np.random.default_rng(leak_seq).random((n, n_anc)) < p_leak).astype(np.uint8)
    logical = np.array(sorted(circuit.layout.logical_z_support)) + n_anc
    truth = (flips[logical].sum(axis=0) % 2).astype(np.uint8)
    ids = np.arange(chunk * CHUNK_SIZE, chunk * CHUNK_SIZE + n, dtype=np.int64)
    return ShotBatch(state, circuit.rounds, ids, true_bits, hard_bits, leak, truth)


def sample_shots(circuit: NoisyCircuit, initial_state, n: int, seed: int) -> ShotBatch:
    """Sample ``n`` shots (ids 0..n-1). Deterministic given ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    chunks = []
    for c in range(math.ceil(n / CHUNK_SIZE)):
        size = min(CHUNK_SIZE, n - c * CHUNK_SIZE)
        chunks.append(sample_chunk(circuit, initial_state, seed, c, size))
    return ShotBatch.concat(chunks)
