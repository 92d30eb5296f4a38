"""Surface-13 bit-flip code: a 3x3 data-qubit array protected by four Z checks.

Data qubits are indexed row-major::

    D1 D2 D3
    D4 D5 D6
    D7 D8 D9

Z1 = {D3, D6} and Z4 = {D4, D7} are the weight-2 boundary checks,
Z2 = {D1, D2, D4, D5} and Z3 = {D5, D6, D8, D9} the weight-4 bulk checks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

DATA_QUBITS = tuple(f"D{i}" for i in range(1, 10))
ANCILLA_QUBITS = ("Z1", "Z2", "Z3", "Z4")

# 0-based data indices per ancilla
DEFAULT_SUPPORTS = {
    "Z1": frozenset({2, 5}),
    "Z2": frozenset({0, 1, 3, 4}),
    "Z3": frozenset({4, 5, 7, 8}),
    "Z4": frozenset({3, 6}),
}

# N-shaped order (NW, SW, NE, SE) on each plaquette; boundary checks use the
# steps where their corners exist.
DEFAULT_CZ_SCHEDULE = (
    (("Z2", 0), ("Z3", 4), ("Z1", 2)),
    (("Z2", 3), ("Z3", 7), ("Z1", 5)),
    (("Z2", 1), ("Z3", 5), ("Z4", 3)),
    (("Z2", 4), ("Z3", 8), ("Z4", 6)),
)


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class CodeLayout:
    data_qubits: tuple[str, ...]
    ancilla_qubits: tuple[str, ...]
    stabilizer_supports: dict[str, frozenset[int]]
    logical_z_support: frozenset[int]
    cz_schedule: tuple[tuple[tuple[str, int], ...], ...]
    _support_matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mat = np.zeros((len(self.ancilla_qubits), len(self.data_qubits)), dtype=np.uint8)
        for a, name in enumerate(self.ancilla_qubits):
            for d in self.stabilizer_supports[name]:
                mat[a, d] = 1
        object.__setattr__(self, "_support_matrix", mat)

    @property
    def n_data(self) -> int:
        return len(self.data_qubits)

    @property
    def n_ancilla(self) -> int:
        return len(self.ancilla_qubits)

    @property
    def support_matrix(self) -> np.ndarray:
        """(n_ancilla, n_data) 0/1 incidence matrix of the checks."""
        return self._support_matrix

    def ancilla_index(self, name: str) -> int:
        return self.ancilla_qubits.index(name)

    def validate(self) -> None:
        n = self.n_data
        counts = np.zeros(n, dtype=int)
        for name in self.ancilla_qubits:
            support = self.stabilizer_supports[name]
            if not support or any(not 0 <= d < n for d in support):
                raise LayoutError(f"bad support for {name}: {sorted(support)}")
            for d in support:
                counts[d] += 1
            if len(support) % 2:
                raise LayoutError(f"{name} has odd weight; transversal X would flip it")
        if counts.min() < 1 or counts.max() > 2:
            raise LayoutError("every data qubit must sit in one or two checks")
        if len(self.logical_z_support) % 2 == 0:
            raise LayoutError("logical Z support must have odd weight")

        pairs = set()
        for layer in self.cz_schedule:
            used = set()
            for anc, d in layer:
                if anc in used or d in used:
                    raise LayoutError(f"qubit reused within CZ layer {layer}")
                used.update((anc, d))
                if (anc, d) in pairs:
                    raise LayoutError(f"interaction {(anc, d)} scheduled twice")
                pairs.add((anc, d))
        expected = {(a, d) for a in self.ancilla_qubits for d in self.stabilizer_supports[a]}
        if pairs != expected:
            raise LayoutError("CZ schedule does not cover the stabilizer supports exactly")

    def to_dict(self) -> dict:
        return {
            "data_qubits": list(self.data_qubits),
            "ancilla_qubits": list(self.ancilla_qubits),
            "stabilizer_supports": {
                a: [self.data_qubits[d] for d in sorted(s)]
                for a, s in self.stabilizer_supports.items()
            },
            "logical_z_support": [self.data_qubits[d] for d in sorted(self.logical_z_support)],
            "cz_schedule": [[[a, self.data_qubits[d]] for a, d in layer] for layer in self.cz_schedule],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CodeLayout":
        data = tuple(doc.get("data_qubits", DATA_QUBITS))
        ancillas = tuple(doc.get("ancilla_qubits", ANCILLA_QUBITS))
        idx = {q: i for i, q in enumerate(data)}
        if "stabilizer_supports" in doc:
            supports = {a: frozenset(idx[q] for q in qs) for a, qs in doc["stabilizer_supports"].items()}
        else:
            supports = dict(DEFAULT_SUPPORTS)
        if "logical_z_support" in doc:
            logical = frozenset(idx[q] for q in doc["logical_z_support"])
        else:
            logical = frozenset(range(len(data)))
        if "cz_schedule" in doc:
            schedule = tuple(tuple((a, idx[q]) for a, q in layer) for layer in doc["cz_schedule"])
        else:
            schedule = DEFAULT_CZ_SCHEDULE
        layout = cls(data, ancillas, supports, logical, schedule)
        layout.validate()
        return layout


def build_surface13(cz_schedule=None) -> CodeLayout:
    """Return the fixed Surface-13 layout, optionally with a custom CZ schedule."""
    layout = CodeLayout(
        data_qubits=DATA_QUBITS,
        ancilla_qubits=ANCILLA_QUBITS,
        stabilizer_supports=dict(DEFAULT_SUPPORTS),
        logical_z_support=frozenset(range(9)),
        cz_schedule=tuple(tuple(layer) for layer in (cz_schedule or DEFAULT_CZ_SCHEDULE)),
    )
    layout.validate()
    return layout


def _as_bits(state, n: int = 9) -> np.ndarray:
    if isinstance(state, str):
        if len(state) != n or set(state) - {"0", "1"}:
            raise ValueError(f"expected a {n}-character bitstring, got {state!r}")
        return np.fromiter((c == "1" for c in state), dtype=np.uint8, count=n)
    bits = np.asarray(state, dtype=np.uint8)
    if bits.shape[-1] != n:
        raise ValueError(f"expected {n} bits, got shape {bits.shape}")
    return bits


def bits_to_str(bits) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits).ravel())


def stabilizer_parity(state, support) -> int:
    bits = _as_bits(state)
    support = list(support)
    if any(not 0 <= i < bits.shape[-1] for i in support):
        raise IndexError(f"support {support} out of range for {bits.shape[-1]} qubits")
    return int(np.bitwise_xor.reduce(bits[..., support], axis=-1)) if support else 0


def logical_parity(data_bits) -> int:
    bits = _as_bits(data_bits)
    return int(bits.sum() % 2)


@dataclass(frozen=True)
class CodewordSet:
    states: tuple[str, ...]

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __contains__(self, item):
        return (item if isinstance(item, str) else bits_to_str(item)) in self.states


def codeword_states(layout: CodeLayout) -> CodewordSet:
    """All 9-bit strings with even parity on every check and even total parity.

    Ordered by integer value with D1 as the most significant bit.
    """
    found = []
    for bits in itertools.product((0, 1), repeat=layout.n_data):
        arr = np.array(bits, dtype=np.uint8)
        if (layout.support_matrix @ arr % 2).any():
            continue
        if arr[sorted(layout.logical_z_support)].sum() % 2:
            continue
        found.append(bits_to_str(arr))
    return CodewordSet(tuple(found))
