"""Detectors for the no-reset memory experiment and decoding-graph construction.

Without ancilla reset the raw ancilla outcome m(a, r) equals
m(a, r-1) XOR s(a, r), where s is the stabilizer value. Detectors are

* d(a, r) = m(a, r) XOR m(a, r-2), with m(a, 0) = m(a, -1) = 0 (ancillas start in |0>);
* final(a) = parity of a's support in the final data bits XOR m(a, R) XOR m(a, R-1).

All outcomes are taken relative to the noiseless reference record, so every
detector is 0 without errors. Node index of (a, r) is n_anc * (r - 1) + a with
r = R + 1 for the final nodes; the boundary node follows the last detector.

Pairwise edge estimation uses the closed form

    p_ij = 1/2 - 1/2 * sqrt(1 - 4 (<x_i x_j> - <x_i><x_j>) / (1 - 2<x_i> - 2<x_j> + 4<x_i x_j>))

which is exact when every error mechanism flips at most two detectors.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .code_model import CodeLayout
from .noisy_circuit import NoisyCircuit, elementary_errors, propagate_errors

BOUNDARY = "boundary"
KINDS = ("data-space", "ancilla-time", "classification-time", "hook", "boundary")
P_MIN = 1e-15


class GraphError(ValueError):
    pass


def xor_prob(p1, p2):
    """Probability that exactly one of two independent events happens."""
    return p1 * (1 - p2) + p2 * (1 - p1)


def weight_from_p(p):
    p = np.clip(np.asarray(p, float), P_MIN, 0.5)
    w = np.log1p(-p) - np.log(p)
    return float(w) if w.ndim == 0 else w


# --------------------------------------------------------------------------- detectors


@dataclass(frozen=True)
class DetectorSet:
    n_ancilla: int
    rounds: int

    @property
    def n_nodes(self) -> int:
        return self.n_ancilla * (self.rounds + 1)

    @property
    def boundary(self) -> int:
        return self.n_nodes

    def index(self, ancilla: int, round_: int) -> int:
        if not 1 <= round_ <= self.rounds + 1:
            raise IndexError(f"round {round_} outside 1..{self.rounds + 1}")
        return self.n_ancilla * (round_ - 1) + ancilla

    def node(self, index: int) -> tuple[int, int]:
        """(ancilla, round) of a node; the final nodes have round R + 1."""
        return index % self.n_ancilla, index // self.n_ancilla + 1

    def is_final(self, index: int) -> bool:
        return index != self.boundary and self.node(index)[1] == self.rounds + 1

    def measurements(self, index: int) -> tuple[int, ...]:
        """Ancilla record indices feeding a node (final nodes also use all data in the support)."""
        a, r = self.node(index)
        n = self.n_ancilla
        if r <= self.rounds:
            return tuple(n * (k - 1) + a for k in (r, r - 2) if k >= 1)
        return tuple(n * (k - 1) + a for k in (self.rounds, self.rounds - 1) if k >= 1)


def extract_detectors(hard_bits, reference, layout: CodeLayout, rounds: int) -> np.ndarray:
    """Defect bits, shape (n_shots, n_nodes) (or (n_nodes,) for one shot)."""
    bits = np.asarray(hard_bits, dtype=np.uint8)
    single = bits.ndim == 1
    bits = np.atleast_2d(bits)
    ref = np.asarray(reference, dtype=np.uint8)
    n_anc, n_data = layout.n_ancilla, layout.n_data
    n_rec = n_anc * rounds + n_data
    if bits.shape[1] != n_rec or ref.shape[-1] != n_rec:
        raise GraphError(f"expected {n_rec} measurements, got {bits.shape[1]} and {ref.shape[-1]}")
    s = bits ^ ref
    m = np.zeros((bits.shape[0], rounds + 2, n_anc), dtype=np.uint8)
    m[:, 2:] = s[:, : n_anc * rounds].reshape(-1, rounds, n_anc)
    out = np.empty((bits.shape[0], rounds + 1, n_anc), dtype=np.uint8)
    out[:, :rounds] = m[:, 2:] ^ m[:, :-2]
    data = s[:, n_anc * rounds :]
    stab = (data.astype(np.int64) @ layout.support_matrix.T.astype(np.int64)) % 2
    out[:, rounds] = stab.astype(np.uint8) ^ m[:, rounds + 1] ^ m[:, rounds]
    out = out.reshape(bits.shape[0], -1)
    return out[0] if single else out


def observed_flip(hard_bits, reference, layout: CodeLayout, rounds: int) -> np.ndarray:
    """Logical-parity change of the measured final data bits relative to the reference."""
    bits = np.atleast_2d(np.asarray(hard_bits, dtype=np.uint8))
    ref = np.asarray(reference, dtype=np.uint8)
    start = layout.n_ancilla * rounds
    logical = start + np.array(sorted(layout.logical_z_support))
    out = ((bits[:, logical] ^ ref[logical]).sum(axis=1) % 2).astype(np.uint8)
    return out[0] if np.asarray(hard_bits).ndim == 1 else out


# --------------------------------------------------------------------------- graph


@dataclass
class Edge:
    u: int
    v: int  # may equal the boundary index
    p: float
    kind: str
    logical_flip: int
    soft_slots: tuple[int, ...] = ()
    p_qubit: float = 0.0
    source: str = "model"

    @property
    def weight(self) -> float:
        return weight_from_p(self.p)

    @property
    def key(self) -> tuple[int, int]:
        return (self.u, self.v)


@dataclass
class DecodingGraph:
    detectors: DetectorSet
    edges: list[Edge]
    meta: dict = field(default_factory=dict)

    FORMAT_VERSION = 1

    @property
    def rounds(self) -> int:
        return self.detectors.rounds

    @property
    def n_nodes(self) -> int:
        return self.detectors.n_nodes

    @property
    def boundary(self) -> int:
        return self.detectors.boundary

    def edge_map(self) -> dict[tuple[int, int], Edge]:
        return {e.key: e for e in self.edges}

    def arrays(self):
        """(u, v, p, logical_flip) as numpy arrays in edge order."""
        u = np.array([e.u for e in self.edges], dtype=np.int64)
        v = np.array([e.v for e in self.edges], dtype=np.int64)
        p = np.array([e.p for e in self.edges], dtype=float)
        lf = np.array([e.logical_flip for e in self.edges], dtype=np.uint8)
        return u, v, p, lf

    def weights(self) -> np.ndarray:
        return weight_from_p(np.array([e.p for e in self.edges], dtype=float))

    def copy(self, **meta) -> "DecodingGraph":
        return DecodingGraph(self.detectors, [replace(e) for e in self.edges], {**self.meta, **meta})

    def is_connected(self) -> bool:
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self.n_nodes + 1))
        g.add_edges_from((e.u, e.v) for e in self.edges)
        return nx.is_connected(g)

    def to_dict(self, layout: Optional[CodeLayout] = None) -> dict:
        names = layout.ancilla_qubits if layout else [f"Z{a + 1}" for a in range(self.detectors.n_ancilla)]
        nodes = []
        for i in range(self.n_nodes):
            a, r = self.detectors.node(i)
            nodes.append({"ancilla": names[a], "round": r, "final": r == self.rounds + 1})
        edges = []
        for e in self.edges:
            slot = None if not e.soft_slots else (e.soft_slots[0] if len(e.soft_slots) == 1 else list(e.soft_slots))
            edges.append(
                {
                    "u": e.u,
                    "v": BOUNDARY if e.v == self.boundary else e.v,
                    "p": e.p,
                    "kind": e.kind,
                    "logical_flip": e.logical_flip,
                    "soft_slot": slot,
                    "p_qubit": e.p_qubit,
                    "source": e.source,
                }
            )
        return {
            "format_version": self.FORMAT_VERSION,
            "rounds": self.rounds,
            "n_ancilla": self.detectors.n_ancilla,
            "nodes": nodes,
            "edges": edges,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DecodingGraph":
        if doc.get("format_version") != cls.FORMAT_VERSION:
            raise GraphError(f"unsupported graph format_version {doc.get('format_version')}")
        det = DetectorSet(int(doc["n_ancilla"]), int(doc["rounds"]))
        edges = []
        for e in doc["edges"]:
            slot = e.get("soft_slot")
            slots = () if slot is None else ((slot,) if isinstance(slot, int) else tuple(slot))
            v = det.boundary if e["v"] == BOUNDARY else int(e["v"])
            edges.append(
                Edge(int(e["u"]), v, float(e["p"]), e["kind"], int(e["logical_flip"]), slots, float(e.get("p_qubit", 0.0)), e.get("source", "model"))
            )
        return cls(det, edges, dict(doc.get("meta", {})))

    def save(self, path, layout: Optional[CodeLayout] = None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(layout), fh, indent=1)

    @classmethod
    def load(cls, path) -> "DecodingGraph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def edge_kind(det: DetectorSet, u: int, v: int) -> str:
    if v == det.boundary:
        return "boundary"
    (au, ru), (av, rv) = det.node(u), det.node(v)
    if au == av:
        return "classification-time" if abs(ru - rv) == 2 else "ancilla-time"
    return "data-space" if ru == rv else "hook"


def params_hash(params) -> str:
    doc = json.dumps(params.to_dict() if params is not None else None, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def single_error_signatures(circuit: NoisyCircuit):
    """Fired detectors and observed logical flip for every elementary error."""
    errors = elementary_errors(circuit)
    if not errors:
        return errors, np.zeros((0, 0), np.uint8), np.zeros(0, np.uint8)
    flips, cls = propagate_errors(circuit, errors)
    hard = (flips ^ cls).T
    zero = np.zeros(circuit.n_records, dtype=np.uint8)
    dets = extract_detectors(hard, zero, circuit.layout, circuit.rounds)
    logical = observed_flip(hard, zero, circuit.layout, circuit.rounds)
    return errors, dets, logical


def derive_model_graph(circuit: NoisyCircuit, layout: Optional[CodeLayout] = None) -> DecodingGraph:
    """Decoding graph from exhaustive single-error propagation through the circuit.

    Errors with the same detector pair are merged by XOR-combining their
    probabilities. An error that flips three or more detectors, or one that
    flips the logical observable without any detector, is a construction error.
    """
    layout = layout or circuit.layout
    det = DetectorSet(layout.n_ancilla, circuit.rounds)
    errors, dets, logical = single_error_signatures(circuit)
    merged: dict[tuple[int, int], dict] = {}
    for e, row, lf in zip(errors, dets, logical):
        fired = np.flatnonzero(row)
        if len(fired) > 2:
            raise GraphError(f"error {e} fires {len(fired)} detectors")
        if len(fired) == 0:
            if lf:
                raise GraphError(f"error {e} flips the logical observable undetected")
            continue
        key = (int(fired[0]), int(fired[1]) if len(fired) == 2 else det.boundary)
        entry = merged.setdefault(key, {"p": 0.0, "p_qubit": 0.0, "logical": int(lf)})
        if entry["logical"] != int(lf):
            raise GraphError(f"edge {key} has errors with different logical effect")
        entry["p"] = xor_prob(entry["p"], e.probability)
        if not e.flip:
            entry["p_qubit"] = xor_prob(entry["p_qubit"], e.probability)

    # classification slots come from unit record flips, so they are present even
    # when the circuit carries no explicit classification-flip locations
    slots = soft_slot_candidates(circuit)
    edges = [
        Edge(u, v, d["p"], edge_kind(det, u, v), d["logical"], slots.get((u, v), ()), d["p_qubit"], "model")
        for (u, v), d in sorted(merged.items())
    ]
    meta = {"source": "model", "shots": 0, "params_hash": params_hash(circuit.params)}
    return DecodingGraph(det, edges, meta)


def soft_slot_candidates(circuit: NoisyCircuit) -> dict[tuple[int, int], tuple[int, ...]]:
    """Measurement records whose classification error maps to each edge.

    Works for circuits without classification-flip locations too, by
    propagating a unit outcome flip on every record.
    """
    det = DetectorSet(circuit.layout.n_ancilla, circuit.rounds)
    eye = np.eye(circuit.n_records, dtype=np.uint8)
    zero = np.zeros(circuit.n_records, dtype=np.uint8)
    dets = extract_detectors(eye, zero, circuit.layout, circuit.rounds)
    out: dict[tuple[int, int], list[int]] = {}
    for rec, row in enumerate(dets):
        fired = np.flatnonzero(row)
        if len(fired) == 0 or len(fired) > 2:
            raise GraphError(f"flip of record {rec} fires {len(fired)} detectors")
        key = (int(fired[0]), int(fired[1]) if len(fired) == 2 else det.boundary)
        out.setdefault(key, []).append(rec)
    return {k: tuple(v) for k, v in out.items()}


# --------------------------------------------------------------------------- estimation


@dataclass
class EdgeEstimate:
    """Moments behind one pairwise estimate."""

    mean_i: float
    mean_j: float
    mean_ij: float
    p: float
    stderr: float
    shots: int


def _pair_estimate(xi, xj, xij):
    num = 4 * (xij - xi * xj)
    den = 1 - 2 * xi - 2 * xj + 4 * xij
    with np.errstate(divide="ignore", invalid="ignore"):
        rad = 1 - num / den
        p = 0.5 - 0.5 * np.sqrt(rad)
    bad = ~np.isfinite(p) | (den <= 0) | (rad < 0) | (p < 0)
    return np.where(bad, 0.0, p), bad


def _boundary_estimate(xi, bulk_p_by_node, n_nodes):
    """Solve <x_i> = p_i (*) (XOR of incident bulk edges) for p_i."""
    out = np.zeros(n_nodes)
    bad = np.zeros(n_nodes, dtype=bool)
    for i in range(n_nodes):
        P = 0.0
        for p in bulk_p_by_node[i]:
            P = xor_prob(P, p)
        den = 1 - 2 * P
        val = (xi[i] - P) / den if den > 0 else -1.0
        if not np.isfinite(val) or val < 0:
            bad[i] = True
            val = 0.0
        out[i] = val
    return out, bad


def _moments(defects: np.ndarray, blocks: int):
    x = np.asarray(defects, dtype=np.float32)
    n = x.shape[0]
    edges = np.linspace(0, n, blocks + 1).astype(int)
    s1 = np.empty((blocks, x.shape[1]))
    s2 = np.empty((blocks, x.shape[1], x.shape[1]))
    counts = np.diff(edges)
    for b in range(blocks):
        xb = x[edges[b] : edges[b + 1]]
        s1[b] = xb.sum(axis=0, dtype=np.float64)
        s2[b] = (xb.T @ xb).astype(np.float64)
    return s1, s2, counts


def _estimate_edges(s1, s2, count, pairs, n_nodes, boundary_nodes):
    xi = s1 / count
    xij = s2 / count
    u = np.array([a for a, _ in pairs], dtype=int)
    v = np.array([b for _, b in pairs], dtype=int)
    p_pairs, bad_pairs = _pair_estimate(xi[u], xi[v], xij[u, v]) if len(pairs) else (np.zeros(0), np.zeros(0, bool))
    incident = [[] for _ in range(n_nodes)]
    for (a, b), p in zip(pairs, p_pairs):
        incident[a].append(p)
        incident[b].append(p)
    p_bnd, bad_bnd = _boundary_estimate(xi, incident, n_nodes)
    return p_pairs, bad_pairs, p_bnd[boundary_nodes], bad_bnd[boundary_nodes], xi, xij


def estimate_correlation_graph(defects, topology: DecodingGraph, blocks: int = 50) -> DecodingGraph:
    """Edge probabilities from defect correlations on the topology's candidate edges.

    Standard errors come from a delete-one-block jackknife over ``blocks``
    contiguous shot blocks and are stored in ``meta["stderr"]`` (edge order).
    Degenerate estimates are set to 0 and flagged for flooring.
    """
    defects = np.asarray(defects)
    n, n_nodes = defects.shape
    if n_nodes != topology.n_nodes:
        raise GraphError("defect matrix does not match the topology")
    B = topology.boundary
    pairs = [(e.u, e.v) for e in topology.edges if e.v != B]
    bnodes = np.array([e.u for e in topology.edges if e.v == B], dtype=int)
    blocks = max(2, min(blocks, n))
    s1, s2, counts = _moments(defects, blocks)
    total = _estimate_edges(s1.sum(0), s2.sum(0), counts.sum(), pairs, n_nodes, bnodes)
    p_pairs, bad_pairs, p_bnd, bad_bnd = total[:4]

    jack_pairs, jack_bnd = [], []
    for b in range(blocks):
        res = _estimate_edges(s1.sum(0) - s1[b], s2.sum(0) - s2[b], counts.sum() - counts[b], pairs, n_nodes, bnodes)
        jack_pairs.append(res[0])
        jack_bnd.append(res[2])
    jack_pairs = np.array(jack_pairs)
    jack_bnd = np.array(jack_bnd)
    se_pairs = np.sqrt((blocks - 1) / blocks * ((jack_pairs - jack_pairs.mean(0)) ** 2).sum(0)) if len(pairs) else np.zeros(0)
    se_bnd = np.sqrt((blocks - 1) / blocks * ((jack_bnd - jack_bnd.mean(0)) ** 2).sum(0))

    out_edges, stderr, flagged = [], [], []
    ip = ib = 0
    for e in topology.edges:
        if e.v == B:
            p, se, bad = p_bnd[ib], se_bnd[ib], bad_bnd[ib]
            ib += 1
        else:
            p, se, bad = p_pairs[ip], se_pairs[ip], bad_pairs[ip]
            ip += 1
        out_edges.append(replace(e, p=float(min(p, 0.5)), source="estimated"))
        stderr.append(float(se))
        flagged.append(bool(bad))
    meta = {**topology.meta, "source": "estimated", "shots": int(n), "stderr": stderr, "degenerate": flagged}
    return DecodingGraph(topology.detectors, out_edges, meta)


def apply_noise_floor(estimated: DecodingGraph, floor: DecodingGraph) -> DecodingGraph:
    """Raise every edge probability to at least the floor graph's value."""
    fmap = floor.edge_map()
    if set(fmap) != {e.key for e in estimated.edges}:
        raise GraphError("estimated and floor graphs have different topology")
    out = []
    for e in estimated.edges:
        f = fmap[e.key]
        if f.p > e.p:
            out.append(replace(e, p=f.p, source="floored"))
        else:
            out.append(replace(e))
    return DecodingGraph(estimated.detectors, out, {**estimated.meta, "source": "floored", "floor_hash": floor.meta.get("params_hash")})


def correlation_matrix(defects) -> np.ndarray:
    """All-pairs p_ij over detector nodes (zero diagonal), for diagnostics."""
    x = np.asarray(defects, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise GraphError("need at least two shots")
    xi = x.mean(axis=0)
    xij = (x.T @ x) / n
    p, _ = _pair_estimate(xi[:, None], xi[None, :], xij)
    # small negative correlations are kept as negative values of the radicand-free branch
    cov = xij - np.outer(xi, xi)
    p = np.where(cov < 0, np.maximum(cov, -1.0), p)
    np.fill_diagonal(p, 0.0)
    return p


def defect_rate(defects, n_ancilla: int, rounds: int) -> np.ndarray:
    """Mean defect rate per (round, ancilla); row R holds the final detectors."""
    x = np.asarray(defects, dtype=np.float64)
    if x.shape[0] < 1:
        raise GraphError("need at least one shot")
    return x.mean(axis=0).reshape(rounds + 1, n_ancilla)
