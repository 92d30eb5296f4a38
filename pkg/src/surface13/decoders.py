"""Matching decoders (hard and soft), simple baselines, and a brute-force oracle.

Every decoder returns the predicted flip of the logical observable relative
to the noiseless reference. A shot is decoded correctly when that prediction
equals the observed flip of the measured final data parity.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .code_model import CodeLayout
from .decoding_graph import DecodingGraph, xor_prob

DECODERS = ("no_corr", "qed", "lut", "mwpm_hard", "mwpm_soft")
Q_MIN = K.Q_MIN


class DecoderError(RuntimeError):
    pass


@dataclass
class Matching:
    pairs: list[tuple[int, int]] = field(default_factory=list)  # (u, v) with v = boundary allowed
    weight: float = 0.0
    logical_flip: int = 0


@dataclass
class CompiledGraph:
    """CSR adjacency over detector nodes plus the boundary node."""

    indptr: np.ndarray
    nbr: np.ndarray
    eid: np.ndarray
    weights: np.ndarray
    logical: np.ndarray
    n_nodes: int
    boundary: int

    @classmethod
    def from_graph(cls, graph: DecodingGraph, weights=None) -> "CompiledGraph":
        u, v, p, lf = graph.arrays()
        w = graph.weights() if weights is None else np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise DecoderError("negative edge weight")
        n_total = graph.n_nodes + 1
        ends = np.concatenate([u, v])
        others = np.concatenate([v, u])
        ids = np.concatenate([np.arange(len(u)), np.arange(len(u))])
        order = np.lexsort((ids, ends))
        counts = np.bincount(ends, minlength=n_total)
        indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return cls(indptr, others[order].astype(np.int64), ids[order].astype(np.int64), np.ascontiguousarray(w, dtype=float), lf.astype(np.uint8), graph.n_nodes, graph.boundary)


def _blossom_match(D, P, dB, PB):
    """Min-weight matching with per-defect boundary copies, via networkx."""
    import networkx as nx

    k = len(dB)
    g = nx.Graph()
    big = float(np.nanmax(np.concatenate([D[np.isfinite(D)], dB[np.isfinite(dB)], [0.0]]))) * 4 + 1
    for i in range(k):
        for j in range(i + 1, k):
            if np.isfinite(D[i, j]):
                g.add_edge(i, j, weight=big - D[i, j])
            g.add_edge(("b", i), ("b", j), weight=big)
        if np.isfinite(dB[i]):
            g.add_edge(i, ("b", i), weight=big - dB[i])
    m = nx.max_weight_matching(g, maxcardinality=True)
    partner = np.full(k, -2)
    total, parity = 0.0, 0
    for a, b in m:
        if isinstance(a, tuple) and isinstance(b, tuple):
            continue
        if isinstance(b, tuple) or isinstance(a, tuple):
            i = a if not isinstance(a, tuple) else b
            partner[i] = -1
            total += dB[i]
            parity ^= int(PB[i])
        else:
            partner[a], partner[b] = b, a
            total += D[a, b]
            parity ^= int(P[a, b])
    if np.any(partner == -2):
        raise DecoderError("disconnected defect")
    return total, parity, partner


def _match_fired(cg: CompiledGraph, fired: np.ndarray, weights: np.ndarray):
    fired = np.ascontiguousarray(fired, dtype=np.int64)
    D, P, dB, PB = K.pair_tables(cg.indptr, cg.nbr, cg.eid, weights, cg.logical, fired, cg.boundary, cg.n_nodes + 1)
    if len(fired) <= K.MAX_DP_DEFECTS:
        total, parity, partner = K.match_dp(D, P, dB, PB)
        if not np.isfinite(total):
            raise DecoderError("disconnected defect: no path to a partner or the boundary")
    else:
        total, parity, partner = _blossom_match(D, P, dB, PB)
    return float(total), int(parity), partner


def mwpm_decode(graph, defects, weights=None) -> tuple[int, Matching]:
    """Exact minimum-weight matching decode of one shot."""
    cg = graph if isinstance(graph, CompiledGraph) else CompiledGraph.from_graph(graph)
    defects = np.asarray(defects)
    if defects.shape != (cg.n_nodes,):
        raise DecoderError(f"expected {cg.n_nodes} defect bits, got {defects.shape}")
    fired = np.flatnonzero(defects)
    if len(fired) == 0:
        return 0, Matching()
    w = cg.weights if weights is None else np.ascontiguousarray(weights, dtype=float)
    total, parity, partner = _match_fired(cg, fired, w)
    pairs = []
    for i, j in enumerate(partner):
        if j == -1:
            pairs.append((int(fired[i]), cg.boundary))
        elif j > i:
            pairs.append((int(fired[i]), int(fired[j])))
    return parity, Matching(pairs, total, parity)


# --------------------------------------------------------------------------- soft weights


def classification_weight(q):
    """w = log((1-q)/q) with q clamped to [Q_MIN, 0.5]."""
    q = np.clip(np.asarray(q, float), Q_MIN, 0.5)
    w = np.log1p(-q) - np.log(q)
    return float(w) if w.ndim == 0 else w


def odd_flip_probability(qs) -> float:
    """Probability that an odd number of the listed outcomes are misclassified."""
    out = 0.0
    for q in qs:
        out = xor_prob(out, min(max(float(q), Q_MIN), 0.5))
    return out


def final_edge_weight(p_qubit: float, q_a: float, q_b: Optional[float] = None) -> float:
    """Weight of a final-round edge combining a qubit error with classification errors."""
    podd = odd_flip_probability([q_a] if q_b is None else [q_a, q_b])
    peven = 1.0 - podd
    num = (1 - p_qubit) * peven + p_qubit * podd
    den = p_qubit * peven + (1 - p_qubit) * podd
    return float(np.log(num / max(den, K.P_MIN)))


def edge_classification_error(eps_list) -> float:
    """epsilon_edge = (1 - prod(1 - 2 eps_m)) / 2."""
    return 0.5 * (1 - float(np.prod([1 - 2 * e for e in eps_list])))


def qubit_part(p_total: float, eps_edge: float, p_floor: float = K.P_MIN) -> tuple[float, bool]:
    """Deconvolve the classification part out of an edge probability.

    Returns (p_qubit, clamped).
    """
    p = (p_total - eps_edge) / (1 - 2 * eps_edge)
    if not (0 <= p < 0.5) or not np.isfinite(p):
        return float(np.clip(np.nan_to_num(p, nan=p_floor), p_floor, 0.5 - 1e-9)), True
    return float(max(p, p_floor)), False


@dataclass
class SoftContext:
    """Per-graph data needed to re-weight edges shot by shot.

    soft_idx lists edges with classification slots; slot_a/slot_b are the
    record indices (-1 when absent); p_qubit is the non-classification part.
    """

    soft_idx: np.ndarray
    p_qubit: np.ndarray
    slot_a: np.ndarray
    slot_b: np.ndarray
    final: np.ndarray
    n_clamped: int = 0

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, np.zeros(0), z, z, np.zeros(0, bool))


def soft_context(graph: DecodingGraph, eps_m=None, bulk: bool = True, final: bool = True) -> SoftContext:
    """Build the re-weighting table.

    Bulk classification edges (both endpoints before the final round) use the
    posterior alone. Edges touching a final node keep a qubit part obtained
    by deconvolving the mean classification errors ``eps_m`` (per record)
    from the edge probability.
    """
    det = graph.detectors
    idx, pq, sa, sb, fin = [], [], [], [], []
    clamped = 0
    for k, e in enumerate(graph.edges):
        if not e.soft_slots:
            continue
        if len(e.soft_slots) > 2:
            raise DecoderError(f"edge {e.key} has {len(e.soft_slots)} classification slots; at most 2 supported")
        is_final = det.is_final(e.u) or (e.v != det.boundary and det.is_final(e.v))
        if is_final:
            if not final:
                continue
            if eps_m is None:
                raise DecoderError("final-round re-weighting needs mean classification errors")
            eps_edge = edge_classification_error([eps_m[s] for s in e.soft_slots])
            p, c = qubit_part(e.p, eps_edge, max(e.p_qubit, K.P_MIN) if e.p_qubit > 0 else K.P_MIN)
            clamped += c
        else:
            if not bulk:
                continue
            p = 0.0
        idx.append(k)
        pq.append(p)
        sa.append(e.soft_slots[0])
        sb.append(e.soft_slots[1] if len(e.soft_slots) == 2 else -1)
        fin.append(is_final)
    return SoftContext(
        np.array(idx, dtype=np.int64),
        np.array(pq, dtype=float),
        np.array(sa, dtype=np.int64),
        np.array(sb, dtype=np.int64),
        np.array(fin, dtype=bool),
        clamped,
    )


@dataclass
class SoftShotView:
    q: np.ndarray
    weights: np.ndarray


def _reweight(graph: DecodingGraph, ctx: SoftContext, q, weights=None) -> np.ndarray:
    out = np.empty(len(graph.edges))
    base = graph.weights() if weights is None else np.asarray(weights, float)
    K.soft_weights(base, ctx.soft_idx, ctx.p_qubit, ctx.slot_a, ctx.slot_b, np.ascontiguousarray(q, dtype=float), out)
    return out


def soft_reweight_bulk(graph: DecodingGraph, q, weights=None) -> np.ndarray:
    """Edge weights with bulk classification edges set to log((1-q)/q) of their slot."""
    return _reweight(graph, soft_context(graph, final=False), q, weights)


def soft_reweight_final(graph: DecodingGraph, q, eps_m, weights=None) -> np.ndarray:
    """Edge weights with every final-round edge re-weighted from the shot's posteriors."""
    return _reweight(graph, soft_context(graph, eps_m, bulk=False), q, weights)


def soft_view(graph: DecodingGraph, q, eps_m) -> SoftShotView:
    return SoftShotView(np.asarray(q, float), _reweight(graph, soft_context(graph, eps_m), q))


# --------------------------------------------------------------------------- batch decoding


def decode_batch(graph: DecodingGraph, defects, q=None, ctx: Optional[SoftContext] = None, compiled: Optional[CompiledGraph] = None):
    """Decode many shots; with ``q`` and ``ctx`` given, weights are per-shot soft weights.

    Returns (prediction, matching weight, matched pair count), each of length n_shots.
    """
    cg = compiled or CompiledGraph.from_graph(graph)
    defects = np.ascontiguousarray(defects, dtype=np.uint8)
    use_soft = q is not None
    if use_soft and ctx is None:
        raise DecoderError("soft decoding needs a SoftContext")
    ctx = ctx or SoftContext.empty()
    qa = np.ascontiguousarray(q, dtype=float) if use_soft else np.zeros((len(defects), 1))
    pred, weight, npairs, status = K.decode_batch(
        cg.indptr, cg.nbr, cg.eid, cg.weights, cg.logical, defects, cg.boundary,
        ctx.soft_idx, ctx.p_qubit, ctx.slot_a, ctx.slot_b, qa, use_soft,
    )
    if np.any(status == 2):
        raise DecoderError("disconnected defect: no path to a partner or the boundary")
    for s in np.flatnonzero(status == 1):
        w = cg.weights
        if use_soft:
            w = np.empty_like(cg.weights)
            K.soft_weights(cg.weights, ctx.soft_idx, ctx.p_qubit, ctx.slot_a, ctx.slot_b, qa[s], w)
        total, parity, partner = _match_fired(cg, np.flatnonzero(defects[s]), w)
        pred[s], weight[s] = parity, total
        npairs[s] = sum(1 for i, j in enumerate(partner) if j == -1 or j > i)
    return pred, weight, npairs


# --------------------------------------------------------------------------- baselines


def no_corr_decode(final_data_bits, rounds: int, layout: CodeLayout) -> int:
    """Logical value read straight from the final data bits.

    The measurement-time X pulses flip every data qubit once per round, so
    the raw parity is compensated by rounds mod 2 times the logical weight.
    """
    bits = np.asarray(final_data_bits, dtype=np.uint8)
    support = sorted(layout.logical_z_support)
    raw = bits[..., support].sum(axis=-1) % 2
    out = (raw ^ ((rounds * len(support)) % 2)).astype(np.uint8)
    return int(out) if out.ndim == 0 else out


def qed_postselect(defects):
    """Accept (True) only shots without any fired defect."""
    d = np.asarray(defects)
    acc = ~d.any(axis=-1)
    return bool(acc) if acc.ndim == 0 else acc


def build_lut(layout: CodeLayout) -> np.ndarray:
    """Most likely single-round data correction for each check pattern.

    Entry p (bit a set when check a fired) is a data bit mask. Minimum
    weight wins, ties go to the lexicographically smallest qubit set.
    """
    n_anc, n = layout.n_ancilla, layout.n_data
    best = {}
    for weight in range(n + 1):
        for combo in itertools.combinations(range(n), weight):
            e = np.zeros(n, dtype=np.uint8)
            e[list(combo)] = 1
            syn = layout.support_matrix @ e % 2
            pat = int(sum(int(b) << a for a, b in enumerate(syn)))
            best.setdefault(pat, e)
        if len(best) == 1 << n_anc:
            break
    return np.array([best[p] for p in range(1 << n_anc)], dtype=np.uint8)


def lut_decode(defects, layout: CodeLayout, rounds: int, lut: Optional[np.ndarray] = None):
    """Round-by-round lookup-table decode; returns the predicted logical flip."""
    lut = build_lut(layout) if lut is None else lut
    d = np.asarray(defects, dtype=np.uint8)
    single = d.ndim == 1
    d = np.atleast_2d(d).reshape(d.shape[0] if not single else 1, rounds + 1, layout.n_ancilla)
    weights = 1 << np.arange(layout.n_ancilla)
    patterns = (d * weights).sum(axis=-1)
    frame = np.bitwise_xor.reduce(lut[patterns], axis=1)
    support = sorted(layout.logical_z_support)
    pred = (frame[:, support].sum(axis=1) % 2).astype(np.uint8)
    return int(pred[0]) if single else pred


# --------------------------------------------------------------------------- oracle


MAX_BRUTE_EDGES = 22


def brute_force_ml(graph: DecodingGraph, defects, weights=None, return_weight: bool = False):
    """Lowest-weight edge set whose boundary equals the fired defects.

    Enumerates every edge subset when the graph has at most 22 edges;
    otherwise, for at most 8 fired defects, every pairing over Floyd-Warshall
    distances. Ties keep the first subset in enumeration order.
    """
    u, v, p, lf = graph.arrays()
    w = graph.weights() if weights is None else np.asarray(weights, float)
    d = np.asarray(defects, dtype=np.uint8)
    fired = np.flatnonzero(d)
    if len(fired) == 0:
        return (0, 0.0) if return_weight else 0
    B = graph.boundary
    if len(u) <= MAX_BRUTE_EDGES and graph.n_nodes <= 62:
        bit = lambda x: np.where(x == B, 0, np.left_shift(1, np.minimum(x, 62)))
        masks = (bit(u) ^ bit(v)).astype(np.int64)
        target = int(sum(1 << int(i) for i in fired))
        syn = np.zeros(1, dtype=np.int64)
        tot = np.zeros(1)
        par = np.zeros(1, dtype=np.uint8)
        for k in range(len(u)):
            syn = np.concatenate([syn, syn ^ masks[k]])
            tot = np.concatenate([tot, tot + w[k]])
            par = np.concatenate([par, par ^ lf[k]])
        ok = np.flatnonzero(syn == target)
        if len(ok) == 0:
            raise DecoderError("defects cannot be explained by any edge set")
        i = ok[np.argmin(tot[ok])]
        return (int(par[i]), float(tot[i])) if return_weight else int(par[i])
    if len(fired) > 8:
        raise DecoderError("instance too large for brute force")
    n = graph.n_nodes + 1
    dist = np.full((n, n), np.inf)
    par = np.zeros((n, n), dtype=np.uint8)
    np.fill_diagonal(dist, 0)
    for a, b, ww, l in zip(u, v, w, lf):
        if ww < dist[a, b]:
            dist[a, b] = dist[b, a] = ww
            par[a, b] = par[b, a] = l
    for m in range(n):
        via = dist[:, m : m + 1] + dist[m : m + 1, :]
        better = via < dist
        par = np.where(better, par[:, m : m + 1] ^ par[m : m + 1, :], par)
        dist = np.where(better, via, dist)

    @functools.lru_cache(maxsize=None)
    def best(rest):
        if not rest:
            return 0.0, 0
        i, others = rest[0], rest[1:]
        sub = best(others)
        cands = [(dist[i, B] + sub[0], par[i, B] ^ sub[1])]
        for k, j in enumerate(others):
            sub = best(others[:k] + others[k + 1 :])
            cands.append((dist[i, j] + sub[0], par[i, j] ^ sub[1]))
        return min(cands, key=lambda c: c[0])

    tot, pr = best(tuple(int(x) for x in fired))
    if not np.isfinite(tot):
        raise DecoderError("defects cannot be explained by any edge set")
    return (int(pr), float(tot)) if return_weight else int(pr)
