"""Numba kernels for per-shot shortest paths and exact matching."""

import numpy as np
from numba import njit

# exact subset DP up to this many fired defects; larger sets fall back to blossom
MAX_DP_DEFECTS = 20
Q_MIN = 1e-12
P_MIN = 1e-15


@njit(cache=True)
def shortest_paths(indptr, nbr, eid, w, lf, src, n_total):
    """Dense Dijkstra from ``src``; returns (distance, path logical parity).

    Ties are broken towards the lower node index and then the first edge in
    adjacency order, so results are deterministic.
    """
    dist = np.full(n_total, np.inf)
    par = np.zeros(n_total, dtype=np.uint8)
    done = np.zeros(n_total, dtype=np.bool_)
    dist[src] = 0.0
    for _ in range(n_total):
        u = -1
        best = np.inf
        for i in range(n_total):
            if not done[i] and dist[i] < best:
                best = dist[i]
                u = i
        if u < 0:
            break
        done[u] = True
        for k in range(indptr[u], indptr[u + 1]):
            v = nbr[k]
            nd = best + w[eid[k]]
            if nd < dist[v]:
                dist[v] = nd
                par[v] = par[u] ^ lf[eid[k]]
    return dist, par


@njit(cache=True)
def match_dp(D, P, dB, PB):
    """Exact minimum-weight matching of k defects, each paired or sent to the boundary.

    Returns (weight, parity, partner) with partner[i] = -1 for the boundary.
    Strict comparisons in a fixed order give lexicographic tie-breaking.
    """
    k = dB.shape[0]
    size = 1 << k
    f = np.full(size, np.inf)
    choice = np.full(size, -2, dtype=np.int16)
    f[0] = 0.0
    for mask in range(1, size):
        i = 0
        while not (mask >> i) & 1:
            i += 1
        rest = mask ^ (1 << i)
        best = f[rest] + dB[i]
        pick = -1
        for j in range(i + 1, k):
            if (rest >> j) & 1:
                c = f[rest ^ (1 << j)] + D[i, j]
                if c < best:
                    best = c
                    pick = j
        f[mask] = best
        choice[mask] = pick
    partner = np.full(k, -2, dtype=np.int64)
    parity = 0
    mask = size - 1
    while mask:
        i = 0
        while not (mask >> i) & 1:
            i += 1
        j = choice[mask]
        if j < 0:
            partner[i] = -1
            parity ^= PB[i]
            mask ^= 1 << i
        else:
            partner[i] = j
            partner[j] = i
            parity ^= P[i, j]
            mask ^= (1 << i) | (1 << j)
    return f[size - 1], parity, partner


@njit(cache=True)
def pair_tables(indptr, nbr, eid, w, lf, fired, boundary, n_total):
    k = fired.shape[0]
    D = np.zeros((k, k))
    P = np.zeros((k, k), dtype=np.uint8)
    dB = np.zeros(k)
    PB = np.zeros(k, dtype=np.uint8)
    for a in range(k):
        dist, par = shortest_paths(indptr, nbr, eid, w, lf, fired[a], n_total)
        dB[a] = dist[boundary]
        PB[a] = par[boundary]
        for b in range(k):
            D[a, b] = dist[fired[b]]
            P[a, b] = par[fired[b]]
    return D, P, dB, PB


@njit(cache=True)
def soft_weights(w_static, soft_idx, soft_pq, slot_a, slot_b, q_row, out):
    """Per-shot weights: edge flip prob = p_qubit XOR (odd number of slot misclassifications)."""
    out[:] = w_static
    for s in range(soft_idx.shape[0]):
        qa = min(max(q_row[slot_a[s]], Q_MIN), 0.5)
        if slot_b[s] >= 0:
            qb = min(max(q_row[slot_b[s]], Q_MIN), 0.5)
            podd = qa * (1.0 - qb) + qb * (1.0 - qa)
        else:
            podd = qa
        p = soft_pq[s]
        pe = p * (1.0 - podd) + podd * (1.0 - p)
        pe = min(max(pe, P_MIN), 0.5)
        out[soft_idx[s]] = np.log((1.0 - pe) / pe)


@njit(cache=True)
def decode_batch(indptr, nbr, eid, w_static, lf, defects, boundary, soft_idx, soft_pq, slot_a, slot_b, q, use_soft):
    """Decode every shot; returns (prediction, weight, matched pairs, status).

    status: 0 ok, 1 too many defects for the DP (caller falls back),
    2 a fired defect cannot reach the boundary or its partners.
    """
    n_shots, n_nodes = defects.shape
    n_total = n_nodes + 1
    pred = np.zeros(n_shots, dtype=np.uint8)
    weight = np.zeros(n_shots)
    status = np.zeros(n_shots, dtype=np.uint8)
    npairs = np.zeros(n_shots, dtype=np.int64)
    w = w_static.copy()
    fired_buf = np.empty(n_nodes, dtype=np.int64)
    for s in range(n_shots):
        k = 0
        for i in range(n_nodes):
            if defects[s, i]:
                fired_buf[k] = i
                k += 1
        if k == 0:
            continue
        if k > MAX_DP_DEFECTS:
            status[s] = 1
            continue
        if use_soft:
            soft_weights(w_static, soft_idx, soft_pq, slot_a, slot_b, q[s], w)
        D, P, dB, PB = pair_tables(indptr, nbr, eid, w, lf, fired_buf[:k], boundary, n_total)
        tot, par, partner = match_dp(D, P, dB, PB)
        if not np.isfinite(tot):
            status[s] = 2
            continue
        pred[s] = par
        weight[s] = tot
        for i in range(k):
            if partner[i] == -1 or partner[i] > i:
                npairs[s] += 1
    return pred, weight, npairs, status
