import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surface13.decoding_graph import (
    BOUNDARY,
    DecodingGraph,
    DetectorSet,
    Edge,
    GraphError,
    apply_noise_floor,
    correlation_matrix,
    defect_rate,
    derive_model_graph,
    estimate_correlation_graph,
    extract_detectors,
    single_error_signatures,
    weight_from_p,
    xor_prob,
)
from surface13.noisy_circuit import (
    ElementaryError,
    NoiseParams,
    attach_noise,
    build_memory_circuit,
    elementary_errors,
    inject_errors,
    reference_outcomes,
    sample_shots,
)

from conftest import noisy

ONLY_CLASS = NoiseParams.noiseless().replace(p_meas_class=0.01)


def two_node_topology():
    det = DetectorSet(1, 1)
    b = det.boundary
    edges = [Edge(0, 1, 0.1, "ancilla-time", 0), Edge(0, b, 0.05, "boundary", 0), Edge(1, b, 0.05, "boundary", 1)]
    return DecodingGraph(det, edges)


def sample_from_graph(graph, n, rng):
    """Defects from independent edge flips: the generator is the oracle."""
    out = np.zeros((n, graph.n_nodes), dtype=np.uint8)
    for e in graph.edges:
        hit = (rng.random(n) < e.p).astype(np.uint8)
        out[:, e.u] ^= hit
        if e.v != graph.boundary:
            out[:, e.v] ^= hit
    return out


# --------------------------------------------------------------------------- detectors


def test_detector_set_layout():
    det = DetectorSet(4, 3)
    assert det.n_nodes == 16 and det.boundary == 16
    assert det.index(2, 4) == 14 and det.node(14) == (2, 4)
    assert det.is_final(14) and not det.is_final(13 - 4)
    assert det.measurements(det.index(1, 1)) == (1,)
    assert det.measurements(det.index(1, 2)) == (5,)
    assert det.measurements(det.index(1, 3)) == (9, 1)
    assert det.measurements(det.index(1, 4)) == (9, 5)


def test_noiseless_record_gives_no_defects(layout):
    for rounds in (1, 2, 5):
        c = build_memory_circuit(layout, rounds)
        ref = reference_outcomes(c, "011101110")
        assert not extract_detectors(ref, ref, layout, rounds).any()


def test_length_mismatch_rejected(layout):
    with pytest.raises(GraphError):
        extract_detectors(np.zeros(12, np.uint8), np.zeros(13, np.uint8), layout, 1)


def test_outcome_flip_fires_two_rounds_apart(layout):
    R = 7
    det = DetectorSet(4, R)
    zero = np.zeros(4 * R + 9, np.uint8)
    for a in range(4):
        for r in range(3, R - 1):
            bits = zero.copy()
            bits[4 * (r - 1) + a] = 1
            fired = np.flatnonzero(extract_detectors(bits, zero, layout, R)).tolist()
            assert fired == [det.index(a, r), det.index(a, r + 2)]


def test_ancilla_x_before_measurement_fires_adjacent_rounds(layout):
    R = 5
    c = noisy(layout, R)
    det = DetectorSet(4, R)
    zero = np.zeros(c.n_records, np.uint8)
    for i, op in enumerate(c.ops):
        if op.name != "XERR" or op.targets[0] < 9 or not 1 <= op.round < R:
            continue
        a = op.targets[0] - 9
        flips, cls = inject_errors(c, [[ElementaryError(i, (1,), 1.0)]])
        fired = np.flatnonzero(extract_detectors((flips ^ cls).T, zero, layout, R)[0]).tolist()
        assert fired == [det.index(a, op.round), det.index(a, op.round + 1)]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=6))
def test_detector_closure(picks):
    from surface13.code_model import build_surface13

    layout = build_surface13()
    c = noisy(layout, 3)
    errs = elementary_errors(c)
    chosen = [errs[p % len(errs)] for p in picks]
    # distinct locations so errors do not compose into a different Pauli
    seen, unique = set(), []
    for e in chosen:
        if e.op_index not in seen:
            seen.add(e.op_index)
            unique.append(e)
    zero = np.zeros(c.n_records, np.uint8)
    f, k = inject_errors(c, [unique])
    together = extract_detectors((f ^ k).T, zero, layout, 3)[0]
    f, k = inject_errors(c, [[e] for e in unique])
    apart = np.bitwise_xor.reduce(extract_detectors((f ^ k).T, zero, layout, 3), axis=0)
    assert (together == apart).all()


# --------------------------------------------------------------------------- model graph


def test_zero_noise_gives_empty_graph(layout):
    zero = NoiseParams.noiseless()
    c = attach_noise(build_memory_circuit(layout, 3, zero), zero)
    assert derive_model_graph(c).edges == []


def test_classification_only_graph(layout):
    R = 5
    c = attach_noise(build_memory_circuit(layout, R, ONLY_CLASS), ONLY_CLASS)
    g = derive_model_graph(c)
    det = g.detectors
    bulk = [e for e in g.edges if e.v != g.boundary and not det.is_final(e.u) and not det.is_final(e.v)]
    assert len(bulk) == 4 * (R - 2)
    for e in bulk:
        assert e.kind == "classification-time"
        assert e.p == pytest.approx(0.01)
        assert det.node(e.v)[1] - det.node(e.u)[1] == 2
        assert len(e.soft_slots) == 1
    # every record flip lands on exactly one edge
    slots = sorted(s for e in g.edges for s in e.soft_slots)
    assert slots == list(range(c.n_records))


@pytest.mark.parametrize("rounds", [1, 2, 4])
def test_table_noise_graph_invariants(layout, table_noise, rounds):
    g = derive_model_graph(noisy(layout, rounds, table_noise))
    assert g.is_connected()
    kinds = {e.kind for e in g.edges}
    assert {"boundary", "ancilla-time", "data-space"} <= kinds
    if rounds >= 3:
        assert {"classification-time", "hook"} <= kinds
    keys = [e.key for e in g.edges]
    assert len(keys) == len(set(keys))
    for e in g.edges:
        assert 0 < e.p < 0.5 and e.weight > 0
        assert e.u < e.v
        if e.kind == "classification-time":
            assert e.soft_slots


def test_edge_probabilities_merge_by_xor(layout, table_noise):
    c = noisy(layout, 2, table_noise)
    g = derive_model_graph(c)
    errors, dets, _ = single_error_signatures(c)
    expected = {}
    for e, row in zip(errors, dets):
        fired = tuple(np.flatnonzero(row).tolist())
        if not fired:
            continue
        key = fired if len(fired) == 2 else (fired[0], g.boundary)
        expected[key] = xor_prob(expected.get(key, 0.0), e.probability)
    assert {k: pytest.approx(v, rel=1e-12) for k, v in expected.items()} == {e.key: e.p for e in g.edges}


def test_data_errors_in_boundary_pairs_land_on_final_boundary_edges(layout, table_noise):
    # D1 and D2 only touch Z2, D8 and D9 only Z3: their final measurement flips
    # share one Z2 (resp. Z3) final-boundary edge
    R = 3
    g = derive_model_graph(noisy(layout, R, table_noise))
    det = g.detectors
    e2 = g.edge_map()[(det.index(1, R + 1), g.boundary)]
    e3 = g.edge_map()[(det.index(2, R + 1), g.boundary)]
    assert set(e2.soft_slots) == {4 * R + 0, 4 * R + 1}
    assert set(e3.soft_slots) == {4 * R + 7, 4 * R + 8}


def test_graph_json_roundtrip(tmp_path, layout, table_noise):
    g = derive_model_graph(noisy(layout, 3, table_noise))
    g.save(tmp_path / "g.json", layout)
    doc = json.loads((tmp_path / "g.json").read_text())
    assert doc["format_version"] == 1
    assert doc["nodes"][0] == {"ancilla": "Z1", "round": 1, "final": False}
    assert any(e["v"] == BOUNDARY for e in doc["edges"])
    assert {"u", "v", "p", "kind", "logical_flip", "soft_slot"} <= set(doc["edges"][0])
    assert doc["meta"]["source"] == "model" and "params_hash" in doc["meta"]
    back = DecodingGraph.load(tmp_path / "g.json")
    assert back.edges == g.edges and back.rounds == 3


# --------------------------------------------------------------------------- estimation


def test_two_node_shared_edge_recovered(rng):
    topo = two_node_topology()
    x = sample_from_graph(topo, 10**6, rng)
    est = estimate_correlation_graph(x, topo)
    p = {e.key: e.p for e in est.edges}
    assert abs(p[(0, 1)] - 0.1) < 0.003
    assert abs(p[(0, 2)] - 0.05) < 0.003 and abs(p[(1, 2)] - 0.05) < 0.003
    assert est.meta["source"] == "estimated" and est.meta["shots"] == 10**6


def test_independent_nodes_give_zero_pair(rng):
    topo = two_node_topology()
    topo.edges[0] = Edge(0, 1, 0.0, "ancilla-time", 0)
    x = sample_from_graph(topo, 400000, rng)
    est = estimate_correlation_graph(x, topo)
    assert abs(est.edges[0].p) <= 3 * est.meta["stderr"][0] + 1e-12


def test_boundary_only_node(rng):
    topo = two_node_topology()
    topo.edges[0] = Edge(0, 1, 0.0, "ancilla-time", 0)
    topo.edges[1] = Edge(0, 2, 0.2, "boundary", 0)
    x = sample_from_graph(topo, 10**6, rng)
    est = estimate_correlation_graph(x, topo)
    assert abs(est.edge_map()[(0, 2)].p - 0.2) < 0.003


def test_degenerate_estimate_clamped_and_flagged():
    topo = two_node_topology()
    # perfectly anti-correlated nodes: negative covariance
    x = np.array([[1, 0], [0, 1]] * 500, dtype=np.uint8)
    est = estimate_correlation_graph(x, topo)
    assert est.edges[0].p == 0.0 and est.meta["degenerate"][0]


def test_stderr_is_calibrated(rng):
    topo = two_node_topology()
    ests, ses = [], []
    for _ in range(40):
        est = estimate_correlation_graph(sample_from_graph(topo, 20000, rng), topo)
        ests.append(est.edges[0].p)
        ses.append(est.meta["stderr"][0])
    ratio = np.std(ests, ddof=1) / np.mean(ses)
    assert 0.6 < ratio < 1.5


def test_estimator_recovers_circuit_model(layout):
    p = NoiseParams(p_1q=1.5e-3, p_2q=1.5e-2, p_meas_qubit=3e-3, p_meas_class=3e-3)
    c = noisy(layout, 2, p)
    model = derive_model_graph(c)
    ref = reference_outcomes(c, "000000000")
    b = sample_shots(c, "000000000", 400000, seed=5)
    est = estimate_correlation_graph(extract_detectors(b.hard_bits, ref, layout, 2), model)
    for e, m, se in zip(est.edges, model.edges, est.meta["stderr"]):
        tol = 5 if m.v == model.boundary else 4
        assert abs(e.p - m.p) <= tol * se + 1e-9, (m.key, m.p, e.p, se)


def test_topology_mismatch_rejected(layout, table_noise):
    g = derive_model_graph(noisy(layout, 2, table_noise))
    with pytest.raises(GraphError):
        estimate_correlation_graph(np.zeros((10, 5), np.uint8), g)
    other = derive_model_graph(noisy(layout, 3, table_noise))
    with pytest.raises(GraphError):
        apply_noise_floor(g, other)


# --------------------------------------------------------------------------- floor


def test_noise_floor_examples():
    topo = two_node_topology()
    est = topo.copy()
    est.edges[0].p, est.edges[1].p, est.edges[2].p = 1e-9, 0.02, 0.0
    floor = topo.copy()
    floor.edges[0].p = floor.edges[1].p = floor.edges[2].p = 3e-4
    out = apply_noise_floor(est, floor)
    assert [e.p for e in out.edges] == [3e-4, 0.02, 3e-4]
    assert [e.source for e in out.edges] == ["floored", "model", "floored"]
    assert out.weights()[0] == pytest.approx(math.log((1 - 3e-4) / 3e-4))


def test_floor_graph_strictly_positive(layout, table_noise):
    g = derive_model_graph(noisy(layout, 4, table_noise))
    assert min(e.p for e in g.edges) > 0


@settings(max_examples=100)
@given(st.lists(st.floats(0.0, 0.49), min_size=3, max_size=3), st.lists(st.floats(0.0, 0.49), min_size=3, max_size=3))
def test_floor_is_monotone(est_p, floor_p):
    topo = two_node_topology()
    est, floor = topo.copy(), topo.copy()
    for e, p in zip(est.edges, est_p):
        e.p = p
    for e, p in zip(floor.edges, floor_p):
        e.p = p
    out = apply_noise_floor(est, floor)
    assert [e.key for e in out.edges] == [e.key for e in est.edges]
    for o, e, f in zip(out.edges, est.edges, floor.edges):
        assert o.p == max(e.p, f.p)


def test_weight_from_p():
    assert weight_from_p(0.5) == 0.0
    assert weight_from_p(0.1) == pytest.approx(math.log(9))


# --------------------------------------------------------------------------- diagnostics


def test_correlation_matrix_noiseless_and_range(layout, table_noise):
    assert not correlation_matrix(np.zeros((100, 8), np.uint8)).any()
    with pytest.raises(GraphError):
        correlation_matrix(np.zeros((1, 8), np.uint8))
    c = noisy(layout, 3, table_noise)
    ref = reference_outcomes(c, "000000000")
    d = extract_detectors(sample_shots(c, "000000000", 20000, 1).hard_bits, ref, layout, 3)
    m = correlation_matrix(d)
    assert np.allclose(m, m.T)
    assert m.max() <= 0.5 and m.min() > -0.01


def test_classification_noise_gives_lag_two_band(layout):
    R = 6
    c = attach_noise(build_memory_circuit(layout, R, ONLY_CLASS.replace(p_meas_class=0.03)), ONLY_CLASS.replace(p_meas_class=0.03))
    ref = reference_outcomes(c, "000000000")
    d = extract_detectors(sample_shots(c, "000000000", 50000, 2).hard_bits, ref, layout, R)
    m = correlation_matrix(d)
    det = DetectorSet(4, R)
    lag2 = [m[det.index(a, r), det.index(a, r + 2)] for a in range(4) for r in range(1, R - 1)]
    lag1 = [m[det.index(a, r), det.index(a, r + 1)] for a in range(4) for r in range(1, R - 1)]
    assert min(lag2) > 0.02 and max(np.abs(lag1)) < 0.005


def test_defect_rate(layout, table_noise):
    assert not defect_rate(np.zeros((10, 12), np.uint8), 4, 2).any()
    R = 6
    c = noisy(layout, R, table_noise)
    ref = reference_outcomes(c, "000000000")
    d = extract_detectors(sample_shots(c, "000000000", 40000, 3).hard_bits, ref, layout, R)
    rate = defect_rate(d, 4, R)
    assert rate.shape == (R + 1, 4)
    assert (rate >= 0).all() and (rate <= 0.5).all()
    assert rate[0].mean() < rate[2:R].mean()
