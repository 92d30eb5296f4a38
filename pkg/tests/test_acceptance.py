"""Full-scale acceptance criteria; each test records one PASS/FAIL line."""

import contextlib
import math
import time

import numpy as np
import pytest
from scipy import integrate, special

import conftest
from conftest import noisy
from surface13 import readout as ro
from surface13.code_model import build_surface13, codeword_states
from surface13.decoders import brute_force_ml, mwpm_decode
from surface13.decoding_graph import derive_model_graph, estimate_correlation_graph, single_error_signatures
from surface13.experiment import (
    ReadoutConfig,
    RunConfig,
    calibrate_readout,
    compare_soft_hard,
    fidelity_model,
    fit_curve,
    fit_error_rate,
    run_memory_experiment,
    truth_readout,
)
from surface13.noisy_circuit import NoiseParams
from test_decoders import random_graph
from test_decoding_graph import sample_from_graph

pytestmark = pytest.mark.acceptance

LAYOUT = build_surface13()
ROUNDS = (1, 2, 4, 8, 16)
SHOTS_PER_STATE = 6250  # x 16 codewords = 1e5 shots per round point
SEED = 11


@contextlib.contextmanager
def criterion(n, what):
    """Record PASS/FAIL for criterion ``n``; ``what`` is filled in by the body."""
    info = {}
    try:
        yield info
    except BaseException:
        line = f"FAIL criterion {n}: {what} {info.get('detail', '')}".rstrip()
        conftest.ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    line = f"PASS criterion {n}: {what} {info.get('detail', '')}".rstrip()
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)


def test_criterion_1_noiseless_invariants():
    with criterion(1, "noiseless invariants") as info:
        t0 = time.perf_counter()
        cfg = RunConfig(
            rounds=tuple(range(1, 17)), shots=4, seed=SEED, noise=NoiseParams.noiseless(),
            readout=ReadoutConfig(assignment_error=1e-12, truth_model="gaussmix", calibration_shots=500),
        )
        res = run_memory_experiment(cfg)
        elapsed = time.perf_counter() - t0
        assert len(cfg.states) == 16
        assert all(not out.task.defects.any() for out in res.outputs)
        bad = [(d, r) for d in cfg.decoders for r in cfg.rounds if res.curve.point(d, r)[0] != 1.0]
        info["detail"] = f"({len(res.outputs)} state/round tasks, {len(cfg.decoders)} decoders, {elapsed:.1f} s)"
        assert not bad
        assert elapsed < 10


def test_criterion_2_matchability_audit():
    with criterion(2, "single-error matchability") as info:
        t0 = time.perf_counter()
        total, worst = 0, 0
        for r in range(1, 6):
            errors, dets, _ = single_error_signatures(noisy(LAYOUT, r))
            total += len(errors)
            worst = max(worst, int(dets.sum(axis=1).max()))
        elapsed = time.perf_counter() - t0
        info["detail"] = f"({total} faults, max {worst} detectors, {elapsed:.1f} s)"
        assert worst <= 2
        assert elapsed < 60


def test_criterion_3_matching_exactness():
    with criterion(3, "mwpm weight equals brute force") as info:
        rng = np.random.default_rng(SEED)
        agree = 0
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            g = random_graph(rng, n, int(rng.integers(n, 2 * n + 4)))
            d = (rng.random(n) < 0.6).astype(np.uint8)
            _, m = mwpm_decode(g, d)
            _, w = brute_force_ml(g, d, return_weight=True)
            agree += math.isclose(m.weight, w, rel_tol=1e-12, abs_tol=1e-12)
        info["detail"] = f"({agree}/1000)"
        assert agree == 1000


def test_criterion_4_estimator_recovery():
    with criterion(4, "estimator recovery from 1e6 shots") as info:
        model = derive_model_graph(noisy(LAYOUT, 4))
        defects = sample_from_graph(model, 10**6, np.random.default_rng(SEED))
        est = estimate_correlation_graph(defects, model)
        truth = model.edge_map()
        se = est.meta["stderr"]
        worst_bulk = worst_boundary = 0.0
        for k, e in enumerate(est.edges):
            z = abs(e.p - truth[e.key].p) / se[k]
            if e.v == est.boundary:
                worst_boundary = max(worst_boundary, z)
            else:
                worst_bulk = max(worst_bulk, z)
        info["detail"] = f"({len(est.edges)} edges, worst bulk {worst_bulk:.2f} SE, worst boundary {worst_boundary:.2f} SE)"
        assert worst_bulk <= 4 and worst_boundary <= 5


def test_criterion_5_readout_math():
    with criterion(5, "readout math") as info:
        rng = np.random.default_rng(SEED)
        sigma = ro.tune_sigma(0.01, 2.0)
        m = ro.GaussMix(-1.0, 1.0, sigma)
        n = 10**6
        flips = np.mean(ro.harden_two_state(m, rng.normal(-1, sigma, n)) == 1) + np.mean(ro.harden_two_state(m, rng.normal(1, sigma, n)) == 0)
        mc = flips / 2
        analytic = 0.5 * special.erfc(2.0 / (2 * sigma * math.sqrt(2)))
        z = abs(mc - analytic) / math.sqrt(analytic * (1 - analytic) / (2 * n))
        worst_norm = 0.0
        for model in (m, ro.GaussMix(-0.5, 2.0, 0.3, 0.05, 0.1), ro.AmpDamp(-1.0, 1.0, 0.4, 0.3)):
            for state in (0, 1):
                pts = [-12.0, min(model.mu0, model.mu1), max(model.mu0, model.mu1), 12.0]
                total = sum(integrate.quad(lambda x: ro.pdf(model, x, state), a, b, limit=400, epsabs=1e-13, epsrel=1e-12)[0] for a, b in zip(pts, pts[1:]))
                worst_norm = max(worst_norm, abs(total - 1))
        q = ro.classification_error_prob(ro.GaussMix(-1.0, 1.0, 1.0), 1.0, 1)
        q_err = abs(q - math.exp(-2) / (1 + math.exp(-2)))
        info["detail"] = f"(MC {mc:.5f} vs {analytic:.5f}, {z:.2f} sigma; norm err {worst_norm:.1e}; q err {q_err:.1e})"
        assert z < 3 and worst_norm < 1e-9 and q_err < 1e-12


def test_criterion_6_fit_roundtrip():
    with criterion(6, "fit round-trip") as info:
        n = np.array(ROUNDS)
        exact = fit_error_rate(n, fidelity_model(n, 0.05, 0.5))
        exact_err = max(abs(exact.eps - 0.05), abs(exact.n0 - 0.5))
        rng = np.random.default_rng(SEED)
        shots = 20000
        inside = 0
        for _ in range(100):
            F = fidelity_model(n, 0.03, 0.3)
            Fs = rng.binomial(shots, F) / shots
            fit = fit_error_rate(n, Fs, np.sqrt(Fs * (1 - Fs) / shots))
            inside += abs(fit.eps - 0.03) <= 2 * fit.eps_err
        info["detail"] = f"(exact error {exact_err:.1e}, {inside}/100 within 2 sigma)"
        assert exact_err < 1e-6 and inside >= 90


# --------------------------------------------------------------------------- full memory experiment


def table_config(**kw):
    base = dict(rounds=ROUNDS, shots=SHOTS_PER_STATE, seed=SEED, readout=ReadoutConfig(), graph="estimated")
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def table_run():
    t0 = time.perf_counter()
    res = run_memory_experiment(table_config())
    return res, time.perf_counter() - t0


def test_criterion_7_soft_beats_hard(table_run):
    res, elapsed = table_run
    with criterion(7, "soft MWPM reduces eps") as info:
        rep = compare_soft_hard(res)
        n = res.curve.point("mwpm_hard", ROUNDS[0])[2]
        info["detail"] = (
            f"(reduction {100 * rep['reduction']:.2f}% +- {100 * rep['reduction_err']:.2f}%, "
            f"{rep['significance']:.1f} sigma, reference 6.8%; {n} shots per point, {elapsed:.0f} s)"
        )
        assert n >= 10**5
        assert rep["reduction"] > 0 and rep["significance"] >= 3


def test_criterion_8_magnitude_and_ordering(table_run):
    res, _ = table_run
    with criterion(8, "hard eps in [1%, 10%] and decoder ordering") as info:
        eps = {d: fit_curve(res.curve, d) for d in ("no_corr", "lut", "mwpm_hard", "mwpm_soft")}
        info["detail"] = "(" + ", ".join(f"{d} {100 * f.eps:.3f}+-{100 * f.eps_err:.3f}%" for d, f in eps.items()) + ", reference 5.30%)"
        assert eps["no_corr"].eps > eps["lut"].eps > eps["mwpm_hard"].eps > eps["mwpm_soft"].eps
        assert 0.01 <= eps["mwpm_hard"].eps <= 0.10


def test_criterion_9_readout_model_equivalence(table_run):
    res, _ = table_run
    with criterion(9, "gaussmix vs ampdamp decoding") as info:
        cfg = table_config(decoders=("mwpm_soft",))
        truth = truth_readout(cfg)
        amp = calibrate_readout(cfg, truth, kind="ampdamp")
        other = run_memory_experiment(cfg, keep_shots=False, truth=truth, decode_model=amp)
        a, b = fit_curve(res.curve, "mwpm_soft"), fit_curve(other.curve, "mwpm_soft")
        delta = abs(a.eps - b.eps)
        sigma = min(a.eps_err, b.eps_err)
        info["detail"] = f"(gaussmix {100 * a.eps:.4f}%, ampdamp {100 * b.eps:.4f}%, |delta| {100 * delta:.4f}% vs sigma {100 * sigma:.4f}%)"
        assert delta < sigma


def test_criterion_10_qed_survival(table_run):
    res, _ = table_run
    with criterion(10, "QED survival") as info:
        surv = []
        for r in ROUNDS:
            _, _, acc, att = res.curve.point("qed", r)
            surv.append(acc / att)
        surv = np.array(surv)
        slope, icpt = np.polyfit(ROUNDS, np.log(surv), 1)
        resid = np.log(surv) - (icpt + slope * np.array(ROUNDS))
        info["detail"] = f"(survival {np.round(surv, 4).tolist()}, rate {math.exp(slope):.3f}/round, max log residual {np.abs(resid).max():.3f})"
        assert np.all(np.diff(surv) < 0)
        assert np.abs(resid).max() < 0.1
        assert surv[-1] < 0.10
