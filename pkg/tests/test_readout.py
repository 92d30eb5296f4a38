import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from surface13 import readout as ro
from surface13.readout import (
    AmpDamp,
    GaussMix,
    ProjectionAxis,
    QubitReadout,
    ReadoutError,
    ReadoutModel,
    ThreeState,
)

SYM = GaussMix(-1.0, 1.0, 1.0)
finite_z = st.floats(-30, 30, allow_nan=False)


def quad(f, lo=-np.inf, hi=np.inf):
    return integrate.quad(f, lo, hi, limit=400, epsabs=1e-13, epsrel=1e-12)[0]


def ampdamp_oracle(z, mu0, mu1, sigma, gamma):
    """Direct numerical mixture over the decay time (no closed form)."""
    no_decay = math.exp(-gamma) * stats.norm.pdf(z, mu1, sigma)
    decayed = quad(lambda s: gamma * math.exp(-gamma * s) * stats.norm.pdf(z, mu0 + s * (mu1 - mu0), sigma), 0.0, 1.0)
    return no_decay + decayed


# --------------------------------------------------------------------------- projection


def test_projection_examples(rng):
    axis = ProjectionAxis.from_means((0.2, -0.4), (1.4, 0.9))
    m0, m1 = np.array([0.2, -0.4]), np.array([1.4, 0.9])
    assert ro.project(m0, axis) == pytest.approx(-0.5 * np.linalg.norm(m1 - m0))
    mid = 0.5 * (m0 + m1)
    bisector = mid + 3.0 * np.array(axis.perpendicular)
    assert ro.project(bisector, axis) == pytest.approx(ro.project(mid, axis), abs=1e-12)
    pts = rng.normal(size=(50, 2))
    back = axis.embed(axis.project(pts), axis.residual(pts))
    assert np.allclose(back, pts)


# --------------------------------------------------------------------------- densities


def test_gaussmix_examples():
    g = GaussMix(-1.0, 1.0, 0.7)
    assert ro.pdf_gaussmix(g, -1.0, 0) == pytest.approx(1 / (0.7 * math.sqrt(2 * math.pi)))
    half = GaussMix(-1.0, 1.0, 0.7, 0.5, 0.5)
    z = np.linspace(-4, 4, 41)
    assert np.allclose(ro.pdf_gaussmix(half, z, 0), ro.pdf_gaussmix(half, z, 1))
    left = quad(lambda x: ro.pdf_gaussmix(SYM, x, 1), -np.inf, 0.0)
    assert left == pytest.approx(stats.norm.cdf(-1.0), abs=1e-9)
    assert round(left, 5) == 0.15866


@pytest.mark.parametrize("gamma", [0.0, 0.014, 0.1, 1.0, 5.0])
def test_ampdamp_matches_direct_mixture(gamma):
    m = AmpDamp(-1.0, 1.0, 0.4, gamma)
    for z in np.linspace(-2.5, 2.5, 11):
        assert ro.pdf_ampdamp(m, z, 1) == pytest.approx(ampdamp_oracle(z, -1.0, 1.0, 0.4, gamma), rel=1e-8, abs=1e-14)


def test_ampdamp_reversed_axis_orientation():
    m = AmpDamp(1.0, -1.0, 0.4, 0.3)
    for z in (-1.2, 0.0, 0.7):
        assert ro.pdf_ampdamp(m, z, 1) == pytest.approx(ampdamp_oracle(z, 1.0, -1.0, 0.4, 0.3), rel=1e-8)


@pytest.mark.parametrize(
    "model",
    [GaussMix(-1, 1, 0.4), GaussMix(-1, 1, 0.4, 0.02, 0.1), AmpDamp(-1, 1, 0.4, 0.0), AmpDamp(-1, 1, 0.4, 0.1), AmpDamp(-1, 1, 0.4, 1.0), AmpDamp(0.3, -2.0, 0.25, 3.0)],
)
def test_pdf_normalization(model):
    for state in (0, 1):
        lo = min(model.mu0, model.mu1) - 15 * model.sigma
        hi = max(model.mu0, model.mu1) + 15 * model.sigma
        pts = sorted({lo, model.mu0, model.mu1, hi})
        total = sum(quad(lambda z: ro.pdf(model, z, state), a, b) for a, b in zip(pts, pts[1:]))
        assert abs(total - 1) < 1e-9


def test_ampdamp_first_moment_moves_toward_mu0():
    means = []
    for gamma in (0.0, 0.1, 1.0):
        m = AmpDamp(-1.0, 1.0, 0.4, gamma)
        means.append(quad(lambda z: z * ro.pdf_ampdamp(m, z, 1), -8, 8))
    assert means[0] == pytest.approx(1.0, abs=1e-9)
    assert means[0] > means[1] > means[2]


def test_gamma_zero_ampdamp_equals_alpha_zero_gaussmix():
    z = np.linspace(-6, 6, 601)
    g, a = GaussMix(-0.8, 1.1, 0.45), AmpDamp(-0.8, 1.1, 0.45, 0.0)
    for state in (0, 1):
        assert np.max(np.abs(ro.pdf_gaussmix(g, z, state) - ro.pdf_ampdamp(a, z, state))) < 1e-12


def test_log_domain_far_tail_is_finite():
    for m in (SYM, AmpDamp(-1, 1, 0.3, 0.2)):
        for z in (-400.0, 400.0):
            p0, p1 = ro.posterior(m, z)
            assert np.isfinite(p0) and np.isfinite(p1) and p0 + p1 == pytest.approx(1.0)


# --------------------------------------------------------------------------- sampling


def _readout(model, three=None):
    return QubitReadout(model, ProjectionAxis((0.0, 0.0), (1.0, 0.0)), three)


def test_sample_narrow_model_hits_mean(rng):
    r = _readout(GaussMix(-1.0, 1.0, 1e-12))
    pts = r.sample_iq(1, rng, 5)
    assert np.allclose(pts, [[1.0, 0.0]] * 5, atol=1e-9)


def test_sample_mean_state0(rng):
    n = 10**6
    r = _readout(GaussMix(-1.0, 1.0, 0.5))
    z = r.sample_iq(0, rng, n)[:, 0]
    assert abs(z.mean() + 1.0) < 5 * 0.5 / math.sqrt(n)


def test_sample_state2(rng):
    three = ThreeState([[-1, 0], [1, 0], [0, 4]], [np.eye(2) * 0.04] * 3, np.eye(3))
    pts = _readout(GaussMix(-1, 1, 0.2), three).sample_iq(2, rng, 2000)
    assert np.allclose(pts.mean(axis=0), [0, 4], atol=0.02)
    with pytest.raises(ReadoutError):
        _readout(GaussMix(-1, 1, 0.2)).sample_iq(2, rng, 3)


def test_ampdamp_sampler_matches_density(rng):
    m = AmpDamp(-1.0, 1.0, 0.3, 0.8)
    z = _readout(m).sample_iq(1, rng, 200000)[:, 0]
    edges = np.linspace(-2.5, 2.5, 26)
    counts, _ = np.histogram(z, edges)
    expected = np.array([quad(lambda x: ro.pdf_ampdamp(m, x, 1), a, b) for a, b in zip(edges, edges[1:])]) * len(z)
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert chi2 < stats.chi2.ppf(0.999, len(counts))


# --------------------------------------------------------------------------- classification


def test_harden_examples():
    assert ro.harden_two_state(SYM, 0.0) == 0
    assert ro.harden_two_state(GaussMix(-1, 1, 0.1), 1.0) == 1
    assert ro.harden_two_state(SYM, 1e-9) == 1 and ro.harden_two_state(SYM, -1e-9) == 0


def test_three_state_examples():
    three = ThreeState([[-1, 0], [1, 0], [0, 3]], [np.eye(2) * 0.1] * 3, np.eye(3))
    assert ro.classify_three_state(three, [0, 3]) == 2
    assert ro.classify_three_state(three, [0, -5]) == 0  # equidistant from 0 and 1


def test_three_state_confusion_matches_quadrature(rng):
    three = ThreeState([[-1, 0], [1, 0], [0, 20]], [np.eye(2)] * 3, np.eye(3))
    r = _readout(GaussMix(-1, 1, 1.0), three)
    n = 200000
    pts = r.sample_iq(2, rng, 10)  # state 2 is far: never confused
    assert (ro.classify_three_state(three, pts) == 2).all()
    pts0 = rng.multivariate_normal([-1, 0], np.eye(2), n)
    wrong = np.mean(ro.classify_three_state(three, pts0) == 1)
    overlap = quad(lambda x: stats.norm.pdf(x, -1, 1), 0, np.inf)
    assert abs(wrong - overlap) < 3 * math.sqrt(overlap * (1 - overlap) / n)


def test_posterior_examples():
    assert ro.posterior(SYM, 0.0) == pytest.approx((0.5, 0.5))
    p0, p1 = ro.posterior(SYM, 1.0)
    # log-likelihood ratio at z is z * (mu1 - mu0) / sigma^2 = 2
    assert p1 == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-12)
    assert round(p1, 5) == 0.88080
    assert ro.posterior(SYM, 60.0)[1] == pytest.approx(1.0)


def test_classification_error_examples():
    assert ro.classification_error_prob(SYM, 0.0) == pytest.approx(0.5)
    q = ro.classification_error_prob(SYM, 1.0, 1)
    assert abs(q - math.exp(-2) / (1 + math.exp(-2))) < 1e-12
    assert round(q, 5) == 0.11920
    assert ro.classification_error_prob(SYM, 40.0) < 1e-11


def test_classification_error_uses_dominant_gaussians_only():
    mix = GaussMix(-1.0, 1.0, 1.0, 0.2, 0.3)
    assert ro.classification_error_prob(mix, 1.0, 1) == pytest.approx(ro.classification_error_prob(SYM, 1.0, 1))


def test_defect_probability_examples():
    for d in (0, 1):
        assert ro.defect_probability(0, 0, d) == d
        assert ro.defect_probability(0.5, 0.13, d) == pytest.approx(0.5)
    assert ro.defect_probability(0.1, 0, 0) == pytest.approx(0.1)
    # enumeration of the four joint flip outcomes
    qa, qb = 0.2, 0.35
    odd = qa * (1 - qb) + (1 - qa) * qb
    assert ro.defect_probability(qa, qb, 1) == pytest.approx(1 - odd)


def test_mean_classification_error_examples(rng):
    assert ro.mean_classification_error(SYM, np.zeros(10)) == pytest.approx(0.5)
    with pytest.raises(ReadoutError):
        ro.mean_classification_error(SYM, [])
    far = GaussMix(-100.0, 100.0, 1.0)
    z = np.concatenate([rng.normal(-100, 1, 1000), rng.normal(100, 1, 1000)])
    assert ro.mean_classification_error(far, z) < 1e-11


def test_mean_classification_error_matches_quadrature(rng):
    m = GaussMix(-1.0, 1.0, 0.6)
    n = 200000
    z = np.concatenate([rng.normal(-1, 0.6, n), rng.normal(1, 0.6, n)])
    q = ro.classification_error_prob(m, z)

    def integrand(x):
        p0, p1 = stats.norm.pdf(x, -1, 0.6), stats.norm.pdf(x, 1, 0.6)
        return min(p0, p1) / (p0 + p1) * 0.5 * (p0 + p1)

    expected = quad(integrand, -8, 0) + quad(integrand, 0, 8)
    assert abs(q.mean() - expected) < 3 * q.std() / math.sqrt(len(q))


def test_assignment_error_monte_carlo(rng):
    m = GaussMix(-1.0, 1.0, 0.5)
    n = 400000
    z0 = rng.normal(-1, 0.5, n)
    z1 = rng.normal(1, 0.5, n)
    err = 0.5 * (np.mean(ro.harden_two_state(m, z0) == 1) + np.mean(ro.harden_two_state(m, z1) == 0))
    analytic = 0.5 * special.erfc(2.0 / (2 * 0.5 * math.sqrt(2)))
    assert abs(err - analytic) < 3 * math.sqrt(analytic * (1 - analytic) / (2 * n))
    assert ro.assignment_error(m) == pytest.approx(analytic, rel=1e-9)


@given(finite_z)
def test_posterior_normalized(z):
    for m in (SYM, GaussMix(-0.5, 2.0, 0.3, 0.05, 0.1), AmpDamp(-1, 1, 0.4, 0.3)):
        p0, p1 = ro.posterior(m, z)
        assert p0 + p1 == pytest.approx(1.0, abs=1e-12)


@given(finite_z)
def test_hardening_agrees_with_posterior(z):
    for m in (SYM, GaussMix(-0.5, 2.0, 0.3, 0.05, 0.1), AmpDamp(-1, 1, 0.4, 0.3)):
        p0, p1 = ro.posterior(m, z)
        if abs(p1 - p0) > 1e-12:
            assert ro.harden_two_state(m, z) == int(p1 > p0)


@settings(max_examples=200)
@given(st.floats(0.0, 5.0), st.floats(0.001, 1.0))
def test_classification_error_symmetric_and_decreasing(d, step):
    m = GaussMix(-0.3, 1.7, 0.8)
    mid = 0.7
    q_plus = ro.classification_error_prob(m, mid + d)
    q_minus = ro.classification_error_prob(m, mid - d)
    assert q_plus == pytest.approx(q_minus, rel=1e-9, abs=1e-15)
    assert q_plus <= 0.5
    far = ro.classification_error_prob(m, mid + d + step)
    assert far < q_plus or q_plus <= ro.Q_MIN * 1.0001


# --------------------------------------------------------------------------- calibration and files


def test_gaussmix_fit_recovers_parameters(rng):
    truth = GaussMix(-1.0, 1.0, 0.4, 0.05, 0.1)
    r = _readout(truth)
    n = 130000
    fit = ro.fit_gaussmix(r.sample_iq(0, rng, n)[:, 0], r.sample_iq(1, rng, n)[:, 0])
    for name in ("mu0", "mu1", "sigma", "alpha0", "alpha1"):
        assert getattr(fit, name) == pytest.approx(getattr(truth, name), rel=0.05)


def test_ampdamp_fit_recovers_parameters(rng):
    truth = AmpDamp(-1.0, 1.0, 0.4, 0.3)
    r = _readout(truth)
    n = 130000
    fit = ro.fit_ampdamp(r.sample_iq(0, rng, n)[:, 0], r.sample_iq(1, rng, n)[:, 0])
    for name in ("mu0", "mu1", "sigma", "gamma"):
        assert getattr(fit, name) == pytest.approx(getattr(truth, name), rel=0.05)


def test_three_state_fit_and_calibration(rng):
    truth = ro.symmetric_readout(["Z1"], 0.01, ancillas=("Z1",))["Z1"]
    n = 20000
    iq = [truth.sample_iq(s, rng, n) for s in (0, 1, 2)]
    cal = ro.calibrate_qubit(*iq)
    assert np.allclose(cal.three_state.means, truth.three_state.means, atol=0.02)
    assert cal.model.sigma == pytest.approx(truth.model.sigma, rel=0.05)


def test_tune_sigma_hits_target():
    for gamma in (0.0, 0.014):
        s = ro.tune_sigma(0.01, 2.0, gamma)
        assert ro.assignment_error(AmpDamp(-1, 1, s, gamma)) == pytest.approx(0.01, rel=1e-8)


def test_readout_model_roundtrip(tmp_path):
    model = ro.symmetric_readout(["D1", "Z1"], 0.01, kind="ampdamp", gamma=0.014, ancillas=("Z1",))
    model.save(tmp_path / "r.json")
    back = ReadoutModel.load(tmp_path / "r.json")
    assert back.to_dict() == model.to_dict()
    assert back["D1"].kind == "ampdamp"


def test_bad_parameters_rejected():
    with pytest.raises(ReadoutError):
        GaussMix(0.0, 0.0, 1.0)
    with pytest.raises(ReadoutError):
        AmpDamp(0.0, 1.0, 1.0, -0.1)
    with pytest.raises(ReadoutError):
        ro.pdf_gaussmix(SYM, 0.0, 2)


def test_tune_sigma_rejects_target_below_decay_floor():
    with pytest.raises(ReadoutError):
        ro.tune_sigma(1e-7, 2.0, gamma=0.05)
