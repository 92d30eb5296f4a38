"""Analog (IQ) readout models for dispersive measurement.

Two-state responses are handled in one dimension after projecting IQ points on
the axis through the |0> and |1> centroids. Two 1D models are provided:

* ``GaussMix``: each state is a two-component Gaussian mixture with a shared
  width; ``alpha`` is the weight of the *other* state's Gaussian.
* ``AmpDamp``: |0> is a Gaussian, |1> may decay to |0> at a uniformly
  integrated point of the measurement window with rate ``gamma`` = t_meas/T1.

Leakage (|2>) is only ever classified in 2D with ``ThreeState``.
All densities are evaluated in log space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import integrate, optimize, special

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
Q_MIN = 1e-12


class ReadoutError(ValueError):
    pass


# --------------------------------------------------------------------------- 1D models


@dataclass(frozen=True)
class GaussMix:
    mu0: float
    mu1: float
    sigma: float
    alpha0: float = 0.0
    alpha1: float = 0.0

    kind = "gaussmix"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ReadoutError("sigma must be positive")
        if self.mu0 == self.mu1:
            raise ReadoutError("mu0 and mu1 must differ")
        if not (0 <= self.alpha0 <= 1 and 0 <= self.alpha1 <= 1):
            raise ReadoutError("alpha must lie in [0, 1]")

    def to_dict(self):
        return dict(mu0=self.mu0, mu1=self.mu1, sigma=self.sigma, alpha0=self.alpha0, alpha1=self.alpha1)


@dataclass(frozen=True)
class AmpDamp:
    mu0: float
    mu1: float
    sigma: float
    gamma: float = 0.0

    kind = "ampdamp"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ReadoutError("sigma must be positive")
        if self.mu0 == self.mu1:
            raise ReadoutError("mu0 and mu1 must differ")
        if self.gamma < 0:
            raise ReadoutError("gamma must be non-negative")

    def to_dict(self):
        return dict(mu0=self.mu0, mu1=self.mu1, sigma=self.sigma, gamma=self.gamma)


TwoStateModel = Union[GaussMix, AmpDamp]


def _log_normal(z, mu, sigma):
    z = np.asarray(z, dtype=float)
    return -0.5 * ((z - mu) / sigma) ** 2 - math.log(sigma) - LOG_SQRT_2PI


def _log_ndtr_diff(b, a):
    """log(Phi(b) - Phi(a)) for b >= a, accurate in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lhi = special.log_ndtr(hi)
    llo = special.log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return lhi + np.log1p(-np.exp(llo - lhi))


def logpdf_gaussmix(params: GaussMix, z, state: int):
    if state not in (0, 1):
        raise ReadoutError(f"two-state model has no state {state}")
    own, other = (params.mu0, params.mu1) if state == 0 else (params.mu1, params.mu0)
    alpha = params.alpha0 if state == 0 else params.alpha1
    terms = []
    if alpha < 1:
        terms.append(math.log1p(-alpha) + _log_normal(z, own, params.sigma))
    if alpha > 0:
        terms.append(math.log(alpha) + _log_normal(z, other, params.sigma))
    return terms[0] if len(terms) == 1 else np.logaddexp(terms[0], terms[1])


def pdf_gaussmix(params: GaussMix, z, state: int):
    return np.exp(logpdf_gaussmix(params, z, state))


def logpdf_ampdamp(params: AmpDamp, z, state: int):
    if state not in (0, 1):
        raise ReadoutError(f"two-state model has no state {state}")
    if state == 0:
        return _log_normal(z, params.mu0, params.sigma)
    z = np.asarray(z, dtype=float)
    sign = 1.0 if params.mu1 > params.mu0 else -1.0
    z, mu0, mu1 = sign * z, sign * params.mu0, sign * params.mu1
    sigma, gamma = params.sigma, params.gamma
    peak = -gamma + _log_normal(z, mu1, sigma)
    if gamma == 0:
        return peak
    # decay at fraction s ~ gamma*exp(-gamma*s) of the window moves the mean to mu0 + s*(mu1 - mu0)
    k = gamma / (mu1 - mu0)
    shift = k * sigma**2
    tail = (
        math.log(k)
        - k * (z - mu0)
        + 0.5 * k * shift
        + _log_ndtr_diff((mu1 - z + shift) / sigma, (mu0 - z + shift) / sigma)
    )
    return np.logaddexp(peak, tail)


def pdf_ampdamp(params: AmpDamp, z, state: int):
    return np.exp(logpdf_ampdamp(params, z, state))


def logpdf(model: TwoStateModel, z, state: int):
    if isinstance(model, GaussMix):
        return logpdf_gaussmix(model, z, state)
    if isinstance(model, AmpDamp):
        return logpdf_ampdamp(model, z, state)
    raise ReadoutError(f"not a two-state model: {model!r}")


def pdf(model: TwoStateModel, z, state: int):
    return np.exp(logpdf(model, z, state))


def _dominant_logpdf(model: TwoStateModel, z, state: int):
    mu = model.mu0 if state == 0 else model.mu1
    return _log_normal(z, mu, model.sigma)


def harden_two_state(model: TwoStateModel, z):
    """Maximum-likelihood bit; equal densities resolve to 0."""
    out = logpdf(model, z, 1) > logpdf(model, z, 0)
    return out.astype(np.uint8) if isinstance(out, np.ndarray) else int(out)


def posterior(model: TwoStateModel, z):
    """(P(0|z), P(1|z)) with equal priors."""
    llr = logpdf(model, z, 1) - logpdf(model, z, 0)
    p1 = special.expit(llr)
    return 1.0 - p1, p1


def classification_error_prob(model: TwoStateModel, z, y=None):
    """Probability the hardened bit ``y`` is wrong, using only the dominant Gaussians.

    The result is clamped to [Q_MIN, 0.5].
    """
    if y is None:
        y = harden_two_state(model, z)
    y = np.asarray(y)
    l0 = _dominant_logpdf(model, z, 0)
    l1 = _dominant_logpdf(model, z, 1)
    diff = np.where(y == 1, l0 - l1, l1 - l0)
    q = np.clip(special.expit(diff), Q_MIN, 0.5)
    return float(q) if q.ndim == 0 else q


def defect_probability(q_a, q_b, hard_defect):
    """Probability that a detector built from two measurements is truly 1.

    ``q_a``/``q_b`` are the per-measurement flip posteriors.
    """
    q_a = np.asarray(q_a, float)
    q_b = np.asarray(q_b, float)
    odd = q_a * (1 - q_b) + q_b * (1 - q_a)
    out = np.where(np.asarray(hard_defect) == 1, 1 - odd, odd)
    return float(out) if out.ndim == 0 else out


def mean_classification_error(model: TwoStateModel, z, y=None) -> float:
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise ReadoutError("empty sample")
    return float(np.mean(classification_error_prob(model, z, y)))


def assignment_error(model: TwoStateModel) -> float:
    """Average hard-assignment error 1/2 * (P(1|0) + P(0|1)) by quadrature."""
    lo = min(model.mu0, model.mu1) - 12 * model.sigma
    hi = max(model.mu0, model.mu1) + 12 * model.sigma
    mid = 0.5 * (model.mu0 + model.mu1)

    def f(z):
        return 0.5 * min(pdf(model, z, 0), pdf(model, z, 1))

    parts = [integrate.quad(f, a, b, limit=200, epsabs=1e-14)[0] for a, b in ((lo, mid), (mid, hi))]
    return float(sum(parts))


# --------------------------------------------------------------------------- 2D pieces


@dataclass(frozen=True)
class ProjectionAxis:
    origin: tuple[float, float]
    direction: tuple[float, float]

    def __post_init__(self):
        norm = math.hypot(*self.direction)
        if abs(norm - 1) > 1e-9:
            raise ReadoutError("projection direction must be a unit vector")

    @classmethod
    def from_means(cls, mean0, mean1) -> "ProjectionAxis":
        m0 = np.asarray(mean0, float)
        m1 = np.asarray(mean1, float)
        d = m1 - m0
        norm = np.linalg.norm(d)
        if norm == 0:
            raise ReadoutError("state means coincide")
        mid = 0.5 * (m0 + m1)
        return cls((float(mid[0]), float(mid[1])), (float(d[0] / norm), float(d[1] / norm)))

    @property
    def perpendicular(self):
        return (-self.direction[1], self.direction[0])

    def project(self, point):
        p = np.asarray(point, float)
        return (p[..., 0] - self.origin[0]) * self.direction[0] + (p[..., 1] - self.origin[1]) * self.direction[1]

    def residual(self, point):
        p = np.asarray(point, float)
        u = self.perpendicular
        return (p[..., 0] - self.origin[0]) * u[0] + (p[..., 1] - self.origin[1]) * u[1]

    def embed(self, parallel, perpendicular=0.0):
        par = np.asarray(parallel, float)[..., None]
        perp = np.asarray(perpendicular, float)[..., None]
        return np.asarray(self.origin) + par * np.asarray(self.direction) + perp * np.asarray(self.perpendicular)

    def to_dict(self):
        return {"origin": list(self.origin), "direction": list(self.direction)}


def project(point, axis: ProjectionAxis):
    return axis.project(point)


@dataclass(frozen=True)
class ThreeState:
    """2D Gaussian blobs for |0>, |1>, |2>; ``weights[i, j]`` is the share of
    prepared-state-i shots that land in blob j (decay tails)."""

    means: np.ndarray
    covs: np.ndarray
    weights: np.ndarray

    kind = "three_state"

    def __post_init__(self):
        means = np.asarray(self.means, float).reshape(3, 2)
        covs = np.asarray(self.covs, float).reshape(3, 2, 2)
        weights = np.asarray(self.weights, float).reshape(3, 3)
        for c in covs:
            if not np.allclose(c, c.T) or np.linalg.eigvalsh(c).min() <= 0:
                raise ReadoutError("covariances must be symmetric positive-definite")
        if np.any(weights < 0) or not np.allclose(weights.sum(axis=1), 1):
            raise ReadoutError("sub-mixture weights must be non-negative and sum to 1 per state")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "weights", weights)

    def blob_logpdfs(self, points) -> np.ndarray:
        pts = np.asarray(points, float)
        out = []
        for mu, cov in zip(self.means, self.covs):
            inv = np.linalg.inv(cov)
            d = pts - mu
            maha = np.einsum("...i,ij,...j->...", d, inv, d)
            out.append(-0.5 * maha - 0.5 * math.log(np.linalg.det(cov)) - 2 * LOG_SQRT_2PI)
        return np.stack(out, axis=-1)

    def logpdfs(self, points) -> np.ndarray:
        """Log-density of ``points`` under each prepared state, shape (..., 3)."""
        blobs = self.blob_logpdfs(points)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return special.logsumexp(blobs[..., None, :] + logw, axis=-1)

    def to_dict(self):
        return {"means": self.means.tolist(), "covs": self.covs.tolist(), "weights": self.weights.tolist()}


def classify_three_state(params: ThreeState, point):
    """Maximum-likelihood state in {0, 1, 2}; ties go to the lower index."""
    lp = params.logpdfs(point)
    out = np.argmax(lp, axis=-1)
    return int(out) if np.ndim(out) == 0 else out.astype(np.uint8)


# --------------------------------------------------------------------------- per-qubit readout


@dataclass(frozen=True)
class QubitReadout:
    model: TwoStateModel
    axis: ProjectionAxis
    three_state: Optional[ThreeState] = None

    @property
    def kind(self) -> str:
        return self.model.kind

    def sample_iq(self, state: int, rng: np.random.Generator, size=None) -> np.ndarray:
        return sample_iq(self, state, rng, size)

    def to_dict(self):
        doc = {"kind": self.model.kind, "params": self.model.to_dict(), "axis": self.axis.to_dict()}
        if self.three_state is not None:
            doc["three_state"] = self.three_state.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "QubitReadout":
        kind = doc["kind"]
        axis = ProjectionAxis(tuple(doc["axis"]["origin"]), tuple(doc["axis"]["direction"]))
        three = ThreeState(**doc["three_state"]) if doc.get("three_state") else None
        if kind == "gaussmix":
            model = GaussMix(**doc["params"])
        elif kind == "ampdamp":
            model = AmpDamp(**doc["params"])
        elif kind == "three_state":
            if three is None:
                three = ThreeState(**doc["params"])
            model = _two_state_from_three(three, axis)
        else:
            raise ReadoutError(f"unknown readout model kind {kind!r}")
        return cls(model, axis, three)


def _two_state_from_three(three: ThreeState, axis: ProjectionAxis) -> GaussMix:
    mu0, mu1 = axis.project(three.means[0]), axis.project(three.means[1])
    d = np.asarray(axis.direction)
    sigma = math.sqrt(0.5 * (d @ three.covs[0] @ d + d @ three.covs[1] @ d))
    return GaussMix(float(mu0), float(mu1), sigma)


def _sample_1d(model: TwoStateModel, state: int, rng, size):
    n = 1 if size is None else size
    if isinstance(model, GaussMix):
        own, other = (model.mu0, model.mu1) if state == 0 else (model.mu1, model.mu0)
        alpha = model.alpha0 if state == 0 else model.alpha1
        means = np.where(rng.random(n) < alpha, other, own)
    else:
        means = np.full(n, model.mu0 if state == 0 else model.mu1, dtype=float)
        if state == 1 and model.gamma > 0:
            u = rng.random(n)
            decays = u >= math.exp(-model.gamma)
            v = rng.random(n)
            s = -np.log1p(-v * -math.expm1(-model.gamma)) / model.gamma
            means = np.where(decays, model.mu0 + s * (model.mu1 - model.mu0), means)
    return means + model.sigma * rng.standard_normal(n)


def sample_iq(readout: QubitReadout, state: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """IQ points for a qubit in ``state``; 1D models get an N(0, sigma) perpendicular part."""
    n = 1 if size is None else size
    if state == 2:
        if readout.three_state is None:
            raise ReadoutError("this readout model has no |2> response")
        ts = readout.three_state
        blob = (rng.random(n)[:, None] > np.cumsum(ts.weights[2])[None, :]).sum(axis=1)
        blob = np.minimum(blob, 2)
        out = np.empty((n, 2))
        for j in range(3):
            sel = blob == j
            if sel.any():
                out[sel] = rng.multivariate_normal(ts.means[j], ts.covs[j], size=int(sel.sum()))
    elif state in (0, 1):
        par = _sample_1d(readout.model, state, rng, n)
        perp = readout.model.sigma * rng.standard_normal(n)
        out = readout.axis.embed(par, perp)
    else:
        raise ReadoutError(f"unsupported state {state}")
    return out[0] if size is None else out


# --------------------------------------------------------------------------- calibration fits


def _moment_init(z0, z1):
    m0, m1 = float(np.median(z0)), float(np.median(z1))
    mid = 0.5 * (m0 + m1)
    core0 = z0[(z0 - mid) * (m0 - mid) > 0]
    core1 = z1[(z1 - mid) * (m1 - mid) > 0]
    sigma = math.sqrt(0.5 * (np.var(core0) + np.var(core1)))
    a0 = float(np.mean((z0 - mid) * (m0 - mid) < 0))
    a1 = float(np.mean((z1 - mid) * (m1 - mid) < 0))
    return m0, m1, sigma, a0, a1


def fit_gaussmix(z0, z1, zero_alpha0: bool = False) -> GaussMix:
    """Maximum-likelihood Gaussian-mixture fit to projected calibration shots."""
    z0 = np.asarray(z0, float)
    z1 = np.asarray(z1, float)
    m0, m1, s, a0, a1 = _moment_init(z0, z1)
    eps = 1e-6

    def unpack(x):
        return x[0], x[1], math.exp(x[2]), special.expit(x[3]), special.expit(x[4])

    def nll(x):
        mu0, mu1, sigma, al0, al1 = unpack(x)
        al0 = 0.0 if zero_alpha0 else al0
        l0 = np.logaddexp(math.log1p(-al0) + _log_normal(z0, mu0, sigma), math.log(max(al0, 1e-300)) + _log_normal(z0, mu1, sigma))
        l1 = np.logaddexp(math.log1p(-al1) + _log_normal(z1, mu1, sigma), math.log(max(al1, 1e-300)) + _log_normal(z1, mu0, sigma))
        return -(l0.sum() + l1.sum()) / (len(z0) + len(z1))

    x0 = [m0, m1, math.log(s), special.logit(min(max(a0, eps), 0.5)), special.logit(min(max(a1, eps), 0.5))]
    res = optimize.minimize(nll, x0, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 20000, "maxfev": 20000})
    mu0, mu1, sigma, al0, al1 = unpack(res.x)
    return GaussMix(float(mu0), float(mu1), float(sigma), 0.0 if zero_alpha0 else float(al0), float(al1))


def fit_ampdamp(z0, z1, gamma: Optional[float] = None) -> AmpDamp:
    """Maximum-likelihood amplitude-damping fit; ``gamma`` is held fixed when given."""
    z0 = np.asarray(z0, float)
    z1 = np.asarray(z1, float)
    m0, m1, s, _, a1 = _moment_init(z0, z1)
    g0 = gamma if gamma is not None else max(2 * a1, 1e-3)

    def unpack(x):
        g = gamma if gamma is not None else math.exp(x[3])
        return AmpDamp(x[0], x[1], math.exp(x[2]), g)

    def nll(x):
        m = unpack(x)
        return -(logpdf_ampdamp(m, z0, 0).sum() + logpdf_ampdamp(m, z1, 1).sum()) / (len(z0) + len(z1))

    x0 = [m0, m1, math.log(s)] + ([] if gamma is not None else [math.log(g0)])
    res = optimize.minimize(nll, x0, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 20000, "maxfev": 20000})
    m = unpack(res.x)
    return AmpDamp(float(m.mu0), float(m.mu1), float(m.sigma), float(m.gamma))


def fit_three_state(iq0, iq1, iq2, iterations: int = 200, tol: float = 1e-9) -> ThreeState:
    """EM fit of three shared 2D blobs with per-prepared-state weights."""
    samples = [np.asarray(x, float) for x in (iq0, iq1, iq2)]
    means = np.array([np.median(x, axis=0) for x in samples])
    covs = np.array([np.cov(x.T) + 1e-9 * np.eye(2) for x in samples])
    weights = np.full((3, 3), 0.02) + np.eye(3) * 0.94
    prev = -np.inf
    for _ in range(iterations):
        params = ThreeState(means, covs, weights)
        resp = []
        ll = 0.0
        for i, x in enumerate(samples):
            lp = params.blob_logpdfs(x) + np.log(np.maximum(weights[i], 1e-300))
            norm = special.logsumexp(lp, axis=1, keepdims=True)
            ll += norm.sum()
            resp.append(np.exp(lp - norm))
        weights = np.array([r.mean(axis=0) for r in resp])
        weights /= weights.sum(axis=1, keepdims=True)
        allx = np.concatenate(samples)
        allr = np.concatenate(resp)
        nk = allr.sum(axis=0)
        means = (allr.T @ allx) / nk[:, None]
        covs = np.empty((3, 2, 2))
        for j in range(3):
            d = allx - means[j]
            covs[j] = (allr[:, j, None] * d).T @ d / nk[j] + 1e-12 * np.eye(2)
        if abs(ll - prev) < tol * abs(ll):
            break
        prev = ll
    return ThreeState(means, covs, weights)


def calibrate_qubit(iq0, iq1, iq2=None, kind: str = "gaussmix", gamma: Optional[float] = None) -> QubitReadout:
    """Fit a per-qubit readout model from calibration IQ shots of |0>, |1> (and |2>)."""
    iq0 = np.asarray(iq0, float)
    iq1 = np.asarray(iq1, float)
    axis = ProjectionAxis.from_means(np.median(iq0, axis=0), np.median(iq1, axis=0))
    z0, z1 = axis.project(iq0), axis.project(iq1)
    if kind == "gaussmix":
        model = fit_gaussmix(z0, z1)
    elif kind == "ampdamp":
        model = fit_ampdamp(z0, z1, gamma)
    else:
        raise ReadoutError(f"cannot calibrate kind {kind!r}")
    three = fit_three_state(iq0, iq1, iq2) if iq2 is not None else None
    return QubitReadout(model, axis, three)


# --------------------------------------------------------------------------- model sets


@dataclass
class ReadoutModel:
    """Readout response for every qubit of the device, keyed by qubit name."""

    qubits: dict[str, QubitReadout] = field(default_factory=dict)

    FORMAT_VERSION = 1

    def __getitem__(self, name: str) -> QubitReadout:
        return self.qubits[name]

    def to_dict(self) -> dict:
        return {"format_version": self.FORMAT_VERSION, "qubits": {q: r.to_dict() for q, r in self.qubits.items()}}

    @classmethod
    def from_dict(cls, doc: dict) -> "ReadoutModel":
        if doc.get("format_version", 1) != cls.FORMAT_VERSION:
            raise ReadoutError(f"unsupported readout format_version {doc.get('format_version')}")
        return cls({q: QubitReadout.from_dict(r) for q, r in doc["qubits"].items()})

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "ReadoutModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def tune_sigma(target_error: float, separation: float = 2.0, gamma: float = 0.0) -> float:
    """Width giving an average assignment error of ``target_error``."""

    def gap(log_sigma):
        model = AmpDamp(-separation / 2, separation / 2, math.exp(log_sigma), gamma)
        return assignment_error(model) - target_error

    lo, hi = math.log(separation * 1e-3), math.log(separation * 10)
    if gap(lo) > 0:
        raise ReadoutError(f"assignment error {target_error:g} is below the decay floor {gap(lo) + target_error:.3g}")
    return math.exp(optimize.brentq(gap, lo, hi, xtol=1e-12))


def symmetric_readout(
    qubit_names,
    assignment_error_target: float = 0.01,
    kind: str = "gaussmix",
    gamma: float = 0.0,
    separation: float = 2.0,
    leak_offset: float = 2.5,
    ancillas=(),
) -> ReadoutModel:
    """Identical-quality readout for every qubit with per-qubit rotated IQ axes.

    ``gamma`` > 0 (``kind="ampdamp"``) adds |1> -> |0> decay during readout;
    the width is tuned so the hard assignment error hits the target either way.
    Ancillas get a |2> blob displaced perpendicular to the 0-1 axis.
    """
    sigma = tune_sigma(assignment_error_target, separation, gamma if kind == "ampdamp" else 0.0)
    out = {}
    for i, name in enumerate(qubit_names):
        theta = 0.3 + 0.45 * i
        axis = ProjectionAxis((0.5 * math.cos(i), 0.5 * math.sin(i)), (math.cos(theta), math.sin(theta)))
        if kind == "gaussmix":
            model = GaussMix(-separation / 2, separation / 2, sigma)
        elif kind == "ampdamp":
            model = AmpDamp(-separation / 2, separation / 2, sigma, gamma)
        else:
            raise ReadoutError(f"unknown kind {kind!r}")
        three = None
        if name in ancillas:
            means = np.array([axis.embed(model.mu0), axis.embed(model.mu1), axis.embed(0.0, -leak_offset * separation / 2)])
            covs = np.array([sigma**2 * np.eye(2)] * 3)
            three = ThreeState(means, covs, np.eye(3))
        out[name] = QubitReadout(model, axis, three)
    return ReadoutModel(out)
