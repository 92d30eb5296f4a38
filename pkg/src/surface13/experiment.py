"""End-to-end memory experiment: sample, read out, decode, score, fit."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from . import readout as ro
from .code_model import CodeLayout, build_surface13, codeword_states
from .decoders import DECODERS, SoftContext, build_lut, decode_batch, lut_decode, qed_postselect, soft_context
from .decoding_graph import (
    DecodingGraph,
    apply_noise_floor,
    derive_model_graph,
    estimate_correlation_graph,
    extract_detectors,
    observed_flip,
)
from .noisy_circuit import NoiseParams, ShotBatch, attach_noise, build_memory_circuit, reference_outcomes, sample_shots

GRAPH_SOURCES = ("model", "estimated")


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


# --------------------------------------------------------------------------- config


@dataclass
class ReadoutConfig:
    """How IQ responses are generated and how they are modelled when decoding.

    kind "symmetric" builds identical readout for all qubits tuned to
    ``assignment_error``; truth_model picks the generating PDF, with gamma
    defaulting to t_meas / T1. kind "file" loads a readout model JSON.
    """

    kind: str = "symmetric"
    assignment_error: float = 0.01
    truth_model: str = "ampdamp"
    gamma: Optional[float] = None
    path: Optional[str] = None
    decode_model: str = "gaussmix"
    calibration_shots: int = 20000
    separation: float = 2.0

    def __post_init__(self):
        if self.kind not in ("symmetric", "file"):
            raise ConfigError(f"unknown readout kind {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ConfigError("readout kind 'file' needs a path")
        for m in (self.truth_model, self.decode_model):
            if m not in ("gaussmix", "ampdamp"):
                raise ConfigError(f"unknown readout model {m!r}")
        if not 0 < self.assignment_error < 0.5:
            raise ConfigError("assignment_error must lie in (0, 0.5)")
        if self.calibration_shots < 10:
            raise ConfigError("calibration_shots too small")

    def gamma_for(self, params: NoiseParams) -> float:
        if self.gamma is not None:
            return float(self.gamma)
        return 0.0 if math.isinf(params.T1) else params.t_meas / (params.T1 * 1000.0)


@dataclass
class RunConfig:
    rounds: tuple[int, ...] = (1, 2, 4, 8, 16)
    states: Optional[tuple[str, ...]] = None
    shots: int = 10000
    seed: int = 0
    noise: NoiseParams = field(default_factory=NoiseParams)
    readout: Optional[ReadoutConfig] = None
    graph: str = "model"
    decoders: tuple[str, ...] = DECODERS
    workers: int = 1
    layout: CodeLayout = field(default_factory=build_surface13)

    def __post_init__(self):
        self.rounds = tuple(int(r) for r in self.rounds)
        if not self.rounds or min(self.rounds) < 1:
            raise ConfigError("rounds must be >= 1")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        codewords = codeword_states(self.layout)
        if self.states is None:
            self.states = tuple(codewords)
        self.states = tuple(self.states)
        bad = [s for s in self.states if s not in codewords]
        if bad:
            raise ConfigError(f"not codewords: {bad}")
        unknown = set(self.decoders) - set(DECODERS)
        if unknown:
            raise ConfigError(f"unknown decoders {sorted(unknown)}")
        if self.graph not in GRAPH_SOURCES:
            raise ConfigError(f"graph must be one of {GRAPH_SOURCES}")
        if "mwpm_soft" in self.decoders and self.readout is None:
            raise ConfigError("mwpm_soft needs a readout model")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "code": self.layout.to_dict(),
            "noise": self.noise.to_dict(),
            "readout": asdict(self.readout) if self.readout else None,
            "run": {
                "rounds": list(self.rounds),
                "states": list(self.states),
                "shots": self.shots,
                "seed": self.seed,
                "graph": self.graph,
                "decoders": list(self.decoders),
            },
        }

    @classmethod
    def from_dict(cls, doc: dict, **overrides) -> "RunConfig":
        try:
            layout = CodeLayout.from_dict(doc["code"]) if doc.get("code") else build_surface13()
            noise = NoiseParams.from_dict(doc.get("noise") or {})
            rd = doc.get("readout")
            readout = ReadoutConfig(**rd) if rd else None
            run = dict(doc.get("run") or {})
            run.update({k: v for k, v in overrides.items() if v is not None})
            unknown = set(run) - {"rounds", "states", "shots", "seed", "graph", "decoders", "workers"}
            if unknown:
                raise ConfigError(f"unknown run keys {sorted(unknown)}")
            if "rounds" in run:
                run["rounds"] = tuple(run["rounds"])
            if run.get("states") is not None:
                run["states"] = tuple(run["states"])
            if "decoders" in run:
                run["decoders"] = tuple(run["decoders"])
            return cls(noise=noise, readout=readout, layout=layout, **run)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def load_config(path, **overrides) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(doc, **overrides)


def default_workers(explicit: Optional[int] = None) -> int:
    if explicit:
        return explicit
    env = os.environ.get("S13_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"bad S13_WORKERS={env!r}") from exc
    return 1


# --------------------------------------------------------------------------- readout


def _seed_seq(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=key)


CAL_KEY = 1 << 30
IQ_KEY = (1 << 30) + 1


def record_qubits(layout: CodeLayout, rounds: int) -> list[str]:
    """Qubit name measured by each record index."""
    return [layout.ancilla_qubits[i % layout.n_ancilla] for i in range(layout.n_ancilla * rounds)] + list(layout.data_qubits)


def truth_readout(config: RunConfig) -> ro.ReadoutModel:
    rc = config.readout
    names = list(config.layout.data_qubits) + list(config.layout.ancilla_qubits)
    if rc.kind == "file":
        try:
            return ro.ReadoutModel.load(rc.path)
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load readout model {rc.path}: {exc}") from exc
    return ro.symmetric_readout(
        names,
        rc.assignment_error,
        kind=rc.truth_model,
        gamma=rc.gamma_for(config.noise),
        separation=rc.separation,
        ancillas=config.layout.ancilla_qubits,
    )


def calibrate_readout(config: RunConfig, truth: ro.ReadoutModel, kind: Optional[str] = None) -> ro.ReadoutModel:
    """Fit the decoding model from fresh calibration shots of |0> and |1> per qubit."""
    rc = config.readout
    kind = kind or rc.decode_model
    gamma = rc.gamma_for(config.noise) if kind == "ampdamp" else None
    out = {}
    for i, name in enumerate(sorted(truth.qubits)):
        rng = np.random.default_rng(_seed_seq(config.seed, CAL_KEY, i))
        q = truth[name]
        iq0 = q.sample_iq(0, rng, rc.calibration_shots)
        iq1 = q.sample_iq(1, rng, rc.calibration_shots)
        iq2 = q.sample_iq(2, rng, rc.calibration_shots) if q.three_state is not None else None
        out[name] = ro.calibrate_qubit(iq0, iq1, iq2, kind=kind, gamma=gamma)
    return ro.ReadoutModel(out)


def attach_iq(batch: ShotBatch, truth: ro.ReadoutModel, layout: CodeLayout, seed: int) -> ShotBatch:
    """Draw an IQ point for every measurement from its true post-measurement state."""
    n, m = batch.true_bits.shape
    rng = np.random.default_rng(_seed_seq(seed, IQ_KEY, int(batch.state, 2), batch.rounds, int(batch.shot_ids[0])))
    iq = np.empty((n, m, 2))
    names = record_qubits(layout, batch.rounds)
    n_anc = layout.n_ancilla * batch.rounds
    leaked = np.zeros((n, m), dtype=bool)
    leaked[:, :n_anc] = batch.leak_flags.astype(bool)
    for k, name in enumerate(names):
        qr = truth[name]
        col = batch.true_bits[:, k]
        for state in (0, 1):
            sel = (col == state) & ~leaked[:, k]
            if sel.any():
                iq[sel, k] = qr.sample_iq(state, rng, int(sel.sum()))
        sel = leaked[:, k]
        if sel.any():
            iq[sel, k] = qr.sample_iq(2, rng, int(sel.sum()))
    batch.iq = iq
    return batch


def harden_iq(iq, model: ro.ReadoutModel, layout: CodeLayout, rounds: int):
    """(hard bits, classification error q, leak flags) for an (n, M, 2) IQ array."""
    n, m, _ = iq.shape
    hard = np.empty((n, m), dtype=np.uint8)
    q = np.empty((n, m))
    leak = np.zeros((n, layout.n_ancilla * rounds), dtype=np.uint8)
    names = record_qubits(layout, rounds)
    for k, name in enumerate(names):
        qr = model[name]
        z = qr.axis.project(iq[:, k])
        hard[:, k] = ro.harden_two_state(qr.model, z)
        q[:, k] = ro.classification_error_prob(qr.model, z)
        if k < leak.shape[1] and qr.three_state is not None:
            leak[:, k] = ro.classify_three_state(qr.three_state, iq[:, k]) == 2
    return hard, q, leak


# --------------------------------------------------------------------------- simulation


def memory_circuit(config: RunConfig, rounds: int):
    base = build_memory_circuit(config.layout, rounds, config.noise)
    return attach_noise(base, config.noise, classification_flips=config.readout is None)


def floor_graph(config: RunConfig, rounds: int) -> DecodingGraph:
    """Model graph with classification flips included; also the estimation topology."""
    circuit = attach_noise(build_memory_circuit(config.layout, rounds, config.noise), config.noise, classification_flips=True)
    return derive_model_graph(circuit)


@dataclass
class TaskData:
    """Decoder inputs for one (state, rounds) pair."""

    state: str
    rounds: int
    shot_ids: np.ndarray
    defects: np.ndarray
    observed: np.ndarray
    truth: np.ndarray
    q: Optional[np.ndarray] = None


def simulate_batch(config: RunConfig, state: str, rounds: int, truth: Optional[ro.ReadoutModel]) -> ShotBatch:
    circuit = memory_circuit(config, rounds)
    batch = sample_shots(circuit, state, config.shots, config.seed)
    if truth is not None:
        attach_iq(batch, truth, config.layout, config.seed)
    return batch


def task_inputs(config: RunConfig, batch: ShotBatch, decode_model: Optional[ro.ReadoutModel]) -> TaskData:
    circuit = memory_circuit(config, batch.rounds)
    ref = reference_outcomes(circuit, batch.state)
    q = None
    hard = batch.hard_bits
    if decode_model is not None and batch.iq is not None:
        hard, q, _ = harden_iq(batch.iq, decode_model, config.layout, batch.rounds)
    defects = extract_detectors(hard, ref, config.layout, batch.rounds)
    obs = observed_flip(hard, ref, config.layout, batch.rounds)
    return TaskData(batch.state, batch.rounds, batch.shot_ids, defects, obs, batch.truth_flip, q)


def _simulate_task(args):
    config, state, rounds, truth, decode_model = args
    return task_inputs(config, simulate_batch(config, state, rounds, truth), decode_model)


# --------------------------------------------------------------------------- results


@dataclass
class FidelityCurve:
    """Success counts per (decoder, state, rounds); state "avg" pools all states."""

    counts: dict = field(default_factory=dict)  # key -> [successes, n, attempted]

    def add(self, decoder: str, state: str, rounds: int, successes: int, n: int, attempted: Optional[int] = None):
        c = self.counts.setdefault((decoder, state, rounds), [0, 0, 0])
        c[0] += int(successes)
        c[1] += int(n)
        c[2] += int(n if attempted is None else attempted)
        if state != "avg":
            a = self.counts.setdefault((decoder, "avg", rounds), [0, 0, 0])
            a[0] += int(successes)
            a[1] += int(n)
            a[2] += int(n if attempted is None else attempted)

    def decoders(self):
        return sorted({k[0] for k in self.counts})

    def rounds(self, decoder: str, state: str = "avg"):
        return sorted(k[2] for k in self.counts if k[0] == decoder and k[1] == state)

    def point(self, decoder: str, rounds: int, state: str = "avg"):
        s, n, att = self.counts[(decoder, state, rounds)]
        F = s / n if n else float("nan")
        dF = math.sqrt(F * (1 - F) / n) if n else float("nan")
        return F, dF, n, att

    def series(self, decoder: str, state: str = "avg"):
        rs = self.rounds(decoder, state)
        pts = [self.point(decoder, r, state) for r in rs]
        return np.array(rs), np.array([p[0] for p in pts]), np.array([p[1] for p in pts]), np.array([p[2] for p in pts])

    def rows(self):
        for (dec, state, r) in sorted(self.counts, key=lambda k: (k[0], k[1] != "avg", k[1], k[2])):
            F, dF, n, att = self.point(dec, r, state)
            yield {"decoder": dec, "state": state, "rounds": r, "F": F, "dF": dF, "n": n, "attempted": att}


@dataclass
class DecodeOutput:
    """Per-shot decoder outputs for one (state, rounds) task."""

    task: TaskData
    predictions: dict  # decoder -> (prediction, weight, matched_pairs, accepted)


@dataclass
class ExperimentResult:
    config: RunConfig
    curve: FidelityCurve
    outputs: list = field(default_factory=list)
    graphs: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def success(self, decoder: str, rounds: int, state: Optional[str] = None):
        """Concatenated per-shot success bits (accepted shots only for qed), in shot order."""
        parts = []
        for out in self.outputs:
            if out.task.rounds != rounds or (state and out.task.state != state):
                continue
            pred, _, _, acc = out.predictions[decoder]
            ok = (pred ^ out.task.observed) == 0
            parts.append(ok[acc] if acc is not None else ok)
        return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def score(pred, observed, accepted=None):
    ok = (np.asarray(pred) ^ np.asarray(observed)) == 0
    if accepted is not None:
        return int(ok[accepted].sum()), int(accepted.sum())
    return int(ok.sum()), len(ok)


def mean_classification_errors(tasks: list[TaskData]) -> np.ndarray:
    return np.concatenate([t.q for t in tasks]).mean(axis=0)


def decode_tasks(tasks: list[TaskData], graph: DecodingGraph, decoders, layout: CodeLayout, eps_m=None, masks=None, ctx: Optional[SoftContext] = None):
    """Run every decoder on the (optionally masked) shots of each task."""
    lut = build_lut(layout)
    if "mwpm_soft" in decoders and ctx is None:
        ctx = soft_context(graph, eps_m)
    results = []
    for i, t in enumerate(tasks):
        sel = np.ones(len(t.shot_ids), bool) if masks is None else masks[i]
        d = t.defects[sel]
        out = {}
        for dec in decoders:
            acc = None
            weight = np.zeros(len(d))
            pairs = np.zeros(len(d), dtype=np.int64)
            if dec == "no_corr":
                pred = np.zeros(len(d), np.uint8)
            elif dec == "qed":
                pred = np.zeros(len(d), np.uint8)
                acc = qed_postselect(d)
            elif dec == "lut":
                pred = lut_decode(d, layout, t.rounds, lut)
            elif dec == "mwpm_hard":
                pred, weight, pairs = decode_batch(graph, d)
            elif dec == "mwpm_soft":
                pred, weight, pairs = decode_batch(graph, d, q=t.q[sel], ctx=ctx)
            out[dec] = (pred, weight, pairs, acc)
        results.append((sel, out))
    return results


def _merge_outputs(task: TaskData, parts) -> DecodeOutput:
    """Reassemble per-shot outputs of disjoint shot masks in shot order."""
    n = len(task.shot_ids)
    merged = {}
    for sel, out in parts:
        for dec, (pred, weight, pairs, acc) in out.items():
            if dec not in merged:
                merged[dec] = [np.zeros(n, np.uint8), np.zeros(n), np.zeros(n, np.int64), None if acc is None else np.zeros(n, bool)]
            m = merged[dec]
            m[0][sel], m[1][sel], m[2][sel] = pred, weight, pairs
            if acc is not None:
                m[3][sel] = acc
    return DecodeOutput(task, {k: tuple(v) for k, v in merged.items()})


def split_mask(shot_ids, half: str) -> np.ndarray:
    """Half A holds even shot ids, half B odd ones."""
    if half not in ("A", "B"):
        raise ConfigError(f"split must be A or B, got {half!r}")
    return (np.asarray(shot_ids) % 2) == (0 if half == "A" else 1)


def estimate_from_tasks(tasks: list[TaskData], masks, floor: DecodingGraph):
    """Estimated+floored graph and mean classification errors from the masked shots."""
    defects = np.concatenate([t.defects[m] for t, m in zip(tasks, masks)])
    if len(defects) < 2:
        raise ConfigError("too few shots to estimate a graph")
    graph = apply_noise_floor(estimate_correlation_graph(defects, floor), floor)
    eps = None
    if tasks[0].q is not None:
        eps = np.concatenate([t.q[m] for t, m in zip(tasks, masks)]).mean(axis=0)
    return graph, eps


def run_memory_experiment(config: RunConfig, keep_shots: bool = True, truth: Optional[ro.ReadoutModel] = None, decode_model: Optional[ro.ReadoutModel] = None) -> ExperimentResult:
    """Sample, decode and score every (state, rounds) pair of the config.

    With graph "estimated", shots are split by shot-id parity: each half is
    decoded with a graph (and mean classification errors) estimated from the
    other half and floored by the model graph, so every shot is decoded once.
    ``keep_shots`` retains per-shot outputs, needed for paired comparisons.
    """
    if config.readout is not None:
        truth = truth or truth_readout(config)
        decode_model = decode_model or calibrate_readout(config, truth)
    curve = FidelityCurve()
    result = ExperimentResult(config, curve)
    pool = ProcessPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for rounds in config.rounds:
            args = [(config, s, rounds, truth, decode_model) for s in config.states]
            tasks = list(pool.map(_simulate_task, args)) if pool else [_simulate_task(a) for a in args]
            floor = floor_graph(config, rounds)
            decs = config.decoders
            if config.graph == "model":
                eps = mean_classification_errors(tasks) if any(t.q is not None for t in tasks) else None
                parts = [[p] for p in decode_tasks(tasks, floor, decs, config.layout, eps)]
                result.graphs[rounds] = floor
            else:
                parts = [[] for _ in tasks]
                for est_half in (0, 1):
                    est_masks = [split_mask(t.shot_ids, "AB"[est_half]) for t in tasks]
                    graph, eps = estimate_from_tasks(tasks, est_masks, floor)
                    dec_masks = [~m for m in est_masks]
                    for i, p in enumerate(decode_tasks(tasks, graph, decs, config.layout, eps, dec_masks)):
                        parts[i].append(p)
                    result.graphs[(rounds, "AB"[est_half])] = graph
            for t, p in zip(tasks, parts):
                out = _merge_outputs(t, p)
                for dec, (pred, _, _, acc) in out.predictions.items():
                    s, n = score(pred, t.observed, acc)
                    curve.add(dec, t.state, rounds, s, n, len(pred))
                if keep_shots:
                    result.outputs.append(out)
    finally:
        if pool:
            pool.shutdown()
    result.meta = {"config_hash": config.hash(), "seed": config.seed}
    return result


# --------------------------------------------------------------------------- fitting


@dataclass
class ErrorRateFit:
    eps: float
    n0: float
    cov: np.ndarray
    residuals: np.ndarray
    flag: str = "ok"

    @property
    def eps_err(self) -> float:
        return float(math.sqrt(max(self.cov[0, 0], 0.0)))

    @property
    def n0_err(self) -> float:
        return float(math.sqrt(max(self.cov[1, 1], 0.0)))


def fidelity_model(n, eps, n0):
    return 0.5 * (1 + np.power(1 - 2 * eps, np.asarray(n, float) - n0))


def fit_error_rate(rounds, F, dF=None, max_iter: int = 2000) -> ErrorRateFit:
    """Weighted least-squares fit of F(n) = (1 + (1 - 2 eps)^(n - n0)) / 2.

    Points with 2F - 1 <= 0 are dropped. With ``dF`` given the weights are
    1/dF^2 and the covariance is absolute; zero errors (F = 1 exactly) are
    replaced by the smallest positive error present.
    """
    n = np.asarray(rounds, float)
    F = np.asarray(F, float)
    keep = 2 * F - 1 > 0
    if dF is not None:
        dF = np.asarray(dF, float)
    if keep.sum() < 3 or len(np.unique(n[keep])) < 3:
        raise NumericalError("need at least three usable round counts")
    n, F = n[keep], F[keep]
    dF = dF[keep] if dF is not None else None
    if np.all(F >= 1.0):
        return ErrorRateFit(0.0, 0.0, np.zeros((2, 2)), np.zeros_like(F), "boundary")
    y = np.log(2 * F - 1)
    slope, intercept = np.polyfit(n, y, 1)
    eps0 = float(np.clip(0.5 * (1 - math.exp(min(slope, 0.0))), 1e-9, 0.49))
    n00 = float(intercept / math.log(1 - 2 * eps0)) if slope < 0 else 0.0
    sigma = None
    if dF is not None:
        pos = dF[dF > 0]
        sigma = np.where(dF > 0, dF, pos.min() if len(pos) else 1.0)
    try:
        popt, pcov = optimize.curve_fit(
            fidelity_model, n, F, p0=[eps0, n00], sigma=sigma, absolute_sigma=sigma is not None,
            bounds=([0.0, -np.inf], [0.5, np.inf]), max_nfev=max_iter, xtol=1e-14, ftol=1e-14, gtol=1e-14,
        )
    except (RuntimeError, ValueError) as exc:
        raise NumericalError(f"fidelity fit failed: {exc}") from exc
    resid = F - fidelity_model(n, *popt)
    flag = "boundary" if popt[0] <= 0 or popt[0] >= 0.5 else "ok"
    return ErrorRateFit(float(popt[0]), float(popt[1]), pcov, resid, flag)


def fit_curve(curve: FidelityCurve, decoder: str, state: str = "avg") -> ErrorRateFit:
    rs, F, dF, _ = curve.series(decoder, state)
    return fit_error_rate(rs, F, dF)


# --------------------------------------------------------------------------- soft vs hard


def compare_soft_hard(result: ExperimentResult, hard: str = "mwpm_hard", soft: str = "mwpm_soft", n_boot: int = 300, seed: int = 0, per_state_rounds: int = 8) -> dict:
    """Relative error-rate reduction of ``soft`` over ``hard`` on the same shots.

    The uncertainty comes from a paired bootstrap: per round count, the 2x2
    table of (hard ok, soft ok) outcomes is resampled multinomially and both
    curves are refitted, which keeps the strong shot-level correlation
    between the two decoders.
    """
    curve = result.curve
    for d in (hard, soft):
        if d not in curve.decoders():
            raise ConfigError(f"no results for decoder {d}")
    fh, fs = fit_curve(curve, hard), fit_curve(curve, soft)
    rounds = curve.rounds(hard)
    tables = []
    for r in rounds:
        h = result.success(hard, r)
        s = result.success(soft, r)
        if len(h) == 0:
            raise ConfigError("paired comparison needs per-shot results")
        tables.append(np.array([np.sum(h & s), np.sum(h & ~s), np.sum(~h & s), np.sum(~h & ~s)]))
    rng = np.random.default_rng(seed)
    red = []
    for _ in range(n_boot):
        Fh, Fs, dh, ds = [], [], [], []
        for t in tables:
            n = t.sum()
            c = rng.multinomial(n, t / n)
            a, b = (c[0] + c[1]) / n, (c[0] + c[2]) / n
            Fh.append(a)
            Fs.append(b)
            dh.append(math.sqrt(a * (1 - a) / n))
            ds.append(math.sqrt(b * (1 - b) / n))
        try:
            eh = fit_error_rate(rounds, Fh, dh).eps
            es = fit_error_rate(rounds, Fs, ds).eps
        except NumericalError:
            continue
        if eh > 0:
            red.append((eh - es) / eh)
    reduction = (fh.eps - fs.eps) / fh.eps if fh.eps > 0 else 0.0
    sigma_boot = float(np.std(red, ddof=1)) if len(red) > 1 else float("nan")
    # independent-error propagation, ignoring the pairing (conservative)
    sigma_indep = float("nan")
    if fh.eps > 0:
        sigma_indep = math.sqrt((fs.eps_err / fh.eps) ** 2 + (fs.eps * fh.eps_err / fh.eps**2) ** 2)
    per_round = []
    for r in rounds:
        Fh_, dFh, n, _ = curve.point(hard, r)
        Fs_, dFs, _, _ = curve.point(soft, r)
        per_round.append({"rounds": r, "F_hard": Fh_, "F_soft": Fs_, "dF": Fs_ - Fh_, "n": n})
    per_state = []
    if per_state_rounds in rounds:
        states = sorted({k[1] for k in curve.counts if k[0] == hard and k[2] == per_state_rounds and k[1] != "avg"})
        for st in states:
            per_state.append({"state": st, "F_hard": curve.point(hard, per_state_rounds, st)[0], "F_soft": curve.point(soft, per_state_rounds, st)[0]})
    return {
        "eps_hard": fh.eps,
        "eps_hard_err": fh.eps_err,
        "eps_soft": fs.eps,
        "eps_soft_err": fs.eps_err,
        "reduction": reduction,
        "reduction_err": sigma_boot,
        "reduction_err_independent": sigma_indep,
        "significance": reduction / sigma_boot if sigma_boot > 0 else float("inf") if reduction > 0 else 0.0,
        "per_round": per_round,
        "per_state": per_state,
    }
