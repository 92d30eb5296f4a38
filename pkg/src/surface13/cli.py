"""Command-line entry point: ``s13 <command> ...``."""

from __future__ import annotations

import argparse
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import fileio
from . import readout as ro
from .decoders import DECODERS, DecoderError
from .decoding_graph import (
    DecodingGraph,
    GraphError,
    apply_noise_floor,
    correlation_matrix,
    defect_rate,
    estimate_correlation_graph,
)
from .experiment import (
    ConfigError,
    FidelityCurve,
    NumericalError,
    RunConfig,
    TaskData,
    calibrate_readout,
    compare_soft_hard,
    decode_tasks,
    default_workers,
    fit_error_rate,
    floor_graph,
    harden_iq,
    load_config,
    run_memory_experiment,
    simulate_batch,
    split_mask,
    task_inputs,
    truth_readout,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed, "workers": default_workers(args.workers)}
    if args.config:
        return load_config(args.config, **overrides)
    return RunConfig.from_dict({}, **overrides)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, config: RunConfig, command: str, files: list[str]) -> None:
    path = out / "manifest.json"
    doc = json.loads(path.read_text()) if path.exists() else {"format_version": fileio.FORMAT_VERSION, "steps": []}
    doc["steps"].append(
        {
            "command": command,
            "config_hash": config.hash(),
            "seed": config.seed,
            "files": sorted(files),
            "versions": {"surface13": __version__, "numpy": np.__version__, "python": platform.python_version()},
        }
    )
    doc["config"] = config.to_dict()
    fileio.write_json(path, doc)


def _write_table(out: Path, stem: str, rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        name = f"{stem}.json"
        fileio.write_json(out / name, {"format_version": fileio.FORMAT_VERSION, "rows": rows})
    else:
        name = f"{stem}.csv"
        fileio.write_csv(out / name, rows, list(rows[0]) if rows else [])
    return name


def _load_graph(path) -> DecodingGraph:
    try:
        return DecodingGraph.load(path)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read graph {path}: {exc}") from exc


def _load_shots(path):
    try:
        return fileio.read_shots(path)
    except OSError as exc:
        raise ConfigError(f"cannot read shots {path}: {exc}") from exc


def _load_readout(path):
    if not path:
        return None
    try:
        return ro.ReadoutModel.load(path)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read readout model {path}: {exc}") from exc


def _tasks(config, batches, model):
    rounds = {b.rounds for b in batches}
    if len(rounds) != 1:
        raise ConfigError("a shot file must hold a single round count")
    return [task_inputs(config, b, model) for b in batches], rounds.pop()


# --------------------------------------------------------------------------- commands


def cmd_sample(args) -> int:
    config, out = _config(args), _out(args)
    truth = model = None
    files = []
    if config.readout is not None:
        truth = truth_readout(config)
        model = calibrate_readout(config, truth)
        truth.save(out / "readout_truth.json")
        model.save(out / "readout_model.json")
        files += ["readout_truth.json", "readout_model.json"]
    ext = "npz" if args.binary else "jsonl"
    for r in config.rounds:
        batches = []
        for s in config.states:
            b = simulate_batch(config, s, r, truth)
            if model is not None:
                b.hard_bits, _, leak = harden_iq(b.iq, model, config.layout, r)
                if any(model[q].three_state is not None for q in config.layout.ancilla_qubits):
                    b.leak_flags = leak
            batches.append(b)
        name = f"shots_R{r}.{ext}"
        fileio.write_shots(out / name, batches)
        files.append(name)
    _manifest(out, config, "sample", files)
    return EXIT_OK


def cmd_dem(args) -> int:
    config, out = _config(args), _out(args)
    files = []
    for r in config.rounds:
        name = f"graph_model_R{r}.json"
        floor_graph(config, r).save(out / name, config.layout)
        files.append(name)
    _manifest(out, config, "dem", files)
    return EXIT_OK


def cmd_fit_graph(args) -> int:
    config, out = _config(args), _out(args)
    tasks, rounds = _tasks(config, _load_shots(args.shots), _load_readout(args.readout))
    floor = _load_graph(args.floor) if args.floor else None
    topology = floor or floor_graph(config, rounds)
    if topology.rounds != rounds:
        raise ConfigError(f"graph has {topology.rounds} rounds, shots have {rounds}")
    masks = [split_mask(t.shot_ids, args.split) if args.split else np.ones(len(t.shot_ids), bool) for t in tasks]
    defects = np.concatenate([t.defects[m] for t, m in zip(tasks, masks)])
    graph = estimate_correlation_graph(defects, topology)
    if floor is not None:
        graph = apply_noise_floor(graph, floor)
    name = f"graph_est_R{rounds}{'_' + args.split if args.split else ''}.json"
    graph.save(out / name, config.layout)
    _manifest(out, config, "fit-graph", [name])
    return EXIT_OK


def cmd_decode(args) -> int:
    config, out = _config(args), _out(args)
    decoders = tuple(args.decoders.split(",")) if args.decoders else config.decoders
    unknown = set(decoders) - set(DECODERS)
    if unknown:
        raise ConfigError(f"unknown decoders {sorted(unknown)}")
    model = _load_readout(args.readout)
    if "mwpm_soft" in decoders and model is None:
        raise ConfigError("mwpm_soft needs --readout")
    tasks, rounds = _tasks(config, _load_shots(args.shots), model)
    graph = _load_graph(args.graph)
    if graph.rounds != rounds:
        raise ConfigError(f"graph has {graph.rounds} rounds, shots have {rounds}")
    if args.split:
        est = [split_mask(t.shot_ids, args.split) for t in tasks]
        dec = [~m for m in est]
    else:
        est = dec = [np.ones(len(t.shot_ids), bool) for t in tasks]
    eps = None
    if model is not None:
        eps = np.concatenate([t.q[m] for t, m in zip(tasks, est)]).mean(axis=0)
    rows = []
    for t, (sel, preds) in zip(tasks, decode_tasks(tasks, graph, decoders, config.layout, eps, dec)):
        sub = TaskData(t.state, t.rounds, t.shot_ids[sel], t.defects[sel], t.observed[sel], t.truth[sel])
        rows.extend(fileio.result_rows(sub, preds))
    name = f"results_R{rounds}{'_' + args.split if args.split else ''}.csv"
    fileio.write_csv(out / name, rows, fileio.RESULT_FIELDS)
    _manifest(out, config, "decode", [name])
    return EXIT_OK


class RowResults:
    """Per-shot result rows viewed as curve + paired success arrays."""

    def __init__(self, rows):
        self.curve = FidelityCurve()
        self._ok = {}
        keyed = {}
        for r in rows:
            dec, state, rounds = r["decoder"], r["state"], int(r["rounds"])
            keyed.setdefault((dec, state, rounds), []).append(r)
        for (dec, state, rounds), rs in sorted(keyed.items()):
            rs.sort(key=lambda r: int(r["shot_id"]))
            acc = np.array([int(r["accepted"]) for r in rs], bool)
            ok = np.array([int(r["success"]) for r in rs], bool)
            self.curve.add(dec, state, rounds, int(ok[acc].sum()), int(acc.sum()), len(rs))
            self._ok[(dec, state, rounds)] = ok[acc]
        self.states = sorted({k[1] for k in keyed})

    def success(self, decoder, rounds, state=None):
        parts = [v for (d, s, r), v in sorted(self._ok.items()) if d == decoder and r == rounds and (state is None or s == state)]
        return np.concatenate(parts) if parts else np.zeros(0, bool)


def _read_results(paths):
    rows = []
    for p in paths:
        try:
            rows.extend(fileio.read_csv(p))
        except OSError as exc:
            raise ConfigError(f"cannot read results {p}: {exc}") from exc
    return rows


def cmd_analyze(args) -> int:
    config, out = _config(args), _out(args)
    files = []
    if args.results:
        res = RowResults(_read_results(args.results))
        files.append(_write_table(out, "fidelity", list(res.curve.rows()), "csv"))
    for path in args.shots or []:
        tasks, rounds = _tasks(config, _load_shots(path), _load_readout(args.readout))
        defects = np.concatenate([t.defects for t in tasks])
        rate = defect_rate(defects, config.layout.n_ancilla, rounds)
        rows = []
        for r in range(rate.shape[0]):
            for a in range(rate.shape[1]):
                rows.append({"round": r + 1, "final": int(r == rounds), "ancilla": config.layout.ancilla_qubits[a], "rate": repr(float(rate[r, a]))})
        files.append(_write_table(out, f"defect_rate_R{rounds}", rows, "csv"))
        corr = correlation_matrix(defects)
        rows = [{"i": i, "j": j, "p": repr(float(corr[i, j]))} for i in range(corr.shape[0]) for j in range(corr.shape[1])]
        files.append(_write_table(out, f"correlation_R{rounds}", rows, "csv"))
    if not files:
        raise ConfigError("analyze needs --results and/or --shots")
    _manifest(out, config, "analyze", files)
    return EXIT_OK


def _fit_rows(curve: FidelityCurve):
    rows = []
    for dec in curve.decoders():
        rs, F, dF, _ = curve.series(dec)
        try:
            f = fit_error_rate(rs, F, dF)
        except NumericalError as exc:
            rows.append({"decoder": dec, "eps": "nan", "eps_err": "nan", "n0": "nan", "n0_err": "nan", "flag": f"failed: {exc}"})
            continue
        rows.append({"decoder": dec, "eps": f.eps, "eps_err": f.eps_err, "n0": f.n0, "n0_err": f.n0_err, "flag": f.flag})
    return rows


def _require_some_fit(fits):
    if all(str(r["flag"]).startswith("failed") for r in fits):
        raise NumericalError("; ".join(f"{r['decoder']}: {r['flag']}" for r in fits) or "nothing to fit")


def cmd_fit(args) -> int:
    config, out = _config(args), _out(args)
    curve = FidelityCurve()
    try:
        rows = fileio.read_csv(args.fidelity)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.fidelity}: {exc}") from exc
    for r in rows:
        if r["state"] == "avg":
            n = int(r["n"])
            curve.counts[(r["decoder"], "avg", int(r["rounds"]))] = [round(float(r["F"]) * n), n, int(r["attempted"])]
    fits = _fit_rows(curve)
    _require_some_fit(fits)
    name = _write_table(out, "fit", fits, args.format)
    _manifest(out, config, "fit", [name])
    return EXIT_OK


def _report_doc(result) -> dict:
    rep = compare_soft_hard(result)
    rep["format_version"] = fileio.FORMAT_VERSION
    rep["reference_reduction"] = 0.068
    return rep


def cmd_report(args) -> int:
    config, out = _config(args), _out(args)
    res = RowResults(_read_results(args.results))
    rep = _report_doc(res)
    if args.format == "csv":
        name = _write_table(out, "report", rep["per_round"], "csv")
        summary = {k: v for k, v in rep.items() if k not in ("per_round", "per_state")}
        fileio.write_json(out / "report_summary.json", summary)
        names = [name, "report_summary.json"]
    else:
        fileio.write_json(out / "report.json", rep)
        names = ["report.json"]
    _manifest(out, config, "report", names)
    return EXIT_OK


def cmd_run(args) -> int:
    config, out = _config(args), _out(args)
    result = run_memory_experiment(config)
    files = [_write_table(out, "fidelity", list(result.curve.rows()), "csv")]
    fits = _fit_rows(result.curve)
    files.append(_write_table(out, "fit", fits, args.format))
    _require_some_fit(fits)
    if {"mwpm_hard", "mwpm_soft"} <= set(config.decoders):
        fileio.write_json(out / "report.json", _report_doc(result))
        files.append("report.json")
    for key, g in result.graphs.items():
        name = f"graph_R{key}.json" if isinstance(key, int) else f"graph_R{key[0]}_{key[1]}.json"
        g.save(out / name, config.layout)
        files.append(name)
    _manifest(out, config, "run", files)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="s13", description="Surface-13 memory experiment simulator and decoders.")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--config", help="JSON config with code/noise/readout/run sections")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: $S13_WORKERS or 1)")
    p.add_argument("--format", choices=("json", "csv"), default="csv", help="format of summary tables")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="sample shots for every (state, rounds) in the config")
    s.add_argument("--binary", action="store_true", help="write .npz instead of JSON lines")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("dem", help="derive model (noise-floor) graphs")
    s.set_defaults(func=cmd_dem)

    s = sub.add_parser("fit-graph", help="estimate a decoding graph from shots")
    s.add_argument("--shots", required=True)
    s.add_argument("--floor", help="model graph used as topology and noise floor")
    s.add_argument("--split", choices=("A", "B"), help="estimate from one half only (A: even shot ids, B: odd)")
    s.add_argument("--readout", help="readout model JSON; re-hardens IQ points")
    s.set_defaults(func=cmd_fit_graph)

    s = sub.add_parser("decode", help="decode shots with a graph")
    s.add_argument("--shots", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--decoders", help="comma list from " + ",".join(DECODERS))
    s.add_argument("--split", choices=("A", "B"), help="graph was estimated on this half; decode the other")
    s.add_argument("--readout", help="readout model JSON (needed for mwpm_soft)")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("analyze", help="fidelity, defect-rate and correlation tables")
    s.add_argument("--results", nargs="*")
    s.add_argument("--shots", nargs="*")
    s.add_argument("--readout")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("fit", help="fit logical error rates to a fidelity table")
    s.add_argument("--fidelity", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("report", help="soft-vs-hard comparison from per-shot results")
    s.add_argument("--results", nargs="+", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", help="whole pipeline in one go")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, fileio.FormatError, ro.ReadoutError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, GraphError, DecoderError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
