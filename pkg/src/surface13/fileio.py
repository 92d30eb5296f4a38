"""On-disk formats: shot streams, per-shot decoder results, tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .noisy_circuit import ShotBatch

FORMAT_VERSION = 1
RESULT_FIELDS = ("shot_id", "state", "rounds", "decoder", "prediction", "truth", "observed", "accepted", "success", "weight", "matched_pairs")


class FormatError(ValueError):
    pass


def bits_to_hex(bits) -> str:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()


def hex_to_bits(text: str, n: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    bits = np.unpackbits(raw)
    if len(bits) < n:
        raise FormatError(f"hex field too short for {n} bits")
    return bits[:n]


# --------------------------------------------------------------------------- shots


def write_shots_jsonl(path, batches: list[ShotBatch]) -> None:
    """One header line, then one JSON record per shot."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"format_version": FORMAT_VERSION, "kind": "shots"}) + "\n")
        for b in batches:
            n_rec = b.true_bits.shape[1]
            n_leak = b.leak_flags.shape[1]
            for i in range(len(b)):
                rec = {
                    "state_id": int(b.state, 2),
                    "state": b.state,
                    "rounds": b.rounds,
                    "shot_id": int(b.shot_ids[i]),
                    "n_records": n_rec,
                    "n_leak": n_leak,
                    "true_bits": bits_to_hex(b.true_bits[i]),
                    "hard_bits": bits_to_hex(b.hard_bits[i]),
                    "leak_flags": bits_to_hex(b.leak_flags[i]) if n_leak else "",
                    "iq": b.iq[i].ravel().tolist() if b.iq is not None else None,
                    "truth_flip": int(b.truth_flip[i]),
                }
                fh.write(json.dumps(rec) + "\n")


def read_shots_jsonl(path) -> list[ShotBatch]:
    groups: dict[tuple[str, int], dict] = {}
    with open(path) as fh:
        header = json.loads(fh.readline() or "{}")
        if header.get("format_version") != FORMAT_VERSION or header.get("kind") != "shots":
            raise FormatError(f"{path}: not a version-{FORMAT_VERSION} shot file")
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            m = r["n_records"]
            n_leak = r["n_leak"]
            g = groups.setdefault((r["state"], r["rounds"]), {"ids": [], "true": [], "hard": [], "leak": [], "iq": [], "truth": []})
            g["ids"].append(r["shot_id"])
            g["true"].append(hex_to_bits(r["true_bits"], m))
            g["hard"].append(hex_to_bits(r["hard_bits"], m))
            g["leak"].append(hex_to_bits(r["leak_flags"], n_leak) if n_leak else np.zeros(0, np.uint8))
            g["iq"].append(None if r["iq"] is None else np.asarray(r["iq"], float).reshape(m, 2))
            g["truth"].append(r["truth_flip"])
    out = []
    for (state, rounds), g in groups.items():
        iq = None if g["iq"][0] is None else np.stack(g["iq"])
        out.append(
            ShotBatch(state, rounds, np.array(g["ids"], np.int64), np.stack(g["true"]), np.stack(g["hard"]), np.stack(g["leak"]), np.array(g["truth"], np.uint8), iq)
        )
    return out


def write_shots_npz(path, batches: list[ShotBatch]) -> None:
    arrays = {"format_version": np.array(FORMAT_VERSION), "groups": np.array([f"{b.state}:{b.rounds}" for b in batches])}
    for k, b in enumerate(batches):
        arrays[f"{k}_ids"] = b.shot_ids
        arrays[f"{k}_true"] = b.true_bits
        arrays[f"{k}_hard"] = b.hard_bits
        arrays[f"{k}_leak"] = b.leak_flags
        arrays[f"{k}_truth"] = b.truth_flip
        if b.iq is not None:
            arrays[f"{k}_iq"] = b.iq
    np.savez_compressed(path, **arrays)


def read_shots_npz(path) -> list[ShotBatch]:
    with np.load(path) as z:
        if int(z["format_version"]) != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format_version")
        out = []
        for k, tag in enumerate(z["groups"]):
            state, rounds = str(tag).split(":")
            iq = z[f"{k}_iq"] if f"{k}_iq" in z.files else None
            out.append(ShotBatch(state, int(rounds), z[f"{k}_ids"], z[f"{k}_true"], z[f"{k}_hard"], z[f"{k}_leak"], z[f"{k}_truth"], iq))
    return out


def write_shots(path, batches) -> None:
    (write_shots_npz if str(path).endswith(".npz") else write_shots_jsonl)(path, batches)


def read_shots(path) -> list[ShotBatch]:
    try:
        return (read_shots_npz if str(path).endswith(".npz") else read_shots_jsonl)(path)
    except (KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed shot file ({exc})") from exc


# --------------------------------------------------------------------------- tables


def write_csv(path, rows, fields) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.strip() != f"# format_version={FORMAT_VERSION}":
            raise FormatError(f"{path}: missing or unsupported format_version line")
        return list(csv.DictReader(fh))


def result_rows(task, predictions: dict):
    """Per-shot rows for one decoded task (see RESULT_FIELDS)."""
    for dec, (pred, weight, pairs, acc) in predictions.items():
        ok = (pred ^ task.observed) == 0
        for i in range(len(pred)):
            accepted = True if acc is None else bool(acc[i])
            yield {
                "shot_id": int(task.shot_ids[i]),
                "state": task.state,
                "rounds": task.rounds,
                "decoder": dec,
                "prediction": int(pred[i]),
                "truth": int(task.truth[i]),
                "observed": int(task.observed[i]),
                "accepted": int(accepted),
                "success": int(ok[i] and accepted),
                "weight": repr(float(weight[i])),
                "matched_pairs": int(pairs[i]),
            }


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
