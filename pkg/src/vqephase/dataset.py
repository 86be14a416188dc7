"""Line-oriented dataset files.

Line 1 is a JSON object ``{"kind": "metadata", "format_version": ..., ...}``;
every following line is one record. Keys are sorted, separators compact and
floats use Python's shortest round-trip ``repr``, so write -> read -> write is
byte-identical.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .vqe import SweepDataset, VqeRecord

FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        if not np.isfinite(f):
            return None
        return f
    return v


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def record_to_dict(r: VqeRecord) -> dict:
    return {
        "kind": "record",
        "x": r.x,
        "theta_star": np.asarray(r.theta_star, dtype=np.float64),
        "final_energy": r.final_energy,
        "iters_used": int(r.iters_used),
        "converged": bool(r.converged),
        "exact_energy": r.exact_energy,
        "fidelity": r.fidelity,
        "error": r.error,
        "generated": bool(r.generated),
        "label": r.label,
    }


def record_from_dict(d: dict) -> VqeRecord:
    e = d.get("final_energy")
    return VqeRecord(
        x={k: float(v) for k, v in d["x"].items()},
        theta_star=np.asarray(d["theta_star"], dtype=np.float64),
        final_energy=float("nan") if e is None else float(e),
        iters_used=int(d["iters_used"]),
        converged=bool(d["converged"]),
        exact_energy=d.get("exact_energy"),
        fidelity=d.get("fidelity"),
        error=d.get("error"),
        generated=bool(d.get("generated", False)),
        label=d.get("label"),
    )


def dumps_dataset(ds: SweepDataset) -> str:
    meta = dict(ds.metadata)
    meta["kind"] = "metadata"
    meta["format_version"] = FORMAT_VERSION
    lines = [_dumps(meta)]
    n_params = meta.get("n_params")
    for r in ds.records:
        if n_params is not None and len(r.theta_star) != n_params:
            raise DatasetError(f"record has {len(r.theta_star)} angles, layout expects {n_params}")
        lines.append(_dumps(record_to_dict(r)))
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> SweepDataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DatasetError("empty dataset file")
    meta = json.loads(lines[0])
    if meta.pop("kind", None) != "metadata":
        raise DatasetError("first line must be the metadata object")
    version = meta.pop("format_version", None)
    if version != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format version {version}")
    records = []
    for i, ln in enumerate(lines[1:], start=2):
        d = json.loads(ln)
        if d.get("kind") != "record":
            raise DatasetError(f"line {i}: expected a record")
        rec = record_from_dict(d)
        if "n_params" in meta and len(rec.theta_star) != meta["n_params"]:
            raise DatasetError(f"line {i}: {len(rec.theta_star)} angles, layout expects "
                               f"{meta['n_params']}")
        records.append(rec)
    return SweepDataset(meta, records)


def save_dataset(path, ds: SweepDataset) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def load_dataset(path) -> SweepDataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))
