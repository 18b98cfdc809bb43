"""File emission: CSV tables, JSON report, grid snapshots and the run manifest.

Floats are written with ``repr`` (shortest round-trip decimal). Nothing
time-dependent goes into any file, so reruns produce identical bytes and the
manifest checksums double as a reproducibility check.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config
from .noise import RNG_ALGORITHM

OUTPUT_ROOT_ENV = "PERFSPDE_OUTPUT_ROOT"

SAMPLES_HEADER = ["epsilon", "model", "path_id", "functional_id", "sample_time", "value"]
CELL_HEADER = ["rho", "m", "theta", "lambda", "a11", "a12", "a21", "a22", "residual1", "residual2", "iters1", "iters2"]
ENERGY_HEADER = ["epsilon", "model", "path_id", "energy_x0", "energy_x1", "failed_step"]
PATHWISE_HEADER = ["epsilon", "path_id", "l2_distance"]


class OutputError(OSError):
    """Writing an output file failed."""


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue().encode()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def json_bytes(payload) -> bytes:
    return (json.dumps(_jsonable(payload), indent=2) + "\n").encode()


def energy_rows(eps, model: str, records):
    for r in records:
        yield eps, model, r.path_id, r.energy_x0[-1], r.energy_x1, r.failed_step


def cell_rows(tensors):
    for t in tensors:
        row = t.csv_row()
        yield [row[k] for k in CELL_HEADER]


def snapshot_files(name: str, field: np.ndarray, h: float, t: float, fmt_kind: str = "csv") -> dict[str, bytes]:
    """A nodal ``(n+1, n+1)`` field as ``x,y,value`` CSV or raw float64 plus a text sidecar."""
    field = np.asarray(field, float)
    n1 = field.shape[0]
    if fmt_kind == "csv":
        i, j = np.meshgrid(np.arange(n1), np.arange(n1), indexing="ij")
        rows = zip((i * h).ravel(), (j * h).ravel(), field.ravel())
        return {f"{name}.csv": csv_bytes(["x", "y", "value"], rows)}
    if fmt_kind == "raw":
        sidecar = (
            f"dtype = float64 little-endian\nshape = {n1} {n1}\norder = x-major (index [i, j] at x=i*h, y=j*h)\n"
            f"spacing = {h!r}\ntime = {t!r}\n"
        )
        return {f"{name}.f64": field.astype("<f8").tobytes(), f"{name}.txt": sidecar.encode()}
    raise ValueError(f"unknown snapshot format {fmt_kind!r}")


def emit_outputs(out_dir, files: dict[str, bytes], cfg: Config, extra: dict | None = None) -> dict:
    """Write ``files`` into ``out_dir`` and a ``manifest.json`` describing them."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc
    checksums = {}
    for name in sorted(files):
        path = out / name
        try:
            path.write_bytes(files[name])
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc
        checksums[name] = hashlib.sha256(files[name]).hexdigest()
    manifest = {
        "artifact": "perfspde",
        "version": __version__,
        "rng": RNG_ALGORITHM,
        "config": cfg.serialize(),
        "files": checksums,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    try:
        path.write_bytes(json_bytes(manifest))
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return manifest


def read_samples_csv(path) -> list[tuple]:
    """Rows of a samples table with numeric columns converted."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != SAMPLES_HEADER:
                raise ValueError(f"{path}: expected columns {','.join(SAMPLES_HEADER)}")
            return [(float(e), m, int(p), f, float(t), float(v) if v else math.nan) for e, m, p, f, t, v in reader]
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc


def read_cell_csv(path):
    """First data row of a ``cell`` table as a dict of floats."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path}: no tensor rows")
    return {k: float(v) for k, v in rows[0].items() if v not in ("", None)}
