"""CSV persistence for experiment datasets, optimizer traces and user layouts."""
import csv
import hashlib
import json
import logging
import math
from pathlib import Path

import numpy as np

from darb import __version__
from darb.exceptions import ConfigError
from darb.models.schemas import Dataset, UserLayout

logger = logging.getLogger(__name__)

TRACE_HEADER = ["t", "L", "P_T_w", "P_T_dbw", "EE"]
LAYOUT_HEADER = ["user", "x_m", "y_m", "d_m", "beta"]


def config_hash(data: dict) -> str:
    """First 12 hex digits of the SHA-256 of the canonical JSON."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def provenance_line(experiment: str, seed: int, canonical: dict) -> str:
    return f"# darb {__version__} experiment={experiment} seed={seed} config={config_hash(canonical)}"


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
        return f"{float(value):.10g}"
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_rows(path: str | Path, header: list, rows: list, provenance: str | None = None) -> Path:
    """Write rows (lists in header order) as CSV, optionally after a '#' provenance line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        if provenance:
            f.write(provenance + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    logger.info("Wrote %d row(s) to %s", len(rows), path)
    return path


def write_dataset(path: str | Path, dataset: Dataset, provenance: str | None = None) -> Path:
    return write_rows(path, dataset.header, dataset.rows, provenance)


def read_csv(path: str | Path) -> tuple:
    """(header, rows as dicts of strings), skipping '#' comment lines."""
    with Path(path).open(newline="", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    reader = csv.DictReader(lines)
    rows = list(reader)
    return reader.fieldnames or [], rows


def write_trial_trace(path: str | Path, rows: list, provenance: str | None = None) -> Path:
    """Per-trial Monte Carlo records (dicts sharing one key set)."""
    if not rows:
        logger.warning("Trial trace is empty; writing header only to %s", path)
        header = ["trial", "beam", "selected_user", "sinr", "rate", "fed_back_bits"]
    else:
        header = list(rows[0].keys())
    return write_rows(path, header, [[r[c] for c in header] for r in rows], provenance)


def write_layout(path: str | Path, layout: UserLayout, provenance: str | None = None) -> Path:
    rows = [
        [k, layout.positions[k, 0], layout.positions[k, 1], layout.distances[k], layout.betas[k]]
        for k in range(layout.k_users)
    ]
    return write_rows(path, LAYOUT_HEADER, rows, provenance)


def read_layout(path: str | Path) -> UserLayout:
    header, rows = read_csv(path)
    if header != LAYOUT_HEADER:
        raise ConfigError(f"{path}: expected layout columns {LAYOUT_HEADER}, got {header}")
    if not rows:
        raise ConfigError(f"{path}: layout has no users")
    rows.sort(key=lambda r: int(r["user"]))
    try:
        positions = np.array([[float(r["x_m"]), float(r["y_m"])] for r in rows])
        distances = np.array([float(r["d_m"]) for r in rows])
        betas = np.array([float(r["beta"]) for r in rows])
    except ValueError as e:
        raise ConfigError(f"{path}: malformed layout value ({e})") from e
    return UserLayout(positions=positions, distances=distances, betas=betas)
