"""Output directory writer: CSV tables, SVG plots and a hashed manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path

import numpy as np

from .. import __version__
from .plot import line_plot


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    return obj


class Outputs:
    def __init__(self, out_dir, plots: bool = True):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.plots = plots
        self.files: list[Path] = []

    def _register(self, path: Path) -> Path:
        if path not in self.files:
            self.files.append(path)
        return path

    def csv(self, name: str, header, rows, comments: dict | None = None) -> Path:
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            for key, val in (comments or {}).items():
                fh.write(f"# {key}: {val}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        return self._register(path)

    def trajectory(self, name: str, traj) -> Path:
        path = self.dir / name
        traj.to_csv(path)
        return self._register(path)

    def plot(self, name: str, series, **kw) -> Path | None:
        if not self.plots:
            return None
        path = self.dir / name
        line_plot(path, series, **kw)
        return self._register(path)

    def manifest(self, config: dict, model_constants: dict, status: str, summary: dict,
                 error: str | None = None) -> Path:
        entries = [{"file": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size}
                   for p in sorted(self.files)]
        doc = {
            "package": "sgdlab",
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "seed": config.get("seed"),
            "status": status,
            "error": error,
            "config": config,
            "model": model_constants,
            "summary": summary,
            "files": entries,
        }
        path = self.dir / "manifest.json"
        with open(path, "w") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path
