"""Quantitative evaluation: error metrics, region statistics, benchmarking.

The corpus protocol scores each despeckling method on the designated input
instance of every val/test phantom against the stored nine-instance
average image, reporting mean and standard deviation of the MSE and MAD
over the corpus plus per-application runtimes.  Homogeneous-region
intensity statistics (mean, population std, 64-bin histogram over [0, 1])
serve as a flatness measure where no reference image exists.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import filters, net, phantom
from .dataset import DatasetManifest
from .errors import ConfigError, DatasetError, DomainError, ShapeError
from .grid import GridSpec, ImageGrid, read_s2sf

HISTOGRAM_BINS = 64


@dataclass
class RegionSpecRect:
    """Pixel-space rectangle, inclusive-exclusive bounds."""

    x0: int
    z0: int
    x1: int
    z1: int
    name: str = None

    def __post_init__(self):
        if self.x1 <= self.x0 or self.z1 <= self.z0:
            raise DomainError("region must be nonempty")
        if min(self.x0, self.z0) < 0:
            raise DomainError("region bounds must be nonnegative")
        if self.name is None:
            self.name = f"r{self.x0}_{self.z0}_{self.x1}_{self.z1}"

    def slice_of(self, values: np.ndarray) -> np.ndarray:
        h, w = values.shape
        if self.x1 > w or self.z1 > h:
            raise DomainError(f"region {self.name} outside image bounds")
        return values[self.z0:self.z1, self.x0:self.x1]


def _values_of(img):
    return np.asarray(img.values if isinstance(img, ImageGrid) else img,
                      dtype=np.float64)


def _paired(a, b):
    va, vb = _values_of(a), _values_of(b)
    if va.shape != vb.shape:
        raise ShapeError(f"image dimensions differ: {va.shape} vs {vb.shape}")
    return va, vb


def mse(a, b) -> float:
    va, vb = _paired(a, b)
    return float(np.mean((va - vb) ** 2))


def mad(a, b) -> float:
    va, vb = _paired(a, b)
    return float(np.mean(np.abs(va - vb)))


def region_stats(img, region: RegionSpecRect) -> dict:
    block = region.slice_of(_values_of(img))
    hist, _ = np.histogram(block, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    return {"mean": float(block.mean()),
            "std": float(block.std()),  # population std
            "histogram": hist.tolist()}


def find_homogeneous_rect(geom: phantom.PhantomGeometry, spec: GridSpec,
                          size_px: int, margin_mm: float = 0.0):
    """First ``size_px`` square of background pixels clear of all inclusions
    (inflated by ``margin_mm``); None when the phantom has no such window."""
    covered = phantom.inclusion_mask(geom, spec, margin_mm)
    h, w = covered.shape
    if size_px > h or size_px > w:
        return None
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(covered, axis=0), axis=1)
    s = size_px
    window = (integral[s:, s:] - integral[:-s, s:]
              - integral[s:, :-s] + integral[:-s, :-s])
    free = np.argwhere(window == 0)
    if free.size == 0:
        return None
    i0, j0 = free[0]
    return RegionSpecRect(x0=int(j0), z0=int(i0),
                          x1=int(j0) + s, z1=int(i0) + s)


# ---------------------------------------------------------------------------
# method resolution (filters, identity, trained network)


def resolve_method(spec: dict):
    """Tagged method spec -> (name, ImageGrid -> ImageGrid callable)."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("method spec must be an object with a 'type' key")
    kind = spec["type"]
    name = spec.get("name", kind)
    if kind == "identity":
        _reject_extra(spec, {"type", "name"})
        return name, lambda img: img
    if kind == "net":
        _reject_extra(spec, {"type", "name", "checkpoint"})
        if "checkpoint" not in spec:
            raise ConfigError("net method needs a 'checkpoint' path")
        params, nspec = net.load_checkpoint(spec["checkpoint"])
        return name, lambda img: net.infer_image(params, nspec, img)
    fname, fn = filters.filter_from_spec(
        {k: v for k, v in spec.items() if k != "name"})
    return (name if "name" in spec else fname), fn


def _reject_extra(spec, allowed):
    extra = set(spec) - allowed
    if extra:
        raise ConfigError(f"unknown keys in method spec: {sorted(extra)}")


def default_method_specs(checkpoint=None) -> list:
    """Identity baseline plus the five filters at their tuned defaults,
    plus the trained network when a checkpoint is given."""
    specs = [
        {"type": "identity", "name": "input"},
        {"type": "srad"},
        {"type": "median"},
        {"type": "bilateral"},
        {"type": "nlm"},
        {"type": "obnlm"},
    ]
    if checkpoint is not None:
        specs.append({"type": "net", "checkpoint": str(checkpoint)})
    return specs


# ---------------------------------------------------------------------------
# corpus evaluation


@dataclass
class MethodReport:
    mse_mean: float
    mse_std: float
    mad_mean: float
    mad_std: float
    runtime_ms: dict
    region_stats: dict


@dataclass
class EvalReport:
    methods: dict            # name -> MethodReport
    rows: list               # (phantom_id, method, mse, mad, runtime_ms)

    def to_jsonable(self) -> dict:
        return {"methods": {k: asdict(v) for k, v in self.methods.items()}}


def evaluate_corpus(manifest: DatasetManifest, method_specs: list,
                    regions: list = None) -> EvalReport:
    """Apply each method to every designated input instance and score it
    against the stored average image."""
    if len(manifest.entries) == 0:
        raise DatasetError(f"split {manifest.split!r} has no entries")
    resolved = [resolve_method(s) for s in method_specs]
    regions = regions or []
    rows = []
    per_method = {name: {"mse": [], "mad": [], "ms": [],
                         "pixels": {r.name: [] for r in regions}}
                  for name, _ in resolved}
    for entry in manifest.entries:
        if entry.average_path is None:
            raise DatasetError(
                f"{entry.phantom_id}: no average image; evaluate on val/test")
        inp = read_s2sf(manifest.resolve(
            entry.instance_paths[entry.input_index]))
        avg = read_s2sf(manifest.resolve(entry.average_path))
        for name, fn in resolved:
            t0 = time.perf_counter()
            out = fn(inp)
            elapsed_ms = (time.perf_counter() - t0) * 1e3
            m1, m2 = mse(out, avg), mad(out, avg)
            agg = per_method[name]
            agg["mse"].append(m1)
            agg["mad"].append(m2)
            agg["ms"].append(elapsed_ms)
            for r in regions:
                agg["pixels"][r.name].append(r.slice_of(out.values).ravel())
            rows.append((entry.phantom_id, name, m1, m2, elapsed_ms))

    methods = {}
    for name, agg in per_method.items():
        rstats = {}
        for r in regions:
            pooled = np.concatenate(agg["pixels"][r.name])
            hist, _ = np.histogram(pooled, bins=HISTOGRAM_BINS, range=(0, 1))
            rstats[r.name] = {"mean": float(pooled.mean()),
                              "std": float(pooled.std()),
                              "histogram": hist.tolist()}
        ms = np.array(agg["ms"])
        methods[name] = MethodReport(
            mse_mean=float(np.mean(agg["mse"])),
            mse_std=float(np.std(agg["mse"])),
            mad_mean=float(np.mean(agg["mad"])),
            mad_std=float(np.std(agg["mad"])),
            runtime_ms={"mean": float(ms.mean()), "std": float(ms.std()),
                        "n": int(ms.size)},
            region_stats=rstats)
    return EvalReport(methods=methods, rows=rows)


def write_report(report: EvalReport, out_dir) -> tuple:
    """JSON aggregate plus per-image CSV; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    with open(json_path, "w") as fh:
        json.dump(report.to_jsonable(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    csv_path = out_dir / "per_image.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phantom_id", "method", "mse", "mad", "runtime_ms"])
        for row in report.rows:
            writer.writerow([row[0], row[1], f"{row[2]:.12g}",
                             f"{row[3]:.12g}", f"{row[4]:.6g}"])
    return json_path, csv_path


# ---------------------------------------------------------------------------
# runtime benchmarking


def bench_runtime(method_fn, img: ImageGrid, warmups: int = 1,
                  reps: int = 5) -> dict:
    """Wall-clock stats of repeated applications, warmups excluded."""
    if reps < 3:
        raise ConfigError("need at least 3 timed repetitions")
    for _ in range(warmups):
        method_fn(img)
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        method_fn(img)
        samples.append((time.perf_counter() - t0) * 1e3)
    arr = np.array(samples)
    return {"mean_ms": float(arr.mean()), "std_ms": float(arr.std()),
            "n": int(arr.size), "min_ms": float(arr.min()),
            "max_ms": float(arr.max())}
