"""Corpus generation, persistence and loading.

A corpus holds phantoms in three splits.  Training phantoms carry a small
number of independently rendered speckle instances (two by default) that
form input/target pairs.  Validation and test phantoms carry ten
instances: one (chosen at random and recorded) serves as the evaluation
input, the other nine are averaged into the pseudo-clean reference image.

Layout on disk::

    out_dir/
      manifest.json                 # written last: completeness marker
      train/phantom_train_0000/
        geometry.json
        instance_0.s2sf  instance_1.s2sf ...
        interface.s2sf
      val/phantom_val_0000/
        ... instance_0..9.s2sf  average.s2sf ...

Seeds are derived per phantom and instance by hashing
``(root_seed, phantom_id, role)`` so regeneration is deterministic and
parallelizable.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import imaging, phantom
from .errors import ConfigError, DatasetError, ShapeError
from .grid import GridSpec, ImageGrid, read_s2sf, write_s2sf

MANIFEST_VERSION = "1"
SPLITS = ("train", "val", "test")


@dataclass
class DatasetConfig:
    """Desk-scale defaults; the full-scale corpus shape is reachable by config."""

    train_phantoms: int = 200
    train_instances: int = 2
    val_phantoms: int = 20
    test_phantoms: int = 20
    eval_instances: int = 10
    width_px: int = 128
    height_px: int = 128
    spacing_mm: float = 0.15
    inclusions_per_phantom: int = 16   # keeps the inclusion area fraction of a
                                       # full-size phantom at this smaller extent
    # bulk density sits past the point where raising it further no longer
    # changes the speckle statistics (envelope SNR at the Rayleigh value)
    density_per_mm2: float = 100.0
    interface_density_per_mm: float = 20.0
    dynamic_range_db: float = 70.0
    sigma_lat_mm: float = None
    sigma_ax_mm: float = None
    carrier_wavelength_mm: float = 0.22

    def __post_init__(self):
        if min(self.train_phantoms, self.val_phantoms, self.test_phantoms) < 0:
            raise ConfigError("phantom counts must be >= 0")
        if self.train_instances < 2:
            raise ConfigError("training needs at least 2 instances per phantom")
        if self.eval_instances < 2:
            raise ConfigError("val/test need at least 2 instances per phantom")
        if self.sigma_lat_mm is None:
            self.sigma_lat_mm = 7.0 * self.spacing_mm
        if self.sigma_ax_mm is None:
            self.sigma_ax_mm = 1.0 * self.spacing_mm

    def grid_spec(self) -> GridSpec:
        return GridSpec(self.width_px, self.height_px,
                        self.spacing_mm, self.spacing_mm)

    def phantom_config(self) -> phantom.PhantomConfig:
        spec = self.grid_spec()
        return phantom.PhantomConfig(width_mm=spec.width_mm,
                                     height_mm=spec.height_mm,
                                     n_inclusions=self.inclusions_per_phantom)

    def psf(self) -> imaging.PsfSpec:
        return imaging.PsfSpec(sigma_lat_mm=self.sigma_lat_mm,
                               sigma_ax_mm=self.sigma_ax_mm,
                               carrier_wavelength_mm=self.carrier_wavelength_mm)


def derive_seed(root_seed: int, phantom_id: str, role: str) -> int:
    """Stable 64-bit sub-seed for one generation step of one phantom."""
    digest = hashlib.sha256(f"{root_seed}:{phantom_id}:{role}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class DatasetEntry:
    phantom_id: str
    geometry_path: str
    instance_paths: list
    interface_path: str
    average_path: str = None
    input_index: int = None  # val/test: which instance is the held-out input


@dataclass
class DatasetManifest:
    split: str
    entries: list
    generator_config: dict
    version: str = MANIFEST_VERSION
    root: Path = None  # directory the relative paths resolve against

    def __len__(self):
        return len(self.entries)

    def resolve(self, rel_path: str) -> Path:
        return (self.root / rel_path) if self.root else Path(rel_path)


def _entry_to_dict(entry: DatasetEntry) -> dict:
    doc = {"phantom_id": entry.phantom_id,
           "geometry_path": entry.geometry_path,
           "instance_paths": entry.instance_paths,
           "interface_path": entry.interface_path}
    if entry.average_path is not None:
        doc["average_path"] = entry.average_path
        doc["input_index"] = entry.input_index
    return doc


def write_manifest(out_dir, splits: dict, generator_config: dict) -> Path:
    doc = {
        "version": MANIFEST_VERSION,
        "generator_config": generator_config,
        "splits": {name: [_entry_to_dict(e) for e in entries]
                   for name, entries in splits.items()},
    }
    path = Path(out_dir) / "manifest.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(path, split: str = "train") -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise DatasetError(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest is not valid JSON: {path}") from exc
    entries = [DatasetEntry(
        phantom_id=item["phantom_id"],
        geometry_path=item["geometry_path"],
        instance_paths=item["instance_paths"],
        interface_path=item["interface_path"],
        average_path=item.get("average_path"),
        input_index=item.get("input_index"),
    ) for item in doc["splits"].get(split, [])]
    return DatasetManifest(split=split, entries=entries,
                           generator_config=doc["generator_config"],
                           version=doc["version"], root=path.parent)


def generate_dataset(cfg: DatasetConfig, root_seed: int, out_dir) -> Path:
    """Generate the full corpus; returns the manifest path (written last)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid_spec()
    pcfg = cfg.phantom_config()
    psf = cfg.psf()
    plan = {"train": (cfg.train_phantoms, cfg.train_instances, False),
            "val": (cfg.val_phantoms, cfg.eval_instances, True),
            "test": (cfg.test_phantoms, cfg.eval_instances, True)}
    splits = {}
    for split, (count, n_instances, with_average) in plan.items():
        entries = []
        for idx in range(count):
            phantom_id = f"{split}_{idx:04d}"
            pdir = out_dir / split / f"phantom_{phantom_id}"
            try:
                entries.append(_generate_phantom_entry(
                    cfg, pcfg, grid, psf, root_seed, phantom_id, pdir,
                    n_instances, with_average))
            except Exception as exc:
                shutil.rmtree(pdir, ignore_errors=True)
                raise DatasetError(
                    f"generation failed for {phantom_id}: {exc}") from exc
        splits[split] = entries
    return write_manifest(out_dir, splits, _config_to_dict(cfg, root_seed))


def _config_to_dict(cfg: DatasetConfig, root_seed: int) -> dict:
    doc = asdict(cfg)
    doc["root_seed"] = root_seed
    return doc


def _generate_phantom_entry(cfg, pcfg, grid, psf, root_seed, phantom_id,
                            pdir: Path, n_instances, with_average):
    pdir.mkdir(parents=True, exist_ok=True)
    rel = pdir.relative_to(pdir.parent.parent)

    geom = phantom.generate_phantom(pcfg, derive_seed(root_seed, phantom_id,
                                                      "geometry"))
    phantom.save_geometry(pdir / "geometry.json", geom)

    interface = phantom.rasterize_interfaces(geom, grid)
    write_s2sf(pdir / "interface.s2sf", interface)

    instance_rel = []
    bmodes = []
    for k in range(n_instances):
        field_k = imaging.instantiate_scatterers(
            geom, cfg.density_per_mm2, cfg.interface_density_per_mm,
            derive_seed(root_seed, phantom_id, f"instance_{k}"))
        bmode = imaging.render_bmode(field_k, psf, grid, cfg.dynamic_range_db)
        # store/aggregate at the f32 precision of the file format
        bmode = bmode.with_values(bmode.values.astype(np.float32)
                                  .astype(np.float64))
        path = pdir / f"instance_{k}.s2sf"
        write_s2sf(path, bmode)
        instance_rel.append(str(rel / path.name))
        bmodes.append(bmode)

    entry = DatasetEntry(phantom_id=phantom_id,
                         geometry_path=str(rel / "geometry.json"),
                         instance_paths=instance_rel,
                         interface_path=str(rel / "interface.s2sf"))
    if with_average:
        pick = np.random.default_rng(
            derive_seed(root_seed, phantom_id, "input_pick"))
        entry.input_index = int(pick.integers(n_instances))
        others = [b for k, b in enumerate(bmodes) if k != entry.input_index]
        write_s2sf(pdir / "average.s2sf", imaging.average_images(others))
        entry.average_path = str(rel / "average.s2sf")
    return entry


# ---------------------------------------------------------------------------
# training-side loading


def load_pair(manifest: DatasetManifest, index: int, rng: np.random.Generator):
    """Two distinct instances of one phantom in random order, plus the
    interface map: (input, target, interface)."""
    if index >= len(manifest.entries):
        raise DatasetError(f"entry index {index} out of range")
    entry = manifest.entries[index]
    n = len(entry.instance_paths)
    if n < 2:
        raise DatasetError(f"{entry.phantom_id}: needs >= 2 instances")
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    j = j + 1 if j >= i else j
    try:
        a = read_s2sf(manifest.resolve(entry.instance_paths[i]))
        b = read_s2sf(manifest.resolve(entry.instance_paths[j]))
        interface = read_s2sf(manifest.resolve(entry.interface_path))
    except FileNotFoundError as exc:
        raise DatasetError(str(exc)) from exc
    return a, b, interface


def random_crop_pair(inp: ImageGrid, tgt: ImageGrid, interface: ImageGrid,
                     size: int, rng: np.random.Generator):
    """One crop window applied identically to all three grids."""
    h, w = inp.values.shape
    if tgt.values.shape != (h, w) or interface.values.shape != (h, w):
        raise ShapeError("pair and interface dimensions differ")
    if size > h or size > w:
        raise ShapeError(f"crop size {size} exceeds image dims {h}x{w}")
    i0 = int(rng.integers(h - size + 1))
    j0 = int(rng.integers(w - size + 1))
    crop = lambda g: g.with_values(g.values[i0:i0 + size, j0:j0 + size])
    return crop(inp), crop(tgt), crop(interface)
