"""Randomized geometric phantoms and interface indicator maps.

A phantom is a background region plus a list of elliptical or rectangular
inclusions ("spheroid" and "cuboid" cross-sections of the imaging plane).
Each region carries the statistics used when instantiating point
scatterers; inclusions may additionally carry a bright boundary interface.
Geometry is purely 2-D: x is lateral (width), z is axial (depth), both in
millimetres.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .grid import GridSpec, ImageGrid

SPHEROID = "spheroid"
CUBOID = "cuboid"

# An interface map is an ImageGrid whose values are exactly 0 or 1.
InterfaceMap = ImageGrid


@dataclass
class RegionSpec:
    """Scatterer statistics of one region."""

    anechoic: bool
    amplitude_sigma: float  # sigma of the zero-mean normal amplitude draw

    def __post_init__(self):
        if self.amplitude_sigma < 0:
            raise ConfigError("amplitude_sigma must be >= 0")


@dataclass
class InclusionSpec:
    shape: str  # SPHEROID (ellipse) or CUBOID (rectangle)
    center_mm: tuple  # (x, z)
    extent_mm: tuple  # full extent per axis (x, z); semi-axes are extent/2
    region: RegionSpec
    has_interface: bool
    interface_amplitude: float

    def __post_init__(self):
        if self.shape not in (SPHEROID, CUBOID):
            raise ConfigError(f"unknown inclusion shape {self.shape!r}")
        if self.interface_amplitude < 0:
            raise ConfigError("interface_amplitude must be >= 0")

    def contains(self, x, z):
        """Vectorized point-in-inclusion test (boundary counts as inside)."""
        dx = np.asarray(x) - self.center_mm[0]
        dz = np.asarray(z) - self.center_mm[1]
        hx, hz = self.extent_mm[0] / 2.0, self.extent_mm[1] / 2.0
        if self.shape == CUBOID:
            return (np.abs(dx) <= hx) & (np.abs(dz) <= hz)
        return (dx / hx) ** 2 + (dz / hz) ** 2 <= 1.0

    def perimeter_mm(self) -> float:
        hx, hz = self.extent_mm[0] / 2.0, self.extent_mm[1] / 2.0
        if self.shape == CUBOID:
            return 4.0 * (hx + hz)
        # Ramanujan's second approximation, exact enough for scatterer counts
        h = (hx - hz) ** 2 / (hx + hz) ** 2
        return np.pi * (hx + hz) * (1.0 + 3.0 * h / (10.0 + np.sqrt(4.0 - 3.0 * h)))

    def boundary_points(self, max_gap_mm: float) -> np.ndarray:
        """Points on the boundary curve, uniform in arc length, gap <= max_gap.

        Returns an (n, 2) array of (x, z) positions.
        """
        n = max(int(np.ceil(self.perimeter_mm() / max_gap_mm)), 8)
        s = (np.arange(n) + 0.5) / n * self.perimeter_mm()
        return self.boundary_point_at_arc(s)

    def boundary_point_at_arc(self, s) -> np.ndarray:
        """Boundary position at arc-length coordinate(s) ``s`` from a fixed origin."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        cx, cz = self.center_mm
        hx, hz = self.extent_mm[0] / 2.0, self.extent_mm[1] / 2.0
        if self.shape == CUBOID:
            # walk the four sides counter-clockwise from the top-left corner
            sides = np.array([2 * hx, 2 * hz, 2 * hx, 2 * hz])
            cum = np.concatenate([[0.0], np.cumsum(sides)])
            s = np.mod(s, cum[-1])
            side = np.searchsorted(cum, s, side="right") - 1
            t = s - cum[side]
            x = np.empty_like(s)
            z = np.empty_like(s)
            for k, (x0, z0, ux, uz) in enumerate([
                    (cx - hx, cz - hz, 1.0, 0.0),
                    (cx + hx, cz - hz, 0.0, 1.0),
                    (cx + hx, cz + hz, -1.0, 0.0),
                    (cx - hx, cz + hz, 0.0, -1.0)]):
                m = side == k
                x[m] = x0 + ux * t[m]
                z[m] = z0 + uz * t[m]
            return np.column_stack([x, z])
        # ellipse: invert the cumulative arc length of a dense parameter table
        m = 4096
        theta = np.linspace(0.0, 2.0 * np.pi, m + 1)
        px = hx * np.cos(theta)
        pz = hz * np.sin(theta)
        seg = np.hypot(np.diff(px), np.diff(pz))
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        s = np.mod(s, cum[-1])
        th = np.interp(s, cum, theta)
        return np.column_stack([cx + hx * np.cos(th), cz + hz * np.sin(th)])


@dataclass
class PhantomGeometry:
    width_mm: float
    height_mm: float
    background: RegionSpec
    inclusions: list
    seed: int

    def contains_point(self, x: float, z: float) -> bool:
        return 0.0 <= x <= self.width_mm and 0.0 <= z <= self.height_mm


@dataclass
class PhantomConfig:
    """Distribution parameters for random phantom generation."""

    width_mm: float = 19.2
    height_mm: float = 19.2
    n_inclusions: int = 100
    p_anechoic: float = 0.4          # background and inclusions alike
    bg_sigma_mean: float = 1.0
    bg_sigma_std: float = 0.5
    inc_sigma_mean: float = 4.0
    inc_sigma_std: float = 2.0
    extent_min_mm: float = 1.0
    extent_max_mm: float = 5.0
    p_interface: float = 0.5
    interface_amp_mean: float = 14.0
    interface_amp_std: float = 2.0

    def __post_init__(self):
        if self.width_mm <= 0 or self.height_mm <= 0:
            raise ConfigError("phantom extent must be positive")
        if self.n_inclusions < 0:
            raise ConfigError("inclusion count must be >= 0")
        if not 0.0 < self.extent_min_mm <= self.extent_max_mm:
            raise ConfigError("invalid inclusion extent range")


def generate_phantom(cfg: PhantomConfig, seed: int) -> PhantomGeometry:
    """Draw a random phantom; deterministic for a fixed (cfg, seed)."""
    rng = np.random.default_rng(seed)
    background = RegionSpec(
        anechoic=bool(rng.random() < cfg.p_anechoic),
        amplitude_sigma=max(float(rng.normal(cfg.bg_sigma_mean, cfg.bg_sigma_std)), 0.0),
    )
    inclusions = []
    for _ in range(cfg.n_inclusions):
        shape = SPHEROID if rng.integers(2) == 0 else CUBOID
        center = (float(rng.uniform(0.0, cfg.width_mm)),
                  float(rng.uniform(0.0, cfg.height_mm)))
        extent = (float(rng.uniform(cfg.extent_min_mm, cfg.extent_max_mm)),
                  float(rng.uniform(cfg.extent_min_mm, cfg.extent_max_mm)))
        anechoic = bool(rng.random() < cfg.p_anechoic)
        sigma = max(float(rng.normal(cfg.inc_sigma_mean, cfg.inc_sigma_std)), 0.0)
        has_interface = bool(rng.random() < cfg.p_interface)
        interface_amp = max(float(rng.normal(cfg.interface_amp_mean,
                                             cfg.interface_amp_std)), 0.0)
        inclusions.append(InclusionSpec(
            shape=shape, center_mm=center, extent_mm=extent,
            region=RegionSpec(anechoic=anechoic, amplitude_sigma=sigma),
            has_interface=has_interface, interface_amplitude=interface_amp))
    return PhantomGeometry(cfg.width_mm, cfg.height_mm, background,
                           inclusions, int(seed))


def region_at(geom: PhantomGeometry, point_mm) -> RegionSpec:
    """Region owning a point; overlaps resolve to the last-listed inclusion."""
    x, z = point_mm
    if not geom.contains_point(x, z):
        raise DomainError(f"point {point_mm} outside phantom extent")
    for inc in reversed(geom.inclusions):
        if inc.contains(x, z):
            return inc.region
    return geom.background


def region_index_lookup(geom: PhantomGeometry, x, z) -> np.ndarray:
    """Vectorized region ownership: inclusion index, or -1 for background."""
    x = np.asarray(x)
    idx = np.full(x.shape, -1, dtype=np.int64)
    for i, inc in enumerate(geom.inclusions):
        inside = inc.contains(x, z)
        idx[inside] = i  # later inclusions overwrite: last-listed wins
    return idx


def _boundary_pixels(inc: InclusionSpec, spec: GridSpec, threshold_mm: float):
    """Indices of pixels whose centre lies within threshold of the boundary."""
    gap = 0.1 * min(spec.dx_mm, spec.dz_mm)
    pts = inc.boundary_points(gap)
    margin = threshold_mm + gap
    hx, hz = inc.extent_mm[0] / 2.0, inc.extent_mm[1] / 2.0
    j0 = max(int(np.floor((inc.center_mm[0] - hx - margin) / spec.dx_mm - 0.5)), 0)
    j1 = min(int(np.ceil((inc.center_mm[0] + hx + margin) / spec.dx_mm - 0.5)) + 1,
             spec.width_px)
    i0 = max(int(np.floor((inc.center_mm[1] - hz - margin) / spec.dz_mm - 0.5)), 0)
    i1 = min(int(np.ceil((inc.center_mm[1] + hz + margin) / spec.dz_mm - 0.5)) + 1,
             spec.height_px)
    if j0 >= j1 or i0 >= i1:
        return None
    xs = (np.arange(j0, j1) + 0.5) * spec.dx_mm
    zs = (np.arange(i0, i1) + 0.5) * spec.dz_mm
    px = np.repeat(zs, xs.size), np.tile(xs, zs.size)  # (z, x) flattened
    best = np.full(px[0].size, np.inf)
    for k in range(0, pts.shape[0], 512):  # chunked to bound the memory
        chunk = pts[k:k + 512]
        d2 = (px[1][:, None] - chunk[None, :, 0]) ** 2 \
            + (px[0][:, None] - chunk[None, :, 1]) ** 2
        best = np.minimum(best, d2.min(axis=1))
    hit = best <= threshold_mm ** 2
    ii = np.repeat(np.arange(i0, i1), xs.size)[hit]
    jj = np.tile(np.arange(j0, j1), zs.size)[hit]
    return ii, jj


def rasterize_interfaces(geom: PhantomGeometry, spec: GridSpec) -> InterfaceMap:
    """Binary map of pixels intersected by interfaced inclusion boundaries.

    A pixel is marked when its centre lies within half a pixel diagonal of
    the boundary curve.  All interfaced boundaries are rasterized
    independently; overlapping inclusions do not occlude each other.
    """
    values = np.zeros((spec.height_px, spec.width_px))
    threshold = 0.5 * np.hypot(spec.dx_mm, spec.dz_mm)
    for inc in geom.inclusions:
        if not inc.has_interface:
            continue
        hit = _boundary_pixels(inc, spec, threshold)
        if hit is not None:
            values[hit] = 1.0
    return ImageGrid(values, spec.dx_mm, spec.dz_mm)


def inclusion_mask(geom: PhantomGeometry, spec: GridSpec,
                   margin_mm: float = 0.0) -> np.ndarray:
    """Boolean map of pixels covered by any inclusion inflated by a margin."""
    xs = (np.arange(spec.width_px) + 0.5) * spec.dx_mm
    zs = (np.arange(spec.height_px) + 0.5) * spec.dz_mm
    X, Z = np.meshgrid(xs, zs)
    mask = np.zeros(X.shape, dtype=bool)
    for inc in geom.inclusions:
        grown = InclusionSpec(
            shape=inc.shape, center_mm=inc.center_mm,
            extent_mm=(inc.extent_mm[0] + 2 * margin_mm,
                       inc.extent_mm[1] + 2 * margin_mm),
            region=inc.region, has_interface=inc.has_interface,
            interface_amplitude=inc.interface_amplitude)
        mask |= grown.contains(X, Z)
    return mask


# ---------------------------------------------------------------------------
# JSON serialization (geometry files make datasets regenerable)


def geometry_to_dict(geom: PhantomGeometry) -> dict:
    return {
        "width_mm": geom.width_mm,
        "height_mm": geom.height_mm,
        "seed": geom.seed,
        "background": {"anechoic": geom.background.anechoic,
                       "amplitude_sigma": geom.background.amplitude_sigma},
        "inclusions": [{
            "shape": inc.shape,
            "center_mm": list(inc.center_mm),
            "extent_mm": list(inc.extent_mm),
            "region": {"anechoic": inc.region.anechoic,
                       "amplitude_sigma": inc.region.amplitude_sigma},
            "has_interface": inc.has_interface,
            "interface_amplitude": inc.interface_amplitude,
        } for inc in geom.inclusions],
    }


def geometry_from_dict(doc: dict) -> PhantomGeometry:
    inclusions = [InclusionSpec(
        shape=item["shape"],
        center_mm=tuple(item["center_mm"]),
        extent_mm=tuple(item["extent_mm"]),
        region=RegionSpec(item["region"]["anechoic"],
                          item["region"]["amplitude_sigma"]),
        has_interface=item["has_interface"],
        interface_amplitude=item["interface_amplitude"],
    ) for item in doc["inclusions"]]
    return PhantomGeometry(
        width_mm=doc["width_mm"], height_mm=doc["height_mm"],
        background=RegionSpec(doc["background"]["anechoic"],
                              doc["background"]["amplitude_sigma"]),
        inclusions=inclusions, seed=doc["seed"])


def save_geometry(path, geom: PhantomGeometry) -> None:
    with open(path, "w") as fh:
        json.dump(geometry_to_dict(geom), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_geometry(path) -> PhantomGeometry:
    with open(path) as fh:
        return geometry_from_dict(json.load(fh))
