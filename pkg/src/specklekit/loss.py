"""Training loss: interface-masked L2 data term plus a PSF sharpening term.

The interface indicator map is blurred into a smooth spatial weight W
(unit central value, clamped to [0, 1]) with inverse weight 1 - W.  The
loss on a network output ``out`` against target ``tgt`` is

    mean(((out - tgt) * (1 - W))^2)
    + lam * mean(((blur_psf(out) - tgt) * W)^2)

where blur_psf is a sum-normalized anisotropic Gaussian (wide laterally,
narrow axially) with mirror padding.  Near interfaces the second term
dominates: the output must look like the target after PSF blurring, which
rewards outputs sharper than the target.  The analytic gradient uses the
exact adjoint of the mirror-padded blur so it matches finite differences
to machine-level accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .grid import ImageGrid, mirror_indices


@dataclass
class LossConfig:
    lam: float = 500.0
    sigma_i_px: float = 5.0
    sigma_psf_ax_px: float = 1.0
    sigma_psf_lat_px: float = 7.0
    # kernel scaling is ambiguous in principle, so both are configurable:
    # "peak" scales the kernel to unit central value, "sum" to unit mass
    interface_kernel: str = "peak"
    psf_kernel: str = "sum"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if min(self.sigma_i_px, self.sigma_psf_ax_px, self.sigma_psf_lat_px) <= 0:
            raise ConfigError("loss sigmas must be > 0")
        if self.interface_kernel not in ("peak", "sum"):
            raise ConfigError("interface_kernel must be 'peak' or 'sum'")
        if self.psf_kernel not in ("peak", "sum"):
            raise ConfigError("psf_kernel must be 'peak' or 'sum'")


@dataclass
class WeightMaps:
    """Interface weight W and its inverse 1 - W; they sum to one exactly."""

    interface_weight: ImageGrid
    inverse_weight: ImageGrid


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Unnormalized 1-D Gaussian truncated at radius ceil(4*sigma)."""
    r = int(np.ceil(4.0 * sigma))
    u = np.arange(-r, r + 1, dtype=np.float64)
    return np.exp(-0.5 * (u / sigma) ** 2)


def psf_kernel_2d(cfg: LossConfig) -> np.ndarray:
    """The 2-D PSF kernel used by the sharpening term (for inspection/tests)."""
    kz = gaussian_kernel_1d(cfg.sigma_psf_ax_px)
    kx = gaussian_kernel_1d(cfg.sigma_psf_lat_px)
    k = np.outer(kz, kx)
    return k / k.sum() if cfg.psf_kernel == "sum" else k


def _correlate1d_valid(padded: np.ndarray, kernel: np.ndarray, axis: int):
    """Valid correlation along one axis of an already padded array."""
    n = padded.shape[axis] - (kernel.size - 1)
    out = np.zeros(padded.shape[:axis] + (n,) + padded.shape[axis + 1:])
    sl = [slice(None)] * padded.ndim
    for j, kj in enumerate(kernel):
        sl[axis] = slice(j, j + n)
        out += kj * padded[tuple(sl)]
    return out


def _blur_axis_mirror(x: np.ndarray, kernel: np.ndarray, axis: int):
    r = kernel.size // 2
    idx = mirror_indices(x.shape[axis], r)
    return _correlate1d_valid(np.take(x, idx, axis=axis), kernel, axis)


def _blur_axis_mirror_adjoint(u: np.ndarray, kernel: np.ndarray, axis: int):
    """Exact adjoint of ``_blur_axis_mirror`` (fold padded taps back)."""
    n = u.shape[axis]
    r = kernel.size // 2
    src = mirror_indices(n, r)
    moved = np.moveaxis(u, axis, -1)
    full = np.apply_along_axis(lambda row: np.convolve(row, kernel, mode="full"),
                               -1, moved)
    out = np.zeros(moved.shape[:-1] + (n,))
    np.add.at(out, (..., src), full)
    return np.moveaxis(out, -1, axis)


def _psf_kernels(cfg: LossConfig):
    kz = gaussian_kernel_1d(cfg.sigma_psf_ax_px)
    kx = gaussian_kernel_1d(cfg.sigma_psf_lat_px)
    if cfg.psf_kernel == "sum":
        kz, kx = kz / kz.sum(), kx / kx.sum()
    return kz, kx


def blur_psf(values: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Separable mirror-padded convolution with the loss PSF kernel."""
    kz, kx = _psf_kernels(cfg)
    out = _blur_axis_mirror(values, kz, axis=0)
    return _blur_axis_mirror(out, kx, axis=1)


def blur_psf_adjoint(values: np.ndarray, cfg: LossConfig) -> np.ndarray:
    kz, kx = _psf_kernels(cfg)
    out = _blur_axis_mirror_adjoint(values, kx, axis=1)
    return _blur_axis_mirror_adjoint(out, kz, axis=0)


def interface_weight(interface_map: ImageGrid, sigma_i_px: float,
                     kernel: str = "peak") -> WeightMaps:
    """Spread a binary interface map into a smooth [0, 1] spatial weight.

    The map is convolved (zero padding) with a Gaussian scaled to unit
    central value and clamped, so an interface pixel keeps full weight and
    the influence decays smoothly; ``kernel='sum'`` switches to a
    unit-mass kernel instead.
    """
    binary = np.asarray(interface_map.values, dtype=np.float64)
    if not np.all((binary == 0.0) | (binary == 1.0)):
        raise ConfigError("interface map must be binary")
    k = gaussian_kernel_1d(sigma_i_px)
    kz = kx = k / k.sum() if kernel == "sum" else k
    r = k.size // 2
    padded = np.pad(binary, r, mode="constant")
    out = _correlate1d_valid(padded, kz, axis=0)
    out = _correlate1d_valid(out, kx, axis=1)
    w = np.clip(out, 0.0, 1.0)
    return WeightMaps(interface_weight=interface_map.with_values(w),
                      inverse_weight=interface_map.with_values(1.0 - w))


def _as_values(*grids):
    arrays = [np.asarray(g.values if isinstance(g, ImageGrid) else g,
                         dtype=np.float64) for g in grids]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeError("loss inputs must share dimensions")
    return arrays


def loss_forward(out, tgt, maps: WeightMaps, cfg: LossConfig) -> float:
    o, t, w, winv = _as_values(out, tgt, maps.interface_weight,
                               maps.inverse_weight)
    n = o.size
    data = np.sum(((o - t) * winv) ** 2) / n
    sharp = np.sum(((blur_psf(o, cfg) - t) * w) ** 2) / n
    return float(data + cfg.lam * sharp)


def loss_backward(out, tgt, maps: WeightMaps, cfg: LossConfig) -> np.ndarray:
    """d(loss)/d(out), exact for the mirror-padded blur in the forward pass."""
    o, t, w, winv = _as_values(out, tgt, maps.interface_weight,
                               maps.inverse_weight)
    n = o.size
    grad = (2.0 / n) * (o - t) * winv ** 2
    if cfg.lam != 0.0:
        resid = (blur_psf(o, cfg) - t) * w ** 2
        grad = grad + cfg.lam * (2.0 / n) * blur_psf_adjoint(resid, cfg)
    return grad
