"""Paired self-supervised training of the despeckling network.

Each step draws one training phantom, picks its two speckle instances in
random order (either may be input or target), applies a shared random crop
and an optional horizontal flip, and takes one gradient step on the
interface-weighted loss.  Full-image interface weight maps are computed
once per phantom and cropped alongside the images.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import net
from .dataset import DatasetManifest
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .grid import read_s2sf
from .loss import LossConfig, WeightMaps, interface_weight, loss_backward, \
    loss_forward

CHECKPOINT_FINAL = "checkpoint_final.s2sn"
CHECKPOINT_LAST = "checkpoint_last.s2sn"


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 3e-5
    batch: int = 1
    crop: int = 64
    seed: int = 0
    checkpoint_every: int = 25
    network: net.NetworkSpec = field(default_factory=net.NetworkSpec)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.batch < 1 or self.checkpoint_every < 1:
            raise ConfigError("batch and checkpoint_every must be >= 1")
        if self.crop % (2 ** self.network.depth):
            raise ConfigError(
                f"crop size must be divisible by {2 ** self.network.depth}")


class _EntryCache:
    """Keeps decoded instances and weight maps of each phantom in memory."""

    def __init__(self, manifest: DatasetManifest, loss_cfg: LossConfig):
        self.manifest = manifest
        self.loss_cfg = loss_cfg
        self._cache = {}

    def get(self, index):
        if index not in self._cache:
            entry = self.manifest.entries[index]
            instances = [read_s2sf(self.manifest.resolve(p)).values
                         for p in entry.instance_paths]
            interface = read_s2sf(self.manifest.resolve(entry.interface_path))
            maps = interface_weight(interface, self.loss_cfg.sigma_i_px,
                                    self.loss_cfg.interface_kernel)
            self._cache[index] = (instances, maps.interface_weight.values,
                                  maps.inverse_weight.values)
        return self._cache[index]


def _crop_flip(arrays, size, rng):
    h, w = arrays[0].shape
    if size > h or size > w:
        raise ShapeError(f"crop size {size} exceeds image dims {h}x{w}")
    i0 = int(rng.integers(h - size + 1))
    j0 = int(rng.integers(w - size + 1))
    out = [a[i0:i0 + size, j0:j0 + size] for a in arrays]
    if rng.random() < 0.5:
        out = [a[:, ::-1] for a in out]
    return [np.ascontiguousarray(a) for a in out]


def train(manifest: DatasetManifest, cfg: TrainConfig, out_dir,
          resume=None, log=None):
    """Run the training loop; returns the final checkpoint path.

    Writes ``loss.csv`` (one row per epoch), periodic checkpoints, a
    rolling last-good checkpoint after each epoch, and the final
    checkpoint.  On a non-finite loss the last-good checkpoint is kept and
    :class:`TrainingDivergedError` is raised.
    """
    if len(manifest.entries) == 0:
        raise ConfigError("manifest has no training entries")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    if resume is not None:
        params, loaded_spec = net.load_checkpoint(resume)
        if (loaded_spec.depth, loaded_spec.base_channels) != \
                (cfg.network.depth, cfg.network.base_channels):
            raise ConfigError("resume checkpoint does not match network config")
    else:
        params = net.init_params(cfg.network, cfg.seed)
    cache = _EntryCache(manifest, cfg.loss)
    final_path = out_dir / CHECKPOINT_FINAL
    last_path = out_dir / CHECKPOINT_LAST
    net.save_checkpoint(last_path, params, cfg.network)  # initial last-good

    loss_rows = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(manifest.entries))
        epoch_loss = 0.0
        n_steps = 0
        acc_w = acc_b = None
        in_batch = 0
        for index in order:
            instances, w_map, winv_map = cache.get(int(index))
            i = int(rng.integers(len(instances)))
            j = int(rng.integers(len(instances) - 1))
            j = j + 1 if j >= i else j
            inp, tgt, wc, wic = _crop_flip(
                [instances[i], instances[j], w_map, winv_map], cfg.crop, rng)
            # WeightMaps fields may hold raw arrays; the loss accepts both
            maps = WeightMaps(interface_weight=wc, inverse_weight=wic)

            out, tape = net.forward(params, cfg.network, inp, train=True)
            step_loss = loss_forward(out[0], tgt, maps, cfg.loss)
            if not np.isfinite(step_loss):
                # the rolling last-good checkpoint from the previous epoch
                # (or the initial state) remains on disk
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            g_out = loss_backward(out[0], tgt, maps, cfg.loss)
            gw, gb, _ = net.backward(params, cfg.network, tape, g_out)

            if acc_w is None:
                acc_w, acc_b = gw, gb
            else:
                acc_w = [a + g for a, g in zip(acc_w, gw)]
                acc_b = [a + g for a, g in zip(acc_b, gb)]
            in_batch += 1
            if in_batch == cfg.batch:
                if cfg.batch > 1:
                    acc_w = [a / cfg.batch for a in acc_w]
                    acc_b = [a / cfg.batch for a in acc_b]
                net.adam_step(params, acc_w, acc_b, cfg.lr)
                acc_w = acc_b = None
                in_batch = 0
            epoch_loss += step_loss
            n_steps += 1
        if in_batch:  # trailing partial batch
            acc_w = [a / in_batch for a in acc_w]
            acc_b = [a / in_batch for a in acc_b]
            net.adam_step(params, acc_w, acc_b, cfg.lr)

        mean_loss = epoch_loss / max(n_steps, 1)
        loss_rows.append((epoch, mean_loss))
        _write_loss_csv(out_dir / "loss.csv", loss_rows)
        net.save_checkpoint(last_path, params, cfg.network)
        if (epoch + 1) % cfg.checkpoint_every == 0:
            net.save_checkpoint(out_dir / f"checkpoint_epoch_{epoch:04d}.s2sn",
                                params, cfg.network)
        if log is not None:
            log(f"epoch {epoch}: loss {mean_loss:.6g} "
                f"({time.perf_counter() - t0:.1f} s)")

    if cfg.epochs == 0:
        _write_loss_csv(out_dir / "loss.csv", loss_rows)
    net.save_checkpoint(final_path, params, cfg.network)
    return final_path


def _write_loss_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        writer.writerows(rows)
