"""Desk-scale ultrasound speckle toolkit.

Simulates paired speckle realizations of randomized tissue phantoms,
trains a small convolutional despeckling network on those pairs with an
interface-weighted loss, and evaluates it against five classical
despeckling filters.
"""

from .grid import GridSpec, ImageGrid, read_image, read_pgm, read_s2sf, \
    write_pgm, write_s2sf
from .phantom import InclusionSpec, PhantomConfig, PhantomGeometry, \
    RegionSpec, generate_phantom, rasterize_interfaces, region_at
from .imaging import PsfSpec, ScattererField, average_images, default_psf, \
    instantiate_scatterers, log_compress, render_bmode, render_envelope
from .filters import Bilateral, Median, Nlm, Obnlm, Srad, bilateral_filter, \
    filter_from_spec, median_filter, nlm, obnlm, srad
from .loss import LossConfig, WeightMaps, interface_weight, loss_backward, \
    loss_forward
from .net import NetworkParams, NetworkSpec, adam_step, conv2d_backward, \
    conv2d_forward, forward, infer_image, init_params, load_checkpoint, \
    maxpool2, save_checkpoint
from .dataset import DatasetConfig, DatasetManifest, generate_dataset, \
    load_manifest, load_pair, random_crop_pair
from .train import TrainConfig, train
from .evaluate import RegionSpecRect, bench_runtime, evaluate_corpus, mad, \
    mse, region_stats, resolve_method

__version__ = "0.1.0"
