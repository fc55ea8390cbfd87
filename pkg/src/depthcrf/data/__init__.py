from .dataset import Batch, dataset_iter, epoch_batches, hflip, render_all, specs_from_config
from .netpbm import load_pfm, load_pgm, load_ppm, save_pfm, save_pgm, save_ppm
from .synthetic import (
    DepthSample,
    SceneSpec,
    gen_synthetic_scene,
    plane_depth,
    read_manifest,
    write_manifest,
)
