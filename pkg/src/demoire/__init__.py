"""Raw-domain screen-moire removal laboratory.

Subpackages cover a numpy reverse-mode tensor engine, Bayer/YCbCr color
plumbing, the dual-stream restoration network, a screen-capture moire
simulator, image quality metrics, and a training/evaluation harness.
"""

from . import tensor
from .tensor import Tensor, Parameter, no_grad
from .optim import AdamW, LrSchedule, OptimizerState, adamw_step, cosine_lr
from .gradcheck import grad_check
from .network import DsdNet, DsdNetConfig, VARIANTS
from .config import TrainConfig, config_from_text, config_to_text, load_config
from .checkpoint import (Checkpoint, checkpoint_from_network,
                         load_checkpoint, restore_network, save_checkpoint)
from .metrics import MetricReport, delta_e, measure_pair, psnr, ssim, y_psnr
from .train import (TrainingDiverged, TrainResult, desk_preset,
                    overfit_preset, small_net, tiny_net, train)
from .evaluate import evaluate
from .ablate import ablate
from .bench import bench_inference, bench_network

__all__ = [
    "tensor",
    "Tensor",
    "Parameter",
    "no_grad",
    "AdamW",
    "LrSchedule",
    "OptimizerState",
    "adamw_step",
    "cosine_lr",
    "grad_check",
    "DsdNet",
    "DsdNetConfig",
    "VARIANTS",
    "TrainConfig",
    "config_from_text",
    "config_to_text",
    "load_config",
    "Checkpoint",
    "checkpoint_from_network",
    "load_checkpoint",
    "restore_network",
    "save_checkpoint",
    "MetricReport",
    "delta_e",
    "measure_pair",
    "psnr",
    "ssim",
    "y_psnr",
    "TrainingDiverged",
    "TrainResult",
    "desk_preset",
    "overfit_preset",
    "small_net",
    "tiny_net",
    "train",
    "evaluate",
    "ablate",
    "bench_inference",
    "bench_network",
]

__version__ = "0.1.0"
