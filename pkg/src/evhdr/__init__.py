"""HDR radiance fields recovered from motion-blurred LDR images and event streams."""

from .checkpoint import load_checkpoint, save_checkpoint
from .crf import CrfField, crf_apply, crf_export
from .dataset import Dataset, load_dataset, save_dataset
from .estimators import EventHdrReconstructor, ResponseCurveRegressor
from .events import EventMappingField, EventStream, divide_events, predicted_counts
from .field import MlpField, VoxelField
from .metrics import eval_hdr, psnr, reinhard, ssim
from .render import Camera, TimedPose, render_image
from .simulate import SimConfig, generate_dataset, simulate_events
from .train import TrainConfig, TrainState, train

__version__ = "0.1.0"

__all__ = [
    "Camera", "CrfField", "Dataset", "EventHdrReconstructor", "EventMappingField",
    "EventStream", "MlpField", "ResponseCurveRegressor", "SimConfig", "TimedPose",
    "TrainConfig", "TrainState", "VoxelField", "crf_apply", "crf_export", "divide_events",
    "eval_hdr", "generate_dataset", "load_checkpoint", "load_dataset", "predicted_counts",
    "psnr", "reinhard", "render_image", "save_checkpoint", "save_dataset", "simulate_events",
    "ssim", "train",
]
