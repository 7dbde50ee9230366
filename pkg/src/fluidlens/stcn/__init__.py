from .augment import apply_flips, augment
from .io import load_params, read_curves, save_params, write_curves
from .model import (StcnConfig, StcnParameters, backward, forward, init_params, loss_and_gradients,
                    parameter_shapes, predict, receptive_field, stcn_forward, zero_params)
from .optim import OptimState, adam_amsgrad_step, clip_gradients
from .train import (MODES, CurvePoint, Schedule, TrainingData, TrainResult, VideoSample, fit, train,
                    train_per_video)

__all__ = [
    "CurvePoint", "MODES", "OptimState", "Schedule", "StcnConfig", "StcnParameters", "TrainResult",
    "TrainingData", "VideoSample", "adam_amsgrad_step", "apply_flips", "augment", "backward",
    "clip_gradients", "fit", "forward", "init_params", "load_params", "loss_and_gradients",
    "parameter_shapes", "predict", "read_curves", "receptive_field", "save_params", "stcn_forward",
    "train", "train_per_video", "write_curves", "zero_params",
]
