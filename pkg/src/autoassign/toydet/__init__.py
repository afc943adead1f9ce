"""Desk-scale detector, synthetic scenes, training and evaluation."""

from .evaluate import Detection, EvalResult, decode_detections, detection_scores, evaluate_ap, nms
from .model import DetectorModel, ModelConfig, load_checkpoint, save_checkpoint
from .scenes import (CategorySpec, SceneGenConfig, SyntheticScene, generate_dataset,
                     generate_scene, load_dataset, save_dataset)
from .train import TrainConfig, TrainLog, TrainingError, evaluate_model, predict, train

__all__ = [
    "CategorySpec", "Detection", "DetectorModel", "EvalResult", "ModelConfig", "SceneGenConfig",
    "SyntheticScene", "TrainConfig", "TrainLog", "TrainingError", "decode_detections",
    "detection_scores", "evaluate_ap", "evaluate_model", "generate_dataset", "generate_scene",
    "load_checkpoint", "load_dataset", "nms", "predict", "save_checkpoint", "save_dataset",
    "train",
]
