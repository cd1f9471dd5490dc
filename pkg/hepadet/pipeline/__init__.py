"""End-to-end detection pipeline: graph assembly, training, inference and ablation."""

from .ablation import ablation_configs, run_ablation
from .detector import Detector
from .infer import SliceResult, detect, evaluate_detector, infer_subjects, predicted_class_mass
from .samples import Sample, build_sample, evaluation_samples, training_samples
from .train import TrainResult, load_detector, save_detector, train_detector

__all__ = [
    "Detector",
    "Sample",
    "SliceResult",
    "TrainResult",
    "ablation_configs",
    "build_sample",
    "detect",
    "evaluate_detector",
    "evaluation_samples",
    "infer_subjects",
    "load_detector",
    "predicted_class_mass",
    "run_ablation",
    "save_detector",
    "train_detector",
    "training_samples",
]
