"""Self-supervised denoising of multi-echo LiDAR scans.

Core pieces: the ordered multi-echo cloud and its file formats
(:mod:`.cloud`, :mod:`.projection`), the window-bounded neighbor encoder
(:mod:`.neighbors`), the blind-spot learners and their trainer
(:mod:`.denoiser`, :mod:`.csr`), echo classification (:mod:`.inference`),
classical baselines (:mod:`.baselines`), synthetic snowy scans
(:mod:`.noise_sim`) and evaluation helpers (:mod:`.evalkit`).
"""

from .baselines import DrorConfig, LiorConfig, dror, lior, medror
from .cloud import MultiEchoOrderedCloud, read_cloud, read_labels, write_cloud, write_labels
from .csr import CsrConfig, csr_penalty
from .denoiser import (
    PAPER_SCALE,
    NetworkConfig,
    ParameterStore,
    TrainConfig,
    forward_coordinate,
    forward_correlation,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
    train,
)
from .evalkit import ConfusionCounts, evaluate, iou, roc_auc
from .inference import DI, PS, VS, InferenceConfig, classify_echoes, denoise_scan
from .neighbors import EncoderConfig, encode_features, gather_neighbors
from .noise_sim import SnowSpec, inject_snow, raycast_scene, synthetic_scans
from .projection import ProjectionConfig, project

__all__ = [
    "ConfusionCounts", "CsrConfig", "DI", "DrorConfig", "EncoderConfig", "InferenceConfig", "LiorConfig",
    "MultiEchoOrderedCloud", "NetworkConfig", "PAPER_SCALE", "PS", "ParameterStore", "ProjectionConfig",
    "SnowSpec", "TrainConfig", "VS", "classify_echoes", "csr_penalty", "denoise_scan", "dror", "encode_features",
    "evaluate", "forward_coordinate", "forward_correlation", "gather_neighbors", "inject_snow", "iou", "lior",
    "load_checkpoint", "medror", "parameter_count", "project", "raycast_scene", "read_cloud", "read_labels",
    "roc_auc", "save_checkpoint", "synthetic_scans", "train", "write_cloud", "write_labels",
]
