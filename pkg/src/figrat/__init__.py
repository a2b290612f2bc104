"""Rationale discovery on graphs via a learned augmenter and an adversarial attention intervener."""

from .config import FULL_SCALE_PRESET, TrainConfig
from .graphs import Dataset, Graph, gen_motif_dataset, load_jsonl, save_jsonl
from .model import FIGModel, load_checkpoint, save_checkpoint
from .trainer import evaluate, train

__all__ = [
    "FULL_SCALE_PRESET", "TrainConfig", "Dataset", "Graph", "gen_motif_dataset", "load_jsonl", "save_jsonl",
    "FIGModel", "load_checkpoint", "save_checkpoint", "evaluate", "train",
]
__version__ = "0.1.0"
