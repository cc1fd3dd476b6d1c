"""Knowledge-graph prompt learning for 3D mask face presentation attack detection."""

from .config import RunConfig, load_config
from .errors import KGPromptError
from .kg_store import KnowledgeGraph, load_kg, maskpad_kg, parse_kg, serialize_kg
from .metrics import ScoreSet, auc, bpcer_at_apcer, eer_threshold, hter
from .model import PromptModel
from .protocols import EvaluationReport, run_cross_dataset, run_loocv
from .trainer import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "EvaluationReport", "KGPromptError", "KnowledgeGraph", "PromptModel", "RunConfig", "ScoreSet",
    "TrainConfig", "auc", "bpcer_at_apcer", "eer_threshold", "fit", "hter", "load_config", "load_kg",
    "maskpad_kg", "parse_kg", "run_cross_dataset", "run_loocv", "serialize_kg",
]
