"""Zero-shot vision-language inference with region and text priors.

The public surface is re-exported here; see the submodules for details.
"""

from .answer_filter import AnswerVocabulary, route_candidates, to_declarative, topk_answers
from .backends import Backends, BackendConfig, alignment_score, cosine
from .cache import CacheKey, FileCache
from .config import TUNED_CENTROIDS, RunConfig, load_config
from .core import (
    CentroidSet,
    DetectedObject,
    FusionWeights,
    Prediction,
    Sample,
    ScoreBundle,
    TaskKind,
    Toggles,
)
from .errors import BackendError, ContractError, InputError, ZsvlError
from .fine_grained import RegionSet, select_regions
from .inference import (
    build_score_bundle,
    cluster_centroids,
    fuse_and_pick,
    infer_entailment,
    infer_vcr,
    infer_vqa,
    predict_entailment,
)
from .metrics import Report, evaluate, normalize_answer, vqa_soft_score

__version__ = "0.1.0"

__all__ = [
    "AnswerVocabulary", "BackendConfig", "BackendError", "Backends", "CacheKey", "CentroidSet",
    "ContractError", "DetectedObject", "FileCache", "FusionWeights", "InputError", "Prediction",
    "RegionSet", "Report", "RunConfig", "Sample", "ScoreBundle", "TUNED_CENTROIDS", "TaskKind", "Toggles",
    "ZsvlError", "alignment_score", "build_score_bundle", "cluster_centroids", "cosine", "evaluate",
    "fuse_and_pick", "infer_entailment", "infer_vcr", "infer_vqa", "load_config", "normalize_answer",
    "predict_entailment", "route_candidates", "select_regions", "to_declarative", "topk_answers",
    "vqa_soft_score",
]
