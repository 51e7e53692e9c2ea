from .cmaes import CmaResult, cma_es_optimize, default_population
from .dan import DanModel, DanParams, dan_score, dan_score_batch, dan_train, load_dan, save_dan
from .heuristics import (
    WeightedSumParams,
    cosine,
    last_item_score,
    last_item_scores,
    popularity_rank,
    weighted_sum_scores,
    weighted_user_vector,
)

__all__ = [
    "CmaResult", "cma_es_optimize", "default_population",
    "DanModel", "DanParams", "dan_score", "dan_score_batch", "dan_train", "load_dan", "save_dan",
    "WeightedSumParams", "cosine", "last_item_score", "last_item_scores", "popularity_rank",
    "weighted_sum_scores", "weighted_user_vector",
]
