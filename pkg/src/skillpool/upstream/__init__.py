from .calibration import CalibrationModel, platt_fit, platt_objective, platt_targets, prob_to_logit
from .features import ScoreTable, chat_density, decile_quantize, gamer_mean_scores, window_group
from .logistic import LogisticModel, fit_logistic, logistic_score
from .triplet import EmbeddingConfig, EmbeddingModel, train_linear_embedding, triplet_loss_batch_hard

__all__ = [
    "CalibrationModel", "EmbeddingConfig", "EmbeddingModel", "LogisticModel", "ScoreTable",
    "chat_density", "decile_quantize", "fit_logistic", "gamer_mean_scores", "logistic_score",
    "platt_fit", "platt_objective", "platt_targets", "prob_to_logit", "train_linear_embedding",
    "triplet_loss_batch_hard", "window_group",
]
