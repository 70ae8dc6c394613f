"""Fit prototype and exemplar categorization models to two-alternative choice data."""
from .data import FeatureMatrix, JudgmentSet, SimilarityRatings, load_features, load_judgments, load_similarities
from .errors import CatfitError, ConvergenceError, DataError, FitError, ModelError, ValidationError
from .fitting import FitConfig, FitResult, fit_model
from .models import MODEL_NAMES, ModelSpec, ModelState, ParamVector

__version__ = "0.1.0"

__all__ = [
    "FeatureMatrix", "JudgmentSet", "SimilarityRatings",
    "load_features", "load_judgments", "load_similarities",
    "CatfitError", "ConvergenceError", "DataError", "FitError", "ModelError", "ValidationError",
    "FitConfig", "FitResult", "fit_model",
    "MODEL_NAMES", "ModelSpec", "ModelState", "ParamVector",
    "__version__",
]
