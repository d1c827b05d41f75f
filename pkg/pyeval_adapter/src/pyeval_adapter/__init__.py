"""Reference line-protocol evaluator for a toy scikit-learn pipeline space."""

from .service import Evaluations, ServiceConfig, serve
from .space import PipelineRecipe, RecipeError, resolve_recipe, space_document

__all__ = ["Evaluations", "ServiceConfig", "serve", "PipelineRecipe",
           "RecipeError", "resolve_recipe", "space_document"]
