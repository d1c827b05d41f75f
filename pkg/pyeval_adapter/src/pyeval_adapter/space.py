"""Toy pipeline search space: 6 scalers x 3 transformers x 6 estimators.

Hyperparameter names arriving on the wire are fully qualified as
``module.algorithm.parameter``; every received name must resolve to exactly
one stage parameter, and unknown names are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from sklearn.decomposition import PCA
from sklearn.discriminant_analysis import QuadraticDiscriminantAnalysis
from sklearn.ensemble import (ExtraTreesClassifier, GradientBoostingClassifier,
                              RandomForestClassifier)
from sklearn.naive_bayes import GaussianNB
from sklearn.neighbors import KNeighborsClassifier
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import (MinMaxScaler, Normalizer,
                                   PolynomialFeatures, QuantileTransformer,
                                   RobustScaler, StandardScaler)


class RecipeError(ValueError):
    """The request does not resolve to a valid pipeline recipe."""


# stage -> algorithm -> (constructor, {param: kind}), kind in {"int", "cont"}
SPACE: dict[str, dict[str, tuple[Any, dict[str, str]]]] = {
    "scaler": {
        "none": (None, {}),
        "standard": (lambda p, seed: StandardScaler(), {}),
        "minmax": (lambda p, seed: MinMaxScaler(), {}),
        "robust": (lambda p, seed: RobustScaler(), {}),
        "quantile": (lambda p, seed: QuantileTransformer(
            n_quantiles=p["n_quantiles"], random_state=seed,
            subsample=10_000), {"n_quantiles": "int"}),
        "normalizer": (lambda p, seed: Normalizer(), {}),
    },
    "transformer": {
        "none": (None, {}),
        "pca": (lambda p, seed: PCA(n_components=p["n_components"],
                                    random_state=seed),
                {"n_components": "int"}),
        "poly": (lambda p, seed: PolynomialFeatures(degree=p["degree"],
                                                    include_bias=False),
                 {"degree": "int"}),
    },
    "estimator": {
        "gaussian_nb": (lambda p, seed: GaussianNB(
            var_smoothing=10.0 ** p["var_smoothing_exp"]),
            {"var_smoothing_exp": "cont"}),
        "qda": (lambda p, seed: QuadraticDiscriminantAnalysis(
            reg_param=p["reg_param"]), {"reg_param": "cont"}),
        "gradient_boosting": (lambda p, seed: GradientBoostingClassifier(
            learning_rate=p["learning_rate"], n_estimators=p["n_estimators"],
            max_depth=p["max_depth"], random_state=seed),
            {"learning_rate": "cont", "n_estimators": "int",
             "max_depth": "int"}),
        "knn": (lambda p, seed: KNeighborsClassifier(
            n_neighbors=p["n_neighbors"]), {"n_neighbors": "int"}),
        "random_forest": (lambda p, seed: RandomForestClassifier(
            n_estimators=p["n_estimators"], max_depth=p["max_depth"],
            max_features=p["max_features"], random_state=seed),
            {"n_estimators": "int", "max_depth": "int",
             "max_features": "cont"}),
        "extra_trees": (lambda p, seed: ExtraTreesClassifier(
            n_estimators=p["n_estimators"], max_depth=p["max_depth"],
            max_features=p["max_features"], random_state=seed),
            {"n_estimators": "int", "max_depth": "int",
             "max_features": "cont"}),
    },
}

STAGES = ("scaler", "transformer", "estimator")

# bounds used by the exported engine-facing space document
BOUNDS: dict[str, tuple[float, float]] = {
    "scaler.quantile.n_quantiles": (10, 100),
    "transformer.pca.n_components": (1, 8),
    "transformer.poly.degree": (1, 2),
    "estimator.gaussian_nb.var_smoothing_exp": (-12.0, -6.0),
    "estimator.qda.reg_param": (0.0, 1.0),
    "estimator.gradient_boosting.learning_rate": (0.01, 0.5),
    "estimator.gradient_boosting.n_estimators": (10, 40),
    "estimator.gradient_boosting.max_depth": (1, 4),
    "estimator.knn.n_neighbors": (1, 30),
    "estimator.random_forest.n_estimators": (10, 40),
    "estimator.random_forest.max_depth": (2, 10),
    "estimator.random_forest.max_features": (0.1, 1.0),
    "estimator.extra_trees.n_estimators": (10, 40),
    "estimator.extra_trees.max_depth": (2, 10),
    "estimator.extra_trees.max_features": (0.1, 1.0),
}


@dataclass
class PipelineRecipe:
    """Resolved stage choices and their hyperparameter values."""

    choices: dict[str, str]
    params: dict[str, dict[str, Any]]  # stage -> {param: value}

    def build(self, seed: int) -> Pipeline:
        steps = []
        for stage in STAGES:
            ctor, _ = SPACE[stage][self.choices[stage]]
            if ctor is None:
                continue
            steps.append((stage, ctor(self.params[stage], seed)))
        if not steps:
            raise RecipeError("recipe resolves to an empty pipeline")
        return Pipeline(steps)


def resolve_recipe(z: dict[str, str], theta_int: dict[str, int],
                   theta_cont: dict[str, float]) -> PipelineRecipe:
    choices: dict[str, str] = {}
    for stage in STAGES:
        if stage not in z:
            raise RecipeError(f"missing module choice for {stage!r}")
        algorithm = z[stage]
        if algorithm not in SPACE[stage]:
            raise RecipeError(f"unknown algorithm {algorithm!r} for {stage!r}")
        choices[stage] = algorithm
    extra = set(z) - set(STAGES)
    if extra:
        raise RecipeError(f"unknown modules in request: {sorted(extra)}")

    params: dict[str, dict[str, Any]] = {stage: {} for stage in STAGES}
    expected: dict[str, tuple[str, str, str]] = {}
    for stage in STAGES:
        algorithm = choices[stage]
        for pname, kind in SPACE[stage][algorithm][1].items():
            expected[f"{stage}.{algorithm}.{pname}"] = (stage, pname, kind)

    received: set[str] = set()
    for source, kind_label in ((theta_int, "int"), (theta_cont, "cont")):
        for qual, value in source.items():
            if qual not in expected:
                raise RecipeError(f"parameter {qual!r} does not belong to the "
                                  f"selected algorithms")
            stage, pname, kind = expected[qual]
            if kind != kind_label:
                raise RecipeError(f"parameter {qual!r} has the wrong type "
                                  f"(expected {kind})")
            params[stage][pname] = int(value) if kind == "int" else float(value)
            received.add(qual)
    missing = set(expected) - received
    if missing:
        raise RecipeError(f"missing parameters: {sorted(missing)}")
    return PipelineRecipe(choices, params)


def space_document() -> dict:
    """Engine-facing search-space document matching this adapter."""
    modules = []
    for stage in STAGES:
        algorithms = []
        for name, (_, param_kinds) in SPACE[stage].items():
            cont, ints = [], []
            for pname, kind in param_kinds.items():
                lo, hi = BOUNDS[f"{stage}.{name}.{pname}"]
                target = cont if kind == "cont" else ints
                target.append({"name": pname, "lower": lo, "upper": hi})
            algorithms.append({"name": name, "cont_params": cont,
                               "int_params": ints})
        modules.append({"name": stage, "algorithms": algorithms})
    return {"modules": modules}
