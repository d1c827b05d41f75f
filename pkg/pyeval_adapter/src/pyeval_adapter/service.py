"""Evaluator service: train/score pipelines per request over the line protocol.

For each request the pipeline is trained on a fixed train split and scored on
a fixed validation split (one split per process, derived from the seed, reused
for every request).  The reply carries loss = 1 - AUROC and the constraint
vector [mean per-row prediction latency in seconds, group disparity of AUROC
across age bins].
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass

import numpy as np
from sklearn.metrics import roc_auc_score
from sklearn.model_selection import train_test_split

from . import datasets
from .space import RecipeError, resolve_recipe

PROTOCOL_VERSION = 1
N_CONSTRAINTS = 2
LATENCY_MIN_ROWS = 1000


@dataclass
class ServiceConfig:
    dataset: str = "credit"
    rows: int = 1600
    seed: int = 0
    validation_fraction: float = 0.2
    protected_feature: object = "age"   # "age" or a feature column index
    group_bins: tuple = ()              # bin edges; empty = dataset default
    latency_min_rows: int = LATENCY_MIN_ROWS
    emit_groups: bool = False

    @staticmethod
    def from_file(path: str) -> "ServiceConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return ServiceConfig(**raw)


class Evaluations:
    """Per-process state: dataset, the fixed split, and scoring helpers."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.data = datasets.load(config.dataset, config.rows, config.seed)
        idx = np.arange(len(self.data.labels))
        self.train_idx, self.val_idx = train_test_split(
            idx, test_size=config.validation_fraction,
            random_state=config.seed, stratify=self.data.labels)
        self.groups = self.data.group_indices(
            self.val_idx, config.protected_feature, config.group_bins)

    def score(self, z, theta_int, theta_cont) -> dict:
        recipe = resolve_recipe(z, theta_int, theta_cont)
        model = recipe.build(self.config.seed)
        x, y = self.data.features, self.data.labels
        model.fit(x[self.train_idx], y[self.train_idx])

        scores = self._predict_scores(model, x[self.val_idx])
        auroc = roc_auc_score(y[self.val_idx], scores)
        loss = 1.0 - float(auroc)

        latency = self._latency(model, x[self.val_idx])
        group_metrics = self._group_metrics(model, x, y)
        disparity = max(group_metrics.values()) - min(group_metrics.values())
        return {"loss": loss, "constraints": [latency, disparity],
                "groups": group_metrics}

    @staticmethod
    def _predict_scores(model, rows: np.ndarray) -> np.ndarray:
        if hasattr(model, "predict_proba"):
            return model.predict_proba(rows)[:, 1]
        return model.decision_function(rows)

    def _latency(self, model, rows: np.ndarray) -> float:
        reps = max(1, int(np.ceil(self.config.latency_min_rows / len(rows))))
        tiled = np.tile(rows, (reps, 1))
        start = time.perf_counter()
        model.predict(tiled)
        elapsed = time.perf_counter() - start
        return elapsed / len(tiled)

    def _group_metrics(self, model, x: np.ndarray,
                       y: np.ndarray) -> dict[str, float]:
        metrics: dict[str, float] = {}
        for label, rows in self.groups:
            labels = y[rows]
            if len(np.unique(labels)) < 2:
                continue  # AUROC undefined for a one-class group
            scores = self._predict_scores(model, x[rows])
            metrics[label] = float(roc_auc_score(labels, scores))
        if len(metrics) < 2:
            raise RecipeError("fewer than 2 scorable age groups")
        return metrics


def send(obj: dict, out=None) -> None:
    (out or sys.stdout).write(json.dumps(obj) + "\n")
    (out or sys.stdout).flush()


def serve(config: ServiceConfig, stdin=None, stdout=None) -> None:
    """Blocking request loop; returns at EOF.  Single request in flight."""
    stdin = stdin or sys.stdin
    evals = Evaluations(config)
    hello_line = stdin.readline()
    if not hello_line:
        return
    hello = json.loads(hello_line)
    if hello.get("hello", {}).get("protocol") != PROTOCOL_VERSION:
        send({"error": f"unsupported protocol: {hello!r}"}, stdout)
        return
    send({"ready": {"constraints": N_CONSTRAINTS}}, stdout)

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            send({"id": None, "loss": None, "constraints": [],
                  "error": "malformed request JSON"}, stdout)
            continue
        req_id = request.get("id")
        try:
            result = evals.score(request.get("z", {}),
                                 request.get("theta_int", {}),
                                 request.get("theta_cont", {}))
            reply = {"id": req_id, "loss": result["loss"],
                     "constraints": result["constraints"]}
            if config.emit_groups:
                reply["groups"] = result["groups"]
            send(reply, stdout)
        except Exception as exc:  # a bad recipe must never kill the loop
            send({"id": req_id, "loss": None, "constraints": [],
                  "error": f"{type(exc).__name__}: {exc}"}, stdout)
