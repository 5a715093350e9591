"""Error measures and test-set evaluation.

Photometric error is the RMSE of 8-bit RGB values inside the input mask
between the input image and a re-render of the predicted parameters.
Geometric error is the RMSE in mm over corresponding (unposed) mesh
vertices.  Mask overlap is intersection-over-union in percent.  Reports
aggregate mean and population standard deviation per measure, with the
zero-parameter (mean face) predictor as the baseline bar.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .corpus import CorpusShard, check_shard_matches
from .facemodel import (
    DimensionMismatch,
    FaceModel,
    ParameterVector,
    evaluate_geometry,
)
from .regressor import RegressorState, predict_shard
from .renderer import CameraSpec, RenderedSample, render


def photometric_error(reference: RenderedSample,
                      predicted: RenderedSample) -> float:
    """RMSE over all RGB channel values of pixels inside the reference
    mask, in 8-bit units."""
    if reference.image.shape != predicted.image.shape:
        raise DimensionMismatch("image dimensions differ")
    mask = reference.mask.astype(bool)
    if not mask.any():
        raise ValueError("reference mask is empty")
    a = reference.image[mask].astype(np.float64)
    b = predicted.image[mask].astype(np.float64)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def geometric_error(model: FaceModel, truth: ParameterVector,
                    predicted: ParameterVector) -> float:
    """RMSE in mm over per-vertex Euclidean distances between the unposed
    reconstructions (correspondence by vertex index; rotation excluded)."""
    va = evaluate_geometry(model, truth).reshape(-1, 3)
    vb = evaluate_geometry(model, predicted).reshape(-1, 3)
    dist2 = ((va - vb) ** 2).sum(axis=1)
    return float(np.sqrt(dist2.mean()))


def iou(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """Mask overlap in percent; two empty masks count as perfect overlap."""
    a = np.asarray(mask_a).astype(bool)
    b = np.asarray(mask_b).astype(bool)
    if a.shape != b.shape:
        raise DimensionMismatch("mask dimensions differ")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 100.0
    return 100.0 * np.logical_and(a, b).sum() / union


_MEASURES = ("weighted_loss", "photometric", "geometric", "iou")


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)       # per-sample dicts
    aggregate: dict = field(default_factory=dict)  # measure -> (mean, std)
    baseline: dict = field(default_factory=dict)

    def mean(self, measure: str) -> float:
        return self.aggregate[measure][0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["sample"] + list(_MEASURES))
            for row in self.rows:
                writer.writerow([row["sample"]] +
                                [f"{row[m]:.9g}" for m in _MEASURES])
            for name, agg in (("mean", self.aggregate),
                              ("std", self.aggregate),
                              ("baseline_mean", self.baseline),
                              ("baseline_std", self.baseline)):
                idx = 1 if name.endswith("std") else 0
                writer.writerow([name] +
                                [f"{agg[m][idx]:.9g}" for m in _MEASURES])

    def summary(self) -> str:
        lines = ["measure            mean      std   (baseline mean, std)"]
        for m in _MEASURES:
            mu, sd = self.aggregate[m]
            bmu, bsd = self.baseline[m]
            lines.append(
                f"{m:<15} {mu:>9.3f} {sd:>8.3f}   ({bmu:.3f}, {bsd:.3f})")
        return "\n".join(lines)


def _aggregate(per_sample: dict) -> dict:
    return {m: (float(np.mean(v)), float(np.std(v)))
            for m, v in per_sample.items()}


def evaluate_predictions(predictions: np.ndarray, shard: CorpusShard,
                         model: FaceModel, camera: CameraSpec,
                         diag: np.ndarray) -> dict:
    """Per-sample measures of arbitrary (N, m) predictions against a shard's
    ground truth; shared by network, oracle and baseline evaluation."""
    preds = np.asarray(predictions)
    if preds.shape != shard.params.shape:
        raise DimensionMismatch(
            f"predictions {preds.shape} vs shard {shard.params.shape}")
    d2 = np.asarray(diag, dtype=np.float64) ** 2
    values = {m: [] for m in _MEASURES}
    for i in range(shard.count):
        truth_flat = shard.params[i].astype(np.float64)
        pred_flat = preds[i].astype(np.float64)
        truth = ParameterVector.from_flat(model.spec, truth_flat)
        pred = ParameterVector.from_flat(model.spec, pred_flat)
        rerender = render(model, camera, pred)
        reference = shard.sample(i, model.spec)
        delta = pred_flat - truth_flat
        values["weighted_loss"].append(float((d2 * delta * delta).sum()))
        values["photometric"].append(photometric_error(reference, rerender))
        values["geometric"].append(geometric_error(model, truth, pred))
        values["iou"].append(iou(reference.mask, rerender.mask))
    return values


def mean_weighted_loss(predictions: np.ndarray, shard: CorpusShard,
                       diag: np.ndarray) -> float:
    """Per-sample weighted parameter loss averaged over a shard (no
    re-rendering)."""
    delta = predictions.astype(np.float64) - shard.params.astype(np.float64)
    d2 = np.asarray(diag, dtype=np.float64) ** 2
    return float((d2 * delta * delta).sum(axis=1).mean())


def evaluate(state: RegressorState, shard: CorpusShard, model: FaceModel,
             camera: CameraSpec, diag: np.ndarray,
             batch_size: int = 64) -> EvalReport:
    """Infer, re-render and measure every shard sample; includes the
    zero-parameter mean-face predictor as baseline."""
    if shard.count < 1:
        raise ValueError("empty shard")
    check_shard_matches(shard, state.spec.n_outputs)
    preds = predict_shard(state, shard.images, batch_size=batch_size)
    values = evaluate_predictions(preds, shard, model, camera, diag)
    zeros = np.zeros_like(shard.params)
    base_values = evaluate_predictions(zeros, shard, model, camera, diag)
    rows = [
        {"sample": i, **{m: values[m][i] for m in _MEASURES}}
        for i in range(shard.count)
    ]
    return EvalReport(rows=rows, aggregate=_aggregate(values),
                      baseline=_aggregate(base_values))
