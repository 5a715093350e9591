"""Analysis-by-synthesis corpus breeding.

Starting from a network warm-trained on the base prior, each round infers
parameters for a target image set, perturbs every estimate into two noisy
variants, re-renders those variants into a fully labeled synthetic corpus,
and fine-tunes the network on it.  Over rounds the training distribution
drifts toward the target distribution.  The target's ground-truth parameters
are never read; only its images enter the loop.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .corpus import CorpusShard, check_shard_matches
from .facemodel import FaceModel, ParameterVector
from .regressor import RegressorState, predict_shard, train
from .renderer import CameraSpec, ProjectionError, render

# Sub-stream ids for the perturbation groups.
_G_ROT, _G_SHAPE, _G_EXPR, _G_REFL, _G_ILLUM = range(5)


@dataclass(frozen=True)
class BreedingConfig:
    """Desk-scale defaults; a full-scale run would use 15000 warm-up
    iterations, 8 rounds and 7500 fine-tune iterations."""

    warmup_iterations: int = 1000
    n_breed: int = 4
    finetune_iterations: int = 500
    perturbations_per_seed: int = 2
    rotation_noise_deg: float = 5.0   # uniform +-
    shape_noise: float = 0.05         # gaussian std
    refl_noise: float = 0.2
    expr_noise: float = 0.1
    illum_noise: float = 0.02
    rng_seed: int = 0

    def validate(self) -> None:
        if min(self.warmup_iterations, self.finetune_iterations) < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.n_breed < 0 or self.perturbations_per_seed < 1:
            raise ValueError("bad breeding counts")
        if min(self.rotation_noise_deg, self.shape_noise, self.refl_noise,
               self.expr_noise, self.illum_noise) < 0:
            raise ValueError("noise scales must be non-negative")


def infer_corpus(state: RegressorState, target: CorpusShard,
                 batch_size: int = 64) -> np.ndarray:
    """One forward pass per target image; (N, m) float32 estimates.  The
    target's parameter block is deliberately never touched."""
    check_shard_matches(target, state.spec.n_outputs)
    return predict_shard(state, target.images, batch_size=batch_size).astype(np.float32)


def _perturb_one(flat: np.ndarray, spec, config: BreedingConfig,
                 record: int, replicate: int) -> np.ndarray:
    def rng(group):
        return np.random.default_rng(
            np.random.SeedSequence((config.rng_seed, record, replicate, group)))

    theta = ParameterVector.from_flat(spec, flat)
    rot_rad = np.deg2rad(config.rotation_noise_deg)
    theta.rotation += rng(_G_ROT).uniform(-rot_rad, rot_rad, size=3)
    theta.shape += rng(_G_SHAPE).normal(0.0, config.shape_noise, size=spec.n_shape)
    theta.expression += rng(_G_EXPR).normal(0.0, config.expr_noise, size=spec.n_expr)
    theta.reflectance += rng(_G_REFL).normal(0.0, config.refl_noise, size=spec.n_refl)
    # Per-scalar illumination noise; this is what introduces colored light.
    theta.illumination += rng(_G_ILLUM).normal(
        0.0, config.illum_noise, size=(9, 3))
    return theta.flatten()


def perturb(estimates: np.ndarray, config: BreedingConfig, spec) -> np.ndarray:
    """Expand (N, m) seed estimates into (N * perturbations_per_seed, m)
    noisy variants, deterministic per (seed, record, replicate)."""
    config.validate()
    est = np.asarray(estimates, dtype=np.float64)
    rows = []
    for record in range(est.shape[0]):
        for replicate in range(config.perturbations_per_seed):
            rows.append(_perturb_one(est[record], spec, config, record, replicate))
    return np.stack(rows).astype(np.float32)


def render_params(model: FaceModel, camera: CameraSpec,
                  params32: np.ndarray, seed: int = 0) -> CorpusShard:
    """Render a batch of float32 parameter rows into an in-memory shard.
    Rows that fail to project are skipped and recorded."""
    images, masks, kept, skipped = [], [], [], []
    for i in range(params32.shape[0]):
        theta = ParameterVector.from_flat(model.spec,
                                          params32[i].astype(np.float64))
        try:
            sample = render(model, camera, theta)
        except ProjectionError:
            skipped.append(i)
            continue
        kept.append(i)
        images.append(sample.image)
        masks.append(sample.mask)
    if not kept:
        raise ValueError("no parameter row rendered successfully")
    return CorpusShard(params=params32[kept], images=np.stack(images),
                       masks=np.stack(masks), global_seed=seed,
                       skipped=tuple(skipped))


def breed(state: RegressorState, target: CorpusShard, model: FaceModel,
          camera: CameraSpec, config: BreedingConfig, diag: np.ndarray,
          batch_size: int = 32, lr: float = 0.01, decay: float = 0.001,
          eval_fn=None, keep_rounds: bool = False):
    """Run the breeding loop on a warm-trained state (mutated in place).

    Per round: infer target parameters, perturb, re-render, fine-tune.
    Returns (state, metrics) where metrics has one row per round; when
    eval_fn(state) -> dict is given its entries are merged into the row.
    With keep_rounds the bred shard of every round is returned as well.
    """
    config.validate()
    check_shard_matches(target, state.spec.n_outputs)
    metrics = []
    rounds = []
    for rnd in range(config.n_breed):
        estimates = infer_corpus(state, target)
        variants = perturb(estimates, config, model.spec)
        bred = render_params(model, camera, variants,
                             seed=config.rng_seed + rnd)
        state, trace = train(
            state, bred, diag, iterations=config.finetune_iterations,
            batch_size=batch_size, lr=lr, decay=decay,
            shuffle_seed=_round_seed(config.rng_seed, rnd))
        if trace and not np.isfinite(trace[-1][1]):
            raise FloatingPointError(f"non-finite loss in breeding round {rnd}")
        row = {"round": rnd + 1}
        if eval_fn is not None:
            row.update(eval_fn(state))
        metrics.append(row)
        if keep_rounds:
            rounds.append(bred)
    if keep_rounds:
        return state, metrics, rounds
    return state, metrics


def _round_seed(seed: int, rnd: int) -> int:
    # Independent shuffle stream per round, never derived from target data.
    return int(np.random.SeedSequence((seed, rnd)).generate_state(1)[0])


def write_metrics(metrics, path) -> None:
    fields = ["round", "weighted_loss", "photometric", "geometric", "iou"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(fields)
        for row in metrics:
            writer.writerow([row.get(k, "") for k in fields])
