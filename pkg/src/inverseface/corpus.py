"""Training-corpus sampling, rendering and shard persistence.

Parameter vectors are drawn from an independent per-group prior; every
record is seeded by (prior seed, record index, group), so any record can be
regenerated in isolation and parallel generation is order-independent.
Shards store float32 parameters, RGB8 images and bit-packed masks.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .binio import (
    expect_magic,
    expect_version,
    read_exact,
    read_f32_array,
    read_u32,
    read_u64,
    write_f32_array,
    write_u32,
    write_u64,
)
from .facemodel import DimensionMismatch, FaceModel, ParameterVector
from .renderer import CameraSpec, ProjectionError, RenderedSample, render

SHARD_MAGIC = b"IFNC"
SHARD_VERSION = 1

# Sub-stream ids for the independently seeded parameter groups.
_GROUP_ROTATION = 0
_GROUP_SHAPE = 1
_GROUP_EXPRESSION = 2
_GROUP_REFLECTANCE = 3
_GROUP_ILLUMINATION = 4


@dataclass(frozen=True)
class PriorSpec:
    """Sampling distribution of the synthetic corpus.

    Defaults are the base training prior; shifted variants (narrower or
    offset expression range, colored illumination) stand in for a target
    image distribution whose parameters are unknown to the learner.
    """

    yaw_pitch_range_deg: float = 40.0
    roll_range_deg: float = 15.0
    shape_dist: bool = True   # standard normal when True, zeros when False
    refl_dist: bool = True
    expr_range: tuple[float, float] = (-12.0, 12.0)
    expr_bias_first: float = 4.8
    illum_ac_range: float = 0.2
    illum_dc_range: tuple[float, float] = (0.6, 1.2)
    monochrome: bool = True
    rng_seed: int = 0

    def validate(self) -> None:
        if self.yaw_pitch_range_deg <= 0 or self.roll_range_deg <= 0:
            raise ValueError("rotation ranges must be positive")
        lo, hi = self.expr_range
        if hi <= lo:
            raise ValueError("expression range is degenerate")
        dlo, dhi = self.illum_dc_range
        if dlo <= 0 or dhi <= dlo:
            raise ValueError("illumination dc range must be positive and non-degenerate")
        if self.illum_ac_range <= 0:
            raise ValueError("illumination ac range must be positive")


@dataclass
class CorpusShard:
    """A block of rendered samples with their generating parameters."""

    params: np.ndarray       # (N, m) float32
    images: np.ndarray       # (N, H, W, 3) uint8
    masks: np.ndarray        # (N, H, W) bool
    global_seed: int
    skipped: tuple[int, ...] = ()

    @property
    def count(self) -> int:
        return self.params.shape[0]

    @property
    def m(self) -> int:
        return self.params.shape[1]

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    def sample(self, i: int, spec) -> RenderedSample:
        params = ParameterVector.from_flat(spec, self.params[i].astype(np.float64))
        h, w = self.height, self.width
        depth = np.full((h, w), np.inf, dtype=np.float32)
        return RenderedSample(image=self.images[i], mask=self.masks[i],
                              depth=depth, params=params)


def _group_rng(seed: int, index: int, group: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, index, group)))


def sample_prior(prior: PriorSpec, index: int, spec) -> ParameterVector:
    """Draw record `index` of the prior.  Each parameter group has its own
    random stream keyed by (seed, index, group), so groups are independent
    and any record is reproducible in isolation."""
    prior.validate()
    yp = np.deg2rad(prior.yaw_pitch_range_deg)
    roll = np.deg2rad(prior.roll_range_deg)
    rng = _group_rng(prior.rng_seed, index, _GROUP_ROTATION)
    rotation = np.array([
        rng.uniform(-yp, yp),
        rng.uniform(-yp, yp),
        rng.uniform(-roll, roll),
    ])

    rng = _group_rng(prior.rng_seed, index, _GROUP_SHAPE)
    shape = rng.standard_normal(spec.n_shape) if prior.shape_dist \
        else np.zeros(spec.n_shape)

    rng = _group_rng(prior.rng_seed, index, _GROUP_EXPRESSION)
    lo, hi = prior.expr_range
    expression = rng.uniform(lo, hi, size=spec.n_expr)
    expression[0] += prior.expr_bias_first

    rng = _group_rng(prior.rng_seed, index, _GROUP_REFLECTANCE)
    reflectance = rng.standard_normal(spec.n_refl) if prior.refl_dist \
        else np.zeros(spec.n_refl)

    rng = _group_rng(prior.rng_seed, index, _GROUP_ILLUMINATION)
    dlo, dhi = prior.illum_dc_range
    ac = prior.illum_ac_range
    if prior.monochrome:
        values = np.empty(9)
        values[0] = rng.uniform(dlo, dhi)
        values[1:] = rng.uniform(-ac, ac, size=8)
        illumination = np.repeat(values[:, None], 3, axis=1)
    else:
        illumination = np.empty((9, 3))
        illumination[0] = rng.uniform(dlo, dhi, size=3)
        illumination[1:] = rng.uniform(-ac, ac, size=(8, 3))

    return ParameterVector(rotation, shape, expression, reflectance, illumination)


def _render_record(model: FaceModel, camera: CameraSpec, prior: PriorSpec,
                   index: int):
    theta = sample_prior(prior, index, model.spec)
    # Round to stored precision first so re-rendering a persisted record is
    # bit-exact.
    flat32 = theta.flatten().astype(np.float32)
    theta32 = ParameterVector.from_flat(model.spec, flat32.astype(np.float64))
    sample = render(model, camera, theta32)
    return flat32, sample.image, sample.mask


_POOL_STATE: dict = {}


def _pool_init(model, camera, prior):
    _POOL_STATE["args"] = (model, camera, prior)


def _pool_chunk(indices):
    model, camera, prior = _POOL_STATE["args"]
    out = []
    for i in indices:
        try:
            out.append((i, _render_record(model, camera, prior, i)))
        except ProjectionError:
            out.append((i, None))
    return out


def generate_corpus(model: FaceModel, camera: CameraSpec, prior: PriorSpec,
                    count: int, start_index: int = 0,
                    threads: int = 1) -> CorpusShard:
    """Render `count` prior samples into a shard.  Deterministic in
    (model, camera, prior, count, start_index) regardless of thread count;
    records that fail to project are skipped and their indices recorded."""
    if count < 1:
        raise ValueError("count must be >= 1")
    camera.validate()
    prior.validate()
    indices = list(range(start_index, start_index + count))

    if threads == 0:
        threads = os.cpu_count() or 1
    results: dict = {}
    if threads > 1 and count > 1:
        chunk = max(16, count // (threads * 8))
        chunks = [indices[i:i + chunk] for i in range(0, count, chunk)]
        with ProcessPoolExecutor(
                max_workers=threads, initializer=_pool_init,
                initargs=(model, camera, prior)) as pool:
            for part in pool.map(_pool_chunk, chunks):
                for i, rec in part:
                    results[i] = rec
    else:
        _pool_init(model, camera, prior)
        for i, rec in _pool_chunk(indices):
            results[i] = rec

    kept = [i for i in indices if results[i] is not None]
    skipped = tuple(i for i in indices if results[i] is None)
    if not kept:
        raise ValueError("all records failed to render")
    params = np.stack([results[i][0] for i in kept])
    images = np.stack([results[i][1] for i in kept])
    masks = np.stack([results[i][2] for i in kept])
    return CorpusShard(params=params, images=images, masks=masks,
                       global_seed=prior.rng_seed, skipped=skipped)


def write_shard(shard: CorpusShard, path) -> None:
    n, m = shard.count, shard.m
    h, w = shard.height, shard.width
    with open(path, "wb") as f:
        f.write(SHARD_MAGIC)
        write_u32(f, SHARD_VERSION)
        write_u32(f, n)
        write_u32(f, m)
        write_u32(f, w)
        write_u32(f, h)
        write_u64(f, shard.global_seed)
        write_u32(f, len(shard.skipped))
        for idx in shard.skipped:
            write_u32(f, idx)
        for i in range(n):
            write_f32_array(f, shard.params[i])
            f.write(shard.images[i].tobytes())
            f.write(np.packbits(shard.masks[i].reshape(-1)).tobytes())


def read_shard(path) -> CorpusShard:
    with open(path, "rb") as f:
        expect_magic(f, SHARD_MAGIC)
        expect_version(f, SHARD_VERSION)
        n = read_u32(f)
        m = read_u32(f)
        w = read_u32(f)
        h = read_u32(f)
        global_seed = read_u64(f)
        n_skipped = read_u32(f)
        skipped = tuple(read_u32(f) for _ in range(n_skipped))
        if n < 1:
            raise ValueError("shard has no records")
        params = np.empty((n, m), dtype=np.float32)
        images = np.empty((n, h, w, 3), dtype=np.uint8)
        masks = np.empty((n, h, w), dtype=bool)
        mask_bytes = (h * w + 7) // 8
        for i in range(n):
            params[i] = read_f32_array(f, m)
            img = read_exact(f, h * w * 3)
            images[i] = np.frombuffer(img, dtype=np.uint8).reshape(h, w, 3)
            bits = np.frombuffer(read_exact(f, mask_bytes), dtype=np.uint8)
            masks[i] = np.unpackbits(bits)[:h * w].astype(bool).reshape(h, w)
    return CorpusShard(params=params, images=images, masks=masks,
                       global_seed=global_seed, skipped=skipped)


def check_shard_matches(shard: CorpusShard, m: int) -> None:
    if shard.m != m:
        raise DimensionMismatch(
            f"shard parameter width {shard.m} does not match model m={m}")


def shifted_prior(base: PriorSpec, **overrides) -> PriorSpec:
    """Convenience for building target-distribution variants."""
    return replace(base, **overrides)
