import os

# Pin BLAS threading before numpy loads anywhere: the small per-layer GEMMs
# in this suite run fastest single-threaded, and fixed threading keeps
# reruns bit-reproducible.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from inverseface.corpus import PriorSpec, generate_corpus  # noqa: E402
from inverseface.facemodel import ModelSpec, generate_model  # noqa: E402
from inverseface.regressor import LossWeights  # noqa: E402
from inverseface.renderer import CameraSpec  # noqa: E402


# Tiny setup: fast enough for per-module tests.

@pytest.fixture(scope="session")
def tiny_spec():
    return ModelSpec(n_shape=4, n_expr=3, n_refl=4, mesh_rows=12,
                     mesh_cols=12, rng_seed=5)


@pytest.fixture(scope="session")
def tiny_model(tiny_spec):
    return generate_model(tiny_spec)


@pytest.fixture(scope="session")
def tiny_camera():
    return CameraSpec(32, 32, 30.0, 600.0)


@pytest.fixture(scope="session")
def tiny_prior():
    return PriorSpec(rng_seed=51)


@pytest.fixture(scope="session")
def tiny_shard(tiny_model, tiny_camera, tiny_prior):
    return generate_corpus(tiny_model, tiny_camera, tiny_prior, 24)


# Desk-scale setup shared by the training example and the acceptance suite.

@pytest.fixture(scope="session")
def desk_spec():
    return ModelSpec(n_shape=16, n_expr=8, n_refl=16, mesh_rows=48,
                     mesh_cols=48, rng_seed=7)


@pytest.fixture(scope="session")
def desk_model(desk_spec):
    return generate_model(desk_spec)


@pytest.fixture(scope="session")
def desk_camera():
    return CameraSpec(64, 64, 30.0, 600.0)


@pytest.fixture(scope="session")
def base_prior():
    return PriorSpec(rng_seed=101)


@pytest.fixture(scope="session")
def target_prior():
    # Expression support shifted off-center and colored illumination: the
    # stand-in for an unknown target image distribution.
    return PriorSpec(expr_range=(4.0, 12.0), expr_bias_first=0.0,
                     monochrome=False, rng_seed=202)


@pytest.fixture(scope="session")
def desk_diag(desk_model):
    return LossWeights().diagonal(desk_model)


@pytest.fixture(scope="session")
def train_shard(desk_model, desk_camera, base_prior):
    return generate_corpus(desk_model, desk_camera, base_prior, 20000)


@pytest.fixture(scope="session")
def heldout_base(desk_model, desk_camera, base_prior):
    # Same prior, disjoint record indices: fresh samples.
    return generate_corpus(desk_model, desk_camera, base_prior, 2000,
                           start_index=1_000_000)


def _mask_interior(mask):
    """Pixels of `mask` whose full 8-neighbourhood is also inside (erosion)."""
    interior = mask.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            interior &= np.roll(np.roll(mask, dy, axis=0), dx, axis=1)
    return interior


@pytest.fixture
def mask_interior():
    return _mask_interior
