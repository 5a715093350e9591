"""Synthetic face rendering and single-shot inverse rendering.

The package is self-contained: it generates a parametric face model, renders
SH-lit training corpora from a configurable prior, trains a convolutional
parameter regressor under a model-space loss, adapts the training
distribution to a target image set by corpus breeding, and evaluates
photometric/geometric/mask-overlap error against its own ground truth.
"""

from .breeding import BreedingConfig, breed, infer_corpus, perturb
from .corpus import (
    CorpusShard,
    PriorSpec,
    generate_corpus,
    read_shard,
    sample_prior,
    write_shard,
)
from .evaluation import (
    EvalReport,
    evaluate,
    geometric_error,
    iou,
    photometric_error,
)
from .facemodel import (
    FaceModel,
    ModelSpec,
    ParameterVector,
    evaluate_geometry,
    evaluate_reflectance,
    generate_model,
    load_model,
    rotation_matrix,
    save_model,
)
from .illumination import irradiance, sh_basis
from .regressor import (
    LossWeights,
    NetworkSpec,
    RegressorState,
    adadelta_step,
    forward,
    init_state,
    load_state,
    model_space_loss,
    normalize_input,
    save_state,
    train,
)
from .renderer import CameraSpec, RenderedSample, project, render

__version__ = "0.1.0"
