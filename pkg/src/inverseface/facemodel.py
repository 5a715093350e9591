"""Parametric face model.

A face image is coded by a parameter vector (rotation, shape, expression,
reflectance, illumination).  Geometry and per-vertex reflectance are
multi-linear: a mean plus orthonormal basis vectors scaled by per-mode
standard deviations and the coefficients.  The basis itself is generated
procedurally (smoothed Gaussian fields over the mesh, orthonormalized by
modified Gram-Schmidt) with a power-law sigma decay, standing in for a
scan-derived PCA model.  Model space is millimetres.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binio import (
    expect_magic,
    expect_version,
    read_f32_array,
    read_u32,
    read_u64,
    write_f32_array,
    write_u32,
    write_u64,
)

N_ILLUM = 27  # 9 spherical-harmonic bands x RGB

MODEL_MAGIC = b"IFNM"
MODEL_VERSION = 1

# Procedural shell dimensions (mm): 190 tall x 140 wide x 80 deep.
_HALF_WIDTH = 70.0
_HALF_HEIGHT = 95.0
_DEPTH = 80.0
_NOSE_MM = 25.0
_EYE_MM = 6.0
_SMOOTH_PASSES = 10
_MEAN_REFLECTANCE = (0.75, 0.55, 0.45)
_REFLECTANCE_WOBBLE = 0.05


class DimensionMismatch(ValueError):
    """Parameter/model/corpus dimensions do not agree."""


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions and seed of a face model.

    Desk defaults give m = 3 + 16 + 8 + 16 + 27 = 70 on a 48x48 vertex grid;
    full-scale counts would be (128, 64, 128) for m = 350.
    """

    n_shape: int = 16
    n_expr: int = 8
    n_refl: int = 16
    mesh_rows: int = 48
    mesh_cols: int = 48
    rng_seed: int = 0

    @property
    def n_vertices(self) -> int:
        return self.mesh_rows * self.mesh_cols

    @property
    def n_illum(self) -> int:
        return N_ILLUM

    @property
    def m(self) -> int:
        return 3 + self.n_shape + self.n_expr + self.n_refl + N_ILLUM

    def validate(self) -> None:
        if min(self.n_shape, self.n_expr, self.n_refl) < 1:
            raise ValueError("basis sizes must be >= 1")
        if self.mesh_rows < 8 or self.mesh_cols < 8:
            raise ValueError("mesh grid must be at least 8x8")
        if 3 * self.n_vertices < self.n_shape + self.n_expr:
            raise ValueError(
                "3V < n_shape + n_expr: geometry bases cannot be orthonormal")


@dataclass
class ParameterVector:
    """One point in face-image space.

    Flattening order is (rotation, shape, expression, reflectance,
    illumination); illumination is 9 RGB triples flattened band-major.
    Rotation is Euler angles (x, y, z) in radians.
    """

    rotation: np.ndarray
    shape: np.ndarray
    expression: np.ndarray
    reflectance: np.ndarray
    illumination: np.ndarray  # (9, 3), linear radiance units

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ParameterVector":
        return cls(
            rotation=np.zeros(3),
            shape=np.zeros(spec.n_shape),
            expression=np.zeros(spec.n_expr),
            reflectance=np.zeros(spec.n_refl),
            illumination=np.zeros((9, 3)),
        )

    @classmethod
    def from_flat(cls, spec: ModelSpec, flat: np.ndarray) -> "ParameterVector":
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if flat.size != spec.m:
            raise DimensionMismatch(
                f"flat parameter vector has {flat.size} entries, expected {spec.m}")
        ofs = 0
        parts = []
        for n in (3, spec.n_shape, spec.n_expr, spec.n_refl, N_ILLUM):
            parts.append(flat[ofs:ofs + n])
            ofs += n
        rot, shp, exp, refl, illum = parts
        return cls(rot.copy(), shp.copy(), exp.copy(), refl.copy(),
                   illum.reshape(9, 3).copy())

    def flatten(self) -> np.ndarray:
        return np.concatenate([
            np.asarray(self.rotation, dtype=np.float64).reshape(-1),
            np.asarray(self.shape, dtype=np.float64).reshape(-1),
            np.asarray(self.expression, dtype=np.float64).reshape(-1),
            np.asarray(self.reflectance, dtype=np.float64).reshape(-1),
            np.asarray(self.illumination, dtype=np.float64).reshape(-1),
        ])

    def validate(self, spec: ModelSpec) -> None:
        shapes = {
            "rotation": (np.asarray(self.rotation).size, 3),
            "shape": (np.asarray(self.shape).size, spec.n_shape),
            "expression": (np.asarray(self.expression).size, spec.n_expr),
            "reflectance": (np.asarray(self.reflectance).size, spec.n_refl),
            "illumination": (np.asarray(self.illumination).size, N_ILLUM),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise DimensionMismatch(f"{name} has {got} entries, expected {want}")
        if not np.isfinite(self.flatten()).all():
            raise ValueError("parameter vector contains non-finite values")


@dataclass
class FaceModel:
    """Mean geometry/reflectance plus orthonormal bases and per-mode sigmas.

    Immutable after generation; safe to share across workers.
    """

    spec: ModelSpec
    mean_geometry: np.ndarray     # (3V,) mm
    mean_reflectance: np.ndarray  # (3V,) in [0, 1]
    shape_basis: np.ndarray       # (n_shape, 3V), orthonormal rows
    expr_basis: np.ndarray        # (n_expr, 3V)
    refl_basis: np.ndarray        # (n_refl, 3V)
    shape_sigma: np.ndarray       # (n_shape,) mm
    expr_sigma: np.ndarray        # (n_expr,) mm
    refl_sigma: np.ndarray        # (n_refl,)
    triangles: np.ndarray         # (T, 3) int32 vertex indices


def rotation_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rotation applied to column vectors as Rz(gamma) @ Ry(beta) @ Rx(alpha),
    i.e. successive rotation about the camera-space x, y, then z axis."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rz = np.array([[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def _grid_triangles(rows: int, cols: int) -> np.ndarray:
    """Two triangles per grid quad, wound counter-clockwise when viewed from
    +z (the outward side of the unposed shell)."""
    r, c = np.meshgrid(np.arange(rows - 1), np.arange(cols - 1), indexing="ij")
    p00 = (r * cols + c).ravel()
    p01 = p00 + 1
    p10 = p00 + cols
    p11 = p10 + 1
    tri_a = np.stack([p00, p01, p11], axis=1)
    tri_b = np.stack([p00, p11, p10], axis=1)
    return np.concatenate([tri_a, tri_b]).astype(np.int32)


def _mesh_edges(triangles: np.ndarray, n_vertices: int):
    edges = np.concatenate([
        triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]],
    ])
    edges = np.sort(edges, axis=1)
    edges = np.unique(edges, axis=0)
    degree = np.bincount(edges.ravel(), minlength=n_vertices).astype(np.float64)
    return edges, degree


def _smooth_fields(fields: np.ndarray, edges: np.ndarray, degree: np.ndarray,
                   passes: int = _SMOOTH_PASSES) -> np.ndarray:
    """Laplacian smoothing over mesh adjacency: v <- (v + neighbour mean)/2."""
    fields = np.asarray(fields, dtype=np.float64)
    for _ in range(passes):
        acc = np.zeros_like(fields)
        np.add.at(acc, edges[:, 0], fields[edges[:, 1]])
        np.add.at(acc, edges[:, 1], fields[edges[:, 0]])
        fields = 0.5 * fields + 0.5 * acc / degree[:, None]
    return fields


def _orthonormalize(vectors: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt over rows."""
    q = np.array(vectors, dtype=np.float64)
    for i in range(q.shape[0]):
        for j in range(i):
            q[i] -= (q[i] @ q[j]) * q[j]
        norm = np.linalg.norm(q[i])
        if norm < 1e-10:
            raise ValueError(f"basis vector {i} degenerate after projection")
        q[i] /= norm
    return q


def _sigma_decay(leading: float, count: int) -> np.ndarray:
    return leading * np.arange(1, count + 1, dtype=np.float64) ** -0.7


def _gauss2(u, v, sigma):
    return np.exp(-(u * u + v * v) / (2.0 * sigma * sigma))


def generate_model(spec: ModelSpec) -> FaceModel:
    """Procedurally generate a face model; deterministic in spec.rng_seed.

    The mean mesh is a half-ellipsoid face shell with a Gaussian nose
    protrusion and two eye indentations; basis vectors are per-vertex
    Gaussian fields smoothed over mesh adjacency and orthonormalized.
    """
    spec.validate()
    rows, cols = spec.mesh_rows, spec.mesh_cols
    n_vert = spec.n_vertices
    rng = np.random.default_rng(spec.rng_seed)

    # Grid parameterization: s across (left->right), t up (bottom->top).
    t, s = np.meshgrid(
        np.linspace(0.0, 1.0, rows), np.linspace(0.0, 1.0, cols), indexing="ij")
    azimuth = (s - 0.5) * np.pi
    # Elevation stops short of the poles so no grid row collapses to a point.
    elevation = (t - 0.5) * np.pi * 0.95
    x = _HALF_WIDTH * np.cos(elevation) * np.sin(azimuth)
    y = _HALF_HEIGHT * np.sin(elevation)
    z = _DEPTH * np.cos(elevation) * np.cos(azimuth)
    z = z + _NOSE_MM * _gauss2(s - 0.5, t - 0.5, 0.08)
    z = z - _EYE_MM * _gauss2(s - 0.35, t - 0.65, 0.05)
    z = z - _EYE_MM * _gauss2(s - 0.65, t - 0.65, 0.05)
    mean_geometry = np.stack([x, y, z], axis=-1).reshape(-1)

    triangles = _grid_triangles(rows, cols)
    edges, degree = _mesh_edges(triangles, n_vert)

    wobble = _smooth_fields(rng.standard_normal((n_vert, 3)), edges, degree)
    wobble *= _REFLECTANCE_WOBBLE / np.abs(wobble).max()
    mean_reflectance = (np.array(_MEAN_REFLECTANCE) + wobble).reshape(-1)

    def make_basis(count: int) -> np.ndarray:
        raw = rng.standard_normal((count, n_vert, 3))
        smoothed = np.stack(
            [_smooth_fields(raw[i], edges, degree) for i in range(count)])
        return _orthonormalize(smoothed.reshape(count, 3 * n_vert))

    shape_basis = make_basis(spec.n_shape)
    expr_basis = make_basis(spec.n_expr)
    refl_basis = make_basis(spec.n_refl)

    def f32(arr):
        # Round through the serialized precision so a generated model and its
        # saved/reloaded copy are bit-identical.
        return np.asarray(arr).astype(np.float32).astype(np.float64)

    return FaceModel(
        spec=spec,
        mean_geometry=f32(mean_geometry),
        mean_reflectance=f32(mean_reflectance),
        shape_basis=f32(shape_basis),
        expr_basis=f32(expr_basis),
        refl_basis=f32(refl_basis),
        shape_sigma=f32(_sigma_decay(10.0, spec.n_shape)),
        expr_sigma=f32(_sigma_decay(6.0, spec.n_expr)),
        refl_sigma=f32(_sigma_decay(0.05, spec.n_refl)),
        triangles=triangles,
    )


def evaluate_geometry(model: FaceModel, params: ParameterVector) -> np.ndarray:
    """Unposed vertex positions (3V,) in mm: mean + sigma-scaled shape and
    expression modes.  Rotation is applied by the renderer, not here."""
    params.validate(model.spec)
    out = model.mean_geometry.copy()
    out += (model.shape_sigma * np.asarray(params.shape, dtype=np.float64)) @ model.shape_basis
    out += (model.expr_sigma * np.asarray(params.expression, dtype=np.float64)) @ model.expr_basis
    return out


def evaluate_reflectance(model: FaceModel, params: ParameterVector) -> np.ndarray:
    """Per-vertex RGB reflectance (3V,), clamped to [0, 1] after the linear
    combination."""
    params.validate(model.spec)
    out = model.mean_reflectance.copy()
    out += (model.refl_sigma * np.asarray(params.reflectance, dtype=np.float64)) @ model.refl_basis
    return np.clip(out, 0.0, 1.0)


def save_model(model: FaceModel, path) -> None:
    spec = model.spec
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        write_u32(f, MODEL_VERSION)
        for value in (spec.n_shape, spec.n_expr, spec.n_refl, N_ILLUM,
                      spec.n_vertices, spec.mesh_rows, spec.mesh_cols):
            write_u32(f, value)
        write_u64(f, spec.rng_seed)
        for arr in (model.mean_geometry, model.mean_reflectance,
                    model.shape_basis, model.expr_basis, model.refl_basis,
                    model.shape_sigma, model.expr_sigma, model.refl_sigma,
                    model.triangles):
            write_f32_array(f, arr)


def load_model(path) -> FaceModel:
    with open(path, "rb") as f:
        expect_magic(f, MODEL_MAGIC)
        expect_version(f, MODEL_VERSION)
        n_shape = read_u32(f)
        n_expr = read_u32(f)
        n_refl = read_u32(f)
        n_illum = read_u32(f)
        n_vertices = read_u32(f)
        rows = read_u32(f)
        cols = read_u32(f)
        seed = read_u64(f)
        if n_illum != N_ILLUM:
            raise DimensionMismatch(f"model file has {n_illum} illumination dims")
        if n_vertices != rows * cols:
            raise DimensionMismatch("vertex count does not match mesh grid")
        spec = ModelSpec(n_shape=n_shape, n_expr=n_expr, n_refl=n_refl,
                         mesh_rows=rows, mesh_cols=cols, rng_seed=seed)
        three_v = 3 * n_vertices

        def arr(count):
            return read_f32_array(f, count).astype(np.float64)

        mean_geometry = arr(three_v)
        mean_reflectance = arr(three_v)
        shape_basis = arr(n_shape * three_v).reshape(n_shape, three_v)
        expr_basis = arr(n_expr * three_v).reshape(n_expr, three_v)
        refl_basis = arr(n_refl * three_v).reshape(n_refl, three_v)
        shape_sigma = arr(n_shape)
        expr_sigma = arr(n_expr)
        refl_sigma = arr(n_refl)
        n_tri = 2 * (rows - 1) * (cols - 1)
        triangles = read_f32_array(f, n_tri * 3).astype(np.int32).reshape(n_tri, 3)
        if triangles.min() < 0 or triangles.max() >= n_vertices:
            raise DimensionMismatch("triangle indices out of range")
    return FaceModel(
        spec=spec,
        mean_geometry=mean_geometry,
        mean_reflectance=mean_reflectance,
        shape_basis=shape_basis,
        expr_basis=expr_basis,
        refl_basis=refl_basis,
        shape_sigma=shape_sigma,
        expr_sigma=expr_sigma,
        refl_sigma=refl_sigma,
        triangles=triangles,
    )
