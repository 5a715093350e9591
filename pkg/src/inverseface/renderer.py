"""Perspective software rasterizer with Lambertian SH shading.

Camera sits at the origin looking along -z (right-handed, y up).  The posed
face is rasterized with a z-buffer; coverage is pixel-center-in-triangle with
the top-left fill rule, so renders are bit-exact across runs.  Pixels outside
the face mask are exactly black.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .facemodel import (
    DimensionMismatch,
    FaceModel,
    ParameterVector,
    evaluate_geometry,
    evaluate_reflectance,
    rotation_matrix,
)
from .illumination import sh_basis, validate_coefficients


class ProjectionError(ValueError):
    """A point lies at or behind the camera plane."""


@dataclass(frozen=True)
class CameraSpec:
    """Square-image perspective camera; the face centroid is placed on the
    optical axis at face_distance_mm."""

    image_width: int = 128
    image_height: int = 128
    vertical_fov_deg: float = 30.0
    face_distance_mm: float = 600.0

    def validate(self) -> None:
        if self.image_width != self.image_height:
            raise ValueError("images must be square")
        if self.image_width < 8:
            raise ValueError("image too small")
        if not 5.0 < self.vertical_fov_deg < 90.0:
            raise ValueError("vertical fov must be in (5, 90) degrees")
        if self.face_distance_mm <= 0:
            raise ValueError("face distance must be positive")

    @property
    def focal_px(self) -> float:
        half_fov = np.deg2rad(self.vertical_fov_deg) / 2.0
        return (self.image_height / 2.0) / np.tan(half_fov)


@dataclass
class RenderedSample:
    """RGB render plus coverage mask, depth buffer and the generating
    parameters.  Background pixels are (0,0,0); depth is +inf off-mask."""

    image: np.ndarray   # (H, W, 3) uint8
    mask: np.ndarray    # (H, W) bool
    depth: np.ndarray   # (H, W) float32, mm
    params: ParameterVector


def project(camera: CameraSpec, points: np.ndarray):
    """Perspective-project camera-space point(s) with z < 0.

    Returns (uv, depth): pixel coordinates (u right, v down, origin at the
    top-left image corner) and positive depth -z in mm.  Accepts (3,) or
    (N, 3).
    """
    camera.validate()
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != 3:
        raise ValueError("points must have 3 components")
    z = p[:, 2]
    if np.any(z >= 0.0):
        raise ProjectionError("point at or behind the camera plane (z >= 0)")
    depth = -z
    f = camera.focal_px
    u = camera.image_width / 2.0 + f * p[:, 0] / depth
    v = camera.image_height / 2.0 - f * p[:, 1] / depth
    uv = np.stack([u, v], axis=-1)
    if single:
        return uv[0], float(depth[0])
    return uv, depth


def _vertex_normals(verts: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted smooth vertex normals of the unposed mesh."""
    a = verts[triangles[:, 0]]
    fn = np.cross(verts[triangles[:, 1]] - a, verts[triangles[:, 2]] - a)
    vn = np.zeros_like(verts)
    for k in range(3):
        np.add.at(vn, triangles[:, k], fn)
    norms = np.linalg.norm(vn, axis=1)
    degenerate = norms < 1e-12
    vn[degenerate] = (0.0, 0.0, 1.0)
    norms[degenerate] = 1.0
    return vn / norms[:, None]


def _rasterize(uv: np.ndarray, depth: np.ndarray, triangles: np.ndarray,
               width: int, height: int):
    """Z-buffered coverage. Returns (tri_index, bary, zbuf) flat buffers of
    length H*W; tri_index is -1 off-mask.

    Coverage: pixel center strictly inside, or on a top/left edge of the
    (positively oriented) triangle.  Closest depth wins; exact depth ties go
    to the later triangle index.
    """
    v0 = uv[triangles[:, 0]]
    v1 = uv[triangles[:, 1]]
    v2 = uv[triangles[:, 2]]

    # Canonicalize orientation: positive doubled area in y-down pixel coords.
    area2 = ((v1[:, 0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1])
             - (v1[:, 1] - v0[:, 1]) * (v2[:, 0] - v0[:, 0]))
    flip = area2 < 0.0
    v1f = np.where(flip[:, None], v2, v1)
    v2f = np.where(flip[:, None], v1, v2)
    order = np.stack([
        triangles[:, 0],
        np.where(flip, triangles[:, 2], triangles[:, 1]),
        np.where(flip, triangles[:, 1], triangles[:, 2]),
    ], axis=1)
    v1, v2 = v1f, v2f
    area2 = np.abs(area2)

    def empty():
        return (np.full(height * width, -1, dtype=np.int64),
                np.zeros((height * width, 3)),
                np.full(height * width, np.inf),
                np.zeros((0, 3), dtype=triangles.dtype))

    keep = area2 > 0.0
    if not np.any(keep):
        return empty()
    v0, v1, v2 = v0[keep], v1[keep], v2[keep]
    order = order[keep]
    area2 = area2[keep]
    tri_depth = depth[order]  # (T, 3) per corner, canonical order

    # Pixel-aligned bounding boxes, clipped to the image.
    xs = np.stack([v0[:, 0], v1[:, 0], v2[:, 0]], axis=1)
    ys = np.stack([v0[:, 1], v1[:, 1], v2[:, 1]], axis=1)
    x0 = np.clip(np.floor(xs.min(axis=1) - 0.5).astype(np.int64), 0, width - 1)
    x1 = np.clip(np.ceil(xs.max(axis=1) - 0.5).astype(np.int64), 0, width - 1)
    y0 = np.clip(np.floor(ys.min(axis=1) - 0.5).astype(np.int64), 0, height - 1)
    y1 = np.clip(np.ceil(ys.max(axis=1) - 0.5).astype(np.int64), 0, height - 1)
    bw = x1 - x0 + 1
    bh = y1 - y0 + 1
    # Drop triangles whose bbox lies fully outside the frame.
    onframe = (xs.max(axis=1) >= 0) & (xs.min(axis=1) < width) \
        & (ys.max(axis=1) >= 0) & (ys.min(axis=1) < height)
    bw = np.where(onframe, bw, 0)
    counts = bw * np.where(onframe, bh, 0)

    total = int(counts.sum())
    if total == 0:
        return empty()

    tid = np.repeat(np.arange(len(counts)), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    offset = np.arange(total) - np.repeat(starts, counts)
    px = x0[tid] + offset % bw[tid]
    py = y0[tid] + offset // bw[tid]
    cx = px + 0.5
    cy = py + 0.5

    def edge(a, b):
        w = ((b[tid, 0] - a[tid, 0]) * (cy - a[tid, 1])
             - (b[tid, 1] - a[tid, 1]) * (cx - a[tid, 0]))
        dy = b[:, 1] - a[:, 1]
        dx = b[:, 0] - a[:, 0]
        top_left = (dy < 0.0) | ((dy == 0.0) & (dx > 0.0))
        return w, (w > 0.0) | ((w == 0.0) & top_left[tid])

    w0, in0 = edge(v1, v2)
    w1, in1 = edge(v2, v0)
    w2, in2 = edge(v0, v1)
    covered = in0 & in1 & in2
    if not np.any(covered):
        return empty()

    tid = tid[covered]
    pix = py[covered] * width + px[covered]
    bary = np.stack([w0[covered], w1[covered], w2[covered]], axis=1)
    bary /= area2[tid][:, None]
    z = (bary * tri_depth[tid]).sum(axis=1)

    zbuf = np.full(height * width, np.inf)
    np.minimum.at(zbuf, pix, z)
    winner = z == zbuf[pix]
    pixw = pix[winner]

    tri_index = np.full(height * width, -1, dtype=np.int64)
    bary_buf = np.zeros((height * width, 3))
    # Duplicate pixel indices resolve to the last candidate in triangle order.
    tri_index[pixw] = tid[winner]
    bary_buf[pixw] = bary[winner]
    # Map back to canonical corner ordering of surviving triangles.
    return tri_index, bary_buf, zbuf, order


def render(model: FaceModel, camera: CameraSpec,
           params: ParameterVector) -> RenderedSample:
    """Render the posed face: evaluate the model, rotate about the mean-mesh
    centroid, place the centroid at (0, 0, -face_distance), project,
    rasterize, and shade with per-pixel interpolated reflectance/normals."""
    camera.validate()
    params.validate(model.spec)
    width, height = camera.image_width, camera.image_height
    n_vert = model.spec.n_vertices

    verts = evaluate_geometry(model, params).reshape(n_vert, 3)
    refl = evaluate_reflectance(model, params).reshape(n_vert, 3)
    normals = _vertex_normals(verts, model.triangles)

    rot = rotation_matrix(*np.asarray(params.rotation, dtype=np.float64))
    centroid = model.mean_geometry.reshape(n_vert, 3).mean(axis=0)
    cam_verts = (verts - centroid) @ rot.T
    cam_verts[:, 2] -= camera.face_distance_mm
    cam_normals = normals @ rot.T

    uv, depth = project(camera, cam_verts)

    # Back-face culling: triangle geometric normal against the view ray.
    tri = model.triangles
    a = cam_verts[tri[:, 0]]
    face_n = np.cross(cam_verts[tri[:, 1]] - a, cam_verts[tri[:, 2]] - a)
    facing = (face_n * a).sum(axis=1) <= 0.0
    front = tri[facing]

    image = np.zeros((height, width, 3), dtype=np.uint8)
    mask = np.zeros(height * width, dtype=bool)
    zflat = np.full(height * width, np.inf)
    if len(front):
        tri_index, bary, zbuf, order = _rasterize(uv, depth, front, width, height)
        covered = tri_index >= 0
        if np.any(covered):
            corners = order[tri_index[covered]]          # (P, 3) vertex ids
            weights = bary[covered]                      # (P, 3)
            pix_refl = np.einsum("pk,pkc->pc", weights, refl[corners])
            pix_n = np.einsum("pk,pkc->pc", weights, cam_normals[corners])
            pix_n /= np.maximum(np.linalg.norm(pix_n, axis=1, keepdims=True), 1e-12)
            coeffs = validate_coefficients(params.illumination)
            irr = np.clip(sh_basis(pix_n) @ coeffs, 0.0, None)
            color = np.clip(pix_refl * irr, 0.0, 1.0)
            flat_img = image.reshape(-1, 3)
            flat_img[covered] = np.rint(255.0 * color).astype(np.uint8)
            mask = covered
            zflat = zbuf

    return RenderedSample(
        image=image,
        mask=mask.reshape(height, width),
        depth=zflat.reshape(height, width).astype(np.float32),
        params=params,
    )
