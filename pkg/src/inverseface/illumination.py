"""Second-order real spherical harmonics and Lambertian irradiance.

Coefficients are 9 RGB triples in linear radiance units and are interpreted
as already cosine-convolved irradiance coefficients, so irradiance at a unit
normal is a plain 9-term dot product per color channel, clamped at zero.
"""

from __future__ import annotations

import numpy as np

# Real SH constants, bands 0..2, in the order
# (1, y, z, x, xy, yz, 3z^2-1, xz, x^2-y^2).
_C0 = 0.282095
_C1 = 0.488603
_C2 = 1.092548
_C3 = 0.315392
_C4 = 0.546274

_UNIT_TOL = 1e-6


def sh_basis(normal: np.ndarray) -> np.ndarray:
    """Evaluate the 9 SH basis functions at unit normal(s).

    Accepts shape (3,) or (N, 3); returns (9,) or (N, 9).  Raises ValueError
    if any input is not unit length within 1e-6.
    """
    n = np.asarray(normal, dtype=np.float64)
    single = n.ndim == 1
    n = np.atleast_2d(n)
    if n.shape[-1] != 3:
        raise ValueError("normals must have 3 components")
    norms = np.linalg.norm(n, axis=-1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        worst = float(np.abs(norms - 1.0).max())
        raise ValueError(f"normal not unit length (|n|-1 = {worst:.3g})")
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    basis = np.stack([
        np.full_like(x, _C0),
        _C1 * y,
        _C1 * z,
        _C1 * x,
        _C2 * x * y,
        _C2 * y * z,
        _C3 * (3.0 * z * z - 1.0),
        _C2 * x * z,
        _C4 * (x * x - y * y),
    ], axis=-1)
    return basis[0] if single else basis


def validate_coefficients(coeffs: np.ndarray) -> np.ndarray:
    arr = np.asarray(coeffs, dtype=np.float64)
    if arr.size != 27:
        raise ValueError(f"expected 27 illumination scalars, got {arr.size}")
    if not np.isfinite(arr).all():
        raise ValueError("illumination coefficients must be finite")
    return arr.reshape(9, 3)


def irradiance(coeffs: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """RGB irradiance at unit normal(s): per channel the SH coefficients
    dotted with the basis, clamped to >= 0.

    coeffs is (9, 3) (or anything reshapable to it); normal as in sh_basis.
    Returns (3,) for a single normal, (N, 3) for a batch.
    """
    arr = validate_coefficients(coeffs)
    basis = sh_basis(normal)
    return np.clip(basis @ arr, 0.0, None)
