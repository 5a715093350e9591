import numpy as np
import pytest

from inverseface.facemodel import ParameterVector
from inverseface.renderer import CameraSpec, ProjectionError, project, render


def white_dc(theta, value=0.9):
    theta.illumination[0] = (value, value, value)
    return theta


def test_camera_invariants():
    with pytest.raises(ValueError):
        CameraSpec(64, 128).validate()
    with pytest.raises(ValueError):
        CameraSpec(64, 64, vertical_fov_deg=120.0).validate()
    with pytest.raises(ValueError):
        CameraSpec(64, 64, face_distance_mm=-1.0).validate()


def test_project_optical_axis():
    cam = CameraSpec(128, 128, 30.0, 600.0)
    uv, depth = project(cam, np.array([0.0, 0.0, -600.0]))
    assert uv[0] == pytest.approx(64.0, abs=0)
    assert uv[1] == pytest.approx(64.0, abs=0)
    assert depth == pytest.approx(600.0, abs=0)


def test_project_right_edge():
    # f = 64/tan(15 deg) = 238.8513...; x = 160.77 then puts u on the right
    # image border: 64 + f*160.77/600 = 128.0005.
    cam = CameraSpec(128, 128, 30.0, 600.0)
    f = 64.0 / np.tan(np.deg2rad(15.0))
    assert f == pytest.approx(238.8513, abs=5e-4)
    uv, _ = project(cam, np.array([160.77, 0.0, -600.0]))
    assert uv[0] == pytest.approx(128.0, abs=0.05)


def test_project_halving_with_distance():
    cam = CameraSpec(128, 128, 30.0, 600.0)
    uv1, _ = project(cam, np.array([50.0, 20.0, -600.0]))
    uv2, _ = project(cam, np.array([50.0, 20.0, -1200.0]))
    offset1 = uv1 - 64.0
    offset2 = uv2 - 64.0
    assert np.allclose(offset2, offset1 / 2.0, atol=1e-12)


def test_project_rejects_behind_camera():
    cam = CameraSpec(64, 64)
    with pytest.raises(ProjectionError):
        project(cam, np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ProjectionError):
        project(cam, np.array([[0.0, 0.0, -5.0], [0.0, 0.0, 0.0]]))


def test_render_deterministic(tiny_model, tiny_camera, tiny_spec):
    theta = white_dc(ParameterVector.zeros(tiny_spec))
    theta.rotation[:] = (0.1, -0.3, 0.05)
    a = render(tiny_model, tiny_camera, theta)
    b = render(tiny_model, tiny_camera, theta)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.mask, b.mask)
    assert np.array_equal(a.depth, b.depth)


def test_render_frontal_mask_symmetric(tiny_model, tiny_camera, tiny_spec,
                                       mask_interior):
    sample = render(tiny_model, tiny_camera,
                    white_dc(ParameterVector.zeros(tiny_spec)))
    mask = sample.mask
    assert mask.any()
    flipped = mask[:, ::-1]
    disagree = mask ^ flipped
    # Any disagreement must sit on the mask boundary (within one pixel).
    assert not (disagree & mask_interior(mask)).any()
    assert not (disagree & mask_interior(flipped)).any()


def test_render_yaw_mirror(tiny_model, tiny_camera, tiny_spec, mask_interior):
    pos = white_dc(ParameterVector.zeros(tiny_spec))
    pos.rotation[1] = np.deg2rad(40.0)
    neg = white_dc(ParameterVector.zeros(tiny_spec))
    neg.rotation[1] = -np.deg2rad(40.0)
    mask_pos = render(tiny_model, tiny_camera, pos).mask
    mask_neg = render(tiny_model, tiny_camera, neg).mask[:, ::-1]
    disagree = mask_pos ^ mask_neg
    assert not (disagree & mask_interior(mask_pos)).any()
    assert not (disagree & mask_interior(mask_neg)).any()


def test_masked_out_pixels_exactly_black(tiny_model, tiny_camera, tiny_spec):
    theta = white_dc(ParameterVector.zeros(tiny_spec))
    theta.rotation[:] = (0.2, 0.4, -0.1)
    sample = render(tiny_model, tiny_camera, theta)
    assert (sample.image[~sample.mask] == 0).all()


def test_depth_buffer_bounds(tiny_model, tiny_camera, tiny_spec):
    from inverseface.facemodel import evaluate_geometry, rotation_matrix

    theta = white_dc(ParameterVector.zeros(tiny_spec))
    theta.rotation[:] = (0.1, 0.5, 0.0)
    sample = render(tiny_model, tiny_camera, theta)
    verts = evaluate_geometry(tiny_model, theta).reshape(-1, 3)
    centroid = tiny_model.mean_geometry.reshape(-1, 3).mean(axis=0)
    cam = (verts - centroid) @ rotation_matrix(*theta.rotation).T
    depths = -(cam[:, 2] - tiny_camera.face_distance_mm)
    inside = sample.depth[sample.mask]
    assert inside.min() >= depths.min() - 1e-3
    assert inside.max() <= depths.max() + 1e-3


def test_render_empty_when_facing_away(tiny_model, tiny_camera, tiny_spec):
    theta = white_dc(ParameterVector.zeros(tiny_spec))
    theta.rotation[1] = np.pi  # face turned fully away; everything culled
    sample = render(tiny_model, tiny_camera, theta)
    assert not sample.mask.any()
    assert (sample.image == 0).all()


def test_render_shading_uses_reflectance(tiny_model, tiny_camera, tiny_spec):
    theta = white_dc(ParameterVector.zeros(tiny_spec))
    sample = render(tiny_model, tiny_camera, theta)
    pixels = sample.image[sample.mask].astype(float)
    # Mean reflectance is reddish, so channel order must survive shading.
    assert pixels[:, 0].mean() > pixels[:, 1].mean() > pixels[:, 2].mean()


def test_round_trip_bit_exact(tiny_model, tiny_camera, tiny_shard):
    for i in range(tiny_shard.count):
        theta = ParameterVector.from_flat(
            tiny_model.spec, tiny_shard.params[i].astype(np.float64))
        again = render(tiny_model, tiny_camera, theta)
        assert np.array_equal(again.image, tiny_shard.images[i])
        assert np.array_equal(again.mask, tiny_shard.masks[i])
