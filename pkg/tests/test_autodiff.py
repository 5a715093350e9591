import numpy as np
import pytest

from inverseface import autodiff as ad


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def test_affine_gradients():
    rng = np.random.default_rng(0)
    x = ad.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    w = ad.parameter(rng.standard_normal((3, 2)))
    b = ad.parameter(rng.standard_normal(2))
    seed = rng.standard_normal((4, 2))

    out = ad.affine(x, w, b)
    out.backward(seed)

    def scalar():
        return float((ad.affine(x, w, b).data * seed).sum())

    for t in (x, w, b):
        assert np.allclose(t.grad, numeric_grad(scalar, t.data), atol=1e-7)


def test_relu_forward_and_gradient():
    x = ad.Tensor(np.array([-2.0, -0.5, 0.5, 3.0]), requires_grad=True)
    out = ad.relu(x)
    assert np.array_equal(out.data, [0.0, 0.0, 0.5, 3.0])
    out.backward(np.ones(4))
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0, 1.0])


def test_reshape_round_trip_gradient():
    rng = np.random.default_rng(1)
    x = ad.Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    out = ad.reshape(x, (6, 4))
    seed = rng.standard_normal((6, 4))
    out.backward(seed)
    assert np.array_equal(x.grad, seed.reshape(2, 3, 4))


def conv_reference(x, w, b, stride):
    bsz, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho = (h - k) // stride + 1
    wo = (wd - k) // stride + 1
    out = np.zeros((bsz, o, ho, wo))
    for bi in range(bsz):
        for oi in range(o):
            for y in range(ho):
                for xx in range(wo):
                    patch = x[bi, :, y * stride:y * stride + k,
                              xx * stride:xx * stride + k]
                    out[bi, oi, y, xx] = (patch * w[oi]).sum() + b[oi]
    return out


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_forward_matches_reference(stride):
    rng = np.random.default_rng(stride)
    x = ad.Tensor(rng.standard_normal((2, 3, 9, 9)))
    w = ad.parameter(rng.standard_normal((4, 3, 3, 3)))
    b = ad.parameter(rng.standard_normal(4))
    out = ad.conv2d(x, w, b, stride)
    ref = conv_reference(x.data, w.data, b.data, stride)
    assert out.data.shape == ref.shape
    assert np.allclose(out.data, ref, atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradients(stride):
    rng = np.random.default_rng(10 + stride)
    x = ad.Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
    w = ad.parameter(rng.standard_normal((3, 2, 3, 3)))
    b = ad.parameter(rng.standard_normal(3))
    out = ad.conv2d(x, w, b, stride)
    seed = rng.standard_normal(out.data.shape)
    out.backward(seed)

    def scalar():
        return float((ad.conv2d(x, w, b, stride).data * seed).sum())

    for t in (x, w, b):
        assert np.allclose(t.grad, numeric_grad(scalar, t.data), atol=1e-6)


def test_gradient_accumulates_over_reuse():
    x = ad.parameter(np.array([[1.0, 2.0]]))
    w = ad.parameter(np.array([[1.0], [1.0]]))
    b = ad.parameter(np.zeros(1))
    first = ad.affine(x, w, b)
    second = ad.affine(x, w, b)
    # Sum both heads by seeding each; shared parents accumulate.
    first.backward(np.ones((1, 1)))
    second.backward(np.ones((1, 1)))
    # d/dw of each head is x.T @ seed = [[1], [2]]; two heads double it.
    assert np.array_equal(w.grad, np.array([[2.0], [4.0]]))


def test_backward_seed_shape_checked():
    x = ad.parameter(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        x.backward(np.zeros(3))


def test_conv_rejects_channel_mismatch():
    x = ad.Tensor(np.zeros((1, 3, 8, 8)))
    w = ad.parameter(np.zeros((4, 2, 3, 3)))
    b = ad.parameter(np.zeros(4))
    with pytest.raises(ValueError):
        ad.conv2d(x, w, b, 1)
