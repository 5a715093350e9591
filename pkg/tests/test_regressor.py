import numpy as np
import pytest

from inverseface.facemodel import DimensionMismatch
from inverseface.regressor import (
    LossWeights,
    NetworkSpec,
    _forward_graph,
    _wrap_params,
    adadelta_step,
    clone_state,
    forward,
    identity_diagonal,
    init_state,
    load_state,
    model_space_loss,
    normalize_input,
    save_state,
    train,
    write_trace,
)

TINY = NetworkSpec(n_outputs=5, input_resolution=8,
                   conv_layers=((4, 3, 1), (8, 3, 2)), fc_hidden=16)


def test_network_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec(n_outputs=0).validate()
    with pytest.raises(ValueError):
        # conv stack eats the whole input
        NetworkSpec(n_outputs=5, input_resolution=8,
                    conv_layers=((4, 9, 1),)).validate()


def test_normalize_input_endpoints():
    img = np.zeros((8, 8, 3), dtype=np.uint8)
    img[0, 0] = 255
    img[0, 1] = 128
    out = normalize_input(img, 8)
    assert out.shape == (3, 8, 8)
    assert out[0, 0, 0] == pytest.approx(0.5, abs=0)
    assert out[0, 0, 1] == pytest.approx(128 / 255 - 0.5, abs=1e-7)
    assert out[0, 7, 7] == pytest.approx(-0.5, abs=0)


def test_normalize_input_area_resample():
    # 2x2 blocks average exactly on an integer downscale.
    img = np.zeros((8, 8, 3), dtype=np.uint8)
    img[0, 0] = 100
    img[0, 1] = 200
    img[1, 0] = 40
    img[1, 1] = 60
    out = normalize_input(img, 4)
    assert out[0, 0, 0] == pytest.approx(100 / 255 - 0.5, abs=1e-6)
    assert out[0, 1, 1] == pytest.approx(-0.5, abs=0)


def test_normalize_input_rejects_bad_shape():
    with pytest.raises(DimensionMismatch):
        normalize_input(np.zeros((8, 8), dtype=np.uint8), 8)


def test_forward_zeroed_final_layer_outputs_zero():
    state = init_state(TINY, seed=0)
    state.params[-2][:] = 0.0
    state.params[-1][:] = 0.0
    batch = np.random.default_rng(0).standard_normal((3, 3, 8, 8)).astype(np.float32)
    out = forward(state, batch)
    assert np.array_equal(out, np.zeros((3, 5), dtype=np.float32))


def test_forward_identical_rows_for_identical_images():
    state = init_state(TINY, seed=1)
    rng = np.random.default_rng(2)
    one = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
    batch = np.repeat(one, 4, axis=0)
    out = forward(state, batch)
    for i in range(1, 4):
        assert np.array_equal(out[i], out[0])


def test_forward_deterministic():
    state = init_state(TINY, seed=1)
    batch = np.random.default_rng(3).standard_normal((2, 3, 8, 8)).astype(np.float32)
    assert np.array_equal(forward(state, batch), forward(state, batch))


def test_forward_shape_mismatch():
    state = init_state(TINY, seed=1)
    with pytest.raises(DimensionMismatch):
        forward(state, np.zeros((2, 3, 9, 9), dtype=np.float32))


def test_final_layer_init_statistics():
    spec = NetworkSpec(n_outputs=400, input_resolution=8,
                       conv_layers=((4, 3, 1),), fc_hidden=512)
    state = init_state(spec, seed=5)
    final_w = state.params[-2]
    final_b = state.params[-1]
    assert (final_b == 0).all()
    assert abs(final_w.std() - 0.01) < 0.001
    assert abs(final_w.mean()) < 0.001


def test_loss_zero_at_truth():
    p = np.array([[1.0, 2.0, 3.0]])
    loss, grad = model_space_loss(p, p.copy(), np.ones(3))
    assert loss == 0.0
    assert (grad == 0).all()


def test_loss_rotation_weighting():
    diag = LossWeightsStub(400.0, 3)
    delta = 0.01
    p = np.zeros((1, 3))
    t = np.zeros((1, 3))
    p[0, 0] = delta
    loss, grad = model_space_loss(p, t, diag)
    assert loss == pytest.approx((400 * delta) ** 2, rel=1e-12)
    assert grad[0, 0] == pytest.approx(2 * 400 ** 2 * delta, rel=1e-12)


def LossWeightsStub(value, n):
    return np.full(n, value)


def test_loss_shape_mode_weighting(desk_model, desk_diag):
    spec = desk_model.spec
    delta = 0.2
    losses = []
    for i in range(spec.n_shape):
        p = np.zeros(spec.m)
        p[3 + i] = delta
        loss, _ = model_space_loss(p, np.zeros(spec.m), desk_diag)
        expected = (50.0 * desk_model.shape_sigma[i] * delta) ** 2
        assert loss == pytest.approx(expected, rel=1e-9)
        losses.append(loss)
    assert all(a > b for a, b in zip(losses, losses[1:]))  # strictly decreasing


def test_loss_group_permutation_invariance(desk_model, desk_diag):
    rng = np.random.default_rng(4)
    spec = desk_model.spec
    p = rng.standard_normal(spec.m)
    t = rng.standard_normal(spec.m)
    base, _ = model_space_loss(p, t, desk_diag)
    # Permute the shape group together with its diagonal weights.
    perm = rng.permutation(spec.n_shape) + 3
    idx = np.arange(spec.m)
    idx[3:3 + spec.n_shape] = perm
    permuted, _ = model_space_loss(p[idx], t[idx], desk_diag[idx])
    assert permuted == pytest.approx(base, rel=1e-12)


def test_loss_gradient_finite_difference():
    rng = np.random.default_rng(5)
    p = rng.standard_normal((4, 7))
    t = rng.standard_normal((4, 7))
    diag = rng.uniform(0.5, 3.0, 7)
    _, grad = model_space_loss(p, t, diag)
    h = 1e-6
    for i in range(4):
        for j in range(7):
            orig = p[i, j]
            p[i, j] = orig + h
            lp, _ = model_space_loss(p, t, diag)
            p[i, j] = orig - h
            lm, _ = model_space_loss(p, t, diag)
            p[i, j] = orig
            numeric = (lp - lm) / (2 * h)
            assert grad[i, j] == pytest.approx(numeric, rel=1e-6)


def test_loss_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        model_space_loss(np.zeros((1, 3)), np.zeros((1, 4)), np.ones(3))


def test_loss_diagonal_layout(desk_model):
    diag = LossWeights().diagonal(desk_model)
    spec = desk_model.spec
    assert diag.size == spec.m
    assert (diag[:3] == 400.0).all()
    assert diag[3] == pytest.approx(50.0 * desk_model.shape_sigma[0])
    assert (diag[-27:] == 20.0).all()
    assert (identity_diagonal(spec.m) == 1.0).all()


def test_adadelta_zero_gradient_no_motion():
    state = init_state(TINY, seed=2)
    before = [p.copy() for p in state.params]
    adadelta_step(state, [np.zeros_like(p) for p in state.params], decay=0.0)
    for b, p in zip(before, state.params):
        assert np.array_equal(b, p)


def test_adadelta_deterministic():
    a = init_state(TINY, seed=3)
    b = init_state(TINY, seed=3)
    grads = [np.full_like(p, 0.5) for p in a.params]
    adadelta_step(a, grads)
    adadelta_step(b, [g.copy() for g in grads])
    for pa, pb in zip(a.params, b.params):
        assert np.array_equal(pa, pb)
    for ua, ub in zip(a.acc_update, b.acc_update):
        assert np.array_equal(ua, ub)


def test_adadelta_toy_quadratic_descent():
    # Minimize w^2 from w=1 using the optimizer itself as the oracle.
    spec = NetworkSpec(n_outputs=1, input_resolution=8,
                       conv_layers=((1, 3, 2),), fc_hidden=1)
    state = init_state(spec, seed=0)
    state.params = [np.array([1.0], dtype=np.float32)]
    state.acc_grad = [np.zeros(1, dtype=np.float32)]
    state.acc_update = [np.zeros(1, dtype=np.float32)]
    values = [1.0]
    for _ in range(100):
        grad = [2.0 * state.params[0]]
        adadelta_step(state, grad, lr=0.01, decay=0.0)
        values.append(abs(float(state.params[0][0])))
    assert all(a > b for a, b in zip(values, values[1:]))


def test_adadelta_rejects_non_finite():
    state = init_state(TINY, seed=2)
    grads = [np.zeros_like(p) for p in state.params]
    grads[0].reshape(-1)[0] = np.nan
    with pytest.raises(FloatingPointError):
        adadelta_step(state, grads)


def test_train_zero_iterations_is_identity(tiny_shard_net):
    state, shard, diag = tiny_shard_net
    before = [p.copy() for p in state.params]
    state, trace = train(state, shard, diag, iterations=0)
    assert trace == []
    for b, p in zip(before, state.params):
        assert np.array_equal(b, p)


def test_train_deterministic_trace(tiny_shard_net):
    state, shard, diag = tiny_shard_net
    _, trace_a = train(clone_state(state), shard, diag, iterations=30,
                       batch_size=4, shuffle_seed=9, trace_every=10)
    _, trace_b = train(clone_state(state), shard, diag, iterations=30,
                       batch_size=4, shuffle_seed=9, trace_every=10)
    assert trace_a == trace_b
    assert len(trace_a) == 3


def test_train_rejects_mismatched_shard(tiny_shard_net):
    state, shard, diag = tiny_shard_net
    import dataclasses

    bad_spec = dataclasses.replace(state.spec, n_outputs=state.spec.n_outputs + 1)
    bad = init_state(bad_spec, seed=0)
    with pytest.raises(DimensionMismatch):
        train(bad, shard, np.ones(bad_spec.n_outputs), iterations=1)


@pytest.fixture
def tiny_shard_net(tiny_model, tiny_shard):
    spec = NetworkSpec(n_outputs=tiny_model.spec.m, input_resolution=32,
                       conv_layers=((4, 3, 2), (8, 3, 2)), fc_hidden=16)
    state = init_state(spec, seed=7)
    diag = LossWeights().diagonal(tiny_model)
    return state, tiny_shard, diag


def test_state_round_trip(tmp_path, tiny_shard_net):
    state, shard, diag = tiny_shard_net
    state, _ = train(state, shard, diag, iterations=5, batch_size=4)
    path = tmp_path / "net.ifnw"
    save_state(state, path)
    loaded = load_state(path)
    assert loaded.spec == state.spec
    assert loaded.iteration == state.iteration
    for a, b in zip(loaded.params, state.params):
        assert np.array_equal(a, b)
    for a, b in zip(loaded.acc_update, state.acc_update):
        assert np.array_equal(a, b)
    again = tmp_path / "again.ifnw"
    save_state(loaded, again)
    assert path.read_bytes() == again.read_bytes()


def test_trace_csv(tmp_path):
    path = tmp_path / "trace.csv"
    write_trace([(100, 12.5), (200, 6.25)], path)
    text = path.read_text().splitlines()
    assert text[0] == "iteration,loss"
    assert text[1] == "100,12.5"


def test_training_progress_desk(train_shard, desk_model, desk_diag,
                                desk_training_setup):
    # 2000 iterations on the 20k-record desk corpus must at least halve the
    # running training loss.
    state = desk_training_setup()
    state, trace = train(state, train_shard, desk_diag, iterations=2000,
                         batch_size=32, lr=desk_lr(), shuffle_seed=17)
    first = trace[0][1]
    last = trace[-1][1]
    assert last < 0.5 * first, f"loss {first:.4g} -> {last:.4g}"
