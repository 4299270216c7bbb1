import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interdyad.alignment import (
    AlignmentBatch,
    TrainingError,
    alignment_grad,
    alignment_loss,
    build_meta_queries,
    connector_forward,
    init_params,
    linear_task,
    max_relative_error,
    random_instance,
    train_connector,
    zero_params,
)


def fd_grad(params, batch, eps=1e-5):
    """Central differences of the loss, kept separate from the package helper."""
    grads = {}
    for name, arr in params.arrays().items():
        flat = arr.reshape(-1)
        g = np.empty_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = alignment_loss(batch.target, connector_forward(params, batch.hidden))
            flat[i] = keep - eps
            down = alignment_loss(batch.target, connector_forward(params, batch.hidden))
            flat[i] = keep
            g[i] = (up - down) / (2 * eps)
        grads[name] = g.reshape(arr.shape)
    return grads


# --- meta queries ------------------------------------------------------------------


def test_meta_queries_deterministic():
    a, b = build_meta_queries(5, 64, seed=1), build_meta_queries(5, 64, seed=1)
    assert np.array_equal(a.queries, b.queries)
    assert a.queries.shape == (5, 64)


def test_meta_query_mean():
    q = build_meta_queries(1000, 1000, seed=3).queries
    assert abs(q.mean()) < 3 * 0.02 / np.sqrt(q.size)
    assert q.std() == pytest.approx(0.02, rel=0.01)


def test_meta_queries_match_crop():
    q = build_meta_queries(12, 8, seed=0)
    q.check_crop(12)
    with pytest.raises(ValueError):
        q.check_crop(13)
    states = np.arange(20 * 8.0).reshape(20, 8)
    assert np.array_equal(q.slice_states(states), states[8:])


# --- forward ----------------------------------------------------------------------


def test_zero_network_outputs_bias():
    p = zero_params(6, 3)
    p.lin_b = np.array([1.0, -2.0, 0.5])
    out = connector_forward(p, np.random.default_rng(0).normal(size=(7, 6)))
    assert np.array_equal(out, np.broadcast_to(p.lin_b, (7, 3)))


def test_single_frame():
    p = init_params(4, 2, seed=1)
    x = np.random.default_rng(1).normal(size=(1, 4))
    out = connector_forward(p, x)
    # one token attends only to itself
    h1 = np.tanh(x @ p.conv_w[1] + p.conv_b)
    expected = (h1 + (h1 @ p.wv) @ p.wo) @ p.lin_w + p.lin_b
    assert np.allclose(out, expected, atol=1e-12)


def test_independent_sequences_permute():
    p = init_params(5, 3, seed=2)
    rng = np.random.default_rng(2)
    seqs = [rng.normal(size=(6, 5)), rng.normal(size=(6, 5))]
    outs = [connector_forward(p, s) for s in seqs]
    swapped = [connector_forward(p, s) for s in seqs[::-1]]
    assert np.array_equal(outs[0], swapped[1]) and np.array_equal(outs[1], swapped[0])


def test_forward_shape_errors():
    p = init_params(4, 2)
    with pytest.raises(ValueError):
        connector_forward(p, np.zeros((3, 5)))
    with pytest.raises(ValueError):
        connector_forward(p, np.zeros((0, 4)))


def test_conv_is_same_padded():
    p = zero_params(1, 1)
    p.conv_w[:, 0, 0] = [1.0, 2.0, 3.0]  # offsets -1, 0, +1
    p.lin_w[0, 0] = 1.0
    x = np.array([[0.1], [0.2], [0.3]])
    expected = np.tanh(np.array([2 * 0.1 + 3 * 0.2, 0.1 + 2 * 0.2 + 3 * 0.3, 0.2 + 2 * 0.3]))
    # attention output is zero because wv = 0
    assert np.allclose(connector_forward(p, x)[:, 0], expected, atol=1e-15)


# --- loss -------------------------------------------------------------------------


def test_loss_examples():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(5, 3))
    assert alignment_loss(m, m) == 0.0
    assert alignment_loss(m, m + 0.7) == pytest.approx(0.49, abs=1e-12)
    assert alignment_loss(np.array([[0.0], [0.0]]), np.array([[0.0], [1.0]])) == pytest.approx(1.5, abs=1e-12)


def test_loss_single_frame_has_no_temporal_term():
    assert alignment_loss(np.array([[1.0, 2.0]]), np.array([[2.0, 2.0]])) == 0.5


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        alignment_loss(np.zeros((3, 2)), np.zeros((3, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 10), st.integers(1, 5))
def test_loss_time_reversal(seed, n, dm):
    rng = np.random.default_rng(seed)
    m, mh = rng.normal(size=(2, n, dm))
    assert alignment_loss(m, mh) == pytest.approx(alignment_loss(m[::-1], mh[::-1]), rel=1e-12, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 10), st.integers(1, 5))
def test_temporal_term_ignores_constant_offset(seed, n, dm):
    rng = np.random.default_rng(seed)
    m, mh = rng.normal(size=(2, n, dm))
    c = rng.normal(size=dm)
    temporal = lambda a, b: alignment_loss(a, b) - np.mean((a - b) ** 2)
    assert temporal(m, mh) == pytest.approx(temporal(m, mh + c), abs=1e-12)


# --- gradients -------------------------------------------------------------------


def test_gradient_zero_at_optimum():
    p = zero_params(4, 2)
    p.lin_b = np.array([0.3, -0.1])
    batch = AlignmentBatch(np.random.default_rng(0).normal(size=(5, 4)), np.tile(p.lin_b, (5, 1)))
    g = alignment_grad(p, batch)
    for arr in g.arrays().values():
        assert np.all(arr == 0)


@pytest.mark.parametrize("seed", range(12))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    n, d, dm = int(rng.integers(1, 9)), int(rng.integers(1, 17)), int(rng.integers(1, 9))
    params, batch = random_instance(rng, n, d, dm, kernel=int(rng.choice([1, 3, 5])))
    analytic = alignment_grad(params, batch).arrays()
    numeric = fd_grad(params, batch)
    for name in analytic:
        a, b = analytic[name], numeric[name]
        rel = np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
        assert rel < 1e-5, name


def test_lin_gradient_linear_in_residual():
    rng = np.random.default_rng(7)
    p = init_params(4, 3, seed=7)
    x = rng.normal(size=(6, 4))
    out = connector_forward(p, x)
    r = rng.normal(size=out.shape)
    g1 = alignment_grad(p, AlignmentBatch(x, out - r))
    g2 = alignment_grad(p, AlignmentBatch(x, out - 2 * r))
    assert np.allclose(g2.lin_w, 2 * g1.lin_w, atol=1e-14)
    assert np.allclose(g2.lin_b, 2 * g1.lin_b, atol=1e-14)


def test_max_relative_error_self_is_zero():
    p = init_params(3, 2)
    assert max_relative_error(p, p) == 0.0


# --- training ---------------------------------------------------------------------


def test_linear_task_trains():
    result = train_connector(linear_task(0), steps=2000, lr=1e-2, seed=0)
    assert len(result.losses) == 2001
    assert result.losses[-1] < 0.01 * result.losses[0]


def test_zero_lr_keeps_params():
    init = init_params(16, 4, seed=3)
    result = train_connector(linear_task(1), steps=5, lr=0.0, params=init)
    for name, arr in init.arrays().items():
        assert np.array_equal(arr, result.params.arrays()[name])
    assert len(set(result.losses)) == 1


def test_dataset_order_does_not_matter():
    ds = linear_task(2)
    a = train_connector(ds, steps=20, lr=1e-2, seed=4)
    b = train_connector(ds[::-1], steps=20, lr=1e-2, seed=4)
    assert a.losses == b.losses


def test_training_is_deterministic():
    ds = linear_task(3)
    assert train_connector(ds, 10, 1e-2, seed=1).losses == train_connector(ds, 10, 1e-2, seed=1).losses


def test_divergence_raises():
    ds = [AlignmentBatch(np.full((4, 2), 1e200), np.full((4, 1), 1e200))]
    with pytest.raises(TrainingError):
        train_connector(ds, 3, 1.0)


def test_empty_dataset():
    with pytest.raises(ValueError):
        train_connector([], 1, 0.1)
