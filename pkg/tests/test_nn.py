import struct

import numpy as np
import pytest

from voxstyle import nn
from voxstyle.nn import (
    OptimState,
    ParamStore,
    StoreFormatError,
    StoreShapeError,
    StoreVersionError,
    Tensor,
    adam_step,
    gelu,
    glu,
    grad_check,
    one_cycle_lr,
    softmax,
)
from voxstyle.nn.store import MAGIC, VERSION
from voxstyle.nn.tensor import _make


def test_linear_identity():
    x = Tensor(np.arange(12, dtype=np.float64).reshape(3, 4))
    y = nn.linear(x, Tensor(np.eye(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(y.data, x.data)


def test_conv2d_identity_kernel():
    x = Tensor(np.random.default_rng(0).standard_normal((1, 1, 5, 6)))
    k = Tensor(np.ones((1, 1, 1, 1)))
    y = nn.conv2d(x, k, Tensor(np.zeros(1)), stride=(1, 1), pad=(0, 0))
    np.testing.assert_allclose(y.data, x.data)


def test_gelu_at_zero():
    assert float(gelu(Tensor(np.zeros(1))).data[0]) == 0.0


def test_glu_zero_gate_halves():
    v = np.array([2.0, -4.0, 6.0])
    x = Tensor(np.concatenate([v, np.zeros(3)]))
    np.testing.assert_allclose(glu(x, axis=0).data, 0.5 * v)


def test_glu_odd_dim_rejected():
    with pytest.raises(ValueError):
        glu(Tensor(np.zeros(5)), axis=0)


def test_layer_norm_constant_input_is_zero():
    x = Tensor(np.full((2, 6), 3.7))
    y = nn.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))
    np.testing.assert_allclose(y.data, 0.0, atol=1e-3)


def test_layer_norm_moments():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((16, 32)))
    y = nn.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-6)
    np.testing.assert_allclose(y.std(axis=-1), 1.0, atol=1e-2)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    s = softmax(Tensor(rng.standard_normal((5, 9))), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)


def test_mse_of_identical_is_zero():
    x = Tensor(np.random.default_rng(3).standard_normal((4, 4)))
    assert float(nn.mse_loss(x, Tensor(x.data.copy())).data) == 0.0


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        nn.mse_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_rnn_bidirectional_width():
    rng = np.random.default_rng(4)
    store = ParamStore()
    nn.add_bigru(store, rng, "g", 3, 5)
    nn.add_bilstm(store, rng, "l", 3, 5)
    x = Tensor(rng.standard_normal((6, 3)))
    assert nn.gru_layer(x, store, "g", 5, bidirectional=True).shape == (6, 10)
    out, _ = nn.lstm_layer(x, store, "l", 5, bidirectional=True)
    assert out.shape == (6, 10)


def test_rnn_zero_weights_zero_input():
    store = ParamStore()
    rng = np.random.default_rng(0)
    nn.add_gru(store, rng, "g", 2, 3)
    for name in store.names():
        store[name].data[:] = 0.0
    out = nn.gru_layer(Tensor(np.zeros((4, 2))), store, "g", 3)
    np.testing.assert_allclose(out.data, 0.0)


# -- Adam / schedule ----------------------------------------------------------


def test_adam_quadratic_convergence():
    store = ParamStore()
    w = store.add("w", np.array([5.0]))
    opt = OptimState()
    for _ in range(500):
        store.zero_grad()
        loss = ((w - 3.0) * (w - 3.0)).sum()
        loss.backward()
        adam_step(store, opt, 1e-2)
    assert abs(float(w.data[0]) - 3.0) < 1e-3


def test_adam_zero_grad_leaves_params():
    store = ParamStore()
    w = store.add("w", np.array([1.0, 2.0]))
    w.grad = np.zeros(2)
    adam_step(store, OptimState(), 1e-2)
    np.testing.assert_allclose(w.data, [1.0, 2.0])


def test_one_cycle_boundaries():
    assert one_cycle_lr(0, 1000, 5e-4, warmup_frac=0.3) == 0.0
    assert one_cycle_lr(300, 1000, 5e-4, warmup_frac=0.3) == pytest.approx(5e-4)
    assert one_cycle_lr(1000, 1000, 5e-4, warmup_frac=0.3) == 0.0
    with pytest.raises(ValueError):
        one_cycle_lr(1001, 1000, 5e-4)


# -- grad_check harness -------------------------------------------------------


def test_grad_check_exact_for_linear():
    x = Tensor(np.random.default_rng(5).standard_normal(6))
    err = grad_check(lambda t: (t * 3.0).sum(), [x])
    assert err <= 1e-10


def test_grad_check_composed_net():
    rng = np.random.default_rng(6)
    store = ParamStore()
    nn.add_conv1d(store, rng, "c", 2, 4, 3)
    nn.add_gru(store, rng, "g", 4, 3)
    store6 = store.astype(np.float64)
    x = Tensor(rng.standard_normal((1, 2, 7)))

    def fn(xx):
        h = nn.apply_conv1d(store6, "c", xx, pad=1)
        seq = h.reshape((4, 7)).transpose()
        out = nn.gru_layer(seq, store6, "g", 3)
        return softmax(out, axis=-1).sum()

    assert grad_check(fn, [x]) <= 1e-4


def test_grad_check_catches_corrupted_backward():
    # negative control: an op whose backward returns half the true gradient
    # must be flagged, otherwise the whole suite proves nothing
    def bad_double(t):
        def backward(g):
            t.accumulate(g)  # true gradient is 2g
        return _make(t.data * 2.0, (t,), backward)

    x = Tensor(np.random.default_rng(7).standard_normal(4))
    err = grad_check(lambda t: bad_double(t).sum(), [x])
    assert err > 1e-2


def test_grad_check_rejects_nonscalar():
    x = Tensor(np.zeros(3))
    with pytest.raises(ValueError):
        grad_check(lambda t: t * 1.0, [x])


# -- ParamStore serialization ---------------------------------------------------


def _small_store(seed=0):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    nn.add_linear(store, rng, "lin", 3, 2)
    nn.add_layer_norm(store, "ln", 2)
    return store


def test_store_round_trip_bit_exact():
    store = _small_store()
    blob = store.to_bytes()
    other = _small_store(seed=99)
    other.load_bytes(blob)
    for name in store.names():
        np.testing.assert_array_equal(store[name].data, other[name].data)
    assert other.to_bytes() == blob


def test_store_duplicate_name_rejected():
    store = _small_store()
    with pytest.raises(ValueError):
        store.add("lin.w", np.zeros(1))


def test_store_truncated_blob():
    blob = _small_store().to_bytes()
    with pytest.raises(StoreFormatError):
        ParamStore.parse_bytes(blob[:-3])


def test_store_bad_magic():
    blob = _small_store().to_bytes()
    with pytest.raises(StoreFormatError):
        ParamStore.parse_bytes(b"XXXX" + blob[4:])


def test_store_version_error_names_both_versions():
    blob = MAGIC + struct.pack("<II", VERSION + 1, 0)
    with pytest.raises(StoreVersionError) as exc:
        ParamStore.parse_bytes(blob)
    assert str(VERSION + 1) in str(exc.value)
    assert str(VERSION) in str(exc.value)


def test_store_shape_mismatch():
    blob = _small_store().to_bytes()
    rng = np.random.default_rng(0)
    other = ParamStore()
    nn.add_linear(other, rng, "lin", 4, 2)  # wrong fan-in
    nn.add_layer_norm(other, "ln", 2)
    with pytest.raises(StoreShapeError):
        other.load_bytes(blob)


def test_store_name_mismatch():
    blob = _small_store().to_bytes()
    other = ParamStore()
    nn.add_linear(other, np.random.default_rng(0), "other", 3, 2)
    with pytest.raises(StoreShapeError):
        other.load_bytes(blob)


def test_store_subset_is_live():
    store = _small_store()
    sub = store.subset("lin")
    assert set(sub) == {"lin.w", "lin.b"}
    assert sub["lin.w"] is store["lin.w"]
