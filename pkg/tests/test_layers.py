import math

import mpmath
import numpy as np
import pytest

from quatnet import algebra as A
from quatnet import layers as L
from quatnet import tensor as T
from quatnet.errors import InvalidFan, InvalidRate, KernelLargerThanInput, ShapeMismatch


def _set_weight(layer, q):
    for comp, value in zip((layer.w_r, layer.w_x, layer.w_y, layer.w_z), q):
        comp.data[...] = value


def _quats(qt):
    """[..., 4] array of (r, x, y, z) from a QuaternionTensor."""
    return np.stack(qt.arrays(), axis=-1)


def _random_qt(rng, shape):
    return T.qt_pack(*(rng.normal(size=shape) for _ in range(4)))


# ---------------------------------------------------------------- dense


def test_qdense_identity_weight():
    layer = L.QDense(1, 1)
    _set_weight(layer, (1, 0, 0, 0))
    q = T.qt_pack([[0.3]], [[-1.0]], [[2.0]], [[0.5]])
    np.testing.assert_array_equal(_quats(L.qdense_forward(layer, q)), [[[0.3, -1.0, 2.0, 0.5]]])


def test_qdense_reduces_to_i_times_j():
    layer = L.QDense(1, 1)
    _set_weight(layer, (0, 1, 0, 0))
    q = T.qt_pack([[0.0]], [[0.0]], [[1.0]], [[0.0]])
    np.testing.assert_array_equal(_quats(L.qdense_forward(layer, q)), [[[0, 0, 0, 1]]])


def test_qdense_matches_block_matrix_oracle():
    rng = np.random.default_rng(10)
    layer = L.QDense(3, 2, seed=4)
    layer.bias.data[...] = rng.normal(size=8)
    qt = _random_qt(rng, (5, 3))
    got = _quats(L.qdense_forward(layer, qt))
    w = _quats(layer.weight)
    x = _quats(qt)
    bias = layer.bias.data.reshape(4, 2).T
    for b in range(5):
        for n in range(2):
            want = sum(A.to_matrix(w[n, m]) @ x[b, m] for m in range(3)) + bias[n]
            np.testing.assert_allclose(got[b, n], want, rtol=0, atol=1e-12)


def test_qdense_rejects_wrong_width():
    with pytest.raises(ShapeMismatch):
        L.QDense(2, 2)(T.Tensor(np.zeros((1, 6))))


def test_hamilton_weight_blocks():
    rng = np.random.default_rng(11)
    comps = [T.Tensor(rng.normal(size=(2, 3))) for _ in range(4)]
    big = L.hamilton_weight(*comps).data
    for n in range(2):
        for m in range(3):
            q = [c.data[n, m] for c in comps]
            block = big[n::2, m::3]
            np.testing.assert_array_equal(block, A.to_matrix(q))


# ---------------------------------------------------------------- convolution


def _naive_qconv(w, bias, x, padding):
    """Direct evaluation of S_ab = sum_m sum_c sum_d w[n, m, c, d] ⊗ x[m, a + c, b + d] + bias[n]."""
    (pt, pb), (pl, pr) = padding
    out_q, in_q, kh, kw = w.shape[:4]
    batch, _, h, wd = x.shape[:4]
    xp = np.zeros((batch, in_q, h + pt + pb, wd + pl + pr, 4))
    xp[:, :, pt:pt + h, pl:pl + wd] = x
    ho, wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    out = np.zeros((batch, out_q, ho, wo, 4))
    for b in range(batch):
        for n in range(out_q):
            for a in range(ho):
                for c0 in range(wo):
                    acc = tuple(bias[n])
                    for m in range(in_q):
                        for c in range(kh):
                            for d in range(kw):
                                acc = A.add(acc, A.hamilton(w[n, m, c, d], xp[b, m, a + c, c0 + d]))
                    out[b, n, a, c0] = acc
    return out


def test_qconv_1x1_identity():
    layer = L.QConv2d(1, 1, kernel=(1, 1))
    _set_weight(layer, (1, 0, 0, 0))
    rng = np.random.default_rng(12)
    qt = _random_qt(rng, (2, 1, 4, 5))
    out = L.qconv2d_forward(layer, qt)
    for a, b in zip(out.arrays(), qt.arrays()):
        np.testing.assert_array_equal(a, b)


def test_qconv_1x1_is_pixelwise_dense():
    rng = np.random.default_rng(13)
    conv = L.QConv2d(2, 3, kernel=(1, 1), seed=1)
    conv.bias.data[...] = rng.normal(size=12)
    dense = L.QDense(2, 3)
    for src, dst in zip((conv.w_r, conv.w_x, conv.w_y, conv.w_z), (dense.w_r, dense.w_x, dense.w_y, dense.w_z)):
        dst.data[...] = src.data[:, :, 0, 0]
    dense.bias.data[...] = conv.bias.data
    qt = _random_qt(rng, (2, 2, 3, 4))
    got = _quats(L.qconv2d_forward(conv, qt))
    pixels = T.qt_pack(*(np.moveaxis(a, 1, -1) for a in qt.arrays()))
    want = np.moveaxis(_quats(L.qdense_forward(dense, pixels)), 3, 1)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kernel,maps", [((3, 3), (1, 1)), ((3, 5), (2, 2))])
def test_qconv_matches_nested_loop_oracle(kernel, maps):
    rng = np.random.default_rng(14)
    in_q, out_q = maps
    layer = L.QConv2d(in_q, out_q, kernel=kernel, seed=2)
    layer.bias.data[...] = rng.normal(size=4 * out_q)
    qt = _random_qt(rng, (1, in_q, 5, 5))
    got = _quats(L.qconv2d_forward(layer, qt))
    want = _naive_qconv(_quats(layer.weight), layer.bias.data.reshape(4, out_q).T, _quats(qt), layer.padding)
    assert got.shape == (1, out_q, 5, 5, 4)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_same_padding_preserves_extent():
    layer = L.QConv2d(1, 2, kernel=(3, 5))
    out = layer(T.Tensor(np.zeros((1, 4, 7, 9))))
    assert out.shape == (1, 8, 7, 9)
    real = L.Conv2d(4, 6, kernel=(3, 5))
    assert real(T.Tensor(np.zeros((1, 4, 7, 9)))).shape == (1, 6, 7, 9)


def test_kernel_larger_than_input():
    layer = L.QConv2d(1, 1, kernel=(3, 5), padding=((0, 0), (0, 0)))
    with pytest.raises(KernelLargerThanInput):
        layer(T.Tensor(np.zeros((1, 4, 2, 9))))


def test_quaternion_maps_are_four_real_maps():
    assert L.QConv2d(1, 32)(T.Tensor(np.zeros((1, 4, 3, 5)))).shape[1] == 128


# ---------------------------------------------------------------- activations


def test_split_activation_examples():
    zero = T.qt_pack([0.0], [0.0], [0.0], [0.0])
    assert _quats(L.split_activation(zero, "tanh")).tolist() == [[0, 0, 0, 0]]
    q = T.qt_pack([1.0], [-1.0], [2.0], [-2.0])
    assert _quats(L.split_activation(q, "relu")).tolist() == [[1, 0, 2, 0]]


def test_split_tanh_gradient():
    rng = np.random.default_rng(15)
    blocks = [T.Tensor(rng.normal(size=5), requires_grad=True) for _ in range(4)]
    f = lambda: T.total(T.qt_to_real(L.split_activation(T.qt_pack(*blocks), "tanh")))
    assert T.grad_check(f, blocks) < 1e-6


def test_prelu_slope_shared():
    act = L.PReLU(0.1)
    out = act(T.Tensor(np.array([-1.0, 2.0, -3.0, 4.0])))
    np.testing.assert_allclose(out.data, [-0.1, 2.0, -0.3, 4.0])
    assert act.slope.size == 1


# ---------------------------------------------------------------- recurrence


def test_qrnn_zero_weights_give_zero_state():
    cell = L.QRNNCell(2, 3)
    for p in cell.parameters():
        p.data[...] = 0
    rng = np.random.default_rng(16)
    h = L.qrnn_step(cell, _random_qt(rng, (3,)), _random_qt(rng, (2,)))
    assert not _quats(h).any()


def test_qrnn_identity_input_map():
    cell = L.QRNNCell(1, 1, activation="identity")
    for p in cell.parameters():
        p.data[...] = 0
    _set_weight(cell.input_map, (1, 0, 0, 0))
    x = T.qt_pack([0.2], [-0.4], [1.5], [3.0])
    h = L.qrnn_step(cell, T.qt_pack([9.0], [9.0], [9.0], [9.0]), x)
    np.testing.assert_array_equal(_quats(h), _quats(x))


def test_qrnn_output_examples():
    cell = L.QRNNCell(1, 2, out_q=2)
    for p in cell.parameters():
        p.data[...] = 0
    zero = T.qt_pack(*(np.zeros(2) for _ in range(4)))
    assert not _quats(L.qrnn_output(cell, zero)).any()
    cell.output_map.w_r.data[...] = np.eye(2)
    rng = np.random.default_rng(17)
    h = _random_qt(rng, (2,))
    np.testing.assert_array_equal(_quats(L.qrnn_output(cell, h)), _quats(h))


def test_qrnn_step_matches_block_matrix_oracle():
    rng = np.random.default_rng(18)
    cell = L.QRNNCell(2, 3, out_q=2, seed=5)
    cell.input_map.bias.data[...] = rng.normal(size=12)
    cell.output_map.bias.data[...] = rng.normal(size=8)
    h_prev, x = _random_qt(rng, (3,)), _random_qt(rng, (2,))
    got_h = _quats(L.qrnn_step(cell, h_prev, x))
    w_hh, w_hx = _quats(cell.recurrent_map.weight), _quats(cell.input_map.weight)
    bias = cell.input_map.bias.data.reshape(4, 3).T
    hp, xx = _quats(h_prev), _quats(x)
    for n in range(3):
        pre = sum(A.to_matrix(w_hh[n, m]) @ hp[m] for m in range(3))
        pre = pre + sum(A.to_matrix(w_hx[n, m]) @ xx[m] for m in range(2)) + bias[n]
        np.testing.assert_allclose(got_h[n], np.tanh(pre), rtol=0, atol=1e-12)
    h_qt = T.qt_pack(*(got_h[:, k] for k in range(4)))
    got_y = _quats(L.qrnn_output(cell, h_qt))
    w_yh = _quats(cell.output_map.weight)
    ybias = cell.output_map.bias.data.reshape(4, 2).T
    for n in range(2):
        want = sum(A.to_matrix(w_yh[n, m]) @ got_h[m] for m in range(3)) + ybias[n]
        np.testing.assert_allclose(got_y[n], want, rtol=0, atol=1e-12)


def test_qrnn_run_equals_repeated_steps():
    rng = np.random.default_rng(19)
    cell = L.QRNNCell(2, 2, seed=6)
    seq = rng.normal(size=(1, 4, 8))
    states = cell.run(T.Tensor(seq)).data[0]
    h = T.Tensor(np.zeros((1, 8)))
    for t in range(4):
        h = cell.step(h, T.Tensor(seq[:, t]))
        np.testing.assert_allclose(states[t], h.data[0], rtol=0, atol=1e-14)


# ---------------------------------------------------------------- head


def test_softmax_head_uniform():
    head = L.SoftmaxHead(3, 4)
    head.dense.weight.data[...] = 0
    probs = head(T.Tensor(np.ones((2, 3)))).data
    np.testing.assert_allclose(probs, 0.25, atol=1e-15)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(20)
    z = rng.normal(size=(3, 6))
    np.testing.assert_allclose(T.softmax(T.Tensor(z)).data, T.softmax(T.Tensor(z + 123.4)).data, atol=1e-12)


def test_softmax_head_matches_high_precision():
    rng = np.random.default_rng(21)
    head = L.SoftmaxHead(8, 5, seed=3)
    head.dense.bias.data[...] = rng.normal(size=5)
    qt = _random_qt(rng, (4, 2))
    got = head(qt).data
    x = T.qt_to_real(qt).data
    mpmath.mp.dps = 50
    W, b = head.dense.weight.data, head.dense.bias.data
    for row in range(4):
        logits = [sum(mpmath.mpf(W[k, i]) * mpmath.mpf(x[row, i]) for i in range(8)) + mpmath.mpf(b[k]) for k in range(5)]
        norm = sum(mpmath.exp(v) for v in logits)
        want = [float(mpmath.exp(v) / norm) for v in logits]
        np.testing.assert_allclose(got[row], want, rtol=0, atol=1e-12)
        assert abs(got[row].sum() - 1.0) < 1e-12


# ---------------------------------------------------------------- init


def test_init_deterministic():
    spec = L.InitSpec(10, 20, seed=9)
    a, b = L.quaternion_init(spec, (4, 5)), L.quaternion_init(spec, (4, 5))
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)


def test_init_statistics():
    spec = L.InitSpec(30, 50, seed=0)
    q = np.stack(L.quaternion_init(spec, (100_000,)).arrays())
    assert np.all(np.isfinite(q))
    for comp in q:
        assert abs(comp.mean()) < 3 * comp.std() / math.sqrt(comp.size)
    sigma = 1 / math.sqrt(2 * (30 + 50))
    energy = np.mean(np.sum(q * q, axis=0))
    assert abs(energy / (2 * sigma**2) - 1) < 0.05


def test_init_component_means_unbiased_across_seeds():
    # a single 3 SE bound fails about 0.3% of the time per component, so look at the spread too
    z = []
    for seed in range(20):
        q = np.stack(L.quaternion_init(L.InitSpec(30, 50, seed=seed), (20_000,)).arrays())
        z.extend(q.mean(axis=1) / (q.std(axis=1) / math.sqrt(q.shape[1])))
    z = np.array(z)
    assert abs(z.mean()) < 3 / math.sqrt(z.size)
    assert 0.6 < z.std() < 1.4


def test_init_rejects_zero_fan():
    with pytest.raises(InvalidFan):
        L.quaternion_init(L.InitSpec(0, 4), (2, 2))


# ---------------------------------------------------------------- pooling


def _naive_pool(x, window):
    """Per-window argmax of quaternion norm; x is [batch, maps, F, T, 4]."""
    b, m, f, t, _ = x.shape
    out_f = -(-f // window)
    out = np.zeros((b, m, out_f, t, 4))
    for i in range(b):
        for j in range(m):
            for k in range(out_f):
                for s in range(t):
                    cands = x[i, j, k * window:(k + 1) * window, s]
                    out[i, j, k, s] = cands[int(np.argmax(np.linalg.norm(cands, axis=1)))]
    return out


def test_pool_window_one_is_identity():
    rng = np.random.default_rng(22)
    qt = _random_qt(rng, (1, 2, 4, 3))
    for a, b in zip(L.maxpool_freq(qt, 1).arrays(), qt.arrays()):
        np.testing.assert_array_equal(a, b)


def test_pool_keeps_largest_quaternion_whole():
    qt = T.qt_pack(*(np.array(v, dtype=float).reshape(1, 1, 2, 1) for v in ([1, 0], [0, 3], [0, 4], [0, 0])))
    np.testing.assert_array_equal(_quats(L.maxpool_freq(qt, 2)).reshape(4), [0, 3, 4, 0])


@pytest.mark.parametrize("f", [8, 7])
def test_pool_matches_scan_oracle(f):
    rng = np.random.default_rng(23)
    qt = _random_qt(rng, (2, 3, f, 5))
    np.testing.assert_array_equal(_quats(L.maxpool_freq(qt, 2)), _naive_pool(_quats(qt), 2))


# ---------------------------------------------------------------- dropout


def test_dropout_identity_cases():
    x = T.Tensor(np.ones((3, 8)))
    assert L.dropout(x, 0.0, True, 0) is x
    assert L.dropout(x, 0.5, False, 0) is x
    with pytest.raises(InvalidRate):
        L.dropout(x, 1.0, True, 0)


def test_dropout_statistics_and_whole_quaternions():
    x = T.Tensor(np.ones((1, 4 * 100_000)))
    out = L.dropout(x, 0.2, True, np.random.default_rng(0)).data.reshape(4, -1)
    kept = out[0] != 0
    assert np.all((out != 0) == kept)
    np.testing.assert_allclose(out[:, kept], 1 / 0.8)
    n = kept.size
    assert abs(kept.mean() - 0.8) < 3 * math.sqrt(0.8 * 0.2 / n)


def test_dropout_conv_channel_axis():
    x = T.Tensor(np.ones((2, 8, 5, 6)))
    out = L.dropout(x, 0.5, True, np.random.default_rng(1), axis=1).data.reshape(2, 4, 2, 5, 6)
    assert np.all((out != 0) == (out[:, :1] != 0))


# ---------------------------------------------------------------- counting


def test_dense_count_examples():
    assert L.Dense.count(1024, 1024, bias=False) == 1_048_576
    assert L.QDense.count(256, 256, bias=False) == 262_144
    assert L.Dense.count(1024, 1024, bias=False) / L.QDense.count(256, 256, bias=False) == 4.0


@pytest.mark.parametrize("in_q,out_q", [(1, 1), (3, 7), (40, 256), (256, 256)])
def test_quarter_weights_at_equal_real_width(in_q, out_q):
    assert L.Dense.count(4 * in_q, 4 * out_q, bias=False) == 4 * L.QDense.count(in_q, out_q, bias=False)
    real = L.Dense(4 * in_q, 4 * out_q, bias=False) if in_q < 50 else None
    if real is not None:
        q = L.QDense(in_q, out_q, bias=False)
        assert real.num_parameters() == 4 * q.num_parameters()


def test_param_count_matches_layer_formula():
    layer = L.QConv2d(2, 3, kernel=(3, 5))
    assert L.param_count(layer)["total"] == L.QConv2d.count(2, 3, (3, 5)) == 4 * 2 * 3 * 15 + 12


# ---------------------------------------------------------------- gradients


def _check_layer(layer, make_input, reduce=None, points=10, tol=1e-6):
    rng = np.random.default_rng(30)
    params = layer.parameters()
    worst = 0.0
    for _ in range(points):
        for p in params:
            p.data[...] = rng.normal(scale=0.5, size=p.shape)
        x = T.Tensor(make_input(rng), requires_grad=True)
        weights = None

        def f():
            nonlocal weights
            out = layer(x) if reduce is None else reduce(layer, x)
            if weights is None:
                weights = rng.normal(size=out.shape)
            return T.total(T.mul(out, weights))

        worst = max(worst, T.grad_check(f, params + [x]))
    assert worst < tol


def test_grad_qdense():
    _check_layer(L.QDense(2, 3), lambda r: r.normal(size=(3, 8)))


def test_grad_qconv():
    _check_layer(L.QConv2d(1, 2, kernel=(3, 3)), lambda r: r.normal(size=(1, 4, 4, 5)))


def test_grad_qrnn_three_steps():
    _check_layer(L.QRNNCell(1, 2, out_q=1), lambda r: r.normal(size=(1, 3, 4)),
                 reduce=lambda cell, x: cell.run(x))


def test_grad_prelu():
    _check_layer(L.PReLU(), lambda r: r.normal(size=(4, 6)))


def test_grad_softmax_head():
    _check_layer(L.SoftmaxHead(8, 4), lambda r: r.normal(size=(3, 8)),
                 reduce=lambda head, x: head.log_probs(x))


def test_grad_pool():
    rng = np.random.default_rng(31)
    for _ in range(10):
        x = T.Tensor(rng.normal(size=(1, 8, 6, 3)), requires_grad=True)
        w = rng.normal(size=(1, 8, 3, 3))
        assert T.grad_check(lambda: T.total(T.mul(L.pool_freq(x, 2, True), w)), [x]) < 1e-6
