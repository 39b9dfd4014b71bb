import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrdrive.autodiff import Adam, RMSProp, ShapeError, Tensor, clip_by_global_norm, grad_check
from vrdrive.autodiff import functional as F
from vrdrive.autodiff.functional import _col2im, _im2col
from vrdrive.diagnostics import run_gradcheck


def test_every_layer_passes_gradcheck():
    reports, secs = run_gradcheck(include_nets=False)
    bad = {k: r.max_rel_err for k, r in reports.items() if not r.passed}
    assert not bad, bad
    assert secs < 30


def test_backward_needs_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        F.mul(x, 2.0).backward()


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = F.mul(x, x)  # dy/dx = 2x
    F.sum_(F.add(y, x)).backward()
    assert x.grad[0] == pytest.approx(7.0)


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        F.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        F.conv2d(Tensor(np.ones((1, 3, 8, 8))), Tensor(np.ones((4, 3, 3, 2))))


def test_conv_matches_direct_loop(rng):
    x = rng.normal(size=(2, 3, 7, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    patch = xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]  # (c, kh, kw)
                    ref[n, o, i, j] = np.sum(patch.transpose(1, 2, 0) * w[o]) + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-10)


def test_deconv_is_adjoint_of_conv(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(5, 4, 4, 3))
    y = rng.normal(size=(2, 5, 4, 4))
    conv = F.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    # deconv weight layout is (in, kh, kw, out): the conv kernel read the other way
    dec = F.deconv2d(Tensor(y), Tensor(w), stride=2, padding=1).data
    assert dec.shape == x.shape
    assert np.sum(conv * y) == pytest.approx(np.sum(x * dec), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.sampled_from([5, 6, 8]), st.sampled_from([1, 3, 4]),
       st.sampled_from([1, 2]), st.sampled_from([0, 1]))
def test_im2col_col2im_adjoint(n, c, hw, k, stride, pad):
    if hw + 2 * pad < k:
        return
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, c, hw, hw))
    cols, oh, ow = _im2col(x, k, k, stride, pad)
    r = rng.normal(size=cols.shape)
    back = _col2im(r, x.shape, k, k, stride, pad, oh, ow)
    assert np.sum(cols * r) == pytest.approx(np.sum(x * back), rel=1e-9, abs=1e-9)


def test_batchnorm_running_stats_update(rng):
    x = Tensor(rng.normal(2.0, 3.0, size=(8, 2, 4, 4)))
    mean, var = np.zeros(2), np.ones(2)
    F.batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), mean, var, train=True)
    flat = x.data.transpose(1, 0, 2, 3).reshape(2, -1)
    np.testing.assert_allclose(mean, 0.1 * flat.mean(axis=1))
    np.testing.assert_allclose(var, 0.9 + 0.1 * flat.var(axis=1, ddof=1))


def test_dropout_identity_without_rng(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    assert F.dropout(x, 0.5, None) is x
    with pytest.raises(ValueError):
        F.dropout(x, 1.0, rng)


def test_sigmoid_and_log_clamp_are_finite():
    big = Tensor(np.array([-800.0, 0.0, 800.0]))
    s = F.sigmoid(big).data
    assert np.isfinite(s).all() and s[0] == 0.0 and s[2] == 1.0
    lg = F.log(F.sigmoid(big), clamp=(1e-7, 1 - 1e-7)).data
    assert np.isfinite(lg).all()


def test_adam_first_step_is_lr_sign():
    p = {"w": np.array([1.0, -1.0, 0.5])}
    Adam(lr=0.1, beta1=0.5).step(p, {"w": np.array([2.0, -3.0, 0.0])})
    np.testing.assert_allclose(p["w"], [0.9, -0.9, 0.5], atol=1e-6)


def test_rmsprop_matches_formula():
    p = {"w": np.array([1.0])}
    opt = RMSProp(lr=0.01, decay=0.9, eps=0.1)
    g = np.array([2.0])
    opt.step(p, {"w": g})
    ms = 0.1 * 4.0
    assert p["w"][0] == pytest.approx(1.0 - 0.01 * 2.0 / np.sqrt(ms + 0.1))


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_by_global_norm(g, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)


def test_grad_check_detects_wrong_gradient():
    # a deliberately broken op: forward x^2, backward claims 3x
    from vrdrive.autodiff.tensor import make_result

    def bad_square(x):
        return make_result(x.data ** 2, (x,), lambda g: x.accumulate(3.0 * x.data * g), "bad")

    params = {"x": Tensor(np.array([0.7, -1.3]))}
    rep = grad_check(lambda p: F.sum_(bad_square(p["x"])), params)
    assert not rep.passed
