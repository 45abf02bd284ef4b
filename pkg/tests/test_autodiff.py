import math

import numpy as np
import pytest

import ggpt.autodiff as ad


def t64(arr, grad=True):
    return ad.tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def test_sum_backward_is_ones(rng):
    x = t64(rng.normal(size=(3, 4)))
    ad.backward(ad.sum_(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_product_backward(rng):
    x = t64(rng.normal(size=(5,)))
    y = t64(rng.normal(size=(5,)))
    ad.backward(ad.sum_(ad.mul(x, y)))
    assert np.allclose(x.grad, y.data)
    assert np.allclose(y.grad, x.data)


def test_reuse_accumulates(rng):
    x = t64(rng.normal(size=(4,)))
    loss = ad.add(ad.sum_(ad.mul(x, x)), ad.sum_(x))
    ad.backward(loss)
    assert np.allclose(x.grad, 2 * x.data + 1.0)


def test_backward_rejects_non_scalar(rng):
    x = t64(rng.normal(size=(3,)))
    with pytest.raises(ValueError):
        ad.backward(ad.mul(x, x))


def test_nan_loss_aborts():
    x = t64([np.nan])
    with pytest.raises(ad.TrainingAborted):
        ad.backward(ad.sum_(x))


def test_shape_mismatch_raises(rng):
    a = t64(rng.normal(size=(3, 4)))
    b = t64(rng.normal(size=(5, 6)))
    with pytest.raises(ValueError):
        ad.matmul(a, b)


SMOOTH_CASES = [
    ("matmul", lambda p, w: ad.sum_(ad.mul(ad.matmul(p[0], p[1]), w)), [(4, 5), (5, 3)], (4, 3)),
    ("matmul_batched", lambda p, w: ad.sum_(ad.mul(ad.matmul(p[0], p[1]), w)), [(2, 4, 5), (2, 5, 3)], (2, 4, 3)),
    ("add_broadcast", lambda p, w: ad.sum_(ad.mul(ad.add(p[0], p[1]), w)), [(4, 5), (5,)], (4, 5)),
    ("softmax", lambda p, w: ad.sum_(ad.mul(ad.softmax(p[0]), w)), [(3, 7)], (3, 7)),
    ("log_softmax", lambda p, w: ad.mean(ad.mul(ad.log_softmax(p[0]), w)), [(3, 7)], (3, 7)),
    ("layer_norm", lambda p, w: ad.sum_(ad.mul(ad.layer_norm(p[0]), w)), [(4, 6)], (4, 6)),
    ("rms_norm", lambda p, w: ad.sum_(ad.mul(ad.rms_norm(p[0]), w)), [(4, 6)], (4, 6)),
    ("sigmoid", lambda p, w: ad.sum_(ad.mul(ad.sigmoid(p[0]), w)), [(5, 5)], (5, 5)),
    ("tanh", lambda p, w: ad.sum_(ad.mul(ad.tanh(p[0]), w)), [(5, 5)], (5, 5)),
    ("softplus", lambda p, w: ad.sum_(ad.mul(ad.softplus(p[0]), w)), [(5, 5)], (5, 5)),
    ("gelu", lambda p, w: ad.sum_(ad.mul(ad.gelu(p[0]), w)), [(5, 5)], (5, 5)),
    ("exp", lambda p, w: ad.sum_(ad.mul(ad.exp(p[0]), w)), [(4, 4)], (4, 4)),
    ("reshape_transpose", lambda p, w: ad.sum_(ad.mul(ad.transpose(ad.reshape(p[0], (5, 4)), (1, 0)), w)),
     [(4, 5)], (4, 5)),
    ("concat_narrow", lambda p, w: ad.sum_(ad.mul(ad.narrow(ad.concat([p[0], p[1]], 1), 1, 1, 4), w)),
     [(3, 3), (3, 4)], (3, 4)),
    ("mean_axis", lambda p, w: ad.sum_(ad.mul(ad.mean(p[0], axis=1), w)), [(3, 5)], (3,)),
    ("div", lambda p, w: ad.sum_(ad.mul(ad.div(p[0], ad.add(ad.mul(p[1], p[1]), 1.0)), w)),
     [(3, 3), (3, 3)], (3, 3)),
    ("sqrt", lambda p, w: ad.sum_(ad.mul(ad.sqrt(ad.add(ad.mul(p[0], p[0]), 1.0)), w)), [(4, 4)], (4, 4)),
    ("powc", lambda p, w: ad.sum_(ad.mul(ad.powc(ad.add(ad.mul(p[0], p[0]), 1.0), -0.5), w)), [(4, 4)], (4, 4)),
    ("log", lambda p, w: ad.sum_(ad.mul(ad.log(ad.add(ad.mul(p[0], p[0]), 0.5)), w)), [(4, 4)], (4, 4)),
]


@pytest.mark.parametrize("name,fn,shapes,wshape", SMOOTH_CASES, ids=[c[0] for c in SMOOTH_CASES])
def test_smooth_ops_gradcheck(name, fn, shapes, wshape):
    rng = np.random.default_rng(hash(name) % 2**32)
    params = [t64(rng.normal(size=s)) for s in shapes]
    w = ad.tensor(rng.normal(size=wshape), dtype=np.float64)
    err = ad.grad_check(lambda: fn(params, w), params, max_coords_per_param=32, rng=rng)
    assert err < 1e-6, f"{name}: {err}"


def test_gather_scatter_gradcheck(rng):
    x = t64(rng.normal(size=(4, 3)))
    idx = np.array([0, 2, 2, 1, 0])
    w = ad.tensor(rng.normal(size=(5, 3)), dtype=np.float64)
    err = ad.grad_check(lambda: ad.sum_(ad.mul(ad.gather_rows(x, idx), w)), [x],
                        max_coords_per_param=12, rng=rng)
    assert err < 1e-6
    y = t64(rng.normal(size=(5, 3)))
    w2 = ad.tensor(rng.normal(size=(4, 3)), dtype=np.float64)
    err = ad.grad_check(lambda: ad.sum_(ad.mul(ad.scatter_add_rows(y, idx, 4), w2)), [y],
                        max_coords_per_param=12, rng=rng)
    assert err < 1e-6


def test_scatter_then_gather_identity(rng):
    x = ad.tensor(rng.normal(size=(6, 4)).astype(np.float32))
    idx = np.array([3, 1, 4, 0, 2, 5])
    out = ad.gather_rows(ad.scatter_add_rows(x, idx, 6), idx)
    assert np.allclose(out.data, x.data)


def test_cross_entropy_uniform_closed_form():
    for v in (7, 64, 4096):
        logits = ad.tensor(np.zeros((3, v)))
        ce = ad.cross_entropy(logits, np.array([0, v // 2, v - 1]))
        assert abs(ce.item() - math.log(v)) < 1e-5


def test_cross_entropy_masked_entries_get_zero_grad(rng):
    logits = t64(rng.normal(size=(3, 6)))
    mask = np.zeros((3, 6))
    mask[:, 4:] = -np.inf
    loss = ad.cross_entropy(ad.add(logits, ad.tensor(mask, dtype=np.float64)), np.array([0, 1, 2]))
    ad.backward(loss)
    assert np.all(logits.grad[:, 4:] == 0.0)


def test_softplus_zero_is_log_two():
    assert abs(ad.softplus(ad.tensor(0.0)).item() - math.log(2)) < 1e-7


def test_clamp_gradient_inside_region_only(rng):
    x = t64([-2.0, -0.5, 0.0, 0.5, 2.0])
    ad.backward(ad.sum_(ad.clamp(x, -1.0, 1.0)))
    assert np.array_equal(x.grad, [0.0, 1.0, 1.0, 1.0, 0.0])


def test_sign_ste_forward_and_identity_backward(rng):
    x = t64(rng.normal(size=(4, 4)))
    w = ad.tensor(rng.normal(size=(4, 4)), dtype=np.float64)
    out = ad.sign_ste(x)
    assert set(np.unique(out.data)) <= {-1.0, 1.0}
    ad.backward(ad.sum_(ad.mul(out, w)))
    assert np.allclose(x.grad, w.data)


def test_three_layer_mlp_gradcheck(rng):
    sizes = [(6, 8), (8, 8), (8, 1)]
    ws = [t64(rng.normal(size=s) * 0.5) for s in sizes]
    bs = [t64(rng.normal(size=(s[1],)) * 0.1) for s in sizes]
    x = ad.tensor(rng.normal(size=(5, 6)), dtype=np.float64)

    def f():
        h = x
        for w, b in zip(ws[:-1], bs[:-1]):
            h = ad.gelu(ad.add(ad.matmul(h, w), b))
        return ad.sum_(ad.add(ad.matmul(h, ws[-1]), bs[-1]))

    err = ad.grad_check(f, ws + bs, max_coords_per_param=16, rng=rng)
    assert err < 1e-6


def test_deterministic_forward_backward(rng):
    def run():
        r = np.random.default_rng(7)
        x = ad.tensor(r.normal(size=(8, 8)).astype(np.float32), requires_grad=True)
        w = ad.tensor(r.normal(size=(8, 8)).astype(np.float32), requires_grad=True)
        loss = ad.mean(ad.gelu(ad.matmul(ad.rms_norm(x), w)))
        ad.backward(loss)
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert np.array_equal(l1, l2) and np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_float64_mode_preserved_through_reductions(rng):
    x = t64(rng.normal(size=(4,)))
    assert ad.mean(x).dtype == np.float64
    assert ad.sum_(ad.softmax(x)).dtype == np.float64
