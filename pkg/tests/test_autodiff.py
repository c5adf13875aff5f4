"""Forward oracles and finite-difference backward checks for every op."""

import numpy as np
import pytest

from taxopath import autodiff as ad
from taxopath.autodiff import Tape, Tensor, backward
from taxopath.errors import IndexOutOfRange, ShapeMismatch


def t64(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


def fd_grads(build, store, eps=1e-6):
    """Central-difference gradients of the scalar build() for each tensor."""
    out = {}
    for name, tensor in store.items():
        g = np.zeros(tensor.data.size, dtype=np.float64)
        for i in range(tensor.data.size):
            orig = tensor.data.flat[i]
            tensor.data.flat[i] = orig + eps
            up = float(build().data)
            tensor.data.flat[i] = orig - eps
            down = float(build().data)
            tensor.data.flat[i] = orig
            g[i] = (up - down) / (2.0 * eps)
        out[name] = g.reshape(tensor.data.shape)
    return out


def check_grads(build, store, tol=1e-7):
    with Tape() as tape:
        grads = backward(build(), tape, store)
    fd = fd_grads(build, store)
    for name in store:
        assert np.allclose(grads[name], fd[name], atol=tol, rtol=1e-5), name
    return grads


# --- tape mechanics ---

def test_no_recording_without_tape():
    x = t64([[1.0, 2.0]])
    y = ad.tanh(x)
    assert y.grad is None and x.grad is None
    with Tape() as tape:
        pass
    assert tape.nodes == []


def test_ops_record_only_inside_tape():
    x = t64([[1.0, 2.0]])
    ad.tanh(x)
    with Tape() as tape:
        ad.tanh(x)
        assert len(tape.nodes) == 1
    ad.tanh(x)
    assert len(tape.nodes) == 1


def test_nested_tape_rejected():
    with Tape():
        with pytest.raises(RuntimeError):
            with Tape():
                pass


def test_backward_clears_tape_and_grads():
    x = t64([[3.0]])
    with Tape() as tape:
        loss = ad.sum_all(ad.mul(x, x))
        grads = backward(loss, tape, {"x": x})
    assert grads["x"][0, 0] == pytest.approx(6.0)
    assert tape.nodes == [] and x.grad is None and loss.grad is None


def test_backward_zero_fills_unused_params():
    x, unused = t64([[2.0]]), t64([[5.0, 5.0]])
    with Tape() as tape:
        grads = backward(ad.sum_all(x), tape, {"x": x, "u": unused})
    assert np.array_equal(grads["u"], np.zeros((1, 2)))
    assert grads["x"][0, 0] == 1.0


def test_backward_accumulates_shared_use():
    x = t64([[1.5, -0.5]])
    with Tape() as tape:
        loss = ad.sum_all(ad.add(ad.mul(x, x), x))   # sum(x^2 + x)
        grads = backward(loss, tape, {"x": x})
    assert np.allclose(grads["x"], 2.0 * x.data + 1.0)


def test_backward_requires_scalar_loss():
    x = t64([[1.0, 2.0]])
    with Tape() as tape:
        y = ad.tanh(x)
        with pytest.raises(ShapeMismatch):
            backward(y, tape, {"x": x})


# --- arithmetic ---

def test_matmul():
    rng = np.random.default_rng(0)
    a, b = t64(rng.standard_normal((3, 4))), t64(rng.standard_normal((4, 2)))
    assert np.allclose(ad.matmul(a, b).data, a.data @ b.data)
    check_grads(lambda: ad.sum_all(ad.tanh(ad.matmul(a, b))), {"a": a, "b": b})


def test_matmul_shape_errors():
    with pytest.raises(ShapeMismatch):
        ad.matmul(t64([[1.0, 2.0]]), t64([[1.0, 2.0]]))
    with pytest.raises(ShapeMismatch):
        ad.matmul(t64([1.0]), t64([[1.0]]))


def test_add_broadcasts_bias_row():
    rng = np.random.default_rng(1)
    a, b = t64(rng.standard_normal((3, 4))), t64(rng.standard_normal((1, 4)))
    assert np.allclose(ad.add(a, b).data, a.data + b.data)
    grads = check_grads(lambda: ad.sum_all(ad.tanh(ad.add(a, b))),
                        {"a": a, "b": b})
    assert grads["b"].shape == (1, 4)


def test_add_shape_error():
    with pytest.raises(ShapeMismatch):
        ad.add(t64(np.zeros((2, 3))), t64(np.zeros((2, 4))))


def test_mul_elementwise_and_broadcast():
    rng = np.random.default_rng(2)
    a, b = t64(rng.standard_normal((3, 4))), t64(rng.standard_normal((3, 1)))
    assert np.allclose(ad.mul(a, b).data, a.data * b.data)
    grads = check_grads(lambda: ad.sum_all(ad.mul(a, b)), {"a": a, "b": b})
    assert grads["b"].shape == (3, 1)
    with pytest.raises(ShapeMismatch):
        ad.mul(t64(np.zeros((2, 3))), t64(np.zeros((4, 3))))


def test_mul_const_and_scale():
    rng = np.random.default_rng(3)
    x = t64(rng.standard_normal((2, 3)))
    mask = np.array([[1.0], [0.0]])
    assert np.allclose(ad.mul_const(x, mask).data, x.data * mask)
    grads = check_grads(lambda: ad.sum_all(ad.mul_const(x, mask)), {"x": x})
    assert np.array_equal(grads["x"][1], np.zeros(3))
    assert np.allclose(ad.scale(x, -2.5).data, x.data * -2.5)
    check_grads(lambda: ad.sum_all(ad.tanh(ad.scale(x, -2.5))), {"x": x})


def test_concat_both_axes():
    rng = np.random.default_rng(4)
    a, b = t64(rng.standard_normal((2, 3))), t64(rng.standard_normal((2, 2)))
    cat = ad.concat(a, b, axis=1)
    assert np.allclose(cat.data, np.concatenate([a.data, b.data], axis=1))
    check_grads(lambda: ad.sum_all(ad.tanh(ad.concat(a, b, axis=1))),
                {"a": a, "b": b})
    c = t64(rng.standard_normal((1, 3)))
    assert ad.concat(a, c, axis=0).shape == (3, 3)
    check_grads(lambda: ad.sum_all(ad.tanh(ad.concat(a, c, axis=0))),
                {"a": a, "c": c})
    with pytest.raises(ShapeMismatch):
        ad.concat(a, b, axis=0)


def test_concat_rows():
    rng = np.random.default_rng(5)
    parts = [t64(rng.standard_normal((n, 2))) for n in (1, 3, 2)]
    out = ad.concat_rows(parts)
    assert np.allclose(out.data, np.concatenate([p.data for p in parts]))
    check_grads(lambda: ad.sum_all(ad.tanh(ad.concat_rows(parts))),
                {f"p{i}": p for i, p in enumerate(parts)})
    with pytest.raises(ShapeMismatch):
        ad.concat_rows([])


# --- nonlinearities ---

def test_tanh():
    x = t64([[0.0, 0.5, -2.0]])
    y = ad.tanh(x)
    assert np.allclose(y.data, np.tanh(x.data))
    # derivative at 0 is exactly 1
    z = t64([[0.0]])
    with Tape() as tape:
        grads = backward(ad.sum_all(ad.tanh(z)), tape, {"z": z})
    assert abs(grads["z"][0, 0] - 1.0) <= 1e-8
    check_grads(lambda: ad.sum_all(ad.tanh(x)), {"x": x})


def test_sigmoid_stable_and_correct():
    x = t64([[-1000.0, -2.0, 0.0, 2.0, 1000.0]])
    y = ad.sigmoid(x)
    assert np.all(np.isfinite(y.data))
    assert y.data[0, 0] == 0.0 and y.data[0, 4] == 1.0
    assert y.data[0, 2] == 0.5
    assert np.allclose(y.data[0, 1:4], 1.0 / (1.0 + np.exp(-x.data[0, 1:4])))
    mid = t64([[-2.0, -0.3, 0.9]])
    check_grads(lambda: ad.sum_all(ad.sigmoid(mid)), {"x": mid})


def test_softmax_rows():
    rng = np.random.default_rng(6)
    x = t64(rng.standard_normal((3, 5)))
    y = ad.softmax(x)
    assert np.allclose(y.data.sum(axis=1), 1.0)
    shifted = ad.softmax(t64(x.data + 100.0))
    assert np.allclose(y.data, shifted.data)
    check_grads(lambda: ad.sum_all(ad.mul(ad.softmax(x), x)), {"x": x})


def test_softmax_vector():
    x = t64([1.0, 2.0, 3.0])
    y = ad.softmax(x)
    assert y.shape == (3,)
    assert y.data.sum() == pytest.approx(1.0)
    check_grads(lambda: ad.sum_all(ad.mul(ad.softmax(x), x)), {"x": x})


def test_masked_softmax_properties():
    rng = np.random.default_rng(7)
    x = t64(rng.standard_normal((2, 4)))
    mask = np.array([[1.0, 1.0, 0.0, 1.0], [1.0, 0.0, 0.0, 1.0]])
    y = ad.masked_softmax_rows(x, mask)
    assert np.all(y.data[mask == 0] == 0.0)
    assert np.allclose(y.data.sum(axis=1), 1.0)


def test_masked_softmax_ignores_masked_scores():
    rng = np.random.default_rng(8)
    base = rng.standard_normal((2, 4))
    mask = np.array([[1.0, 0.0, 1.0, 1.0], [0.0, 1.0, 1.0, 0.0]])
    poisoned = base.copy()
    poisoned[mask == 0] = 1e9    # would overflow a naive exp
    y1 = ad.masked_softmax_rows(t64(base), mask)
    y2 = ad.masked_softmax_rows(t64(poisoned), mask)
    assert np.array_equal(y1.data, y2.data)
    assert np.all(np.isfinite(y2.data))


def test_masked_softmax_grads_zero_at_masked():
    rng = np.random.default_rng(9)
    x = t64(rng.standard_normal((2, 4)))
    mask = np.array([[1.0, 1.0, 0.0, 1.0], [1.0, 1.0, 1.0, 0.0]])
    c = rng.standard_normal((2, 4))
    grads = check_grads(
        lambda: ad.sum_all(ad.mul_const(ad.masked_softmax_rows(x, mask), c)),
        {"x": x})
    assert np.all(grads["x"][mask == 0] == 0.0)
    with pytest.raises(ShapeMismatch):
        ad.masked_softmax_rows(x, mask[:, :3])


# --- indexing / layout ---

def test_gather_rows_forward_and_accumulation():
    e = t64([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    idx = [2, 0, 2]
    out = ad.gather_rows(e, idx)
    assert np.array_equal(out.data, e.data[idx])
    with Tape() as tape:
        grads = backward(ad.sum_all(ad.gather_rows(e, idx)), tape, {"e": e})
    # row 2 picked twice accumulates twice
    assert np.array_equal(grads["e"], [[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]])
    check_grads(lambda: ad.sum_all(ad.tanh(ad.gather_rows(e, idx))), {"e": e})


def test_gather_rows_bounds():
    e = t64(np.zeros((3, 2)))
    with pytest.raises(IndexOutOfRange):
        ad.gather_rows(e, [3])
    with pytest.raises(IndexOutOfRange):
        ad.gather_rows(e, [-1])


def test_pick_row():
    e = t64([[1.0, 2.0], [3.0, 4.0]])
    out = ad.pick_row(e, 1)
    assert out.shape == (1, 2) and np.array_equal(out.data, [[3.0, 4.0]])


def test_slice_cols():
    rng = np.random.default_rng(10)
    x = t64(rng.standard_normal((2, 6)))
    out = ad.slice_cols(x, 2, 5)
    assert np.array_equal(out.data, x.data[:, 2:5])
    grads = check_grads(lambda: ad.sum_all(ad.tanh(ad.slice_cols(x, 2, 5))),
                        {"x": x})
    assert np.all(grads["x"][:, :2] == 0.0) and np.all(grads["x"][:, 5:] == 0.0)
    with pytest.raises(ShapeMismatch):
        ad.slice_cols(x, 4, 2)
    with pytest.raises(ShapeMismatch):
        ad.slice_cols(x, 0, 7)


def test_tile_posmajor():
    q = t64([[1.0, 2.0], [3.0, 4.0]])   # b=2
    out = ad.tile_posmajor(q, 3)
    assert out.shape == (6, 2)
    for t in range(3):
        assert np.array_equal(out.data[t * 2:(t + 1) * 2], q.data)
    check_grads(lambda: ad.sum_all(ad.tanh(ad.tile_posmajor(q, 3))), {"q": q})


def test_posmajor_to_batch_layout():
    # rows ordered (t0,j0), (t0,j1), (t1,j0), (t1,j1), (t2,j0), (t2,j1)
    col = t64(np.arange(6.0).reshape(6, 1))
    out = ad.posmajor_to_batch(col, batch=2, positions=3)
    assert np.array_equal(out.data, [[0.0, 2.0, 4.0], [1.0, 3.0, 5.0]])
    check_grads(lambda: ad.sum_all(
        ad.tanh(ad.posmajor_to_batch(col, 2, 3))), {"s": col})
    with pytest.raises(ShapeMismatch):
        ad.posmajor_to_batch(t64(np.zeros((5, 1))), 2, 3)


def test_attn_context_matches_loop():
    rng = np.random.default_rng(11)
    b, T, d = 2, 3, 4
    w = t64(rng.standard_normal((b, T)))
    h = t64(rng.standard_normal((T * b, d)))
    out = ad.attn_context(w, h, b, T)
    expect = np.zeros((b, d))
    for j in range(b):
        for t in range(T):
            expect[j] += w.data[j, t] * h.data[t * b + j]
    assert np.allclose(out.data, expect)
    check_grads(lambda: ad.sum_all(ad.tanh(ad.attn_context(w, h, b, T))),
                {"w": w, "h": h})
    with pytest.raises(ShapeMismatch):
        ad.attn_context(t64(np.zeros((b, T + 1))), h, b, T)


# --- reductions / losses ---

def test_sum_all():
    x = t64([[1.0, 2.0], [3.0, 4.0]])
    assert float(ad.sum_all(x).data) == 10.0
    grads = check_grads(lambda: ad.sum_all(x), {"x": x})
    assert np.array_equal(grads["x"], np.ones((2, 2)))


def test_cross_entropy_value_and_exact_grad():
    logits = t64([[2.0, -1.0, 0.5]])
    loss = ad.cross_entropy(logits, 2)
    p = np.exp(logits.data[0]) / np.exp(logits.data[0]).sum()
    assert float(loss.data) == pytest.approx(-np.log(p[2]))
    with Tape() as tape:
        grads = backward(ad.cross_entropy(logits, 2), tape, {"l": logits})
    expect = p.copy()
    expect[2] -= 1.0
    assert np.allclose(grads["l"][0], expect, atol=1e-12)
    check_grads(lambda: ad.cross_entropy(logits, 0), {"l": logits})


def test_cross_entropy_stable_and_bounds():
    big = t64([[1000.0, 0.0]])
    assert np.isfinite(float(ad.cross_entropy(big, 0).data))
    with pytest.raises(IndexOutOfRange):
        ad.cross_entropy(t64([[0.0, 0.0]]), 2)
    with pytest.raises(IndexOutOfRange):
        ad.cross_entropy(t64([[0.0, 0.0]]), -1)


def test_cross_entropy_rows():
    rng = np.random.default_rng(12)
    logits = t64(rng.standard_normal((3, 4)))
    targets = [1, 3, 0]
    out = ad.cross_entropy_rows(logits, targets)
    assert out.shape == (3, 1)
    for j, tgt in enumerate(targets):
        single = ad.cross_entropy(t64(logits.data[j:j + 1]), tgt)
        assert float(out.data[j, 0]) == pytest.approx(float(single.data))
    check_grads(lambda: ad.sum_all(ad.cross_entropy_rows(logits, targets)),
                {"l": logits})


def test_cross_entropy_rows_uniform_is_log_k():
    logits = t64(np.zeros((2, 7)))
    out = ad.cross_entropy_rows(logits, [0, 6])
    assert np.allclose(out.data, np.log(7.0))
    with pytest.raises(IndexOutOfRange):
        ad.cross_entropy_rows(logits, [0, 7])
    with pytest.raises(ShapeMismatch):
        ad.cross_entropy_rows(logits, [0, 1, 2])
