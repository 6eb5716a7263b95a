import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from r3net import tensor as T
from r3net import tensorio
from r3net.gradcheck import NondeterministicLoss, grad_check, relative_error

from conftest import weighted_sum


def triple_loop(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    np.testing.assert_allclose(T.matmul(T.Tensor(a), T.Tensor(b)).data, triple_loop(a, b), rtol=0, atol=1e-12)


def test_matmul_shared_weight_batched(rng):
    a, w = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(5, 6))
    out = T.matmul(T.Tensor(a), T.Tensor(w)).data
    for i in range(2):
        for j in range(3):
            np.testing.assert_allclose(out[i, j], triple_loop(a[i, j], w), atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 5))))


def test_matmul_vector_operands(rng):
    v, m = rng.normal(size=4), rng.normal(size=(4, 3))
    np.testing.assert_allclose(T.matmul(T.Tensor(v), T.Tensor(m)).data, v @ m, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                  elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    s = T.softmax_rows(T.Tensor(x)).data
    assert np.all(s >= 0) and np.all(s <= 1)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-9)


def test_softmax_large_logits_are_stable():
    s = T.softmax(T.Tensor(np.array([1000.0, 1000.0, -1000.0]))).data
    np.testing.assert_allclose(s, [0.5, 0.5, 0.0], atol=1e-15)


def test_pointwise_dispatch_and_error(rng):
    x = rng.normal(size=(3, 4))
    np.testing.assert_allclose(T.pointwise(T.Tensor(x), "tanh").data, np.tanh(x))
    np.testing.assert_allclose(T.pointwise(T.Tensor(x), "relu").data, np.maximum(x, 0))
    np.testing.assert_allclose(T.pointwise(T.Tensor(x), "sigmoid").data, 1 / (1 + np.exp(-x)), atol=1e-15)
    with pytest.raises(ValueError, match="unknown pointwise"):
        T.pointwise(T.Tensor(x), "gelu")


def test_backward_returns_named_table():
    w = T.parameter(np.array([[1.0, 2.0], [3.0, 4.0]]), name="w")
    x = T.Tensor(np.array([1.0, -1.0]))
    table = T.backward(T.matmul(x, w).sum())
    np.testing.assert_array_equal(table["w"], [[1.0, 1.0], [-1.0, -1.0]])
    assert w.grad is table["w"]


def test_second_backward_raises():
    w = T.parameter(np.ones(3), name="w")
    loss = (w * w).sum()
    T.backward(loss)
    with pytest.raises(T.GraphError):
        T.backward(loss)


def test_backward_needs_scalar_and_attached_root():
    w = T.parameter(np.ones(3), name="w")
    with pytest.raises(T.GraphError, match="scalar"):
        T.backward(w * 2.0)
    with pytest.raises(T.GraphError, match="detached"):
        T.backward(T.Tensor(np.ones(3)).sum())


def test_gradients_accumulate_until_reset():
    w = T.parameter(np.array([2.0]), name="w")
    T.backward((w * w).sum())
    T.backward((w * w).sum())
    np.testing.assert_array_equal(w.grad, [8.0])
    T.zero_grad([w])
    assert w.grad is None


def test_no_grad_records_nothing():
    w = T.parameter(np.ones(2), name="w")
    with T.no_grad():
        y = (w * 3.0).sum()
    assert not y.requires_grad
    with pytest.raises(T.GraphError):
        T.backward(y)


def test_item_requires_single_element():
    with pytest.raises(T.DimensionError):
        T.Tensor(np.ones(2)).item()


def test_take_rows_rejects_out_of_range():
    with pytest.raises(IndexError):
        T.take_rows(T.Tensor(np.zeros((3, 2))), np.array([3]))


def test_shared_subexpression_gradient():
    # y = x*x + x reaches x along three paths
    x = T.parameter(np.array([3.0]), name="x")
    T.backward((x * x + x).sum())
    np.testing.assert_allclose(x.grad, [7.0])


OPS = {
    "sigmoid": T.sigmoid, "tanh": T.tanh, "relu": lambda x: T.relu(x + 0.05),
    "exp": T.exp, "log": lambda x: T.log(x * x + 1.0), "softmax": lambda x: T.softmax(x, axis=-1),
    "log_softmax": lambda x: T.log_softmax(x, axis=0), "mean": lambda x: x.mean(axis=0),
    "transpose": T.transpose, "getitem": lambda x: x[1:, ::2] * x[:-1, 1::2],
    "fancy_getitem": lambda x: x[np.array([0, 0, 2])], "div": lambda x: x / (x * x + 2.0),
    "concat": lambda x: T.concat([x, x * 2.0], axis=0), "stack": lambda x: T.stack([x, T.tanh(x)], axis=1),
    "clip": lambda x: T.clip(x, -0.5, 0.5),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    x = T.parameter(rng.normal(size=(3, 4)), name="x")
    report = grad_check(lambda p: weighted_sum(OPS[name](p["x"])), {"x": x}, tolerance=1e-5, max_entries=None)
    assert report.passed, str(report)


def test_matmul_gradients(rng):
    params = {"a": T.parameter(rng.normal(size=(2, 3, 4)), name="a"), "b": T.parameter(rng.normal(size=(4, 5)), name="b")}
    report = grad_check(lambda p: weighted_sum(T.matmul(p["a"], p["b"])), params, max_entries=None)
    assert report.passed, str(report)


def test_broadcast_gradients(rng):
    params = {"a": T.parameter(rng.normal(size=(3, 4)), name="a"), "b": T.parameter(rng.normal(size=(4,)), name="b")}
    report = grad_check(lambda p: weighted_sum(p["a"] * p["b"] + p["b"] - p["a"]), params, max_entries=None)
    assert report.passed, str(report)


def test_grad_check_detects_wrong_gradient():
    x = T.parameter(np.array([0.3, -0.2]), name="x")

    def bad(p):
        # forward is x**2 but the recorded gradient is that of 3 x**2
        out = T._make(p["x"].data ** 2, (p["x"],), lambda g: (6.0 * p["x"].data * g,))
        return out.sum()

    assert not grad_check(bad, {"x": x}).passed


def test_grad_check_flags_nondeterministic_loss():
    x = T.parameter(np.ones(2), name="x")
    noise = iter(np.linspace(0.0, 1.0, 100))
    with pytest.raises(NondeterministicLoss):
        grad_check(lambda p: (p["x"] * next(noise)).sum(), {"x": x})


def test_relative_error_formula():
    assert relative_error(np.array(1.0), np.array(1.0)) == 0.0
    np.testing.assert_allclose(relative_error(np.array(2.0), np.array(1.0)), 1 / 3)


# wire format ---------------------------------------------------------------------

def test_tensor_roundtrip_bit_exact(rng):
    arrays = {"a": rng.normal(size=(2, 3, 4)), "scalar": np.array(3.5), "empty": np.zeros((0, 2)), "ü": np.arange(3.0)}
    buf = io.BytesIO()
    for name, a in arrays.items():
        tensorio.write_tensor(buf, name, a)
    buf.seek(0)
    back = dict(tensorio.iter_tensors(buf))
    assert list(back) == list(arrays)
    for name, a in arrays.items():
        assert back[name].shape == a.shape
        assert back[name].tobytes() == a.astype("<f8").tobytes()


def test_wire_layout():
    buf = io.BytesIO()
    tensorio.write_tensor(buf, "xy", np.array([[1.0, 2.0]]))
    raw = buf.getvalue()
    expected = (b"R3T1" + (2).to_bytes(4, "little") + (1).to_bytes(8, "little") + (2).to_bytes(8, "little")
                + (2).to_bytes(4, "little") + b"xy" + np.array([1.0, 2.0], "<f8").tobytes())
    assert raw == expected


def test_bad_magic_and_truncation():
    with pytest.raises(tensorio.FormatError):
        tensorio.read_tensor(io.BytesIO(b"XXXX" + bytes(20)))
    buf = io.BytesIO()
    tensorio.write_tensor(buf, "a", np.ones(4))
    with pytest.raises(tensorio.FormatError):
        tensorio.read_tensor(io.BytesIO(buf.getvalue()[:-3]))
    assert tensorio.read_tensor(io.BytesIO(b"")) is None


def test_save_load_tensors(tmp_path, rng):
    data = {"w": rng.normal(size=(3, 3))}
    tensorio.save_tensors(tmp_path / "t.bin", data)
    np.testing.assert_array_equal(tensorio.load_tensors(tmp_path / "t.bin")["w"], data["w"])


def test_grad_check_floor_separates_unresolvable_entries():
    x = T.parameter(np.array([1.0, 1e-9]), name="x")
    # d/dx of 0.5 * x0^2 + 1e-9 * x1 ; the second entry is below the floor
    build = lambda p: (p["x"] * p["x"] * T.Tensor(np.array([0.5, 0.0])) + p["x"] * T.Tensor(np.array([0.0, 1e-9]))).sum()
    report = grad_check(build, {"x": x}, max_entries=None, floor=1e-6)
    assert report.passed
    assert report.below_floor == 1 and report.checked_entries["x"] == 1


def test_floor_entries_need_matching_absolute_accuracy():
    from r3net.gradcheck import GradCheckReport

    ok = GradCheckReport(tolerance=1e-5, floor=1e-4, below_floor=3, max_abs_below_floor=5e-10)
    bad = GradCheckReport(tolerance=1e-5, floor=1e-4, below_floor=3, max_abs_below_floor=5e-9)
    assert ok.passed and not bad.passed
