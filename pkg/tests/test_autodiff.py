import numpy as np
import pytest

from tagteam import autodiff as ad


@pytest.fixture(autouse=True)
def debug_mode():
    ad.set_debug(True)
    yield
    ad.set_debug(False)


def test_sigmoid_at_zero():
    assert ad.sigmoid(ad.leaf(0.0)).value == 0.5


def test_tanh_at_zero():
    assert ad.tanh(ad.leaf(0.0)).value == 0.0


def test_softmax_uniform_for_equal_logits():
    for a in (-3.0, 0.0, 7.5):
        out = ad.softmax(ad.leaf([a, a, a])).value
        np.testing.assert_allclose(out, [1 / 3, 1 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_softmax_normalizes():
    rng = np.random.default_rng(0)
    x = ad.leaf(rng.normal(size=(4, 6)))
    y = ad.softmax(x, axis=1).value
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_sigmoid_gradient_at_zero():
    x = ad.leaf(np.zeros(()), name="x")
    grads = ad.backward(ad.sigmoid(x))
    np.testing.assert_allclose(grads["x"], 0.25, rtol=0, atol=1e-15)


def test_sum_of_squares_gradient():
    x = ad.leaf([1.0, 2.0, 3.0], name="x")
    loss = ad.sum_over(ad.mul(x, x))
    grads = ad.backward(loss)
    np.testing.assert_array_equal(grads["x"], [2.0, 4.0, 6.0])


def test_matmul_chain_matches_finite_differences():
    rng = np.random.default_rng(7)
    params = {
        "a": rng.normal(size=(3, 4)),
        "b": rng.normal(size=(4, 2)),
        "v": rng.normal(size=2),
    }

    def loss_fn(p):
        a = ad.leaf(p["a"], name="a")
        b = ad.leaf(p["b"], name="b")
        v = ad.leaf(p["v"], name="v")
        return ad.sum_over(ad.tanh(ad.matmul(ad.matmul(a, b), v)))

    assert ad.finite_diff_check(loss_fn, params) <= 1e-6


def test_cubic_gradient_via_fd():
    def loss_fn(p):
        x = ad.leaf(p["x"], name="x")
        return ad.mul(ad.mul(x, x), x)

    err = ad.finite_diff_check(loss_fn, {"x": np.array(2.0)})
    assert err <= 1e-9
    x = ad.leaf(np.array(2.0), name="x")
    grads = ad.backward(ad.mul(ad.mul(x, x), x))
    np.testing.assert_allclose(grads["x"], 12.0, rtol=1e-12)


def test_fd_detects_corrupted_gradient():
    def loss_fn(p):
        x = ad.leaf(p["x"], name="x")
        out = ad.mul(x, x)
        good = out._bwd
        out._bwd = lambda g: (good(g)[0] + 1.0,)
        return out

    err = ad.finite_diff_check(loss_fn, {"x": np.array(1.5)})
    assert err >= 0.01


def test_fd_rejects_nondeterministic_loss():
    state = {"calls": 0}

    def loss_fn(p):
        state["calls"] += 1
        return ad.mul(ad.leaf(p["x"], name="x"), ad.leaf(float(state["calls"])))

    with pytest.raises(ad.GraphError, match="mask"):
        ad.finite_diff_check(loss_fn, {"x": np.array(1.0)})


@pytest.mark.parametrize(
    "builder",
    [
        lambda x, y: ad.add(x, y),
        lambda x, y: ad.sub(x, y),
        lambda x, y: ad.mul(x, y),
        lambda x, y: ad.maximum(x, y),
    ],
    ids=["add", "sub", "mul", "maximum"],
)
def test_binary_ops_match_fd_on_random_tensors(builder):
    rng = np.random.default_rng(11)
    for _ in range(25):
        shape = tuple(rng.integers(1, 4, size=rng.integers(1, 3)))
        params = {"x": rng.normal(size=shape), "y": rng.normal(size=shape)}

        def loss_fn(p):
            x = ad.leaf(p["x"], name="x")
            y = ad.leaf(p["y"], name="y")
            return ad.sum_over(ad.tanh(builder(x, y)))

        assert ad.finite_diff_check(loss_fn, params) <= 1e-6


@pytest.mark.parametrize(
    "builder",
    [
        lambda x: ad.sigmoid(x),
        lambda x: ad.tanh(x),
        lambda x: ad.softmax(x, axis=-1),
        lambda x: ad.logsumexp(x, axis=-1),
        lambda x: ad.logsumexp(x),
        lambda x: ad.max_over(x, axis=0),
        lambda x: ad.sum_over(x, axis=0),
        lambda x: ad.take(x, np.s_[1:]),
        lambda x: ad.reshape(x, (x.value.size,)),
    ],
    ids=[
        "sigmoid",
        "tanh",
        "softmax",
        "logsumexp-axis",
        "logsumexp-all",
        "max-axis",
        "sum-axis",
        "slice",
        "reshape",
    ],
)
def test_unary_ops_match_fd_on_random_tensors(builder):
    rng = np.random.default_rng(13)
    for _ in range(12):
        shape = (int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        params = {"x": rng.normal(size=shape)}
        direction = rng.normal(size=np.asarray(builder(ad.leaf(params["x"])).value).shape)

        def loss_fn(p):
            x = ad.leaf(p["x"], name="x")
            return ad.sum_over(ad.mul(builder(x), ad.leaf(direction)))

        assert ad.finite_diff_check(loss_fn, params) <= 1e-6


def test_every_op_kind_against_fd_on_100_random_tensors():
    rng = np.random.default_rng(99)
    unary = [
        ("sigmoid", ad.sigmoid),
        ("tanh", ad.tanh),
        ("softmax", lambda x: ad.softmax(x, axis=-1)),
        ("logsumexp", lambda x: ad.logsumexp(x, axis=-1)),
        ("max", lambda x: ad.max_over(x, axis=0)),
        ("slice", lambda x: ad.take(x, np.s_[1:])),
        ("reshape", lambda x: ad.reshape(x, (x.value.size,))),
        ("transpose", ad.transpose),
    ]
    binary = [("add", ad.add), ("sub", ad.sub), ("mul", ad.mul),
              ("maximum", ad.maximum), ("matmul", ad.matmul), ("concat", lambda a, b: ad.concat([a, b]))]
    for trial in range(100):
        shape = (int(rng.integers(2, 4)), int(rng.integers(2, 4)))
        x = rng.normal(size=shape)
        if trial % 2 == 0:
            name, op = unary[trial // 2 % len(unary)]
            params = {"x": x}

            def loss_fn(p, op=op):
                return ad.sum_over(ad.tanh(op(ad.leaf(p["x"], name="x"))))

        else:
            name, op = binary[trial // 2 % len(binary)]
            y = rng.normal(size=(shape[1], shape[0])) if name == "matmul" else rng.normal(size=shape)
            params = {"x": x, "y": y}

            def loss_fn(p, op=op):
                return ad.sum_over(ad.tanh(op(ad.leaf(p["x"], name="x"), ad.leaf(p["y"], name="y"))))

        assert ad.finite_diff_check(loss_fn, params) <= 1e-6, name


def test_gather_with_duplicate_indices_accumulates():
    def loss_fn(p):
        table = ad.leaf(p["t"], name="t")
        rows = ad.take(table, np.array([0, 2, 0, 1]))
        return ad.sum_over(ad.mul(rows, rows))

    rng = np.random.default_rng(3)
    params = {"t": rng.normal(size=(3, 2))}
    assert ad.finite_diff_check(loss_fn, params) <= 1e-6
    table = ad.leaf(params["t"], name="t")
    rows = ad.take(table, np.array([0, 0]))
    grads = ad.backward(ad.sum_over(rows))
    np.testing.assert_array_equal(grads["t"][0], [2.0, 2.0])


def test_concat_then_slice_roundtrips():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(4, 3))
    joined = ad.concat([ad.leaf(a), ad.leaf(b)], axis=0)
    np.testing.assert_array_equal(ad.take(joined, np.s_[:2]).value, a)
    np.testing.assert_array_equal(ad.take(joined, np.s_[2:]).value, b)


def test_max_over_matches_bruteforce_scan():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(5, 7))
    got = ad.max_over(ad.leaf(x), axis=0).value
    expect = np.array([max(x[i, j] for i in range(5)) for j in range(7)])
    np.testing.assert_array_equal(got, expect)


def test_maximum_tie_routes_to_first_argument():
    x = ad.leaf(np.array([1.0, 2.0]), name="x")
    y = ad.leaf(np.array([1.0, 0.0]), name="y")
    grads = ad.backward(ad.sum_over(ad.maximum(x, y)))
    np.testing.assert_array_equal(grads["x"], [1.0, 1.0])
    np.testing.assert_array_equal(grads["y"], [0.0, 0.0])


def test_evaluate_is_pure_and_rebinds():
    w = ad.leaf(np.array([[1.0, 2.0], [3.0, 4.0]]), name="w")
    x = ad.leaf(np.array([1.0, 1.0]), name="x")
    root = ad.sum_over(ad.matmul(w, x))
    first = ad.evaluate(root, {"x": np.array([2.0, 0.0])}).copy()
    second = ad.evaluate(root, {"x": np.array([2.0, 0.0])})
    assert first == second == 8.0
    np.testing.assert_array_equal(
        ad.evaluate(root, {"x": np.array([0.0, 1.0])}), np.array(6.0)
    )


def test_evaluate_rejects_bad_binding_shape():
    x = ad.leaf(np.zeros(3), name="x")
    root = ad.sum_over(x)
    with pytest.raises(ad.GraphError, match="shape"):
        ad.evaluate(root, {"x": np.zeros(4)})


def test_backward_unused_leaf_gets_zero_adjoint():
    x = ad.leaf(np.ones(2), name="x")
    unused = ad.leaf(np.ones(3), name="unused")
    grads = ad.backward(ad.sum_over(x), leaves={"x": x, "unused": unused})
    np.testing.assert_array_equal(grads["unused"], np.zeros(3))


def test_backward_requires_scalar_root():
    x = ad.leaf(np.ones(3), name="x")
    with pytest.raises(ad.GraphError, match="scalar"):
        ad.backward(ad.mul(x, x))


def test_backward_before_forward_errors():
    node = ad.Node("input", None, name="x")
    with pytest.raises(ad.GraphError, match="forward"):
        ad.backward(node)


def test_shape_mismatch_names_the_op():
    with pytest.raises(ad.GraphError, match="matmul"):
        ad.matmul(ad.leaf(np.zeros((2, 3))), ad.leaf(np.zeros((4, 2))))
    with pytest.raises(ad.GraphError, match="add"):
        ad.add(ad.leaf(np.zeros(3)), ad.leaf(np.zeros(4)))


def test_debug_mode_flags_nonfinite():
    huge = ad.leaf(np.array([1e308]))
    with np.errstate(over="ignore"), pytest.raises(ad.GraphError, match="non-finite"):
        ad.add(huge, huge)


def test_deep_chain_avoids_recursion_limit():
    node = ad.leaf(np.array(0.1), name="x")
    for _ in range(5000):
        node = ad.add(node, ad.leaf(np.array(0.0)))
    grads = ad.backward(node)
    np.testing.assert_array_equal(grads["x"], 1.0)
