import numpy as np
import pytest

from hepadet.autodiff import (
    SGD,
    Graph,
    Tensor,
    all_passed,
    backward,
    batchnorm,
    conv2d,
    dense,
    dropout,
    finite_diff_check,
    generator,
    load_checkpoint,
    maxpool2d,
    relu,
    save_checkpoint,
    sgd_step,
    softmax,
    softmax_ce,
)
from hepadet.errors import DegenerateBatchError, ExtentError, LabelError, NonScalarLossError, ShapeError


def composed_graph(seed: int):
    """conv -> bn -> relu -> pool -> dense -> softmax_ce on a batch of four."""
    g = Graph("check", seed=seed)
    x = g.input("x")
    w = g.parameter("conv.w", shape=(3, 2, 3, 3), fan_in=18)
    conv = g.apply("conv2d", [x, w], pad=(1, 1))
    gamma = g.parameter("bn.gamma", value=np.ones(3))
    beta = g.parameter("bn.beta", value=np.zeros(3))
    normed = g.apply("batchnorm", [conv, gamma, beta], key="bn")
    pooled = g.apply("maxpool2d", [g.apply("relu", [normed])])
    flat = g.apply("reshape", [pooled], shape=(4, 27))
    fc_w = g.parameter("fc.w", shape=(27, 4), fan_in=27)
    fc_b = g.parameter("fc.b", value=np.zeros(4))
    logits = g.apply("dense", [flat, fc_w, fc_b])
    g.apply("softmax_ce", [logits, g.input("labels")], label="loss")
    g.validate()
    rng = generator(seed, "feeds")
    feeds = {"x": rng.normal(size=(4, 2, 6, 6)), "labels": np.array([0, 1, 2, 3])}
    return g, feeds


@pytest.mark.parametrize("seed", range(10))
def test_composed_graph_gradients(seed):
    g, feeds = composed_graph(seed)
    g.run(feeds, targets=["loss"], mode="train", seed=seed)
    report = finite_diff_check(g, "loss", step=1e-3, tol=1e-4, coords=16)
    assert set(report) == {"conv.w", "bn.gamma", "bn.beta", "fc.w", "fc.b"}
    assert all_passed(report), report
    assert all(result.coords_checked > 0 for result in report.values())


def test_gradcheck_restores_running_statistics():
    g, feeds = composed_graph(0)
    g.run(feeds, targets=["loss"], mode="train")
    before = {key: value.copy() for key, value in g.buffers.items()}
    finite_diff_check(g, "loss", coords=4)
    assert before.keys() == g.buffers.keys()
    for key in before:
        np.testing.assert_array_equal(before[key], g.buffers[key])


@pytest.mark.parametrize("kind", ["embedded_dot", "gaussian"])
def test_attention_gradients(kind):
    rng = generator(5, "attention")
    g = Graph("attention", seed=5)
    q = g.parameter("q", value=rng.normal(size=(1, 2, 3, 3)) * 0.5)
    k = g.parameter("k", value=rng.normal(size=(1, 2, 3, 3)) * 0.5)
    v = g.parameter("v", value=rng.normal(size=(1, 3, 3, 3)))
    out = g.apply("attention", [q, k, v], kind=kind)
    weighted = g.apply("mul", [out, g.input("target")])
    g.apply("sum", [weighted], label="loss")
    feeds = {"target": rng.normal(size=(1, 3, 3, 3))}
    g.run(feeds, targets=["loss"])
    assert all_passed(finite_diff_check(g, "loss"))


def test_reshaping_ops_gradients():
    """Depth pooling, upsampling, concatenation and transposition feeding a logistic loss."""
    rng = generator(9, "reshaping")
    g = Graph("reshaping", seed=9)
    a = g.parameter("a", value=rng.normal(size=(2, 8, 2, 2)))
    b = g.parameter("b", value=rng.normal(size=(2, 2, 4, 4)))
    pooled = g.apply("depth_maxpool", [a], groups=4, window=3, stride=2, pad=1)
    up = g.apply("upsample_nearest", [pooled], factor=2)
    joined = g.apply("concat", [up, b], axis=1)
    swapped = g.apply("transpose", [joined], axes=(0, 2, 3, 1))
    logits = g.apply("reshape", [swapped], shape=(2, -1))
    g.apply("sigmoid_bce", [logits, g.input("targets")], label="loss")
    targets = (rng.random((2, 96)) > 0.5).astype(float)
    targets[:, :5] = -1
    g.run({"targets": targets}, targets=["loss"])
    assert all_passed(finite_diff_check(g, "loss"))


def test_roi_maxpool_gradients():
    rng = generator(11, "roi")
    g = Graph("roi", seed=11)
    features = g.parameter("features", value=rng.normal(size=(2, 3, 8, 8)))
    pooled = g.apply("roi_maxpool", [features, g.input("rois")], pool=2, stride=2)
    g.apply("sum", [g.apply("mul", [pooled, g.input("w")])], label="loss")
    rois = np.array([[0, 0, 0, 8, 8], [1, 4, 2, 14, 12]], dtype=float)
    g.run({"rois": rois, "w": rng.normal(size=(2, 3, 2, 2))}, targets=["loss"])
    assert all_passed(finite_diff_check(g, "loss"))


def test_tensor_extents():
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0, 3.0], shape=(2, 2))
    with pytest.raises(ExtentError):
        Tensor(np.zeros((2, 0)))
    assert Tensor(np.zeros((0, 3))).shape == (0, 3)
    assert Tensor([1, 2, 3, 4], shape=(2, 2)).data.dtype == np.float64


def test_conv2d_sums_windows():
    out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))))
    np.testing.assert_array_equal(out.array, np.full((1, 1, 2, 2), 4.0))
    padded = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((2, 1, 3, 3))), pad=(1, 1))
    assert padded.shape == (1, 2, 3, 3)
    assert padded.array[0, 0, 1, 1] == 9.0
    assert padded.array[0, 0, 0, 0] == 4.0


def test_maxpool_rejects_oversized_window():
    with pytest.raises(ExtentError):
        maxpool2d(Tensor(np.ones((1, 1, 1, 1))), window=(2, 2))


def test_batchnorm_needs_two_samples_in_train_mode():
    x = Tensor(np.ones((1, 2, 2, 2)))
    with pytest.raises(DegenerateBatchError):
        batchnorm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), mode="train")
    out = batchnorm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), mode="infer")
    np.testing.assert_allclose(out.array, 1.0 / np.sqrt(1.0 + 1e-5))


def test_batchnorm_updates_running_statistics():
    running = {}
    x = Tensor(np.arange(16, dtype=float).reshape(2, 2, 2, 2))
    batchnorm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), mode="train", running=running)
    assert set(running) == {"bn.running_mean", "bn.running_var"}
    assert running["bn.running_mean"][0] == pytest.approx(0.1 * np.mean([0, 1, 2, 3, 8, 9, 10, 11]))


def test_softmax_cross_entropy():
    assert softmax_ce(Tensor(np.zeros((3, 4))), [0, 1, 3]) == pytest.approx(np.log(4))
    with pytest.raises(LabelError):
        softmax_ce(Tensor(np.zeros((1, 4))), [4])
    np.testing.assert_allclose(softmax(np.zeros(4)), 0.25)


def test_relu_and_dropout():
    np.testing.assert_array_equal(relu(Tensor([[-1.0, 2.0]])).array, [[0.0, 2.0]])
    x = Tensor(np.ones((50, 40)))
    np.testing.assert_array_equal(dropout(x, 0.5, mode="infer").array, x.array)
    first = dropout(x, 0.5, mode="train", seed=3).array
    np.testing.assert_array_equal(first, dropout(x, 0.5, mode="train", seed=3).array)
    assert set(np.unique(first)) <= {0.0, 2.0}
    assert first.mean() == pytest.approx(1.0, abs=0.1)


def test_backward_needs_scalar_loss():
    g = Graph()
    w = g.parameter("w", value=np.ones(3))
    doubled = g.apply("scale", [w], factor=2.0, label="doubled")
    g.run({}, targets=[doubled])
    with pytest.raises(NonScalarLossError):
        backward(g, "doubled")


def test_unused_parameters_fail_validation():
    g = Graph()
    g.parameter("orphan", value=np.zeros(2))
    g.apply("sum", [g.parameter("used", value=np.ones(2))])
    with pytest.raises(ValueError, match="orphan"):
        g.validate()


def test_shared_parameter_accumulates_gradient():
    g = Graph()
    w = g.parameter("w", value=np.array([1.0, 2.0]))
    same = g.parameter("w")
    assert same == w
    g.apply("sum", [g.apply("mul", [w, same])], label="loss")
    g.run({}, targets=["loss"])
    np.testing.assert_allclose(backward(g, "loss")["w"], [2.0, 4.0])


def test_sgd_momentum_step():
    params, state = sgd_step({"w": np.array([1.0])}, {"w": np.array([1.0])}, lr=0.1, momentum=0.9)
    assert params["w"][0] == pytest.approx(0.9)
    params, state = sgd_step(params, {"w": np.array([1.0])}, lr=0.1, momentum=0.9, state=state)
    assert state["w"][0] == pytest.approx(1.9)
    assert params["w"][0] == pytest.approx(0.71)
    with pytest.raises(ValueError):
        sgd_step(params, {"w": np.array([1.0])}, lr=0.0)


def test_sgd_clips_global_norm():
    g = Graph()
    g.apply("sum", [g.parameter("w", value=np.zeros(4))])
    sgd = SGD(g, lr=1.0, momentum=0.0, clip_norm=5.0)
    norm = sgd.step({"w": np.full(4, 5.0)})
    assert norm == pytest.approx(10.0)
    np.testing.assert_allclose(g.get_weights()["w"], -2.5)


def test_generator_streams_are_keyed():
    a = generator(1, "dropout", 3).random(5)
    np.testing.assert_array_equal(a, generator(1, "dropout", 3).random(5))
    assert not np.array_equal(a, generator(1, "dropout", 4).random(5))
    assert not np.array_equal(a, generator(2, "dropout", 3).random(5))


def test_checkpoint_round_trip(tmp_path):
    params = {"conv.w": np.arange(6, dtype=float).reshape(2, 3), "fc.b": np.array([0.5])}
    buffers = {"bn.running_mean": np.array([1.0, 2.0])}
    gate = {"weights": np.array([0.1, -0.2]), "bias": np.array(0.3)}
    path = save_checkpoint(tmp_path / "model.json", params, buffers, gate, {"epoch": 3})
    loaded = load_checkpoint(path)
    assert loaded.metadata == {"epoch": 3}
    for name, value in params.items():
        np.testing.assert_array_equal(loaded.parameters[name], value)
    np.testing.assert_array_equal(loaded.buffers["bn.running_mean"], buffers["bn.running_mean"])
    assert loaded.gate["bias"].shape == ()
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.json")


def test_conv2d_spot_values():
    image = Tensor(np.arange(1, 10, dtype=float).reshape(1, 1, 3, 3))
    out = conv2d(image, Tensor(np.ones((1, 1, 2, 2))))
    np.testing.assert_array_equal(out.array[0, 0], [[12.0, 16.0], [24.0, 28.0]])


def test_conv2d_is_linear(rng):
    x, y = rng.normal(size=(2, 2, 3, 7, 7))
    w = Tensor(rng.normal(size=(4, 3, 3, 3)))
    combined = conv2d(Tensor(2.5 * x - 0.5 * y), w, stride=(2, 2), pad=(1, 1)).array
    parts = 2.5 * conv2d(Tensor(x), w, stride=(2, 2), pad=(1, 1)).array - 0.5 * conv2d(
        Tensor(y), w, stride=(2, 2), pad=(1, 1)
    ).array
    np.testing.assert_allclose(combined, parts, rtol=1e-10, atol=1e-10)


def test_conv2d_stem_extent():
    out = conv2d(Tensor(np.ones((1, 3, 448, 448))), Tensor(np.ones((64, 3, 7, 7))), stride=2, pad=3)
    assert out.shape == (1, 64, 224, 224)
    assert out.array[0, 0, 112, 112] == 147.0


def test_batchnorm_standardises_each_channel(rng):
    x = Tensor(rng.normal(loc=3.0, scale=2.0, size=(8, 3, 5, 5)))
    out = batchnorm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), mode="train").array
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, rtol=1e-4)
    shift = np.array([0.5, -1.0, 2.0])
    flat = batchnorm(x, Tensor(np.zeros(3)), Tensor(shift), mode="train").array
    np.testing.assert_array_equal(flat, np.broadcast_to(shift[None, :, None, None], flat.shape))


def test_dropout_keeps_half_the_units():
    out = dropout(Tensor(np.ones((1000, 1000))), 0.5, mode="train", seed=11).array
    assert abs((out > 0).mean() - 0.5) < 0.002


def test_dropout_preserves_expectation():
    values = np.array([[1.0, 2.0, 3.0, 4.0]])
    samples = np.array([dropout(Tensor(values), 0.5, mode="train", seed=seed).array.mean() for seed in range(10_000)])
    # Each output is 0 or 2x with equal odds.
    standard_error = np.sqrt(np.mean(values ** 2) / values.size / samples.size)
    assert abs(samples.mean() - values.mean()) < 3 * standard_error
    np.testing.assert_array_equal(dropout(Tensor(values), 0.0, mode="train", seed=1).array, values)


def test_dense_accepts_an_empty_batch(rng):
    out = dense(Tensor(np.zeros((0, 3))), Tensor(rng.normal(size=(3, 2))), Tensor(np.ones(2)))
    assert out.shape == (0, 2)
    assert softmax_ce(Tensor(np.zeros((0, 4))), []) == 0.0


def test_softmax_cross_entropy_spot_values():
    assert softmax_ce(Tensor([[1.0, 2.0, 3.0]]), [2]) == pytest.approx(0.40760596, abs=1e-8)
    assert softmax_ce(Tensor([[10.0, -10.0]]), [0]) == pytest.approx(2.061e-9, rel=1e-3)
    assert softmax_ce(Tensor([[10.0, -10.0]]), [1]) == pytest.approx(20.0, rel=1e-9)
    np.testing.assert_allclose(softmax(np.array([1000.0, 0.0])), [1.0, 0.0])


def test_backward_of_sum_is_ones():
    g = Graph()
    w = g.parameter("w", value=np.arange(6.0).reshape(2, 3))
    g.apply("sum", [w], label="loss")
    g.run({}, targets=["loss"])
    np.testing.assert_array_equal(backward(g, "loss")["w"], np.ones((2, 3)))


def test_zero_scale_stops_gradients():
    g = Graph()
    w = g.parameter("w", value=np.array([1.0, -2.0, 3.0]))
    g.apply("scale", [g.apply("sum", [g.apply("mul", [w, w])])], factor=0.0, label="loss")
    g.run({}, targets=["loss"])
    np.testing.assert_array_equal(backward(g, "loss")["w"], np.zeros(3))


@pytest.mark.parametrize("squared", [True, False])
def test_gradcheck_is_exact_on_polynomials(squared):
    g = Graph()
    w = g.parameter("w", value=np.array([0.5, -1.5, 2.0, 3.0]))
    g.apply("sum", [g.apply("mul", [w, w]) if squared else w], label="loss")
    g.run({}, targets=["loss"])
    report = finite_diff_check(g, "loss", tol=1e-9)
    assert report["w"].coords_checked == 4 and report["w"].kinks_skipped == 0
    assert report["w"].max_rel_error < 1e-9 and all_passed(report)
