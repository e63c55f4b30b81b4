import numpy as np
import pytest

from projselect.errors import InvalidInputError
from projselect.model import (
    ARCHITECTURE,
    Regressor,
    TrainConfig,
    adam_init,
    adam_step,
    backward_scores,
    bce_loss,
    bce_mask_gradient,
    downsample_image,
    forward_pipeline,
    forward_scores,
    load_checkpoint,
    regress,
    save_checkpoint,
    scan_step_gradient,
    train,
)
from projselect.phantom import ProjectionImage
from projselect.softrank import soft_rank
from projselect.ste import threshold_topk


def _random_scan(rng, n, side=32):
    return rng.uniform(0.0, 1.0, size=(n, side, side))


def _surrogate_objective(params, x, label, cfg):
    """Scalar whose finite differences equal the training gradient: the
    upstream loss-to-rank vector is locally constant (the mask is binary), so
    pairing it with the soft ranks linearizes the pipeline exactly."""
    reg = Regressor(params=params)
    scores, _ = forward_scores(reg, x)
    sr = soft_rank(scores, cfg.eps)
    mask = threshold_topk(sr.ranks, cfg.k)
    u0 = -bce_mask_gradient(mask.values, label, cfg.clamp)
    return float(np.dot(u0, sr.ranks))


# ---------------------------------------------------------------------------
# regressor
# ---------------------------------------------------------------------------


def test_zero_input_propagates_biases_only():
    reg = Regressor.initialize(0)
    for name in ("b1", "b2", "b3"):
        reg.params[name][:] = 0.0
    assert regress(reg, np.zeros((64, 64))) == 0.0
    # non-zero biases: closed-form bias path
    reg2 = Regressor.initialize(1)
    p = reg2.params
    h1 = np.maximum(p["b1"], 0.0)
    h2 = np.maximum(p["w2"] @ h1 + p["b2"], 0.0)
    expected = float((p["w3"] @ h2 + p["b3"])[0])
    assert np.isclose(regress(reg2, np.zeros((48, 48))), expected, atol=1e-12)


def test_regress_deterministic():
    rng = np.random.default_rng(2)
    reg = Regressor.initialize(5)
    img = rng.uniform(size=(64, 64))
    assert regress(reg, img) == regress(reg, img)
    assert regress(reg, ProjectionImage(img, pose=None)) == regress(reg, img)


def test_regress_rejects_bad_dimensions():
    reg = Regressor.initialize(0)
    with pytest.raises(InvalidInputError):
        regress(reg, np.zeros(64))


def test_initialization_seeded_and_bounded():
    a = Regressor.initialize(9)
    b = Regressor.initialize(9)
    c = Regressor.initialize(10)
    for name, shape in ARCHITECTURE:
        assert np.array_equal(a.params[name], b.params[name])
        assert a.params[name].shape == shape
    assert not np.array_equal(a.params["w1"], c.params["w1"])
    assert np.all(np.abs(a.params["w1"]) <= 1.0 / 32.0)


def test_downsample_preserves_mean():
    rng = np.random.default_rng(3)
    img = rng.uniform(size=(64, 64))
    small = downsample_image(img)
    assert small.shape == (32, 32)
    assert np.isclose(small.mean(), img.mean(), atol=1e-12)
    odd = downsample_image(rng.uniform(size=(375, 375)))
    assert odd.shape == (32, 32)


def test_parameter_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    reg = Regressor.initialize(7)
    img = rng.uniform(size=(32, 32))
    x = downsample_image(img).ravel()[None, :]
    _, cache = forward_scores(reg, x)
    grads = backward_scores(reg, cache, np.ones(1))
    h = 1e-4
    checked = 0
    for name, _ in ARCHITECTURE:
        flat = grads[name].ravel()
        informative = np.flatnonzero(np.abs(flat) > 1e-6)
        if informative.size == 0:
            continue
        for idx in rng.choice(informative, size=min(15, informative.size), replace=False):
            params = {k: v.copy() for k, v in reg.params.items()}
            params[name].flat[idx] += h
            plus = regress(Regressor(params=params), img)
            params[name].flat[idx] -= 2 * h
            minus = regress(Regressor(params=params), img)
            fd = (plus - minus) / (2 * h)
            assert abs(fd - flat[idx]) / max(abs(fd), 1e-10) < 1e-4
            checked += 1
    assert checked >= 50


# ---------------------------------------------------------------------------
# pipeline forward
# ---------------------------------------------------------------------------


def test_pipeline_single_projection():
    rng = np.random.default_rng(5)
    reg = Regressor.initialize(0)
    cfg = TrainConfig(k=1)
    result = forward_pipeline(reg, _random_scan(rng, 1), cfg)
    assert np.array_equal(result.mask.values, [1])


def test_pipeline_constant_scores_tie_to_centroid():
    reg = Regressor.initialize(0)
    for name, _ in ARCHITECTURE:
        reg.params[name][:] = 0.0
    rng = np.random.default_rng(6)
    scan = _random_scan(rng, 7)
    low_k = TrainConfig(k=3)  # (N+1)/2 = 4 > 3: nothing selected
    result = forward_pipeline(reg, scan, low_k)
    assert np.allclose(result.ranks, 4.0)
    assert result.mask.count == 0
    high_k = TrainConfig(k=4)  # boundary inclusive: everything selected
    assert forward_pipeline(reg, scan, high_k).mask.count == 7


def test_pipeline_paper_operating_point():
    rng = np.random.default_rng(7)
    reg = Regressor.initialize(0)
    cfg = TrainConfig(k=100, eps=0.01)
    scan = rng.uniform(size=(1000, 16, 16))
    result = forward_pipeline(reg, scan, cfg)
    assert result.scores.shape == (1000,)
    assert result.ranks.shape == (1000,)
    assert abs(result.ranks.sum() - 1000 * 1001 / 2) < 1e-6


# ---------------------------------------------------------------------------
# losses and optimizer
# ---------------------------------------------------------------------------


def test_bce_closed_forms():
    label = np.array([1, 0, 1, 0])
    same = np.array([1, 0, 1, 0])
    flipped = np.array([0, 1, 0, 1])
    half = np.array([1, 1, 0, 0])
    assert np.isclose(bce_loss(same, label, 0.01), -np.log(0.99), atol=1e-12)
    assert np.isclose(bce_loss(flipped, label, 0.01), -np.log(0.01), atol=1e-12)
    expected = 0.5 * (-np.log(0.99) - np.log(0.01))
    assert np.isclose(bce_loss(half, label, 0.01), expected, atol=1e-12)


def test_bce_bounds():
    rng = np.random.default_rng(8)
    clamp = 0.02
    for _ in range(50):
        mask = rng.integers(0, 2, size=20)
        label = rng.integers(0, 2, size=20)
        loss = bce_loss(mask, label, clamp)
        assert -np.log(1 - clamp) - 1e-12 <= loss <= -np.log(clamp) + 1e-12


def test_bce_validation():
    with pytest.raises(InvalidInputError):
        bce_loss(np.ones(3), np.ones(4), 0.01)
    with pytest.raises(InvalidInputError):
        bce_loss(np.ones(3), np.ones(3), 0.6)


def test_adam_first_step_is_signed_lr():
    cfg = TrainConfig(learning_rate=0.05)
    params = {"p": np.array([1.0, -2.0, 3.0])}
    grads = {"p": np.array([0.3, -0.7, 1.9])}
    new, _ = adam_step(params, grads, adam_init(params), 1, cfg)
    assert np.allclose(new["p"], params["p"] - 0.05 * np.sign(grads["p"]), atol=1e-6)


def test_adam_zero_gradient_is_fixed_point():
    cfg = TrainConfig()
    params = {"p": np.array([1.0, -2.0])}
    state = adam_init(params)
    for t in (1, 2, 3):
        params, state = adam_step(params, {"p": np.zeros(2)}, state, t, cfg)
    assert np.array_equal(params["p"], [1.0, -2.0])


def test_adam_descends_quadratic():
    cfg = TrainConfig(learning_rate=0.1)
    params = {"x": np.array([1.0])}
    state = adam_init(params)
    trace = [1.0]
    for t in (1, 2, 3):
        grads = {"x": 2.0 * params["x"]}
        params, state = adam_step(params, grads, state, t, cfg)
        trace.append(float(params["x"][0]))
    assert trace[0] > trace[1] > trace[2] > trace[3]


def test_adam_shape_mismatch():
    cfg = TrainConfig()
    params = {"p": np.zeros(3)}
    with pytest.raises(InvalidInputError):
        adam_step(params, {"p": np.zeros(4)}, adam_init(params), 1, cfg)


# ---------------------------------------------------------------------------
# end-to-end gradient and training
# ---------------------------------------------------------------------------


def test_pipeline_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    n, k = 12, 3
    scan = _random_scan(rng, n)
    x = np.stack([downsample_image(im).ravel() for im in scan])
    label = np.zeros(n)
    label[rng.permutation(n)[:k]] = 1
    reg = Regressor.initialize(13)
    for eps in (0.3, 1.0):
        cfg = TrainConfig(eps=eps, k=k)
        _, grads, _ = scan_step_gradient(reg, x, label, cfg)
        flat_grad = np.concatenate([grads[name].ravel() for name, _ in ARCHITECTURE])
        h = 1e-5
        for _ in range(20):
            direction = {name: rng.normal(size=shape) for name, shape in ARCHITECTURE}
            flat_dir = np.concatenate([direction[name].ravel() for name, _ in ARCHITECTURE])
            flat_dir /= np.linalg.norm(flat_dir)
            offset = 0
            for name, shape in ARCHITECTURE:
                size = int(np.prod(shape))
                direction[name] = flat_dir[offset : offset + size].reshape(shape)
                offset += size
            plus = {name: reg.params[name] + h * direction[name] for name, _ in ARCHITECTURE}
            minus = {name: reg.params[name] - h * direction[name] for name, _ in ARCHITECTURE}
            fd = (_surrogate_objective(plus, x, label, cfg) - _surrogate_objective(minus, x, label, cfg)) / (2 * h)
            analytic = float(np.dot(flat_grad, flat_dir))
            assert abs(fd - analytic) / max(abs(analytic), 1e-10) < 1e-4


def test_training_learns_intensity_rule():
    rng = np.random.default_rng(0)
    n, k = 30, 5
    images = _random_scan(rng, n)
    label = np.zeros(n, dtype=np.int64)
    label[np.argsort(-images.mean(axis=(1, 2)))[:k]] = 1
    cfg = TrainConfig(learning_rate=1e-3, epochs=200, eps=1.0, k=k, seed=0)
    reg, history = train([(images, label)], cfg)
    assert history.shape == (200, 1)
    assert history[-1, 0] < history[0, 0]
    result = forward_pipeline(reg, images, cfg)
    assert int((result.mask.values * label).sum()) == k


def test_zero_learning_rate_freezes_loss():
    rng = np.random.default_rng(1)
    images = _random_scan(rng, 10)
    label = np.zeros(10)
    label[:2] = 1
    cfg = TrainConfig(learning_rate=1e-30, epochs=5, k=2, seed=0)
    _, history = train([(images, label)], cfg)
    assert np.all(history == history[0, 0])


def test_training_deterministic_per_seed():
    rng = np.random.default_rng(2)
    images = _random_scan(rng, 8)
    label = np.zeros(8)
    label[[1, 5]] = 1
    cfg = TrainConfig(learning_rate=1e-3, epochs=10, k=2, seed=4)
    reg1, hist1 = train([(images, label)], cfg)
    reg2, hist2 = train([(images, label)], cfg)
    assert np.array_equal(hist1, hist2)
    for name, _ in ARCHITECTURE:
        assert np.array_equal(reg1.params[name], reg2.params[name])


def test_training_validation_errors():
    cfg = TrainConfig(k=2)
    with pytest.raises(InvalidInputError):
        train([], cfg)
    rng = np.random.default_rng(3)
    with pytest.raises(InvalidInputError):
        train([(_random_scan(rng, 4), np.zeros(5))], cfg)
    with pytest.raises(InvalidInputError):
        train(
            [(_random_scan(rng, 4), np.zeros(4)), (_random_scan(rng, 6), np.zeros(6))],
            cfg,
        )


def test_checkpoint_round_trip(tmp_path):
    reg = Regressor.initialize(21)
    cfg = TrainConfig(k=7, epochs=3)
    path = tmp_path / "checkpoint.bin"
    save_checkpoint(path, reg, cfg)
    loaded, header = load_checkpoint(path)
    for name, _ in ARCHITECTURE:
        assert np.array_equal(loaded.params[name], reg.params[name].astype("<f4").astype(float))
    assert header["config"]["k"] == 7
    assert header["seed"] == 0
    # byte-identical on re-save
    path2 = tmp_path / "checkpoint2.bin"
    save_checkpoint(path2, reg, cfg)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(InvalidInputError):
        load_checkpoint(path)
