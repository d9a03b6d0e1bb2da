import numpy as np
import pytest

from loha.collector import Sample
from loha.gridmap import generate_random
from loha.model import (
    FeatureExtractor,
    ResidualModel,
    feature_length,
    featurize,
    gradient_check,
    init_model,
    load_model,
    predict_residual,
    save_model,
    train,
)
from loha.statespace import Car4D, CarState, Grid2D, GridState


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def test_feature_lengths():
    assert feature_length("grid2d", 4) == 2 * 81 + 1
    assert feature_length("car4d", 4) == 2 * 81 + 12 + 5 + 1


def test_empty_grid_occupancy_patch_is_zero():
    g = generate_random(32, 32, 0.0, 0)
    x = featurize(g, GridState(16, 16), GridState(30, 30), 4)
    assert np.all(x[:81] == 0.0)
    assert x[-1] == 1.0


def test_corner_state_pads_with_obstacles():
    g = generate_random(32, 32, 0.0, 0)
    K = 4
    x = featurize(g, GridState(0, 0), GridState(30, 30), K)
    occ = x[: (2 * K + 1) ** 2].reshape(2 * K + 1, 2 * K + 1)
    assert np.all(occ[:K, :] == 1.0)   # rows above the map
    assert np.all(occ[:, :K] == 1.0)   # columns left of the map
    assert np.all(occ[K:, K:] == 0.0)  # in-map quadrant is free


def test_delta_h_decreases_toward_eastern_goal():
    g = generate_random(32, 32, 0.0, 0)
    K = 4
    s = GridState(10, 16)
    x = featurize(g, s, GridState(30, 16), K)
    n = (2 * K + 1) ** 2
    dh = x[n:2 * n].reshape(2 * K + 1, 2 * K + 1)
    center_row = dh[K]
    assert all(a > b for a, b in zip(center_row, center_row[1:]))
    assert center_row[K] == 0.0  # the state's own cell
    # scaled by 1/K: neighbors differ by 1/K
    assert center_row[K + 1] == pytest.approx(-1.0 / K)


def test_car_one_hots():
    g = generate_random(32, 32, 0.0, 0)
    K = 3
    s = CarState(21, 21, 7, -1)
    x = featurize(g, s, CarState(50, 50, 0, 0), K)
    n = (2 * K + 1) ** 2
    theta = x[2 * n: 2 * n + 12]
    v = x[2 * n + 12: 2 * n + 17]
    assert theta.sum() == 1.0 and theta[7] == 1.0
    assert v.sum() == 1.0 and v[0] == 1.0  # v=-1 maps to slot 0
    assert x[-1] == 1.0


def test_featurize_deterministic_and_batch_consistent():
    g = generate_random(24, 24, 0.3, 5)
    ex = FeatureExtractor(g, CarState(41, 41, 0, 0), 4)
    states = [CarState(11, 11, 2, 1), CarState(21, 9, 0, 0), CarState(11, 11, 2, 1)]
    batch = ex.features_batch(states)
    assert np.array_equal(batch[0], batch[2])
    for i, s in enumerate(states):
        assert np.array_equal(batch[i], ex.features(s))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def make_sample(x, target, alpha=1.0, K=3, state=None):
    return Sample("m", state or GridState(0, 0), K, target, alpha, True,
                  "oracle", "p", 0.0, features=np.asarray(x, dtype=float))


def test_single_sample_memorization():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, size=8)
    sample = make_sample(x, 2.0)
    model = train([sample], {"hidden": [16], "lr": 0.02, "epochs": 400, "batch_size": 1}, seed=1)
    assert abs(model.forward(x[None, :])[0] - 2.0) < 0.05


def test_alpha_weighting_pulls_toward_heavier_target():
    x = np.array([1.0, 0.5, 0.25, 1.0])
    low = make_sample(x, 0.0, alpha=0.5)
    high = make_sample(x, 4.0, alpha=1.0)
    model = train([low, high], {"hidden": [8], "lr": 0.02, "epochs": 600, "batch_size": 2}, seed=3)
    pred = model.forward(x[None, :])[0]
    # weighted least squares optimum is (0.5*0 + 1.0*4) / 1.5 = 8/3
    assert abs(pred - 8.0 / 3.0) < 0.15
    assert abs(pred - 4.0) < abs(pred - 0.0)


def test_training_is_bit_deterministic():
    rng = np.random.default_rng(9)
    samples = [make_sample(rng.uniform(0, 1, 6), float(rng.uniform(0, 3)),
                           alpha=float(rng.uniform(0.25, 1.0))) for _ in range(40)]
    m1 = train(samples, {"hidden": [12, 12], "epochs": 5}, seed=7)
    m2 = train(samples, {"hidden": [12, 12], "epochs": 5}, seed=7)
    for w1, w2 in zip(m1.weights, m2.weights):
        assert np.array_equal(w1, w2)
    for b1, b2 in zip(m1.biases, m2.biases):
        assert np.array_equal(b1, b2)


def test_loss_history_non_increasing_with_small_lr():
    rng = np.random.default_rng(11)
    samples = [make_sample(rng.uniform(0, 1, 10), float(rng.uniform(0, 2)))
               for _ in range(64)]
    model = train(samples, {"hidden": [16], "lr": 5e-4, "epochs": 25, "batch_size": 16}, seed=2)
    losses = model.loss_history
    assert len(losses) == 26
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_common_alpha_scale_does_not_move_optimum():
    rng = np.random.default_rng(13)
    x1, x2 = rng.uniform(0, 1, 5), rng.uniform(0, 1, 5)
    base = [make_sample(x1, 1.0, alpha=0.5), make_sample(x2, 2.0, alpha=1.0)]
    scaled = [make_sample(x1, 1.0, alpha=0.25), make_sample(x2, 2.0, alpha=0.5)]
    hp = {"hidden": [8], "lr": 0.03, "epochs": 1500, "batch_size": 2}
    m_base = train(base, hp, seed=5)
    m_scaled = train(scaled, {**hp, "epochs": 3000}, seed=5)
    for x in (x1, x2):
        assert m_base.predict(x) == pytest.approx(m_scaled.predict(x), abs=0.05)


def test_empty_and_mixed_datasets_rejected():
    with pytest.raises(ValueError, match="empty dataset"):
        train([])
    a = make_sample(np.ones(4), 1.0, K=3)
    b = make_sample(np.ones(4), 1.0, K=4)
    with pytest.raises(ValueError, match="mixed K"):
        train([a, b])
    c = make_sample(np.ones(4), 1.0, K=3, state=CarState(3, 3, 0, 0))
    with pytest.raises(ValueError, match="mixed domains"):
        train([a, c])


def test_alpha_weighting_flag_off_changes_fit():
    x = np.array([1.0, 0.5, 1.0])
    low = make_sample(x, 0.0, alpha=0.1)
    high = make_sample(x, 4.0, alpha=1.0)
    hp = {"hidden": [8], "lr": 0.02, "epochs": 800, "batch_size": 2}
    weighted = train([low, high], hp, seed=1).predict(x)
    unweighted = train([low, high], {**hp, "alpha_weighting": False}, seed=1).predict(x)
    assert weighted > unweighted  # ignoring alpha pulls toward the mean (2.0)
    assert unweighted == pytest.approx(2.0, abs=0.1)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def random_checkable_pair(rng, hidden):
    """Model/sample pair with pre-activations nudged away from rectifier
    kinks so finite differences stay on one linear piece."""
    dim = int(rng.integers(4, 10))
    for _ in range(100):
        model = init_model(dim, hidden, seed=int(rng.integers(0, 2**31)))
        for b in model.biases:
            b += rng.uniform(0.05, 0.3, size=b.shape)
        x = rng.uniform(0.1, 1.0, size=dim)
        pres, _ = model._forward_cached(x[None, :])
        if min(float(np.min(np.abs(z))) for z in pres) > 1e-3:
            sample = make_sample(x, float(rng.uniform(0.0, 2.0)),
                                 alpha=float(rng.uniform(0.3, 1.0)))
            return model, sample
    raise AssertionError("could not build a kink-free pair")


def test_gradient_check_random_pairs():
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(50):
        hidden = [int(rng.integers(4, 12)) for _ in range(int(rng.integers(0, 3)))]
        model, sample = random_checkable_pair(rng, hidden)
        worst = max(worst, gradient_check(model, sample))
    assert worst < 1e-4


def test_gradient_check_linear_model_is_exact():
    rng = np.random.default_rng(19)
    model, sample = random_checkable_pair(rng, [])
    assert len(model.weights) == 1
    assert gradient_check(model, sample) < 1e-7


def test_zero_alpha_sample_has_zero_gradient():
    rng = np.random.default_rng(23)
    model, sample = random_checkable_pair(rng, [6])
    sample.alpha = 0.0
    x = np.asarray(sample.features)[None, :]
    _, gw, gb = model.loss_and_grads(x, np.array([sample.target]), np.array([0.0]))
    assert all(np.all(g == 0.0) for g in gw)
    assert all(np.all(g == 0.0) for g in gb)
    assert gradient_check(model, sample) == 0.0


# ---------------------------------------------------------------------------
# Persistence and prediction
# ---------------------------------------------------------------------------

def test_save_load_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(29)
    g = generate_random(24, 24, 0.3, 1)
    goal = CarState(41, 41, 0, 0)
    K = 3
    model = init_model(feature_length("car4d", K), [16, 8], seed=4, domain="car4d", K=K,
                       hyperparams={"lr": 1e-3})
    path = tmp_path / "m.bin"
    save_model(model, path, dataset_hash="abc123")
    back = load_model(path)
    assert back.layer_sizes == model.layer_sizes
    for w1, w2 in zip(model.weights, back.weights):
        assert np.array_equal(w1, w2)
    assert back.domain == "car4d" and back.K == K
    # identical predictions on 100 random states
    ex = FeatureExtractor(g, goal, K)
    free = np.argwhere(~g.cells)
    states = []
    for _ in range(100):
        cy, cx = free[rng.integers(0, len(free))]
        states.append(CarState(2 * int(cx) + 1, 2 * int(cy) + 1,
                               int(rng.integers(0, 12)), int(rng.integers(-1, 4))))
    X = ex.features_batch(states)
    assert np.array_equal(model.forward(X), back.forward(X))


def test_model_file_bytes_stable(tmp_path):
    model = init_model(10, [4], seed=0)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_model(model, p1)
    save_model(model, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes()[:5] == b"LOHA1"


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE!" + b"\x00" * 20)
    with pytest.raises(ValueError, match="magic"):
        load_model(p)


def test_predictions_are_nonnegative():
    rng = np.random.default_rng(31)
    model = init_model(12, [8, 8], seed=3)
    X = rng.normal(size=(200, 12))
    assert np.all(model.forward(X) >= 0.0)


def test_predict_residual_validates_dimensions():
    g = generate_random(16, 16, 0.0, 0)
    model = init_model(feature_length("grid2d", 3), [4], seed=0, domain="grid2d", K=3)
    value = predict_residual(model, g, GridState(8, 8), GridState(14, 14), 3)
    assert value >= 0.0
    with pytest.raises(ValueError):
        predict_residual(model, g, GridState(8, 8), GridState(14, 14), 4)


def test_trained_on_empty_world_predicts_near_zero():
    g = generate_random(32, 32, 0.0, 0)
    d = Grid2D(g)
    K = 3
    goal = GridState(30, 30)
    ex = FeatureExtractor(g, goal, K)
    rng = np.random.default_rng(37)
    samples = []
    for _ in range(150):
        s = GridState(int(rng.integers(2, 30)), int(rng.integers(2, 30)))
        samples.append(Sample("m", s, K, 0.0, 1.0, True, "oracle", "p",
                              float(d.h_g(s, goal)), features=ex.features(s)))
    model = train(samples, {"hidden": [16, 16], "lr": 5e-3, "epochs": 60}, seed=8)
    for s in (GridState(5, 5), GridState(20, 11), GridState(16, 25)):
        assert predict_residual(model, g, s, goal, K) < 0.1
