import math

import numpy as np
import pytest

from conftest import make_batch
from mll import train as T
from mll.losses import EmbeddingBatch, HyperParams, SoftmaxClassifier, cross_entropy_loss
from mll.retrieval import query_gallery_recall
from mll.train import (
    MlpParams,
    SyntheticSpec,
    TrainConfig,
    TrainingDiverged,
    alternating_bound_demo,
    finite_difference_check,
    fit_head,
    generate_blobs,
    gradient_error,
    train_model,
)


@pytest.fixture(scope="module")
def small_blobs():
    return generate_blobs(SyntheticSpec(K=3, per_class=20, dim=6, radius=4.0, seed=11))


# data ------------------------------------------------------------------

def test_blobs_shapes_and_split():
    train, test = generate_blobs(SyntheticSpec(K=4, per_class=10, dim=5, seed=0))
    assert train.Z.shape == (20, 5) and test.Z.shape == (20, 5)
    np.testing.assert_array_equal(np.bincount(train.y), [5] * 4)


def test_blobs_zero_sigma_collapses_to_means():
    train, test = generate_blobs(SyntheticSpec(K=3, per_class=6, sigma=0.0, radius=2.0))
    for k in range(3):
        pts = np.vstack([train.Z[train.y == k], test.Z[test.y == k]])
        np.testing.assert_array_equal(pts, np.tile(pts[0], (len(pts), 1)))
        assert np.linalg.norm(pts[0]) == pytest.approx(2.0)


def test_blobs_deterministic():
    a = generate_blobs(SyntheticSpec(seed=5, per_class=8))
    b = generate_blobs(SyntheticSpec(seed=5, per_class=8))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.Z, y.Z)
        np.testing.assert_array_equal(x.y, y.y)


def test_blobs_raw_one_nn_perfect():
    train, test = generate_blobs(SyntheticSpec(K=4, per_class=50, dim=16, radius=5.0,
                                               sigma=0.2, seed=2))
    assert query_gallery_recall(test.Z, test.y, train.Z, train.y, [1]).recall["euclidean"] == [1.0]


def test_blobs_means_too_crowded():
    # on a line only two directions exist, so three classes can never be separated
    with pytest.raises(RuntimeError, match="means-too-crowded"):
        generate_blobs(SyntheticSpec(K=3, dim=1, per_class=4))


def test_spec_and_config_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(train_fraction=1.0)
    with pytest.raises(ValueError):
        TrainConfig(loss="triplet")
    with pytest.raises(ValueError):
        TrainConfig(label_smoothing=1.0)
    assert TrainConfig(hyper={"margin": 0.3}).hyper.margin == 0.3


# network ---------------------------------------------------------------

def test_mlp_backward_matches_differences(rng):
    p = MlpParams.init([5, 7, 3], rng)
    for b in p.biases:
        b += rng.standard_normal(b.shape) * 0.1
    X = rng.standard_normal((9, 5))
    G = rng.standard_normal((9, 3))

    out, cache = p.forward(X)
    dW, db = p.backward(cache, G)
    for i in range(2):
        def f(W, i=i):
            q = p.copy()
            q.weights[i] = W
            return float(np.sum(q.forward(X)[0] * G))
        assert gradient_error(f, p.weights[i], dW[i]) < 1e-6

        def g(b, i=i):
            q = p.copy()
            q.biases[i] = b
            return float(np.sum(q.forward(X)[0] * G))
        assert gradient_error(g, p.biases[i], db[i]) < 1e-6


def test_normalize_backward(rng):
    E = rng.standard_normal((4, 3))
    G = rng.standard_normal((4, 3))

    def f(E):
        return float(np.sum(E / np.linalg.norm(E, axis=1, keepdims=True) * G))
    assert gradient_error(f, E, T._normalize_backward(E, G)) < 1e-7


# training --------------------------------------------------------------

def test_zero_lr_is_flat(small_blobs):
    cfg = TrainConfig(epochs=3, lr=0.0)
    rng = np.random.default_rng(cfg.seed)
    init = MlpParams.init([6, cfg.hidden, cfg.embedding_dim], rng)
    params, trace = train_model(small_blobs, cfg)
    for a, b in zip(params.weights, init.weights):
        np.testing.assert_array_equal(a, b)
    assert len(set(trace.column("loss_total"))) == 1


def test_first_ce_row_is_log_k(small_blobs):
    _, trace = train_model(small_blobs, TrainConfig(epochs=1, label_smoothing=0.1))
    assert trace.rows[0]["loss_total"] == pytest.approx(math.log(3), abs=1e-15)
    assert [r["epoch"] for r in trace.rows] == [0, 1]


def test_training_deterministic(small_blobs):
    cfg = TrainConfig(loss="spce", epochs=5, batch_size=16)
    _, a = train_model(small_blobs, cfg)
    _, b = train_model(small_blobs, cfg)
    assert a.to_csv() == b.to_csv()


def test_decay_skips_biases(small_blobs, monkeypatch):
    seen = {}
    orig = T._Momentum.step

    def spy(self, key, param, grad, decay):
        seen[key if isinstance(key, str) else key[0]] = decay
        return orig(self, key, param, grad, decay)
    monkeypatch.setattr(T._Momentum, "step", spy)
    train_model(small_blobs, TrainConfig(epochs=1, weight_decay=1e6))
    assert seen == {"W": True, "b": False, "theta": True, "head_bias": False}


def test_momentum_decay_flag():
    opt = T._Momentum(lr=0.1, momentum=0.0, weight_decay=100.0)
    w, b = np.ones(2), np.ones(2)
    opt.step("w", w, np.zeros(2), decay=True)
    opt.step("b", b, np.zeros(2), decay=False)
    np.testing.assert_allclose(w, -9.0)
    np.testing.assert_array_equal(b, 1.0)


@pytest.mark.parametrize("loss", ["contrastive", "snca", "ms"])
def test_pairwise_losses_train(small_blobs, loss):
    _, trace = train_model(small_blobs, TrainConfig(loss=loss, epochs=15, normalize=True))
    assert np.all(np.isfinite(trace.column("loss_total")))
    assert np.isnan(trace.column("companion_loss")).all()


def test_companions(small_blobs):
    _, ce = train_model(small_blobs, TrainConfig(loss="ce", epochs=2))
    _, sp = train_model(small_blobs, TrainConfig(loss="spce", epochs=2))
    assert np.all(np.isfinite(ce.column("companion_loss")))
    assert sp.rows[0]["companion_loss"] == pytest.approx(math.log(3), abs=1e-15)


def test_divergence_keeps_good_rows(small_blobs):
    with pytest.raises(TrainingDiverged) as info:
        train_model(small_blobs, TrainConfig(epochs=50, lr=1e6))
    rows = info.value.trace.rows
    assert rows and all(np.isfinite(r["loss_total"]) for r in rows)


def test_trace_csv_header(small_blobs):
    _, trace = train_model(small_blobs, TrainConfig(epochs=1))
    header = trace.to_csv().splitlines()[0]
    assert header == "epoch,loss_total,loss_tight,loss_contrast,companion_loss,recall_at_1"


# finite differences ----------------------------------------------------

def test_quadratic_exact(rng):
    A = rng.standard_normal((4, 4))
    A = A @ A.T
    x = rng.standard_normal(4)
    assert gradient_error(lambda v: 0.5 * v @ A @ v, x, A @ x) <= 1e-10


def test_fd_spce_and_ce_theta():
    Z, y = make_batch(21, n=15, d=4, K=3)
    b = EmbeddingBatch(Z, y, 3)
    clf = SoftmaxClassifier(np.random.default_rng(1).standard_normal((3, 4)), np.zeros(3))
    assert finite_difference_check("spce", b, 1e-5) <= 1e-4
    assert finite_difference_check("ce", b, 1e-5, clf=clf, wrt="theta") <= 1e-4
    assert finite_difference_check("ce", b, 1e-5, clf=clf, wrt="bias") <= 1e-4


def test_fd_contrastive_skips_kink():
    b = EmbeddingBatch([[0.0, 0.0], [0.5, 0.0], [0.1, 0.3]], [0, 1, 0])
    assert finite_difference_check("contrastive", b, 1e-5, h=HyperParams(margin=0.5)) <= 1e-4


def test_fd_step_range():
    b = EmbeddingBatch(np.eye(3), [0, 1, 1])
    with pytest.raises(ValueError):
        finite_difference_check("spce", b, 1e-2)
    with pytest.raises(ValueError):
        finite_difference_check("spce", b, 1e-5, wrt="theta")


# bound-optimization demo -----------------------------------------------

def test_fit_head_monotone(small_blobs):
    Z = small_blobs[0].Z
    theta, hist = fit_head(Z, small_blobs[0].y, 3, tol=1e-9, max_iter=300)
    assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))
    ce, _ = cross_entropy_loss(EmbeddingBatch(Z, small_blobs[0].y, 3), SoftmaxClassifier(theta))
    assert ce.total <= hist[-1] + 1e-15


def test_bound_demo_records(small_blobs):
    trace = alternating_bound_demo(small_blobs, 4, TrainConfig(label_smoothing=0.0))
    assert [r["epoch"] for r in trace.rows] == [1, 2, 3, 4]
    for r in trace.rows:
        assert {"lambda", "gap", "inner_iterations"} <= set(r)
        if r["lambda"] > 1e-6:
            assert r["gap"] == pytest.approx(r["loss_total"] - r["companion_loss"])
        else:
            assert math.isnan(r["companion_loss"])
    assert "lambda" in trace.to_csv().splitlines()[0]
