"""Small-scale training: MLP encoder, synthetic blobs, SGD with momentum.

The encoder is a one-hidden-layer ReLU network with a linear output layer,
trained by hand-written backpropagation. Any loss from :mod:`mll.losses`
supplies the gradient with respect to the embeddings; cross-entropy also
trains a linear head that starts at zero.
"""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .bounds import compute_pce_lambda
from .losses import (
    EmbeddingBatch,
    HyperParams,
    LambdaDegenerateError,
    SoftmaxClassifier,
    contrastive_loss,
    cross_entropy_loss,
    multi_similarity_loss,
    pce_loss,
    snca_loss,
    spce_loss,
)
from .retrieval import recall_at_k

log = logging.getLogger(__name__)

__all__ = [
    "MlpParams",
    "TrainConfig",
    "SyntheticSpec",
    "TrainTrace",
    "TrainingDiverged",
    "generate_blobs",
    "train_model",
    "embed",
    "gradient_error",
    "finite_difference_check",
    "fit_head",
    "alternating_bound_demo",
    "random_gradient_batch",
    "gradient_suite",
    "GRADIENT_TARGETS",
    "LOSSES",
]

LOSSES = ("ce", "spce", "contrastive", "snca", "ms")
TRACE_COLUMNS = ("epoch", "loss_total", "loss_tight", "loss_contrast",
                 "companion_loss", "recall_at_1")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class SyntheticSpec:
    K: int = 4
    per_class: int = 128
    dim: int = 16
    radius: float = 5.0
    sigma: float = 1.0
    seed: int = 0
    train_fraction: float = 0.5

    def __post_init__(self):
        if min(self.K, self.per_class, self.dim) < 1 or self.radius <= 0:
            raise ValueError("counts and radius must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass
class TrainConfig:
    loss: str = "ce"
    epochs: int = 200
    batch_size: int = 0
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    label_smoothing: float = 0.1
    seed: int = 0
    normalize: bool = False
    hidden: int = 64
    embedding_dim: int = 8
    eval_distance: str = "euclidean"
    hyper: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.epochs < 0 or self.batch_size < 0 or self.hidden < 1 or self.embedding_dim < 1:
            raise ValueError("epochs, batch_size and layer sizes must be non-negative")
        if self.lr < 0 or not 0.0 <= self.momentum < 1.0 or self.weight_decay < 0:
            raise ValueError("invalid optimiser settings")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if isinstance(self.hyper, dict):
            self.hyper = HyperParams(**self.hyper)


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self):
        extra = [k for k in self.rows[0] if k not in TRACE_COLUMNS] if self.rows else []
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS + tuple(extra))
        for r in self.rows:
            writer.writerow([_fmt(r.get(c)) for c in TRACE_COLUMNS + tuple(extra)])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class MlpParams:
    """Weights ``W[l]`` (out x in) and biases ``b[l]``; ReLU between layers."""

    weights: list
    biases: list
    head: SoftmaxClassifier = None

    @classmethod
    def init(cls, sizes, rng):
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = 2.0 if i < len(sizes) - 2 else 1.0
            weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(gain / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def copy(self):
        head = None
        if self.head is not None:
            head = SoftmaxClassifier(self.head.theta.copy(),
                                     None if self.head.bias is None else self.head.bias.copy())
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], head)

    def forward(self, X):
        cache = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T + b
            if i < last:
                h = np.maximum(h, 0.0)
            cache.append(h)
        return h, cache

    def backward(self, cache, dout):
        """Gradients of the loss for every weight and bias, given dL/d(output)."""
        dW, db = [None] * len(self.weights), [None] * len(self.biases)
        g = dout
        for i in range(len(self.weights) - 1, -1, -1):
            dW[i] = g.T @ cache[i]
            db[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i]) * (cache[i] > 0)
        return dW, db


def embed(params, X, normalize=False):
    E, _ = params.forward(X)
    if normalize:
        E = E / np.maximum(np.linalg.norm(E, axis=1, keepdims=True), 1e-12)
    return E


def generate_blobs(spec):
    """Gaussian clusters whose means sit on a sphere of radius ``spec.radius``.

    Means are rejection-sampled so that every pair is at least
    ``2 pi / (4K)`` radians apart. Splitting is stratified per class.
    Returns ``(train, test)`` as :class:`EmbeddingBatch` of raw inputs.
    """
    rng = np.random.default_rng(spec.seed)
    min_angle = 2.0 * np.pi / (4 * spec.K)
    means = []
    attempts = 0
    while len(means) < spec.K:
        attempts += 1
        if attempts > 100_000:
            raise RuntimeError("means-too-crowded")
        u = rng.standard_normal(spec.dim)
        u /= np.linalg.norm(u)
        if all(np.arccos(np.clip(u @ m, -1.0, 1.0)) >= min_angle for m in means):
            means.append(u)
    means = spec.radius * np.array(means)

    n_train = int(round(spec.train_fraction * spec.per_class))
    if not 0 < n_train < spec.per_class:
        raise ValueError("split leaves an empty train or test set")
    parts = {"train": ([], []), "test": ([], [])}
    for k in range(spec.K):
        X = means[k] + spec.sigma * rng.standard_normal((spec.per_class, spec.dim))
        X = X[rng.permutation(spec.per_class)]
        for name, sl in (("train", slice(0, n_train)), ("test", slice(n_train, None))):
            parts[name][0].append(X[sl])
            parts[name][1].append(np.full(len(X[sl]), k))
    out = []
    for name in ("train", "test"):
        X = np.vstack(parts[name][0])
        y = np.concatenate(parts[name][1])
        perm = rng.permutation(len(y))
        out.append(EmbeddingBatch(X[perm], y[perm], spec.K))
    return tuple(out)


def _loss_and_grad(cfg, batch, head, eps):
    h = cfg.hyper
    if cfg.loss == "ce":
        return cross_entropy_loss(batch, head, eps)
    fn = {"spce": lambda b: spce_loss(b),
          "contrastive": lambda b: contrastive_loss(b, h),
          "snca": lambda b: snca_loss(b, h),
          "ms": lambda b: multi_similarity_loss(b, h)}[cfg.loss]
    return fn(batch)


def _check_finite(params, epoch, trace):
    arrays = params.weights + params.biases
    if params.head is not None:
        arrays = arrays + [params.head.theta]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise TrainingDiverged(f"parameters became non-finite at epoch {epoch}", trace)


def _normalize_backward(E, dN):
    norms = np.maximum(np.linalg.norm(E, axis=1, keepdims=True), 1e-12)
    N = E / norms
    return (dN - np.sum(dN * N, axis=1, keepdims=True) * N) / norms


class _Momentum:
    """SGD with momentum; weight decay only on the arrays flagged ``decay``."""

    def __init__(self, lr, momentum, weight_decay):
        self.lr, self.mu, self.wd = lr, momentum, weight_decay
        self.velocity = {}

    def step(self, key, param, grad, decay):
        if decay and self.wd:
            grad = grad + self.wd * param
        v = self.velocity.get(key)
        v = grad if v is None else self.mu * v + grad
        self.velocity[key] = v
        param -= self.lr * v


def _evaluate(params, cfg, train, test, head, probe):
    eps = cfg.label_smoothing
    E = embed(params, train.Z, cfg.normalize)
    E_test = embed(params, test.Z, cfg.normalize)
    if not (np.all(np.isfinite(E)) and np.all(np.isfinite(E_test))):
        return None
    batch = train.replace(Z=E)
    report, _ = _loss_and_grad(cfg, batch, head, eps)
    if cfg.loss == "ce":
        companion = spce_loss(batch)[0].total
    elif cfg.loss == "spce":
        companion = cross_entropy_loss(batch, probe, eps)[0].total
    else:
        companion = float("nan")
    r1 = recall_at_k(E_test, test.y, [1], cfg.eval_distance).recall[cfg.eval_distance][0]
    return report, companion, r1


def train_model(data, cfg):
    """Train the MLP encoder on ``data = (train, test)``.

    The trace gets one row before the first update (epoch 0) and one per
    epoch. With cross-entropy the companion column is SPCE on the same
    embeddings; with SPCE it is the cross-entropy of a linear probe trained
    alongside on the (detached) embeddings. Returns ``(params, trace)``;
    the cross-entropy head, when there is one, is ``params.head``.
    """
    train, test = data
    rng = np.random.default_rng(cfg.seed)
    sizes = [train.d, cfg.hidden, cfg.embedding_dim]
    params = MlpParams.init(sizes, rng)
    K = train.K
    if cfg.loss == "ce":
        params.head = SoftmaxClassifier.zeros(K, cfg.embedding_dim)
    probe = SoftmaxClassifier.zeros(K, cfg.embedding_dim) if cfg.loss == "spce" else None
    opt = _Momentum(cfg.lr, cfg.momentum, cfg.weight_decay)
    trace = TrainTrace()

    def record(epoch):
        result = _evaluate(params, cfg, train, test, params.head, probe)
        if result is None:
            raise TrainingDiverged(f"embeddings became non-finite at epoch {epoch}", trace)
        report, companion, r1 = result
        trace.append(epoch=epoch, loss_total=report.total, loss_tight=report.tightness,
                     loss_contrast=report.contrastive, companion_loss=companion,
                     recall_at_1=r1)
        if not np.isfinite(report.total):
            trace.rows.pop()
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}", trace)

    record(0)
    with np.errstate(over="ignore", invalid="ignore"):
        _run_epochs(cfg, params, probe, opt, train, rng, record, trace)
    return params, trace


def _run_epochs(cfg, params, probe, opt, train, rng, record, trace):
    n, K, eps = train.n, train.K, cfg.label_smoothing
    bs = cfg.batch_size or n
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            out, cache = params.forward(train.Z[idx])
            E = out
            if cfg.normalize:
                E = out / np.maximum(np.linalg.norm(out, axis=1, keepdims=True), 1e-12)
            batch = EmbeddingBatch(E, train.y[idx], K)
            _, grad = _loss_and_grad(cfg, batch, params.head, eps)
            if not np.all(np.isfinite(grad.dZ)):
                raise TrainingDiverged(f"non-finite gradient at epoch {epoch}", trace)
            dout = _normalize_backward(out, grad.dZ) if cfg.normalize else grad.dZ
            dW, db = params.backward(cache, dout)
            if params.head is not None:
                opt.step("theta", params.head.theta, grad.dtheta, decay=True)
                opt.step("head_bias", params.head.bias, grad.dbias, decay=False)
            if probe is not None:
                _, pg = cross_entropy_loss(batch, probe, eps)
                opt.step("probe_theta", probe.theta, pg.dtheta, decay=True)
                opt.step("probe_bias", probe.bias, pg.dbias, decay=False)
            for i in range(len(dW)):
                opt.step(("W", i), params.weights[i], dW[i], decay=True)
                opt.step(("b", i), params.biases[i], db[i], decay=False)
            _check_finite(params, epoch, trace)
        record(epoch)


def gradient_error(f, x, grad, step=1e-5, coords=None, floor=1e-6):
    """Worst per-coordinate relative error of ``grad`` against central differences.

    The relative error at a coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    The floor keeps coordinates whose gradient is at round-off level from
    dominating. ``coords`` selects flat indices to probe (all by default).
    """
    x = np.array(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    coords = range(x.size) if coords is None else coords
    worst = 0.0
    flat = x.reshape(-1)
    for c in coords:
        keep = flat[c]
        flat[c] = keep + step
        fp = f(x)
        flat[c] = keep - step
        fm = f(x)
        flat[c] = keep
        num = (fp - fm) / (2.0 * step)
        a = grad.reshape(-1)[c]
        worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    return worst


def _kink_coords(batch, margin, width=1e-3):
    D = np.sqrt(((batch.Z[:, None, :] - batch.Z[None, :, :]) ** 2).sum(-1))
    near = (~batch.same_class()) & (np.abs(margin - D) < width)
    rows = np.flatnonzero(near.any(axis=1))
    return {r * batch.d + j for r in rows for j in range(batch.d)}


def finite_difference_check(loss, batch, step=1e-5, *, clf=None, wrt="Z", h=None,
                            max_coords=200, seed=0):
    """Compare a loss's analytic gradient with central differences.

    ``loss`` is one of ``"contrastive", "center", "snca", "ms", "ce", "spce"``.
    ``wrt`` picks ``"Z"``, or ``"theta"``/``"bias"`` for cross-entropy.
    Probes at most ``max_coords`` coordinates, chosen with ``seed``; for the
    contrastive loss, coordinates of samples within 1e-3 of the hinge kink
    are skipped. Returns the worst relative error.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-7, 1e-3]")
    from .losses import center_tightness

    h = h or HyperParams()
    eps = h.label_smoothing
    fns = {
        "contrastive": lambda b: contrastive_loss(b, h),
        "center": center_tightness,
        "snca": lambda b: snca_loss(b, h),
        "ms": lambda b: multi_similarity_loss(b, h),
        "spce": spce_loss,
        "ce": lambda b: cross_entropy_loss(b, clf, eps),
    }
    fn = fns[loss]
    _, grad = fn(batch)
    if wrt == "Z":
        x, g = batch.Z, grad.dZ

        def f(Z):
            return fn(batch.replace(Z=Z))[0].total
    elif wrt in ("theta", "bias") and loss == "ce":
        x, g = (clf.theta, grad.dtheta) if wrt == "theta" else (clf.bias, grad.dbias)

        def f(v):
            c = (SoftmaxClassifier(v, clf.bias) if wrt == "theta"
                 else SoftmaxClassifier(clf.theta, v))
            return cross_entropy_loss(batch, c, eps)[0].total
    else:
        raise ValueError(f"cannot differentiate {loss!r} with respect to {wrt!r}")

    candidates = np.arange(np.size(x))
    if loss == "contrastive" and wrt == "Z":
        skip = _kink_coords(batch, h.margin)
        candidates = np.array([c for c in candidates if c not in skip], dtype=int)
    rng = np.random.default_rng(seed)
    if len(candidates) > max_coords:
        candidates = np.sort(rng.choice(candidates, max_coords, replace=False))
    return gradient_error(f, x, g, step, candidates)


def fit_head(E, y, K, theta=None, tol=1e-6, max_iter=2000):
    """Minimise bias-free cross-entropy over the head with the features fixed.

    Plain gradient descent with step ``1 / L``, ``L = mean ||z||^2 / 2`` a
    bound on the curvature, so the objective never increases. Stops when
    an iteration improves the loss by less than ``tol`` or the gradient
    norm drops below ``tol``. Returns ``(theta, history)``.
    """
    batch = EmbeddingBatch(E, y, K)
    theta = np.zeros((K, E.shape[1])) if theta is None else theta.copy()
    L = 0.5 * np.mean(np.sum(E * E, axis=1))
    lr = 1.0 / max(L, 1e-12)
    history = []
    prev = np.inf
    for _ in range(max_iter):
        report, grad = cross_entropy_loss(batch, SoftmaxClassifier(theta), 0.0)
        history.append(report.total)
        if prev - report.total < tol or np.linalg.norm(grad.dtheta) < tol:
            break
        prev = report.total
        theta -= lr * grad.dtheta
    return theta, history


def alternating_bound_demo(data, epochs, cfg=None, inner_tol=1e-6, inner_max_iter=2000):
    """Alternate exact-ish head fitting with one encoder epoch.

    Each epoch (i) refits the bias-free head by :func:`fit_head` with the
    encoder frozen, then records CE, the PCE at the refitted head (lambda
    recomputed) and their gap; (ii) takes one SGD epoch on the encoder with
    the head frozen. Epochs where lambda <= 1e-6 leave the PCE column NaN.
    """
    cfg = cfg or TrainConfig(loss="ce", label_smoothing=0.0)
    train, test = data
    rng = np.random.default_rng(cfg.seed)
    params = MlpParams.init([train.d, cfg.hidden, cfg.embedding_dim], rng)
    K = train.K
    theta = np.zeros((K, cfg.embedding_dim))
    opt = _Momentum(cfg.lr, cfg.momentum, cfg.weight_decay)
    trace = TrainTrace()
    n = train.n
    bs = cfg.batch_size or n
    for epoch in range(1, epochs + 1):
        E = embed(params, train.Z)
        theta, history = fit_head(E, train.y, K, theta, inner_tol, inner_max_iter)
        batch = EmbeddingBatch(E, train.y, K)
        head = SoftmaxClassifier(theta)
        lam = compute_pce_lambda(batch, head).lam
        ce, _ = cross_entropy_loss(batch, head, 0.0, lam=max(lam, 0.0))
        try:
            if lam <= 1e-6:
                raise LambdaDegenerateError(lam)
            pce = pce_loss(batch, head.probabilities(E), lam).total
        except LambdaDegenerateError:
            log.info("epoch %d: lambda-degenerate (%.3e), PCE skipped", epoch, lam)
            pce = float("nan")
        r1 = recall_at_k(embed(params, test.Z), test.y, [1],
                         cfg.eval_distance).recall[cfg.eval_distance][0]
        trace.append(epoch=epoch, loss_total=ce.total, loss_tight=ce.tightness,
                     loss_contrast=ce.contrastive, companion_loss=pce,
                     recall_at_1=r1, **{"lambda": lam, "gap": ce.total - pce,
                                        "inner_iterations": len(history)})
        if not np.isfinite(ce.total):
            trace.rows.pop()
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}", trace)

        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            out, cache = params.forward(train.Z[idx])
            _, grad = cross_entropy_loss(EmbeddingBatch(out, train.y[idx], K), head, 0.0)
            dW, db = params.backward(cache, grad.dZ)
            for i in range(len(dW)):
                opt.step(("W", i), params.weights[i], dW[i], decay=True)
                opt.step(("b", i), params.biases[i], db[i], decay=False)
    return trace


GRADIENT_TARGETS = (
    ("contrastive", "Z"),
    ("center", "Z"),
    ("snca", "Z"),
    ("ms", "Z"),
    ("ce", "Z"),
    ("ce", "theta"),
    ("ce", "bias"),
    ("spce", "Z"),
)


def random_gradient_batch(rng, max_n=32, max_d=8, max_K=5):
    """A random batch (every class has two or more members) and a random head."""
    K = int(rng.integers(2, max_K + 1))
    n = int(rng.integers(2 * K, max_n + 1))
    d = int(rng.integers(1, max_d + 1))
    y = rng.permutation(np.concatenate([np.repeat(np.arange(K), 2),
                                        rng.integers(0, K, n - 2 * K)]))
    batch = EmbeddingBatch(rng.standard_normal((n, d)), y, K)
    clf = SoftmaxClassifier(rng.standard_normal((K, d)), rng.standard_normal(K))
    return batch, clf


def gradient_suite(batches=50, seed=0, step=1e-5, max_n=32, max_d=8, max_K=5,
                   targets=GRADIENT_TARGETS):
    """Worst finite-difference error per ``(loss, wrt)`` over seeded batches."""
    worst = {f"{loss}:{wrt}": 0.0 for loss, wrt in targets}
    for b in range(batches):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
        batch, clf = random_gradient_batch(rng, max_n, max_d, max_K)
        for loss, wrt in targets:
            err = finite_difference_check(loss, batch, step, clf=clf, wrt=wrt, seed=b)
            key = f"{loss}:{wrt}"
            worst[key] = max(worst[key], err)
    return worst
