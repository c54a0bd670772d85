"""Metric-learning losses split into a tightness and a contrastive term.

Every loss takes an :class:`EmbeddingBatch` and returns a :class:`LossReport`
whose ``total`` is the sum of the two terms. Differentiable losses also
return a :class:`LossGrad` holding the exact gradient with respect to the
embeddings (and the classifier for cross-entropy).

Losses never normalise embeddings themselves. Cosine-based losses
(SNCA, multi-similarity, FastAP) depend only on directions anyway, and the
others are meant to see the raw features.
"""

from dataclasses import dataclass, field

import numpy as np

from .numeric import (
    as_labels,
    as_matrix,
    class_means,
    class_sums,
    cosine_similarity,
    log_sum_exp_rows,
    one_hot,
    pairwise_sq_euclidean,
    soft_means,
    softmax_rows,
)

__all__ = [
    "EmbeddingBatch",
    "SoftmaxClassifier",
    "LossReport",
    "LossGrad",
    "HyperParams",
    "LambdaDegenerateError",
    "contrastive_loss",
    "center_tightness",
    "snca_loss",
    "multi_similarity_loss",
    "cross_entropy_loss",
    "pce_loss",
    "spce_loss",
    "fastap_per_query",
    "fastap_loss",
    "smoothed_targets",
]


class LambdaDegenerateError(ValueError):
    """The PCE weight lambda is too small for the bound to be meaningful."""

    def __init__(self, lam):
        super().__init__(f"lambda-degenerate (lambda={lam:.3e})")
        self.lam = lam


@dataclass
class EmbeddingBatch:
    """Embeddings ``Z`` (n x d) with integer labels ``y`` in ``[0, K)``."""

    Z: np.ndarray
    y: np.ndarray
    K: int = None

    def __post_init__(self):
        self.Z = as_matrix(self.Z)
        self.y, self.K = as_labels(self.y, self.K)
        if len(self.y) != self.Z.shape[0]:
            raise ValueError(
                f"{self.Z.shape[0]} embeddings but {len(self.y)} labels"
            )

    @property
    def n(self):
        return self.Z.shape[0]

    @property
    def d(self):
        return self.Z.shape[1]

    def same_class(self):
        return self.y[:, None] == self.y[None, :]

    def replace(self, Z=None, y=None, K=None):
        return EmbeddingBatch(
            self.Z if Z is None else Z,
            self.y if y is None else y,
            self.K if K is None else K,
        )


@dataclass
class SoftmaxClassifier:
    """Linear soft-classifier: ``p_i = softmax(theta z_i + bias)``."""

    theta: np.ndarray
    bias: np.ndarray = None

    def __post_init__(self):
        self.theta = as_matrix(self.theta, "theta")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64).ravel()
            if self.bias.shape != (self.K,) or not np.all(np.isfinite(self.bias)):
                raise ValueError("bias must be a finite K-vector")

    @property
    def K(self):
        return self.theta.shape[0]

    @classmethod
    def zeros(cls, K, d, bias=True):
        return cls(np.zeros((K, d)), np.zeros(K) if bias else None)

    def logits(self, Z):
        out = Z @ self.theta.T
        if self.bias is not None:
            out = out + self.bias
        return out

    def probabilities(self, Z):
        return softmax_rows(self.logits(Z))


@dataclass
class LossReport:
    tightness: float
    contrastive: float
    total: float
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_terms(cls, tightness, contrastive, **extras):
        t, c = float(tightness), float(contrastive)
        return cls(t, c, t + c, {k: float(v) for k, v in extras.items()})

    def as_dict(self):
        return {
            "tightness": self.tightness,
            "contrastive": self.contrastive,
            "total": self.total,
            **self.extras,
        }


@dataclass
class LossGrad:
    dZ: np.ndarray
    dtheta: np.ndarray = None
    dbias: np.ndarray = None


@dataclass
class HyperParams:
    """Loss hyper-parameters with the defaults used throughout the package.

    ``margin`` suits unit-sphere Euclidean distances (which lie in [0, 2]);
    the multi-similarity margin of 1 is the value under which the
    tightness/contrastive bounds are derived.
    """

    margin: float = 0.5
    snca_sigma: float = 0.1
    ms_alpha: float = 2.0
    ms_beta: float = 50.0
    ms_margin: float = 1.0
    label_smoothing: float = 0.1
    fastap_bins: int = 20

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        for name in ("snca_sigma", "ms_alpha", "ms_beta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if int(self.fastap_bins) != self.fastap_bins or self.fastap_bins < 2:
            raise ValueError("fastap_bins must be an integer >= 2")
        self.fastap_bins = int(self.fastap_bins)


def _require_pairs(batch):
    if batch.n < 2:
        raise ValueError("pairwise losses need at least two samples")


def _sq_distance_backward(Z, W):
    """Gradient of ``sum_ij W_ij ||z_i - z_j||^2`` with respect to ``Z``."""
    Ws = W + W.T
    return 2.0 * (Ws.sum(axis=1)[:, None] * Z - Ws @ Z)


def _cosine_backward(Z, G):
    """Gradient of ``sum_ij G_ij cos(z_i, z_j)`` with respect to ``Z``."""
    norms = np.linalg.norm(Z, axis=1)
    N = Z / norms[:, None]
    dN = (G + G.T) @ N
    radial = np.sum(dN * N, axis=1)
    return (dN - radial[:, None] * N) / norms[:, None]


def contrastive_loss(batch, h=None):
    """Contrastive loss: squared distances within classes, squared hinge across.

    Sums run over ordered pairs, so each unordered pair counts twice and
    self-pairs contribute zero. At ``D_ij == m`` the hinge subgradient is 0.
    """
    h = h or HyperParams()
    _require_pairs(batch)
    Z, n, m = batch.Z, batch.n, h.margin
    D2 = pairwise_sq_euclidean(Z)
    D = np.sqrt(D2)
    same = batch.same_class()
    hinge = np.where(~same, np.maximum(m - D, 0.0), 0.0)

    tight = D2[same].sum() / n
    contrast = np.sum(hinge**2) / n

    W = same / n
    with np.errstate(divide="ignore", invalid="ignore"):
        W = W - np.where(D > 0, hinge / (n * D), 0.0)
    dZ = _sq_distance_backward(Z, W)
    report = LossReport.from_terms(
        tight, contrast, margin=m, active_pairs=np.count_nonzero(hinge > 0)
    )
    return report, LossGrad(dZ)


def center_tightness(batch):
    """Half the squared distance of every sample to its class centroid.

    The centroid is treated as a function of ``Z`` when differentiating; the
    two contributions cancel to ``z_i - c_{y_i}``.
    """
    C = class_means(batch.Z, batch.y, batch.K)
    R = batch.Z - C[batch.y]
    per_sample = 0.5 * np.sum(R * R, axis=1)
    per_class = np.bincount(batch.y, weights=per_sample, minlength=batch.K)
    extras = {f"class_{k}": v for k, v in enumerate(per_class)}
    report = LossReport.from_terms(per_sample.sum(), 0.0, **extras)
    return report, LossGrad(R.copy())


def snca_loss(batch, h=None):
    h = h or HyperParams()
    _require_pairs(batch)
    n, sigma = batch.n, h.snca_sigma
    S = cosine_similarity(batch.Z)
    others = ~np.eye(n, dtype=bool)
    pos = batch.same_class() & others
    lonely = np.flatnonzero(~pos.any(axis=1))
    if lonely.size:
        raise ValueError(f"sample {lonely[0]} has no positive partner")

    A = S / sigma
    tight = -np.mean(log_sum_exp_rows(A, pos))
    contrast = np.mean(log_sum_exp_rows(A, others))
    G = (softmax_rows(A, others) - softmax_rows(A, pos)) / (n * sigma)
    report = LossReport.from_terms(tight, contrast, sigma=sigma)
    return report, LossGrad(_cosine_backward(batch.Z, G))


def _log1p_sum_exp(A, mask):
    """Row-wise ``log(1 + sum_mask exp(A))`` and the matching softmax weights."""
    n = A.shape[0]
    aug = np.hstack([np.zeros((n, 1)), A])
    aug_mask = np.hstack([np.ones((n, 1), dtype=bool), mask])
    return log_sum_exp_rows(aug, aug_mask), softmax_rows(aug, aug_mask)[:, 1:]


def multi_similarity_loss(batch, h=None):
    h = h or HyperParams()
    _require_pairs(batch)
    n, a, b, m = batch.n, h.ms_alpha, h.ms_beta, h.ms_margin
    S = cosine_similarity(batch.Z)
    same = batch.same_class()
    pos = same & ~np.eye(n, dtype=bool)
    neg = ~same

    lse_pos, w_pos = _log1p_sum_exp(-a * (S - m), pos)
    lse_neg, w_neg = _log1p_sum_exp(b * (S - m), neg)
    tight = np.mean(lse_pos) / a
    contrast = np.mean(lse_neg) / b
    G = (w_neg - w_pos) / n
    report = LossReport.from_terms(tight, contrast, alpha=a, beta=b, margin=m)
    return report, LossGrad(_cosine_backward(batch.Z, G))


def smoothed_targets(y, K, eps):
    """One-hot targets with ``1 - eps`` on the true class, ``eps/(K-1)`` elsewhere."""
    if eps == 0.0:
        return one_hot(y, K)
    if K < 2:
        raise ValueError("label smoothing needs at least two classes")
    T = np.full((len(y), K), eps / (K - 1))
    T[np.arange(len(y)), y] = 1.0 - eps
    return T


def cross_entropy_loss(batch, clf, eps=0.0, lam=None):
    """Softmax cross-entropy with optional label smoothing.

    The tightness/contrastive fields hold the split obtained by adding and
    removing ``(lam/2) ||theta||^2``::

        f1 = -(1/n) sum_ik t_ik logit_ik + (lam/2) ||theta||^2
        f2 =  (1/n) sum_i logsumexp(logit_i) - (lam/2) ||theta||^2

    With ``lam=None`` the split is taken at ``lam = 0``. ``total`` is
    computed independently as ``-(1/n) sum_ik t_ik log p_ik``.
    """
    if clf.K != batch.K:
        raise ValueError(f"classifier has {clf.K} classes, batch has {batch.K}")
    if clf.theta.shape[1] != batch.d:
        raise ValueError("classifier and embeddings disagree on d")
    if not 0.0 <= eps < 1.0:
        raise ValueError("label smoothing must lie in [0, 1)")
    n = batch.n
    logits = clf.logits(batch.Z)
    lse = log_sum_exp_rows(logits)
    log_p = logits - lse[:, None]
    T = smoothed_targets(batch.y, batch.K, eps)
    total = -np.sum(T * log_p) / n

    lam_used = 0.0 if lam is None else float(lam)
    reg = 0.5 * lam_used * np.sum(clf.theta**2)
    f1 = -np.sum(T * logits) / n + reg
    f2 = np.mean(lse) - reg

    dlogits = (np.exp(log_p) - T) / n
    grad = LossGrad(
        dZ=dlogits @ clf.theta,
        dtheta=dlogits.T @ batch.Z,
        dbias=None if clf.bias is None else dlogits.sum(axis=0),
    )
    report = LossReport(
        float(f1), float(f2), float(total),
        {"lambda": lam_used, "label_smoothing": float(eps)},
    )
    return report, grad


def pce_loss(batch, P, lam):
    """Pairwise cross-entropy for soft assignments ``P`` and weight ``lam``.

    Evaluation only: no gradient is returned.
    """
    if lam <= 1e-8:
        raise LambdaDegenerateError(lam)
    P = as_matrix(P, "P")
    if P.shape != (batch.n, batch.K):
        raise ValueError(f"P must have shape {(batch.n, batch.K)}")
    n, Z = batch.n, batch.Z
    Cs = soft_means(Z, P)
    S = class_sums(Z, batch.y, batch.K)
    tight = -np.sum(S * S) / (2.0 * lam * n * n)
    lse = log_sum_exp_rows(Z @ Cs.T / lam)
    contrast = np.mean(lse) - np.sum(Cs * Cs) / (2.0 * lam)
    return LossReport.from_terms(tight, contrast, **{"lambda": lam})


def spce_loss(batch):
    """Simplified pairwise cross-entropy (hard class sums in both halves).

    Equals the cross-entropy of a bias-free classifier whose row ``k`` is
    the class-``k`` sum divided by ``n``.
    """
    n, Z, y, K = batch.n, batch.Z, batch.y, batch.K
    S = class_sums(Z, y, K)
    tight = -np.sum(S * S) / (n * n)
    logits = Z @ S.T / n
    contrast = np.mean(log_sum_exp_rows(logits))

    Q = softmax_rows(logits)
    dZ = -2.0 * S[y] / (n * n)
    dZ += (Q @ S + (Q.T @ Z)[y]) / (n * n)
    return LossReport.from_terms(tight, contrast), LossGrad(dZ)


def fastap_per_query(batch, bins):
    """Histogram statistics behind FastAP, one row per query.

    Distances are ``1 - cos`` quantised into ``bins`` equal cells over
    [0, 2]. Cumulative counts include the current cell, so the precision
    term is always defined where a positive sits.

    Returns a dict of per-query arrays: ``fastap``, ``t_ap``, ``c_ap``,
    ``t_ap_joint``, ``c_ap_joint``, ``log_prior`` and the histograms.
    """
    bins = int(bins)
    if bins < 2:
        raise ValueError("need at least two bins")
    n = batch.n
    if n < 3:
        raise ValueError("FastAP needs at least three samples")
    S = cosine_similarity(batch.Z)
    others = ~np.eye(n, dtype=bool)
    pos = batch.same_class() & others
    n_pos = pos.sum(axis=1)
    n_all = n - 1
    for i in range(n):
        if n_pos[i] == 0 or n_pos[i] == n_all:
            kind = "positive" if n_pos[i] == 0 else "negative"
            raise ValueError(f"query {i} has no {kind}")

    dist = np.clip(1.0 - S, 0.0, 2.0)
    cell = np.minimum((dist * (bins / 2.0)).astype(np.int64), bins - 1)
    rows = np.repeat(np.arange(n), n).reshape(n, n)
    h_all = np.zeros((n, bins))
    h_pos = np.zeros((n, bins))
    np.add.at(h_all, (rows[others], cell[others]), 1.0)
    np.add.at(h_pos, (rows[pos], cell[pos]), 1.0)
    H_all = np.cumsum(h_all, axis=1)
    H_pos = np.cumsum(h_pos, axis=1)

    occupied = h_pos > 0
    prec = np.divide(H_pos, H_all, out=np.zeros_like(H_pos), where=occupied)
    fastap = np.sum(h_pos * prec, axis=1) / n_pos

    w = h_pos / n_pos[:, None]
    prior = n_pos / n_all
    with np.errstate(divide="ignore"):
        log_cum_pos = np.where(occupied, np.log(H_pos / n_pos[:, None]), 0.0)
        log_cum_all = np.where(occupied, np.log(H_all / n_all), 0.0)
    t_ap = np.sum(w * log_cum_pos, axis=1)
    c_ap = np.sum(w * log_cum_all, axis=1)
    return {
        "fastap": fastap,
        "t_ap": t_ap,
        "c_ap": c_ap,
        "t_ap_joint": prior * t_ap,
        "c_ap_joint": prior * c_ap,
        "log_prior": np.log(prior),
        "h_pos": h_pos,
        "h_all": h_all,
    }


def fastap_loss(batch, bins=None):
    """FastAP with its Jensen tightness/contrastive decomposition.

    The report's terms decompose the Jensen lower bound on ``log FastAP``
    (with conditional weights ``P(D=d | R+)``)::

        tightness   = mean_i T_AP_i
        contrastive = mean_i (log P(R+)_i - C_AP_i)
        total       = tightness + contrastive  <=  mean_i log FastAP_i

    The average FastAP itself is ``extras["fastap"]``. The variants weighted
    by the joint ``P(D=d, R+)`` are kept in ``t_ap_joint``/``c_ap_joint``.
    """
    bins = HyperParams().fastap_bins if bins is None else bins
    q = fastap_per_query(batch, bins)
    return LossReport.from_terms(
        np.mean(q["t_ap"]),
        np.mean(q["log_prior"] - q["c_ap"]),
        fastap=np.mean(q["fastap"]),
        log_fastap=np.mean(np.log(q["fastap"])),
        t_ap=np.mean(q["t_ap"]),
        c_ap=np.mean(q["c_ap"]),
        t_ap_joint=np.mean(q["t_ap_joint"]),
        c_ap_joint=np.mean(q["c_ap_joint"]),
        bins=bins,
    )
