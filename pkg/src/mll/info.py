"""Discrete information measures and the pairwise entropy estimator.

All logarithms are natural, and ``0 log 0`` is taken as 0.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .bounds import BoundCheck
from .numeric import as_matrix, pairwise_sq_euclidean

log = logging.getLogger(__name__)

__all__ = [
    "DiscreteJoint",
    "ConditionalModel",
    "entropy",
    "mutual_information",
    "mutual_information_both_views",
    "conditional_cross_entropy",
    "lemma2_identity",
    "entropy_estimator",
    "gaussian_conditional_entropy",
    "gaussian_tightness_demo",
]


def _xlogx(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def entropy(p):
    """Shannon entropy of a probability vector (or flattened table)."""
    return float(-np.sum(_xlogx(p)))


@dataclass
class DiscreteJoint:
    """Joint table ``p[z, y]`` over a finite feature alphabet and ``K`` labels."""

    p: np.ndarray

    def __post_init__(self):
        self.p = as_matrix(self.p, "joint")
        if np.any(self.p < 0):
            raise ValueError("joint probabilities must be non-negative")
        if abs(self.p.sum() - 1.0) > 1e-12:
            raise ValueError(f"joint sums to {self.p.sum():.15g}, not 1")

    @property
    def p_z(self):
        return self.p.sum(axis=1)

    @property
    def p_y(self):
        return self.p.sum(axis=0)

    def conditional_y_given_z(self):
        pz = self.p_z[:, None]
        return np.divide(self.p, pz, out=np.zeros_like(self.p), where=pz > 0)

    def h_y(self):
        return entropy(self.p_y)

    def h_z(self):
        return entropy(self.p_z)

    def h_joint(self):
        return entropy(self.p)

    def h_y_given_z(self):
        return self.h_joint() - self.h_z()

    def h_z_given_y(self):
        return self.h_joint() - self.h_y()


@dataclass
class ConditionalModel:
    """Predicted label distribution ``q[z, y] = q(y | z)``; rows sum to one."""

    q: np.ndarray

    def __post_init__(self):
        self.q = as_matrix(self.q, "model")
        if np.any(self.q < 0) or np.any(np.abs(self.q.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("model rows must be probability vectors")


def mutual_information(joint):
    """``sum p(z,y) log(p(z,y) / (p(z) p(y)))`` evaluated term by term."""
    outer = np.outer(joint.p_z, joint.p_y)
    nz = joint.p > 0
    return float(np.sum(joint.p[nz] * np.log(joint.p[nz] / outer[nz])))


def mutual_information_both_views(joint):
    """Return ``(H(Y) - H(Y|Z), H(Z) - H(Z|Y))``.

    The conditional entropies are computed from the conditional tables
    rather than via the chain rule, so the two views are genuinely
    independent evaluations.
    """
    cond_y = joint.conditional_y_given_z()
    h_y_given_z = float(-np.sum(joint.p_z[:, None] * _xlogx(cond_y)))
    py = joint.p_y[None, :]
    cond_z = np.divide(joint.p, py, out=np.zeros_like(joint.p), where=py > 0)
    h_z_given_y = float(-np.sum(joint.p_y[None, :] * _xlogx(cond_z)))
    return joint.h_y() - h_y_given_z, joint.h_z() - h_z_given_y


def conditional_cross_entropy(joint, model):
    """``-sum p(z,y) log q(y|z)``; infinite mass where ``q = 0 < p`` is an error."""
    if model.q.shape != joint.p.shape:
        raise ValueError("model and joint tables differ in shape")
    nz = joint.p > 0
    if np.any(model.q[nz] <= 0):
        z, y = np.argwhere(nz & (model.q <= 0))[0]
        raise ValueError(f"model assigns zero probability to observed pair ({z}, {y})")
    return float(-np.sum(joint.p[nz] * np.log(model.q[nz])))


def lemma2_identity(joint, model, tol=1e-12):
    """Conditional cross-entropy = conditional entropy + conditional KL.

    ``details`` also records the cross-entropy obtained with the true
    conditional as the model, which must equal ``H(Y|Z)`` exactly (the KL
    term vanishes at the minimiser).
    """
    ce = conditional_cross_entropy(joint, model)
    cond = joint.conditional_y_given_z()
    nz = joint.p > 0
    h_cond = float(-np.sum(joint.p[nz] * np.log(cond[nz])))
    kl = float(np.sum(joint.p[nz] * np.log(cond[nz] / model.q[nz])))
    ce_at_truth = conditional_cross_entropy(joint, ConditionalModel(_complete_rows(cond)))
    return BoundCheck(
        "lemma2_identity", ce, h_cond + kl, "eq", tol,
        {"conditional_entropy": h_cond, "kl": kl, "ce_at_true_conditional": ce_at_truth,
         "kl_nonnegative": kl >= -tol},
    )


def _complete_rows(cond):
    # rows of p(y|z) for unobserved z are all-zero; any distribution will do there
    out = cond.copy()
    empty = out.sum(axis=1) == 0
    out[empty] = 1.0 / out.shape[1]
    return out


def entropy_estimator(Z):
    """``d/(n(n-1)) sum_{i != j} log D_ij^2``.

    Squared distances are clamped at 1e-12 (duplicate points emit a warning).
    """
    Z = as_matrix(Z)
    n, d = Z.shape
    if n < 2:
        raise ValueError("the entropy estimator needs at least two points")
    D2 = pairwise_sq_euclidean(Z)[~np.eye(n, dtype=bool)]
    if np.any(D2 < 1e-12):
        log.warning("entropy_estimator: %d coincident pairs clamped",
                    np.count_nonzero(D2 < 1e-12) // 2)
        D2 = np.maximum(D2, 1e-12)
    return float(d * np.sum(np.log(D2)) / (n * (n - 1)))


def gaussian_conditional_entropy(d, sigma):
    """Differential entropy of an isotropic Gaussian, ``(d/2) log(2 pi e sigma^2)``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return 0.5 * d * np.log(2.0 * np.pi * np.e * sigma * sigma)


def gaussian_tightness_demo(d, sigmas, n, seed=0):
    """Monte-Carlo look at the center tightness as a Gaussian cross-entropy.

    For each ``sigma`` draws ``n`` points from ``N(0, sigma^2 I)`` and
    returns rows with the per-sample cross-entropy against ``N(c, I)``
    (``(d/2) log 2pi + (1/2) ||z - c||^2`` averaged, ``c`` the sample mean),
    the analytic entropy, and the pairwise entropy estimate. The first is
    an upper bound on the second up to sampling noise, tight at sigma = 1.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for sigma in sigmas:
        Z = sigma * rng.standard_normal((n, d))
        R = Z - Z.mean(axis=0)
        cross = 0.5 * d * np.log(2.0 * np.pi) + 0.5 * np.mean(np.sum(R * R, axis=1))
        rows.append({
            "sigma": float(sigma),
            "cross_entropy": float(cross),
            "analytic_entropy": float(gaussian_conditional_entropy(d, sigma)),
            "pairwise_estimate": entropy_estimator(Z),
        })
    return rows
