"""Numerical checks of the bounds and identities relating the losses.

Each verifier evaluates both sides of an inequality (or identity) on a
concrete batch and returns :class:`BoundCheck` records. The checks follow
the explicit intermediate expressions of the derivations rather than the
"up to a constant" statements, because only the former can be asserted.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .losses import (
    HyperParams,
    LambdaDegenerateError,
    SoftmaxClassifier,
    cross_entropy_loss,
    fastap_per_query,
    pce_loss,
)
from .numeric import (
    cosine_similarity,
    log_sum_exp_rows,
    pairwise_sq_euclidean,
    symmetric_eigenvalues,
)

log = logging.getLogger(__name__)

__all__ = [
    "BoundCheck",
    "PceLambda",
    "PreconditionError",
    "LambdaDegenerateError",
    "TOL_IDENTITY",
    "TOL_EIGEN",
    "TOL_LOGEXP",
    "compute_pce_lambda",
    "center_identity_checks",
    "verify_tightness_chain",
    "verify_contrastive_chain",
    "verify_ce_pce_bound",
    "hinge_sandwich",
    "verify_hinge_approximation",
    "fastap_jensen_terms",
    "verify_fastap_jensen",
]

TOL_IDENTITY = 1e-9
TOL_EIGEN = 1e-8
TOL_LOGEXP = 1e-10
LAMBDA_MIN = 1e-6


class PreconditionError(ValueError):
    """The instance does not satisfy the assumptions a verifier relies on."""


@dataclass
class BoundCheck:
    """One verified relation ``lhs <= rhs`` (kind "le") or ``lhs == rhs`` ("eq")."""

    name: str
    lhs: float
    rhs: float
    kind: str = "le"
    tolerance: float = TOL_IDENTITY
    details: dict = field(default_factory=dict)
    witness: dict = field(default_factory=dict)
    side_conditions_hold: bool = True

    @property
    def slack(self):
        if self.kind == "eq":
            return abs(self.lhs - self.rhs)
        return self.rhs - self.lhs

    @property
    def holds(self):
        if not self.side_conditions_hold:
            return False
        if self.kind == "eq":
            return self.slack <= self.tolerance
        return self.lhs <= self.rhs + self.tolerance

    def as_dict(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "holds": bool(self.holds),
            "tolerance": self.tolerance,
            "details": self.details,
            "witness": self.witness,
        }


def _le(name, lhs, rhs, tol, **details):
    return BoundCheck(name, float(lhs), float(rhs), "le", tol, details)


def _eq(name, lhs, rhs, tol, **details):
    return BoundCheck(name, float(lhs), float(rhs), "eq", tol, details)


def _summary(batch):
    return {"n": batch.n, "d": batch.d, "K": batch.K}


def _require_unit_rows(batch):
    norms = np.linalg.norm(batch.Z, axis=1)
    worst = np.max(np.abs(norms - 1.0))
    if worst > 1e-9:
        raise PreconditionError(
            f"rows must be unit-normalised (max |norm - 1| = {worst:.2e})"
        )


def _require_balanced(batch):
    counts = np.bincount(batch.y, minlength=batch.K)
    if np.any(counts != counts[0]):
        raise PreconditionError(f"classes are unbalanced: sizes {counts.tolist()}")
    if counts[0] < 2:
        raise PreconditionError("each class needs at least two members")


@dataclass
class PceLambda:
    lam: float
    per_class_min_eigs: np.ndarray
    traces: np.ndarray


def compute_pce_lambda(batch, clf):
    """Smallest eigenvalue over the per-class matrices
    ``A_k = (1/n) sum_i (p_ik - p_ik^2) z_i z_i^T``.

    Tiny negative eigenvalues from round-off (above -1e-10) are clamped to 0.
    """
    P = clf.probabilities(batch.Z)
    W = P - P * P
    mins, traces = [], []
    for k in range(P.shape[1]):
        A = (batch.Z * W[:, k : k + 1]).T @ batch.Z / batch.n
        eigs = symmetric_eigenvalues(A)
        mins.append(eigs[0])
        traces.append(np.trace(A))
    mins = np.array(mins)
    mins = np.where((mins < 0) & (mins > -1e-10), 0.0, mins)
    return PceLambda(float(mins.min()), mins, np.array(traces))


def center_identity_checks(batch, tol=TOL_IDENTITY):
    """Per class: ``sum ||z - c_k||^2 == (1/(2|Z_k|)) sum_ij ||z_i - z_j||^2``.

    This is an algebraic identity and needs neither normalised rows nor
    balanced classes. Empty classes are skipped.
    """
    checks = []
    for k in range(batch.K):
        Zk = batch.Z[batch.y == k]
        if len(Zk) == 0:
            continue
        centred = Zk - Zk.mean(axis=0)
        lhs = np.sum(centred * centred)
        rhs = pairwise_sq_euclidean(Zk).sum() / (2.0 * len(Zk))
        checks.append(_eq(f"center_identity[{k}]", lhs, rhs, tol, size=len(Zk)))
    return checks


def verify_tightness_chain(batch, h=None, tol=TOL_IDENTITY):
    """Center / SNCA / multi-similarity tightness relations, class by class.

    Requires unit rows and balanced classes with at least two members each.
    For every class ``k`` this emits the center identity, the Jensen step
    for SNCA (``-log`` of a mean is at most the mean of ``-log``) together
    with its rewriting in squared distances, and the Jensen step for MS at
    margin 1 together with the self-term identity that turns
    ``log(1 + sum_{j != i})`` into ``log sum_j``.
    """
    h = h or HyperParams()
    _require_unit_rows(batch)
    _require_balanced(batch)
    sigma, alpha = h.snca_sigma, h.ms_alpha
    S_all = cosine_similarity(batch.Z)
    checks = center_identity_checks(batch, tol)
    for k in range(batch.K):
        idx = np.flatnonzero(batch.y == k)
        m = len(idx)
        S = S_all[np.ix_(idx, idx)]
        off = ~np.eye(m, dtype=bool)
        D2 = pairwise_sq_euclidean(batch.Z[idx])

        snca_lhs = -np.sum(log_sum_exp_rows(S / sigma, off) - np.log(m - 1))
        snca_jensen = -np.sum(S[off]) / ((m - 1) * sigma)
        snca_dist = np.sum(D2[off]) / (2.0 * sigma * (m - 1))
        checks.append(_le(f"snca_jensen[{k}]", snca_lhs, snca_jensen, tol))
        checks.append(_le(f"snca_distance_form[{k}]", snca_lhs, snca_dist, tol,
                          offset=m / sigma))

        expo = -alpha * (S - 1.0)
        ms_self_excluded = np.sum(
            np.log1p(np.sum(np.where(off, np.exp(expo), 0.0), axis=1))
        ) / alpha
        ms_all = np.sum(log_sum_exp_rows(expo)) / alpha
        ms_mean = ms_all - m * np.log(m) / alpha
        ms_jensen = np.sum(-(S - 1.0)) / m
        checks.append(_eq(f"ms_self_term[{k}]", ms_self_excluded, ms_all, tol))
        checks.append(_le(f"ms_jensen[{k}]", ms_jensen, ms_mean, tol))
        checks.append(_eq(f"ms_distance_form[{k}]", ms_jensen,
                          np.sum(D2) / (2.0 * m), tol))
    for c in checks:
        c.witness = _summary(batch)
    return checks


def verify_contrastive_chain(batch, h=None, tol=TOL_IDENTITY):
    """Lower-bound chains from the MS and SNCA contrastive terms down to
    ``C = -(1/n) sum_i sum_{neg} D_ij^2``.

    Links, for MS (margin 1): drop the ``1 +``; Jensen over negatives;
    rewrite cosines as squared distances; compare with ``C`` scaled by the
    largest negative-set weight. SNCA follows the same route after first
    dropping the positive terms. Samples without negatives are skipped.
    """
    h = h or HyperParams()
    _require_unit_rows(batch)
    n, beta, sigma = batch.n, h.ms_beta, h.snca_sigma
    S = cosine_similarity(batch.Z)
    D2 = pairwise_sq_euclidean(batch.Z)
    same = batch.same_class()
    neg = ~same
    others = ~np.eye(n, dtype=bool)
    n_neg = neg.sum(axis=1)
    keep = n_neg > 0
    if not keep.all():
        log.info("contrastive chain: skipping %d samples without negatives",
                 np.count_nonzero(~keep))
    if not keep.any():
        raise PreconditionError("no sample has a negative")
    S, D2, neg, others = S[keep], D2[keep], neg[keep], others[keep]
    n_neg = n_neg[keep]
    log_nneg = np.log(n_neg)
    mean_neg_S = np.sum(np.where(neg, S, 0.0), axis=1) / n_neg
    mean_neg_D2 = np.sum(np.where(neg, D2, 0.0), axis=1) / n_neg
    C = -np.sum(np.where(neg, D2, 0.0)) / n
    worst_weight = 1.0 / (2.0 * n_neg.min())

    checks = []
    expo = beta * (S - 1.0)
    ms0 = np.sum(log_sum_exp_rows(np.hstack([np.zeros((len(S), 1)), expo]),
                                  np.hstack([np.ones((len(S), 1), bool), neg]))) / (beta * n)
    ms1 = np.sum(log_sum_exp_rows(expo, neg)) / (beta * n)
    ms2 = np.sum(log_nneg / beta + (mean_neg_S - 1.0)) / n
    ms3 = np.sum(log_nneg / beta - 0.5 * mean_neg_D2) / n
    ms4 = np.sum(log_nneg) / (beta * n) + worst_weight * C
    checks += [
        _le("ms_drop_one", ms1, ms0, tol),
        _le("ms_jensen", ms2, ms1, tol),
        _eq("ms_distance_form", ms2, ms3, tol),
        _le("ms_to_C", ms4, ms3, tol, C=C),
    ]

    A = S / sigma
    sn0 = np.sum(log_sum_exp_rows(A, others)) / n
    sn1 = np.sum(log_sum_exp_rows(A, neg)) / n
    sn2 = np.sum(log_nneg + mean_neg_S / sigma) / n
    sn3 = np.sum(log_nneg + (1.0 - 0.5 * mean_neg_D2) / sigma) / n
    sn4 = (np.sum(log_nneg) + len(S) / sigma) / n + worst_weight * C / sigma
    checks += [
        _le("snca_drop_positives", sn1, sn0, tol),
        _le("snca_jensen", sn2, sn1, tol),
        _eq("snca_distance_form", sn2, sn3, tol),
        _le("snca_to_C", sn4, sn3, tol, C=C),
    ]
    for c in checks:
        c.witness = _summary(batch)
    return checks


def verify_ce_pce_bound(batch, clf, tol=TOL_EIGEN):
    """Check ``PCE <= CE`` at the classifier's soft assignments.

    CE is evaluated without label smoothing and without bias. Raises
    :class:`LambdaDegenerateError` when lambda <= 1e-6. The details carry
    both halves of the split: the ``f1`` gap is non-negative by convexity,
    the ``f2`` gap is what decides the inequality.
    """
    clf = SoftmaxClassifier(clf.theta)
    lam = compute_pce_lambda(batch, clf)
    if lam.lam <= LAMBDA_MIN:
        raise LambdaDegenerateError(lam.lam)
    P = clf.probabilities(batch.Z)
    pce = pce_loss(batch, P, lam.lam)
    ce, _ = cross_entropy_loss(batch, clf, 0.0, lam=lam.lam)
    f1_gap = ce.tightness - pce.tightness
    f2_gap = ce.contrastive - pce.contrastive
    check = _le("ce_pce_bound", pce.total, ce.total, tol,
                **{"lambda": lam.lam, "f1_gap": f1_gap, "f2_gap": f2_gap,
                   "pce_tightness": pce.tightness,
                   "pce_contrastive": pce.contrastive})
    check.witness = _summary(batch)
    return check


def hinge_sandwich(x):
    """Element-wise ``(1-2x, (1-x)^2, 1-x)`` for ``x`` in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    return 1.0 - 2.0 * x, (1.0 - x) ** 2, 1.0 - x


def verify_hinge_approximation(batch, m, tol=TOL_LOGEXP):
    """Linearising the squared hinge on cross-class pairs.

    With ``x = D_ij / m`` (every cross-class distance must be <= m), checks
    ``1 - 2x <= (1-x)^2 <= 1 - x`` element-wise and that the squared-hinge
    contrastive term differs from its linearisation by at most
    ``(m^2/n) sum x``.
    """
    if m <= 0:
        raise PreconditionError("margin must be positive")
    D = np.sqrt(pairwise_sq_euclidean(batch.Z))
    neg = ~batch.same_class()
    x = D[neg] / m
    if x.size and x.max() > 1.0:
        raise PreconditionError(
            f"cross-class distance {x.max() * m:.4g} exceeds the margin {m}"
        )
    lo, mid, hi = hinge_sandwich(x)
    low_slack = np.min(mid - lo, initial=np.inf)
    high_slack = np.min(hi - mid, initial=np.inf)
    sandwich_ok = bool(low_slack >= -tol and high_slack >= -tol)

    n = batch.n
    exact = m * m * np.sum(mid) / n
    linear = m * m * np.sum(lo) / n
    cap = m * m * np.sum(x) / n
    err = abs(exact - linear)
    check = _le("hinge_approximation", err, cap, tol,
                exact=exact, linear=linear, sandwich_low_slack=float(low_slack),
                sandwich_high_slack=float(high_slack),
                sandwich_holds=sandwich_ok, pairs=int(x.size))
    check.side_conditions_hold = sandwich_ok
    check.witness = _summary(batch)
    return check


def fastap_jensen_terms(h_pos, h_all):
    """``log FastAP`` and its Jensen lower bound for one query's histograms.

    ``h_pos`` and ``h_all`` are per-bin counts of positives and of all
    retrieved points (cumulative counts include the current bin).
    """
    h_pos = np.asarray(h_pos, dtype=np.float64)
    h_all = np.asarray(h_all, dtype=np.float64)
    n_pos, n_all = h_pos.sum(), h_all.sum()
    H_pos, H_all = np.cumsum(h_pos), np.cumsum(h_all)
    occ = h_pos > 0
    terms = H_pos[occ] / n_pos * (n_pos / n_all) / (H_all[occ] / n_all)
    w = h_pos[occ] / n_pos
    fastap = np.sum(terms * w)
    return np.log(fastap), np.sum(w * np.log(terms))


def verify_fastap_jensen(batch, bins, tol=TOL_LOGEXP):
    """Per query, ``log FastAP_i`` is at least its Jensen lower bound.

    Returns one check built from the query with the smallest slack.
    """
    q = fastap_per_query(batch, bins)
    log_fastap = np.log(q["fastap"])
    lower = q["t_ap"] - q["c_ap"] + q["log_prior"]
    slack = log_fastap - lower
    worst = int(np.argmin(slack))
    check = _le("fastap_jensen", lower[worst], log_fastap[worst], tol,
                worst_query=worst, queries=batch.n,
                violations=int(np.count_nonzero(slack < -tol)), bins=int(bins))
    check.witness = _summary(batch)
    return check
