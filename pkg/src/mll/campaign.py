"""Seeded randomized campaigns over the bound and identity verifiers.

Every trial draws one instance from a verifier-specific generator using
its own RNG stream, derived from ``(seed, verifier index, trial)``, so the
outcome of a trial does not depend on how trials are scheduled. Instances
are plain JSON-compatible dicts; a failing instance is written out
verbatim and can be replayed with :func:`run_instance`.
"""

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bounds
from .info import (
    ConditionalModel,
    DiscreteJoint,
    lemma2_identity,
    mutual_information,
    mutual_information_both_views,
)
from .losses import EmbeddingBatch, HyperParams, LambdaDegenerateError, SoftmaxClassifier

log = logging.getLogger(__name__)

__all__ = [
    "VERIFIERS",
    "DEFAULT_TOLERANCES",
    "VerifierSummary",
    "generate_instance",
    "run_instance",
    "run_campaign",
    "write_witnesses",
]

VERIFIERS = (
    "tightness_chain",
    "contrastive_chain",
    "ce_pce_bound",
    "hinge_approximation",
    "fastap_jensen",
    "lemma2_identity",
    "mi_views",
)

DEFAULT_TOLERANCES = {
    "tightness_chain": bounds.TOL_IDENTITY,
    "contrastive_chain": bounds.TOL_IDENTITY,
    "ce_pce_bound": bounds.TOL_EIGEN,
    "hinge_approximation": bounds.TOL_LOGEXP,
    "fastap_jensen": bounds.TOL_LOGEXP,
    "lemma2_identity": 1e-12,
    "mi_views": 1e-12,
}

MAX_WITNESSES = 20


def trial_rng(seed, group, trial):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(group, trial)))


def _unit_rows(Z):
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def _labels_with_min_count(rng, n, K, min_count):
    y = np.concatenate([np.repeat(np.arange(K), min_count),
                        rng.integers(0, K, n - K * min_count)])
    return rng.permutation(y)


def _gen_tightness(rng):
    K = int(rng.integers(2, 7))
    m = int(rng.integers(2, 64 // K + 1))
    d = int(rng.integers(2, 17))
    spread = rng.uniform(0.05, 2.0)
    centers = rng.standard_normal((K, d))
    y = rng.permutation(np.repeat(np.arange(K), m))
    Z = _unit_rows(centers[y] + spread * rng.standard_normal((K * m, d)))
    return {"Z": Z, "y": y, "K": K}


def _gen_contrastive(rng):
    K = int(rng.integers(2, 7))
    n = int(rng.integers(max(4, K), 49))
    d = int(rng.integers(2, 17))
    y = _labels_with_min_count(rng, n, K, 1)
    Z = _unit_rows(rng.standard_normal((n, d)))
    return {"Z": Z, "y": y, "K": K}


def _gen_ce_pce(rng):
    d = int(rng.integers(2, 9))
    K = int(rng.integers(2, 6))
    n = int(rng.integers(3 * d, 6 * d + 1))
    n = max(n, K)
    y = _labels_with_min_count(rng, n, K, 1)
    Z = rng.standard_normal((n, d))
    scale = 10.0 ** rng.uniform(-3.0, 0.0)
    theta = scale * rng.standard_normal((K, d))
    return {"Z": Z, "y": y, "K": K, "theta": theta}


def _gen_hinge(rng):
    K = int(rng.integers(2, 6))
    n = int(rng.integers(max(3, K), 33))
    d = int(rng.integers(1, 9))
    y = _labels_with_min_count(rng, n, K, 1)
    Z = rng.standard_normal((n, d))
    margin = float(rng.uniform(0.25, 2.0))
    D = np.sqrt(((Z[:, None, :] - Z[None, :, :]) ** 2).sum(-1))
    dmax = D[y[:, None] != y[None, :]].max()
    Z = Z * (margin * rng.uniform(0.3, 0.999) / dmax)
    return {"Z": Z, "y": y, "K": K, "margin": margin}


def _gen_fastap(rng):
    K = int(rng.integers(2, 5))
    n = int(rng.integers(max(6, 2 * K), 31))
    d = int(rng.integers(2, 9))
    y = _labels_with_min_count(rng, n, K, 2)
    Z = _unit_rows(rng.standard_normal((n, d)))
    bins = int(rng.choice([4, 16, 64]))
    return {"Z": Z, "y": y, "K": K, "bins": bins}


def _random_joint(rng):
    a, b = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    p = rng.dirichlet(np.ones(a * b)).reshape(a, b)
    p[rng.random((a, b)) < 0.2] = 0.0
    if p.sum() == 0.0:
        p[rng.integers(a), rng.integers(b)] = 1.0
    return p / p.sum()


def _gen_lemma2(rng):
    p = _random_joint(rng)
    q = rng.dirichlet(np.ones(p.shape[1]), size=p.shape[0])
    return {"joint": p, "model": q}


def _gen_mi(rng):
    return {"joint": _random_joint(rng)}


_GENERATORS = {
    "tightness_chain": _gen_tightness,
    "contrastive_chain": _gen_contrastive,
    "ce_pce_bound": _gen_ce_pce,
    "hinge_approximation": _gen_hinge,
    "fastap_jensen": _gen_fastap,
    "lemma2_identity": _gen_lemma2,
    "mi_views": _gen_mi,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, np.bool_)):
        return obj.item()
    return obj


def generate_instance(verifier, seed, trial):
    """The JSON-ready instance for one trial of one verifier."""
    group = VERIFIERS.index(verifier)
    inst = _GENERATORS[verifier](trial_rng(seed, group, trial))
    inst["verifier"] = verifier
    inst.setdefault("hyper", asdict(HyperParams()))
    return _jsonable(inst)


def _batch(inst):
    return EmbeddingBatch(np.array(inst["Z"], dtype=np.float64),
                          np.array(inst["y"]), inst["K"])


def _mi_checks(joint, tol):
    v1, v2 = mutual_information_both_views(joint)
    ref = mutual_information(joint)
    return [
        bounds.BoundCheck("mi_views_agree", v1, v2, "eq", tol),
        bounds.BoundCheck("mi_discriminative_vs_definition", v1, ref, "eq", tol),
    ]


def run_instance(inst, tol=None):
    """Run the verifier named in ``inst`` and return its list of checks.

    Raises :class:`bounds.PreconditionError` or
    :class:`LambdaDegenerateError` for instances the verifier rejects.
    """
    v = inst["verifier"]
    if v not in VERIFIERS:
        raise ValueError(f"unknown verifier {v!r}")
    tol = DEFAULT_TOLERANCES[v] if tol is None else tol
    h = HyperParams(**inst.get("hyper", {}))
    if v == "tightness_chain":
        return bounds.verify_tightness_chain(_batch(inst), h, tol)
    if v == "contrastive_chain":
        return bounds.verify_contrastive_chain(_batch(inst), h, tol)
    if v == "ce_pce_bound":
        clf = SoftmaxClassifier(np.array(inst["theta"], dtype=np.float64))
        check = bounds.verify_ce_pce_bound(_batch(inst), clf, tol)
        # f1 is convex with minimiser at the hard class sums, so this link always holds
        f1_link = bounds.BoundCheck("ce_pce_f1_convexity", 0.0, check.details["f1_gap"],
                                    "le", tol)
        return [check, f1_link]
    if v == "hinge_approximation":
        return [bounds.verify_hinge_approximation(_batch(inst), inst["margin"], tol)]
    if v == "fastap_jensen":
        return [bounds.verify_fastap_jensen(_batch(inst), inst["bins"], tol)]
    joint = DiscreteJoint(np.array(inst["joint"], dtype=np.float64))
    if v == "lemma2_identity":
        check = lemma2_identity(joint, ConditionalModel(np.array(inst["model"])), tol)
        ce_truth = bounds.BoundCheck("lemma2_minimum_at_truth",
                                     check.details["ce_at_true_conditional"],
                                     check.details["conditional_entropy"], "eq", tol)
        return [check, ce_truth]
    return _mi_checks(joint, tol)


@dataclass
class VerifierSummary:
    verifier: str
    tolerance: float
    trials: int = 0
    passes: int = 0
    violations: int = 0
    skips: int = 0
    skip_reasons: dict = field(default_factory=dict)
    worst_slack: float = None
    worst_check: str = None
    witnesses: list = field(default_factory=list)

    @property
    def skip_rate(self):
        return self.skips / self.trials if self.trials else 0.0

    def as_dict(self):
        out = asdict(self)
        out.pop("witnesses")
        out["skip_rate"] = self.skip_rate
        out["witness_count"] = len(self.witnesses)
        return out


def _signed_slack(check):
    # distance to the failure boundary; negative means the check failed
    if check.kind == "eq":
        return check.tolerance - check.slack
    return check.slack + check.tolerance


def _run_trial(args):
    verifier, seed, trial, tol = args
    inst = generate_instance(verifier, seed, trial)
    try:
        checks = run_instance(inst, tol)
    except (bounds.PreconditionError, LambdaDegenerateError) as exc:
        return trial, "skip", type(exc).__name__, None, None, None
    worst = min(checks, key=_signed_slack)
    failed = [c.as_dict() for c in checks if not c.holds]
    status = "fail" if failed else "pass"
    witness = dict(inst, trial=trial, seed=seed, failed_checks=failed) if failed else None
    return trial, status, None, _signed_slack(worst), worst.name, witness


def run_campaign(verifiers=VERIFIERS, trials=1000, seed=42, jobs=1, tolerance=None):
    """Run ``trials`` seeded instances per verifier.

    ``tolerance`` may be ``None`` (defaults), a number applied everywhere,
    or a dict keyed by verifier. Returns a dict of
    :class:`VerifierSummary`, in the order given.
    """
    if not verifiers:
        raise ValueError("no verifiers selected")
    unknown = [v for v in verifiers if v not in VERIFIERS]
    if unknown:
        raise ValueError(f"unknown verifiers {unknown}; expected a subset of {VERIFIERS}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    tols = dict(DEFAULT_TOLERANCES)
    if isinstance(tolerance, dict):
        tols.update(tolerance)
    elif tolerance is not None:
        tols = {v: float(tolerance) for v in VERIFIERS}

    tasks = [(v, seed, t, tols[v]) for v in verifiers for t in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial, tasks, chunksize=64))
    else:
        results = [_run_trial(t) for t in tasks]

    summaries = {v: VerifierSummary(v, tols[v]) for v in verifiers}
    for (v, *_), (trial, status, reason, slack, name, witness) in zip(tasks, results):
        s = summaries[v]
        s.trials += 1
        if status == "skip":
            s.skips += 1
            s.skip_reasons[reason] = s.skip_reasons.get(reason, 0) + 1
            continue
        if status == "pass":
            s.passes += 1
        else:
            s.violations += 1
            if len(s.witnesses) < MAX_WITNESSES:
                s.witnesses.append(witness)
        if s.worst_slack is None or slack < s.worst_slack:
            s.worst_slack, s.worst_check = slack, name
    for s in summaries.values():
        log.info("%s: %d/%d passed, %d violations, %d skipped",
                 s.verifier, s.passes, s.trials, s.violations, s.skips)
    return summaries


def write_witnesses(summaries, directory):
    """Write each stored witness as ``<verifier>_<trial>.json``; returns the paths."""
    paths = []
    for s in summaries.values():
        if not s.witnesses:
            continue
        os.makedirs(directory, exist_ok=True)
        for w in s.witnesses:
            path = os.path.join(directory, f"{s.verifier}_{w['trial']:05d}.json")
            with open(path, "w") as fh:
                json.dump(w, fh, indent=1, sort_keys=True)
                fh.write("\n")
            paths.append(path)
    return paths
