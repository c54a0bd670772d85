"""Command-line front end.

Subcommands: ``verify``, ``train``, ``grad-check``, ``mi-demo`` and
``eval-recall``. Each reads an optional JSON config (unknown keys are
rejected), honours ``--seed`` and ``--out``, and writes ``summary.json``
into the output directory. The only non-reproducible value in any output
is the ``generated_at`` timestamp.

Exit codes: 0 success, 1 verification or training failure, 2 usage or
configuration error.
"""

import argparse
import logging
import os
import sys
from dataclasses import asdict, fields
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .campaign import (
    VERIFIERS,
    run_campaign,
    run_instance,
    write_witnesses,
)
from .info import (
    ConditionalModel,
    DiscreteJoint,
    gaussian_tightness_demo,
    lemma2_identity,
    mutual_information_both_views,
)
from .io import read_json, read_labels, read_matrix, write_json
from .bounds import PreconditionError
from .losses import HyperParams, LambdaDegenerateError
from .retrieval import recall_at_k
from .train import (
    GRADIENT_TARGETS,
    SyntheticSpec,
    TrainConfig,
    TrainingDiverged,
    alternating_bound_demo,
    embed,
    generate_blobs,
    gradient_suite,
    train_model,
)

log = logging.getLogger("mll")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}


class ConfigError(ValueError):
    pass


def _check_keys(cfg, allowed, where):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")


def _dataclass_keys(cls):
    return {f.name for f in fields(cls)}


SCHEMAS = {
    "verify": {"verifiers": list(VERIFIERS), "trials": 1000, "seed": 42, "jobs": 1,
               "tolerance": None, "witness_dir": "witnesses"},
    "train": {"mode": "train", "seed": 0, "epochs": None, "synthetic": {}, "train": {}},
    "grad-check": {"batches": 50, "seed": 0, "step": 1e-5, "threshold": 1e-4,
                   "max_n": 32, "max_d": 8, "max_K": 5},
    "mi-demo": {"joints": 5, "seed": 0, "max_size": 8, "d": 4,
                "sigmas": [0.5, 1.0, 2.0], "n": 400},
    "eval-recall": {"embeddings": None, "labels": None, "ks": [1, 2, 4, 8],
                    "distance": ["euclidean", "cosine"]},
}


def load_config(command, path, overrides):
    cfg = dict(SCHEMAS[command])
    if path:
        try:
            user = read_json(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        _check_keys(user, cfg, f"{command} config")
        cfg.update(user)
    for key, value in overrides.items():
        if value is not None and key in cfg:
            cfg[key] = value
    return cfg


def _stamp(payload):
    payload["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return payload


def _out_path(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


# ---------------------------------------------------------------- verify

def cmd_verify(cfg, args):
    if args.replay:
        return _replay(args.replay, cfg)
    verifiers = cfg["verifiers"]
    if not isinstance(verifiers, list) or not verifiers:
        raise ConfigError("verifiers must be a non-empty list")
    bad = [v for v in verifiers if v not in VERIFIERS]
    if bad:
        raise ConfigError(f"unknown verifiers: {', '.join(map(str, bad))}")
    tol = cfg["tolerance"]
    if isinstance(tol, dict):
        _check_keys(tol, VERIFIERS, "tolerance")
    elif tol is not None and (not isinstance(tol, (int, float)) or tol < 0):
        raise ConfigError("tolerance must be a non-negative number or a per-verifier object")
    if int(cfg["trials"]) < 1 or int(cfg["jobs"]) < 1:
        raise ConfigError("trials and jobs must be >= 1")

    summaries = run_campaign(verifiers, int(cfg["trials"]), int(cfg["seed"]),
                             int(cfg["jobs"]), tol)
    witness_dir = os.path.join(args.out, cfg["witness_dir"])
    paths = write_witnesses(summaries, witness_dir)
    violations = sum(s.violations for s in summaries.values())
    for s in summaries.values():
        print(f"{s.verifier:22s} trials={s.trials} passes={s.passes} "
              f"violations={s.violations} skips={s.skips} worst_slack={s.worst_slack:.3e}")
    write_json(_out_path(args, "summary.json"), _stamp({
        "command": "verify",
        "config": cfg,
        "verifiers": {v: s.as_dict() for v, s in summaries.items()},
        "violations": violations,
        "witness_files": [os.path.relpath(p, args.out) for p in paths],
    }))
    return EXIT_OK if violations == 0 else EXIT_FAIL


def _replay(path, cfg):
    try:
        inst = read_json(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read witness {path}: {exc}") from exc
    if inst.get("verifier") not in VERIFIERS:
        raise ConfigError(f"{path}: missing or unknown 'verifier'")
    tol = cfg["tolerance"]
    if isinstance(tol, dict):
        tol = tol.get(inst["verifier"])
    try:
        checks = run_instance(inst, tol)
    except (PreconditionError, LambdaDegenerateError) as exc:
        print(f"instance rejected: {exc}")
        return EXIT_FAIL
    for c in checks:
        print(f"{c.name:34s} {'ok  ' if c.holds else 'FAIL'} lhs={c.lhs:.12g} "
              f"rhs={c.rhs:.12g} slack={c.slack:.3e}")
    return EXIT_OK if all(c.holds for c in checks) else EXIT_FAIL


# ----------------------------------------------------------------- train

def _train_configs(cfg):
    syn, tr = cfg["synthetic"], cfg["train"]
    _check_keys(syn, _dataclass_keys(SyntheticSpec), "synthetic")
    _check_keys(tr, _dataclass_keys(TrainConfig), "train")
    if "hyper" in tr:
        _check_keys(tr["hyper"], _dataclass_keys(HyperParams), "train.hyper")
    syn = dict({"seed": cfg["seed"], "per_class": 128}, **syn)
    tr = dict({"seed": cfg["seed"]}, **tr)
    if cfg["epochs"] is not None:
        tr["epochs"] = cfg["epochs"]
    try:
        return SyntheticSpec(**syn), TrainConfig(**tr)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(cfg, args):
    if cfg["mode"] not in ("train", "bound-demo"):
        raise ConfigError("mode must be 'train' or 'bound-demo'")
    spec, tcfg = _train_configs(cfg)
    train, test = generate_blobs(spec)
    status, error = EXIT_OK, None
    params = None
    try:
        if cfg["mode"] == "train":
            params, trace = train_model((train, test), tcfg)
        else:
            trace = alternating_bound_demo((train, test), tcfg.epochs, tcfg)
    except TrainingDiverged as exc:
        trace, status, error = exc.trace, EXIT_FAIL, str(exc)
    with open(_out_path(args, "trace.csv"), "w") as fh:
        fh.write(trace.to_csv())

    payload = {"command": "train", "config": {**cfg, "synthetic": asdict(spec),
                                              "train": asdict(tcfg)},
               "epochs_recorded": len(trace.rows), "error": error}
    if params is not None:
        ks = [k for k in (1, 2, 4, 8) if k < test.n]
        E = embed(params, test.Z, tcfg.normalize)
        payload["recall"] = recall_at_k(E, test.y, ks, ["euclidean", "cosine"]).as_dict()
        payload["final"] = trace.rows[-1]
        print(f"recall@1 euclidean={payload['recall']['recall']['euclidean'][0]:.4f}")
    if cfg["mode"] == "bound-demo":
        gaps = [r["gap"] for r in trace.rows if np.isfinite(r["gap"])]
        payload["bound_demo"] = {
            "recorded_epochs": len(trace.rows),
            "non_degenerate_epochs": len(gaps),
            "violations_ce_below_pce": sum(g < -1e-8 for g in gaps),
        }
        print(f"CE >= PCE violated at {payload['bound_demo']['violations_ce_below_pce']} "
              f"of {len(gaps)} non-degenerate epochs")
        if payload["bound_demo"]["violations_ce_below_pce"]:
            status = EXIT_FAIL
    write_json(_out_path(args, "summary.json"), _stamp(payload))
    if error:
        print(f"training diverged: {error}", file=sys.stderr)
    return status


# ------------------------------------------------------------ grad-check

def cmd_grad_check(cfg, args):
    if int(cfg["batches"]) < 1:
        raise ConfigError("batches must be >= 1")
    if not 1e-7 <= float(cfg["step"]) <= 1e-3:
        raise ConfigError("step must lie in [1e-7, 1e-3]")
    worst = gradient_suite(int(cfg["batches"]), int(cfg["seed"]), float(cfg["step"]),
                           int(cfg["max_n"]), int(cfg["max_d"]), int(cfg["max_K"]),
                           GRADIENT_TARGETS)
    ok = all(v <= cfg["threshold"] for v in worst.values())
    for key, v in worst.items():
        print(f"{key:16s} {v:.3e} {'ok' if v <= cfg['threshold'] else 'FAIL'}")
    write_json(_out_path(args, "summary.json"),
               _stamp({"command": "grad-check", "config": cfg, "worst": worst, "ok": ok}))
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------- mi-demo

def cmd_mi_demo(cfg, args):
    rng = np.random.default_rng(int(cfg["seed"]))
    top = int(cfg["max_size"])
    if top < 1:
        raise ConfigError("max_size must be >= 1")
    joints = []
    for _ in range(int(cfg["joints"])):
        a, b = rng.integers(1, top + 1, size=2)
        p = rng.dirichlet(np.ones(a * b)).reshape(a, b)
        q = rng.dirichlet(np.ones(b), size=a)
        joint = DiscreteJoint(p / p.sum())
        disc, gen = mutual_information_both_views(joint)
        lem = lemma2_identity(joint, ConditionalModel(q))
        joints.append({"shape": [int(a), int(b)], "mi_discriminative": disc,
                       "mi_generative": gen, "cross_entropy": lem.lhs,
                       "conditional_entropy": lem.details["conditional_entropy"],
                       "kl": lem.details["kl"]})
        print(f"{a}x{b}: H(Y)-H(Y|Z)={disc:.12f} H(Z)-H(Z|Y)={gen:.12f} "
              f"CE={lem.lhs:.6f} = H(Y|Z) {lem.details['conditional_entropy']:.6f} "
              f"+ KL {lem.details['kl']:.6f}")
    rows = gaussian_tightness_demo(int(cfg["d"]), cfg["sigmas"], int(cfg["n"]),
                                   int(cfg["seed"]))
    for r in rows:
        print(f"sigma={r['sigma']:.3g} cross_entropy={r['cross_entropy']:.4f} "
              f"analytic={r['analytic_entropy']:.4f} pairwise={r['pairwise_estimate']:.4f}")
    write_json(_out_path(args, "summary.json"),
               _stamp({"command": "mi-demo", "config": cfg, "joints": joints,
                       "gaussian": rows}))
    return EXIT_OK


# ----------------------------------------------------------- eval-recall

def cmd_eval_recall(cfg, args):
    emb = args.embeddings or cfg["embeddings"]
    lab = args.labels or cfg["labels"]
    if not emb or not lab:
        raise ConfigError("eval-recall needs an embeddings file and a labels file")
    ks = args.ks or cfg["ks"]
    dist = [args.distance] if args.distance else cfg["distance"]
    try:
        Z, y = read_matrix(emb), read_labels(lab)
        result = recall_at_k(Z, y, ks, dist)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    payload = _stamp({"command": "eval-recall",
                      "config": {**cfg, "embeddings": emb, "labels": lab, "ks": ks,
                                 "distance": dist},
                      **result.as_dict()})
    write_json(_out_path(args, "summary.json"), payload)
    with open(_out_path(args, "recall.csv"), "w") as fh:
        fh.write("distance,k,recall\n")
        for d, k, r in result.rows():
            fh.write(f"{d},{k},{r!r}\n")
    for d, k, r in result.rows():
        print(f"{d:9s} recall@{k} = {r:.4f}")
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "train": cmd_train, "grad-check": cmd_grad_check,
            "mi-demo": cmd_mi_demo, "eval-recall": cmd_eval_recall}


def build_parser():
    parser = argparse.ArgumentParser(prog="mll", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="mll-out", help="output directory")
        p.add_argument("--trials", type=int)
        p.add_argument("--jobs", type=int)
        if name == "verify":
            p.add_argument("--replay", help="re-run one witness instance file")
        if name == "eval-recall":
            p.add_argument("--embeddings")
            p.add_argument("--labels")
            p.add_argument("--ks", type=int, nargs="+")
            p.add_argument("--distance", choices=["euclidean", "cosine"])
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = os.environ.get("MLL_LOG", "warn").lower()
    if level not in LOG_LEVELS:
        print(f"MLL_LOG must be one of {', '.join(LOG_LEVELS)}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.command, args.config,
                          {"seed": args.seed, "trials": args.trials, "jobs": args.jobs})
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
