"""Run each bound verifier on a few random instances and show the slack.

The tightness and contrastive chains, the hinge sandwich and the FastAP
Jensen bound hold on every instance. The cross-entropy >= PCE inequality
does not: once the classifier weights are large enough the pairwise
cross-entropy overtakes the cross-entropy, and the verifier says so.

    python3 demos/bound_checks.py
"""

from mll.campaign import VERIFIERS, generate_instance, run_instance

for verifier in VERIFIERS:
    print(verifier)
    for trial in range(3):
        inst = generate_instance(verifier, seed=42, trial=trial)
        try:
            checks = run_instance(inst)
        except ValueError as exc:  # precondition or degenerate lambda
            print(f"  trial {trial}: skipped ({exc})")
            continue
        worst = min(checks, key=lambda c: c.slack if c.kind != "eq" else -c.slack)
        status = "holds" if all(c.holds for c in checks) else "VIOLATED"
        print(f"  trial {trial}: {len(checks):2d} checks, {status:8s} "
              f"tightest={worst.name} lhs={worst.lhs:.6g} rhs={worst.rhs:.6g}")
    print()

inst = generate_instance("ce_pce_bound", 42, 0)
ce_pce, f1 = run_instance(inst)
print("A cross-entropy >= PCE counterexample:")
print(f"  CE = {ce_pce.rhs:.6g}, PCE = {ce_pce.lhs:.6g}, lambda = {ce_pce.details['lambda']:.3g}")
print(f"  the f1 half still behaves (gap {ce_pce.details['f1_gap']:.3g} >= 0); "
      f"the f2 half loses {-ce_pce.details['f2_gap']:.3g}")
print("  replay it with:  mll verify --replay <witness.json>")
