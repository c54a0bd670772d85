"""Mutual information from both sides, and cross-entropy as an upper bound.

I(Z;Y) can be written H(Y) - H(Y|Z) (the classification view) or
H(Z) - H(Z|Y) (the feature view); both give the same number. The
conditional cross-entropy of any model q(y|z) equals H(Y|Z) plus a KL
term, so it is never below the conditional entropy and touches it at the
true conditional.

    python3 demos/mutual_information.py
"""

import numpy as np

from mll.info import (
    ConditionalModel,
    DiscreteJoint,
    gaussian_tightness_demo,
    lemma2_identity,
    mutual_information_both_views,
)

rng = np.random.default_rng(3)
for shape in [(2, 2), (4, 3), (8, 8)]:
    p = rng.dirichlet(np.ones(np.prod(shape))).reshape(shape)
    joint = DiscreteJoint(p)
    disc, gen = mutual_information_both_views(joint)
    print(f"{shape}: H(Y)-H(Y|Z) = {disc:.15f}   H(Z)-H(Z|Y) = {gen:.15f}")

print()
p = rng.dirichlet(np.ones(12)).reshape(4, 3)
joint = DiscreteJoint(p)
truth = p / p.sum(axis=1, keepdims=True)
for label, q in (("true conditional", truth),
                 ("random model", rng.dirichlet(np.ones(3), size=4)),
                 ("uniform model", np.full((4, 3), 1 / 3))):
    c = lemma2_identity(joint, ConditionalModel(q))
    print(f"{label:17s} CE = {c.lhs:.6f} = H(Y|Z) {c.details['conditional_entropy']:.6f}"
          f" + KL {c.details['kl']:.6f}")

print()
print("Gaussian clusters: cross-entropy against N(c, I) vs the true entropy")
for r in gaussian_tightness_demo(4, [0.5, 1.0, 2.0], 2000, seed=0):
    print(f"  sigma={r['sigma']:.1f}  cross-entropy={r['cross_entropy']:.3f}  "
          f"entropy={r['analytic_entropy']:.3f}  pairwise estimate={r['pairwise_estimate']:.3f}")
