"""How each loss splits into a tightness part and a contrastive part.

Two batches with the same labels: one where classes form tight, well
separated clusters, one where the points are scattered at random. The
tightness part should drop sharply on the clustered batch; the contrastive
part reacts to how spread out the whole batch is.

    python3 demos/loss_decomposition.py
"""

import numpy as np

from mll.losses import (
    EmbeddingBatch,
    SoftmaxClassifier,
    center_tightness,
    contrastive_loss,
    cross_entropy_loss,
    fastap_loss,
    multi_similarity_loss,
    snca_loss,
    spce_loss,
)
from mll.numeric import row_normalize

rng = np.random.default_rng(0)
K, per_class, d = 4, 8, 6
y = np.repeat(np.arange(K), per_class)

means = row_normalize(rng.standard_normal((K, d)))
clustered = row_normalize(means[y] + 0.05 * rng.standard_normal((len(y), d)))
scattered = row_normalize(rng.standard_normal((len(y), d)))


def reports(Z):
    b = EmbeddingBatch(Z, y, K)
    # a head pointing at the class means, so CE has something to say
    clf = SoftmaxClassifier(5.0 * means)
    return {
        "contrastive": contrastive_loss(b)[0],
        "center": center_tightness(b)[0],
        "snca": snca_loss(b)[0],
        "multi-sim": multi_similarity_loss(b)[0],
        "cross-entropy": cross_entropy_loss(b, clf)[0],
        "spce": spce_loss(b)[0],
        "fastap (log bound)": fastap_loss(b),
    }


print(f"{'loss':20s} {'batch':10s} {'tightness':>11s} {'contrastive':>12s} {'total':>10s}")
for name_batch, Z in (("clustered", clustered), ("scattered", scattered)):
    for name, r in reports(Z).items():
        print(f"{name:20s} {name_batch:10s} {r.tightness:11.4f} {r.contrastive:12.4f} "
              f"{r.total:10.4f}")
    print()

print("Every report satisfies total == tightness + contrastive up to round-off.")
print("For FastAP the 'total' is the Jensen lower bound on mean log FastAP; "
      "FastAP itself is in report.extras['fastap'].")
