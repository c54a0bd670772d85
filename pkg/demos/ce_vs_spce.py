"""Train the same MLP with cross-entropy and with SPCE on Gaussian blobs.

SPCE replaces the classifier weights by the class means, so it needs no
head at all. The CE run also records SPCE on its own embeddings, which
shows the two losses converge toward each other during training.

    python3 demos/ce_vs_spce.py
"""

from mll.train import SyntheticSpec, TrainConfig, generate_blobs, train_model

data = generate_blobs(SyntheticSpec(K=4, per_class=128, dim=16, seed=0))
runs = {}
for loss in ("ce", "spce"):
    _, runs[loss] = train_model(data, TrainConfig(loss=loss, epochs=200, label_smoothing=0.0))

ce = runs["ce"]
print(f"{'epoch':>5s} {'CE':>9s} {'SPCE on CE run':>15s} {'|gap|':>8s} {'recall@1 CE':>12s} "
      f"{'recall@1 SPCE':>14s}")
for row, other in zip(ce.rows[::20], runs["spce"].rows[::20]):
    gap = abs(row["loss_total"] - row["companion_loss"])
    print(f"{row['epoch']:5d} {row['loss_total']:9.4f} {row['companion_loss']:15.4f} {gap:8.4f} "
          f"{row['recall_at_1']:12.3f} {other['recall_at_1']:14.3f}")
