"""Train a one-class GCN detector on the synthetic target and inspect its scores.

    python3 demos/01_base_detector.py
"""

import numpy as np

from wildgad import benchmark, detectors
from wildgad.evaluation import evaluate

target = benchmark.make_target(seed=0)
print(f"target: {target.num_nodes} nodes, {int(target.labels.sum())} anomalies, "
      f"{target.feature_dim}-d features")

# The center is frozen at initialization; only the radius moves during training.
model = detectors.train_svdd(target, detectors.SvddConfig(seed=0))
scores = model.score(target)
report = evaluate(scores, target.labels)
print(f"one-class detector   AUC-ROC {report.auc_roc:.3f}   AUC-PR {report.auc_pr:.3f}")

# Anomalies should sit further from the center than the bulk of normal nodes.
normal, anomalous = scores[target.labels == 0], scores[target.labels == 1]
print(f"median score  normal {np.median(normal):.3f}   anomalous {np.median(anomalous):.3f}")

# The autoencoder backbone scores by reconstruction error instead.
gae = detectors.train_gae(target, detectors.GaeConfig(seed=0))
print(f"autoencoder detector AUC-ROC {evaluate(gae.score(target), target.labels).auc_roc:.3f}")
