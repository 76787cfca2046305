"""Rotation-pair data, a short training run, and the comparison report.

A reduced version of the experiments: two seeds, 100 training pairs and 60
epochs, about three minutes on one core. The acceptance runs use the same
code with longer budgets and four seeds.

Run: python demos/03_rotation_pairs.py [output_dir]
"""

import sys
from pathlib import Path

from latentsym.harness import OptimSpec, compare, comparison_configs, train
from latentsym.tasks import make_rotation_pairs

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_runs")

# A pair is two renders of the same scene, the second rotated by k eighth turns; the label is k
data = make_rotation_pairs(16, "oblique:45", seed=0, n_val=8, n_test=8)
print("images", data.images.shape, "labels", data.labels[:8])

optim = OptimSpec(lr=3e-3, batch_size=16, max_epochs=60, patience=60, schedule="cosine", warmup_epochs=3)
configs = comparison_configs("none", 100, seeds=(0, 1), augment_group=None, optim=optim, n_val=100, n_test=200)
reports = []
for config in configs:
    config.output_dir = str(out / config.name)
    report = train(config)
    print(f"{config.name:32s} test accuracy {report.test_accuracy:.3f} "
          f"(params {report.parameters['model']}, best epoch {report.best_epoch})")
    reports.append(report)

summary = compare(reports, out / "comparison", ["equivariant>plain"])
for row in summary["rows"]:
    print(f"{row['method']:14s} mean {row['mean']:.3f} +- {row['stderr']:.3f} over {row['n_seeds']} seeds")
print("orderings hold:", summary["ok"], "| curves written to", out / "comparison" / "curves.svg")
