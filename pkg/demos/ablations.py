"""
Particle count and kernel choice
================================

Holdout accuracy on a small, noisy blobs task for m = 1, 4, 10 particles,
then RBF against a degree-10 polynomial kernel at m = 4. Each number is a
mean over five seeds; every seed also redraws the dataset.
"""

from pathlib import Path

import numpy as np

from hilbert_flow.harness import execute, load_config

configs = Path(__file__).resolve().parents[1] / "configs"


def mean_accuracy(config, seeds=range(5)):
    return np.mean([execute(config.set("sampler.seed", s))[1]["holdout_accuracy"] for s in seeds])


base = load_config(configs / "particles.cfg")
for m in (1, 4, 10):
    print(f"m = {m:>2}: {mean_accuracy(base.set('sampler.m', m)):.4f}")

for name in ("kernel_rbf.cfg", "kernel_poly.cfg"):
    print(f"{name:<16} {mean_accuracy(load_config(configs / name)):.4f}")
