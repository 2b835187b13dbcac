"""
Sharpness and gradient diversity on a small classifier
======================================================

Runs the shipped sharpness configs for FHBI and SVGD over five paired
seeds and prints the per-seed differences. Negative numbers mean FHBI is
flatter (sharpness) or its particle gradients point in more varied
directions (angular similarity).
"""

from pathlib import Path

from hilbert_flow.harness import compare, load_config

configs = Path(__file__).resolve().parents[1] / "configs"
svgd = load_config(configs / "sharpness_svgd.cfg")
fhbi = load_config(configs / "sharpness_fhbi.cfg")

result = compare([svgd, fhbi], paired_seeds=5)

for row in result["rows"]:
    if row["metric"] in ("sharpness_mean", "sharpness_std_late", "angular_similarity_mean", "accuracy"):
        print(f"{row['config']:>8} {row['metric']:<24} {row['mean']:.3e} +- {row['std']:.2e}")

print()
for p in result["paired"]:
    print(f"seed {p['seed']}  {p['metric']:<24} fhbi - svgd = {p['difference']:+.3e}")
