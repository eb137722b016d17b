"""Privacy/accuracy sweeps on the bundled Gaussian mixture (P=1000, K=6, d=2).

Prints three tables: the white-noise sigma against delta_c, the mean DP accuracy
loss against eps_c for both noise kinds, and the expected label-error
percentage against the label sensitivity.
"""

import argparse
from pathlib import Path

import numpy as np

from dpkmeans import KmeansConfig, PrivacyBudget, Rng, analyze, cluster, dp_accuracy_loss, load_dataset
from dpkmeans.core import ClusteringResult
from dpkmeans.mechanisms import (
    centroid_spec_for,
    perturb_centroids,
    rho_for_zero_delta,
    white_sigma,
)

DATA = Path(__file__).resolve().parent.parent / "data" / "mixture" / "mixture.csv"


def accuracy_curve(data, base, report, eps_grid, delta_c, noise, n_draws, seed):
    rng = Rng(seed)
    out = []
    for eps in eps_grid:
        spec = centroid_spec_for(report, PrivacyBudget(eps, delta_c), noise)
        sub = rng.split(f"{noise}-{eps}")
        losses = [
            dp_accuracy_loss(data, base, ClusteringResult(perturb_centroids(base, spec, sub.split(str(i))).centroids, base.labels))
            for i in range(n_draws)
        ]
        out.append(float(np.mean(losses)))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--input", default=str(DATA))
    ap.add_argument("--draws", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = load_dataset(args.input)
    cfg = KmeansConfig(6, seed=args.seed)
    base = cluster(data, cfg)
    report = analyze(data, base, cfg)
    print(f"P={data.n_points} d={data.dim} delta_c={report.delta_c:.6g} delta_l={report.delta_l} |L|={len(report.sensitive_set)}")

    print("\nsigma vs delta_c (eps_c=1)")
    for delta in np.linspace(0.01, 0.5, 10):
        print(f"  {delta:6.3f}  {white_sigma(report.delta_c, PrivacyBudget(1.0, delta)).sigma:.6g}")

    eps_grid = np.linspace(0.5, 5.0, 10)
    print("\nmean DP accuracy loss vs eps_c (delta_c=0.1)")
    white = accuracy_curve(data, base, report, eps_grid, 0.1, "white", args.draws, args.seed)
    colored = accuracy_curve(data, base, report, eps_grid, 0.1, "colored", args.draws, args.seed)
    print("  eps_c    white        colored")
    for e, w, c in zip(eps_grid, white, colored):
        print(f"  {e:5.2f}  {w:.6e}  {c:.6e}")

    print("\nexpected label error % vs delta_l (eps_l=10, delta_l target 0)")
    for dl in range(1, 7):
        rho = rho_for_zero_delta(10.0, dl, 6)
        print(f"  {dl:3d}  rho={rho:.5f}  {100 * rho * len(report.sensitive_set) / data.n_points:.5f}%")


if __name__ == "__main__":
    main()
