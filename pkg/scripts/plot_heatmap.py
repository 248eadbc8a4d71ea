"""Render a heatmap CSV (component, truth, prediction) as 2-D histograms, one panel per component.

    python scripts/plot_heatmap.py heat.csv heat.png
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main():
    p = argparse.ArgumentParser()
    p.add_argument("csv")
    p.add_argument("out")
    p.add_argument("--bins", type=int, default=80)
    args = p.parse_args()
    data = np.genfromtxt(args.csv, delimiter=",", skip_header=1)
    comps = np.unique(data[:, 0]).astype(int)
    fig, axes = plt.subplots(1, len(comps), figsize=(4 * len(comps), 4), squeeze=False)
    for ax, c in zip(axes[0], comps):
        sel = data[:, 0] == c
        truth, pred = data[sel, 1], data[sel, 2]
        lo, hi = np.percentile(np.concatenate([truth, pred]), [0.5, 99.5])
        ax.hist2d(truth, pred, bins=args.bins, range=[[lo, hi], [lo, hi]], cmap="viridis", cmin=1)
        ax.plot([lo, hi], [lo, hi], "w--", lw=0.8)
        ax.set_xlabel(f"true {c}")
        ax.set_ylabel(f"predicted {c}")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)


if __name__ == "__main__":
    main()
