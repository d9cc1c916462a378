#!/usr/bin/env python3
"""Plot the CSV records an experiment run leaves behind.

Usage: plot_results.py OUTPUT_DIR [--save FIG.png]

Draws error vs iteration, error vs communication rounds, and the final
normalized deviation per method, averaging runs across seeds.
"""

import argparse
import collections
import json
import pathlib
import re

import matplotlib.pyplot as plt
import pandas as pd

RUN_FILE = re.compile(r"(?P<label>.+?)_seed(?P<seed>\d+)\.csv$")


def load_runs(out_dir: pathlib.Path):
    runs = collections.defaultdict(list)
    for path in sorted(out_dir.glob("*.csv")):
        m = RUN_FILE.match(path.name)
        if m:
            runs[m.group("label")].append(pd.read_csv(path))
    return runs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--save", type=pathlib.Path, default=None)
    args = ap.parse_args()

    runs = load_runs(args.out_dir)
    if not runs:
        raise SystemExit(f"no run CSVs found in {args.out_dir}")

    summary = None
    summary_path = args.out_dir / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())

    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    for label, frames in sorted(runs.items()):
        mean_err = sum(f["mean_err"] for f in frames) / len(frames)
        axes[0].semilogy(frames[0]["k"], mean_err, label=label)
        axes[1].semilogy(frames[0]["comm_total"], mean_err, label=label)
    axes[0].set_xlabel("iteration k")
    axes[0].set_ylabel("mean squared error")
    axes[1].set_xlabel("communication rounds")
    axes[0].legend(fontsize=7)

    if summary is not None:
        labels, devs = [], []
        for suite in summary["suites"]:
            for method in suite["methods"]:
                labels.append(method["label"])
                devs.append(method["final_normalized_deviation_mean"])
        axes[2].bar(range(len(labels)), devs)
        axes[2].set_xticks(range(len(labels)))
        axes[2].set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        axes[2].set_yscale("log")
        axes[2].set_ylabel("final normalized deviation")

    fig.tight_layout()
    if args.save:
        fig.savefig(args.save, dpi=150)
        print(f"saved {args.save}")
    else:
        plt.show()


if __name__ == "__main__":
    main()
