#!/usr/bin/env python3
"""Amplitude sweep of the trapped-surface criterion, as a figure.

Usage: python scripts/plot_criterion_sweep.py [out.png]

Runs the stock pulse family over its amplitude ladder and plots the
measured initial flux eta0 against the threshold E(delta0) that
guarantees a trapped surface. Filled markers show amplitudes where a
trapped region actually formed.
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from dncollapse.cli import criterion_sweep, default_pulse_config


def main(argv):
    out = argv[1] if len(argv) > 1 else "criterion_sweep.png"
    config = default_pulse_config()
    rows, failures = criterion_sweep(config, config.amplitudes, threads=3)

    amps = [r["amplitude"] for r in rows]
    eta = [r["eta0"] for r in rows]
    thresh = [r["e_of_delta0"] for r in rows]

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(amps, thresh, "k--", lw=1, label="threshold E(delta0)")
    for r in rows:
        filled = "full" if r["observed"] else "none"
        ax.plot(r["amplitude"], r["eta0"], "o", color="tab:red",
                fillstyle=filled, ms=7)
    ax.plot([], [], "o", color="tab:red", fillstyle="full", label="trapped")
    ax.plot([], [], "o", color="tab:red", fillstyle="none", label="no trapping")
    ax.set_xlabel("pulse amplitude")
    ax.set_ylabel("initial flux eta0")
    ax.legend(fontsize=8)
    ax.set_title("trapped-surface criterion sweep")
    fig.tight_layout()
    fig.savefig(out, dpi=150)

    for r in rows:
        print(f"A={r['amplitude']:>7g}  eta0={r['eta0']:.5f}"
              f"  E={r['e_of_delta0']:.5f}  predicted={r['predicted']}"
              f"  observed={r['observed']}")
    print(f"-> {out}")
    return 4 if failures else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
