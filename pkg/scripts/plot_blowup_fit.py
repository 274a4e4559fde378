#!/usr/bin/env python3
"""Log-log plot of the Kretschmann scalar along an approach ray.

Usage: python scripts/plot_blowup_fit.py [epsilon] [out.png]

Marches the deep perturbed interior at the given perturbation strength
(default 0.05), plots K against r along the default v=const ray, and
overlays the least-squares power law fitted on the configured window.
"""

import sys
from dataclasses import replace

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from dncollapse.cli import default_exponent_config, execute_run
from dncollapse.diagnostics import fit_exponent_on_ray, ray_table


def main(argv):
    epsilon = float(argv[1]) if len(argv) > 1 else 0.05
    out = argv[2] if len(argv) > 2 else "blowup_fit.png"
    config = default_exponent_config()
    config = replace(config, initial=replace(config.initial, epsilon=epsilon))
    result = execute_run(config)

    j = result.grid.n_v - 3
    table = ray_table(result.state, result.grid, j)
    r, k = table["r"], table["K"]
    keep = np.isfinite(r) & np.isfinite(k) & (k > 0)
    r, k = r[keep], k[keep]

    fit = fit_exponent_on_ray(result.state, result.grid,
                              config.fit_r_lo, config.fit_r_hi, ray=j)
    if fit is None:
        print("fit window too thin on this ray", file=sys.stderr)
        return 1

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.loglog(r, k, ".", ms=3, color="0.3", label=f"ray j={j}")
    rw = np.geomspace(fit.r_lo, fit.r_hi, 50)
    ax.loglog(rw, np.exp(fit.intercept) * rw ** (-fit.n_hat), "r-",
              label=f"r^-{fit.n_hat:.3f}  (R2={fit.r_squared:.5f})")
    ax.axvspan(fit.r_lo, fit.r_hi, color="tab:blue", alpha=0.08)
    ax.set_xlabel("r")
    ax.set_ylabel("K")
    ax.set_title(f"curvature blow-up, epsilon={epsilon:g}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"n_hat = {fit.n_hat:.6f} on [{fit.r_lo:g}, {fit.r_hi:g}]"
          f" ({fit.n_samples} samples) -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
