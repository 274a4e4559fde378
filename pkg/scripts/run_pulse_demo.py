#!/usr/bin/env python3
"""March one collapsing scalar pulse and report what formed.

Usage: python scripts/run_pulse_demo.py [amplitude]

Runs the stock pulse family at the requested amplitude (default 2000),
prints the run summary, and lists where the apparent horizon crosses
each outgoing ray. Exit code mirrors the run status.
"""

import sys
from dataclasses import replace

from dncollapse.cli import default_pulse_config, execute_run, render_text, summarize
from dncollapse.diagnostics import find_apparent_horizon


def main(argv):
    amplitude = float(argv[1]) if len(argv) > 1 else 2000.0
    config = default_pulse_config()
    config = replace(config, initial=replace(config.initial, amplitude=amplitude))
    result = execute_run(config)
    summary, record = summarize(result, config)
    sys.stdout.write(render_text(summary))

    crossings = find_apparent_horizon(result.state, result.grid)
    if not crossings:
        print("\nno apparent horizon on the grid")
    else:
        print(f"\napparent horizon crosses {len(crossings)} rays;"
              " first/last in v:")
        for c in (crossings[0], crossings[-1]):
            print(f"  v={c.v:.5f}  u={c.u:.5f}  |2m-r|={abs(c.two_m_minus_r):.2e}")
    print(f"trapped points: {int(record.n_trapped)}")
    return 0 if result.status == "completed" else 3


if __name__ == "__main__":
    sys.exit(main(sys.argv))
