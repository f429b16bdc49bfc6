"""Plot the state trajectories and inputs stored by ``run_scenarios.py``.

Needs matplotlib (``pip install drmpc[plot]``). One figure per scenario
directory: the phase portrait with the constraint box, and the input over
time for every run. Usage::

    python scripts/plot_runs.py results/nominal results/d --save figures
"""

import argparse
from pathlib import Path

import matplotlib.pyplot as plt

from drmpc.simulator import read_run_csv


def plot_dir(directory: Path, ax_phase, ax_input):
    for path in sorted(directory.glob("run_*.csv")):
        cols = read_run_csv(path)
        ax_phase.plot(cols["x1"], cols["x2"], lw=0.8, alpha=0.6)
        ax_input.plot(cols["k"], cols["u"], lw=0.8, alpha=0.6)
    # benchmark constraints: -10 <= x1 <= 2, |x2| <= 2, |u| <= 1
    ax_phase.plot([-10, 2, 2, -10, -10], [-2, -2, 2, 2, -2], "k--", lw=1)
    ax_phase.set(xlabel="x1", ylabel="x2", title=directory.name)
    ax_input.axhline(1, color="k", ls="--", lw=1)
    ax_input.axhline(-1, color="k", ls="--", lw=1)
    ax_input.set(xlabel="step", ylabel="u")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("dirs", nargs="+")
    parser.add_argument("--save", help="directory for PNG files; shows the figures otherwise")
    args = parser.parse_args()
    for d in map(Path, args.dirs):
        fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
        plot_dir(d, a, b)
        fig.tight_layout()
        if args.save:
            Path(args.save).mkdir(parents=True, exist_ok=True)
            fig.savefig(Path(args.save) / f"{d.name}.png", dpi=120)
            plt.close(fig)
    if not args.save:
        plt.show()


if __name__ == "__main__":
    main()
