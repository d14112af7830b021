"""Turn campaign CSV files into per-policy curves, optionally rendered."""

from __future__ import annotations

import argparse
import csv
import io
import sys

FIGURES = {
    "blocking": ("p_nc", "New call blocking probability"),
    "forced": ("p_forced", "Forced termination probability"),
    "handover_rate": ("lambda_hoc", "Handover call arrival rate (1/s)"),
    "access": ("p_access", "Access probability"),
}


def read_results(text: str) -> list[dict[str, str]]:
    body = "\n".join(line for line in text.splitlines() if not line.startswith("#"))
    return list(csv.DictReader(io.StringIO(body)))


def series(rows: list[dict[str, str]], metric: str) -> dict[str, list[tuple[float, float]]]:
    """``{policy: [(sweep_value, metric), ...]}`` sorted by sweep value."""
    out: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        if row[metric] == "":
            continue
        out.setdefault(row["policy"], []).append((float(row["sweep_value"]), float(row[metric])))
    return {k: sorted(v) for k, v in out.items()}


def render(rows, metric: str, path: str, ylabel: str | None = None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for policy, points in series(rows, metric).items():
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker="o", label=policy)
    ax.set_xlabel(rows[0]["sweep_axis"] if rows else "")
    ax.set_ylabel(ylabel or metric)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hoxsim-plot", description=__doc__)
    parser.add_argument("csv")
    parser.add_argument("--figure", choices=sorted(FIGURES), default="blocking")
    parser.add_argument("--out", help="image path; without it the series are printed")
    args = parser.parse_args(argv)
    with open(args.csv, encoding="utf-8") as fh:
        rows = read_results(fh.read())
    metric, label = FIGURES[args.figure]
    if args.out:
        render(rows, metric, args.out, label)
    else:
        for policy, points in series(rows, metric).items():
            print(policy, " ".join(f"{x:g}:{y:g}" for x, y in points))
    return 0


if __name__ == "__main__":
    sys.exit(main())
