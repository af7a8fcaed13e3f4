"""Render evaluation exports as figures.

Three figure kinds, all fed by plain CSV:

- ``distribution``: per-attribute density curves of correct-response ratios
  (the ``selected_ratios.csv`` / ``meta_ratios.csv`` files written by
  ``catlab analyze``, header ``examinee_id,attribute,ratio``). Several input
  files overlay, one line per (input, attribute) pair, so two run directories
  produce two legend entries per attribute.
- ``ablation_bars``: grouped worst/avg bars per strategy
  (header ``strategy,worst,avg``).
- ``hyperparam_curves``: worst and avg against a hyperparameter grid
  (header ``omega,worst,avg``); the x axis places a tick on every grid value.

Densities use a Gaussian kernel with Scott's-rule bandwidth instead of the
spline smoothing in the source figures; rendering is deterministic and
read-only over its inputs.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

KINDS = ("distribution", "ablation_bars", "hyperparam_curves")

ATTRIBUTE_COLORS = {"A": "tab:red", "B": "tab:gray", "C": "tab:blue"}
LINESTYLES = ("-", "--", ":", "-.")


class PlotError(Exception):
    pass


@dataclass
class PlotSpec:
    inputs: list[str]
    kind: str
    out: str
    title: str = ""
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotError(f"unknown figure kind {self.kind!r} (expected one of {KINDS})")
        if not self.inputs:
            raise PlotError("no input files")
        for path in self.inputs:
            if not os.path.exists(path):
                raise PlotError(f"input file {path} does not exist")
        if self.labels and len(self.labels) != len(self.inputs):
            raise PlotError("one label per input file required")


def _read_csv(path: str, columns: tuple[str, ...]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in columns:
            if col not in header:
                raise PlotError(f"missing column {col!r} in {path}")
        return list(reader)


def gaussian_kde(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Scott's-rule Gaussian kernel density estimate on a fixed grid."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n == 0:
        raise PlotError("cannot estimate a density from zero observations")
    sigma = float(values.std())
    bw = sigma * n ** (-1.0 / 5.0)
    if bw <= 0.0:
        bw = 0.01  # degenerate sample: all observations identical
    z = (grid[:, None] - values[None, :]) / bw
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (n * bw * np.sqrt(2.0 * np.pi))
    return dens


def _input_label(path: str, i: int, labels: list[str]) -> str:
    if labels:
        return labels[i]
    parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
    return parent or os.path.splitext(os.path.basename(path))[0]


def _render_distribution(spec: PlotSpec, ax) -> None:
    grid = np.linspace(0.0, 1.0, 256)
    for i, path in enumerate(spec.inputs):
        rows = _read_csv(path, ("examinee_id", "attribute", "ratio"))
        by_attr: dict[str, list[float]] = {}
        for row in rows:
            by_attr.setdefault(row["attribute"], []).append(float(row["ratio"]))
        label = _input_label(path, i, spec.labels)
        for attr in sorted(by_attr):
            dens = gaussian_kde(np.array(by_attr[attr]), grid)
            ax.plot(grid, dens, color=ATTRIBUTE_COLORS.get(attr, "black"),
                    linestyle=LINESTYLES[i % len(LINESTYLES)],
                    label=f"{label} {attr}")
    ax.set_xlabel("correct-response ratio")
    ax.set_ylabel("density")
    ax.set_xlim(0.0, 1.0)
    ax.legend()


def _render_ablation_bars(spec: PlotSpec, ax) -> None:
    rows = _read_csv(spec.inputs[0], ("strategy", "worst", "avg"))
    if not rows:
        raise PlotError(f"no rows in {spec.inputs[0]}")
    strategies = [r["strategy"] for r in rows]
    worst = [float(r["worst"]) for r in rows]
    avg = [float(r["avg"]) for r in rows]
    x = np.arange(len(strategies))
    ax.bar(x - 0.2, worst, width=0.4, label="worst", color="tab:red")
    ax.bar(x + 0.2, avg, width=0.4, label="avg", color="tab:blue")
    ax.set_xticks(x)
    ax.set_xticklabels(strategies, rotation=20)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend()


def _render_hyperparam_curves(spec: PlotSpec, ax) -> None:
    for i, path in enumerate(spec.inputs):
        rows = _read_csv(path, ("omega", "worst", "avg"))
        if not rows:
            raise PlotError(f"no rows in {path}")
        rows.sort(key=lambda r: float(r["omega"]))
        omegas = [float(r["omega"]) for r in rows]
        label = _input_label(path, i, spec.labels)
        prefix = f"{label} " if len(spec.inputs) > 1 else ""
        ax.plot(omegas, [float(r["worst"]) for r in rows], marker="o",
                linestyle=LINESTYLES[i % len(LINESTYLES)], color="tab:red",
                label=f"{prefix}worst")
        ax.plot(omegas, [float(r["avg"]) for r in rows], marker="s",
                linestyle=LINESTYLES[i % len(LINESTYLES)], color="tab:blue",
                label=f"{prefix}avg")
        ax.set_xticks(omegas)
    ax.set_xlabel("omega")
    ax.set_ylabel("accuracy")
    ax.legend()


_RENDERERS = {
    "distribution": _render_distribution,
    "ablation_bars": _render_ablation_bars,
    "hyperparam_curves": _render_hyperparam_curves,
}


def render(spec: PlotSpec) -> str:
    """Write the figure for ``spec``; returns the output path."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    try:
        _RENDERERS[spec.kind](spec, ax)
        if spec.title:
            ax.set_title(spec.title)
        fig.tight_layout()
        out_dir = os.path.dirname(os.path.abspath(spec.out))
        os.makedirs(out_dir, exist_ok=True)
        fig.savefig(spec.out, dpi=120)
    finally:
        plt.close(fig)
    return spec.out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render", description="Render catlab evaluation CSVs as figures.")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="CSV", help="input CSV file(s)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--label", dest="labels", action="append", default=[],
                        help="legend label per input (repeatable)")
    parser.add_argument("--title", default="")
    args = parser.parse_args(argv)
    try:
        spec = PlotSpec(inputs=args.inputs, kind=args.kind, out=args.out,
                        title=args.title, labels=args.labels)
        render(spec)
    except PlotError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(spec.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
