"""Rendering contract for the figure kinds; inputs are fabricated CSVs."""
import numpy as np
import pytest

catlab_plots = pytest.importorskip("catlab_plots")

import matplotlib.pyplot as plt  # noqa: E402

from catlab_plots import PlotError, PlotSpec, gaussian_kde, render  # noqa: E402
from catlab_plots.render import (_render_distribution,  # noqa: E402
                                 _render_hyperparam_curves, main)


def ratio_csv(path, rows):
    lines = ["examinee_id,attribute,ratio"]
    lines += [f"{e},{a},{r}" for e, a, r in rows]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture
def two_runs(tmp_path):
    rng = np.random.default_rng(0)
    paths = []
    for name, shift in (("erm", 0.0), ("ours", 0.15)):
        rows = [(i, attr, round(min(max(rng.normal(mu + shift, 0.1), 0.0), 1.0), 4))
                for attr, mu in (("A", 0.25), ("B", 0.5), ("C", 0.75))
                for i in range(30)]
        paths.append(ratio_csv(tmp_path / name / "selected_ratios.csv", rows))
    return paths


def test_distribution_two_runs_legend(two_runs, tmp_path):
    """Two run directories produce two legend entries per attribute."""
    spec = PlotSpec(inputs=two_runs, kind="distribution", out=str(tmp_path / "d.png"))
    fig, ax = plt.subplots()
    _render_distribution(spec, ax)
    labels = [t.get_text() for t in ax.get_legend().get_texts()]
    plt.close(fig)
    assert len(labels) == 6
    for attr in "ABC":
        assert sum(lbl.endswith(f" {attr}") for lbl in labels) == 2
    assert {lbl.split()[0] for lbl in labels} == {"erm", "ours"}


def test_distribution_single_attribute_single_curve(tmp_path):
    path = ratio_csv(tmp_path / "r" / "meta_ratios.csv",
                     [(i, "B", 0.4 + 0.01 * i) for i in range(20)])
    spec = PlotSpec(inputs=[path], kind="distribution", out=str(tmp_path / "s.png"))
    fig, ax = plt.subplots()
    _render_distribution(spec, ax)
    assert len(ax.lines) == 1
    plt.close(fig)
    assert render(spec) == spec.out


def test_missing_column_is_named(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("examinee_id,attribute,rato\n0,A,0.5\n")
    spec = PlotSpec(inputs=[str(bad)], kind="distribution", out=str(tmp_path / "x.png"))
    with pytest.raises(PlotError, match="'ratio'") as err:
        render(spec)
    assert str(bad) in str(err.value)


def test_kde_properties():
    rng = np.random.default_rng(3)
    values = rng.normal(0.5, 0.1, size=200)
    grid = np.linspace(-1.0, 2.0, 2001)
    dens = gaussian_kde(values, grid)
    assert (dens >= 0.0).all()
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)
    # all-equal sample falls back to a fixed small bandwidth
    flat = gaussian_kde(np.full(10, 0.4), grid)
    assert np.isfinite(flat).all() and flat.max() > 0


def test_hyperparam_curves_grid_ticks(tmp_path):
    path = tmp_path / "sweep.csv"
    rows = ["omega,worst,avg"] + [f"{w},{0.5 + w / 10},{0.8}"
                                  for w in (0.6, 0.2, 1.0, 0.4, 0.8)]
    path.write_text("\n".join(rows) + "\n")
    spec = PlotSpec(inputs=[str(path)], kind="hyperparam_curves",
                    out=str(tmp_path / "h.png"))
    fig, ax = plt.subplots()
    _render_hyperparam_curves(spec, ax)
    assert list(ax.get_xticks()) == [0.2, 0.4, 0.6, 0.8, 1.0]
    plt.close(fig)
    render(spec)


def test_ablation_bars(tmp_path):
    path = tmp_path / "ablation.csv"
    path.write_text("strategy,worst,avg\nERM,0.42,0.81\nMixupB,0.55,0.80\nIRM,0.47,0.78\n")
    spec = PlotSpec(inputs=[str(path)], kind="ablation_bars",
                    out=str(tmp_path / "bars.png"))
    out = render(spec)
    assert (tmp_path / "bars.png").exists() and out == str(tmp_path / "bars.png")


def test_render_is_deterministic(tmp_path):
    path = ratio_csv(tmp_path / "r" / "selected_ratios.csv",
                     [(i, a, (i % 10) / 10) for a in "AC" for i in range(12)])
    out1, out2 = tmp_path / "one.png", tmp_path / "two.png"
    render(PlotSpec(inputs=[path], kind="distribution", out=str(out1)))
    render(PlotSpec(inputs=[path], kind="distribution", out=str(out2)))
    assert out1.read_bytes() == out2.read_bytes()


def test_spec_validation(tmp_path):
    with pytest.raises(PlotError, match="unknown figure kind"):
        PlotSpec(inputs=["x.csv"], kind="pie", out="o.png")
    with pytest.raises(PlotError, match="does not exist"):
        PlotSpec(inputs=[str(tmp_path / "nope.csv")], kind="distribution", out="o.png")
    real = tmp_path / "real.csv"
    real.write_text("examinee_id,attribute,ratio\n")
    with pytest.raises(PlotError, match="one label per input"):
        PlotSpec(inputs=[str(real)], kind="distribution", out="o.png",
                 labels=["a", "b"])


def test_cli_roundtrip(tmp_path, capsys):
    path = ratio_csv(tmp_path / "run" / "selected_ratios.csv",
                     [(i, "A", i / 20) for i in range(20)])
    out = tmp_path / "fig.png"
    assert main(["--kind", "distribution", "--in", path, "--out", str(out)]) == 0
    assert out.exists()
    assert capsys.readouterr().out.strip() == str(out)

    assert main(["--kind", "distribution", "--in", str(tmp_path / "missing.csv"),
                 "--out", str(out)]) == 2
    assert "does not exist" in capsys.readouterr().err
