"""Unit tests: spec parsing, CSV contracts, and figure construction."""

import math

import numpy as np
import pytest

from figgen import (
    DataError,
    FigureSpec,
    SpecError,
    convergence_figure,
    parse_spec,
    problem_panel_figure,
    read_convergence,
    read_problem_grid,
    read_region,
    render,
    stability_figure,
)
from figgen.cli import main

CONV_HEADER = "method,h,effective_h,error,stderr,n_force,n_sigma,seed,T,n_traj"


def conv_csv(rows):
    return CONV_HEADER + "\n" + "\n".join(rows) + "\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


SPEC_TEXT = """\
# comment line
kind = convergence
inputs = {inp}
out = {out}
labels = sweep
slopes = 1, 2
"""


# ---------------------------------------------------------------------------
# Spec parsing
# ---------------------------------------------------------------------------


def test_parse_spec_full():
    spec = parse_spec(SPEC_TEXT.format(inp="a.csv", out="fig.png"))
    assert spec.kind == "convergence"
    assert spec.inputs == ("a.csv",)
    assert spec.labels == ("sweep",)
    assert spec.slopes == (1.0, 2.0)
    assert spec.out == "fig.png"
    assert spec.dpi == 150 and not spec.cost_panel


def test_parse_spec_multiple_inputs_and_flags():
    spec = parse_spec("kind = convergence\ninputs = a.csv, b.csv\n"
                      "out = f.png\ncost_panel = true\ndpi = 72\n")
    assert spec.inputs == ("a.csv", "b.csv")
    assert spec.cost_panel and spec.dpi == 72


@pytest.mark.parametrize("text,fragment", [
    ("inputs = a.csv\nout = f.png\n", "missing required key 'kind'"),
    ("kind = convergence\nout = f.png\n", "missing required key 'inputs'"),
    ("kind = convergence\ninputs = a.csv\n", "missing required key 'out'"),
    ("kind = heatmap\ninputs = a\nout = f\n", "kind must be one of"),
    ("kind = convergence\ninputs = a\nout = f\nkind = stability\n",
     "duplicate key"),
    ("kind = convergence\ninputs = a\nout = f\ncolor = red\n", "unknown key"),
    ("kind = convergence\ninputs = a\nout = f\nnonsense\n",
     "expected 'key = value'"),
    ("kind = convergence\ninputs = a\nout = f\nslopes = fast\n",
     "slopes must be numbers"),
    ("kind = convergence\ninputs = a\nout = f\ncost_panel = maybe\n",
     "must be a boolean"),
    ("kind = convergence\ninputs = a, b\nout = f\nlabels = only-one\n",
     "labels for 2 inputs"),
    ("kind = stability\ninputs = a, b\nout = f\n", "exactly one input"),
    ("kind = stability\ninputs = a\nout = f\ncost_panel = true\n",
     "only applies to convergence"),
    ("kind = convergence\ninputs = a\nout = f\nslopes = -2\n",
     "must be positive"),
    ("kind = convergence\ninputs = a\nout = f\ndpi = 1\n", "at least 10"),
], ids=lambda v: v[:24] if isinstance(v, str) else v)
def test_parse_spec_rejects(text, fragment):
    with pytest.raises(SpecError) as err:
        parse_spec(text)
    assert fragment in str(err.value)


# ---------------------------------------------------------------------------
# Convergence CSV contract
# ---------------------------------------------------------------------------


def test_read_convergence_groups_and_sorts(tmp_path):
    p = write(tmp_path, "c.csv", conv_csv([
        "em,0.1,0.1,0.01,0.001,1000,1000,3,100.0,8",
        "pvd2_mt2,0.1,0.1,0.002,0.0002,1000,5000,3,100.0,8",
        "em,0.2,0.2,0.02,0.002,500,500,3,100.0,8",
    ]))
    series = read_convergence(p)
    assert [s.method for s in series] == ["em", "pvd2_mt2"]
    em = series[0]
    assert em.h.tolist() == [0.2, 0.1]  # sorted by decreasing h
    assert em.error.tolist() == [0.02, 0.01]
    assert em.n_force.tolist() == [500.0, 1000.0]
    assert series[1].h.tolist() == [0.1]


def test_read_convergence_unstable_sentinel(tmp_path):
    p = write(tmp_path, "c.csv", conv_csv([
        "em,0.4,0.4,unstable,unstable,10,10,3,100.0,8",
        "em,0.1,0.1,0.01,0.001,1000,1000,3,100.0,8",
        "em,0.2,0.2,0.02,0.002,500,500,3,100.0,8",
    ]))
    (em,) = read_convergence(p)
    assert em.unstable_h == (0.4,)
    assert em.h.tolist() == [0.2, 0.1]


@pytest.mark.parametrize("text,fragment", [
    ("", "empty file"),
    ("method,h\n", "bad header"),
    (CONV_HEADER + "\n", "no data rows"),
    (conv_csv(["em,0.1,0.1,0.01"]), "row 2: expected 10 fields"),
    (conv_csv(["em,zero,0.1,0.01,0.001,1,1,3,1.0,8"]),
     "row 2: h is not a number"),
    (conv_csv(["em,-0.1,0.1,0.01,0.001,1,1,3,1.0,8"]),
     "h must be positive"),
    (conv_csv(["em,0.1,0.1,bad,0.001,1,1,3,1.0,8"]),
     "row 2: error is not a number"),
], ids=["empty", "header", "nodata", "fields", "h-nan", "h-neg", "err-nan"])
def test_read_convergence_rejects(tmp_path, text, fragment):
    p = write(tmp_path, "bad.csv", text)
    with pytest.raises(DataError) as err:
        read_convergence(p)
    assert fragment in str(err.value)


def test_read_convergence_missing_file(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        read_convergence(tmp_path / "absent.csv")


# ---------------------------------------------------------------------------
# Region CSV contract
# ---------------------------------------------------------------------------


def region_csv(rows):
    return "p,q2,rho,stable,exact_stable\n" + "\n".join(rows) + "\n"


def test_read_region_small_grid(tmp_path):
    p = write(tmp_path, "r.csv", region_csv([
        "-2.0,0.0,0.5,1,1",
        "-2.0,1.0,0.9,1,1",
        "-2.0,2.0,1.5,0,0",
        "0.0,0.0,1.0,0,0",
        "0.0,1.0,1.2,0,0",
        "0.0,2.0,2.0,0,0",
    ]))
    region = read_region(p)
    assert region.p_grid.tolist() == [-2.0, 0.0]
    assert region.q2_grid.tolist() == [0.0, 1.0, 2.0]
    assert region.rho[0, 2] == 1.5
    assert region.stable[0, 1] and not region.stable[1, 0]
    assert region.exact_stable[0, 0]


@pytest.mark.parametrize("rows,fragment", [
    (["-2.0,0.0,0.5,1,1", "-2.0,1.0,0.9,1,1", "0.0,0.0,1.0,0,0"],
     "do not tile"),
    (["-2.0,0.0,0.5,2,1"], "stable must be 0 or 1"),
    (["-2.0,0.0,x,1,1"], "rho is not a number"),
], ids=["tile", "flag", "rho"])
def test_read_region_rejects(tmp_path, rows, fragment):
    p = write(tmp_path, "bad.csv", region_csv(rows))
    with pytest.raises(DataError) as err:
        read_region(p)
    assert fragment in str(err.value)


def test_read_region_single_cell(tmp_path):
    p = write(tmp_path, "one.csv", region_csv(["-1.0,0.5,0.7,1,1"]))
    region = read_region(p)
    assert region.stable.shape == (1, 1) and region.stable[0, 0]


# ---------------------------------------------------------------------------
# Problem grid CSV contract
# ---------------------------------------------------------------------------


def test_read_problem_grid(tmp_path):
    p = write(tmp_path, "g.csv", "x,V,sigma\n-1.0,0.5,2.0\n0.0,0.0,1.5\n")
    x, v, sigma = read_problem_grid(p)
    assert x.tolist() == [-1.0, 0.0]
    assert v.tolist() == [0.5, 0.0]
    assert sigma.tolist() == [2.0, 1.5]


def test_read_problem_grid_requires_increasing_x(tmp_path):
    p = write(tmp_path, "g.csv", "x,V,sigma\n0.0,0.0,1.0\n0.0,1.0,1.0\n")
    with pytest.raises(DataError, match="strictly increasing"):
        read_problem_grid(p)


# ---------------------------------------------------------------------------
# Convergence figures
# ---------------------------------------------------------------------------


def _line_by_label(ax, label):
    for line in ax.get_lines():
        if line.get_label() == label:
            return line
    raise AssertionError(f"no line labeled {label!r}")


def test_convergence_guide_passes_through_h2_points(tmp_path):
    p = write(tmp_path, "c.csv", conv_csv([
        "em,0.2,0.2,0.04,0.0,1,1,3,1.0,8",
        "em,0.1,0.1,0.01,0.0,1,1,3,1.0,8",
    ]))
    spec = FigureSpec(kind="convergence", inputs=(str(p),),
                      out=str(tmp_path / "f.png"), slopes=(2.0,))
    fig = convergence_figure(spec)
    ax = fig.axes[0]
    guide = [ln for ln in ax.get_lines() if ln.get_linestyle() == "--"]
    assert len(guide) == 1
    gx, gy = guide[0].get_xdata(), guide[0].get_ydata()
    # the slope-2 guide interpolates/extrapolates exactly onto h^2 data
    for h, e in [(0.2, 0.04), (0.1, 0.01)]:
        t = (math.log(h) - math.log(gx[0])) / (math.log(gx[1]) - math.log(gx[0]))
        log_guide = math.log(gy[0]) + t * (math.log(gy[1]) - math.log(gy[0]))
        assert abs(log_guide - math.log(e)) < 1e-12


def test_convergence_unstable_point_omitted_and_noted(tmp_path):
    p = write(tmp_path, "c.csv", conv_csv([
        "em,0.4,0.4,unstable,unstable,10,10,3,1.0,8",
        "em,0.2,0.2,0.04,0.001,1,1,3,1.0,8",
        "em,0.1,0.1,0.01,0.001,1,1,3,1.0,8",
    ]))
    spec = FigureSpec(kind="convergence", inputs=(str(p),),
                      out=str(tmp_path / "f.png"))
    fig = convergence_figure(spec)
    ax = fig.axes[0]
    line = _line_by_label(ax, "em (unstable h >= 0.4)")
    assert 0.4 not in line.get_xdata()
    assert set(line.get_xdata()) == {0.2, 0.1}


def test_convergence_all_unstable_is_an_error(tmp_path):
    p = write(tmp_path, "c.csv", conv_csv([
        "em,0.4,0.4,unstable,unstable,10,10,3,1.0,8",
    ]))
    spec = FigureSpec(kind="convergence", inputs=(str(p),),
                      out=str(tmp_path / "f.png"))
    with pytest.raises(DataError, match="no finite data points"):
        convergence_figure(spec)


def test_convergence_cost_panel_renders(tmp_path):
    p = write(tmp_path, "c.csv", conv_csv([
        "em,0.2,0.2,0.04,0.001,500,500,3,1.0,8",
        "em,0.1,0.1,0.01,0.001,1000,1000,3,1.0,8",
    ]))
    spec = FigureSpec(kind="convergence", inputs=(str(p),),
                      out=str(tmp_path / "f.png"), cost_panel=True)
    out = render(spec)
    assert (tmp_path / "f.png").exists() and out.endswith("f.png")


# ---------------------------------------------------------------------------
# Stability figures
# ---------------------------------------------------------------------------


def test_stability_all_unstable_still_renders(tmp_path):
    p = write(tmp_path, "r.csv", region_csv([
        "-2.0,0.0,1.5,0,1",
        "-2.0,1.0,1.9,0,1",
        "0.0,0.0,1.1,0,0",
        "0.0,1.0,1.2,0,0",
    ]))
    spec = FigureSpec(kind="stability", inputs=(str(p),),
                      out=str(tmp_path / "s.png"))
    fig = stability_figure(spec)
    assert fig.axes[0].get_xlabel() == "p"
    out = render(spec)
    assert (tmp_path / "s.png").exists() and out.endswith("s.png")


def test_stability_single_cell(tmp_path):
    p = write(tmp_path, "r.csv", region_csv(["-1.0,0.5,0.7,1,1"]))
    spec = FigureSpec(kind="stability", inputs=(str(p),),
                      out=str(tmp_path / "s.png"))
    render(spec)
    assert (tmp_path / "s.png").stat().st_size > 0


# ---------------------------------------------------------------------------
# Problem panels
# ---------------------------------------------------------------------------


def test_problem_panel_two_curves(tmp_path):
    p = write(tmp_path, "g.csv",
              "x,V,sigma\n-1.0,0.5,2.0\n0.0,0.0,1.5\n1.0,0.5,1.0\n")
    spec = FigureSpec(kind="problem_panel", inputs=(str(p),),
                      out=str(tmp_path / "g.png"))
    fig = problem_panel_figure(spec)
    assert len(fig.axes[0].get_lines()) == 2
    render(spec)
    assert (tmp_path / "g.png").exists()


def test_problem_panel_missing_file(tmp_path):
    spec = FigureSpec(kind="problem_panel",
                      inputs=(str(tmp_path / "absent.csv"),),
                      out=str(tmp_path / "g.png"))
    with pytest.raises(DataError, match="cannot read"):
        problem_panel_figure(spec)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _spec_file(tmp_path, csv_path, out_name="cli.png"):
    return write(tmp_path, "fig.spec",
                 f"kind = convergence\ninputs = {csv_path}\n"
                 f"out = {tmp_path / out_name}\n")


def test_cli_render_success(tmp_path, capsys):
    csv_path = write(tmp_path, "c.csv", conv_csv([
        "em,0.2,0.2,0.04,0.001,1,1,3,1.0,8",
        "em,0.1,0.1,0.01,0.001,1,1,3,1.0,8",
    ]))
    spec_file = _spec_file(tmp_path, csv_path)
    assert main(["render", str(spec_file)]) == 0
    assert (tmp_path / "cli.png").exists()
    assert "wrote" in capsys.readouterr().out


def test_cli_bad_spec_is_usage_error(tmp_path, capsys):
    bad = write(tmp_path, "bad.spec", "kind = nope\ninputs = a\nout = b\n")
    assert main(["render", str(bad)]) == 2
    assert "error:" in capsys.readouterr().err


def test_cli_missing_csv_is_runtime_error(tmp_path, capsys):
    spec_file = _spec_file(tmp_path, tmp_path / "absent.csv")
    assert main(["render", str(spec_file)]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_cli_renders_deterministic_bytes(tmp_path):
    csv_path = write(tmp_path, "c.csv", conv_csv([
        "em,0.2,0.2,0.04,0.001,1,1,3,1.0,8",
        "em,0.1,0.1,0.01,0.001,1,1,3,1.0,8",
    ]))
    spec_file = _spec_file(tmp_path, csv_path)
    assert main(["render", str(spec_file)]) == 0
    first = (tmp_path / "cli.png").read_bytes()
    assert main(["render", str(spec_file)]) == 0
    assert (tmp_path / "cli.png").read_bytes() == first
