"""Experiment configs, the CSV contract, and the command-line front end."""

import math

import numpy as np
import pytest

from browndyn import cli, harness
from browndyn.harness import (
    CSV_HEADER,
    ExperimentConfig,
    PRESETS,
    geometric_h_grid,
    parse_config,
    preset_text,
    read_records_csv,
    records_to_csv,
    run_experiment,
    run_reference,
    write_problem_grid_csv,
    write_region_csv,
)
from browndyn.model import UsageError, make_problem
from browndyn.stability import scan_region

GOOD_CFG = """\
# EM on the OU problem; stationary second moment is 1/(2-h).
name = ou_demo
potential = quadratic
diffusion = identity
sigma = 1.0
methods = em
h_list = 0.1
mode = time_average
observable = square_norm
T = 1e4
replicates = 8
seed = 3
"""


# ---------------------------------------------------------------------------
# Config parsing and validation
# ---------------------------------------------------------------------------


def test_parse_full_config():
    cfg = parse_config(GOOD_CFG)
    assert cfg.name == "ou_demo"
    assert cfg.methods == ("em",)
    assert cfg.h_list == (0.1,)
    assert cfg.mode == "time_average"
    assert cfg.T == 1e4
    assert cfg.out is None
    problem = cfg.problem()
    assert problem.dimension == 1


def test_parse_config_with_problem_params():
    cfg = parse_config("""
name = ring
potential = ring
k = 30.0
diffusion = ring_radial
d = 4
sigma = 0.8
methods = pvd2_mt2
h_list = 0.02, 0.01, 0.005
mode = time_average
T = 10
x0 = 1, 0, 0, 0
seed = 1
""")
    assert cfg.problem_params == {"k": 30.0}
    assert cfg.h_list == (0.02, 0.01, 0.005)
    assert cfg.x0 == (1.0, 0.0, 0.0, 0.0)
    assert cfg.problem().potential.k == 30.0


def test_parse_config_matrix_param():
    cfg = parse_config("""
name = qw
potential = quadruple_well
diffusion = constant
matrix = 2 0; 0 1.5
d = 2
methods = em
h_list = 0.1
mode = ensemble
T = 1
n_traj = 10
x0 = 1, 1
seed = 0
""")
    np.testing.assert_array_equal(cfg.problem_params["matrix"],
                                  [[2.0, 0.0], [0.0, 1.5]])


@pytest.mark.parametrize("mutation,fragment", [
    ("h_list = ", "nonempty h_list"),
    ("h_list = 0.1, 0.2", "descending"),
    ("h_list = 0.2, 0.2", "duplicate"),
    ("h_list = 0.1, -0.2", "positive"),
    ("methods = ", "at least one method"),
    ("methods = em, nope", "unknown method"),
    ("mode = sometimes", "mode must be"),
    ("observable = l2", "observable must be"),
    ("T = 0", "T must be positive"),
    ("replicates = 1", "replicates >= 2"),
    ("seed = -4", "nonnegative"),
])
def test_validation_rejects(mutation, fragment):
    key = mutation.split("=")[0].strip()
    lines = [ln for ln in GOOD_CFG.splitlines()
             if not ln.startswith(key + " ")]
    lines.append(mutation)
    with pytest.raises(UsageError, match=fragment):
        parse_config("\n".join(lines))


def test_parse_rejects_unknown_and_duplicate_keys():
    with pytest.raises(UsageError, match="unknown config keys"):
        parse_config(GOOD_CFG + "\nbogus = 1\n")
    with pytest.raises(UsageError, match="duplicate key"):
        parse_config(GOOD_CFG + "\nname = twice\n")
    with pytest.raises(UsageError, match="missing required key"):
        parse_config("name = x\npotential = quadratic\n")
    with pytest.raises(UsageError, match="key = value"):
        parse_config("just some words\n")


def test_validate_l1_bins_needs_1d():
    cfg = parse_config("""
name = bad
potential = quadruple_well
diffusion = identity
d = 2
methods = em
h_list = 0.1
mode = time_average
observable = l1_bins
T = 1
seed = 0
""".replace("observable = l1_bins", "observable = square_norm"))
    with pytest.raises(UsageError, match="one-dimensional"):
        parse_config("""
name = bad
potential = quadruple_well
diffusion = identity
d = 2
methods = em
h_list = 0.1
mode = time_average
observable = l1_bins
T = 1
seed = 0
""")
    assert cfg.name == "bad"


def test_validate_ensemble_lmt_rejected():
    with pytest.raises(UsageError, match="ensemble mode cannot run lmt"):
        parse_config("""
name = bad
potential = quadratic
diffusion = cosine1d
methods = lmt
h_list = 0.1
mode = ensemble
T = 1
n_traj = 10
seed = 0
""")


def test_validate_x0_dimension():
    with pytest.raises(UsageError, match="x0 has"):
        parse_config(GOOD_CFG + "x0 = 1, 2\n")


def test_geometric_h_grid():
    hs = geometric_h_grid(5)
    assert len(hs) == 5
    assert list(hs) == sorted(hs, reverse=True)
    for k, h in enumerate(sorted(hs)):
        assert h == pytest.approx(1e-2 * 10 ** (0.1 * k), rel=1e-14)
    with pytest.raises(UsageError):
        geometric_h_grid(0)


def test_presets_all_parse():
    for name in PRESETS:
        cfg = parse_config(preset_text(name))
        assert cfg.name == name
    with pytest.raises(UsageError, match="unknown preset"):
        preset_text("nope")


# ---------------------------------------------------------------------------
# Running experiments and the CSV round trip
# ---------------------------------------------------------------------------


def test_run_experiment_em_ou_record(tmp_path):
    out = tmp_path / "ou.csv"
    cfg = parse_config(GOOD_CFG + f"out = {out}\n")
    records = run_experiment(cfg)
    assert len(records) == 1
    rec = records[0]
    assert rec.method == "em"
    # EM's stationary second moment on OU is 1/(2-h): bias 1/1.9 - 1/2.
    want = 1.0 / 1.9 - 0.5
    assert abs(rec.error - want) < 4 * rec.stderr
    assert rec.n_force == 8 * 100000
    assert rec.n_sigma == 8 * 100000
    text = out.read_text()
    assert text.splitlines()[0] == CSV_HEADER
    back = read_records_csv(out)
    assert len(back) == 1
    assert back[0].h == rec.h
    assert back[0].error == rec.error
    assert back[0].stderr == rec.stderr
    assert back[0].n_force == rec.n_force


def test_run_experiment_deterministic_across_thread_counts(tmp_path):
    import numba

    cfg = parse_config(GOOD_CFG.replace("T = 1e4", "T = 1e3"))
    counts = sorted({1, numba.config.NUMBA_NUM_THREADS})
    outputs = []
    for n in counts + counts[:1]:  # at least two runs even on one core
        numba.set_num_threads(n)
        try:
            recs = run_experiment(cfg)
        finally:
            numba.set_num_threads(1)
        outputs.append(records_to_csv(recs, cfg))
    for other in outputs[1:]:
        assert other == outputs[0]


def test_run_experiment_unstable_sentinel(tmp_path):
    out = tmp_path / "blowup.csv"
    cfg = parse_config(f"""
name = blowup
potential = quartic
diffusion = identity
methods = em
h_list = 5.0
mode = time_average
T = 100
x0 = 3.0
seed = 1
out = {out}
""")
    records = run_experiment(cfg)
    assert math.isnan(records[0].error)
    lines = out.read_text().splitlines()
    assert "unstable" in lines[1].split(",")
    back = read_records_csv(out)
    assert math.isnan(back[0].error)


def test_run_experiment_l1_bins(tmp_path):
    cfg = parse_config("""
name = occupancy
potential = quadratic
diffusion = cosine1d
methods = em, lmt
h_list = 0.1
mode = time_average
observable = l1_bins
T = 4e3
replicates = 4
seed = 5
""")
    records = run_experiment(cfg)
    assert len(records) == 2
    for rec in records:
        assert 0 < rec.error < 0.01
        assert rec.stderr > 0
    # lmt runs in rescaled time, so its effective stepsize differs from h.
    em_rec, lmt_rec = records
    assert em_rec.effective_h == pytest.approx(0.1)
    assert lmt_rec.effective_h != pytest.approx(0.1)


def test_run_experiment_ensemble(tmp_path):
    cfg = parse_config("""
name = gather
potential = quadratic
diffusion = identity
methods = em
h_list = 0.1
mode = ensemble
T = 5
n_traj = 4000
seed = 6
""")
    rec = run_experiment(cfg)[0]
    r = 0.81  # (1-h)^2
    n = 50
    want_mean = 0.1 * (1 - r**n) / (1 - r)
    assert abs(rec.error - abs(want_mean - 0.5)) < 4 * rec.stderr


def test_records_to_csv_full_precision():
    cfg = parse_config(GOOD_CFG)
    records = [harness.ConvergenceRecord(
        h=0.1, error=1 / 3, stderr=1e-17, n_force=10, n_sigma=20,
        method="em", effective_h=0.1)]
    text = records_to_csv(records, cfg)
    line = text.splitlines()[1].split(",")
    assert float(line[3]) == 1 / 3       # round-trips exactly
    assert line[3] == repr(1 / 3)
    assert line[7] == "3"                # seed
    assert float(line[8]) == pytest.approx(1e4)
    assert line[9] == "8"                # replicates fill n_traj


def test_read_records_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("not,the,header\n")
    with pytest.raises(UsageError, match="header"):
        read_records_csv(bad)
    bad.write_text(CSV_HEADER + "\nem,0.1,0.1\n")
    with pytest.raises(UsageError, match="10 columns"):
        read_records_csv(bad)
    with pytest.raises(UsageError, match="cannot read"):
        read_records_csv(tmp_path / "missing.csv")


# ---------------------------------------------------------------------------
# References and exports
# ---------------------------------------------------------------------------


def test_run_reference_square_norm():
    problem = make_problem("quadratic", "identity")
    value, err = run_reference(problem, "square_norm")
    assert value == pytest.approx(0.5, rel=1e-9)
    assert err < 1e-6


def test_run_reference_l1_bins():
    problem = make_problem("quadratic", "cosine1d")
    masses, err = run_reference(problem, "l1_bins")
    assert masses.shape == (30,)
    assert masses.sum() == pytest.approx(math.erf(5.0), rel=1e-10)
    assert err < 1e-8


def test_run_reference_rejects_unknown():
    problem = make_problem("quadratic", "identity")
    with pytest.raises(UsageError):
        run_reference(problem, "l2_norm")
    problem2 = make_problem("quadruple_well", "identity", d=2)
    with pytest.raises(UsageError):
        run_reference(problem2, "l1_bins")


def test_write_region_csv(tmp_path):
    out = tmp_path / "region.csv"
    scan = scan_region("pvd2_mt2", np.linspace(-2, 0, 3),
                       np.linspace(0, 1, 2))
    write_region_csv(scan, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "p,q2,rho,stable,exact_stable"
    assert len(lines) == 1 + 6
    cells = lines[1].split(",")
    assert float(cells[0]) == -2.0
    assert cells[3] in ("0", "1")


def test_write_problem_grid(tmp_path):
    out = tmp_path / "grid.csv"
    problem = make_problem("quadratic", "cosine1d")
    write_problem_grid_csv(problem, out, lo=-1.0, hi=1.0, n=5)
    lines = out.read_text().splitlines()
    assert lines[0] == "x,V,sigma"
    assert len(lines) == 6
    x, v, s = (float(c) for c in lines[1].split(","))
    assert x == -1.0 and v == pytest.approx(0.5)
    with pytest.raises(UsageError):
        write_problem_grid_csv(make_problem("quadruple_well", "identity",
                                            d=2), out)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _write_cfg(tmp_path, text):
    p = tmp_path / "exp.cfg"
    p.write_text(text)
    return str(p)


def test_cli_run_roundtrip(tmp_path, capsys):
    out = tmp_path / "res.csv"
    cfg_path = _write_cfg(tmp_path, GOOD_CFG.replace("T = 1e4", "T = 1e3")
                          + f"out = {out}\n")
    assert cli.main(["run", cfg_path]) == 0
    assert out.exists()
    printed = capsys.readouterr().out
    assert "ou_demo" in printed and "em" in printed


def test_cli_run_usage_errors(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == 2
    bad = _write_cfg(tmp_path, GOOD_CFG.replace("h_list = 0.1", "h_list ="))
    assert cli.main(["run", bad]) == 2
    err = capsys.readouterr().err
    assert "error" in err


def test_cli_run_preset_name(capsys):
    assert cli.main(["run", "preset:not_a_preset"]) == 2


def test_cli_reference(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path, GOOD_CFG)
    grid = tmp_path / "grid.csv"
    assert cli.main(["reference", cfg_path, "--grid-out", str(grid)]) == 0
    out = capsys.readouterr().out
    assert "0.5" in out and "quadrature error estimate" in out
    assert grid.exists()


def test_cli_stability_and_slope(tmp_path, capsys):
    region = tmp_path / "region.csv"
    assert cli.main(["stability", "--method", "pvd2_w2ito1", "--res", "24",
                     "--out", str(region)]) == 0
    lines = region.read_text().splitlines()
    assert lines[0] == "p,q2,rho,stable,exact_stable"
    assert len(lines) == 1 + 24 * 24

    # A synthetic results CSV with exact h^2 errors fits slope 2.
    res = tmp_path / "conv.csv"
    rows = [harness.CSV_HEADER]
    for h in (0.4, 0.2, 0.1, 0.05):
        rows.append(f"m,{h!r},{h!r},{h * h!r},{h * h * 0.01!r},1,1,0,1.0,8")
    res.write_text("\n".join(rows) + "\n")
    assert cli.main(["slope", str(res)]) == 0
    out = capsys.readouterr().out
    assert "slope = 2.0000" in out
    assert cli.main(["slope", str(res), "--method", "nope"]) == 2


def test_cli_stability_flag_validation(tmp_path):
    out = str(tmp_path / "r.csv")
    assert cli.main(["stability", "--method", "em", "--out", out]) == 2
    assert cli.main(["stability", "--res", "0", "--out", out]) == 2
    assert cli.main(["stability", "--pmin", "1", "--pmax", "0",
                     "--out", out]) == 2


def test_cli_worker_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.WORKERS_ENV, "not-a-number")
    assert cli.main(["slope", str(tmp_path / "x.csv")]) == 2
    err = capsys.readouterr().err
    assert "BROWNDYN_WORKERS" in err
    monkeypatch.setenv(cli.WORKERS_ENV, "1")
    cfg_path = _write_cfg(tmp_path, GOOD_CFG.replace("T = 1e4", "T = 50"))
    assert cli.main(["run", cfg_path]) == 0


def test_cli_runtime_failure_exit_code(tmp_path, capsys):
    cfg_path = _write_cfg(
        tmp_path, GOOD_CFG.replace("T = 1e4", "T = 50")
        + f"out = {tmp_path}/no_such_dir/res.csv\n")
    assert cli.main(["run", cfg_path]) == 1
    assert "error" in capsys.readouterr().err
