"""Config-driven experiment runner.

An experiment is a flat key=value text document naming a problem, a method
list, a stepsize sweep, and an estimation mode; running it produces one
convergence record per (method, h) and a CSV with the documented schema

    method,h,effective_h,error,stderr,n_force,n_sigma,seed,T,n_traj

in full-precision decimals.  All methods share the master seed, so runs at
the same stepsize see common random numbers and two runs of the same config
are byte-identical.  Divergent (method, h) combinations are recorded with
the literal sentinel ``unstable`` in the error column and never abort the
sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import (
    ConvergenceRecord,
    ReferenceOracle,
    ensemble_histogram,
    ensemble_observable,
    l1_bin_error,
    reference_squarenorm,
    time_average_histogram,
    time_average_observable,
)
from .integrators import default_x0, method_from_string
from .model import ProblemSpec, UsageError, make_problem, sigma_eval

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "run_experiment",
    "run_reference",
    "records_to_csv",
    "write_records_csv",
    "read_records_csv",
    "write_region_csv",
    "write_problem_grid_csv",
    "geometric_h_grid",
    "preset_text",
    "PRESETS",
]

CSV_HEADER = "method,h,effective_h,error,stderr,n_force,n_sigma,seed,T,n_traj"
UNSTABLE_SENTINEL = "unstable"

_PROBLEM_PARAM_KEYS = {
    "k": float,
    "c": float,
    "A": float,
    "eps": float,
    "inverted": None,  # bool, parsed specially
    "matrix": None,    # row-major matrix, parsed specially
}

_MODES = ("time_average", "ensemble")
_OBSERVABLES = ("square_norm", "l1_bins")


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment: problem + methods + h sweep + estimation mode."""

    name: str
    potential: str
    diffusion: str
    d: int
    sigma: float
    problem_params: dict
    methods: tuple
    h_list: tuple
    mode: str
    observable: str
    seed: int
    out: str | None
    T: float
    burn_in: int | None = None
    replicates: int = 8
    n_traj: int = 0
    x0: tuple | None = None

    def problem(self) -> ProblemSpec:
        return make_problem(self.potential, self.diffusion, d=self.d,
                            sigma=self.sigma, **self.problem_params)

    def validate(self) -> "ExperimentConfig":
        if not self.name:
            raise UsageError("config needs a nonempty name")
        if not self.methods:
            raise UsageError("config needs at least one method")
        parsed = [method_from_string(m) for m in self.methods]
        if not self.h_list:
            raise UsageError("config needs a nonempty h_list")
        if any(h <= 0 for h in self.h_list):
            raise UsageError("every h must be positive")
        if list(self.h_list) != sorted(self.h_list, reverse=True):
            raise UsageError("h_list must be sorted in descending order")
        if len(set(self.h_list)) != len(self.h_list):
            raise UsageError("h_list contains duplicate stepsizes")
        if self.mode not in _MODES:
            raise UsageError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.observable not in _OBSERVABLES:
            raise UsageError(
                f"observable must be one of {_OBSERVABLES}, got {self.observable!r}")
        if not self.T > 0:
            raise UsageError(f"T must be positive, got {self.T}")
        if self.mode == "ensemble":
            if self.n_traj < 1:
                raise UsageError("ensemble mode needs n_traj >= 1")
            if any(m.family == "lmt" for m in parsed):
                raise UsageError(
                    "ensemble mode cannot run lmt: its steps advance rescaled "
                    "time by a state-dependent amount, so no fixed step count "
                    "lands on the physical time T")
        else:
            if self.replicates < 2:
                raise UsageError("time_average mode needs replicates >= 2")
        problem = self.problem()  # validates d/params against the catalog
        if self.observable == "l1_bins" and problem.dimension != 1:
            raise UsageError("l1_bins requires a one-dimensional problem")
        if any(m.family == "lmt" for m in parsed) and problem.dimension != 1:
            raise UsageError("lmt requires a one-dimensional problem")
        if self.x0 is not None and len(self.x0) != problem.dimension:
            raise UsageError(
                f"x0 has {len(self.x0)} components, problem dimension is "
                f"{problem.dimension}")
        if self.seed < 0:
            raise UsageError(f"seed must be nonnegative, got {self.seed}")
        return self


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise UsageError(f"{key} must be a boolean, got {raw!r}")


def _parse_matrix(raw: str) -> np.ndarray:
    try:
        rows = [[float(v) for v in row.split()] for row in raw.split(";")]
        mat = np.array(rows, dtype=float)
    except ValueError as exc:
        raise UsageError(f"cannot parse matrix from {raw!r}: {exc}") from None
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise UsageError(f"matrix must be square, got shape {mat.shape}")
    return mat


def _parse_floats(raw: str, key: str) -> tuple:
    try:
        return tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError as exc:
        raise UsageError(f"cannot parse {key} from {raw!r}: {exc}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a flat key=value experiment document."""
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key in pairs:
            raise UsageError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value

    def take(key, default=None):
        return pairs.pop(key, default)

    def need(key):
        if key not in pairs:
            raise UsageError(f"config is missing required key {key!r}")
        return pairs.pop(key)

    name = need("name")
    potential = need("potential")
    diffusion = need("diffusion")
    d = int(take("d", "1"))
    sigma = float(take("sigma", "1.0"))
    params = {}
    for key, conv in _PROBLEM_PARAM_KEYS.items():
        if key in pairs:
            raw = pairs.pop(key)
            if key == "inverted":
                params[key] = _parse_bool(raw, key)
            elif key == "matrix":
                params[key] = _parse_matrix(raw)
            else:
                params[key] = conv(raw)
    methods = tuple(m.strip() for m in need("methods").split(",") if m.strip())
    h_list = _parse_floats(need("h_list"), "h_list")
    mode = take("mode", "time_average")
    observable = take("observable", "square_norm")
    seed = int(take("seed", "0"))
    out = take("out")
    T = float(need("T"))
    burn_in_raw = take("burn_in")
    burn_in = None if burn_in_raw is None else int(burn_in_raw)
    replicates = int(take("replicates", "8"))
    n_traj = int(take("n_traj", "0"))
    x0_raw = take("x0")
    x0 = None if x0_raw is None else _parse_floats(x0_raw, "x0")
    if pairs:
        raise UsageError(f"unknown config keys: {sorted(pairs)}")
    cfg = ExperimentConfig(
        name=name, potential=potential, diffusion=diffusion, d=d, sigma=sigma,
        problem_params=params, methods=methods, h_list=h_list, mode=mode,
        observable=observable, seed=seed, out=out, T=T, burn_in=burn_in,
        replicates=replicates, n_traj=n_traj, x0=x0)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# Running experiments
# ---------------------------------------------------------------------------


def _x0_array(cfg: ExperimentConfig, problem: ProblemSpec):
    if cfg.x0 is None:
        return default_x0(problem)
    return np.array(cfg.x0, dtype=float)


def _l1_record(cfg, problem, oracle, method, method_name, h, x0
               ) -> ConvergenceRecord:
    weighted = method.family == "lmt"
    if cfg.mode == "time_average":
        run = time_average_histogram(problem, method, h, cfg.T, cfg.seed,
                                     cfg.burn_in, replicates=cfg.replicates,
                                     x0=x0)
    else:
        run = ensemble_histogram(problem, method, h, cfg.T, cfg.n_traj,
                                 cfg.seed, x0=x0)
    if run.unstable:
        return ConvergenceRecord(h=h, error=float("nan"), stderr=float("nan"),
                                 n_force=run.n_force, n_sigma=run.n_sigma,
                                 method=method_name, effective_h=run.effective_h)
    err = l1_bin_error(run.merged, oracle, weighted=weighted)
    part_errs = [l1_bin_error(p, oracle, weighted=weighted) for p in run.parts]
    stderr = float(np.std(part_errs, ddof=1) / math.sqrt(len(part_errs)))
    return ConvergenceRecord(h=h, error=err, stderr=stderr,
                             n_force=run.n_force, n_sigma=run.n_sigma,
                             method=method_name, effective_h=run.effective_h)


def _squarenorm_record(cfg, problem, reference, method, method_name, h, x0
                       ) -> ConvergenceRecord:
    if cfg.mode == "time_average":
        est = time_average_observable(problem, method, h, cfg.T, cfg.seed,
                                      cfg.burn_in, replicates=cfg.replicates,
                                      x0=x0)
    else:
        est = ensemble_observable(problem, method, h, cfg.T, cfg.n_traj,
                                  cfg.seed, x0=x0)
    if est.unstable:
        return ConvergenceRecord(h=h, error=float("nan"), stderr=float("nan"),
                                 n_force=est.n_force, n_sigma=est.n_sigma,
                                 method=method_name, effective_h=est.effective_h)
    return ConvergenceRecord(h=h, error=abs(est.mean - reference),
                             stderr=est.stderr, n_force=est.n_force,
                             n_sigma=est.n_sigma, method=method_name,
                             effective_h=est.effective_h)


def run_experiment(cfg: ExperimentConfig) -> list:
    """Run every (method, h) pair; return records and write the CSV if asked.

    Record order is methods-major, h within method (h_list order).  Unstable
    combinations produce NaN-error records (serialized as ``unstable``).
    """
    cfg = cfg.validate()
    problem = cfg.problem()
    x0 = _x0_array(cfg, problem)
    oracle = reference = None
    if cfg.observable == "l1_bins":
        oracle = ReferenceOracle.for_problem(problem)
    else:
        reference = reference_squarenorm(problem)
    records = []
    for method_name in cfg.methods:
        method = method_from_string(method_name)
        for h in cfg.h_list:
            if cfg.observable == "l1_bins":
                rec = _l1_record(cfg, problem, oracle, method, method_name,
                                 h, x0)
            else:
                rec = _squarenorm_record(cfg, problem, reference, method,
                                         method_name, h, x0)
            records.append(rec)
    if cfg.out:
        write_records_csv(cfg.out, records, cfg)
    return records


def run_reference(problem: ProblemSpec, observable: str):
    """Reference value(s) with a quadrature error estimate.

    Returns (value, error_estimate) for square_norm, or (masses, error_estimate)
    for l1_bins, where the estimate compares the production tolerance against
    a 100x looser re-run.
    """
    if observable == "square_norm":
        tight = float(reference_squarenorm(problem, rel_tol=1e-10))
        loose = float(reference_squarenorm(problem, rel_tol=1e-8))
        return tight, abs(tight - loose)
    if observable == "l1_bins":
        if problem.dimension != 1:
            raise UsageError("l1_bins requires a one-dimensional problem")
        tight = ReferenceOracle.for_problem(problem, rel_tol=1e-10)
        loose = ReferenceOracle.for_problem(problem, rel_tol=1e-8)
        masses = tight.bin_masses()
        err = float(np.abs(masses - loose.bin_masses()).max())
        return masses, err
    raise UsageError(f"unknown observable {observable!r}")


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    return repr(float(value))


def records_to_csv(records, cfg: ExperimentConfig) -> str:
    n_traj = cfg.n_traj if cfg.mode == "ensemble" else cfg.replicates
    lines = [CSV_HEADER]
    for r in records:
        err = UNSTABLE_SENTINEL if math.isnan(r.error) else _fmt(r.error)
        stderr = UNSTABLE_SENTINEL if math.isnan(r.stderr) else _fmt(r.stderr)
        n_steps_t = r.h * math.ceil(cfg.T / r.h - 1e-9)
        lines.append(",".join([
            r.method, _fmt(r.h), _fmt(r.effective_h), err, stderr,
            str(r.n_force), str(r.n_sigma), str(cfg.seed), _fmt(n_steps_t),
            str(n_traj),
        ]))
    return "\n".join(lines) + "\n"


def write_records_csv(path, records, cfg: ExperimentConfig) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(records_to_csv(records, cfg))
    except OSError as exc:
        raise RuntimeError(f"cannot write results to {path}: {exc}") from None


def read_records_csv(path) -> list:
    """Records back from the documented schema (for slope fitting/figures)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise UsageError(f"cannot read results from {path}: {exc}") from None
    if not lines or lines[0] != CSV_HEADER:
        raise UsageError(f"{path} does not start with the results header")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 10:
            raise UsageError(f"{path}:{lineno}: expected 10 columns")
        method, h, eff_h, err, stderr = cells[:5]
        err_v = float("nan") if err == UNSTABLE_SENTINEL else float(err)
        stderr_v = float("nan") if stderr == UNSTABLE_SENTINEL else float(stderr)
        records.append(ConvergenceRecord(
            h=float(h), error=err_v, stderr=stderr_v, n_force=int(cells[5]),
            n_sigma=int(cells[6]), method=method, effective_h=float(eff_h)))
    return records


def write_region_csv(scan, path) -> None:
    """Stability scan rows: p,q2,rho,stable,exact_stable (row-major)."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("p,q2,rho,stable,exact_stable\n")
            for p, q2, rho, stable, exact in scan.rows():
                fh.write(f"{_fmt(p)},{_fmt(q2)},{_fmt(rho)},"
                         f"{int(stable)},{int(exact)}\n")
    except OSError as exc:
        raise RuntimeError(f"cannot write region to {path}: {exc}") from None


def write_problem_grid_csv(problem: ProblemSpec, path, lo: float = -5.0,
                           hi: float = 5.0, n: int = 501) -> None:
    """Sampled V(x) and Sigma(x) for the 1D problem panels."""
    if problem.dimension != 1:
        raise UsageError("problem grids are exported for 1D problems only")
    xs = np.linspace(lo, hi, n)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("x,V,sigma\n")
            for x in xs:
                xv = np.array([x])
                v = problem.potential.value(xv)
                s = float(sigma_eval(problem, xv).sigma_mat[0, 0])
                fh.write(f"{_fmt(x)},{_fmt(v)},{_fmt(s)}\n")
    except OSError as exc:
        raise RuntimeError(f"cannot write grid to {path}: {exc}") from None


# ---------------------------------------------------------------------------
# Named stepsize grids and paper-scale presets
# ---------------------------------------------------------------------------


def geometric_h_grid(count: int, start: float = 1e-2,
                     factor: float = 10.0 ** 0.1) -> tuple:
    """h_k = start * factor^k for k < count, returned descending."""
    if count < 1:
        raise UsageError("grid needs at least one stepsize")
    hs = [start * factor**k for k in range(count)]
    return tuple(sorted(hs, reverse=True))


def _fmt_h_list(hs) -> str:
    return ", ".join(repr(h) for h in hs)


PRESETS = {
    # Long-trajectory 1D occupancy studies at publication scale: T = 5e7,
    # stepsizes 1e-2 * 10^(0.1 k) until the methods destabilize.
    "paper_l1_cosine": f"""\
name = paper_l1_cosine
potential = quadratic
diffusion = cosine1d
sigma = 1.0
methods = em, lmd, lmt, rk4_w2ito1, pvd2_w2ito1, pvd2_mt2
h_list = {_fmt_h_list(geometric_h_grid(21))}
mode = time_average
observable = l1_bins
T = 5e7
replicates = 10
seed = 2024
out = paper_l1_cosine.csv
""",
    "paper_l1_doublewell": f"""\
name = paper_l1_doublewell
potential = double_well
diffusion = exp_potential1d
c = 0.25
sigma = 1.0
methods = em, lmd, lmt, rk4_w2ito1, pvd2_w2ito1, pvd2_mt2
h_list = {_fmt_h_list(geometric_h_grid(21))}
mode = time_average
observable = l1_bins
T = 5e7
replicates = 10
seed = 2024
out = paper_l1_doublewell.csv
""",
    # 2D ensemble study: N = 1e5 trajectories to T = 30, h in [1e-2, 1].
    "paper_quadruplewell": f"""\
name = paper_quadruplewell
potential = quadruple_well
diffusion = constant
matrix = 2 0; 0 1.5
d = 2
sigma = 1.0
methods = em, lmd, rk4_w2ito1, pvd2_w2ito1, pvd2_mt2
h_list = {_fmt_h_list(geometric_h_grid(21, start=1e-2))}
mode = ensemble
observable = square_norm
T = 30
n_traj = 100000
x0 = 1, 1
seed = 2024
out = paper_quadruplewell.csv
""",
    # High-dimensional ring with radial-projection noise.
    "paper_ring10": f"""\
name = paper_ring10
potential = ring
k = 50.0
diffusion = ring_radial
d = 10
sigma = 1.0
methods = em, pvd2_mt2
h_list = {_fmt_h_list(geometric_h_grid(11, start=2e-3))}
mode = time_average
observable = square_norm
T = 1e5
replicates = 10
x0 = 1, 0, 0, 0, 0, 0, 0, 0, 0, 0
seed = 2024
out = paper_ring10.csv
""",
    # Desk-scale variants used by the acceptance suite.
    "desk_order2_cosine": """\
name = desk_order2_cosine
potential = quadratic
diffusion = cosine1d
sigma = 1.0
methods = pvd2_w2ito1, pvd2_mt2, em
h_list = 0.32, 0.16, 0.08, 0.04
mode = time_average
observable = square_norm
T = 2e6
replicates = 8
seed = 7
out = desk_order2_cosine.csv
""",
    "desk_order2_quartic": """\
name = desk_order2_quartic
potential = quartic
diffusion = sine1d
sigma = 1.0
methods = pvd2_w2ito1, pvd2_mt2
h_list = 0.32, 0.16, 0.08, 0.04
mode = time_average
observable = square_norm
T = 2e6
replicates = 8
seed = 7
out = desk_order2_quartic.csv
""",
    "desk_quadruplewell": """\
name = desk_quadruplewell
potential = quadruple_well
diffusion = constant
matrix = 2 0; 0 1.5
d = 2
sigma = 1.0
methods = pvd2_w2ito1, em
h_list = 0.31622776601683794, 0.1, 0.031622776601683794
mode = ensemble
observable = square_norm
T = 30
n_traj = 20000
x0 = 1, 1
seed = 11
out = desk_quadruplewell.csv
""",
    "desk_ring10": """\
name = desk_ring10
potential = ring
k = 50.0
diffusion = ring_radial
d = 10
sigma = 1.0
methods = pvd2_mt2
h_list = 0.02, 0.01, 0.005
mode = time_average
observable = square_norm
T = 1e5
replicates = 16
x0 = 1, 0, 0, 0, 0, 0, 0, 0, 0, 0
seed = 13
out = desk_ring10.csv
""",
}


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise UsageError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]
