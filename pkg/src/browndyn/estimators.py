"""Observable estimation and reference values.

Two estimation modes mirror the benchmark protocols: long-trajectory time
averages (with optional histogram accumulation for L1 bin errors) and
fixed-time ensembles.  Reference values come from 1D adaptive quadrature on
the invariant density rho_inf(x) ~ exp(-(2/sigma^2) V(x)), which depends on
the potential and sigma only, never on the diffusion field; the quadrature
is the oracle every bias measurement is taken against.

Estimation runs on the compiled engine (:mod:`browndyn._kernels`), one slot
per trajectory, reduced here in fixed order so results do not depend on the
thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .integrators import MethodKind, default_x0
from .model import ProblemSpec, QuadrupleWell, Ring, UsageError

__all__ = [
    "HistogramEstimator",
    "ReferenceOracle",
    "ConvergenceRecord",
    "Estimate",
    "adaptive_simpson",
    "l1_bin_error",
    "reference_squarenorm",
    "ensemble_observable",
    "time_average_observable",
    "time_average_histogram",
    "ensemble_histogram",
    "fit_slope",
    "steps_for_horizon",
    "default_burn_in",
]


# ---------------------------------------------------------------------------
# Histogram accumulation
# ---------------------------------------------------------------------------


class HistogramEstimator:
    """Fixed-grid occupancy counts on [lo, hi), out-of-range kept in totals.

    ``counts``/``total`` are exact integers.  A parallel weighted tally
    (``w_counts``/``w_total``) carries reweighted occupancies for the
    time-rescaled method; with unit weights it equals the integer tally
    exactly, so unweighted callers can ignore it.
    """

    def __init__(self, lo: float = -5.0, hi: float = 5.0, n_bins: int = 30):
        if not (hi > lo):
            raise UsageError(f"histogram needs hi > lo, got [{lo}, {hi}]")
        if n_bins < 1:
            raise UsageError(f"histogram needs at least one bin, got {n_bins}")
        self.lo = float(lo)
        self.hi = float(hi)
        self.n_bins = int(n_bins)
        self._inv_width = self.n_bins / (self.hi - self.lo)
        self.counts = np.zeros(self.n_bins, dtype=np.int64)
        self.total = 0
        self.w_counts = np.zeros(self.n_bins)
        self.w_total = 0.0

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    def bin_edges(self) -> np.ndarray:
        return self.lo + np.arange(self.n_bins + 1) / self._inv_width

    def add(self, value: float, weight: float = 1.0) -> None:
        idx = math.floor((value - self.lo) * self._inv_width)
        if 0 <= idx < self.n_bins:
            self.counts[idx] += 1
            self.w_counts[idx] += weight
        self.total += 1
        self.w_total += weight

    def add_array(self, values, weights=None) -> None:
        v = np.asarray(values, dtype=float).ravel()
        idx = np.floor((v - self.lo) * self._inv_width)
        inside = (idx >= 0) & (idx < self.n_bins)
        ii = idx[inside].astype(np.int64)
        np.add.at(self.counts, ii, 1)
        self.total += v.size
        if weights is None:
            np.add.at(self.w_counts, ii, 1.0)
            self.w_total += float(v.size)
        else:
            w = np.asarray(weights, dtype=float).ravel()
            if w.shape != v.shape:
                raise UsageError("weights must match values in length")
            np.add.at(self.w_counts, ii, w[inside])
            self.w_total += float(w.sum())

    def add_tallies(self, counts, n_samples: int, w_counts=None,
                    w_total: float | None = None) -> None:
        """Fold in pre-binned tallies (the compiled engine's per-slot output)."""
        counts = np.asarray(counts)
        if counts.shape != (self.n_bins,):
            raise UsageError("tally shape does not match the histogram grid")
        self.counts += counts.astype(np.int64)
        self.total += int(n_samples)
        if w_counts is None:
            self.w_counts += counts.astype(float)
            self.w_total += float(n_samples)
        else:
            self.w_counts += np.asarray(w_counts, dtype=float)
            self.w_total += float(w_total)

    def _check_same_grid(self, other: "HistogramEstimator") -> None:
        if (self.lo, self.hi, self.n_bins) != (other.lo, other.hi, other.n_bins):
            raise UsageError("histograms on different grids cannot be combined")

    def merge(self, other: "HistogramEstimator") -> "HistogramEstimator":
        """Associative, commutative combination of partial tallies."""
        self._check_same_grid(other)
        out = HistogramEstimator(self.lo, self.hi, self.n_bins)
        out.counts = self.counts + other.counts
        out.total = self.total + other.total
        out.w_counts = self.w_counts + other.w_counts
        out.w_total = self.w_total + other.w_total
        return out

    def masses(self) -> np.ndarray:
        if self.total == 0:
            raise UsageError("histogram is empty; bin masses are undefined")
        return self.counts / self.total

    def weighted_masses(self) -> np.ndarray:
        if self.w_total <= 0:
            raise UsageError("histogram carries no weight; masses undefined")
        return self.w_counts / self.w_total


# ---------------------------------------------------------------------------
# Adaptive quadrature and the invariant-density oracle
# ---------------------------------------------------------------------------


def _simpson(width: float, fa: float, fm: float, fb: float) -> float:
    return width / 6.0 * (fa + 4.0 * fm + fb)


def _adapt(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = f(lm)
    frm = f(rm)
    left = _simpson(m - a, fa, flm, fm)
    right = _simpson(b - m, fm, frm, fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    half = 0.5 * tol
    return (_adapt(f, a, m, fa, flm, fm, left, half, depth - 1)
            + _adapt(f, m, b, fm, frm, fb, right, half, depth - 1))


def adaptive_simpson(f, a: float, b: float, rel_tol: float = 1e-10,
                     n_panels: int = 128, max_depth: int = 48) -> float:
    """Adaptive Simpson on [a, b] to a relative tolerance.

    A fixed composite pre-pass sets the absolute scale and seeds the panels,
    so narrow features (sharp Gibbs peaks) are not missed by a single
    top-level interval.
    """
    if not b > a:
        raise UsageError(f"integration interval is empty: [{a}, {b}]")
    xs = np.linspace(a, b, 2 * n_panels + 1)
    fs = np.array([f(x) for x in xs])
    coarse = 0.0
    for k in range(n_panels):
        coarse += _simpson(xs[2 * k + 2] - xs[2 * k], fs[2 * k],
                           fs[2 * k + 1], fs[2 * k + 2])
    tol = rel_tol * max(abs(coarse), 1e-300) / n_panels
    total = 0.0
    for k in range(n_panels):
        a_k, m_k, b_k = xs[2 * k], xs[2 * k + 1], xs[2 * k + 2]
        whole = _simpson(b_k - a_k, fs[2 * k], fs[2 * k + 1], fs[2 * k + 2])
        total += _adapt(f, a_k, b_k, fs[2 * k], fs[2 * k + 1], fs[2 * k + 2],
                        whole, tol, max_depth)
    return total


_TRUNCATION = 1e-16


def _support_interval(f, lo: float, hi: float, n_scan: int = 4001):
    """Smallest scan subinterval outside which f < 1e-16 of its maximum."""
    xs = np.linspace(lo, hi, n_scan)
    vals = np.array([f(x) for x in xs])
    vmax = vals.max()
    if vmax <= 0:
        raise UsageError("density is identically zero on the scan window")
    keep = np.nonzero(vals >= _TRUNCATION * vmax)[0]
    i0 = max(keep[0] - 1, 0)
    i1 = min(keep[-1] + 1, n_scan - 1)
    return float(xs[i0]), float(xs[i1])


class ReferenceOracle:
    """Quadrature reference for the 1D invariant density.

    rho(x) = exp(-(2/sigma^2) V(x)), normalized by adaptive Simpson on the
    truncated support.  Depends on the potential and sigma only; constructing
    one requires no diffusion field at all, which is the point: the exact
    stationary law never sees Sigma.
    """

    def __init__(self, potential, sigma: float, *, window: float = 40.0,
                 rel_tol: float = 1e-10):
        if not sigma > 0:
            raise UsageError(f"sigma must be positive, got {sigma}")
        self.potential = potential
        self.sigma = float(sigma)
        self.rel_tol = float(rel_tol)
        beta = 2.0 / self.sigma**2
        pot = potential

        def rho(t: float) -> float:
            return math.exp(-beta * pot.value(np.array([t])))

        self.rho = rho
        self._a, self._b = _support_interval(rho, -window, window)
        self.normalizer = adaptive_simpson(rho, self._a, self._b, rel_tol)
        self._bin_cache: dict = {}
        self._moment_cache: dict = {}

    @classmethod
    def for_problem(cls, problem: ProblemSpec, **kw) -> "ReferenceOracle":
        if problem.dimension != 1:
            raise UsageError("the density oracle integrates 1D potentials only")
        return cls(problem.potential, problem.sigma, **kw)

    @property
    def support(self):
        return self._a, self._b

    def density(self, t: float) -> float:
        return self.rho(t) / self.normalizer

    def bin_masses(self, lo: float = -5.0, hi: float = 5.0,
                   n_bins: int = 30) -> np.ndarray:
        """Exact occupancy probability of each bin under the invariant law."""
        key = (lo, hi, n_bins)
        if key not in self._bin_cache:
            edges = lo + (hi - lo) * np.arange(n_bins + 1) / n_bins
            masses = np.zeros(n_bins)
            for i in range(n_bins):
                a = max(edges[i], self._a)
                b = min(edges[i + 1], self._b)
                if b > a:
                    masses[i] = adaptive_simpson(self.rho, a, b, self.rel_tol)
            self._bin_cache[key] = masses / self.normalizer
        return self._bin_cache[key]

    def moment(self, power: int = 2) -> float:
        """E[x^power] under the invariant law."""
        if power not in self._moment_cache:
            rho = self.rho

            def f(t: float) -> float:
                return t**power * rho(t)

            val = adaptive_simpson(f, self._a, self._b, self.rel_tol)
            self._moment_cache[power] = val / self.normalizer
        return self._moment_cache[power]


def l1_bin_error(est: HistogramEstimator, oracle: ReferenceOracle, *,
                 weighted: bool = False) -> float:
    """(1/M) sum_i |omega_i - omega_hat_i| against the oracle's bin masses."""
    omega = oracle.bin_masses(est.lo, est.hi, est.n_bins)
    omega_hat = est.weighted_masses() if weighted else est.masses()
    return float(np.abs(omega - omega_hat).sum() / est.n_bins)


def reference_squarenorm(problem: ProblemSpec, rel_tol: float = 1e-10) -> float:
    """E[|x|^2] under the invariant law, by quadrature.

    Handles the three shapes the benchmarks use: any 1D potential directly,
    the separable 2D quadruple well via its identical marginals, and the
    radial ring potential in any dimension via the radial moments
    int r^(d+1) w(r) dr / int r^(d-1) w(r) dr with w the radial Gibbs factor.
    """
    pot = problem.potential
    if problem.dimension == 1:
        return ReferenceOracle(pot, problem.sigma, rel_tol=rel_tol).moment(2)
    if isinstance(pot, QuadrupleWell):
        marginal = _QuadrupleWellMarginal()
        return 2.0 * ReferenceOracle(marginal, problem.sigma,
                                     rel_tol=rel_tol).moment(2)
    if isinstance(pot, Ring):
        beta = 2.0 / problem.sigma**2
        k = pot.k
        d = problem.dimension

        def w(r: float, m: int) -> float:
            return r**m * math.exp(-beta * 0.5 * k * (1.0 - r) ** 2)

        a, b = _support_interval(lambda r: w(r, d - 1), 1e-12, 40.0)
        num = adaptive_simpson(lambda r: w(r, d + 1), a, b, rel_tol)
        den = adaptive_simpson(lambda r: w(r, d - 1), a, b, rel_tol)
        return num / den
    raise UsageError(
        f"no quadrature reference for |x|^2 under {type(pot).__name__} "
        f"in dimension {problem.dimension}")


class _QuadrupleWellMarginal:
    """1D factor of the separable quadruple-well potential."""

    def check_dimension(self, d: int) -> None:
        if d != 1:
            raise UsageError("marginal potential is one-dimensional")

    def value(self, x: np.ndarray) -> float:
        t = float(x[0])
        return math.sqrt(17.0 / 16.0 - 2.0 * t * t + t**4)

    def grad(self, x: np.ndarray) -> np.ndarray:
        t = float(x[0])
        return np.array([2.0 * t * (t * t - 1.0) / self.value(x)])


# ---------------------------------------------------------------------------
# Monte Carlo estimation on the compiled engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    """mean/stderr plus run metadata; unpacks as the (mean, stderr) pair."""

    mean: float
    stderr: float
    n_steps: int
    t_actual: float
    n_force: int
    n_sigma: int
    effective_h: float
    unstable: bool = False
    degenerate_stderr: bool = False

    def __iter__(self):
        yield self.mean
        yield self.stderr


@dataclass(frozen=True)
class ConvergenceRecord:
    """One (method, stepsize) row of a convergence study."""

    h: float
    error: float
    stderr: float
    n_force: int
    n_sigma: int
    method: str
    effective_h: float

    def __post_init__(self):
        if not (math.isnan(self.error) or self.error >= 0):
            raise UsageError(f"error must be nonnegative, got {self.error}")
        if not (math.isnan(self.stderr) or self.stderr >= 0):
            raise UsageError(f"stderr must be nonnegative, got {self.stderr}")


def steps_for_horizon(T: float, h: float) -> int:
    """Step count covering horizon T: ceil(T/h), robust to float noise."""
    if not (T > 0 and h > 0):
        raise UsageError(f"need positive T and h, got T={T}, h={h}")
    return int(math.ceil(T / h - 1e-9))


def default_burn_in(n_steps: int) -> int:
    return min(1000, n_steps // 100)


def _run(problem, method, h, n_steps, burn_in, seed, traj0, n_traj, mode,
         x0=None, hist_grid=(-5.0, 5.0, 30)):
    if x0 is None:
        x0 = default_x0(problem)
    lo, hi, n_bins = hist_grid
    return _kernels.run_trajectories(
        problem, method, h, n_steps, x0, seed, mode=mode, burn_in=burn_in,
        traj0=traj0, n_traj=n_traj, hist_lo=lo, hist_hi=hi, n_bins=n_bins)


def _unstable_estimate(n_steps, t_actual, h, out_i) -> Estimate:
    return Estimate(mean=float("nan"), stderr=float("nan"), n_steps=n_steps,
                    t_actual=t_actual, n_force=int(out_i[:, 1].sum()),
                    n_sigma=int(out_i[:, 2].sum()), effective_h=h,
                    unstable=True)


def time_average_observable(problem: ProblemSpec, method: MethodKind,
                            h: float, T: float, seed: int,
                            burn_in: int | None = None, *,
                            replicates: int = 8, x0=None) -> Estimate:
    """Long-run average of |x|^2 over independent replicate trajectories.

    Each replicate covers the full horizon T (ceil(T/h) steps); the estimate
    is the mean of replicate means and the standard error across replicates.
    Samples are post-processed states for the pvd2 family and carry 1/g^2
    weights for lmt (whose effective stepsize h<1/g^2> is reported).
    """
    if replicates < 2:
        raise UsageError("replicate standard errors need at least 2 replicates")
    n_steps = steps_for_horizon(T, h)
    if burn_in is None:
        burn_in = default_burn_in(n_steps)
    if not 0 <= burn_in < n_steps:
        raise UsageError(f"burn_in must lie in [0, {n_steps}), got {burn_in}")
    out_f, out_i, _, _ = _run(problem, method, h, n_steps, burn_in, seed,
                              0, replicates, _kernels.MODE_TIME_AVERAGE, x0)
    t_actual = n_steps * h
    if (out_i[:, 3] != 0).any():
        return _unstable_estimate(n_steps, t_actual, h, out_i)
    means = out_f[:, 1] / out_f[:, 0]
    mean = float(means.mean())
    stderr = float(means.std(ddof=1) / math.sqrt(replicates))
    eff_h = h * float(out_f[:, 0].sum()) / float(out_i[:, 0].sum())
    return Estimate(mean=mean, stderr=stderr, n_steps=n_steps,
                    t_actual=t_actual, n_force=int(out_i[:, 1].sum()),
                    n_sigma=int(out_i[:, 2].sum()), effective_h=eff_h)


def ensemble_observable(problem: ProblemSpec, method: MethodKind, h: float,
                        T: float, n_traj: int, seed: int, *,
                        x0=None) -> Estimate:
    """Mean/stderr of |x|^2 at time T across n_traj trajectories.

    The observed state is the post-processed point for the pvd2 family and
    the raw state otherwise.  With a single trajectory the standard error is
    undefined and reported as 0 with ``degenerate_stderr`` set.
    """
    if n_traj < 1:
        raise UsageError(f"need at least one trajectory, got {n_traj}")
    n_steps = steps_for_horizon(T, h)
    out_f, out_i, _, _ = _run(problem, method, h, n_steps, 0, seed,
                              0, n_traj, _kernels.MODE_ENSEMBLE, x0)
    t_actual = n_steps * h
    if (out_i[:, 3] != 0).any():
        return _unstable_estimate(n_steps, t_actual, h, out_i)
    phis = out_f[:, 2]
    mean = float(phis.mean())
    if n_traj == 1:
        return Estimate(mean=mean, stderr=0.0, n_steps=n_steps,
                        t_actual=t_actual, n_force=int(out_i[:, 1].sum()),
                        n_sigma=int(out_i[:, 2].sum()), effective_h=h,
                        degenerate_stderr=True)
    stderr = float(phis.std(ddof=1) / math.sqrt(n_traj))
    return Estimate(mean=mean, stderr=stderr, n_steps=n_steps,
                    t_actual=t_actual, n_force=int(out_i[:, 1].sum()),
                    n_sigma=int(out_i[:, 2].sum()), effective_h=h)


@dataclass(frozen=True)
class HistogramRun:
    """Merged occupancy tallies plus per-chunk partials for error bars."""

    merged: HistogramEstimator
    parts: list
    n_steps: int
    t_actual: float
    n_force: int
    n_sigma: int
    effective_h: float
    unstable: bool = False


def _histogram_run(problem, method, h, n_steps, burn_in, seed, n_slots, mode,
                   chunks, x0, grid) -> HistogramRun:
    lo, hi, n_bins = grid
    out_f, out_i, out_hist, out_whist = _run(
        problem, method, h, n_steps, burn_in, seed, 0, n_slots, mode, x0, grid)
    t_actual = n_steps * h
    unstable = bool((out_i[:, 3] != 0).any())
    merged = HistogramEstimator(lo, hi, n_bins)
    parts = []
    bounds = np.linspace(0, n_slots, chunks + 1).astype(int)
    for c in range(chunks):
        sl = slice(bounds[c], bounds[c + 1])
        part = HistogramEstimator(lo, hi, n_bins)
        part.add_tallies(out_hist[sl].sum(axis=0), int(out_i[sl, 0].sum()),
                         out_whist[sl].sum(axis=0), float(out_f[sl, 0].sum()))
        parts.append(part)
        merged = merged.merge(part)
    n_sample_total = int(out_i[:, 0].sum())
    eff_h = h if n_sample_total == 0 else (
        h * float(out_f[:, 0].sum()) / n_sample_total)
    return HistogramRun(merged=merged, parts=parts, n_steps=n_steps,
                        t_actual=t_actual, n_force=int(out_i[:, 1].sum()),
                        n_sigma=int(out_i[:, 2].sum()), effective_h=eff_h,
                        unstable=unstable)


def time_average_histogram(problem: ProblemSpec, method: MethodKind, h: float,
                           T: float, seed: int, burn_in: int | None = None, *,
                           replicates: int = 8, x0=None,
                           grid=(-5.0, 5.0, 30)) -> HistogramRun:
    """Occupancy histogram of x (first coordinate of the sampled state)
    accumulated along replicate trajectories; one partial per replicate."""
    if problem.dimension != 1:
        raise UsageError("bin occupancy errors are defined for 1D problems")
    if replicates < 2:
        raise UsageError("replicate standard errors need at least 2 replicates")
    n_steps = steps_for_horizon(T, h)
    if burn_in is None:
        burn_in = default_burn_in(n_steps)
    if not 0 <= burn_in < n_steps:
        raise UsageError(f"burn_in must lie in [0, {n_steps}), got {burn_in}")
    return _histogram_run(problem, method, h, n_steps, burn_in, seed,
                          replicates, _kernels.MODE_TIME_AVERAGE, replicates,
                          x0, grid)


def ensemble_histogram(problem: ProblemSpec, method: MethodKind, h: float,
                       T: float, n_traj: int, seed: int, *, chunks: int = 8,
                       x0=None, grid=(-5.0, 5.0, 30)) -> HistogramRun:
    """Occupancy histogram of the time-T ensemble, chunked for error bars."""
    if problem.dimension != 1:
        raise UsageError("bin occupancy errors are defined for 1D problems")
    if n_traj < chunks:
        raise UsageError(f"need at least {chunks} trajectories, got {n_traj}")
    n_steps = steps_for_horizon(T, h)
    return _histogram_run(problem, method, h, n_steps, 0, seed, n_traj,
                          _kernels.MODE_ENSEMBLE, chunks, x0, grid)


# ---------------------------------------------------------------------------
# Convergence-slope fitting
# ---------------------------------------------------------------------------


def fit_slope(records) -> float:
    """Weighted log-log slope of error vs h.

    Uses records whose error resolves above its own standard error; weights
    are 1/stderr^2, falling back to uniform when any usable record reports
    stderr = 0 (deterministic errors).  Fewer than 3 usable points with
    distinct h is an error.
    """
    usable = [r for r in records
              if math.isfinite(r.error) and r.error > 0.0
              and r.error > r.stderr]
    if len({r.h for r in usable}) < 3:
        raise UsageError(
            f"slope fit needs >= 3 usable stepsizes, have {len(usable)}")
    ell_h = np.log([r.h for r in usable])
    ell_e = np.log([r.error for r in usable])
    if any(r.stderr == 0.0 for r in usable):
        w = np.ones_like(ell_h)
    else:
        w = np.array([1.0 / r.stderr**2 for r in usable])
    wsum = w.sum()
    hbar = (w * ell_h).sum() / wsum
    ebar = (w * ell_e).sum() / wsum
    num = (w * (ell_h - hbar) * (ell_e - ebar)).sum()
    den = (w * (ell_h - hbar) ** 2).sum()
    return float(num / den)
