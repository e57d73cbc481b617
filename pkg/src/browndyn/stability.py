"""Mean-square stability on the scalar test problem dX = lambda X dt + mu X dW.

With p = lambda h and q = mu sqrt(h), one step of a post-processed method is
linear in the state pair (X_n, Xbar_{n-1}):

    X_{n+1} = R11 X_n + R12 Xbar_{n-1},      Xbar_n = R21 X_n,

with coefficients random through the step's draws.  The second moments
(E[X^2], E[Xbar^2], E[X Xbar]) then propagate by a deterministic 3x3 matrix
whose spectral radius decides mean-square stability.  The entries are
obtained mechanically: the actual step map is applied to the basis states
(1, 0) and (0, 1), consuming the same draws a real step would, so the mod1
and mod2 maps need no hand-derived closed form.

All entry arithmetic broadcasts over numpy arrays, which is what makes the
400x400 region scans cheap.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .integrators import MethodKind, method_from_string
from .model import UsageError

__all__ = [
    "stability_entries",
    "moment_matrix",
    "moment_matrix_grid",
    "spectral_radius",
    "spectral_radius_grid",
    "exact_region",
    "scan_region",
    "RegionScan",
    "empirical_second_moment",
]

_LINEARIZABLE = {"pvd2", "pvd2_markov", "pvd2_mod1", "pvd2_mod2"}


def _as_method(method) -> MethodKind:
    if isinstance(method, str):
        method = method_from_string(method)
    if method.family not in _LINEARIZABLE:
        raise UsageError(
            f"{method.family} has no linear post-processed stability map")
    return method


def _noise_map(kind: str, q, R, chi, chi_hat1, body, center, scale):
    """Noise increment on the test problem, linear in the evaluation points.

    ``body``/``center``/``scale`` are linear functionals of the state (any
    numpy-broadcastable values); sigma Sigma(y) = q y makes every evaluation
    a plain product.  chi and chi_hat1 are the step's Rademacher draws; by
    linearity they cancel identically in 1D, which the property tests assert
    rather than assume.
    """
    if kind == "mt2":
        # Milstein block: (1/2)[qS(body + shift) - qS(body - shift)],
        # shift = q * scale * J with J = (R^2 - 1)/2.
        milstein = q * q * scale * (R * R - 1.0) / 2.0
        # chi line: (1/2)[qS(center + s) + qS(center - s)] R; s carries chi
        # but the symmetric sum cancels it for linear fields.
        s = (1.0 / math.sqrt(2.0)) * q * scale * chi
        line = 0.5 * q * ((center + s) + (center - s)) * R
        return line + milstein
    # w2ito1: K1 = center + (q/2) scale chi1; K2 = body - (q/2) scale chi1.
    k1 = center + 0.5 * q * scale * chi_hat1
    k2 = body - 0.5 * q * scale * chi_hat1
    j_hat = chi_hat1 * (R * R - 1.0) / 2.0
    return (q * (-body + k1 + k2) * R + 2.0 * q * (body - k2) * j_hat)


def _step_map(method: MethodKind, p, q, R, chi, chi_hat1, x, xbar_prev):
    """(X_{n+1}, Xbar_n) for state (X_n, Xbar_{n-1}) on the test problem."""
    xbar = x * (1.0 + 0.5 * q * R)
    lagged = p * xbar_prev  # h F(Xbar_{n-1}) with F(y) = lambda y
    kind = method.noise.kind
    fam = method.family
    if fam == "pvd2":
        z = x + 0.25 * lagged
        incr = _noise_map(kind, q, R, chi, chi_hat1, z, z, z)
    elif fam == "pvd2_markov":
        z = x * (1.0 + 0.25 * p)  # X + (h/4) F(X)
        incr = _noise_map(kind, q, R, chi, chi_hat1, z, z, z)
    elif fam == "pvd2_mod1":
        center = x + 0.25 * lagged
        incr = _noise_map(kind, q, R, chi, chi_hat1, x, center, x)
    else:  # pvd2_mod2
        center = x + 0.25 * lagged
        scale = x + 0.5 * p * xbar
        incr = _noise_map(kind, q, R, chi, chi_hat1, x, center, scale)
    x_next = x + p * xbar + incr
    return x_next, xbar


def stability_entries(method, p, q, R, extra_draws=(1.0, 1.0)):
    """(R11, R12, R21) of the linear one-step map at draws (R, extra).

    ``extra_draws`` = (chi, chi_hat1), the Rademacher variables a real step
    consumes; entries for the implemented methods do not depend on them.
    Broadcasts over array-valued (p, q, R).
    """
    method = _as_method(method)
    chi, chi_hat1 = extra_draws
    r11, r21 = _step_map(method, p, q, R, chi, chi_hat1, 1.0, 0.0)
    r12, _ = _step_map(method, p, q, R, chi, chi_hat1, 0.0, 1.0)
    return r11, r12, r21


def _gh_nodes(n_nodes: int):
    """Gauss-Hermite rule rescaled for a standard normal weight."""
    knots, weights = hermgauss(n_nodes)
    return knots * math.sqrt(2.0), weights / math.sqrt(math.pi)


def moment_matrix_grid(method, p, q, n_nodes: int = 10) -> np.ndarray:
    """Second-moment propagation matrices, broadcast over (p, q) arrays.

    Expectations take Gauss-Hermite quadrature in the Gaussian draw (exact
    here: entries are polynomial in R) and exact 2-point averages over each
    Rademacher draw.  Returns an array of shape broadcast(p, q).shape+(3, 3)
    acting on (E[X^2], E[Xbar^2], E[X Xbar]).
    """
    method = _as_method(method)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    shape = np.broadcast_shapes(p.shape, q.shape)
    knots, weights = _gh_nodes(n_nodes)
    e_11_11 = np.zeros(shape)
    e_12_12 = np.zeros(shape)
    e_11_12 = np.zeros(shape)
    e_21_21 = np.zeros(shape)
    e_21_11 = np.zeros(shape)
    e_21_12 = np.zeros(shape)
    for r_val, w in zip(knots, weights):
        for chi in (-1.0, 1.0):
            for ch1 in (-1.0, 1.0):
                coef = 0.25 * w
                r11, r12, r21 = stability_entries(method, p, q, r_val,
                                                  (chi, ch1))
                r11 = np.broadcast_to(r11, shape)
                r12 = np.broadcast_to(r12, shape)
                r21 = np.broadcast_to(r21, shape)
                e_11_11 += coef * r11 * r11
                e_12_12 += coef * r12 * r12
                e_11_12 += coef * r11 * r12
                e_21_21 += coef * r21 * r21
                e_21_11 += coef * r21 * r11
                e_21_12 += coef * r21 * r12
    m = np.zeros(shape + (3, 3))
    m[..., 0, 0] = e_11_11
    m[..., 0, 1] = e_12_12
    m[..., 0, 2] = 2.0 * e_11_12
    m[..., 1, 0] = e_21_21
    m[..., 2, 0] = e_21_11
    m[..., 2, 2] = e_21_12
    return m


def moment_matrix(method, p: float, q: float, n_nodes: int = 10) -> np.ndarray:
    """3x3 propagation matrix of (E[X^2], E[Xbar^2], E[X Xbar])."""
    return moment_matrix_grid(method, float(p), float(q), n_nodes)


_RESIDUAL_TOL = 1e-9


def spectral_radius_grid(m: np.ndarray) -> np.ndarray:
    """Largest eigenvalue modulus per matrix, batched over leading axes.

    Direct QR eigenvalues rather than roots of the characteristic cubic: the
    cubic's companion matrix loses ~eps^(1/3) accuracy at repeated roots
    (the identity matrix would come out 1 + 7e-6), while QR keeps these
    cases exact.  A scale-normalized residual |det(m - r I)| still guards
    the solve.
    """
    m = np.asarray(m, dtype=float)
    roots = np.linalg.eigvals(m)
    rho = np.abs(roots).max(axis=-1)
    idx = np.abs(roots).argmax(axis=-1)
    r = np.take_along_axis(roots, idx[..., None], axis=-1)[..., 0]
    eye = np.eye(3)
    shifted = m.astype(complex) - r[..., None, None] * eye
    resid = np.abs(np.linalg.det(shifted))
    scale = np.maximum(1.0, np.abs(m).sum(axis=-1).max(axis=-1)) ** 3
    if np.any(resid / scale > _RESIDUAL_TOL):
        raise ArithmeticError("eigenvalue residual too large")
    return rho


def spectral_radius(m: np.ndarray) -> float:
    """Largest eigenvalue modulus of one moment matrix."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise UsageError(f"expected a 3x3 moment matrix, got shape {m.shape}")
    return float(spectral_radius_grid(m))


def exact_region(p, q2):
    """Exact mean-square stability of the test SDE: p + q^2/2 < 0 (real case)."""
    return np.asarray(p) + np.asarray(q2) / 2.0 < 0.0


class RegionScan:
    """Stability scan over a (p, q^2) grid, row-major in (p, q2)."""

    def __init__(self, method: str, p_grid, q2_grid, rho, stable,
                 exact_stable):
        self.method = method
        self.p_grid = p_grid
        self.q2_grid = q2_grid
        self.rho = rho
        self.stable = stable
        self.exact_stable = exact_stable

    def rows(self):
        """Yield (p, q2, rho, stable, exact_stable) in deterministic order."""
        for i, p in enumerate(self.p_grid):
            for j, q2 in enumerate(self.q2_grid):
                yield (p, q2, self.rho[i, j], bool(self.stable[i, j]),
                       bool(self.exact_stable[i, j]))


def scan_region(method, p_grid=None, q2_grid=None, n_nodes: int = 10
                ) -> RegionScan:
    """Mark mean-square stability (spectral radius < 1) over the plane.

    Defaults reproduce the published domain: p in [-4, 0], q^2 in [0, 4],
    400 points per axis.
    """
    method = _as_method(method)
    if p_grid is None:
        p_grid = np.linspace(-4.0, 0.0, 400)
    if q2_grid is None:
        q2_grid = np.linspace(0.0, 4.0, 400)
    p_grid = np.asarray(p_grid, dtype=float)
    q2_grid = np.asarray(q2_grid, dtype=float)
    if np.any(q2_grid < 0):
        raise UsageError("q^2 grid must be nonnegative")
    pp = p_grid[:, None]
    qq = np.sqrt(q2_grid)[None, :]
    m = moment_matrix_grid(method, pp, qq, n_nodes)
    rho = spectral_radius_grid(m)
    stable = rho < 1.0
    exact = exact_region(pp, q2_grid[None, :])
    exact = np.broadcast_to(exact, stable.shape)
    name = f"{method.family}_{method.noise.kind}"
    return RegionScan(name, p_grid, q2_grid, rho, stable, exact)


def empirical_second_moment(method, p: float, q2: float, n_traj: int,
                            n_steps: int, seed: int) -> np.ndarray:
    """Monte Carlo E[X_n^2] along the test recursion, for spot validation.

    Runs the same linear step map the analysis uses, over fresh Gaussian and
    Rademacher draws, starting from X_0 = 1, Xbar_{-1} = 0.  Returns the
    trajectory of E[X^2] including the initial value.
    """
    method = _as_method(method)
    if q2 < 0:
        raise UsageError(f"q^2 must be nonnegative, got {q2}")
    q = math.sqrt(q2)
    gen = np.random.default_rng(seed)
    x = np.ones(n_traj)
    xbar_prev = np.zeros(n_traj)
    out = np.empty(n_steps + 1)
    out[0] = 1.0
    for n in range(n_steps):
        r = gen.standard_normal(n_traj)
        chi = gen.integers(0, 2, n_traj) * 2.0 - 1.0
        ch1 = gen.integers(0, 2, n_traj) * 2.0 - 1.0
        x, xbar_prev = _step_map(method, p, q, r, chi, ch1, x, xbar_prev)
        out[n + 1] = float(np.mean(x * x))
    return out
