"""Potentials, diffusion fields, and drift assembly.

The dynamics being sampled is

    dX = F(X) dt + sigma * Sigma(X) dW,
    F  = -D grad(V) + (sigma^2/2) div(D),     D = Sigma^2,

with ``Sigma(x)`` symmetric positive definite, so the stationary density is
proportional to ``exp(-(2/sigma^2) V(x))`` independently of the diffusion
field.  ``div(D)`` is columnwise: ``div(D)_j = sum_i dD_ij/dx_i``.

Potential and diffusion variants are small classes exposing analytic values
and derivatives; :func:`drift` assembles F.  Derivatives are analytic per
variant -- finite differences exist only as test oracles, never here.

Evaluation counting: :func:`drift` tallies one force evaluation when handed an
:class:`EvalCounters`.  Sigma evaluations are tallied by the *integrators*
(one per step for methods using Sigma(X_n) noise, one per internal evaluation
round for the weak-order-2 noise integrators), so that trajectory counters
report the per-step budget of each method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class UsageError(ValueError):
    """Raised for caller mistakes: bad dimensions, bad arity, bad config."""


@dataclass
class EvalCounters:
    """Running tallies of force (F) and diffusion-tensor (Sigma) evaluations."""

    n_force: int = 0
    n_sigma: int = 0


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Quadratic:
    """V(x) = |x|^2 / 2."""

    def check_dimension(self, d: int) -> None:
        pass

    def value(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return x.copy()


@dataclass(frozen=True)
class Quartic:
    """V(x) = sum_i x_i^4 / 4.  grad(V) is not globally Lipschitz."""

    def check_dimension(self, d: int) -> None:
        pass

    def value(self, x: np.ndarray) -> float:
        return 0.25 * float(np.sum(x**4))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return x**3


@dataclass(frozen=True)
class DoubleWell:
    """V(x) = x^2/2 + sin(1 + 3x), an asymmetric double well on the line."""

    def check_dimension(self, d: int) -> None:
        if d != 1:
            raise UsageError(f"double_well potential is one-dimensional, got d={d}")

    def value(self, x: np.ndarray) -> float:
        return 0.5 * float(x[0]) ** 2 + math.sin(1.0 + 3.0 * float(x[0]))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return np.array([float(x[0]) + 3.0 * math.cos(1.0 + 3.0 * float(x[0]))])


@dataclass(frozen=True)
class QuadrupleWell:
    """V(x1,x2) = sqrt(17/16 - 2 x1^2 + x1^4) + sqrt(17/16 - 2 x2^2 + x2^4).

    Separable, with wells near (+-1, +-1).  The radicand 17/16 - 2t^2 + t^4 =
    (t^2-1)^2 + 1/16 stays positive.
    """

    def check_dimension(self, d: int) -> None:
        if d != 2:
            raise UsageError(f"quadruple_well potential is two-dimensional, got d={d}")

    @staticmethod
    def _w(t: float) -> float:
        return math.sqrt(17.0 / 16.0 - 2.0 * t * t + t**4)

    def value(self, x: np.ndarray) -> float:
        return self._w(float(x[0])) + self._w(float(x[1]))

    def grad(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(2)
        for i in range(2):
            t = float(x[i])
            out[i] = 2.0 * t * (t * t - 1.0) / self._w(t)
        return out


@dataclass(frozen=True)
class Ring:
    """V(x) = (k/2)(1 - |x|)^2, concentrating mass near the unit sphere."""

    k: float = 50.0

    def check_dimension(self, d: int) -> None:
        pass

    def value(self, x: np.ndarray) -> float:
        r = math.sqrt(float(x @ x))
        return 0.5 * self.k * (1.0 - r) ** 2

    def grad(self, x: np.ndarray) -> np.ndarray:
        r = math.sqrt(float(x @ x))
        if r == 0.0:
            # grad V = k(r-1) x/r has a removable singularity with value 0
            # only in the sense of symmetry; V is not differentiable at 0 but
            # the point is never visited by the ring dynamics.  Define 0.
            return np.zeros_like(x)
        return (self.k * (r - 1.0) / r) * x


# ---------------------------------------------------------------------------
# Diffusion fields.  Each exposes Sigma(x), a single column Sigma_a(x), and
# the analytic columnwise divergence of D = Sigma^2.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Identity:
    def check_dimension(self, d: int) -> None:
        pass

    def sigma(self, problem: "ProblemSpec", x: np.ndarray) -> np.ndarray:
        return np.eye(x.shape[0])

    def sigma_col(self, problem: "ProblemSpec", x: np.ndarray, a: int) -> np.ndarray:
        col = np.zeros(x.shape[0])
        col[a] = 1.0
        return col

    def div_d(self, problem: "ProblemSpec", x: np.ndarray) -> np.ndarray:
        return np.zeros(x.shape[0])


@dataclass(frozen=True)
class ConstantDiffusion:
    """Sigma(x) = const symmetric positive-definite matrix."""

    matrix: tuple  # row tuples; kept hashable for the frozen dataclass

    def __post_init__(self):
        m = self.as_array()
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise UsageError("constant diffusion matrix must be square")
        if not np.array_equal(m, m.T):
            raise UsageError("constant diffusion matrix must be symmetric")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)

    def check_dimension(self, d: int) -> None:
        if self.as_array().shape[0] != d:
            raise UsageError(
                f"constant diffusion is {self.as_array().shape[0]}x"
                f"{self.as_array().shape[0]}, problem dimension is {d}"
            )

    def sigma(self, problem: "ProblemSpec", x: np.ndarray) -> np.ndarray:
        return self.as_array()

    def sigma_col(self, problem: "ProblemSpec", x: np.ndarray, a: int) -> np.ndarray:
        return self.as_array()[:, a].copy()

    def div_d(self, problem: "ProblemSpec", x: np.ndarray) -> np.ndarray:
        return np.zeros(x.shape[0])


class _Scalar1D:
    """Shared plumbing for one-dimensional scalar fields Sigma(x) = g(x)."""

    def check_dimension(self, d: int) -> None:
        if d != 1:
            raise UsageError(f"{type(self).__name__} is one-dimensional, got d={d}")

    def g_and_dg(self, problem: "ProblemSpec", t: float) -> tuple:
        raise NotImplementedError

    def sigma(self, problem: "ProblemSpec", x: np.ndarray) -> np.ndarray:
        g, _ = self.g_and_dg(problem, float(x[0]))
        return np.array([[g]])

    def sigma_col(self, problem: "ProblemSpec", x: np.ndarray, a: int) -> np.ndarray:
        g, _ = self.g_and_dg(problem, float(x[0]))
        return np.array([g])

    def div_d(self, problem: "ProblemSpec", x: np.ndarray) -> np.ndarray:
        g, dg = self.g_and_dg(problem, float(x[0]))
        return np.array([2.0 * g * dg])


@dataclass(frozen=True)
class Cosine1D(_Scalar1D):
    """Sigma(x) = 3/2 + cos(x)/2."""

    def g_and_dg(self, problem, t):
        return 1.5 + 0.5 * math.cos(t), -0.5 * math.sin(t)


@dataclass(frozen=True)
class Sine1D(_Scalar1D):
    """Sigma(x) = 3/2 + sin(x)/2."""

    def g_and_dg(self, problem, t):
        return 1.5 + 0.5 * math.sin(t), 0.5 * math.cos(t)


@dataclass(frozen=True)
class ExpPotential1D(_Scalar1D):
    """Sigma(x) = exp(c V(x)), boosting noise where the potential is high."""

    c: float = 0.25

    def g_and_dg(self, problem, t):
        x = np.array([t])
        g = math.exp(self.c * problem.potential.value(x))
        dg = self.c * float(problem.potential.grad(x)[0]) * g
        return g, dg


@dataclass(frozen=True)
class MoroCardin:
    """Sigma(x) = s(|x|) I with s = (1 + A exp(-|x|^2/(2 eps^2)))^(-1) when
    ``inverted`` (noise suppressed near the origin), or s = 1 + A exp(...)
    otherwise (noise boosted near the origin)."""

    A: float = 5.0
    eps: float = 0.3
    inverted: bool = True

    def check_dimension(self, d: int) -> None:
        pass

    def _s_and_partials(self, x: np.ndarray) -> tuple:
        u = self.A * math.exp(-float(x @ x) / (2.0 * self.eps**2))
        if self.inverted:
            s = 1.0 / (1.0 + u)
            # ds/dx_j = -(1+u)^-2 du/dx_j with du/dx_j = -(x_j/eps^2) u
            ds = (u * s * s / self.eps**2) * x
        else:
            s = 1.0 + u
            ds = (-u / self.eps**2) * x
        return s, ds

    def sigma(self, problem: "ProblemSpec", x: np.ndarray) -> np.ndarray:
        s, _ = self._s_and_partials(x)
        return s * np.eye(x.shape[0])

    def sigma_col(self, problem: "ProblemSpec", x: np.ndarray, a: int) -> np.ndarray:
        s, _ = self._s_and_partials(x)
        col = np.zeros(x.shape[0])
        col[a] = s
        return col

    def div_d(self, problem: "ProblemSpec", x: np.ndarray) -> np.ndarray:
        # D = s^2 I, so div(D)_j = d(s^2)/dx_j = 2 s ds/dx_j.
        s, ds = self._s_and_partials(x)
        return 2.0 * s * ds


class _RankOneRadial:
    """Shared plumbing for Sigma(x) = I - beta(|x|^2) x x^T.

    With t = |x|^2:  D = Sigma^2 = I - gamma(t) x x^T,
    gamma = beta (2 - beta t), and div(D)_j = -(2 t gamma' + (d+1) gamma) x_j.
    """

    def check_dimension(self, d: int) -> None:
        pass

    def _beta_dbeta(self, t: float) -> tuple:
        raise NotImplementedError

    def _gamma_dgamma(self, t: float) -> tuple:
        b, db = self._beta_dbeta(t)
        gamma = b * (2.0 - b * t)
        dgamma = 2.0 * db - 2.0 * b * db * t - b * b
        return gamma, dgamma

    def sigma(self, problem: "ProblemSpec", x: np.ndarray) -> np.ndarray:
        t = float(x @ x)
        b, _ = self._beta_dbeta(t)
        return np.eye(x.shape[0]) - b * np.outer(x, x)

    def sigma_col(self, problem: "ProblemSpec", x: np.ndarray, a: int) -> np.ndarray:
        t = float(x @ x)
        b, _ = self._beta_dbeta(t)
        col = -b * x[a] * x
        col[a] += 1.0
        return col

    def div_d(self, problem: "ProblemSpec", x: np.ndarray) -> np.ndarray:
        t = float(x @ x)
        if t == 0.0:
            return np.zeros(x.shape[0])
        gamma, dgamma = self._gamma_dgamma(t)
        d = x.shape[0]
        return -(2.0 * t * dgamma + (d + 1) * gamma) * x


@dataclass(frozen=True)
class RadialProjection2D(_RankOneRadial):
    """Sigma(x) = I - x x^T / (2|x|^2 + 1); smooth everywhere, including 0."""

    def check_dimension(self, d: int) -> None:
        if d != 2:
            raise UsageError(f"radial_projection2d is two-dimensional, got d={d}")

    def _beta_dbeta(self, t: float) -> tuple:
        b = 1.0 / (2.0 * t + 1.0)
        return b, -2.0 * b * b


@dataclass(frozen=True)
class RingRadial(_RankOneRadial):
    """Sigma(x) = I - x x^T / (2|x|^2), inhibiting radial diffusion.

    Undefined at x = 0; we set Sigma(0) = I and div(D)(0) = 0 (the dynamics
    it is used with keeps essentially no mass there).
    """

    def _beta_dbeta(self, t: float) -> tuple:
        b = 1.0 / (2.0 * t)
        return b, -1.0 / (2.0 * t * t)

    def sigma(self, problem: "ProblemSpec", x: np.ndarray) -> np.ndarray:
        if float(x @ x) == 0.0:
            return np.eye(x.shape[0])
        return super().sigma(problem, x)

    def sigma_col(self, problem: "ProblemSpec", x: np.ndarray, a: int) -> np.ndarray:
        if float(x @ x) == 0.0:
            col = np.zeros(x.shape[0])
            col[a] = 1.0
            return col
        return super().sigma_col(problem, x, a)


# ---------------------------------------------------------------------------
# Problem definition and the model operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """The SDE being sampled: potential + diffusion field + sigma + dimension."""

    dimension: int
    sigma: float
    potential: object
    diffusion: object

    def __post_init__(self):
        if not isinstance(self.dimension, int) or self.dimension < 1:
            raise UsageError(f"dimension must be a positive integer, got {self.dimension}")
        if not self.sigma > 0:
            raise UsageError(f"sigma must be positive, got {self.sigma}")
        self.potential.check_dimension(self.dimension)
        self.diffusion.check_dimension(self.dimension)


@dataclass(frozen=True)
class DiffusionEval:
    """Sigma(x) with per-column access."""

    sigma_mat: np.ndarray

    def col(self, a: int) -> np.ndarray:
        return self.sigma_mat[:, a]


@dataclass(frozen=True)
class DriftEval:
    """F(x) and its two parts; f is exactly part_grad + part_div."""

    f: np.ndarray
    part_grad: np.ndarray
    part_div: np.ndarray


def _as_vector(problem: ProblemSpec, x) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape != (problem.dimension,):
        raise UsageError(
            f"state has shape {arr.shape}, problem dimension is {problem.dimension}"
        )
    if not np.all(np.isfinite(arr)):
        raise UsageError("state must be finite")
    return arr


def potential_value(problem: ProblemSpec, x) -> float:
    """V(x)."""
    return problem.potential.value(_as_vector(problem, x))


def grad_potential(problem: ProblemSpec, x) -> np.ndarray:
    """grad V(x), analytic."""
    return problem.potential.grad(_as_vector(problem, x))


def sigma_eval(problem: ProblemSpec, x) -> DiffusionEval:
    """Sigma(x) as a symmetric d x d matrix."""
    return DiffusionEval(sigma_mat=problem.diffusion.sigma(problem, _as_vector(problem, x)))


def sigma_column(problem: ProblemSpec, x, a: int) -> np.ndarray:
    """Column a of Sigma(x) without forming the full matrix."""
    return problem.diffusion.sigma_col(problem, _as_vector(problem, x), a)


def div_D(problem: ProblemSpec, x) -> np.ndarray:
    """Columnwise divergence of D = Sigma^2, analytic."""
    return problem.diffusion.div_d(problem, _as_vector(problem, x))


def drift(problem: ProblemSpec, x, counters: EvalCounters | None = None) -> DriftEval:
    """F(x) = -D(x) grad V(x) + (sigma^2/2) div D(x), its parts exact.

    Tallies one force evaluation on ``counters``.  The Sigma evaluation used
    to form D is not tallied here: per-step Sigma budgets are owned by the
    integrators (the drift's Sigma shares the step's evaluation round).
    """
    xv = _as_vector(problem, x)
    if counters is not None:
        counters.n_force += 1
    s = problem.diffusion.sigma(problem, xv)
    g = problem.potential.grad(xv)
    part_grad = -(s @ (s @ g))
    part_div = (0.5 * problem.sigma**2) * problem.diffusion.div_d(problem, xv)
    return DriftEval(f=part_grad + part_div, part_grad=part_grad, part_div=part_div)


# ---------------------------------------------------------------------------
# String-keyed construction (harness configuration surface)
# ---------------------------------------------------------------------------

_POTENTIALS = {
    "quadratic": Quadratic,
    "quartic": Quartic,
    "double_well": DoubleWell,
    "quadruple_well": QuadrupleWell,
    "ring": Ring,
}

_DIFFUSIONS = {
    "identity": Identity,
    "constant": ConstantDiffusion,
    "cosine1d": Cosine1D,
    "sine1d": Sine1D,
    "exp_potential1d": ExpPotential1D,
    "moro_cardin": MoroCardin,
    "radial_projection2d": RadialProjection2D,
    "ring_radial": RingRadial,
}


def make_potential(name: str, **params):
    if name not in _POTENTIALS:
        raise UsageError(
            f"unknown potential {name!r}; choose from {sorted(_POTENTIALS)}"
        )
    if name == "ring":
        return Ring(k=float(params.get("k", 50.0)))
    return _POTENTIALS[name]()


def make_diffusion(name: str, **params):
    if name not in _DIFFUSIONS:
        raise UsageError(
            f"unknown diffusion {name!r}; choose from {sorted(_DIFFUSIONS)}"
        )
    if name == "constant":
        if "matrix" not in params:
            raise UsageError("constant diffusion requires a 'matrix' parameter")
        m = np.asarray(params["matrix"], dtype=float)
        return ConstantDiffusion(matrix=tuple(tuple(row) for row in m))
    if name == "exp_potential1d":
        return ExpPotential1D(c=float(params.get("c", 0.25)))
    if name == "moro_cardin":
        return MoroCardin(
            A=float(params.get("A", 5.0)),
            eps=float(params.get("eps", 0.3)),
            inverted=bool(params.get("inverted", True)),
        )
    return _DIFFUSIONS[name]()


def make_problem(
    potential: str,
    diffusion: str,
    d: int = 1,
    sigma: float = 1.0,
    **params,
) -> ProblemSpec:
    """Build a ProblemSpec from the string keys used in harness configs."""
    return ProblemSpec(
        dimension=int(d),
        sigma=float(sigma),
        potential=make_potential(potential, **params),
        diffusion=make_diffusion(diffusion, **params),
    )
