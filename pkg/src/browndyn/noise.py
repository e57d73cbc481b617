"""Weak-order-2 integrators for the drift-free noise SDE dX = sigma Sigma(X) dW.

Two derivative-free Runge-Kutta-type schemes are provided, selected by
:class:`NoiseMethodKind`:

* ``mt2``     five Sigma evaluation rounds per step;
* ``w2ito1``  three Sigma evaluation rounds per step.

Both reduce exactly to ``sqrt(h) sigma Sigma R`` for constant Sigma.

Each also comes in three argument variants controlling which auxiliary points
the internal evaluations are centered on:

* ``base``  everything centered on the single input point x;
* ``mod1``  the sqrt(h)-line (MT2) / K1-stage (W2Ito1) is centered on an
  auxiliary point x1 while noise scales stay at x;
* ``mod2``  additionally, the noise-scale matrix is evaluated at a second
  auxiliary point x2.

The variants let a surrounding drift integrator move its force-corrected
point inside the noise map, which widens the mean-square stability region
without changing the weak order.

An "evaluation round" is one pass computing Sigma (or its d columns, one per
subsystem index a) at one family of points; rounds are what the per-step
Sigma budgets count, since a column costs ~1/d of the full tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import EvalCounters, ProblemSpec, UsageError, _as_vector
from .rng import NoiseDraws

_KINDS = ("mt2", "w2ito1")
_VARIANTS = ("base", "mod1", "mod2")
_ARITY = {"base": 0, "mod1": 1, "mod2": 2}


@dataclass(frozen=True)
class NoiseMethodKind:
    kind: str = "w2ito1"
    variant: str = "base"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise UsageError(f"unknown noise integrator {self.kind!r}; choose from {_KINDS}")
        if self.variant not in _VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}; choose from {_VARIANTS}")

    @property
    def sigma_rounds(self) -> int:
        """Sigma evaluation rounds per step under this kind/variant."""
        if self.kind == "mt2":
            return 5
        # w2ito1: base and mod1 reuse Sigma(x) as the scale matrix; mod2
        # evaluates the scale at a genuinely new point.
        return 4 if self.variant == "mod2" else 3


def _mt2_increment(problem, body, chi_center, scale_pt, h, draws):
    d = problem.dimension
    sig = problem.sigma
    s_scale = problem.diffusion.sigma(problem, scale_pt)  # round 1

    incr = np.zeros(d)
    # Milstein block: difference of column evaluations at J-shifted points.
    for a in range(d):
        shift = h * sig * (s_scale @ draws.J[a])
        incr += 0.5 * sig * (
            problem.diffusion.sigma_col(problem, body + shift, a)
            - problem.diffusion.sigma_col(problem, body - shift, a)
        )  # rounds 2 and 3 (one per sign, spanning the a-loop)

    # sqrt(h) block, centered on chi_center with a chi-shift.
    shift = math.sqrt(h / 2.0) * sig * (s_scale @ draws.chi)
    s_plus = problem.diffusion.sigma(problem, chi_center + shift)  # round 4
    s_minus = problem.diffusion.sigma(problem, chi_center - shift)  # round 5
    incr += (math.sqrt(h) / 2.0) * sig * ((s_plus + s_minus) @ draws.R)
    return incr


def _w2ito1_increment(problem, body, k1_center, scale_pt, h, draws, scale_is_body):
    d = problem.dimension
    sig = problem.sigma
    sqh = math.sqrt(h)
    s_body = problem.diffusion.sigma(problem, body)  # round 1
    if scale_is_body:
        s_scale = s_body
    else:
        s_scale = problem.diffusion.sigma(problem, scale_pt)  # extra round (mod2)

    incr = np.zeros(d)
    for a in range(d):
        k1 = k1_center + (sqh / 2.0) * sig * draws.chi_hat1 * s_scale[:, a]
        for b in range(d):
            if b != a:
                k1 = k1 + sqh * sig * draws.J_hat[a, b] * s_scale[:, b]
        k2 = body - (sqh / 2.0) * sig * draws.chi_hat1 * s_scale[:, a]
        col_k1 = problem.diffusion.sigma_col(problem, k1, a)  # round 2 (a-loop)
        col_k2 = problem.diffusion.sigma_col(problem, k2, a)  # round 3 (a-loop)
        incr += sqh * sig * (-s_body[:, a] + col_k1 + col_k2) * draws.R[a]
        incr += 2.0 * sqh * sig * (s_body[:, a] - col_k2) * draws.J_hat[a, a]
    return incr


def noise_increment(
    kind: NoiseMethodKind,
    problem: ProblemSpec,
    x,
    aux,
    h: float,
    draws: NoiseDraws,
    counters: EvalCounters | None = None,
) -> np.ndarray:
    """One-step increment of the noise integrator: Phi_h(x, aux...) - x.

    ``aux`` carries the variant's auxiliary points: none for ``base``, [x1]
    for ``mod1``, [x1, x2] for ``mod2``.
    """
    if h <= 0:
        raise UsageError(f"stepsize must be positive, got {h}")
    aux = [] if aux is None else list(aux)
    if len(aux) != _ARITY[kind.variant]:
        raise UsageError(
            f"variant {kind.variant!r} takes {_ARITY[kind.variant]} auxiliary "
            f"points, got {len(aux)}"
        )
    xv = _as_vector(problem, x)
    auxv = [_as_vector(problem, a) for a in aux]
    center = auxv[0] if aux else xv  # chi-line / K1-stage center
    scale_pt = auxv[1] if len(auxv) > 1 else xv

    if counters is not None:
        counters.n_sigma += kind.sigma_rounds

    if kind.kind == "mt2":
        return _mt2_increment(problem, xv, center, scale_pt, h, draws)
    return _w2ito1_increment(
        problem, xv, center, scale_pt, h, draws, scale_is_body=(kind.variant != "mod2")
    )
