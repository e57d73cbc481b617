"""One-step maps for the time integrators, and the sampling post-processor.

Implemented methods (config-string names in brackets):

* Euler-Maruyama [em]
* Leimkuhler-Matthews with divergence correction, a = 1/4 [lmd]
* Leimkuhler-Matthews on a time-rescaled SDE, 1D isotropic only [lmt]
* Strang splitting of RK4 halves around a weak-order-2 noise step
  [rk4_w2ito1, rk4_mt2]
* Post-processed second-order sampler with a lagged force
  [pvd2_w2ito1, pvd2_mt2] and its Markovian form
  [pvd2_markov_w2ito1, pvd2_markov_mt2]
* Stability-oriented modifications moving the force-corrected points inside
  the noise map [pvd2_mod1_*, pvd2_mod2_*]

The pvd2 family advances

    X_{n+1} = X_n + h F(Xbar_n) + noise_increment(X_n + (h/4) F(Xbar_{n-1})),
    Xbar_n  = X_n + (1/2) sqrt(h) sigma Sigma(X_n) R_n,   Xbar_{-1} = X_0,

so each step needs exactly one fresh force evaluation, with F(Xbar_{n-1})
carried in ``MethodState.lagged_force``.  Observables of these methods are
evaluated on the post-processed points Xbar_n (see :func:`postprocess`),
which is where the second-order sampling accuracy lives; X_n itself is only
first-order accurate.

These are the readable reference implementations; the benchmark harness runs
numerically identical compiled loops from :mod:`browndyn._kernels`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import (
    EvalCounters,
    ProblemSpec,
    UsageError,
    _as_vector,
    drift,
    grad_potential,
)
from .noise import NoiseMethodKind, noise_increment
from .rng import NoiseDraws, StreamKey, draw


@dataclass
class MethodState:
    """Integrator-private carry for one trajectory.

    ``lagged_force`` caches F(Xbar_{n-1}) so the pvd2 family spends one force
    evaluation per step; ``pending_postprocess_draw`` records the Gaussian
    vector R_n shared between the step and the post-processor; ``weight`` is
    the reweighting factor of the sample the producing step consumed (the
    state after step n carries 1/g(X_n)^2 for the time-rescaled method, 1
    for every other method).
    """

    x: np.ndarray
    lagged_force: np.ndarray | None = None
    pending_postprocess_draw: np.ndarray | None = None
    weight: float = 1.0
    counters: EvalCounters = field(default_factory=EvalCounters)


_FAMILIES = ("em", "lmd", "lmt", "rk4", "pvd2", "pvd2_markov", "pvd2_mod1", "pvd2_mod2")


@dataclass(frozen=True)
class MethodKind:
    family: str
    noise: NoiseMethodKind | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise UsageError(f"unknown method family {self.family!r}")
        needs_noise = self.family.startswith(("rk4", "pvd2"))
        if needs_noise and self.noise is None:
            raise UsageError(f"method {self.family!r} needs a noise integrator kind")

    @property
    def uses_postprocessor(self) -> bool:
        return self.family.startswith("pvd2")

    @property
    def needs_warmup(self) -> bool:
        """Whether init_state spends one force evaluation on F(X_0)."""
        return self.family in ("pvd2", "pvd2_mod1", "pvd2_mod2")

    @property
    def f_evals_per_step(self) -> int:
        return {"em": 1, "lmd": 1, "lmt": 1, "rk4": 8, "pvd2": 1,
                "pvd2_markov": 2, "pvd2_mod1": 1, "pvd2_mod2": 1}[self.family]

    @property
    def sigma_evals_per_step(self) -> int:
        if self.noise is None:
            return 1
        return self.noise.sigma_rounds

    @property
    def name(self) -> str:
        if self.noise is None:
            return self.family
        return f"{self.family}_{self.noise.kind}"


def method_from_string(name: str) -> MethodKind:
    """Parse config strings like "em", "pvd2_mt2", "pvd2_mod1_w2ito1"."""
    if name in ("em", "lmd", "lmt"):
        return MethodKind(family=name)
    for fam, variant in (
        ("rk4", "base"),
        ("pvd2_markov", "base"),
        ("pvd2_mod1", "mod1"),
        ("pvd2_mod2", "mod2"),
        ("pvd2", "base"),
    ):
        prefix = fam + "_"
        if name.startswith(prefix):
            kind = name[len(prefix):]
            if kind in ("mt2", "w2ito1"):
                return MethodKind(family=fam, noise=NoiseMethodKind(kind, variant))
            break
    raise UsageError(
        f"unknown method {name!r}; expected em, lmd, lmt, rk4_<noise>, "
        "pvd2_<noise>, pvd2_markov_<noise>, pvd2_mod1_<noise> or "
        "pvd2_mod2_<noise> with <noise> one of mt2, w2ito1"
    )


def init_state(problem: ProblemSpec, method: MethodKind, x0,
               counters: EvalCounters | None = None) -> MethodState:
    """Fresh trajectory state at X_0, warming up the lagged force if needed."""
    xv = _as_vector(problem, x0)
    counters = counters if counters is not None else EvalCounters()
    state = MethodState(x=xv, counters=counters)
    if method.needs_warmup:
        # Xbar_{-1} = X_0, so the cache starts as F(X_0).
        state.lagged_force = drift(problem, xv, counters).f
    return state


def default_x0(problem: ProblemSpec) -> np.ndarray:
    """Start inside the support: on the ring / in a well where relevant."""
    from .model import QuadrupleWell, Ring

    x0 = np.zeros(problem.dimension)
    if isinstance(problem.potential, Ring):
        x0[0] = 1.0
    elif isinstance(problem.potential, QuadrupleWell):
        x0[:] = 1.0
    return x0


# ---------------------------------------------------------------------------
# Step maps
# ---------------------------------------------------------------------------


def _check_h(h: float) -> None:
    if h <= 0:
        raise UsageError(f"stepsize must be positive, got {h}")


def em_step(problem: ProblemSpec, state: MethodState, h: float,
            draws: NoiseDraws) -> MethodState:
    """X_{n+1} = X_n + h F(X_n) + sqrt(h) sigma Sigma(X_n) R_n."""
    _check_h(h)
    c = state.counters
    f = drift(problem, state.x, c).f
    s = problem.diffusion.sigma(problem, state.x)
    c.n_sigma += 1
    x_new = state.x + h * f + math.sqrt(h) * problem.sigma * (s @ draws.R)
    return MethodState(x=x_new, counters=c)


def lmd_step(problem: ProblemSpec, state: MethodState, h: float,
             draws_prev: NoiseDraws, draws_next: NoiseDraws) -> MethodState:
    """Leimkuhler-Matthews with the a = 1/4 divergence correction.

    X_{n+1} = X_n + h F(X_n) + (h/4)(sigma^2/2) div D(X_n)
              + sqrt(h) sigma Sigma(X_n) (R_n + R_{n+1})/2.

    Only consistent for d = 1; in higher dimension it is kept as a
    deliberately biased baseline and a warning is emitted.
    """
    _check_h(h)
    if problem.dimension > 1:
        warnings.warn(
            "lmd is not consistent for position-dependent diffusion in "
            "dimension > 1; results carry an O(1)-in-h bias",
            RuntimeWarning,
            stacklevel=2,
        )
    c = state.counters
    f = drift(problem, state.x, c).f
    extra = (h / 4.0) * (0.5 * problem.sigma**2) * problem.diffusion.div_d(problem, state.x)
    s = problem.diffusion.sigma(problem, state.x)
    c.n_sigma += 1
    noise = math.sqrt(h) * problem.sigma * (s @ ((draws_prev.R + draws_next.R) / 2.0))
    return MethodState(x=state.x + h * f + extra + noise, counters=c)


def lmt_step(problem: ProblemSpec, state: MethodState, h: float,
             draws_prev: NoiseDraws, draws_next: NoiseDraws) -> MethodState:
    """Leimkuhler-Matthews after the time change d(tau) = g(X)^2 dt.

    For 1D isotropic Sigma(x) = g(x), the rescaled SDE has additive noise and
    effective potential Vt = V - sigma^2 ln g, so one step is

        X_{n+1} = X_n - h Vt'(X_n) + sqrt(h) sigma (R_n + R_{n+1})/2,

    with the sample at X_n carrying weight 1/g(X_n)^2 when averaging back in
    the original time variable (effective stepsize h' = h <1/g^2>).
    """
    _check_h(h)
    if problem.dimension != 1:
        raise UsageError("lmt requires a one-dimensional isotropic diffusion")
    c = state.counters
    g = float(problem.diffusion.sigma(problem, state.x)[0, 0])
    c.n_sigma += 1
    # g' recovered from div D = 2 g g' without a dedicated derivative API.
    dg = float(problem.diffusion.div_d(problem, state.x)[0]) / (2.0 * g)
    veff_grad = float(grad_potential(problem, state.x)[0]) - problem.sigma**2 * dg / g
    c.n_force += 1
    x_new = state.x - h * veff_grad + (
        math.sqrt(h) * problem.sigma * (draws_prev.R + draws_next.R) / 2.0
    )
    return MethodState(x=x_new, weight=1.0 / g**2, counters=c)


def _rk4_half(problem: ProblemSpec, x: np.ndarray, s: float,
              c: EvalCounters) -> np.ndarray:
    k1 = drift(problem, x, c).f
    k2 = drift(problem, x + 0.5 * s * k1, c).f
    k3 = drift(problem, x + 0.5 * s * k2, c).f
    k4 = drift(problem, x + s * k3, c).f
    return x + (s / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_strang_step(problem: ProblemSpec, state: MethodState, h: float,
                    draws: NoiseDraws, noise_kind: NoiseMethodKind | None = None
                    ) -> MethodState:
    """Strang split: half RK4 on dx/dt = F, full noise step, half RK4."""
    _check_h(h)
    kind = noise_kind if noise_kind is not None else NoiseMethodKind("w2ito1", "base")
    c = state.counters
    y = _rk4_half(problem, state.x, h / 2.0, c)
    y = y + noise_increment(kind, problem, y, [], h, draws, c)
    y = _rk4_half(problem, y, h / 2.0, c)
    return MethodState(x=y, counters=c)


def _pvd2_xbar(problem: ProblemSpec, x: np.ndarray, h: float,
               R: np.ndarray) -> np.ndarray:
    s = problem.diffusion.sigma(problem, x)
    return x + 0.5 * math.sqrt(h) * problem.sigma * (s @ R)


def pvd2_step(problem: ProblemSpec, state: MethodState, h: float,
              draws: NoiseDraws, noise_kind: NoiseMethodKind | None = None
              ) -> MethodState:
    """One step of the post-processed second-order method (lagged force)."""
    _check_h(h)
    kind = noise_kind if noise_kind is not None else NoiseMethodKind("w2ito1", "base")
    c = state.counters
    xbar = _pvd2_xbar(problem, state.x, h, draws.R)
    f_xbar = drift(problem, xbar, c).f
    z = state.x + (h / 4.0) * state.lagged_force
    incr = noise_increment(kind, problem, z, [], h, draws, c)
    x_new = state.x + h * f_xbar + incr
    return MethodState(x=x_new, lagged_force=f_xbar,
                       pending_postprocess_draw=draws.R, counters=c)


def pvd2_markov_step(problem: ProblemSpec, state: MethodState, h: float,
                     draws: NoiseDraws, noise_kind: NoiseMethodKind | None = None
                     ) -> MethodState:
    """Markovian variant: the auxiliary point uses F(X_n) instead of the
    lagged force, costing a second force evaluation per step."""
    _check_h(h)
    kind = noise_kind if noise_kind is not None else NoiseMethodKind("w2ito1", "base")
    c = state.counters
    f_x = drift(problem, state.x, c).f
    xbar = _pvd2_xbar(problem, state.x, h, draws.R)
    f_xbar = drift(problem, xbar, c).f
    z = state.x + (h / 4.0) * f_x
    incr = noise_increment(kind, problem, z, [], h, draws, c)
    x_new = state.x + h * f_xbar + incr
    return MethodState(x=x_new, pending_postprocess_draw=draws.R, counters=c)


def pvd2_mod_step(problem: ProblemSpec, state: MethodState, h: float,
                  draws: NoiseDraws, which: int,
                  noise_kind_name: str = "w2ito1") -> MethodState:
    """Stability modifications 1 and 2 of the pvd2 step.

    The force-corrected points enter the noise integrator as auxiliary
    arguments instead of shifting its single base point:
    x1 = X_n + (h/4) F(Xbar_{n-1}), and for ``which=2`` additionally
    x2 = X_n + (h/2) F(Xbar_n) as the noise-scale point.
    """
    _check_h(h)
    if which not in (1, 2):
        raise UsageError(f"modification must be 1 or 2, got {which}")
    c = state.counters
    xbar = _pvd2_xbar(problem, state.x, h, draws.R)
    f_xbar = drift(problem, xbar, c).f
    x1 = state.x + (h / 4.0) * state.lagged_force
    if which == 1:
        kind = NoiseMethodKind(noise_kind_name, "mod1")
        incr = noise_increment(kind, problem, state.x, [x1], h, draws, c)
    else:
        kind = NoiseMethodKind(noise_kind_name, "mod2")
        x2 = state.x + (h / 2.0) * f_xbar
        incr = noise_increment(kind, problem, state.x, [x1, x2], h, draws, c)
    x_new = state.x + h * f_xbar + incr
    return MethodState(x=x_new, lagged_force=f_xbar,
                       pending_postprocess_draw=draws.R, counters=c)


def postprocess(problem: ProblemSpec, state: MethodState, draws: NoiseDraws,
                h: float) -> np.ndarray:
    """Xbar_n = X_n + (1/2) sqrt(h) sigma Sigma(X_n) R_n.

    ``draws`` must carry the same R_n the step at index n consumes; sampling
    observables anywhere else forfeits the second-order accuracy.
    """
    if h < 0:
        raise UsageError(f"stepsize must be nonnegative, got {h}")
    if h == 0:
        return state.x.copy()
    return _pvd2_xbar(problem, state.x, h, draws.R)


# ---------------------------------------------------------------------------
# Reference trajectory driver (compiled loops live in _kernels)
# ---------------------------------------------------------------------------


def advance(problem: ProblemSpec, method: MethodKind, state: MethodState,
            h: float, seed: int, trajectory_index: int, step_index: int
            ) -> MethodState:
    """Advance one step, pulling this step's draws from the keyed stream."""
    d = problem.dimension
    draws = draw(StreamKey(seed, trajectory_index, step_index), d)
    if method.family == "em":
        return em_step(problem, state, h, draws)
    nxt = None
    if method.family in ("lmd", "lmt"):
        nxt = draw(StreamKey(seed, trajectory_index, step_index + 1), d)
        if method.family == "lmd":
            return lmd_step(problem, state, h, draws, nxt)
        return lmt_step(problem, state, h, draws, nxt)
    if method.family == "rk4":
        return rk4_strang_step(problem, state, h, draws, method.noise)
    if method.family == "pvd2":
        return pvd2_step(problem, state, h, draws, method.noise)
    if method.family == "pvd2_markov":
        return pvd2_markov_step(problem, state, h, draws, method.noise)
    which = 1 if method.family == "pvd2_mod1" else 2
    return pvd2_mod_step(problem, state, h, draws, which, method.noise.kind)


def simulate(problem: ProblemSpec, method: MethodKind, h: float, n_steps: int,
             x0, seed: int, trajectory_index: int = 0,
             observer=None) -> MethodState:
    """Run one trajectory; ``observer(n, x_n, sample_n, weight_n)`` sees each
    visited state, with ``sample_n`` the post-processed point for pvd2
    methods and ``weight_n`` the reweighting factor of that sample (1 except
    for lmt, whose step computes 1/g(X_n)^2 while it holds g(X_n))."""
    state = init_state(problem, method, x0)
    for n in range(n_steps):
        if observer is None:
            state = advance(problem, method, state, h, seed, trajectory_index, n)
            continue
        x_n = state.x
        if method.uses_postprocessor:
            draws = draw(StreamKey(seed, trajectory_index, n), problem.dimension)
            sample = postprocess(problem, state, draws, h)
        else:
            sample = x_n
        state = advance(problem, method, state, h, seed, trajectory_index, n)
        observer(n, x_n, sample, state.weight)
    return state
