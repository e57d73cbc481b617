"""Deterministic, counter-addressed random streams for trajectory ensembles.

Every random quantity consumed by an integrator step is derived from a
:class:`StreamKey` ``(master_seed, trajectory_index, step_index)``.  Keys are
hashed into a 64-bit base state with a splitmix64-style mixer, and the i-th
output of a key's stream is ``mix(base + (i+1)*GOLDEN)``.  There is no
sequential generator state: draws are addressable, so trajectories can run in
any order (or in parallel) and a step can peek at its successor's Gaussians
without buffering.

The layout of one step's draw bundle is fixed:

    indices 0 .. 2*ceil(d/2)-1   uniforms feeding Box-Muller pairs -> R
    next d indices               sign bits -> chi (Rademacher vector)
    next 2 indices               sign bits -> chi_hat1, chi_hat2

``gaussian_vector(key, d)`` therefore returns exactly ``draw(key, d).R``.

The numerical kernels in :mod:`browndyn._kernels` re-implement the same
integer arithmetic under numba; a test pins the two paths bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
# Distinct odd constants decorrelating the trajectory and step dimensions of
# the key space.
_TRAJ_SALT = 0xD1B54A32D192ED03
_STEP_SALT = 0x8CB92BA72F3D8DD7

_INV_2_53 = 2.0 ** -53
_TWO_PI = 2.0 * math.pi


def _mix(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class StreamKey:
    """Address of one step's draw bundle within one trajectory."""

    master_seed: int
    trajectory_index: int
    step_index: int

    def base_state(self) -> int:
        s = _mix((self.master_seed + _GOLDEN) & _MASK64)
        s = _mix(s ^ ((self.trajectory_index + 1) * _TRAJ_SALT & _MASK64))
        s = _mix(s ^ ((self.step_index + 1) * _STEP_SALT & _MASK64))
        return s


def _u64_at(base: int, i: int) -> int:
    return _mix((base + (i + 1) * _GOLDEN) & _MASK64)


def _uniform_at(base: int, i: int) -> float:
    # (0, 1]: the +1 keeps log() in Box-Muller away from 0.
    return ((_u64_at(base, i) >> 11) + 1) * _INV_2_53


def _sign_at(base: int, i: int) -> float:
    return 1.0 if (_u64_at(base, i) >> 63) else -1.0


def _normals(base: int, d: int) -> np.ndarray:
    out = np.empty(d)
    for j in range((d + 1) // 2):
        u1 = _uniform_at(base, 2 * j)
        u2 = _uniform_at(base, 2 * j + 1)
        r = math.sqrt(-2.0 * math.log(u1))
        out[2 * j] = r * math.cos(_TWO_PI * u2)
        if 2 * j + 1 < d:
            out[2 * j + 1] = r * math.sin(_TWO_PI * u2)
    return out


@dataclass(frozen=True)
class NoiseDraws:
    """One step's random inputs.

    ``J`` and ``J_hat`` are the derivative-free Milstein tables built from the
    Gaussian vector and the Rademacher variables; they approximate the iterated
    stochastic integrals without evaluating derivatives of the noise field.
    """

    R: np.ndarray
    chi: np.ndarray
    chi_hat1: float
    chi_hat2: float
    J: np.ndarray
    J_hat: np.ndarray


def j_table(R: np.ndarray, chi: np.ndarray) -> np.ndarray:
    """J_{a,a} = (R_a^2-1)/2; J_{a,b} = (R_a R_b - chi_a)/2 for a > b,
    (R_a R_b + chi_b)/2 for a < b."""
    d = R.shape[0]
    J = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            if a == b:
                J[a, b] = (R[a] * R[a] - 1.0) / 2.0
            elif a > b:
                J[a, b] = (R[a] * R[b] - chi[a]) / 2.0
            else:
                J[a, b] = (R[a] * R[b] + chi[b]) / 2.0
    return J


def j_hat_table(R: np.ndarray, chi_hat1: float, chi_hat2: float) -> np.ndarray:
    """J^_{a,a} = chi^_1 (R_a^2-1)/2; J^_{a,b} = R_b (1+chi^_2)/2 for a > b,
    R_b (1-chi^_2)/2 for a < b."""
    d = R.shape[0]
    J = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            if a == b:
                J[a, b] = chi_hat1 * (R[a] * R[a] - 1.0) / 2.0
            elif a > b:
                J[a, b] = R[b] * (1.0 + chi_hat2) / 2.0
            else:
                J[a, b] = R[b] * (1.0 - chi_hat2) / 2.0
    return J


def gaussian_vector(key: StreamKey, d: int) -> np.ndarray:
    """d i.i.d. standard normals; identical to ``draw(key, d).R``."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return _normals(key.base_state(), d)


def draw(key: StreamKey, d: int) -> NoiseDraws:
    """The full draw bundle for one integrator step."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    base = key.base_state()
    R = _normals(base, d)
    c0 = 2 * ((d + 1) // 2)
    chi = np.empty(d)
    for a in range(d):
        chi[a] = _sign_at(base, c0 + a)
    chi_hat1 = _sign_at(base, c0 + d)
    chi_hat2 = _sign_at(base, c0 + d + 1)
    return NoiseDraws(
        R=R,
        chi=chi,
        chi_hat1=chi_hat1,
        chi_hat2=chi_hat2,
        J=j_table(R, chi),
        J_hat=j_hat_table(R, chi_hat1, chi_hat2),
    )
