"""Compiled trajectory loops.

Benchmark runs reach ~10^9 steps, so the production engine is a set of numba
kernels: an integer-code dispatch of the model (potential/diffusion), the
counter-addressed random stream (bit-compatible with :mod:`browndyn.rng`; a
test pins the two paths against each other), the noise integrators, and one
unified per-trajectory runner driving every method in both time-average and
ensemble modes.  The pure-Python step maps in :mod:`browndyn.integrators`
remain the readable reference; cross-validation tests hold the two engines
together.

Everything here is deterministic given (master_seed, trajectory_index,
step_index): trajectories are embarrassingly parallel, results are written to
per-trajectory slots, and reductions happen on the caller's side in fixed
order, so outputs do not depend on the number of threads.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .model import (
    ConstantDiffusion,
    Cosine1D,
    DoubleWell,
    ExpPotential1D,
    Identity,
    MoroCardin,
    ProblemSpec,
    Quadratic,
    QuadrupleWell,
    Quartic,
    RadialProjection2D,
    Ring,
    RingRadial,
    Sine1D,
    UsageError,
)

# --------------------------------------------------------------------------
# Integer codes
# --------------------------------------------------------------------------

POT_QUADRATIC = 0
POT_QUARTIC = 1
POT_DOUBLE_WELL = 2
POT_QUADRUPLE_WELL = 3
POT_RING = 4

DIF_IDENTITY = 0
DIF_CONSTANT = 1
DIF_COSINE1D = 2
DIF_SINE1D = 3
DIF_EXP_POTENTIAL1D = 4
DIF_MORO_CARDIN = 5
DIF_RADIAL_PROJECTION2D = 6
DIF_RING_RADIAL = 7

MET_EM = 0
MET_LMD = 1
MET_LMT = 2
MET_RK4 = 3
MET_PVD2 = 4
MET_MARKOV = 5
MET_MOD1 = 6
MET_MOD2 = 7

NOI_NONE = -1
NOI_MT2 = 0
NOI_W2ITO1 = 1

MODE_TIME_AVERAGE = 0
MODE_ENSEMBLE = 1

STATUS_OK = 0
STATUS_UNSTABLE = 1

_POT_CODES = {
    Quadratic: POT_QUADRATIC,
    Quartic: POT_QUARTIC,
    DoubleWell: POT_DOUBLE_WELL,
    QuadrupleWell: POT_QUADRUPLE_WELL,
    Ring: POT_RING,
}

_DIF_CODES = {
    Identity: DIF_IDENTITY,
    ConstantDiffusion: DIF_CONSTANT,
    Cosine1D: DIF_COSINE1D,
    Sine1D: DIF_SINE1D,
    ExpPotential1D: DIF_EXP_POTENTIAL1D,
    MoroCardin: DIF_MORO_CARDIN,
    RadialProjection2D: DIF_RADIAL_PROJECTION2D,
    RingRadial: DIF_RING_RADIAL,
}

_MET_CODES = {
    "em": MET_EM,
    "lmd": MET_LMD,
    "lmt": MET_LMT,
    "rk4": MET_RK4,
    "pvd2": MET_PVD2,
    "pvd2_markov": MET_MARKOV,
    "pvd2_mod1": MET_MOD1,
    "pvd2_mod2": MET_MOD2,
}


def pack_problem(problem: ProblemSpec):
    """Flatten a ProblemSpec into the kernel argument tuple."""
    pot = problem.potential
    dif = problem.diffusion
    pot_code = _POT_CODES[type(pot)]
    dif_code = _DIF_CODES[type(dif)]
    pp = float(getattr(pot, "k", 0.0))
    dp0 = dp1 = dp2 = 0.0
    if dif_code == DIF_EXP_POTENTIAL1D:
        dp0 = float(dif.c)
    elif dif_code == DIF_MORO_CARDIN:
        dp0, dp1, dp2 = float(dif.A), float(dif.eps), 1.0 if dif.inverted else 0.0
    if dif_code == DIF_CONSTANT:
        smat = np.ascontiguousarray(dif.as_array())
    else:
        smat = np.zeros((problem.dimension, problem.dimension))
    return (pot_code, pp, dif_code, dp0, dp1, dp2, smat,
            float(problem.sigma), problem.dimension)


def pack_method(method):
    """Flatten a MethodKind into (method_code, noise_code)."""
    met = _MET_CODES[method.family]
    if method.noise is None:
        noi = NOI_NONE
    else:
        noi = NOI_MT2 if method.noise.kind == "mt2" else NOI_W2ITO1
    return met, noi


# --------------------------------------------------------------------------
# Random stream (bit-compatible with browndyn.rng)
# --------------------------------------------------------------------------

_U = np.uint64
_GOLDEN = _U(0x9E3779B97F4A7C15)
_MIX1 = _U(0xBF58476D1CE4E5B9)
_MIX2 = _U(0x94D049BB133111EB)
_TRAJ_SALT = _U(0xD1B54A32D192ED03)
_STEP_SALT = _U(0x8CB92BA72F3D8DD7)
_S30 = _U(30)
_S27 = _U(27)
_S31 = _U(31)
_S11 = _U(11)
_S63 = _U(63)
_ONE = _U(1)
_INV_2_53 = 2.0**-53
_TWO_PI = 2.0 * math.pi


# Signatures are pinned on the integer layer: numba unboxes a uint64 return
# as a Python int, and a lazily-typed redispatch on (int64, uint64) would
# silently promote the arithmetic instead of wrapping it.
@njit("uint64(uint64)", cache=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit("uint64(uint64, uint64, uint64)", cache=True)
def _base_state(seed, traj, step):
    s = _mix(seed + _GOLDEN)
    s = _mix(s ^ ((traj + _ONE) * _TRAJ_SALT))
    s = _mix(s ^ ((step + _ONE) * _STEP_SALT))
    return s


@njit("uint64(uint64, uint64)", cache=True)
def _u64_at(base, i):
    return _mix(base + (i + _ONE) * _GOLDEN)


@njit("float64(uint64, uint64)", cache=True)
def _uniform_at(base, i):
    return float((_u64_at(base, i) >> _S11) + _ONE) * _INV_2_53


@njit("float64(uint64, uint64)", cache=True)
def _sign_at(base, i):
    return 1.0 if (_u64_at(base, i) >> _S63) else -1.0


@njit("void(uint64, int64, float64[:])", cache=True)
def _normals_into(base, d, out):
    for j in range((d + 1) // 2):
        u1 = _uniform_at(base, _U(2 * j))
        u2 = _uniform_at(base, _U(2 * j + 1))
        r = math.sqrt(-2.0 * math.log(u1))
        out[2 * j] = r * math.cos(_TWO_PI * u2)
        if 2 * j + 1 < d:
            out[2 * j + 1] = r * math.sin(_TWO_PI * u2)


@njit("UniTuple(float64, 2)(uint64, int64, float64[:])", cache=True)
def _signs_into(base, d, chi):
    """chi plus the two auxiliary signs, per the fixed bundle layout."""
    c0 = 2 * ((d + 1) // 2)
    for a in range(d):
        chi[a] = _sign_at(base, _U(c0 + a))
    ch1 = _sign_at(base, _U(c0 + d))
    ch2 = _sign_at(base, _U(c0 + d + 1))
    return ch1, ch2


@njit(cache=True)
def _fill_j(R, chi, J):
    d = R.shape[0]
    for a in range(d):
        for b in range(d):
            if a == b:
                J[a, b] = (R[a] * R[a] - 1.0) / 2.0
            elif a > b:
                J[a, b] = (R[a] * R[b] - chi[a]) / 2.0
            else:
                J[a, b] = (R[a] * R[b] + chi[b]) / 2.0


@njit(cache=True)
def _fill_jhat(R, ch1, ch2, Jh):
    d = R.shape[0]
    for a in range(d):
        for b in range(d):
            if a == b:
                Jh[a, b] = ch1 * (R[a] * R[a] - 1.0) / 2.0
            elif a > b:
                Jh[a, b] = R[b] * (1.0 + ch2) / 2.0
            else:
                Jh[a, b] = R[b] * (1.0 - ch2) / 2.0


# --------------------------------------------------------------------------
# Model evaluation on integer codes
# --------------------------------------------------------------------------


@njit(cache=True)
def _v1(pot, pp, t):
    """V at a scalar point (1D potentials only)."""
    if pot == POT_QUADRATIC:
        return 0.5 * t * t
    if pot == POT_QUARTIC:
        return 0.25 * t * t * t * t
    if pot == POT_DOUBLE_WELL:
        return 0.5 * t * t + math.sin(1.0 + 3.0 * t)
    if pot == POT_RING:
        r = abs(t)
        return 0.5 * pp * (1.0 - r) * (1.0 - r)
    return 0.0


@njit(cache=True)
def _dv1(pot, pp, t):
    if pot == POT_QUADRATIC:
        return t
    if pot == POT_QUARTIC:
        return t * t * t
    if pot == POT_DOUBLE_WELL:
        return t + 3.0 * math.cos(1.0 + 3.0 * t)
    if pot == POT_RING:
        r = abs(t)
        if r == 0.0:
            return 0.0
        return pp * (r - 1.0) * t / r
    return 0.0


@njit(cache=True)
def _grad_v_into(pot, pp, x, out):
    d = x.shape[0]
    if pot == POT_QUADRATIC:
        for i in range(d):
            out[i] = x[i]
    elif pot == POT_QUARTIC:
        for i in range(d):
            out[i] = x[i] * x[i] * x[i]
    elif pot == POT_DOUBLE_WELL:
        out[0] = x[0] + 3.0 * math.cos(1.0 + 3.0 * x[0])
    elif pot == POT_QUADRUPLE_WELL:
        for i in range(2):
            t = x[i]
            w = math.sqrt(17.0 / 16.0 - 2.0 * t * t + t * t * t * t)
            out[i] = 2.0 * t * (t * t - 1.0) / w
    else:  # POT_RING
        t = 0.0
        for i in range(d):
            t += x[i] * x[i]
        r = math.sqrt(t)
        if r == 0.0:
            for i in range(d):
                out[i] = 0.0
        else:
            c = pp * (r - 1.0) / r
            for i in range(d):
                out[i] = c * x[i]


@njit(cache=True)
def _g_and_dg(dif, dp0, dp1, dp2, pot, pp, t):
    """Scalar field g(x) and g'(x) for the 1D diffusion variants."""
    if dif == DIF_COSINE1D:
        return 1.5 + 0.5 * math.cos(t), -0.5 * math.sin(t)
    if dif == DIF_SINE1D:
        return 1.5 + 0.5 * math.sin(t), 0.5 * math.cos(t)
    # DIF_EXP_POTENTIAL1D
    g = math.exp(dp0 * _v1(pot, pp, t))
    return g, dp0 * _dv1(pot, pp, t) * g


@njit(cache=True)
def _mc_s_and_norm(dp0, dp1, dp2, x):
    """Moro-Cardin scalar s(|x|) and the shared exponential factor u."""
    t = 0.0
    for i in range(x.shape[0]):
        t += x[i] * x[i]
    u = dp0 * math.exp(-t / (2.0 * dp1 * dp1))
    if dp2 != 0.0:
        s = 1.0 / (1.0 + u)
    else:
        s = 1.0 + u
    return s, u


@njit(cache=True)
def _r1_beta(dif, t):
    """beta(t), beta'(t) for the rank-one radial fields, t = |x|^2 > 0."""
    if dif == DIF_RADIAL_PROJECTION2D:
        b = 1.0 / (2.0 * t + 1.0)
        return b, -2.0 * b * b
    # DIF_RING_RADIAL
    b = 1.0 / (2.0 * t)
    return b, -1.0 / (2.0 * t * t)


@njit(cache=True)
def _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, x, out):
    d = x.shape[0]
    if dif == DIF_IDENTITY:
        for i in range(d):
            for j in range(d):
                out[i, j] = 1.0 if i == j else 0.0
    elif dif == DIF_CONSTANT:
        for i in range(d):
            for j in range(d):
                out[i, j] = smat[i, j]
    elif dif == DIF_COSINE1D or dif == DIF_SINE1D or dif == DIF_EXP_POTENTIAL1D:
        g, _ = _g_and_dg(dif, dp0, dp1, dp2, pot, pp, x[0])
        out[0, 0] = g
    elif dif == DIF_MORO_CARDIN:
        s, _ = _mc_s_and_norm(dp0, dp1, dp2, x)
        for i in range(d):
            for j in range(d):
                out[i, j] = s if i == j else 0.0
    else:  # rank-one radial
        t = 0.0
        for i in range(d):
            t += x[i] * x[i]
        if t == 0.0 and dif == DIF_RING_RADIAL:
            for i in range(d):
                for j in range(d):
                    out[i, j] = 1.0 if i == j else 0.0
        else:
            b, _ = _r1_beta(dif, t)
            for i in range(d):
                for j in range(d):
                    out[i, j] = (1.0 if i == j else 0.0) - b * x[i] * x[j]


@njit(cache=True)
def _sigma_col_into(dif, dp0, dp1, dp2, smat, pot, pp, x, a, out):
    d = x.shape[0]
    if dif == DIF_IDENTITY:
        for i in range(d):
            out[i] = 0.0
        out[a] = 1.0
    elif dif == DIF_CONSTANT:
        for i in range(d):
            out[i] = smat[i, a]
    elif dif == DIF_COSINE1D or dif == DIF_SINE1D or dif == DIF_EXP_POTENTIAL1D:
        g, _ = _g_and_dg(dif, dp0, dp1, dp2, pot, pp, x[0])
        out[0] = g
    elif dif == DIF_MORO_CARDIN:
        s, _ = _mc_s_and_norm(dp0, dp1, dp2, x)
        for i in range(d):
            out[i] = 0.0
        out[a] = s
    else:
        t = 0.0
        for i in range(d):
            t += x[i] * x[i]
        if t == 0.0 and dif == DIF_RING_RADIAL:
            for i in range(d):
                out[i] = 0.0
            out[a] = 1.0
        else:
            b, _ = _r1_beta(dif, t)
            for i in range(d):
                out[i] = -b * x[a] * x[i]
            out[a] += 1.0


@njit(cache=True)
def _div_d_into(dif, dp0, dp1, dp2, smat, pot, pp, x, out):
    d = x.shape[0]
    if dif == DIF_IDENTITY or dif == DIF_CONSTANT:
        for i in range(d):
            out[i] = 0.0
    elif dif == DIF_COSINE1D or dif == DIF_SINE1D or dif == DIF_EXP_POTENTIAL1D:
        g, dg = _g_and_dg(dif, dp0, dp1, dp2, pot, pp, x[0])
        out[0] = 2.0 * g * dg
    elif dif == DIF_MORO_CARDIN:
        s, u = _mc_s_and_norm(dp0, dp1, dp2, x)
        if dp2 != 0.0:
            c = u * s * s / (dp1 * dp1)
        else:
            c = -u / (dp1 * dp1)
        for i in range(d):
            out[i] = 2.0 * s * c * x[i]
    else:
        t = 0.0
        for i in range(d):
            t += x[i] * x[i]
        if t == 0.0:
            for i in range(d):
                out[i] = 0.0
        else:
            b, db = _r1_beta(dif, t)
            gamma = b * (2.0 - b * t)
            dgamma = 2.0 * db - 2.0 * b * db * t - b * b
            c = -(2.0 * t * dgamma + (d + 1) * gamma)
            for i in range(d):
                out[i] = c * x[i]


@njit(cache=True)
def _minus_d_gradv_into(dif, dp0, dp1, dp2, smat, pot, pp, s_pre, x, out, ws_g):
    """out = -Sigma (Sigma grad V) with Sigma = s_pre already evaluated."""
    d = x.shape[0]
    _grad_v_into(pot, pp, x, ws_g)
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += s_pre[i, j] * ws_g[j]
        out[i] = acc
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += s_pre[i, j] * out[j]
        ws_g[i] = acc
    for i in range(d):
        out[i] = -ws_g[i]


@njit(cache=True)
def _drift_into(dif, dp0, dp1, dp2, smat, pot, pp, sde_sigma, x, out,
                ws_mat, ws_g, ws_t):
    """out = -D grad V + (sigma^2/2) div D, evaluating Sigma(x) internally."""
    d = x.shape[0]
    _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, x, ws_mat)
    _minus_d_gradv_into(dif, dp0, dp1, dp2, smat, pot, pp, ws_mat, x, out, ws_g)
    _div_d_into(dif, dp0, dp1, dp2, smat, pot, pp, x, ws_t)
    c = 0.5 * sde_sigma * sde_sigma
    for i in range(d):
        out[i] += c * ws_t[i]


# --------------------------------------------------------------------------
# Noise integrators
# --------------------------------------------------------------------------


@njit(cache=True)
def _noise_incr_into(noi, scale_is_body, dif, dp0, dp1, dp2, smat, pot, pp,
                     sde_sigma, body, center, scale_pt, h,
                     R, chi, ch1, ch2, J, Jh,
                     incr, ws_scale, ws_mat, ws_shift, ws_pt, ws_c1, ws_c2):
    d = body.shape[0]
    sig = sde_sigma
    for i in range(d):
        incr[i] = 0.0
    if noi == NOI_MT2:
        _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, scale_pt, ws_scale)
        for a in range(d):
            for i in range(d):
                acc = 0.0
                for b in range(d):
                    acc += ws_scale[i, b] * J[a, b]
                ws_shift[i] = h * sig * acc
            for i in range(d):
                ws_pt[i] = body[i] + ws_shift[i]
            _sigma_col_into(dif, dp0, dp1, dp2, smat, pot, pp, ws_pt, a, ws_c1)
            for i in range(d):
                ws_pt[i] = body[i] - ws_shift[i]
            _sigma_col_into(dif, dp0, dp1, dp2, smat, pot, pp, ws_pt, a, ws_c2)
            for i in range(d):
                incr[i] += 0.5 * sig * (ws_c1[i] - ws_c2[i])
        c_shift = math.sqrt(h / 2.0) * sig
        for i in range(d):
            acc = 0.0
            for b in range(d):
                acc += ws_scale[i, b] * chi[b]
            ws_shift[i] = c_shift * acc
        c_line = math.sqrt(h) / 2.0 * sig
        for i in range(d):
            ws_pt[i] = center[i] + ws_shift[i]
        _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, ws_pt, ws_mat)
        for i in range(d):
            acc = 0.0
            for b in range(d):
                acc += ws_mat[i, b] * R[b]
            incr[i] += c_line * acc
        for i in range(d):
            ws_pt[i] = center[i] - ws_shift[i]
        _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, ws_pt, ws_mat)
        for i in range(d):
            acc = 0.0
            for b in range(d):
                acc += ws_mat[i, b] * R[b]
            incr[i] += c_line * acc
    else:  # NOI_W2ITO1
        sqh = math.sqrt(h)
        _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, body, ws_mat)  # s_body
        if scale_is_body:
            for i in range(d):
                for j in range(d):
                    ws_scale[i, j] = ws_mat[i, j]
        else:
            _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, scale_pt, ws_scale)
        half = 0.5 * sqh * sig * ch1
        for a in range(d):
            for i in range(d):
                ws_pt[i] = center[i] + half * ws_scale[i, a]
            for b in range(d):
                if b != a:
                    c = sqh * sig * Jh[a, b]
                    for i in range(d):
                        ws_pt[i] += c * ws_scale[i, b]
            _sigma_col_into(dif, dp0, dp1, dp2, smat, pot, pp, ws_pt, a, ws_c1)
            for i in range(d):
                ws_pt[i] = body[i] - half * ws_scale[i, a]
            _sigma_col_into(dif, dp0, dp1, dp2, smat, pot, pp, ws_pt, a, ws_c2)
            ra = R[a]
            jaa = Jh[a, a]
            for i in range(d):
                incr[i] += sqh * sig * (-ws_mat[i, a] + ws_c1[i] + ws_c2[i]) * ra
                incr[i] += 2.0 * sqh * sig * (ws_mat[i, a] - ws_c2[i]) * jaa
    return


@njit(cache=True)
def _sigma_rounds(noi, met):
    if noi == NOI_MT2:
        return 5
    if met == MET_MOD2:
        return 4
    return 3


# --------------------------------------------------------------------------
# Unified per-trajectory runner
# --------------------------------------------------------------------------


@njit(cache=True)
def _run_traj(mode, met, noi,
              pot, pp, dif, dp0, dp1, dp2, smat, sde_sigma, d,
              h, n_steps, burn_in, x0, seed, traj,
              hist_lo, hist_inv_w, n_bins,
              out_f, out_i, out_hist, out_whist):
    """One trajectory.  Writes, per slot:

    out_f:   [sum_w, sum_w_phi, phi_final]
    out_i:   [n_samples, n_force, n_sigma, status]
    out_hist / out_whist: per-bin counts and weighted counts (d = 1 samples).
    """
    x = x0.copy()
    f = np.empty(d)
    xbar = np.empty(d)
    z = np.empty(d)
    z2 = np.empty(d)
    lagged = np.empty(d)
    R = np.empty(d)
    Rn = np.empty(d)
    chi = np.empty(d)
    J = np.empty((d, d))
    Jh = np.empty((d, d))
    incr = np.empty(d)
    s_x = np.empty((d, d))
    ws_scale = np.empty((d, d))
    ws_mat = np.empty((d, d))
    ws_shift = np.empty(d)
    ws_pt = np.empty(d)
    ws_c1 = np.empty(d)
    ws_c2 = np.empty(d)
    ws_g = np.empty(d)
    ws_t = np.empty(d)
    k_acc = np.empty(d)
    y = np.empty(d)

    sum_w = 0.0
    sum_wphi = 0.0
    n_samples = 0
    n_force = 0
    n_sigma = 0
    status = STATUS_OK

    sqh = math.sqrt(h)
    c_div = 0.5 * sde_sigma * sde_sigma
    needs_tables = met >= MET_RK4
    two_stream = met == MET_LMD or met == MET_LMT
    uses_post = met >= MET_PVD2

    if met == MET_PVD2 or met == MET_MOD1 or met == MET_MOD2:
        _drift_into(dif, dp0, dp1, dp2, smat, pot, pp, sde_sigma, x, lagged,
                    ws_mat, ws_g, ws_t)
        n_force += 1

    if two_stream:
        base0 = _base_state(seed, traj, _U(0))
        _normals_into(base0, d, R)

    for n in range(n_steps):
        base = _base_state(seed, traj, _U(n))
        if two_stream:
            base_next = _base_state(seed, traj, _U(n + 1))
            _normals_into(base_next, d, Rn)
        else:
            _normals_into(base, d, R)
        if needs_tables:
            ch1, ch2 = _signs_into(base, d, chi)
            _fill_j(R, chi, J)
            _fill_jhat(R, ch1, ch2, Jh)
        else:
            ch1 = 1.0
            ch2 = 1.0

        # ---- sample phase -------------------------------------------------
        g_lmt = 1.0
        dg_lmt = 0.0
        if met == MET_LMT:
            # g' recovered from div D = 2 g g', as the reference step does.
            _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, x, s_x)
            n_sigma += 1
            g_lmt = s_x[0, 0]
            _div_d_into(dif, dp0, dp1, dp2, smat, pot, pp, x, ws_t)
            dg_lmt = ws_t[0] / (2.0 * g_lmt)
        if uses_post:
            # Xbar is needed for the force evaluation regardless of burn-in.
            _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, x, s_x)
            for i in range(d):
                acc = 0.0
                for b in range(d):
                    acc += s_x[i, b] * R[b]
                xbar[i] = x[i] + 0.5 * sqh * sde_sigma * acc
        if mode == MODE_TIME_AVERAGE and n >= burn_in:
            w = 1.0
            if met == MET_LMT:
                w = 1.0 / (g_lmt * g_lmt)
            phi = 0.0
            if uses_post:
                for i in range(d):
                    phi += xbar[i] * xbar[i]
                s0 = xbar[0]
            else:
                for i in range(d):
                    phi += x[i] * x[i]
                s0 = x[0]
            sum_w += w
            sum_wphi += w * phi
            n_samples += 1
            bin_f = math.floor((s0 - hist_lo) * hist_inv_w)
            if bin_f >= 0.0 and bin_f < n_bins:
                idx = int(bin_f)
                out_hist[idx] += 1
                out_whist[idx] += w

        # ---- advance phase ------------------------------------------------
        if met == MET_EM:
            _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, x, s_x)
            n_sigma += 1
            _minus_d_gradv_into(dif, dp0, dp1, dp2, smat, pot, pp, s_x, x, f, ws_g)
            _div_d_into(dif, dp0, dp1, dp2, smat, pot, pp, x, ws_t)
            n_force += 1
            for i in range(d):
                acc = 0.0
                for b in range(d):
                    acc += s_x[i, b] * R[b]
                x[i] += h * (f[i] + c_div * ws_t[i]) + sqh * sde_sigma * acc
        elif met == MET_LMD:
            _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, x, s_x)
            n_sigma += 1
            _minus_d_gradv_into(dif, dp0, dp1, dp2, smat, pot, pp, s_x, x, f, ws_g)
            _div_d_into(dif, dp0, dp1, dp2, smat, pot, pp, x, ws_t)
            n_force += 1
            for i in range(d):
                acc = 0.0
                for b in range(d):
                    acc += s_x[i, b] * (R[b] + Rn[b]) * 0.5
                x[i] += (h * (f[i] + c_div * ws_t[i])
                         + (h / 4.0) * c_div * ws_t[i]
                         + sqh * sde_sigma * acc)
        elif met == MET_LMT:
            veff = (_dv1(pot, pp, x[0])
                    - sde_sigma * sde_sigma * dg_lmt / g_lmt)
            n_force += 1
            x[0] += -h * veff + sqh * sde_sigma * ((R[0] + Rn[0]) / 2.0)
        elif met == MET_RK4:
            s_half = h / 2.0
            for i in range(d):
                y[i] = x[i]
            for half in range(2):
                if half == 1:
                    # noise between the two deterministic halves
                    _noise_incr_into(noi, True, dif, dp0, dp1, dp2, smat, pot,
                                     pp, sde_sigma, y, y, y, h,
                                     R, chi, ch1, ch2, J, Jh,
                                     incr, ws_scale, ws_mat, ws_shift, ws_pt,
                                     ws_c1, ws_c2)
                    n_sigma += _sigma_rounds(noi, met)
                    for i in range(d):
                        y[i] += incr[i]
                # classical RK4 on dx/dt = F with stepsize s_half
                _drift_into(dif, dp0, dp1, dp2, smat, pot, pp, sde_sigma, y, f,
                            ws_mat, ws_g, ws_t)
                for i in range(d):
                    k_acc[i] = f[i]
                    z[i] = y[i] + 0.5 * s_half * f[i]
                _drift_into(dif, dp0, dp1, dp2, smat, pot, pp, sde_sigma, z, f,
                            ws_mat, ws_g, ws_t)
                for i in range(d):
                    k_acc[i] += 2.0 * f[i]
                    z2[i] = y[i] + 0.5 * s_half * f[i]
                _drift_into(dif, dp0, dp1, dp2, smat, pot, pp, sde_sigma, z2, f,
                            ws_mat, ws_g, ws_t)
                for i in range(d):
                    k_acc[i] += 2.0 * f[i]
                    z[i] = y[i] + s_half * f[i]
                _drift_into(dif, dp0, dp1, dp2, smat, pot, pp, sde_sigma, z, f,
                            ws_mat, ws_g, ws_t)
                n_force += 4
                for i in range(d):
                    k_acc[i] += f[i]
                    y[i] += (s_half / 6.0) * k_acc[i]
            for i in range(d):
                x[i] = y[i]
        else:
            # pvd2 family: f(xbar), auxiliary points, noise increment
            _drift_into(dif, dp0, dp1, dp2, smat, pot, pp, sde_sigma, xbar, f,
                        ws_mat, ws_g, ws_t)
            n_force += 1
            if met == MET_PVD2:
                for i in range(d):
                    z[i] = x[i] + (h / 4.0) * lagged[i]
                _noise_incr_into(noi, True, dif, dp0, dp1, dp2, smat, pot, pp,
                                 sde_sigma, z, z, z, h, R, chi, ch1, ch2, J, Jh,
                                 incr, ws_scale, ws_mat, ws_shift, ws_pt,
                                 ws_c1, ws_c2)
                for i in range(d):
                    lagged[i] = f[i]
            elif met == MET_MARKOV:
                _drift_into(dif, dp0, dp1, dp2, smat, pot, pp, sde_sigma, x,
                            ws_c1, ws_mat, ws_g, ws_t)  # F(X_n) into ws_c1
                n_force += 1
                for i in range(d):
                    z[i] = x[i] + (h / 4.0) * ws_c1[i]
                _noise_incr_into(noi, True, dif, dp0, dp1, dp2, smat, pot, pp,
                                 sde_sigma, z, z, z, h, R, chi, ch1, ch2, J, Jh,
                                 incr, ws_scale, ws_mat, ws_shift, ws_pt,
                                 ws_c1, ws_c2)
            elif met == MET_MOD1:
                for i in range(d):
                    z[i] = x[i] + (h / 4.0) * lagged[i]
                _noise_incr_into(noi, True, dif, dp0, dp1, dp2, smat, pot, pp,
                                 sde_sigma, x, z, x, h, R, chi, ch1, ch2, J, Jh,
                                 incr, ws_scale, ws_mat, ws_shift, ws_pt,
                                 ws_c1, ws_c2)
                for i in range(d):
                    lagged[i] = f[i]
            else:  # MET_MOD2
                for i in range(d):
                    z[i] = x[i] + (h / 4.0) * lagged[i]
                    z2[i] = x[i] + (h / 2.0) * f[i]
                _noise_incr_into(noi, False, dif, dp0, dp1, dp2, smat, pot, pp,
                                 sde_sigma, x, z, z2, h, R, chi, ch1, ch2, J, Jh,
                                 incr, ws_scale, ws_mat, ws_shift, ws_pt,
                                 ws_c1, ws_c2)
                for i in range(d):
                    lagged[i] = f[i]
            n_sigma += _sigma_rounds(noi, met)
            for i in range(d):
                x[i] += h * f[i] + incr[i]

        if two_stream:
            for i in range(d):
                R[i] = Rn[i]

        ok = True
        for i in range(d):
            if not math.isfinite(x[i]):
                ok = False
        if not ok:
            status = STATUS_UNSTABLE
            break

    phi_final = 0.0
    if mode == MODE_ENSEMBLE and status == STATUS_OK:
        if uses_post:
            base = _base_state(seed, traj, _U(n_steps))
            _normals_into(base, d, R)
            _sigma_into(dif, dp0, dp1, dp2, smat, pot, pp, x, s_x)
            for i in range(d):
                acc = 0.0
                for b in range(d):
                    acc += s_x[i, b] * R[b]
                xbar[i] = x[i] + 0.5 * sqh * sde_sigma * acc
            s0 = xbar[0]
            for i in range(d):
                phi_final += xbar[i] * xbar[i]
        else:
            s0 = x[0]
            for i in range(d):
                phi_final += x[i] * x[i]
        if not math.isfinite(phi_final):
            status = STATUS_UNSTABLE
        else:
            sum_w += 1.0
            sum_wphi += phi_final
            n_samples += 1
            bin_f = math.floor((s0 - hist_lo) * hist_inv_w)
            if bin_f >= 0.0 and bin_f < n_bins:
                idx = int(bin_f)
                out_hist[idx] += 1
                out_whist[idx] += 1.0

    out_f[0] = sum_w
    out_f[1] = sum_wphi
    out_f[2] = phi_final
    out_i[0] = n_samples
    out_i[1] = n_force
    out_i[2] = n_sigma
    out_i[3] = status


@njit(parallel=True, cache=True)
def run_batch(mode, met, noi,
              pot, pp, dif, dp0, dp1, dp2, smat, sde_sigma, d,
              h, n_steps, burn_in, x0, seed, traj0, n_traj,
              hist_lo, hist_inv_w, n_bins,
              out_f, out_i, out_hist, out_whist):
    """Run n_traj trajectories into per-trajectory slots (thread-safe)."""
    for t in prange(n_traj):
        _run_traj(mode, met, noi,
                  pot, pp, dif, dp0, dp1, dp2, smat, sde_sigma, d,
                  h, n_steps, burn_in, x0, seed, _U(traj0 + t),
                  hist_lo, hist_inv_w, n_bins,
                  out_f[t], out_i[t], out_hist[t], out_whist[t])


def run_trajectories(problem, method, h, n_steps, x0, seed, *,
                     mode=MODE_TIME_AVERAGE, burn_in=0, traj0=0, n_traj=1,
                     hist_lo=-5.0, hist_hi=5.0, n_bins=30):
    """Python-side entry: pack, allocate slots, run, return the slot arrays.

    Returns (out_f, out_i, out_hist, out_whist); see :func:`_run_traj` for
    the slot layout.
    """
    if h <= 0:
        raise UsageError(f"stepsize must be positive, got {h}")
    pot, pp, dif, dp0, dp1, dp2, smat, sde_sigma, d = pack_problem(problem)
    met, noi = pack_method(method)
    x0 = np.ascontiguousarray(np.atleast_1d(np.asarray(x0, dtype=float)))
    if x0.shape != (d,):
        raise UsageError(f"x0 has shape {x0.shape}, problem dimension is {d}")
    out_f = np.zeros((n_traj, 3))
    out_i = np.zeros((n_traj, 4), dtype=np.int64)
    out_hist = np.zeros((n_traj, n_bins), dtype=np.int64)
    out_whist = np.zeros((n_traj, n_bins))
    inv_w = n_bins / (hist_hi - hist_lo)
    run_batch(mode, met, noi,
              pot, pp, dif, dp0, dp1, dp2, smat, sde_sigma, d,
              float(h), int(n_steps), int(burn_in), x0,
              np.uint64(seed & (2**64 - 1)), int(traj0), int(n_traj),
              float(hist_lo), float(inv_w), int(n_bins),
              out_f, out_i, out_hist, out_whist)
    return out_f, out_i, out_hist, out_whist
