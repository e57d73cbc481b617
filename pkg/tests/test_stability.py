"""Mean-square stability analysis of the post-processed family.

The linear one-step entries have short closed forms on the test equation
dX = lambda X dt + mu X dW (p = lambda h, q = mu sqrt(h)); those forms are
frozen here, derived independently of the module, and every public surface
is checked against them: raw entries, Gauss-Hermite moment matrices (whose
second moments also have closed forms), spectral radii, region scans, and
brute-force Monte Carlo of the actual recursion.
"""

import math

import numpy as np
import pytest

from browndyn.model import UsageError
from browndyn.stability import (
    RegionScan,
    empirical_second_moment,
    exact_region,
    moment_matrix,
    moment_matrix_grid,
    scan_region,
    spectral_radius,
    spectral_radius_grid,
    stability_entries,
)

METHODS = [
    "pvd2_mt2", "pvd2_w2ito1",
    "pvd2_markov_mt2", "pvd2_markov_w2ito1",
    "pvd2_mod1_mt2", "pvd2_mod1_w2ito1",
    "pvd2_mod2_mt2", "pvd2_mod2_w2ito1",
]


def _rhat(p, q, R):
    return q * R + 0.5 * q * q * (R * R - 1.0)


def _closed_form_entries(family, p, q, R):
    """Independent derivation of (R11, R12, R21) per family.

    Multiplicative test noise: one step adds q R times the centering point
    plus (q^2/2)(R^2-1) times the scaling point; the families differ only in
    where they center/scale and how the lagged force enters.
    """
    line = q * R        # coefficient of the centering point
    mil = 0.5 * q * q * (R * R - 1.0)  # coefficient of the scaling point
    r21 = 1.0 + 0.5 * q * R
    drift = p + 0.5 * p * q * R        # p Xbar = p(1 + qR/2) X
    if family == "pvd2":
        # centering = scaling = X + (p/4) Xbar_prev
        r11 = 1.0 + drift + line + mil
        r12 = 0.25 * p * (line + mil)
    elif family == "pvd2_markov":
        # centering = scaling = (1 + p/4) X, no lag channel
        r11 = 1.0 + drift + (line + mil) * (1.0 + 0.25 * p)
        r12 = 0.0 * np.asarray(R)
    elif family == "pvd2_mod1":
        # centering = X + (p/4) Xbar_prev, scaling = X
        r11 = 1.0 + drift + line + mil
        r12 = 0.25 * p * line
    else:  # pvd2_mod2: scaling moves to X + (p/2) Xbar = (1 + p/2 + pqR/4) X
        r11 = 1.0 + drift + line + mil * (1.0 + 0.5 * p + 0.25 * p * q * R)
        r12 = 0.25 * p * line
    return r11, r12, r21


# ---------------------------------------------------------------------------
# Entries
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("method", METHODS)
def test_entries_match_closed_forms(method):
    family = method.rsplit("_", 1)[0]
    rng = np.random.default_rng(5)
    p = rng.uniform(-4, 0, size=50)
    q = rng.uniform(0, 2, size=50)
    R = rng.standard_normal(50)
    want = _closed_form_entries(family, p, q, R)
    got = stability_entries(method, p, q, R)
    for g, w in zip(got, want):
        np.testing.assert_allclose(np.broadcast_to(g, (50,)),
                                   np.broadcast_to(w, (50,)),
                                   rtol=1e-13, atol=1e-15)


def test_entries_worked_examples():
    # Deterministic limit q = 0: X_{n+1} = (1+p) X, Xbar = X.
    r11, r12, r21 = stability_entries("pvd2_w2ito1", -0.7, 0.0, 1.3)
    assert r11 == pytest.approx(0.3, abs=1e-15)
    assert r12 == pytest.approx(0.0, abs=1e-15)
    assert r21 == pytest.approx(1.0, abs=1e-15)
    # Pure-noise point p=0, q=1 at R=0: only the Milstein -q^2/2 survives.
    r11, r12, r21 = stability_entries("pvd2_mt2", 0.0, 1.0, 0.0)
    assert r11 == pytest.approx(0.5, abs=1e-15)
    assert r12 == pytest.approx(0.0, abs=1e-15)
    assert r21 == pytest.approx(1.0, abs=1e-15)
    # p = -1, q = 0 annihilates X in one step.
    r11, _, _ = stability_entries("pvd2_markov_mt2", -1.0, 0.0, 0.4)
    assert r11 == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("family",
                         ["pvd2", "pvd2_markov", "pvd2_mod1", "pvd2_mod2"])
def test_entries_identical_across_noise_kinds_and_extra_draws(family):
    # In d = 1 the two noise integrators coincide and the Rademacher draws
    # cancel, so the scalar linearization is draw-independent.
    rng = np.random.default_rng(11)
    p, q, R = rng.uniform(-3, 0), rng.uniform(0, 1.8), rng.standard_normal()
    results = []
    for kind in ("mt2", "w2ito1"):
        for chi in (-1.0, 1.0):
            for ch1 in (-1.0, 1.0):
                results.append(stability_entries(f"{family}_{kind}", p, q, R,
                                                 (chi, ch1)))
    base = results[0]
    for other in results[1:]:
        np.testing.assert_allclose(other, base, rtol=1e-14)


def test_unsupported_methods_rejected():
    for name in ("em", "lmd", "lmt", "rk4_mt2"):
        with pytest.raises(UsageError):
            stability_entries(name, -1.0, 0.5, 0.0)


# ---------------------------------------------------------------------------
# Moment matrices
# ---------------------------------------------------------------------------


def test_moment_matrix_deterministic_limit():
    for p in (-3.0, -1.5, -0.25):
        m = moment_matrix("pvd2_w2ito1", p, 0.0)
        want = np.array([[(1 + p) ** 2, 0, 0],
                         [1, 0, 0],
                         [1 + p, 0, 0]])
        np.testing.assert_allclose(m, want, atol=1e-13)


def test_moment_matrix_closed_forms_base_family():
    # R11 = a + b R + c (R^2 - 1) with a = 1+p, b = q(1+p/2), c = q^2/2;
    # R12 = (p/4)(q R + c (R^2-1)); R21 = 1 + (q/2) R.  Gaussian moments give
    # every entry in closed form.
    p, q = -1.3, 0.9
    a, b, c = 1 + p, q * (1 + p / 2), q * q / 2
    m = moment_matrix("pvd2_mt2", p, q)
    assert m[0, 0] == pytest.approx(a * a + b * b + 2 * c * c, rel=1e-12)
    assert m[1, 0] == pytest.approx(1 + q * q / 4, rel=1e-12)
    assert m[2, 0] == pytest.approx(a + b * q / 2, rel=1e-12)
    # E[R12^2] = (p/4)^2 (q^2 + 2 c^2)
    assert m[0, 1] == pytest.approx((p / 4) ** 2 * (q * q + 2 * c * c),
                                    rel=1e-12)
    # 2 E[R11 R12] = 2 (p/4)(b q + 2 c^2)
    assert m[0, 2] == pytest.approx(2 * (p / 4) * (b * q + 2 * c * c),
                                    rel=1e-12)
    # E[R21 R12] = (p/4) q^2/2
    assert m[2, 2] == pytest.approx(p * q * q / 8, rel=1e-12)
    assert m[1, 1] == 0.0 and m[1, 2] == 0.0 and m[2, 1] == 0.0


@pytest.mark.parametrize("method", ["pvd2_w2ito1", "pvd2_markov_mt2",
                                    "pvd2_mod1_mt2", "pvd2_mod2_w2ito1"])
def test_moment_matrix_matches_monte_carlo(method):
    rng = np.random.default_rng(77)
    n = 400000
    for p, q2 in [(-1.0, 0.5), (-2.5, 1.5), (-0.5, 2.0)]:
        q = math.sqrt(q2)
        R = rng.standard_normal(n)
        chi = rng.integers(0, 2, n) * 2.0 - 1.0
        ch1 = rng.integers(0, 2, n) * 2.0 - 1.0
        r11, r12, r21 = stability_entries(method, p, q, R, (chi, ch1))
        r11 = np.broadcast_to(r11, (n,))
        r12 = np.broadcast_to(r12, (n,))
        r21 = np.broadcast_to(r21, (n,))
        m = moment_matrix(method, p, q)
        checks = [
            (m[0, 0], r11 * r11), (m[0, 1], r12 * r12),
            (m[0, 2], 2 * r11 * r12), (m[1, 0], r21 * r21),
            (m[2, 0], r21 * r11), (m[2, 2], r21 * r12),
        ]
        for want, samples in checks:
            se = samples.std(ddof=1) / math.sqrt(n)
            assert abs(samples.mean() - want) < 4 * se + 1e-12


def test_moment_matrix_even_in_q():
    for method in ("pvd2_w2ito1", "pvd2_mod2_mt2"):
        a = moment_matrix(method, -1.7, 0.8)
        b = moment_matrix(method, -1.7, -0.8)
        np.testing.assert_allclose(a, b, atol=1e-13)


def test_moment_matrix_grid_broadcasts():
    p = np.linspace(-3, -1, 4)[:, None]
    q = np.linspace(0, 1, 5)[None, :]
    grid = moment_matrix_grid("pvd2_mt2", p, q)
    assert grid.shape == (4, 5, 3, 3)
    np.testing.assert_allclose(grid[2, 3],
                               moment_matrix("pvd2_mt2", p[2, 0], q[0, 3]),
                               rtol=1e-13)


# ---------------------------------------------------------------------------
# Spectral radius
# ---------------------------------------------------------------------------


def test_spectral_radius_exact_cases():
    assert spectral_radius(np.eye(3)) == pytest.approx(1.0, abs=1e-12)
    assert spectral_radius(np.diag([0.5, 0.2, 0.1])) == pytest.approx(
        0.5, abs=1e-12)
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.3]])
    assert spectral_radius(rot) == pytest.approx(1.0, abs=1e-12)


def test_spectral_radius_batched_matches_scalar():
    rng = np.random.default_rng(3)
    ms = rng.standard_normal((20, 3, 3))
    batch = spectral_radius_grid(ms)
    for k in range(20):
        assert batch[k] == pytest.approx(spectral_radius(ms[k]), rel=1e-10)


def test_spectral_radius_rejects_wrong_shape():
    with pytest.raises(UsageError):
        spectral_radius(np.eye(2))


# ---------------------------------------------------------------------------
# Region scans and the exact region
# ---------------------------------------------------------------------------


def test_exact_region_examples():
    assert exact_region(-1.0, 1.0)          # -1 + 0.5 < 0
    assert not exact_region(-1.0, 2.0)      # boundary is excluded
    assert not exact_region(-1.0, 3.0)
    assert exact_region(-4.0, 0.0)
    assert not exact_region(0.0, 0.0)


def test_scan_deterministic_row_is_open_interval():
    scan = scan_region("pvd2_w2ito1", np.linspace(-4, 0, 81),
                       np.linspace(0, 4, 5))
    row = scan.stable[:, 0]                  # q^2 = 0
    for i, p in enumerate(scan.p_grid):
        if abs((1 + p) ** 2 - 1.0) < 1e-12:
            continue  # true rho is exactly 1; roundoff may tip either way
        assert row[i] == (-2.0 < p < 0.0), f"p={p}"
    # rho on that row is exactly the deterministic multiplier squared.
    np.testing.assert_allclose(scan.rho[:, 0], (1 + scan.p_grid) ** 2,
                               atol=1e-12)


def test_scan_rows_row_major_and_named():
    scan = scan_region("pvd2_mt2", np.array([-2.0, -1.0]),
                       np.array([0.0, 1.0, 2.0]))
    assert scan.method == "pvd2_mt2"
    rows = list(scan.rows())
    assert len(rows) == 6
    assert [r[:2] for r in rows] == [(-2.0, 0.0), (-2.0, 1.0), (-2.0, 2.0),
                                     (-1.0, 0.0), (-1.0, 1.0), (-1.0, 2.0)]
    for p, q2, rho, stable, exact in rows:
        assert stable == (rho < 1.0)
        assert exact == bool(exact_region(p, q2))


def test_scan_rejects_negative_q2():
    with pytest.raises(UsageError):
        scan_region("pvd2_mt2", np.array([-1.0]), np.array([-0.5]))


def test_stable_region_within_exact_region_sampled():
    # The method never claims stability outside the SDE's own region on a
    # coarse sample of the plane.
    scan = scan_region("pvd2_w2ito1", np.linspace(-4, 0, 41),
                       np.linspace(0, 4, 41))
    interior = np.abs(scan.rho - 1.0) > 1e-12  # away from the rho = 1 ridge
    assert not np.any(scan.stable & ~scan.exact_stable & interior)
    assert scan.stable.any()


# ---------------------------------------------------------------------------
# Empirical dynamics of the literal recursion
# ---------------------------------------------------------------------------


def test_predicted_decay_matches_simulation():
    p, q2 = -1.0, 0.25
    rho = spectral_radius(moment_matrix("pvd2_w2ito1", p, math.sqrt(q2)))
    assert rho < 0.9
    traj = empirical_second_moment("pvd2_w2ito1", p, q2, n_traj=20000,
                                   n_steps=40, seed=8)
    assert traj[-1] < traj[0] / 10.0


def test_predicted_growth_matches_simulation():
    p, q2 = -3.9, 0.1
    rho = spectral_radius(moment_matrix("pvd2_w2ito1", p, math.sqrt(q2)))
    assert rho > 1.1
    traj = empirical_second_moment("pvd2_w2ito1", p, q2, n_traj=5000,
                                   n_steps=40, seed=8)
    assert traj[-1] > traj[0] * 10.0


def test_empirical_moment_tracks_matrix_power():
    # E[X_n^2] from the recursion equals the (0, :) row of M^n acting on
    # (1, 0, 0) within Monte Carlo error.
    p, q2 = -1.5, 0.8
    m = moment_matrix("pvd2_mod1_w2ito1", p, math.sqrt(q2))
    n = 12
    vec = np.array([1.0, 0.0, 0.0])
    for _ in range(n):
        vec = m @ vec
    traj = empirical_second_moment("pvd2_mod1_w2ito1", p, q2, n_traj=400000,
                                   n_steps=n, seed=21)
    assert traj[-1] == pytest.approx(vec[0], rel=0.05)
