import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phycr import physics as P
from phycr import tensor as T
from phycr.errors import ConfigurationError, ContractError, DimensionError

from conftest import check_grad


def periodic_sys(kind, n):
    return P.PdeSystem(kind, grid=(n, n), length=(1.0, 1.0), dt=0.01)


def trig_field(n):
    """Smooth periodic test field on [0,1)^2 with exact derivatives."""
    h = 1.0 / n
    y, x = np.meshgrid(np.arange(n) * h, np.arange(n) * h, indexing="ij")
    u = np.sin(2 * math.pi * x) * np.cos(4 * math.pi * y) + 0.5 * np.sin(6 * math.pi * y)
    ux = 2 * math.pi * np.cos(2 * math.pi * x) * np.cos(4 * math.pi * y)
    uy = -4 * math.pi * np.sin(2 * math.pi * x) * np.sin(4 * math.pi * y) + 3 * math.pi * np.cos(6 * math.pi * y)
    lap = -(4 + 16) * math.pi**2 * np.sin(2 * math.pi * x) * np.cos(4 * math.pi * y) \
        - 0.5 * 36 * math.pi**2 * np.sin(6 * math.pi * y)
    return h, u, ux, uy, lap


def observed_orders(errors):
    return [math.log2(a / b) for a, b in zip(errors, errors[1:])]


def test_spatial_stencils_fourth_order():
    e_lap, e_x, e_y = [], [], []
    for n in (32, 64, 128):
        h, u, ux, uy, lap = trig_field(n)
        e_lap.append(np.abs(P.laplacian(u, h) - lap).max())
        gx, gy = P.grad_xy(u, h)
        e_x.append(np.abs(gx - ux).max())
        e_y.append(np.abs(gy - uy).max())
    for errs in (e_lap, e_x, e_y):
        for order in observed_orders(errs):
            assert abs(order - 4.0) <= 0.3, errs


def test_time_stencil_second_order():
    errs_in, errs_end = [], []
    for k in range(4):
        dt = 0.05 / 2**k
        t = np.arange(int(round(1.0 / dt)) + 1) * dt
        traj = np.sin(3 * t + 0.4)[:, None, None, None] * np.ones((1, 1, 5, 5))
        d = P.ddt(traj, dt)[:, 0, 0, 0]
        exact = 3 * np.cos(3 * t + 0.4)
        errs_in.append(np.abs(d[1:-1] - exact[1:-1]).max())
        errs_end.append(max(abs(d[0] - exact[0]), abs(d[-1] - exact[-1])))
    for errs in (errs_in, errs_end):
        for order in observed_orders(errs):
            assert abs(order - 2.0) <= 0.3, errs


def test_kernel_coefficients():
    k = P.laplacian_kernel(1.0)
    assert abs(k.sum()) < 1e-14 and k[2, 2] == -60.0 / 12.0
    np.testing.assert_array_equal(P.ddx_kernel(1.0)[2], np.array([1, -8, 0, 8, -1]) / 12.0)
    np.testing.assert_array_equal(P.ddy_kernel(0.5), P.ddx_kernel(0.5).T)
    np.testing.assert_array_equal(P.time_kernel(0.5), [-1.0, 0.0, 1.0])


def test_constant_field_has_zero_burgers_residual():
    sys = P.burgers(32)
    traj = np.full((5, 2, 32, 32), 0.73)
    traj[:, 1] = -1.9
    assert np.all(P.residual(traj, sys) == 0.0)
    assert P.physics_loss(traj, sys) == 0.0


def test_field_constant_along_x_has_exact_zero_x_derivative(rng):
    col = rng.standard_normal((16, 1))
    gx, _ = P.grad_xy(np.repeat(col, 16, axis=1), 1.0 / 16)
    assert np.all(gx == 0.0)


def test_fitzhugh_nagumo_fixed_point():
    sys = P.fitzhugh_nagumo(16)
    c = 0.01 ** (1.0 / 3.0)
    traj = np.full((4, 2, 16, 16), c)
    assert np.abs(P.residual(traj, sys)).max() < 1e-12


def test_lambda_omega_tendency_on_uniform_state():
    sys = P.lambda_omega(16)
    a, b = 0.3, -0.7
    u = np.stack((np.full((16, 16), a), np.full((16, 16), b)))
    r = a * a + b * b
    for p in (1, 2):
        rp = r**p
        f = P.tendency(u, sys.with_(lo_exponent=p))
        np.testing.assert_allclose(f[0], (1 - rp) * a + rp * b, rtol=1e-14)
        np.testing.assert_allclose(f[1], -rp * a + (1 - rp) * b, rtol=1e-14)


def brute_force_burgers_loss(traj, nu, h, dt):
    """Direct loop evaluation with explicit periodic index arithmetic."""
    K, _, n, m = traj.shape
    total = 0.0
    c2 = [-1.0, 16.0, -30.0, 16.0, -1.0]
    c1 = [1.0, -8.0, 0.0, 8.0, -1.0]
    for k in range(K):
        for i in range(n):
            for j in range(m):
                u = traj[k, :, i, j]
                lap = np.zeros(2)
                dx = np.zeros(2)
                dy = np.zeros(2)
                for s in range(5):
                    o = s - 2
                    lap += c2[s] * (traj[k, :, i, (j + o) % m] + traj[k, :, (i + o) % n, j]) / (12 * h * h)
                    dx += c1[s] * traj[k, :, i, (j + o) % m] / (12 * h)
                    dy += c1[s] * traj[k, :, (i + o) % n, j] / (12 * h)
                if k == 0:
                    ut = (-3 * traj[0, :, i, j] + 4 * traj[1, :, i, j] - traj[2, :, i, j]) / (2 * dt)
                elif k == K - 1:
                    ut = (3 * traj[k, :, i, j] - 4 * traj[k - 1, :, i, j] + traj[k - 2, :, i, j]) / (2 * dt)
                else:
                    ut = (traj[k + 1, :, i, j] - traj[k - 1, :, i, j]) / (2 * dt)
                rhs = nu * lap - (u[0] * dx + u[1] * dy)
                total += float(((ut - rhs) ** 2).sum())
    return total


def test_loss_matches_brute_force_oracle(rng):
    n = 8
    sys = P.PdeSystem("burgers", grid=(n, n), length=(1.0, 1.0), dt=0.01, nu=0.02)
    traj = rng.standard_normal((4, 2, n, n))
    got = P.physics_loss(traj, sys)
    want = brute_force_burgers_loss(traj, 0.02, 1.0 / n, 0.01)
    assert abs(got - want) <= 1e-12 * abs(want)


def test_tensor_and_numpy_paths_agree(rng):
    for kind in ("burgers", "lambda-omega", "fitzhugh-nagumo"):
        sys = P.PdeSystem(kind, grid=(8, 8), length=(2.0, 2.0), dt=0.05)
        traj = rng.standard_normal((4, 2, 8, 8)) * 0.5
        a = P.physics_loss(traj, sys)
        b = P.physics_loss(T.Tensor(traj), sys).item()
        assert abs(a - b) <= 1e-12 * a


@pytest.mark.parametrize("kind", ["burgers", "lambda-omega", "fitzhugh-nagumo"])
def test_loss_gradient(rng, kind):
    sys = P.PdeSystem(kind, grid=(6, 6), length=(1.5, 1.5), dt=0.1,
                      bc=(P.Neumann(0.3), P.Dirichlet(0.1), P.PERIODIC, P.PERIODIC) if kind == "fitzhugh-nagumo"
                      else P.PERIODIC)
    traj = rng.standard_normal((3, 2, 6, 6)) * 0.4
    assert check_grad(lambda t: P.residual(t, sys), [traj], rng) < 1e-6


def test_neumann_ghosts_extend_linear_field():
    n, h, q = 8, 0.25, 1.7
    y, x = np.meshgrid(np.arange(n) * h, np.arange(n) * h, indexing="ij")
    u = q * x + 2.0
    # outward normal derivative: -q on the left side, +q on the right; zero on top/bottom for an x-only field
    bc = (P.Neumann(0.0), P.Neumann(0.0), P.Neumann(-q), P.Neumann(q))
    padded = P.pad_bc(u, bc, 2, h)
    xe = (np.arange(-2, n + 2) * h)[None, :]
    np.testing.assert_allclose(padded, np.broadcast_to(q * xe + 2.0, padded.shape), atol=1e-12)


def test_dirichlet_and_periodic_padding(rng):
    u = rng.standard_normal((6, 6))
    p = P.pad_bc(u, P.Dirichlet(1.5), 2)
    assert np.all(p[:2] == 1.5) and np.all(p[:, -2:] == 1.5)
    np.testing.assert_array_equal(p[2:-2, 2:-2], u)
    np.testing.assert_array_equal(P.pad_bc(u, P.PERIODIC, 2), np.pad(u, 2, mode="wrap"))


def test_tensor_padding_matches_numpy(rng):
    u = rng.standard_normal((2, 7, 7))
    bc = (P.Neumann(0.4), P.Dirichlet(-1.0), P.PERIODIC, P.Neumann(-0.2))
    np.testing.assert_allclose(P.pad_bc(T.Tensor(u), bc, 2, 0.3).data, P.pad_bc(u, bc, 2, 0.3), atol=0)
    assert check_grad(lambda t: P.pad_bc(t, bc, 2, 0.3), [u], rng) < 1e-6


def test_bc_text_round_trip():
    for bc in (P.PERIODIC, P.Dirichlet(0.5), P.Neumann(-2.0)):
        assert P.parse_bc(P.format_bc(bc)) == bc
    with pytest.raises(ConfigurationError):
        P.parse_bc("robin:1")


def test_errors():
    with pytest.raises(ContractError):
        P.ddt(np.zeros((2, 2, 8, 8)), 0.1)
    with pytest.raises(DimensionError):
        P.tendency(np.zeros((2, 8, 9)), P.burgers(8))
    with pytest.raises(ConfigurationError):
        P.pad_bc(np.zeros((4, 4)), P.PERIODIC, 4)
    with pytest.raises(ConfigurationError):
        P.PdeSystem("heat")


def test_presets():
    b, lo, fn = P.burgers(128), P.lambda_omega(128), P.fitzhugh_nagumo(128)
    assert (b.dt, b.nu, b.dx) == (0.002, 0.005, 1.0 / 128)
    assert (lo.dt, lo.diffusion, lo.dx, lo.origin) == (0.025, 0.1, 20.0 / 128, (-10.0, -10.0))
    assert (fn.dt, fn.dx, fn.gamma_u, fn.gamma_v, fn.alpha, fn.beta) == (0.006, 1.0, 1.0, 100.0, 0.01, 0.25)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 7), st.integers(0, 7), st.floats(-3, 3))
def test_residual_is_shift_equivariant_and_loss_is_shift_invariant(sy, sx, amp):
    rng = np.random.default_rng(3)
    sys = P.burgers(8)
    traj = amp * rng.standard_normal((3, 2, 8, 8))
    rolled = np.roll(traj, (sy, sx), axis=(-2, -1))
    np.testing.assert_allclose(P.residual(rolled, sys), np.roll(P.residual(traj, sys), (sy, sx), axis=(-2, -1)),
                               atol=1e-10 * max(1.0, amp**2) * 1e3)
    a, b = P.physics_loss(rolled, sys), P.physics_loss(traj, sys)
    assert abs(a - b) <= 1e-12 * max(a, 1e-300) * 10
