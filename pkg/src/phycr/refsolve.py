"""Initial-condition samplers and classical reference solvers.

These produce ground truth for evaluation only; the trainer never imports
this module.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import physics
from .errors import ConfigurationError, NumericError
from .physics import PdeSystem

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GrfSpec:
    """Periodic Gaussian random field ``N(0, scale * (-Laplacian + shift)^-2)`` on [0,1]^2."""
    n: int = 128
    scale: float = 625.0
    shift: float = 25.0
    seed: int = 0
    channels: int = 2


def grf_eigenvalues(n: int, scale: float = 625.0, shift: float = 25.0) -> np.ndarray:
    """Covariance eigenvalue for each discrete wavevector (numpy FFT ordering)."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    return scale / (4.0 * math.pi**2 * k2 + shift) ** 2


def sample_grf(spec: GrfSpec) -> np.ndarray:
    """Sample a ``(channels, n, n)`` periodic GRF.

    White noise is moved to Fourier space with the unitary DFT (which yields
    Hermitian-symmetric unit-variance complex Gaussians), scaled by the square
    root of the covariance eigenvalue and transformed back.  The result is
    normalized so that the Fourier coefficients of the field against the
    orthonormal basis ``exp(2 pi i k.x)`` of the unit square,
    ``c_k = fft2(u)[k] / n**2``, have variance exactly ``eigenvalue(k)``.
    In particular the spatial mean ``c_0`` has variance ``scale / shift**2``.
    """
    n = spec.n
    if n < 2 or n & (n - 1):
        raise ConfigurationError(f"GRF grid must be a power of two, got {n}")
    rng = np.random.default_rng(spec.seed)
    sqrt_eig = np.sqrt(grf_eigenvalues(n, spec.scale, spec.shift))
    out = np.empty((spec.channels, n, n))
    for c in range(spec.channels):
        noise = rng.standard_normal((n, n))
        coeff = np.fft.fft2(noise, norm="ortho") * sqrt_eig * n
        out[c] = np.fft.ifft2(coeff, norm="ortho").real
    return out


def sample_gaussian_ic(shape=(2, 128, 128), std: float = 0.1, seed: int = 0) -> np.ndarray:
    """i.i.d. ``N(0, std^2)`` entries in every channel."""
    return np.random.default_rng(seed).normal(0.0, std, size=shape)


def spiral_ic(sys: PdeSystem) -> np.ndarray:
    """Single-armed spiral ``tanh(rho) * (cos, sin)(phi - rho)`` about the domain center."""
    Y, X = sys.coords()
    cy = sys.origin[0] + 0.5 * sys.length[0]
    cx = sys.origin[1] + 0.5 * sys.length[1]
    dy, dx = Y - cy, X - cx
    rho = np.sqrt(dx**2 + dy**2)
    phi = np.arctan2(dy, dx)
    amp = np.tanh(rho)
    return np.stack((amp * np.cos(phi - rho), amp * np.sin(phi - rho)))


@dataclass(frozen=True)
class SolverRun:
    """Fine time stepping ``dt`` with every ``stride``-th state kept as a snapshot."""
    dt: float
    stride: int
    snapshots: int
    integrator: str = "rk4-fd"
    strict: bool = False

    @property
    def total_steps(self) -> int:
        return (self.snapshots - 1) * self.stride

    @property
    def snapshot_dt(self) -> float:
        return self.dt * self.stride

    @classmethod
    def for_system(cls, sys: PdeSystem, steps: int, fine_dt: float | None = None, strict: bool = False) -> SolverRun:
        """Run producing ``steps + 1`` snapshots spaced by ``sys.dt``."""
        fine_dt = fine_dt or REFERENCE_DT[sys.kind]
        stride = round(sys.dt / fine_dt)
        if stride < 1 or not math.isclose(stride * fine_dt, sys.dt, rel_tol=1e-9):
            raise ConfigurationError(f"coarse dt {sys.dt} is not an integer multiple of fine dt {fine_dt}")
        integrator = "spectral" if sys.kind == "lambda-omega" else "rk4-fd"
        return cls(sys.dt / stride, stride, steps + 1, integrator, strict)


REFERENCE_DT = {"burgers": 1e-4, "fitzhugh-nagumo": 2e-4, "lambda-omega": 0.0125}


def _check_stability(sys: PdeSystem, dt: float, strict: bool):
    bound = 0.2 * min(sys.dx, sys.dy) ** 2 / sys.max_diffusivity()
    if dt > bound:
        msg = f"dt={dt:g} exceeds the diffusive stability bound {bound:g}"
        if strict:
            raise NumericError(msg)
        log.warning(msg)


def rk4_step(f, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(u)
    k2 = f(u + 0.5 * dt * k1)
    k3 = f(u + 0.5 * dt * k2)
    k4 = f(u + dt * k3)
    return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate(step, u0, run: SolverRun):
    u = np.array(u0, dtype=np.result_type(u0, np.float64))
    frames = np.empty((run.snapshots,) + u.shape, dtype=u.dtype)
    frames[0] = u
    n = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(1, run.snapshots):
            for _ in range(run.stride):
                u = step(u)
                n += 1
                if not np.all(np.isfinite(u)):
                    raise NumericError(f"non-finite state at fine step {n}", step=n)
            frames[s] = u
    return frames


def solve_rk4(u0: np.ndarray, sys: PdeSystem, run: SolverRun) -> np.ndarray:
    """Classic RK4 method of lines on the fourth-order periodic stencils of :mod:`physics`.

    Returns ``(run.snapshots, 2, H, W)``.
    """
    _check_stability(sys, run.dt, run.strict)
    rhs = lambda u: physics.tendency(u, sys)  # noqa: E731
    return _integrate(lambda u: rk4_step(rhs, u, run.dt), u0, run)


def solve_spectral_lo(u0: np.ndarray, sys: PdeSystem, run: SolverRun) -> np.ndarray:
    """Fourier pseudo-spectral lambda-omega solver, RK4 in time, 2/3-rule dealiasing."""
    if sys.kind != "lambda-omega":
        raise ConfigurationError(f"spectral solver handles lambda-omega only, got {sys.kind}")
    if not isinstance(sys.bc, physics.Periodic):
        raise ConfigurationError("spectral solver requires periodic boundaries")
    H, W = sys.grid
    ky = 2.0 * math.pi * np.fft.fftfreq(H, d=sys.dy)
    kx = 2.0 * math.pi * np.fft.fftfreq(W, d=sys.dx)
    k2 = ky[:, None] ** 2 + kx[None, :] ** 2
    iy = np.abs(np.fft.fftfreq(H, d=1.0 / H))
    ix = np.abs(np.fft.fftfreq(W, d=1.0 / W))
    keep = (iy[:, None] < H / 3.0) & (ix[None, :] < W / 3.0)
    lin = -sys.diffusion * k2
    p = sys.lo_exponent

    def rhs(uh):
        u = np.fft.ifft2(uh).real
        a, b = u[0], u[1]
        r = a * a + b * b
        rp = r if p == 1 else r * r
        lam, om = 1.0 - rp, -rp
        nl = np.stack((lam * a - om * b, om * a + lam * b))
        return lin * uh + np.fft.fft2(nl) * keep

    frames = _integrate(lambda uh: rk4_step(rhs, uh, run.dt), np.fft.fft2(u0), run)
    return np.fft.ifft2(frames).real


def solve(u0: np.ndarray, sys: PdeSystem, run: SolverRun) -> np.ndarray:
    if run.integrator == "spectral":
        return solve_spectral_lo(u0, sys, run)
    if run.integrator == "rk4-fd":
        return solve_rk4(u0, sys, run)
    raise ConfigurationError(f"unknown integrator {run.integrator!r}")


def initial_condition(sys: PdeSystem, seed: int = 0) -> np.ndarray:
    """Benchmark IC: GRF for Burgers, N(0, 0.1^2) for FN, spiral for lambda-omega."""
    H, W = sys.grid
    if sys.kind == "burgers":
        if H != W:
            raise ConfigurationError("GRF sampler needs a square grid")
        return sample_grf(GrfSpec(n=H, seed=seed))
    if sys.kind == "fitzhugh-nagumo":
        return sample_gaussian_ic((2, H, W), 0.1, seed)
    return spiral_ic(sys)
