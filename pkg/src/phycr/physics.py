"""Boundary padding, finite-difference filters and PDE residuals.

Every function here accepts either a plain ``numpy`` array (used by the
reference solvers) or a :class:`~phycr.tensor.Tensor` (used in training, where
the residual must be differentiable).  Fields are laid out ``(..., C, H, W)``
with ``x`` along the last axis and ``y`` along rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError
from .tensor import Tensor

KINDS = ("burgers", "lambda-omega", "fitzhugh-nagumo")
_KIND_ALIASES = {"fn": "fitzhugh-nagumo", "lo": "lambda-omega", "lambda_omega": "lambda-omega",
                 "fitzhugh_nagumo": "fitzhugh-nagumo"}


@dataclass(frozen=True)
class Periodic:
    pass


@dataclass(frozen=True)
class Dirichlet:
    value: float = 0.0


@dataclass(frozen=True)
class Neumann:
    """Prescribed outward normal derivative ``flux`` on the boundary node."""
    flux: float = 0.0


PERIODIC = Periodic()


def parse_bc(text: str):
    """``periodic``, ``dirichlet:<g>`` or ``neumann:<q>``."""
    name, _, arg = text.strip().lower().partition(":")
    if name == "periodic" and not arg:
        return PERIODIC
    try:
        if name == "dirichlet":
            return Dirichlet(float(arg or 0.0))
        if name == "neumann":
            return Neumann(float(arg or 0.0))
    except ValueError:
        pass
    raise ConfigurationError(f"cannot parse boundary condition {text!r}")


def format_bc(bc) -> str:
    if isinstance(bc, Periodic):
        return "periodic"
    if isinstance(bc, Dirichlet):
        return f"dirichlet:{bc.value!r}"
    return f"neumann:{bc.flux!r}"


@dataclass(frozen=True)
class PdeSystem:
    kind: str
    grid: tuple = (128, 128)
    length: tuple = (1.0, 1.0)
    origin: tuple = (0.0, 0.0)
    dt: float = 0.002
    bc: object = PERIODIC
    nu: float = 0.005
    diffusion: float = 0.1
    lo_exponent: int = 2
    gamma_u: float = 1.0
    gamma_v: float = 100.0
    alpha: float = 0.01
    beta: float = 0.25
    channels: int = field(default=2, init=False)

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ConfigurationError(f"unknown PDE kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        object.__setattr__(self, "length", tuple(float(v) for v in self.length))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        if self.lo_exponent not in (1, 2):
            raise ConfigurationError(f"lo_exponent must be 1 or 2, got {self.lo_exponent}")
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")

    @property
    def dy(self) -> float:
        return self.length[0] / self.grid[0]

    @property
    def dx(self) -> float:
        return self.length[1] / self.grid[1]

    def coords(self):
        """Mesh ``(Y, X)`` of node coordinates, each of shape ``grid``."""
        y = self.origin[0] + self.dy * np.arange(self.grid[0])
        x = self.origin[1] + self.dx * np.arange(self.grid[1])
        return np.meshgrid(y, x, indexing="ij")

    def max_diffusivity(self) -> float:
        if self.kind == "burgers":
            return self.nu
        if self.kind == "lambda-omega":
            return self.diffusion
        return max(self.gamma_u, self.gamma_v)

    def with_(self, **changes) -> PdeSystem:
        return replace(self, **changes)


def burgers(grid: int = 128, **kw) -> PdeSystem:
    return PdeSystem("burgers", grid=(grid, grid), length=(1.0, 1.0), dt=0.002, **kw)


def lambda_omega(grid: int = 128, **kw) -> PdeSystem:
    return PdeSystem("lambda-omega", grid=(grid, grid), length=(20.0, 20.0), origin=(-10.0, -10.0), dt=0.025, **kw)


def fitzhugh_nagumo(grid: int = 128, **kw) -> PdeSystem:
    # unit mesh spacing: [0,128]^2 on 128^2 nodes
    return PdeSystem("fitzhugh-nagumo", grid=(grid, grid), length=(float(grid), float(grid)), dt=0.006, **kw)


# -- stencils --------------------------------------------------------------
def time_kernel(dt: float) -> np.ndarray:
    return np.array([-1.0, 0.0, 1.0]) / (2.0 * dt)


def laplacian_kernel(dx: float, dy: float | None = None) -> np.ndarray:
    dy = dx if dy is None else dy
    k = np.zeros((5, 5))
    k[2, :] += np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * dx**2)
    k[:, 2] += np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * dy**2)
    return k


def ddx_kernel(dx: float) -> np.ndarray:
    k = np.zeros((5, 5))
    k[2, :] = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * dx)
    return k


def ddy_kernel(dy: float) -> np.ndarray:
    return ddx_kernel(dy).T.copy()


@dataclass(frozen=True)
class StencilSet:
    dt: float
    dx: float
    dy: float

    @classmethod
    def for_system(cls, sys: PdeSystem) -> StencilSet:
        return cls(sys.dt, sys.dx, sys.dy)

    @property
    def k_t(self):
        return time_kernel(self.dt)

    @property
    def k_s(self):
        return laplacian_kernel(self.dx, self.dy)

    @property
    def d_x(self):
        return ddx_kernel(self.dx)

    @property
    def d_y(self):
        return ddy_kernel(self.dy)


# -- padding ---------------------------------------------------------------
def _side_plan(bc, n: int, width: int, spacing: float, before: bool):
    """Index/weight/offset arrays for one ghost strip, ordered outward-to-inward for ``before``."""
    d = np.arange(width, 0, -1) if before else np.arange(1, width + 1)
    if isinstance(bc, Periodic):
        idx = (-d) % n if before else (n - 1 + d) % n
        return idx, np.ones(width), np.zeros(width)
    if isinstance(bc, Dirichlet):
        return np.zeros(width, dtype=int), np.zeros(width), np.full(width, float(bc.value))
    if isinstance(bc, Neumann):
        idx = d if before else n - 1 - d
        return idx, np.ones(width), 2.0 * d * spacing * float(bc.flux)
    raise ConfigurationError(f"unknown boundary condition {bc!r}")


def _pad_axis(x, axis, width, bc_before, bc_after, spacing):
    n = x.shape[axis]
    ib, wb, ob = _side_plan(bc_before, n, width, spacing, True)
    ia, wa, oa = _side_plan(bc_after, n, width, spacing, False)
    idx = np.concatenate([ib, np.arange(n), ia])
    w = np.concatenate([wb, np.ones(n), wa])
    off = np.concatenate([ob, np.zeros(n), oa])
    if isinstance(x, Tensor):
        trivial_w = np.all(w == 1.0)
        return T.gather(x, axis, idx, None if trivial_w else w, off if np.any(off) else None)
    shape = [1] * x.ndim
    shape[axis] = idx.size
    return np.take(x, idx, axis=axis) * w.reshape(shape) + off.reshape(shape)


def _sides(bc):
    if isinstance(bc, (tuple, list)):
        if len(bc) != 4:
            raise ConfigurationError("per-side boundary conditions are (top, bottom, left, right)")
        return tuple(bc)
    return (bc,) * 4


def pad_bc(field, bc=PERIODIC, width: int = 2, dx: float = 1.0, dy: float | None = None):
    """Pad the two trailing axes with ``width`` ghost layers per ``bc``.

    ``bc`` is one condition for every boundary or a ``(top, bottom, left, right)``
    tuple.  Neumann ghosts are ``mirror + 2*d*spacing*flux`` at distance ``d``.
    """
    if width < 1:
        raise ConfigurationError(f"pad width must be >= 1, got {width}")
    H, W = field.shape[-2:]
    if width >= H or width >= W:
        raise ConfigurationError(f"pad width {width} must be smaller than grid extent {(H, W)}")
    dy = dx if dy is None else dy
    top, bottom, left, right = _sides(bc)
    out = _pad_axis(field, field.ndim - 1, width, left, right, dx)
    return _pad_axis(out, field.ndim - 2, width, top, bottom, dy)


def _filter(field, kernel):
    if isinstance(field, Tensor):
        return T.stencil(field, kernel)
    return T.apply_stencil(np.asarray(field, dtype=np.float64), kernel)


def laplacian(field, dx: float, bc=PERIODIC, dy: float | None = None):
    if min(field.shape[-2:]) < 5:
        raise DimensionError(f"laplacian needs grid extents >= 5, got {field.shape[-2:]}")
    return _filter(pad_bc(field, bc, 2, dx, dy), laplacian_kernel(dx, dy))


def grad_xy(field, dx: float, bc=PERIODIC, dy: float | None = None):
    """Fourth-order central ``(d/dx, d/dy)``."""
    if min(field.shape[-2:]) < 5:
        raise DimensionError(f"grad_xy needs grid extents >= 5, got {field.shape[-2:]}")
    dy = dx if dy is None else dy
    padded = pad_bc(field, bc, 2, dx, dy)
    return _filter(padded, ddx_kernel(dx)), _filter(padded, ddy_kernel(dy))


def ddt(traj, dt: float):
    """Time derivative along axis 0.

    Central ``[-1, 0, 1]/(2 dt)`` inside; second-order one-sided differences
    at the first and last snapshot so the output keeps the input length.
    """
    if traj.shape[0] < 3:
        raise ContractError(f"ddt needs at least 3 snapshots, got {traj.shape[0]}")
    c = 1.0 / (2.0 * dt)
    # differences first, so constant trajectories give exact zeros
    first = (4.0 * (traj[1] - traj[0]) - (traj[2] - traj[0])) * c
    inner = (traj[2:] - traj[:-2]) * c
    last = (4.0 * (traj[-1] - traj[-2]) - (traj[-1] - traj[-3])) * c
    if isinstance(traj, Tensor):
        return T.concat((T.reshape(first, (1,) + first.shape), inner, T.reshape(last, (1,) + last.shape)), axis=0)
    return np.concatenate((first[None], inner, last[None]), axis=0)


def _stack_channels(a, b):
    if isinstance(a, Tensor):
        return T.stack((a, b), axis=a.ndim - 2)
    return np.stack((a, b), axis=a.ndim - 2)


def tendency(u, sys: PdeSystem):
    """Right-hand side ``F(u)`` of ``u_t = F(u)`` for fields shaped ``(..., 2, H, W)``."""
    if tuple(u.shape[-2:]) != sys.grid or u.shape[-3] != 2:
        raise DimensionError(f"field shape {u.shape} does not match (..., 2, {sys.grid[0]}, {sys.grid[1]})")
    a = u[..., 0, :, :]
    b = u[..., 1, :, :]
    dx, dy, bc = sys.dx, sys.dy, sys.bc
    if sys.kind == "burgers":
        ax, ay = grad_xy(a, dx, bc, dy)
        bx, by = grad_xy(b, dx, bc, dy)
        fa = sys.nu * laplacian(a, dx, bc, dy) - (a * ax + b * ay)
        fb = sys.nu * laplacian(b, dx, bc, dy) - (a * bx + b * by)
    elif sys.kind == "lambda-omega":
        r = a * a + b * b
        rp = r if sys.lo_exponent == 1 else r * r
        lam = 1.0 - rp
        om = -rp
        fa = sys.diffusion * laplacian(a, dx, bc, dy) + lam * a - om * b
        fb = sys.diffusion * laplacian(b, dx, bc, dy) + om * a + lam * b
    elif sys.kind == "fitzhugh-nagumo":
        fa = sys.gamma_u * laplacian(a, dx, bc, dy) + a - a**3 - b + sys.alpha
        fb = sys.gamma_v * laplacian(b, dx, bc, dy) + sys.beta * (a - b)
    else:
        raise ConfigurationError(f"unknown PDE kind {sys.kind!r}")
    return _stack_channels(fa, fb)


def residual(traj, sys: PdeSystem):
    """PDE residual ``u_t - F(u)`` at every snapshot of a ``(K, 2, H, W)`` trajectory."""
    if traj.ndim != 4:
        raise DimensionError(f"trajectory must be (K, 2, H, W), got {traj.shape}")
    return ddt(traj, sys.dt) - tendency(traj, sys)


def physics_loss(traj, sys: PdeSystem):
    """Sum of squared residuals over grid points, snapshots and both channels."""
    r = residual(traj, sys)
    if isinstance(r, Tensor):
        return (r * r).sum()
    return float(np.sum(r * r))


def mean_squared_residual(traj, sys: PdeSystem) -> float:
    data = traj.data if isinstance(traj, Tensor) else traj
    r = residual(np.asarray(data), sys)
    return float(np.mean(r * r))
