"""Closed-form reference solutions of the spatial-decoherence master equation

    d rho / dt = -(i/hbar) [H, rho] - (D/hbar^2) [x, [x, rho]],   H = p^2/2m,

for the Gaussian reference initial state, plus a finite-difference residual
checker that validates the transcription against the equation itself.

The Gaussian family is closed under this evolution, so the exact kernel is
parametrized by its second moments, which obey

    dV/dt = 2C/m,    dC/dt = P/m,    dP/dt = 2D,

with V = <x^2>, C = <{x,p}>/2, P = <p^2> (centred).  The reference initial
state is the localization fixed-point-shaped packet of width sigma_inf^2 =
sqrt(hbar^3 / 2 D m) and chirp -1, giving (in units hbar = m = D = 1)

    V(t) = 1/sqrt2 + t + t^2/sqrt2 + (2/3) t^3
    C(t) = 1/2 + t/sqrt2 + t^2
    P(t) = 1/sqrt2 + 2 t

Note on transcription: the source material prints Sigma^2(t) with a t^3/3
term and the kernel phase with the opposite sign; that pair solves the
master equation with decoherence coefficient D/2, not D (it also contradicts
the printed momentum-diffusion rate 2D).  The polynomials above are the ones
that satisfy the printed equation exactly; the discrepancy is verified
symbolically and covered by the residual checker below.

All closed forms are transcribed in the hbar = m = D = 1 normalization only;
general-parameter callers must rescale via x -> x/l, t -> t/tau with
l = (hbar^3/(D m))^(1/4), tau = sqrt(hbar m / D).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import PhysicalParams, SpatialGrid, Wavefunction, gaussian_packet
from .errors import DomainTooSmallError, UnsupportedNormalizationError

_SQRT2 = np.sqrt(2.0)

#: chirp of the reference packet: exp(-(1 - i) x^2 / (4 sigma_inf^2)), the
#: stationary-shape direction of the deterministic flow (see analytic_rho)
REFERENCE_CHIRP = -1.0


@dataclass(frozen=True)
class DensityMatrix:
    """Position-representation kernel <x_i|rho|x_j> on a grid."""

    grid: SpatialGrid
    kernel: np.ndarray = field(repr=False)

    def __post_init__(self):
        k = np.ascontiguousarray(self.kernel, dtype=np.complex128)
        n = self.grid.n_points
        if k.shape != (n, n):
            raise ValueError("kernel must be an n_points x n_points array")
        k.flags.writeable = False
        object.__setattr__(self, "kernel", k)

    @property
    def trace(self) -> float:
        return float(self.grid.dx * np.real(np.trace(self.kernel)))

    @property
    def purity(self) -> float:
        """Tr rho^2 via the dx^2-weighted Frobenius sum (Hermitian kernel)."""
        return float(self.grid.dx**2 * np.sum(np.abs(self.kernel) ** 2))

    @property
    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.kernel - self.kernel.conj().T)))

    @property
    def diagonal(self) -> np.ndarray:
        """Position probability density along the grid."""
        return np.real(np.diag(self.kernel)).copy()


def _require_unit(params: PhysicalParams, what: str) -> None:
    if not params.is_unit:
        raise UnsupportedNormalizationError(
            f"{what} is transcribed for hbar = m = D = 1 only; rescale via "
            "x -> x/l, t -> t/tau with l = (hbar^3/(D m))^(1/4), "
            "tau = sqrt(hbar m / D)")


def sigma_inf2(params: PhysicalParams) -> float:
    """Squared width sqrt(hbar^3 / (2 D m)) of the reference packet."""
    if params.diffusion_d == 0:
        raise ValueError("sigma_inf2 is undefined at zero diffusion")
    return float(np.sqrt(params.hbar**3 / (2.0 * params.diffusion_d * params.mass)))


def second_moments(t: float, params: PhysicalParams) -> tuple[float, float, float]:
    """Exact (V, C, P) = (<x^2>, <{x,p}>/2, <p^2>) of the reference solution
    at time t, units hbar = m = D = 1."""
    _require_unit(params, "the reference solution")
    if t < 0:
        raise ValueError("t must be non-negative")
    v0 = 1.0 / _SQRT2
    V = v0 + t + t**2 / _SQRT2 + (2.0 / 3.0) * t**3
    C = 0.5 + t / _SQRT2 + t**2
    P = v0 + 2.0 * t
    return V, C, P


def big_sigma2(t: float, params: PhysicalParams) -> float:
    """Squared spatial spread Sigma^2(t) = Tr(x^2 rho_t) of the reference
    solution; strictly increasing in t."""
    return second_moments(t, params)[0]


def sse_fixed_point(params: PhysicalParams) -> tuple[float, float, float]:
    """Stationary shape moments (V, C, P) of the diffusive unravelling.

    The Ito moment flow of the diffusive stochastic equation closes on
    Gaussians and has the attracting fixed point

        C = hbar/2,   V = sqrt(hbar^3 / (8 D m)),   P = sqrt(2 D m hbar),

    a pure state with V P - C^2 = hbar^2/4 and chirp -1.  (This V is half
    of sigma_inf2; the factor is forced by requiring the ensemble of
    trajectories to reproduce the master equation's Tr(x^2 rho_t) exactly.)
    """
    if params.diffusion_d == 0:
        raise ValueError("the fixed point is undefined at zero diffusion")
    h, m, d = params.hbar, params.mass, params.diffusion_d
    return (float(np.sqrt(h**3 / (8.0 * d * m))),
            0.5 * h,
            float(np.sqrt(2.0 * d * m * h)))


def gaussian_kernel(grid: SpatialGrid, V: float, C: float, P: float,
                    hbar: float = 1.0) -> np.ndarray:
    """Centred Gaussian density-matrix kernel with second moments (V, C, P).

        rho(x,y) = (2 pi V)^(-1/2) exp( -(x+y)^2/(8V) - q (x-y)^2/(8V)
                                        + i C (x^2 - y^2) / (2 hbar V) ),
        q = 4 (V P - C^2) / hbar^2.
    """
    det = V * P - C * C
    if V <= 0 or det < 0:
        raise ValueError("moments do not describe a physical state")
    q = 4.0 * det / hbar**2
    x = grid.positions
    xs = x[:, None] + x[None, :]
    xd = x[:, None] - x[None, :]
    return (np.exp(-(xs**2) / (8.0 * V) - q * xd**2 / (8.0 * V)
                   + 1j * C * xs * xd / (2.0 * hbar * V))
            / np.sqrt(2.0 * np.pi * V))


def analytic_rho(grid: SpatialGrid, t: float,
                 params: PhysicalParams = PhysicalParams()) -> DensityMatrix:
    """Exact solution of the master equation at time t on a grid.

    Hermitian; unit trace and diagonal variance Sigma^2(t) hold to grid
    accuracy provided several Sigma(t) of margin fit the box (the hard
    floor below rejects grids narrower than 3 Sigma per side, where even
    the trace is visibly truncated; quadrature at the 1e-6 level wants
    6 Sigma).
    """
    V, C, P = second_moments(t, params)
    sigma = np.sqrt(V)
    if -3.0 * sigma < grid.x_min or 3.0 * sigma > grid.x_max:
        raise DomainTooSmallError(
            f"grid ({grid.x_min}, {grid.x_max}) cannot hold the t={t} solution "
            f"with Sigma = {sigma:.3g}")
    return DensityMatrix(grid, gaussian_kernel(grid, V, C, P, params.hbar))


def apply_me_rhs(rho: DensityMatrix, params: PhysicalParams) -> np.ndarray:
    """Right-hand side -(i/hbar)[H, rho] - (D/hbar^2)[x, [x, rho]] with the
    kinetic commutator applied spectrally on both kernel indices."""
    grid = rho.grid
    k = rho.kernel
    kin = grid.momenta**2 / (2.0 * params.mass)
    h_left = np.fft.ifft(kin[:, None] * np.fft.fft(k, axis=0), axis=0)
    h_right = np.fft.ifft(np.fft.fft(k, axis=1) * kin[None, :], axis=1)
    x = grid.positions
    double_comm = (x[:, None] - x[None, :]) ** 2 * k
    return (-1j / params.hbar) * (h_left - h_right) \
        - (params.diffusion_d / params.hbar**2) * double_comm


def me_residual(t: float, dt_probe: float, grid: SpatialGrid,
                params: PhysicalParams = PhysicalParams()) -> float:
    """Relative residual of the analytic solution against the master equation.

    Central time difference of the kernel versus the spectrally applied
    right-hand side; O(dt_probe^2) plus grid error.  This validates the
    transcription of the closed form, not a time integrator.
    """
    if not t > dt_probe > 0:
        raise ValueError("need t > dt_probe > 0")
    rho_m = analytic_rho(grid, t - dt_probe, params)
    rho_p = analytic_rho(grid, t + dt_probe, params)
    drho = (rho_p.kernel - rho_m.kernel) / (2.0 * dt_probe)
    rhs = apply_me_rhs(analytic_rho(grid, t, params), params)
    return float(np.linalg.norm(drho - rhs) / np.linalg.norm(rhs))


def diffusive_targets(params: PhysicalParams) -> tuple[float, float]:
    """Reference localization targets (Delta x)^2 = sigma_inf^2 and
    (Delta p)^2 = hbar^2 / (2 sigma_inf^2), as printed in the source
    material.  Note the caveat on `sse_fixed_point`: the simulated
    diffusive unravelling localizes to half this position variance."""
    s2 = sigma_inf2(params)
    return s2, float(params.hbar**2 / (2.0 * s2))
