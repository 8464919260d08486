"""Discretized one-dimensional quantum states.

Uniform position lattice with its exact spectral-dual momentum lattice,
complex Gaussian wave packets, moments, inner products, and the
centre-of-mass frame transform.  Boundary policy is periodic (spectral):
operations check a 6-sigma support margin and raise instead of tapering,
so leakage is a detectable error rather than silent corruption.

All types are immutable after construction and every operation is a pure
function, so states can be shared freely between concurrent trajectory
workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStateError, DomainTooSmallError

#: squared-norm threshold below which a state counts as numerically zero
NORM_FLOOR = 1e-30

#: |squared_norm - 1| bound for a state to count as normalized
NORMALIZED_TOL = 1e-10


@dataclass(frozen=True)
class PhysicalParams:
    """Physical constants of the model: hbar, particle mass, and the
    momentum-diffusion coefficient (units momentum^2 / time)."""

    hbar: float = 1.0
    mass: float = 1.0
    diffusion_d: float = 1.0

    def __post_init__(self):
        for name in ("hbar", "mass", "diffusion_d"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def is_unit(self) -> bool:
        return self.hbar == 1.0 and self.mass == 1.0 and self.diffusion_d == 1.0


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform coordinate lattice x_j = x_min + j dx, j = 0..n-1, together
    with its conjugate momentum lattice p_k = 2 pi hbar k / (n dx) for k in
    the symmetric alias range.  ``momenta`` is stored in FFT order.
    """

    n_points: int
    x_min: float
    x_max: float
    hbar: float = 1.0
    positions: np.ndarray = field(init=False, repr=False, compare=False)
    momenta: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.n_points
        if n < 8 or (n & (n - 1)) != 0:
            raise ValueError(f"n_points must be a power of two >= 8, got {n}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if not self.hbar > 0:
            raise ValueError("hbar must be strictly positive")
        x = self.x_min + self.dx * np.arange(n)
        p = 2 * np.pi * self.hbar * np.fft.fftfreq(n, d=self.dx)
        x.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "momenta", p)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def p_max(self) -> float:
        """Largest representable |p| (the Nyquist momentum)."""
        return np.pi * self.hbar / self.dx


def make_grid(n_points: int, x_min: float, x_max: float, hbar: float = 1.0) -> SpatialGrid:
    """Build a grid; raises ValueError for a non-power-of-two size or a
    degenerate extent."""
    return SpatialGrid(n_points, float(x_min), float(x_max), float(hbar))


@dataclass(frozen=True)
class Wavefunction:
    """Complex amplitudes on a grid with the squared norm cached.

    Represents normalized physical states as well as the unnormalized,
    norm-decaying states of the deterministic jump flow.
    """

    grid: SpatialGrid
    amplitudes: np.ndarray
    squared_norm: float = field(init=False)

    def __post_init__(self):
        amp = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if amp.shape != (self.grid.n_points,):
            raise ValueError("amplitudes must be a 1-d array matching the grid")
        amp.flags.writeable = False
        object.__setattr__(self, "amplitudes", amp)
        sq = float(self.grid.dx * np.sum(np.abs(amp) ** 2))
        object.__setattr__(self, "squared_norm", sq)

    @property
    def is_normalized(self) -> bool:
        return abs(self.squared_norm - 1.0) <= NORMALIZED_TOL


@dataclass(frozen=True)
class Moments:
    """First and second moments of a normalized state: position/momentum
    means and variances (var_x is the sigma^2 of the jump-rate law)."""

    mean_x: float
    mean_p: float
    var_x: float
    var_p: float


def gaussian_packet(grid: SpatialGrid, center_x: float, center_p: float,
                    sigma2: float, chirp: float = 0.0) -> Wavefunction:
    """Normalized complex Gaussian wave packet.

    Amplitude is proportional to

        exp( -(1 + i*chirp) (x - center_x)^2 / (4 sigma2) + i center_p x / hbar )

    so ``sigma2`` is the position variance for every chirp, while the
    momentum variance is hbar^2 (1 + chirp^2) / (4 sigma2).

    Raises DomainTooSmallError if the 6-sigma support does not fit the grid.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be strictly positive")
    margin = 6.0 * np.sqrt(sigma2)
    if center_x - margin < grid.x_min or center_x + margin > grid.x_max:
        raise DomainTooSmallError(
            f"packet at {center_x} with 6-sigma margin {margin:.3g} leaks past "
            f"the grid ({grid.x_min}, {grid.x_max})")
    x = grid.positions
    amp = np.exp(-(1.0 + 1j * chirp) * (x - center_x) ** 2 / (4.0 * sigma2)
                 + 1j * center_p * x / grid.hbar)
    amp /= np.sqrt(grid.dx * np.sum(np.abs(amp) ** 2))
    return Wavefunction(grid, amp)


def inner(psi: Wavefunction, phi: Wavefunction) -> complex:
    """dx-weighted inner product <psi|phi>; inner(psi, psi) == squared_norm."""
    if psi.grid != phi.grid:
        raise ValueError("states live on different grids")
    return complex(psi.grid.dx * np.vdot(psi.amplitudes, phi.amplitudes))


def normalize(psi: Wavefunction) -> Wavefunction:
    """Rescale to unit squared norm; direction is preserved."""
    if psi.squared_norm <= NORM_FLOOR:
        raise DegenerateStateError("cannot normalize a state of vanishing norm")
    return Wavefunction(psi.grid, psi.amplitudes / np.sqrt(psi.squared_norm))


def moments(psi: Wavefunction, allow_unnormalized: bool = False) -> Moments:
    """Position moments by real-space quadrature, momentum moments by
    spectral quadrature.

    Unnormalized input is rejected unless ``allow_unnormalized`` is set, in
    which case moments of psi/||psi|| are returned.  This keeps the norm
    decay of the jump flow from silently skewing expectation values.
    """
    if psi.squared_norm <= NORM_FLOOR:
        raise DegenerateStateError("moments of a zero-norm state are undefined")
    if not psi.is_normalized and not allow_unnormalized:
        raise ValueError("state is not normalized; pass allow_unnormalized=True "
                         "to compute moments of psi/||psi||")
    x = psi.grid.positions
    w = np.abs(psi.amplitudes) ** 2
    wsum = w.sum()
    mean_x = float((w @ x) / wsum)
    var_x = float((w @ (x - mean_x) ** 2) / wsum)

    p = psi.grid.momenta
    wp = np.abs(np.fft.fft(psi.amplitudes)) ** 2
    wpsum = wp.sum()
    mean_p = float((wp @ p) / wpsum)
    var_p = float((wp @ (p - mean_p) ** 2) / wpsum)
    return Moments(mean_x, mean_p, var_x, var_p)


def com_frame(psi: Wavefunction) -> Wavefunction:
    """Translate a state to its centre-of-mass frame.

    Removes the mean momentum with a position-space phase, then the mean
    position with a momentum-space phase (so non-lattice shifts are exact),
    and finally fixes the global phase.  The returned state has
    |mean_x|, |mean_p| < 1e-6 and the |psi| profile translated.
    """
    if not psi.is_normalized:
        raise ValueError("com_frame expects a normalized state")
    mom = moments(psi)
    grid = psi.grid
    sigma = np.sqrt(mom.var_x)
    if -6.0 * sigma < grid.x_min or 6.0 * sigma > grid.x_max:
        raise DomainTooSmallError(
            "centred support does not fit the grid: need x_min <= -6 sigma "
            f"and x_max >= 6 sigma with sigma = {sigma:.3g}")
    amp = psi.amplitudes * np.exp(-1j * mom.mean_p * grid.positions / grid.hbar)
    amp_hat = np.fft.fft(amp)
    amp = np.fft.ifft(amp_hat * np.exp(1j * grid.momenta * mom.mean_x / grid.hbar))
    amp = _fix_global_phase(amp, grid.n_points)
    return Wavefunction(grid, amp)


def _fix_global_phase(amp: np.ndarray, n: int) -> np.ndarray:
    # Midpoint amplitude made real non-negative; for states that vanish at
    # the midpoint (e.g. just after a jump) fall back to the largest
    # amplitude so the convention stays deterministic and idempotent.
    ref = amp[n // 2]
    if abs(ref) < 1e-12 * np.max(np.abs(amp)):
        ref = amp[int(np.argmax(np.abs(amp)))]
    return amp * np.exp(-1j * np.angle(ref))
