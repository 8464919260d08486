"""The two trajectory engines unravelling the spatial-decoherence master
equation: the diffusive stochastic Schrodinger integrator and the orthojump
piecewise-deterministic integrator.

Both share the same operator splitting: the kinetic propagator is applied
exactly in momentum space as two half-step phases, and the multiplicative
(decay / noise / jump) factors act in position space on the mid-step state.
The diffusive noise term uses Euler-Maruyama (weak order 1) with explicit
renormalization each step; the deterministic jump flow is a Strang split
(second order) whose norm decay drives the waiting-time algorithm:

    draw u ~ U(0,1); evolve unnormalized Phi; when ||Phi||^2 first drops
    to <= u at a step boundary, apply Phi -> (x - <x>) Phi, renormalize,
    draw a fresh u, and continue.

Every trajectory draws its random variates from a counter-based stream
keyed by (seed, trajectory index), so results are reproducible regardless
of batching, scheduling, or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (NORM_FLOOR, PhysicalParams, SpatialGrid, Wavefunction,
                   normalize)
from .errors import DegenerateStateError, DomainTooSmallError

#: widest step the unit-normalized integrators accept
DT_MAX = 1e-2

#: cells per side watched for probability leaking to the periodic boundary
MARGIN_CELLS = 4

#: mass fraction in the margin cells that counts as corruption
LEAK_TOL = 1e-6

DIFFUSIVE = "diffusive"
ORTHOJUMP = "orthojump"


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based per-trajectory stream keyed by (seed, index)."""
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    if index < 0:
        raise ValueError("trajectory index must be non-negative")
    return np.random.Generator(np.random.Philox(key=[seed, index]))


@dataclass(frozen=True)
class StepConfig:
    """Time discretization, snapshot schedule, and master seed."""

    dt: float
    t_final: float
    sample_times: tuple[float, ...]
    seed: int = 1

    def __post_init__(self):
        if not 0 < self.dt <= DT_MAX:
            raise ValueError(f"dt must lie in (0, {DT_MAX}] (unit normalization)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        n = round(self.t_final / self.dt)
        if n < 1 or abs(self.t_final - n * self.dt) > 1e-12 * max(1.0, self.t_final):
            raise ValueError("t_final must be a positive integer multiple of dt")
        times = tuple(float(t) for t in self.sample_times)
        if list(times) != sorted(times):
            raise ValueError("sample_times must be sorted")
        for t in times:
            if not 0 <= t <= self.t_final:
                raise ValueError(f"sample time {t} outside [0, t_final]")
            if abs(t - round(t / self.dt) * self.dt) > 1e-12 * max(1.0, self.t_final):
                raise ValueError(f"sample time {t} is not an integer multiple of dt")
        object.__setattr__(self, "sample_times", times)

    @property
    def n_steps(self) -> int:
        return round(self.t_final / self.dt)

    @property
    def sample_steps(self) -> tuple[int, ...]:
        return tuple(round(t / self.dt) for t in self.sample_times)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Per-trajectory time series and snapshots.

    The three moment series and ``norm2_series`` are sampled at every step
    boundary (length n_steps + 1, starting at t = 0).  ``norm2_series``
    holds the squared norm of the propagating state before renormalization
    (diffusive) or before a jump reset (orthojump), which is what the
    norm-decay law constrains along jump-free segments.  Snapshots are
    normalized states at ``times``.
    """

    method: str
    times: np.ndarray
    snapshots: list[Wavefunction]
    mean_x_series: np.ndarray
    mean_p_series: np.ndarray
    var_x_series: np.ndarray
    norm2_series: np.ndarray
    jump_times: np.ndarray

    def __post_init__(self):
        if self.method not in (DIFFUSIVE, ORTHOJUMP):
            raise ValueError(f"unknown method {self.method!r}")
        if np.any(np.diff(self.jump_times) <= 0):
            raise ValueError("jump_times must be strictly increasing")


# ---------------------------------------------------------------------------
# single-step operations (the spec'd contracts; the batch engine below
# composes exactly the same operators with the transforms fused)
# ---------------------------------------------------------------------------

def _kinetic_half_phase(grid: SpatialGrid, dt: float, params: PhysicalParams) -> np.ndarray:
    return np.exp(-1j * grid.momenta**2 * dt / (4.0 * params.mass * params.hbar))


def _mean_x(x: np.ndarray, amp: np.ndarray) -> float:
    w = np.abs(amp) ** 2
    return float((w @ x) / w.sum())


def step_diffusive(psi: Wavefunction, dt: float, dw: float,
                   params: PhysicalParams) -> Wavefunction:
    """One Euler-Maruyama step of the diffusive stochastic equation

        dPsi = [-(i/hbar) H - (D/hbar^2)(x - <x>)^2] Psi dt
               + (sqrt(2D)/hbar)(x - <x>) Psi dW

    followed by explicit renormalization.  The caller supplies the Wiener
    increment ``dw`` (distributed as sqrt(dt) * standard normal).  The
    kinetic term is applied exactly as two spectral half steps around the
    position-space drift/noise factor, with <x> evaluated on the mid-step
    state.
    """
    if not psi.is_normalized:
        raise ValueError("step_diffusive expects a normalized state")
    grid = psi.grid
    half = _kinetic_half_phase(grid, dt, params)
    amp = np.fft.ifft(half * np.fft.fft(psi.amplitudes))
    u = grid.positions - _mean_x(grid.positions, amp)
    amp = amp * (1.0 - (params.diffusion_d / params.hbar**2) * u**2 * dt
                 + (np.sqrt(2.0 * params.diffusion_d) / params.hbar) * u * dw)
    amp = np.fft.ifft(half * np.fft.fft(amp))
    _check_margin(amp, grid)
    nrm2 = grid.dx * np.sum(np.abs(amp) ** 2)
    if nrm2 <= NORM_FLOOR:
        raise DegenerateStateError("state collapsed to zero norm")
    return Wavefunction(grid, amp / np.sqrt(nrm2))


def step_deterministic(phi: Wavefunction, dt: float,
                       params: PhysicalParams) -> Wavefunction:
    """One Strang step of the deterministic nonlinear flow

        dPhi/dt = -(i/hbar) H Phi - (D/hbar^2)(x - <x>)^2 Phi

    (half kinetic, exact decay factor exp(-(D/hbar^2)(x - <x>)^2 dt), half
    kinetic).  <x> is taken on the normalized mid-step state.  The squared
    norm strictly decreases when D > 0; the input may be unnormalized.
    """
    if not NORM_FLOOR < phi.squared_norm <= 1.0 + 1e-9:
        raise DegenerateStateError("squared_norm must lie in (1e-30, 1]")
    grid = phi.grid
    half = _kinetic_half_phase(grid, dt, params)
    amp = np.fft.ifft(half * np.fft.fft(phi.amplitudes))
    u = grid.positions - _mean_x(grid.positions, amp)
    amp = amp * np.exp(-(params.diffusion_d / params.hbar**2) * u**2 * dt)
    amp = np.fft.ifft(half * np.fft.fft(amp))
    _check_margin(amp, grid)
    return Wavefunction(grid, amp)


def apply_jump(phi: Wavefunction) -> Wavefunction:
    """Orthojump map Phi -> (x - <x>) Phi, renormalized.

    The result is orthogonal to the (normalized) input; <x> is evaluated
    on the normalized state.
    """
    if phi.squared_norm <= NORM_FLOOR:
        raise DegenerateStateError("cannot jump a zero-norm state")
    u = phi.grid.positions - _mean_x(phi.grid.positions, phi.amplitudes)
    amp = u * phi.amplitudes
    nrm2 = phi.grid.dx * np.sum(np.abs(amp) ** 2)
    if nrm2 <= NORM_FLOOR:
        raise DegenerateStateError("jump produced a zero-norm state")
    return Wavefunction(phi.grid, amp / np.sqrt(nrm2))


def _check_margin(amp: np.ndarray, grid: SpatialGrid) -> None:
    w = np.abs(amp) ** 2
    leak = (w[:MARGIN_CELLS].sum() + w[-MARGIN_CELLS:].sum()) / w.sum()
    if leak > LEAK_TOL:
        raise DomainTooSmallError(
            f"probability mass {leak:.2e} reached the grid margin")


# ---------------------------------------------------------------------------
# batched engine
# ---------------------------------------------------------------------------

@dataclass
class BatchResult:
    """Raw output of a batch of trajectories (internal to the package).

    ``snapshots`` maps step index -> (B, N) array of normalized amplitudes.
    ``failed_step`` is -1 for healthy rows, else the first step whose margin
    check tripped; failed rows keep propagating but must be discarded.
    """

    indices: np.ndarray
    snapshots: dict[int, np.ndarray]
    mean_x: np.ndarray
    mean_p: np.ndarray
    var_x: np.ndarray
    var_p_samples: np.ndarray
    norm2: np.ndarray
    jump_times: list[np.ndarray]
    failed_step: np.ndarray


def run_batch(psi0: Wavefunction, cfg: StepConfig, params: PhysicalParams,
              method: str, indices: np.ndarray) -> BatchResult:
    """Propagate one batch of trajectories with per-index random streams.

    The master state is kept in momentum space between steps; each step
    costs one inverse transform to the mid-step position stage, one forward
    transform back, and one inverse transform for the boundary position
    state, so boundary moments in both representations come out exactly.
    """
    if method not in (DIFFUSIVE, ORTHOJUMP):
        raise ValueError(f"unknown method {method!r}")
    if not psi0.is_normalized:
        raise ValueError("initial state must be normalized")
    grid, dt = psi0.grid, cfg.dt
    if params.hbar != grid.hbar:
        raise ValueError("params.hbar disagrees with the grid's hbar")
    x, p, dx = grid.positions, grid.momenta, grid.dx
    n_steps = cfg.n_steps
    sample_steps = set(cfg.sample_steps)
    B = len(indices)
    half = _kinetic_half_phase(grid, dt, params)
    decay = params.diffusion_d / params.hbar**2
    noise_coef = np.sqrt(2.0 * params.diffusion_d) / params.hbar

    rngs = [trajectory_rng(cfg.seed, int(i)) for i in indices]
    if method == DIFFUSIVE:
        dws = np.sqrt(dt) * np.stack([r.standard_normal(n_steps) for r in rngs])
    else:
        thresholds = np.array([1.0 - r.random() for r in rngs])

    X = np.tile(psi0.amplitudes, (B, 1))
    P = np.fft.fft(X, axis=1)
    norm2 = np.full(B, psi0.squared_norm)

    out = BatchResult(
        indices=np.asarray(indices),
        snapshots={},
        mean_x=np.empty((B, n_steps + 1)),
        mean_p=np.empty((B, n_steps + 1)),
        var_x=np.empty((B, n_steps + 1)),
        var_p_samples=np.empty((B, len(cfg.sample_steps))),
        norm2=np.empty((B, n_steps + 1)),
        jump_times=[np.empty(0)] * B,
        failed_step=np.full(B, -1, dtype=int),
    )
    jump_lists: list[list[float]] = [[] for _ in range(B)]

    def record_boundary(k: int, sample_col: int | None):
        w = np.abs(X) ** 2
        s = w.sum(axis=1)
        mx = (w @ x) / s
        vx = (w @ x**2) / s - mx**2
        wp = np.abs(P) ** 2
        sp = wp.sum(axis=1)
        mp = (wp @ p) / sp
        out.mean_x[:, k] = mx
        out.mean_p[:, k] = mp
        out.var_x[:, k] = vx
        out.norm2[:, k] = norm2
        leak = (w[:, :MARGIN_CELLS].sum(axis=1) + w[:, -MARGIN_CELLS:].sum(axis=1)) / s
        newly = (leak > LEAK_TOL) & (out.failed_step == -1)
        out.failed_step[newly] = k
        if sample_col is not None:
            out.var_p_samples[:, sample_col] = (wp @ p**2) / sp - mp**2
            out.snapshots[k] = X / np.sqrt(norm2)[:, None]

    sample_cols = {step: i for i, step in enumerate(cfg.sample_steps)}
    record_boundary(0, sample_cols.get(0))

    for k in range(1, n_steps + 1):
        P *= half
        X = np.fft.ifft(P, axis=1)
        w = np.abs(X) ** 2
        mx = (w @ x) / w.sum(axis=1)
        u = x[None, :] - mx[:, None]
        if method == DIFFUSIVE:
            X *= 1.0 - decay * u**2 * dt + noise_coef * u * dws[:, k - 1, None]
        else:
            X *= np.exp(-decay * u**2 * dt)
        P = np.fft.fft(X, axis=1)
        P *= half
        X = np.fft.ifft(P, axis=1)
        norm2 = dx * np.sum(np.abs(X) ** 2, axis=1)

        if method == DIFFUSIVE:
            scale = 1.0 / np.sqrt(norm2)
            X *= scale[:, None]
            P *= scale[:, None]
            pre_norm2 = norm2
            norm2 = np.ones(B)
        else:
            pre_norm2 = norm2.copy()
            if params.diffusion_d > 0:
                for r in np.nonzero(norm2 <= thresholds)[0]:
                    u_r = x - _mean_x(x, X[r])
                    amp = u_r * X[r]
                    nrm2 = dx * np.sum(np.abs(amp) ** 2)
                    if nrm2 <= NORM_FLOOR:
                        out.failed_step[r] = k if out.failed_step[r] == -1 else out.failed_step[r]
                        continue
                    X[r] = amp / np.sqrt(nrm2)
                    P[r] = np.fft.fft(X[r])
                    norm2[r] = 1.0
                    thresholds[r] = 1.0 - rngs[r].random()
                    jump_lists[r].append(k * dt)

        record_boundary(k, sample_cols.get(k))
        out.norm2[:, k] = pre_norm2

    out.jump_times = [np.asarray(j) for j in jump_lists]
    return out


def _record_from_batch(out: BatchResult, cfg: StepConfig, grid: SpatialGrid,
                       method: str) -> TrajectoryRecord:
    if out.failed_step[0] != -1:
        raise DomainTooSmallError(
            f"support reached the grid margin at t = {out.failed_step[0] * cfg.dt:.4g}")
    snaps = [normalize(Wavefunction(grid, out.snapshots[s][0]))
             for s in cfg.sample_steps]
    return TrajectoryRecord(
        method=method,
        times=np.asarray(cfg.sample_times),
        snapshots=snaps,
        mean_x_series=out.mean_x[0],
        mean_p_series=out.mean_p[0],
        var_x_series=out.var_x[0],
        norm2_series=out.norm2[0],
        jump_times=out.jump_times[0],
    )


def run_diffusive_trajectory(psi0: Wavefunction, cfg: StepConfig,
                             params: PhysicalParams,
                             trajectory_index: int = 0) -> TrajectoryRecord:
    """Integrate one diffusive trajectory; bit-identical for equal
    (seed, trajectory_index)."""
    out = run_batch(psi0, cfg, params, DIFFUSIVE, np.array([trajectory_index]))
    return _record_from_batch(out, cfg, psi0.grid, DIFFUSIVE)


def run_jump_trajectory(psi0: Wavefunction, cfg: StepConfig,
                        params: PhysicalParams,
                        trajectory_index: int = 0) -> TrajectoryRecord:
    """Integrate one orthojump trajectory with the waiting-time algorithm.

    Jumps fire at the end of the dt step in which the squared norm crosses
    the uniform threshold; snapshots taken at a jump step are post-jump.
    """
    out = run_batch(psi0, cfg, params, ORTHOJUMP, np.array([trajectory_index]))
    return _record_from_batch(out, cfg, psi0.grid, ORTHOJUMP)
