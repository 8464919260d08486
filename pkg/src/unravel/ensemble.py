"""Monte-Carlo driver and estimators.

`run_ensemble` spawns independent trajectories with per-index random
streams, accumulates the density-matrix estimator

    <x| rho_MC |y> = (1/N) sum_n Psi^(n)(x) Psi^(n)*(y)

and its centre-of-mass analogue at every sample time, and evaluates
spreads and the normalized Hilbert-Schmidt distance to the analytic
solution at cumulative batch checkpoints.

Trajectory batches may run in worker processes, but their results are
folded in fixed submission order, so ensembles are reproducible for any
worker count (exactly for the scalar series; to reduction roundoff for
the kernels).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analytic import DensityMatrix, analytic_rho
from .core import PhysicalParams, Wavefunction, com_frame, moments
from .errors import DomainTooSmallError, InsufficientStatisticsError
from .unravellings import (DIFFUSIVE, ORTHOJUMP, BatchResult, StepConfig,
                           TrajectoryRecord, run_batch)

#: trajectories per work unit (checkpoint boundaries always split units)
BATCH_ROWS = 250


@dataclass(frozen=True)
class EnsembleConfig:
    """Trajectory count, method, stepping, and cumulative batch checkpoints."""

    n_trajectories: int
    method: str
    step: StepConfig
    batch_sizes: tuple[int, ...]
    max_failed_fraction: float = 0.001

    def __post_init__(self):
        if self.method not in (DIFFUSIVE, ORTHOJUMP):
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be positive")
        sizes = tuple(int(b) for b in self.batch_sizes)
        if not sizes or list(sizes) != sorted(set(sizes)):
            raise ValueError("batch_sizes must be strictly increasing")
        if sizes[-1] != self.n_trajectories:
            raise ValueError("last batch checkpoint must equal n_trajectories")
        if not 0 <= self.max_failed_fraction < 1:
            raise ValueError("max_failed_fraction must lie in [0, 1)")
        object.__setattr__(self, "batch_sizes", sizes)


@dataclass(frozen=True)
class BatchCheckpoint:
    """Estimators after the first `count` trajectories."""

    count: int
    spread_x: np.ndarray
    spread_p: np.ndarray
    distance_to_analytic: np.ndarray | None
    rho_mc: list[DensityMatrix] | None = None
    rho_com: list[DensityMatrix] | None = None


@dataclass(frozen=True)
class EnsembleDiagnostics:
    """Per-trajectory jump counts (-1 marks dropped trajectories), the
    dropped indices, and the wall time of the run."""

    jump_counts: np.ndarray
    failed_indices: np.ndarray
    wall_time_s: float


@dataclass(frozen=True)
class EnsembleResult:
    sample_times: np.ndarray
    rho_mc: list[DensityMatrix]
    rho_com: list[DensityMatrix]
    spread_x: np.ndarray
    spread_p: np.ndarray
    distance_to_analytic: np.ndarray | None
    checkpoints: list[BatchCheckpoint]
    diagnostics: EnsembleDiagnostics


def density_from_states(states: list[Wavefunction]) -> DensityMatrix:
    """Equal-weight mixture (1/N) sum_n |psi_n><psi_n| as a kernel."""
    if not states:
        raise ValueError("need at least one state")
    grid = states[0].grid
    for s in states:
        if s.grid != grid:
            raise ValueError("states live on different grids")
        if not s.is_normalized:
            raise ValueError("all states must be normalized")
    stack = np.stack([s.amplitudes for s in states])
    kernel = (stack.T @ stack.conj()) / len(states)
    return DensityMatrix(grid, kernel)


def com_density(states: list[Wavefunction]) -> DensityMatrix:
    """Centre-of-mass density matrix: com_frame each state, then average."""
    return density_from_states([com_frame(s) for s in states])


def spreads(rho: DensityMatrix) -> tuple[float, float]:
    """(Delta x, Delta p) from Tr(x^2 rho) and Tr(p^2 rho).

    The position moment reads the kernel diagonal; the momentum moment
    reads the diagonal of the kernel transformed to momentum representation.
    """
    if abs(rho.trace - 1.0) > 1e-4:
        raise ValueError(f"kernel trace {rho.trace:.6f} is not 1")
    grid = rho.grid
    dx2 = float(grid.dx * (rho.diagonal @ grid.positions**2))
    p_prob = momentum_diagonal(rho)
    dp2 = float(p_prob @ grid.momenta**2)
    return float(np.sqrt(dx2)), float(np.sqrt(dp2))


def momentum_diagonal(rho: DensityMatrix) -> np.ndarray:
    """Momentum-space probability attached to each lattice momentum
    (FFT order); sums to the trace."""
    m = np.fft.fft(np.fft.ifft(rho.kernel, axis=1), axis=0)
    return rho.grid.dx * np.real(np.diag(m))


def hs_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """Normalized Hilbert-Schmidt distance sqrt(Tr(a-b)^2) / sqrt(Tr b^2),
    traces as dx^2-weighted Frobenius sums; b plays the exact-solution role."""
    if a.grid != b.grid:
        raise ValueError("kernels live on different grids")
    denom = np.sqrt(np.sum(np.abs(b.kernel) ** 2))
    if denom == 0:
        raise ValueError("reference kernel vanishes")
    return float(np.sqrt(np.sum(np.abs(a.kernel - b.kernel) ** 2)) / denom)


@dataclass(frozen=True)
class DiffusionStats:
    """Per-dt variances of the centre-of-mass increments in the stationary
    regime: Var[d<p>]/dt, Var[d<x> - <p> dt/m]/dt, and their
    cross-covariance / dt."""

    var_dp_dt: float
    var_dx_dt: float
    cov_dx_dp_dt: float
    n_increments: int


def com_increment_stats(records: list[TrajectoryRecord], dt: float,
                        params: PhysicalParams = PhysicalParams(),
                        t_min: float = 3.0) -> DiffusionStats:
    """Estimate the centre-of-mass diffusion coefficients from diffusive
    records over all steps with t in (t_min, t_final)."""
    dxs, dps = [], []
    for rec in records:
        if rec.method != DIFFUSIVE:
            raise ValueError("com_increment_stats needs diffusive records")
        n = len(rec.mean_x_series) - 1
        k0 = int(np.ceil(t_min / dt))
        mx, mp = rec.mean_x_series, rec.mean_p_series
        dxs.append(np.diff(mx[k0:]) - mp[k0:n] * dt / params.mass)
        dps.append(np.diff(mp[k0:]))
    dx_inc = np.concatenate(dxs)
    dp_inc = np.concatenate(dps)
    if len(dx_inc) < 10_000:
        raise InsufficientStatisticsError(
            f"only {len(dx_inc)} increments; need at least 10^4")
    return DiffusionStats(
        var_dp_dt=float(np.var(dp_inc) / dt),
        var_dx_dt=float(np.var(dx_inc) / dt),
        cov_dx_dp_dt=float(np.cov(dx_inc, dp_inc)[0, 1] / dt),
        n_increments=len(dx_inc),
    )


def rescaled_waiting_times(records: list[TrajectoryRecord], dt: float,
                           params: PhysicalParams = PhysicalParams()) -> np.ndarray:
    """Inter-jump waiting times rescaled by the integrated jump rate
    (2D/hbar^2) sigma^2(t); exponential with unit mean if jumps realize
    the inhomogeneous Poisson process.  Uses trapezoidal integration of
    the recorded variance series."""
    rate_coef = 2.0 * params.diffusion_d / params.hbar**2
    xs = []
    for rec in records:
        if rec.method != ORTHOJUMP:
            raise ValueError("waiting times need orthojump records")
        if len(rec.jump_times) == 0:
            continue
        var = rec.var_x_series
        cum = np.concatenate([[0.0], np.cumsum(rate_coef * dt * 0.5 * (var[1:] + var[:-1]))])
        idx = np.round(rec.jump_times / dt).astype(int)
        integrals = cum[idx]
        xs.append(np.diff(np.concatenate([[0.0], integrals])))
    if not xs:
        return np.empty(0)
    return np.concatenate(xs)


# ---------------------------------------------------------------------------
# ensemble driver
# ---------------------------------------------------------------------------

@dataclass
class _Accumulator:
    """Streaming sums over trajectories, folded in fixed batch order."""

    n_times: int
    n_grid: int
    n_total: int
    count: int = 0
    kernels_mc: np.ndarray = field(init=False)
    kernels_com: np.ndarray = field(init=False)
    sum_var_x: np.ndarray = field(init=False)
    sum_var_p: np.ndarray = field(init=False)
    jump_counts: np.ndarray = field(init=False)
    failed: list = field(default_factory=list)

    def __post_init__(self):
        self.kernels_mc = np.zeros((self.n_times, self.n_grid, self.n_grid), complex)
        self.kernels_com = np.zeros_like(self.kernels_mc)
        self.sum_var_x = np.zeros(self.n_times)
        self.sum_var_p = np.zeros(self.n_times)
        self.jump_counts = np.full(self.n_total, -1, dtype=int)


def _process_batch(args) -> tuple:
    """Worker task: run a batch and reduce it to snapshot stacks + scalars."""
    psi0, cfg, params, method, indices = args
    out: BatchResult = run_batch(psi0, cfg, params, method, indices)
    grid = psi0.grid
    ok = out.failed_step == -1
    sample_steps = cfg.sample_steps
    raw = np.stack([out.snapshots[s] for s in sample_steps])      # (T, B, N)
    com = np.empty_like(raw)
    var_xc = np.empty((len(sample_steps), len(indices)))
    var_pc = np.empty_like(var_xc)
    for ti in range(len(sample_steps)):
        for r in range(len(indices)):
            if not ok[r]:
                continue
            try:
                state = com_frame(Wavefunction(grid, raw[ti, r]))
            except DomainTooSmallError:
                ok[r] = False
                continue
            com[ti, r] = state.amplitudes
            m = moments(state)
            var_xc[ti, r] = m.var_x
            var_pc[ti, r] = m.var_p
    n_jumps = np.array([len(j) for j in out.jump_times])
    return (np.asarray(out.indices), ok, raw, com, var_xc, var_pc, n_jumps)


def _fold(acc: _Accumulator, result: tuple) -> None:
    indices, ok, raw, com, var_xc, var_pc, n_jumps = result
    acc.failed.extend(int(i) for i in indices[~ok])
    acc.jump_counts[indices[ok]] = n_jumps[ok]
    if ok.any():
        raw_ok = raw[:, ok, :]
        com_ok = com[:, ok, :]
        for ti in range(raw.shape[0]):
            acc.kernels_mc[ti] += raw_ok[ti].T @ raw_ok[ti].conj()
            acc.kernels_com[ti] += com_ok[ti].T @ com_ok[ti].conj()
        acc.sum_var_x += var_xc[:, ok].sum(axis=1)
        acc.sum_var_p += var_pc[:, ok].sum(axis=1)
        acc.count += int(ok.sum())


def _batch_ranges(n: int, checkpoints: tuple[int, ...]) -> list[tuple[int, int]]:
    """Contiguous index ranges of at most BATCH_ROWS, split at checkpoints."""
    bounds = sorted(set([0, n]) | set(checkpoints))
    ranges = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        ranges.extend((a, min(a + BATCH_ROWS, hi)) for a in range(lo, hi, BATCH_ROWS))
    return ranges


def run_ensemble(psi0: Wavefunction, cfg: EnsembleConfig, params: PhysicalParams,
                 workers: int = 1,
                 store_checkpoint_kernels: bool = False) -> EnsembleResult:
    """Run the full Monte-Carlo ensemble.

    Trajectory n draws from the stream keyed (seed, n), so the cumulative
    batch checkpoints are nested prefixes of the final ensemble.  Failed
    trajectories (support reaching the grid margin) are dropped and
    recorded; the run aborts if their fraction exceeds
    ``cfg.max_failed_fraction``.

    With ``workers > 1`` batches run in subprocesses; results are folded
    in submission order, so estimates do not depend on scheduling.
    Checkpoint kernels are only retained when ``store_checkpoint_kernels``
    is set (a full kernel set costs n_times * n_points^2 * 16 bytes each).
    """
    t0 = time.perf_counter()
    grid = psi0.grid
    times = np.asarray(cfg.step.sample_times)
    acc = _Accumulator(n_times=len(times), n_grid=grid.n_points,
                       n_total=cfg.n_trajectories)
    tasks = [(psi0, cfg.step, params, cfg.method, np.arange(lo, hi))
             for lo, hi in _batch_ranges(cfg.n_trajectories, cfg.batch_sizes)]

    reference = None
    if params.is_unit:
        reference = [analytic_rho(grid, t, params) for t in times]

    checkpoints: list[BatchCheckpoint] = []
    remaining = set(cfg.batch_sizes)

    def maybe_checkpoint(done: int):
        if done not in remaining:
            return
        remaining.discard(done)
        checkpoints.append(_snapshot_checkpoint(
            acc, grid, times, reference, store_checkpoint_kernels))

    if workers <= 1:
        for task in tasks:
            _fold(acc, _process_batch(task))
            maybe_checkpoint(task[4][-1] + 1)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_process_batch, t) for t in tasks]
            for task, fut in zip(tasks, futures):
                _fold(acc, fut.result())
                maybe_checkpoint(task[4][-1] + 1)

    n_failed = len(acc.failed)
    if n_failed > cfg.max_failed_fraction * cfg.n_trajectories:
        raise DomainTooSmallError(
            f"{n_failed} of {cfg.n_trajectories} trajectories reached the grid "
            f"margin (allowed fraction {cfg.max_failed_fraction})")

    final = checkpoints[-1]
    rho_mc = [DensityMatrix(grid, acc.kernels_mc[i] / acc.count)
              for i in range(len(times))]
    rho_com = [DensityMatrix(grid, acc.kernels_com[i] / acc.count)
               for i in range(len(times))]
    diag = EnsembleDiagnostics(
        jump_counts=acc.jump_counts,
        failed_indices=np.asarray(sorted(acc.failed), dtype=int),
        wall_time_s=time.perf_counter() - t0,
    )
    return EnsembleResult(
        sample_times=times,
        rho_mc=rho_mc,
        rho_com=rho_com,
        spread_x=final.spread_x,
        spread_p=final.spread_p,
        distance_to_analytic=final.distance_to_analytic,
        checkpoints=checkpoints,
        diagnostics=diag,
    )


def _snapshot_checkpoint(acc: _Accumulator, grid, times, reference,
                         store_kernels: bool) -> BatchCheckpoint:
    if acc.count == 0:
        raise DomainTooSmallError("no surviving trajectories at checkpoint")
    sx = np.sqrt(acc.sum_var_x / acc.count)
    sp = np.sqrt(acc.sum_var_p / acc.count)
    distance = None
    if reference is not None:
        distance = np.array([
            hs_distance(DensityMatrix(grid, acc.kernels_mc[i] / acc.count), ref)
            for i, ref in enumerate(reference)])
    kern_mc = kern_com = None
    if store_kernels:
        kern_mc = [DensityMatrix(grid, acc.kernels_mc[i] / acc.count)
                   for i in range(len(times))]
        kern_com = [DensityMatrix(grid, acc.kernels_com[i] / acc.count)
                    for i in range(len(times))]
    return BatchCheckpoint(count=acc.count, spread_x=sx, spread_p=sp,
                           distance_to_analytic=distance,
                           rho_mc=kern_mc, rho_com=kern_com)
