"""Scattered field, transmission, spectra and disorder-ensemble statistics.

The probe observables are normalized to the incident field: the coherent
field is e^{i k1 z} minus the spherical waves radiated by the probe
coherences, and the intensity adds the incoherent single-atom term. The
transmission is the intensity averaged over a coaxial detector disk with a
Gauss-Legendre (radial) times uniform (angular) product rule, so a constant
integrand is integrated exactly.
"""
from __future__ import annotations

import multiprocessing as mp
import os
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .cloud import CloudGeometry, CloudSpec, DetectorDisk, derive_seed
from .dynamics import (DEFAULT_TOLERANCES, ConvergenceError, LambdaParams,
                       EnsembleState, StirapSchedule, Tolerances, integrate,
                       solve_steady_state, stirap_drives)
from .kernel import build_matrices

_SINGULARITY_EPS = 1e-9
_FIELD_CHUNK = 4096


class SingularityError(ValueError):
    """Observation point coincides with an atom."""


class WindowShapeError(RuntimeError):
    """Transmission curve has no two-valley transparency window."""


class ResolutionWarning(UserWarning):
    """Doubling the quadrature changed the result more than expected."""


class SpectrumPointError(RuntimeError):
    """Convergence failure tagged with its (realization, detuning) pair."""

    def __init__(self, message, realization_index=None, delta1=None,
                 seed=None):
        super().__init__(message)
        self.realization_index = realization_index
        self.delta1 = delta1
        self.seed = seed

    def __reduce__(self):
        return (SpectrumPointError,
                (self.args[0], self.realization_index, self.delta1,
                 self.seed))


def _scattered_terms(points: np.ndarray, state: EnsembleState,
                     cloud: CloudGeometry, params: LambdaParams):
    """Coherent field and incoherent intensity term at many points.

    Returns (field (M,) complex, incoherent (M,) real). Work is chunked so
    the M x N distance table stays within a fixed memory budget.
    """
    if params.omega1 <= 0:
        raise ValueError("observables are normalized by omega1 > 0")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m = points.shape[0]
    field = np.exp(1j * points[:, 2]).astype(complex)
    incoh = np.zeros(m)
    n = cloud.atom_count
    if n == 0:
        return field, incoh
    if state.n_atoms != n:
        raise ValueError("state and cloud atom counts differ")
    pref = params.gamma1_frac / (2.0 * params.omega1)
    weights = state.s33 - np.abs(state.s13)**2
    for lo in range(0, m, _FIELD_CHUNK):
        hi = min(lo + _FIELD_CHUNK, m)
        diff = points[lo:hi, None, :] - cloud.positions[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2))
        if np.min(dist) < _SINGULARITY_EPS:
            raise SingularityError(
                "observation point coincides with an atom position")
        field[lo:hi] -= pref * ((np.exp(1j * dist) / dist) @ state.s13)
        incoh[lo:hi] = pref * pref * ((1.0 / (dist * dist)) @ weights)
    return field, incoh


def total_field(point, state: EnsembleState, cloud: CloudGeometry,
                params: LambdaParams) -> complex:
    """Coherent field at one point, in units of the incident amplitude."""
    field, _ = _scattered_terms(np.asarray(point, dtype=float)[None, :],
                                state, cloud, params)
    return complex(field[0])


def intensity(point, state: EnsembleState, cloud: CloudGeometry,
              params: LambdaParams) -> float:
    """|field|^2 plus the incoherent scattering term, one point."""
    field, incoh = _scattered_terms(np.asarray(point, dtype=float)[None, :],
                                    state, cloud, params)
    return float(np.abs(field[0])**2 + incoh[0])


def _disk_nodes(detector: DetectorDisk):
    """Quadrature nodes (M,3) and weights (M,) normalized to sum to 1.

    Radial direction uses Gauss-Legendre in s^2 (absorbing the area
    element), angles are uniform; both are exact for constants.
    """
    x, w = np.polynomial.legendre.leggauss(detector.radial_nodes)
    u = 0.5 * (x + 1.0) * detector.s_max_k**2
    wu = 0.5 * w * detector.s_max_k**2
    s = np.sqrt(u)
    phi = 2.0 * np.pi * np.arange(detector.angular_nodes) / detector.angular_nodes
    ss, pp = np.meshgrid(s, phi, indexing="ij")
    points = np.column_stack([
        (ss * np.cos(pp)).ravel(),
        (ss * np.sin(pp)).ravel(),
        np.full(ss.size, detector.z0_k)])
    weights = np.repeat(wu / (detector.angular_nodes * detector.s_max_k**2),
                        detector.angular_nodes)
    return points, weights


def transmission(state: EnsembleState, cloud: CloudGeometry,
                 params: LambdaParams, detector: DetectorDisk,
                 check_resolution: bool = False) -> float:
    """Disk-averaged intensity past the exit face, T = 1 for empty space."""
    if detector.s_max_k >= cloud.radius_kR:
        raise ValueError("detector radius must be smaller than the cloud "
                         "radius")
    if detector.z0_k <= 0.5 * cloud.thickness_kL:
        raise ValueError("detector plane must sit past the exit face")
    points, weights = _disk_nodes(detector)
    field, incoh = _scattered_terms(points, state, cloud, params)
    t = float(weights @ (np.abs(field)**2 + incoh))
    if check_resolution:
        doubled = replace(detector, radial_nodes=2 * detector.radial_nodes,
                          angular_nodes=2 * detector.angular_nodes)
        p2, w2 = _disk_nodes(doubled)
        f2, i2 = _scattered_terms(p2, state, cloud, params)
        t2 = float(w2 @ (np.abs(f2)**2 + i2))
        if abs(t2 - t) > 1e-3:
            warnings.warn(
                f"doubling quadrature nodes moved T by {abs(t2 - t):.2e}",
                ResolutionWarning, stacklevel=2)
    return t


def ensemble_stats(values):
    """Mean and standard error; stderr is None for fewer than two values."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("ensemble_stats needs at least one value")
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, None
    return mean, float(arr.std(ddof=1) / np.sqrt(arr.size))


@dataclass(frozen=True)
class WindowMetrics:
    fwhm: float
    t_peak: float
    t_min: float
    valley_detunings: tuple


def window_metrics(delta1_grid, t_curve) -> WindowMetrics:
    """Width and depth of the transparency window between the two valleys.

    Valleys are the global minima on each side of zero detuning; the half
    level sits midway between the peak and the valley mean; crossings are
    linearly interpolated.
    """
    d = np.asarray(delta1_grid, dtype=float)
    t = np.asarray(t_curve, dtype=float)
    if d.shape != t.shape or d.ndim != 1 or d.size < 5:
        raise ValueError("need matching 1-d grid and curve, 5+ points")
    if np.any(np.diff(d) <= 0):
        raise ValueError("detuning grid must be strictly increasing")
    neg = np.nonzero(d < 0)[0]
    pos = np.nonzero(d > 0)[0]
    if neg.size == 0 or pos.size == 0:
        raise WindowShapeError("grid does not straddle zero detuning")
    i_left = neg[np.argmin(t[neg])]
    i_right = pos[np.argmin(t[pos])]
    if i_right - i_left < 2:
        raise WindowShapeError("no interior points between the valleys")
    i_peak = i_left + int(np.argmax(t[i_left:i_right + 1]))
    t_peak = t[i_peak]
    v_left, v_right = t[i_left], t[i_right]
    valley_mean = 0.5 * (v_left + v_right)
    if t_peak - valley_mean <= 1e-12:
        raise WindowShapeError("curve is flat: no transparency window")
    half = 0.5 * (t_peak + valley_mean)

    def cross(from_i, to_i, step):
        for k in range(from_i, to_i, step):
            a, b = t[k], t[k + step]
            if (a - half) * (b - half) <= 0 and a != b:
                frac = (half - a) / (b - a)
                return d[k] + frac * (d[k + step] - d[k])
        raise WindowShapeError("curve never crosses the half level")

    x_left = cross(i_peak, i_left, -1)
    x_right = cross(i_peak, i_right, +1)
    return WindowMetrics(fwhm=float(x_right - x_left), t_peak=float(t_peak),
                         t_min=float(min(v_left, v_right)),
                         valley_detunings=(float(d[i_left]),
                                           float(d[i_right])))


@dataclass(frozen=True)
class RealizationPlan:
    """Fixed-count or adaptive disorder averaging.

    With fwhm_stderr_frac set, realizations accumulate in batches until the
    FWHM standard error drops below that fraction of the mean (or max_count
    is reached); otherwise exactly count realizations run.
    """

    count: int = 8
    workers: int = 1
    fwhm_stderr_frac: float | None = None
    min_count: int = 4
    max_count: int = 64
    batch: int = 4


@dataclass(eq=False)
class SpectrumResult:
    delta1_grid: np.ndarray
    transmissions: np.ndarray  # (R, M)
    seeds: list
    params: LambdaParams
    cloud_spec: CloudSpec
    detector: DetectorDisk
    diagnostics: list

    @property
    def n_realizations(self) -> int:
        return self.transmissions.shape[0]

    @property
    def t_mean(self) -> np.ndarray:
        return self.transmissions.mean(axis=0)

    @property
    def t_stderr(self) -> np.ndarray | None:
        if self.n_realizations < 2:
            return None
        return (self.transmissions.std(axis=0, ddof=1)
                / np.sqrt(self.n_realizations))

    def mean_metrics(self) -> WindowMetrics:
        return window_metrics(self.delta1_grid, self.t_mean)

    def per_realization_metrics(self) -> list:
        """WindowMetrics per realization; None where extraction fails."""
        out = []
        for row in self.transmissions:
            try:
                out.append(window_metrics(self.delta1_grid, row))
            except WindowShapeError:
                out.append(None)
        return out


@dataclass(frozen=True)
class _SpectrumTask:
    index: int
    seed: int
    cloud_spec: CloudSpec
    params: LambdaParams
    detector: DetectorDisk
    delta1_grid: tuple
    tolerances: Tolerances


def _limit_blas_threads():
    for var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "OMP_NUM_THREADS"):
        os.environ[var] = "1"


def _spectrum_worker(task: _SpectrumTask):
    cloud = task.cloud_spec.sample(task.seed)
    matrices = build_matrices(cloud, task.params)
    t_row = np.empty(len(task.delta1_grid))
    max_residual = 0.0
    max_t = 0.0
    for k, d1 in enumerate(task.delta1_grid):
        p = replace(task.params, delta1=d1)
        try:
            result = solve_steady_state(cloud, matrices, p, task.tolerances)
        except ConvergenceError as exc:
            raise SpectrumPointError(
                f"no steady state for realization {task.index} "
                f"(seed {task.seed}) at delta1 = {d1}: {exc}",
                realization_index=task.index, delta1=d1,
                seed=task.seed) from exc
        t_row[k] = transmission(result.state, cloud, p, task.detector)
        max_residual = max(max_residual, result.residual)
        max_t = max(max_t, result.t_reached)
    diag = {"seed": task.seed, "max_residual": max_residual,
            "max_t_reached": max_t}
    return task.index, t_row, diag


def _map_tasks(worker, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    _limit_blas_threads()  # inherited by spawned workers
    ctx = mp.get_context("spawn")
    with ctx.Pool(processes=min(workers, len(tasks)),
                  initializer=_limit_blas_threads) as pool:
        return pool.map(worker, tasks)


def spectrum(cloud_spec: CloudSpec, params: LambdaParams,
             detector: DetectorDisk, delta1_grid, plan: RealizationPlan,
             master_seed: int, point_index: int = 0,
             tolerances: Tolerances = DEFAULT_TOLERANCES) -> SpectrumResult:
    """Disorder-averaged transmission spectrum.

    Every realization draws a fresh cloud from a seed derived from
    (master_seed, point_index, realization_index), builds its interaction
    matrices once, and solves the steady state per grid point. Results are
    merged in realization order, so worker count never changes the output.
    """
    grid = np.asarray(delta1_grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("delta1_grid must be strictly increasing")
    grid_t = tuple(float(x) for x in grid)

    def run_batch(start: int, count: int):
        tasks = [
            _SpectrumTask(index=i, seed=derive_seed(master_seed, point_index, i),
                          cloud_spec=cloud_spec, params=params,
                          detector=detector, delta1_grid=grid_t,
                          tolerances=tolerances)
            for i in range(start, start + count)]
        return _map_tasks(_spectrum_worker, tasks, plan.workers)

    rows = {}
    diags = {}
    if plan.fwhm_stderr_frac is None:
        for idx, row, diag in run_batch(0, plan.count):
            rows[idx] = row
            diags[idx] = diag
    else:
        total = 0
        while True:
            want = plan.min_count if total == 0 else plan.batch
            want = min(want, plan.max_count - total)
            for idx, row, diag in run_batch(total, want):
                rows[idx] = row
                diags[idx] = diag
            total += want
            if total >= plan.max_count:
                break
            fwhms = []
            for i in range(total):
                try:
                    fwhms.append(window_metrics(grid, rows[i]).fwhm)
                except WindowShapeError:
                    pass
            if len(fwhms) >= max(2, plan.min_count):
                mean, stderr = ensemble_stats(fwhms)
                if stderr is not None and mean > 0 \
                        and stderr / mean < plan.fwhm_stderr_frac:
                    break
    order = sorted(rows)
    transmissions = np.vstack([rows[i] for i in order])
    seeds = [diags[i]["seed"] for i in order]
    return SpectrumResult(delta1_grid=grid, transmissions=transmissions,
                          seeds=seeds, params=params, cloud_spec=cloud_spec,
                          detector=detector,
                          diagnostics=[diags[i] for i in order])


@dataclass(eq=False)
class StirapTrace:
    times: np.ndarray
    mean_s11: np.ndarray
    mean_s22: np.ndarray
    mean_s33: np.ndarray
    omega1: np.ndarray
    omega2: np.ndarray
    final_s11: np.ndarray  # per realization
    seeds: list
    params: LambdaParams
    schedule: StirapSchedule

    @property
    def n_realizations(self) -> int:
        return self.final_s11.shape[0]


@dataclass(frozen=True)
class _StirapTask:
    index: int
    seed: int
    cloud_spec: CloudSpec
    params: LambdaParams
    schedule: StirapSchedule
    t_eval: tuple
    tolerances: Tolerances


def _stirap_worker(task: _StirapTask):
    cloud = task.cloud_spec.sample(task.seed)
    matrices = build_matrices(cloud, task.params)
    t_eval = np.asarray(task.t_eval)
    state = EnsembleState.ground(cloud.atom_count)
    traj = integrate(state, cloud, matrices, task.params, task.schedule,
                     t_end=float(t_eval[-1]), tolerances=task.tolerances,
                     t_eval=t_eval)
    stacked = np.vstack([traj.mean_s11, traj.mean_s22, traj.mean_s33])
    return task.index, stacked, task.seed


def stirap_ensemble(cloud_spec: CloudSpec, params: LambdaParams,
                    schedule: StirapSchedule, t_eval, n_realizations: int,
                    master_seed: int, point_index: int = 0,
                    tolerances: Tolerances = DEFAULT_TOLERANCES,
                    workers: int = 1) -> StirapTrace:
    """Population-transfer trajectories averaged over cloud realizations."""
    t_eval = np.asarray(t_eval, dtype=float)
    tasks = [
        _StirapTask(index=i, seed=derive_seed(master_seed, point_index, i),
                    cloud_spec=cloud_spec, params=params, schedule=schedule,
                    t_eval=tuple(float(t) for t in t_eval),
                    tolerances=tolerances)
        for i in range(n_realizations)]
    results = _map_tasks(_stirap_worker, tasks, workers)
    results.sort(key=lambda r: r[0])
    curves = np.stack([r[1] for r in results])  # (R, 3, T)
    seeds = [r[2] for r in results]
    mean = curves.mean(axis=0)
    pairs = np.array([stirap_drives(t, schedule) for t in t_eval])
    return StirapTrace(times=t_eval, mean_s11=mean[0], mean_s22=mean[1],
                       mean_s33=mean[2], omega1=pairs[:, 0],
                       omega2=pairs[:, 1],
                       final_s11=curves[:, 0, -1].copy(), seeds=seeds,
                       params=params, schedule=schedule)
