"""Coupled three-level dynamics: mean fields, time integration, steady states.

Per atom j the state holds the populations s11, s22 (s33 follows from the
trace and is never integrated) and the coherences s13, s23, s12. Time is
measured in units of 1/Gamma (total linewidth); Rabi frequencies, detunings
and partial rates are in units of Gamma.

The drive enters through per-atom effective fields
    F_n^j = i Omega_n e^{i k_n z_j} + sum_{l != j} G_n^{jl} s_{n3}^l,
one dense matrix-vector product per transition. Plane waves propagate
along +z.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import RK45, solve_ivp

from .cloud import CloudGeometry
from .kernel import KERNEL_MODES, InteractionMatrices


class SizeMismatchError(ValueError):
    """State, cloud and matrices disagree on the number of atoms."""


class ConvergenceError(RuntimeError):
    """Steady state not reached within the time horizon."""

    def __init__(self, message: str, residual_history):
        super().__init__(message)
        self.residual_history = residual_history
        self.residual = residual_history[-1][1] if residual_history else None


class StiffnessError(RuntimeError):
    """Integrator step-size failure; carries the time reached."""

    def __init__(self, message: str, t_reached: float):
        super().__init__(message)
        self.t_reached = t_reached


class PhysicalityWarning(UserWarning):
    """Mean-field state left the physical region beyond tolerance."""


@dataclass(frozen=True)
class LambdaParams:
    """Drive and level parameters, rates in units of the total linewidth."""

    omega1: float
    omega2: float
    delta1: float = 0.0
    delta2: float = 0.0
    gamma1_frac: float = 0.5
    gamma2_frac: float = 0.5
    k2_over_k1: float = 1.0
    kernel_mode: str = "scalar"

    def __post_init__(self):
        if abs(self.gamma1_frac + self.gamma2_frac - 1.0) > 1e-12:
            raise ValueError("gamma1_frac + gamma2_frac must equal 1")
        if self.gamma1_frac < 0 or self.gamma2_frac < 0:
            raise ValueError("partial rates must be non-negative")
        if self.omega1 < 0 or self.omega2 < 0:
            raise ValueError("Rabi frequencies must be non-negative")
        if self.kernel_mode not in KERNEL_MODES:
            raise ValueError(f"kernel_mode must be one of {KERNEL_MODES}")


@dataclass(frozen=True)
class Tolerances:
    rtol: float = 1e-8
    atol: float = 1e-10
    steady_residual: float = 1e-8
    t_max: float = 2000.0


DEFAULT_TOLERANCES = Tolerances()


@dataclass(frozen=True)
class StirapSchedule:
    """Counterintuitive pulse pair ramping Omega2 down and Omega1 up.

    Shifted convention (default): inside [t0, t0+tr] the pulses are
    Omega_max*sin(pi (t-t0) / (2 tr)) and Omega_max*cos of the same
    argument, continuous at both ends. Literal convention: the same
    sin/cos with argument pi t / (2 tr), gated by step functions with
    theta(0) = 1, discontinuous at t0 and tf when t0 > 0.
    """

    omega_max: float
    t0: float = 10.0
    tr: float = 60.0
    convention: str = "shifted"

    def __post_init__(self):
        if self.omega_max < 0:
            raise ValueError("omega_max must be non-negative")
        if self.t0 < 0 or self.tr <= 0:
            raise ValueError("need t0 >= 0 and tr > 0")
        if self.convention not in ("shifted", "literal"):
            raise ValueError("convention must be 'shifted' or 'literal'")

    @property
    def tf(self) -> float:
        return self.t0 + self.tr


def stirap_drives(t: float, schedule: StirapSchedule):
    """Instantaneous (omega1, omega2) at time t."""
    om, t0, tr = schedule.omega_max, schedule.t0, schedule.tr
    tf = schedule.tf
    if schedule.convention == "shifted":
        if t < t0:
            return 0.0, om
        if t >= tf:
            return om, 0.0
        arg = 0.5 * np.pi * (t - t0) / tr
        return om * np.sin(arg), om * np.cos(arg)
    # literal form with theta(0) = 1
    box = (1.0 if t >= t0 else 0.0) - (1.0 if t >= tf else 0.0)
    arg = 0.5 * np.pi * t / tr
    o1 = om * np.sin(arg) * box + (om if t >= tf else 0.0)
    o2 = om * np.cos(arg) * box + (om if t <= t0 else 0.0)
    return o1, o2


@dataclass
class EnsembleState:
    """Per-atom expectation values; s33 is derived by the trace identity."""

    s11: np.ndarray
    s22: np.ndarray
    s13: np.ndarray
    s23: np.ndarray
    s12: np.ndarray
    time: float = 0.0

    @classmethod
    def ground(cls, n_atoms: int, time: float = 0.0) -> "EnsembleState":
        return cls(s11=np.ones(n_atoms), s22=np.zeros(n_atoms),
                   s13=np.zeros(n_atoms, dtype=complex),
                   s23=np.zeros(n_atoms, dtype=complex),
                   s12=np.zeros(n_atoms, dtype=complex), time=time)

    @property
    def n_atoms(self) -> int:
        return self.s11.shape[0]

    @property
    def s33(self) -> np.ndarray:
        # grouped so that (s11 + s22) + s33 == 1 holds bitwise
        return 1.0 - (self.s11 + self.s22)

    def to_packed(self) -> np.ndarray:
        return np.concatenate([
            self.s11, self.s22,
            self.s13.real, self.s13.imag,
            self.s23.real, self.s23.imag,
            self.s12.real, self.s12.imag])

    @classmethod
    def from_packed(cls, y: np.ndarray, time: float = 0.0) -> "EnsembleState":
        n = y.shape[0] // 8
        return cls(s11=y[0:n].copy(), s22=y[n:2*n].copy(),
                   s13=y[2*n:3*n] + 1j * y[3*n:4*n],
                   s23=y[4*n:5*n] + 1j * y[5*n:6*n],
                   s12=y[6*n:7*n] + 1j * y[7*n:8*n], time=time)


def _derivatives(s11, s22, s13, s23, s12, f1, f2, g1f, g2f, d1, d2):
    """Right-hand sides for the five integrated components."""
    s33 = 1.0 - (s11 + s22)
    d_s11 = g1f * s33 + (np.conj(s13) * f1).real
    d_s22 = g2f * s33 + (np.conj(s23) * f2).real
    d_s13 = -(0.5 + 1j * d1) * s13 - 0.5 * (s12 * f2 + (s11 - s33) * f1)
    d_s23 = (-(0.5 + 1j * d2) * s23
             - 0.5 * (np.conj(s12) * f1 + (s22 - s33) * f2))
    d_s12 = (1j * (d2 - d1) * s12
             + 0.5 * (np.conj(s23) * f1 + s13 * np.conj(f2)))
    return d_s11, d_s22, d_s13, d_s23, d_s12


def rhs(state: EnsembleState, f1, f2, params: LambdaParams) -> EnsembleState:
    """Time derivative of the state under given effective fields."""
    f1 = np.asarray(f1, dtype=complex)
    f2 = np.asarray(f2, dtype=complex)
    if f1.shape != state.s11.shape or f2.shape != state.s11.shape:
        raise SizeMismatchError("field and state sizes differ")
    d11, d22, d13, d23, d12 = _derivatives(
        state.s11, state.s22, state.s13, state.s23, state.s12, f1, f2,
        params.gamma1_frac, params.gamma2_frac, params.delta1, params.delta2)
    return EnsembleState(s11=d11, s22=d22, s13=d13, s23=d23, s12=d12,
                         time=state.time)


def effective_field(state: EnsembleState, matrices: InteractionMatrices,
                    params: LambdaParams, cloud: CloudGeometry,
                    transition: int) -> np.ndarray:
    """F_n per atom: plane-wave drive plus couplings acting on s_n3."""
    if transition == 1:
        omega, g, kz = params.omega1, matrices.g1, cloud.positions[:, 2]
        coh = state.s13
    elif transition == 2:
        omega, g = params.omega2, matrices.g2
        kz = params.k2_over_k1 * cloud.positions[:, 2]
        coh = state.s23
    else:
        raise ValueError("transition must be 1 or 2")
    if g.shape[0] != state.n_atoms or kz.shape[0] != state.n_atoms:
        raise SizeMismatchError(
            f"state has {state.n_atoms} atoms, matrices {g.shape[0]}, "
            f"cloud {kz.shape[0]}")
    drive = 1j * omega * np.exp(1j * kz)
    if matrices.mode == "none":
        return drive  # zero matrices contribute nothing
    return drive + g @ coh


def _make_packed_rhs(cloud: CloudGeometry, matrices: InteractionMatrices,
                     params: LambdaParams, schedule: StirapSchedule | None):
    n = cloud.atom_count
    if matrices.g1.shape[0] != n:
        raise SizeMismatchError(
            f"cloud has {n} atoms, matrices {matrices.g1.shape[0]}")
    z = cloud.positions[:, 2]
    ph1 = np.exp(1j * z)
    ph2 = np.exp(1j * params.k2_over_k1 * z)
    interacting = matrices.mode != "none"
    g1, g2 = matrices.g1, matrices.g2
    g1f, g2f = params.gamma1_frac, params.gamma2_frac
    d1, d2 = params.delta1, params.delta2
    static1 = 1j * params.omega1 * ph1
    static2 = 1j * params.omega2 * ph2

    def packed_rhs(t, y):
        s11 = y[0:n]
        s22 = y[n:2*n]
        s13 = y[2*n:3*n] + 1j * y[3*n:4*n]
        s23 = y[4*n:5*n] + 1j * y[5*n:6*n]
        s12 = y[6*n:7*n] + 1j * y[7*n:8*n]
        if schedule is None:
            f1, f2 = static1, static2
        else:
            o1, o2 = stirap_drives(t, schedule)
            f1 = 1j * o1 * ph1
            f2 = 1j * o2 * ph2
        if interacting:
            f1 = f1 + g1 @ s13
            f2 = f2 + g2 @ s23
        d11, d22, d13, d23, d12 = _derivatives(
            s11, s22, s13, s23, s12, f1, f2, g1f, g2f, d1, d2)
        out = np.empty(8 * n)
        out[0:n] = d11
        out[n:2*n] = d22
        out[2*n:3*n] = d13.real
        out[3*n:4*n] = d13.imag
        out[4*n:5*n] = d23.real
        out[5*n:6*n] = d23.imag
        out[6*n:7*n] = d12.real
        out[7*n:8*n] = d12.imag
        return out

    return packed_rhs


def dark_state(cloud: CloudGeometry, params: LambdaParams) -> EnsembleState:
    """Analytic transparency fixed point, valid for delta1 == delta2.

    Excited coherences vanish; the ground coherence locks to the drive
    phase difference with s11 = omega2^2/(omega1^2+omega2^2).
    """
    if params.omega2 <= 0:
        raise ValueError("dark state needs omega2 > 0")
    n = cloud.atom_count
    z = cloud.positions[:, 2]
    w = params.omega1**2 + params.omega2**2
    s11 = np.full(n, params.omega2**2 / w)
    s22 = np.full(n, params.omega1**2 / w)
    phase = np.exp(1j * (1.0 - params.k2_over_k1) * z)
    s12 = -(params.omega1 / params.omega2) * phase * s11
    return EnsembleState(s11=s11, s22=s22,
                         s13=np.zeros(n, dtype=complex),
                         s23=np.zeros(n, dtype=complex), s12=s12)


@dataclass
class Trajectory:
    """Sampled time evolution; packed rows are one state per time."""

    times: np.ndarray
    packed: np.ndarray  # (T, 8N)
    n_atoms: int
    params: LambdaParams
    schedule: StirapSchedule | None = None

    def state(self, i: int) -> EnsembleState:
        return EnsembleState.from_packed(self.packed[i], time=self.times[i])

    def _component(self, k: int) -> np.ndarray:
        n = self.n_atoms
        if n == 0:
            return np.full(self.times.shape, np.nan)
        return self.packed[:, k*n:(k+1)*n].mean(axis=1)

    @property
    def mean_s11(self) -> np.ndarray:
        return self._component(0)

    @property
    def mean_s22(self) -> np.ndarray:
        return self._component(1)

    @property
    def mean_s33(self) -> np.ndarray:
        return 1.0 - (self.mean_s11 + self.mean_s22)

    def drive_waveforms(self):
        if self.schedule is None:
            o1 = np.full(self.times.shape, self.params.omega1)
            o2 = np.full(self.times.shape, self.params.omega2)
            return o1, o2
        pairs = [stirap_drives(t, self.schedule) for t in self.times]
        arr = np.array(pairs)
        return arr[:, 0], arr[:, 1]


def _physicality_check(packed: np.ndarray, n: int) -> None:
    """Warn if the factorized state drifts outside the physical region."""
    if n == 0 or packed.size == 0:
        return
    y = np.atleast_2d(packed)
    s33 = 1.0 - (y[:, 0:n] + y[:, n:2*n])
    worst_pop = s33.min()
    worst_coh = 0.0
    for k in (2, 4, 6):
        mag2 = y[:, k*n:(k+1)*n]**2 + y[:, (k+1)*n:(k+2)*n]**2
        worst_coh = max(worst_coh, float(mag2.max()))
    if worst_pop < -1e-6 or worst_coh > (1.0 + 1e-6)**2:
        warnings.warn(
            f"state left the physical region: min s33 = {worst_pop:.3e}, "
            f"max coherence magnitude = {np.sqrt(worst_coh):.6f}",
            PhysicalityWarning, stacklevel=3)


def integrate(state: EnsembleState, cloud: CloudGeometry,
              matrices: InteractionMatrices, params: LambdaParams,
              drive: StirapSchedule | None, t_end: float,
              tolerances: Tolerances = DEFAULT_TOLERANCES,
              t_eval: np.ndarray | None = None) -> Trajectory:
    """Integrate from state.time to t_end, sampling at t_eval if given.

    drive=None holds the static Rabi frequencies from params; a
    StirapSchedule makes them time dependent, and integration is split at
    the schedule breakpoints so discontinuities never sit inside a step.
    """
    t_start = state.time
    if t_end <= t_start:
        raise ValueError("t_end must exceed the state time")
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if t_eval.size and (t_eval[0] < t_start or t_eval[-1] > t_end):
            raise ValueError("t_eval must lie within [state.time, t_end]")
    n = cloud.atom_count
    if n == 0:
        times = (t_eval if t_eval is not None
                 else np.array([t_start, t_end]))
        return Trajectory(times=times, packed=np.zeros((times.size, 0)),
                          n_atoms=0, params=params, schedule=drive)

    packed_rhs = _make_packed_rhs(cloud, matrices, params, drive)
    breaks = [t_start]
    if drive is not None:
        for tb in (drive.t0, drive.tf):
            if t_start < tb < t_end:
                breaks.append(tb)
    breaks.append(t_end)

    y = state.to_packed()
    times_out = []
    packed_out = []
    if t_eval is not None and t_eval.size and t_eval[0] == t_start:
        times_out.append(t_start)
        packed_out.append(y.copy())
    for a, b in zip(breaks[:-1], breaks[1:]):
        if t_eval is None:
            seg_eval = None
            emit = None
        else:
            seg = t_eval[(t_eval > a) & (t_eval <= b)]
            # the segment endpoint is always integrated to, so the next
            # segment starts exactly at its breakpoint
            if seg.size == 0 or seg[-1] < b:
                seg_eval = np.append(seg, b)
                emit = seg.size
            else:
                seg_eval = seg
                emit = seg.size
        sol = solve_ivp(packed_rhs, (a, b), y, method="RK45",
                        t_eval=seg_eval, rtol=tolerances.rtol,
                        atol=tolerances.atol)
        if not sol.success:
            t_bad = float(sol.t[-1]) if sol.t.size else a
            raise StiffnessError(
                f"integration failed at t = {t_bad}: {sol.message}",
                t_reached=t_bad)
        y = sol.y[:, -1].copy()
        if emit is None:
            times_out.extend(sol.t.tolist())
            packed_out.extend(sol.y.T)
        else:
            times_out.extend(sol.t[:emit].tolist())
            packed_out.extend(sol.y[:, :emit].T)
    times = np.array(times_out)
    packed = np.array(packed_out) if packed_out else np.zeros((0, 8 * n))
    if t_eval is None:
        # drop duplicated segment boundaries
        keep = np.concatenate([[True], np.diff(times) > 0])
        times = times[keep]
        packed = packed[keep]
    traj = Trajectory(times=times, packed=packed, n_atoms=n, params=params,
                      schedule=drive)
    _physicality_check(packed, n)
    return traj


@dataclass
class SteadyStateResult:
    state: EnsembleState
    residual: float
    t_reached: float


def solve_steady_state(cloud: CloudGeometry, matrices: InteractionMatrices,
                       params: LambdaParams,
                       tolerances: Tolerances = DEFAULT_TOLERANCES,
                       ) -> SteadyStateResult:
    """March the static-drive dynamics from all-|1> until the derivative
    max-norm falls below tolerances.steady_residual.

    Raises ConvergenceError (with the residual history) if the horizon
    tolerances.t_max is reached first.
    """
    n = cloud.atom_count
    if n == 0:
        return SteadyStateResult(state=EnsembleState.ground(0),
                                 residual=0.0, t_reached=0.0)
    packed_rhs = _make_packed_rhs(cloud, matrices, params, None)
    y0 = EnsembleState.ground(n).to_packed()
    # step error control must sit below the residual target, otherwise the
    # derivative max-norm stalls at the discretization noise floor
    rtol = max(min(tolerances.rtol, tolerances.steady_residual / 30.0), 1e-13)
    atol = min(tolerances.atol, 0.01 * rtol)
    solver = RK45(packed_rhs, 0.0, y0, t_bound=tolerances.t_max,
                  rtol=rtol, atol=atol)
    history = []
    residual = float(np.max(np.abs(solver.f))) if n else 0.0
    history.append((0.0, residual))
    if residual < tolerances.steady_residual:
        return SteadyStateResult(state=EnsembleState.ground(n),
                                 residual=residual, t_reached=0.0)
    while True:
        message = solver.step()
        # solver.f is the derivative at the accepted point (FSAL)
        residual = float(np.max(np.abs(solver.f)))
        history.append((float(solver.t), residual))
        if residual < tolerances.steady_residual:
            break
        if solver.status == "failed":
            raise StiffnessError(f"steady-state march failed at t = {solver.t}: "
                                 f"{message}", t_reached=float(solver.t))
        if solver.status == "finished":
            raise ConvergenceError(
                f"residual {residual:.3e} above {tolerances.steady_residual:.1e} "
                f"at the t_max horizon {tolerances.t_max}", history)
    state = EnsembleState.from_packed(solver.y, time=float(solver.t))
    _physicality_check(solver.y, n)
    return SteadyStateResult(state=state, residual=residual,
                             t_reached=float(solver.t))


def trajectory_csv(traj: Trajectory, path) -> None:
    """Write t_gamma, mean_s11, mean_s22, mean_s33, omega1, omega2 rows."""
    o1, o2 = traj.drive_waveforms()
    m11, m22, m33 = traj.mean_s11, traj.mean_s22, traj.mean_s33
    with open(path, "w") as fh:
        fh.write("t_gamma,mean_s11,mean_s22,mean_s33,omega1,omega2\n")
        for i, t in enumerate(traj.times):
            row = [t, m11[i], m22[i], m33[i], o1[i], o2[i]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def state_csv(state: EnsembleState, path) -> None:
    """Per-atom steady-state dump for debugging."""
    with open(path, "w") as fh:
        fh.write("atom_index,s11,s22,s33,re_s13,im_s13,re_s23,im_s23,"
                 "re_s12,im_s12\n")
        s33 = state.s33
        for j in range(state.n_atoms):
            row = [state.s11[j], state.s22[j], s33[j],
                   state.s13[j].real, state.s13[j].imag,
                   state.s23[j].real, state.s23[j].imag,
                   state.s12[j].real, state.s12[j].imag]
            fh.write(str(j) + "," + ",".join(repr(float(v)) for v in row)
                     + "\n")
