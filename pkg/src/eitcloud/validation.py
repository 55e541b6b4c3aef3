"""Quick self-check battery behind the `validate` subcommand.

Each check returns (name, passed, detail). The battery covers the core
invariants cheaply: geometry reproducibility, kernel symmetry and limits,
the transparency fixed point, the single-atom closed form, quadrature
exactness, and drive continuity.
"""
from __future__ import annotations

import numpy as np

from .cloud import CloudSpec, default_detector, sample_cloud
from .dynamics import (EnsembleState, LambdaParams, StirapSchedule,
                       Tolerances, dark_state, effective_field, rhs,
                       solve_steady_state, stirap_drives)
from .kernel import build_matrices, scalar_green, vectorial_green
from .observables import transmission
from .oracle import sigma33_steady


def _check_cloud():
    a = sample_cloud(10.0, 10.0, 0.005, seed=7, min_pair_separation_k=0.5)
    b = sample_cloud(10.0, 10.0, 0.005, seed=7, min_pair_separation_k=0.5)
    same = np.array_equal(a.positions, b.positions)
    d = a.positions[:, None, :] - a.positions[None, :, :]
    r = np.sqrt(np.sum(d * d, axis=2))
    np.fill_diagonal(r, np.inf)
    ok = same and r.min() >= 0.5
    return ("cloud reproducibility and exclusion", ok,
            f"N={a.atom_count}, min pair distance {r.min():.3f}")


def _check_kernel_values():
    g = scalar_green(0.5, 2.0 * np.pi)
    ref = -1j / (4.0 * np.pi)
    err1 = abs(g - ref)
    ratio = abs(vectorial_green(0.5, 200.0, 0.0) / scalar_green(0.5, 200.0))
    err2 = abs(ratio - 1.5)
    ok = err1 < 1e-15 and err2 < 10**-2.5
    return ("kernel closed-form values and far-field ratio", ok,
            f"scalar err {err1:.1e}, |ratio - 3/2| = {err2:.1e}")


def _check_kernel_symmetry():
    cloud = sample_cloud(8.0, 8.0, 0.02, seed=3)
    params = LambdaParams(omega1=0.1, omega2=0.5, kernel_mode="vectorial")
    m = build_matrices(cloud, params)
    ok = (np.array_equal(m.g1, m.g1.T) and np.array_equal(m.g2, m.g2.T)
          and np.all(np.diag(m.g1) == 0) and np.all(np.diag(m.g2) == 0))
    zero = build_matrices(cloud, LambdaParams(omega1=0.1, omega2=0.5,
                                              kernel_mode="none"))
    ok = ok and not np.any(zero.g1) and not np.any(zero.g2)
    return ("kernel symmetry, zero diagonal, none mode", ok,
            f"N={cloud.atom_count}")


def _check_dark_state():
    worst = 0.0
    for mode in ("scalar", "vectorial"):
        params = LambdaParams(omega1=0.23, omega2=0.41, delta1=0.3,
                              delta2=0.3, kernel_mode=mode)
        cloud = sample_cloud(6.0, 6.0, 0.03, seed=11)
        matrices = build_matrices(cloud, params)
        state = dark_state(cloud, params)
        f1 = effective_field(state, matrices, params, cloud, 1)
        f2 = effective_field(state, matrices, params, cloud, 2)
        deriv = rhs(state, f1, f2, params)
        worst = max(worst, float(np.max(np.abs(deriv.to_packed()))))
    ok = worst < 1e-12
    return ("dark-state fixed point", ok, f"max |rhs| = {worst:.2e}")


def _check_single_atom():
    params = LambdaParams(omega1=0.1, omega2=0.5, delta1=0.125)
    cloud = sample_cloud(1.0, 1.0, 1.0 / np.pi, seed=1)  # one atom
    matrices = build_matrices(cloud, params)
    tol = Tolerances(rtol=1e-12, atol=1e-14, steady_residual=1e-12)
    result = solve_steady_state(cloud, matrices, params, tol)
    got = float(result.state.s33[0])
    ref = sigma33_steady(params)
    err = abs(got - ref) / ref
    ok = cloud.atom_count == 1 and err < 1e-6
    return ("single-atom steady state vs closed form", ok,
            f"rel err {err:.2e}")


def _check_empty_transmission():
    cloud = sample_cloud(20.0, 20.0, 1e-9, seed=5)
    params = LambdaParams(omega1=0.1, omega2=0.5)
    det = default_detector(cloud.radius_kR, cloud.thickness_kL)
    t = transmission(EnsembleState.ground(0), cloud, params, det)
    ok = cloud.atom_count == 0 and abs(t - 1.0) < 1e-12
    return ("empty-cloud transmission is unity", ok, f"|T-1| = {abs(t-1):.1e}")


def _check_drives():
    s = StirapSchedule(omega_max=0.5, t0=10.0, tr=60.0)
    eps = 1e-9
    jumps = []
    for t in (s.t0, s.tf):
        lo = stirap_drives(t - eps, s)
        hi = stirap_drives(t + eps, s)
        jumps.append(max(abs(lo[0] - hi[0]), abs(lo[1] - hi[1])))
    ok = max(jumps) < 1e-6 and stirap_drives(0.0, s) == (0.0, 0.5) \
        and stirap_drives(1e9, s) == (0.5, 0.0)
    return ("shifted pulse continuity and plateaus", ok,
            f"max jump {max(jumps):.1e}")


def run_all():
    checks = (_check_cloud, _check_kernel_values, _check_kernel_symmetry,
              _check_dark_state, _check_single_atom,
              _check_empty_transmission, _check_drives)
    return [chk() for chk in checks]
