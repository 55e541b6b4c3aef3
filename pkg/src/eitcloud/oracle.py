"""Closed-form single-atom results used as validation ground truth.

Steady-state excited population for a single driven three-level atom with
the control field on resonance (delta2 = 0), the scattering cross section
it implies, and the cylinder optical thickness. All rates in units of the
total linewidth, cross sections in units of 1/k1^2.
"""
from __future__ import annotations

import numpy as np


class DegenerateParameterError(ValueError):
    """The closed form is singular at the requested parameters."""


def sigma33_steady(params) -> float:
    """Steady-state excited population; delta2 is taken on resonance.

    The denominator is grouped by omega1^2 and omega2^2 factors, which
    avoids cancellation at small detunings.
    """
    o1sq = params.omega1**2
    o2sq = params.omega2**2
    dsq = params.delta1**2
    g1 = params.gamma1_frac
    g2 = params.gamma2_frac
    s = o1sq + o2sq
    num = 4.0 * dsq * o1sq * o2sq
    den = (g2 * o1sq * (4.0 * dsq + s * s)
           + o2sq * (g1 * (4.0 * dsq * (1.0 - 2.0 * o2sq)
                           + 16.0 * dsq * dsq + s * s)
                     + 8.0 * dsq * o1sq))
    if den == 0.0 or not np.isfinite(den):
        raise DegenerateParameterError(
            f"degenerate parameters: denominator = {den}")
    return num / den


def scattering_cross_section(params) -> float:
    """sigma_sc * k1^2 = pi (gamma1 / omega1)^2 sigma33."""
    if params.omega1 <= 0:
        raise DegenerateParameterError(
            "cross section needs a nonzero probe omega1")
    ratio = params.gamma1_frac / params.omega1
    return np.pi * ratio * ratio * sigma33_steady(params)


def optical_thickness(params, geometry, n_atoms: int | None = None) -> float:
    """b = (gamma1/omega1)^2 sigma33 N / (k1 R)^2 for the cylinder.

    geometry provides radius_kR and (via density and thickness) the atom
    number; pass n_atoms to override the count.
    """
    if params.omega1 <= 0:
        raise DegenerateParameterError(
            "optical thickness needs a nonzero probe omega1")
    if n_atoms is None:
        n_atoms = getattr(geometry, "atom_count", None)
        if n_atoms is None:
            n_atoms = geometry.n_atoms
    radius = geometry.radius_kR
    if radius <= 0:
        raise ValueError("geometry radius must be positive")
    ratio = params.gamma1_frac / params.omega1
    return ratio * ratio * sigma33_steady(params) * n_atoms / radius**2
