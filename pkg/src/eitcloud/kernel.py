"""Pairwise light-mediated couplings and dense interaction matrices.

Two kernels are provided for each optical transition: the scalar
approximation G = gamma * exp(i k r) / (i k r) and the full vectorial
dipole kernel for dipoles oriented along the cloud axis. Mode "none"
builds exact zero matrices through the same assembly path, which is the
independent-atom model.

Couplings are dimensionless: rates in units of the total linewidth,
distances in units of 1/k1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import CloudGeometry

KERNEL_MODES = ("scalar", "vectorial", "none")


def _check_mode(mode: str) -> str:
    if mode not in KERNEL_MODES:
        raise ValueError(f"kernel_mode must be one of {KERNEL_MODES}, "
                         f"got {mode!r}")
    return mode


@dataclass(frozen=True, eq=False)
class InteractionMatrices:
    """Dense complex N x N couplings for the two transitions, zero diagonal."""

    g1: np.ndarray
    g2: np.ndarray
    mode: str

    @property
    def n_atoms(self) -> int:
        return self.g1.shape[0]


def scalar_green(gamma_n, k_r):
    """Scalar kernel gamma_n * exp(i k_r) / (i k_r); k_r > 0 required."""
    k_r = np.asarray(k_r, dtype=float)
    if np.any(k_r <= 0.0):
        raise ValueError("scalar_green requires k_r > 0")
    ikr = 1j * k_r
    return gamma_n * np.exp(ikr) / ikr


def vectorial_green(gamma_n, k_r, z_over_r):
    """Axial-dipole kernel.

    (3 gamma_n / 2) * (e^{ikr}/(ikr)) * [1 + i/kr - 1/(kr)^2
        - (z/r)^2 (1 + 3i/kr - 3/(kr)^2)]
    """
    k_r = np.asarray(k_r, dtype=float)
    z_over_r = np.asarray(z_over_r, dtype=float)
    if np.any(k_r <= 0.0):
        raise ValueError("vectorial_green requires k_r > 0")
    if np.any(np.abs(z_over_r) > 1.0 + 1e-12):
        raise ValueError("vectorial_green requires |z_over_r| <= 1")
    inv = 1.0 / k_r
    inv2 = inv * inv
    bracket = (1.0 + 1j * inv - inv2
               - z_over_r**2 * (1.0 + 3j * inv - 3.0 * inv2))
    return 1.5 * gamma_n * np.exp(1j * k_r) / (1j * k_r) * bracket


def _pair_couplings(mode: str, gamma_n: float, k_r: np.ndarray,
                    z_over_r: np.ndarray) -> np.ndarray:
    if mode == "scalar":
        return scalar_green(gamma_n, k_r)
    if mode == "vectorial":
        return vectorial_green(gamma_n, k_r, z_over_r)
    # independent atoms: couplings are identically zero
    return np.zeros(k_r.shape, dtype=complex)


def build_matrices(cloud: CloudGeometry, params) -> InteractionMatrices:
    """Assemble G1 (wavenumber k1, gamma1) and G2 (k2, gamma2).

    Each unordered pair is evaluated once and written to both (j,l) and
    (l,j), so the matrices are symmetric bit for bit. The diagonal is zero:
    the mean-field sum excludes the self term.
    """
    mode = _check_mode(params.kernel_mode)
    n = cloud.atom_count
    g1 = np.zeros((n, n), dtype=complex)
    g2 = np.zeros((n, n), dtype=complex)
    if n >= 2:
        iu, il = np.triu_indices(n, k=1)
        diff = cloud.positions[iu] - cloud.positions[il]
        r = np.sqrt(np.sum(diff * diff, axis=1))
        z_over_r = diff[:, 2] / r
        c1 = _pair_couplings(mode, params.gamma1_frac, r, z_over_r)
        c2 = _pair_couplings(mode, params.gamma2_frac,
                             params.k2_over_k1 * r, z_over_r)
        g1[iu, il] = c1
        g1[il, iu] = c1
        g2[iu, il] = c2
        g2[il, iu] = c2
    return InteractionMatrices(g1=g1, g2=g2, mode=mode)
