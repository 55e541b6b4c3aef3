"""Disordered cylindrical cloud sampling and detector geometry.

All lengths are dimensionless, scaled by the probe wavenumber k1. The cloud
is a homogeneous cylinder of radius R and thickness L centered at the origin
with its axis along z; the detector is a coaxial disk past the exit face.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Counter-based generator so per-realization streams are independent and the
# algorithm can be recorded in the run manifest.
RNG_ALGORITHM = "numpy-philox-4x64-10"

MAX_PLACEMENT_ATTEMPTS = 10_000
DEFAULT_MIN_SEPARATION = 0.05


class PlacementError(RuntimeError):
    """Raised when the exclusion distance cannot be satisfied."""


def atom_count(radius_kR: float, thickness_kL: float, density: float) -> int:
    """Number of atoms N = round(rho * pi * R^2 * L) in k1 units."""
    return int(round(density * np.pi * radius_kR**2 * thickness_kL))


def derive_seed(master_seed: int, *indices: int) -> int:
    """Per-task 64-bit seed from a master seed and integer indices.

    Uses SeedSequence spawn keys, so the mapping is deterministic and
    independent of how many tasks run or in which order.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(indices))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True, eq=False)
class CloudGeometry:
    radius_kR: float
    thickness_kL: float
    density: float
    atom_count: int
    positions: np.ndarray  # (N, 3) float64, columns k1*x, k1*y, k1*z
    seed: int
    min_pair_separation_k: float

    def manifest_dict(self) -> dict:
        return {
            "radius_kR": float(self.radius_kR),
            "thickness_kL": float(self.thickness_kL),
            "density": float(self.density),
            "atom_count": int(self.atom_count),
            "seed": int(self.seed),
            "min_pair_separation_k": float(self.min_pair_separation_k),
            "rng_algorithm": RNG_ALGORITHM,
        }


@dataclass(frozen=True)
class CloudSpec:
    """Cloud parameters without positions; sample() draws a realization."""

    radius_kR: float
    thickness_kL: float
    density: float
    min_pair_separation_k: float = DEFAULT_MIN_SEPARATION

    @property
    def n_atoms(self) -> int:
        return atom_count(self.radius_kR, self.thickness_kL, self.density)

    def sample(self, seed: int) -> CloudGeometry:
        return sample_cloud(self.radius_kR, self.thickness_kL, self.density,
                            seed, self.min_pair_separation_k)


@dataclass(frozen=True)
class DetectorDisk:
    z0_k: float
    s_max_k: float
    radial_nodes: int = 64
    angular_nodes: int = 128

    def manifest_dict(self) -> dict:
        return {
            "z0_k": float(self.z0_k),
            "s_max_k": float(self.s_max_k),
            "radial_nodes": int(self.radial_nodes),
            "angular_nodes": int(self.angular_nodes),
        }


def default_detector(radius_kR: float, thickness_kL: float,
                     radial_nodes: int = 64,
                     angular_nodes: int = 128) -> DetectorDisk:
    """Disk at z0 = L/2 + 10 with s_max = 0.6 R (s_max < R required)."""
    return DetectorDisk(z0_k=0.5 * thickness_kL + 10.0,
                        s_max_k=0.6 * radius_kR,
                        radial_nodes=radial_nodes,
                        angular_nodes=angular_nodes)


def _draw_uniform(rng: np.random.Generator, n: int, radius: float,
                  thickness: float) -> np.ndarray:
    """n uniform points in the cylinder; sqrt transform keeps area uniform."""
    s = radius * np.sqrt(rng.random(n))
    phi = 2.0 * np.pi * rng.random(n)
    z = thickness * (rng.random(n) - 0.5)
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def sample_cloud(radius_kR: float, thickness_kL: float, density: float,
                 seed: int,
                 min_pair_separation_k: float = DEFAULT_MIN_SEPARATION,
                 ) -> CloudGeometry:
    """Sample N = round(rho pi R^2 L) positions uniform in the cylinder.

    Pairwise exclusion is enforced by resampling the newest point; each atom
    gets at most MAX_PLACEMENT_ATTEMPTS draws before PlacementError.
    """
    if radius_kR <= 0 or thickness_kL <= 0:
        raise ValueError("cylinder dimensions must be positive")
    if density < 0:
        raise ValueError("density must be non-negative")
    if min_pair_separation_k < 0:
        raise ValueError("min_pair_separation_k must be non-negative")
    n = atom_count(radius_kR, thickness_kL, density)
    rng = _rng(seed)
    if n == 0:
        positions = np.zeros((0, 3))
    elif min_pair_separation_k == 0.0:
        positions = _draw_uniform(rng, n, radius_kR, thickness_kL)
    else:
        d2_min = min_pair_separation_k**2
        positions = np.empty((n, 3))
        for j in range(n):
            for attempt in range(MAX_PLACEMENT_ATTEMPTS):
                p = _draw_uniform(rng, 1, radius_kR, thickness_kL)[0]
                if j == 0:
                    break
                d2 = np.min(np.sum((positions[:j] - p)**2, axis=1))
                if d2 >= d2_min:
                    break
            else:
                raise PlacementError(
                    f"could not place atom {j} of {n} after "
                    f"{MAX_PLACEMENT_ATTEMPTS} attempts "
                    f"(exclusion {min_pair_separation_k})")
            positions[j] = p
    return CloudGeometry(radius_kR=radius_kR, thickness_kL=thickness_kL,
                         density=density, atom_count=n, positions=positions,
                         seed=int(seed),
                         min_pair_separation_k=min_pair_separation_k)


def positions_csv(cloud: CloudGeometry, path) -> None:
    """Dump positions as CSV: atom_index, kx, ky, kz."""
    with open(path, "w") as fh:
        fh.write("atom_index,kx,ky,kz\n")
        for j, (x, y, z) in enumerate(cloud.positions):
            fh.write(f"{j},{float(x)!r},{float(y)!r},{float(z)!r}\n")
