"""Coupled-dipole simulator for transmission and population transfer in
disordered three-level atom ensembles."""

__version__ = "0.1.0"

from .cloud import (CloudGeometry, CloudSpec, DetectorDisk, PlacementError,
                    atom_count, default_detector, derive_seed, sample_cloud)
from .kernel import (KERNEL_MODES, InteractionMatrices, build_matrices,
                     scalar_green, vectorial_green)
from .dynamics import (ConvergenceError, EnsembleState, LambdaParams,
                       PhysicalityWarning, StiffnessError, StirapSchedule,
                       Tolerances, dark_state, effective_field, integrate,
                       rhs, solve_steady_state, stirap_drives)
from .observables import (RealizationPlan, SpectrumResult, StirapTrace,
                          WindowMetrics, WindowShapeError, ensemble_stats,
                          intensity, spectrum, stirap_ensemble, total_field,
                          transmission, window_metrics)
from .oracle import (DegenerateParameterError, optical_thickness,
                     scattering_cross_section, sigma33_steady)

__all__ = [
    "CloudGeometry", "CloudSpec", "DetectorDisk", "PlacementError",
    "atom_count", "default_detector", "derive_seed", "sample_cloud",
    "KERNEL_MODES", "InteractionMatrices", "build_matrices", "scalar_green",
    "vectorial_green",
    "ConvergenceError", "EnsembleState", "LambdaParams",
    "PhysicalityWarning", "StiffnessError", "StirapSchedule", "Tolerances",
    "dark_state", "effective_field", "integrate", "rhs",
    "solve_steady_state", "stirap_drives",
    "RealizationPlan", "SpectrumResult", "StirapTrace", "WindowMetrics",
    "WindowShapeError", "ensemble_stats", "intensity", "spectrum",
    "stirap_ensemble", "total_field", "transmission", "window_metrics",
    "DegenerateParameterError", "optical_thickness",
    "scattering_cross_section", "sigma33_steady",
    "__version__",
]
