"""Numerical homogenization of monotone operators in periodically perforated domains."""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    CellGeometry,
    PeriodicMap,
    TriangulatedDomain,
    macro_mesh,
    mesh_unit_cell,
    periodic_pairing,
    tile_perforated_domain,
)
from .models import (  # noqa: E402
    BoundaryFluxModel,
    FluxModel,
    SourceTerm,
    centred,
    evaluate_boundary_flux,
    evaluate_flux,
    mean_zero_offsets,
    verify_assumptions,
)

__all__ = [
    "BoundaryFluxModel",
    "CellGeometry",
    "FluxModel",
    "PeriodicMap",
    "SourceTerm",
    "TriangulatedDomain",
    "centred",
    "evaluate_boundary_flux",
    "evaluate_flux",
    "macro_mesh",
    "mean_zero_offsets",
    "mesh_unit_cell",
    "periodic_pairing",
    "tile_perforated_domain",
    "verify_assumptions",
]
