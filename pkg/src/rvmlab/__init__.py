"""rvmlab: retarded Vlasov-Maxwell laboratory.

Evaluates retarded electromagnetic fields of compactly supported plasma
sources, extracts the radiation field at future null infinity, tracks
Bondi-type cone masses, and verifies the algebraic identities and
conservation laws of the underlying theory as numerical residuals.
"""

from .geometry import (
    BallGrid,
    ConeCoordinates,
    DirectionGrid,
    ball_quadrature,
    omega_domain,
    shell_quadrature,
    sphere_quadrature,
)
from .sources import (
    EmissionWindow,
    HistoryWindowError,
    ParticleEnsemble,
    SourceHistory,
    SpeciesParams,
    analytic_dipole,
    continuity_residual,
    gaussian_blob,
    moments_from_ensemble,
    read_ensemble,
    rotated,
    superpose,
    support_radius,
    vacuum_source,
    write_ensemble,
)
from .fields import (
    FieldValue,
    PoyntingSample,
    Ray,
    Resolution,
    bounding_domain,
    decay_diagnostic,
    eval_advanced,
    eval_many,
    eval_retarded,
    maxwell_residuals,
    poynting,
)

__version__ = "0.1.0"
