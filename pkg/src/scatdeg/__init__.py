"""scatdeg: the topological degree of classical potential scattering.

Integrates Hamiltonian scattering trajectories for Gaussian/polynomial bump
and power-law singular potentials, regularizes collisions at the exponents
alpha = 2n/(n+1), extracts asymptotic scattering data, and computes the
degree of the compactified final-direction map by four independent routes
(planar winding, triangulated sphere areas, central deflection quadrature,
Lagrange-projection preimage counting).
"""

from .dynamics import (
    IntegratorConfig,
    PericentreData,
    PhaseState,
    StopCondition,
    Trajectory,
    integrate,
    integrate_regularized,
    pericentre,
    regularizable_order,
)
from .degree import (
    DeflectionResult,
    DegreeEstimate,
    LagrangeProjection,
    deflection_quadrature,
    degree_central,
    degree_sphere,
    degree_winding,
    lagrange_degree,
)
from .hill import HillAnalysis, hill_analysis
from .potential import (
    GaussianBump,
    PolyBump,
    PotentialModel,
    SingularPower,
    VirialData,
    evaluate,
    load_model,
    model_from_dict,
    model_from_json,
    virial_radius,
    vmax,
)
from .scattering import (
    EnergyScanReport,
    SamplePlan,
    ScatterConfig,
    ScatterRecord,
    final_direction_map,
    launch_state,
    scatter_one,
    trapping_scan,
)
from .symbolic import (
    Itinerary,
    ItineraryWitness,
    check_nonshadowing,
    effective_radii,
    realize_itinerary,
    visit_log,
)

__version__ = "0.1.0"
