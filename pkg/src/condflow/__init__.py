"""Conductivities that make a prescribed gradient field conservative.

Given a potential u, the package reconstructs positive scalar conductivities
sigma with div(sigma grad u) = 0 by transporting boundary data along the
gradient flow of u, covers the piecewise-linear case through admissible cell
decompositions and cone fans with exact rational arithmetic, and verifies any
candidate pair weakly against compactly supported bump test functions.
"""
from .errors import (
    CertificationError,
    CondflowError,
    DomainExitError,
    EvaluationDomainError,
    ExpressionSyntaxError,
    FacePointError,
    FanStructureError,
    HitTimeError,
    NotRealizableError,
    ScenarioError,
    ScenarioValidationError,
    TopologyError,
    UnknownVariableError,
)
from .fans import (
    ConeFan,
    FanPotential,
    SeparatedConductivity,
    SeparatedPotential,
    SplitFan,
    fan_conductivity,
    fan_propagation_oracle,
    fan_sigma_closed_form,
    fan_to_cells,
    loop_constraint_holds,
    separated_sigma,
    split_fan,
    validate_fan,
)
from .fields import (
    AffinePotential,
    ExpressionField,
    GradientCertificate,
    MollifiedField,
    PotentialField,
    SampledGridField,
    certify,
    check_gradient_bound,
    mollify,
)
from .flow import (
    FlowDensityReport,
    LevelSetHit,
    Trajectory,
    TransitTimes,
    estimate_flow_density,
    flow_to_level_set,
    hit_time,
    integrate_flow,
    semigroup_defect,
    transit_times,
)
from .geometry import Box
from .piecewise import (
    Cell,
    ChainPlan,
    Classification,
    Face,
    PiecewiseConductivity,
    build_faces_auto,
    build_piecewise_sigma,
    check_admissible,
    classify_face,
    flux_match,
    transport_boundary_value,
)
from .reconstruct import (
    ConductivityField,
    ExpressionConductivity,
    FlowConductivity,
    SampledConductivity,
    export_sigma_table,
    flow_relation_residual,
    import_sigma_table,
    reconstruct_on_grid,
    reconstruct_sigma,
)
from .scenario import Scenario, load_scenario, run_scenario
from .verify import (
    BumpTestFunction,
    TestFunctionSet,
    WeakResidualReport,
    default_bump_set,
    weak_residual,
)

__version__ = "0.1.0"
