"""decmpc: robust affine policy synthesis for networks of coupled, constrained,
uncertain linear systems under centralized, partially nested, and local
(communicated forecast set) information structures."""

from .affine import DecAffine, UncertainAffineExpr, expr_add, expr_compose, expr_scale
from .conic import (
    ConicProgram,
    CvxoptSolver,
    HighsSolver,
    ProgramBuilder,
    SolveResult,
    SolverHandle,
    default_solver,
    export_program_text,
)
from .model import (
    AgentModel,
    ConeSpec,
    Constraints,
    CostAtom,
    CostSpec,
    CouplingGraph,
    Network,
    PolyhedralSet,
    PrimitiveBlock,
    PrimitiveSetSpec,
    StageDynamics,
    StackedDynamics,
    box_set,
    check_bounded,
    make_primitive,
    norm_cost,
    precedent_closure,
    stack_dynamics,
)
from .robust import (
    RobustConstraint,
    UncertaintyBlock,
    add_robust_upper_bounds,
    dualize_cone_constraint,
    dualize_linear_row,
    enumerate_vertices,
    epigraph_objective,
    primitive_vertices,
    sample_polytope,
    worst_case_value,
)

__version__ = "0.1.0"
