"""Design and verification of media built by embedding small impedance particles."""

from .capacitance import SurfaceMesh, capacitance_mesh, icosphere, read_mesh
from .continuum import (
    FarFieldPattern,
    LSGrid,
    default_directions,
    exterior_field,
    far_field,
    far_field_total,
    self_cell_weight,
    solve_ls,
    solve_u0,
)
from .design import (
    ParticleRecipe,
    capacitance_ball,
    effective_capacitance,
    predicted_p,
    recipe_general,
    recipe_soft,
)
from .errors import (
    ConfigError,
    EmbedError,
    HardParticleError,
    PassivityError,
    PhysicsError,
    RecipeError,
    SmallnessError,
    SolverError,
)
from .greens import background_green, far_field_factor, free_space_g
from .manybody import (
    ParticleSet,
    SolveResult,
    check_smallness,
    evaluate_field,
    far_field_discrete,
    place_particles,
    relative_volume,
    solve_system,
)
from .medium import (
    BoxDomain,
    ComplexGridField,
    MediumSpec,
    p_from_target,
    potential_from_refraction,
    refraction_from_potential,
    validate_passivity,
)

__version__ = "0.1.0"
