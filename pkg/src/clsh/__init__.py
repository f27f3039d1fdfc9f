"""clsh: similarity search in Hamming space without false negatives.

Mask families with a structural covering guarantee (every point within the
search radius shares at least one hash bucket with the query), the classical
bit-sampling LSH baseline for comparison, and experiment harnesses.
"""

__version__ = "0.1.0"

from .bits import (
    BitVector,
    PointSet,
    hamming_distance,
    hamming_weight,
    read_points,
    write_points,
)
from .families import (
    FamilyParams,
    MappingTable,
    MaskFamily,
    SchemeChoice,
    build_basic_masks,
    build_partitioned_masks,
    build_prime_masks,
    collision_expectation,
    family_weight,
    is_r_covering,
    next_prime_above,
    overhead_estimate,
    read_family,
    sample_mapping,
    select_scheme,
    write_family,
)
from .index import (
    CollisionStats,
    Index,
    QueryOutcome,
    build_index,
    build_index_from_family,
    load_index,
    nearest_neighbor,
    query_all_within,
    query_near,
    save_index,
)
from .baseline import (
    build_classical,
    classical_collision_prob,
    classical_false_negative_prob,
    classical_tuning,
)
from .harness import (
    ExperimentSpec,
    brute_force_nearest,
    brute_force_within,
    gen_random,
    gen_worst_case,
    plant_near,
    run_experiment,
)

__all__ = [name for name in dir() if not name.startswith("_")]
