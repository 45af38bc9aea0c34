"""Desk-scale laboratory for displacement fields with explicit jump sets.

Core objects: grid displacement fields with jump facets, one-dimensional
slice variation measures, a constructive rigid-motion fitter on cubes,
multiscale good/bad cube partitions with motion clustering, and the
compactness / lower-semicontinuity experiment harness.
"""

from .errors import (
    ClusteringAmbiguityError,
    ConfigError,
    DependencyError,
    EmptySliceError,
    FacetAmbiguityError,
    GbdLabError,
    OutsideDomainError,
    PartitionConstructionError,
    ResolutionError,
    SelectionFailureError,
    SequenceSpecError,
)
from .fields import (
    CaccioppoliPartition,
    DisplacementField,
    Domain,
    DyadicGrid,
    JumpFacet,
    PiecewiseRigidMotion,
    RigidMotion,
    axis_facet,
    dyadic_cubes,
    evaluate,
    perimeter,
)
from .slicing import (
    SliceFamily,
    SliceFunction,
    SliceMeasures,
    default_directions,
    directional_measure,
    dominating_measure,
    extract_slice,
    gradient_identity_check,
    jump_surface_measure,
    line_measure,
    small_jump_variation,
)
from .rigidity import (
    DEFAULT_FIT_CONSTANT,
    CubeFit,
    blocked,
    calibrate_fit_constant,
    pk_fit,
    pk_verify,
)
from .partition import (
    MotionSequenceClass,
    ScaleClassification,
    build_partition,
    classify_cubes,
    cluster_motions,
    stabilize_classification,
    verify_divergence,
)
from .compactness import (
    ConvergenceReport,
    SequenceSpec,
    cauchy_check,
    convergence_check,
    energy_report,
    generate_sequence,
    lsc_check,
    truncate,
)

__version__ = "0.1.0"
