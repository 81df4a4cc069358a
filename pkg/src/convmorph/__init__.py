"""convmorph: function-preserving morphing of a convolutional layer into an
arbitrary single-source, single-sink DAG module of convolutional layers."""

from ._kernels import BACKEND
from .engine import (
    MorphRequest,
    MorphResult,
    Strategy,
    StrategyError,
    morph,
    verify_equation,
    verify_function,
)
from .executor import (
    BatchNormOp,
    ConvOp,
    LayeredModule,
    PactOp,
    batchnorm,
    forward,
    identity_batchnorm,
    linear_module,
    pact,
    with_identity_wrappers,
)
from .fixtures import FIXTURES, fixture, list_fixtures
from .graph import (
    Edge,
    GraphError,
    ModuleGraph,
    PathExplosionError,
    UnassignedEdgeError,
    Vertex,
    load_module,
    save_module,
)
from .reduction import (
    Classification,
    MorphStep,
    ReductionResult,
    StepKind,
    check_type_i,
    check_type_ii,
    classify,
    reduce_module,
    replay_topology,
)
from .solver import (
    InfeasibleError,
    SolveReport,
    SolverConfig,
    SplitError,
    deconv_operator,
    deconv_solve,
    decompose_type_i,
    solve_irreducible,
    split_type_ii,
)
from .tensors import (
    Blob,
    DimensionError,
    Filter,
    PaddingError,
    add_filters,
    compose,
    conv_blob,
    identity_filter,
    random_filter,
    read_blob,
    read_filter,
    read_mten,
    write_mten,
    zero_pad,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Blob",
    "BatchNormOp",
    "Classification",
    "ConvOp",
    "DimensionError",
    "Edge",
    "FIXTURES",
    "Filter",
    "GraphError",
    "InfeasibleError",
    "LayeredModule",
    "ModuleGraph",
    "MorphRequest",
    "MorphResult",
    "MorphStep",
    "PactOp",
    "PaddingError",
    "PathExplosionError",
    "ReductionResult",
    "SolveReport",
    "SolverConfig",
    "SplitError",
    "StepKind",
    "Strategy",
    "StrategyError",
    "UnassignedEdgeError",
    "Vertex",
    "add_filters",
    "batchnorm",
    "check_type_i",
    "check_type_ii",
    "classify",
    "compose",
    "conv_blob",
    "deconv_operator",
    "deconv_solve",
    "decompose_type_i",
    "fixture",
    "forward",
    "identity_batchnorm",
    "identity_filter",
    "linear_module",
    "list_fixtures",
    "load_module",
    "morph",
    "pact",
    "random_filter",
    "read_blob",
    "read_filter",
    "read_mten",
    "reduce_module",
    "replay_topology",
    "save_module",
    "solve_irreducible",
    "split_type_ii",
    "verify_equation",
    "verify_function",
    "with_identity_wrappers",
    "write_mten",
    "zero_pad",
]
