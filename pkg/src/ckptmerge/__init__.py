"""ckptmerge: combine fine-tuned variants of a shared base model into one
checkpoint, via parameter-space averaging, task-vector arithmetic, or
low-rank task-subspace reconstruction."""

from .checkpoint import (
    Checkpoint,
    CompatibilityReport,
    TensorData,
    check_compatibility,
    load_checkpoint,
    save_checkpoint,
)
from .engine import dispatch, inspect_checkpoint, run_merge
from .errors import (
    BaseMismatch,
    DegenerateInput,
    EmptyInput,
    FormatError,
    IllConditioned,
    InvalidParameter,
    MergeError,
    MissingField,
    NumericalError,
    StructureMismatch,
    UnknownMethod,
    UnsupportedDtype,
    ValidationError,
)
from .linalg import (
    AGGRESSIVE_TRIPLE,
    QUINTIC_SCHEDULE,
    ConcatenatedFactors,
    TruncatedSvd,
    block_concat,
    boost_singular_values,
    max_principal_angle,
    newton_schulz_orthogonalize,
    procrustes_orthogonalize,
    reconstruct,
    stable_rank,
    svd,
    truncate,
)
from .merge_ps import PsMergeConfig, karcher_mean, model_stock, multi_slerp, soup
from .merge_subspace import (
    SubspaceMergeConfig,
    boosted_tsv_merge,
    iso_c,
    iso_cts,
    tsv_merge,
)
from .merge_tau import TauMergeConfig, pcb, sce, task_arithmetic, ties
from .recipe import MergeRecipe, parse_recipe, serialize_recipe
from .report import MergeReport, TensorRecord
from .synth import SynthSpec, parse_synth_spec, results_csv, run_suite
from .taskvec import (
    TaskVector,
    TensorClass,
    TensorKind,
    apply_task_vector,
    classify_tensor,
    compute_task_vector,
    linear_combine,
    task_vector_to_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "AGGRESSIVE_TRIPLE",
    "BaseMismatch",
    "Checkpoint",
    "CompatibilityReport",
    "ConcatenatedFactors",
    "DegenerateInput",
    "EmptyInput",
    "FormatError",
    "IllConditioned",
    "InvalidParameter",
    "MergeError",
    "MergeRecipe",
    "MergeReport",
    "MissingField",
    "NumericalError",
    "PsMergeConfig",
    "QUINTIC_SCHEDULE",
    "StructureMismatch",
    "SubspaceMergeConfig",
    "SynthSpec",
    "TaskVector",
    "TauMergeConfig",
    "TensorClass",
    "TensorData",
    "TensorKind",
    "TensorRecord",
    "TruncatedSvd",
    "UnknownMethod",
    "UnsupportedDtype",
    "ValidationError",
    "apply_task_vector",
    "block_concat",
    "boost_singular_values",
    "boosted_tsv_merge",
    "check_compatibility",
    "classify_tensor",
    "compute_task_vector",
    "dispatch",
    "inspect_checkpoint",
    "iso_c",
    "iso_cts",
    "karcher_mean",
    "linear_combine",
    "load_checkpoint",
    "max_principal_angle",
    "model_stock",
    "multi_slerp",
    "newton_schulz_orthogonalize",
    "parse_recipe",
    "parse_synth_spec",
    "pcb",
    "procrustes_orthogonalize",
    "reconstruct",
    "results_csv",
    "run_merge",
    "run_suite",
    "save_checkpoint",
    "sce",
    "serialize_recipe",
    "soup",
    "stable_rank",
    "svd",
    "task_arithmetic",
    "task_vector_to_checkpoint",
    "ties",
    "truncate",
    "tsv_merge",
]
