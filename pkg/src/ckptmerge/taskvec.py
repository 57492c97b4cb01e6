"""Task-vector algebra: differences against a base checkpoint, scaling,
sums, and classification of tensors for subspace treatment."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .checkpoint import Checkpoint, TensorData, check_compatibility, promoted_dtype
from .errors import BaseMismatch, EmptyInput, InvalidParameter, StructureMismatch


class TensorKind(Enum):
    MATRIX_2D = "matrix2d"
    FOLDED_ND = "foldednd"
    VECTOR_1D = "vector1d"
    SCALAR_0D = "scalar0d"


@dataclass(frozen=True)
class TensorClass:
    kind: TensorKind
    fold_shape: tuple[int, int] | None


def classify_tensor(t: TensorData) -> TensorClass:
    """Decide how a tensor enters matrix-subspace methods.

    N-D tensors (N >= 3) are matricized as [leading dim, everything else],
    the conventional folding for convolution kernels; 1-D/0-D tensors are
    handled element-wise.
    """
    ndim = len(t.shape)
    if ndim == 2:
        return TensorClass(TensorKind.MATRIX_2D, (t.shape[0], t.shape[1]))
    if ndim >= 3:
        return TensorClass(TensorKind.FOLDED_ND, (t.shape[0], math.prod(t.shape[1:])))
    if ndim == 1:
        return TensorClass(TensorKind.VECTOR_1D, None)
    return TensorClass(TensorKind.SCALAR_0D, None)


@dataclass
class TaskVector:
    """Per-tensor deltas against a base checkpoint.

    Structure (names/dtypes/shapes) matches the base exactly;
    base_fingerprint ties the deltas to the checkpoint they were computed
    against.
    """

    deltas: dict[str, TensorData]
    base_fingerprint: str
    label: str = ""

    def names(self) -> list[str]:
        return list(self.deltas)


def compute_task_vector(theta_t: Checkpoint, theta_0: Checkpoint, label: str = "") -> TaskVector:
    """delta = theta_t - theta_0, element-wise in working precision."""
    report = check_compatibility(theta_t, theta_0)
    if not report.compatible:
        raise StructureMismatch(f"checkpoints are not compatible: {report.mismatches}")
    deltas = {}
    for name, t in theta_t.tensors.items():
        base = theta_0.tensors[name]
        diff = t.to_working() - base.to_working()
        deltas[name] = TensorData.from_array(name, diff, base.dtype)
    return TaskVector(deltas=deltas, base_fingerprint=theta_0.fingerprint, label=label)


def apply_task_vector(theta_0: Checkpoint, tau: TaskVector, lam: float) -> Checkpoint:
    """theta* = theta_0 + lam * tau, emitted in the base checkpoint's dtypes."""
    if tau.base_fingerprint != theta_0.fingerprint:
        raise BaseMismatch(
            f"task vector {tau.label!r} was computed against a different base "
            f"({tau.base_fingerprint[:12]}... != {theta_0.fingerprint[:12]}...)"
        )
    tensors = {}
    for name, base in theta_0.tensors.items():
        delta = tau.deltas[name]
        out = base.to_working() + promoted_dtype(base.dtype).type(lam) * delta.to_working()
        tensors[name] = TensorData.from_array(name, out, base.dtype)
    return Checkpoint(tensors=tensors, metadata=dict(theta_0.metadata))


def linear_combine(taus: list[TaskVector], weights: list[float]) -> TaskVector:
    """Per tensor, sum_t w_t * tau_t."""
    if not taus:
        raise EmptyInput("linear_combine needs at least one task vector")
    if len(taus) != len(weights):
        raise InvalidParameter(f"{len(taus)} task vectors but {len(weights)} weights")
    fp = taus[0].base_fingerprint
    for tau in taus[1:]:
        if tau.base_fingerprint != fp:
            raise BaseMismatch("task vectors come from different base checkpoints")
    deltas = {}
    for name, first in taus[0].deltas.items():
        acc = np.zeros(first.shape, dtype=promoted_dtype(first.dtype))
        for tau, w in zip(taus, weights):
            acc += acc.dtype.type(w) * tau.deltas[name].to_working()
        deltas[name] = TensorData.from_array(name, acc, first.dtype)
    return TaskVector(deltas=deltas, base_fingerprint=fp, label="combined")


def task_vector_to_checkpoint(tau: TaskVector) -> Checkpoint:
    """Persistable view of a task vector (same container format)."""
    meta = {"base_fingerprint": tau.base_fingerprint}
    if tau.label:
        meta["label"] = tau.label
    return Checkpoint(tensors=dict(tau.deltas), metadata=meta)
