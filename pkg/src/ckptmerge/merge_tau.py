"""Task-vector-space merging: Task Arithmetic, TIES, PCB and SCE, all
operating coordinate-wise on flattened deltas."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .errors import BaseMismatch, EmptyInput, InvalidParameter
from .taskvec import TaskVector, TensorData, apply_task_vector

_EPS = 1e-12


@dataclass
class TauMergeConfig:
    lam: float = 1.0
    density: float = 0.2            # TIES trim fraction
    retain_fraction: float = 0.1    # PCB mask keep fraction
    select_fraction: float = 0.1    # SCE variance keep fraction
    temperature: float = 1.0        # PCB softmax temperature

    def validate(self) -> None:
        for field in ("density", "retain_fraction", "select_fraction"):
            v = getattr(self, field)
            if not 0.0 < v <= 1.0:
                raise InvalidParameter(f"{field} must be in (0, 1], got {v}")
        if not self.temperature > 0:
            raise InvalidParameter(f"temperature must be > 0, got {self.temperature}")
        if not math.isfinite(self.lam):
            raise InvalidParameter(f"lambda must be finite, got {self.lam}")


def _check_taus(base: Checkpoint, taus: list[TaskVector], minimum: int = 1) -> None:
    if len(taus) < minimum:
        if not taus:
            raise EmptyInput("no task vectors to merge")
        raise InvalidParameter(f"method needs >= {minimum} task vectors, got {len(taus)}")
    for tau in taus:
        if tau.base_fingerprint != base.fingerprint:
            raise BaseMismatch(
                f"task vector {tau.label!r} does not match the base checkpoint"
            )


def _merged_vector(base: Checkpoint, merged: dict[str, np.ndarray]) -> TaskVector:
    deltas = {
        name: TensorData.from_array(name, merged[name], t.dtype)
        for name, t in base.tensors.items()
    }
    return TaskVector(deltas=deltas, base_fingerprint=base.fingerprint, label="merged")


def _stacked(taus: list[TaskVector], name: str) -> np.ndarray:
    """(T, N) float64 matrix of flattened deltas for one tensor."""
    return np.stack([tau.deltas[name].to_working().astype(np.float64).ravel() for tau in taus])


def task_arithmetic(base: Checkpoint, taus: list[TaskVector], lam: float = 0.4) -> Checkpoint:
    """theta* = theta_0 + lam * sum_t tau_t."""
    _check_taus(base, taus)
    merged = {}
    for name, t in base.tensors.items():
        acc = np.zeros(t.shape, dtype=np.float64)
        for tau in taus:
            acc += tau.deltas[name].to_working()
        merged[name] = acc
    return apply_task_vector(base, _merged_vector(base, merged), lam)


def _trim_mask(row: np.ndarray, keep: int) -> np.ndarray:
    """Keep the `keep` largest-magnitude entries; ties favor lower indices."""
    order = np.argsort(-np.abs(row), kind="stable")
    mask = np.zeros(row.shape, dtype=bool)
    mask[order[:keep]] = True
    return mask


def ties(base: Checkpoint, taus: list[TaskVector], cfg: TauMergeConfig | None = None) -> Checkpoint:
    """Trim each task vector to its top-density coordinates, elect the
    majority sign of the trimmed sum, average the sign-consistent survivors."""
    cfg = cfg or TauMergeConfig()
    cfg.validate()
    _check_taus(base, taus)
    merged = {}
    for name, t in base.tensors.items():
        mat = _stacked(taus, name)
        n = mat.shape[1]
        if n == 0:
            merged[name] = np.zeros(t.shape, dtype=np.float64)
            continue
        keep = max(1, int(cfg.density * n + 1e-9))  # slack: 0.3 * 10 must floor to 3
        trimmed = np.zeros_like(mat)
        for i in range(mat.shape[0]):
            mask = _trim_mask(mat[i], keep)
            trimmed[i, mask] = mat[i, mask]
        elected = np.sign(trimmed.sum(axis=0))
        agree = (np.sign(trimmed) == elected) & (elected != 0)
        counts = agree.sum(axis=0)
        total = (trimmed * agree).sum(axis=0)
        merged[name] = np.divide(
            total, counts, out=np.zeros_like(total), where=counts > 0
        ).reshape(t.shape)
    return apply_task_vector(base, _merged_vector(base, merged), cfg.lam)


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def pcb(base: Checkpoint, taus: list[TaskVector], cfg: TauMergeConfig | None = None) -> Checkpoint:
    """Parameter-competition balancing: per-coordinate scores combine a
    within-task softmax over magnitudes (intra) and an across-task softmax
    (inter); low-scoring coordinates are masked per task and the rest merge
    as a score-weighted normalized sum."""
    cfg = cfg or TauMergeConfig()
    cfg.validate()
    _check_taus(base, taus)
    n_tasks = len(taus)
    merged = {}
    for name, t in base.tensors.items():
        mat = _stacked(taus, name)
        n = mat.shape[1]
        if n == 0:
            merged[name] = np.zeros(t.shape, dtype=np.float64)
            continue
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        unit = np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)
        intra = _softmax(n_tasks * unit**2 / cfg.temperature, axis=1)
        inter = _softmax(mat / cfg.temperature, axis=0)
        score = intra * inter
        keep = min(n, math.ceil(cfg.retain_fraction * n - 1e-9))
        keep = max(1, keep)
        mask = np.zeros_like(mat, dtype=bool)
        for i in range(n_tasks):
            mask[i] = _trim_mask(score[i], keep)  # scores are >= 0; rank directly
        numer = (score * mat * mask).sum(axis=0)
        denom = np.maximum((score * mask).sum(axis=0), _EPS)
        merged[name] = (numer / denom).reshape(t.shape)
    return apply_task_vector(base, _merged_vector(base, merged), cfg.lam)


def sce(base: Checkpoint, taus: list[TaskVector], cfg: TauMergeConfig | None = None) -> Checkpoint:
    """Select the top cross-task-variance coordinates, weight tasks by their
    surviving squared mass, erase sign-conflicting contributions, renormalize
    by the participating weights."""
    cfg = cfg or TauMergeConfig()
    cfg.validate()
    _check_taus(base, taus, minimum=2)
    merged = {}
    for name, t in base.tensors.items():
        mat = _stacked(taus, name)
        n = mat.shape[1]
        if n == 0:
            merged[name] = np.zeros(t.shape, dtype=np.float64)
            continue
        keep = max(1, int(cfg.select_fraction * n + 1e-9))
        variance = mat.var(axis=0)
        selected = _trim_mask(variance, keep)
        mat = mat * selected
        energy = (mat**2).sum(axis=1)
        total = energy.sum()
        if total == 0.0:
            merged[name] = np.zeros(t.shape, dtype=np.float64)
            continue
        eta = energy / total
        elected = np.sign((eta[:, None] * mat).sum(axis=0))
        agree = (np.sign(mat) == elected) & (elected != 0)
        numer = (eta[:, None] * mat * agree).sum(axis=0)
        denom = (eta[:, None] * agree).sum(axis=0)
        merged[name] = np.divide(
            numer, denom, out=np.zeros_like(numer), where=denom > 0
        ).reshape(t.shape)
    return apply_task_vector(base, _merged_vector(base, merged), cfg.lam)
