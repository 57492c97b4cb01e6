"""Parameter-space merging: methods that combine full model parameters
per tensor, without reference to task vectors (except Model Stock, which
anchors on the base)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint, TensorData, check_compatibility
from .errors import DegenerateInput, EmptyInput, InvalidParameter, StructureMismatch

_TINY = 1e-30


@dataclass
class PsMergeConfig:
    include_base: bool = False
    weights: list[float] | None = None
    tolerance: float = 1e-5
    max_iterations: int = 10

    def validate(self, n_models: int) -> None:
        if self.tolerance <= 0:
            raise InvalidParameter(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise InvalidParameter(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.weights is not None:
            if len(self.weights) != n_models:
                raise InvalidParameter(
                    f"{len(self.weights)} weights for {n_models} models"
                )
            if any(w < 0 for w in self.weights):
                raise InvalidParameter("weights must be non-negative")


def _require_compatible(checkpoints: list[Checkpoint]) -> None:
    first = checkpoints[0]
    for other in checkpoints[1:]:
        report = check_compatibility(first, other)
        if not report.compatible:
            raise StructureMismatch(f"checkpoints are not compatible: {report.mismatches}")


def _rebuild(reference: Checkpoint, arrays: dict[str, np.ndarray]) -> Checkpoint:
    tensors = {
        name: TensorData.from_array(name, arrays[name], t.dtype)
        for name, t in reference.tensors.items()
    }
    return Checkpoint(tensors=tensors, metadata=dict(reference.metadata))


def soup(models: list[Checkpoint], base: Checkpoint | None = None) -> Checkpoint:
    """Element-wise mean of the models; the base joins as one more member
    when provided."""
    if not models:
        raise EmptyInput("soup needs at least one model")
    members = list(models) + ([base] if base is not None else [])
    _require_compatible(members)
    out = {}
    for name in members[0].tensors:
        acc = members[0].tensors[name].to_working().astype(np.float64)
        for m in members[1:]:
            acc += m.tensors[name].to_working()
        out[name] = acc / len(members)
    return _rebuild(members[0], out)


def model_stock(models: list[Checkpoint], base: Checkpoint) -> Checkpoint:
    """Interpolate between the base and the task-vector mean with a ratio
    driven by the mean pairwise cosine similarity of the task vectors:
    t = k*cos / (1 + (k-1)*cos), per tensor, cos clamped to [0, 1]."""
    if len(models) < 2:
        raise InvalidParameter(f"model_stock needs >= 2 models, got {len(models)}")
    _require_compatible(list(models) + [base])
    k = len(models)
    out = {}
    for name, base_t in base.tensors.items():
        theta0 = base_t.to_working().astype(np.float64)
        taus = [m.tensors[name].to_working().astype(np.float64) - theta0 for m in models]
        flat = [t.ravel() for t in taus]
        norms = [np.linalg.norm(f) for f in flat]
        mean_tau = sum(taus) / k
        if min(norms) < _TINY:
            out[name] = theta0 + mean_tau  # degenerate: no angle information
            continue
        sims = [
            float(flat[i] @ flat[j]) / (norms[i] * norms[j])
            for i in range(k)
            for j in range(i + 1, k)
        ]
        cos_bar = min(1.0, max(0.0, float(np.mean(sims))))
        t = k * cos_bar / (1.0 + (k - 1) * cos_bar)
        out[name] = theta0 + t * mean_tau
    return _rebuild(base, out)


def _log_map(mu: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Tangent vector at mu pointing toward x (both unit vectors)."""
    dot = float(np.clip(mu @ x, -1.0, 1.0))
    perp = x - dot * mu
    norm = np.linalg.norm(perp)
    if norm < 1e-12:
        if dot < 0:  # antipodal: direction undefined
            warnings.warn("antipodal point in spherical mean; contribution skipped")
        return np.zeros_like(mu)
    return perp * (np.arccos(dot) / norm)


def _exp_map(mu: np.ndarray, v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm < 1e-16:
        return mu
    out = np.cos(norm) * mu + np.sin(norm) * (v / norm)
    return out / np.linalg.norm(out)


def _sphere_setup(models: list[Checkpoint], name: str) -> tuple[list[np.ndarray], list[float], tuple]:
    vecs = []
    norms = []
    shape: tuple = ()
    for m in models:
        arr = m.tensors[name].to_working().astype(np.float64)
        shape = arr.shape
        flat = arr.ravel()
        n = float(np.linalg.norm(flat))
        if n < _TINY:
            raise DegenerateInput(f"tensor {name!r} has zero norm in one input")
        vecs.append(flat / n)
        norms.append(n)
    return vecs, norms, shape


def _mean_direction(vecs: list[np.ndarray], name: str) -> np.ndarray:
    mu = np.mean(vecs, axis=0)
    n = np.linalg.norm(mu)
    if n < 1e-12:
        raise DegenerateInput(f"tensor {name!r}: input directions cancel, mean undefined")
    return mu / n


def karcher_mean(models: list[Checkpoint], cfg: PsMergeConfig | None = None) -> Checkpoint:
    """Riemannian mean of the flattened tensors on the unit sphere, rescaled
    to the arithmetic mean of the input norms."""
    if not models:
        raise EmptyInput("karcher_mean needs at least one model")
    cfg = cfg or PsMergeConfig()
    cfg.validate(len(models))
    _require_compatible(models)
    weights = np.asarray(cfg.weights if cfg.weights is not None else [1.0] * len(models))
    weights = weights / weights.sum()
    out = {}
    for name in models[0].tensors:
        vecs, norms, shape = _sphere_setup(models, name)
        mu = _mean_direction(vecs, name)
        for _ in range(cfg.max_iterations):
            tangent = sum(w * _log_map(mu, x) for w, x in zip(weights, vecs))
            if np.linalg.norm(tangent) < cfg.tolerance:
                break
            mu = _exp_map(mu, tangent)
        else:
            warnings.warn(
                f"karcher mean did not converge in {cfg.max_iterations} iterations "
                f"on tensor {name!r}"
            )
        out[name] = (mu * float(np.mean(norms))).reshape(shape)
    return _rebuild(models[0], out)


def multi_slerp(models: list[Checkpoint], cfg: PsMergeConfig | None = None) -> Checkpoint:
    """One-shot spherical average: tangent-space mean at the normalized
    Euclidean mean direction, rescaled to the mean input norm."""
    if not models:
        raise EmptyInput("multi_slerp needs at least one model")
    cfg = cfg or PsMergeConfig()
    cfg.validate(len(models))
    _require_compatible(models)
    weights = np.asarray(cfg.weights if cfg.weights is not None else [1.0] * len(models))
    weights = weights / weights.sum()
    out = {}
    for name in models[0].tensors:
        vecs, norms, shape = _sphere_setup(models, name)
        mu = _mean_direction(vecs, name)
        tangent = sum(w * _log_map(mu, x) for w, x in zip(weights, vecs))
        merged = _exp_map(mu, tangent)
        out[name] = (merged * float(np.mean(norms))).reshape(shape)
    return _rebuild(models[0], out)
