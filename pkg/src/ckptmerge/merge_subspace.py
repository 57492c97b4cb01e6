"""Subspace merging on per-matrix task vectors: truncated-SVD concatenation
with whitening (with optional singular-value boosting), and the isotropic
common/task-specific variants. 1-D and 0-D tensors fall back to the mean of
deltas."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .errors import BaseMismatch, EmptyInput, IllConditioned, InvalidParameter
from .linalg import (
    DEFAULT_NS_ITERATIONS,
    TruncatedSvd,
    block_concat,
    boost_singular_values,
    boost_threshold_index,
    newton_schulz_orthogonalize,
    orthogonality_residual,
    procrustes_orthogonalize,
    reconstruct,
    svd,
    truncate,
)
from .merge_tau import _check_taus, _merged_vector
from .report import MergeReport, TensorRecord
from .taskvec import TaskVector, TensorKind, apply_task_vector, classify_tensor

PROCRUSTES = "procrustes"
NEWTON_SCHULZ = "newton_schulz"

# A stack this close to orthonormal is its own polar factor; skip the solver.
_ORTHONORMAL_TOL = 1e-6


@dataclass
class SubspaceMergeConfig:
    lam: float = 1.0
    rank_fraction: float | None = None  # None: 1/T
    beta: float = 0.3
    epsilon: float = 1e-12
    orthogonalizer: str | None = None   # None: per-method default
    ns_iterations: int = DEFAULT_NS_ITERATIONS
    ns_coeffs: tuple | None = None      # None: linalg.QUINTIC_SCHEDULE
    common_fraction: float = 0.5

    def validate(self) -> None:
        if not math.isfinite(self.lam):
            raise InvalidParameter(f"lambda must be finite, got {self.lam}")
        if self.rank_fraction is not None and not 0.0 < self.rank_fraction <= 1.0:
            raise InvalidParameter(f"rank_fraction must be in (0, 1], got {self.rank_fraction}")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidParameter(f"beta must be in [0, 1], got {self.beta}")
        if not self.epsilon > 0:
            raise InvalidParameter(f"epsilon must be > 0, got {self.epsilon}")
        if self.orthogonalizer not in (None, PROCRUSTES, NEWTON_SCHULZ):
            raise InvalidParameter(f"unknown orthogonalizer {self.orthogonalizer!r}")
        if self.ns_iterations < 1:
            raise InvalidParameter(f"ns_iterations must be >= 1, got {self.ns_iterations}")
        if not 0.0 < self.common_fraction <= 1.0:
            raise InvalidParameter(f"common_fraction must be in (0, 1], got {self.common_fraction}")


def _whiten(stack: np.ndarray, orthogonalizer: str, cfg: SubspaceMergeConfig, context: str):
    """Orthonormalize the columns of a concatenated factor stack."""
    if orthogonality_residual(stack) < _ORTHONORMAL_TOL:
        return stack, orthogonality_residual(stack)
    if orthogonalizer == PROCRUSTES:
        try:
            out = procrustes_orthogonalize(stack)
        except IllConditioned as exc:
            raise IllConditioned(
                f"{context}: {exc}; retry with orthogonalizer={NEWTON_SCHULZ!r}"
            ) from exc
    else:
        out = newton_schulz_orthogonalize(stack, cfg.ns_iterations, cfg.ns_coeffs)
    return out, orthogonality_residual(out)


def _drop_zero_directions(factors: TruncatedSvd, m: int, n: int) -> TruncatedSvd:
    """Remove directions whose singular value is numerically zero. SVD pads
    rank-deficient inputs with arbitrary orthonormal columns; concatenating
    those across tasks would make the stack exactly rank-deficient."""
    if factors.sigma.size == 0:
        return factors
    tol = max(m, n) * np.finfo(np.float64).eps * factors.sigma[0]
    keep = int((factors.sigma > tol).sum())
    return TruncatedSvd(
        u=factors.u[:, :keep],
        sigma=factors.sigma[:keep],
        v_t=factors.v_t[:keep, :],
        retained_rank=keep,
        total_rank=factors.total_rank,
    )


def _fold(tau: TaskVector, name: str, fold_shape: tuple[int, int]) -> np.ndarray:
    return tau.deltas[name].to_working().astype(np.float64).reshape(fold_shape)


def _mean_fallback(taus: list[TaskVector], name: str, shape: tuple[int, ...]) -> np.ndarray:
    acc = np.zeros(shape, dtype=np.float64)
    for tau in taus:
        acc += tau.deltas[name].to_working()
    return acc / len(taus)


def _finish(
    base: Checkpoint,
    taus: list[TaskVector],
    cfg: SubspaceMergeConfig,
    merged: dict[str, np.ndarray],
    report: MergeReport,
    start: float,
) -> tuple[Checkpoint, MergeReport]:
    out = apply_task_vector(base, _merged_vector(base, merged), cfg.lam)
    report.wall_time = time.perf_counter() - start
    return out, report


def _tsv_merge(
    base: Checkpoint,
    taus: list[TaskVector],
    cfg: SubspaceMergeConfig,
    boost: bool,
) -> tuple[Checkpoint, MergeReport]:
    cfg.validate()
    _check_taus(base, taus)
    start = time.perf_counter()
    method = "boosted_tsvm" if boost else "tsvm"
    orthogonalizer = cfg.orthogonalizer or PROCRUSTES
    n_tasks = len(taus)
    rank_fraction = cfg.rank_fraction if cfg.rank_fraction is not None else 1.0 / n_tasks
    report = MergeReport(method=method)
    merged: dict[str, np.ndarray] = {}

    for name, tensor in base.tensors.items():
        cls = classify_tensor(tensor)
        if cls.kind in (TensorKind.VECTOR_1D, TensorKind.SCALAR_0D) or 0 in tensor.shape:
            merged[name] = _mean_fallback(taus, name, tensor.shape)
            report.per_tensor.append(TensorRecord(name=name, method=method, fallback_used=True))
            continue

        m, n = cls.fold_shape
        parts: list[TruncatedSvd] = []
        full_energy = 0.0
        kept_energy = 0.0
        s_star_max: int | None = None
        pre_boost_energy = 0.0
        post_boost_energy = 0.0
        for tau in taus:
            factors = svd(_fold(tau, name, cls.fold_shape))
            full_energy += float((factors.sigma**2).sum())
            part = truncate(factors, rank_fraction)
            kept_energy += float((part.sigma**2).sum())
            if boost:
                pre_boost_energy += float((part.sigma**2).sum())
                s_star = boost_threshold_index(part.sigma, cfg.beta, cfg.epsilon)
                s_star_max = s_star if s_star_max is None else max(s_star_max, s_star)
                part = TruncatedSvd(
                    u=part.u,
                    sigma=boost_singular_values(part.sigma, cfg.beta, cfg.epsilon),
                    v_t=part.v_t,
                    retained_rank=part.retained_rank,
                    total_rank=part.total_rank,
                )
                post_boost_energy += float((part.sigma**2).sum())
            parts.append(_drop_zero_directions(part, m, n))

        cat = block_concat(parts)
        total_rank = cat.sigma_block.size
        if total_rank == 0:
            merged[name] = np.zeros(tensor.shape, dtype=np.float64)
            report.per_tensor.append(
                TensorRecord(name=name, method=method, retained_rank=0, s_star=s_star_max)
            )
            continue
        if total_rank > min(m, n):
            raise InvalidParameter(
                f"tensor {name!r}: {total_rank} concatenated directions exceed "
                f"min(m, n) = {min(m, n)}; reduce rank_fraction"
            )
        u_orth, res_u = _whiten(cat.u_cat, orthogonalizer, cfg, f"tensor {name!r} (left factors)")
        v_orth_t_src, res_v = _whiten(
            cat.v_cat_t.T, orthogonalizer, cfg, f"tensor {name!r} (right factors)"
        )
        merged[name] = reconstruct(u_orth, cat.sigma_block, v_orth_t_src.T).reshape(tensor.shape)
        record = TensorRecord(
            name=name,
            method=method,
            retained_rank=total_rank,
            energy_captured=kept_energy / full_energy if full_energy > 0 else 1.0,
            ortho_residual=max(res_u, res_v),
            s_star=s_star_max,
        )
        if boost and pre_boost_energy > 0:
            record.boost_ratio = post_boost_energy / pre_boost_energy
        report.per_tensor.append(record)

    return _finish(base, taus, cfg, merged, report, start)


def tsv_merge(
    base: Checkpoint, taus: list[TaskVector], cfg: SubspaceMergeConfig | None = None
) -> tuple[Checkpoint, MergeReport]:
    """Per matrix: SVD each task's delta, keep the top rank_fraction triples,
    concatenate across tasks, whiten the stacked singular vectors, rebuild."""
    return _tsv_merge(base, taus, cfg or SubspaceMergeConfig(), boost=False)


def boosted_tsv_merge(
    base: Checkpoint, taus: list[TaskVector], cfg: SubspaceMergeConfig | None = None
) -> tuple[Checkpoint, MergeReport]:
    """tsv_merge with each task's truncated spectrum clamped from below at the
    cumulative-energy threshold beta before concatenation, so small-but-real
    directions are not drowned out in the merged model."""
    return _tsv_merge(base, taus, cfg or SubspaceMergeConfig(), boost=True)


def iso_c(
    base: Checkpoint, taus: list[TaskVector], cfg: SubspaceMergeConfig | None = None
) -> tuple[Checkpoint, MergeReport]:
    """Isotropic merge in the common subspace: flatten the spectrum of the
    summed task vector to its mean singular value."""
    cfg = cfg or SubspaceMergeConfig()
    cfg.validate()
    _check_taus(base, taus)
    start = time.perf_counter()
    report = MergeReport(method="iso_c")
    merged: dict[str, np.ndarray] = {}
    for name, tensor in base.tensors.items():
        cls = classify_tensor(tensor)
        if cls.kind in (TensorKind.VECTOR_1D, TensorKind.SCALAR_0D) or 0 in tensor.shape:
            merged[name] = _mean_fallback(taus, name, tensor.shape)
            report.per_tensor.append(TensorRecord(name=name, method="iso_c", fallback_used=True))
            continue
        total = np.zeros(cls.fold_shape, dtype=np.float64)
        for tau in taus:
            total += _fold(tau, name, cls.fold_shape)
        if not total.any():
            merged[name] = np.zeros(tensor.shape, dtype=np.float64)
            report.per_tensor.append(TensorRecord(name=name, method="iso_c", retained_rank=0))
            continue
        factors = svd(total)
        sigma_bar = float(factors.sigma.mean())
        merged[name] = (sigma_bar * (factors.u @ factors.v_t)).reshape(tensor.shape)
        report.per_tensor.append(
            TensorRecord(name=name, method="iso_c", retained_rank=factors.retained_rank)
        )
    return _finish(base, taus, cfg, merged, report, start)


def iso_cts(
    base: Checkpoint, taus: list[TaskVector], cfg: SubspaceMergeConfig | None = None
) -> tuple[Checkpoint, MergeReport]:
    """Isotropic merge over a common subspace plus per-task residual
    directions. The common block comes from the summed task vector; each task
    then contributes the top directions of its component orthogonal to that
    block, the union is whitened, and every retained direction receives the
    mean singular value of the sum."""
    cfg = cfg or SubspaceMergeConfig()
    cfg.validate()
    _check_taus(base, taus)
    start = time.perf_counter()
    orthogonalizer = cfg.orthogonalizer or NEWTON_SCHULZ
    n_tasks = len(taus)
    report = MergeReport(method="iso_cts")
    merged: dict[str, np.ndarray] = {}
    for name, tensor in base.tensors.items():
        cls = classify_tensor(tensor)
        if cls.kind in (TensorKind.VECTOR_1D, TensorKind.SCALAR_0D) or 0 in tensor.shape:
            merged[name] = _mean_fallback(taus, name, tensor.shape)
            report.per_tensor.append(TensorRecord(name=name, method="iso_cts", fallback_used=True))
            continue
        m, n = cls.fold_shape
        r = min(m, n)
        folded = [_fold(tau, name, cls.fold_shape) for tau in taus]
        total = sum(folded)
        if not total.any():
            merged[name] = np.zeros(tensor.shape, dtype=np.float64)
            report.per_tensor.append(TensorRecord(name=name, method="iso_cts", retained_rank=0))
            continue
        factors = svd(total)
        sigma_bar = float(factors.sigma.mean())
        n_common = int(cfg.common_fraction * r + 1e-9)
        common = _drop_zero_directions(
            TruncatedSvd(
                u=factors.u[:, :n_common],
                sigma=factors.sigma[:n_common],
                v_t=factors.v_t[:n_common, :],
                retained_rank=n_common,
                total_rank=r,
            ),
            m,
            n,
        )
        per_task = int((1.0 - cfg.common_fraction) * r / n_tasks + 1e-9)
        u_blocks = [common.u]
        v_blocks = [common.v_t.T]
        if per_task > 0:
            proj_left = common.u @ common.u.T
            proj_right = common.v_t.T @ common.v_t
            for mat in folded:
                deflated = mat - proj_left @ mat
                residual = deflated - deflated @ proj_right
                res_factors = _drop_zero_directions(svd(residual), m, n)
                keep = min(per_task, res_factors.retained_rank)
                if keep > 0:
                    u_blocks.append(res_factors.u[:, :keep])
                    v_blocks.append(res_factors.v_t[:keep, :].T)
        u_stack = np.hstack(u_blocks)
        v_stack = np.hstack(v_blocks)
        k_total = u_stack.shape[1]
        if k_total == 0:
            merged[name] = np.zeros(tensor.shape, dtype=np.float64)
            report.per_tensor.append(TensorRecord(name=name, method="iso_cts", retained_rank=0))
            continue
        if k_total > r:
            raise InvalidParameter(
                f"tensor {name!r}: accumulated {k_total} directions exceed min(m, n) = {r}"
            )
        u_orth, res_u = _whiten(u_stack, orthogonalizer, cfg, f"tensor {name!r} (left factors)")
        v_orth, res_v = _whiten(v_stack, orthogonalizer, cfg, f"tensor {name!r} (right factors)")
        merged[name] = (sigma_bar * (u_orth @ v_orth.T)).reshape(tensor.shape)
        report.per_tensor.append(
            TensorRecord(
                name=name,
                method="iso_cts",
                retained_rank=k_total,
                ortho_residual=max(res_u, res_v),
            )
        )
    return _finish(base, taus, cfg, merged, report, start)
