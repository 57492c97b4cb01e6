"""Merge execution: dispatch a recipe to the right method, write the output
checkpoint and its diagnostics report. Also hosts the spectrum inspector."""

from __future__ import annotations

import os
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import UnknownMethod
from .linalg import stable_rank
from .merge_ps import PsMergeConfig, karcher_mean, model_stock, multi_slerp, soup
from .merge_subspace import (
    SubspaceMergeConfig,
    boosted_tsv_merge,
    iso_c,
    iso_cts,
    tsv_merge,
)
from .merge_tau import TauMergeConfig, pcb, sce, task_arithmetic, ties
from .recipe import (
    PS_METHODS,
    SUBSPACE_METHODS,
    MergeRecipe,
)
from .report import MergeReport, TensorRecord, write_report
from .taskvec import TaskVector, classify_tensor, compute_task_vector


def _basic_report(method: str, merged: Checkpoint) -> MergeReport:
    records = [TensorRecord(name=name, method=method) for name in merged.tensors]
    return MergeReport(method=method, per_tensor=records)


def dispatch(
    method: str,
    base: Checkpoint,
    models: list[Checkpoint],
    taus: list[TaskVector],
    params: dict,
) -> tuple[Checkpoint, MergeReport]:
    """Run one merge method on in-memory inputs; shared by run_merge and the
    synthetic harness."""
    if method in PS_METHODS:
        include_base = bool(params.get("include_base", False))
        if method == "soup":
            merged = soup(models, base if include_base else None)
        elif method == "model_stock":
            merged = model_stock(models, base)
        else:
            cfg = PsMergeConfig(
                include_base=include_base,
                tolerance=float(params.get("tolerance", 1e-5)),
                max_iterations=int(params.get("max_iterations", 10)),
            )
            members = models + ([base] if include_base else [])
            merged = karcher_mean(members, cfg) if method == "karcher" else multi_slerp(members, cfg)
        return merged, _basic_report(method, merged)

    lam = float(params.get("lambda", 1.0))
    if method == "ta":
        merged = task_arithmetic(base, taus, lam)
        return merged, _basic_report(method, merged)
    if method in ("ties", "pcb", "sce"):
        cfg = TauMergeConfig(
            lam=lam,
            density=float(params.get("density", 0.2)),
            retain_fraction=float(params.get("retain_fraction", 0.1)),
            select_fraction=float(params.get("select_fraction", 0.1)),
            temperature=float(params.get("temperature", 1.0)),
        )
        merged = {"ties": ties, "pcb": pcb, "sce": sce}[method](base, taus, cfg)
        return merged, _basic_report(method, merged)
    if method in SUBSPACE_METHODS:
        cfg = SubspaceMergeConfig(
            lam=lam,
            rank_fraction=params.get("rank_fraction"),
            beta=float(params.get("beta", 0.3)),
            epsilon=float(params.get("epsilon", 1e-12)),
            orthogonalizer=params.get("orthogonalizer"),
            ns_iterations=int(params.get("ns_iterations", 5)),
            ns_coeffs=params.get("ns_coeffs"),
            common_fraction=float(params.get("common_fraction", 0.5)),
        )
        fn = {
            "tsvm": tsv_merge,
            "boosted_tsvm": boosted_tsv_merge,
            "iso_c": iso_c,
            "iso_cts": iso_cts,
        }[method]
        return fn(base, taus, cfg)
    raise UnknownMethod(f"unknown method {method!r}")


def report_path_for(output_path: str) -> str:
    return str(output_path) + ".report.txt"


def run_merge(recipe: MergeRecipe) -> MergeReport:
    """Execute a recipe: load inputs, merge, write checkpoint + report.

    Deterministic: the same recipe over the same inputs produces
    byte-identical outputs. Partial outputs are removed on failure.
    """
    start = time.perf_counter()
    base = load_checkpoint(recipe.base_path)
    models = [load_checkpoint(path) for path, _ in recipe.model_paths]
    taus: list[TaskVector] = []
    if recipe.method not in PS_METHODS:
        taus = [
            compute_task_vector(model, base, label)
            for model, (_, label) in zip(models, recipe.model_paths)
        ]

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        merged, report = dispatch(recipe.method, base, models, taus, recipe.params)
    report.warnings.extend(str(w.message) for w in caught)

    out_dtype = recipe.params.get("out_dtype")
    if out_dtype:
        merged = merged.astype(str(out_dtype))

    try:
        save_checkpoint(merged, recipe.output_path)
        write_report(report, report_path_for(recipe.output_path))
    except BaseException:
        for path in (recipe.output_path, report_path_for(recipe.output_path)):
            if os.path.exists(path):
                os.unlink(path)
        raise
    report.wall_time = time.perf_counter() - start
    return report


@dataclass
class SpectrumSummary:
    name: str
    shape: tuple[int, ...]
    fold_shape: tuple[int, int]
    singular_values: list[float]
    stable_rank: float
    energy_curve: list[float]


def inspect_checkpoint(path, top_k: int = 8, epsilon: float = 1e-12) -> list[SpectrumSummary]:
    """Spectrum summaries for every matrix-like tensor: leading singular
    values, stable rank, and the cumulative-energy curve c(s) that drives
    singular-value boosting."""
    ckpt = load_checkpoint(path)
    out = []
    for name, tensor in ckpt.tensors.items():
        cls = classify_tensor(tensor)
        if cls.fold_shape is None or 0 in tensor.shape:
            continue
        mat = tensor.to_working().astype(np.float64).reshape(cls.fold_shape)
        sigma = np.linalg.svd(mat, compute_uv=False)
        energy = np.cumsum(sigma) / (sigma.sum() + epsilon)
        k = min(top_k, sigma.size)
        out.append(
            SpectrumSummary(
                name=name,
                shape=tuple(tensor.shape),
                fold_shape=cls.fold_shape,
                singular_values=[float(s) for s in sigma[:k]],
                stable_rank=stable_rank(mat),
                energy_curve=[float(c) for c in energy[:k]],
            )
        )
    return out
