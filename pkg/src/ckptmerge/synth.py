"""Synthetic merging harness.

Builds task vectors with controlled ground-truth subspaces (per-task rank,
spectrum decay, cross-task overlap, dense noise floor), runs merge methods on
them, and emits rank-collapse and subspace-retention metrics. This is the
desk-scale stand-in for end-to-end model evaluation: it shows which methods
keep each task's directions alive in the merged matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint, TensorData
from .engine import dispatch
from .errors import InvalidParameter
from .linalg import max_principal_angle, stable_rank
from .recipe import ALL_METHODS
from .taskvec import TaskVector, apply_task_vector

CSV_HEADER = "method,beta,seed,stable_rank,mean_max_principal_angle,recon_error"

_TENSOR = "w"


@dataclass
class SynthSpec:
    tasks: int = 4
    dim: int = 64
    rank: int = 4
    decay: float = 1.5
    overlap: float = 0.0
    noise: float = 5e-4
    seeds: int = 20
    lam: float = 1.0
    methods: tuple[str, ...] = ("ta", "tsvm")
    beta_grid: tuple[float, ...] = (1.0, 0.6, 0.3, 0.05)
    # overlapping tasks make the stacked factors nearly rank-deficient;
    # newton_schulz keeps subspace methods usable there
    orthogonalizer: str | None = None

    def validate(self) -> None:
        if self.tasks < 1 or self.dim < 1 or self.rank < 1 or self.seeds < 1:
            raise InvalidParameter("tasks, dim, rank and seeds must all be >= 1")
        if not 0.0 <= self.overlap <= 1.0:
            raise InvalidParameter(f"overlap must be in [0, 1], got {self.overlap}")
        if self.noise < 0:
            raise InvalidParameter(f"noise must be >= 0, got {self.noise}")
        if self.decay < 0:
            raise InvalidParameter(f"decay must be >= 0, got {self.decay}")
        if self.union_rank() > self.dim:
            raise InvalidParameter(
                f"infeasible: {self.tasks} tasks of rank {self.rank} at overlap "
                f"{self.overlap} need {self.union_rank()} directions in dimension {self.dim}"
            )
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise InvalidParameter(f"unknown methods in suite: {unknown}")
        for b in self.beta_grid:
            if not 0.0 <= b <= 1.0:
                raise InvalidParameter(f"beta grid values must be in [0, 1], got {b}")

    def shared_rank(self) -> int:
        return round(self.overlap * self.rank)

    def union_rank(self) -> int:
        shared = self.shared_rank()
        return shared + self.tasks * (self.rank - shared)


@dataclass
class SynthTask:
    matrix: np.ndarray          # the full task vector, noise included
    ideal: np.ndarray           # noiseless ground truth
    row_basis: np.ndarray       # dim x rank orthonormal, true right subspace


@dataclass
class SynthCase:
    tasks: list[SynthTask]
    union_rank: int

    def ideal_sum(self) -> np.ndarray:
        return sum(t.ideal for t in self.tasks)


def generate_case(spec: SynthSpec, seed: int) -> SynthCase:
    """Sample one synthetic problem instance.

    Tasks share the first `shared` directions of a global random orthonormal
    basis (with per-task random mixing coefficients, so overlapping content
    can interfere) and own `rank - shared` private directions each. Spectrum
    is exp(-decay * j); a dense Gaussian noise floor is added per task.
    """
    rng = np.random.default_rng(seed)
    d, r, t_count = spec.dim, spec.rank, spec.tasks
    shared = spec.shared_rank()
    private = r - shared
    q_left = np.linalg.qr(rng.standard_normal((d, d)))[0]
    q_right = np.linalg.qr(rng.standard_normal((d, d)))[0]
    sigma = np.exp(-spec.decay * np.arange(r, dtype=np.float64))

    tasks = []
    for t in range(t_count):
        cols = list(range(shared)) + [shared + t * private + j for j in range(private)]
        u = q_left[:, cols]
        v = q_right[:, cols]
        # random signed gains on shared directions: overlapping content can
        # reinforce or cancel across tasks, private content cannot
        gains = np.ones(r)
        if shared:
            gains[:shared] = rng.choice([-1.0, 1.0], size=shared) * rng.uniform(0.5, 1.0, size=shared)
        ideal = (u * (sigma * gains)) @ v.T
        noise = spec.noise * rng.standard_normal((d, d))
        tasks.append(SynthTask(matrix=ideal + noise, ideal=ideal, row_basis=v))
    return SynthCase(tasks=tasks, union_rank=spec.union_rank())


def _as_checkpoint(matrix: np.ndarray) -> Checkpoint:
    return Checkpoint(
        tensors={_TENSOR: TensorData.from_array(_TENSOR, matrix.astype(np.float32), "f32")}
    )


def _top_row_space(matrix: np.ndarray, q: int) -> np.ndarray:
    _, _, v_t = np.linalg.svd(matrix, full_matrices=False)
    return v_t[:q, :].T


@dataclass
class SynthResult:
    method: str
    beta: float | None
    seed: int
    stable_rank: float
    mean_max_principal_angle: float
    recon_error: float

    def csv_row(self) -> str:
        beta = "" if self.beta is None else f"{self.beta:g}"
        return (
            f"{self.method},{beta},{self.seed},{self.stable_rank:.6f},"
            f"{self.mean_max_principal_angle:.6f},{self.recon_error:.6f}"
        )


def _evaluate_merged(case: SynthCase, merged: np.ndarray, lam: float) -> tuple[float, float, float]:
    sr = stable_rank(merged)
    basis = _top_row_space(merged, case.union_rank)
    angles = [max_principal_angle(t.row_basis, basis) for t in case.tasks]
    reference = lam * case.ideal_sum()
    denom = np.linalg.norm(reference)
    err = float(np.linalg.norm(merged - reference) / denom) if denom > 0 else 0.0
    return sr, float(np.mean(angles)), err


def run_suite(spec: SynthSpec) -> list[SynthResult]:
    """Run every configured method over every seed; boosted_tsvm fans out over
    the beta grid."""
    spec.validate()
    results: list[SynthResult] = []
    for seed in range(spec.seeds):
        case = generate_case(spec, seed)
        base = _as_checkpoint(np.zeros((spec.dim, spec.dim)))
        taus = [
            TaskVector(
                deltas={_TENSOR: TensorData.from_array(_TENSOR, t.matrix.astype(np.float32), "f32")},
                base_fingerprint=base.fingerprint,
                label=f"task{i}",
            )
            for i, t in enumerate(case.tasks)
        ]
        models = [apply_task_vector(base, tau, 1.0) for tau in taus]
        for method in spec.methods:
            betas: list[float | None] = (
                [float(b) for b in spec.beta_grid] if method == "boosted_tsvm" else [None]
            )
            for beta in betas:
                params: dict[str, object] = {"lambda": spec.lam}
                if spec.orthogonalizer is not None:
                    params["orthogonalizer"] = spec.orthogonalizer
                if beta is not None:
                    params["beta"] = beta
                merged_ckpt, _ = dispatch(method, base, models, taus, params)
                merged = (
                    merged_ckpt.tensors[_TENSOR].to_working().astype(np.float64)
                    - base.tensors[_TENSOR].to_working().astype(np.float64)
                )
                sr, angle, err = _evaluate_merged(case, merged, spec.lam)
                results.append(
                    SynthResult(
                        method=method,
                        beta=beta,
                        seed=seed,
                        stable_rank=sr,
                        mean_max_principal_angle=angle,
                        recon_error=err,
                    )
                )
    return results


def summarize(results: list[SynthResult]) -> dict[tuple[str, float | None], dict[str, float]]:
    """Seed-averaged metrics per (method, beta)."""
    groups: dict[tuple[str, float | None], list[SynthResult]] = {}
    for r in results:
        groups.setdefault((r.method, r.beta), []).append(r)
    return {
        key: {
            "stable_rank": float(np.mean([r.stable_rank for r in rows])),
            "mean_max_principal_angle": float(
                np.mean([r.mean_max_principal_angle for r in rows])
            ),
            "recon_error": float(np.mean([r.recon_error for r in rows])),
        }
        for key, rows in groups.items()
    }


def results_csv(results: list[SynthResult]) -> str:
    """Per-seed rows plus one 'mean' row per (method, beta); fixed header."""
    lines = [CSV_HEADER]
    lines.extend(r.csv_row() for r in results)
    for (method, beta), stats in summarize(results).items():
        beta_s = "" if beta is None else f"{beta:g}"
        lines.append(
            f"{method},{beta_s},mean,{stats['stable_rank']:.6f},"
            f"{stats['mean_max_principal_angle']:.6f},{stats['recon_error']:.6f}"
        )
    return "\n".join(lines) + "\n"


_SPEC_FIELDS = {
    "tasks": int,
    "dim": int,
    "rank": int,
    "decay": float,
    "overlap": float,
    "noise": float,
    "seeds": int,
    "lambda": float,
}


def parse_synth_spec(text: str) -> SynthSpec:
    """Same flat key: value format as recipes; methods and beta_grid are
    comma-separated lists."""
    spec = SynthSpec()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if ":" not in stripped:
            raise InvalidParameter(f"line {lineno}: expected 'key: value', got {stripped!r}")
        key, _, value = stripped.partition(":")
        key, value = key.strip(), value.strip()
        if key in _SPEC_FIELDS:
            attr = "lam" if key == "lambda" else key
            try:
                setattr(spec, attr, _SPEC_FIELDS[key](value))
            except ValueError as exc:
                raise InvalidParameter(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
        elif key == "methods":
            spec.methods = tuple(m.strip() for m in value.split(",") if m.strip())
        elif key == "beta_grid":
            try:
                spec.beta_grid = tuple(float(b) for b in value.split(",") if b.strip())
            except ValueError as exc:
                raise InvalidParameter(f"line {lineno}: bad beta_grid: {value!r}") from exc
        elif key == "orthogonalizer":
            spec.orthogonalizer = value
        else:
            raise InvalidParameter(f"line {lineno}: unknown key {key!r}")
    spec.validate()
    return spec
