"""Dense kernels shared by the subspace merge methods: SVD with a fixed sign
convention, rank truncation, spectrum boosting, block concatenation, and the
two whitening routines (Procrustes polar factor, Newton-Schulz iteration)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyInput,
    IllConditioned,
    InvalidParameter,
    NumericalError,
    StructureMismatch,
)

# Five-step quintic coefficient schedule for Newton-Schulz orthogonalization.
# Each step applies x <- c1*x + c2*x^3 + c3*x^5 to the singular values. The
# polynomials satisfy x <= f(x) <= 1 on [0, 1], so the orthogonality residual
# decreases monotonically and nothing overshoots; four max-slope steps pull
# small singular values up, the last step tightens the band. Any normalized
# singular value >= 0.02 lands in [0.9977, 1] after the five steps.
QUINTIC_SCHEDULE: tuple[tuple[float, float, float], ...] = (
    (2.6135, -3.2267, 1.6132),
    (2.6135, -3.2267, 1.6132),
    (2.6135, -3.2267, 1.6132),
    (2.6135, -3.2267, 1.6132),
    (2.1212, -1.7933, 0.6721),
)

# The widely used aggressive constant triple (maximal slope at zero). It
# converges to a band of roughly (0.5, 1.5) around 1 rather than to the polar
# factor, so it is not the default here; exposed for experimentation.
AGGRESSIVE_TRIPLE: tuple[float, float, float] = (3.4445, -4.7750, 2.0315)

DEFAULT_NS_ITERATIONS = 5

RANK_EPS = np.finfo(np.float64).eps


@dataclass
class TruncatedSvd:
    """Factors of one matrix: a ~= u @ diag(sigma) @ v_t, leading triples only."""

    u: np.ndarray
    sigma: np.ndarray
    v_t: np.ndarray
    retained_rank: int
    total_rank: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.u.shape[0], self.v_t.shape[1])


@dataclass
class ConcatenatedFactors:
    """Column-stacked factors of several tasks, block-ordered spectrum."""

    u_cat: np.ndarray
    sigma_block: np.ndarray
    v_cat_t: np.ndarray
    task_offsets: list[tuple[int, int]]


def svd(a: np.ndarray) -> TruncatedSvd:
    """Full-rank thin SVD with a deterministic sign convention: the
    largest-magnitude entry of every u column is made non-negative."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidParameter(f"svd expects a matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NumericalError("svd input contains non-finite entries")
    u, s, v_t = np.linalg.svd(a, full_matrices=False)
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            v_t[j, :] = -v_t[j, :]
    k = min(a.shape)
    return TruncatedSvd(u=u, sigma=s, v_t=v_t, retained_rank=k, total_rank=k)


def truncate(factors: TruncatedSvd, rank_fraction: float) -> TruncatedSvd:
    """Keep the leading max(1, floor(rank_fraction * total_rank)) triples."""
    if not 0.0 < rank_fraction <= 1.0:
        raise InvalidParameter(f"rank_fraction must be in (0, 1], got {rank_fraction}")
    # tiny slack so e.g. (1/3) * 9 floors to 3, not 2
    k = max(1, int(rank_fraction * factors.total_rank + 1e-9))
    k = min(k, factors.retained_rank)
    return TruncatedSvd(
        u=factors.u[:, :k],
        sigma=factors.sigma[:k],
        v_t=factors.v_t[:k, :],
        retained_rank=k,
        total_rank=factors.total_rank,
    )


def boost_singular_values(sigma: np.ndarray, beta: float, epsilon: float = 1e-12) -> np.ndarray:
    """Clamp the tail of a descending spectrum to the value at the cumulative
    energy threshold.

    c(s) = sum_{j<=s} sigma_j / (sum_j sigma_j + epsilon); s* is the smallest
    s with c(s) >= beta (or the full rank when no prefix qualifies, which
    makes beta = 1.0 the exact identity). Every value below sigma_{s*} is
    raised to it.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 1:
        raise InvalidParameter(f"expected a 1-D spectrum, got shape {sigma.shape}")
    if sigma.size == 0:
        raise EmptyInput("empty spectrum")
    if not 0.0 <= beta <= 1.0:
        raise InvalidParameter(f"beta must be in [0, 1], got {beta}")
    if not epsilon > 0:
        raise InvalidParameter(f"epsilon must be > 0, got {epsilon}")
    if not np.isfinite(sigma).all():
        raise NumericalError("spectrum contains non-finite values")
    if (sigma < 0).any():
        raise InvalidParameter("singular values must be non-negative")
    if (np.diff(sigma) > 0).any():
        raise InvalidParameter("spectrum must be sorted descending")
    energy = np.cumsum(sigma) / (sigma.sum() + epsilon)
    qualifying = np.nonzero(energy >= beta)[0]
    s_star = int(qualifying[0]) + 1 if qualifying.size else sigma.size
    return np.maximum(sigma, sigma[s_star - 1])


def boost_threshold_index(sigma: np.ndarray, beta: float, epsilon: float = 1e-12) -> int:
    """The 1-based threshold index s* used by boost_singular_values."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0:
        raise EmptyInput("empty spectrum")
    energy = np.cumsum(sigma) / (sigma.sum() + epsilon)
    qualifying = np.nonzero(energy >= beta)[0]
    return int(qualifying[0]) + 1 if qualifying.size else int(sigma.size)


def block_concat(parts: list[TruncatedSvd]) -> ConcatenatedFactors:
    """Column-stack the u's, row-stack the v_t's, keep block-ordered sigmas."""
    if not parts:
        raise EmptyInput("block_concat needs at least one factor set")
    shape = parts[0].shape
    for p in parts[1:]:
        if p.shape != shape:
            raise StructureMismatch(f"factor shapes differ: {p.shape} vs {shape}")
    offsets = []
    start = 0
    for p in parts:
        offsets.append((start, start + p.retained_rank))
        start += p.retained_rank
    return ConcatenatedFactors(
        u_cat=np.hstack([p.u for p in parts]),
        sigma_block=np.concatenate([p.sigma for p in parts]),
        v_cat_t=np.vstack([p.v_t for p in parts]),
        task_offsets=offsets,
    )


def procrustes_orthogonalize(a: np.ndarray, cond_threshold: float = 1e-8) -> np.ndarray:
    """Nearest matrix with orthonormal columns in Frobenius norm: the polar
    factor U V^T from the SVD of a.

    Raises IllConditioned when sigma_min/sigma_max < cond_threshold; callers
    may catch it and switch to Newton-Schulz.
    """
    a = np.asarray(a, dtype=np.float64)
    m, k = a.shape
    if k > m:
        raise InvalidParameter(f"need K <= m for orthonormal columns, got {m}x{k}")
    if not np.isfinite(a).all():
        raise NumericalError("procrustes input contains non-finite entries")
    u, s, v_t = np.linalg.svd(a, full_matrices=False)
    if s.size == 0:
        return a.copy()
    if s[0] == 0.0 or s[-1] / s[0] < cond_threshold:
        raise IllConditioned(
            f"stack is rank-deficient (sigma_min/sigma_max = "
            f"{0.0 if s[0] == 0 else s[-1] / s[0]:.3e} < {cond_threshold:g})"
        )
    return u @ v_t


def _coerce_schedule(coeffs, iterations: int) -> list[tuple[float, float, float]]:
    if coeffs is None:
        coeffs = QUINTIC_SCHEDULE
    seq = list(coeffs)
    if seq and isinstance(seq[0], (int, float)):
        if len(seq) != 3:
            raise InvalidParameter(f"a coefficient triple needs 3 values, got {len(seq)}")
        seq = [tuple(float(c) for c in seq)]
    else:
        seq = [tuple(float(c) for c in t) for t in seq]
        if any(len(t) != 3 for t in seq):
            raise InvalidParameter("every schedule entry must be a (c1, c2, c3) triple")
    if not seq:
        raise InvalidParameter("empty coefficient schedule")
    # Extra iterations repeat the last (tightening) step.
    return [seq[min(i, len(seq) - 1)] for i in range(iterations)]


def newton_schulz_orthogonalize(
    a: np.ndarray,
    iterations: int = DEFAULT_NS_ITERATIONS,
    coeffs=None,
) -> np.ndarray:
    """Inverse-free approximation of the polar factor.

    X starts from a scaled by its Frobenius norm (so the spectral norm is at
    most 1) and iterates X <- c1*X + c2*(X X^T)X + c3*(X X^T)^2 X; wide inputs
    are transposed first and back at the end. coeffs may be a single (c1, c2,
    c3) triple or a per-iteration schedule; the default is QUINTIC_SCHEDULE.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidParameter(f"expected a matrix, got shape {a.shape}")
    if iterations < 1:
        raise InvalidParameter(f"iterations must be >= 1, got {iterations}")
    if not np.isfinite(a).all():
        raise NumericalError("newton-schulz input contains non-finite entries")
    norm = np.linalg.norm(a)
    if norm == 0.0:
        raise NumericalError("newton-schulz is undefined for the zero matrix")
    schedule = _coerce_schedule(coeffs, iterations)

    transpose = a.shape[1] > a.shape[0]
    x = (a.T if transpose else a) / norm
    for c1, c2, c3 in schedule:
        g = x @ x.T
        x = c1 * x + (c2 * g + c3 * (g @ g)) @ x
    return x.T if transpose else x


def orthogonality_residual(a: np.ndarray) -> float:
    """|| a^T a - I ||_F, the column-orthonormality defect."""
    k = a.shape[1]
    return float(np.linalg.norm(a.T @ a - np.eye(k)))


def reconstruct(u_orth: np.ndarray, sigma_block: np.ndarray, v_orth_t: np.ndarray) -> np.ndarray:
    """u_orth @ diag(sigma_block) @ v_orth_t."""
    if u_orth.shape[1] != sigma_block.shape[0] or v_orth_t.shape[0] != sigma_block.shape[0]:
        raise StructureMismatch(
            f"factor dimensions disagree: u {u_orth.shape}, sigma {sigma_block.shape}, "
            f"v_t {v_orth_t.shape}"
        )
    return (u_orth * sigma_block) @ v_orth_t


def stable_rank(a: np.ndarray) -> float:
    """||A||_F^2 / sigma_max^2; 0 for the zero matrix."""
    s = np.linalg.svd(np.asarray(a, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0.0
    return float((s**2).sum() / s[0] ** 2)


def max_principal_angle(basis_a: np.ndarray, basis_b: np.ndarray) -> float:
    """Largest canonical angle (radians) between the column spans of two
    matrices; 0 means span(a) is contained in span(b). Inputs are
    orthonormalized first, so near-orthonormal stacks are compared by their
    spans, not their column scaling."""
    if basis_a.size == 0 or basis_b.size == 0:
        return float(np.pi / 2)
    qa = np.linalg.qr(basis_a)[0]
    qb = np.linalg.qr(basis_b)[0]
    cosines = np.linalg.svd(qa.T @ qb, compute_uv=False)
    q = min(qa.shape[1], qb.shape[1])
    smallest = np.clip(cosines[:q].min() if cosines.size else 0.0, -1.0, 1.0)
    return float(np.arccos(smallest))
