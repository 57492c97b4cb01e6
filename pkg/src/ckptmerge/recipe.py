"""Declarative merge recipes.

A recipe is a flat text document of ``key: value`` lines with one nested
``params:`` block::

    method: boosted_tsvm
    base: checkpoints/base.safetensors
    model: checkpoints/news.safetensors as news
    model: checkpoints/calls.safetensors as calls
    output: merged.safetensors
    params:
      lambda: 1.0
      beta: 0.3

Unknown keys are rejected; omitted params take the method's documented
defaults, so a parsed recipe is always fully specified and reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .checkpoint import DTYPES
from .errors import InvalidParameter, MissingField, UnknownMethod
from .merge_subspace import NEWTON_SCHULZ, PROCRUSTES

PS_METHODS = ("soup", "model_stock", "karcher", "multi_slerp")
TAU_METHODS = ("ta", "ties", "pcb", "sce")
SUBSPACE_METHODS = ("tsvm", "boosted_tsvm", "iso_c", "iso_cts")
ALL_METHODS = PS_METHODS + TAU_METHODS + SUBSPACE_METHODS

# Per-method parameter schema: name -> default (None means derived at parse
# time). Everything here is deliberately explicit: recipes are the ledger of
# hyperparameters, so every knob a method reads must appear with its value.
_COMMON: dict[str, object] = {"out_dtype": None}
_SCHEMAS: dict[str, dict[str, object]] = {
    "soup": {"include_base": False},
    "model_stock": {},
    "karcher": {"include_base": True, "tolerance": 1e-5, "max_iterations": 10},
    "multi_slerp": {"include_base": True},
    "ta": {"lambda": 0.4},
    "ties": {"lambda": 1.0, "density": 0.2},
    "pcb": {"lambda": 1.0, "retain_fraction": 0.1, "temperature": 1.0},
    "sce": {"lambda": 1.0, "select_fraction": 0.1},
    "tsvm": {
        "lambda": 1.0,
        "rank_fraction": None,  # defaults to 1/T for T models
        "orthogonalizer": PROCRUSTES,
        "ns_iterations": 5,
    },
    "boosted_tsvm": {
        "lambda": 1.0,
        "rank_fraction": None,
        "beta": 0.3,
        "epsilon": 1e-12,
        "orthogonalizer": PROCRUSTES,
        "ns_iterations": 5,
    },
    "iso_c": {"lambda": 1.0},
    "iso_cts": {
        "lambda": 1.0,
        "common_fraction": 0.5,
        "orthogonalizer": NEWTON_SCHULZ,
        "ns_iterations": 5,
    },
}

_MIN_MODELS = {"model_stock": 2, "sce": 2}

_FLOAT_PARAMS = {
    "lambda",
    "beta",
    "epsilon",
    "rank_fraction",
    "density",
    "retain_fraction",
    "select_fraction",
    "temperature",
    "common_fraction",
    "tolerance",
}
_INT_PARAMS = {"ns_iterations", "max_iterations"}
_BOOL_PARAMS = {"include_base"}
_STR_PARAMS = {"orthogonalizer", "out_dtype"}


@dataclass
class MergeRecipe:
    method: str
    base_path: str
    model_paths: list[tuple[str, str]]  # (path, label)
    output_path: str
    params: dict[str, object] = field(default_factory=dict)


def _coerce(key: str, raw: str):
    if key in _BOOL_PARAMS:
        low = raw.strip().lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise InvalidParameter(f"param {key!r}: expected a boolean, got {raw!r}")
    if key in _INT_PARAMS:
        try:
            return int(raw)
        except ValueError as exc:
            raise InvalidParameter(f"param {key!r}: expected an integer, got {raw!r}") from exc
    if key in _FLOAT_PARAMS:
        try:
            return float(raw)
        except ValueError as exc:
            raise InvalidParameter(f"param {key!r}: expected a number, got {raw!r}") from exc
    return raw.strip()


def _check_fraction(params: dict, key: str, low_open: bool = True) -> None:
    if key not in params or params[key] is None:
        return
    v = params[key]
    ok = (0.0 < v <= 1.0) if low_open else (0.0 <= v <= 1.0)
    if not ok:
        span = "(0, 1]" if low_open else "[0, 1]"
        raise InvalidParameter(f"param {key!r} must be in {span}, got {v}")


def _validate_params(method: str, params: dict, n_models: int) -> None:
    if "lambda" in params and not math.isfinite(params["lambda"]):
        raise InvalidParameter(f"lambda must be finite, got {params['lambda']}")
    _check_fraction(params, "beta", low_open=False)
    for key in ("rank_fraction", "density", "retain_fraction", "select_fraction", "common_fraction"):
        _check_fraction(params, key)
    for key in ("temperature", "tolerance", "epsilon"):
        if key in params and not params[key] > 0:
            raise InvalidParameter(f"param {key!r} must be > 0, got {params[key]}")
    for key in ("ns_iterations", "max_iterations"):
        if key in params and params[key] < 1:
            raise InvalidParameter(f"param {key!r} must be >= 1, got {params[key]}")
    if params.get("orthogonalizer") not in (None, PROCRUSTES, NEWTON_SCHULZ):
        raise InvalidParameter(
            f"orthogonalizer must be {PROCRUSTES!r} or {NEWTON_SCHULZ!r}, "
            f"got {params.get('orthogonalizer')!r}"
        )
    if params.get("out_dtype") is not None and params["out_dtype"] not in DTYPES:
        raise InvalidParameter(
            f"out_dtype must be one of {sorted(DTYPES)}, got {params['out_dtype']!r}"
        )
    minimum = _MIN_MODELS.get(method, 1)
    if n_models < minimum:
        raise InvalidParameter(f"method {method!r} needs >= {minimum} models, got {n_models}")


def parse_recipe(text: str) -> MergeRecipe:
    """Parse and fully default a recipe document."""
    method: str | None = None
    base: str | None = None
    output: str | None = None
    models: list[tuple[str, str]] = []
    raw_params: dict[str, str] = {}
    in_params = False

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        indented = line[: len(line) - len(line.lstrip())] != ""
        if in_params and not indented:
            in_params = False
        if ":" not in stripped:
            raise InvalidParameter(f"line {lineno}: expected 'key: value', got {stripped!r}")
        key, _, value = stripped.partition(":")
        key = key.strip()
        value = value.strip()
        if in_params:
            if key in raw_params:
                raise InvalidParameter(f"line {lineno}: duplicate param {key!r}")
            raw_params[key] = value
            continue
        if key == "params":
            if value:
                raise InvalidParameter(f"line {lineno}: 'params:' opens a block, no inline value")
            in_params = True
        elif key == "method":
            method = value
        elif key == "base":
            base = value
        elif key == "output":
            output = value
        elif key == "model":
            path, _, label = value.partition(" as ")
            path = path.strip()
            label = label.strip() or f"model_{len(models)}"
            models.append((path, label))
        else:
            raise InvalidParameter(f"line {lineno}: unknown key {key!r}")

    if method is None:
        raise MissingField("recipe is missing 'method'")
    if method not in ALL_METHODS:
        raise UnknownMethod(f"unknown method {method!r}; expected one of {', '.join(ALL_METHODS)}")
    if not base:
        raise MissingField("recipe is missing 'base'")
    if not models or any(not p for p, _ in models):
        raise MissingField("recipe needs at least one non-empty 'model' path")
    if not output:
        raise MissingField("recipe is missing 'output'")

    schema = dict(_COMMON)
    schema.update(_SCHEMAS[method])
    params: dict[str, object] = dict(schema)
    for key, raw in raw_params.items():
        if key not in schema:
            raise InvalidParameter(f"param {key!r} is not accepted by method {method!r}")
        params[key] = _coerce(key, raw)
    if params.get("rank_fraction", "absent") is None:
        params["rank_fraction"] = 1.0 / len(models)
    _validate_params(method, params, len(models))
    return MergeRecipe(
        method=method,
        base_path=base,
        model_paths=models,
        output_path=output,
        params=params,
    )


def serialize_recipe(recipe: MergeRecipe) -> str:
    """Canonical text form; parse(serialize(r)) == r."""
    lines = [f"method: {recipe.method}", f"base: {recipe.base_path}"]
    for path, label in recipe.model_paths:
        lines.append(f"model: {path} as {label}")
    lines.append(f"output: {recipe.output_path}")
    lines.append("params:")
    for key in sorted(recipe.params):
        value = recipe.params[key]
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"  {key}: {value}")
    return "\n".join(lines) + "\n"
