"""Command-line interface.

Verbs: ``merge <recipe>``, ``validate <recipe>``, ``diff <base> <tuned> -o
<tau>``, ``inspect <path> [--top-k N]``, ``synth-eval <spec> [-o csv]``.
Exit codes: 0 success, 1 validation error, 2 numerical error.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import DTYPES, load_checkpoint, save_checkpoint
from .engine import inspect_checkpoint, report_path_for, run_merge
from .errors import InvalidParameter, MergeError, NumericalError
from .recipe import parse_recipe, serialize_recipe
from .synth import parse_synth_spec, results_csv, run_suite
from .taskvec import compute_task_vector, task_vector_to_checkpoint


def _cmd_merge(args) -> int:
    with open(args.recipe, "r", encoding="utf-8") as fh:
        recipe = parse_recipe(fh.read())
    if args.out_dtype:
        if args.out_dtype not in DTYPES:
            raise InvalidParameter(
                f"--out-dtype must be one of {sorted(DTYPES)}, got {args.out_dtype!r}"
            )
        recipe.params["out_dtype"] = args.out_dtype
    report = run_merge(recipe)
    print(
        f"merged {report.tensor_count} tensors with {recipe.method} "
        f"({report.fallback_count} element-wise fallbacks, "
        f"{len(report.warnings)} warnings) in {report.wall_time:.2f}s"
    )
    print(f"checkpoint: {recipe.output_path}")
    print(f"report:     {report_path_for(recipe.output_path)}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def _cmd_validate(args) -> int:
    with open(args.recipe, "r", encoding="utf-8") as fh:
        recipe = parse_recipe(fh.read())
    sys.stdout.write(serialize_recipe(recipe))
    return 0


def _cmd_diff(args) -> int:
    base = load_checkpoint(args.base)
    tuned = load_checkpoint(args.tuned)
    tau = compute_task_vector(tuned, base, label=args.label or "")
    save_checkpoint(task_vector_to_checkpoint(tau), args.output)
    print(f"task vector ({len(tau.deltas)} tensors) written to {args.output}")
    return 0


def _cmd_inspect(args) -> int:
    summaries = inspect_checkpoint(args.path, top_k=args.top_k)
    if not summaries:
        print("no matrix-like tensors found")
        return 0
    for s in summaries:
        sv = " ".join(f"{v:.4g}" for v in s.singular_values)
        curve = " ".join(f"{c:.3f}" for c in s.energy_curve)
        print(f"{s.name}  shape={list(s.shape)} fold={list(s.fold_shape)}")
        print(f"  top singular values: {sv}")
        print(f"  stable rank: {s.stable_rank:.4f}")
        print(f"  energy c(s):  {curve}")
    return 0


def _cmd_synth_eval(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = parse_synth_spec(fh.read())
    csv = results_csv(run_suite(spec))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(csv)
        print(f"metrics written to {args.output}")
    else:
        sys.stdout.write(csv)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ckptmerge",
        description="Merge fine-tuned checkpoints of a shared base model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", help="run a merge recipe")
    p.add_argument("recipe", help="recipe file")
    p.add_argument("--out-dtype", default="", help="override the output dtype (f16/bf16/f32/f64)")
    p.set_defaults(func=_cmd_merge)

    p = sub.add_parser("validate", help="parse a recipe and print its fully defaulted form")
    p.add_argument("recipe", help="recipe file")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("diff", help="compute and persist a task vector (tuned - base)")
    p.add_argument("base", help="base checkpoint")
    p.add_argument("tuned", help="fine-tuned checkpoint")
    p.add_argument("-o", "--output", required=True, help="output path for the task vector")
    p.add_argument("--label", default="", help="task/domain label stored in the metadata")
    p.set_defaults(func=_cmd_diff)

    p = sub.add_parser("inspect", help="spectrum summary of a checkpoint or task vector")
    p.add_argument("path", help="checkpoint file")
    p.add_argument("--top-k", type=int, default=8, help="singular values to show per tensor")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("synth-eval", help="run the synthetic merging suite")
    p.add_argument("spec", help="suite parameter file")
    p.add_argument("-o", "--output", default="", help="write CSV here instead of stdout")
    p.set_defaults(func=_cmd_synth_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (MergeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
