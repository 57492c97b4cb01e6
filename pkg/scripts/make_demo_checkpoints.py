#!/usr/bin/env python3
"""Create a small demo workspace: one base checkpoint, three synthetic
fine-tuned variants, and a ready-to-run recipe for every merge method.

Usage:
    python scripts/make_demo_checkpoints.py demo/
    ckptmerge merge demo/recipes/boosted_tsvm.recipe
"""

import argparse
import pathlib

import numpy as np

from ckptmerge import Checkpoint, TensorData, save_checkpoint
from ckptmerge.recipe import ALL_METHODS

SHAPES = {
    "encoder.attn.w": (64, 48),
    "encoder.mlp.w": (96, 64),
    "decoder.attn.w": (64, 64),
    "encoder.attn.b": (64,),
    "scale": (),
}


def build(arrays: dict) -> Checkpoint:
    tensors = {
        name: TensorData.from_array(name, arr.astype(np.float32), "f32")
        for name, arr in arrays.items()
    }
    return Checkpoint(tensors=tensors)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("workdir", type=pathlib.Path)
    parser.add_argument("--tasks", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    args.workdir.mkdir(parents=True, exist_ok=True)
    recipes = args.workdir / "recipes"
    recipes.mkdir(exist_ok=True)

    base_arrays = {name: rng.standard_normal(shape) for name, shape in SHAPES.items()}
    save_checkpoint(build(base_arrays), args.workdir / "base.safetensors")

    model_paths = []
    for t in range(args.tasks):
        # low-rank update on matrices, small shift on the rest
        arrays = {}
        for name, shape in SHAPES.items():
            if len(shape) == 2:
                u = rng.standard_normal((shape[0], 3))
                v = rng.standard_normal((3, shape[1]))
                arrays[name] = base_arrays[name] + 0.05 * (u @ v)
            else:
                arrays[name] = base_arrays[name] + 0.01 * rng.standard_normal(shape)
        path = args.workdir / f"task{t}.safetensors"
        save_checkpoint(build(arrays), path)
        model_paths.append(path)

    for method in ALL_METHODS:
        lines = [f"method: {method}", f"base: {args.workdir / 'base.safetensors'}"]
        lines += [f"model: {p} as task{i}" for i, p in enumerate(model_paths)]
        lines.append(f"output: {args.workdir / ('merged_' + method + '.safetensors')}")
        (recipes / f"{method}.recipe").write_text("\n".join(lines) + "\n")

    print(f"wrote base + {args.tasks} fine-tuned checkpoints to {args.workdir}/")
    print(f"wrote one recipe per method to {recipes}/")
    print(f"try: ckptmerge merge {recipes / 'boosted_tsvm.recipe'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
