import numpy as np
import pytest

from ckptmerge import Checkpoint, TensorData


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_checkpoint(arrays: dict, dtype: str = "f32", metadata: dict | None = None) -> Checkpoint:
    tensors = {
        name: TensorData.from_array(name, np.asarray(arr), dtype)
        for name, arr in arrays.items()
    }
    return Checkpoint(tensors=tensors, metadata=metadata or {})


def random_checkpoint(rng, shapes: dict[str, tuple], dtype: str = "f32", scale: float = 1.0):
    return make_checkpoint(
        {name: scale * rng.standard_normal(shape) for name, shape in shapes.items()},
        dtype=dtype,
    )


SHAPES_MIXED = {"enc.w": (16, 12), "dec.w": (10, 10), "enc.b": (16,), "gain": ()}
