import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckptmerge import (
    BaseMismatch,
    EmptyInput,
    StructureMismatch,
    TensorKind,
    apply_task_vector,
    classify_tensor,
    compute_task_vector,
    linear_combine,
)
from ckptmerge.checkpoint import TensorData

from conftest import make_checkpoint, random_checkpoint


def test_subtraction_worked_example():
    theta_t = make_checkpoint({"w": np.array([[1.0, 2.0], [3.0, 4.0]])})
    theta_0 = make_checkpoint({"w": np.ones((2, 2))})
    tau = compute_task_vector(theta_t, theta_0, "demo")
    np.testing.assert_array_equal(tau.deltas["w"].to_array(), [[0, 1], [2, 3]])
    assert tau.base_fingerprint == theta_0.fingerprint
    assert tau.label == "demo"


def test_identical_checkpoints_give_zero_vector(rng):
    theta = random_checkpoint(rng, {"w": (3, 3), "b": (4,)})
    tau = compute_task_vector(theta, theta)
    for t in tau.deltas.values():
        assert not t.to_array().any()


def test_delta_matches_elementwise_oracle(rng):
    a = rng.standard_normal((3, 3)).astype(np.float32)
    b = rng.standard_normal((3, 3)).astype(np.float32)
    tau = compute_task_vector(make_checkpoint({"w": a}), make_checkpoint({"w": b}))
    expected = np.empty((3, 3), dtype=np.float32)
    for i in range(3):
        for j in range(3):
            expected[i, j] = a[i, j] - b[i, j]
    np.testing.assert_array_equal(tau.deltas["w"].to_array(), expected)


def test_incompatible_raises_structure_mismatch(rng):
    a = random_checkpoint(rng, {"w": (2, 2)})
    b = random_checkpoint(rng, {"w": (2, 3)})
    with pytest.raises(StructureMismatch):
        compute_task_vector(a, b)


def test_apply_zero_lambda_is_base(rng):
    base = random_checkpoint(rng, {"w": (4, 4), "b": (2,)})
    tuned = random_checkpoint(rng, {"w": (4, 4), "b": (2,)})
    tau = compute_task_vector(tuned, base)
    out = apply_task_vector(base, tau, 0.0)
    for name in base.tensors:
        np.testing.assert_array_equal(out.tensors[name].to_array(), base.tensors[name].to_array())


def test_apply_unit_lambda_inverts_subtraction(rng):
    base = random_checkpoint(rng, {"w": (8, 5), "b": (8,)})
    tuned = random_checkpoint(rng, {"w": (8, 5), "b": (8,)})
    tau = compute_task_vector(tuned, base)
    out = apply_task_vector(base, tau, 1.0)
    for name in base.tensors:
        got = out.tensors[name].to_working()
        want = tuned.tensors[name].to_working()
        assert np.linalg.norm(got - want) <= 1e-6 * np.linalg.norm(want)


def test_apply_half_lambda_hand_arithmetic():
    base = make_checkpoint({"w": np.array([[1.0, 1.0]])})
    from ckptmerge import TaskVector

    tau = TaskVector(
        deltas={"w": TensorData.from_array("w", np.array([[0.0, 2.0]]), "f32")},
        base_fingerprint=base.fingerprint,
    )
    out = apply_task_vector(base, tau, 0.5)
    np.testing.assert_array_equal(out.tensors["w"].to_array(), [[1.0, 2.0]])


def test_apply_rejects_wrong_base(rng):
    base = random_checkpoint(rng, {"w": (2, 2)})
    other = random_checkpoint(rng, {"w": (2, 2)}, scale=2.0)
    tau = compute_task_vector(other, base)
    shifted = make_checkpoint({"w": other.tensors["w"].to_array() + 1})
    assert shifted.fingerprint == base.fingerprint  # structure matches, values differ
    tau_bad = compute_task_vector(shifted, base)
    tau_bad.base_fingerprint = "something-else"
    with pytest.raises(BaseMismatch):
        apply_task_vector(base, tau_bad, 1.0)


def test_linear_combine_identity_cancellation_and_oracle(rng):
    base = random_checkpoint(rng, {"w": (3, 3)})
    tuned = random_checkpoint(rng, {"w": (3, 3)})
    tau = compute_task_vector(tuned, base)

    same = linear_combine([tau], [1.0])
    np.testing.assert_array_equal(same.deltas["w"].to_array(), tau.deltas["w"].to_array())

    neg = compute_task_vector(base, tuned)  # opposite direction
    neg.base_fingerprint = tau.base_fingerprint
    zero = linear_combine([tau, neg], [1.0, 1.0])
    np.testing.assert_allclose(zero.deltas["w"].to_array(), np.zeros((3, 3)), atol=1e-6)

    ones = make_checkpoint({"w": np.ones((2, 2))})
    twos = make_checkpoint({"w": 2 * np.ones((2, 2))})
    zero_base = make_checkpoint({"w": np.zeros((2, 2))})
    t1 = compute_task_vector(ones, zero_base)
    t2 = compute_task_vector(twos, zero_base)
    combo = linear_combine([t1, t2], [0.3, 0.7])
    np.testing.assert_allclose(combo.deltas["w"].to_array(), 1.7 * np.ones((2, 2)), rtol=1e-6)

    with pytest.raises(EmptyInput):
        linear_combine([], [])


@settings(max_examples=30, deadline=None)
@given(
    shape=st.sampled_from([(4,), (2, 3), (2, 2, 2), ()]),
    seed=st.integers(0, 10_000),
)
def test_linear_combine_is_linear(shape, seed):
    rng = np.random.default_rng(seed)
    base = make_checkpoint({"w": np.zeros(shape, dtype=np.float32)})
    a = compute_task_vector(make_checkpoint({"w": rng.standard_normal(shape)}), base)
    b = compute_task_vector(make_checkpoint({"w": rng.standard_normal(shape)}), base)
    x, y = rng.uniform(-2, 2, size=2)
    joint = linear_combine([a, b], [x, y]).deltas["w"].to_working()
    split = (
        linear_combine([a], [x]).deltas["w"].to_working()
        + linear_combine([b], [y]).deltas["w"].to_working()
    )
    np.testing.assert_allclose(joint, split, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize(
    "shape,kind,fold",
    [
        ((4, 5), TensorKind.MATRIX_2D, (4, 5)),
        ((8, 3, 3), TensorKind.FOLDED_ND, (8, 9)),
        ((768,), TensorKind.VECTOR_1D, None),
        ((), TensorKind.SCALAR_0D, None),
        ((2, 3, 4, 5), TensorKind.FOLDED_ND, (2, 60)),
    ],
)
def test_classify_tensor(shape, kind, fold):
    t = TensorData.from_array("t", np.zeros(shape, dtype=np.float32), "f32")
    cls = classify_tensor(t)
    assert cls.kind is kind
    assert cls.fold_shape == fold
    if fold is not None:
        assert np.prod(fold) == np.prod(shape, dtype=int)
