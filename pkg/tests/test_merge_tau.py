import itertools

import numpy as np
import pytest

from ckptmerge import (
    BaseMismatch,
    EmptyInput,
    InvalidParameter,
    TauMergeConfig,
    compute_task_vector,
    pcb,
    sce,
    task_arithmetic,
    ties,
)

from conftest import make_checkpoint, random_checkpoint


def tau_from(base, array, name="w"):
    tuned = make_checkpoint({name: base.tensors[name].to_working() + np.asarray(array, dtype=np.float32)})
    return compute_task_vector(tuned, base)


def merged_value(ckpt, name="w"):
    return ckpt.tensors[name].to_working()


@pytest.fixture
def scalar_base():
    return make_checkpoint({"w": np.array(1.0)})


# ---------------------------------------------------------------- task arithmetic


def test_ta_single_tau_unit_lambda_recovers_model(rng):
    base = random_checkpoint(rng, {"w": (4, 4)})
    tuned = random_checkpoint(rng, {"w": (4, 4)})
    tau = compute_task_vector(tuned, base)
    out = task_arithmetic(base, [tau], lam=1.0)
    np.testing.assert_allclose(merged_value(out), merged_value(tuned), rtol=1e-6)


def test_ta_zero_lambda_is_base(rng):
    base = random_checkpoint(rng, {"w": (3, 3)})
    tau = tau_from(base, rng.standard_normal((3, 3)))
    out = task_arithmetic(base, [tau], lam=0.0)
    np.testing.assert_array_equal(out.tensors["w"].data, base.tensors["w"].data)


def test_ta_hand_arithmetic(scalar_base):
    taus = [tau_from(scalar_base, 2.0), tau_from(scalar_base, 3.0)]
    out = task_arithmetic(scalar_base, taus, lam=0.4)
    assert float(merged_value(out)) == pytest.approx(3.0, rel=1e-6)


def test_ta_linear_in_lambda_and_additive(scalar_base):
    t2, t3 = tau_from(scalar_base, 2.0), tau_from(scalar_base, 3.0)
    half = task_arithmetic(scalar_base, [t2, t3], lam=0.2)
    full = task_arithmetic(scalar_base, [t2, t3], lam=0.4)
    assert float(merged_value(full)) - 1 == pytest.approx(2 * (float(merged_value(half)) - 1))
    split = task_arithmetic(scalar_base, [t2], lam=0.4)
    other = task_arithmetic(scalar_base, [t3], lam=0.4)
    assert float(merged_value(full)) == pytest.approx(
        float(merged_value(split)) + float(merged_value(other)) - 1
    )


def test_ta_errors(scalar_base):
    with pytest.raises(EmptyInput):
        task_arithmetic(scalar_base, [], 1.0)
    tau = tau_from(scalar_base, 1.0)
    tau.base_fingerprint = "nope"
    with pytest.raises(BaseMismatch):
        task_arithmetic(scalar_base, [tau], 1.0)


# ---------------------------------------------------------------- ties


def test_ties_unanimous_mean(rng):
    base = random_checkpoint(rng, {"w": (4, 4)})
    delta = rng.standard_normal((4, 4))
    taus = [tau_from(base, delta) for _ in range(3)]
    out = ties(base, taus, TauMergeConfig(lam=1.0, density=1.0))
    np.testing.assert_allclose(
        merged_value(out), base.tensors["w"].to_working() + delta, rtol=1e-5, atol=1e-6
    )


def test_ties_sign_conflict_zeroes_coordinate():
    base = make_checkpoint({"w": np.zeros(2)})
    plus = tau_from(base, [2.0, 1.0])
    minus = tau_from(base, [-2.0, 1.0])
    out = ties(base, [plus, minus], TauMergeConfig(lam=1.0, density=1.0))
    np.testing.assert_allclose(merged_value(out), [0.0, 1.0], atol=1e-7)


def test_ties_trim_keeps_top_magnitude():
    # oracle: top-k by |value| of [3, -1, 0.5, 0.2] at density 0.5 is [3, -1, 0, 0]
    base = make_checkpoint({"w": np.zeros(4)})
    tau = tau_from(base, [3.0, -1.0, 0.5, 0.2])
    out = ties(base, [tau], TauMergeConfig(lam=1.0, density=0.5))
    np.testing.assert_allclose(merged_value(out), [3.0, -1.0, 0.0, 0.0], atol=1e-7)


def test_trim_counts_survive_float_rounding():
    # 0.3 * 10 floors to 3 despite 0.3*10 == 2.9999999999999996 in binary
    base = make_checkpoint({"w": np.zeros(10)})
    tau = tau_from(base, np.linspace(10, 1, 10))
    out = ties(base, [tau], TauMergeConfig(lam=1.0, density=0.3))
    assert int(np.count_nonzero(merged_value(out))) == 3
    out = pcb(base, [tau, tau], TauMergeConfig(lam=1.0, retain_fraction=0.3))
    assert int(np.count_nonzero(merged_value(out))) == 3


def test_ties_permutation_invariant(rng):
    base = random_checkpoint(rng, {"w": (6,)})
    taus = [tau_from(base, rng.standard_normal(6)) for _ in range(3)]
    outs = [
        merged_value(ties(base, list(perm), TauMergeConfig(density=0.5)))
        for perm in itertools.permutations(taus)
    ]
    for out in outs[1:]:
        np.testing.assert_allclose(out, outs[0], rtol=1e-6, atol=1e-7)


# ---------------------------------------------------------------- pcb


def test_pcb_single_tau_full_retain_is_identity(rng):
    base = random_checkpoint(rng, {"w": (5, 5)})
    delta = rng.standard_normal((5, 5))
    tau = tau_from(base, delta)
    out = pcb(base, [tau], TauMergeConfig(lam=1.0, retain_fraction=1.0))
    np.testing.assert_allclose(
        merged_value(out), base.tensors["w"].to_working() + delta, rtol=1e-5, atol=1e-6
    )


def test_pcb_identical_taus_cancel_to_tau(rng):
    base = random_checkpoint(rng, {"w": (4, 4)})
    delta = rng.standard_normal((4, 4))
    taus = [tau_from(base, delta) for _ in range(4)]
    out = pcb(base, taus, TauMergeConfig(lam=1.0, retain_fraction=1.0))
    np.testing.assert_allclose(
        merged_value(out), base.tensors["w"].to_working() + delta, rtol=1e-5, atol=1e-6
    )


def test_pcb_zero_lambda_is_base(rng):
    base = random_checkpoint(rng, {"w": (3, 3)})
    tau = tau_from(base, rng.standard_normal((3, 3)))
    out = pcb(base, [tau], TauMergeConfig(lam=0.0))
    np.testing.assert_array_equal(out.tensors["w"].data, base.tensors["w"].data)


def test_pcb_bounded_by_input_range(rng):
    base = make_checkpoint({"w": np.zeros(12)})
    taus = [tau_from(base, rng.standard_normal(12)) for _ in range(3)]
    out = pcb(base, taus, TauMergeConfig(lam=1.0, retain_fraction=1.0))
    stacked = np.stack([t.deltas["w"].to_working() for t in taus])
    merged = merged_value(out)
    assert (merged <= stacked.max(axis=0) + 1e-6).all()
    assert (merged >= stacked.min(axis=0) - 1e-6).all()


# ---------------------------------------------------------------- sce


def test_sce_two_identical_taus_full_select(rng):
    base = random_checkpoint(rng, {"w": (4, 4)})
    delta = rng.standard_normal((4, 4))
    taus = [tau_from(base, delta) for _ in range(2)]
    out = sce(base, taus, TauMergeConfig(select_fraction=1.0))
    np.testing.assert_allclose(
        merged_value(out), base.tensors["w"].to_working() + delta, rtol=1e-5, atol=1e-6
    )


def test_sce_selects_high_variance_coordinate():
    # oracle: variance ranking picks the only coordinate where taus differ;
    # eta = (25/34, 9/34), so merged[3] = (25*5 + 9*3)/34 = 152/34
    base = make_checkpoint({"w": np.zeros(4)})
    t1 = tau_from(base, [1.0, 1.0, 1.0, 5.0])
    t2 = tau_from(base, [1.0, 1.0, 1.0, 3.0])
    out = sce(base, [t1, t2], TauMergeConfig(select_fraction=0.25))
    merged = merged_value(out)
    np.testing.assert_allclose(merged[:3], 0.0, atol=0)
    assert merged[3] == pytest.approx(152 / 34, rel=1e-6)


def test_sce_sign_conflict_on_selected_coordinate():
    base = make_checkpoint({"w": np.zeros(4)})
    t1 = tau_from(base, [1.0, 1.0, 1.0, 5.0])
    t2 = tau_from(base, [1.0, 1.0, 1.0, -5.0])
    out = sce(base, [t1, t2], TauMergeConfig(select_fraction=0.25))
    # equal energies -> elected sign is 0 -> coordinate erased entirely
    np.testing.assert_array_equal(merged_value(out), np.zeros(4))


def test_sce_zero_taus_give_base(rng):
    base = random_checkpoint(rng, {"w": (3, 3)})
    taus = [compute_task_vector(base, base) for _ in range(2)]
    out = sce(base, taus, TauMergeConfig())
    np.testing.assert_array_equal(out.tensors["w"].data, base.tensors["w"].data)


def test_sce_needs_two(rng):
    base = random_checkpoint(rng, {"w": (2, 2)})
    with pytest.raises(InvalidParameter):
        sce(base, [compute_task_vector(base, base)], TauMergeConfig())


def test_sce_bounded_when_all_selected(rng):
    base = make_checkpoint({"w": np.zeros(10)})
    taus = [tau_from(base, rng.standard_normal(10)) for _ in range(3)]
    out = sce(base, taus, TauMergeConfig(select_fraction=1.0))
    stacked = np.stack([t.deltas["w"].to_working() for t in taus])
    merged = merged_value(out)
    assert (merged <= stacked.max(axis=0) + 1e-6).all()
    assert (merged >= stacked.min(axis=0) - 1e-6).all()


# ---------------------------------------------------------------- shared properties


def test_all_methods_map_zero_taus_to_base_exactly(rng):
    base = random_checkpoint(rng, {"w": (4, 4), "b": (3,)})
    zeros = [compute_task_vector(base, base) for _ in range(2)]
    for call in (
        lambda: task_arithmetic(base, zeros, 0.4),
        lambda: ties(base, zeros, TauMergeConfig()),
        lambda: pcb(base, zeros, TauMergeConfig()),
        lambda: sce(base, zeros, TauMergeConfig()),
    ):
        out = call()
        for name in base.tensors:
            assert out.tensors[name].data == base.tensors[name].data


def test_methods_permutation_invariant(rng):
    base = random_checkpoint(rng, {"w": (8,)})
    taus = [tau_from(base, rng.standard_normal(8)) for _ in range(3)]
    for method in (
        lambda ts: task_arithmetic(base, ts, 0.4),
        lambda ts: ties(base, ts, TauMergeConfig(density=0.5)),
        lambda ts: pcb(base, ts, TauMergeConfig(retain_fraction=0.5)),
        lambda ts: sce(base, ts, TauMergeConfig(select_fraction=0.5)),
    ):
        reference = merged_value(method(taus))
        for perm in itertools.permutations(taus):
            np.testing.assert_allclose(merged_value(method(list(perm))), reference, rtol=1e-5, atol=1e-7)


def test_config_validation():
    with pytest.raises(InvalidParameter):
        TauMergeConfig(density=0.0).validate()
    with pytest.raises(InvalidParameter):
        TauMergeConfig(temperature=0.0).validate()
    with pytest.raises(InvalidParameter):
        TauMergeConfig(lam=float("inf")).validate()
