import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatterkit.exceptions import ConfigurationError, DimensionMismatchError, InputError
from scatterkit.rewards import (
    GateMode,
    ResponseGroup,
    RewardConfig,
    Rollout,
    ScatterReward,
    chamfer_directed,
    compute_rewards,
    importance_weights,
    intra_diversity_reward,
    inter_diversity_reward,
    validity_reward,
)

from . import oracles
from .conftest import R2

COLUMNS = ("r_validity", "r_intra", "s_raw", "gate", "r_inter", "composite")


def random_group(rng, max_g=4, max_m=4, max_d=8, ragged=False):
    g = int(rng.integers(1, max_g + 1))
    d = int(rng.integers(1, max_d + 1))
    m = int(rng.integers(1, max_m + 1))
    rollouts = []
    for _ in range(g):
        mk = int(rng.integers(1, max_m + 1)) if ragged else m
        rollouts.append(rng.standard_normal((mk, d)))
    gt = rng.standard_normal((int(rng.integers(1, 4)), d))
    return rollouts, gt


@pytest.mark.parametrize("q, expected", [([1.0, 0.0], 0.5), ([1.0, 0.70710678], 0.85355339), ([1.0], 1.0)])
def test_validity_reward(q, expected):
    assert validity_reward(q) == pytest.approx(expected, abs=1e-8)


def test_validity_reward_rejects_out_of_range():
    with pytest.raises(InputError):
        validity_reward([1.2])
    with pytest.raises(InputError):
        validity_reward([])


@pytest.mark.parametrize(
    "h, q, expected",
    [
        ([[1, 0], [1, 0]], [0.3, 0.9], 0.0),
        ([[1, 0], [0, 1]], [1, 0], 0.0),
        ([[1, 0], [R2, R2]], [1, 0.70710678], 0.24629285754571037),
        ([[1, 0]], [1.0], 0.0),
    ],
)
def test_intra_examples(h, q, expected):
    assert intra_diversity_reward(h, q) == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize(
    "q, expected",
    [([1, 1], [0.5, 0.5]), ([0, 0], [0.0, 0.0]), ([1.0, 0.70710678], [0.5857864380, 0.4142135620])],
)
def test_importance_weights(q, expected):
    w = importance_weights(q, 1e-8)
    np.testing.assert_allclose(w, expected, atol=1e-6)
    assert np.all(w >= 0) and w.sum() < 1


def test_importance_weights_exact_zero_for_invalid():
    w = importance_weights([0.0, 0.0])
    assert w.tolist() == [0.0, 0.0]


def test_chamfer_examples():
    a = [[1.0, 0.0], [0.3, 0.7]]
    assert chamfer_directed(a, a, [0.4, 0.6]) == pytest.approx(0.0, abs=1e-15)
    w = importance_weights([1.0])
    assert chamfer_directed([[1, 0]], [[0, 1]], w) == pytest.approx(1.0, abs=1e-6)
    w = importance_weights([1.0, 0.0])
    assert chamfer_directed([[1, 0], [0, 1]], [[1, 0], [1, 0]], w) == 0.0


def test_chamfer_is_asymmetric():
    src, dst = [[1, 0], [0, 1]], [[1, 0]]
    w = [0.5, 0.5]
    assert chamfer_directed(src, dst, w) == pytest.approx(0.5)
    assert chamfer_directed(dst, src, [1.0]) == pytest.approx(0.0)


def test_chamfer_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        chamfer_directed([[1, 0]], [[1, 0, 0]], [1.0])


def test_inter_cross_mode_group(cross_mode_group):
    s_raw, gate, r_inter = inter_diversity_reward(cross_mode_group, 0)
    assert s_raw == pytest.approx(1.0, abs=1e-6)
    assert gate == pytest.approx(1.0, abs=1e-12)
    assert r_inter == pytest.approx(1.0, abs=1e-6)


def test_inter_duplicate_rollouts_get_nothing():
    group = ResponseGroup(([[1, 0], [0, 1]], [[1, 0], [0, 1]]), [[1, 0]])
    s_raw, _, r_inter = inter_diversity_reward(group, 0)
    assert s_raw == 0.0 and r_inter == 0.0


@pytest.mark.parametrize("gate", ["full", "mean", "min"])
def test_inter_gate_annihilation(gate):
    group = ResponseGroup(([[0, 1], [0, -1]], [[1, 0]]), [[1, 0]])
    s_raw, g, r_inter = inter_diversity_reward(group, 0, GateMode(gate))
    assert g == 0.0 and r_inter == 0.0


def test_single_rollout_group_has_no_inter():
    (b,) = compute_rewards(ResponseGroup(([[1, 0], [0, 1]],), [[1, 0]]))
    assert b.s_raw == 0.0 and b.r_inter == 0.0
    assert b.gate == pytest.approx(np.sqrt(0.5))


def test_composite_cross_mode_group(cross_mode_group):
    out = compute_rewards(cross_mode_group)
    assert [b.composite for b in out] == pytest.approx([2.0, 2.0], abs=1e-6)
    assert out[0].r_intra == 0.0


def test_validity_only_toggle_matches_baseline(cross_mode_group):
    out = compute_rewards(cross_mode_group, RewardConfig.preset("validity-only"))
    for b in out:
        assert b.r_intra == 0.0 and b.r_inter == 0.0 and b.s_raw == 0.0
        assert b.composite == b.r_validity


def test_all_orthogonal_group_scores_zero():
    group = ResponseGroup(([[0, 1, 0], [0, 0, 1]], [[0, 1, 1], [0, -1, 0]]), [[1, 0, 0]])
    assert all(b.composite == 0.0 for b in compute_rewards(group))


def test_ragged_rollouts_use_their_own_size():
    group = ResponseGroup(([[1, 0]], [[1, 0], [0, 1], [R2, R2]]), [[1, 0], [0, 1]])
    out = compute_rewards(group)
    ref = oracles.rewards([[[1, 0]], [[1, 0], [0, 1], [R2, R2]]], [[1, 0], [0, 1]])
    for b, r in zip(out, ref):
        for c in COLUMNS:
            assert getattr(b, c) == pytest.approx(r[c], abs=1e-12)


def test_group_validation():
    with pytest.raises(DimensionMismatchError):
        ResponseGroup(([[1, 0]], [[1, 0, 0]]), [[1, 0]])
    with pytest.raises(InputError):
        ResponseGroup((), [[1, 0]])
    with pytest.raises(ConfigurationError):
        RewardConfig(epsilon=0)
    with pytest.raises(ConfigurationError):
        RewardConfig.preset("bogus")


@pytest.mark.parametrize("gate", ["full", "mean", "min", "none"])
@pytest.mark.parametrize("preset", ["scatter", "validity-only", "no-intra", "no-inter"])
def test_matches_brute_force(gate, preset):
    rng = np.random.default_rng(zlib.crc32(f"{gate}/{preset}".encode()))
    for _ in range(25):
        rollouts, gt = random_group(rng, ragged=True)
        config = RewardConfig.preset(preset, gate=gate)
        out = compute_rewards(ResponseGroup(tuple(rollouts), gt), config)
        ref = oracles.rewards(
            [r.tolist() for r in rollouts], gt.tolist(), config.epsilon, gate,
            config.use_validity, config.use_intra, config.use_inter,
        )
        for b, r in zip(out, ref):
            for c in COLUMNS:
                assert getattr(b, c) == pytest.approx(r[c], abs=1e-9)
            np.testing.assert_allclose(b.weights, r["weights"], atol=1e-12)


def test_breakdown_invariants(rng):
    for _ in range(200):
        rollouts, gt = random_group(rng)
        out = compute_rewards(ResponseGroup(tuple(rollouts), gt))
        for b in out:
            assert b.composite == b.r_validity + b.r_intra + b.r_inter
            assert abs(b.r_inter - b.s_raw * b.gate) <= 1e-12
            assert b.weights.sum() < 1.0
            assert 0.0 <= b.r_validity <= 1.0
            assert 0.0 <= b.r_intra <= 2.0
            assert 0.0 <= b.s_raw <= 2.0
            assert b.r_inter <= b.s_raw + 1e-15
            assert b.distances[b.rollout_index] == 0.0


def test_intra_bounded_by_one_for_nonnegative_cosines(rng):
    for _ in range(200):
        H = np.abs(rng.standard_normal((int(rng.integers(2, 6)), 4)))
        q = rng.uniform(0, 1, H.shape[0])
        assert intra_diversity_reward(H, q) <= 1.0


def test_self_coverage(rng):
    for _ in range(100):
        rollouts, gt = random_group(rng)
        group = ResponseGroup(tuple(rollouts), gt)
        for b in compute_rewards(group):
            k = b.rollout_index
            assert chamfer_directed(rollouts[k], rollouts[k], b.weights) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    rollouts, gt = random_group(rng, max_g=4, max_m=5)
    base = compute_rewards(ResponseGroup(tuple(rollouts), gt))

    shuffled = [r[rng.permutation(r.shape[0])] for r in rollouts]
    within = compute_rewards(ResponseGroup(tuple(shuffled), gt))
    for a, b in zip(base, within):
        for c in COLUMNS:
            assert getattr(a, c) == pytest.approx(getattr(b, c), abs=1e-12)
        np.testing.assert_allclose(a.distances, b.distances, atol=1e-12)

    order = rng.permutation(len(rollouts))
    across = compute_rewards(ResponseGroup(tuple(rollouts[i] for i in order), gt))
    for new_pos, old_pos in enumerate(order):
        for c in COLUMNS:
            assert getattr(across[new_pos], c) == pytest.approx(getattr(base[old_pos], c), abs=1e-12)


def test_zero_validity_hypothesis_contributes_nothing():
    gt = [[1.0, 0.0, 0.0]]
    valid = [[1.0, 0.2, 0.0], [0.8, 0.0, 0.5]]
    junk = [0.0, 1.0, 0.0]
    other = ResponseGroup(([[0.0, 0.0, 1.0]],), gt).rollouts[0].embeddings
    with_junk = ResponseGroup((valid + [junk], other), gt)
    without = ResponseGroup((valid, other), gt)
    a, b = compute_rewards(with_junk)[0], compute_rewards(without)[0]
    assert a.distances[1] == pytest.approx(b.distances[1], abs=1e-12)
    # intra: same pair sum, normalized by more pairs
    assert a.r_intra * 3 == pytest.approx(b.r_intra * 1, abs=1e-12)


def test_estimator_surface(cross_mode_group):
    est = ScatterReward(gate="full")
    assert est.get_params()["gate"] == "full"
    X = [[[1.0, 0.0]], [[0.0, 1.0]]]
    out = est.fit([[1, 0], [0, 1]]).transform(X)
    assert out.shape == (2, 6)
    assert list(est.get_feature_names_out()) == list(COLUMNS)
    np.testing.assert_allclose(out[:, -1], [2.0, 2.0], atol=1e-6)
    est.set_params(use_inter=False)
    np.testing.assert_allclose(est.fit([[1, 0], [0, 1]]).transform(X)[:, -1], [1.0, 1.0])


def test_rollout_text_count_checked():
    with pytest.raises(InputError):
        Rollout([[1, 0]], texts=("a", "b"))
