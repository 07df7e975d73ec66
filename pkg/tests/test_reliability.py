import math

import numpy as np
import pytest

from analysis.reliability import (dro_fuse, fuse_and_normalize, kl_ball_oracle, score_all, score_delta, score_je,
                                  score_rep)
from models.codebook import Assignment, Codebook, PseudoCodebook, lloyd_cluster

def assignment(labels, K):
    labels = np.asarray(labels)
    return Assignment(labels, np.bincount(labels, minlength=K))

def test_rep_hand_exponentials():
    patches = np.array([[0.0], [10.0 + math.sqrt(math.log(4))]])
    pseudo = PseudoCodebook(np.array([[0.0], [10.0]]), 2)
    assert np.allclose(score_rep(patches, pseudo, assignment([0, 1], 2)), [0.75, 0.0], atol=1e-12)

def test_rep_all_on_centers_is_zero():
    patches = np.array([[1.0, 2.0], [3.0, 4.0], [1.0, 2.0]])
    pseudo = PseudoCodebook(np.array([[1.0, 2.0], [3.0, 4.0]]), 2)
    assert np.array_equal(score_rep(patches, pseudo, assignment([0, 1, 0], 2)), [0.0, 0.0])

def test_rep_matches_mask_evaluation(rng):
    patches = rng.normal(size=(12, 3)) * 0.3
    pseudo = PseudoCodebook(rng.normal(size=(3, 3)) * 0.3, 2)
    labels = np.arange(12) % 3
    errors = [sum(np.sum((patches[i] - pseudo.centers[k]) ** 2) for i in range(12) if labels[i] == k) for k in range(3)]
    expected = [1 - math.exp(e) / math.exp(sum(errors)) for e in errors]
    assert np.allclose(score_rep(patches, pseudo, assignment(labels, 3)), expected, atol=1e-12)

def test_rep_guards(rng):
    pseudo = PseudoCodebook(np.zeros((2, 2)), 2)
    with pytest.raises(ValueError):
        score_rep(np.zeros((0, 2)), pseudo, assignment(np.zeros(0, dtype=int), 2))
    with pytest.raises(ValueError):
        score_rep(np.zeros((3, 2)), pseudo, assignment([0, 1], 2))

def test_delta_hand_exponentials():
    previous = Codebook(np.array([[0.0], [0.0]]), 1)
    pseudo = PseudoCodebook(np.array([[0.0], [math.sqrt(math.log(2))]]), 2)
    assert np.allclose(score_delta(pseudo, previous), [0.5, 1.0], atol=1e-12)

def test_delta_fixed_point_is_one(rng):
    S = rng.normal(size=(4, 3))
    assert np.array_equal(score_delta(PseudoCodebook(S, 2), Codebook(S, 1)), np.ones(4))

def test_delta_matches_direct_ratio(rng):
    S = rng.normal(size=(3, 2)) * 0.5
    S_hat = S + rng.normal(size=(3, 2)) * 0.5
    d = np.sum((S_hat - S) ** 2, axis=1)
    expected = np.exp(d) / np.exp(d.sum())
    assert np.allclose(score_delta(PseudoCodebook(S_hat, 2), Codebook(S, 1)), expected, atol=1e-12)

def test_delta_shape_mismatch(rng):
    with pytest.raises(ValueError):
        score_delta(PseudoCodebook(np.zeros((3, 2)), 2), Codebook(np.zeros((2, 2)), 1))

def test_je_single_codeword_is_zero(rng):
    assert np.array_equal(score_je(rng.normal(size=(5, 2)), PseudoCodebook(np.zeros((1, 2)), 2)), [0.0])

def test_je_symmetric_pair():
    patches = np.array([[-1.0], [1.0]])
    pseudo = PseudoCodebook(np.array([[-0.5], [0.5]]), 2)
    A_tot = 2 * (0.5 + 1.5)
    assert np.allclose(score_je(patches, pseudo), 1 - math.exp(-A_tot / 2), atol=1e-12)

def test_je_matches_double_sum(rng):
    patches = rng.normal(size=(6, 2)) * 0.2
    pseudo = PseudoCodebook(rng.normal(size=(3, 2)) * 0.2, 2)
    A = [sum(np.sum(np.abs(p - c)) for p in patches) for c in pseudo.centers]
    expected = [1 - math.exp(a) / math.exp(sum(A)) for a in A]
    assert np.allclose(score_je(patches, pseudo), expected, atol=1e-12)

def test_scores_stay_in_range_for_huge_exponents(rng):
    patches = rng.normal(size=(200, 4)) * 1e3
    pseudo, labels, _ = lloyd_cluster(patches, 5, rng=rng, epoch=2)
    previous = Codebook(pseudo.centers + rng.normal(size=(5, 4)) * 1e3, 1)
    scores = score_all(patches, pseudo, labels, previous)
    assert np.all(np.isfinite(scores.triples()))
    assert np.all((scores.rep >= 0) & (scores.rep < 1))
    assert np.all((scores.je >= 0) & (scores.je < 1))
    assert np.all((scores.delta > 0) & (scores.delta <= 1))

def test_dro_equal_scores():
    assert dro_fuse([0.5, 0.5, 0.5], 1.0) == pytest.approx(0.5 - math.log(3), abs=1e-12)
    assert dro_fuse([0.5, 0.5, 0.5], 1.0) == pytest.approx(-0.5986, abs=1e-4)

def test_dro_small_gamma_is_min():
    assert dro_fuse([0.2, 0.5, 0.9], 0.01) == pytest.approx(0.2, abs=1e-4)

def test_dro_unit_gamma_hand_value():
    expected = -math.log(math.exp(-0.2) + math.exp(-0.5) + math.exp(-0.9))
    assert dro_fuse([0.2, 0.5, 0.9], 1.0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(-0.6055, abs=1e-4)

def test_dro_rejects_non_positive_gamma():
    for gamma in (0.0, -1.0):
        with pytest.raises(ValueError):
            dro_fuse([0.1, 0.2, 0.3], gamma)

def test_dro_softmin_bound_and_monotonicity(rng):
    for _ in range(50):
        z = rng.uniform(0, 1, size=3)
        gamma = float(rng.uniform(0.05, 5.0))
        fused = dro_fuse(z, gamma)
        assert fused <= z.min()
        bumped = z.copy()
        bumped[rng.integers(3)] += 0.1
        assert dro_fuse(bumped, gamma) > fused

def test_dro_vectorized_rows(rng):
    z = rng.uniform(size=(4, 3))
    assert np.allclose(dro_fuse(z, 0.7), [dro_fuse(row, 0.7) for row in z])

def test_dro_limit_tolerance(rng):
    for z in rng.uniform(size=(10, 3)):
        assert abs(dro_fuse(z, 1e-3) - z.min()) <= 5e-3

@pytest.mark.parametrize('gamma', [0.1, 1.0, 10.0])
def test_oracle_agrees_with_closed_form(rng, gamma):
    for z in rng.uniform(size=(5, 3)):
        assert abs(kl_ball_oracle(z, gamma).value - dro_fuse(z, gamma)) <= 1e-4

def test_oracle_agrees_on_two_hundred_triples_per_gamma():
    z_all = np.random.default_rng(2024).uniform(size=(200, 3))
    for gamma in (0.1, 1.0, 10.0):
        gaps = [abs(kl_ball_oracle(z, gamma, 400).value - dro_fuse(z, gamma)) for z in z_all]
        assert max(gaps) <= 1e-4, (gamma, max(gaps))

def test_oracle_uniform_scores_pick_center():
    result = kl_ball_oracle(np.array([0.4, 0.4, 0.4]), 1.0)
    assert np.allclose(result.theta, 1 / 3, atol=1e-2)

def test_oracle_small_gamma_concentrates():
    result = kl_ball_oracle(np.array([0.6, 0.1, 0.8]), 0.01)
    assert int(np.argmax(result.theta)) == 1
    assert result.theta[1] > 0.95

def test_oracle_resolution_guard():
    with pytest.raises(ValueError):
        kl_ball_oracle(np.zeros(3), 1.0, grid_resolution=50)

def test_identical_triples_give_unit_weights():
    weights = fuse_and_normalize(np.tile([0.3, 0.6, 0.2], (5, 1)), 1.0)
    assert np.allclose(weights.normalized, np.ones(5), atol=1e-12)

def test_single_codeword_weight_is_one():
    assert np.allclose(fuse_and_normalize(np.array([[0.1, 0.9, 0.4]]), 1.0).normalized, [1.0])

def test_weights_follow_fused_ranking(rng):
    weights = fuse_and_normalize(rng.uniform(size=(8, 3)), 1.0)
    assert np.array_equal(np.argsort(weights.normalized), np.argsort(weights.fused))
    assert np.all(weights.normalized > 0)
    assert abs(weights.normalized.mean() - 1.0) <= 1e-9

def test_weights_are_permutation_equivariant(rng):
    scores = rng.uniform(size=(6, 3))
    perm = rng.permutation(6)
    assert np.allclose(fuse_and_normalize(scores[perm], 1.0).normalized, fuse_and_normalize(scores, 1.0).normalized[perm])

def test_sum_one_mode_and_mean_fusion(rng):
    scores = rng.uniform(size=(4, 3))
    assert fuse_and_normalize(scores, 1.0, mode='sum_one').normalized.sum() == pytest.approx(1.0)
    assert np.allclose(fuse_and_normalize(scores, 1.0, fusion='mean').fused, scores.mean(axis=1))

@pytest.mark.parametrize('kwargs', [{'mode': 'softmax'}, {'fusion': 'median'}])
def test_unknown_options_rejected(rng, kwargs):
    with pytest.raises(ValueError):
        fuse_and_normalize(rng.uniform(size=(3, 3)), 1.0, **kwargs)

def test_bad_score_shape_rejected():
    with pytest.raises(ValueError):
        fuse_and_normalize(np.zeros((3, 2)), 1.0)
