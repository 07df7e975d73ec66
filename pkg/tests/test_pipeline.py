import logging
from dataclasses import replace

import numpy as np
import pytest

from config.config import TrainConfig
from models.codebook import Codebook, alignment_warm_start, lloyd_cluster
from models.forecaster import DualPathModel, ModelDims
from models.nn_core import MlpParams
from models.series_io import SynthSpec, split_frame, synth_generate
from pipeline.training import (EarlyStopping, TrainState, WindowSet, evaluate, evaluate_naive, fit, run_epoch,
                               sample_patches)

@pytest.fixture
def splits(small_frame):
    return [WindowSet.from_frame(part, 24, 8) for part in split_frame(small_frame, 'other', 24, 8)]

def zero_mlp(dims):
    params = MlpParams.init(dims, np.random.default_rng(0))
    return params.with_arrays([np.zeros_like(a) for a in params.arrays()])

def constant_model():
    """Forecasts the last lookback value when the lookback is constant"""
    dims = ModelDims(L=8, H=4, L_p=4, K=2)
    model = DualPathModel(zero_mlp([4, 3, 2]), zero_mlp([8, 3, 4]), dims)
    return model, Codebook(np.array([[0.0, 0.0], [5.0, 5.0]]), 1)

def constant_windows(level, target):
    x = np.full((3, 2, 8), level)
    return WindowSet(x, np.full((3, 2, 4), target), np.arange(3))

def test_sample_size_and_determinism(rng):
    pool = rng.normal(size=(100, 2))
    a = sample_patches(pool, 0.5, seed=1, epoch=3)
    assert a.shape == (50, 2)
    assert len({tuple(r) for r in a}) == 50
    assert np.array_equal(a, sample_patches(pool, 0.5, seed=1, epoch=3))
    assert not np.array_equal(a, sample_patches(pool, 0.5, seed=1, epoch=4))
    assert sample_patches(pool, 0.5, 1, 3, enabled=False) is pool
    assert sample_patches(pool, 1.0, 1, 3) is pool

def test_sample_keeps_enough_for_clustering(rng, caplog):
    pool = rng.normal(size=(10, 2))
    with caplog.at_level(logging.WARNING):
        assert sample_patches(pool, 0.2, 1, 1, minimum=4) is pool
    assert 'using all patches' in caplog.text

@pytest.mark.parametrize('ratio', [0.0, 1.5])
def test_sample_rejects_ratio(rng, ratio):
    with pytest.raises(ValueError):
        sample_patches(rng.normal(size=(10, 2)), ratio, 1, 1)

def test_window_set_from_frame(small_frame):
    windows = WindowSet.from_frame(small_frame, 24, 8, stride=4)
    assert len(windows) == (400 - 32) // 4 + 1
    assert windows.x.shape[1:] == (2, 24) and windows.y.shape[1:] == (2, 8)
    assert np.array_equal(windows.x[2, :, 0], small_frame.values[:, 8])
    assert windows.patch_pool(4, 1e-5).shape == (len(windows) * 2 * 6, 2)

def test_window_set_too_short(small_frame):
    with pytest.raises(ValueError, match='L\\+H'):
        WindowSet.from_frame(small_frame.slice(0, 20), 24, 8)

def test_evaluate_exact_and_unit_error():
    model, codebook = constant_model()
    assert evaluate(model, codebook, constant_windows(3.0, 3.0)) == (0.0, 0.0)
    assert evaluate(model, codebook, constant_windows(3.0, 4.0)) == (1.0, 1.0)
    assert evaluate(model, codebook, constant_windows(3.0, 4.0), batch_size=2, horizon=2) == (1.0, 1.0)

def test_evaluate_horizon_guard():
    model, codebook = constant_model()
    with pytest.raises(ValueError):
        evaluate(model, codebook, constant_windows(1.0, 1.0), horizon=5)

def test_naive_baseline_hand_value():
    windows = WindowSet(np.array([[[0.0, 1.0, 2.0]]]), np.array([[[3.0, 1.0]]]), np.arange(1))
    assert evaluate_naive(windows) == (1.0, 1.0)
    assert evaluate_naive(windows, horizon=1) == (1.0, 1.0)

def test_early_stopping_trace():
    stopper = EarlyStopping(patience=2)
    improved = [stopper.update(e, v) for e, v in enumerate([5.0, 4.0, 4.0, 3.0, 3.5], start=1)]
    assert improved == [True, True, False, True, False]
    assert stopper.best_epoch == 4 and not stopper.should_stop
    stopper.update(6, 3.2)
    assert stopper.should_stop

def test_first_epoch_codebook_is_pseudo_codebook(splits, tiny_config):
    config = replace(tiny_config, w_sep=0.0)
    train = splits[0]
    state, report = run_epoch(TrainState.initial(config), train, config)
    sampled = sample_patches(train.patch_pool(4, config.eps), config.sample_ratio, config.seed, 1, minimum=config.K)
    init = alignment_warm_start(None, sampled, config.K, np.random.default_rng([config.seed, 1, 0]))
    pseudo, _, _ = lloyd_cluster(sampled, config.K, init, config.lloyd_max_iters, epoch=1)
    assert np.array_equal(state.codebook.codewords, pseudo.centers)
    assert state.codebook.epoch == 1 and state.epoch == 1
    assert report.codebook_shift is None and report.scores is None
    assert report.valid_mse is None

def test_second_epoch_scores_and_updates(splits, tiny_config):
    train, valid, _ = splits
    state, _ = run_epoch(TrainState.initial(tiny_config), train, tiny_config, valid)
    state, report = run_epoch(state, train, tiny_config, valid)
    assert state.codebook.epoch == 2
    assert report.scores is not None and report.scores.k == tiny_config.K
    assert report.weight_stats['mean'] == pytest.approx(1.0, abs=1e-9)
    assert report.codebook_shift >= 0
    assert report.valid_mse > 0 and report.valid_mae > 0
    assert state.model.codebook_ref is state.codebook

def test_no_updating_freezes_codebook(splits, tiny_config):
    config = replace(tiny_config, ablations=['no_updating'])
    state, _ = run_epoch(TrainState.initial(config), splits[0], config)
    first = state.codebook
    for _ in range(2):
        state, report = run_epoch(state, splits[0], config)
        assert report.codebook_shift == 0.0
    assert state.codebook is first

def test_stale_codebook_tag_is_rejected(splits, tiny_config):
    config = replace(tiny_config, ablations=['no_updating'])
    state, _ = run_epoch(TrainState.initial(config), splits[0], config)
    state = replace(state, codebook=Codebook(state.codebook.codewords, 3))
    with pytest.raises(RuntimeError):
        run_epoch(state, splits[0], config)

def test_no_scoring_uses_unit_weights(splits, tiny_config):
    config = replace(tiny_config, ablations=['no_scoring'])
    state, _ = run_epoch(TrainState.initial(config), splits[0], config)
    state, report = run_epoch(state, splits[0], config)
    assert report.weights is None
    assert report.weight_stats == {'min': 1.0, 'max': 1.0, 'mean': 1.0}
    assert state.codebook.epoch == 2

def test_no_residual_keeps_residual_weights(splits, tiny_config):
    config = replace(tiny_config, ablations=['no_residual'])
    initial = TrainState.initial(config)
    state, _ = run_epoch(initial, splits[0], config)
    assert all(np.array_equal(a, b) for a, b in zip(initial.model.res_mlp.arrays(), state.model.res_mlp.arrays()))
    assert not state.model.use_residual

def test_residual_path_starts_silent(splits, tiny_config):
    state = TrainState.initial(tiny_config)
    last = state.model.res_mlp.layers[-1]
    assert not last.weights.any() and not last.bias.any()
    state, _ = run_epoch(state, splits[0], tiny_config)
    assert state.model.res_mlp.layers[-1].weights.any()

def test_quant_path_trains_as_without_residual(splits, tiny_config):
    ablated_config = replace(tiny_config, ablations=['no_residual'])
    full, ablated = TrainState.initial(tiny_config), TrainState.initial(ablated_config)
    for _ in range(2):
        full, _ = run_epoch(full, splits[0], tiny_config)
        ablated, _ = run_epoch(ablated, splits[0], ablated_config)
    assert np.array_equal(full.codebook.codewords, ablated.codebook.codewords)
    assert all(np.array_equal(a, b) for a, b in zip(full.model.quant_mlp.arrays(), ablated.model.quant_mlp.arrays()))

def test_joint_quant_loss_couples_the_paths(splits, tiny_config):
    joint_config = replace(tiny_config, quant_loss='joint')
    own, joint = TrainState.initial(tiny_config), TrainState.initial(joint_config)
    for _ in range(2):
        own, _ = run_epoch(own, splits[0], tiny_config)
        joint, _ = run_epoch(joint, splits[0], joint_config)
    assert not all(np.array_equal(a, b) for a, b in zip(own.model.quant_mlp.arrays(), joint.model.quant_mlp.arrays()))

def test_training_loss_decreases(splits, tiny_config):
    config = replace(tiny_config, epochs=6, patience=6, lr=3e-3, ablations=['no_updating'])
    result = fit(splits[0], splits[1], config)
    losses = [r.train_loss for r in result.history]
    assert losses[-1] < losses[0]

def test_fit_is_reproducible(splits, tiny_config):
    a = fit(splits[0], splits[1], tiny_config)
    b = fit(splits[0], splits[1], tiny_config)
    assert [r.to_record() for r in a.history] == [r.to_record() for r in b.history]
    assert np.array_equal(a.codebook.codewords, b.codebook.codewords)
    assert a.best_epoch == b.best_epoch

def test_fit_keeps_best_epoch(splits, tiny_config):
    improved = []
    epochs = []
    result = fit(splits[0], splits[1], replace(tiny_config, epochs=4, patience=1),
                 on_improvement=lambda model, codebook, epoch: improved.append(epoch),
                 on_epoch=lambda report: epochs.append(report.epoch))
    mses = [r.valid_mse for r in result.history]
    assert result.best_epoch == 1 + int(np.argmin(mses))
    assert improved[-1] == result.best_epoch
    assert epochs == [r.epoch for r in result.history]
    assert result.codebook.epoch == result.best_epoch
    if result.stopped_before is not None:
        assert len(result.history) == result.stopped_before - 1
        assert result.history[-1].valid_mse >= min(mses[:-1])

def test_codebook_trajectory_ignores_model_ablation(splits, tiny_config):
    full = fit(splits[0], splits[1], replace(tiny_config, epochs=2, patience=5))
    ablated = fit(splits[0], splits[1], replace(tiny_config, epochs=2, patience=5, ablations=['no_residual']))
    for a, b in zip(full.history, ablated.history):
        assert a.codebook_shift == b.codebook_shift
        assert a.lloyd_iters == b.lloyd_iters
        assert a.sep_loss == b.sep_loss
    assert ablated.history[0].ablations == ['no_residual']

def test_fit_rejects_empty_windows(splits, tiny_config):
    empty = WindowSet(np.zeros((0, 2, 24)), np.zeros((0, 2, 8)), np.zeros(0, dtype=int))
    with pytest.raises(ValueError):
        fit(splits[0], empty, tiny_config)

@pytest.mark.slow
def test_synthetic_benchmark_beats_baselines():
    frame = synth_generate(SynthSpec(channels=3, length=3000), 7)
    train, valid, test = [WindowSet.from_frame(p, 96, 96) for p in split_frame(frame, 'other', 96, 96)]
    config = TrainConfig(L=96, H=96, L_p=16, K=8, epochs=15, patience=15, seed=3)
    full = fit(train, valid, config)
    mse, _ = evaluate(full.model, full.codebook, test)
    naive_mse, _ = evaluate_naive(test)
    assert mse <= 0.8 * naive_mse

    quant_only = fit(train, valid, replace(config, ablations=['no_residual']))
    quant_mse, _ = evaluate(quant_only.model, quant_only.codebook, test)
    assert mse < quant_mse
