#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Epoch loop: sample patches, cluster, score, update the codebook, then train
both paths against the frozen codebook of the epoch.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from analysis.reliability import ReliabilityScores, ReliabilityWeights, fuse_and_normalize, score_all
from config.config import TrainConfig
from models.codebook import (Codebook, alignment_warm_start, incremental_update, init_codebook, lloyd_cluster,
                             separation_adjust, separation_loss)
from models.forecaster import DualPathModel, ModelDims, forward, training_loss
from models.nn_core import Activation, AdamState, DenseLayer, MlpParams, adam_step, cosine_lr
from models.series_io import SeriesFrame, downsample, instance_normalize, make_windows, patchify, stack_windows

@dataclass
class WindowSet:
    """Stacked sliding windows of one split"""
    x: np.ndarray  # B x C x L
    y: np.ndarray  # B x C x H
    origins: np.ndarray

    def __len__(self):
        return self.x.shape[0]

    @classmethod
    def from_frame(cls, frame: SeriesFrame, L: int, H: int, stride: int = 1) -> 'WindowSet':
        windows = make_windows(frame, L, H, stride)
        if not windows:
            raise ValueError(f'"{frame.name}" ({frame.length} steps) is too short for one window of L+H={L + H}')
        x, y = stack_windows(windows)
        return cls(x, y, np.array([w.origin_index for w in windows]))

    def patch_pool(self, L_p: int, eps: float) -> np.ndarray:
        """Every normalized, downsampled patch of every window as an (n, L_p / 2) matrix"""
        x_norm, _ = instance_normalize(self.x, eps)
        patches = downsample(patchify(x_norm, L_p).patches)
        return patches.reshape(-1, patches.shape[-1])

@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    valid_mse: Optional[float]
    valid_mae: Optional[float]
    lloyd_iters: int
    codebook_shift: Optional[float]
    weight_stats: Dict[str, float]
    sep_loss: float
    ablations: List[str] = field(default_factory=list)
    scores: Optional[ReliabilityScores] = field(default=None, repr=False)
    weights: Optional[ReliabilityWeights] = field(default=None, repr=False)

    def to_record(self) -> Dict:
        return {
            'epoch': self.epoch,
            'train_loss': self.train_loss,
            'valid_mse': self.valid_mse,
            'valid_mae': self.valid_mae,
            'lloyd_iters': self.lloyd_iters,
            'codebook_shift': self.codebook_shift,
            'weight_stats': self.weight_stats,
            'sep_loss': self.sep_loss,
            'ablations': self.ablations,
        }

def zero_output_layer(params: MlpParams) -> MlpParams:
    last = params.layers[-1]
    return MlpParams(params.layers[:-1] + [DenseLayer(np.zeros_like(last.weights), np.zeros_like(last.bias))],
                     params.activation)

@dataclass
class TrainState:
    model: DualPathModel
    quant_opt: AdamState
    res_opt: AdamState
    codebook: Optional[Codebook] = None
    epoch: int = 0

    @classmethod
    def initial(cls, config: TrainConfig) -> 'TrainState':
        dims = ModelDims(config.L, config.H, config.L_p, config.K)
        rng = np.random.default_rng(config.seed)
        model = DualPathModel.create(dims, rng, config.quant_hidden, config.res_hidden,
                                     Activation(config.activation), use_residual=not config.has('no_residual'))
        # Residual output layer starts at zero: epoch 1 begins from the quantization forecast alone
        model = model.with_params(model.quant_mlp, zero_output_layer(model.res_mlp))
        return cls(model, AdamState.for_params(model.quant_mlp), AdamState.for_params(model.res_mlp))

@dataclass
class FitResult:
    model: DualPathModel
    codebook: Codebook
    history: List[EpochReport]
    best_epoch: int
    stopped_before: Optional[int] = None

class EarlyStopping:
    """Tracks the best validation MSE and counts consecutive epochs without improvement"""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience

def sample_patches(patches: np.ndarray, ratio: float, seed: int, epoch: int, enabled: bool = True,
                   minimum: int = 1) -> np.ndarray:
    """
    Uniform sample without replacement, reseeded from (seed, epoch)

    Falls back to all patches when sampling is disabled or would keep fewer
    than `minimum` patches.
    """
    if not 0 < ratio <= 1:
        raise ValueError(f'Sample ratio must be in (0, 1], got {ratio}')
    n = patches.shape[0]
    size = int(math.floor(ratio * n))
    if not enabled or size >= n:
        return patches
    if size < max(minimum, 1):
        logging.warning(f'Sampling {ratio:.0%} of {n} patches keeps {size}; using all patches')
        return patches
    rng = np.random.default_rng([seed, epoch])
    return patches[np.sort(rng.choice(n, size=size, replace=False))]

def evaluate(model: DualPathModel, codebook: Codebook, windows: WindowSet, batch_size: int = 256,
             horizon: Optional[int] = None, eps: float = 1e-5) -> Tuple[float, float]:
    """MSE and MAE in the original scale over all windows, channels and the first `horizon` steps"""
    if len(windows) == 0:
        raise ValueError('Cannot evaluate on an empty window set')
    horizon = horizon or model.dims.H
    if horizon > model.dims.H:
        raise ValueError(f'Requested horizon {horizon} exceeds the model horizon {model.dims.H}')
    model = model.with_codebook(codebook)
    sq, ab, count = 0.0, 0.0, 0
    for start in range(0, len(windows), batch_size):
        out = forward(model, windows.x[start:start + batch_size], eps)
        diff = out.y_hat[..., :horizon] - windows.y[start:start + batch_size, :, :horizon]
        sq += float(np.sum(diff * diff))
        ab += float(np.sum(np.abs(diff)))
        count += diff.size
    return sq / count, ab / count

def evaluate_naive(windows: WindowSet, horizon: Optional[int] = None) -> Tuple[float, float]:
    """Repeat-last-value baseline"""
    if len(windows) == 0:
        raise ValueError('Cannot evaluate on an empty window set')
    horizon = horizon or windows.y.shape[-1]
    diff = windows.x[..., -1:] - windows.y[..., :horizon]
    return float(np.mean(diff * diff)), float(np.mean(np.abs(diff)))

def _update_codebook(state: TrainState, pseudo, assignment, sampled: np.ndarray,
                     config: TrainConfig) -> Tuple[Codebook, Optional[ReliabilityScores], Optional[ReliabilityWeights]]:
    if state.codebook is None:
        return init_codebook(pseudo), None, None
    if config.has('no_updating'):
        return state.codebook, None, None
    if config.has('no_scoring'):
        return incremental_update(state.codebook, pseudo, np.ones(config.K)), None, None
    scores = score_all(sampled, pseudo, assignment, state.codebook)
    weights = fuse_and_normalize(scores.triples(), config.gamma, config.weight_norm_mode,
                                 'mean' if config.has('no_dro') else 'dro')
    return incremental_update(state.codebook, pseudo, weights.normalized), scores, weights

def run_epoch(state: TrainState, train: WindowSet, config: TrainConfig, valid: Optional[WindowSet] = None,
              pool: Optional[np.ndarray] = None) -> Tuple[TrainState, EpochReport]:
    """
    One epoch in the fixed order: sample -> cluster -> (init | score, fuse, update) -> train

    Raises:
        RuntimeError: If the codebook carries an epoch tag other than this epoch's
        FloatingPointError: If the loss or gradients become non-finite
    """
    t = state.epoch + 1
    if pool is None:
        pool = train.patch_pool(config.L_p, config.eps)
    lr = cosine_lr(config.lr, t - 1, config.epochs)

    sampled = sample_patches(pool, config.sample_ratio, config.seed, t,
                             enabled=not config.has('no_random'), minimum=config.K)
    init = alignment_warm_start(state.codebook, sampled, config.K, np.random.default_rng([config.seed, t, 0]))
    pseudo, assignment, trace = lloyd_cluster(sampled, config.K, init, config.lloyd_max_iters, epoch=t)
    sep = separation_loss(pseudo)
    pseudo = separation_adjust(pseudo, config.w_sep, lr, config.sep_steps)

    codebook, scores, weights = _update_codebook(state, pseudo, assignment, sampled, config)
    shift = None if state.codebook is None else float(np.linalg.norm(codebook.codewords - state.codebook.codewords))
    applied = weights.normalized if weights is not None else np.ones(config.K)

    expected = 1 if config.has('no_updating') else t
    if codebook.epoch != expected:
        raise RuntimeError(f'Epoch {t} would train against codebook epoch {codebook.epoch}, expected {expected}')
    model = state.model.with_codebook(codebook)
    quant_opt, res_opt = state.quant_opt, state.res_opt
    rng = np.random.default_rng([config.seed, t, 1])
    order = rng.permutation(len(train))
    if config.sample_train_windows:
        order = np.sort(order[:max(1, int(math.floor(config.sample_ratio * len(order))))])
    total, seen = 0.0, 0
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        out = forward(model, train.x[idx], config.eps)
        loss, grads = training_loss(model, out, train.y[idx], sep, config.w_sep, config.aux_weight, config.quant_loss)
        quant, quant_opt = adam_step(model.quant_mlp, grads.quant, quant_opt, lr)
        res = model.res_mlp
        if model.use_residual:
            res, res_opt = adam_step(model.res_mlp, grads.res, res_opt, lr)
        model = model.with_params(quant, res)
        total += loss * len(idx)
        seen += len(idx)
        logging.debug(f'Epoch {t} batch {start // config.batch_size}: loss {loss:.6f}')

    valid_mse = valid_mae = None
    if valid is not None:
        valid_mse, valid_mae = evaluate(model, codebook, valid, eps=config.eps)

    report = EpochReport(
        epoch=t,
        train_loss=total / seen,
        valid_mse=valid_mse,
        valid_mae=valid_mae,
        lloyd_iters=len(trace),
        codebook_shift=shift,
        weight_stats={'min': float(applied.min()), 'max': float(applied.max()), 'mean': float(applied.mean())},
        sep_loss=sep,
        ablations=list(config.ablations),
        scores=scores,
        weights=weights,
    )
    logging.info(f'Epoch {t}: train loss {report.train_loss:.5f}, valid mse {valid_mse}, '
                 f'lloyd iters {report.lloyd_iters}, codebook shift {shift}')
    return TrainState(model, quant_opt, res_opt, codebook, t), report

def fit(train: WindowSet, valid: WindowSet, config: TrainConfig,
        on_improvement: Optional[Callable[[DualPathModel, Codebook, int], None]] = None,
        on_epoch: Optional[Callable[[EpochReport], None]] = None) -> FitResult:
    """
    Train for up to config.epochs epochs with early stopping on validation MSE

    Args:
        train: Training windows
        valid: Validation windows
        config: Hyperparameters
        on_improvement: Called with the model, codebook and epoch whenever validation improves
        on_epoch: Called with each epoch report

    Returns:
        The best-epoch model and codebook plus the full history

    Raises:
        ValueError: If either window set is empty
    """
    if len(train) == 0 or len(valid) == 0:
        raise ValueError('Training needs non-empty train and valid window sets')
    state = TrainState.initial(config)
    pool = train.patch_pool(config.L_p, config.eps)
    stopper = EarlyStopping(config.patience)
    history = []
    best = None
    stopped_before = None
    for _ in range(config.epochs):
        state, report = run_epoch(state, train, config, valid, pool)
        history.append(report)
        if on_epoch:
            on_epoch(report)
        if stopper.update(report.epoch, report.valid_mse):
            best = (state.model, state.codebook, report.epoch)
            if on_improvement:
                on_improvement(state.model, state.codebook, report.epoch)
        if stopper.should_stop:
            stopped_before = report.epoch + 1 if report.epoch < config.epochs else None
            logging.info(f'Early stopping after epoch {report.epoch}; best epoch {stopper.best_epoch}')
            break
    model, codebook, best_epoch = best
    return FitResult(model, codebook, history, best_epoch, stopped_before)
