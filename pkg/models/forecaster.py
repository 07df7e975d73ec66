#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Dual-path forecaster.

The quantization path maps the codeword embedding of the lookback window to
N_y codeword-space chunks, snaps each chunk to its nearest codeword and
reconstructs Y_q. The residual path maps X_r = X_norm - X_q to Y_r. Both
MLPs are shared across channels. Arrays carry optional leading batch axes:
a single window is (C, L), a batch is (B, C, L).
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from models.codebook import Codebook, QuantizedSeries, nearest_codeword, quantize, reconstruct, check_indices
from models.nn_core import Activation, MlpCache, MlpParams, l1_loss, mlp_backward, mlp_forward
from models.series_io import (NormStats, WindowPair, downsample, instance_denormalize, instance_normalize,
                              patchify)

@dataclass(frozen=True)
class ModelDims:
    L: int
    H: int
    L_p: int
    K: int

    def __post_init__(self):
        if self.L_p < 2 or self.L_p % 2:
            raise ValueError(f'Patch length must be even and at least 2, got {self.L_p}')

    @property
    def N(self) -> int:
        return -(-self.L // self.L_p)

    @property
    def N_y(self) -> int:
        return -(-self.H // self.L_p)

    @property
    def code_dim(self) -> int:
        return self.L_p // 2

@dataclass
class DualPathModel:
    quant_mlp: MlpParams
    res_mlp: MlpParams
    dims: ModelDims
    codebook_ref: Optional[Codebook] = None
    use_residual: bool = True

    def __post_init__(self):
        d = self.dims
        if self.quant_mlp.in_dim != d.N * d.code_dim or self.quant_mlp.out_dim != d.N_y * d.code_dim:
            raise ValueError(f'Quantization MLP must map {d.N * d.code_dim} -> {d.N_y * d.code_dim}')
        if self.res_mlp.in_dim != d.L or self.res_mlp.out_dim != d.H:
            raise ValueError(f'Residual MLP must map {d.L} -> {d.H}')

    @classmethod
    def create(cls, dims: ModelDims, rng: np.random.Generator, quant_hidden: int = 32, res_hidden: int = 512,
               activation: Activation = Activation.RELU, use_residual: bool = True) -> 'DualPathModel':
        quant = MlpParams.init([dims.N * dims.code_dim, quant_hidden, dims.N_y * dims.code_dim], rng, activation)
        res = MlpParams.init([dims.L, res_hidden, dims.H], rng, activation)
        return cls(quant, res, dims, None, use_residual)

    def with_params(self, quant_mlp: MlpParams, res_mlp: MlpParams) -> 'DualPathModel':
        return DualPathModel(quant_mlp, res_mlp, self.dims, self.codebook_ref, self.use_residual)

    def with_codebook(self, codebook: Codebook) -> 'DualPathModel':
        if codebook.dim != self.dims.code_dim or codebook.k != self.dims.K:
            raise ValueError(f'Codebook {codebook.k} x {codebook.dim} does not fit model dims K={self.dims.K}, dim={self.dims.code_dim}')
        return DualPathModel(self.quant_mlp, self.res_mlp, self.dims, codebook, self.use_residual)

    def copy(self) -> 'DualPathModel':
        return DualPathModel(self.quant_mlp.copy(), self.res_mlp.copy(), self.dims, self.codebook_ref, self.use_residual)

@dataclass
class ModelGradients:
    quant: MlpParams
    res: MlpParams

@dataclass
class ForecastOutput:
    """
    Forecast plus every intermediate tensor. y_q and y_r are the normalized-space
    path outputs; y_hat = stats.std * (y_q + y_r) + stats.mean.
    """
    y_hat: np.ndarray
    y_q: np.ndarray
    y_r: np.ndarray
    q_y: np.ndarray
    stats: NormStats
    x_norm: np.ndarray
    x_q: np.ndarray
    x_r: np.ndarray
    q_x: QuantizedSeries
    quant_raw: np.ndarray
    codebook_epoch: int
    quant_cache: MlpCache = field(repr=False, default=None)
    res_cache: Optional[MlpCache] = field(repr=False, default=None)

def embed_indices(q: QuantizedSeries, codebook: Codebook) -> np.ndarray:
    """Concatenate the looked-up codewords of each channel: (..., C, N) -> (..., C, N * dim)"""
    check_indices(q.indices, codebook)
    vectors = codebook.codewords[q.indices]
    return vectors.reshape(vectors.shape[:-2] + (-1,))

def _require_codebook(model: DualPathModel) -> Codebook:
    if model.codebook_ref is None:
        raise RuntimeError('Model has no codebook attached; run at least one epoch first')
    return model.codebook_ref

def quant_path_forward(model: DualPathModel, q_x: QuantizedSeries) -> Tuple[np.ndarray, np.ndarray, np.ndarray, MlpCache]:
    """
    Predict future codeword ids and their reconstruction

    Returns:
        q_y (..., C, N_y), y_q_norm (..., C, H), the unsnapped MLP output
        (..., C, N_y * dim) and the MLP cache
    """
    codebook = _require_codebook(model)
    d = model.dims
    if q_x.indices.shape[-1] != d.N:
        raise ValueError(f'Expected {d.N} patches per channel, got {q_x.indices.shape[-1]}')
    emb = embed_indices(q_x, codebook)
    lead = emb.shape[:-1]
    raw, cache = mlp_forward(model.quant_mlp, emb.reshape(-1, emb.shape[-1]))
    raw = raw.reshape(lead + (d.N_y * d.code_dim,))
    chunks = raw.reshape(lead + (d.N_y, d.code_dim))
    q_y, _ = nearest_codeword(chunks, codebook.codewords)
    y_q = reconstruct(QuantizedSeries(q_y, codebook.epoch), codebook, d.H)
    return q_y, y_q, raw, cache

def residual_path_forward(model: DualPathModel, x_r: np.ndarray) -> Tuple[np.ndarray, MlpCache]:
    x_r = np.asarray(x_r, dtype=np.float64)
    if x_r.shape[-1] != model.dims.L:
        raise ValueError(f'Residual input width {x_r.shape[-1]} does not match L={model.dims.L}')
    lead = x_r.shape[:-1]
    out, cache = mlp_forward(model.res_mlp, x_r.reshape(-1, model.dims.L))
    return out.reshape(lead + (model.dims.H,)), cache

def forward(model: DualPathModel, window: Union[WindowPair, np.ndarray], eps: float = 1e-5) -> ForecastOutput:
    """normalize -> patchify -> downsample -> quantize -> both paths -> sum -> denormalize"""
    codebook = _require_codebook(model)
    x = window.x if isinstance(window, WindowPair) else np.asarray(window, dtype=np.float64)
    if x.shape[-1] != model.dims.L:
        raise ValueError(f'Window width {x.shape[-1]} does not match L={model.dims.L}')

    x_norm, stats = instance_normalize(x, eps)
    patches = downsample(patchify(x_norm, model.dims.L_p).patches)
    q_x = quantize(patches, codebook)
    x_q = reconstruct(q_x, codebook, model.dims.L)
    x_r = x_norm - x_q

    q_y, y_q, raw, quant_cache = quant_path_forward(model, q_x)
    if model.use_residual:
        y_r, res_cache = residual_path_forward(model, x_r)
    else:
        y_r, res_cache = np.zeros_like(y_q), None
    y_hat = instance_denormalize(y_q + y_r, stats)
    return ForecastOutput(y_hat, y_q, y_r, q_y, stats, x_norm, x_q, x_r, q_x, raw, codebook.epoch,
                          quant_cache, res_cache)

def snap_backward(model: DualPathModel, grad_y_q: np.ndarray) -> np.ndarray:
    # Straight-through: the snap is identity, upsampling's adjoint sums each pair
    d = model.dims
    pad = d.N_y * d.L_p - d.H
    if pad:
        grad_y_q = np.concatenate([grad_y_q, np.zeros(grad_y_q.shape[:-1] + (pad,))], axis=-1)
    return grad_y_q.reshape(grad_y_q.shape[:-1] + (d.N_y * d.code_dim, 2)).sum(axis=-1)

def codeword_targets(model: DualPathModel, y: np.ndarray, stats: NormStats) -> np.ndarray:
    """Future window in the input's normalized scale, patched and downsampled: (..., C, N_y * dim)"""
    y_norm = (np.asarray(y, dtype=np.float64) - stats.mean[..., None]) / stats.std[..., None]
    target = downsample(patchify(y_norm, model.dims.L_p).patches)
    return target.reshape(target.shape[:-2] + (-1,))

def training_loss(model: DualPathModel, output: ForecastOutput, y: np.ndarray, sep: float = 0.0,
                  w_sep: float = 0.0, aux_weight: float = 0.0, quant_loss: str = 'joint') -> Tuple[float, ModelGradients]:
    """
    L1(y_hat, y) + w_sep * sep (+ aux_weight * codeword regression) and MLP gradients

    The codebook gets no gradient; the separation term is constant with
    respect to both MLPs. With quant_loss='own' the quantization path is
    driven by the error of its own forecast, denormalize(y_q), and the
    residual path alone fits what the quantization forecast leaves over.
    The reported value is L1(y_hat, y) either way.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != output.y_hat.shape:
        raise ValueError(f'Target shape {y.shape} does not match forecast shape {output.y_hat.shape}')
    if quant_loss not in ('joint', 'own'):
        raise ValueError(f'Unknown quant_loss "{quant_loss}"')
    value, grad_hat = l1_loss(output.y_hat, y)
    grad_norm = grad_hat * output.stats.std[..., None]

    grad_quant = grad_norm
    if quant_loss == 'own' and model.use_residual:
        _, grad_own = l1_loss(instance_denormalize(output.y_q, output.stats), y)
        grad_quant = grad_own * output.stats.std[..., None]
    grad_raw = snap_backward(model, grad_quant)
    if aux_weight > 0:
        aux_value, aux_grad = l1_loss(output.quant_raw, codeword_targets(model, y, output.stats))
        value += aux_weight * aux_value
        grad_raw = grad_raw + aux_weight * aux_grad
    quant_grads = mlp_backward(model.quant_mlp, output.quant_cache, grad_raw.reshape(-1, grad_raw.shape[-1]))

    if model.use_residual and output.res_cache is not None:
        res_grads = mlp_backward(model.res_mlp, output.res_cache, grad_norm.reshape(-1, model.dims.H))
    else:
        res_grads = model.res_mlp.zeros_like()
    value += w_sep * sep
    if not np.isfinite(value):
        raise FloatingPointError(f'Non-finite training loss {value}')
    return value, ModelGradients(quant_grads, res_grads)
