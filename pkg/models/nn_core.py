#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Dense network kernel used by both forecasting paths.

Everything runs in float64 on numpy arrays. Inputs may be a single vector
(in_dim,) or a batch of rows (n, in_dim); outputs keep the same rank.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

class Activation(Enum):
    RELU = "relu"
    GELU = "gelu"

    def __str__(self):
        return self.value

_GELU_C = math.sqrt(2.0 / math.pi)

def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == Activation.RELU:
        return np.maximum(z, 0.0)
    inner = _GELU_C * (z + 0.044715 * z ** 3)
    return 0.5 * z * (1.0 + np.tanh(inner))

def _activate_grad(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == Activation.RELU:
        return (z > 0.0).astype(z.dtype)
    inner = _GELU_C * (z + 0.044715 * z ** 3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z * z)

@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray     # (out_dim,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(f'Layer shapes do not agree: weights {self.weights.shape}, bias {self.bias.shape}')

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> 'DenseLayer':
        return DenseLayer(self.weights.copy(), self.bias.copy())

@dataclass
class MlpParams:
    layers: List[DenseLayer]
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if not self.layers:
            raise ValueError('An MLP requires at least one layer')
        self.activation = Activation(self.activation)
        for i in range(len(self.layers) - 1):
            if self.layers[i].out_dim != self.layers[i + 1].in_dim:
                raise ValueError(f'Layer {i} output dim {self.layers[i].out_dim} does not match layer {i + 1} input dim {self.layers[i + 1].in_dim}')

    @classmethod
    def init(cls, dims: Sequence[int], rng: np.random.Generator, activation: Activation = Activation.RELU) -> 'MlpParams':
        """
        Glorot-uniform weights and zero biases for a chain of layer sizes

        Args:
            dims: Layer sizes, input first (e.g. [96, 512, 96])
            rng: Seeded generator; identical seeds give identical networks
            activation: Nonlinearity applied between layers
        """
        if len(dims) < 2:
            raise ValueError(f'Need at least input and output sizes, got {list(dims)}')
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            layers.append(DenseLayer(rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out)))
        return cls(layers, Activation(activation))

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def arrays(self) -> List[np.ndarray]:
        """Flat parameter list: weights and bias of each layer, in order"""
        result = []
        for layer in self.layers:
            result.extend([layer.weights, layer.bias])
        return result

    def named_arrays(self) -> Dict[str, np.ndarray]:
        named = {}
        for i, layer in enumerate(self.layers):
            named[f'layers.{i}.weights'] = layer.weights
            named[f'layers.{i}.bias'] = layer.bias
        return named

    def signature(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(layer.weights.shape for layer in self.layers)

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> 'MlpParams':
        if len(arrays) != 2 * len(self.layers):
            raise ValueError(f'Expected {2 * len(self.layers)} arrays, got {len(arrays)}')
        layers = [DenseLayer(arrays[2 * i], arrays[2 * i + 1]) for i in range(len(self.layers))]
        return MlpParams(layers, self.activation)

    def copy(self) -> 'MlpParams':
        return MlpParams([layer.copy() for layer in self.layers], self.activation)

    def zeros_like(self) -> 'MlpParams':
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

@dataclass
class MlpCache:
    """Activations kept by mlp_forward for the matching mlp_backward call"""
    signature: Tuple[Tuple[int, int], ...]
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    squeeze: bool

def mlp_forward(params: MlpParams, input: np.ndarray) -> Tuple[np.ndarray, MlpCache]:
    """
    Run the network on one vector or a batch of rows

    Raises:
        ValueError: If the input width does not match the first layer
    """
    x = np.asarray(input, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f'Input width {x.shape[-1]} does not match network input dim {params.in_dim}')

    inputs, pre = [], []
    h = x
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        inputs.append(h)
        z = h @ layer.weights.T + layer.bias
        pre.append(z)
        h = z if i == last else _activate(z, params.activation)
    output = h[0] if squeeze else h
    return output, MlpCache(params.signature(), inputs, pre, squeeze)

def mlp_backward(params: MlpParams, cache: MlpCache, output_gradient: np.ndarray) -> MlpParams:
    """
    Backpropagate dL/d(output) to parameter gradients shaped like the parameters

    Raises:
        RuntimeError: If the cache was produced by a different network
    """
    if cache.signature != params.signature() or len(cache.inputs) != len(params.layers):
        raise RuntimeError('Stale or mismatched forward cache for this network')
    g = np.asarray(output_gradient, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.pre_activations[-1].shape:
        raise RuntimeError(f'Output gradient shape {g.shape} does not match forward output {cache.pre_activations[-1].shape}')

    grads: List[DenseLayer] = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        if i != len(params.layers) - 1:
            g = g * _activate_grad(cache.pre_activations[i], params.activation)
        grads[i] = DenseLayer(g.T @ cache.inputs[i], g.sum(axis=0))
        if i > 0:
            g = g @ params.layers[i].weights
    return MlpParams(grads, params.activation)

def l1_loss(prediction: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean absolute error and its subgradient; sign(0) is taken as 0"""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ValueError(f'Prediction shape {prediction.shape} does not match target shape {target.shape}')
    diff = prediction - target
    count = diff.size
    return float(np.abs(diff).sum() / count), np.sign(diff) / count

@dataclass
class AdamState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> 'AdamState':
        return cls([np.zeros_like(a) for a in params.arrays()],
                   [np.zeros_like(a) for a in params.arrays()],
                   0, beta1, beta2, eps)

def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr: float) -> Tuple[MlpParams, AdamState]:
    """
    One bias-corrected Adam update; returns new parameters and state

    Raises:
        FloatingPointError: If any gradient is non-finite; nothing is updated
        ValueError: If gradient shapes do not match the parameters
    """
    values = params.arrays()
    gradients = grads.arrays()
    if len(values) != len(gradients) or any(v.shape != g.shape for v, g in zip(values, gradients)):
        raise ValueError('Gradient shapes do not match parameter shapes')
    if len(state.first_moment) != len(values):
        raise ValueError('Optimizer state does not match parameter count')
    for g in gradients:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError('Non-finite gradient, Adam step aborted')

    t = state.step_count + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_values, new_m, new_v = [], [], []
    for value, g, m, v in zip(values, gradients, state.first_moment, state.second_moment):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_values.append(value - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    updated = params.with_arrays(new_values)
    if not updated.is_finite():
        raise FloatingPointError('Adam step produced non-finite parameters')
    return updated, AdamState(new_m, new_v, t, state.beta1, state.beta2, state.eps)

def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Cosine-annealed learning rate for a zero-based epoch index"""
    if total_epochs <= 0:
        raise ValueError(f'total_epochs must be positive, got {total_epochs}')
    if not 0 <= epoch < total_epochs:
        raise ValueError(f'epoch {epoch} outside [0, {total_epochs})')
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))

@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter: Dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance

LossFn = Callable[[MlpParams], Tuple[float, MlpParams]]

def grad_check(params: MlpParams, loss_fn: LossFn, tolerance: float = 1e-4, step: float = 1e-5,
               floor: float = 1e-5) -> GradCheckReport:
    """
    Compare analytic gradients with central differences, entry by entry

    Args:
        params: Point at which gradients are compared
        loss_fn: Deterministic callable returning (loss, analytic gradients)
        tolerance: Pass threshold on the maximum relative error
        step: Finite-difference step
        floor: Lower bound on the relative-error denominator |a| + |n|

    Returns:
        Report of the worst relative error overall and per parameter array
    """
    _, analytic = loss_fn(params)
    base = [a.copy() for a in params.arrays()]
    names = list(params.named_arrays().keys())
    per_parameter = {}
    for idx, (name, array) in enumerate(zip(names, base)):
        worst = 0.0
        grad = analytic.arrays()[idx]
        for pos in np.ndindex(array.shape):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[idx][pos] += step
            minus[idx][pos] -= step
            f_plus, _ = loss_fn(params.with_arrays(plus))
            f_minus, _ = loss_fn(params.with_arrays(minus))
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = grad[pos]
            worst = max(worst, abs(a - numeric) / max(abs(a) + abs(numeric), floor))
        per_parameter[name] = worst
    report = GradCheckReport(max(per_parameter.values()), per_parameter, tolerance)
    logging.debug(f'Gradient check: max relative error {report.max_relative_error:.3e}')
    return report
