#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Reliability-aware scoring of pseudo codewords and their robust fusion into
codebook update weights.

All three scores are ratios of exponentials whose exponents can be huge, so
they are evaluated as exp(a - b) with a <= b. Results are clamped to stay
strictly inside their documented ranges when float resolution runs out.
"""
import functools
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax, xlogy

from models.codebook import Assignment, Codebook, PseudoCodebook

_BELOW_ONE = np.nextafter(1.0, 0.0)
_TINY = np.finfo(np.float64).tiny

@dataclass(frozen=True)
class ScoreTriple:
    rep: float
    delta: float
    je: float

    def as_array(self) -> np.ndarray:
        return np.array([self.rep, self.delta, self.je])

@dataclass(frozen=True)
class ReliabilityScores:
    rep: np.ndarray
    delta: np.ndarray
    je: np.ndarray

    @property
    def k(self) -> int:
        return self.rep.shape[0]

    def triples(self) -> np.ndarray:
        """K x 3 matrix of z_k rows"""
        return np.stack([self.rep, self.delta, self.je], axis=1)

    def triple(self, k: int) -> ScoreTriple:
        return ScoreTriple(float(self.rep[k]), float(self.delta[k]), float(self.je[k]))

@dataclass(frozen=True)
class ReliabilityWeights:
    fused: np.ndarray
    normalized: np.ndarray
    gamma: float

@dataclass(frozen=True)
class OracleResult:
    value: float
    theta: np.ndarray

def _one_minus_ratio(part: np.ndarray, total: float) -> np.ndarray:
    return np.minimum(-np.expm1(part - total), _BELOW_ONE)

def score_rep(patches: np.ndarray, pseudo: PseudoCodebook, assignment: Assignment) -> np.ndarray:
    """1 - exp(E_k - E_tot), E_k the squared reconstruction error of cluster k's members"""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape[0] == 0:
        raise ValueError('Cannot score an empty patch set')
    if assignment.labels.shape[0] != patches.shape[0]:
        raise ValueError(f'{assignment.labels.shape[0]} labels for {patches.shape[0]} patches')
    residual = patches - pseudo.centers[assignment.labels]
    per_patch = np.einsum('ij,ij->i', residual, residual)
    errors = np.bincount(assignment.labels, weights=per_patch, minlength=pseudo.centers.shape[0])
    return _one_minus_ratio(errors, errors.sum())

def score_delta(pseudo: PseudoCodebook, previous: Codebook) -> np.ndarray:
    """exp(d_k - d_tot), d_k the squared drift of center k from codeword k"""
    if pseudo.centers.shape != previous.codewords.shape:
        raise ValueError(f'Pseudo codebook shape {pseudo.centers.shape} does not match codebook {previous.codewords.shape}')
    drift = pseudo.centers - previous.codewords
    d = np.einsum('ij,ij->i', drift, drift)
    return np.maximum(np.exp(d - d.sum()), _TINY)

def score_je(patches: np.ndarray, pseudo: PseudoCodebook) -> np.ndarray:
    """1 - exp(A_k - A_tot), A_k the total L1 distance of every sampled patch to center k"""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape[0] == 0:
        raise ValueError('Cannot score an empty patch set')
    A = np.array([np.abs(patches - center).sum() for center in pseudo.centers])
    return _one_minus_ratio(A, A.sum())

def score_all(patches: np.ndarray, pseudo: PseudoCodebook, assignment: Assignment,
              previous: Codebook) -> ReliabilityScores:
    return ReliabilityScores(score_rep(patches, pseudo, assignment),
                             score_delta(pseudo, previous),
                             score_je(patches, pseudo))

def dro_fuse(z: np.ndarray, gamma: float) -> np.ndarray:
    """
    Worst-case expected reliability over a KL ball: -gamma * log sum_i exp(-z_i / gamma)

    Accepts one triple or a (..., 3) stack; returns a float or an array.
    """
    if gamma <= 0:
        raise ValueError(f'gamma must be positive, got {gamma}')
    z = np.asarray(z, dtype=np.float64)
    fused = -gamma * logsumexp(-z / gamma, axis=-1)
    return float(fused) if np.ndim(fused) == 0 else fused

@functools.lru_cache(maxsize=4)
def _simplex_grid(resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    i, j = np.meshgrid(np.arange(resolution + 1), np.arange(resolution + 1), indexing='ij')
    keep = i + j <= resolution
    theta = np.stack([i[keep], j[keep], resolution - i[keep] - j[keep]], axis=1) / resolution
    return theta, _kl_to_uniform(theta)

def _kl_to_uniform(theta: np.ndarray) -> np.ndarray:
    # 0 log 0 = 0
    return xlogy(theta, 3.0 * theta).sum(axis=-1)

def kl_ball_oracle(z: np.ndarray, gamma: float, grid_resolution: int = 400, refinements: int = 2) -> OracleResult:
    """
    Brute-force min over the probability simplex of <theta, z> + gamma * KL(theta || u),
    minus gamma * log 3

    Searches a barycentric lattice, then re-grids a small neighbourhood of the
    best lattice point `refinements` times at ten times finer spacing.
    """
    if grid_resolution < 100:
        raise ValueError(f'grid_resolution must be at least 100, got {grid_resolution}')
    z = np.asarray(z, dtype=np.float64)
    theta, kl = _simplex_grid(grid_resolution)
    objective = theta @ z + gamma * kl
    best = int(np.argmin(objective))
    best_theta, best_value = theta[best], objective[best]

    step = 1.0 / grid_resolution
    offsets = np.linspace(-step, step, 21)
    for _ in range(refinements):
        a, b = np.meshgrid(best_theta[0] + offsets, best_theta[1] + offsets, indexing='ij')
        local = np.stack([a.ravel(), b.ravel(), 1.0 - a.ravel() - b.ravel()], axis=1)
        local = local[np.all(local >= 0.0, axis=1)]
        values = local @ z + gamma * _kl_to_uniform(local)
        i = int(np.argmin(values))
        if values[i] < best_value:
            best_theta, best_value = local[i], values[i]
        offsets = offsets / 10.0
    return OracleResult(float(best_value - gamma * np.log(3.0)), best_theta)

def fuse_and_normalize(scores: np.ndarray, gamma: float, mode: str = 'mean_one',
                       fusion: str = 'dro') -> ReliabilityWeights:
    """
    Fuse K score triples and turn them into positive update weights

    Args:
        scores: K x 3 matrix of (rep, delta, je)
        gamma: KL-ball radius / softmin temperature
        mode: mean_one scales to K * softmax (mean 1); sum_one uses softmax (sum 1)
        fusion: dro for the robust softmin, mean for the plain average

    Raises:
        FloatingPointError: If a fused value is non-finite
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != 3 or scores.shape[0] < 1:
        raise ValueError(f'Expected a K x 3 score matrix, got shape {scores.shape}')
    if fusion == 'dro':
        fused = np.atleast_1d(dro_fuse(scores, gamma))
    elif fusion == 'mean':
        fused = scores.mean(axis=1)
    else:
        raise ValueError(f'Unknown fusion "{fusion}"')
    if not np.all(np.isfinite(fused)):
        raise FloatingPointError('Non-finite fused reliability score')

    weights = softmax(fused)
    if mode == 'mean_one':
        weights = weights * scores.shape[0]
    elif mode != 'sum_one':
        raise ValueError(f'Unknown weight normalization mode "{mode}"')
    logging.debug(f'Reliability weights: min {weights.min():.4f}, max {weights.max():.4f}')
    return ReliabilityWeights(fused, weights, gamma)
