#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Codebook lifecycle: Lloyd clustering into a pseudo codebook, quantization,
reconstruction, the incremental per-epoch update and the separation loss.

Codewords live in downsampled patch space (length L_p / 2). Ties are always
broken towards the lowest index.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from models.series_io import upsample

TAU_FLOOR = 1e-12

@dataclass(frozen=True)
class Codebook:
    codewords: np.ndarray  # K x dim
    epoch: int

    def __post_init__(self):
        codewords = np.array(self.codewords, dtype=np.float64)
        if codewords.ndim != 2 or codewords.shape[0] < 1:
            raise ValueError(f'Codebook must be a non-empty K x dim matrix, got shape {codewords.shape}')
        if not np.all(np.isfinite(codewords)):
            raise FloatingPointError(f'Codebook at epoch {self.epoch} has non-finite codewords')
        codewords.setflags(write=False)
        object.__setattr__(self, 'codewords', codewords)

    @property
    def k(self) -> int:
        return self.codewords.shape[0]

    @property
    def dim(self) -> int:
        return self.codewords.shape[1]

@dataclass(frozen=True)
class PseudoCodebook:
    centers: np.ndarray  # K x dim
    epoch: int

@dataclass(frozen=True)
class Assignment:
    labels: np.ndarray  # cluster index per sampled patch
    counts: np.ndarray  # patches per cluster

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    def mask(self, k: int) -> np.ndarray:
        return self.labels == k

    def indicator(self) -> np.ndarray:
        return indicator_matrix(self.labels, self.k)

@dataclass(frozen=True)
class QuantizedSeries:
    indices: np.ndarray  # (..., C, N) codeword ids
    codebook_epoch: int

def indicator_matrix(labels: np.ndarray, K: int) -> np.ndarray:
    """Dense binary membership matrix M with exactly one 1 per row"""
    M = np.zeros((labels.shape[0], K))
    M[np.arange(labels.shape[0]), labels] = 1.0
    return M

def squared_distances(vectors: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    diff = vectors[..., None, :] - codewords
    return np.einsum('...kd,...kd->...k', diff, diff)

def nearest_codeword(vectors: np.ndarray, codewords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Index of the closest codeword per vector (lowest index on ties) and all squared distances"""
    d2 = squared_distances(vectors, codewords)
    return np.argmin(d2, axis=-1), d2

def quantize(patches: np.ndarray, codebook: Codebook) -> QuantizedSeries:
    """
    Assign each downsampled patch (..., dim) to its nearest codeword

    Raises:
        ValueError: If the patch width differs from the codeword width
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape[-1] != codebook.dim:
        raise ValueError(f'Patch dim {patches.shape[-1]} does not match codebook dim {codebook.dim}')
    indices, _ = nearest_codeword(patches, codebook.codewords)
    return QuantizedSeries(indices, codebook.epoch)

def check_indices(indices: np.ndarray, codebook: Codebook):
    if indices.size and (indices.min() < 0 or indices.max() >= codebook.k):
        raise ValueError(f'Codeword index out of range [0, {codebook.k})')

def reconstruct(q: QuantizedSeries, codebook: Codebook, L: int) -> np.ndarray:
    """
    Rebuild a (..., C, L) series from codeword ids: upsample each codeword,
    concatenate per channel and drop the patch padding

    Raises:
        ValueError: On out-of-range ids or a codebook epoch mismatch
    """
    if q.codebook_epoch != codebook.epoch:
        raise ValueError(f'Indices were produced at codebook epoch {q.codebook_epoch}, codebook is at epoch {codebook.epoch}')
    check_indices(q.indices, codebook)
    parts = upsample(codebook.codewords[q.indices])
    flat = parts.reshape(parts.shape[:-2] + (-1,))
    if flat.shape[-1] < L:
        raise ValueError(f'{flat.shape[-1]} reconstructed steps cannot cover length {L}')
    return flat[..., :L]

def codeword_usage(q: QuantizedSeries, K: int) -> np.ndarray:
    return np.bincount(q.indices.ravel(), minlength=K)

def clustering_energy(patches: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    """Trace form of the clustering energy with identity weights: sum of squared residuals"""
    residual = patches - centers[labels]
    return float(np.einsum('ij,ij->', residual, residual))

def center_update(patches: np.ndarray, labels: np.ndarray, K: int, previous: np.ndarray) -> np.ndarray:
    """Per-cluster mean (M^T P / M^T M); empty clusters keep their previous center"""
    centers = previous.copy()
    for k in range(K):
        members = patches[labels == k]
        if len(members):
            centers[k] = members.mean(axis=0)
    return centers

def kmeans_plus_plus(patches: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; falls back to uniform picks among unused points when all distances vanish"""
    n = patches.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = squared_distances(patches, patches[chosen[0]][None, :])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(unused))
        chosen.append(idx)
        d2 = np.minimum(d2, squared_distances(patches, patches[idx][None, :])[:, 0])
    return patches[chosen].copy()

def _repair_empty(patches: np.ndarray, labels: np.ndarray, centers: np.ndarray, K: int) -> Tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(labels, minlength=K)
    for k in np.flatnonzero(counts == 0):
        # Donor must keep at least one member
        residual = np.einsum('ij,ij->i', patches - centers[labels], patches - centers[labels])
        residual[counts[labels] < 2] = -1.0
        far = int(np.argmax(residual))
        donor = labels[far]
        logging.warning(f'Cluster {k} is empty; reseeding it at patch {far} taken from cluster {donor}')
        labels[far] = k
        counts[donor] -= 1
        counts[k] = 1
        centers[k] = patches[far]
        centers[donor] = patches[labels == donor].mean(axis=0)
    return labels, centers

def lloyd_cluster(patches: np.ndarray, K: int, init: Optional[np.ndarray] = None, max_iters: int = 50,
                  epoch: int = 1, rng: Optional[np.random.Generator] = None) -> Tuple[PseudoCodebook, Assignment, List[float]]:
    """
    Lloyd iterations on downsampled patches

    Alternates nearest-center assignment and the mean update until the
    labels stop changing or max_iters updates have been made.

    Args:
        patches: (n, dim) sampled downsampled patches
        K: Number of clusters
        init: Initial centers (K, dim); k-means++ seeding when omitted
        max_iters: Upper bound on center updates
        epoch: Epoch tag of the resulting pseudo codebook
        rng: Generator for seeding

    Returns:
        The pseudo codebook, the final assignment and the energy after each update

    Raises:
        ValueError: On empty input or fewer patches than clusters
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[0] == 0:
        raise ValueError('Clustering needs a non-empty (n, dim) patch matrix')
    if patches.shape[0] < K:
        raise ValueError(f'Cannot form {K} clusters from {patches.shape[0]} patches')
    if init is None:
        centers = kmeans_plus_plus(patches, K, rng if rng is not None else np.random.default_rng(0))
    else:
        centers = np.array(init, dtype=np.float64)
        if centers.shape != (K, patches.shape[1]):
            raise ValueError(f'Initial centers have shape {centers.shape}, expected {(K, patches.shape[1])}')

    labels = None
    trace = []
    for it in range(max_iters):
        new_labels, _ = nearest_codeword(patches, centers)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centers = center_update(patches, labels, K, centers)
        labels, centers = _repair_empty(patches, labels, centers, K)
        trace.append(clustering_energy(patches, centers, labels))
        logging.debug(f'Lloyd iteration {it + 1}: energy {trace[-1]:.6f}')
    if labels is None:
        labels, _ = nearest_codeword(patches, centers)
    counts = np.bincount(labels, minlength=K)
    return PseudoCodebook(centers, epoch), Assignment(labels, counts), trace

def alignment_warm_start(previous: Optional[Codebook], patches: np.ndarray, K: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Initial Lloyd centers: last epoch's codewords so index k keeps its meaning, else k-means++"""
    if previous is not None:
        return np.array(previous.codewords)
    return kmeans_plus_plus(np.asarray(patches, dtype=np.float64), K, rng)

def init_codebook(pseudo: PseudoCodebook) -> Codebook:
    if pseudo.epoch != 1:
        raise ValueError(f'The codebook is initialized from the epoch-1 pseudo codebook, got epoch {pseudo.epoch}')
    return Codebook(np.array(pseudo.centers), 1)

def incremental_update(codebook: Codebook, pseudo: PseudoCodebook, weights: np.ndarray) -> Codebook:
    """
    S^t = S^{t-1} + (1/t)(diag(W^t) S_hat^t - S^{t-1}) with t = codebook.epoch + 1

    Raises:
        ValueError: On shape or epoch mismatch
        FloatingPointError: On non-finite weights
    """
    weights = np.asarray(weights, dtype=np.float64)
    t = codebook.epoch + 1
    if pseudo.epoch != t:
        raise ValueError(f'Pseudo codebook epoch {pseudo.epoch} does not follow codebook epoch {codebook.epoch}')
    if pseudo.centers.shape != codebook.codewords.shape:
        raise ValueError(f'Pseudo codebook shape {pseudo.centers.shape} does not match codebook {codebook.codewords.shape}')
    if weights.shape != (codebook.k,):
        raise ValueError(f'Expected {codebook.k} weights, got shape {weights.shape}')
    if not np.all(np.isfinite(weights)):
        raise FloatingPointError('Non-finite reliability weights')
    S = codebook.codewords
    return Codebook(S + (weights[:, None] * pseudo.centers - S) / t, t)

def separation_loss(pseudo: PseudoCodebook, tau: Optional[float] = None) -> float:
    """log sum_{i,j} exp(-||s_i - s_j||^2 / tau), tau = ||S||_F^2 unless given"""
    centers = np.asarray(pseudo.centers, dtype=np.float64)
    if tau is None:
        tau = max(float(np.sum(centers * centers)), TAU_FLOOR)
    return float(logsumexp(-squared_distances(centers, centers) / tau))

def separation_gradient(centers: np.ndarray, tau: float) -> np.ndarray:
    """Gradient of the separation loss with respect to the centers, tau held fixed"""
    d2 = squared_distances(centers, centers)
    weights = softmax(-d2 / tau)
    diff = centers[:, None, :] - centers[None, :, :]
    return -(4.0 / tau) * np.einsum('ij,ijd->id', weights, diff)

def separation_adjust(pseudo: PseudoCodebook, w_sep: float, step_size: float, steps: int = 1) -> PseudoCodebook:
    """Gradient steps on w_sep * L_sep that push the centers apart"""
    if w_sep <= 0 or steps <= 0:
        return pseudo
    centers = np.array(pseudo.centers, dtype=np.float64)
    tau = max(float(np.sum(centers * centers)), TAU_FLOOR)
    for _ in range(steps):
        centers = centers - step_size * w_sep * separation_gradient(centers, tau)
    return PseudoCodebook(centers, pseudo.epoch)
