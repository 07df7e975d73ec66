#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Property suites run by `main.py verify`.

Each suite checks the invariants of one module on seeded random instances
and records a finding per property. A suite passes when none of its
findings is an error.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from analysis.reliability import dro_fuse, fuse_and_normalize, kl_ball_oracle, score_all
from analysis.validation_helper import ValidationHelper
from config.config import TrainConfig
from models.codebook import (Codebook, PseudoCodebook, center_update, clustering_energy, incremental_update,
                             indicator_matrix, init_codebook, lloyd_cluster, quantize, reconstruct, separation_loss)
from models.findings import Finding, FindingType, check
from models.forecaster import DualPathModel, ModelDims, forward, snap_backward
from models.nn_core import Activation, AdamState, MlpParams, adam_step, cosine_lr, grad_check, mlp_backward, mlp_forward
from models.series_io import (SynthSpec, downsample, instance_denormalize, instance_normalize, make_windows, patchify,
                              split_frame, synth_generate, unpatchify, upsample, window_count)
from pipeline.training import TrainState, WindowSet, fit, sample_patches

GAMMAS = (0.1, 1.0, 10.0)
SLOW_SUITE_SECONDS = 30.0

@dataclass
class SuiteResult:
    name: str
    findings: List[Finding] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not any(f.failed for f in self.findings)

class Verifier:
    """
    Runs the property suites

    Args:
        seed: Base seed; suite i draws from default_rng([seed, i])
        inject_fault: Shift every fused reliability value by fault_offset,
            which the reliability suite must catch
        oracle_triples: Random score triples compared against the KL-ball oracle per gamma
    """

    def __init__(self, seed: int = 2024, inject_fault: bool = False, fault_offset: float = 1e-2,
                 oracle_triples: int = 200):
        self.seed = seed
        self.inject_fault = inject_fault
        self.fault_offset = fault_offset
        self.oracle_triples = oracle_triples

    def fuse(self, z, gamma):
        value = dro_fuse(z, gamma)
        return value + self.fault_offset if self.inject_fault else value

    @property
    def suites(self) -> List[Tuple[str, Callable[[np.random.Generator], List[Finding]]]]:
        return [
            ('nn_core', self.suite_nn_core),
            ('series_io', self.suite_series_io),
            ('codebook', self.suite_codebook),
            ('reliability', self.suite_reliability),
            ('forecaster', self.suite_forecaster),
            ('pipeline', self.suite_pipeline),
        ]

    def run(self, keep_going: bool = False, only: Optional[List[str]] = None) -> List[SuiteResult]:
        """Run the suites in order; stop after the first failing one unless keep_going"""
        results = []
        for index, (name, suite) in enumerate(self.suites):
            if only and name not in only:
                continue
            result = SuiteResult(name)
            start = time.perf_counter()
            try:
                result.findings = suite(np.random.default_rng([self.seed, index]))
            except (ValueError, RuntimeError, ArithmeticError) as e:
                logging.exception(f'Suite {name} raised')
                result.findings.append(FindingType.SUITE_CRASHED(error=f'{type(e).__name__}: {e}'))
            result.seconds = time.perf_counter() - start
            if result.seconds > SLOW_SUITE_SECONDS:
                result.findings.append(FindingType.SUITE_SLOW(seconds=result.seconds))
            results.append(result)
            logging.info(f'Suite {name}: {"passed" if result.passed else "FAILED"} in {result.seconds:.2f} s')
            if not result.passed and not keep_going:
                break
        return results

    def suite_nn_core(self, rng: np.random.Generator) -> List[Finding]:
        findings = []
        worst = 0.0
        for case in range(8):
            depth = 1 + case % 2
            dims = [int(d) for d in rng.integers(1, 17, size=depth + 1)]
            activation = Activation.RELU if case % 4 < 2 else Activation.GELU
            params = MlpParams.init(dims, rng, activation)
            x = rng.normal(size=(4, dims[0]))
            target = rng.normal(size=(4, dims[-1]))

            def loss_fn(p, x=x, target=target):
                out, cache = mlp_forward(p, x)
                diff = out - target
                return 0.5 * float(np.sum(diff * diff)), mlp_backward(p, cache, diff)

            worst = max(worst, grad_check(params, loss_fn).max_relative_error)
        findings.append(check('analytic gradients match central differences', worst <= 1e-4,
                              f'max relative error {worst:.2e}'))

        def trajectory():
            local = np.random.default_rng(self.seed)
            params = MlpParams.init([6, 8, 3], local)
            state = AdamState.for_params(params)
            x, target = local.normal(size=(5, 6)), local.normal(size=(5, 3))
            for _ in range(5):
                out, cache = mlp_forward(params, x)
                params, state = adam_step(params, mlp_backward(params, cache, out - target), state, 1e-2)
            return params.arrays()

        first, second = trajectory(), trajectory()
        findings.append(check('Adam trajectories are bitwise reproducible',
                              all(np.array_equal(a, b) for a, b in zip(first, second)), '5 steps, same seed'))

        ok = True
        for total in (1, 2, 7, 30):
            rates = [cosine_lr(3e-4, e, total) for e in range(total)]
            ok &= rates[0] == 3e-4 and ValidationHelper.is_non_increasing(rates) and rates[-1] > 0
        findings.append(check('cosine schedule starts at base, never increases, stays positive', ok,
                              'totals 1, 2, 7, 30'))
        return findings

    def suite_series_io(self, rng: np.random.Generator) -> List[Finding]:
        findings = []
        norm_dev, patch_ok, pair_ok = 0.0, True, True
        for _ in range(100):
            C, L = int(rng.integers(1, 5)), int(rng.integers(2, 60))
            x = rng.normal(size=(C, L)) * 10.0 ** rng.uniform(-2, 3) + rng.normal() * 100
            x_norm, stats = instance_normalize(x)
            norm_dev = max(norm_dev, ValidationHelper.max_abs_deviation(instance_denormalize(x_norm, stats), x))
            L_p = 2 * int(rng.integers(1, 9))
            patch_ok &= np.array_equal(unpatchify(patchify(x, L_p)), x)
            v = rng.normal(size=(C, int(rng.integers(1, 20))))
            pair_ok &= np.array_equal(downsample(upsample(v)), v)
        findings.append(check('denormalize inverts normalize', norm_dev <= 1e-6, f'max deviation {norm_dev:.2e}'))
        findings.append(check('unpatchify inverts patchify exactly', patch_ok, '100 random inputs'))
        findings.append(check('downsample inverts upsample exactly', pair_ok, '100 random inputs'))

        ok = True
        for T in (200, 333, 1000):
            frame = synth_generate(SynthSpec(channels=2, length=T, motifs=1, motif_len=8), int(rng.integers(1 << 30)))
            for kind in ('ett', 'other'):
                parts = split_frame(frame, kind)
                ok &= sum(p.length for p in parts) == T
                ok &= all(p.length > 0 for p in parts)
                ok &= np.array_equal(np.concatenate([p.values for p in parts], axis=1), frame.values)
        findings.append(check('splits are chronological and cover the series', ok, 'ett and other ratios'))

        ok = True
        for _ in range(50):
            T, L, H, stride = (int(v) for v in rng.integers(1, 40, size=4))
            frame = synth_generate(SynthSpec(channels=1, length=T, motifs=0, noise=0.0), 0)
            expected = (T - L - H) // stride + 1 if T - L - H >= 0 else 0
            ok &= len(make_windows(frame, L, H, stride)) == expected == window_count(T, L, H, stride)
        findings.append(check('window count follows floor((T-L-H)/stride)+1', ok, '50 random shapes'))
        return findings

    def suite_codebook(self, rng: np.random.Generator) -> List[Finding]:
        findings = []
        monotone, energy_dev, mean_exact, matrix_dev = True, 0.0, True, 0.0
        for _ in range(100):
            n, dim, K = int(rng.integers(20, 80)), int(rng.integers(2, 9)), int(rng.integers(2, 7))
            patches = rng.normal(size=(n, dim))
            pseudo, assignment, trace = lloyd_cluster(patches, K, max_iters=50, rng=rng)
            monotone &= ValidationHelper.is_non_increasing(trace, 1e-12)

            direct = 0.0
            for p, label in zip(patches, assignment.labels):
                direct += sum((a - b) ** 2 for a, b in zip(p, pseudo.centers[label]))
            energy = clustering_energy(patches, pseudo.centers, assignment.labels)
            energy_dev = max(energy_dev, abs(energy - direct) / max(direct, 1.0))

            labels = rng.integers(0, K, size=n)
            centers = center_update(patches, labels, K, np.zeros((K, dim)))
            M = indicator_matrix(labels, K)
            counts = M.sum(axis=0)
            for k in np.flatnonzero(counts):
                mean_exact &= np.array_equal(centers[k], patches[labels == k].mean(axis=0))
                matrix_dev = max(matrix_dev, ValidationHelper.max_abs_deviation(
                    centers[k], (M.T @ patches)[k] / counts[k]))
        findings.append(check('Lloyd energy never increases', monotone, '100 random instances'))
        findings.append(check('energy equals the direct sum of squared distances', energy_dev <= 1e-9,
                              f'max relative deviation {energy_dev:.2e}'))
        findings.append(check('center update equals the per-cluster mean', mean_exact and matrix_dev <= 1e-12,
                              f'matrix form deviation {matrix_dev:.2e}'))

        stable = True
        for _ in range(20):
            K, dim, C, N = int(rng.integers(2, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 4)), int(rng.integers(1, 7))
            codebook = Codebook(rng.normal(size=(K, dim)), 1)
            q = quantize(rng.normal(size=(C, N, dim)), codebook)
            rebuilt = reconstruct(q, codebook, N * 2 * dim)
            again = quantize(downsample(patchify(rebuilt, 2 * dim).patches), codebook)
            stable &= np.array_equal(q.indices, again.indices)
        findings.append(check('quantize is idempotent on reconstructed series', stable, '20 random codebooks'))

        K, dim = 6, 8
        pseudo_list = [PseudoCodebook(rng.normal(size=(K, dim)), 1)]
        weights = [np.ones(K)]
        codebook = init_codebook(pseudo_list[0])
        deviation = 0.0
        for t in range(2, 13):
            pseudo_list.append(PseudoCodebook(rng.normal(size=(K, dim)), t))
            weights.append(rng.uniform(0.1, 3.0, size=K))
            codebook = incremental_update(codebook, pseudo_list[-1], weights[-1])
            average = sum(w[:, None] * p.centers for w, p in zip(weights, pseudo_list)) / t
            deviation = max(deviation, ValidationHelper.max_abs_deviation(codebook.codewords, average))
        findings.append(check('incremental update equals the running weighted average', deviation <= 1e-10,
                              f'12 epochs, max deviation {deviation:.2e}'))

        # Centers 0 and 1 coincide; moving 1 away from 0 also moves it away from 2 and 3
        centers = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
        tau = float(np.sum(centers * centers))
        before = separation_loss(PseudoCodebook(centers, 1), tau)
        moved = centers.copy()
        moved[1] = [-2.0, -2.0]
        after = separation_loss(PseudoCodebook(moved, 1), tau)
        findings.append(check('separating coincident centers lowers the separation loss', after < before,
                              f'{before:.6f} -> {after:.6f}'))
        return findings

    def suite_reliability(self, rng: np.random.Generator) -> List[Finding]:
        findings = []
        z_all = rng.uniform(0.0, 1.0, size=(200, 3))
        bound_ok, mono_ok = True, True
        for gamma in GAMMAS:
            fused = np.array([self.fuse(z, gamma) for z in z_all])
            bound_ok &= bool(np.all(fused <= z_all.min(axis=1) + 1e-12))
            for z, value in zip(z_all[:50], fused[:50]):
                bumped = z.copy()
                bumped[int(rng.integers(3))] += 0.1
                mono_ok &= self.fuse(bumped, gamma) > value
        findings.append(check('fused value never exceeds the smallest score', bound_ok, '200 triples x 3 gammas'))
        findings.append(check('fused value increases with every score', mono_ok, '50 triples x 3 gammas'))

        limit = max(abs(self.fuse(z, 1e-3) - z.min()) for z in z_all)
        findings.append(check('small gamma approaches the minimum score', limit <= 5e-3, f'max gap {limit:.2e}'))

        gap = 0.0
        for gamma in GAMMAS:
            for z in z_all[:self.oracle_triples]:
                gap = max(gap, abs(self.fuse(z, gamma) - kl_ball_oracle(z, gamma, 400).value))
        findings.append(check('closed form matches the KL-ball oracle', gap <= 1e-4,
                              f'{self.oracle_triples} triples x 3 gammas, max gap {gap:.2e}'))

        ranges_ok, direct_dev = True, 0.0
        for _ in range(100):
            n, dim, K = int(rng.integers(20, 60)), 4, int(rng.integers(2, 6))
            patches = rng.normal(scale=0.5, size=(n, dim))
            pseudo, assignment, _ = lloyd_cluster(patches, K, rng=rng)
            previous = Codebook(pseudo.centers + rng.normal(scale=0.3, size=pseudo.centers.shape), 1)
            scores = score_all(patches, pseudo, assignment, previous)
            ranges_ok &= ValidationHelper.in_range(scores.rep, 0.0, 1.0, high_open=True)
            ranges_ok &= ValidationHelper.in_range(scores.je, 0.0, 1.0, high_open=True)
            ranges_ok &= ValidationHelper.in_range(scores.delta, 0.0, 1.0, low_open=True)

            E = np.array([np.sum((patches[assignment.labels == k] - pseudo.centers[k]) ** 2) for k in range(K)])
            d = np.sum((pseudo.centers - previous.codewords) ** 2, axis=1)
            A = np.array([np.sum(np.abs(patches - c)) for c in pseudo.centers])
            with np.errstate(over='ignore', invalid='ignore'):
                direct = [1.0 - np.exp(E) / np.exp(E.sum()), np.exp(d) / np.exp(d.sum()), 1.0 - np.exp(A) / np.exp(A.sum())]
            for got, want in zip((scores.rep, scores.delta, scores.je), direct):
                if np.all(np.isfinite(want)):
                    direct_dev = max(direct_dev, ValidationHelper.max_abs_deviation(got, want))
        findings.append(check('scores stay in their ranges', ranges_ok, '100 random clusterings'))
        findings.append(check('log-domain scores match the direct ratios', direct_dev <= 1e-9,
                              f'max deviation {direct_dev:.2e}'))

        weights_ok, perm_dev = True, 0.0
        for _ in range(50):
            K = int(rng.integers(2, 25))
            scores = rng.uniform(0.0, 1.0, size=(K, 3))
            w = fuse_and_normalize(scores, float(rng.choice(GAMMAS))).normalized
            weights_ok &= bool(np.all(w > 0)) and abs(w.mean() - 1.0) <= 1e-9
            perm = rng.permutation(K)
            w_perm = fuse_and_normalize(scores[perm], 1.0).normalized
            perm_dev = max(perm_dev, ValidationHelper.max_abs_deviation(
                w_perm, fuse_and_normalize(scores, 1.0).normalized[perm]))
        findings.append(check('normalized weights are positive with mean 1', weights_ok, '50 random score sets'))
        findings.append(check('normalization commutes with codeword permutation', perm_dev <= 1e-12,
                              f'max deviation {perm_dev:.2e}'))
        return findings

    def suite_forecaster(self, rng: np.random.Generator) -> List[Finding]:
        findings = []
        dims = ModelDims(L=20, H=10, L_p=4, K=5)
        model = DualPathModel.create(dims, rng, quant_hidden=8, res_hidden=16)
        model = model.with_codebook(Codebook(rng.normal(size=(dims.K, dims.code_dim)), 1))
        x = rng.normal(size=(3, 2, dims.L)) * 3.0 + 1.0
        out = forward(model, x)

        findings.append(check('forecast is C x H and future ids are C x N_y',
                              out.y_hat.shape == (3, 2, dims.H) and out.q_y.shape == (3, 2, dims.N_y),
                              f'y_hat {out.y_hat.shape}, q_y {out.q_y.shape}'))

        recovered = (out.y_hat - out.stats.mean[..., None]) / out.stats.std[..., None]
        additive = ValidationHelper.max_abs_deviation(recovered, out.y_q + out.y_r)
        findings.append(check('normalized forecast is the sum of both paths', additive <= 1e-12,
                              f'max deviation {additive:.2e}'))

        perm = np.array([1, 0])
        swapped = forward(model, x[:, perm])
        equivariance = ValidationHelper.max_abs_deviation(swapped.y_hat, out.y_hat[:, perm])
        findings.append(check('permuting channels permutes the forecast', equivariance <= 1e-12,
                              f'max deviation {equivariance:.2e}'))

        candidates = upsample(model.codebook_ref.codewords)
        tail = dims.H - (dims.N_y - 1) * dims.L_p
        head = out.y_q[..., :(dims.N_y - 1) * dims.L_p].reshape(-1, dims.L_p)
        last = out.y_q[..., (dims.N_y - 1) * dims.L_p:].reshape(-1, tail)
        gap = max(_span_gap(head, candidates), _span_gap(last, candidates[:, :tail]))
        findings.append(check('quantized forecast chunks are upsampled codewords', gap == 0.0,
                              f'{head.shape[0] + last.shape[0]} chunks'))

        straight_dev = 0.0
        for H in (4, 10):
            d = ModelDims(L=8, H=H, L_p=4, K=3)
            sample_model = DualPathModel.create(d, rng, quant_hidden=4, res_hidden=4)
            width = d.N_y * d.code_dim
            jacobian = np.stack([upsample(np.eye(width)[i])[:H] for i in range(width)])
            g = rng.normal(size=H)
            straight_dev = max(straight_dev, ValidationHelper.max_abs_deviation(snap_backward(sample_model, g), jacobian @ g))
        findings.append(check('snap backward equals the unsnapped gradient', straight_dev <= 1e-12,
                              f'max deviation {straight_dev:.2e}'))

        d = ModelDims(L=12, H=4, L_p=4, K=6)
        pairs = rng.normal(size=(2, 6))
        x = upsample(pairs)
        x_norm, _ = instance_normalize(x)
        codewords = downsample(patchify(x_norm, d.L_p).patches).reshape(-1, d.code_dim)
        perfect = DualPathModel.create(d, rng, quant_hidden=4, res_hidden=4).with_codebook(Codebook(codewords, 1))
        residual = forward(perfect, x).x_r
        findings.append(check('residual vanishes when every patch is a codeword', bool(np.all(residual == 0.0)),
                              f'max |x_r| {np.max(np.abs(residual)):.2e}'))
        return findings

    def suite_pipeline(self, rng: np.random.Generator) -> List[Finding]:
        findings = []
        pool = np.arange(400, dtype=np.float64).reshape(100, 4)
        half = sample_patches(pool, 0.5, self.seed, 3)
        same = sample_patches(pool, 0.5, self.seed, 3)
        findings.append(check('patch sampling is exact-size, duplicate-free and replayable',
                              half.shape[0] == 50 and len(np.unique(half[:, 0])) == 50 and np.array_equal(half, same)
                              and np.array_equal(sample_patches(pool, 1.0, self.seed, 3), pool), 'ratio 0.5 on 100'))

        frame = synth_generate(SynthSpec(channels=2, length=400, motif_len=8, motif_rate=0.05), self.seed)
        train, valid, _ = split_frame(frame, 'other', 24, 8)
        train_w, valid_w = WindowSet.from_frame(train, 24, 8), WindowSet.from_frame(valid, 24, 8)
        base = dict(L=24, H=8, L_p=4, K=4, epochs=3, patience=3, batch_size=16, quant_hidden=8, res_hidden=16,
                    seed=self.seed)

        first = fit(train_w, valid_w, TrainConfig(**base))
        second = fit(train_w, valid_w, TrainConfig(**base))
        findings.append(check('identical seeds give identical histories',
                              [r.to_record() for r in first.history] == [r.to_record() for r in second.history],
                              f'{len(first.history)} epochs'))
        findings.append(check('epochs are numbered 1, 2, ...',
                              [r.epoch for r in first.history] == list(range(1, len(first.history) + 1)),
                              'history order'))
        best = min(r.valid_mse for r in first.history)
        chosen = next(r.valid_mse for r in first.history if r.epoch == first.best_epoch)
        findings.append(check('returned model has the lowest validation MSE', chosen == best,
                              f'best epoch {first.best_epoch}'))

        frozen = fit(train_w, valid_w, TrainConfig(**base, ablations=['no_updating']))
        shifts = [r.codebook_shift for r in frozen.history[1:]]
        findings.append(check('no_updating keeps the codebook fixed', all(s == 0.0 for s in shifts), f'shifts {shifts}'))

        ablated = fit(train_w, valid_w, TrainConfig(**base, ablations=['no_residual']))
        same_codebooks = all(a.codebook_shift == b.codebook_shift and a.lloyd_iters == b.lloyd_iters
                             for a, b in zip(first.history, ablated.history))
        full_init = TrainState.initial(TrainConfig(**base)).model.quant_mlp
        ablated_init = TrainState.initial(TrainConfig(**base, ablations=['no_residual'])).model.quant_mlp
        same_init = all(np.array_equal(a, b) for a, b in zip(full_init.arrays(), ablated_init.arrays()))
        findings.append(check('no_residual leaves the codebook and quantization path setup unchanged',
                              same_codebooks and same_init, 'codebook trajectory and initial quantization MLP'))
        return findings

def _span_gap(chunks: np.ndarray, candidates: np.ndarray) -> float:
    """Largest distance (max-norm) from a chunk to its closest candidate row"""
    if chunks.size == 0:
        return 0.0
    return float(np.max(np.min(np.abs(chunks[:, None, :] - candidates[None]).max(axis=-1), axis=1)))

def summarize(results: List[SuiteResult]) -> Dict[str, int]:
    return {
        'suites': len(results),
        'failed_suites': sum(not r.passed for r in results),
        'violations': sum(f.failed for r in results for f in r.findings),
    }
