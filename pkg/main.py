#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import argparse
import dataclasses
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from analysis.verification import Verifier, summarize
from config.config import CliConfig, TrainConfig
from config.defaults import allowed_values, benchmark_horizons
from models.codebook import codeword_usage, quantize
from models.forecaster import forward
from models.receipt import Receipt
from models.series_io import (SeriesFrame, SynthSpec, downsample, instance_normalize, load_csv, patchify, save_csv,
                              split_frame, synth_generate)
from pipeline.checkpoint import load_checkpoint, save_checkpoint
from pipeline.training import WindowSet, evaluate, evaluate_naive, fit
from reporting.report import (Report, format_table, score_records, write_codebook, write_forecast, write_jsonl,
                              write_motifs, write_usage)

"""
Codebook-quantized time-series forecasting

Trains and evaluates a dual-path forecaster whose quantization path works on a
reliability-weighted, incrementally updated codebook of patch prototypes.

Usage:
    python main.py train --data series.csv --kind ett --out run1
    python main.py eval --data series.csv --checkpoint run1/checkpoint.npz
    python main.py forecast --data series.csv --checkpoint run1/checkpoint.npz
    python main.py inspect-codebook --checkpoint run1/checkpoint.npz --data series.csv
    python main.py sweep --data series.csv --param K --values 8 16 24 --out sweep1
    python main.py synth --out data --seed 7
    python main.py verify --all

Configuration precedence: command-line flags override the --config YAML file,
which overrides the built-in defaults.
"""

COMMANDS = ['train', 'eval', 'forecast', 'inspect-codebook', 'sweep', 'synth', 'verify']

# flag destination -> TrainConfig field
TRAIN_FLAGS = {
    'L': 'L', 'H': 'H', 'Lp': 'L_p', 'K': 'K', 'gamma': 'gamma', 'wsep': 'w_sep', 'lr': 'lr',
    'epochs': 'epochs', 'patience': 'patience', 'sample_ratio': 'sample_ratio', 'batch': 'batch_size',
    'seed': 'seed', 'ablation': 'ablations', 'weight_norm': 'weight_norm_mode', 'kind': 'dataset_kind',
    'eps': 'eps', 'lloyd_iters': 'lloyd_max_iters', 'stride': 'stride', 'quant_hidden': 'quant_hidden',
    'res_hidden': 'res_hidden', 'activation': 'activation', 'sep_steps': 'sep_steps', 'aux_weight': 'aux_weight',
    'sample_train_windows': 'sample_train_windows', 'quant_loss': 'quant_loss',
}

# Sensitivity sweeps vary one shape setting and keep every other field
SWEEP_PARAMS = ['K', 'L_p']

# Fields that change the network or codebook shapes; eval refuses to override them
MODEL_FIELDS = ('L', 'H', 'L_p', 'K', 'activation', 'quant_hidden', 'res_hidden')

def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--data', type=str, help='CSV series: header row, optional leading date column')
    common.add_argument('--kind', choices=allowed_values['dataset_kind'], help='Split ratios: ett 6:2:2, other 7:1:2')
    common.add_argument('--config', type=str, help='Flat YAML file with TrainConfig keys')
    common.add_argument('--out', type=str, default='output', help='Output directory')
    common.add_argument('--checkpoint', type=str, help='Checkpoint (.npz) to load')
    common.add_argument('--horizons', type=int, nargs='+', help=f'Evaluation horizons, e.g. {benchmark_horizons}')
    common.add_argument('--split', choices=['train', 'valid', 'test', 'all'], default='test')
    common.add_argument('--L', type=int, help='Lookback length')
    common.add_argument('--H', type=int, help='Forecast horizon')
    common.add_argument('--Lp', type=int, help='Patch length (even)')
    common.add_argument('--K', type=int, help='Codebook size')
    common.add_argument('--gamma', type=float, help='KL-ball radius of the reliability fusion')
    common.add_argument('--wsep', type=float, help='Separation loss weight')
    common.add_argument('--lr', type=float, help='Base learning rate')
    common.add_argument('--epochs', type=int)
    common.add_argument('--patience', type=int)
    common.add_argument('--sample-ratio', type=float, help='Share of patches sampled for clustering')
    common.add_argument('--batch', type=int, help='Minibatch size')
    common.add_argument('--seed', type=int)
    common.add_argument('--ablation', action='append', choices=allowed_values['ablations'], help='Repeatable')
    common.add_argument('--weight-norm', choices=allowed_values['weight_norm_mode'])
    common.add_argument('--eps', type=float, help='Normalization epsilon')
    common.add_argument('--lloyd-iters', type=int)
    common.add_argument('--stride', type=int, help='Window stride')
    common.add_argument('--quant-hidden', type=int)
    common.add_argument('--res-hidden', type=int)
    common.add_argument('--activation', choices=allowed_values['activation'])
    common.add_argument('--sep-steps', type=int)
    common.add_argument('--aux-weight', type=float)
    common.add_argument('--quant-loss', choices=allowed_values['quant_loss'],
                        help='Train the quantization path on its own forecast error (own) or the combined one (joint)')
    common.add_argument('--sample-train-windows', action='store_true', default=None,
                        help='Also thin the gradient-training windows by the sample ratio')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true')
    verbosity.add_argument('--quiet', action='store_true')

    parser = argparse.ArgumentParser(description='Codebook-quantized time-series forecasting')
    commands = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        sub = commands.add_parser(name, parents=[common])
        if name == 'synth':
            sub.add_argument('--channels', type=int, default=3)
            sub.add_argument('--length', type=int, default=3000)
            sub.add_argument('--motifs', type=int, default=4)
            sub.add_argument('--noise', type=float, default=0.1)
        if name == 'sweep':
            sub.add_argument('--param', choices=SWEEP_PARAMS, default='K', help='Setting varied across runs')
            sub.add_argument('--values', type=int, nargs='+', default=[8, 16, 24])
        if name == 'verify':
            sub.add_argument('--all', action='store_true', help='Keep going after a failing suite')
            sub.add_argument('--inject-fault', action='store_true', help='Perturb the reliability fusion')
    return parser.parse_args(argv)

def train_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {field: getattr(args, flag) for flag, field in TRAIN_FLAGS.items()}

def build_cli_config(args: argparse.Namespace) -> CliConfig:
    train = TrainConfig.resolve(args.config, train_overrides(args))
    return CliConfig(args.command, train, args.data, args.out, args.checkpoint, args.horizons or [], args.split,
                     args.config)

def require_data(cli: CliConfig) -> SeriesFrame:
    if not cli.data_path:
        raise ValueError(f'Command "{cli.command}" needs --data')
    if not os.path.exists(cli.data_path):
        raise FileNotFoundError(f'Data file not found: {cli.data_path}')
    return load_csv(cli.data_path)

def default_horizons(cli: CliConfig, config: TrainConfig) -> List[int]:
    """Requested horizons, else the benchmark horizons the model covers, else H"""
    return cli.horizons or [h for h in benchmark_horizons if h <= config.H] or [config.H]

def select_split(frame: SeriesFrame, split: str, kind: str, L: int, H: int) -> SeriesFrame:
    if split == 'all':
        return frame
    return dict(zip(('train', 'valid', 'test'), split_frame(frame, kind, L, H)))[split]

def cmd_train(cli: CliConfig, args: argparse.Namespace) -> int:
    config = cli.train
    frame = require_data(cli)
    train, valid, test = split_frame(frame, config.dataset_kind, config.L, config.H)
    train_w = WindowSet.from_frame(train, config.L, config.H, config.stride)
    valid_w = WindowSet.from_frame(valid, config.L, config.H, config.stride)
    test_w = WindowSet.from_frame(test, config.L, config.H, config.stride)
    horizons = default_horizons(cli, config)
    for horizon in horizons:
        if horizon > config.H:
            raise ValueError(f'Horizon {horizon} exceeds the trained horizon H={config.H}')
    logging.info(f'Training on {len(train_w)} windows, validating on {len(valid_w)}, config {config.config_hash()[:12]}')

    checkpoint_path = cli.output_path('checkpoint.npz')
    history_path = cli.output_path('history.jsonl')
    scores_path = cli.output_path('scores.jsonl')
    write_jsonl(history_path, [])
    write_jsonl(scores_path, [])

    def on_epoch(report):
        write_jsonl(history_path, [report.to_record()], append=True)
        write_jsonl(scores_path, score_records(report), append=True)

    def on_improvement(model, codebook, epoch):
        save_checkpoint(checkpoint_path, model, codebook, config, epoch)

    result = fit(train_w, valid_w, config, on_improvement=on_improvement, on_epoch=on_epoch)
    if result.stopped_before:
        logging.info(f'Stopped before epoch {result.stopped_before}; best epoch {result.best_epoch}')

    report = Report()
    for horizon in horizons:
        mse, mae = evaluate(result.model, result.codebook, test_w, horizon=horizon, eps=config.eps)
        report.add('test', horizon, 'recast', mse, mae)
        naive_mse, naive_mae = evaluate_naive(test_w, horizon)
        report.add('test', horizon, 'naive', naive_mse, naive_mae)
    metrics_path = cli.output_path('metrics.jsonl')
    report.save(metrics_path)
    print(report.table())

    receipt = Receipt('train', config.config_hash())
    receipt.audit_file(cli.data_path, 'Input series')
    if cli.config_path:
        receipt.audit_file(cli.config_path, 'Configuration file')
    receipt.audit_file(checkpoint_path, f'Checkpoint (best epoch {result.best_epoch})')
    receipt.audit_file(history_path, 'Epoch history')
    receipt.audit_file(scores_path, 'Reliability scores')
    receipt.audit_file(metrics_path, 'Test metrics')
    receipt_filename = cli.output_path('receipt.txt')
    receipt_hash = receipt.save(receipt_filename)
    print(f'Receipt saved to {receipt_filename}')
    print(f'Receipt SHA256: {receipt_hash}')
    return 0

def check_checkpoint_config(explicit: Dict[str, Any], checkpoint_config: TrainConfig):
    """Explicitly requested model-shaping values must agree with the checkpoint"""
    stored = checkpoint_config.to_dict()
    for key in MODEL_FIELDS:
        if explicit.get(key) is not None and explicit[key] != stored[key]:
            raise ValueError(f'Checkpoint/config mismatch on "{key}": checkpoint has {stored[key]}, requested {explicit[key]}')

def explicit_settings(args: argparse.Namespace) -> Dict[str, Any]:
    settings = TrainConfig.from_file(args.config) if args.config else {}
    settings.update({k: v for k, v in train_overrides(args).items() if v is not None})
    return settings

def load_for_inference(cli: CliConfig, args: argparse.Namespace):
    if not cli.checkpoint:
        raise ValueError(f'Command "{cli.command}" needs --checkpoint')
    if not os.path.exists(cli.checkpoint):
        raise FileNotFoundError(f'Checkpoint not found: {cli.checkpoint}')
    checkpoint = load_checkpoint(cli.checkpoint)
    check_checkpoint_config(explicit_settings(args), checkpoint.config)
    return checkpoint

def cmd_eval(cli: CliConfig, args: argparse.Namespace) -> int:
    checkpoint = load_for_inference(cli, args)
    config = checkpoint.config
    kind = args.kind or config.dataset_kind
    horizons = default_horizons(cli, config)
    for horizon in horizons:
        if horizon > config.H:
            raise ValueError(f'Horizon {horizon} exceeds the checkpoint horizon H={config.H}')
    frame = select_split(require_data(cli), cli.split, kind, config.L, config.H)
    windows = WindowSet.from_frame(frame, config.L, config.H, args.stride or config.stride)

    report = Report()
    for horizon in horizons:
        mse, mae = evaluate(checkpoint.model, checkpoint.codebook, windows, horizon=horizon, eps=config.eps)
        report.add(cli.split, horizon, 'recast', mse, mae)
    report.save(cli.output_path('eval_metrics.jsonl'))
    print(report.table())
    return 0

def cmd_forecast(cli: CliConfig, args: argparse.Namespace) -> int:
    checkpoint = load_for_inference(cli, args)
    config = checkpoint.config
    frame = require_data(cli)
    if frame.length < config.L:
        raise ValueError(f'"{cli.data_path}" has {frame.length} steps; forecasting needs the last L={config.L}')
    output = forward(checkpoint.model, frame.values[:, -config.L:], config.eps)

    timestamps = None
    if frame.timestamps is not None and len(frame.timestamps) >= 2:
        step = frame.timestamps[-1] - frame.timestamps[-2]
        timestamps = [frame.timestamps[-1] + step * (h + 1) for h in range(config.H)]
    filename = cli.output_path('forecast.csv')
    write_forecast(filename, frame.channel_names, output.y_hat, timestamps, first_step=frame.length)
    logging.info(f'Forecast of {config.H} steps for {frame.channels} channels written to {filename}')
    return 0

def cmd_inspect_codebook(cli: CliConfig, args: argparse.Namespace) -> int:
    checkpoint = load_for_inference(cli, args)
    config = checkpoint.config
    codebook = checkpoint.codebook
    usage = None
    meta = {'checkpoint': cli.checkpoint, 'checkpoint_epoch': checkpoint.epoch, 'config_hash': config.config_hash()}
    if cli.data_path:
        frame = select_split(require_data(cli), cli.split, args.kind or config.dataset_kind, config.L, config.H)
        windows = WindowSet.from_frame(frame, config.L, config.H, config.stride)
        x_norm, _ = instance_normalize(windows.x, config.eps)
        usage = codeword_usage(quantize(downsample(patchify(x_norm, config.L_p).patches), codebook), codebook.k)
        write_usage(cli.output_path('usage.csv'), usage)
        meta.update({'data': cli.data_path, 'split': cli.split, 'windows': len(windows)})

    sidecar = write_codebook(cli.output_path('codebook.csv'), codebook, usage, meta)
    rows = [[k, int(usage[k]) if usage is not None else None] + [float(v) for v in codebook.codewords[k]]
            for k in range(codebook.k)]
    print(format_table(['codeword', 'usage'] + [f'v{i}' for i in range(codebook.dim)], rows))
    logging.info(f'Codebook written with metadata in {sidecar}')
    return 0

def cmd_sweep(cli: CliConfig, args: argparse.Namespace) -> int:
    """Train once per value of K or L_p on the same splits and report test metrics side by side"""
    base = cli.train
    frame = require_data(cli)
    train, valid, test = [WindowSet.from_frame(part, base.L, base.H, base.stride)
                          for part in split_frame(frame, base.dataset_kind, base.L, base.H)]
    horizons = default_horizons(cli, base)
    for horizon in horizons:
        if horizon > base.H:
            raise ValueError(f'Horizon {horizon} exceeds the trained horizon H={base.H}')
    configs = [dataclasses.replace(base, **{args.param: value}) for value in args.values]

    report = Report()
    history_path = cli.output_path('history.jsonl')
    write_jsonl(history_path, [])
    for config in configs:
        value = getattr(config, args.param)
        logging.info(f'Sweep {args.param}={value}: config {config.config_hash()[:12]}')
        result = fit(train, valid, config)
        write_jsonl(history_path, [dict(r.to_record(), **{args.param: value}) for r in result.history], append=True)
        for horizon in horizons:
            mse, mae = evaluate(result.model, result.codebook, test, horizon=horizon, eps=config.eps)
            report.add('test', horizon, 'recast', mse, mae, **{args.param: value})
    for horizon in horizons:
        report.add('test', horizon, 'naive', *evaluate_naive(test, horizon))
    report.save(cli.output_path('metrics.jsonl'))
    print(report.table())
    return 0

def cmd_synth(cli: CliConfig, args: argparse.Namespace) -> int:
    spec = SynthSpec(channels=args.channels, length=args.length, motifs=args.motifs, noise=args.noise)
    frame = synth_generate(spec, cli.train.seed)
    data_path = cli.output_path('synth.csv')
    save_csv(frame, data_path)
    write_motifs(cli.output_path('motifs.csv'), frame.motifs)
    print(f'Wrote {frame.channels} x {frame.length} series to {data_path} ({len(frame.motifs)} motif placements)')
    return 0

def cmd_verify(cli: CliConfig, args: argparse.Namespace) -> int:
    results = Verifier(seed=cli.train.seed, inject_fault=args.inject_fault).run(keep_going=args.all)
    rows = [[r.name, 'pass' if r.passed else 'FAIL', f'{r.seconds:.2f}', sum(f.failed for f in r.findings)]
            for r in results]
    print(format_table(['suite', 'status', 'seconds', 'violations'], rows))
    for result in results:
        for finding in result.findings:
            if finding.failed:
                print(f'[{str(finding.severity).upper()}] {result.name}: {finding.message}')
            else:
                logging.debug(f'{result.name}: {finding.message}')
    return 0 if summarize(results)['failed_suites'] == 0 else 1

HANDLERS = {
    'train': cmd_train,
    'eval': cmd_eval,
    'forecast': cmd_forecast,
    'inspect-codebook': cmd_inspect_codebook,
    'sweep': cmd_sweep,
    'synth': cmd_synth,
    'verify': cmd_verify,
}

def main(argv: Optional[List[str]] = None) -> int:
    args = parse_arguments(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, force=True)

    try:
        cli = build_cli_config(args)
        return HANDLERS[cli.command](cli, args)
    except (ValueError, RuntimeError, FloatingPointError, FileNotFoundError) as e:
        logging.error(f'{args.command} failed: {e}')
        return 1

if __name__ == "__main__":
    sys.exit(main())
