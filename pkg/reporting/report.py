#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import csv
import json
import os
from datetime import datetime
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import yaml

from models.codebook import Codebook
from models.series_io import MotifPlacement

def write_jsonl(filename: str, records: Iterable[Dict[str, Any]], append: bool = False):
    """One JSON object per line with sorted keys so reruns compare byte for byte"""
    with open(filename, 'a' if append else 'w') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + '\n')

def read_jsonl(filename: str) -> List[Dict[str, Any]]:
    with open(filename, 'r') as f:
        return [json.loads(line) for line in f if line.strip()]

def format_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Left-aligned text columns; floats are printed with 4 decimals"""
    def cell(value):
        if isinstance(value, float):
            return f'{value:.4f}'
        return '-' if value is None else str(value)

    text = [[cell(v) for v in row] for row in rows]
    widths = [max([len(h)] + [len(r[i]) for r in text]) for i, h in enumerate(headers)]
    lines = ['  '.join(h.ljust(w) for h, w in zip(headers, widths)).rstrip(),
             '  '.join('-' * w for w in widths)]
    lines.extend('  '.join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in text)
    return '\n'.join(lines)

class Report:
    """MSE/MAE rows per (split, horizon, model)"""

    HEADERS = ['split', 'horizon', 'model', 'mse', 'mae']

    def __init__(self):
        self.rows = []

    def add(self, split: str, horizon: int, model: str, mse: float, mae: float, **setting):
        """Add one row; keyword settings (e.g. K=16 in a sweep) become leading columns"""
        row = dict(setting)
        row.update({'split': split, 'horizon': horizon, 'model': model, 'mse': float(mse), 'mae': float(mae)})
        self.rows.append(row)

    def table(self) -> str:
        settings = sorted({key for row in self.rows for key in row} - set(self.HEADERS))
        headers = settings + self.HEADERS
        return format_table(headers, [[row.get(h) for h in headers] for row in self.rows])

    def save(self, filename: str):
        """Save the rows as JSON lines

        Args:
            filename: The name of the file to save to
        """
        write_jsonl(filename, self.rows)

def score_records(report) -> List[Dict[str, Any]]:
    """Per-codeword reliability scores and weights of one epoch report; empty when no scoring ran"""
    if report.scores is None:
        return []
    records = []
    for k in range(report.scores.k):
        triple = report.scores.triple(k)
        records.append({
            'epoch': report.epoch,
            'codeword': k,
            'rep': triple.rep,
            'delta': triple.delta,
            'je': triple.je,
            'fused': float(report.weights.fused[k]),
            'weight': float(report.weights.normalized[k]),
        })
    return records

def sidecar_path(filename: str) -> str:
    return os.path.splitext(filename)[0] + '.yml'

def write_codebook(filename: str, codebook: Codebook, usage: Optional[np.ndarray] = None,
                   meta: Optional[Dict[str, Any]] = None) -> str:
    """
    One CSV row per codeword (id, usage, values) plus a YAML sidecar describing the dump

    Returns:
        Path of the YAML sidecar
    """
    with open(filename, 'w', newline='') as f:
        writer = csv.writer(f)
        header = ['codeword'] + (['usage'] if usage is not None else []) + [f'v{i}' for i in range(codebook.dim)]
        writer.writerow(header)
        for k, row in enumerate(codebook.codewords):
            counts = [int(usage[k])] if usage is not None else []
            writer.writerow([k] + counts + [repr(float(v)) for v in row])

    sidecar = sidecar_path(filename)
    info = {'codewords': codebook.k, 'dim': codebook.dim, 'codebook_epoch': codebook.epoch}
    if usage is not None:
        info['total_patches'] = int(np.sum(usage))
    info.update(meta or {})
    with open(sidecar, 'w') as f:
        yaml.safe_dump(info, f, sort_keys=True)
    return sidecar

def write_usage(filename: str, usage: np.ndarray):
    with open(filename, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=['codeword', 'usage', 'share'])
        writer.writeheader()
        total = max(int(np.sum(usage)), 1)
        for k, count in enumerate(usage):
            writer.writerow({'codeword': k, 'usage': int(count), 'share': f'{int(count) / total:.6f}'})

def write_motifs(filename: str, motifs: Sequence[MotifPlacement]):
    """Ground-truth motif placements of a synthetic series"""
    with open(filename, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=['channel', 'start', 'motif_id'])
        writer.writeheader()
        for m in motifs:
            writer.writerow({'channel': m.channel, 'start': m.start, 'motif_id': m.motif_id})

def write_forecast(filename: str, channel_names: Sequence[str], y_hat: np.ndarray,
                   timestamps: Optional[Sequence[datetime]] = None, first_step: int = 0):
    """
    Forecast as a CSV with one row per future step

    The first column is the timestamp when known, otherwise the step index
    counted from the start of the input series.
    """
    with open(filename, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['date' if timestamps is not None else 'step'] + list(channel_names))
        for h in range(y_hat.shape[-1]):
            key = timestamps[h].strftime('%Y-%m-%d %H:%M:%S') if timestamps is not None else first_step + h
            writer.writerow([key] + [repr(float(v)) for v in y_hat[:, h]])
