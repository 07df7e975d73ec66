#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import csv
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any, Dict, List, Optional, Sequence, Tuple

import dateutil.parser
import numpy as np
import regex

from analysis.validation_helper import ValidationHelper

NORM_EPS = 1e-5

# Split ratios (train, valid) per dataset kind; test takes the remainder
SPLIT_RATIOS = {
    'ett': (0.6, 0.2),
    'other': (0.7, 0.1),
}

@dataclass(frozen=True)
class MotifPlacement:
    channel: int
    start: int
    motif_id: int

@dataclass(frozen=True)
class SeriesFrame:
    """Multichannel series stored channel-major (C x T)"""
    values: np.ndarray
    channel_names: Tuple[str, ...]
    name: str = 'series'
    timestamps: Optional[Tuple[datetime, ...]] = None
    motifs: Tuple[MotifPlacement, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f'Series values must be a C x T matrix, got shape {values.shape}')
        if len(self.channel_names) != values.shape[0]:
            raise ValueError(f'{len(self.channel_names)} channel names for {values.shape[0]} channels')
        if not np.all(np.isfinite(values)):
            raise ValueError(f'Series "{self.name}" contains non-finite values')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'channel_names', tuple(self.channel_names))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int, name: Optional[str] = None) -> 'SeriesFrame':
        stamps = self.timestamps[start:stop] if self.timestamps is not None else None
        motifs = tuple(m for m in self.motifs if start <= m.start < stop)
        return SeriesFrame(self.values[:, start:stop], self.channel_names, name or self.name, stamps, motifs)

@dataclass(frozen=True)
class WindowPair:
    x: np.ndarray  # C x L
    y: np.ndarray  # C x H
    origin_index: int

@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (..., C)
    std: np.ndarray   # (..., C), sqrt(var + eps)
    eps: float = NORM_EPS

@dataclass(frozen=True)
class PatchSet:
    """Patches of a (..., C, L) array stored as (..., C, N, L_p)"""
    patches: np.ndarray
    patch_len: int
    patches_per_channel: int
    length: int

    @property
    def padding(self) -> int:
        return self.patches_per_channel * self.patch_len - self.length

    @property
    def count(self) -> int:
        return int(np.prod(self.patches.shape[:-1]))

    @property
    def index_map(self) -> List[Tuple[int, int]]:
        """(channel, patch position) for each patch of a single window, in storage order"""
        channels = self.patches.shape[-3]
        return [(c, j) for c in range(channels) for j in range(self.patches_per_channel)]

def _is_number(value: str) -> bool:
    try:
        float(value)
        return True
    except ValueError:
        return False

def load_csv(path: str, options: Optional[Dict[str, Any]] = None) -> SeriesFrame:
    """
    Load a UTF-8 comma-separated series with one header row

    A leading timestamp column is detected by the header "date" or by a first
    field that does not parse as a number; it is dropped from the channels.

    Args:
        path: CSV file
        options: skip_first_rows, skip_last_rows, columns (regex patterns
            choosing channels, first matching header wins) and name

    Raises:
        ValueError: On an unreadable file, ragged rows or non-numeric cells
    """
    options = options or {}
    try:
        with open(path, mode='r', encoding='utf-8-sig') as file:
            lines = file.readlines()

        skip_first = options.get('skip_first_rows', 0)
        skip_last = options.get('skip_last_rows', 0)
        if skip_first > 0:
            lines = lines[skip_first:]
        if skip_last > 0:
            lines = lines[:-skip_last]

        rows = [row for row in csv.reader(lines) if row]
        if len(rows) < 2:
            raise ValueError('need a header row and at least one data row')
        header = [h.strip() for h in rows[0]]
        body = rows[1:]
        for i, row in enumerate(body):
            if len(row) != len(header):
                raise ValueError(f'ragged row {i + 2}: {len(row)} fields, header has {len(header)}')

        has_date = header[0].casefold() == 'date' or not _is_number(body[0][0].strip())
        first = 1 if has_date else 0
        columns = list(range(first, len(header)))

        # Pick channels by pattern; each pattern takes the first header it matches
        patterns = options.get('columns')
        if patterns:
            selected = []
            for pattern in patterns:
                if not ValidationHelper.is_valid_pattern(pattern):
                    raise ValueError(f'invalid column pattern "{pattern}"')
                for col in columns:
                    if col not in selected and regex.fullmatch(pattern, header[col]):
                        selected.append(col)
                        break
                else:
                    raise ValueError(f'no column matches pattern "{pattern}"')
            columns = selected
        if not columns:
            raise ValueError('no numeric channels found')

        values = np.empty((len(columns), len(body)), dtype=np.float64)
        for t, row in enumerate(body):
            for c, col in enumerate(columns):
                cell = row[col].strip()
                try:
                    values[c, t] = float(cell)
                except ValueError:
                    raise ValueError(f'non-numeric cell "{cell}" in column "{header[col]}", row {t + 2}')

        timestamps = None
        if has_date:
            try:
                timestamps = tuple(dateutil.parser.parse(row[0]) for row in body)
            except (ValueError, OverflowError):
                logging.warning(f'Timestamp column of {path} could not be parsed; ignoring it')
        frame = SeriesFrame(values, tuple(header[c] for c in columns),
                            options.get('name') or os.path.splitext(os.path.basename(path))[0], timestamps)
    except Exception as e:
        raise ValueError(f'Error loading CSV file "{path}": {e}')

    if timestamps is not None and len(timestamps) > 2:
        steps = ValidationHelper.distinct_intervals(timestamps)
        if steps > 1:
            logging.warning(f'{path} has an irregular sampling interval ({steps} distinct steps)')
    logging.info(f'Loaded {frame.name}: {frame.channels} channels x {frame.length} steps')
    return frame

def save_csv(frame: SeriesFrame, path: str, start: Optional[datetime] = None):
    """Write a frame in the common benchmark layout: hourly date column then channels"""
    start = start or datetime(2016, 7, 1)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['date'] + list(frame.channel_names))
        for t in range(frame.length):
            stamp = frame.timestamps[t] if frame.timestamps is not None else start + timedelta(hours=t)
            writer.writerow([stamp.strftime('%Y-%m-%d %H:%M:%S')] + [repr(float(v)) for v in frame.values[:, t]])

def split_frame(frame: SeriesFrame, dataset_kind: str, L: Optional[int] = None,
                H: Optional[int] = None) -> Tuple[SeriesFrame, SeriesFrame, SeriesFrame]:
    """
    Chronological train/valid/test split (6:2:2 for ett, 7:1:2 otherwise)

    Raises:
        ValueError: If L and H are given and a split cannot hold one window
    """
    train_ratio, valid_ratio = SPLIT_RATIOS['ett' if dataset_kind == 'ett' else 'other']
    T = frame.length
    n_train = int(math.floor(T * train_ratio))
    n_valid = int(math.floor(T * valid_ratio))
    bounds = [(0, n_train), (n_train, n_train + n_valid), (n_train + n_valid, T)]
    splits = []
    for label, (start, stop) in zip(('train', 'valid', 'test'), bounds):
        if L is not None and H is not None and stop - start < L + H:
            raise ValueError(f'{label} split of "{frame.name}" has {stop - start} steps; a window needs L+H={L + H}')
        splits.append(frame.slice(start, stop, f'{frame.name}:{label}'))
    return tuple(splits)

def window_count(T: int, L: int, H: int, stride: int = 1) -> int:
    span = T - L - H
    return span // stride + 1 if span >= 0 else 0

def make_windows(frame: SeriesFrame, L: int, H: int, stride: int = 1) -> List[WindowPair]:
    if L < 1 or H < 1 or stride < 1:
        raise ValueError(f'L, H and stride must be positive (got {L}, {H}, {stride})')
    values = frame.values
    return [WindowPair(values[:, o:o + L], values[:, o + L:o + L + H], o)
            for o in range(0, window_count(frame.length, L, H, stride) * stride, stride)]

def stack_windows(windows: Sequence[WindowPair]) -> Tuple[np.ndarray, np.ndarray]:
    """Batch arrays (B x C x L, B x C x H)"""
    if not windows:
        raise ValueError('No windows to stack')
    return np.stack([w.x for w in windows]), np.stack([w.y for w in windows])

def instance_normalize(x: np.ndarray, eps: float = NORM_EPS) -> Tuple[np.ndarray, NormStats]:
    """Per-channel standardization over the last axis of a (..., C, L) array"""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1)
    std = np.sqrt(x.var(axis=-1) + eps)
    return (x - mean[..., None]) / std[..., None], NormStats(mean, std, eps)

def instance_denormalize(y_norm: np.ndarray, stats: NormStats) -> np.ndarray:
    y_norm = np.asarray(y_norm, dtype=np.float64)
    if y_norm.shape[:-1] != stats.mean.shape:
        raise ValueError(f'Channel layout {y_norm.shape[:-1]} does not match normalization stats {stats.mean.shape}')
    return stats.std[..., None] * y_norm + stats.mean[..., None]

def patchify(x_norm: np.ndarray, L_p: int) -> PatchSet:
    """
    Split the last axis into N = ceil(L / L_p) patches

    The last patch is right-padded by repeating the final value of its channel.
    """
    if L_p < 2 or L_p % 2 != 0:
        raise ValueError(f'Patch length must be even and at least 2, got {L_p}')
    x_norm = np.asarray(x_norm, dtype=np.float64)
    L = x_norm.shape[-1]
    N = -(-L // L_p)
    pad = N * L_p - L
    if pad:
        tail = np.repeat(x_norm[..., -1:], pad, axis=-1)
        x_norm = np.concatenate([x_norm, tail], axis=-1)
    return PatchSet(x_norm.reshape(x_norm.shape[:-1] + (N, L_p)), L_p, N, L)

def unpatchify(patch_set: PatchSet) -> np.ndarray:
    flat = patch_set.patches.reshape(patch_set.patches.shape[:-2] + (-1,))
    return flat[..., :patch_set.length]

def downsample(patch: np.ndarray) -> np.ndarray:
    """Mean of adjacent pairs along the last axis"""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape[-1] % 2 != 0:
        raise ValueError(f'Cannot downsample odd length {patch.shape[-1]}')
    return patch.reshape(patch.shape[:-1] + (patch.shape[-1] // 2, 2)).mean(axis=-1)

def upsample(vec: np.ndarray) -> np.ndarray:
    """Repeat each value twice along the last axis"""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape[-1] == 0:
        raise ValueError('Cannot upsample an empty vector')
    return np.repeat(vec, 2, axis=-1)

@dataclass
class SynthSpec:
    channels: int = 3
    length: int = 3000
    motifs: int = 4
    noise: float = 0.1
    motif_len: int = 24
    motif_rate: float = 0.01
    periods: Tuple[float, float] = (24.0, 96.0)
    amplitudes: Tuple[float, float] = (1.0, 0.5)
    motif_amplitude: float = 1.0

    def __post_init__(self):
        if self.channels < 1 or self.length < 1:
            raise ValueError('channels and length must be positive')
        if self.motifs < 0 or self.noise < 0 or self.motif_rate < 0:
            raise ValueError('motifs, noise and motif_rate must be non-negative')
        if self.motifs > 0 and not 1 <= self.motif_len <= self.length:
            raise ValueError(f'motif_len must be in [1, {self.length}]')
        if any(p <= 0 for p in self.periods):
            raise ValueError('periods must be positive')

def synth_generate(spec: SynthSpec, seed: int) -> SeriesFrame:
    """
    Deterministic synthetic series: two sinusoids, recurring motifs, Gaussian noise

    Channel c uses phases 2*pi*c/C and pi*c/C. Motif occurrences never overlap
    within a channel and are recorded on the frame.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(spec.length, dtype=np.float64)
    C = spec.channels
    values = np.zeros((C, spec.length))
    for c in range(C):
        phases = (2 * math.pi * c / C, math.pi * c / C)
        for period, amplitude, phase in zip(spec.periods, spec.amplitudes, phases):
            if amplitude:
                values[c] += amplitude * np.sin(2 * math.pi * t / period + phase)

    placements = []
    if spec.motifs > 0:
        templates = rng.normal(0.0, spec.motif_amplitude, size=(spec.motifs, spec.motif_len))
        templates = np.cumsum(templates, axis=1) / math.sqrt(spec.motif_len)
        for c in range(C):
            pos = 0
            while pos + spec.motif_len <= spec.length:
                if rng.random() < spec.motif_rate:
                    motif_id = int(rng.integers(spec.motifs))
                    values[c, pos:pos + spec.motif_len] += templates[motif_id]
                    placements.append(MotifPlacement(c, pos, motif_id))
                    pos += spec.motif_len
                else:
                    pos += 1
    if spec.noise > 0:
        values += rng.normal(0.0, spec.noise, size=values.shape)
    names = tuple(f'ch{c}' for c in range(C))
    return SeriesFrame(values, names, f'synth-{seed}', None, tuple(placements))
