#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Model checkpoints as a single .npz archive: every MLP array and the codebook,
plus a JSON metadata string with the dimensions, configuration and epochs.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Any, Dict

import numpy as np

from config.config import TrainConfig
from models.codebook import Codebook
from models.forecaster import DualPathModel, ModelDims
from models.nn_core import Activation, DenseLayer, MlpParams

FORMAT_NAME = 'recast-checkpoint'
FORMAT_VERSION = 1

@dataclass
class Checkpoint:
    model: DualPathModel
    codebook: Codebook
    config: TrainConfig
    epoch: int
    meta: Dict[str, Any]

def _layer_count(arrays: Dict[str, np.ndarray], prefix: str) -> int:
    return sum(1 for key in arrays if key.startswith(prefix) and key.endswith('.weights'))

def _load_mlp(arrays: Dict[str, np.ndarray], prefix: str, activation: Activation) -> MlpParams:
    layers = []
    for i in range(_layer_count(arrays, prefix)):
        layers.append(DenseLayer(arrays[f'{prefix}layers.{i}.weights'], arrays[f'{prefix}layers.{i}.bias']))
    if not layers:
        raise ValueError(f'No "{prefix}" layers in checkpoint')
    return MlpParams(layers, activation)

def save_checkpoint(path: str, model: DualPathModel, codebook: Codebook, config: TrainConfig, epoch: int) -> str:
    """
    Write the model, its codebook and the configuration to `path`

    Returns:
        The path actually written (numpy appends .npz when missing)
    """
    if not path.endswith('.npz'):
        path = f'{path}.npz'
    if os.path.dirname(path):
        os.makedirs(os.path.dirname(path), exist_ok=True)
    meta = {
        'format': FORMAT_NAME,
        'version': FORMAT_VERSION,
        'dims': asdict(model.dims),
        'activation': str(model.quant_mlp.activation),
        'use_residual': model.use_residual,
        'epoch': epoch,
        'codebook_epoch': codebook.epoch,
        'config': config.to_dict(),
        'config_hash': config.config_hash(),
    }
    arrays = {f'quant.{name}': value for name, value in model.quant_mlp.named_arrays().items()}
    arrays.update({f'res.{name}': value for name, value in model.res_mlp.named_arrays().items()})
    arrays['codebook'] = np.asarray(codebook.codewords)
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    logging.info(f'Saved checkpoint for epoch {epoch} to {path}')
    return path

def load_checkpoint(path: str) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint

    Raises:
        ValueError: If the file is missing, of another format, or internally inconsistent
    """
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
    except (OSError, ValueError) as e:
        raise ValueError(f'Error loading checkpoint "{path}": {e}')
    if 'meta' not in arrays or 'codebook' not in arrays:
        raise ValueError(f'"{path}" is not a checkpoint archive')
    meta = json.loads(str(arrays.pop('meta')))
    if meta.get('format') != FORMAT_NAME or meta.get('version') != FORMAT_VERSION:
        raise ValueError(f'"{path}" has unsupported checkpoint format {meta.get("format")} v{meta.get("version")}')

    activation = Activation(meta['activation'])
    dims = ModelDims(**meta['dims'])
    codebook = Codebook(arrays['codebook'], meta['codebook_epoch'])
    model = DualPathModel(_load_mlp(arrays, 'quant.', activation), _load_mlp(arrays, 'res.', activation),
                          dims, None, meta['use_residual']).with_codebook(codebook)
    config = TrainConfig.from_dict(meta['config'])
    if config.config_hash() != meta['config_hash']:
        raise ValueError(f'Configuration hash mismatch in "{path}"')
    return Checkpoint(model, codebook, config, meta['epoch'], meta)
