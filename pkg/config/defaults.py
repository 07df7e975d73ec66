#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Default values and allowed value sets for the training configuration.
Every field of TrainConfig has an entry in default_values; fields with a
closed set of values also have an entry in allowed_values.
"""

ABLATIONS = ('no_residual', 'no_updating', 'no_random', 'no_scoring', 'no_dro')

allowed_values = {
    'ablations': list(ABLATIONS),
    'weight_norm_mode': ['mean_one', 'sum_one'],
    'dataset_kind': ['ett', 'other'],
    'activation': ['relu', 'gelu'],
    'quant_loss': ['own', 'joint'],
}

# Training defaults; L, L_p, lr, epochs, patience and sample_ratio are the usual
# benchmark settings, gamma and w_sep are untuned choices.
default_values = {
    'L': 96,
    'H': 96,
    'L_p': 16,
    'K': 8,
    'gamma': 1.0,
    'w_sep': 0.1,
    'lr': 3e-4,
    'sample_ratio': 0.5,
    'eps': 1e-5,
    'epochs': 30,
    'patience': 5,
    'batch_size': 32,
    'seed': 2024,
    'lloyd_max_iters': 50,
    'ablations': [],
    'weight_norm_mode': 'mean_one',
    'dataset_kind': 'other',
    'stride': 1,
    'quant_hidden': 32,
    'res_hidden': 512,
    'activation': 'relu',
    'sep_steps': 1,
    'aux_weight': 0.0,
    'sample_train_windows': False,
    'quant_loss': 'own',
}

# Horizons reported by `eval` when none are requested explicitly and the
# checkpoint horizon allows them.
benchmark_horizons = [96, 192, 336, 720]
