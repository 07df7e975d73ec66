import pytest

from config.config import CliConfig, TrainConfig
from config.defaults import default_values

def write_yaml(tmp_path, text):
    path = tmp_path / 'config.yml'
    path.write_text(text)
    return str(path)

def test_defaults():
    config = TrainConfig()
    assert (config.L, config.H, config.L_p, config.K) == (96, 96, 16, 8)
    assert config.lr == 3e-4 and config.sample_ratio == 0.5 and config.gamma == 1.0
    assert set(config.to_dict()) == set(default_values)

def test_flags_override_file_override_defaults(tmp_path):
    path = write_yaml(tmp_path, 'K: 16\ngamma: 0.5\nepochs: 4\n')
    config = TrainConfig.resolve(path, {'K': 32, 'epochs': None, 'ablations': None})
    assert config.K == 32
    assert config.gamma == 0.5
    assert config.epochs == 4
    assert config.L == 96

def test_empty_file_gives_defaults(tmp_path):
    assert TrainConfig.resolve(write_yaml(tmp_path, '')) == TrainConfig()

def test_unknown_file_key(tmp_path):
    with pytest.raises(ValueError, match='codebook_size'):
        TrainConfig.resolve(write_yaml(tmp_path, 'codebook_size: 8\n'))

def test_nested_file_rejected(tmp_path):
    with pytest.raises(ValueError, match='nested'):
        TrainConfig.resolve(write_yaml(tmp_path, 'K:\n  value: 8\n'))

def test_missing_file(tmp_path):
    with pytest.raises(ValueError):
        TrainConfig.resolve(str(tmp_path / 'absent.yml'))

def test_values_are_coerced(tmp_path):
    config = TrainConfig.resolve(write_yaml(tmp_path, 'lr: "1e-3"\nK: 12.0\nsample_train_windows: "yes"\n'),
                                 {'ablations': 'no_dro, no_random'})
    assert config.lr == 1e-3 and config.K == 12 and config.sample_train_windows is True
    assert config.ablations == ['no_dro', 'no_random']

@pytest.mark.parametrize('overrides', [
    {'K': 'eight'},
    {'K': 8.5},
    {'L_p': 15},
    {'gamma': 0.0},
    {'sample_ratio': 1.5},
    {'ablations': ['no_everything']},
    {'weight_norm_mode': 'max_one'},
    {'epochs': 0},
    {'quant_loss': 'mixed'},
])
def test_invalid_values_rejected(overrides):
    with pytest.raises(ValueError):
        TrainConfig.resolve(None, overrides)

def test_ablations_are_canonical():
    a = TrainConfig(ablations=['no_scoring', 'no_dro', 'no_scoring'])
    assert a.ablations == ['no_dro', 'no_scoring']
    assert a.config_hash() == TrainConfig(ablations=['no_dro', 'no_scoring']).config_hash()
    assert a.has('no_dro') and not a.has('no_residual')

def test_hash_tracks_every_field():
    base = TrainConfig().config_hash()
    assert len(base) == 64
    assert TrainConfig().config_hash() == base
    assert TrainConfig(seed=1).config_hash() != base
    assert TrainConfig(gamma=2.0).config_hash() != base

def test_from_dict_round_trip():
    config = TrainConfig(K=4, ablations=['no_residual'], activation='gelu')
    assert TrainConfig.from_dict(config.to_dict()) == config

def test_cli_config_guards(tmp_path):
    with pytest.raises(ValueError):
        CliConfig('eval', TrainConfig(), split='holdout')
    with pytest.raises(ValueError):
        CliConfig('eval', TrainConfig(), horizons=[0])
    cli = CliConfig('train', TrainConfig(dataset_kind='ett'), output_dir=str(tmp_path / 'run'))
    assert cli.dataset_kind == 'ett'
    assert cli.output_path('a.txt') == str(tmp_path / 'run' / 'a.txt')
    assert (tmp_path / 'run').is_dir()
