import hashlib
import json
import os
import yaml
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Dict, List, Optional

from config.defaults import default_values, allowed_values

@dataclass
class TrainConfig:
    """Hyperparameters of a training run; every field is reachable from a flag or a config key"""
    L: int = default_values['L']
    H: int = default_values['H']
    L_p: int = default_values['L_p']
    K: int = default_values['K']
    gamma: float = default_values['gamma']
    w_sep: float = default_values['w_sep']
    lr: float = default_values['lr']
    sample_ratio: float = default_values['sample_ratio']
    eps: float = default_values['eps']
    epochs: int = default_values['epochs']
    patience: int = default_values['patience']
    batch_size: int = default_values['batch_size']
    seed: int = default_values['seed']
    lloyd_max_iters: int = default_values['lloyd_max_iters']
    ablations: List[str] = field(default_factory=list)
    weight_norm_mode: str = default_values['weight_norm_mode']
    dataset_kind: str = default_values['dataset_kind']
    stride: int = default_values['stride']
    quant_hidden: int = default_values['quant_hidden']
    res_hidden: int = default_values['res_hidden']
    activation: str = default_values['activation']
    sep_steps: int = default_values['sep_steps']
    aux_weight: float = default_values['aux_weight']
    sample_train_windows: bool = default_values['sample_train_windows']
    quant_loss: str = default_values['quant_loss']

    def __post_init__(self):
        # Keep the ablation set canonical so hashes and history records are stable
        self.ablations = sorted(set(self.ablations))
        for name in self.ablations:
            if name not in allowed_values['ablations']:
                raise ValueError(f'Unknown ablation "{name}" (allowed: {", ".join(allowed_values["ablations"])})')
        for key in ('weight_norm_mode', 'dataset_kind', 'activation', 'quant_loss'):
            if getattr(self, key) not in allowed_values[key]:
                raise ValueError(f'Value "{getattr(self, key)}" not in allowed values for field "{key}"')

        for key in ('L', 'H', 'K', 'epochs', 'patience', 'batch_size', 'lloyd_max_iters', 'stride', 'quant_hidden', 'res_hidden'):
            if getattr(self, key) < 1:
                raise ValueError(f'Field "{key}" must be a positive integer, got {getattr(self, key)}')
        if self.L_p < 2 or self.L_p % 2 != 0:
            raise ValueError(f'Patch length L_p must be even and at least 2, got {self.L_p}')
        if self.gamma <= 0:
            raise ValueError(f'gamma must be positive, got {self.gamma}')
        if not 0 < self.sample_ratio <= 1:
            raise ValueError(f'sample_ratio must be in (0, 1], got {self.sample_ratio}')
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError('lr and eps must be positive')
        if self.w_sep < 0 or self.aux_weight < 0 or self.sep_steps < 0:
            raise ValueError('w_sep, aux_weight and sep_steps must be non-negative')

    def has(self, ablation: str) -> bool:
        return ablation in self.ablations

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the configuration"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        """
        Build a configuration from a flat mapping, coercing values to the field types

        Raises:
            ValueError: If a key is unknown or a value cannot be converted
        """
        known = {f.name for f in fields(cls)}
        values = {}
        for key, value in data.items():
            if key not in known:
                raise ValueError(f'Unknown configuration key "{key}"')
            values[key] = _coerce(key, value)
        return cls(**values)

    @classmethod
    def from_file(cls, config_path: str) -> Dict[str, Any]:
        """
        Load the flat key/value mapping from a YAML configuration file

        Args:
            config_path: Path to the YAML configuration file

        Returns:
            The raw mapping, ready to be merged with flag overrides

        Raises:
            ValueError: If the file is unreadable, nested, or has unknown keys
        """
        try:
            with open(config_path, 'r') as f:
                config_data = yaml.safe_load(f)
        except (yaml.YAMLError, FileNotFoundError) as e:
            raise ValueError(f"Failed to load configuration file: {str(e)}")

        if config_data is None:
            return {}
        if not isinstance(config_data, dict):
            raise ValueError(f'Configuration file "{config_path}" must contain a mapping')
        known = {f.name for f in fields(cls)}
        for key, value in config_data.items():
            if key not in known:
                raise ValueError(f'Unknown configuration key "{key}" in {config_path}')
            if isinstance(value, dict):
                raise ValueError(f'Configuration key "{key}" must not be nested')
        return config_data

    @classmethod
    def resolve(cls, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> 'TrainConfig':
        """Merge defaults, config file and flag overrides; later sources win"""
        data = {}
        if config_path:
            data.update(cls.from_file(config_path))
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key == 'ablations' and not value:
                continue
            data[key] = value
        return cls.from_dict(data)

def _coerce(key: str, value: Any) -> Any:
    default = default_values[key]
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            if str(value).lower() in ('true', 'yes', '1'):
                return True
            if str(value).lower() in ('false', 'no', '0'):
                return False
            raise ValueError(f'not a boolean: {value}')
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f'not an integer: {value}')
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                return [v.strip() for v in value.split(',') if v.strip()]
            return list(value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise ValueError(f'Invalid value for configuration key "{key}": {e}')

@dataclass
class CliConfig:
    """Resolved command-line invocation"""
    command: str
    train: TrainConfig
    data_path: Optional[str] = None
    output_dir: str = 'output'
    checkpoint: Optional[str] = None
    horizons: List[int] = field(default_factory=list)
    split: str = 'test'
    config_path: Optional[str] = None

    def __post_init__(self):
        if self.split not in ('train', 'valid', 'test', 'all'):
            raise ValueError(f'Unknown split "{self.split}"')
        for horizon in self.horizons:
            if horizon < 1:
                raise ValueError(f'Horizon must be positive, got {horizon}')

    @property
    def dataset_kind(self) -> str:
        return self.train.dataset_kind

    def output_path(self, filename: str) -> str:
        os.makedirs(self.output_dir, exist_ok=True)
        return os.path.join(self.output_dir, filename)
