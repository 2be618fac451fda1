__version__ = "0.1.0"

from .config import ModelConfig, RunConfig, ScenarioConfig, TrainConfig, resolve
from .core import Tensor, backward, no_grad, precision
from .exceptions import (ConfigError, CorruptCheckpointError, DimensionError, GesmeError, IngestError,
                         NumericalError, UsageError)
from .metrics import evaluate, importance_report, mae, rmse, smape
from .model import GesmeNet, build, build_variant
from .train import fit

__all__ = [
    # Модель и варианты
    'GesmeNet',
    'build',
    'build_variant',

    # Обучение и оценка
    'fit',
    'evaluate',
    'importance_report',
    'mae',
    'rmse',
    'smape',

    # Конфигурация
    'ModelConfig',
    'RunConfig',
    'ScenarioConfig',
    'TrainConfig',
    'resolve',

    # Тензоры
    'Tensor',
    'backward',
    'no_grad',
    'precision',

    # Исключения
    'GesmeError',
    'ConfigError',
    'CorruptCheckpointError',
    'DimensionError',
    'IngestError',
    'NumericalError',
    'UsageError',
]
