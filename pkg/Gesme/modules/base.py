import logging
import zlib
from typing import Dict, Iterator, List, Tuple

import numpy as np

from ..core import Tensor
from ..exceptions import ConfigError, DimensionError

# Группы параметров для регуляризации: W^(FI) - слои взвешивания признаков, W^(A) - все остальные
GROUP_WEIGHTING = "FI"
GROUP_ARCHITECTURE = "A"


def rng_for(seed: int, path: str) -> np.random.Generator:
    """
    Генератор, однозначно определяемый seed и путем модуля

    Одинаковые пути в разных вариантах модели получают одинаковую инициализацию.
    """
    return np.random.default_rng([int(seed), zlib.crc32(path.encode("utf-8"))])


def uniform_init(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """Равномерная инициализация U(−a, a), a = sqrt(6 / (fan_in + fan_out))"""
    limit = np.sqrt(6.0 / max(1, fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class BaseModule:
    """Базовый класс для всех слоев и подсетей"""

    def __init__(self, path: str = "", seed: int = 0, logger=None):
        self.path = path
        self.seed = seed
        self.logger = logger or logging.getLogger(self.__class__.__name__)
        self._params: Dict[str, Tuple[Tensor, str]] = {}
        self._children: Dict[str, "BaseModule"] = {}

    def child_path(self, name: str) -> str:
        return f"{self.path}.{name}" if self.path else name

    def rng(self) -> np.random.Generator:
        return rng_for(self.seed, self.path)

    def register_parameter(self, name: str, value: np.ndarray, group: str = GROUP_ARCHITECTURE) -> Tensor:
        """
        Регистрирует обучаемый параметр

        :param name: Локальное имя параметра
        :param value: Начальное значение
        :param group: Группа регуляризации (FI или A)
        :return: Созданный тензор
        """
        tensor = Tensor(value, requires_grad=True, name=self.child_path(name))
        self._params[name] = (tensor, group)
        return tensor

    def add_module(self, name: str, module: "BaseModule") -> "BaseModule":
        self._children[name] = module
        return module

    def named_parameters(self) -> Iterator[Tuple[str, Tensor, str]]:
        """Все параметры модуля и подмодулей: (полное имя, тензор, группа)"""
        for name, (tensor, group) in self._params.items():
            yield self.child_path(name), tensor, group
        for child in self._children.values():
            yield from child.named_parameters()

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor, _ in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.parameters()))

    def zero_grad(self):
        for tensor in self.parameters():
            tensor.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Копия значений всех параметров по полным именам"""
        return {name: tensor.data.copy() for name, tensor, _ in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True):
        """
        Загружает значения параметров

        :param state: Словарь имя -> массив
        :param strict: Требовать совпадения набора имен
        """
        own = {name: tensor for name, tensor, _ in self.named_parameters()}
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise ConfigError(f"Набор параметров не совпадает: нет {missing[:5]}, лишние {unexpected[:5]}")

        for name, value in state.items():
            if name not in own:
                continue
            tensor = own[name]
            value = np.asarray(value)
            if value.shape != tensor.shape:
                raise DimensionError(f"Параметр {name}: неверная форма", [tensor.shape, value.shape])
            tensor.data = np.ascontiguousarray(value.astype(tensor.data.dtype))
            tensor.zero_grad()
        self.logger.debug(f"Загружено {len(state)} параметров в {self.path or self.__class__.__name__}")
