from typing import Optional, Sequence

import numpy as np

from .. import ops
from ..core import Tensor, as_tensor
from ..exceptions import ConfigError, DimensionError, UsageError
from .base import BaseModule, GROUP_WEIGHTING, uniform_init


def project(x: Tensor, weight: Tensor) -> Tensor:
    """x · Wᵀ для входа [..., in] и весов [out, in]"""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"{weight.name}: ширина входа не совпадает с весами", [x.shape, weight.shape])
    if x.ndim == 1:
        out = ops.matmul(ops.reshape(x, (1, x.shape[0])), ops.permute(weight, (1, 0)))
        return ops.reshape(out, (weight.shape[0],))
    return ops.matmul(x, ops.permute(weight, (1, 0)))


class FeatureWeightingLayer(BaseModule):
    """
    Слой взвешивания признаков: f_Weighting(X) = X ⊙ σ(W^(FI))

    Форма W^(FI) равна форме одного образца входного блока любого ранга,
    по оси батча веса растягиваются.
    """

    def __init__(self, shape: Sequence[int], activation: str = "linear", gamma: float = 0.5,
                 seed: int = 0, path: str = "weighting", logger=None):
        """
        :param shape: Форма одного образца входного блока
        :param activation: Активация σ (linear, sigmoid, relu, tanh)
        :param gamma: Полуширина равномерной инициализации U(−γ, +γ)
        :param seed: Зерно инициализации
        :param path: Имя модуля в модели
        :param logger: Логгер (опционально)
        """
        super().__init__(path, seed, logger)
        if not gamma > 0:
            raise ConfigError(f"gamma должна быть положительной, получено {gamma}", "weighting_gamma")

        self.shape = tuple(int(s) for s in shape)
        self.activation = activation
        self.gamma = float(gamma)
        self._act = ops.activation(activation)
        self.W_FI = self.register_parameter(
            "W_FI", self.rng().uniform(-self.gamma, self.gamma, size=self.shape), group=GROUP_WEIGHTING)

    @classmethod
    def initialize(cls, shape: Sequence[int], gamma: float, seed: int,
                   activation: str = "linear", path: str = "weighting") -> "FeatureWeightingLayer":
        """Детерминированная инициализация W^(FI) ~ U(−γ, +γ) по seed"""
        return cls(shape, activation=activation, gamma=gamma, seed=seed, path=path)

    def forward(self, X: Tensor) -> Tensor:
        X = as_tensor(X)
        if X.shape != self.shape and X.shape[1:] != self.shape:
            raise DimensionError(f"{self.path}: форма входа не совпадает с W^(FI)", [X.shape, self.shape])
        return ops.scale_by(X, self._act(self.W_FI))

    __call__ = forward

    def weights(self) -> np.ndarray:
        """Текущие значения σ(W^(FI))"""
        return self._act(Tensor(self.W_FI.data)).numpy()


class DenseLayer(BaseModule):
    """Полносвязный слой activation(W·x + b)"""

    def __init__(self, n_in: int, n_out: int, activation: str = "linear",
                 seed: int = 0, path: str = "dense", logger=None):
        super().__init__(path, seed, logger)
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.activation = activation
        self._act = ops.activation(activation)

        rng = self.rng()
        self.W = self.register_parameter("W", uniform_init(rng, (self.n_out, self.n_in), self.n_in, self.n_out))
        self.b = self.register_parameter("b", np.zeros(self.n_out))

    def forward(self, x: Tensor) -> Tensor:
        return self._act(ops.bias_add(project(x, self.W), self.b))

    __call__ = forward


class GruCell(BaseModule):
    """
    Ячейка GRU

    z = σ(U_z x + W_z h + b_z)
    r = σ(U_r x + W_r h + b_r)
    h̃ = tanh(U_h x + r ⊙ (W_h h) + b_h)
    h_t = z ⊙ h̃ + (1 − z) ⊙ h_{t−1}
    """

    def __init__(self, n_features: int, hidden: int, seed: int = 0, path: str = "gru", logger=None):
        super().__init__(path, seed, logger)
        if hidden < 1:
            raise ConfigError(f"Число скрытых нейронов GRU должно быть ≥ 1, получено {hidden}", "gru_hidden")

        self.n_features = int(n_features)
        self.hidden = int(hidden)
        rng = self.rng()
        F, H = self.n_features, self.hidden

        for gate in ("z", "r", "h"):
            setattr(self, f"U_{gate}", self.register_parameter(f"U_{gate}", uniform_init(rng, (H, F), F, H)))
            setattr(self, f"W_{gate}", self.register_parameter(f"W_{gate}", uniform_init(rng, (H, H), H, H)))
            setattr(self, f"b_{gate}", self.register_parameter(f"b_{gate}", np.zeros(H)))

    def step(self, x_t: Tensor, h_prev: Tensor) -> Tensor:
        x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
        if x_t.shape[-1] != self.n_features or h_prev.shape[-1] != self.hidden \
                or x_t.shape[:-1] != h_prev.shape[:-1]:
            raise DimensionError(f"{self.path}: размерности входа и состояния не совпадают с ячейкой",
                                 [x_t.shape, h_prev.shape, (self.n_features, self.hidden)])

        z = ops.sigmoid(ops.bias_add(ops.add(project(x_t, self.U_z), project(h_prev, self.W_z)), self.b_z))
        r = ops.sigmoid(ops.bias_add(ops.add(project(x_t, self.U_r), project(h_prev, self.W_r)), self.b_r))
        h_tilde = ops.tanh(ops.bias_add(
            ops.add(project(x_t, self.U_h), ops.hadamard(r, project(h_prev, self.W_h))), self.b_h))

        return ops.add(ops.hadamard(z, h_tilde), ops.hadamard(ops.affine(z, scale=-1.0, shift=1.0), h_prev))

    def sequence(self, xs: Tensor, h0: Optional[Tensor] = None, return_sequences: bool = False) -> Tensor:
        """
        Проход GRU по B шагам в хронологическом порядке

        :param xs: Вход [..., B, F]
        :param h0: Начальное состояние [..., H]; по умолчанию нули
        :param return_sequences: Вернуть состояния всех шагов [..., B, H] вместо последнего [..., H]
        """
        xs = as_tensor(xs)
        if xs.ndim < 2:
            raise DimensionError(f"{self.path}: ожидается вход [..., B, F]", [xs.shape])
        steps = xs.shape[-2]
        if steps == 0:
            raise UsageError(f"{self.path}: последовательность нулевой длины")

        h = h0 if h0 is not None else Tensor(np.zeros(xs.shape[:-2] + (self.hidden,)))
        states = []
        for t in range(steps):
            h = self.step(ops.select(xs, -2, t), h)
            states.append(h)
        return ops.stack(states, axis=-2) if return_sequences else h

    __call__ = sequence


def zone_distributed_gru(cell: GruCell, X: Tensor, return_sequences: bool = False) -> Tensor:
    """
    f_ZoneDist(GRU): одна и та же GRU независимо по каждой зоне с общими параметрами

    :param cell: Ячейка GRU
    :param X: Вход [..., N, B, F]
    :return: [..., N, H] (или [..., N, B, H] при return_sequences)
    """
    X = as_tensor(X)
    if X.ndim < 3 or X.shape[-1] != cell.n_features:
        raise DimensionError(f"{cell.path}: ожидается вход [..., N, B, F]", [X.shape, (cell.n_features,)])
    return cell.sequence(X, return_sequences=return_sequences)


class ConvRnnCell(BaseModule):
    """
    Ячейка сверточной рекуррентной сети

    H_t = act(U^(c) ∗ X_t + W^(c) ∗ H_{t−1} + b^(c)), по умолчанию act = ReLU
    """

    def __init__(self, n_features: int, filters: int, filter_len: int, activation: str = "relu",
                 seed: int = 0, path: str = "convrnn", logger=None):
        super().__init__(path, seed, logger)
        if filters < 1:
            raise ConfigError(f"Число фильтров должно быть ≥ 1, получено {filters}", "convrnn_filters")
        if filter_len % 2 == 0:
            raise ConfigError(f"Длина фильтра должна быть нечетной, получено {filter_len}", "convrnn_filter_len")

        self.n_features = int(n_features)
        self.filters = int(filters)
        self.filter_len = int(filter_len)
        self.activation = activation
        self._act = ops.activation(activation)

        rng = self.rng()
        F, K, L = self.n_features, self.filters, self.filter_len
        self.U_c = self.register_parameter("U_c", uniform_init(rng, (K, F, L), F * L, K * L))
        self.W_c = self.register_parameter("W_c", uniform_init(rng, (K, K, L), K * L, K * L))
        self.b_c = self.register_parameter("b_c", np.zeros(K))

    def step(self, X_t: Tensor, H_prev: Tensor) -> Tensor:
        X_t, H_prev = as_tensor(X_t), as_tensor(H_prev)
        if H_prev.shape != X_t.shape[:-1] + (self.filters,):
            raise DimensionError(f"{self.path}: форма состояния не совпадает со входом",
                                 [X_t.shape, H_prev.shape])
        return self._act(ops.add(ops.conv1d(X_t, self.U_c, self.b_c), ops.conv1d(H_prev, self.W_c)))

    def sequence(self, Xs: Tensor) -> Tensor:
        """
        f_ConvRNN: [..., N, F, B] -> [..., N, K, B], H_0 = 0

        Состояние каждого шага складывается по последней оси.
        """
        Xs = as_tensor(Xs)
        if Xs.ndim < 3 or Xs.shape[-2] != self.n_features:
            raise DimensionError(f"{self.path}: ожидается вход [..., N, F, B]", [Xs.shape, (self.n_features,)])
        steps = Xs.shape[-1]
        if steps == 0:
            raise UsageError(f"{self.path}: последовательность нулевой длины")

        H = Tensor(np.zeros(Xs.shape[:-2] + (self.filters,)))
        states = []
        for t in range(steps):
            H = self.step(ops.select(Xs, -1, t), H)
            states.append(H)
        return ops.stack(states, axis=-1)

    __call__ = sequence
