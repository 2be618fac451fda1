import logging
import threading
from contextlib import contextmanager
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import NumericalError, UsageError

logger = logging.getLogger(__name__)

# Состояние ленты и рабочей точности хранится отдельно для каждого потока
_state = threading.local()


def _get_state():
    if not hasattr(_state, "dtype"):
        _state.dtype = np.float32
        _state.tapes = []
        _state.default_tape = None
        _state.grad_enabled = True
    return _state


def get_dtype():
    """Текущая рабочая точность (по умолчанию float32)"""
    return _get_state().dtype


@contextmanager
def precision(dtype):
    """
    Временная смена рабочей точности

    :param dtype: np.float32 или np.float64
    """
    state = _get_state()
    previous = state.dtype
    state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        state.dtype = previous


@contextmanager
def no_grad():
    """Прямой проход без записи операций на ленту"""
    state = _get_state()
    previous = state.grad_enabled
    state.grad_enabled = False
    try:
        yield
    finally:
        state.grad_enabled = previous


class Tensor:
    """Плотный n-мерный тензор с необязательным буфером градиента"""

    __slots__ = ("data", "grad", "requires_grad", "name", "_tape", "_index")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        """
        :param data: Значения (любой объект, приводимый к np.ndarray)
        :param requires_grad: Накапливать ли градиент
        :param name: Имя (для параметров модели и диагностики)
        :param dtype: Тип значений; по умолчанию рабочая точность
        """
        array = np.array(data, dtype=dtype or get_dtype(), copy=True)
        if array.ndim == 0:
            array = array.reshape(())
        if not np.all(np.isfinite(array)):
            raise NumericalError("Тензор содержит NaN/Inf", name)

        self.data = np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._tape = None
        self._index = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        tensor = cls.__new__(cls)
        tensor.data = np.ascontiguousarray(array)
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.name = None
        tensor._tape = None
        tensor._index = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Копия значений"""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() требует тензор из одного элемента, форма {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        """Обнулить накопленный градиент"""
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    def accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy(), False)

    def backward(self):
        backward(self)

    # Короткие записи для строгих (без broadcasting) операций
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __mul__(self, other):
        from .ops import hadamard, affine
        if isinstance(other, (int, float)):
            return affine(self, scale=float(other))
        return hadamard(self, other)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)

    def __neg__(self):
        from .ops import affine
        return affine(self, scale=-1.0)

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


class Node:
    """Запись одной операции на ленте"""

    __slots__ = ("op", "output", "parents", "backward_fn")

    def __init__(self, op: str, output: Tensor, parents: Sequence[Tensor],
                 backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.op = op
        self.output = output
        self.parents = tuple(parents)
        self.backward_fn = backward_fn


class Tape:
    """
    Лента обратного режима дифференцирования

    Узлы только добавляются; родители узла всегда записаны раньше него,
    поэтому обратный проход по убыванию индексов посещает каждый узел ровно один раз.
    """

    def __init__(self, logger: Optional[logging.Logger] = None):
        self.nodes: List[Node] = []
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _get_state().tapes.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        tapes = _get_state().tapes
        if tapes and tapes[-1] is self:
            tapes.pop()
        return False

    def record(self, op: str, output: Tensor, parents: Sequence[Tensor],
               backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> int:
        index = len(self.nodes)
        self.nodes.append(Node(op, output, parents, backward_fn))
        output._tape = self
        output._index = index
        return index

    def backward(self, loss: Tensor):
        """
        Обратный проход от скалярной функции потерь

        :param loss: Скалярный тензор, записанный на этой ленте
        """
        pending = {loss._index: np.ones_like(loss.data)}
        visited = 0

        for index in range(loss._index, -1, -1):
            grad = pending.pop(index, None)
            if grad is None:
                continue

            node = self.nodes[index]
            node.output.accumulate(grad)
            visited += 1

            parent_grads = node.backward_fn(grad)
            for parent, parent_grad in zip(node.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(parent_grad)):
                    raise NumericalError("NaN/Inf в градиенте", f"{node.op}#{index}")

                if parent._tape is self and parent._index is not None:
                    if parent._index in pending:
                        pending[parent._index] = pending[parent._index] + parent_grad
                    else:
                        pending[parent._index] = parent_grad
                else:
                    # Лист графа: параметр или вход
                    parent.accumulate(parent_grad)

        self.logger.debug(f"Обратный проход: посещено {visited} из {loss._index + 1} узлов")


def active_tape() -> Optional[Tape]:
    """Лента, на которую записываются операции, или None внутри no_grad()"""
    state = _get_state()
    if not state.grad_enabled:
        return None
    if state.tapes:
        return state.tapes[-1]
    if state.default_tape is None:
        state.default_tape = Tape()
    return state.default_tape


def reset_default_tape():
    """Сбросить ленту по умолчанию текущего потока"""
    _get_state().default_tape = None


def make_output(op: str, array: np.ndarray, parents: Sequence[Tensor],
                backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """
    Создает результат операции и записывает его на ленту

    :param op: Имя операции (для диагностики)
    :param array: Вычисленные значения
    :param parents: Входные тензоры
    :param backward_fn: Функция grad -> градиенты по каждому входу
    :return: Новый тензор
    """
    if not np.all(np.isfinite(array)):
        raise NumericalError("Операция вернула NaN/Inf", op)

    requires_grad = any(p.requires_grad for p in parents)
    output = Tensor._wrap(array.astype(get_dtype(), copy=False), requires_grad)

    if requires_grad:
        tape = active_tape()
        if tape is not None:
            tape.record(op, output, parents, backward_fn)
        else:
            output.requires_grad = False
    return output


def as_tensor(value: Any) -> Tensor:
    """Приведение к Tensor без отслеживания градиента"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def backward(loss: Tensor):
    """
    Вычисляет dLoss/dTensor для всех тензоров с requires_grad, достижимых из loss

    Повторные вызовы накапливают градиенты, пока они не обнулены. Лента по умолчанию
    после прохода сбрасывается.

    :param loss: Скалярный тензор на живой ленте
    :raises UsageError: Если loss не скаляр или не записан на ленте
    """
    if loss.size != 1:
        raise UsageError(f"backward вызывается только от скаляра, получена форма {loss.shape}")
    if not loss.requires_grad:
        return
    if loss._tape is None or loss._index is None:
        raise UsageError("Тензор не записан на ленте (создан внутри no_grad?)")
    tape = loss._tape
    tape.backward(loss)
    if tape is _get_state().default_tape:
        # узлы вне `with Tape()` не переживают обратный проход
        reset_default_tape()
