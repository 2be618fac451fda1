"""
Операции над тензорами с обратным режимом дифференцирования

Broadcasting не используется нигде, кроме двух явных операций: bias_add и scale_by
растягивают второй операнд по ведущим осям первого (форма второго операнда
должна совпадать с хвостом формы первого).
"""
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Tensor, as_tensor, make_output
from .exceptions import ConfigError, DimensionError


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: формы операндов должны совпадать", [a.shape, b.shape])


def _trailing(op: str, x: Tensor, w: Tensor):
    if w.ndim > x.ndim or x.shape[x.ndim - w.ndim:] != w.shape:
        raise DimensionError(f"{op}: форма второго операнда должна совпадать с хвостом формы первого",
                             [x.shape, w.shape])


def _sum_leading(array: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    return array.reshape((-1,) + tuple(shape)).sum(axis=0)


# Поэлементная арифметика

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return make_output("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return make_output("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Произведение Адамара (поэлементное)"""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("hadamard", a, b)
    a_data, b_data = a.data, b.data
    return make_output("hadamard", a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data))


def affine(x: Tensor, scale: float = 1.0, shift: float = 0.0) -> Tensor:
    """scale * x + shift"""
    x = as_tensor(x)
    return make_output("affine", x.data * scale + shift, (x,), lambda g: (g * scale,))


def absolute(x: Tensor) -> Tensor:
    """|x|; субградиент в нуле равен 0"""
    x = as_tensor(x)
    sign = np.sign(x.data)
    return make_output("absolute", np.abs(x.data), (x,), lambda g: (g * sign,))


def square(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = x.data
    return make_output("square", data * data, (x,), lambda g: (2.0 * g * data,))


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """x + b, где b растягивается по ведущим осям x"""
    x, b = as_tensor(x), as_tensor(b)
    _trailing("bias_add", x, b)
    shape = b.shape
    return make_output("bias_add", x.data + b.data, (x, b), lambda g: (g, _sum_leading(g, shape)))


def scale_by(x: Tensor, w: Tensor) -> Tensor:
    """x ⊙ w, где w растягивается по ведущим осям x (например, по оси батча)"""
    x, w = as_tensor(x), as_tensor(w)
    _trailing("scale_by", x, w)
    x_data, w_data, shape = x.data, w.data, w.shape
    return make_output("scale_by", x_data * w_data, (x, w),
                       lambda g: (g * w_data, _sum_leading(g * x_data, shape)))


# Матричное произведение и свертка

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Произведение a[..×p×q] · b[..×q×r]

    Ведущие оси должны совпадать; матрица b ранга 2 разделяется всеми ведущими индексами a.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul: внутренние размерности не совпадают", [a.shape, b.shape])
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError("matmul: ведущие оси не совпадают", [a.shape, b.shape])

    a_data, b_data = a.data, b.data
    shared = b.ndim == 2 and a.ndim > 2

    def backward_fn(g):
        grad_a = g @ np.swapaxes(b_data, -1, -2)
        grad_b = np.swapaxes(a_data, -1, -2) @ g
        if shared:
            grad_b = _sum_leading(grad_b, b_data.shape)
        return grad_a, grad_b

    return make_output("matmul", a_data @ b_data, (a, b), backward_fn)


def conv1d(x: Tensor, filters: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Одномерная свертка по оси зон с нулевым дополнением "same"

    output[z, k] = Σ_{f,l} x[z + l − ⌊L/2⌋, f] · filters[k, f, l] + bias[k]

    :param x: Вход [..., N, F]
    :param filters: Фильтры [K, F, L], L нечетное
    :param bias: Смещение [K] (необязательно)
    :return: Выход [..., N, K]
    """
    x, filters = as_tensor(x), as_tensor(filters)
    if x.ndim < 2 or filters.ndim != 3 or x.shape[-1] != filters.shape[1]:
        raise DimensionError("conv1d: число каналов входа и фильтров не совпадает", [x.shape, filters.shape])

    n_zones, n_features = x.shape[-2:]
    n_filters, _, length = filters.shape
    if length % 2 == 0:
        raise ConfigError(f"conv1d: длина фильтра должна быть нечетной, получено {length}", "filter_len")
    if length > 2 * n_zones - 1:
        raise ConfigError(f"conv1d: длина фильтра {length} больше 2N−1 = {2 * n_zones - 1}", "filter_len")

    lead = x.shape[:-2]
    pad = length // 2
    flat = x.data.reshape(-1, n_zones, n_features)
    padded = np.pad(flat, ((0, 0), (pad, pad), (0, 0)))
    windows = sliding_window_view(padded, length, axis=1)  # [B, N, F, L]
    w_data = filters.data

    out = np.tensordot(windows, w_data, axes=([2, 3], [1, 2]))  # [B, N, K]
    parents = [x, filters]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (n_filters,):
            raise DimensionError("conv1d: смещение должно иметь форму [K]", [bias.shape, (n_filters,)])
        out = out + bias.data
        parents.append(bias)

    def backward_fn(g):
        g_flat = g.reshape(-1, n_zones, n_filters)
        grad_w = np.tensordot(g_flat, windows, axes=([0, 1], [0, 1]))
        grad_windows = np.tensordot(g_flat, w_data, axes=([2], [0]))  # [B, N, F, L]
        grad_padded = np.zeros_like(padded)
        for tap in range(length):
            grad_padded[:, tap:tap + n_zones, :] += grad_windows[..., tap]
        grad_x = grad_padded[:, pad:pad + n_zones, :].reshape(x.shape)
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g_flat.sum(axis=(0, 1)))
        return grads

    return make_output("conv1d", out.reshape(lead + (n_zones, n_filters)), parents, backward_fn)


# Активации и softmax

def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return make_output("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return make_output("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = (x.data > 0).astype(x.data.dtype)
    return make_output("relu", x.data * mask, (x,), lambda g: (g * mask,))


def linear(x: Tensor) -> Tensor:
    """Тождественная активация"""
    return as_tensor(x)


ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "linear": linear,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
}


def activation(name: str) -> Callable[[Tensor], Tensor]:
    """Функция активации по имени"""
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"Неизвестная активация '{name}', допустимы: {', '.join(ACTIVATIONS)}", "activation")


def softmax(x: Tensor) -> Tensor:
    """Softmax по последней оси с вычитанием максимума"""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError("softmax: последняя ось должна быть непустой", [x.shape])
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    s = exp / exp.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_output("softmax", s, (x,), backward_fn)


# Структурные операции

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """f_Concatenate: соединение по оси; остальные оси должны совпадать"""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: пустой список тензоров")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors:
        if t.ndim != ndim or t.shape[:axis] + t.shape[axis + 1:] != tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]:
            raise DimensionError(f"concat: формы не совпадают вне оси {axis}", [t.shape for t in tensors])

    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_output("concat", out, tensors, lambda g: np.split(g, sizes, axis=axis))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Сложение тензоров одинаковой формы вдоль новой оси"""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("stack: пустой список тензоров")
    for t in tensors:
        if t.shape != tensors[0].shape:
            raise DimensionError("stack: формы должны совпадать", [t.shape for t in tensors])
    axis = axis % (tensors[0].ndim + 1)
    out = np.stack([t.data for t in tensors], axis=axis)
    count = len(tensors)
    return make_output("stack", out, tensors,
                       lambda g: [np.take(g, i, axis=axis) for i in range(count)])


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    """f_Permute: перестановка осей (axes отсчитываются от 0)"""
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: {axes} не является перестановкой осей", [x.shape])
    inverse = tuple(np.argsort(axes))
    return make_output("permute", np.transpose(x.data, axes), (x,),
                       lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    known = [s for s in shape if s != -1]
    if shape.count(-1) > 1 or (shape.count(-1) == 0 and int(np.prod(shape)) != x.size) \
            or (shape.count(-1) == 1 and (not known or x.size % int(np.prod(known)) != 0)):
        raise DimensionError("reshape: число элементов не совпадает", [x.shape, shape])
    original = x.shape
    return make_output("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def reshape_steps(x: Tensor, steps: int) -> Tensor:
    """
    f_Reshape(J; B): [..., N, A] -> [..., N, B, A/B]

    :raises DimensionError: Если B не делит A
    """
    x = as_tensor(x)
    width = x.shape[-1]
    if steps < 1 or width % steps != 0:
        raise DimensionError(f"reshape_steps: {steps} шагов не делят ширину {width}", [x.shape])
    return reshape(x, x.shape[:-1] + (steps, width // steps))


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_output("reduce_sum", np.asarray(out), (x,), backward_fn)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return affine(reduce_sum(x, axis=axis, keepdims=keepdims), scale=1.0 / count)


def select(x: Tensor, axis: int, index: int) -> Tensor:
    """Срез одного индекса по оси (ось удаляется)"""
    x = as_tensor(x)
    axis = axis % x.ndim
    if not -x.shape[axis] <= index < x.shape[axis]:
        raise DimensionError(f"select: индекс {index} вне оси {axis}", [x.shape])
    shape = x.shape

    def backward_fn(g):
        grad = np.zeros(shape, dtype=g.dtype)
        slicer = [slice(None)] * len(shape)
        slicer[axis] = index
        grad[tuple(slicer)] = g
        return (grad,)

    return make_output("select", np.take(x.data, index, axis=axis), (x,), backward_fn)


def repeat(x: Tensor, count: int, axis: int) -> Tensor:
    """Повтор вдоль новой оси (f_RZ внутри сети: [..., M] -> [..., N, M])"""
    x = as_tensor(x)
    axis = axis % (x.ndim + 1)
    out = np.repeat(np.expand_dims(x.data, axis), count, axis=axis)
    return make_output("repeat", out, (x,), lambda g: (g.sum(axis=axis),))


def mix(probs: Tensor, stacked: Tensor) -> Tensor:
    """
    Взвешенная сумма выходов экспертов: out[b] = Σ_i probs[b, i] · stacked[b, i]

    :param probs: Вероятности гейта [B, m]
    :param stacked: Выходы экспертов [B, m, ...]
    :return: Тензор [B, ...]
    """
    probs, stacked = as_tensor(probs), as_tensor(stacked)
    if probs.ndim != 2 or stacked.shape[:2] != probs.shape:
        raise DimensionError("mix: ожидаются probs [B, m] и выходы экспертов [B, m, ...]",
                             [probs.shape, stacked.shape])
    expand = probs.shape + (1,) * (stacked.ndim - 2)
    p = probs.data.reshape(expand)
    s = stacked.data
    tail_axes = tuple(range(2, stacked.ndim))

    def backward_fn(g):
        g_exp = np.expand_dims(g, 1)
        grad_p = (g_exp * s).sum(axis=tail_axes) if tail_axes else g_exp * s
        return grad_p, p * g_exp

    return make_output("mix", (p * s).sum(axis=1), (probs, stacked), backward_fn)
