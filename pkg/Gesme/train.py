import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from . import checkpoint, ops
from .config import TrainConfig
from .core import Tape, Tensor, as_tensor, backward, no_grad
from .data.samples import SampleBatch, SampleSet
from .exceptions import ConfigError, DimensionError, NumericalError
from .modules.base import GROUP_ARCHITECTURE, GROUP_WEIGHTING

LOSS_CSV = "loss.csv"


# Функции потерь

def task_loss(O: Tensor, A: Tensor) -> Tensor:
    """
    f_Loss^p(O_t, A_t) = ‖O_t − A_t‖²₂, среднее по батчу

    :param O: Прогноз [batch, N] (или [N] для одного образца)
    :param A: Истинные значения той же формы
    """
    O, A = as_tensor(O), as_tensor(A)
    if O.shape != A.shape:
        raise DimensionError("task_loss: формы прогноза и цели не совпадают", [O.shape, A.shape])
    squared = ops.square(ops.sub(O, A))
    if O.ndim <= 1:
        return ops.reduce_sum(squared)
    per_sample = ops.reduce_sum(squared, axis=tuple(range(1, O.ndim)))
    return ops.reduce_mean(per_sample)


def regularization(model, alpha: float, beta: float) -> Tensor:
    """α · Σ w² по W^(A) + β · Σ |w| по W^(FI)"""
    total = Tensor(0.0)
    for _, param, group in model.named_parameters():
        if group == GROUP_ARCHITECTURE and alpha:
            total = ops.add(total, ops.affine(ops.reduce_sum(ops.square(param)), scale=alpha))
        elif group == GROUP_WEIGHTING and beta:
            total = ops.add(total, ops.affine(ops.reduce_sum(ops.absolute(param)), scale=beta))
    return total


def task_losses(model, batch: SampleBatch, tasks: Optional[Sequence[str]] = None) -> Dict[str, Tensor]:
    """Потери каждой задачи на батче; цели всех задач обязательны"""
    return {task: task_loss(model.forward(batch, task), Tensor(batch.target_for(task)))
            for task in (tasks or model.tasks)}


def total_loss(model, batch: SampleBatch, alpha: float = 0.001, beta: float = 0.001) -> Tensor:
    """
    min f_Loss = Σ_p f_Loss^p + α‖W^(A)‖²₂ + β‖W^(FI)‖₁

    :raises UsageError: Если в батче нет целей какой-либо задачи
    """
    loss = Tensor(0.0)
    for value in task_losses(model, batch).values():
        loss = ops.add(loss, value)
    return ops.add(loss, regularization(model, alpha, beta))


# Оптимизатор

@dataclass
class AdamState:
    """Моменты Adam для каждого параметра"""
    names: List[str]
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, model) -> "AdamState":
        names, m, v = [], [], []
        for name, param, _ in model.named_parameters():
            names.append(name)
            m.append(np.zeros_like(param.data))
            v.append(np.zeros_like(param.data))
        return cls(names, m, v)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float):
    """
    Шаг Adam с коррекцией смещения, на месте

    :raises NumericalError: NaN/Inf в градиенте (с именем параметра)
    """
    for name, grad in zip(state.names, grads):
        if not np.all(np.isfinite(grad)):
            raise NumericalError("NaN/Inf в градиенте перед шагом Adam", name)

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for i, (param, grad) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad * grad
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        param.data = (param.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.data.dtype)


def clip_gradients(grads: List[np.ndarray], max_norm: float) -> float:
    """Масштабирует градиенты до общей нормы max_norm; возвращает норму до ограничения"""
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


# Отчет

@dataclass
class RunReport:
    """Итог запуска: эхо конфигурации, кривые потерь, метрики и пути к файлам"""
    variant: str
    tasks: List[str]
    config: Dict = field(default_factory=dict)
    epochs: int = 0
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stopped_early: bool = False
    history: List[Dict[str, float]] = field(default_factory=list)
    train_time_s: float = 0.0
    metrics: Dict[str, Dict[str, float]] = field(default_factory=dict)
    importance: Dict[str, str] = field(default_factory=dict)
    checkpoint_path: str = ""
    version: str = ""

    @property
    def train_loss(self) -> List[float]:
        return [row["train_loss"] for row in self.history]

    @property
    def val_loss(self) -> List[float]:
        return [row["val_loss"] for row in self.history]

    def to_dict(self) -> Dict:
        return asdict(self)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False, default=float), encoding="utf-8")
        return path


# Обучение

def validation_loss(model, sample_set: SampleSet, batch_size: int = 256) -> Dict[str, float]:
    """Нерегуляризованные потери задач на отрезке (среднее по образцам)"""
    sums = {task: 0.0 for task in model.tasks}
    with no_grad():
        for batch in sample_set.batches(batch_size):
            for task, value in task_losses(model, batch).items():
                sums[task] += value.item() * batch.size
    return {task: total / max(1, len(sample_set)) for task, total in sums.items()}


def fit(model, train_set: SampleSet, val_set: SampleSet, cfg: TrainConfig, out_dir=None,
        logger: Optional[logging.Logger] = None) -> RunReport:
    """
    Обучение с ранней остановкой

    После каждой эпохи считается валидационная сумма потерь задач; снимок лучших
    параметров восстанавливается в конце. При улучшении (если задан out_dir)
    записывается контрольная точка.

    :param model: GesmeNet
    :param train_set: Обучающие образцы
    :param val_set: Валидационные образцы (не пересекаются с обучающими)
    :param cfg: Параметры обучения
    :param out_dir: Каталог для loss.csv и контрольной точки
    :raises ConfigError: Пустой отрезок
    :raises NumericalError: NaN/Inf при обучении (последняя хорошая контрольная точка сохраняется)
    """
    log = logger or logging.getLogger("fit")
    cfg.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError(f"Пустой отрезок: train={len(train_set)}, val={len(val_set)}", "split")
    overlap = np.intersect1d(train_set.slots, val_set.slots)
    if overlap.size:
        raise ConfigError(f"Обучающий и валидационный отрезки пересекаются ({overlap.size} интервалов)", "split")

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    prefix = out_dir / model.variant if out_dir is not None else None

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = AdamState.create(model)
    report = RunReport(model.variant, list(model.tasks))

    best_state = model.state_dict()
    wait = 0
    started = time.perf_counter()
    log.info(f"Обучение {model.variant}: {len(train_set)} обучающих, {len(val_set)} валидационных образцов, "
             f"{model.parameter_count()} параметров")

    try:
        for epoch in range(cfg.max_epochs):
            task_sum = 0.0
            for batch in train_set.batches(cfg.batch_size, rng):
                model.zero_grad()
                with Tape():
                    losses = task_losses(model, batch)
                    loss = Tensor(0.0)
                    for value in losses.values():
                        loss = ops.add(loss, value)
                    loss = ops.add(loss, regularization(model, cfg.alpha, cfg.beta))
                    backward(loss)

                grads = [p.grad for p in params]
                if cfg.clip_norm > 0:
                    clip_gradients(grads, cfg.clip_norm)
                adam_step(state, params, grads, cfg.learning_rate)
                task_sum += sum(v.item() for v in losses.values()) * batch.size

            val = validation_loss(model, val_set, max(cfg.batch_size, 256))
            row = {"epoch": epoch, "train_loss": task_sum / len(train_set), "val_loss": sum(val.values())}
            row.update({f"val_{task}": value for task, value in val.items()})
            report.history.append(row)
            report.epochs = epoch + 1

            if row["val_loss"] < report.best_val_loss:
                report.best_val_loss, report.best_epoch = row["val_loss"], epoch
                best_state = model.state_dict()
                wait = 0
                if prefix is not None:
                    checkpoint.save(model, prefix, {"epoch": epoch, "val_loss": row["val_loss"]})
                    report.checkpoint_path = str(checkpoint.manifest_path(prefix))
            else:
                wait += 1

            log.debug(f"Эпоха {epoch}: train={row['train_loss']:.6f} val={row['val_loss']:.6f} ожидание={wait}")
            if out_dir is not None:
                pd.DataFrame(report.history).to_csv(out_dir / LOSS_CSV, index=False)
            if wait >= cfg.patience:
                report.stopped_early = True
                log.info(f"Ранняя остановка после эпохи {epoch}: лучшая эпоха {report.best_epoch}")
                break
    except NumericalError as e:
        log.error(f"Обучение прервано: {e}; восстановлены лучшие параметры (эпоха {report.best_epoch})")
        model.load_state_dict(best_state)
        raise

    model.load_state_dict(best_state)
    report.train_time_s = time.perf_counter() - started
    log.info(f"Обучение завершено: {report.epochs} эпох, лучшая валидационная потеря "
             f"{report.best_val_loss:.6f} (эпоха {report.best_epoch}), {report.train_time_s:.1f} с")
    return report
