"""Inversion and distillation objectives.

``bn_loss``, ``kd_loss`` and ``task_loss`` return scalar :class:`Tensor`
objects so they can be differentiated; the modulating weight is a plain float
(or array) because it is applied as a stop-gradient multiplier.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import ConfigError, Network


@dataclass(frozen=True)
class TeacherPrediction:
    logits: np.ndarray
    c_T: int
    p_T: float

    @classmethod
    def from_logits(cls, logits) -> "TeacherPrediction":
        logits = np.asarray(logits, dtype=np.float64)
        probs = softmax(logits)
        c = int(np.argmax(logits))
        return cls(logits.copy(), c, float(probs[c]))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def teacher_predictions(logits: np.ndarray) -> list[TeacherPrediction]:
    return [TeacherPrediction.from_logits(row) for row in np.asarray(logits)]


# -- BN statistics -----------------------------------------------------------

def bn_loss_from_stats(stats: Sequence) -> Tensor:
    """Sum over BN layers of ||batch mean - running mean|| + ||batch var - running var||."""
    if not stats:
        raise ConfigError("BN-statistics loss needs a network with at least one BN layer")
    total = None
    for mu, var, layer in stats:
        term = (ad.norm(mu - layer.buffers["running_mean"])
                + ad.norm(var - layer.buffers["running_var"]))
        total = term if total is None else total + term
    return total


def bn_loss(x, teacher: Network) -> Tensor:
    if not teacher.bn_layers:
        raise ConfigError("teacher has no BN layers")
    _, stats = teacher.forward(x, return_stats=True)
    return bn_loss_from_stats(stats)


# -- distillation ------------------------------------------------------------

def kd_divergence(t_logits, s_logits, tau: float = 1.0, detach_teacher: bool = True) -> Tensor:
    """Per-sample KL(softmax(t/tau) || softmax(s/tau)), shape [batch]."""
    t_logits, s_logits = ad.as_tensor(t_logits), ad.as_tensor(s_logits)
    if t_logits.shape != s_logits.shape or t_logits.ndim != 2:
        raise ad.ShapeError("kd_loss", t_logits.shape, s_logits.shape)
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if detach_teacher:
        t_logits = t_logits.detach()
    log_pt = ad.log_softmax_lastaxis(t_logits * (1.0 / tau))
    log_ps = ad.log_softmax_lastaxis(s_logits * (1.0 / tau))
    return ad.sum(ad.exp(log_pt) * (log_pt - log_ps), axis=-1)


def kd_loss(t_logits, s_logits, tau: float = 1.0, weights=None,
            detach_teacher: bool = True) -> Tensor:
    """Batch mean of (optionally weighted) KL scaled by ``tau**2``."""
    kl = kd_divergence(t_logits, s_logits, tau, detach_teacher)
    if weights is not None:
        kl = kl * np.asarray(weights, dtype=np.float64)
    return ad.mean_axis(kl, 0) * (tau * tau)


def kl_rows(t_logits: np.ndarray, s_logits: np.ndarray) -> np.ndarray:
    """Plain per-row KL(softmax(t) || softmax(s)) on arrays; clipped at 0 for rounding."""
    lt, ls = log_softmax(t_logits), log_softmax(s_logits)
    return np.maximum((np.exp(lt) * (lt - ls)).sum(axis=-1), 0.0)


def task_loss(t_logits, weights=None) -> Tensor:
    """Mean of -log p_T, the CE against the teacher's own argmax.

    ``weights`` (per-sample, treated as constants) scale each term before the
    mean; this is how the modulating function enters the inversion objective.
    """
    t_logits = ad.as_tensor(t_logits)
    if t_logits.ndim != 2:
        raise ad.ShapeError("task_loss", t_logits.shape)
    onehot = np.zeros(t_logits.shape)
    onehot[np.arange(t_logits.shape[0]), t_logits.values.argmax(axis=1)] = 1.0
    nll = -ad.sum(ad.log_softmax_lastaxis(t_logits) * onehot, axis=-1)
    if weights is not None:
        nll = nll * np.asarray(weights, dtype=np.float64)
    return ad.mean_axis(nll, 0)


# -- modulating function -----------------------------------------------------

def modulating_weights(c_T, p_T, census, capacity: int, gamma: float,
                       diversity: bool = True, difficulty: bool = True) -> np.ndarray:
    """(1 - census[c_T] / capacity) * (1 - p_T) ** gamma per sample.

    Either factor is replaced by 1 when its toggle is off.
    """
    c_T = np.asarray(c_T, dtype=np.int64)
    p_T = np.asarray(p_T, dtype=np.float64)
    census = np.asarray(census)
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    if census.sum() > capacity:
        raise ValueError(f"census total {census.sum()} exceeds capacity {capacity}")
    out = np.ones(c_T.shape)
    if diversity:
        out = out * (1.0 - census[c_T] / capacity)
    if difficulty:
        out = out * np.clip(1.0 - p_T, 0.0, 1.0) ** gamma
    return out


def modulating_phi(pred: TeacherPrediction, census, capacity: int, gamma: float,
                   diversity: bool = True, difficulty: bool = True) -> float:
    census = np.asarray(census)
    if census[pred.c_T] > capacity:
        raise ValueError(f"class count {census[pred.c_T]} exceeds capacity {capacity}")
    return float(modulating_weights([pred.c_T], [pred.p_T], census, capacity, gamma,
                                    diversity, difficulty)[0])
