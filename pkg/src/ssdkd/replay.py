"""Fixed-capacity FIFO replay buffer with proportional priority sampling.

Entries are addressed by their insertion sequence number. Because eviction
is strictly oldest-first the live seqs always form a contiguous range, so a
seq maps to a position by a single subtraction and evicted seqs are simply
those below the range.
"""
from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .losses import TeacherPrediction


class BufferError(RuntimeError):
    pass


@dataclass
class ReplayEntry:
    x: np.ndarray
    teacher_pred: TeacherPrediction
    priority: float
    seq: int


class Minibatch(NamedTuple):
    entries: list[ReplayEntry]
    indices: np.ndarray      # seqs of the drawn entries
    weights: np.ndarray      # IS weights divided by the max IS weight over the buffer
    raw_weights: np.ndarray  # unnormalised (N * P)^-beta, consumed by the priority recurrence


class ReplayBuffer:
    def __init__(self, capacity: int, num_classes: int, alpha: float = 0.6, beta: float = 0.4,
                 eps: float = 1e-6, rng: np.random.Generator | int | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.capacity = int(capacity)
        self.num_classes = int(num_classes)
        self.alpha, self.beta, self.eps = float(alpha), float(beta), float(eps)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.entries: deque[ReplayEntry] = deque()
        self.next_seq = 0
        self.stale_updates = 0

    def __len__(self) -> int:
        return len(self.entries)

    # -- writes --------------------------------------------------------------

    def insert(self, x, teacher_pred: TeacherPrediction, kl_to_student: float,
               w_prev: float = 1.0) -> ReplayEntry:
        if not kl_to_student >= 0:
            raise ValueError(f"KL must be non-negative, got {kl_to_student}")
        if not w_prev > 0:
            raise ValueError(f"w_prev must be positive, got {w_prev}")
        entry = ReplayEntry(np.array(x, dtype=np.float64), teacher_pred,
                            float(w_prev) * float(kl_to_student), self.next_seq)
        self.next_seq += 1
        self.entries.append(entry)
        while len(self.entries) > self.capacity:
            self.entries.popleft()
        return entry

    def extend(self, xs, preds: Sequence[TeacherPrediction], kls, w_prev=None) -> None:
        w_prev = np.ones(len(xs)) if w_prev is None else np.asarray(w_prev)
        for x, pred, kl, w in zip(xs, preds, kls, w_prev):
            self.insert(x, pred, float(kl), float(w))

    def _position(self, seq: int) -> int | None:
        if not self.entries:
            return None
        pos = int(seq) - self.entries[0].seq
        return pos if 0 <= pos < len(self.entries) else None

    def get(self, seq: int) -> ReplayEntry | None:
        pos = self._position(seq)
        return None if pos is None else self.entries[pos]

    def update_priorities(self, indices, new_kl, w_used) -> int:
        """Set priority = w_used * new_kl for each live seq; returns how many were stale."""
        stale = 0
        for seq, kl, w in zip(np.asarray(indices), np.asarray(new_kl), np.asarray(w_used)):
            entry = self.get(int(seq))
            if entry is None:
                stale += 1
                continue
            if not kl >= 0:
                raise ValueError(f"KL must be non-negative, got {kl}")
            entry.priority = float(w) * float(kl)
        self.stale_updates += stale
        return stale

    # -- reads ---------------------------------------------------------------

    def priorities(self) -> np.ndarray:
        return np.array([e.priority for e in self.entries], dtype=np.float64)

    def seqs(self) -> np.ndarray:
        return np.array([e.seq for e in self.entries], dtype=np.int64)

    def _scaled(self) -> np.ndarray:
        if not self.entries:
            raise BufferError("replay buffer is empty")
        return (np.abs(self.priorities()) + self.eps) ** self.alpha

    def probabilities(self) -> np.ndarray:
        scaled = self._scaled()
        return scaled / scaled.sum()

    def is_weights(self) -> np.ndarray:
        return (len(self.entries) * self.probabilities()) ** (-self.beta)

    def is_weight(self, seq: int) -> float:
        pos = self._position(seq)
        if pos is None:
            raise BufferError(f"seq {seq} is not in the buffer")
        return float(self.is_weights()[pos])

    def sample_minibatch(self, m: int) -> Minibatch:
        """Draw ``m`` entries i.i.d. with replacement, proportional to priority."""
        if m < 1:
            raise ValueError("minibatch size must be >= 1")
        scaled = self._scaled()
        cumulative = np.cumsum(scaled)
        u = self.rng.random(m) * cumulative[-1]
        pos = np.minimum(np.searchsorted(cumulative, u, side="right"), len(scaled) - 1)
        probs = scaled / scaled.sum()
        raw = (len(scaled) * probs) ** (-self.beta)
        return Minibatch([self.entries[i] for i in pos], self.seqs()[pos],
                         raw[pos] / raw.max(), raw[pos])

    def sample_uniform(self, m: int) -> Minibatch:
        """Uniform draws consuming the rng exactly like :meth:`sample_minibatch`."""
        if not self.entries:
            raise BufferError("replay buffer is empty")
        if m < 1:
            raise ValueError("minibatch size must be >= 1")
        n = len(self.entries)
        pos = np.minimum((self.rng.random(m) * n).astype(np.int64), n - 1)
        ones = np.ones(m)
        return Minibatch([self.entries[i] for i in pos], self.seqs()[pos], ones, ones)

    def class_census(self) -> np.ndarray:
        counts = np.zeros(self.num_classes, dtype=np.int64)
        for e in self.entries:
            counts[e.teacher_pred.c_T] += 1
        return counts

    def samples(self) -> np.ndarray:
        return np.stack([e.x for e in self.entries]) if self.entries else np.zeros((0, 0))

    def p_T(self) -> np.ndarray:
        return np.array([e.teacher_pred.p_T for e in self.entries])

    def dump_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["seq", "c_T", "p_T", "priority", "probability"])
        probs = self.probabilities() if self.entries else []
        for e, p in zip(self.entries, probs):
            writer.writerow([e.seq, e.teacher_pred.c_T, repr(e.teacher_pred.p_T),
                             repr(e.priority), repr(float(p))])
        return buf.getvalue()
