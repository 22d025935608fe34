"""Teacher pretraining, the inversion/distillation epoch loop, and ablations."""
from __future__ import annotations

import copy
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Graph
from .config import RunConfig
from .data import Dataset, augment, load_idx_dataset, make_blobs, train_test_split
from .losses import (TeacherPrediction, bn_loss_from_stats, kd_loss, kl_rows, modulating_weights,
                     softmax, task_loss, teacher_predictions)
from .nn import SGD, Network, NumericalError, build_generator, build_student, build_teacher
from .replay import ReplayBuffer

log = logging.getLogger(__name__)

STREAMS = ("teacher_init", "teacher_train", "student_init", "generator", "latent", "replay")

# ablation rows as (ps, difficulty, diversity)
ABLATION_ROWS = (
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (False, True, True),
    (True, True, True),
)


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


def load_datasets(config: RunConfig) -> tuple[Dataset, Dataset]:
    d = config.data
    if d.kind == "idx":
        with open(d.idx_images, "rb") as fi, open(d.idx_labels, "rb") as fl:
            full = load_idx_dataset(fi.read(), fl.read(), d.classes)
    else:
        full = make_blobs(d.classes, d.per_class, d.dim, d.spread, d.seed, d.separation)
    return train_test_split(full, d.test_size, d.seed)


def accuracy(net: Network, ds: Dataset) -> float:
    if len(ds) == 0:
        return math.nan
    return float((net.predict(ds.samples).argmax(axis=1) == ds.labels).mean())


def entropy(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def histogram(values, bins: int = 10) -> list[int]:
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=bins, range=(0.0, 1.0))
    return [int(c) for c in counts]


class DataFreeMonitor:
    """Counts original training rows that reach a network's forward pass."""

    def __init__(self, dataset: Dataset):
        self._rows = {row.tobytes() for row in np.ascontiguousarray(dataset.samples)}
        self.original_forwards = 0
        self.forwards = 0

    def __call__(self, x: np.ndarray) -> None:
        self.forwards += 1
        x = np.ascontiguousarray(x, dtype=np.float64)
        self.original_forwards += sum(row.tobytes() in self._rows for row in x)


# -- teacher -----------------------------------------------------------------

@dataclass
class PretrainResult:
    network: Network
    accuracy: float
    history: list[dict] = field(default_factory=list)


def cross_entropy(logits, labels: np.ndarray):
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ad.mean_axis(-ad.sum(ad.log_softmax_lastaxis(logits) * onehot, axis=-1), 0)


def pretrain_teacher(config: RunConfig, train: Dataset, test: Dataset | None = None,
                     streams: dict | None = None) -> PretrainResult:
    """Supervised cross-entropy training; the only place labels are used."""
    streams = streams or rng_streams(config.engine.seed)
    tc = config.teacher
    teacher = build_teacher(train.dim, train.classes, streams["teacher_init"], tc.hidden, tc.depth)
    rng = streams["teacher_train"]
    steps_per_epoch = max(1, math.ceil(len(train) / tc.batch_size))
    opt = SGD(tc.lr, tc.momentum, tc.weight_decay,
              t_max=max(1, (tc.epochs - tc.warmup_epochs) * steps_per_epoch),
              eta_min=tc.eta_min, warmup_steps=tc.warmup_epochs * steps_per_epoch)
    use_aug = config.data.augment and train.spatial_shape is not None
    history = []
    for epoch in range(tc.epochs):
        teacher.train()
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), tc.batch_size):
            idx = order[start:start + tc.batch_size]
            if len(idx) < 2:
                continue
            x = train.samples[idx]
            if use_aug:
                x = augment(x, train.spatial_shape, rng)
            graph = Graph()
            loss = cross_entropy(teacher.forward(x, graph), train.labels[idx])
            if not np.isfinite(loss.values):
                raise NumericalError(f"teacher loss diverged at epoch {epoch}")
            ad.backward(loss)
            opt.step(teacher.named_params(), teacher.grads())
            losses.append(loss.item())
        row = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else math.nan,
               "lr": opt.current_lr()}
        if test is not None:
            row["accuracy"] = accuracy(teacher, test)
        history.append(row)
    teacher.eval()
    acc = accuracy(teacher, test) if test is not None else accuracy(teacher, train)
    if acc < tc.min_accuracy:
        warnings.warn(f"teacher accuracy {acc:.3f} below sanity floor {tc.min_accuracy}; "
                      "distillation results are not meaningful", RuntimeWarning, stacklevel=2)
    return PretrainResult(teacher, acc, history)


# -- inversion ---------------------------------------------------------------

@dataclass
class InversionResult:
    x: np.ndarray
    teacher_logits: np.ndarray
    preds: list[TeacherPrediction]
    losses: dict[str, list[float]]


def new_generator(config: RunConfig, out_dim: int, rng: np.random.Generator) -> Network:
    g = config.generator
    return build_generator(g.latent_dim, out_dim, rng, g.hidden, g.output_scale)


def _frozen_forward(net: Network, x):
    was = net.training
    net.training = False
    try:
        return net.forward(x)
    finally:
        net.training = was


def inversion_objective(x, teacher: Network, student: Network, census, config: RunConfig):
    """Generator objective for a batch ``x`` plus its components.

    The default sign convention minimises BN mismatch and the modulated task
    loss while maximising teacher/student disagreement; ``literal_eq2``
    maximises the plain sum of all three terms instead.
    """
    e = config.engine
    t_logits, stats = teacher.forward(x, return_stats=True)
    s_logits = _frozen_forward(student, x)
    probs = softmax(t_logits.values)
    c_T = probs.argmax(axis=1)
    p_T = probs[np.arange(len(c_T)), c_T]
    phi = modulating_weights(c_T, p_T, census, config.replay.capacity, e.gamma,
                             diversity=e.use_diversity, difficulty=e.use_difficulty)
    l_bn = bn_loss_from_stats(stats)
    l_task = task_loss(t_logits, phi)
    l_kd = kd_loss(t_logits, s_logits, e.tau, detach_teacher=False)
    if e.literal_eq2:
        total = -(l_bn + l_kd + l_task)
    else:
        total = l_bn + l_task - e.lambda_adv * l_kd
    return total, {"bn": l_bn.item(), "kd": l_kd.item(), "task": l_task.item(),
                   "total": total.item(), "phi": float(phi.mean())}


def inversion_phase(teacher: Network, student: Network, buffer: ReplayBuffer, config: RunConfig,
                    rng: np.random.Generator, generator: Network | None = None) -> InversionResult:
    e, gc = config.engine, config.generator
    teacher.eval()
    gen = generator if generator is not None else new_generator(config, teacher.in_dim, rng)
    gen.train()
    z = rng.standard_normal((e.synth_batch, gc.latent_dim))
    params = {"z": z, **gen.named_params()}
    opt = SGD(gc.lr, gc.momentum)
    census = buffer.class_census()  # one snapshot for the whole phase; the buffer is not written here
    losses: dict[str, list[float]] = {k: [] for k in ("bn", "kd", "task", "total", "phi")}
    for step in range(e.inversion_steps):
        graph = Graph()
        z_leaf = graph.param(z)
        x = gen.forward(z_leaf, graph)
        total, parts = inversion_objective(x, teacher, student, census, config)
        if not all(math.isfinite(v) for v in parts.values()):
            last = {k: v[-1] for k, v in losses.items() if v}
            raise NumericalError(f"inversion diverged at step {step}; last finite losses {last}")
        for k, v in parts.items():
            losses[k].append(v)
        ad.backward(total)
        opt.step(params, {"z": z_leaf.grad, **gen.grads()})
    x = gen.forward(z).values
    t_logits = teacher.predict(x)
    return InversionResult(x, t_logits, teacher_predictions(t_logits), losses)


# -- distillation ------------------------------------------------------------

def distillation_phase(teacher: Network, student: Network, buffer: ReplayBuffer, config: RunConfig,
                       opt: SGD) -> float:
    """T_kd student updates on minibatches drawn from the buffer; returns the mean loss."""
    e = config.engine
    if len(buffer) == 0:
        raise RuntimeError("cannot distil from an empty replay buffer")
    losses = []
    for _ in range(e.distill_steps):
        batch = buffer.sample_minibatch(e.batch_size) if e.use_ps else buffer.sample_uniform(e.batch_size)
        x = np.stack([entry.x for entry in batch.entries])
        t_logits = np.stack([entry.teacher_pred.logits for entry in batch.entries])
        student.training = config.student.bn_train
        graph = Graph()
        s_logits = student.forward(x, graph)
        loss = kd_loss(t_logits, s_logits, e.tau, weights=batch.weights)
        if not np.isfinite(loss.values):
            raise NumericalError("distillation loss is not finite")
        ad.backward(loss)
        opt.step(student.named_params(), student.grads())
        losses.append(loss.item())
        if e.use_ps:
            buffer.update_priorities(batch.indices, kl_rows(t_logits, student.predict(x)),
                                     batch.raw_weights)
    student.eval()
    return float(np.mean(losses))


# -- full run ----------------------------------------------------------------

@dataclass
class EpochReport:
    epoch: int
    bn_loss: float
    kd_loss: float
    task_loss: float
    inversion_loss: float
    mean_phi: float
    distill_loss: float
    accuracy: float
    buffer_size: int
    census: list[int]
    p_hist: list[int]
    mean_p_T: float
    census_entropy: float
    stale_updates: int
    seconds: float = field(default=0.0, compare=False)

    def metrics(self) -> list[tuple[str, str, float]]:
        """(phase, metric, value) triples; wall-clock time is deliberately excluded."""
        return [
            ("inversion", "bn_loss", self.bn_loss),
            ("inversion", "kd_loss", self.kd_loss),
            ("inversion", "task_loss", self.task_loss),
            ("inversion", "total_loss", self.inversion_loss),
            ("inversion", "mean_phi", self.mean_phi),
            ("distill", "loss", self.distill_loss),
            ("eval", "accuracy", self.accuracy),
            ("buffer", "size", float(self.buffer_size)),
            ("buffer", "mean_p_T", self.mean_p_T),
            ("buffer", "census_entropy", self.census_entropy),
            ("buffer", "stale_updates", float(self.stale_updates)),
        ]


@dataclass
class RunResult:
    student: Network
    teacher: Network
    buffer: ReplayBuffer
    reports: list[EpochReport]
    teacher_accuracy: float
    initial_accuracy: float
    monitor: DataFreeMonitor

    @property
    def final_accuracy(self) -> float:
        return self.reports[-1].accuracy if self.reports else self.initial_accuracy


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else math.nan


def run(config: RunConfig, train: Dataset, test: Dataset, teacher: Network | None = None,
        teacher_accuracy: float | None = None) -> RunResult:
    """Pretrain (unless a teacher is given), then E inversion/insert/distil epochs.

    ``train`` is only read by teacher pretraining and the data-free monitor;
    ``test`` is only used for reported accuracies. Fully determined by
    ``config.engine.seed``.
    """
    e, rc, sc = config.engine, config.replay, config.student
    streams = rng_streams(e.seed)
    if teacher is None:
        pre = pretrain_teacher(config, train, test, streams)
        teacher, teacher_accuracy = pre.network, pre.accuracy
    elif teacher_accuracy is None:
        teacher_accuracy = accuracy(teacher, test)
    teacher.eval()

    student = build_student(teacher.in_dim, teacher.out_dim, streams["student_init"], sc.hidden, sc.depth)
    student.eval()
    monitor = DataFreeMonitor(train)
    student.input_hooks.append(monitor)
    buffer = ReplayBuffer(rc.capacity, teacher.out_dim, rc.alpha, rc.beta, rc.eps, streams["replay"])
    opt = SGD(sc.lr, sc.momentum, sc.weight_decay)
    generator = new_generator(config, teacher.in_dim, streams["generator"]) if e.persist_generator else None
    initial = accuracy(student, test)
    reports = []
    try:
        for epoch in range(e.epochs):
            t0 = time.perf_counter()
            gen = generator or new_generator(config, teacher.in_dim, streams["generator"])
            inv = inversion_phase(teacher, student, buffer, config, streams["latent"], gen)

            if rc.rescore_full_buffer and len(buffer):
                resident = buffer.samples()
                t_res = np.stack([en.teacher_pred.logits for en in buffer.entries])
                buffer.update_priorities(buffer.seqs(), kl_rows(t_res, student.predict(resident)),
                                         buffer.is_weights())
            kl_new = kl_rows(inv.teacher_logits, student.predict(inv.x))
            buffer.extend(inv.x, inv.preds, kl_new)  # first insertion: w_prev = 1

            d_loss = distillation_phase(teacher, student, buffer, config, opt)
            census = buffer.class_census()
            p_T = buffer.p_T()
            report = EpochReport(
                epoch=epoch,
                bn_loss=_mean(inv.losses["bn"]),
                kd_loss=_mean(inv.losses["kd"]),
                task_loss=_mean(inv.losses["task"]),
                inversion_loss=_mean(inv.losses["total"]),
                mean_phi=_mean(inv.losses["phi"]),
                distill_loss=d_loss,
                accuracy=accuracy(student, test),
                buffer_size=len(buffer),
                census=[int(c) for c in census],
                p_hist=histogram(p_T, e.hist_bins),
                mean_p_T=float(p_T.mean()),
                census_entropy=entropy(census),
                stale_updates=buffer.stale_updates,
                seconds=time.perf_counter() - t0,
            )
            log.info("epoch %d acc=%.4f distill=%.4f bn=%.4f", epoch, report.accuracy,
                     report.distill_loss, report.bn_loss)
            reports.append(report)
    finally:
        student.input_hooks.remove(monitor)
    return RunResult(student, teacher, buffer, reports, teacher_accuracy, initial, monitor)


# -- ablation ----------------------------------------------------------------

@dataclass
class AblationRow:
    ps: bool
    difficulty: bool
    diversity: bool
    seed: int
    accuracy: float
    seconds: float
    census_entropy: float = math.nan
    mean_p_T: float = math.nan

    def csv_row(self) -> list:
        return [int(self.ps), int(self.difficulty), int(self.diversity), self.seed,
                self.accuracy, self.seconds]


ABLATION_HEADER = ["ps", "difficulty", "diversity", "seed", "accuracy", "seconds"]


def with_toggles(config: RunConfig, ps: bool, difficulty: bool, diversity: bool,
                 seed: int | None = None) -> RunConfig:
    engine = {"use_ps": ps, "use_difficulty": difficulty, "use_diversity": diversity}
    if seed is not None:
        engine["seed"] = seed
    return config.replace(engine=engine)


def ablate(config: RunConfig, seeds, train: Dataset | None = None, test: Dataset | None = None,
           rows=ABLATION_ROWS) -> list[AblationRow]:
    """Run every toggle combination for every seed; the teacher is pretrained once per seed."""
    if train is None or test is None:
        train, test = load_datasets(config)
    out = []
    for seed in seeds:
        base = config.replace(engine={"seed": int(seed)})
        pre = pretrain_teacher(base, train, test, rng_streams(int(seed)))
        for ps, difficulty, diversity in rows:
            cfg = with_toggles(base, ps, difficulty, diversity)
            t0 = time.perf_counter()
            result = run(cfg, train, test, teacher=_clone(pre.network), teacher_accuracy=pre.accuracy)
            last = result.reports[-1] if result.reports else None
            out.append(AblationRow(ps, difficulty, diversity, int(seed), result.final_accuracy,
                                   time.perf_counter() - t0,
                                   last.census_entropy if last else math.nan,
                                   last.mean_p_T if last else math.nan))
    return out


def _clone(net: Network) -> Network:
    twin = copy.deepcopy(net)
    twin.input_hooks = []
    return twin
