"""Run configuration: nested dataclasses loaded from a single JSON document.

Sections are ``data``, ``teacher``, ``student``, ``generator``, ``replay`` and
``engine``. Learning rates have no default and must be given explicitly;
every other key falls back to the desk-scale defaults below. Unknown keys
are rejected so typos surface as errors instead of silently using defaults.
"""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field

from .nn import ConfigError


@dataclass
class DataConfig:
    kind: str = "blobs"                  # "blobs" | "idx"
    classes: int = 8
    per_class: int = 750
    dim: int = 8
    spread: float = 0.3
    separation: float = 1.0
    test_size: int = 1000
    seed: int = 0
    idx_images: str | None = None
    idx_labels: str | None = None
    augment: bool = True                 # only applied to spatial (image) data


@dataclass
class TeacherConfig:
    lr: float
    hidden: int = 128
    depth: int = 2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 256
    eta_min: float = 2e-4
    warmup_epochs: int = 0
    min_accuracy: float = 0.9


@dataclass
class StudentConfig:
    lr: float
    hidden: int = 32
    depth: int = 2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    bn_train: bool = True


@dataclass
class GeneratorConfig:
    lr: float
    latent_dim: int = 16
    hidden: int = 64
    momentum: float = 0.9
    output_scale: float = 2.0


@dataclass
class ReplayConfig:
    capacity: int = 500
    alpha: float = 0.6
    beta: float = 0.4
    eps: float = 1e-6
    rescore_full_buffer: bool = False


@dataclass
class EngineConfig:
    epochs: int = 10
    inversion_steps: int = 100
    distill_steps: int = 20
    synth_batch: int = 50
    batch_size: int = 64
    gamma: float = 4.0
    tau: float = 1.0
    lambda_adv: float = 1.0
    use_ps: bool = True
    use_difficulty: bool = True
    use_diversity: bool = True
    literal_eq2: bool = False
    persist_generator: bool = False
    seed: int = 0
    hist_bins: int = 10


SECTIONS = {
    "data": DataConfig,
    "teacher": TeacherConfig,
    "student": StudentConfig,
    "generator": GeneratorConfig,
    "replay": ReplayConfig,
    "engine": EngineConfig,
}


@dataclass
class RunConfig:
    teacher: TeacherConfig
    student: StudentConfig
    generator: GeneratorConfig
    data: DataConfig = field(default_factory=DataConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = {
            "data.classes": self.data.classes, "data.dim": self.data.dim,
            "data.per_class": self.data.per_class, "data.test_size": self.data.test_size,
            "teacher.hidden": self.teacher.hidden, "teacher.batch_size": self.teacher.batch_size,
            "student.hidden": self.student.hidden, "generator.latent_dim": self.generator.latent_dim,
            "generator.hidden": self.generator.hidden, "replay.capacity": self.replay.capacity,
            "engine.inversion_steps": self.engine.inversion_steps,
            "engine.distill_steps": self.engine.distill_steps,
            "engine.synth_batch": self.engine.synth_batch, "engine.batch_size": self.engine.batch_size,
            "engine.hist_bins": self.engine.hist_bins, "replay.eps": self.replay.eps,
            "engine.tau": self.engine.tau, "teacher.lr": self.teacher.lr,
            "student.lr": self.student.lr, "generator.lr": self.generator.lr,
            "generator.output_scale": self.generator.output_scale,
        }
        for key, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{key} must be positive, got {value!r}")
        non_negative = {
            "teacher.epochs": self.teacher.epochs, "engine.epochs": self.engine.epochs,
            "engine.gamma": self.engine.gamma, "replay.alpha": self.replay.alpha,
            "replay.beta": self.replay.beta, "teacher.depth": self.teacher.depth,
            "student.depth": self.student.depth, "teacher.warmup_epochs": self.teacher.warmup_epochs,
        }
        for key, value in non_negative.items():
            if value < 0:
                raise ConfigError(f"{key} must be non-negative, got {value!r}")
        if self.engine.synth_batch < 2:
            raise ConfigError("engine.synth_batch must be >= 2 for batch statistics")
        if self.data.kind not in ("blobs", "idx"):
            raise ConfigError(f"data.kind must be 'blobs' or 'idx', got {self.data.kind!r}")
        if self.data.kind == "idx" and not (self.data.idx_images and self.data.idx_labels):
            raise ConfigError("data.idx_images and data.idx_labels are required for data.kind='idx'")

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **sections) -> "RunConfig":
        """Copy with per-section overrides, e.g. ``replace(engine={"use_ps": False})``."""
        d = self.to_dict()
        for name, overrides in sections.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section {name!r}")
            d[name].update(overrides)
        return from_dict(d)

    @property
    def toggles(self) -> tuple[bool, bool, bool]:
        e = self.engine
        return e.use_ps, e.use_difficulty, e.use_diversity


def _check_type(key: str, value, hint) -> object:
    origin = typing.get_origin(hint)
    allowed = typing.get_args(hint) if origin in (typing.Union, types.UnionType) else (hint,)
    for t in allowed:
        if t is type(None) and value is None:
            return value
        if t is bool and isinstance(value, bool):
            return value
        if t is int and isinstance(value, int) and not isinstance(value, bool):
            return value
        if t is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if t is str and isinstance(value, str):
            return value
    names = "|".join(getattr(t, "__name__", str(t)) for t in allowed)
    raise ConfigError(f"{key}: expected {names}, got {type(value).__name__} {value!r}")


def _section(name: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key {name}.{unknown[0]}")
    kwargs = {}
    for fname, f in known.items():
        key = f"{name}.{fname}"
        if fname in raw:
            kwargs[fname] = _check_type(key, raw[fname], hints[fname])
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"missing required key {key}")
    return cls(**kwargs)


def from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(d) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section {unknown[0]!r}")
    sections = {name: _section(name, cls, d.get(name, {})) for name, cls in SECTIONS.items()}
    return RunConfig(**sections)


def loads(text: str) -> RunConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_dict(d)


def load(path) -> RunConfig:
    with open(path) as fh:
        return loads(fh.read())


def default_config(**sections) -> RunConfig:
    """Desk-scale defaults with the learning rates filled in."""
    base = from_dict({"teacher": {"lr": 0.1}, "student": {"lr": 0.05}, "generator": {"lr": 0.01}})
    return base.replace(**sections) if sections else base
