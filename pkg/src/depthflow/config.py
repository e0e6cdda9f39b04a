"""Run configuration: one JSON tree covering every pipeline stage.

Loading is strict about unknown keys (they reject the file with the
offending path) and forgiving about missing ones (documented defaults fill
in, with a logged notice per key). A config round-trips losslessly through
its JSON form.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

log = logging.getLogger("depthflow.config")

DTYPES = ("float32", "float64")


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class MixtureSection:
    components: int = 8
    radius: float = 1.5
    scale: float = 0.15
    dim: int = 2


@dataclass(frozen=True)
class TeacherModelSection:
    hidden: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    depth: int = 8
    cond_dim: int = 64


@dataclass(frozen=True)
class StudentModelSection:
    hidden: int = 32
    heads: int = 4
    mlp_ratio: int = 4
    steps: int = 8
    cond_dim: int = 32
    rollout_mode: str = "full"


@dataclass(frozen=True)
class BaseTrainSection:
    steps: int = 4000
    batch: int = 128
    lr: float = 2e-3
    warmup: int = 200
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    log_every: int = 50
    label_drop: float = 0.1


@dataclass(frozen=True)
class FlowDistillSection:
    steps: int = 4000
    batch: int = 64
    lr: float = 1e-3
    warmup: int = 200
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    log_every: int = 50
    delta_min: float = 0.05
    pin_fraction: float = 0.25
    fd_step: float = 1e-3
    w_low: float = 1.0
    w_high: float = 2.0


@dataclass(frozen=True)
class StudentDistillSection:
    steps: int = 6000
    batch: int = 64
    lr: float = 2e-3
    warmup: int = 200
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    log_every: int = 50
    lambda_patches: float = 0.5
    sample_delta: bool = False
    w_low: float = 1.0
    w_high: float = 2.0


@dataclass(frozen=True)
class ScoutSection:
    candidates: int = 100
    scorer: str = "mixture_logpdf"
    class_label: int = 0
    guidance: float = 1.5


@dataclass(frozen=True)
class BenchSection:
    repeats: int = 40
    warmup: int = 5
    candidates: int = 100
    scorer: str = "mixture_logpdf"
    class_label: int = 0
    guidance: float = 1.5


@dataclass(frozen=True)
class ArtifactsSection:
    base_checkpoint: str = "base_field.ckpt"
    teacher_checkpoint: str = "flow_map.ckpt"
    student_checkpoint: str = "student.ckpt"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    dtype: str = "float32"
    out_dir: str = "runs/out"
    mixture: MixtureSection = field(default_factory=MixtureSection)
    teacher_model: TeacherModelSection = field(default_factory=TeacherModelSection)
    student_model: StudentModelSection = field(default_factory=StudentModelSection)
    base_train: BaseTrainSection = field(default_factory=BaseTrainSection)
    freeflow_train: FlowDistillSection = field(default_factory=FlowDistillSection)
    slt_train: StudentDistillSection = field(default_factory=StudentDistillSection)
    scout: ScoutSection = field(default_factory=ScoutSection)
    bench: BenchSection = field(default_factory=BenchSection)
    artifacts: ArtifactsSection = field(default_factory=ArtifactsSection)

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}, got {self.dtype!r}")


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a key/value table")
    names = [f.name for f in dataclasses.fields(cls)]
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key {path + unknown[0]!r}")
    kwargs = {}
    for name in names:
        section = _SECTION_TYPES.get(name)
        if name in data:
            if section is not None:
                kwargs[name] = _build(section, data[name], f"{path}{name}.")
            else:
                kwargs[name] = data[name]
        else:
            log.info("config: %s%s missing, using default", path, name)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid config near {path or 'top level'}: {err}") from err


_SECTION_TYPES = {
    "mixture": MixtureSection,
    "teacher_model": TeacherModelSection,
    "student_model": StudentModelSection,
    "base_train": BaseTrainSection,
    "freeflow_train": FlowDistillSection,
    "slt_train": StudentDistillSection,
    "scout": ScoutSection,
    "bench": BenchSection,
    "artifacts": ArtifactsSection,
}


def config_from_dict(data):
    return _build(RunConfig, data, "")


def config_to_dict(cfg: RunConfig):
    return dataclasses.asdict(cfg)


def load_config(path):
    """Parse and validate a JSON run config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    return config_from_dict(data)


def save_config(path, cfg: RunConfig):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
