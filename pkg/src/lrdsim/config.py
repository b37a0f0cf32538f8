"""Run configuration: strict schema, validation, and dict round-trips.

Unknown keys anywhere in the config are hard errors; sweep
reproducibility cannot tolerate silently ignored typos. `resolve`
materializes every default so the config echoed into a log header
re-validates and reproduces the run exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from .costs import STRATEGY_GLOBAL, STRATEGY_LOCAL
from .optimizer import MU_PER_COLUMN, MU_SCALAR, QHM_MODES, QHM_NONE, HyperParams
from .problems import SHARD_POLICIES

PROJECTION_INIT_DEFAULT = "default"
PROJECTION_INIT_RANDOM = "random"
PROJECTION_INIT_IDENTITY = "identity"
PROJECTION_INITS = (PROJECTION_INIT_DEFAULT, PROJECTION_INIT_RANDOM, PROJECTION_INIT_IDENTITY)

OUTER_AVERAGE = "average"
OUTER_NESTEROV = "nesterov"


class ConfigError(ValueError):
    """Configuration rejected; message names the offending field."""


@dataclass(frozen=True)
class ProblemConfig:
    type: str = "matrix_regression"
    rows: int = 64
    cols: int = 64
    design_rows: int = 4096
    noise_std: float = 0.1
    shard_policy: str = "iid"
    batch_size: int = 32
    target_rank: Optional[int] = None
    target_alpha: float = 0.5


@dataclass(frozen=True)
class SyncSchedule:
    k_x: int = 32
    k_u: int = 32
    k_v: int = 32


@dataclass(frozen=True)
class ProjectionConfig:
    strategy: str = STRATEGY_GLOBAL
    init: str = PROJECTION_INIT_DEFAULT
    refresh: bool = True


@dataclass(frozen=True)
class QhmConfig:
    mode: str = QHM_NONE
    omega: Optional[float] = None
    start_step: int = 0


@dataclass(frozen=True)
class HyperConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_radius: float = 1.0
    lr: float = 0.01
    warmup_steps: int = 0


@dataclass(frozen=True)
class OuterConfig:
    kind: str = OUTER_AVERAGE
    outer_lr: float = 1.0
    outer_momentum: float = 0.9


@dataclass(frozen=True)
class FlagsConfig:
    rotate_moments: bool = True
    error_feedback: bool = True
    sparsify_keep: float = 1.0
    mu_semantics: str = MU_PER_COLUMN


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 0
    workers: int = 1
    steps: int = 100
    rank: int = 8
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    schedule: SyncSchedule = field(default_factory=SyncSchedule)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    qhm: QhmConfig = field(default_factory=QhmConfig)
    hyperparams: HyperConfig = field(default_factory=HyperConfig)
    outer: OuterConfig = field(default_factory=OuterConfig)
    flags: FlagsConfig = field(default_factory=FlagsConfig)

    def hyper_params(self) -> HyperParams:
        return HyperParams(
            beta1=self.hyperparams.beta1,
            beta2=self.hyperparams.beta2,
            eps=self.hyperparams.eps,
            clip_radius=self.hyperparams.clip_radius,
            omega=self.qhm.omega,
            lr=self.hyperparams.lr,
            warmup_steps=self.hyperparams.warmup_steps,
        )

    def projection_init(self) -> str:
        if self.projection.init != PROJECTION_INIT_DEFAULT:
            return self.projection.init
        if self.projection.strategy == STRATEGY_GLOBAL:
            return PROJECTION_INIT_RANDOM
        return PROJECTION_INIT_IDENTITY

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "problem": ProblemConfig,
    "schedule": SyncSchedule,
    "projection": ProjectionConfig,
    "qhm": QhmConfig,
    "hyperparams": HyperConfig,
    "outer": OuterConfig,
    "flags": FlagsConfig,
}

_SCALAR_FIELDS = {"master_seed", "workers", "steps", "rank"}


def _build_section(name: str, cls, data: Any):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be a mapping, got {type(data).__name__}")
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key '{name}.{sorted(unknown)[0]}'")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"invalid section '{name}': {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    """Parse and validate a config mapping. Unknown keys are hard errors."""
    if not isinstance(data, dict):
        raise ConfigError(f"config must be a mapping, got {type(data).__name__}")
    unknown = set(data) - _SCALAR_FIELDS - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown key '{sorted(unknown)[0]}'")
    kwargs = {k: data[k] for k in _SCALAR_FIELDS if k in data}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build_section(name, cls, data[name])
    cfg = RunConfig(**kwargs)
    validate(cfg)
    return cfg


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(cfg: RunConfig) -> None:
    """Cross-field validation; raises ConfigError naming the field."""
    _check(isinstance(cfg.master_seed, int) and cfg.master_seed >= 0, "master_seed must be a non-negative integer")
    _check(isinstance(cfg.workers, int) and cfg.workers >= 1, "workers must be >= 1")
    _check(isinstance(cfg.steps, int) and cfg.steps >= 1, "steps must be >= 1")
    p = cfg.problem
    _check(p.type == "matrix_regression", f"problem.type must be 'matrix_regression', got '{p.type}'")
    _check(p.rows >= 1 and p.cols >= 1, "problem.rows and problem.cols must be >= 1")
    _check(isinstance(cfg.rank, int) and 1 <= cfg.rank <= min(p.rows, p.cols),
           f"rank must lie in [1, {min(p.rows, p.cols)}] for a {p.rows}x{p.cols} problem")
    _check(p.design_rows >= cfg.workers, "problem.design_rows must cover every worker")
    _check(p.design_rows % cfg.workers == 0,
           f"problem.design_rows={p.design_rows} must divide evenly across workers={cfg.workers}")
    _check(p.noise_std >= 0.0, "problem.noise_std must be >= 0")
    _check(p.shard_policy in SHARD_POLICIES, f"problem.shard_policy must be one of {SHARD_POLICIES}")
    if p.shard_policy == "feature_blocks":
        _check(p.rows % cfg.workers == 0, "problem.rows must divide evenly across workers for feature_blocks")
    shard_rows = p.design_rows // cfg.workers
    _check(1 <= p.batch_size <= shard_rows,
           f"problem.batch_size must lie in [1, {shard_rows}] (shard size)")
    if p.target_rank is not None:
        _check(1 <= p.target_rank <= min(p.rows, p.cols), "problem.target_rank out of range")
        _check(p.target_alpha > 0.0, "problem.target_alpha must be positive")
    s = cfg.schedule
    _check(s.k_x >= 1 and s.k_u >= 1 and s.k_v >= 1, "schedule periods must be >= 1")
    _check(cfg.projection.strategy in (STRATEGY_GLOBAL, STRATEGY_LOCAL),
           f"projection.strategy must be '{STRATEGY_GLOBAL}' or '{STRATEGY_LOCAL}'")
    _check(cfg.projection.init in PROJECTION_INITS, f"projection.init must be one of {PROJECTION_INITS}")
    _check(isinstance(cfg.projection.refresh, bool), "projection.refresh must be a boolean")
    _check(cfg.qhm.mode in QHM_MODES, f"qhm.mode must be one of {QHM_MODES}")
    if cfg.qhm.mode == QHM_NONE:
        _check(cfg.qhm.omega is None, "qhm.omega must be omitted when qhm.mode is 'none'")
    else:
        _check(cfg.qhm.omega is not None, f"qhm.omega is required when qhm.mode is '{cfg.qhm.mode}'")
        _check(0.0 <= cfg.qhm.omega <= 1.0, "qhm.omega must lie in [0, 1]")
    _check(0 <= cfg.qhm.start_step <= cfg.steps, "qhm.start_step must lie in [0, steps]")
    h = cfg.hyperparams
    _check(0.0 <= h.beta1 < 1.0, "hyperparams.beta1 must lie in [0, 1)")
    _check(0.0 <= h.beta2 < 1.0, "hyperparams.beta2 must lie in [0, 1)")
    _check(h.eps > 0.0, "hyperparams.eps must be positive")
    _check(h.clip_radius > 0.0, "hyperparams.clip_radius must be positive")
    _check(h.lr > 0.0, "hyperparams.lr must be positive")
    _check(0 <= h.warmup_steps < cfg.steps, "hyperparams.warmup_steps must lie in [0, steps)")
    o = cfg.outer
    _check(o.kind in (OUTER_AVERAGE, OUTER_NESTEROV), f"outer.kind must be '{OUTER_AVERAGE}' or '{OUTER_NESTEROV}'")
    _check(o.outer_lr > 0.0, "outer.outer_lr must be positive")
    _check(0.0 <= o.outer_momentum < 1.0, "outer.outer_momentum must lie in [0, 1)")
    f = cfg.flags
    _check(isinstance(f.rotate_moments, bool), "flags.rotate_moments must be a boolean")
    _check(isinstance(f.error_feedback, bool), "flags.error_feedback must be a boolean")
    _check(0.0 < f.sparsify_keep <= 1.0, "flags.sparsify_keep must lie in (0, 1]")
    _check(f.mu_semantics in (MU_PER_COLUMN, MU_SCALAR),
           f"flags.mu_semantics must be '{MU_PER_COLUMN}' or '{MU_SCALAR}'")


def load_file(path: str) -> RunConfig:
    """Load and validate a YAML config file."""
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config file: {exc}") from exc
    if data is None:
        raise ConfigError("config file is empty")
    return from_dict(data)
