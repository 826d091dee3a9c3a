"""Typed INI experiment configuration with strict keys and a stable hash."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import get_type_hints

from gfnloss.errors import ConfigError
from gfnloss.losses import BUILTIN_LOSSES
from gfnloss.objectives import VARIANTS
from gfnloss.sampling import MODES


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "hypergrid"  # hypergrid | bitseq | random_dag | diamond | dag
    D: int = 2
    H: int = 8
    R0: float = 1e-4
    R1: float = -9.9e-5
    R2: float = 1.0 - 1e-6
    n: int = 12
    k: int = 4
    n_modes: int = 4
    targets: str = ""  # hex list; drawn from target_seed when empty
    target_seed: int = 0
    delta: int = 2
    beta: float = 2.0
    dag_file: str = ""
    layers: int = 3
    width: int = 3
    edge_density: float = 0.5
    dag_seed: int = 0


@dataclass(frozen=True)
class ObjectiveConfig:
    variant: str = "TB"
    backward: str = "learned"  # learned | uniform
    stb_lambda: float = 0.9


@dataclass(frozen=True)
class LossConfig:
    name: str = "quadratic"


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "mlp"  # mlp | tabular
    hidden_layers: int = 2
    hidden_width: int = 64
    init_scale: float = 0.0  # 0 selects 1/sqrt(fan_in)


@dataclass(frozen=True)
class TrainingConfig:
    seed: int = 0
    trajectories: int = 50_000
    batch_size: int = 16
    lr: float = 1e-3
    z_lr: float = 0.1
    clamp_bound: float = 30.0
    grad_clip: float = 0.0  # 0 disables clipping
    stop_when_all_modes: bool = False


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "on_policy"
    epsilon: float = 0.0
    temperature: float = 1.0


@dataclass(frozen=True)
class EvalConfig:
    interval: int = 500  # optimizer steps
    window: int = 0  # trajectories; 0 means 10% of the budget
    l1: str = "exact"  # exact | none
    spearman: str = "none"  # none | exact | mc
    spearman_N: int = 10
    test_set_size: int = 512
    top_k: int = 100
    l1_threshold: float = 0.05


ENV_KINDS = ("hypergrid", "bitseq", "random_dag", "diamond", "dag")

_SECTIONS = (
    ("env", EnvConfig),
    ("objective", ObjectiveConfig),
    ("loss", LossConfig),
    ("model", ModelConfig),
    ("training", TrainingConfig),
    ("sampler", SamplerConfig),
    ("eval", EvalConfig),
)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    env: EnvConfig = field(default_factory=EnvConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    losses: tuple[tuple[str, str], ...] = ()  # custom name -> expression
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        validate(self)

    @property
    def custom_losses(self) -> dict[str, str]:
        return dict(self.losses)

    @property
    def window(self) -> int:
        return self.eval.window or max(1, self.training.trajectories // 10)

    def to_text(self) -> str:
        cp = _parser()
        cp["experiment"] = {"name": self.name}
        for sec, _ in _SECTIONS:
            obj = getattr(self, sec)
            cp[sec] = {f.name: _format(getattr(obj, f.name)) for f in fields(obj)}
        if self.losses:
            cp["losses"] = dict(self.losses)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def config_hash(self) -> str:
        """SHA-256 of everything except the run name."""
        return hashlib.sha256(replace(self, name="").to_text().encode()).hexdigest()

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, training=replace(self.training, seed=seed))

    def full_scale(self) -> ExperimentConfig:
        """Swap in the full-size environment constants (hyper-grid 4x20, 120-bit sequences)."""
        if self.env.kind == "hypergrid":
            return replace(self, env=replace(self.env, D=4, H=20))
        if self.env.kind == "bitseq":
            return replace(self, env=replace(self.env, n=120, k=8, n_modes=60, targets=""))
        return self

    @classmethod
    def from_text(cls, text: str) -> ExperimentConfig:
        cp = _parser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        known = {"experiment", "losses"} | {s for s, _ in _SECTIONS}
        unknown = set(cp.sections()) - known
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        kw = {}
        if cp.has_section("experiment"):
            extra = set(cp["experiment"]) - {"name"}
            if extra:
                raise ConfigError(f"unknown key(s) in [experiment]: {', '.join(sorted(extra))}")
            kw["name"] = cp["experiment"].get("name", "experiment")
        for sec, typ in _SECTIONS:
            if cp.has_section(sec):
                kw[sec] = _section(typ, sec, cp[sec])
        if cp.has_section("losses"):
            kw["losses"] = tuple(sorted(cp["losses"].items()))
        return cls(**kw)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        p = Path(path)
        cfg = cls.from_text(p.read_text())
        return cfg if cfg.name != "experiment" else replace(cfg, name=p.stem)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    return cp


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(typ, raw: str, where: str):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from exc


def _section(typ, name: str, sec) -> object:
    hints = get_type_hints(typ)
    names = {f.name for f in fields(typ)}
    unknown = set(sec) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    return typ(**{k: _parse(hints[k], v, f"[{name}] {k}") for k, v in sec.items()})


def validate(cfg: ExperimentConfig) -> None:
    e, o, t, ev = cfg.env, cfg.objective, cfg.training, cfg.eval
    if e.kind not in ENV_KINDS:
        raise ConfigError(f"unknown env kind {e.kind!r}")
    if e.kind == "dag" and not e.dag_file:
        raise ConfigError("env kind 'dag' needs dag_file")
    if o.variant not in VARIANTS:
        raise ConfigError(f"unknown objective variant {o.variant!r}")
    if o.backward not in ("learned", "uniform"):
        raise ConfigError(f"backward must be learned or uniform, got {o.backward!r}")
    if cfg.loss.name not in BUILTIN_LOSSES and cfg.loss.name not in cfg.custom_losses:
        raise ConfigError(f"loss {cfg.loss.name!r} is neither built in nor defined in [losses]")
    if cfg.model.kind not in ("mlp", "tabular"):
        raise ConfigError(f"unknown model kind {cfg.model.kind!r}")
    if cfg.sampler.mode not in MODES or cfg.sampler.mode == "backward":
        raise ConfigError(f"training sampler must be a forward mode, got {cfg.sampler.mode!r}")
    if t.trajectories <= 0 or t.batch_size <= 0:
        raise ConfigError("trajectories and batch_size must be positive")
    if not (t.lr > 0 and t.z_lr > 0):
        raise ConfigError("learning rates must be positive")
    if ev.interval <= 0:
        raise ConfigError("eval interval must be positive")
    if ev.l1 not in ("exact", "none") or ev.spearman not in ("none", "exact", "mc"):
        raise ConfigError("eval l1 must be exact|none and spearman none|exact|mc")
