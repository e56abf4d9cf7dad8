"""Run configuration: one TOML file, defaults for anything omitted."""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .embedding import EmbedderConfig
from .encoder import INTERACTION_MODES, EncoderConfig
from .evaluation import CRITERIA
from .model import ModelConfig
from .training import TrainConfig

VARIANTS = INTERACTION_MODES + ("no_label",)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsSection:
    dataset: str = ""
    schema: str = ""
    embeddings: str = ""
    checkpoint: str = ""
    predictions: str = ""
    eval_dataset: str = ""
    out: str = "runs/default"


@dataclass(frozen=True)
class ModelSection:
    layers: int = 3
    heads: int = 8
    d: int = 64
    mode: str = "full"
    width_threshold: int = 10
    width_dim: int = 150
    alpha: float = 0.4


@dataclass(frozen=True)
class EmbedderSection:
    mode: str = "toy"
    seed: int = 0
    dim: int = 0  # 0: same as model d (toy mode)


@dataclass(frozen=True)
class EvaluateSection:
    criteria: tuple[str, ...] = ("ner", "re", "re_plus")
    aggregation: str = "micro"
    k_folds: int = 0
    max_length: int = 512


@dataclass(frozen=True)
class RunConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSection = field(default_factory=ModelSection)
    embedder: EmbedderSection = field(default_factory=EmbedderSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        validate(self)

    def resolve(self, path: str) -> Path | None:
        if not path:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def model_config(self) -> ModelConfig:
        m = self.model
        use_label = m.mode != "no_label"
        return ModelConfig(
            encoder=EncoderConfig(m.layers, m.heads, m.d, m.mode if use_label else "full"),
            width_threshold=m.width_threshold,
            width_dim=m.width_dim,
            alpha=m.alpha,
            use_label_stream=use_label,
        )

    def embedder_config(self) -> EmbedderConfig:
        e = self.embedder
        return EmbedderConfig(d=e.dim or self.model.d, seed=e.seed, mode=e.mode)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "base_dir":
                continue
            section = asdict(getattr(self, f.name))
            out[f.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out


_SECTIONS = {
    "paths": PathsSection,
    "train": TrainConfig,
    "model": ModelSection,
    "embedder": EmbedderSection,
    "evaluate": EvaluateSection,
}


def validate(cfg: RunConfig) -> None:
    m = cfg.model
    if m.mode not in VARIANTS:
        raise ConfigError(f"model.mode must be one of {VARIANTS}, got {m.mode!r}")
    if not 0.0 < m.alpha < 1.0:
        raise ConfigError(f"model.alpha must lie in (0, 1), got {m.alpha}")
    if m.layers < 1 or m.heads < 1 or m.d < 1 or m.d % m.heads:
        raise ConfigError("model.layers, heads, d must be positive with d divisible by heads")
    if m.width_threshold < 1 or m.width_dim < 1:
        raise ConfigError("model.width_threshold and width_dim must be positive")
    if cfg.embedder.mode not in ("toy", "precomputed"):
        raise ConfigError(f"embedder.mode must be 'toy' or 'precomputed', got {cfg.embedder.mode!r}")
    if cfg.embedder.mode == "precomputed" and not cfg.embedder.dim:
        raise ConfigError("embedder.dim is required in precomputed mode")
    bad = [c for c in cfg.evaluate.criteria if c not in CRITERIA]
    if bad:
        raise ConfigError(f"unknown evaluation criteria {bad}")
    if cfg.evaluate.aggregation not in ("micro", "macro"):
        raise ConfigError("evaluate.aggregation must be 'micro' or 'macro'")
    if cfg.evaluate.k_folds < 0 or cfg.evaluate.k_folds == 1:
        raise ConfigError("evaluate.k_folds must be 0 (off) or >= 2")


def _build_section(name: str, raw: dict):
    cls = _SECTIONS[name]
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {unknown}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def config_from_dict(raw: dict, base_dir: str = ".") -> RunConfig:
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    sections = {}
    for name, value in raw.items():
        if not isinstance(value, dict):
            raise ConfigError(f"[{name}] must be a table")
        sections[name] = _build_section(name, value)
    try:
        return RunConfig(**sections, base_dir=base_dir)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, base_dir=str(path.parent))


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(cfg.to_dict(), fh)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply CLI flag values (``None`` means not given) on top of a loaded config."""
    train, model, evaluate, paths = cfg.train, cfg.model, cfg.evaluate, cfg.paths
    if overrides.get("seed") is not None:
        train = replace(train, seed=overrides["seed"])
    if overrides.get("mode") is not None:
        model = replace(model, mode=overrides["mode"])
    if overrides.get("criterion") is not None:
        evaluate = replace(evaluate, criteria=tuple(overrides["criterion"]))
    if overrides.get("folds") is not None:
        evaluate = replace(evaluate, k_folds=overrides["folds"])
    if overrides.get("epochs") is not None:
        train = replace(train, epochs=overrides["epochs"])
    path_keys = {k: overrides[k] for k in ("dataset", "schema", "checkpoint", "predictions", "out", "embeddings")
                 if overrides.get(k) is not None}
    if path_keys:
        # flag paths are relative to the working directory, not the config file
        path_keys = {k: str(Path(v).resolve()) for k, v in path_keys.items()}
        paths = replace(paths, **path_keys)
    try:
        return replace(cfg, train=train, model=model, evaluate=evaluate, paths=paths)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
