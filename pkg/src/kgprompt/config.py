"""Flat ``key = value`` run configuration.

Relative paths are resolved against the directory of the config file. Unknown
keys are rejected. Secrets never live here; the LLM token is read from the
``KGPROMPT_LLM_TOKEN`` environment variable.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError, IOFailure

_SECTION = "run"
_PATH_KEYS = ("kg_path", "cache_path", "train_manifest", "test_manifest", "manifest", "output_dir")


@dataclass(frozen=True)
class RunConfig:
    # optimisation
    lr0: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 128
    epochs: int = 30
    lam: float = 0.5
    tau: float = 0.01
    seed: int = 0
    # model sizes
    image_size: int = 224
    patch_grid: int = 14
    embed_dim: int = 64
    encoder_dim: int = 64
    hidden_dim: int = 64
    context_length: int = 2
    # components
    encoder: str = "toy"
    encoder_url: str = ""
    encoder_seed: int = 0
    embedding_seed: int = 0
    real_category: str = "real face"
    mask_category: str = "3D mask"
    kg_path: str = ""
    cache_path: str = ""
    llm_url: str = ""
    kg_source_url: str = ""
    # data and protocols
    train_manifest: str = ""
    test_manifest: str = ""
    manifest: str = ""
    output_dir: str = "out"
    rounds: int = 20
    train_subjects: int = 8
    dev_subjects: int = 8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        if not self.lr0 > 0:
            problems.append("lr0 must be > 0")
        if not 0 <= self.momentum < 1:
            problems.append("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            problems.append("weight_decay must be >= 0")
        if self.lam < 0:
            problems.append("lambda must be >= 0")
        if not self.tau > 0:
            problems.append("tau must be > 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.context_length < 1:
            problems.append("context_length must be >= 1")
        for key in ("embed_dim", "encoder_dim", "hidden_dim", "patch_grid", "image_size", "rounds"):
            if getattr(self, key) < 1:
                problems.append(f"{key} must be >= 1")
        if self.patch_grid >= 1 and self.image_size % self.patch_grid:
            problems.append(f"image_size {self.image_size} is not divisible by patch_grid {self.patch_grid}")
        if self.encoder not in ("toy", "external"):
            problems.append("encoder must be 'toy' or 'external'")
        if self.train_subjects < 1 or self.dev_subjects < 1:
            problems.append("train_subjects and dev_subjects must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {("lam" if k == "lambda" else k): v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw.strip().strip('"').strip("'")


def config_from_mapping(values: dict, base_dir: Path | None = None) -> RunConfig:
    kwargs = {}
    for key, raw in values.items():
        name = "lam" if key == "lambda" else key
        if name not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        val = _coerce(name, raw) if isinstance(raw, str) else raw
        if name in _PATH_KEYS and val and base_dir is not None and not Path(val).is_absolute():
            val = str((base_dir / val).resolve())
        kwargs[name] = val
    return RunConfig(**kwargs)


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return config_from_mapping(dict(parser[_SECTION]), base_dir)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IOFailure(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent.resolve())


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
