"""Run configuration: one JSON document, every key overridable from the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import SplitSpec
from .errors import ConfigError
from .model import DEFAULT_INIT_SCALE
from .pso import SwarmConfig
from .refine import AL0_GRID, RefineConfig
from .trainers import AdamConfig, SgdConfig

OPTIMIZERS = ("sgd", "adam", "plfa")


@dataclass(frozen=True)
class AdamSettings:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    delimiter: str = ","
    densify: bool = False
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2
    seed: int = 0
    f: int = 20
    lam: float = 0.03
    eta: float = 0.015
    init_scale: float = DEFAULT_INIT_SCALE
    optimizer: str = "plfa"
    max_epochs: int = 300
    tol: float = 1e-5
    metric: str = "rmse"
    threads: int = 1
    out: str = "runs/latest"
    checkpoint_format: str = "bin"
    adam: AdamSettings = field(default_factory=AdamSettings)
    swarm: dict = field(default_factory=dict)
    refine: dict = field(default_factory=dict)
    sweep: tuple = AL0_GRID

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.metric not in ("rmse", "mae"):
            raise ConfigError("metric must be 'rmse' or 'mae'")
        if self.checkpoint_format not in ("bin", "json"):
            raise ConfigError("checkpoint_format must be 'bin' or 'json'")
        if int(self.f) < 1:
            raise ConfigError("f must be a positive integer")
        if int(self.threads) < 1:
            raise ConfigError("threads must be at least 1")
        if not self.sweep or any(not float(a) > 0 for a in self.sweep):
            raise ConfigError("sweep must be a non-empty list of positive antennae lengths")
        # validate the derived sub-configs eagerly
        self.split_spec(), self.sgd_config(), self.adam_config(), self.swarm_config(), self.refine_config()

    # -- derived sub-configs --

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train_frac, self.val_frac, self.test_frac, self.seed)

    def sgd_config(self) -> SgdConfig:
        return SgdConfig(eta=self.eta, lam=self.lam, max_epochs=self.max_epochs, tol=self.tol, seed=self.seed)

    def adam_config(self) -> AdamConfig:
        a = self.adam
        return AdamConfig(a.alpha, a.beta1, a.beta2, a.epsilon_hat, self.lam, self.max_epochs, self.tol, self.seed)

    def swarm_config(self) -> SwarmConfig:
        kw = {"seed": self.seed, "metric": self.metric, **self.swarm}
        return _build(SwarmConfig, kw, "swarm")

    def refine_config(self) -> RefineConfig:
        kw = {"lam": self.lam, "seed": self.seed, "metric": self.metric, "threads": self.threads, **self.refine}
        return _build(RefineConfig, kw, "refine")

    def resolved(self) -> dict:
        """Fully defaulted config as plain JSON types."""
        doc = asdict(self)
        doc["lambda"] = doc.pop("lam")
        doc["sweep"] = [float(a) for a in self.sweep]
        doc["swarm"] = _public(asdict(self.swarm_config()))
        doc["refine"] = _public(asdict(self.refine_config()))
        doc["refine"]["lambda"] = doc["refine"].pop("lam")
        return doc


def _public(d: dict) -> dict:
    return {k: v for k, v in d.items() if k not in ("seed", "threads")}


def _build(cls, kw, section):
    names = {f.name for f in fields(cls)}
    if "lambda" in kw:
        kw["lam"] = kw.pop("lambda")
    unknown = set(kw) - names
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"bad {section} config: {exc}") from exc


def from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    if "lambda" in doc:
        doc["lam"] = doc.pop("lambda")
    if "split" in doc:
        sp = doc.pop("split")
        for key in ("train_frac", "val_frac", "test_frac", "seed"):
            if key in sp:
                doc.setdefault(key, sp[key])
    names = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "adam" in doc and isinstance(doc["adam"], dict):
        doc["adam"] = _build(AdamSettings, dict(doc["adam"]), "adam")
    for key in ("swarm", "refine"):
        if key in doc:
            section = dict(doc[key])
            # resolved configs carry these at top level
            section.pop("seed", None)
            section.pop("threads", None)
            doc[key] = section
    if "sweep" in doc:
        doc["sweep"] = tuple(float(a) for a in doc["sweep"])
    try:
        return RunConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return from_dict(doc)


def override(cfg: RunConfig, **changes) -> RunConfig:
    """Apply non-None overrides; ``refine_*`` keys go to the refine section."""
    top, refine = {}, dict(cfg.refine)
    for key, value in changes.items():
        if value is None:
            continue
        if key.startswith("refine_"):
            refine[key[len("refine_"):]] = value
        else:
            top[key] = value
    try:
        return replace(cfg, refine=refine, **top)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
