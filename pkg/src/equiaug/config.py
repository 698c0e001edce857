"""Experiment configuration: YAML parsing, validation with field paths, and
deterministic sub-seed derivation.

One top-level ``seed`` drives every random choice. Unless a section sets its
own seed, the graph, reward, training and evaluation seeds are derived from
it and written back into the resolved config, so any output's provenance
header is enough to rerun it in isolation.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .evaluate import EvalSettings
from .mrp import PRESETS, TrainConfig, social_defaults
from .synth import ConfigError, EnsembleConfig

OPTIMIZERS = ("none", "geci", "mrp")
REWARD_MODES = ("high-degree", "low-degree")
SEED_STREAMS = {"graph": 0, "rewards": 1, "train": 2, "eval": 3}
TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}
ENSEMBLE_FIELDS = {f.name for f in fields(EnsembleConfig)}


def derive_seed(seed: int, stream: str) -> int:
    return int(np.random.SeedSequence([seed, SEED_STREAMS[stream]]).generate_state(1, np.uint64)[0])


def _is_seed(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and 0 <= v < 2**64


def _section(cfg: dict, key: str, path: str) -> dict:
    v = cfg.get(key, {})
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ConfigError(f"{path}{key}", "must be a mapping")
    return v


def _unknown(d: dict, allowed: set[str], path: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{path}.{extra[0]}", f"unknown key (allowed: {sorted(allowed)})")


@dataclass
class Instance:
    """A synthetic problem definition: ensemble plus reward placement."""

    name: str
    ensemble: dict
    k: int = 3
    mode: str = "high-degree"


@dataclass
class ExperimentConfig:
    seed: int
    source: dict
    rewards: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    facility: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    edits: str | None = None
    base_dir: Path = Path(".")

    @property
    def uses_bundle(self) -> bool:
        return "bundle" in self.source

    @property
    def budget(self) -> int:
        return int(self.optimizer.get("budget", 0))

    @property
    def optimizer_name(self) -> str:
        return self.optimizer.get("name", "none")

    def bundle_path(self) -> Path:
        p = Path(self.source["bundle"])
        return p if p.is_absolute() else self.base_dir / p

    def seeds_for(self, seed: int) -> dict[str, int]:
        return {s: derive_seed(seed, s) for s in SEED_STREAMS}

    def ensemble_config(self, ensemble: dict | None = None, seed: int | None = None) -> EnsembleConfig:
        ens = dict(self.source.get("ensemble", {}) if ensemble is None else ensemble)
        ens.setdefault("seed", derive_seed(self.seed if seed is None else seed, "graph"))
        _unknown(ens, ENSEMBLE_FIELDS, "source.ensemble")
        try:
            return EnsembleConfig(**ens)
        except TypeError as exc:
            raise ConfigError("source.ensemble", str(exc)) from None

    def train_config(self, budget: int, seed: int, n: int) -> TrainConfig:
        t = dict(self.train)
        preset = t.pop("preset", "synthetic")
        t.setdefault("seed", derive_seed(seed, "train"))
        t["B"] = budget
        try:
            if preset == "social":
                return social_defaults(n, **t)
            return PRESETS[preset](**t)
        except (TypeError, ValueError) as exc:
            raise ConfigError("train", str(exc)) from None

    def eval_settings(self, seed: int) -> EvalSettings:
        e = dict(self.evaluation)
        e.setdefault("seed", derive_seed(seed, "eval"))
        try:
            return EvalSettings(**e)
        except TypeError as exc:
            raise ConfigError("evaluation", str(exc)) from None

    def instances(self) -> list[Instance]:
        listed = self.sweep.get("instances")
        if listed:
            return [
                Instance(d["name"], d["ensemble"], d.get("rewards", {}).get("k", 3),
                         d.get("rewards", {}).get("mode", "high-degree"))
                for d in listed
            ]
        if self.uses_bundle:
            return [Instance(self.bundle_path().parent.name or "bundle", {})]
        ens = self.source["ensemble"]
        return [Instance(ens["kind"], ens, self.rewards.get("k", 3), self.rewards.get("mode", "high-degree"))]

    def resolved(self) -> dict:
        """Plain-data view with derived seeds filled in (provenance)."""
        d = {
            "seed": self.seed,
            "derived_seeds": self.seeds_for(self.seed),
            "source": copy.deepcopy(self.source),
        }
        for key in ("rewards", "optimizer", "train", "evaluation", "facility", "sweep"):
            if getattr(self, key):
                d[key] = copy.deepcopy(getattr(self, key))
        if self.edits is not None:
            d["edits"] = self.edits
        return d


def _check_types(cfg: ExperimentConfig) -> None:
    src = cfg.source
    if ("ensemble" in src) == ("bundle" in src):
        raise ConfigError("source", "exactly one of source.ensemble / source.bundle is required")
    _unknown(src, {"ensemble", "bundle", "mask"}, "source")
    if "ensemble" in src:
        if not isinstance(src["ensemble"], dict):
            raise ConfigError("source.ensemble", "must be a mapping")
        if "seed" in src["ensemble"] and not _is_seed(src["ensemble"]["seed"]):
            raise ConfigError("source.ensemble.seed", "must be an unsigned 64-bit integer")
        cfg.ensemble_config()  # validates fields
    _unknown(cfg.rewards, {"k", "mode", "seed"}, "rewards")
    if "k" in cfg.rewards and (not isinstance(cfg.rewards["k"], int) or cfg.rewards["k"] < 1):
        raise ConfigError("rewards.k", "must be a positive integer")
    if cfg.rewards.get("mode", "high-degree") not in REWARD_MODES:
        raise ConfigError("rewards.mode", f"must be one of {REWARD_MODES}")

    _unknown(cfg.optimizer, {"name", "budget", "T", "prune"}, "optimizer")
    if cfg.optimizer_name not in OPTIMIZERS:
        raise ConfigError("optimizer.name", f"must be one of {OPTIMIZERS}, got {cfg.optimizer_name!r}")
    b = cfg.optimizer.get("budget", 0)
    if not isinstance(b, int) or isinstance(b, bool) or b < 0:
        raise ConfigError("optimizer.budget", f"must be a non-negative integer, got {b!r}")

    _unknown(cfg.train, TRAIN_FIELDS - {"B"} | {"preset"}, "train")
    preset = cfg.train.get("preset", "synthetic")
    if preset not in (*PRESETS, "social"):
        raise ConfigError("train.preset", f"unknown preset {preset!r}")
    cfg.train_config(cfg.budget, cfg.seed, 100)

    _unknown(cfg.evaluation, {f.name for f in fields(EvalSettings)}, "evaluation")
    ev = cfg.eval_settings(cfg.seed)
    if ev.walks < 1 or ev.horizon < 1 or not 0 <= ev.gamma <= 1:
        raise ConfigError("evaluation", "walks >= 1, horizon >= 1 and gamma in [0, 1] required")

    _unknown(cfg.facility, {"k"}, "facility")
    _unknown(cfg.sweep, {"budgets", "seeds", "optimizers", "instances", "jobs"}, "sweep")
    for key in ("budgets", "seeds"):
        vals = cfg.sweep.get(key)
        if vals is not None and (not isinstance(vals, list) or not vals):
            raise ConfigError(f"sweep.{key}", "must be a non-empty list")
    for i, s in enumerate(cfg.sweep.get("seeds") or []):
        if not _is_seed(s):
            raise ConfigError(f"sweep.seeds[{i}]", "must be an unsigned 64-bit integer")
    for i, o in enumerate(cfg.sweep.get("optimizers") or []):
        if o not in OPTIMIZERS:
            raise ConfigError(f"sweep.optimizers[{i}]", f"must be one of {OPTIMIZERS}")
    for i, inst in enumerate(cfg.sweep.get("instances") or []):
        if not isinstance(inst, dict) or "name" not in inst or "ensemble" not in inst:
            raise ConfigError(f"sweep.instances[{i}]", "needs 'name' and 'ensemble'")
        if "seed" in inst["ensemble"]:
            raise ConfigError(f"sweep.instances[{i}].ensemble.seed", "sweep graph seeds come from sweep.seeds")
        cfg.ensemble_config(inst["ensemble"])


def parse_config(data: Any, base_dir: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    _unknown(data, {"seed", "source", "rewards", "optimizer", "train", "evaluation",
                    "facility", "sweep", "edits", "derived_seeds"}, "<root>")
    if "seed" not in data:
        raise ConfigError("seed", "missing; every run needs an explicit seed")
    if not _is_seed(data["seed"]):
        raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {data['seed']!r}")
    if "source" not in data:
        raise ConfigError("source", "missing; give source.ensemble or source.bundle")
    cfg = ExperimentConfig(
        seed=data["seed"],
        source=_section(data, "source", ""),
        rewards=_section(data, "rewards", ""),
        optimizer=_section(data, "optimizer", ""),
        train=_section(data, "train", ""),
        evaluation=_section(data, "evaluation", ""),
        facility=_section(data, "facility", ""),
        sweep=_section(data, "sweep", ""),
        edits=data.get("edits"),
        base_dir=base_dir,
    )
    _check_types(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"invalid YAML in {path}: {exc}") from None
    return parse_config(data, path.parent)


def dump_config(d: dict) -> str:
    return yaml.safe_dump(d, sort_keys=True, default_flow_style=False)


def provenance_header(d: dict) -> str:
    """The resolved config as ``# ``-prefixed YAML lines for CSV outputs."""
    return "".join(f"# {line}\n" for line in dump_config(d).splitlines())


def read_provenance(text: str) -> dict:
    lines = [ln[2:] for ln in text.splitlines() if ln.startswith("# ")]
    return yaml.safe_load("\n".join(lines))
