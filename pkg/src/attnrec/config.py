"""Sectioned ``key = value`` run configuration.

Precedence is ``--set section.key=value`` flags, then the config file, then
the defaults below.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0
    threads: int = 1
    output_dir: str = "out"


@dataclass
class CorpusSection:
    source: str = "synth"  # synth | file
    path: str = ""
    min_user_events: int = 3
    min_item_count: int = 2
    test_fraction: float = 0.2
    boundary: int = -1  # explicit split timestamp; -1 means use test_fraction


@dataclass
class SynthSection:
    n_users: int = 2000
    n_items: int = 1200
    n_clusters: int = 40
    events_per_user: int = 40
    concentration: float = 0.1


@dataclass
class EmbedSection:
    dim: int = 64
    window: int = 5
    negatives: int = 5
    gamma: float = 0.75
    lr: float = 0.025
    epochs: int = 5


@dataclass
class ModelSection:
    depth: int = 10
    hidden: int = 128
    lr: float = 0.002
    batch_size: int = 64
    gamma: float = 0.75
    n_future: int = 10
    n_negatives: int = 100
    patience: int = 5
    decay: float = 0.8
    max_reductions: int = 20
    eval_period: int = 0  # 0 picks max(50, n_train / batch / 10)
    holdout_fraction: float = 0.05
    holdout_cap: int = 2000
    max_history: int = 200
    exclude_observed: bool = False
    fixed_negatives: bool = False
    max_updates: int = 0  # 0 means no cap


@dataclass
class DanSection:
    hidden: int = 128
    layers: int = 2


@dataclass
class WsSection:
    population: int = 0  # 0 picks 4 + floor(3 ln 5)
    iterations: int = 30
    sigma: float = 1.0
    n_negatives: int = 100


@dataclass
class EvalSection:
    gammas: list[float] = field(default_factory=lambda: [1.0, 0.75, 0.0])
    n_negatives: list[int] = field(default_factory=lambda: [100, 500, 1000])
    k_grid: list[int] = field(default_factory=lambda: [1, 5, 10, 20, 50])
    models: list[str] = field(default_factory=lambda: ["attn", "dan", "popularity", "last_item", "weighted_sum"])
    depths: list[int] = field(default_factory=list)
    bootstrap: int = 2000


SECTIONS = {
    "run": RunSection,
    "corpus": CorpusSection,
    "synth": SynthSection,
    "embed": EmbedSection,
    "model": ModelSection,
    "dan": DanSection,
    "ws": WsSection,
    "eval": EvalSection,
}

KNOWN_MODELS = {"attn", "dan", "popularity", "last_item", "weighted_sum"}


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    synth: SynthSection = field(default_factory=SynthSection)
    embed: EmbedSection = field(default_factory=EmbedSection)
    model: ModelSection = field(default_factory=ModelSection)
    dan: DanSection = field(default_factory=DanSection)
    ws: WsSection = field(default_factory=WsSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of every setting except where outputs go."""
        data = self.to_dict()
        del data["run"]["output_dir"]
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_ini(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for key, val in dataclasses.asdict(getattr(self, name)).items():
                if isinstance(val, list):
                    val = ",".join(str(v) for v in val)
                elif isinstance(val, bool):
                    val = "true" if val else "false"
                lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)


def _coerce(raw: str, typ, where: str):
    raw = raw.strip()
    origin = typing.get_origin(typ)
    try:
        if origin is list:
            (inner,) = typing.get_args(typ)
            return [_coerce(part, inner, where) for part in raw.split(",") if part.strip()]
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def apply(cfg: RunConfig, section: str, key: str, raw: str) -> None:
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    types = _field_types(SECTIONS[section])
    if key not in types:
        raise ConfigError(f"unknown key {section}.{key}")
    setattr(getattr(cfg, section), key, _coerce(raw, types[key], f"{section}.{key}"))


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                apply(cfg, section, key, raw)
    for item in overrides or []:
        lhs, sep, raw = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        apply(cfg, section, key, raw)
    validate(cfg)
    return cfg


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: RunConfig) -> None:
    """Check every field against the preconditions of the stage using it."""
    r, c, s, e, m, d, w, ev = cfg.run, cfg.corpus, cfg.synth, cfg.embed, cfg.model, cfg.dan, cfg.ws, cfg.eval
    _require(r.threads >= 1, "run.threads must be >= 1")
    _require(bool(r.output_dir), "run.output_dir must be set")
    _require(c.source in ("synth", "file"), "corpus.source must be 'synth' or 'file'")
    _require(c.source == "synth" or bool(c.path), "corpus.path is required when corpus.source = file")
    _require(c.min_user_events >= 1 and c.min_item_count >= 1, "corpus thresholds must be >= 1")
    _require(0 < c.test_fraction < 1, "corpus.test_fraction must lie in (0, 1)")
    _require(min(s.n_users, s.n_items, s.n_clusters, s.events_per_user) >= 1, "synth sizes must be >= 1")
    _require(s.n_clusters <= s.n_items, "synth.n_clusters cannot exceed synth.n_items")
    _require(s.concentration > 0, "synth.concentration must be positive")
    _require(e.dim >= 1 and e.window >= 1 and e.negatives >= 1 and e.epochs >= 0, "embed sizes invalid")
    _require(0 <= e.gamma <= 1 and e.lr > 0, "embed.gamma must lie in [0, 1] and embed.lr be positive")
    _require(m.depth >= 1 and m.hidden >= 1, "model.depth and model.hidden must be >= 1")
    _require(m.lr > 0 and m.batch_size >= 1, "model.lr and model.batch_size must be positive")
    _require(0 <= m.gamma <= 1, "model.gamma must lie in [0, 1]")
    _require(m.n_future >= 1 and m.n_negatives >= 1, "model.n_future and model.n_negatives must be >= 1")
    _require(m.patience >= 1 and m.max_reductions >= 1, "model.patience and model.max_reductions must be >= 1")
    _require(0 < m.decay < 1, "model.decay must lie in (0, 1)")
    _require(m.eval_period >= 0 and m.max_updates >= 0, "model.eval_period and model.max_updates must be >= 0")
    _require(0 < m.holdout_fraction < 1 and m.holdout_cap >= 1, "model holdout settings invalid")
    _require(m.max_history >= 1, "model.max_history must be >= 1")
    _require(d.hidden >= 1 and d.layers >= 1, "dan sizes must be >= 1")
    _require(w.population >= 0 and w.iterations >= 1 and w.sigma > 0 and w.n_negatives >= 1, "ws settings invalid")
    _require(bool(ev.gammas) and all(0 <= g <= 1 for g in ev.gammas), "eval.gammas must lie in [0, 1]")
    _require(bool(ev.n_negatives) and min(ev.n_negatives) >= 1, "eval.n_negatives must be >= 1")
    _require(bool(ev.k_grid) and min(ev.k_grid) >= 1, "eval.k_grid must be >= 1")
    unknown = set(ev.models) - KNOWN_MODELS
    _require(not unknown, f"unknown eval.models: {sorted(unknown)}")
    _require(bool(ev.models), "eval.models must not be empty")
    _require(all(k >= 1 for k in ev.depths), "eval.depths must be >= 1")
    _require(ev.bootstrap >= 1, "eval.bootstrap must be >= 1")
