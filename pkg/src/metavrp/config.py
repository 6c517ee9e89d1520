"""Run configuration: flat dotted keys with typed defaults and two presets.

File syntax is one ``section.key = value`` per line; ``#`` starts a comment.
Resolution order is defaults, then preset, then file, then command-line
overrides, and unknown keys are rejected at every stage.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .errors import InvalidArgument, ParseError

DEFAULTS: dict[str, object] = {
    "model.problem": "tsp",
    "model.embed_dim": 64,
    "model.layers": 3,
    "model.heads": 4,
    "model.norm": "batch_no_track",
    "model.feedforward_dim": 256,
    "model.logit_clip": 10.0,
    "model.init_seed": 0,
    "inner.K": 1,
    "inner.alpha": 1e-4,
    "inner.optimizer": "sgd",
    "inner.weight_decay": 0.0,
    "outer.beta": 1e-4,
    "outer.B": 1,
    "outer.rule": "switch",
    "outer.switch_fraction": 0.2,
    "outer.total_iters": 2000,
    "outer.optimizer": "adam",
    "outer.weight_decay": 1e-6,
    "outer.lr_decay": True,
    "scheduler.dists": "uniform,gm_2_5",
    "scheduler.n_min": 10,
    "scheduler.n_max": 20,
    "scheduler.step": 5,
    "scheduler.E_s": 1800,
    "scheduler.eta": 1.0,
    "scheduler.refresh_period": 100,
    "scheduler.probe_size": 32,
    "scheduler.pool_size": 64,
    "scheduler.pool_seed": 0,
    "scheduler.train_on_buckets": True,
    "scheduler.oracle_budget": 50,
    "train.M": 64,
    "train.M_large": 32,
    "train.M_large_above": 150,
    "train.seed": 0,
    "train.diag_every": 0,
    "train.checkpoint_every": 500,
    "train.baseline": "shared",
    "finetune.K": 1,
    "finetune.lr": 1e-5,
    "finetune.pool": 256,
    "finetune.M": 64,
    "finetune.augment": True,
    "eval.task": "tsp:13:rotation",
    "eval.count": 100,
    "eval.seed": 12345,
    "eval.augment8": False,
    "solver.binary": "",
    "solver.format": "tsplib",
    "solver.tag": "external",
}

PRESETS: dict[str, dict[str, object]] = {
    "desk_scale": {},
    "paper_scale": {
        "scheduler.dists": "uniform,gm_1_1,gm_3_10,gm_3_30,gm_3_50,gm_5_10,gm_5_30,gm_5_50,"
                           "gm_7_10,gm_7_30,gm_7_50",
        "scheduler.n_min": 50,
        "scheduler.n_max": 200,
        "scheduler.E_s": 225000,
        "scheduler.eta": 1.0,
        "scheduler.train_on_buckets": False,
        "outer.total_iters": 250000,
        "train.M": 64,
        "train.M_large": 32,
        "train.M_large_above": 150,
        "train.checkpoint_every": 10000,
        "eval.task": "tsp:100:uniform",
    },
}


def _coerce(key: str, raw):
    proto = DEFAULTS[key]
    if not isinstance(raw, str):
        if isinstance(proto, bool) and not isinstance(raw, bool):
            raise InvalidArgument(f"{key} expects a boolean")
        if isinstance(proto, float) and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        if type(raw) is not type(proto):
            raise InvalidArgument(f"{key} expects {type(proto).__name__}, got {raw!r}")
        return raw
    text = raw.strip()
    try:
        if isinstance(proto, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if isinstance(proto, int):
            return int(text)
        if isinstance(proto, float):
            return float(text)
    except ValueError:
        raise InvalidArgument(f"{key} = {raw!r} is not a valid {type(proto).__name__}") from None
    return text


def apply_overrides(cfg: dict, updates: dict, origin: str = "overrides") -> None:
    for key, value in updates.items():
        if key not in DEFAULTS:
            raise InvalidArgument(f"unknown config key {key!r} ({origin})")
        cfg[key] = _coerce(key, value)


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        out[key.strip()] = value.strip()
    return out


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidArgument(f"override {item!r} must look like key=value")
        out[key.strip()] = value.strip()
    return out


def resolve(preset: str | None = "desk_scale", path=None, overrides: dict | None = None) -> dict:
    cfg = dict(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise InvalidArgument(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        apply_overrides(cfg, PRESETS[preset], f"preset {preset}")
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InvalidArgument(f"cannot read config file: {exc}") from exc
        apply_overrides(cfg, parse_config_text(text), str(path))
    apply_overrides(cfg, overrides or {}, "overrides")
    return cfg


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def dump(cfg: dict) -> str:
    return "".join(f"{k} = {format_value(cfg[k])}\n" for k in sorted(cfg))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump(cfg).encode()).hexdigest()[:16]


def section(cfg: dict, name: str) -> dict:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}


# -- builders -----------------------------------------------------------------

def model_config(cfg: dict):
    from .policy import ModelConfig

    m = section(cfg, "model")
    m.pop("init_seed")
    return ModelConfig(**m)


def inner_config(cfg: dict):
    from .meta import InnerConfig

    s = section(cfg, "inner")
    return InnerConfig(K=s["K"], alpha=s["alpha"], optimizer=s["optimizer"],
                       differentiable=s["optimizer"] == "sgd", weight_decay=s["weight_decay"])


def outer_config(cfg: dict):
    from .meta import OuterConfig

    return OuterConfig(**section(cfg, "outer"))


def train_settings(cfg: dict):
    from .meta import TrainSettings

    return TrainSettings(**section(cfg, "train"))


def scheduler_state(cfg: dict):
    from .instances import DistributionSpec
    from .scheduler import SchedulerState

    s = section(cfg, "scheduler")
    dists = [DistributionSpec.parse(d) for d in s["dists"].split(",") if d.strip()]
    return SchedulerState(dists=dists, n_min=s["n_min"], n_max=s["n_max"], E_s=s["E_s"],
                          eta=s["eta"], problem=cfg["model.problem"], step=s["step"],
                          refresh_period=s["refresh_period"], probe_size=s["probe_size"],
                          pool_size=s["pool_size"], train_on_buckets=s["train_on_buckets"])
