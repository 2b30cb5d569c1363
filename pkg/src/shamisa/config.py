"""Run configuration: `section.key = value` documents with presets.

Every hyperparameter lives under one of the sections engine, model,
loss, graphs, ot, optimizer, run, eval. Unknown keys are rejected with
the full key path; values are type- and range-checked when the config
is turned into typed sub-configurations. The SHAMISA_SEED environment
variable overrides the master seed last.
"""

import os

from .engine.batch import EngineConfig
from .model import ModelConfig
from .numgrad.optim import SGDConfig
from .objective import SOURCE_IDS, LossWeights
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration: unknown key, bad type, or bad range."""


_INT, _FLOAT, _BOOL, _STR, _INTS, _STRS = "int", "float", "bool", "str", "ints", "strs"

SCHEMA = {
    "engine.B": _INT,
    "engine.R": _INT,
    "engine.C": _INT,
    "engine.L": _INT,
    "engine.M_d": _INT,
    "engine.crop": _INT,
    "engine.severity_sampling": _STR,
    "engine.fixed_order": _BOOL,
    "engine.discrete_levels": _INT,
    "model.d_h": _INT,
    "model.d_z": _INT,
    "model.blocks": _INTS,
    "model.proj_hidden": _INT,
    "loss.alpha": _FLOAT,
    "loss.beta": _FLOAT,
    "loss.gamma": _FLOAT,
    "loss.eta": _FLOAT,
    "loss.xi": _FLOAT,
    "loss.inv_reduction": _STR,
    "graphs.kappa": _FLOAT,
    "graphs.weight_map": _STR,
    "graphs.k_n": _INT,
    "graphs.K_d": _INT,
    "graphs.k_g_mult": _INT,
    "graphs.w_rr": _FLOAT,
    "graphs.sources": _STRS,
    "graphs.binary": _BOOL,
    "graphs.fixed_mixture": _BOOL,
    "ot.K": _INT,
    "ot.tau_c": _FLOAT,
    "ot.eps_sk": _FLOAT,
    "ot.iterations": _INT,
    "ot.row_topk": _INT,
    "optimizer.lr": _FLOAT,
    "optimizer.momentum": _FLOAT,
    "optimizer.weight_decay": _FLOAT,
    "optimizer.min_lr_factor": _FLOAT,
    "optimizer.period": _INT,
    "optimizer.period_mult": _INT,
    "run.steps": _INT,
    "run.checkpoint_interval": _INT,
    "run.seed": _INT,
    "eval.n_splits": _INT,
    "eval.split_mode": _STR,
}

DESK = {
    "engine.B": 2,
    "engine.R": 3,
    "engine.C": 4,
    "engine.L": 5,
    "engine.M_d": 7,
    "engine.crop": 64,
    "engine.severity_sampling": "folded_normal",
    "engine.fixed_order": False,
    "engine.discrete_levels": 0,
    "model.d_h": 128,
    "model.d_z": 64,
    "model.blocks": (16, 32, 64, 128),
    "model.proj_hidden": 0,
    "loss.alpha": 11.98,
    "loss.beta": 57.21,
    "loss.gamma": 88.37,
    "loss.eta": 0.4906,
    "loss.xi": 0.0342,
    "loss.inv_reduction": "mean",
    "graphs.kappa": 2.0,
    "graphs.weight_map": "exp",
    "graphs.k_n": 7,
    "graphs.K_d": 256,
    "graphs.k_g_mult": 8,
    "graphs.w_rr": 0.5766,
    "graphs.sources": SOURCE_IDS,
    "graphs.binary": False,
    "graphs.fixed_mixture": False,
    "ot.K": 8,
    "ot.tau_c": 0.1,
    "ot.eps_sk": 0.05,
    "ot.iterations": 3,
    "ot.row_topk": 0,
    "optimizer.lr": 1.5e-3,
    "optimizer.momentum": 0.9,
    "optimizer.weight_decay": 1e-4,
    "optimizer.min_lr_factor": 0.01,
    "optimizer.period": 1000,
    "optimizer.period_mult": 2,
    "run.steps": 200,
    "run.checkpoint_interval": 5000,
    "run.seed": 0,
    "eval.n_splits": 10,
    "eval.split_mode": "reference_disjoint",
}

PAPER_A0 = {
    "engine.crop": 224,
    "model.d_h": 2048,
    "model.d_z": 256,
    "graphs.k_n": 31,
    "graphs.K_d": 4096,
    "ot.K": 32,
}

PRESETS = {"desk": {}, "paper-a0": PAPER_A0}


def _parse_value(key, kind, raw):
    raw = raw.strip()
    try:
        if kind == _INT:
            return int(raw)
        if kind == _FLOAT:
            return float(raw)
        if kind == _BOOL:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if kind == _INTS:
            return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
        if kind == _STRS:
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def parse_config_text(text, base=None):
    """Apply `section.key = value` lines on top of a base mapping."""
    out = dict(DESK if base is None else base)
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected 'section.key = value'")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        out[key] = _parse_value(key, SCHEMA[key], raw)
    return out


def load_config(path=None, preset="desk", overrides=None, env=None):
    """Resolve a full config map: preset, then file, then overrides, then env."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset: {preset!r} (have {sorted(PRESETS)})")
    cfg = dict(DESK)
    cfg.update(PRESETS[preset])
    if path is not None:
        with open(path) as f:
            cfg = parse_config_text(f.read(), base=cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = (s.strip() for s in item.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        cfg[key] = _parse_value(key, SCHEMA[key], raw)
    env = os.environ if env is None else env
    if "SHAMISA_SEED" in env:
        cfg["run.seed"] = _parse_value("run.seed", _INT, env["SHAMISA_SEED"])
    return cfg


def to_train_config(cfg):
    """Typed TrainConfig from a resolved map (range checks included)."""
    try:
        engine = EngineConfig(
            B=cfg["engine.B"],
            R=cfg["engine.R"],
            C=cfg["engine.C"],
            L=cfg["engine.L"],
            M_d=cfg["engine.M_d"],
            crop=cfg["engine.crop"],
            severity_sampling=cfg["engine.severity_sampling"],
            fixed_order=cfg["engine.fixed_order"],
            discrete_levels=cfg["engine.discrete_levels"],
        )
        model = ModelConfig(
            blocks=tuple(cfg["model.blocks"]),
            d_h=cfg["model.d_h"],
            d_z=cfg["model.d_z"],
            proj_hidden=cfg["model.proj_hidden"],
            input_size=cfg["engine.crop"],
        )
        weights = LossWeights(
            alpha=cfg["loss.alpha"],
            beta=cfg["loss.beta"],
            gamma=cfg["loss.gamma"],
            eta=cfg["loss.eta"],
            xi=cfg["loss.xi"],
        )
        optimizer = SGDConfig(
            lr=cfg["optimizer.lr"],
            momentum=cfg["optimizer.momentum"],
            weight_decay=cfg["optimizer.weight_decay"],
            min_lr_factor=cfg["optimizer.min_lr_factor"],
            period=cfg["optimizer.period"],
            period_mult=cfg["optimizer.period_mult"],
        )
        return TrainConfig(
            engine=engine,
            model=model,
            weights=weights,
            optimizer=optimizer,
            kappa=cfg["graphs.kappa"],
            weight_map=cfg["graphs.weight_map"],
            k_n=cfg["graphs.k_n"],
            K_d=cfg["graphs.K_d"],
            k_g_mult=cfg["graphs.k_g_mult"],
            w_rr=cfg["graphs.w_rr"],
            sources=tuple(cfg["graphs.sources"]),
            binary_graph=cfg["graphs.binary"],
            fixed_mixture=cfg["graphs.fixed_mixture"],
            inv_reduction=cfg["loss.inv_reduction"],
            K=cfg["ot.K"],
            tau_c=cfg["ot.tau_c"],
            eps_sk=cfg["ot.eps_sk"],
            sinkhorn_iterations=cfg["ot.iterations"],
            ot_row_topk=cfg["ot.row_topk"],
            steps=cfg["run.steps"],
            checkpoint_interval=cfg["run.checkpoint_interval"],
            seed=cfg["run.seed"],
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _format_value(kind, value):
    if kind == _BOOL:
        return "true" if value else "false"
    if kind in (_INTS, _STRS):
        return ",".join(str(v) for v in value)
    if kind == _FLOAT:
        return repr(float(value))
    return str(value)


def write_snapshot(cfg, path):
    """Persist the resolved config for exact replay (sorted, parseable)."""
    with open(path, "w") as f:
        f.write("# resolved configuration snapshot\n")
        for key in sorted(cfg):
            f.write(f"{key} = {_format_value(SCHEMA[key], cfg[key])}\n")
