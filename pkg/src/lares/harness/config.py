"""Flat key=value run configuration with CLI-flag overrides.

One RunConfig carries every knob for a run (architecture, both training
stages, paths, seed); stage-specific views are materialized on demand.
The text format is diff-able: one `key = value` per line, # comments.
"""

import hashlib
import os
from dataclasses import dataclass, fields

from ..model import ArchitectureConfig
from ..posttrain import RptConfig
from ..pretrain import SptConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # run-level
    seed: int = 0
    data: str = ""
    out: str = ""
    max_len: int = 20
    # architecture
    embed_dim: int = 64
    hidden_dim: int = 256
    pre_layers: int = 2
    core_layers: int = 2
    heads: int = 2
    k_bar: int = 4
    sigma1: float = 1.0
    sigma2: float = 0.5
    aggregation: str = "addition"
    dropout: float = 0.5
    backbone: str = "transformer"
    ffn_dim: int = 0
    fixed_depth: int = 0
    backprop_depth: int = 0
    dtype: str = "float32"
    # pre-training
    alpha: float = 0.1
    gamma: float = 0.1
    tau: float = 1.0
    similarity: str = "dot"
    lr: float = 0.001
    batch_size: int = 1024
    patience: int = 10
    max_epochs: int = 200
    weight_decay: float = 0.0
    # post-training
    group_size: int = 4
    epsilon: float = 0.2
    beta: float = 1.0
    rpt_lr: float = 0.0005
    reward_metric: str = "Recall@10"
    std_floor: float = 1e-8
    inner_updates: int = 1
    rollout_batch: int = 256
    iterations: int = 200
    eval_every: int = 20
    rpt_patience: int = 10
    trials: int = 3
    rank_cutoff: int = 100

    def arch(self):
        return ArchitectureConfig(
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            pre_layers=self.pre_layers,
            core_layers=self.core_layers,
            heads=self.heads,
            k_bar=self.k_bar,
            sigma1=self.sigma1,
            sigma2=self.sigma2,
            aggregation=self.aggregation,
            dropout=self.dropout,
            backbone=self.backbone,
            ffn_dim=self.ffn_dim,
            fixed_depth=self.fixed_depth,
            backprop_depth=self.backprop_depth,
            dtype=self.dtype,
        )

    def spt(self):
        return SptConfig(
            alpha=self.alpha,
            gamma=self.gamma,
            tau=self.tau,
            similarity=self.similarity,
            lr=self.lr,
            batch_size=self.batch_size,
            patience=self.patience,
            max_epochs=self.max_epochs,
            weight_decay=self.weight_decay,
        )

    def rpt(self):
        return RptConfig(
            group_size=self.group_size,
            epsilon=self.epsilon,
            beta=self.beta,
            lr=self.rpt_lr,
            reward_metric=self.reward_metric,
            std_floor=self.std_floor,
            inner_updates=self.inner_updates,
            rollout_batch=self.rollout_batch,
            iterations=self.iterations,
            eval_every=self.eval_every,
            patience=self.rpt_patience,
            trials=self.trials,
            rank_cutoff=self.rank_cutoff,
            weight_decay=self.weight_decay,
        )


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _encode(value):
    if isinstance(value, str):
        return value.replace("\t", "\\t")
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _decode(name, raw):
    ftype = _FIELDS[name].type
    raw = raw.strip()
    try:
        if ftype in (int, "int"):
            return int(raw)
        if ftype in (float, "float"):
            return float(raw)
        return raw.replace("\\t", "\t")
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: {raw!r} ({e})") from None


def serialize_config(cfg):
    lines = [f"{f.name} = {_encode(getattr(cfg, f.name))}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"


def parse_config_text(text, base=None):
    cfg = base if base is not None else RunConfig()
    values = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key = value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {line_no}: unknown config key {key!r}")
        values[key] = _decode(key, raw)
    return RunConfig(**values)


def load_config(path, base=None):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read(), base=base)


def apply_overrides(cfg, overrides):
    """New RunConfig with the given {field: value} replacements."""
    values = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    for key, value in overrides.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        if value is None:
            continue
        values[key] = _decode(key, str(value)) if isinstance(value, str) else value
    return RunConfig(**values)


def config_hash(cfg):
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()[:12]


def default_out_root():
    return os.environ.get("LARES_RUN_DIR", "runs")
