"""Full-catalog ranking evaluation.

Every instance is scored against the entire item pool (no sampled
negatives, no history masking). Evaluation passes are deterministic:
dropout stays off and the T_0 noise of each instance derives from the
evaluation seed plus stable instance identity, so reruns and
cross-checkpoint comparisons see identical noise.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .model import (
    batch_state_noise,
    catalog_logits,
    forward_states,
    pad_inputs,
    preference_from_state,
)
from .seeding import EVAL, derive_seed


@dataclass
class RankingResult:
    instance: object
    target_rank: int  # 1-based; ties broken toward the lower item index


@dataclass
class MetricsReport:
    split: str
    depth: int
    metrics: dict
    n_instances: int
    checkpoint: str | None = None
    wall_clock_s: float = 0.0

    def to_dict(self):
        return {
            "split": self.split,
            "depth": self.depth,
            "metrics": self.metrics,
            "n_instances": self.n_instances,
            "checkpoint": self.checkpoint,
            "wall_clock_s": self.wall_clock_s,
        }


def recall_at_k(rank, k):
    if rank < 1 or k < 1:
        raise ValueError("rank and K must be >= 1")
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank, k):
    if rank < 1 or k < 1:
        raise ValueError("rank and K must be >= 1")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def _instance_state_seed(eval_seed, inst):
    # stable per instance: a user's splits differ in target or length
    return derive_seed(EVAL, eval_seed, inst.user_index, inst.target, len(inst.input))


def instance_logits(params, instances, depth=None, eval_seed=0, state_seeds=None):
    """Deterministic catalog logits for a (small) list of instances."""
    cfg = params.config
    depth = depth or cfg.inference_depth
    idx, lengths = pad_inputs([inst.input for inst in instances])
    if state_seeds is None:
        state_seeds = [_instance_state_seed(eval_seed, inst) for inst in instances]
    t0 = batch_state_noise(state_seeds, idx.shape[1], cfg.hidden_dim, cfg.sigma1, cfg.np_dtype)
    with T.no_grad():
        _, states = forward_states(params, idx, depth, t0)
        rep = preference_from_state(params, states[-1], lengths)
        logits = catalog_logits(params, rep)
    return logits.data


def target_ranks_for(params, instances, depth=None, eval_seed=0, batch_size=1024):
    """1-based target ranks for every instance, length-bucketed batches."""
    order = sorted(range(len(instances)), key=lambda i: len(instances[i].input))
    ranks = np.empty(len(instances), dtype=np.int64)
    for lo in range(0, len(order), batch_size):
        chunk = [instances[i] for i in order[lo : lo + batch_size]]
        logits = instance_logits(params, chunk, depth, eval_seed)
        targets = np.array([inst.target for inst in chunk], dtype=np.int64)
        ranks[order[lo : lo + batch_size]] = kernels.target_ranks(logits, targets)
    return ranks


def full_rank(params, instance, depth=None, eval_seed=0):
    """Rank the target of one instance against the full item pool."""
    if depth is not None and depth < 1:
        raise ValueError("depth must be >= 1")
    logits = instance_logits(params, [instance], depth, eval_seed)
    rank = kernels.target_ranks(logits, np.array([instance.target], dtype=np.int64))[0]
    return RankingResult(instance=instance, target_rank=int(rank))


def evaluate(params, instances, ks=(5, 10, 20), depth=None, eval_seed=0,
             batch_size=1024, split=None, checkpoint=None):
    """Mean Recall@K / NDCG@K over a split."""
    if not instances:
        raise ValueError("evaluate() needs a non-empty instance list")
    start = time.perf_counter()
    depth = depth or params.config.inference_depth
    ranks = target_ranks_for(params, instances, depth, eval_seed, batch_size)
    metrics = {}
    for k in sorted(ks):
        metrics[f"Recall@{k}"] = float(np.mean(ranks <= k))
        within = ranks <= k
        gains = np.where(within, 1.0 / np.log2(ranks + 1.0), 0.0)
        metrics[f"NDCG@{k}"] = float(gains.mean())
    if split is None:
        names = {inst.split for inst in instances}
        split = names.pop() if len(names) == 1 else "mixed"
    return MetricsReport(
        split=split,
        depth=depth,
        metrics=metrics,
        n_instances=len(instances),
        checkpoint=checkpoint,
        wall_clock_s=time.perf_counter() - start,
    )
