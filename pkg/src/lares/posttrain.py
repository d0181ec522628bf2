"""Reinforcement post-training.

Groups of stochastic rollouts (fresh T_0 noise, dropout off, inference
depth) are scored with ranking metrics; z-scored group rewards become
advantages for a clipped-ratio surrogate with a KL penalty against the
frozen pre-trained reference. Trajectory probability is the product
over steps of the target item's softmax probability at each step's last
position, and ratios after an update are computed by replaying each
rollout's recorded seeds under the current parameters.
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .corpus import split_by_name, split_leave_one_out
from .evalrank import evaluate, target_ranks_for
from .model import (
    ModelParameters,
    SeedRecord,
    batch_state_noise,
    catalog_logits,
    forward_states,
    pad_inputs,
    step_preferences,
)
from .optim import AdamW
from .pretrain import EarlyStopper, TrainingDiverged
from .seeding import DATA, EVAL, ROLLOUT, SHUFFLE, derive_seed, make_rng

_METRIC_RE = re.compile(r"^(Recall|NDCG)@(\d+)$")


def parse_reward_metric(name):
    m = _METRIC_RE.match(name)
    if not m:
        raise ValueError(f"unknown reward metric {name!r}; expected Recall@K or NDCG@K")
    return m.group(1), int(m.group(2))


def reward_from_rank(rank, metric_name):
    kind, k = parse_reward_metric(metric_name)
    if rank <= k:
        return 1.0 if kind == "Recall" else 1.0 / math.log2(rank + 1)
    return 0.0


@dataclass
class RptConfig:
    group_size: int = 4
    epsilon: float = 0.2
    beta: float = 1.0
    lr: float = 0.0005
    reward_metric: str = "Recall@10"
    std_floor: float = 1e-8
    inner_updates: int = 1
    rollout_batch: int = 256
    iterations: int = 200
    eval_every: int = 20
    patience: int = 10
    trials: int = 3
    rank_cutoff: int = 100
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.std_floor <= 0:
            raise ValueError("std_floor must be > 0")
        if self.inner_updates < 1 or self.rollout_batch < 1 or self.iterations < 1:
            raise ValueError("inner_updates, rollout_batch, iterations must be >= 1")
        parse_reward_metric(self.reward_metric)


@dataclass
class RolloutGroup:
    instance: object
    seed_records: list  # G SeedRecords (dropout always off)
    step_logprobs: np.ndarray  # (G, depth) under the sampling policy
    target_ranks: np.ndarray  # (G,) from the final-step distribution
    rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None


@dataclass
class PolicyTriplet:
    """Current policy, rollout-time snapshot, and the frozen reference."""

    current: ModelParameters
    old: ModelParameters
    ref: ModelParameters


# -- data selection ----------------------------------------------------


def filter_trainable(dataset, params, trials=3, rank_cutoff=100, seed=0, instances=None):
    """Keep train instances whose target lands in the top rank_cutoff in
    at least one of `trials` independent stochastic inference passes."""
    if instances is None:
        instances = split_by_name(split_leave_one_out(dataset), "train")
    if not instances:
        return []
    keep = np.zeros(len(instances), dtype=bool)
    for t in range(trials):
        ranks = target_ranks_for(
            params, instances, depth=params.config.inference_depth,
            eval_seed=derive_seed(seed, DATA, t),
        )
        keep |= ranks <= rank_cutoff
    return [inst for inst, ok in zip(instances, keep) if ok]


# -- rollouts ----------------------------------------------------------


def _group_forward(params, instances, seed_grid, depth, want_grad=False):
    """Forward G rollouts per instance in one stacked batch.

    Returns (total_logprob, per_step_logprobs, final_ranks) where
    total_logprob is a graph tensor when want_grad is set. The stacked
    layout is part of the replay contract: rerunning the same instances
    and seeds reproduces the stored values exactly.
    """
    cfg = params.config
    n_inst, g = seed_grid.shape
    inputs = []
    for inst in instances:
        inputs.extend([inst.input] * g)
    idx, lengths = pad_inputs(inputs)
    targets = np.repeat([inst.target for inst in instances], g).astype(np.int64)
    t0 = batch_state_noise(
        [int(s) for s in seed_grid.ravel()], idx.shape[1], cfg.hidden_dim, cfg.sigma1, cfg.np_dtype
    )

    def run():
        _, states = forward_states(params, idx, depth, t0, train=False)
        prefs = step_preferences(params, states, lengths)
        step_lps = []
        logits = None
        for pref in prefs:
            logits = catalog_logits(params, pref)
            step_lps.append(T.softmax_xent(logits, targets) * -1.0)
        ranks = kernels.target_ranks(np.ascontiguousarray(logits.data), targets)
        total = step_lps[0]
        for lp in step_lps[1:]:
            total = total + lp
        per_step = np.stack([lp.data for lp in step_lps], axis=1)
        return total, per_step, ranks

    if want_grad:
        return run()
    with T.no_grad():
        return run()


def rollout_group(policy_old, instance, group_size, rng, depth=None):
    """Sample G replayable rollouts for one instance under the frozen
    sampling policy; rewards and advantages stay unfilled."""
    if group_size < 2:
        raise ValueError("group_size must be >= 2")
    cfg = policy_old.config
    depth = depth or cfg.inference_depth
    seeds = np.array([[int(rng.integers(0, 2 ** 63 - 1)) for _ in range(group_size)]])
    total, per_step, ranks = _group_forward(policy_old, [instance], seeds, depth)
    records = [SeedRecord(int(s), depth, None) for s in seeds[0]]
    return RolloutGroup(
        instance=instance,
        seed_records=records,
        step_logprobs=per_step,
        target_ranks=ranks,
    )


def compute_rewards(group, reward_metric):
    """Ranking-metric reward of each rollout's final distribution."""
    rewards = np.array(
        [reward_from_rank(int(r), reward_metric) for r in group.target_ranks], dtype=np.float64
    )
    group.rewards = rewards
    return rewards


def compute_advantages(rewards, std_floor=1e-8):
    """Z-score within the group using the population std; a spread below
    std_floor yields all-zero advantages."""
    rewards = np.asarray(rewards, dtype=np.float64)
    std = rewards.std()
    if std < std_floor:
        return np.zeros_like(rewards)
    return (rewards - rewards.mean()) / std


def trajectory_logprob(policy, group, rollout_index):
    """Replay one rollout's seeds under `policy` and return the summed
    per-step target log-probability."""
    if not group.seed_records:
        raise ValueError("rollout group has no seed records to replay")
    depth = group.seed_records[0].depth
    seeds = np.array([[rec.state_seed for rec in group.seed_records]])
    total, _, _ = _group_forward(policy, [group.instance], seeds, depth)
    return float(total.data[rollout_index])


# -- objective ---------------------------------------------------------


def grpo_objective(new_lp, old_lp, ref_lp, advantages, epsilon, beta):
    """Mean clipped-surrogate minus beta * KL estimate (to maximize).

    Ratios are exp(new - old); the KL estimator exp(ref-new)-(ref-new)-1
    is nonnegative and zero exactly at new == ref.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must be in (0, 1)")
    new = T.as_tensor(new_lp)
    old = np.asarray(old_lp, dtype=np.float64)
    ref = np.asarray(ref_lp, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    if not (new.shape == old.shape == ref.shape == adv.shape):
        raise ValueError("new/old/ref/advantages must be aligned 1-d arrays")
    ratio = T.exp(new - old)
    if not np.isfinite(ratio.data).all():
        raise FloatingPointError(
            f"non-finite probability ratio; new-old range "
            f"[{np.min(new.data - old)}, {np.max(new.data - old)}]"
        )
    clipped = T.clip(ratio, 1.0 - epsilon, 1.0 + epsilon)
    surrogate = T.minimum(ratio * adv, clipped * adv)
    delta = (-new) + ref
    kl = (T.exp(delta) - delta) - 1.0
    return T.tmean(surrogate - kl * beta)


# -- training loop -----------------------------------------------------


@dataclass
class RptResult:
    params: ModelParameters
    curves: list
    best_metric: float
    init_metric: float
    iterations_run: int


def train_rpt(dataset, spt_params, rpt_config, seed, instances=None, valid_metric="NDCG@10"):
    """GRPO loop: snapshot the sampling policy, roll out groups, score,
    z-score within groups, and ascend the clipped surrogate; the frozen
    reference is the pre-trained checkpoint. Tracks the validation
    metric and returns the best checkpoint seen."""
    cfg = spt_params.config
    if instances is None:
        instances = split_leave_one_out(dataset)
    valid_insts = split_by_name(instances, "valid")
    train_insts = split_by_name(instances, "train")
    if not valid_insts or not train_insts:
        raise ValueError("dataset must provide train and valid splits")

    policies = PolicyTriplet(current=spt_params.copy(), old=spt_params.copy(), ref=spt_params.copy())
    kept = filter_trainable(
        dataset, policies.ref, rpt_config.trials, rpt_config.rank_cutoff, seed, instances=train_insts
    )
    if not kept:
        raise ValueError("data selection removed every training instance")

    opt = AdamW(policies.current.named(), lr=rpt_config.lr, weight_decay=rpt_config.weight_decay)
    eval_seed = derive_seed(seed, EVAL)
    depth = cfg.inference_depth
    g = rpt_config.group_size

    init_report = evaluate(policies.current, valid_insts, ks=(10,), depth=depth, eval_seed=eval_seed)
    init_metric = init_report.metrics[valid_metric]
    stopper = EarlyStopper(rpt_config.patience)
    stopper.update(init_metric)
    best_state = policies.current.state_dict()

    curves = []
    order = []
    cursor = 0
    cycle = 0
    iterations_run = 0
    stopped = False

    for it in range(1, rpt_config.iterations + 1):
        iterations_run = it
        if cursor + rpt_config.rollout_batch > len(order):
            cycle += 1
            order = list(make_rng(seed, SHUFFLE, cycle).permutation(len(kept)))
            cursor = 0
        batch = [kept[i] for i in order[cursor : cursor + rpt_config.rollout_batch]]
        cursor += rpt_config.rollout_batch

        _snapshot(policies.old, policies.current)
        seed_grid = np.array(
            [
                [derive_seed(seed, ROLLOUT, it, row, gi) for gi in range(g)]
                for row in range(len(batch))
            ]
        )
        old_total, _, ranks = _group_forward(policies.old, batch, seed_grid, depth)
        old_lp = old_total.data.astype(np.float64)

        rank_grid = ranks.reshape(len(batch), g)
        rewards = np.array(
            [[reward_from_rank(int(r), rpt_config.reward_metric) for r in row] for row in rank_grid]
        )
        advantages = np.stack([compute_advantages(r, rpt_config.std_floor) for r in rewards])
        adv_ok = _advantage_stats_ok(rewards, advantages, rpt_config.std_floor)

        ref_total, _, _ = _group_forward(policies.ref, batch, seed_grid, depth)
        ref_lp = ref_total.data.astype(np.float64)

        clip_frac = 0.0
        kl_mean = 0.0
        obj_value = 0.0
        for _ in range(rpt_config.inner_updates):
            new_total, _, _ = _group_forward(policies.current, batch, seed_grid, depth, want_grad=True)
            objective = grpo_objective(
                new_total, old_lp, ref_lp, advantages.ravel(), rpt_config.epsilon, rpt_config.beta
            )
            obj_value = objective.item()
            if not math.isfinite(obj_value):
                raise TrainingDiverged(f"non-finite GRPO objective at iteration {it}")
            ratio = np.exp(new_total.data.astype(np.float64) - old_lp)
            clip_frac = float(np.mean(np.abs(ratio - 1.0) > rpt_config.epsilon))
            delta = ref_lp - new_total.data.astype(np.float64)
            kl_mean = float(np.mean(np.exp(delta) - delta - 1.0))
            loss = objective * -1.0
            opt.zero_grad()
            loss.backward()
            opt.step()

        row = {
            "iteration": it,
            "mean_reward": float(rewards.mean()),
            "advantage_std": float(advantages.std()),
            "clip_fraction": clip_frac,
            "mean_kl": kl_mean,
            "objective": obj_value,
            "adv_stats_ok": int(adv_ok),
            "valid_ndcg10": "",
            "valid_recall10": "",
        }
        if not adv_ok:
            raise AssertionError(f"group advantage normalization violated at iteration {it}")

        if it % rpt_config.eval_every == 0 or it == rpt_config.iterations:
            report = evaluate(policies.current, valid_insts, ks=(10,), depth=depth, eval_seed=eval_seed)
            metric = report.metrics[valid_metric]
            row["valid_ndcg10"] = report.metrics["NDCG@10"]
            row["valid_recall10"] = report.metrics["Recall@10"]
            verdict = stopper.update(metric)
            if verdict == "improved":
                best_state = policies.current.state_dict()
            if verdict == "stop":
                stopped = True
        curves.append(row)
        if stopped:
            break

    best = ModelParameters(cfg, spt_params.num_items, spt_params.max_len, {})
    best.tensors = {name: T.parameter(arr) for name, arr in best_state.items()}
    return RptResult(
        params=best,
        curves=curves,
        best_metric=stopper.best,
        init_metric=init_metric,
        iterations_run=iterations_run,
    )


def _snapshot(dst, src):
    for name, t in src.tensors.items():
        dst.tensors[name].data = t.data.copy()


def _advantage_stats_ok(rewards, advantages, std_floor):
    """Zero mean within 1e-9 and unit population std within 1e-6 for
    every group whose reward spread clears the floor."""
    for r, a in zip(rewards, advantages):
        if r.std() < std_floor:
            if np.any(a != 0.0):
                return False
            continue
        if abs(a.mean()) > 1e-9 or abs(a.std() - 1.0) > 1e-6:
            return False
    return True
