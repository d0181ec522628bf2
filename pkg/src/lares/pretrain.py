"""Self-supervised pre-training.

The objective combines next-item cross-entropy with two InfoNCE
alignment terms: trajectory-level (final representations of two
stochastic passes, or of two sequences sharing a target, run at the
same depth) and step-level (an intermediate step against the final step
of the same pass). Positive pairs always share the sampled depth;
mixing depths is a hard error.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .corpus import split_by_name, split_leave_one_out
from .evalrank import evaluate
from .model import (
    ModelParameters,
    catalog_logits,
    forward_states,
    pad_inputs,
    preference_from_state,
    sample_depth,
    step_preferences,
)
from .optim import AdamW
from .seeding import (
    ALIGN_STEP,
    DEPTH,
    DROPOUT,
    EVAL,
    INIT,
    PAIRING,
    SHUFFLE,
    STATE,
    derive_seed,
    make_rng,
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class SptConfig:
    alpha: float = 0.1  # trajectory-level alignment weight
    gamma: float = 0.1  # step-level alignment weight
    tau: float = 1.0
    similarity: str = "dot"  # or "cosine"
    lr: float = 0.001
    batch_size: int = 1024
    patience: int = 10
    max_epochs: int = 200
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("alpha and gamma must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.similarity not in ("dot", "cosine"):
            raise ValueError(f"unknown similarity {self.similarity!r}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class PositivePairing:
    """Partner choice per batch instance plus the shared depth."""

    partner_indices: np.ndarray  # index into the batch
    second_pass: np.ndarray  # True where the partner is a fresh pass of self
    depth: int

    @property
    def sources(self):
        return ["second-pass" if s else "same-target" for s in self.second_pass]


# -- losses ------------------------------------------------------------


def rec_loss(logits, target):
    """-log softmax(logits)[target] for one catalog score vector."""
    logits = np.asarray(logits)
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite logits")
    if not 0 <= target < logits.shape[0]:
        raise ValueError(f"target {target} outside catalog of {logits.shape[0]}")
    losses, _ = kernels.softmax_xent_fwd(
        np.ascontiguousarray(logits[None]), np.array([target], dtype=np.int64)
    )
    return float(losses[0])


def info_nce(x, y_pos, candidates, tau=1.0, similarity="dot"):
    """InfoNCE with one positive against a candidate set containing it."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    x = np.asarray(x, dtype=np.float64)
    y_pos = np.asarray(y_pos, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise ValueError("candidates must be a non-empty (m, d) array")
    pos_rows = np.where((candidates == y_pos).all(axis=1))[0]
    if len(pos_rows) == 0:
        raise ValueError("y_pos must be an element of candidates")
    if similarity == "cosine":
        x = x / max(np.linalg.norm(x), 1e-12)
        norms = np.maximum(np.linalg.norm(candidates, axis=1), 1e-12)
        candidates = candidates / norms[:, None]
        y_sim = float(candidates[pos_rows[0]] @ x)
    elif similarity == "dot":
        y_sim = float(y_pos @ x)
    else:
        raise ValueError(f"unknown similarity {similarity!r}")
    sims = candidates @ x / tau
    m = sims.max()
    return float(m + math.log(np.exp(sims - m).sum()) - y_sim / tau)


def _sim_matrix(a, b, config):
    if config.similarity == "cosine":
        a = T.l2_normalize(a)
        b = T.l2_normalize(b)
    return T.matmul(a, T.transpose(b, (1, 0))) * (1.0 / config.tau)


def _symmetric_infonce(sim):
    diag = np.arange(sim.shape[0])
    fwd = T.tmean(T.softmax_xent(sim, diag))
    rev = T.tmean(T.softmax_xent(T.transpose(sim, (1, 0)), diag))
    return (fwd + rev) * 0.5


def tla_loss(reps, partner_reps, config, depth=None, partner_depth=None):
    """Symmetric in-batch InfoNCE between final representations of the
    two passes; each side's candidate set is the other pass's batch."""
    if depth is not None and partner_depth is not None and depth != partner_depth:
        raise ValueError(f"positive pair with mismatched depths: {depth} vs {partner_depth}")
    reps = T.as_tensor(reps)
    partner_reps = T.as_tensor(partner_reps)
    if reps.shape != partner_reps.shape:
        raise ValueError(f"batch shape mismatch: {reps.shape} vs {partner_reps.shape}")
    return _symmetric_infonce(_sim_matrix(reps, partner_reps, config))


def sample_alignment_step(depth, rng):
    """Uniform intermediate step in {1, ..., depth-1}; needs depth >= 2."""
    if depth < 2:
        raise ValueError("alignment step sampling needs depth >= 2")
    return int(rng.integers(1, depth))


def sla_loss(step_reps, rng, config):
    """Symmetric in-batch InfoNCE between one uniformly sampled
    intermediate step and the final step. Zero at depth 1, where no
    intermediate step exists."""
    depth = len(step_reps)
    if depth < 1:
        raise ValueError("need at least one step representation")
    if depth == 1:
        return T.Tensor(np.zeros((), dtype=T.as_tensor(step_reps[0]).dtype))
    b = sample_alignment_step(depth, rng)
    rb = T.as_tensor(step_reps[b - 1])
    rk = T.as_tensor(step_reps[-1])
    return _symmetric_infonce(_sim_matrix(rb, rk, config))


def spt_objective(l_rec, l_tla, l_sla, alpha, gamma):
    """Weighted sum of the three pre-training terms."""
    if alpha < 0 or gamma < 0:
        raise ValueError("alpha and gamma must be >= 0")
    return l_rec + alpha * l_tla + gamma * l_sla


# -- pairing -----------------------------------------------------------


def select_positive_pairs(batch, rng, depth):
    """Partner each instance with another sharing its target when one
    exists (random choice), else with a fresh stochastic pass of itself.
    The whole batch shares one sampled depth."""
    if not batch:
        raise ValueError("empty batch")
    by_target = {}
    for j, inst in enumerate(batch):
        by_target.setdefault(inst.target, []).append(j)
    partner = np.empty(len(batch), dtype=np.int64)
    second = np.zeros(len(batch), dtype=bool)
    for i, inst in enumerate(batch):
        cands = [j for j in by_target[inst.target] if j != i]
        if cands:
            partner[i] = cands[int(rng.integers(len(cands)))]
        else:
            partner[i] = i
            second[i] = True
    return PositivePairing(partner, second, depth)


# -- training loop -----------------------------------------------------


class EarlyStopper:
    """Strict-improvement early stopping; stops after `patience`
    consecutive non-improving evaluations."""

    def __init__(self, patience):
        self.patience = patience
        self.best = None
        self.bad = 0

    def update(self, metric):
        if self.best is None or metric > self.best:
            self.best = metric
            self.bad = 0
            return "improved"
        self.bad += 1
        return "stop" if self.bad >= self.patience else "continue"


@dataclass
class SptResult:
    params: ModelParameters
    curves: list
    best_epoch: int
    best_metric: float
    epochs_run: int


def _bucketed_batches(order, instances, batch_size):
    """Shuffled order, then length-sorted within coarse chunks so padded
    batches stay dense without losing stochasticity."""
    chunk = batch_size * 8
    batches = []
    for lo in range(0, len(order), chunk):
        part = sorted(order[lo : lo + chunk], key=lambda i: len(instances[i].input))
        for b in range(0, len(part), batch_size):
            batches.append(part[b : b + batch_size])
    return batches


def train_spt(dataset, arch_config, spt_config, seed, instances=None, valid_metric="NDCG@10"):
    """Mini-batch pre-training with early stopping on the validation
    metric at inference depth; returns the best checkpoint and curves."""
    if instances is None:
        instances = split_leave_one_out(dataset)
    train_insts = split_by_name(instances, "train")
    valid_insts = split_by_name(instances, "valid")
    if not train_insts or not valid_insts:
        raise ValueError("dataset must provide train and valid splits")

    cfg = arch_config
    params = ModelParameters.initialize(cfg, dataset.num_items, dataset.max_len, derive_seed(seed, INIT))
    opt = AdamW(params.named(), lr=spt_config.lr, weight_decay=spt_config.weight_decay)
    stopper = EarlyStopper(spt_config.patience)
    eval_seed = derive_seed(seed, EVAL)

    best_state = params.state_dict()
    best_epoch = 0
    curves = []
    epochs_run = 0

    for epoch in range(1, spt_config.max_epochs + 1):
        epochs_run = epoch
        order = list(make_rng(seed, SHUFFLE, epoch).permutation(len(train_insts)))
        sums = {"loss": 0.0, "rec": 0.0, "tla": 0.0, "sla": 0.0}
        steps = 0
        for step, batch_ids in enumerate(_bucketed_batches(order, train_insts, spt_config.batch_size)):
            batch = [train_insts[i] for i in batch_ids]
            losses = _spt_step(params, opt, batch, cfg, spt_config, seed, epoch, step)
            for key in sums:
                sums[key] += losses[key]
            steps += 1

        report = evaluate(params, valid_insts, ks=(10,), depth=cfg.inference_depth, eval_seed=eval_seed)
        metric = report.metrics[valid_metric]
        row = {
            "epoch": epoch,
            "loss": sums["loss"] / steps,
            "rec_loss": sums["rec"] / steps,
            "tla_loss": sums["tla"] / steps,
            "sla_loss": sums["sla"] / steps,
            "valid_recall10": report.metrics["Recall@10"],
            "valid_ndcg10": report.metrics["NDCG@10"],
        }
        curves.append(row)
        verdict = stopper.update(metric)
        if verdict == "improved":
            best_state = params.state_dict()
            best_epoch = epoch
        if verdict == "stop":
            break

    best = ModelParameters(cfg, dataset.num_items, dataset.max_len, {})
    best.tensors = {name: T.parameter(arr) for name, arr in best_state.items()}
    return SptResult(
        params=best,
        curves=curves,
        best_epoch=best_epoch,
        best_metric=stopper.best if stopper.best is not None else float("nan"),
        epochs_run=epochs_run,
    )


def _spt_step(params, opt, batch, cfg, spt_config, seed, epoch, step):
    """One optimization step; returns the loss components as floats."""
    idx, lengths = pad_inputs([inst.input for inst in batch])
    targets = np.array([inst.target for inst in batch], dtype=np.int64)
    n = idx.shape[1]

    if cfg.fixed_depth:
        depth = cfg.fixed_depth
    else:
        depth = sample_depth(cfg.k_bar, cfg.sigma2, make_rng(seed, DEPTH, epoch, step))

    t0 = make_rng(seed, STATE, epoch, step, 0).normal(
        0.0, cfg.sigma1, (len(batch), n, cfg.hidden_dim)
    ).astype(cfg.np_dtype)
    drop_rng = make_rng(seed, DROPOUT, epoch, step, 0)
    _, states = forward_states(params, idx, depth, t0, train=True, rng=drop_rng)
    pref = preference_from_state(params, states[-1], lengths)
    logits = catalog_logits(params, pref)
    l_rec = T.tmean(T.softmax_xent(logits, targets))

    l_tla = 0.0
    if spt_config.alpha > 0:
        pairing = select_positive_pairs(batch, make_rng(seed, PAIRING, epoch, step), depth)
        idx2 = idx[pairing.partner_indices]
        lengths2 = lengths[pairing.partner_indices]
        t0_2 = make_rng(seed, STATE, epoch, step, 1).normal(
            0.0, cfg.sigma1, (len(batch), n, cfg.hidden_dim)
        ).astype(cfg.np_dtype)
        drop_rng2 = make_rng(seed, DROPOUT, epoch, step, 1)
        _, states2 = forward_states(params, idx2, depth, t0_2, train=True, rng=drop_rng2)
        pref2 = preference_from_state(params, states2[-1], lengths2)
        l_tla = tla_loss(pref, pref2, spt_config, depth, pairing.depth)

    l_sla = 0.0
    if spt_config.gamma > 0 and depth >= 2:
        reps = step_preferences(params, states, lengths)
        l_sla = sla_loss(reps, make_rng(seed, ALIGN_STEP, epoch, step), spt_config)

    total = spt_objective(l_rec, l_tla, l_sla, spt_config.alpha, spt_config.gamma)
    value = total.item()
    if not math.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss at epoch {epoch} step {step}: "
            f"rec={_as_float(l_rec)} tla={_as_float(l_tla)} sla={_as_float(l_sla)}"
        )
    opt.zero_grad()
    total.backward()
    opt.step()
    return {
        "loss": value,
        "rec": _as_float(l_rec),
        "tla": _as_float(l_tla),
        "sla": _as_float(l_sla),
    }


def _as_float(x):
    return x.item() if isinstance(x, T.Tensor) else float(x)
