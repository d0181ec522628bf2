"""Depth-recurrent sequential recommender.

Two stacks of causal transformer blocks: a pre-block that encodes the
item sequence once, and a core-block that is iterated an arbitrary
number of steps on a noise-initialized latent state, re-injecting the
encoded sequence at every step. The last position of the final state,
projected back to embedding width when the two differ, scores the whole
catalog by dot product with the item embedding table.

Training depth is drawn per step from a log-normal Poisson sampler with
mean k_bar + 1; inference always runs at k_bar + 1 (or `fixed_depth`
when set, which is the depth-1 baseline mode).
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .seeding import make_rng, state_rng

LN_EPS = 1e-8


class VocabularyError(ValueError):
    """An item index at or beyond the embedding table size."""


@dataclass
class ArchitectureConfig:
    embed_dim: int = 64
    hidden_dim: int = 256
    pre_layers: int = 2
    core_layers: int = 2
    heads: int = 2
    k_bar: int = 4
    sigma1: float = 1.0
    sigma2: float = 0.5
    aggregation: str = "addition"  # or "concatenation"
    dropout: float = 0.5
    backbone: str = "transformer"
    ffn_dim: int = 0  # 0 -> hidden_dim
    fixed_depth: int = 0  # 0 -> sample at train time, k_bar+1 at inference
    backprop_depth: int = 0  # 0 -> gradients through the full unroll
    dtype: str = "float32"

    def __post_init__(self):
        if self.embed_dim <= 0 or self.hidden_dim <= 0:
            raise ValueError("embed_dim and hidden_dim must be positive")
        if self.pre_layers < 1 or self.core_layers < 1:
            raise ValueError("pre_layers and core_layers must be >= 1")
        if self.k_bar < 1:
            raise ValueError("k_bar must be >= 1")
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise ValueError("sigma1 and sigma2 must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.hidden_dim % self.heads != 0:
            raise ValueError("heads must divide hidden_dim")
        if self.aggregation not in ("addition", "concatenation"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; registered: {sorted(BACKBONES)}")
        if self.fixed_depth < 0 or self.backprop_depth < 0:
            raise ValueError("fixed_depth and backprop_depth must be >= 0")

    @property
    def inference_depth(self):
        return self.fixed_depth if self.fixed_depth else self.k_bar + 1

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def has_bridge(self):
        return self.embed_dim != self.hidden_dim

    def to_dict(self):
        return asdict(self)


@dataclass
class SeedRecord:
    """Everything needed to replay one trajectory bit-for-bit."""

    state_seed: int
    depth: int
    dropout_seed: int | None = None


@dataclass
class ReasoningTrajectory:
    h: np.ndarray  # encoded input, (n, hidden)
    states: list  # T_0 .. T_k, each (n, hidden)
    depth: int
    preference: np.ndarray  # scoring vector, (embed,)
    seed_record: SeedRecord


# -- backbone blocks ---------------------------------------------------

_TRANSFORMER_FIELDS = (
    "ln1_gain", "ln1_bias", "w_q", "b_q", "w_k", "b_k", "w_v", "b_v",
    "w_out", "b_out", "ln2_gain", "ln2_bias", "w_ff1", "b_ff1", "w_ff2", "b_ff2",
)


def _xavier(rng, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out)).astype(dtype)


def _transformer_init(cfg, rng):
    dh = cfg.hidden_dim
    ff = cfg.ffn_dim or dh
    dt = cfg.np_dtype
    blk = {
        "ln1_gain": np.ones(dh, dtype=dt),
        "ln1_bias": np.zeros(dh, dtype=dt),
        "w_q": _xavier(rng, dh, dh, dt),
        "b_q": np.zeros(dh, dtype=dt),
        "w_k": _xavier(rng, dh, dh, dt),
        "b_k": np.zeros(dh, dtype=dt),
        "w_v": _xavier(rng, dh, dh, dt),
        "b_v": np.zeros(dh, dtype=dt),
        "w_out": _xavier(rng, dh, dh, dt),
        "b_out": np.zeros(dh, dtype=dt),
        "ln2_gain": np.ones(dh, dtype=dt),
        "ln2_bias": np.zeros(dh, dtype=dt),
        "w_ff1": _xavier(rng, dh, ff, dt),
        "b_ff1": np.zeros(ff, dtype=dt),
        "w_ff2": _xavier(rng, ff, dh, dt),
        "b_ff2": np.zeros(dh, dtype=dt),
    }
    return blk


def _transformer_forward(blk, x, cfg, train, rng):
    b, n, dh = x.shape
    nh = cfg.heads
    hd = dh // nh

    a = T.layernorm(x, blk["ln1_gain"], blk["ln1_bias"], LN_EPS)
    q = T.matmul(a, blk["w_q"]) + blk["b_q"]
    k = T.matmul(a, blk["w_k"]) + blk["b_k"]
    v = T.matmul(a, blk["w_v"]) + blk["b_v"]
    q = T.transpose(T.reshape(q, (b, n, nh, hd)), (0, 2, 1, 3))
    k = T.transpose(T.reshape(k, (b, n, nh, hd)), (0, 2, 1, 3))
    v = T.transpose(T.reshape(v, (b, n, nh, hd)), (0, 2, 1, 3))
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (hd ** -0.5)
    probs = T.causal_softmax(scores)
    if train:
        probs = T.dropout(probs, cfg.dropout, rng)
    ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (b, n, dh))
    o = T.matmul(ctx, blk["w_out"]) + blk["b_out"]
    if train:
        o = T.dropout(o, cfg.dropout, rng)
    x = x + o

    f = T.layernorm(x, blk["ln2_gain"], blk["ln2_bias"], LN_EPS)
    f = T.relu(T.matmul(f, blk["w_ff1"]) + blk["b_ff1"])
    if train:
        f = T.dropout(f, cfg.dropout, rng)
    f = T.matmul(f, blk["w_ff2"]) + blk["b_ff2"]
    if train:
        f = T.dropout(f, cfg.dropout, rng)
    return x + f


class Backbone:
    """Block-family extension point: init builds one block's parameter
    dict, forward maps a causal (batch, n, hidden) tensor to same shape.
    """

    def __init__(self, init, forward, fields):
        self.init = init
        self.forward = forward
        self.fields = fields


BACKBONES = {
    "transformer": Backbone(_transformer_init, _transformer_forward, _TRANSFORMER_FIELDS),
}


def register_backbone(name, init, forward, fields):
    """Register an alternative block family under `name`."""
    BACKBONES[name] = Backbone(init, forward, fields)


# -- parameters --------------------------------------------------------


class ModelParameters:
    """All learnable tensors, addressable by flat dotted names."""

    def __init__(self, config, num_items, max_len, tensors):
        self.config = config
        self.num_items = num_items
        self.max_len = max_len
        self.tensors = tensors

    @classmethod
    def initialize(cls, config, num_items, max_len, seed):
        rng = make_rng(seed)
        dt = config.np_dtype
        bb = BACKBONES[config.backbone]
        tensors = {}

        def put(name, arr):
            tensors[name] = T.parameter(np.ascontiguousarray(arr))

        put("item_emb", rng.normal(0.0, 0.02, (num_items, config.embed_dim)).astype(dt))
        put("pos_emb", rng.normal(0.0, 0.02, (max_len, config.embed_dim)).astype(dt))
        if config.has_bridge:
            put("bridge_up", _xavier(rng, config.embed_dim, config.hidden_dim, dt))
            put("bridge_down", _xavier(rng, config.hidden_dim, config.embed_dim, dt))
        if config.aggregation == "concatenation":
            put("agg_proj", _xavier(rng, 2 * config.hidden_dim, config.hidden_dim, dt))
        put("rec_ln_gain", np.ones(config.hidden_dim, dtype=dt))
        put("rec_ln_bias", np.zeros(config.hidden_dim, dtype=dt))
        for which, layers in (("pre", config.pre_layers), ("core", config.core_layers)):
            for i in range(layers):
                for fname, arr in bb.init(config, rng).items():
                    put(f"{which}.{i}.{fname}", arr)
        return cls(config, num_items, max_len, tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def block(self, which, i):
        prefix = f"{which}.{i}."
        return {name[len(prefix):]: t for name, t in self.tensors.items() if name.startswith(prefix)}

    def named(self):
        return list(self.tensors.items())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def state_dict(self):
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_state_dict(self, state):
        if set(state) != set(self.tensors):
            missing = sorted(set(self.tensors) - set(state))
            extra = sorted(set(state) - set(self.tensors))
            raise ValueError(f"parameter name mismatch: missing={missing} extra={extra}")
        for name, arr in state.items():
            t = self.tensors[name]
            if t.data.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: have {t.data.shape}, loading {arr.shape}")
            t.data = np.ascontiguousarray(arr.astype(t.data.dtype, copy=True))

    def copy(self):
        clone = ModelParameters(self.config, self.num_items, self.max_len, {})
        clone.tensors = {name: T.parameter(t.data.copy()) for name, t in self.tensors.items()}
        return clone

    def all_finite(self):
        return all(np.isfinite(t.data).all() for t in self.tensors.values())


# -- stochastic pieces -------------------------------------------------


def sample_depth(k_bar, sigma2, rng, truncate=True):
    """Draw a reasoning depth from the log-normal Poisson sampler.

    xi ~ Normal(log(k_bar) - sigma2^2/2, sigma2^2), k = Poisson(e^xi) + 1,
    truncated at 3*k_bar. The pre-truncation mean is exactly k_bar + 1.
    """
    if k_bar < 1:
        raise ValueError("k_bar must be >= 1")
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    xi = rng.normal(math.log(k_bar) - 0.5 * sigma2 * sigma2, sigma2)
    k = int(rng.poisson(math.exp(xi))) + 1
    if truncate:
        k = min(k, 3 * k_bar)
    return k


def init_state(n, d, sigma1, rng):
    """Initial latent state with i.i.d. Normal(0, sigma1^2) entries."""
    if sigma1 < 0:
        raise ValueError("sigma1 must be >= 0")
    return rng.normal(0.0, sigma1, (n, d))


def state_noise(seed, n, d, sigma1, dtype):
    """Replayable T_0 for a recorded scalar seed. The first rows are
    invariant to n, so replays are exact regardless of batch padding.
    """
    return state_rng(seed).normal(0.0, sigma1, (n, d)).astype(dtype)


def batch_state_noise(seeds, n, d, sigma1, dtype):
    out = np.empty((len(seeds), n, d), dtype=dtype)
    for i, s in enumerate(seeds):
        out[i] = state_noise(s, n, d, sigma1, dtype)
    return out


# -- forward machinery (batched) ----------------------------------------


def pad_inputs(inputs, dtype=np.int64):
    """Right-pad variable-length index lists into (idx, lengths)."""
    lengths = np.array([len(s) for s in inputs], dtype=np.int64)
    n = int(lengths.max())
    idx = np.zeros((len(inputs), n), dtype=dtype)
    for i, s in enumerate(inputs):
        idx[i, : len(s)] = s
    return idx, lengths


def encode_batch(params, idx, train=False, rng=None):
    """Pre-block encoding of (batch, n) item indices -> (batch, n, hidden)."""
    cfg = params.config
    idx = np.asarray(idx)
    n = idx.shape[1]
    if n < 1:
        raise ValueError("empty input sequence")
    if n > params.max_len:
        raise ValueError(f"input length {n} exceeds max_len {params.max_len}")
    if idx.max() >= params.num_items or idx.min() < 0:
        raise VocabularyError(f"item index out of range [0, {params.num_items})")
    x = T.embedding(params["item_emb"], idx)
    x = x + T.embedding(params["pos_emb"], np.arange(n))
    if train:
        x = T.dropout(x, cfg.dropout, rng)
    if cfg.has_bridge:
        x = T.matmul(x, params["bridge_up"])
    bb = BACKBONES[cfg.backbone]
    for i in range(cfg.pre_layers):
        x = bb.forward(params.block("pre", i), x, cfg, train, rng)
    return x


def core_step_batch(params, t_prev, h, train=False, rng=None):
    """One recurrence step: normalize the aggregate of state and encoded
    input, then run the core blocks."""
    cfg = params.config
    if t_prev.shape != h.shape:
        raise ValueError(f"state/input shape mismatch: {t_prev.shape} vs {h.shape}")
    if cfg.aggregation == "addition":
        z = t_prev + h
    else:
        z = T.matmul(T.concat_last(t_prev, h), params["agg_proj"])
    z = T.layernorm(z, params["rec_ln_gain"], params["rec_ln_bias"], LN_EPS)
    bb = BACKBONES[cfg.backbone]
    for i in range(cfg.core_layers):
        z = bb.forward(params.block("core", i), z, cfg, train, rng)
    return z


def forward_states(params, idx, depth, t0, train=False, rng=None):
    """Encode and iterate the core block `depth` times.

    Returns (h, states) with states = [T_0, ..., T_depth] as graph
    tensors. With backprop_depth > 0, gradients only flow through the
    trailing steps (the encoded input still reaches every step).
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    cfg = params.config
    h = encode_batch(params, idx, train, rng)
    t = t0 if isinstance(t0, Tensor) else Tensor(np.asarray(t0, dtype=cfg.np_dtype))
    states = [t]
    bp = cfg.backprop_depth
    for i in range(1, depth + 1):
        if bp and (depth - i) >= bp:
            t = t.detach()
        t = core_step_batch(params, t, h, train, rng)
        states.append(t)
    return h, states


def preference_from_state(params, state, lengths):
    """Scoring vector for each sequence: last-valid-position row of the
    state, bridged back to embedding width when needed."""
    rep = T.gather_rows(state, np.asarray(lengths) - 1)
    if params.config.has_bridge:
        rep = T.matmul(rep, params["bridge_down"])
    return rep


def step_preferences(params, states, lengths):
    """Per-step scoring vectors for T_1..T_k (skips T_0)."""
    return [preference_from_state(params, s, lengths) for s in states[1:]]


def catalog_logits(params, rep):
    """Dot-product scores against every item embedding (no bias)."""
    return T.matmul(rep, T.transpose(params["item_emb"], (1, 0)))


# -- single-sequence operations ----------------------------------------


def encode_input(params, input_ids):
    """Encoded representation of one sequence, (n, hidden)."""
    with T.no_grad():
        h = encode_batch(params, np.asarray([input_ids]))
    return h.data[0]


def core_step(params, t_prev, h):
    """One recurrence step on single-sequence arrays (n, hidden)."""
    t_prev = np.asarray(t_prev)
    h = np.asarray(h)
    if t_prev.shape != h.shape or t_prev.ndim != 2:
        raise ValueError(f"state/input shape mismatch: {t_prev.shape} vs {h.shape}")
    with T.no_grad():
        out = core_step_batch(params, Tensor(t_prev[None]), Tensor(h[None]))
    return out.data[0]


def reason(params, input_ids, depth=None, rng=None, train=False, seed_record=None):
    """Full latent-reasoning pass over one sequence.

    Either draws fresh seeds from `rng` or replays a SeedRecord; the
    record stored on the returned trajectory always replays it exactly.
    """
    cfg = params.config
    input_ids = list(input_ids)
    n = len(input_ids)
    if seed_record is not None:
        depth = seed_record.depth
        state_seed = seed_record.state_seed
        dropout_seed = seed_record.dropout_seed
        train = train or dropout_seed is not None
    else:
        if depth is None:
            depth = cfg.inference_depth
        if rng is None:
            raise ValueError("reason() needs an rng when no seed_record is given")
        state_seed = int(rng.integers(0, 2 ** 63 - 1))
        dropout_seed = int(rng.integers(0, 2 ** 63 - 1)) if train else None
    if depth < 1:
        raise ValueError("depth must be >= 1")

    t0 = state_noise(state_seed, n, cfg.hidden_dim, cfg.sigma1, cfg.np_dtype)
    drop_rng = state_rng(dropout_seed) if dropout_seed is not None else None
    idx = np.asarray([input_ids])
    with T.no_grad():
        h, states = forward_states(params, idx, depth, t0[None], train=train, rng=drop_rng)
        pref = preference_from_state(params, states[-1], np.array([n]))
    return ReasoningTrajectory(
        h=h.data[0],
        states=[s.data[0] for s in states],
        depth=depth,
        preference=pref.data[0],
        seed_record=SeedRecord(state_seed, depth, dropout_seed),
    )


def score(params, preference):
    """Catalog logits for a single preference vector."""
    p = np.asarray(preference)
    if not np.isfinite(p).all():
        raise ValueError("non-finite preference vector")
    return params["item_emb"].data @ p
