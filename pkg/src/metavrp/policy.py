"""Attention encoder-decoder construction policy over a flat parameter vector.

All forward functions are pure in the parameter tensor, so a parameter
vector produced by a differentiable gradient step (``theta0 - alpha * g``)
can be fed straight back in and differentiated again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .env import (InstanceBatch, RolloutState, apply_action, feasible_actions, init_multistart,
                  make_batch, tour_cost_tensor)
from .errors import InvalidArgument, InvalidState
from .instances import as_rng

NORMS = ("batch_no_track", "instance", "none")
NORM_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    layers: int = 3
    heads: int = 4
    norm: str = "batch_no_track"
    feedforward_dim: int = 256
    logit_clip: float = 10.0
    problem: str = "tsp"

    def __post_init__(self):
        if self.embed_dim <= 0 or self.heads <= 0 or self.embed_dim % self.heads:
            raise InvalidArgument(f"embed_dim={self.embed_dim} not divisible by heads={self.heads}")
        if self.norm not in NORMS:
            raise InvalidArgument(f"unknown norm {self.norm!r}")
        if self.problem not in ("tsp", "cvrp"):
            raise InvalidArgument(f"unknown problem {self.problem!r}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def node_features(self) -> int:
        # cvrp: (x, y, demand, depot flag)
        return 2 if self.problem == "tsp" else 4

    @property
    def context_dim(self) -> int:
        return 2 * self.embed_dim + (1 if self.problem == "cvrp" else 0)


@dataclass(frozen=True)
class Slot:
    name: str
    offset: int
    shape: tuple

    @property
    def size(self) -> int:
        return math.prod(self.shape)


def build_layout(cfg: ModelConfig) -> tuple[Slot, ...]:
    d, f = cfg.embed_dim, cfg.feedforward_dim
    shapes = [("embed.W", (cfg.node_features, d)), ("embed.b", (d,))]
    for i in range(cfg.layers):
        p = f"enc{i}."
        shapes += [(p + "Wq", (d, d)), (p + "Wk", (d, d)), (p + "Wv", (d, d)),
                   (p + "Wo", (d, d)), (p + "bo", (d,))]
        if cfg.norm != "none":
            shapes += [(p + "norm1.g", (d,)), (p + "norm1.b", (d,))]
        shapes += [(p + "W1", (d, f)), (p + "b1", (f,)), (p + "W2", (f, d)), (p + "b2", (d,))]
        if cfg.norm != "none":
            shapes += [(p + "norm2.g", (d,)), (p + "norm2.b", (d,))]
    shapes += [("dec.Wq", (cfg.context_dim, d)), ("dec.Wk", (d, d)), ("dec.Wv", (d, d)),
               ("dec.Wo", (d, d)), ("dec.Wlogit", (d, d))]
    layout, offset = [], 0
    for name, shape in shapes:
        layout.append(Slot(name, offset, shape))
        offset += math.prod(shape)
    return tuple(layout)


@dataclass(frozen=True)
class PolicyParams:
    values: torch.Tensor
    layout: tuple
    config: ModelConfig

    def __post_init__(self):
        total = sum(s.size for s in self.layout)
        if self.values.ndim != 1 or self.values.numel() != total:
            raise InvalidArgument(f"parameter vector has {self.values.numel()} entries, layout needs {total}")

    def with_values(self, values: torch.Tensor) -> "PolicyParams":
        return PolicyParams(values, self.layout, self.config)

    def views(self) -> dict[str, torch.Tensor]:
        return unflatten(self.values, self.layout)

    def slot(self, name: str) -> Slot:
        for s in self.layout:
            if s.name == name:
                return s
        raise KeyError(name)

    def group_slice(self, prefix: str) -> slice:
        """Contiguous index range covering every slot whose name starts with prefix."""
        slots = [s for s in self.layout if s.name.startswith(prefix)]
        if not slots:
            raise KeyError(prefix)
        return slice(slots[0].offset, slots[-1].offset + slots[-1].size)


def unflatten(values: torch.Tensor, layout) -> dict[str, torch.Tensor]:
    return {s.name: values[s.offset:s.offset + s.size].view(s.shape) for s in layout}


def init_params(cfg: ModelConfig, rng=0, dtype=torch.float64) -> PolicyParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; norm scales at 1, shifts at 0."""
    rng = as_rng(rng)
    layout = build_layout(cfg)
    chunks = []
    for s in layout:
        if s.name.endswith(".g"):
            chunks.append(np.ones(s.size))
        elif ".norm" in s.name:
            chunks.append(np.zeros(s.size))
        else:
            fan_in = _bias_fan_in(cfg, s.name) if len(s.shape) == 1 else s.shape[0]
            bound = 1.0 / math.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, size=s.size))
    values = torch.as_tensor(np.concatenate(chunks), dtype=dtype)
    return PolicyParams(values, layout, cfg)


def _bias_fan_in(cfg: ModelConfig, name: str) -> int:
    if name == "embed.b":
        return cfg.node_features
    if name.endswith(".b2"):
        return cfg.feedforward_dim
    return cfg.embed_dim


# -- encoder ------------------------------------------------------------------

def _normalize(x: torch.Tensor, g: torch.Tensor, b: torch.Tensor, mode: str) -> torch.Tensor:
    if mode == "batch_no_track":
        mean = x.mean(dim=(0, 1), keepdim=True)
        var = x.var(dim=(0, 1), unbiased=False, keepdim=True)
    else:
        mean = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + NORM_EPS) * g + b


def _heads(x: torch.Tensor, h: int) -> torch.Tensor:
    # (B, L, d) -> (B, h, L, d/h)
    B, L, d = x.shape
    return x.view(B, L, h, d // h).transpose(1, 2)


def _merge(x: torch.Tensor) -> torch.Tensor:
    B, h, L, dh = x.shape
    return x.transpose(1, 2).reshape(B, L, h * dh)


def node_features(batch: InstanceBatch) -> torch.Tensor:
    if batch.problem == "tsp":
        return batch.coords
    flag = torch.zeros_like(batch.demands)
    flag[:, 0] = 1.0
    return torch.cat([batch.coords, batch.demands[..., None], flag[..., None]], dim=-1)


def encode(instances, params: PolicyParams) -> torch.Tensor:
    """Node embeddings of shape (B, N, embed_dim); a single instance gives (N, embed_dim)."""
    single = not isinstance(instances, (InstanceBatch, list, tuple))
    batch = instances if isinstance(instances, InstanceBatch) else make_batch(instances, params.values.dtype)
    emb = _encode(batch, params)
    return emb[0] if single else emb


def _encode(batch: InstanceBatch, params: PolicyParams) -> torch.Tensor:
    cfg = params.config
    W = params.views()
    x = node_features(batch).to(params.values.dtype)
    h = x @ W["embed.W"] + W["embed.b"]
    for i in range(cfg.layers):
        p = f"enc{i}."
        q = _heads(h @ W[p + "Wq"], cfg.heads)
        k = _heads(h @ W[p + "Wk"], cfg.heads)
        v = _heads(h @ W[p + "Wv"], cfg.heads)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(cfg.head_dim), dim=-1)
        h = h + _merge(att @ v) @ W[p + "Wo"] + W[p + "bo"]
        if cfg.norm != "none":
            h = _normalize(h, W[p + "norm1.g"], W[p + "norm1.b"], cfg.norm)
        ff = torch.relu(h @ W[p + "W1"] + W[p + "b1"]) @ W[p + "W2"] + W[p + "b2"]
        h = h + ff
        if cfg.norm != "none":
            h = _normalize(h, W[p + "norm2.g"], W[p + "norm2.b"], cfg.norm)
    return h


# -- decoder ------------------------------------------------------------------

@dataclass
class DecoderCache:
    emb: torch.Tensor  # (B, N, d)
    mean: torch.Tensor  # (B, d)
    keys: torch.Tensor  # (B, h, N, dh)
    vals: torch.Tensor  # (B, h, N, dh)
    logit_keys: torch.Tensor  # (B, N, d)


def precompute(emb: torch.Tensor, params: PolicyParams) -> DecoderCache:
    if emb.ndim == 2:
        emb = emb[None]
    W = params.views()
    h = params.config.heads
    return DecoderCache(emb, emb.mean(dim=1), _heads(emb @ W["dec.Wk"], h),
                        _heads(emb @ W["dec.Wv"], h), emb @ W["dec.Wlogit"])


def decode_logits(cache: DecoderCache, state: RolloutState, mask: torch.Tensor,
                  params: PolicyParams) -> torch.Tensor:
    """Masked, clipped compatibility logits (B, P, N); infeasible entries are -inf."""
    cfg = params.config
    W = params.views()
    B, P = state.current.shape
    emb = cache.emb
    cur = emb.gather(1, state.current[..., None].expand(B, P, emb.shape[-1]))
    parts = [cache.mean[:, None, :].expand(B, P, -1), cur]
    if cfg.problem == "cvrp":
        parts.append(state.capacity[..., None].to(emb.dtype))
    q = _heads(torch.cat(parts, dim=-1) @ W["dec.Wq"], cfg.heads)  # (B, h, P, dh)
    compat = q @ cache.keys.transpose(-1, -2) / math.sqrt(cfg.head_dim)
    neg = torch.finfo(emb.dtype).min
    compat = compat.masked_fill(~mask[:, None, :, :], neg)
    glimpse = _merge(torch.softmax(compat, dim=-1) @ cache.vals) @ W["dec.Wo"]
    logits = glimpse @ cache.logit_keys.transpose(-1, -2) / math.sqrt(cfg.embed_dim)
    logits = cfg.logit_clip * torch.tanh(logits)
    return logits.masked_fill(~mask, float("-inf"))


def decode_step(embeddings, state: RolloutState, params: PolicyParams, batch: InstanceBatch,
                cache: DecoderCache | None = None, log: bool = False) -> torch.Tensor:
    """Action probabilities (B, P, N) for the next step; infeasible entries are exactly 0."""
    if cache is None:
        cache = precompute(embeddings, params)
    mask = feasible_actions(state, batch)
    if not bool(mask.any(-1).all()):
        raise InvalidState("a trajectory has no feasible action")
    logits = decode_logits(cache, state, mask, params)
    return torch.log_softmax(logits, dim=-1) if log else torch.softmax(logits, dim=-1)


# -- rollouts -----------------------------------------------------------------

@dataclass
class TrajectoryBatch:
    orders: torch.Tensor  # (B, P, T) long, includes the tsp start node
    step_logp: torch.Tensor  # (B, P, T') per decoded step
    total_logp: torch.Tensor  # (B, P)
    cost: torch.Tensor  # (B, P), detached
    mode: str
    batch: InstanceBatch = field(repr=False)

    @property
    def M(self) -> int:
        return self.orders.shape[0]

    @property
    def S(self) -> int:
        return self.orders.shape[1]

    def order(self, m: int, s: int) -> list[int]:
        """Trajectory as a solution order (cvrp padding depots trimmed)."""
        seq = self.orders[m, s].tolist()
        if self.batch.problem == "cvrp":
            while seq and seq[-1] == 0:
                seq.pop()
        return seq

    def best(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-instance minimum cost over trajectories and its index."""
        return self.cost.min(dim=1)


def torch_generator(rng) -> torch.Generator:
    rng = as_rng(rng)
    g = torch.Generator()
    g.manual_seed(int(rng.integers(0, 2**62)))
    return g


def rollout(instances, params: PolicyParams, mode: str = "greedy", S: int | None = None,
            rng=None, starts=None, forced: torch.Tensor | None = None) -> TrajectoryBatch:
    """Construct complete solutions with P trajectories per instance.

    ``mode`` is ``greedy`` (argmax), ``sample`` (needs ``rng``) or ``forced``
    (teacher forcing with ``forced`` (B, P, T) node indices after the start).
    """
    if mode not in ("greedy", "sample", "forced"):
        raise InvalidArgument(f"unknown rollout mode {mode!r}")
    batch = instances if isinstance(instances, InstanceBatch) else make_batch(instances, params.values.dtype)
    gen = None
    if mode == "sample":
        if rng is None:
            raise InvalidArgument("sample mode requires rng")
        gen = rng if isinstance(rng, torch.Generator) else torch_generator(rng)
    if mode == "forced" and forced is None:
        raise InvalidArgument("forced mode requires forced actions")
    emb = _encode(batch, params)
    cache = precompute(emb, params)
    state = init_multistart(batch, S, starts)
    B, P = state.current.shape
    step_logps = []
    t = 0
    max_steps = batch.n if batch.problem == "tsp" else 2 * batch.n + 1
    while not state.is_terminal():
        if t >= max_steps:
            raise InvalidState("rollout did not terminate")
        mask = feasible_actions(state, batch)
        logits = decode_logits(cache, state, mask, params)
        logp = torch.log_softmax(logits, dim=-1)
        if mode == "greedy":
            act = logp.argmax(-1)
        elif mode == "sample":
            probs = logp.detach().exp().view(B * P, -1)
            act = torch.multinomial(probs, 1, generator=gen).view(B, P)
        else:
            act = forced[..., t]
        chosen = logp.gather(2, act[..., None]).squeeze(-1)
        step_logps.append(chosen)
        state = apply_action(state, act, batch, check=(mode == "forced"))
        t += 1
    orders = state.order_tensor()
    step_logp = torch.stack(step_logps, dim=-1)
    cost = tour_cost_tensor(batch.coords, orders, batch.problem).detach()
    return TrajectoryBatch(orders, step_logp, step_logp.sum(-1), cost, mode, batch)


def greedy_costs(instances, params: PolicyParams, S: int | None = None, augment: bool = False) -> np.ndarray:
    """Best-over-starts greedy cost per instance, optionally min over the x8 augmentations."""
    from .env import augment8

    instances = list(instances)
    with torch.no_grad():
        plain = rollout(instances, params, "greedy", S).best()[0].numpy()
        if not augment:
            return plain
        # one batch per map: batch statistics then match the plain rollout for the identity
        variants = [augment8(inst) for inst in instances]
        best = plain.copy()
        for k in range(1, 8):
            cost = rollout([v[k] for v in variants], params, "greedy", S).best()[0].numpy()
            best = np.minimum(best, cost)
        return best


def greedy_solutions(instances, params: PolicyParams, S: int | None = None) -> list[list[int]]:
    instances = list(instances)
    with torch.no_grad():
        traj = rollout(instances, params, "greedy", S)
    idx = traj.best()[1].tolist()
    return [traj.order(m, s) for m, s in enumerate(idx)]
