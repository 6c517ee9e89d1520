"""Meta-training of the policy initialization.

An *objective* maps a flat parameter tensor and an integer seed to a scalar
loss tensor; the seed fixes every random draw (instances and sampled
trajectories), so the same seed evaluated twice sees the same batch. Inner
adaptation runs K gradient steps on fresh seeds; the outer update then uses
one of the meta-gradient rules below on a separate validation seed.

Rules:
    second_order  gradient of the post-adaptation loss w.r.t. the initialization,
                  differentiating through every inner step
    fomaml        gradient at the adapted parameters, inner Jacobian dropped
    reptile       move the initialization toward the adapted parameters
    switch        second_order for the first ``switch_fraction`` of training, then fomaml
    joint         no adaptation: plain step of size alpha*beta on the inner loss
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import torch

from .errors import InvalidArgument, InvalidState
from .instances import TaskSpec, as_rng, make_instance
from .policy import PolicyParams, greedy_costs, rollout
from .reinforce import exact_expected_cost_tensor, pomo_loss

RULES = ("second_order", "fomaml", "reptile", "switch", "joint")
INNER_OPTIMIZERS = ("sgd", "adam")
OUTER_OPTIMIZERS = ("adam", "sgd")
LR_DECAY_AT = 0.9
LR_DECAY_FACTOR = 10.0
WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class InnerConfig:
    K: int = 1
    alpha: float = 1e-4
    optimizer: str = "sgd"
    differentiable: bool = True
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.K < 1:
            raise InvalidArgument(f"inner steps K must be >= 1, got {self.K}")
        if self.alpha < 0:
            raise InvalidArgument("alpha must be >= 0")
        if self.optimizer not in INNER_OPTIMIZERS:
            raise InvalidArgument(f"unknown inner optimizer {self.optimizer!r}")
        if self.differentiable and self.optimizer != "sgd":
            raise InvalidArgument("differentiable inner loops support sgd steps only")


@dataclass(frozen=True)
class OuterConfig:
    beta: float = 1e-4
    B: int = 1
    rule: str = "switch"
    switch_fraction: float = 0.2
    total_iters: int = 2000
    optimizer: str = "adam"
    weight_decay: float = 1e-6
    lr_decay: bool = True

    def __post_init__(self):
        if self.rule not in RULES:
            raise InvalidArgument(f"unknown rule {self.rule!r}")
        if self.beta < 0 or self.B < 1 or self.total_iters < 0:
            raise InvalidArgument("need beta >= 0, B >= 1, total_iters >= 0")
        if not 0 < self.switch_fraction <= 1:
            raise InvalidArgument("switch_fraction must lie in (0, 1]")
        if self.optimizer not in OUTER_OPTIMIZERS:
            raise InvalidArgument(f"unknown outer optimizer {self.optimizer!r}")


def rule_at(cfg: OuterConfig, e: int) -> str:
    if cfg.rule != "switch":
        return cfg.rule
    return "second_order" if e < cfg.switch_fraction * cfg.total_iters else "fomaml"


def lr_scale(cfg: OuterConfig, e: int) -> float:
    if cfg.lr_decay and e >= LR_DECAY_AT * cfg.total_iters:
        return 1.0 / LR_DECAY_FACTOR
    return 1.0


# -- objectives ---------------------------------------------------------------

class Objective:
    """Scalar loss of a flat parameter tensor under a seeded batch."""

    def __call__(self, values: torch.Tensor, seed: int) -> torch.Tensor:
        raise NotImplementedError

    def last_cost(self) -> float | None:
        return None


class QuadraticObjective(Objective):
    def __init__(self, a: float = 1.0):
        self.a = a

    def __call__(self, values, seed):
        return 0.5 * self.a * (values ** 2).sum()


class LinearObjective(Objective):
    def __init__(self, coef):
        self.coef = torch.as_tensor(coef, dtype=torch.float64)

    def __call__(self, values, seed):
        return (self.coef.to(values.dtype) * values).sum()


class ExactObjective(Objective):
    """Mean exact expected cost over fixed tiny instances (seed ignored)."""

    def __init__(self, instances, template: PolicyParams):
        self.instances = list(instances)
        self.template = template

    def __call__(self, values, seed):
        p = self.template.with_values(values)
        return torch.stack([exact_expected_cost_tensor(i, p) for i in self.instances]).mean()


class PomoObjective(Objective):
    """Multi-start REINFORCE surrogate on M fresh instances of one task."""

    def __init__(self, task: TaskSpec, template: PolicyParams, M: int = 64,
                 S: int | None = None, baseline: str = "shared", augment: bool = False,
                 instances=None):
        if M < 1:
            raise InvalidArgument("M must be >= 1")
        self.task, self.template, self.M = task, template, M
        self.S, self.baseline, self.augment = S, baseline, augment
        self.instances = None if instances is None else list(instances)
        self._last_cost = None

    def draw(self, rng: np.random.Generator):
        if self.instances is None:
            out = [make_instance(self.task, rng) for _ in range(self.M)]
        elif len(self.instances) <= self.M:
            out = list(self.instances)
        else:
            idx = np.sort(rng.choice(len(self.instances), size=self.M, replace=False))
            out = [self.instances[i] for i in idx]
        if self.augment:
            from .env import augment8
            out = [a for inst in out for a in augment8(inst)]
        return out

    def __call__(self, values, seed):
        rng = np.random.default_rng(seed)
        insts = self.draw(rng)
        traj = rollout(insts, self.template.with_values(values), "sample", self.S, rng=rng)
        rep = pomo_loss(traj, self.baseline)
        self._last_cost = rep.mean_cost
        return rep.loss

    def last_cost(self):
        return self._last_cost


# -- inner loop ---------------------------------------------------------------

@dataclass
class InnerTrace:
    losses: list
    seeds: list
    differentiable: bool
    delta: torch.Tensor = field(default=None, repr=False)  # theta_K - theta0


def _adam_step(x, g, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    return x - lr * mhat / (vhat.sqrt() + eps), m, v


def inner_adapt(theta0: torch.Tensor, objective: Objective, cfg: InnerConfig,
                seeds) -> tuple[torch.Tensor, InnerTrace]:
    """K steps from ``theta0``; with ``cfg.differentiable`` the result keeps its graph."""
    seeds = list(seeds)
    if len(seeds) != cfg.K:
        raise InvalidArgument(f"need {cfg.K} inner seeds, got {len(seeds)}")
    diff = cfg.differentiable
    theta = theta0 if diff and theta0.requires_grad else theta0.detach()
    if diff and not theta.requires_grad:
        theta = theta.requires_grad_(True)
    m = v = None
    losses = []
    # accumulate the displacement so theta_K - theta0 is available without cancellation
    start = theta
    delta = torch.zeros_like(theta0.detach())
    for k, seed in enumerate(seeds):
        if not diff:
            theta = theta.detach().requires_grad_(True)
        loss = objective(theta, seed)
        (g,) = torch.autograd.grad(loss, theta, create_graph=diff)
        losses.append(float(loss.detach()))
        if cfg.weight_decay:
            g = g + cfg.weight_decay * theta
        if cfg.optimizer == "sgd":
            step = -cfg.alpha * g
        else:
            if m is None:
                m, v = torch.zeros_like(g), torch.zeros_like(g)
            new, m, v = _adam_step(torch.zeros_like(g), g.detach(), m, v, k + 1, cfg.alpha)
            step = new
        delta = delta + step
        theta = start + delta
    if not diff:
        theta, delta = theta.detach(), delta.detach()
    return theta, InnerTrace(losses, seeds, diff, delta)


def _seeds(rng: np.random.Generator, k: int) -> list[int]:
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=k)]


@dataclass
class TaskGradient:
    grad: torch.Tensor  # direction to subtract (scaled by beta) from theta0
    loss: float  # validation (post-adaptation) loss
    cost: float | None
    theta_k: torch.Tensor


def meta_gradient(theta0: torch.Tensor, objective: Objective, inner: InnerConfig, rule: str,
                  rng) -> TaskGradient:
    """One task's update direction under ``rule`` (not ``switch``; resolve it first)."""
    rng = as_rng(rng)
    inner_seeds, (val_seed,) = _seeds(rng, inner.K), _seeds(rng, 1)
    if rule == "joint":
        theta = theta0.detach().requires_grad_(True)
        loss = objective(theta, inner_seeds[0])
        (g,) = torch.autograd.grad(loss, theta)
        return TaskGradient(inner.alpha * g, float(loss.detach()), objective.last_cost(), theta.detach())
    if rule == "second_order":
        if not inner.differentiable:
            raise InvalidState("second-order meta-gradient needs a differentiable inner loop")
        theta0 = theta0.detach().requires_grad_(True)
        theta_k, _ = inner_adapt(theta0, objective, inner, inner_seeds)
        loss = objective(theta_k, val_seed)
        (g,) = torch.autograd.grad(loss, theta0)
        return TaskGradient(g, float(loss.detach()), objective.last_cost(), theta_k.detach())
    if rule not in ("fomaml", "reptile"):
        raise InvalidArgument(f"rule {rule!r} has no single-task meta-gradient")
    first = replace(inner, differentiable=False)
    theta_k, trace = inner_adapt(theta0.detach(), objective, first, inner_seeds)
    if rule == "reptile":
        return TaskGradient(-trace.delta, float("nan"), None, theta_k)
    tk = theta_k.requires_grad_(True)
    loss = objective(tk, val_seed)
    (g,) = torch.autograd.grad(loss, tk)
    return TaskGradient(g, float(loss.detach()), objective.last_cost(), theta_k.detach())


def meta_gradient_second_order(theta0: torch.Tensor, objective: Objective, inner: InnerConfig,
                               rng) -> torch.Tensor:
    return meta_gradient(theta0, objective, inner, "second_order", rng).grad


# -- outer loop ---------------------------------------------------------------

@dataclass
class MetaState:
    params: PolicyParams
    e: int = 0
    seed: int = 0
    opt_state: dict = field(default_factory=dict)  # adam moments: m, v, t

    @property
    def theta(self) -> torch.Tensor:
        return self.params.values


def outer_update(state: MetaState, objectives, weights, outer: OuterConfig,
                 inner: InnerConfig, rng) -> tuple[MetaState, list[TaskGradient]]:
    """Apply one meta-update from B weighted task objectives; returns the new state."""
    weights = [float(w) for w in weights]
    if len(weights) != len(objectives) or not objectives:
        raise InvalidArgument("one weight per task objective required")
    if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOL:
        raise InvalidArgument(f"task weights sum to {sum(weights)!r}, expected 1")
    rng = as_rng(rng)
    rule = rule_at(outer, state.e)
    scale = lr_scale(outer, state.e)
    inner = replace(inner, alpha=inner.alpha * scale,
                    differentiable=inner.differentiable and rule == "second_order")
    if rule == "second_order" and not inner.differentiable:
        raise InvalidState("second_order rule with a non-differentiable inner config")
    theta0 = state.theta.detach()
    task_grads = [meta_gradient(theta0, obj, inner, rule, rng) for obj in objectives]
    total = sum(w * tg.grad for w, tg in zip(weights, task_grads))
    beta = outer.beta * scale
    opt_state = dict(state.opt_state)
    if rule in ("reptile", "joint"):
        # direct step, no optimizer statistics involved
        new = theta0 - beta * total
    elif outer.optimizer == "sgd":
        g = total + outer.weight_decay * theta0
        new = theta0 - beta * g
    else:
        g = total + outer.weight_decay * theta0
        m = opt_state.get("m", torch.zeros_like(theta0))
        v = opt_state.get("v", torch.zeros_like(theta0))
        t = int(opt_state.get("t", 0)) + 1
        new, m, v = _adam_step(theta0, g, m, v, t, beta)
        opt_state = {"m": m, "v": v, "t": t}
    new_state = MetaState(state.params.with_values(new.detach()), state.e + 1, state.seed, opt_state)
    return new_state, task_grads


# -- diagnostics --------------------------------------------------------------

def sign_cosine(a: torch.Tensor, b: torch.Tensor) -> float:
    sa, sb = torch.sign(a), torch.sign(b)
    # squared norms of sign vectors are integer counts; one sqrt keeps equal signs at exactly 1.0
    na, nb = int(sa.count_nonzero()), int(sb.count_nonzero())
    if na == 0 or nb == 0:
        return 1.0 if bool(torch.equal(sa, sb)) else 0.0
    return float(max(-1.0, min(1.0, float(sa @ sb) / math.sqrt(na * nb))))


def raw_cosine(a: torch.Tensor, b: torch.Tensor) -> float:
    na, nb = a.norm(), b.norm()
    if na == 0 or nb == 0:
        return 1.0 if bool(torch.equal(a, b)) else 0.0
    return float(max(-1.0, min(1.0, float((a @ b) / (na * nb)))))


@dataclass
class GradDiagnostics:
    cos_so_fomaml: float
    cos_so_reptile: float
    cos_fomaml_reptile: float
    slices: dict  # name -> {"so_fomaml": c, "so_reptile": c}
    raw_cos_so_fomaml: float
    second_order: torch.Tensor = field(repr=False)
    fomaml: torch.Tensor = field(repr=False)
    reptile: torch.Tensor = field(repr=False)

    def as_row(self) -> dict:
        row = {"cos_so_fomaml": self.cos_so_fomaml, "cos_so_reptile": self.cos_so_reptile}
        for name, rec in self.slices.items():
            row[f"cos_so_fomaml_{name}"] = rec["so_fomaml"]
            row[f"cos_so_reptile_{name}"] = rec["so_reptile"]
        return row


def layer_slices(params: PolicyParams) -> dict[str, slice]:
    """First (input embedding) and last (decoder) parameter groups."""
    return {"first": params.group_slice("embed."), "last": params.group_slice("dec.")}


def grad_direction_report(theta0: torch.Tensor, objective: Objective, inner: InnerConfig,
                          rng, slices: dict | None = None) -> GradDiagnostics:
    """Second-order, FOMAML and Reptile directions from one shared set of batches."""
    if not inner.differentiable:
        raise InvalidState("grad_direction_report needs a differentiable inner config")
    rng = as_rng(rng)
    inner_seeds, (val_seed,) = _seeds(rng, inner.K), _seeds(rng, 1)
    th0 = theta0.detach().requires_grad_(True)
    theta_k, trace = inner_adapt(th0, objective, inner, inner_seeds)
    loss = objective(theta_k, val_seed)
    g_so, g_fo = torch.autograd.grad(loss, (th0, theta_k))
    alpha = inner.alpha if inner.alpha > 0 else 1.0
    g_rep = -trace.delta.detach() / alpha
    out = {}
    for name, sl in (slices or {}).items():
        out[name] = {"so_fomaml": sign_cosine(g_so[sl], g_fo[sl]),
                     "so_reptile": sign_cosine(g_so[sl], g_rep[sl])}
    return GradDiagnostics(sign_cosine(g_so, g_fo), sign_cosine(g_so, g_rep),
                           sign_cosine(g_fo, g_rep), out, raw_cosine(g_so, g_fo),
                           g_so.detach(), g_fo.detach(), g_rep)


# -- training driver ----------------------------------------------------------

@dataclass
class TrainSettings:
    M: int = 64
    M_large: int = 32
    M_large_above: int = 150  # sizes above this train with M_large instances
    seed: int = 0
    diag_every: int = 0  # 0 disables diagnostics
    checkpoint_every: int = 0
    baseline: str = "shared"

    def M_for(self, n: int) -> int:
        return self.M_large if n > self.M_large_above else self.M


def iteration_rng(seed: int, e: int) -> np.random.Generator:
    return np.random.default_rng([seed, e])


def meta_train(state: MetaState, scheduler, outer: OuterConfig, inner: InnerConfig,
               settings: TrainSettings, log: Callable[[dict], None] | None = None,
               checkpoint: Callable[[MetaState], None] | None = None) -> MetaState:
    """Run iterations ``state.e .. outer.total_iters - 1``; resumable from any state."""
    from .scheduler import refresh_hardness, sample_batch

    while state.e < outer.total_iters:
        t0 = time.perf_counter()
        e = state.e
        rng = iteration_rng(settings.seed, e)
        val_gap = None
        if scheduler.pool and e > 0 and e % scheduler.refresh_period == 0:
            gaps = refresh_hardness(scheduler, state.params, e, rng)
            val_gap = float(np.mean(gaps))
        batch = sample_batch(scheduler, e, outer.B, rng)
        objectives = [PomoObjective(task, state.params, settings.M_for(task.n), baseline=settings.baseline)
                      for task, _ in batch]
        diag = None
        if settings.diag_every and e % settings.diag_every == 0:
            diag_inner = replace(inner, differentiable=True, optimizer="sgd")
            diag = grad_direction_report(state.theta, objectives[0], diag_inner, rng)
        rule = rule_at(outer, e)
        state, task_grads = outer_update(state, objectives, [w for _, w in batch], outer, inner, rng)
        costs = [tg.cost for tg in task_grads if tg.cost is not None]
        rec = {
            "iter": e,
            "task": [{"n": t.n, "dist": t.dist.name} for t, _ in batch],
            "rule_in_effect": rule,
            "loss": float(np.mean([tg.loss for tg in task_grads])) if rule != "reptile" else None,
            "cost": float(np.mean(costs)) if costs else None,
            "val_gap": val_gap,
            "cos_so_fo": diag.cos_so_fomaml if diag else None,
            "cos_so_reptile": diag.cos_so_reptile if diag else None,
            "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3),
        }
        if log is not None:
            log(rec)
        if checkpoint is not None and settings.checkpoint_every and state.e % settings.checkpoint_every == 0:
            checkpoint(state)
    return state


def metrics_writer(path):
    """Append-only JSON-lines logger."""
    fh = open(path, "a")

    def write(rec):
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()

    write.close = fh.close
    return write


# -- few-shot -----------------------------------------------------------------

def few_shot_adapt(params: PolicyParams, task: TaskSpec, K: int, pool_size: int, rng,
                   lr: float = 1e-5, M: int = 64, augment: bool = True,
                   optimizer: str = "adam", pool=None) -> PolicyParams:
    """K fine-tuning steps on a fresh pool of ``pool_size`` instances of ``task``."""
    if K < 0:
        raise InvalidArgument("K must be >= 0")
    if pool_size < 1:
        raise InvalidArgument("pool_size must be >= 1")
    if K == 0:
        return params
    rng = as_rng(rng)
    if pool is None:
        pool = [make_instance(task, rng) for _ in range(pool_size)]
    obj = PomoObjective(task, params, min(M, len(pool)), augment=augment, instances=pool)
    cfg = InnerConfig(K=K, alpha=lr, optimizer=optimizer, differentiable=False)
    theta, _ = inner_adapt(params.values, obj, cfg, _seeds(rng, K))
    return params.with_values(theta)


def evaluate_gap(params: PolicyParams, instances, ref_costs, augment: bool = False) -> float:
    from .oracles import relative_gap

    return relative_gap(greedy_costs(instances, params, augment=augment), ref_costs)
