"""Differentiable mechanism design on a finite-horizon Markov reward process.

Mask edges get one logit each. A Gumbel-sigmoid turns logits into soft edge
weights, the weights set the group transition matrices, and a T-step rollout
gives each group's discounted value. An augmented Lagrangian trades total
value against equity across groups and the edit budget. Gradients are
propagated by hand (no autodiff library) and fed to ADAM; the temperature is
annealed and the logits are finally thresholded into a discrete edit set.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np
from scipy.special import expit

from .graph import DiGraph, Edge, EditSet, GroupSpec, RewardSet, weight_matrix

DEFAULT_INIT_LOGIT = -3.0


class TrainingDiverged(RuntimeError):
    """Non-finite loss during training; carries the trajectory so far."""

    def __init__(self, message: str, trajectory: "TrainTrajectory"):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters and schedules for the relaxed edge (or facility) search.

    Defaults are the synthetic-graph settings. ``mu_equity``/``mu_budget``
    scale the quadratic penalties and the per-epoch multiplier updates;
    ``lambda_*`` are the starting multipliers. Constraint terms are active
    from their ``*_start_epoch`` on, and the temperature decays by ``nu``
    every epoch from ``anneal_start_epoch``. ``exact`` uses each group's
    full start distribution instead of ``batch_size`` sampled start states.
    ``absorbing`` makes reward nodes absorb (first-hit values).
    """

    B: float = 400
    T: int = 10
    gamma: float = 0.99
    mu_equity: float = 0.1
    mu_budget: float = 1e-6
    lambda_equity: float = 0.0
    lambda_budget: float = 0.0
    epochs: int = 700
    minibatches_per_epoch: int = 2
    batch_size: int = 64
    lr: float = 0.05
    nu: float = 0.999
    tau0: float = 1.0
    equity_start_epoch: int = 0
    budget_start_epoch: int = 100
    anneal_start_epoch: int = 200
    init_logit: float = DEFAULT_INIT_LOGIT
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    exact: bool = False
    absorbing: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.nu <= 1.0:
            raise ValueError("nu must lie in (0, 1]")
        if self.tau0 <= 0:
            raise ValueError("tau0 must be positive")
        if self.epochs < 0 or self.minibatches_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs >= 0, minibatches_per_epoch >= 1, batch_size >= 1 required")
        if self.epochs > 0:
            for name in ("equity_start_epoch", "budget_start_epoch", "anneal_start_epoch"):
                if getattr(self, name) >= self.epochs:
                    raise ValueError(f"{name}={getattr(self, name)} must be < epochs={self.epochs}")

    def to_dict(self) -> dict:
        return asdict(self)


def synthetic_defaults(**overrides) -> TrainConfig:
    return replace(TrainConfig(), **overrides)


def road_defaults(**overrides) -> TrainConfig:
    base = TrainConfig(B=400, T=10, gamma=0.99, mu_equity=1.0, mu_budget=1e-6, epochs=500, nu=0.995)
    return replace(base, **overrides)


def social_defaults(n: int, **overrides) -> TrainConfig:
    base = TrainConfig(
        B=0.2 * n,
        T=3,
        gamma=0.7,
        mu_equity=10000.0,
        mu_budget=1e-6,
        epochs=1000,
        anneal_start_epoch=300,
        nu=0.995,
    )
    return replace(base, **overrides)


PRESETS = {"synthetic": synthetic_defaults, "road": road_defaults}


def recommended_gamma(T_adv: float) -> float:
    """Largest discount that lets the slowest group catch up to a group
    needing ``T_adv`` expected steps."""
    if T_adv < 1:
        raise ValueError("T_adv must be >= 1")
    return 1.0 - 1.0 / T_adv


# -- rollout ---------------------------------------------------------------


def value_rollout(P: np.ndarray, R: np.ndarray, s0: np.ndarray, T: int, gamma: float) -> float:
    """sum_{t<T} gamma^t R . (s0 pushed t steps through P)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    s = np.asarray(s0, dtype=float)
    total = 0.0
    disc = 1.0
    for t in range(T):
        if t:
            s = s @ P
        total += disc * float(R @ s)
        disc *= gamma
    return total


def group_value(P: np.ndarray, R: np.ndarray, mu_g: np.ndarray, T: int, gamma: float) -> float:
    return value_rollout(P, R, mu_g, T, gamma)


def point_mass(n: int, v: int) -> np.ndarray:
    s = np.zeros(n)
    s[v] = 1.0
    return s


def absorbing_transition(P: np.ndarray, rewards: RewardSet) -> np.ndarray:
    """Reward rows send all mass to a virtual sink, so value counts first hits."""
    Q = P.copy()
    Q[list(rewards.nodes)] = 0.0
    return Q


def sample_start_distribution(mu: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Empirical distribution of ``size`` start states drawn from ``mu``."""
    idx = rng.choice(mu.size, size=size, p=mu)
    return np.bincount(idx, minlength=mu.size) / size


# -- relaxation --------------------------------------------------------------


def gumbel_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    u = rng.random(size)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return -np.log(-np.log(u))


def relax(theta: np.ndarray, tau: float, noise: np.ndarray | None) -> np.ndarray:
    z = theta if noise is None else theta + noise
    return expit(z / tau)


@dataclass
class EdgeLogits:
    """One bias logit per mask edge, ordered like ``DiGraph.mask_array``."""

    values: np.ndarray
    mask: np.ndarray
    n: int
    tau: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=np.int64).reshape(-1, 2)
        if self.values.shape != (len(self.mask),):
            raise ValueError("need exactly one logit per mask edge")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @classmethod
    def init(cls, graph: DiGraph, value: float = DEFAULT_INIT_LOGIT, tau: float = 1.0) -> "EdgeLogits":
        return cls(np.full(len(graph.mask_array), value), graph.mask_array, graph.n, tau)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "edges": [[int(i), int(j), float(v)] for (i, j), v in zip(self.mask, self.values)],
        }


def scatter(n: int, mask: np.ndarray, x: np.ndarray) -> np.ndarray:
    X = np.zeros((n, n))
    if len(mask):
        X[mask[:, 0], mask[:, 1]] = x
    return X


def gumbel_edge_sample(logits: EdgeLogits, seed: int | None, noise_on: bool = True) -> np.ndarray:
    """Dense soft-edit matrix: sigmoid((logit + g) / tau) on each mask edge."""
    noise = gumbel_noise(np.random.default_rng(seed), logits.values.size) if noise_on else None
    return scatter(logits.n, logits.mask, relax(logits.values, logits.tau, noise))


# -- augmented Lagrangian ------------------------------------------------------


@dataclass(frozen=True)
class LossParts:
    total: float
    objective: float
    deviation: float
    excess: float


def equity_deviation(values: np.ndarray) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.abs(v - v.mean()).sum())


def loss(
    values: Sequence[float],
    soft_edit_mass: float,
    config: TrainConfig,
    lambda_equity: float | None = None,
    lambda_budget: float | None = None,
    objective: bool = True,
    equity: bool = True,
    budget: bool = True,
) -> float:
    return loss_parts(
        values, soft_edit_mass, config, lambda_equity, lambda_budget, objective, equity, budget
    ).total


def loss_parts(
    values,
    soft_edit_mass,
    config: TrainConfig,
    lambda_equity=None,
    lambda_budget=None,
    objective=True,
    equity=True,
    budget=True,
) -> LossParts:
    """-sum V + mu_e Dev^2 + lam_e Dev + mu_b Exc^2 + lam_b Exc, with the
    budget excess Exc = max(0, mass - B)."""
    lam_e = config.lambda_equity if lambda_equity is None else lambda_equity
    lam_b = config.lambda_budget if lambda_budget is None else lambda_budget
    v = np.asarray(values, dtype=float)
    dev = equity_deviation(v)
    exc = max(0.0, float(soft_edit_mass) - config.B)
    total = 0.0
    if objective:
        total -= float(v.sum())
    if equity:
        total += config.mu_equity * dev**2 + lam_e * dev
    if budget:
        total += config.mu_budget * exc**2 + lam_b * exc
    return LossParts(total, float(v.sum()), dev, exc)


def update_lagrangians(
    config: TrainConfig, dev: float, exc: float, lambdas: tuple[float, float] | None = None
) -> tuple[float, float]:
    lam_e, lam_b = (config.lambda_equity, config.lambda_budget) if lambdas is None else lambdas
    return lam_e + config.mu_equity * dev, lam_b + config.mu_budget * exc


def value_cotangents(
    values: np.ndarray,
    config: TrainConfig,
    lam_e: float,
    objective: bool,
    equity: bool,
) -> np.ndarray:
    """d(loss)/dV_g. The deviation uses the subgradient sign(V_g - mean)."""
    v = np.asarray(values, dtype=float)
    c = np.zeros_like(v)
    if objective:
        c -= 1.0
    if equity:
        dev = equity_deviation(v)
        s = np.sign(v - v.mean())
        ddev = s - s.mean()
        c += (2.0 * config.mu_equity * dev + lam_e) * ddev
    return c


# -- problems ------------------------------------------------------------------


class Problem(Protocol):
    n: int
    num_params: int
    mus: list[np.ndarray]

    def values(self, x: np.ndarray, dists: Sequence[np.ndarray]) -> tuple[np.ndarray, object]: ...

    def backward(self, cot: np.ndarray, cache: object) -> np.ndarray: ...


def _rollout_states(P: np.ndarray, s0: np.ndarray, T: int) -> np.ndarray:
    S = np.empty((T, s0.size))
    S[0] = s0
    for t in range(1, T):
        S[t] = S[t - 1] @ P
    return S


class EdgeProblem:
    """Learn soft edge additions; each group keeps its own base weights."""

    def __init__(
        self,
        graph: DiGraph,
        groups: Sequence[GroupSpec],
        rewards: RewardSet,
        T: int,
        gamma: float,
        absorbing: bool = False,
    ):
        if not groups:
            raise ValueError("need at least one group")
        self.graph = graph
        self.groups = list(groups)
        self.n = graph.n
        self.mask = graph.mask_array
        self.num_params = len(self.mask)
        self.T = T
        self.gamma = gamma
        self.R = rewards.indicator(graph.n)
        self.rewards = rewards
        self.W0 = [weight_matrix(graph, g) for g in self.groups]
        self.mus = [g.mu0 for g in self.groups]
        self.frozen_rows = np.zeros(self.n, dtype=bool)
        if absorbing:
            self.frozen_rows[list(rewards.nodes)] = True
        self.disc = gamma ** np.arange(T)

    def matrices(self, x: np.ndarray) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        X = scatter(self.n, self.mask, x)
        out = []
        for W0 in self.W0:
            W = W0 + X
            d = W.sum(axis=1)
            live = (d > 0) & ~self.frozen_rows
            P = np.zeros_like(W)
            P[live] = W[live] / d[live, None]
            dead = np.flatnonzero((d <= 0) & ~self.frozen_rows)
            P[dead, dead] = 1.0
            out.append((P, d, live))
        return out

    def values(self, x, dists):
        mats = self.matrices(x)
        vals = np.empty(len(self.groups))
        states = []
        for g, ((P, _, _), s0) in enumerate(zip(mats, dists)):
            S = _rollout_states(P, s0, self.T)
            vals[g] = float(self.disc @ (S @ self.R))
            states.append(S)
        return vals, (mats, states)

    def backward(self, cot, cache):
        mats, states = cache
        gX = np.zeros((self.n, self.n))
        mi, mj = self.mask[:, 0], self.mask[:, 1]
        for c, (P, d, live), S in zip(cot, mats, states):
            if c == 0.0 or self.T < 2:
                continue
            # adjoints a_t = dV/ds_t, a_t = gamma^t R + P a_{t+1}
            A = np.empty_like(S)
            A[-1] = self.disc[-1] * self.R
            for t in range(self.T - 2, -1, -1):
                A[t] = self.disc[t] * self.R + P @ A[t + 1]
            G = S[:-1].T @ A[1:]
            gW = np.zeros_like(G)
            rowdot = np.einsum("ij,ij->i", G[live], P[live])
            gW[live] = (G[live] - rowdot[:, None]) / d[live, None]
            gX += c * gW
        return gX[mi, mj] if self.num_params else np.zeros(0)


# -- optimizer -------------------------------------------------------------------


class Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class Evaluation:
    loss: float
    values: np.ndarray
    deviation: float
    excess: float
    mass: float
    grad: np.ndarray | None = None


def evaluate_logits(
    problem: Problem,
    theta: np.ndarray,
    tau: float,
    noise: np.ndarray | None,
    dists: Sequence[np.ndarray],
    config: TrainConfig,
    lambdas: tuple[float, float] | None = None,
    objective: bool = True,
    equity: bool = True,
    budget: bool = True,
    want_grad: bool = True,
) -> Evaluation:
    """Forward pass and (optionally) the reverse pass for the selected loss terms."""
    lam_e, lam_b = (config.lambda_equity, config.lambda_budget) if lambdas is None else lambdas
    x = relax(theta, tau, noise)
    mass = float(x.sum())
    vals, cache = problem.values(x, dists)
    parts = loss_parts(vals, mass, config, lam_e, lam_b, objective, equity, budget)
    grad = None
    if want_grad:
        cot = value_cotangents(vals, config, lam_e, objective, equity)
        gx = problem.backward(cot, cache) if np.any(cot) else np.zeros(problem.num_params)
        if budget and parts.excess > 0:
            gx = gx + (2.0 * config.mu_budget * parts.excess + lam_b)
        grad = gx * x * (1.0 - x) / tau
    return Evaluation(parts.total, vals, parts.deviation, parts.excess, mass, grad)


def gradient(
    problem: Problem,
    logits: np.ndarray,
    config: TrainConfig,
    seed: int | None,
    tau: float | None = None,
    noise_on: bool = True,
    lambdas: tuple[float, float] | None = None,
) -> np.ndarray:
    """Reverse-mode gradient of the full loss under Gumbel noise fixed by ``seed``."""
    noise = gumbel_noise(np.random.default_rng(seed), problem.num_params) if noise_on else None
    tau = config.tau0 if tau is None else tau
    return evaluate_logits(problem, logits, tau, noise, problem.mus, config, lambdas).grad


# -- training ------------------------------------------------------------------

TRAJECTORY_FIELDS = [
    "epoch",
    "sum_value",
    "mean_value",
    "deviation",
    "soft_mass",
    "tau",
    "lambda_equity",
    "lambda_budget",
]


@dataclass
class EpochRecord:
    epoch: int
    sum_value: float
    mean_value: float
    deviation: float
    soft_mass: float
    tau: float
    lambda_equity: float
    lambda_budget: float


@dataclass
class TrainTrajectory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        buf.write(header)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRAJECTORY_FIELDS)
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(getattr(r, k))) for k in TRAJECTORY_FIELDS[1:]])
        return buf.getvalue()


@dataclass
class TrainResult:
    theta: np.ndarray
    tau: float
    trajectory: TrainTrajectory
    lambdas: tuple[float, float]


def run_training(problem: Problem, config: TrainConfig) -> TrainResult:
    """ADAM over minibatches, alternating constraint and objective steps.

    The first minibatch is a constraint step; the flag flips after every
    minibatch. Each epoch ends with a noise-free, exact-expectation
    measurement that feeds the multiplier updates and the trajectory.
    """
    theta = np.full(problem.num_params, float(config.init_logit))
    adam = Adam(problem.num_params, config.lr, config.beta1, config.beta2, config.eps)
    noise_seq, batch_seq = np.random.SeedSequence(config.seed).spawn(2)
    noise_rng = np.random.default_rng(noise_seq)
    batch_rng = np.random.default_rng(batch_seq)
    tau = config.tau0
    lam = (config.lambda_equity, config.lambda_budget)
    traj = TrainTrajectory()
    constraint_step = True
    for epoch in range(config.epochs):
        eq_on = epoch >= config.equity_start_epoch
        bud_on = epoch >= config.budget_start_epoch
        for _ in range(config.minibatches_per_epoch):
            noise = gumbel_noise(noise_rng, problem.num_params)
            if config.exact:
                dists = problem.mus
            else:
                dists = [sample_start_distribution(mu, config.batch_size, batch_rng) for mu in problem.mus]
            if constraint_step:
                ev = evaluate_logits(
                    problem, theta, tau, noise, dists, config, lam,
                    objective=False, equity=eq_on, budget=bud_on,
                )
            else:
                ev = evaluate_logits(
                    problem, theta, tau, noise, dists, config, lam,
                    objective=True, equity=False, budget=False,
                )
            if not math.isfinite(ev.loss) or not np.all(np.isfinite(ev.grad)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", traj)
            theta = adam.step(theta, ev.grad)
            constraint_step = not constraint_step
        ev = evaluate_logits(problem, theta, tau, None, problem.mus, config, lam, want_grad=False)
        if not math.isfinite(ev.loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", traj)
        lam = (
            lam[0] + config.mu_equity * ev.deviation if eq_on else lam[0],
            lam[1] + config.mu_budget * ev.excess if bud_on else lam[1],
        )
        traj.records.append(
            EpochRecord(
                epoch,
                float(ev.values.sum()),
                float(ev.values.mean()),
                ev.deviation,
                ev.mass,
                tau,
                lam[0],
                lam[1],
            )
        )
        if epoch >= config.anneal_start_epoch:
            tau *= config.nu
    return TrainResult(theta, tau, traj, lam)


def discretize(logits: np.ndarray, mask: np.ndarray, B: float) -> EditSet:
    """Mask edges with sigmoid(logit) > 1/2, cut to the ``B`` largest logits.

    Equal logits are ordered by (u, v).
    """
    logits = np.asarray(logits, dtype=float)
    mask = np.asarray(mask, dtype=np.int64).reshape(-1, 2)
    budget = max(int(math.floor(B)), 0)
    keep = np.flatnonzero(logits > 0.0)
    order = sorted(keep, key=lambda k: (-logits[k], int(mask[k, 0]), int(mask[k, 1])))
    chosen: list[Edge] = [(int(mask[k, 0]), int(mask[k, 1])) for k in order[:budget]]
    return EditSet(frozenset(chosen))


def train(
    graph: DiGraph,
    groups: Sequence[GroupSpec],
    rewards: RewardSet,
    config: TrainConfig,
) -> tuple[EdgeLogits, TrainTrajectory]:
    problem = EdgeProblem(graph, groups, rewards, config.T, config.gamma, config.absorbing)
    result = run_training(problem, config)
    return EdgeLogits(result.theta, graph.mask_array, graph.n, result.tau), result.trajectory


def optimize_edges(
    graph: DiGraph,
    groups: Sequence[GroupSpec],
    rewards: RewardSet,
    config: TrainConfig,
) -> tuple[EditSet, EdgeLogits, TrainTrajectory]:
    logits, traj = train(graph, groups, rewards, config)
    return discretize(logits.values, logits.mask, config.B), logits, traj
