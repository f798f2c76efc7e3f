"""Loss models, update rules and regret accounting.

Predictors are plain float64 numpy vectors kept inside the Euclidean ball of
radius ``R`` centred at the origin; the set diameter is ``D = 2R``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

KINDS = {"quadratic": kernels.QUADRATIC, "logistic": kernels.LOGISTIC}


class ConfigError(ValueError):
    """Invalid scenario or model configuration."""


class ProtocolError(RuntimeError):
    """A protocol reached a state its pseudo-code rules out."""


@dataclass(frozen=True)
class LossModel:
    """Loss plus the distribution of payloads it is evaluated on.

    ``quadratic``: f(w, z) = 0.5 ||w - z||^2, z ~ N(mean, std^2 I).
    ``logistic``: payload is ``(x, y)`` with label y in {-1, +1} stored as the
    last coordinate, f(w, z) = log(1 + exp(-y <w, x>)).
    """

    kind: str
    dim: int
    radius: float
    lipschitz: float
    variance: float
    w_star: np.ndarray
    mean: np.ndarray
    std: float
    theta: np.ndarray | None = None

    @property
    def code(self) -> int:
        return KINDS[self.kind]

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def payload_dim(self) -> int:
        return self.dim + (1 if self.kind == "logistic" else 0)


def project(w, R: float) -> np.ndarray:
    """Euclidean projection onto the ball of radius ``R``."""
    if R <= 0:
        raise ConfigError("radius must be positive")
    return kernels.project(np.ascontiguousarray(w, dtype=np.float64), float(R))


def _check_dims(model: LossModel, w, z):
    w = np.ascontiguousarray(w, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    if w.shape != (model.dim,) or z.shape != (model.payload_dim,):
        raise ConfigError(
            f"dimension mismatch: w{w.shape}, z{z.shape} for {model.kind} model of dim {model.dim}")
    return w, z


def loss_value(model: LossModel, w, z) -> float:
    w, z = _check_dims(model, w, z)
    return kernels.loss(model.code, w, z)


def loss_gradient(model: LossModel, w, z) -> np.ndarray:
    w, z = _check_dims(model, w, z)
    out = np.zeros(model.dim)
    kernels.add_gradient(model.code, w, z, out)
    return out


def quadratic_model(mean, std: float, radius: float) -> LossModel:
    """Quadratic loss with Gaussian payloads.

    A mean outside the ball is pulled back onto it, so the comparator
    (projection of the mean) is the mean itself. L = 1, sigma^2 = d std^2.
    """
    if std < 0:
        raise ConfigError("std must be >= 0")
    mean = project(np.asarray(mean, dtype=np.float64), radius)
    d = mean.shape[0]
    return LossModel("quadratic", d, float(radius), 1.0, d * std * std,
                     mean.copy(), mean, float(std))


def logistic_model(theta, feature_std: float, radius: float, *, seed: int = 0,
                   n_oracle: int = 1_000_000) -> LossModel:
    """Logistic loss on x ~ N(0, s^2 I), P(y=1|x) = sigmoid(<theta, x>).

    The comparator comes from the offline oracle on ``n_oracle`` fresh samples
    and the variance is estimated empirically over several feasible points.
    """
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.shape[0]
    proto = LossModel("logistic", d, float(radius), feature_std ** 2 / 4.0, 0.0,
                      np.zeros(d), np.zeros(d), float(feature_std), theta)
    rng = np.random.default_rng([seed, 0xC0FFEE])
    sample = sample_payloads(proto, rng, n_oracle)
    w_star = offline_minimizer(proto, sample)
    probes = [np.zeros(d), w_star] + [project(rng.normal(size=d), radius) for _ in range(4)]
    var = max(_gradient_variance(proto, w, sample[:200_000]) for w in probes)
    return dataclasses.replace(proto, w_star=w_star, variance=var)


def sample_payloads(model: LossModel, rng: np.random.Generator, n: int) -> np.ndarray:
    if model.kind == "quadratic":
        return model.mean + model.std * rng.standard_normal((n, model.dim))
    x = model.std * rng.standard_normal((n, model.dim))
    p = 1.0 / (1.0 + np.exp(-(x @ model.theta)))
    y = np.where(rng.random(n) < p, 1.0, -1.0)
    return np.ascontiguousarray(np.column_stack([x, y]))


def _batch_gradients(model: LossModel, w, Z):
    x, y = Z[:, :-1], Z[:, -1]
    m = y * (x @ w)
    s = 0.5 * (1.0 - np.tanh(0.5 * m))  # sigmoid(-m), stable
    return -(y * s)[:, None] * x, s


def _gradient_variance(model: LossModel, w, Z) -> float:
    G, _ = _batch_gradients(model, w, Z)
    return float(np.sum(G.var(axis=0)))


def offline_minimizer(model: LossModel, Z, tol: float = 1e-6, max_iter: int = 100) -> np.ndarray:
    """Full-batch minimiser of the empirical logistic risk over the ball.

    Newton steps with backtracking; if the unconstrained optimum leaves the
    ball, falls back to projected gradient until the gradient mapping is below
    ``tol``.
    """
    w = np.zeros(model.dim)
    n = Z.shape[0]
    x = Z[:, :-1]

    def risk(v):
        m = Z[:, -1] * (x @ v)
        return float(np.mean(np.logaddexp(0.0, -m)))

    for _ in range(max_iter):
        G, s = _batch_gradients(model, w, Z)
        g = G.mean(axis=0)
        if np.linalg.norm(g) < tol * 1e-2:
            break
        h = (s * (1.0 - s))[:, None] * x
        H = x.T @ h / n
        step = np.linalg.solve(H, g)
        f0, a = risk(w), 1.0
        while risk(w - a * step) > f0 - 1e-4 * a * g @ step and a > 1e-10:
            a *= 0.5
        w = w - a * step
    if np.linalg.norm(w) <= model.radius:
        return w
    w = project(w, model.radius)
    lr = 1.0 / max(model.lipschitz, 1e-12)
    for _ in range(100_000):
        g = _batch_gradients(model, w, Z)[0].mean(axis=0)
        nxt = project(w - lr * g, model.radius)
        if np.linalg.norm(nxt - w) / lr < tol:
            return nxt
        w = nxt
    return w


def comparator_optimum(model: LossModel) -> np.ndarray:
    """Best fixed predictor in the ball for the expected loss."""
    if model.kind == "quadratic":
        return project(model.mean, model.radius)
    return model.w_star.copy()


@dataclass(frozen=True)
class UpdateRule:
    """Black-box online update applied to averaged mini-batch gradients.

    ``projected-gradient`` uses eta_j = D / (L D + sigma_eff sqrt(j)) at step j;
    ``dual-averaging`` plays P(-G_j / beta_j) with beta_j = 1 / eta_{j+1}.
    ``noise > 0`` makes the rule randomised: a seeded Gaussian perturbation of
    scale ``noise * eta`` per step, reproducible from ``(seed, steps)``.
    """

    kind: str
    radius: float
    lipschitz: float
    sigma_eff: float
    w: np.ndarray
    steps: int = 0
    grad_sum: np.ndarray | None = None
    noise: float = 0.0
    seed: int = 0

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def eta(self, j: int) -> float:
        D = self.diameter
        return D / (self.lipschitz * D + self.sigma_eff * math.sqrt(float(j)))


def make_rule(model: LossModel, b: int = 1, kind: str = "projected-gradient",
              noise: float = 0.0, seed: int = 0) -> UpdateRule:
    if kind not in ("projected-gradient", "dual-averaging"):
        raise ConfigError(f"unknown update rule {kind!r}")
    if b < 1:
        raise ConfigError("batch size must be >= 1")
    w0 = np.zeros(model.dim)
    gs = np.zeros(model.dim) if kind == "dual-averaging" else None
    return UpdateRule(kind, model.radius, model.lipschitz,
                      math.sqrt(model.variance / b), w0, 0, gs, noise, seed)


def update_step(rule: UpdateRule, avg_gradient, batch_count: int) -> UpdateRule:
    """Advance the rule by one averaged gradient; returns the new rule value."""
    if batch_count < 1:
        raise ProtocolError("update with an empty batch")
    g = np.ascontiguousarray(avg_gradient, dtype=np.float64)
    steps = rule.steps + 1
    if rule.kind == "projected-gradient":
        eta = rule.eta(steps)
        w = kernels.pg_step(rule.w, g, eta, rule.radius)
        gs = None
    else:
        gs = rule.grad_sum + g
        eta = rule.eta(steps + 1)
        w = kernels.da_point(gs, 1.0 / eta, rule.radius)
    if rule.noise > 0.0:
        rng = np.random.default_rng([rule.seed, steps])
        w = project(w + rule.noise * eta * rng.standard_normal(w.shape[0]), rule.radius)
    return dataclasses.replace(rule, w=w, steps=steps, grad_sum=gs)


@dataclass
class RegretLedger:
    """Per-example losses at the prediction and at the comparator."""

    seq: list = field(default_factory=list)
    node: list = field(default_factory=list)
    loss_pred: list = field(default_factory=list)
    loss_comp: list = field(default_factory=list)
    epoch: list = field(default_factory=list)
    time: list = field(default_factory=list)

    def add(self, seq_id, node, lp, lc, epoch, time=0.0):
        self.seq.append(seq_id)
        self.node.append(node)
        self.loss_pred.append(lp)
        self.loss_comp.append(lc)
        self.epoch.append(epoch)
        self.time.append(time)

    def __len__(self):
        return len(self.seq)

    def excess(self) -> np.ndarray:
        return np.asarray(self.loss_pred) - np.asarray(self.loss_comp)

    def cumulative(self) -> float:
        return math.fsum(self.excess())

    def regret_over(self, mask) -> float:
        return math.fsum(self.excess()[np.asarray(mask, dtype=bool)])

    def in_seq_order(self) -> "RegretLedger":
        order = np.argsort(np.asarray(self.seq), kind="stable")
        out = RegretLedger()
        for name in ("seq", "node", "loss_pred", "loss_comp", "epoch", "time"):
            col = getattr(self, name)
            setattr(out, name, [col[i] for i in order])
        return out
