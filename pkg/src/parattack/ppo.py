"""PPO update machinery for the latent-space attack.

Everything here is plain numpy with hand-derived gradients: reward, advantage
normalization, importance ratios, the clipped surrogate, a one-hidden-layer
value baseline, the three-term objective, and bias-corrected Adam with a
separate learning rate per parameter group (mu, lambda_pre, value weights).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .policy import SIGMA_FLOOR, GaussianPolicy, log_density_batch, softplus

# Importance-ratio exponent clamp: keeps exp() finite even for pathological
# log-density gaps; gradient is treated as zero where the clamp is active.
RATIO_EXP_CLAMP = 30.0


# ---------------------------------------------------------------------------
# Value baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValueNetwork:
    """Scalar baseline V(z) = w2 . tanh(w1 z + b1) + b2."""

    w1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: float

    def __post_init__(self):
        for name in ("w1", "b1", "w2"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "b2", float(self.b2))
        h, d = self.w1.shape
        if self.b1.shape != (h,) or self.w2.shape != (h,):
            raise ValueError("value network weight shapes are inconsistent")
        if not all(np.all(np.isfinite(a)) for a in (self.w1, self.b1, self.w2)) or not np.isfinite(self.b2):
            raise ValueError("value network weights must be finite")

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def initial(cls, dim: int, hidden: int = 64, rng_seed: int = 0) -> "ValueNetwork":
        """Small random init scaled like 1/sqrt(fan-in); b2 starts at 0."""
        rng = np.random.default_rng(rng_seed)
        w1 = rng.standard_normal((hidden, dim)) / np.sqrt(dim)
        b1 = np.zeros(hidden)
        w2 = rng.standard_normal(hidden) / np.sqrt(hidden)
        return cls(w1=w1, b1=b1, w2=w2, b2=0.0)


def value_predict(net: ValueNetwork, z: np.ndarray) -> float:
    z = np.asarray(z, dtype=float)
    if z.shape != (net.dim,):
        raise ValueError(f"dimension mismatch: z has shape {z.shape}, net expects ({net.dim},)")
    return float(net.w2 @ np.tanh(net.w1 @ z + net.b1) + net.b2)


def value_predict_batch(net: ValueNetwork, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != net.dim:
        raise ValueError(f"expected (n, {net.dim}) batch, got shape {z.shape}")
    return np.tanh(z @ net.w1.T + net.b1) @ net.w2 + net.b2


# ---------------------------------------------------------------------------
# Scalar PPO pieces
# ---------------------------------------------------------------------------

def compute_reward(iou: float) -> float:
    """Reward is the negated IoU, so lower overlap means higher reward."""
    if not 0.0 <= iou <= 1.0:
        raise ValueError(f"iou must lie in [0, 1], got {iou}")
    return -iou


def normalize_advantages(rewards, baselines, eps_adv: float) -> np.ndarray:
    """Center and scale reward-minus-baseline residuals (population std).

    A batch whose rewards are all identical carries no preference signal, so
    it yields exactly zero advantages even when the baselines vary; otherwise
    baseline noise would be normalized up to full-size advantages."""
    rewards = np.asarray(rewards, dtype=float)
    r = rewards - np.asarray(baselines, dtype=float)
    if r.ndim != 1 or r.size < 1:
        raise ValueError("rewards/baselines must be non-empty equal-length vectors")
    if rewards.max() == rewards.min():
        return np.zeros_like(r)
    return (r - r.mean()) / (r.std() + eps_adv)


def importance_ratio(logp_new: float, logp_old: float) -> float:
    """exp(logp_new - logp_old) with the exponent clamped to +-30."""
    return float(np.exp(np.clip(logp_new - logp_old, -RATIO_EXP_CLAMP, RATIO_EXP_CLAMP)))


def clipped_surrogate(rho: float, advantage: float, eps_clip: float) -> float:
    """min(rho*A, clip(rho, 1-eps, 1+eps)*A), the PPO trust-region term."""
    if not 0.0 < eps_clip < 1.0:
        raise ValueError(f"eps_clip must lie in (0, 1), got {eps_clip}")
    clipped = min(max(rho, 1.0 - eps_clip), 1.0 + eps_clip)
    return min(rho * advantage, clipped * advantage)


# ---------------------------------------------------------------------------
# Batch, objective, gradients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectiveWeights:
    lambda_adv: float = 1.0
    lambda_sim: float = 0.1
    eps_clip: float = 0.2
    eps_adv: float = 1e-8

    def __post_init__(self):
        if self.lambda_adv < 0 or self.lambda_sim < 0:
            raise ValueError("lambda_adv and lambda_sim must be >= 0")
        if not 0.0 < self.eps_clip < 1.0:
            raise ValueError("eps_clip must lie in (0, 1)")
        if self.eps_adv <= 0:
            raise ValueError("eps_adv must be > 0")


@dataclass(frozen=True)
class PpoBatch:
    """Per-candidate quantities for one update: everything but logp_new/ratio/
    surrogate is held constant while parameters move."""

    z: np.ndarray          # (n, d) sampled latents
    rewards: np.ndarray    # (n,)
    advantages: np.ndarray # (n,) frozen at sampling time
    logp_old: np.ndarray   # (n,) under the pre-update policy
    logp_new: np.ndarray   # (n,) under the current policy
    ratios: np.ndarray     # (n,)
    surrogates: np.ndarray # (n,)

    @property
    def size(self) -> int:
        return self.z.shape[0]


def build_batch(z, rewards, advantages, logp_old, policy: GaussianPolicy,
                eps_clip: float) -> PpoBatch:
    """Evaluate logp/ratio/surrogate for fixed samples under ``policy``."""
    z = np.asarray(z, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    advantages = np.asarray(advantages, dtype=float)
    logp_old = np.asarray(logp_old, dtype=float)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError("batch needs at least one candidate")
    logp_new = log_density_batch(policy, z)
    diffs = np.clip(logp_new - logp_old, -RATIO_EXP_CLAMP, RATIO_EXP_CLAMP)
    ratios = np.exp(diffs)
    clipped = np.clip(ratios, 1.0 - eps_clip, 1.0 + eps_clip)
    surrogates = np.minimum(ratios * advantages, clipped * advantages)
    return PpoBatch(z=z, rewards=rewards, advantages=advantages, logp_old=logp_old,
                    logp_new=logp_new, ratios=ratios, surrogates=surrogates)


class Losses(NamedTuple):
    final: float
    policy: float
    value: float
    sim: float


def total_objective(batch: PpoBatch, weights: ObjectiveWeights, mu: np.ndarray,
                    z0: np.ndarray, values) -> Losses:
    """Three-term loss: -lambda_adv * mean(surrogate) + value MSE + mean anchor."""
    values = np.asarray(values, dtype=float)
    l_policy = -weights.lambda_adv * float(batch.surrogates.mean())
    l_value = float(np.mean((batch.rewards - values) ** 2))
    diff = np.asarray(mu, dtype=float) - np.asarray(z0, dtype=float)
    l_sim = weights.lambda_sim * float(diff @ diff)
    return Losses(final=l_policy + l_value + l_sim, policy=l_policy, value=l_value, sim=l_sim)


@dataclass(frozen=True)
class Gradients:
    mu: np.ndarray
    lambda_pre: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float


def compute_gradients(batch: PpoBatch, weights: ObjectiveWeights,
                      policy: GaussianPolicy, z0: np.ndarray,
                      net: ValueNetwork) -> Gradients:
    """Analytic gradient of the total objective w.r.t. (mu, lambda_pre, psi).

    Advantages, samples, and old log-densities are constants. The policy term
    differentiates through the ratio only where the unclipped branch attains
    the min (standard PPO subgradient) and the exponent clamp is inactive.
    """
    n = batch.size
    sigma_raw = softplus(policy.lambda_pre)
    sigma = np.maximum(sigma_raw, SIGMA_FLOOR)
    resid = (batch.z - policy.mu) / sigma  # (n, d)

    # d surrogate / d ratio: advantage where gradient flows, else 0
    diffs = batch.logp_new - batch.logp_old
    unclamped = np.abs(diffs) < RATIO_EXP_CLAMP
    clipped = np.clip(batch.ratios, 1.0 - weights.eps_clip, 1.0 + weights.eps_clip)
    flows = (batch.ratios * batch.advantages) <= (clipped * batch.advantages)
    dsurr_drho = np.where(flows & unclamped, batch.advantages, 0.0)

    # d ratio / d theta = ratio * d logp_new / d theta
    coef = (-weights.lambda_adv / n) * dsurr_drho * batch.ratios  # (n,)
    dlogp_dmu = resid / sigma                                     # (n, d)
    dlogp_dsigma = (resid * resid - 1.0) / sigma                  # (n, d)
    grad_mu = coef @ dlogp_dmu
    grad_sigma = coef @ dlogp_dsigma
    # softplus derivative; zero where the log-density floor is active
    dsigma_dlam = np.where(sigma_raw >= SIGMA_FLOOR,
                           1.0 / (1.0 + np.exp(-policy.lambda_pre)), 0.0)
    grad_lambda = grad_sigma * dsigma_dlam

    grad_mu = grad_mu + 2.0 * weights.lambda_sim * (policy.mu - np.asarray(z0, dtype=float))

    # Value term: d/dpsi mean (R - V(z))^2
    pre = batch.z @ net.w1.T + net.b1      # (n, h)
    tanh = np.tanh(pre)
    values = tanh @ net.w2 + net.b2
    dv = (2.0 / n) * (values - batch.rewards)  # (n,)
    grad_w2 = dv @ tanh
    grad_b2 = float(dv.sum())
    dhidden = np.outer(dv, net.w2) * (1.0 - tanh * tanh)  # (n, h)
    grad_w1 = dhidden.T @ batch.z
    grad_b1 = dhidden.sum(axis=0)

    return Gradients(mu=grad_mu, lambda_pre=grad_lambda,
                     w1=grad_w1, b1=grad_b1, w2=grad_w2, b2=grad_b2)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamGroup:
    """Moments and step counter for one parameter group; pure-functional."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    t: int
    m: tuple
    v: tuple

    @classmethod
    def initial(cls, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> "AdamGroup":
        m = tuple(np.zeros_like(np.asarray(p, dtype=float)) for p in params)
        v = tuple(np.zeros_like(np.asarray(p, dtype=float)) for p in params)
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=0, m=m, v=v)


def adam_step(group: AdamGroup, params, grads):
    """One bias-corrected Adam step over a group of arrays.

    Returns (new_params, new_group); inputs are not mutated, so identical
    (state, grads) always produce bit-identical outputs.
    """
    if len(params) != len(group.m) or len(grads) != len(group.m):
        raise ValueError("params/grads do not match the Adam state")
    t = group.t + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, group.m, group.v):
        p = np.asarray(p, dtype=float)
        g = np.asarray(g, dtype=float)
        m = group.beta1 * m + (1.0 - group.beta1) * g
        v = group.beta2 * v + (1.0 - group.beta2) * g * g
        m_hat = m / (1.0 - group.beta1 ** t)
        v_hat = v / (1.0 - group.beta2 ** t)
        new_params.append(p - group.lr * m_hat / (np.sqrt(v_hat) + group.eps))
        new_m.append(m)
        new_v.append(v)
    new_group = AdamGroup(lr=group.lr, beta1=group.beta1, beta2=group.beta2,
                          eps=group.eps, t=t, m=tuple(new_m), v=tuple(new_v))
    return new_params, new_group


# ---------------------------------------------------------------------------
# Full update step used by the attack driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerState:
    mu: AdamGroup
    lam: AdamGroup
    value: AdamGroup

    @classmethod
    def initial(cls, policy: GaussianPolicy, net: ValueNetwork,
                lr_mu: float, lr_lambda: float, lr_value: float) -> "OptimizerState":
        return cls(
            mu=AdamGroup.initial([policy.mu], lr_mu),
            lam=AdamGroup.initial([policy.lambda_pre], lr_lambda),
            value=AdamGroup.initial([net.w1, net.b1, net.w2, net.b2], lr_value),
        )


class UpdateResult(NamedTuple):
    policy: GaussianPolicy
    net: ValueNetwork
    opt: OptimizerState
    batch: PpoBatch      # first-pass values (Algorithm order: compute, then update)
    losses: Losses       # first-pass losses
    baselines: np.ndarray


def ppo_update(policy: GaussianPolicy, net: ValueNetwork, opt: OptimizerState,
               z, rewards, weights: ObjectiveWeights, z0,
               inner_steps: int = 1) -> UpdateResult:
    """One PPO iteration on a fixed candidate batch.

    Baselines and advantages are computed once from the incoming parameters
    and frozen; each inner step re-evaluates logp_new / ratios / surrogates
    under the moving policy (with one inner step the ratios are exactly 1).
    """
    if inner_steps < 1:
        raise ValueError("inner_steps must be >= 1")
    z = np.asarray(z, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    baselines = value_predict_batch(net, z)
    advantages = normalize_advantages(rewards, baselines, weights.eps_adv)
    logp_old = log_density_batch(policy, z)

    first_batch = None
    first_losses = None
    for _ in range(inner_steps):
        batch = build_batch(z, rewards, advantages, logp_old, policy, weights.eps_clip)
        losses = total_objective(batch, weights, policy.mu, z0,
                                 value_predict_batch(net, z))
        if first_batch is None:
            first_batch, first_losses = batch, losses
        grads = compute_gradients(batch, weights, policy, z0, net)
        (new_mu,), mu_group = adam_step(opt.mu, [policy.mu], [grads.mu])
        (new_lam,), lam_group = adam_step(opt.lam, [policy.lambda_pre], [grads.lambda_pre])
        (w1, b1, w2, b2), val_group = adam_step(
            opt.value, [net.w1, net.b1, net.w2, net.b2],
            [grads.w1, grads.b1, grads.w2, grads.b2])
        policy = GaussianPolicy(mu=new_mu, lambda_pre=new_lam)
        net = ValueNetwork(w1=w1, b1=b1, w2=w2, b2=float(b2))
        opt = OptimizerState(mu=mu_group, lam=lam_group, value=val_group)

    return UpdateResult(policy=policy, net=net, opt=opt, batch=first_batch,
                        losses=first_losses, baselines=baselines)
