"""Diagonal-Gaussian search distribution over the sentence-latent space.

The attack perturbs a query by sampling latent vectors from N(mu, diag(sigma^2))
where mu starts at the encoded query and sigma is reparameterized through a
softplus so it stays strictly positive while its pre-image is unconstrained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Floor applied to sigma inside log-density evaluation only: softplus underflows
# to exactly 0.0 for very negative pre-scales, which would make log(sigma) -inf.
# Sampling uses the raw softplus value so a degenerate policy collapses onto mu.
SIGMA_FLOOR = 1e-8

LOG_2PI = math.log(2.0 * math.pi)


def softplus(lambda_pre: np.ndarray) -> np.ndarray:
    """Elementwise log(1 + exp(x)), evaluated on the overflow-safe branch."""
    x = np.asarray(lambda_pre, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_inverse(sigma: float) -> float:
    """Pre-scale value whose softplus equals ``sigma`` (> 0)."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    # log(e^s - 1) = s + log(1 - e^-s), stable for small and large s alike
    return sigma + math.log(-math.expm1(-sigma))


def _frozen_array(values, dim_hint: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{dim_hint} must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{dim_hint} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GaussianPolicy:
    """Immutable policy parameters: mean and pre-softplus scale, both length d."""

    mu: np.ndarray
    lambda_pre: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen_array(self.mu, "mu"))
        object.__setattr__(self, "lambda_pre", _frozen_array(self.lambda_pre, "lambda_pre"))
        if self.mu.shape != self.lambda_pre.shape:
            raise ValueError(
                f"mu and lambda_pre lengths differ: {self.mu.shape} vs {self.lambda_pre.shape}"
            )

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return softplus(self.lambda_pre)

    @classmethod
    def initial(cls, z0: np.ndarray, sigma_init: float = 0.1) -> "GaussianPolicy":
        """Policy centered at the encoded query with uniform scale ``sigma_init``."""
        z0 = np.asarray(z0, dtype=float)
        lam = np.full(z0.shape, softplus_inverse(sigma_init))
        return cls(mu=z0, lambda_pre=lam)

    def with_params(self, mu: np.ndarray, lambda_pre: np.ndarray) -> "GaussianPolicy":
        return GaussianPolicy(mu=mu, lambda_pre=lambda_pre)


def sample_candidates(policy: GaussianPolicy, n: int, rng_seed: int) -> np.ndarray:
    """Draw ``n`` latents z_i = mu + sigma * xi, xi ~ N(0, I), as an (n, d) array.

    Fully determined by ``rng_seed`` (PCG64 stream), so identical seeds give
    byte-identical samples regardless of where or when they are drawn.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    rng = np.random.default_rng(rng_seed)
    xi = rng.standard_normal((n, policy.dim))
    return policy.mu + policy.sigma * xi


def log_density(policy: GaussianPolicy, z: np.ndarray) -> float:
    """Diagonal-Gaussian log pdf of ``z`` under the policy."""
    z = np.asarray(z, dtype=float)
    if z.shape != policy.mu.shape:
        raise ValueError(f"dimension mismatch: z has shape {z.shape}, policy is {policy.mu.shape}")
    sigma = np.maximum(policy.sigma, SIGMA_FLOOR)
    resid = (z - policy.mu) / sigma
    return float(np.sum(-np.log(sigma) - 0.5 * LOG_2PI - 0.5 * resid * resid))


def log_density_batch(policy: GaussianPolicy, z: np.ndarray) -> np.ndarray:
    """log pdf of each row of an (n, d) batch; vectorized form of log_density."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != policy.dim:
        raise ValueError(f"expected (n, {policy.dim}) batch, got shape {z.shape}")
    sigma = np.maximum(policy.sigma, SIGMA_FLOOR)
    resid = (z - policy.mu) / sigma
    return np.sum(-np.log(sigma) - 0.5 * LOG_2PI - 0.5 * resid * resid, axis=1)
