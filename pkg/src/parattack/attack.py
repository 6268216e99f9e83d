"""Per-sample attack loop: sample latents, decode, score, update the policy.

Each iteration draws n candidates from the current policy, decodes them,
fetches IoUs through the response cache, runs one PPO update, then decodes
the policy mean and records its IoU. Per-sample seeds are derived from the
global seed and the sample id, so dataset runs are reproducible regardless
of scheduling order.
"""

from __future__ import annotations

import hashlib
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .policy import GaussianPolicy, log_density, sample_candidates
from .ppo import (
    Losses,
    ObjectiveWeights,
    OptimizerState,
    ValueNetwork,
    ppo_update,
)
from .oracle.cache import IouCache, cached_evaluate
from .oracle.dataset import QuerySample
from .oracle.protocol import OracleError

MIN_BATCH_FOR_UPDATE = 2


@dataclass(frozen=True)
class AttackConfig:
    candidates: int = 16          # n, draws per iteration
    iterations: int = 10          # N
    sigma_init: float = 0.1
    eps_clip: float = 0.2
    eps_adv: float = 1e-8
    lambda_adv: float = 1.0
    lambda_sim: float = 0.1
    lr_mu: float = 1e-2
    lr_lambda: float = 1e-3
    lr_value: float = 1e-3
    hidden: int = 64
    inner_steps: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.candidates < 1 or self.iterations < 1:
            raise ValueError("candidates and iterations must be >= 1")
        if min(self.lambda_adv, self.lambda_sim, self.lr_mu, self.lr_lambda,
               self.lr_value) < 0:
            raise ValueError("weights and learning rates must be >= 0")
        if self.sigma_init <= 0 or self.hidden < 1 or self.inner_steps < 1:
            raise ValueError("sigma_init must be > 0, hidden and inner_steps >= 1")

    def objective_weights(self) -> ObjectiveWeights:
        return ObjectiveWeights(lambda_adv=self.lambda_adv, lambda_sim=self.lambda_sim,
                                eps_clip=self.eps_clip, eps_adv=self.eps_adv)


@dataclass(frozen=True)
class CandidateRecord:
    latent_sha: str
    text: str
    iou: float
    reward: float
    logp_old: float
    logp_new: float
    advantage: float
    ratio: float
    surrogate: float

    def to_wire(self) -> dict:
        return {
            "latent_sha": self.latent_sha, "text": self.text, "iou": self.iou,
            "reward": self.reward, "logp_old": self.logp_old,
            "logp_new": self.logp_new, "advantage": self.advantage,
            "ratio": self.ratio, "surrogate": self.surrogate,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "CandidateRecord":
        return cls(**{k: obj[k] for k in (
            "latent_sha", "text", "iou", "reward", "logp_old", "logp_new",
            "advantage", "ratio", "surrogate")})


@dataclass(frozen=True)
class IterationRecord:
    t: int
    candidates: tuple
    mean_text: str
    mean_iou: float
    losses: Optional[Losses]
    updated: bool

    def to_wire(self) -> dict:
        return {
            "type": "iteration",
            "t": self.t,
            "mean_text": self.mean_text,
            "mean_iou": self.mean_iou,
            "losses": None if self.losses is None else {
                "final": self.losses.final, "policy": self.losses.policy,
                "value": self.losses.value, "sim": self.losses.sim,
            },
            "updated": self.updated,
            "candidates": [c.to_wire() for c in self.candidates],
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "IterationRecord":
        losses = obj.get("losses")
        return cls(
            t=int(obj["t"]),
            candidates=tuple(CandidateRecord.from_wire(c) for c in obj["candidates"]),
            mean_text=obj["mean_text"],
            mean_iou=float(obj["mean_iou"]),
            losses=None if losses is None else Losses(**losses),
            updated=bool(obj["updated"]),
        )


@dataclass
class AttackTrajectory:
    sample_id: str
    original_iou: float
    query_text: str = ""
    iterations: list = field(default_factory=list)
    complete: bool = False
    error: Optional[str] = None

    def final_mean_iou(self) -> Optional[float]:
        return self.iterations[-1].mean_iou if self.iterations else None


@dataclass
class OracleSet:
    """The oracles one attack needs; embedder/judge ride along for evaluation."""

    autoencoder: object
    segmentation: object
    embedder: object = None
    judge: object = None

    def close(self):
        for client in (self.autoencoder, self.segmentation, self.embedder, self.judge):
            if client is not None and hasattr(client, "close"):
                client.close()


def derive_seed(global_seed: int, *parts) -> int:
    """Stable 63-bit seed from the global seed and any hashable parts."""
    material = ":".join([str(global_seed)] + [str(p) for p in parts])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def _latent_sha(z: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(z, dtype=float).tobytes()).hexdigest()[:16]


def run_attack(sample: QuerySample, config: AttackConfig, oracles: OracleSet,
               cache: Optional[IouCache] = None,
               sample_seed: Optional[int] = None) -> AttackTrajectory:
    """Run the full optimization loop for one sample.

    Per-candidate oracle failures drop the candidate (the update is skipped
    when fewer than two survive); failures outside the candidate loop abort
    the sample and the partial trajectory is flagged incomplete.
    """
    cache = cache if cache is not None else IouCache()
    seed = sample_seed if sample_seed is not None else derive_seed(config.seed, sample.sample_id)
    trajectory = AttackTrajectory(sample_id=sample.sample_id, original_iou=0.0,
                                  query_text=sample.query_text)
    weights = config.objective_weights()
    try:
        z0 = oracles.autoencoder.encode_text(sample.query_text)
        trajectory.original_iou = cached_evaluate(cache, oracles.segmentation,
                                                  sample, sample.query_text)
        policy = GaussianPolicy.initial(z0, sigma_init=config.sigma_init)
        net = ValueNetwork.initial(dim=z0.shape[0], hidden=config.hidden,
                                   rng_seed=derive_seed(seed, "value-init"))
        opt = OptimizerState.initial(policy, net, lr_mu=config.lr_mu,
                                     lr_lambda=config.lr_lambda, lr_value=config.lr_value)

        for t in range(1, config.iterations + 1):
            z = sample_candidates(policy, config.candidates, derive_seed(seed, "sample", t))
            kept_rows = []
            for i in range(z.shape[0]):
                try:
                    text = oracles.autoencoder.decode_latent(z[i])
                    iou = cached_evaluate(cache, oracles.segmentation, sample, text)
                except OracleError:
                    continue
                kept_rows.append((z[i], text, iou))

            losses = None
            records = []
            updated = len(kept_rows) >= MIN_BATCH_FOR_UPDATE
            if not updated and kept_rows:
                # too few survivors to update: record them with zeroed update
                # fields (the unchanged policy makes the ratio exactly 1)
                for zi, text, iou in kept_rows:
                    logp = log_density(policy, zi)
                    records.append(CandidateRecord(
                        latent_sha=_latent_sha(zi), text=text, iou=iou,
                        reward=-iou, logp_old=logp, logp_new=logp,
                        advantage=0.0, ratio=1.0, surrogate=0.0))
            if updated:
                zs = np.stack([row[0] for row in kept_rows])
                rewards = np.array([-row[2] for row in kept_rows])
                result = ppo_update(policy, net, opt, zs, rewards, weights, z0,
                                    inner_steps=config.inner_steps)
                batch = result.batch
                for i, (zi, text, iou) in enumerate(kept_rows):
                    records.append(CandidateRecord(
                        latent_sha=_latent_sha(zi), text=text, iou=iou,
                        reward=float(rewards[i]),
                        logp_old=float(batch.logp_old[i]),
                        logp_new=float(batch.logp_new[i]),
                        advantage=float(batch.advantages[i]),
                        ratio=float(batch.ratios[i]),
                        surrogate=float(batch.surrogates[i])))
                policy, net, opt = result.policy, result.net, result.opt
                losses = result.losses

            mean_text = oracles.autoencoder.decode_latent(policy.mu)
            mean_iou = cached_evaluate(cache, oracles.segmentation, sample, mean_text)
            trajectory.iterations.append(IterationRecord(
                t=t, candidates=tuple(records), mean_text=mean_text,
                mean_iou=mean_iou, losses=losses, updated=updated))
        trajectory.complete = True
    except OracleError as exc:
        trajectory.error = f"{type(exc).__name__}: {exc}"
    return trajectory


def run_dataset(samples: list[QuerySample], config: AttackConfig,
                oracle_factory, parallelism: int = 1,
                cache: Optional[IouCache] = None,
                on_trajectory=None) -> list[AttackTrajectory]:
    """Attack every sample independently; results are ordered like ``samples``.

    ``oracle_factory`` builds an OracleSet per worker thread (clients are not
    shared across threads beyond their own concurrency contracts). Per-sample
    seeds depend only on (config.seed, sample_id), so the outcome is
    independent of parallelism and scheduling.
    """
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("sample_ids must be unique")
    if not samples:
        return []
    cache = cache if cache is not None else IouCache()

    local = threading.local()
    opened = []
    opened_lock = threading.Lock()

    def worker_oracles() -> OracleSet:
        oracles = getattr(local, "oracles", None)
        if oracles is None:
            oracles = oracle_factory()
            local.oracles = oracles
            with opened_lock:
                opened.append(oracles)
        return oracles

    def attack_one(sample: QuerySample) -> AttackTrajectory:
        trajectory = run_attack(sample, config, worker_oracles(), cache=cache)
        if on_trajectory is not None:
            on_trajectory(trajectory)
        return trajectory

    try:
        if parallelism <= 1:
            return [attack_one(s) for s in samples]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(attack_one, samples))
    finally:
        for oracles in opened:
            if hasattr(oracles, "close"):
                oracles.close()
