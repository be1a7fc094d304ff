"""Tabular policies: closed-form KL-regularized optima and offline preference optimization.

Offline training parameterizes ``pi = softmax(log pi_ref + theta)``.  The
implicit reward of such a policy is ``beta * log(pi / pi_ref)``, so every
offline objective is the reward-modeling risk of that implicit reward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DomainError, TrainingError
from .losses import LossSpec
from .prefgen import ActionSpace, PreferenceDataset
from .riskcore import RewardModel, RiskTrace, TrainConfig, as_reward, reward_gradient, risk_of_rewards


def _check_distribution(p: np.ndarray, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise DomainError(f"{what} must be a 1-D probability vector")
    if np.any(p <= 0):
        raise DomainError(f"{what} must be strictly positive")
    if abs(p.sum() - 1.0) > 1e-12:
        raise DomainError(f"{what} must sum to 1 (got {p.sum()!r})")
    return p


def normalize(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p / p.sum()


@dataclass(frozen=True, eq=False)
class PolicyTable:
    probs: np.ndarray
    reference: np.ndarray
    beta: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        probs = _check_distribution(self.probs, "policy")
        ref = _check_distribution(self.reference, "reference policy")
        if probs.shape != ref.shape:
            raise DomainError("policy and reference have different sizes")
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "reference", ref)

    def to_json(self) -> dict:
        return {
            "probs": self.probs.tolist(),
            "reference": self.reference.tolist(),
            "beta": self.beta,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PolicyTable":
        return cls(np.asarray(data["probs"]), np.asarray(data["reference"]), float(data["beta"]), data.get("provenance") or {})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, default=str))

    @classmethod
    def load(cls, path: str | Path) -> "PolicyTable":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Trainable logits; the policy is ``softmax(log pi_ref + logits)``."""

    logits: np.ndarray

    def policy(self, reference) -> np.ndarray:
        return _softmax(np.log(reference) + np.asarray(self.logits, dtype=float))


_FLOOR = np.finfo(float).tiny


def _softmax(x: np.ndarray) -> np.ndarray:
    """Softmax floored at the smallest normal float, so no probability underflows to 0."""
    p = np.maximum(np.exp(x - logsumexp(x)), _FLOOR)
    return p / p.sum()


def uniform_reference(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def optimal_policy(reward, reference, beta: float, space: ActionSpace | None = None) -> PolicyTable:
    """``pi*(a) = pi_ref(a) exp(r(a)/beta) / Z``, the maximizer of ``E_pi[r] - beta KL(pi, pi_ref)``."""
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    ref = _check_distribution(reference, "reference policy")
    r = as_reward(reward, space) if space is not None else np.asarray(
        reward.params if isinstance(reward, RewardModel) else reward, dtype=float
    )
    if r.shape != ref.shape:
        raise DomainError("reward and reference policy sizes differ")
    probs = _softmax(np.log(ref) + r / beta)
    return PolicyTable(probs, ref, beta)


def implicit_reward(pi, reference=None, beta: float | None = None) -> RewardModel:
    """Tabular reward ``beta * log(pi / pi_ref)``."""
    if isinstance(pi, PolicyTable):
        reference = pi.reference if reference is None else reference
        beta = pi.beta if beta is None else beta
        pi = pi.probs
    if beta is None or not beta > 0:
        raise DomainError("beta must be positive")
    p = np.asarray(pi, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if np.any(p <= 0) or np.any(ref <= 0):
        raise DomainError("implicit reward needs strictly positive probabilities")
    return RewardModel.tabular(beta * (np.log(p) - np.log(ref)))


def _implicit_from_logits(theta: np.ndarray, ref: np.ndarray, beta: float) -> np.ndarray:
    logp = np.log(ref) + theta
    logp = logp - logsumexp(logp)
    return beta * (logp - np.log(ref))


def sympo_objective(
    params: PolicyParams,
    ds: PreferenceDataset,
    loss: LossSpec,
    reference,
    beta: float,
    label_view: str = "noisy",
    baseline: bool = False,
) -> float:
    """Offline objective ``E[loss(y * beta * logit)]`` of the policy given by ``params``.

    With ``baseline=False`` (SymPO) the loss must be symmetric; baselines
    (DPO and its variants) accept any loss.
    """
    if not baseline and not loss.is_symmetric:
        raise DomainError(f"SymPO needs a symmetric loss, got {loss.label}")
    ref = _check_distribution(reference, "reference policy")
    r = _implicit_from_logits(np.asarray(params.logits, dtype=float), ref, beta)
    return risk_of_rewards(r, ds, loss, label_view)


def train_policy_offline(
    ds: PreferenceDataset,
    loss: LossSpec,
    reference,
    beta: float,
    cfg: TrainConfig,
    baseline: bool | None = None,
) -> tuple[PolicyTable, RiskTrace]:
    """Gradient descent on the offline objective over ``theta``.

    Because every pair contributes equal and opposite reward gradients, the
    gradient w.r.t. ``theta`` is exactly ``beta`` times the reward gradient.
    """
    if not beta > 0:
        raise DomainError("beta must be positive")
    if baseline is None:
        baseline = not loss.is_symmetric
    if not baseline and not loss.is_symmetric:
        raise DomainError(f"SymPO needs a symmetric loss, got {loss.label}")
    if len(ds) == 0:
        raise DomainError("cannot train on an empty dataset")
    ref = _check_distribution(reference, "reference policy")
    if ref.shape != (len(ds.space),):
        raise DomainError("reference policy must cover the dataset's action space")
    if cfg.init != "zeros":
        raise ConfigError("offline training starts from theta = 0 (pi = pi_ref)")
    theta = np.zeros(len(ref))
    trace = RiskTrace()
    for epoch in range(cfg.epochs + 1):
        r = _implicit_from_logits(theta, ref, beta)
        noisy = risk_of_rewards(r, ds, loss, "noisy")
        clean = risk_of_rewards(r, ds, loss, "clean")
        grad = beta * reward_gradient(r, ds, loss, "noisy")
        gnorm = float(np.linalg.norm(grad))
        if not (np.isfinite(noisy) and np.isfinite(gnorm)):
            raise TrainingError(f"objective became non-finite ({noisy})", epoch=epoch)
        trace.append(noisy, clean, gnorm)
        if epoch == cfg.epochs:
            break
        theta = theta - cfg.learning_rate * grad
    probs = PolicyParams(theta).policy(ref)
    provenance = {"loss": loss.label, "beta": beta, "learning_rate": cfg.learning_rate, "epochs": cfg.epochs}
    return PolicyTable(probs, ref, beta, provenance), trace


def expected_true_reward(pi, space: ActionSpace) -> float:
    p = pi.probs if isinstance(pi, PolicyTable) else np.asarray(pi, dtype=float)
    if p.shape != (len(space),):
        raise DomainError("policy and action space sizes differ")
    return float(np.dot(p, space.true_reward))


def improvement_margin(pi, reference, space: ActionSpace) -> float:
    """``E_pi[r_true] - E_ref[r_true]``; positive means the policy improves on the reference."""
    if reference is None and isinstance(pi, PolicyTable):
        reference = pi.reference
    return expected_true_reward(pi, space) - expected_true_reward(reference, space)


def covariance_margin(pi, reference, space: ActionSpace) -> float:
    """The same margin computed as ``Cov_ref(r_true, pi/pi_ref)``."""
    p = pi.probs if isinstance(pi, PolicyTable) else np.asarray(pi, dtype=float)
    ref = np.asarray(reference, dtype=float)
    w = p / ref
    r = space.true_reward
    return float(np.dot(ref, r * w) - np.dot(ref, r) * np.dot(ref, w))
