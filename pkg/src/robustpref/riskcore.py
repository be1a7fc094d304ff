"""Margin risks of reward models and full-batch gradient training."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, TrainingError
from .losses import LossSpec, loss_grad, loss_value, parse_loss
from .prefgen import EXACT, ActionSpace, NoiseSpec, PreferenceDataset, inject_noise
from .rng import stream

TABULAR = "tabular"
LINEAR = "linear"


@dataclass(frozen=True, eq=False)
class RewardModel:
    """``r: A -> R`` as a per-action table or a linear map of action features.

    With ``clip`` set the effective reward is ``clamp(r, -clip, clip)``.
    """

    kind: str
    params: np.ndarray
    clip: float | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (TABULAR, LINEAR):
            raise DomainError(f"unknown reward model kind {self.kind!r}")
        object.__setattr__(self, "params", np.asarray(self.params, dtype=float))
        if self.clip is not None and not self.clip > 0:
            raise DomainError("clip bound must be positive")

    @classmethod
    def tabular(cls, values, clip=None) -> "RewardModel":
        return cls(TABULAR, np.asarray(values, dtype=float), clip)

    @classmethod
    def linear(cls, weights, clip=None) -> "RewardModel":
        return cls(LINEAR, np.asarray(weights, dtype=float), clip)

    def check(self, space: ActionSpace) -> None:
        if self.kind == TABULAR and self.params.shape != (len(space),):
            raise DomainError(f"tabular model has {self.params.size} entries for {len(space)} actions")
        if self.kind == LINEAR:
            if space.features is None:
                raise DomainError("linear reward model needs action features")
            if self.params.shape != (space.dim,):
                raise DomainError(f"linear model dimension {self.params.size} != feature dimension {space.dim}")

    def raw(self, space: ActionSpace) -> np.ndarray:
        self.check(space)
        if self.kind == TABULAR:
            return self.params.copy()
        return space.features @ self.params

    def values(self, space: ActionSpace) -> np.ndarray:
        """Effective (clipped) reward of every action."""
        r = self.raw(space)
        return r if self.clip is None else np.clip(r, -self.clip, self.clip)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params.tolist(),
            "clip": self.clip,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RewardModel":
        return cls(data["kind"], np.asarray(data["params"]), data.get("clip"), data.get("provenance") or {})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, default=str))

    @classmethod
    def load(cls, path: str | Path) -> "RewardModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def as_reward(model, space: ActionSpace) -> np.ndarray:
    """Per-action rewards from a model or a plain array."""
    if isinstance(model, RewardModel):
        return model.values(space)
    r = np.asarray(model, dtype=float)
    if r.shape != (len(space),):
        raise DomainError("reward vector must have one entry per action")
    return r


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 2000
    loss: LossSpec | None = None
    seed: int = 0
    mode: str = EXACT
    init: str | None = None
    init_scale: float = 0.01
    kind: str = TABULAR
    clip: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.init is None:
            object.__setattr__(self, "init", "zeros" if self.kind == TABULAR else "gaussian")
        if self.init not in ("zeros", "gaussian"):
            raise ConfigError(f"init must be 'zeros' or 'gaussian', got {self.init!r}")
        if isinstance(self.loss, str):
            object.__setattr__(self, "loss", parse_loss(self.loss))


@dataclass
class RiskTrace:
    noisy_risk: list[float] = field(default_factory=list)
    clean_risk: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)

    def append(self, noisy: float, clean: float, gnorm: float) -> None:
        self.noisy_risk.append(noisy)
        self.clean_risk.append(clean)
        self.grad_norm.append(gnorm)

    def __len__(self) -> int:
        return len(self.noisy_risk)

    def to_csv(self, path: str | Path) -> None:
        lines = ["epoch,noisy_risk,clean_risk,grad_norm"]
        for e, (n, c, g) in enumerate(zip(self.noisy_risk, self.clean_risk, self.grad_norm)):
            lines.append(f"{e},{n!r},{c!r},{g!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def _check_rows(ds: PreferenceDataset) -> None:
    if len(ds) == 0:
        raise DomainError("risk of an empty dataset is undefined")


def margins(r: np.ndarray, ds: PreferenceDataset, label_view: str = "noisy") -> np.ndarray:
    """``y * (r(a1) - r(a2))`` for every row."""
    return ds.labels(label_view) * (r[ds.a1] - r[ds.a2])


def risk_of_rewards(r: np.ndarray, ds: PreferenceDataset, loss: LossSpec, label_view: str = "noisy") -> float:
    _check_rows(ds)
    z = margins(r, ds, label_view)
    # matching reductions in numerator and denominator keep a constant loss exact
    return float(np.sum(ds.weight * loss_value(loss, z)) / np.sum(ds.weight))


def empirical_risk(model, ds: PreferenceDataset, loss: LossSpec, label_view: str = "noisy") -> float:
    """Weighted mean of ``loss(y * (r(a1) - r(a2)))``.

    For empirical datasets this is the sample average; for exact datasets it
    is the expectation over the enumerated masses.
    """
    _check_rows(ds)
    return risk_of_rewards(as_reward(model, ds.space), ds, loss, label_view)


exact_risk = empirical_risk


def reward_gradient(r: np.ndarray, ds: PreferenceDataset, loss: LossSpec, label_view: str = "noisy") -> np.ndarray:
    """Gradient of the risk w.r.t. the per-action reward vector ``r``."""
    _check_rows(ds)
    y = ds.labels(label_view)
    z = y * (r[ds.a1] - r[ds.a2])
    c = ds.weight * loss_grad(loss, z) * y / ds.weight.sum()
    k = len(r)
    return np.bincount(ds.a1, c, k) - np.bincount(ds.a2, c, k)


def _param_gradient(model: RewardModel, raw: np.ndarray, ds: PreferenceDataset, loss: LossSpec, label_view: str):
    r = raw if model.clip is None else np.clip(raw, -model.clip, model.clip)
    g = reward_gradient(r, ds, loss, label_view)
    if model.clip is not None:
        g = np.where(np.abs(raw) < model.clip, g, 0.0)
    if model.kind == TABULAR:
        return g
    return ds.space.features.T @ g


def risk_gradient(model: RewardModel, ds: PreferenceDataset, loss: LossSpec, label_view: str = "noisy") -> np.ndarray:
    """Gradient of :func:`empirical_risk` w.r.t. the model parameters.

    Actions whose raw reward lies outside ``(-clip, clip)`` pass no gradient.
    """
    return _param_gradient(model, model.raw(ds.space), ds, loss, label_view)


def _init_params(cfg: TrainConfig, space: ActionSpace) -> np.ndarray:
    size = len(space) if cfg.kind == TABULAR else space.dim
    if size is None:
        raise DomainError("linear reward model needs action features")
    if cfg.init == "zeros":
        return np.zeros(size)
    return stream(cfg.seed, "init").normal(0.0, cfg.init_scale, size)


def _require_minimizer(ds: PreferenceDataset, loss: LossSpec, clip, label_view="noisy") -> None:
    """Refuse losses that are unbounded below when the risk has no minimizer."""
    if loss.bounded_below or clip is not None:
        return
    net = reward_gradient(np.zeros(len(ds.space)), ds, loss, label_view)
    if np.any(np.abs(net) > 1e-15):
        raise TrainingError(
            f"loss {loss.label} is unbounded below and the data has nonzero net preference; "
            "the risk diverges to -inf (set a clip bound)",
            epoch=0,
        )


def train_reward(ds: PreferenceDataset, cfg: TrainConfig) -> tuple[RewardModel, RiskTrace]:
    """Full-batch gradient descent on the noisy-label risk.

    The trace holds ``epochs + 1`` entries, the first at initialization.
    The clean-label risk is recorded for audit only.
    """
    if cfg.loss is None:
        raise ConfigError("TrainConfig.loss is required")
    _check_rows(ds)
    loss = cfg.loss
    _require_minimizer(ds, loss, cfg.clip)
    theta = _init_params(cfg, ds.space)
    trace = RiskTrace()
    model = RewardModel(cfg.kind, theta, cfg.clip)
    for epoch in range(cfg.epochs + 1):
        raw = model.raw(ds.space)
        r = raw if cfg.clip is None else np.clip(raw, -cfg.clip, cfg.clip)
        noisy = risk_of_rewards(r, ds, loss, "noisy")
        clean = risk_of_rewards(r, ds, loss, "clean")
        grad = _param_gradient(model, raw, ds, loss, "noisy")
        gnorm = float(np.linalg.norm(grad))
        if not (np.isfinite(noisy) and np.isfinite(gnorm)):
            raise TrainingError(f"risk became non-finite ({noisy})", epoch=epoch)
        trace.append(noisy, clean, gnorm)
        if epoch == cfg.epochs:
            break
        theta = theta - cfg.learning_rate * grad
        model = RewardModel(cfg.kind, theta, cfg.clip)
    provenance = {
        "loss": loss.label,
        "learning_rate": cfg.learning_rate,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "init": cfg.init,
        "mode": ds.mode,
    }
    return RewardModel(cfg.kind, theta, cfg.clip, provenance), trace


def exact_risk_affine_check(model, ds: PreferenceDataset, noise: NoiseSpec, loss: LossSpec) -> tuple[float, float]:
    """Exact noisy risk and its affine prediction from the clean risk.

    Returns ``(lhs, rhs)`` with ``lhs`` the exact noisy risk and
    ``rhs = (1 - 2 e) R(r) + e K`` where ``e = pi_p eps_p + (1 - pi_p) eps_n``
    uses the dataset's true clean prior.  ``ds`` must be an exact, clean
    (noise-free) dataset.

    The two agree whenever the rate of flipped labels is the same in both
    classes after symmetrization, which holds for symmetric noise and for
    any clean distribution invariant under swapping ``(a1, a2)`` with
    negating ``y`` (e.g. symmetric pair weights with Bradley-Terry labels).
    """
    if not loss.is_symmetric:
        raise DomainError(f"loss {loss.label} is not symmetric")
    if ds.mode != EXACT:
        raise DomainError("the affine check needs an exact-mode dataset")
    if np.any(ds.flipped):
        raise DomainError("the affine check starts from clean labels")
    r = as_reward(model, ds.space)
    prior = ds.class_prior
    eps = noise.effective_rate(prior)
    noisy_ds = inject_noise(ds, noise)
    lhs = risk_of_rewards(r, noisy_ds, loss, "noisy")
    clean = risk_of_rewards(r, ds, loss, "clean")
    rhs = (1.0 - 2.0 * eps) * clean + eps * loss.symmetry_constant
    return lhs, rhs
