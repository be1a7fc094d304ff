"""Margin losses for reward modeling and preference optimization.

Every loss is a function of the margin ``z = y * (r(a1) - r(a2))`` (or, for the
DPO family, ``z = y * beta * logit``).  Values and derivatives are
hand-written and vectorized over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DomainError

LOSS_NAMES = (
    "logistic",
    "hinge",
    "squared",
    "exponential",
    "sigmoid",
    "unhinged",
    "ramp",
    "cdpo",
    "rdpo",
    "ropo",
)

_EXP_CLAMP = 500.0


@dataclass(frozen=True)
class CpeLink:
    """Invertible link between posterior ``eta`` and the optimal margin."""

    name: str
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]


def _logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


LOGISTIC_LINK = CpeLink("logit", _logit, expit)
EXPONENTIAL_LINK = CpeLink(
    "half-logit", lambda p: 0.5 * _logit(p), lambda g: expit(2.0 * np.asarray(g, dtype=float))
)
SQUARED_LINK = CpeLink(
    "affine",
    lambda p: 2.0 * np.asarray(p, dtype=float) - 1.0,
    lambda g: np.clip((np.asarray(g, dtype=float) + 1.0) / 2.0, 0.0, 1.0),
)


@dataclass(frozen=True)
class LossSpec:
    name: str
    params: Mapping[str, float] = field(default_factory=dict)
    symmetry_constant: float | None = None
    is_convex: bool = False
    is_cpe: bool = False
    cpe_link: CpeLink | None = None
    bounded_below: bool = True
    # set only on noise-corrected derivatives
    base: "LossSpec | None" = None
    corrected_eps: float | None = None

    @property
    def is_symmetric(self) -> bool:
        return self.symmetry_constant is not None

    @property
    def label(self) -> str:
        if self.base is not None:
            return f"{self.base.label}~nc(eps={self.corrected_eps:g})"
        if not self.params:
            return self.name
        args = ",".join(f"{k}={_fmt(v)}" for k, v in sorted(self.params.items()))
        return f"{self.name}:{args}"

    def value(self, z):
        return loss_value(self, z)

    def grad(self, z):
        return loss_grad(self, z)

    def __hash__(self):
        return hash(self.label)


def _fmt(v: float) -> str:
    return f"{v:g}"


def _logistic(z):
    return np.logaddexp(0.0, -z)


def _logistic_grad(z):
    return -expit(-z)


def _param(spec: LossSpec, key: str) -> float:
    try:
        return float(spec.params[key])
    except KeyError:
        raise ConfigError(f"loss {spec.name!r} requires parameter {key!r}") from None


def _cdpo_weights(spec: LossSpec) -> tuple[float, float]:
    """(weight on -log sigma(z), weight on -log sigma(-z))."""
    eps = _param(spec, "eps")
    if spec.params.get("swapped", 0):
        return 1.0 - eps, eps
    return eps, 1.0 - eps


def _rdpo_weights(spec: LossSpec) -> tuple[float, float]:
    eps = _param(spec, "eps")
    if eps >= 0.5:
        raise DomainError(f"rdpo requires eps < 0.5 (got {eps}); it divides by 1 - 2*eps")
    denom = 1.0 - 2.0 * eps
    if spec.params.get("corrected", 0):
        return (1.0 - eps) / denom, -eps / denom
    return (1.0 - eps) / denom, eps / denom


def _ropo_weights(spec: LossSpec) -> tuple[float, float]:
    alpha = _param(spec, "alpha")
    return 4.0 * alpha / (1.0 + alpha) ** 2, 4.0 * alpha**2 / (1.0 + alpha) ** 2


def _as_array(z):
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("loss margin must be finite")
    return arr


def _out(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


def loss_value(spec: LossSpec, z):
    """Evaluate ``spec`` at margin(s) ``z``; scalar in, scalar out."""
    arr = _as_array(z)
    return _out(_value(spec, arr), z)


def _value(spec: LossSpec, z: np.ndarray) -> np.ndarray:
    if spec.base is not None:
        eps = spec.corrected_eps
        return ((1.0 - eps) * _value(spec.base, z) - eps * _value(spec.base, -z)) / (1.0 - 2.0 * eps)
    name = spec.name
    if name == "logistic":
        return _logistic(z)
    if name == "hinge":
        return np.maximum(0.0, 1.0 - z)
    if name == "squared":
        return (z - 1.0) ** 2
    if name == "exponential":
        return np.exp(np.clip(-z, -_EXP_CLAMP, _EXP_CLAMP))
    if name == "sigmoid":
        return expit(-z)
    if name == "unhinged":
        return 1.0 - z
    if name == "ramp":
        return np.clip(0.5 - 0.5 * z, 0.0, 1.0)
    if name in ("cdpo", "rdpo"):
        w_pos, w_neg = _cdpo_weights(spec) if name == "cdpo" else _rdpo_weights(spec)
        return w_pos * _logistic(z) + w_neg * _logistic(-z)
    if name == "ropo":
        w_dpo, w_sig = _ropo_weights(spec)
        return w_dpo * _logistic(z) + w_sig * expit(-z)
    raise ConfigError(f"unknown loss {name!r}")


def loss_grad(spec: LossSpec, z):
    """Derivative of the loss w.r.t. the margin.

    At the kinks of hinge (z=1) and ramp (z=+-1) the average of the two
    one-sided slopes is returned.
    """
    arr = _as_array(z)
    return _out(_grad(spec, arr), z)


def _grad(spec: LossSpec, z: np.ndarray) -> np.ndarray:
    if spec.base is not None:
        eps = spec.corrected_eps
        return ((1.0 - eps) * _grad(spec.base, z) + eps * _grad(spec.base, -z)) / (1.0 - 2.0 * eps)
    name = spec.name
    if name == "logistic":
        return _logistic_grad(z)
    if name == "hinge":
        return np.where(z < 1.0, -1.0, np.where(z > 1.0, 0.0, -0.5))
    if name == "squared":
        return 2.0 * (z - 1.0)
    if name == "exponential":
        return -np.exp(np.clip(-z, -_EXP_CLAMP, _EXP_CLAMP))
    if name == "sigmoid":
        return -expit(z) * expit(-z)
    if name == "unhinged":
        return -np.ones_like(z)
    if name == "ramp":
        inner = np.abs(z) < 1.0
        kink = np.abs(z) == 1.0
        return np.where(inner, -0.5, np.where(kink, -0.25, 0.0))
    if name in ("cdpo", "rdpo"):
        w_pos, w_neg = _cdpo_weights(spec) if name == "cdpo" else _rdpo_weights(spec)
        # d/dz log(1+e^{z}) = sigmoid(z)
        return w_pos * _logistic_grad(z) + w_neg * expit(z)
    if name == "ropo":
        w_dpo, w_sig = _ropo_weights(spec)
        return w_dpo * _logistic_grad(z) - w_sig * expit(z) * expit(-z)
    raise ConfigError(f"unknown loss {name!r}")


def kinks(spec: LossSpec) -> tuple[float, ...]:
    """Points where the loss is not differentiable."""
    if spec.base is not None:
        return tuple(sorted({k for b in kinks(spec.base) for k in (b, -b)}))
    return {"hinge": (1.0,), "ramp": (-1.0, 1.0)}.get(spec.name, ())


_PROPERTIES = {
    # name: (symmetry constant, convex, cpe link, bounded below)
    "logistic": (None, True, LOGISTIC_LINK, True),
    "hinge": (None, True, None, True),
    "squared": (None, True, SQUARED_LINK, True),
    "exponential": (None, True, EXPONENTIAL_LINK, True),
    "sigmoid": (1.0, False, None, True),
    "unhinged": (2.0, True, None, False),
    "ramp": (1.0, False, None, True),
    "cdpo": (None, True, None, True),
    "rdpo": (None, True, None, True),
    "ropo": (None, False, None, True),
}

_REQUIRED = {"cdpo": ("eps",), "rdpo": ("eps",), "ropo": ("alpha",)}
_FLAGS = {"cdpo": ("swapped",), "rdpo": ("corrected",)}


def make_loss(name: str, **params: float) -> LossSpec:
    """Build a :class:`LossSpec` by name, validating its parameters."""
    if name not in _PROPERTIES:
        raise ConfigError(f"unknown loss {name!r}; expected one of {', '.join(LOSS_NAMES)}")
    allowed = set(_REQUIRED.get(name, ())) | set(_FLAGS.get(name, ()))
    extra = set(params) - allowed
    if extra:
        raise ConfigError(f"loss {name!r} does not accept parameters {sorted(extra)}")
    for key in _REQUIRED.get(name, ()):
        if key not in params:
            raise ConfigError(f"loss {name!r} requires parameter {key!r}")
    params = {k: float(v) for k, v in params.items()}
    if name == "cdpo" and not 0.0 <= params["eps"] <= 1.0:
        raise DomainError(f"cdpo requires eps in [0, 1], got {params['eps']}")
    if name == "rdpo" and not 0.0 <= params["eps"] < 0.5:
        raise DomainError(f"rdpo requires eps in [0, 0.5), got {params['eps']}")
    if name == "ropo" and not params["alpha"] > 0.0:
        raise DomainError(f"ropo requires alpha > 0, got {params['alpha']}")
    sym, convex, link, bounded = _PROPERTIES[name]
    if name == "rdpo" and params.get("corrected", 0):
        convex, bounded = False, False
    return LossSpec(
        name=name,
        params=params,
        symmetry_constant=sym,
        is_convex=convex,
        is_cpe=link is not None,
        cpe_link=link,
        bounded_below=bounded,
    )


def parse_loss(text: str) -> LossSpec:
    """Parse ``name`` or ``name:key=value,key=value`` (e.g. ``rdpo:eps=0.2``)."""
    name, _, rest = text.strip().partition(":")
    params: dict[str, float] = {}
    if rest:
        for item in rest.split(","):
            key, sep, val = item.partition("=")
            if not sep:
                raise ConfigError(f"malformed loss parameter {item!r} in {text!r}")
            try:
                params[key.strip()] = float(val)
            except ValueError:
                raise ConfigError(f"non-numeric loss parameter {item!r} in {text!r}") from None
    return make_loss(name.strip(), **params)


def symmetry_residual(spec: LossSpec, grid) -> float:
    """Max deviation of ``l(z) + l(-z)`` from ``K`` over ``grid``.

    Without a declared ``K`` the deviation is measured from the grid mean of
    the sums, which is zero only for losses that happen to be symmetric.
    """
    z = np.asarray(grid, dtype=float).ravel()
    if z.size == 0:
        raise DomainError("symmetry_residual needs a nonempty grid")
    sums = _value(spec, z) + _value(spec, -z)
    target = spec.symmetry_constant if spec.is_symmetric else sums.mean()
    return float(np.max(np.abs(sums - target)))


def noise_corrected(spec: LossSpec, eps: float) -> LossSpec:
    """Noise-corrected loss ``((1-eps) l(z) - eps l(-z)) / (1 - 2 eps)``."""
    if not 0.0 <= eps < 0.5:
        raise DomainError(f"noise correction requires eps in [0, 0.5), got {eps}")
    if spec.base is not None:
        raise ConfigError("cannot noise-correct an already corrected loss")
    # a symmetric base keeps its constant: l~(z) + l~(-z) = l(z) + l(-z)
    return replace(
        spec,
        is_convex=spec.is_convex and eps == 0.0,
        is_cpe=False,
        cpe_link=None,
        bounded_below=spec.bounded_below and eps == 0.0,
        base=spec,
        corrected_eps=float(eps),
    )


def zoo(names=("logistic", "hinge", "squared", "exponential", "sigmoid", "unhinged", "ramp")):
    """The pointwise losses, in table order."""
    return [make_loss(n) for n in names]
