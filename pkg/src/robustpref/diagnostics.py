"""Evaluation metrics and small-instance theory probes."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import expit

from .errors import DomainError
from .losses import LossSpec, loss_value
from .prefgen import EXACT, ActionSpace, PreferenceDataset
from .riskcore import RewardModel, as_reward, reward_gradient, risk_of_rewards


def sign0(x):
    """Sign with ``sign(0) := +1``."""
    return np.where(np.asarray(x) >= 0, 1, -1)


@dataclass
class DiagnosticsReport:
    reward_accuracy: float | None = None
    rank_preservation_rate: float | None = None
    cpe_max_error: float | None = None
    improvement_margin: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("reward_accuracy", "rank_preservation_rate"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {v}")

    def to_json(self) -> dict:
        return asdict(self)


def reward_accuracy(model, test: PreferenceDataset) -> float:
    """Share of test pairs whose predicted order matches the true-reward order."""
    if len(test) == 0:
        raise DomainError("reward accuracy of an empty test set is undefined")
    r = as_reward(model, test.space)
    rt = test.space.true_reward
    hit = sign0(r[test.a1] - r[test.a2]) == sign0(rt[test.a1] - rt[test.a2])
    return float(np.sum(np.where(hit, test.weight, 0.0)) / np.sum(test.weight))


def rank_preservation_rate(model, space: ActionSpace) -> float:
    """Among ordered pairs with ``r_true(a1) > r_true(a2)``, the share with ``r(a1) > r(a2)``.

    A rate of exactly 1.0 means the reward is rank-preserving.
    """
    r = as_reward(model, space)
    rt = space.true_reward
    better = rt[:, None] > rt[None, :]
    if not better.any():
        raise DomainError("all true rewards are equal: no room for policy improvement")
    agree = (r[:, None] > r[None, :]) & better
    return float(agree.sum() / better.sum())


def is_rank_preserving(model, space: ActionSpace) -> bool:
    return rank_preservation_rate(model, space) == 1.0


def cpe_recovery_error(model, space: ActionSpace, loss: LossSpec) -> float:
    """Max gap between the linked posterior and the Bradley-Terry posterior over ordered pairs."""
    if not loss.is_cpe or loss.cpe_link is None:
        raise DomainError(f"loss {loss.label} is not a class-probability-estimation loss")
    r = as_reward(model, space)
    rt = space.true_reward
    off = ~np.eye(len(space), dtype=bool)
    est = loss.cpe_link.inverse(r[:, None] - r[None, :])
    target = expit(rt[:, None] - rt[None, :])
    return float(np.max(np.abs(est - target)[off]))


def conditional_risk(loss: LossSpec, eta: float, alpha):
    """``eta * l(alpha) + (1 - eta) * l(-alpha)``."""
    if not 0.0 <= eta <= 1.0:
        raise DomainError("eta must lie in [0, 1]")
    a = np.asarray(alpha, dtype=float)
    out = eta * loss_value(loss, a) + (1.0 - eta) * loss_value(loss, -a)
    return float(out) if np.ndim(alpha) == 0 else out


@dataclass(frozen=True)
class ConditionalOptimum:
    value: float
    argmin: float
    at_boundary: bool


def optimal_conditional_risk(
    loss: LossSpec, eta: float, bracket: float = 30.0, n_grid: int = 601, tol: float = 1e-10
) -> ConditionalOptimum:
    """Numerical infimum of the conditional risk over ``alpha`` in ``[-bracket, bracket]``.

    Coarse grid first (lowest index wins ties), then golden-section refinement
    inside the neighbouring grid cells.  ``at_boundary`` flags an argmin on
    the bracket edge, where the true infimum may be approached only
    asymptotically.
    """
    if not loss.bounded_below:
        raise DomainError(f"loss {loss.label} is unbounded below; its conditional risk has no infimum")
    grid = np.linspace(-bracket, bracket, n_grid)
    vals = conditional_risk(loss, eta, grid)
    k = int(np.argmin(vals))
    best_a, best_v = float(grid[k]), float(vals[k])
    if 0 < k < n_grid - 1 and vals[k] < vals[k - 1] and vals[k] < vals[k + 1]:
        res = minimize_scalar(
            lambda a: conditional_risk(loss, eta, a),
            bracket=(grid[k - 1], grid[k], grid[k + 1]),
            method="golden",
            tol=tol,
        )
        if res.fun < best_v:
            best_a, best_v = float(res.x), float(res.fun)
    at_boundary = k in (0, n_grid - 1)
    return ConditionalOptimum(best_v, best_a, at_boundary)


def calibration_sign_ok(loss: LossSpec, eta: float) -> bool:
    """Whether the conditional-risk minimizer has the Bayes sign ``sign(2 eta - 1)``."""
    if eta == 0.5:
        raise DomainError("the sign probe excludes eta = 1/2")
    opt = optimal_conditional_risk(loss, eta)
    return int(sign0(opt.argmin)) == (1 if eta > 0.5 else -1) and opt.argmin != 0.0


# --- brute-force oracle ---------------------------------------------------------

MAX_ORACLE_ACTIONS = 5


def _pair_tables(ds: PreferenceDataset, loss: LossSpec, steps: np.ndarray, label_view: str):
    """Per unordered pair ``(i, j)``: risk contribution as a function of ``r_i - r_j``."""
    k = len(ds.space)
    y = ds.labels(label_view)
    # mass on margin +(r_i - r_j) and on -(r_i - r_j), for i < j
    m_pos = np.zeros((k, k))
    m_neg = np.zeros((k, k))
    lo = np.minimum(ds.a1, ds.a2)
    hi = np.maximum(ds.a1, ds.a2)
    same_dir = (ds.a1 < ds.a2) == (y > 0)
    w = ds.weight / ds.weight.sum()
    np.add.at(m_pos, (lo[same_dir], hi[same_dir]), w[same_dir])
    np.add.at(m_neg, (lo[~same_dir], hi[~same_dir]), w[~same_dir])
    lv = loss_value(loss, steps)
    lv_neg = loss_value(loss, -steps)
    tables = {}
    for i, j in itertools.combinations(range(k), 2):
        if m_pos[i, j] or m_neg[i, j]:
            tables[(i, j)] = m_pos[i, j] * lv + m_neg[i, j] * lv_neg
    return tables


def brute_force_risk_minimizer(
    ds: PreferenceDataset,
    loss: LossSpec,
    lo: float = -5.0,
    hi: float = 5.0,
    step: float = 0.1,
    label_view: str = "noisy",
    refine: bool = True,
    chunk: int = 1 << 20,
) -> RewardModel:
    """Grid-search oracle for the tabular risk minimizer on tiny exact instances.

    Action 0 is pinned to reward 0 (every margin loss is shift invariant);
    the others range over ``[lo, hi]`` in steps of ``step``.  The grid argmin
    (lowest lexicographic index on ties) is then refined by bounded L-BFGS
    and kept only if the refinement lowers the risk.
    """
    k = len(ds.space)
    if k > MAX_ORACLE_ACTIONS:
        raise DomainError(f"brute-force oracle refuses spaces larger than {MAX_ORACLE_ACTIONS} actions (got {k})")
    if ds.mode != EXACT:
        raise DomainError("brute-force oracle needs an exact-mode dataset")
    n_lo = int(round(lo / step))
    n_hi = int(round(hi / step))
    levels = np.arange(n_lo, n_hi + 1)
    # level 0 lies inside [n_lo, n_hi], so every difference fits in [-span, span]
    span = n_hi - n_lo
    diffs = np.arange(-span, span + 1) * step
    tables = _pair_tables(ds, loss, diffs, label_view)
    n_free = k - 1
    n_levels = len(levels)
    total = n_levels**n_free
    best_val, best_idx = np.inf, 0
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk))
        coords = np.zeros((k, len(flat)), dtype=np.int64)
        rem = flat
        for c in range(n_free, 0, -1):
            coords[c] = levels[rem % n_levels]
            rem = rem // n_levels
        risk = np.zeros(len(flat))
        for (i, j), tab in tables.items():
            risk += tab[coords[i] - coords[j] + span]
        m = int(np.argmin(risk))
        if risk[m] < best_val:
            best_val, best_idx = float(risk[m]), int(flat[m])
    r = np.zeros(k)
    rem = best_idx
    for c in range(n_free, 0, -1):
        r[c] = levels[rem % n_levels] * step
        rem //= n_levels
    best_val = risk_of_rewards(r, ds, loss, label_view)
    if refine and n_free:

        def fun(x):
            rr = np.concatenate([[0.0], x])
            g = reward_gradient(rr, ds, loss, label_view)
            return risk_of_rewards(rr, ds, loss, label_view), g[1:]

        res = minimize(fun, r[1:], jac=True, method="L-BFGS-B", bounds=[(lo, hi)] * n_free)
        if res.fun < best_val:
            r = np.concatenate([[0.0], res.x])
            best_val = float(res.fun)
    at_boundary = bool(np.any(np.abs(r[1:] - lo) < step / 2) or np.any(np.abs(r[1:] - hi) < step / 2))
    model = RewardModel.tabular(r, clip=None)
    model.provenance.update(risk=best_val, box=(lo, hi), step=step, at_boundary=at_boundary)
    return model


def expanding_box_minimizer(
    ds: PreferenceDataset,
    loss: LossSpec,
    box: float = 5.0,
    max_box: float = 40.0,
    levels: int = 101,
    label_view: str = "noisy",
) -> RewardModel:
    """Grid oracle on ``[-box, box]``, doubling the box while the argmin sits on its edge.

    An argmin on the edge means the risk keeps falling outside the box; the
    sequence of box-constrained minimizers then traces a minimizing
    sequence.  The grid keeps ``levels`` values per action, so the step
    grows with the box.  The last model carries ``at_boundary`` when even
    ``max_box`` did not contain the argmin.
    """
    while True:
        step = 2.0 * box / (levels - 1)
        model = brute_force_risk_minimizer(ds, loss, -box, box, step, label_view)
        if not model.provenance["at_boundary"] or box >= max_box:
            return model
        box = min(2.0 * box, max_box)
