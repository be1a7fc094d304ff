"""Action spaces, Bradley-Terry preference data, label noise and pair flipping.

A :class:`PreferenceDataset` is a table of weighted rows
``(a1, a2, clean_label, noisy_label, weight)``.  In *empirical* mode every
row is one sampled record with weight ``1/n``.  In *exact* mode rows enumerate
the support of the joint distribution ``p(a1, a2, y, y~)`` and weights are the
exact probability masses, so risks are expectations rather than averages.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit

from .errors import DomainError, GenerationError

EMPIRICAL = "empirical"
EXACT = "exact"


@dataclass(frozen=True, eq=False)
class ActionSpace:
    actions: tuple[str, ...]
    true_reward: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        actions = tuple(str(a) for a in self.actions)
        if len(actions) < 2:
            raise DomainError("an action space needs at least two actions")
        if len(set(actions)) != len(actions):
            raise DomainError("action identifiers must be unique")
        reward = np.asarray(self.true_reward, dtype=float)
        if reward.shape != (len(actions),):
            raise DomainError("true_reward must have one entry per action")
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "true_reward", reward)
        if self.features is not None:
            feats = np.asarray(self.features, dtype=float)
            if feats.ndim == 1:
                feats = feats[:, None]
            if feats.ndim != 2 or feats.shape[0] != len(actions) or feats.shape[1] < 1:
                raise DomainError("features must be an (n_actions, d) array with d >= 1")
            object.__setattr__(self, "features", feats)
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(actions)})

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def dim(self) -> int | None:
        return None if self.features is None else self.features.shape[1]

    def index(self, action) -> int:
        """Position of an action id; integer positions pass through."""
        if isinstance(action, (int, np.integer)) and not isinstance(action, bool):
            if 0 <= action < len(self):
                return int(action)
            raise KeyError(f"action index {action} out of range")
        try:
            return self._index[str(action)]
        except KeyError:
            raise KeyError(f"unknown action id {action!r}") from None

    def to_json(self) -> dict:
        return {
            "actions": list(self.actions),
            "true_reward": self.true_reward.tolist(),
            "features": None if self.features is None else self.features.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "ActionSpace":
        return cls(tuple(data["actions"]), np.asarray(data["true_reward"]), data.get("features"))


@dataclass(frozen=True)
class PreferenceRecord:
    a1: str
    a2: str
    clean_label: int
    noisy_label: int
    flipped: bool


@dataclass(frozen=True)
class NoiseSpec:
    """Class-conditional flip rates: ``p(y~=-1|y=+1) = eps_p``, ``p(y~=+1|y=-1) = eps_n``."""

    eps_p: float = 0.0
    eps_n: float = 0.0
    mode: str = "asymmetric"

    def __post_init__(self):
        if self.mode not in ("asymmetric", "symmetric"):
            raise DomainError(f"unknown noise mode {self.mode!r}")
        for eps in (self.eps_p, self.eps_n):
            if not 0.0 <= eps <= 1.0:
                raise DomainError(f"flip probabilities must lie in [0, 1], got {eps}")
        if self.mode == "symmetric" and self.eps_p != self.eps_n:
            raise DomainError("symmetric noise requires eps_p == eps_n")

    @classmethod
    def symmetric(cls, eps: float) -> "NoiseSpec":
        return cls(eps, eps, "symmetric")

    def effective_rate(self, prior: float) -> float:
        """Error rate after flip symmetrization: ``pi_p eps_p + (1 - pi_p) eps_n``."""
        return prior * self.eps_p + (1.0 - prior) * self.eps_n

    def admissible(self, prior: float) -> bool:
        if self.eps_p < 0.5 and self.eps_n < 0.5:
            return True
        return self.effective_rate(prior) < 0.5

    def to_json(self) -> dict:
        return {"eps_p": self.eps_p, "eps_n": self.eps_n, "mode": self.mode}


@dataclass(frozen=True, eq=False)
class PreferenceDataset:
    space: ActionSpace
    a1: np.ndarray
    a2: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray
    weight: np.ndarray
    mode: str = EMPIRICAL
    noise: NoiseSpec | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.a1)
        for name in ("a2", "clean", "noisy", "weight"):
            if len(getattr(self, name)) != n:
                raise DomainError(f"column {name} has the wrong length")
        if self.mode not in (EMPIRICAL, EXACT):
            raise DomainError(f"unknown dataset mode {self.mode!r}")
        if n and np.any(self.a1 == self.a2):
            raise DomainError("pairs must consist of two distinct actions (ties are excluded)")
        for name in ("clean", "noisy"):
            col = getattr(self, name)
            if n and not np.all(np.abs(col) == 1):
                raise DomainError(f"{name} labels must be +1 or -1")

    def __len__(self) -> int:
        return len(self.a1)

    @property
    def flipped(self) -> np.ndarray:
        """Audit marker: rows whose noisy label disagrees with the clean one."""
        return self.clean != self.noisy

    @property
    def class_prior(self) -> float:
        """Positive-class prior ``pi_p`` of the clean labels."""
        if len(self) == 0:
            raise DomainError("empty dataset has no class prior")
        return float(np.sum(self.weight * (self.clean > 0)) / np.sum(self.weight))

    @property
    def noisy_prior(self) -> float:
        return float(np.sum(self.weight * (self.noisy > 0)) / np.sum(self.weight))

    @property
    def pair_weights(self) -> np.ndarray:
        """Marginal ``p(a1, a2)`` as an ``(n_actions, n_actions)`` matrix."""
        k = len(self.space)
        out = np.zeros(k * k)
        np.add.at(out, self.a1 * k + self.a2, self.weight)
        return out.reshape(k, k) / np.sum(self.weight)

    def labels(self, view: str) -> np.ndarray:
        if view == "noisy":
            return self.noisy
        if view == "clean":
            return self.clean
        raise DomainError(f"label view must be 'clean' or 'noisy', got {view!r}")

    def training_view(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(a1, a2, noisy_label, weight)``; clean labels are withheld."""
        return self.a1, self.a2, self.noisy, self.weight

    def records(self) -> list[PreferenceRecord]:
        acts = self.space.actions
        return [
            PreferenceRecord(acts[i], acts[j], int(c), int(y), bool(c != y))
            for i, j, c, y in zip(self.a1, self.a2, self.clean, self.noisy)
        ]

    def with_rows(self, a1, a2, clean, noisy, weight, **changes) -> "PreferenceDataset":
        return replace(
            self,
            a1=np.asarray(a1, dtype=np.int64),
            a2=np.asarray(a2, dtype=np.int64),
            clean=np.asarray(clean, dtype=np.int8),
            noisy=np.asarray(noisy, dtype=np.int8),
            weight=np.asarray(weight, dtype=float),
            **changes,
        )

    def subset(self, mask) -> "PreferenceDataset":
        mask = np.asarray(mask)
        return self.with_rows(
            self.a1[mask], self.a2[mask], self.clean[mask], self.noisy[mask], _renorm(self.weight[mask])
        )


def _renorm(w: np.ndarray) -> np.ndarray:
    total = w.sum()
    return w / total if total > 0 else w


def _empirical(space, a1, a2, clean, seed, **meta) -> PreferenceDataset:
    a1 = np.asarray(a1, dtype=np.int64)
    n = len(a1)
    clean = np.asarray(clean, dtype=np.int8)
    return PreferenceDataset(
        space=space,
        a1=a1,
        a2=np.asarray(a2, dtype=np.int64),
        clean=clean,
        noisy=clean.copy(),
        weight=np.full(n, 1.0 / n) if n else np.zeros(0),
        mode=EMPIRICAL,
        seed=seed,
        meta=meta,
    )


def bt_probability(space: ActionSpace, a1, a2) -> np.ndarray | float:
    """``p(a1 > a2) = sigmoid(r_true(a1) - r_true(a2))``."""
    if np.ndim(a1) == 0:
        i, j = space.index(a1), space.index(a2)
        return float(expit(space.true_reward[i] - space.true_reward[j]))
    return expit(space.true_reward[np.asarray(a1)] - space.true_reward[np.asarray(a2)])


def bt_label(space: ActionSpace, a1, a2, rng: np.random.Generator) -> int:
    """Sample one Bradley-Terry label: +1 if ``a1`` is preferred."""
    i, j = space.index(a1), space.index(a2)
    if i == j:
        raise DomainError("a1 and a2 must be distinct actions")
    return 1 if rng.random() < bt_probability(space, i, j) else -1


def bt_labels(space: ActionSpace, a1: np.ndarray, a2: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = bt_probability(space, a1, a2)
    return np.where(rng.random(len(a1)) < p, 1, -1).astype(np.int8)


def exact_dataset(space: ActionSpace, pair_weights: np.ndarray | None = None, seed=None) -> PreferenceDataset:
    """Exact-expectation dataset with Bradley-Terry clean labels.

    ``pair_weights`` defaults to uniform over all ordered pairs of distinct
    actions.  The diagonal must carry no mass.
    """
    k = len(space)
    if pair_weights is None:
        pair_weights = np.ones((k, k)) - np.eye(k)
    w = np.asarray(pair_weights, dtype=float)
    if w.shape != (k, k) or np.any(w < 0):
        raise DomainError("pair_weights must be a nonnegative (n_actions, n_actions) matrix")
    if np.any(np.diag(w) != 0):
        raise DomainError("pair_weights must put zero mass on a1 == a2")
    w = w / w.sum()
    i, j = np.nonzero(w > 0)
    p = expit(space.true_reward[i] - space.true_reward[j])
    a1 = np.concatenate([i, i])
    a2 = np.concatenate([j, j])
    y = np.concatenate([np.ones(len(i)), -np.ones(len(i))]).astype(np.int8)
    mass = np.concatenate([w[i, j] * p, w[i, j] * (1.0 - p)])
    keep = mass > 0
    return PreferenceDataset(
        space=space,
        a1=a1[keep],
        a2=a2[keep],
        clean=y[keep],
        noisy=y[keep].copy(),
        weight=mass[keep],
        mode=EXACT,
        seed=seed,
    )


def inject_noise(ds: PreferenceDataset, noise: NoiseSpec, rng: np.random.Generator | None = None) -> PreferenceDataset:
    """Flip each clean label with probability ``eps_p`` (if +1) or ``eps_n`` (if -1).

    Exact datasets split every row into its kept and flipped masses;
    empirical datasets draw one independent flip per record.
    """
    if len(ds) == 0:
        return replace(ds, noise=noise)
    prior = ds.class_prior
    if not noise.admissible(prior):
        raise DomainError(
            f"noise (eps_p={noise.eps_p}, eps_n={noise.eps_n}) has effective rate "
            f"{noise.effective_rate(prior):.3f} >= 0.5 at prior {prior:.3f}"
        )
    rate = np.where(ds.clean > 0, noise.eps_p, noise.eps_n)
    if ds.mode == EXACT:
        keep_w = ds.weight * (1.0 - rate)
        flip_w = ds.weight * rate
        a1 = np.concatenate([ds.a1, ds.a1])
        a2 = np.concatenate([ds.a2, ds.a2])
        clean = np.concatenate([ds.clean, ds.clean])
        noisy = np.concatenate([ds.clean, -ds.clean])
        weight = np.concatenate([keep_w, flip_w])
        m = weight > 0
        return ds.with_rows(a1[m], a2[m], clean[m], noisy[m], weight[m], noise=noise)
    if rng is None:
        raise DomainError("empirical noise injection needs a random generator")
    flip = rng.random(len(ds)) < rate
    noisy = np.where(flip, -ds.clean, ds.clean)
    return ds.with_rows(ds.a1, ds.a2, ds.clean, noisy, ds.weight, noise=noise)


Selector = Callable[[int, int], bool] | np.ndarray | Iterable[tuple[int, int]] | None


def selector_matrix(space: ActionSpace, selector: Selector) -> np.ndarray:
    """Normalize a pair selector to a boolean ``(n_actions, n_actions)`` matrix.

    Accepts ``None`` (empty), a boolean matrix, a callable on index pairs, or
    an iterable of ``(a1, a2)`` pairs given as ids or indices.
    """
    k = len(space)
    if selector is None:
        return np.zeros((k, k), dtype=bool)
    if isinstance(selector, np.ndarray):
        sel = selector.astype(bool)
        if sel.shape != (k, k):
            raise DomainError("selector matrix must be (n_actions, n_actions)")
        return sel
    if callable(selector):
        return np.array([[bool(selector(i, j)) for j in range(k)] for i in range(k)])
    sel = np.zeros((k, k), dtype=bool)
    for x, y in selector:
        sel[space.index(x), space.index(y)] = True
    return sel


def flip_subset(ds: PreferenceDataset, selector: Selector) -> PreferenceDataset:
    """Swap ``(a1, a2)`` and negate both labels on every selected ordered pair."""
    sel = selector_matrix(ds.space, selector)
    hit = sel[ds.a1, ds.a2]
    a1 = np.where(hit, ds.a2, ds.a1)
    a2 = np.where(hit, ds.a1, ds.a2)
    clean = np.where(hit, -ds.clean, ds.clean)
    noisy = np.where(hit, -ds.noisy, ds.noisy)
    return ds.with_rows(a1, a2, clean, noisy, ds.weight)


def random_flip(ds: PreferenceDataset, rng: np.random.Generator) -> PreferenceDataset:
    """Flip a random set of ordered pairs, one Bernoulli(1/2) draw per distinct pair.

    Draws are keyed by ordered pair, so repeated records of the same pair are
    flipped together.  Pairs absent from the data need no draw.
    """
    k = len(ds.space)
    keys = ds.a1.astype(np.int64) * k + ds.a2
    uniq, inv = np.unique(keys, return_inverse=True)
    hit = (rng.random(len(uniq)) < 0.5)[inv]
    a1 = np.where(hit, ds.a2, ds.a1)
    a2 = np.where(hit, ds.a1, ds.a2)
    return ds.with_rows(a1, a2, np.where(hit, -ds.clean, ds.clean), np.where(hit, -ds.noisy, ds.noisy), ds.weight)


def flip_symmetrize(ds: PreferenceDataset) -> PreferenceDataset:
    """Average of ``ds`` over all Bernoulli(1/2) flip patterns, computed exactly.

    Each row keeps half its mass and sends the other half to the swapped,
    label-negated row.  The result has clean prior exactly 1/2.
    """
    if ds.mode != EXACT:
        raise DomainError("flip_symmetrize is defined for exact-mode datasets")
    return ds.with_rows(
        np.concatenate([ds.a1, ds.a2]),
        np.concatenate([ds.a2, ds.a1]),
        np.concatenate([ds.clean, -ds.clean]),
        np.concatenate([ds.noisy, -ds.noisy]),
        np.concatenate([ds.weight, ds.weight]) / 2.0,
    )


# --- generators -------------------------------------------------------------


def generate_gaussian_pairs(
    n: int,
    rng: np.random.Generator,
    prior: float | None = 0.8,
    max_draws: int | None = None,
    seed: int | None = None,
) -> PreferenceDataset:
    """Scalar-action pairs from a standard 2D Gaussian labeled by ``sign(a1 - a2)``.

    With ``prior`` set, draws are rejection-subsampled per class until
    exactly ``round(prior * n)`` positive pairs are collected.  Every draw
    contributes two fresh actions whose value, feature and true reward agree.
    """
    if n < 1:
        raise GenerationError("n must be at least 1")
    if prior is None:
        xy = rng.standard_normal((n, 2))
    else:
        if not 0.0 < prior < 1.0:
            raise GenerationError(f"target prior must lie in (0, 1), got {prior}")
        n_pos = int(round(prior * n))
        if n_pos in (0, n):
            raise GenerationError(f"prior {prior} is unreachable with n={n} pairs")
        n_neg = n - n_pos
        max_draws = max_draws or 50 * n
        pos, neg, drawn = [], [], 0
        while (len(pos) < n_pos or len(neg) < n_neg) and drawn < max_draws:
            batch = rng.standard_normal((n, 2))
            drawn += n
            up = batch[:, 0] > batch[:, 1]
            pos.extend(batch[up][: n_pos - len(pos)])
            neg.extend(batch[~up][: n_neg - len(neg)])
        if len(pos) < n_pos or len(neg) < n_neg:
            raise GenerationError("ran out of draws before reaching the target prior")
        xy = np.concatenate([np.asarray(pos).reshape(-1, 2), np.asarray(neg).reshape(-1, 2)])
        xy = xy[rng.permutation(n)]
    values = np.concatenate([xy[:, 0], xy[:, 1]])
    space = ActionSpace(tuple(f"g{i}" for i in range(2 * n)), values, values[:, None])
    a1 = np.arange(n)
    a2 = np.arange(n, 2 * n)
    clean = np.where(xy[:, 0] - xy[:, 1] >= 0, 1, -1)
    return _empirical(space, a1, a2, clean, seed, generator="gaussian", prior=prior)


def reward_values(reward_law, size: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """True rewards for ``size`` actions under a named law, callable, or explicit list."""
    idx = np.arange(size)
    if callable(reward_law):
        return np.asarray(reward_law(idx), dtype=float)
    if isinstance(reward_law, str):
        if reward_law == "digits":
            return (idx % 10).astype(float)
        if reward_law == "linear":
            return idx.astype(float)
        if reward_law == "random":
            if rng is None:
                raise GenerationError("random reward law needs a generator")
            return rng.standard_normal(size)
        raise GenerationError(f"unknown reward law {reward_law!r}")
    values = np.asarray(reward_law, dtype=float)
    if values.shape != (size,):
        raise GenerationError("explicit reward list must have one entry per action")
    return values


def _admissible_pairs(reward: np.ndarray, exclude_equal: bool) -> np.ndarray:
    k = len(reward)
    ok = ~np.eye(k, dtype=bool)
    if exclude_equal:
        ok &= reward[:, None] != reward[None, :]
    return ok


def generate_tabular(
    space_size: int,
    reward_law="digits",
    n_pairs: int = 1000,
    rng: np.random.Generator | None = None,
    mode: str = EMPIRICAL,
    exclude_equal: bool = True,
    seed: int | None = None,
) -> PreferenceDataset:
    """Pairs over a finite space ``a0..a{k-1}`` with Bradley-Terry labels.

    Ordered pairs are uniform over distinct actions, skipping equal-reward
    pairs when ``exclude_equal``.  Exact mode enumerates the same uniform
    pair distribution instead of sampling.
    """
    if space_size < 2:
        raise GenerationError("space_size must be at least 2")
    reward = reward_values(reward_law, space_size, rng)
    space = ActionSpace(tuple(f"a{i}" for i in range(space_size)), reward)
    ok = _admissible_pairs(reward, exclude_equal)
    if not ok.any():
        raise GenerationError("no admissible pairs: all rewards are equal")
    if mode == EXACT:
        ds = exact_dataset(space, ok.astype(float), seed=seed)
        ds.meta.update(generator="tabular", reward_law=str(reward_law))
        return ds
    if n_pairs < 1:
        raise GenerationError("n_pairs must be at least 1")
    if rng is None:
        raise GenerationError("empirical generation needs a random generator")
    i, j = np.nonzero(ok)
    pick = rng.integers(0, len(i), n_pairs)
    a1, a2 = i[pick], j[pick]
    clean = bt_labels(space, a1, a2, rng)
    return _empirical(space, a1, a2, clean, seed, generator="tabular", reward_law=str(reward_law))


@dataclass(frozen=True)
class DigitFeatureConfig:
    """Synthetic stand-in for paired digit images.

    Each "image" is an action whose true reward is its digit.  Its feature
    vector concatenates ``signal * onehot(digit)`` with an image-specific
    Gaussian nuisance block of ``nuisance_dim`` coordinates, which gives a
    linear reward model enough capacity to memorize individual images.
    """

    n_digits: int = 10
    images_per_digit_train: int = 100
    images_per_digit_test: int = 100
    nuisance_dim: int = 800
    nuisance_scale: float = 3.0
    signal: float = 1.0
    n_train_pairs: int = 10_000
    n_test_pairs: int = 1_000


def generate_digit_features(
    cfg: DigitFeatureConfig, rng: np.random.Generator, seed: int | None = None
) -> tuple[PreferenceDataset, PreferenceDataset]:
    """Train and test datasets over disjoint image pools sharing one space."""
    digits = []
    for split, per in (("tr", cfg.images_per_digit_train), ("te", cfg.images_per_digit_test)):
        digits.append((split, np.repeat(np.arange(cfg.n_digits), per)))
    all_digits = np.concatenate([d for _, d in digits])
    ids = tuple(
        f"{split}{d}_{k}"
        for split, ds in digits
        for k, d in enumerate(ds)
    )
    code = np.eye(cfg.n_digits)[all_digits] * cfg.signal
    nuisance = rng.standard_normal((len(all_digits), cfg.nuisance_dim)) * (
        cfg.nuisance_scale / np.sqrt(cfg.nuisance_dim)
    )
    space = ActionSpace(ids, all_digits.astype(float), np.hstack([code, nuisance]))
    n_train_img = len(digits[0][1])

    def sample_pairs(lo: int, hi: int, n: int):
        a1 = np.empty(0, dtype=np.int64)
        a2 = np.empty(0, dtype=np.int64)
        while len(a1) < n:
            c1 = rng.integers(lo, hi, 2 * n)
            c2 = rng.integers(lo, hi, 2 * n)
            ok = all_digits[c1] != all_digits[c2]
            a1 = np.concatenate([a1, c1[ok]])
            a2 = np.concatenate([a2, c2[ok]])
        return a1[:n], a2[:n]

    tr1, tr2 = sample_pairs(0, n_train_img, cfg.n_train_pairs)
    te1, te2 = sample_pairs(n_train_img, len(all_digits), cfg.n_test_pairs)
    train = _empirical(space, tr1, tr2, bt_labels(space, tr1, tr2, rng), seed, generator="digits", split="train")
    test = _empirical(space, te1, te2, bt_labels(space, te1, te2, rng), seed, generator="digits", split="test")
    return train, test


# --- serialization -----------------------------------------------------------

CSV_HEADER = ("a1", "a2", "clean_label", "noisy_label")


def save_dataset(ds: PreferenceDataset, out_dir: str | Path) -> Path:
    """Write ``pairs.csv`` and the ``space.json`` sidecar into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    acts = ds.space.actions
    with open(out / "pairs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i, j, c, y in zip(ds.a1, ds.a2, ds.clean, ds.noisy):
            writer.writerow((acts[i], acts[j], int(c), int(y)))
    sidecar = {
        "space": ds.space.to_json(),
        "noise": None if ds.noise is None else ds.noise.to_json(),
        "class_prior": ds.class_prior if len(ds) else None,
        "seed": ds.seed,
        "mode": ds.mode,
        "meta": ds.meta,
    }
    if ds.mode == EXACT:
        sidecar["weights"] = ds.weight.tolist()
    (out / "space.json").write_text(json.dumps(sidecar, indent=2, default=_json_default))
    return out


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def load_space(path: str | Path) -> ActionSpace:
    data = json.loads(Path(path).read_text())
    return ActionSpace.from_json(data["space"] if "space" in data else data)


def load_dataset(in_dir: str | Path) -> PreferenceDataset:
    src = Path(in_dir)
    sidecar = json.loads((src / "space.json").read_text())
    space = ActionSpace.from_json(sidecar["space"])
    rows = []
    with open(src / "pairs.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[:4]) != CSV_HEADER:
            raise GenerationError(f"unexpected CSV header {header}")
        for row in reader:
            rows.append((space.index(row[0]), space.index(row[1]), int(row[2]), int(row[3])))
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    mode = sidecar.get("mode", EMPIRICAL)
    if mode == EXACT:
        weight = np.asarray(sidecar["weights"], dtype=float)
    else:
        weight = np.full(len(arr), 1.0 / max(len(arr), 1))
    noise = sidecar.get("noise")
    return PreferenceDataset(
        space=space,
        a1=arr[:, 0],
        a2=arr[:, 1],
        clean=arr[:, 2].astype(np.int8),
        noisy=arr[:, 3].astype(np.int8),
        weight=weight,
        mode=mode,
        noise=None if noise is None else NoiseSpec(**noise),
        seed=sidecar.get("seed"),
        meta=sidecar.get("meta") or {},
    )
