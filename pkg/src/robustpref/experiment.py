"""Noise sweeps, aggregated reports and the risk-curve replication.

A sweep runs one cell per ``(loss, noise, seed)`` triple.  Each cell draws
its data, noise and initialization from its own seeded streams, so cells
can run in any order or in parallel and still produce identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import cpe_recovery_error, rank_preservation_rate, reward_accuracy
from .errors import ConfigError, RobustPrefError
from .losses import LossSpec, parse_loss, zoo
from .policy import implicit_reward, improvement_margin, optimal_policy, train_policy_offline, uniform_reference
from .prefgen import (
    EMPIRICAL,
    EXACT,
    DigitFeatureConfig,
    NoiseSpec,
    PreferenceDataset,
    exact_dataset,
    flip_symmetrize,
    generate_digit_features,
    generate_gaussian_pairs,
    generate_tabular,
    inject_noise,
    random_flip,
)
from .riskcore import LINEAR, TABULAR, RewardModel, TrainConfig, empirical_risk, train_reward
from .rng import stream

PIPELINES = ("reward", "rlhf", "offline")
GENERATORS = ("digits", "tabular")
CSV_COLUMNS = ("loss", "eps_p", "eps_n", "seed", "reward_accuracy", "rank_rate", "cpe_err", "margin")

# Defaults for the linear reward model on digit features.
DIGIT_TRAINING = {"learning_rate": 1.0, "epochs": 400, "clip": 20.0}


def _noise_entry(entry) -> NoiseSpec:
    if isinstance(entry, (int, float)):
        return NoiseSpec.symmetric(float(entry))
    if isinstance(entry, dict):
        return NoiseSpec(float(entry["eps_p"]), float(entry["eps_n"]))
    if isinstance(entry, (list, tuple)) and len(entry) == 2:
        return NoiseSpec(float(entry[0]), float(entry[1]))
    raise ConfigError(f"cannot read noise grid entry {entry!r}")


@dataclass
class ExperimentConfig:
    """One sweep, stored as JSON.

    ``dataset`` holds ``generator`` (``digits`` or ``tabular``) plus that
    generator's keyword arguments.  ``noise`` entries are a symmetric rate
    or an ``[eps_p, eps_n]`` pair.  ``train`` overrides the training
    defaults (``learning_rate``, ``epochs``, ``clip``).
    """

    dataset: dict = field(default_factory=lambda: {"generator": "digits"})
    losses: list = field(default_factory=lambda: ["logistic", "hinge", "sigmoid", "ramp"])
    noise: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    train: dict = field(default_factory=dict)
    pipeline: str = "reward"
    beta: float = 0.1
    flip: bool = False
    out_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        gen = self.dataset.get("generator")
        if gen not in GENERATORS:
            raise ConfigError(f"dataset.generator must be one of {GENERATORS}, got {gen!r}")
        if self.pipeline == "offline" and gen != "tabular":
            raise ConfigError("the offline pipeline needs a tabular dataset")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if not self.losses:
            raise ConfigError("losses must be nonempty")
        if not self.noise:
            raise ConfigError("noise grid must be nonempty")
        for name in self.losses:
            try:
                parse_loss(name)
            except RobustPrefError as exc:
                raise ConfigError(f"unresolvable loss {name!r}: {exc}") from exc
        for entry in self.noise:
            try:
                spec = _noise_entry(entry)
            except RobustPrefError as exc:
                raise ConfigError(str(exc)) from exc
            if not spec.admissible(0.5):
                raise ConfigError(f"noise {entry!r} is not admissible (effective flip rate must stay below 1/2)")
        if not self.beta > 0:
            raise ConfigError("beta must be positive")
        unknown = set(self.train) - {"learning_rate", "epochs", "clip", "init", "init_scale"}
        if unknown:
            raise ConfigError(f"unknown training keys {sorted(unknown)}")

    @property
    def noise_specs(self) -> list[NoiseSpec]:
        return [_noise_entry(e) for e in self.noise]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_json(data)

    def digest(self) -> str:
        body = {k: v for k, v in self.to_json().items() if k != "out_dir"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class CellResult:
    loss: str
    eps_p: float
    eps_n: float
    seed: int
    reward_accuracy: float = math.nan
    rank_rate: float = math.nan
    cpe_err: float = math.nan
    margin: float = math.nan
    error: str | None = None
    detail: str | None = None

    @property
    def key(self) -> str:
        return f"{self.loss}__p{self.eps_p:g}_n{self.eps_n:g}__s{self.seed}"

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list[CellResult]
    aggregates: list[dict]
    provenance: dict

    @property
    def failures(self) -> list[CellResult]:
        return [r for r in self.rows if not r.ok]

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([r.loss, repr(r.eps_p), repr(r.eps_n), r.seed] + [repr(float(getattr(r, c))) for c in CSV_COLUMNS[4:]])
        return buf.getvalue()

    def mean_accuracy(self, loss: str, eps_p: float, eps_n: float | None = None) -> float:
        eps_n = eps_p if eps_n is None else eps_n
        for agg in self.aggregates:
            if agg["loss"] == loss and agg["eps_p"] == eps_p and agg["eps_n"] == eps_n:
                return agg["reward_accuracy_mean"]
        raise KeyError((loss, eps_p, eps_n))

    def table(self) -> str:
        """Losses by noise rates, mean ± population SD of reward accuracy in percent."""
        noises = [(s.eps_p, s.eps_n) for s in self.config.noise_specs]
        heads = [f"eps={p:g}" if p == n else f"eps=({p:g},{n:g})" for p, n in noises]
        width = max(14, *(len(h) for h in heads))
        name_w = max(8, *(len(l) for l in self.config.losses))
        lines = ["loss".ljust(name_w) + "".join(h.rjust(width) for h in heads)]
        for loss in self.config.losses:
            cells = []
            for p, n in noises:
                agg = next(a for a in self.aggregates if a["loss"] == loss and a["eps_p"] == p and a["eps_n"] == n)
                m, s = agg["reward_accuracy_mean"], agg["reward_accuracy_sd"]
                cells.append("failed" if math.isnan(m) else f"{100 * m:.1f} ± {100 * s:.1f}")
            lines.append(loss.ljust(name_w) + "".join(c.rjust(width) for c in cells))
        return "\n".join(lines) + "\n"


# --- cell execution ---------------------------------------------------------------


def _train_config(cfg: ExperimentConfig, loss: LossSpec, seed: int, kind: str) -> TrainConfig:
    base = dict(DIGIT_TRAINING) if kind == LINEAR else {"learning_rate": 1.0, "epochs": 1000, "clip": None}
    base.update(cfg.train)
    return TrainConfig(loss=loss, seed=seed, kind=kind, **base)


def _make_data(cfg: ExperimentConfig, seed: int) -> tuple[PreferenceDataset, PreferenceDataset]:
    params = {k: v for k, v in cfg.dataset.items() if k != "generator"}
    rng = stream(seed, "data")
    if cfg.dataset["generator"] == "digits":
        return generate_digit_features(DigitFeatureConfig(**params), rng, seed=seed)
    size = int(params.pop("space_size", 10))
    law = params.pop("reward_law", "random")
    mode = params.pop("mode", EXACT)
    n_pairs = int(params.pop("n_pairs", 1000))
    if params:
        raise ConfigError(f"unknown tabular dataset keys {sorted(params)}")
    train = generate_tabular(size, law, n_pairs, rng, mode=mode, seed=seed)
    test = exact_dataset(train.space)
    return train, test


def run_cell(cfg: ExperimentConfig, loss_name: str, noise: NoiseSpec, seed: int) -> CellResult:
    """Train and evaluate one sweep cell; failures are returned, not raised."""
    out = CellResult(loss_name, noise.eps_p, noise.eps_n, seed)
    try:
        loss = parse_loss(loss_name)
        train, test = _make_data(cfg, seed)
        noisy = inject_noise(train, noise, stream(seed, "noise"))
        if cfg.flip:
            noisy = flip_symmetrize(noisy) if noisy.mode == EXACT else random_flip(noisy, stream(seed, "flip"))
        space = train.space
        ref = uniform_reference(len(space))
        if cfg.pipeline == "offline":
            tcfg = _train_config(cfg, loss, seed, TABULAR)
            pi, _ = train_policy_offline(noisy, loss, ref, cfg.beta, tcfg, baseline=not loss.is_symmetric)
            model = implicit_reward(pi)
        else:
            kind = LINEAR if cfg.dataset["generator"] == "digits" else TABULAR
            model, _ = train_reward(noisy, _train_config(cfg, loss, seed, kind))
            pi = optimal_policy(model.values(space), ref, cfg.beta)
        out.reward_accuracy = reward_accuracy(model, test)
        out.rank_rate = rank_preservation_rate(model, space)
        if loss.is_cpe:
            out.cpe_err = cpe_recovery_error(model, space, loss)
        out.margin = improvement_margin(pi, ref, space)
    except Exception as exc:  # recorded in the report; the sweep goes on
        out.error = f"{type(exc).__name__}: {exc}"
        out.reward_accuracy = out.rank_rate = out.cpe_err = out.margin = math.nan
        out.detail = traceback.format_exc()
    return out


def _run_cell_args(args) -> CellResult:
    return run_cell(*args)


def _aggregate(cfg: ExperimentConfig, rows: list[CellResult]) -> list[dict]:
    aggs = []
    for loss in cfg.losses:
        for spec in cfg.noise_specs:
            group = [r for r in rows if r.loss == loss and r.eps_p == spec.eps_p and r.eps_n == spec.eps_n]
            good = [r for r in group if r.ok]
            agg = {"loss": loss, "eps_p": spec.eps_p, "eps_n": spec.eps_n, "n_ok": len(good), "n_failed": len(group) - len(good)}
            for col in CSV_COLUMNS[4:]:
                vals = np.array([getattr(r, col) for r in good], dtype=float)
                vals = vals[~np.isnan(vals)]
                agg[f"{col}_mean"] = float(vals.mean()) if vals.size else math.nan
                # population SD over seeds
                agg[f"{col}_sd"] = float(vals.std(ddof=0)) if vals.size else math.nan
            aggs.append(agg)
    return aggs


def run_sweep(cfg: ExperimentConfig, jobs: int = 1, out_dir: str | Path | None = None) -> ExperimentReport:
    """Run every ``(loss, noise, seed)`` cell and aggregate.

    When an output directory is given (argument or ``cfg.out_dir``) it
    receives ``cells/<key>.json``, ``results.csv``, ``table.txt`` and
    ``report.json``.
    """
    cfg.validate()
    tasks = [(cfg, loss, spec, int(seed)) for loss in cfg.losses for spec in cfg.noise_specs for seed in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell_args, tasks))
    else:
        rows = [run_cell(*t) for t in tasks]
    report = ExperimentReport(
        config=cfg,
        rows=rows,
        aggregates=_aggregate(cfg, rows),
        provenance={"config_hash": cfg.digest(), "version": __version__},
    )
    target = out_dir if out_dir is not None else cfg.out_dir
    if target is not None:
        write_report(report, target)
    return report


def write_report(report: ExperimentReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    cells = out / "cells"
    cells.mkdir(parents=True, exist_ok=True)
    written = []
    for r in report.rows:
        path = cells / f"{r.key}.json"
        path.write_text(json.dumps(asdict(r), indent=2, sort_keys=True))
        written.append(path)
    for name, text in (
        ("results.csv", report.csv_text()),
        ("table.txt", report.table()),
        (
            "report.json",
            json.dumps(
                {
                    "config": report.config.to_json(),
                    "provenance": report.provenance,
                    "aggregates": report.aggregates,
                    "failures": [{"key": r.key, "error": r.error} for r in report.failures],
                },
                indent=2,
                sort_keys=True,
            ),
        ),
    ):
        (out / name).write_text(text)
        written.append(out / name)
    return written


# --- risk curves before and after random flipping ----------------------------------


FIG2_COLUMNS = ("theta", "loss_name", "risk_pre", "risk_post")


def fig2_curves(
    n: int = 100_000,
    seed: int = 0,
    thetas=None,
    losses: list[LossSpec] | None = None,
    prior: float = 0.8,
    noise: NoiseSpec = NoiseSpec(0.0, 0.5),
) -> list[tuple[float, str, float, float]]:
    """Empirical risk of ``r(a) = theta * a`` on noisy Gaussian pairs, before and after a random flip."""
    thetas = np.linspace(-3.0, 3.0, 61) if thetas is None else np.asarray(thetas, dtype=float)
    losses = zoo() if losses is None else losses
    clean = generate_gaussian_pairs(n, stream(seed, "fig2-data"), prior=prior, seed=seed)
    pre = inject_noise(clean, noise, stream(seed, "fig2-noise"))
    post = random_flip(pre, stream(seed, "fig2-flip"))
    rows = []
    for theta in thetas:
        model = RewardModel.linear([theta])
        for loss in losses:
            rows.append((float(theta), loss.name, empirical_risk(model, pre, loss), empirical_risk(model, post, loss)))
    return rows


def run_fig2(out_dir: str | Path, n: int = 100_000, seed: int = 0, thetas=None) -> Path:
    """Write ``fig2.csv`` with columns ``theta,loss_name,risk_pre,risk_post``."""
    rows = fig2_curves(n=n, seed=seed, thetas=thetas)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "fig2.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIG2_COLUMNS)
        for theta, name, a, b in rows:
            writer.writerow([repr(theta), name, repr(a), repr(b)])
    return path


def max_curve_gap(rows) -> float:
    return max(abs(a - b) for _, _, a, b in rows)
