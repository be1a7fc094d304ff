"""Randomized probes of the robustness guarantees, one per acceptance criterion.

Every probe is seeded, returns a :class:`ProbeResult` and never raises on
a failed check; the ``verify`` subcommand and the acceptance tests both
run them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import (
    expanding_box_minimizer,
    cpe_recovery_error,
    rank_preservation_rate,
)
from .experiment import ExperimentConfig, fig2_curves, max_curve_gap, run_sweep
from .losses import LOSS_NAMES, kinks, loss_grad, loss_value, make_loss, noise_corrected, zoo
from .policy import (
    PolicyParams,
    _implicit_from_logits,
    implicit_reward,
    improvement_margin,
    optimal_policy,
    sympo_objective,
    train_policy_offline,
)
from .prefgen import ActionSpace, NoiseSpec, exact_dataset, flip_subset, flip_symmetrize, inject_noise
from .riskcore import RewardModel, TrainConfig, empirical_risk, exact_risk_affine_check, reward_gradient, risk_gradient, train_reward
from .rng import stream


@dataclass
class ProbeResult:
    name: str
    passed: bool
    summary: str
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.summary} ({self.seconds:.1f}s)"


def _space(values, features=None) -> ActionSpace:
    return ActionSpace(tuple(f"a{i}" for i in range(len(values))), np.asarray(values, dtype=float), features)


def _timed(fn):
    def wrapper(*args, **kwargs) -> ProbeResult:
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def probe_flip_invariance(seed: int = 0, n_triples: int = 50, n_samples: int = 100_000) -> ProbeResult:
    """Flipping any subset of pairs leaves the risk unchanged, exactly and by sampling."""
    rng = stream(seed, "probe-flip")
    losses = zoo() + [make_loss("cdpo", eps=0.1), make_loss("rdpo", eps=0.2), make_loss("ropo", alpha=14)]
    worst = 0.0
    for t in range(n_triples):
        k = int(rng.integers(2, 9))
        space = _space(rng.normal(size=k))
        weights = rng.random((k, k)) * (1 - np.eye(k))
        noise = NoiseSpec(rng.uniform(0, 0.45), rng.uniform(0, 0.45))
        ds = inject_noise(exact_dataset(space, weights), noise)
        loss = losses[t % len(losses)]
        model = RewardModel.tabular(rng.normal(scale=2.0, size=k))
        selector = rng.random((k, k)) < 0.5
        pre = empirical_risk(model, ds, loss)
        post = empirical_risk(model, flip_subset(ds, selector), loss)
        worst = max(worst, abs(pre - post))
    gap = max_curve_gap(fig2_curves(n=n_samples, seed=seed))
    ok = worst < 1e-12 and gap < 0.01
    return ProbeResult(
        "flip invariance",
        ok,
        f"max exact gap {worst:.2e} over {n_triples} triples (< 1e-12); sampled curve gap {gap:.2e} at n={n_samples} (< 0.01)",
        details={"exact_gap": worst, "curve_gap": gap},
    )


@_timed
def probe_affine_identity(seed: int = 0, n_settings: int = 20, n_order_trials: int = 100) -> ProbeResult:
    """Exact noisy risk of a symmetric loss is an affine map of the clean risk."""
    rng = stream(seed, "probe-affine")
    losses = [make_loss(n) for n in ("sigmoid", "ramp", "unhinged")]

    def draw():
        k = int(rng.integers(2, 7))
        space = _space(rng.normal(size=k))
        w = rng.random((k, k))
        w = (w + w.T) * (1 - np.eye(k))
        while True:
            eps_p, eps_n = rng.uniform(0, 1, 2)
            if 0.5 * (eps_p + eps_n) < 0.5:
                break
        return space, exact_dataset(space, w), NoiseSpec(eps_p, eps_n)

    worst = 0.0
    for _ in range(n_settings):
        space, ds, noise = draw()
        for loss in losses:
            model = RewardModel.tabular(rng.normal(scale=2.0, size=len(space)))
            lhs, rhs = exact_risk_affine_check(model, ds, noise, loss)
            worst = max(worst, abs(lhs - rhs))
    kept = 0
    for t in range(n_order_trials):
        space, ds, noise = draw()
        loss = losses[t % len(losses)]
        noisy = inject_noise(ds, noise)
        m1 = RewardModel.tabular(rng.normal(scale=2.0, size=len(space)))
        m2 = RewardModel.tabular(rng.normal(scale=2.0, size=len(space)))
        clean_order = np.sign(empirical_risk(m1, ds, loss, "clean") - empirical_risk(m2, ds, loss, "clean"))
        noisy_order = np.sign(empirical_risk(m1, noisy, loss, "noisy") - empirical_risk(m2, noisy, loss, "noisy"))
        kept += int(clean_order == noisy_order)
    ok = worst < 1e-10 and kept == n_order_trials
    return ProbeResult(
        "affine noisy-risk identity",
        ok,
        f"max |noisy - affine(clean)| {worst:.2e} (< 1e-10); risk order kept in {kept}/{n_order_trials}",
        details={"max_residual": worst, "order_kept": kept},
    )


_MONOTONE = (
    lambda x: 2.0 * x - 1.0,
    lambda x: x**3,
    np.exp,
    np.tanh,
    np.arctan,
    lambda x: 0.5 * x + np.sign(x) * np.abs(x) ** 0.5,
)


@_timed
def probe_policy_improvement(seed: int = 0, n_instances: int = 1000, betas=(0.1, 1.0, 10.0)) -> ProbeResult:
    """The KL-regularized optimum of any rank-preserving reward improves on the reference."""
    rng = stream(seed, "probe-improve")
    positive = 0
    worst = np.inf
    for t in range(n_instances):
        k = int(rng.integers(2, 13))
        rt = rng.normal(size=k)
        while np.ptp(rt) == 0:
            rt = rng.normal(size=k)
        space = _space(rt)
        reward = _MONOTONE[t % len(_MONOTONE)](rt)
        ref = rng.dirichlet(np.ones(k))
        beta = betas[t % len(betas)]
        m = improvement_margin(optimal_policy(reward, ref, beta), ref, space)
        positive += int(m > 0)
        worst = min(worst, m)
    return ProbeResult(
        "policy improvement",
        positive == n_instances,
        f"positive margin in {positive}/{n_instances} instances (smallest {worst:.2e})",
        details={"positive": positive, "min_margin": worst},
    )


@_timed
def probe_oracle_rank_preservation(seed: int = 0, n_instances: int = 50) -> ProbeResult:
    """Risk minimizers of calibrated losses preserve the true ranking on tiny instances.

    Losses with a minimizer are checked through the grid oracle, whose box
    grows while the argmin sits on its edge (the sigmoid risk, for one, only
    approaches its infimum as the reward gaps diverge).  The
    unhinged risk is linear and has no minimizer, so its steepest-descent
    direction, which every minimizing sequence follows, is checked instead.
    """
    rng = stream(seed, "probe-oracle")
    oracle_losses = [make_loss(n) for n in ("logistic", "hinge", "squared", "exponential", "sigmoid", "ramp")]
    unhinged = make_loss("unhinged")
    failures = {l.name: 0 for l in oracle_losses}
    failures[unhinged.name] = 0
    witnesses = {}
    for _ in range(n_instances):
        k = int(rng.integers(2, 5))
        rt = rng.uniform(0.0, 3.0, k)
        space = _space(rt - rt[0])
        ds = exact_dataset(space)
        for loss in oracle_losses:
            model = expanding_box_minimizer(ds, loss)
            if rank_preservation_rate(model, space) < 1.0:
                failures[loss.name] += 1
                witnesses.setdefault(loss.name, (space.true_reward.tolist(), model.params.tolist()))
        direction = -reward_gradient(np.zeros(k), ds, unhinged, "clean")
        if rank_preservation_rate(direction, space) < 1.0:
            failures[unhinged.name] += 1
    bad = {n: c for n, c in failures.items() if c}
    summary = "all minimizers rank-preserving" if not bad else "rank violations " + ", ".join(
        f"{n} {c}/{n_instances}" for n, c in bad.items()
    )
    return ProbeResult(
        "oracle rank preservation",
        not bad,
        f"{summary} over {n_instances} instances",
        details={"failures": failures, "witnesses": witnesses},
    )


@_timed
def probe_cpe_separation(seed: int = 0, n_instances: int = 10) -> ProbeResult:
    """Logistic training recovers posteriors; symmetric losses recover only the ranking."""
    rng = stream(seed, "probe-cpe")
    cfg = TrainConfig(learning_rate=2.0, epochs=2000)
    logistic = make_loss("logistic")
    worst_cpe = 0.0
    rank_ok = {"sigmoid": True, "ramp": True}
    gap_err = {"sigmoid": 0.0, "ramp": 0.0}
    for _ in range(n_instances):
        rt = rng.uniform(-1.5, 1.5, 4)
        space = _space(rt)
        ds = exact_dataset(space)
        model, _ = train_reward(ds, replace(cfg, loss=logistic))
        worst_cpe = max(worst_cpe, cpe_recovery_error(model, space, logistic))
        for name in rank_ok:
            model, _ = train_reward(ds, replace(cfg, loss=make_loss(name)))
            rank_ok[name] &= rank_preservation_rate(model, space) == 1.0
            r = model.values(space)
            diff = np.abs((r[:, None] - r[None, :]) - (rt[:, None] - rt[None, :]))
            gap_err[name] = max(gap_err[name], float(diff.max()))
    ok = worst_cpe < 1e-2 and all(rank_ok.values()) and all(g > 0.1 for g in gap_err.values())
    return ProbeResult(
        "posterior recovery separation",
        ok,
        f"logistic posterior error {worst_cpe:.1e} (< 1e-2); rank rate 1.0 sigmoid={rank_ok['sigmoid']} "
        f"ramp={rank_ok['ramp']}; largest gap error sigmoid {gap_err['sigmoid']:.2f}, ramp {gap_err['ramp']:.2f} (> 0.1)",
        details={"cpe_error": worst_cpe, "rank_ok": rank_ok, "gap_error": gap_err},
    )


@_timed
def probe_robustness_ordering(seeds=(0, 1, 2, 3, 4), jobs: int = 1, margin: float = 0.05) -> ProbeResult:
    """Symmetric losses keep higher test accuracy than logistic and hinge at high noise."""
    cfg = ExperimentConfig(
        dataset={"generator": "digits"},
        losses=["logistic", "hinge", "sigmoid", "ramp"],
        noise=[0.0, 0.1, 0.2, 0.3, 0.4],
        seeds=list(seeds),
    )
    report = run_sweep(cfg, jobs=jobs)
    gaps = {}
    for eps in (0.3, 0.4):
        for robust in ("sigmoid", "ramp"):
            for base in ("logistic", "hinge"):
                gaps[(robust, base, eps)] = report.mean_accuracy(robust, eps) - report.mean_accuracy(base, eps)
    worst_key = min(gaps, key=gaps.get)
    ok = not report.failures and all(g >= margin for g in gaps.values())
    return ProbeResult(
        "robustness ordering",
        ok,
        f"smallest gap {100 * gaps[worst_key]:.1f} points ({worst_key[0]} vs {worst_key[1]} at eps={worst_key[2]}; "
        f"need >= {100 * margin:.0f}); {len(report.failures)} failed cells",
        details={"table": report.table(), "gaps": {f"{a}-{b}@{e}": g for (a, b, e), g in gaps.items()}},
    )


OFFLINE_BETA = 0.1
OFFLINE_TRAINING = TrainConfig(learning_rate=50.0, epochs=300)


@_timed
def probe_offline_robustness(seed: int = 0, n_instances: int = 100, eff_rate: float = 0.4) -> ProbeResult:
    """Offline policies trained with the sigmoid loss improve on the reference under heavy noise.

    Both policies are scored by the clean sigmoid risk of their implicit
    rewards, a yardstick shared by both objectives.
    """
    rng = stream(seed, "probe-offline")
    sigmoid, logistic = make_loss("sigmoid"), make_loss("logistic")
    improved = wins = 0
    for _ in range(n_instances):
        k = int(rng.integers(3, 9))
        space = _space(rng.normal(size=k))
        clean = exact_dataset(space)
        # uniform pairs give prior 1/2, so eps_p + eps_n = 2 * eff_rate
        eps_p = rng.uniform(2 * eff_rate - 0.5, 0.5)
        noise = NoiseSpec(eps_p, 2 * eff_rate - eps_p)
        noisy = flip_symmetrize(inject_noise(clean, noise))
        ref = rng.dirichlet(np.full(k, 2.0))
        pi_sym, _ = train_policy_offline(noisy, sigmoid, ref, OFFLINE_BETA, OFFLINE_TRAINING)
        pi_dpo, _ = train_policy_offline(noisy, logistic, ref, OFFLINE_BETA, OFFLINE_TRAINING)
        improved += int(improvement_margin(pi_sym, ref, space) > 0)
        r_sym = empirical_risk(implicit_reward(pi_sym), clean, sigmoid, "clean")
        r_dpo = empirical_risk(implicit_reward(pi_dpo), clean, sigmoid, "clean")
        wins += int(r_sym < r_dpo)
    ok = improved >= 0.95 * n_instances and wins >= 0.90 * n_instances
    return ProbeResult(
        "offline robustness",
        ok,
        f"positive margin {improved}/{n_instances} (>= 95%); lower clean risk than logistic {wins}/{n_instances} (>= 90%)",
        details={"improved": improved, "wins": wins},
    )


def _relative_gap(analytic, numeric) -> float:
    """Largest pointwise relative error between two arrays of scalar derivatives."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / scale))


def _vector_gap(analytic, numeric) -> float:
    """Max-norm error of a gradient vector relative to its max norm.

    Entries far below the largest one carry finite-difference roundoff of
    the same absolute size, so entrywise ratios would measure noise.
    """
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _away_from_kinks(z: np.ndarray, points, h: float) -> bool:
    return all(np.all(np.abs(z - p) > 10 * h) for p in points)


def all_gradient_losses():
    out = [make_loss(n) for n in LOSS_NAMES if n not in ("cdpo", "rdpo", "ropo")]
    out += [
        make_loss("cdpo", eps=0.1),
        make_loss("cdpo", eps=0.1, swapped=1),
        make_loss("rdpo", eps=0.2),
        make_loss("rdpo", eps=0.2, corrected=1),
        make_loss("ropo", alpha=14),
        noise_corrected(make_loss("logistic"), 0.2),
    ]
    return out


@_timed
def probe_numerical_hygiene(seed: int = 0, n_points: int = 100, h: float = 1e-5) -> ProbeResult:
    """Analytic gradients match central differences; returned policies sum to one."""
    rng = stream(seed, "probe-grad")
    worst = {}
    for loss in all_gradient_losses():
        z = rng.uniform(-5, 5, 4 * n_points)
        ks = kinks(loss)
        z = z[np.all([np.abs(z - p) > 10 * h for p in ks], axis=0)] if ks else z
        z = z[:n_points]
        fd = (loss_value(loss, z + h) - loss_value(loss, z - h)) / (2 * h)
        worst[loss.label] = _relative_gap(loss_grad(loss, z), fd)

    def fd_vector(f, x):
        out = np.empty_like(x)
        for i in range(len(x)):
            e = np.zeros_like(x)
            e[i] = h
            out[i] = (f(x + e) - f(x - e)) / (2 * h)
        return out

    model_worst = 0.0
    smooth = [make_loss(n) for n in ("logistic", "sigmoid", "squared", "exponential")]
    kinked = [make_loss(n) for n in ("hinge", "ramp", "unhinged")]
    done = 0
    while done < n_points:
        k = int(rng.integers(2, 7))
        d = int(rng.integers(1, 5))
        feats = rng.normal(size=(k, d))
        space = _space(rng.normal(size=k), feats)
        ds = inject_noise(exact_dataset(space, rng.random((k, k)) * (1 - np.eye(k))), NoiseSpec(0.1, 0.3))
        loss = (smooth + kinked)[done % (len(smooth) + len(kinked))]
        w = rng.normal(size=d)
        z = ds.labels("noisy") * (feats @ w)[ds.a1] - ds.labels("noisy") * (feats @ w)[ds.a2]
        if not _away_from_kinks(z, kinks(loss), 1e3 * h):
            continue
        g = risk_gradient(RewardModel.linear(w), ds, loss)
        num = fd_vector(lambda x: empirical_risk(RewardModel.linear(x), ds, loss), w)
        model_worst = max(model_worst, _vector_gap(g, num))
        theta = rng.normal(size=k)
        ref = rng.dirichlet(np.ones(k))
        beta = float(rng.choice([0.1, 1.0, 10.0]))
        if loss.is_symmetric:
            pol = lambda x: sympo_objective(PolicyParams(x), ds, loss, ref, beta)
            r = _implicit_from_logits(theta, ref, beta)
            zz = ds.labels("noisy") * (r[ds.a1] - r[ds.a2])
            if _away_from_kinks(zz, kinks(loss), 1e3 * h):
                model_worst = max(model_worst, _vector_gap(beta * reward_gradient(r, ds, loss), fd_vector(pol, theta)))
        done += 1
    worst["model and policy gradients"] = model_worst

    sum_err = 0.0
    for _ in range(n_points):
        k = int(rng.integers(2, 50))
        ref = rng.dirichlet(np.ones(k))
        beta = float(10 ** rng.uniform(-1, 1))
        pi = optimal_policy(rng.normal(scale=5, size=k), ref, beta)
        sum_err = max(sum_err, abs(pi.probs.sum() - 1.0))
    space = _space(rng.normal(size=5))
    ds = inject_noise(exact_dataset(space), NoiseSpec.symmetric(0.3))
    pi, _ = train_policy_offline(ds, make_loss("sigmoid"), np.full(5, 0.2), 0.1, OFFLINE_TRAINING)
    sum_err = max(sum_err, abs(pi.probs.sum() - 1.0))
    grad_worst = max(worst.values())
    ok = grad_worst < 1e-6 and sum_err < 1e-12
    return ProbeResult(
        "numerical hygiene",
        ok,
        f"worst relative gradient gap {grad_worst:.1e} (< 1e-6); worst policy mass error {sum_err:.1e} (< 1e-12)",
        details={"gradient_gaps": worst, "mass_error": sum_err},
    )


PROBES = {
    "flip": probe_flip_invariance,
    "affine": probe_affine_identity,
    "improvement": probe_policy_improvement,
    "oracle": probe_oracle_rank_preservation,
    "cpe": probe_cpe_separation,
    "ordering": probe_robustness_ordering,
    "offline": probe_offline_robustness,
    "hygiene": probe_numerical_hygiene,
}


def run_probes(names=None) -> list[ProbeResult]:
    names = list(PROBES) if not names else names
    return [PROBES[n]() for n in names]
