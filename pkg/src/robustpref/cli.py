"""Command-line entry point: ``robustpref <subcommand> ...``.

Exit codes: 0 success, 1 failed cells or checks, 2 bad configuration.
Every subcommand that writes files indexes them in ``<out>/manifest.json``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import DiagnosticsReport, cpe_recovery_error, rank_preservation_rate, reward_accuracy
from .errors import ConfigError, DomainError, RobustPrefError
from .experiment import ExperimentConfig, run_fig2, run_sweep
from .losses import parse_loss
from .policy import (
    PolicyTable,
    covariance_margin,
    expected_true_reward,
    implicit_reward,
    improvement_margin,
    optimal_policy,
    train_policy_offline,
    uniform_reference,
)
from .prefgen import (
    EMPIRICAL,
    EXACT,
    DigitFeatureConfig,
    NoiseSpec,
    flip_symmetrize,
    generate_digit_features,
    generate_gaussian_pairs,
    generate_tabular,
    inject_noise,
    load_dataset,
    load_space,
    random_flip,
    save_dataset,
)
from .riskcore import RewardModel, TrainConfig, train_reward
from .rng import stream
from .verify import PROBES

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _write_manifest(out: Path, command: str, args: argparse.Namespace, artifacts: list[Path]) -> None:
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {"version": __version__, "entries": {}}
    manifest["entries"][command] = {
        "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "artifacts": sorted(str(p.relative_to(out)) for p in artifacts),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _out_target(args, default_name: str) -> tuple[Path, Path]:
    """``(directory, file)`` for ``--out`` given as a directory or as a ``.json`` file."""
    out = Path(args.out)
    if out.suffix == ".json":
        out.parent.mkdir(parents=True, exist_ok=True)
        return out.parent, out
    out.mkdir(parents=True, exist_ok=True)
    return out, out / default_name


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def _noise(args) -> NoiseSpec:
    return NoiseSpec(args.eps_p, args.eps_n)


def cmd_prefgen(args) -> int:
    out = _out_dir(args)
    rng = stream(args.seed, "data")
    noise = _noise(args)
    if args.generator == "digits":
        cfg = DigitFeatureConfig(n_train_pairs=args.n_pairs, n_test_pairs=args.n_test_pairs)
        train, test = generate_digit_features(cfg, rng, seed=args.seed)
        parts = {"train": train, "test": test}
    elif args.generator == "gaussian":
        parts = {"": generate_gaussian_pairs(args.n_pairs, rng, prior=args.prior, seed=args.seed)}
    else:
        parts = {"": generate_tabular(args.space_size, args.reward_law, args.n_pairs, rng, mode=args.mode, seed=args.seed)}
    written = []
    for name, ds in parts.items():
        if name != "test":
            ds = inject_noise(ds, noise, stream(args.seed, "noise"))
            if args.flip:
                ds = flip_symmetrize(ds) if ds.mode == EXACT else random_flip(ds, stream(args.seed, "flip"))
        target = save_dataset(ds, out / name if name else out)
        written += [target / "pairs.csv", target / "space.json"]
        print(f"wrote {len(ds)} rows to {target} (noisy prior {ds.noisy_prior:.3f})")
    _write_manifest(out, "prefgen", args, written)
    return EXIT_OK


def _train_config(args, loss) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        loss=loss,
        seed=args.seed,
        init=args.init,
        kind=args.kind,
        clip=args.clip,
    )


def _load_training_data(args):
    ds = load_dataset(args.data)
    if args.mode is not None and args.mode != ds.mode:
        raise ConfigError(f"--mode {args.mode} does not match the {ds.mode}-mode dataset in {args.data}")
    return ds


def cmd_train_reward(args) -> int:
    out, target = _out_target(args, "reward.json")
    ds = _load_training_data(args)
    loss = parse_loss(args.loss)
    model, trace = train_reward(ds, _train_config(args, loss))
    model.save(target)
    trace_path = target.with_name(target.stem + "_trace.csv")
    trace.to_csv(trace_path)
    _write_manifest(out, "train-reward", args, [target, trace_path])
    print(f"final noisy risk {trace.noisy_risk[-1]:.6g}, clean risk {trace.clean_risk[-1]:.6g}")
    return EXIT_OK


def _reference(args, n: int) -> np.ndarray:
    if args.reference in (None, "uniform"):
        return uniform_reference(n)
    probs = np.asarray(json.loads(Path(args.reference).read_text()), dtype=float)
    if probs.shape != (n,):
        raise ConfigError(f"reference policy has {probs.size} entries for {n} actions")
    return probs


def cmd_train_policy(args) -> int:
    out, target = _out_target(args, "policy.json")
    ds = _load_training_data(args)
    loss = parse_loss(args.loss)
    ref = _reference(args, len(ds.space))
    written = []
    if args.pipeline == "offline":
        if args.kind != "tabular":
            raise ConfigError("offline training needs a tabular policy")
        pi, trace = train_policy_offline(ds, loss, ref, args.beta, _train_config(args, loss), baseline=args.baseline or None)
    else:
        if args.reward:
            model = RewardModel.load(args.reward)
            trace = None
        else:
            model, trace = train_reward(ds, _train_config(args, loss))
            reward_path = target.with_name(target.stem + "_reward.json")
            model.save(reward_path)
            written.append(reward_path)
        pi = optimal_policy(model, ref, args.beta, space=ds.space)
    pi.save(target)
    written.append(target)
    if trace is not None:
        trace_path = target.with_name(target.stem + "_trace.csv")
        trace.to_csv(trace_path)
        written.append(trace_path)
    _write_manifest(out, "train-policy", args, written)
    print(f"improvement margin {improvement_margin(pi, ref, ds.space):.6g}")
    return EXIT_OK


def cmd_eval_policy(args) -> int:
    pi = PolicyTable.load(args.policy)
    if (args.data is None) == (args.space is None):
        raise ConfigError("give exactly one of --data or --space")
    space = load_dataset(args.data).space if args.data else load_space(args.space)
    result = {
        "expected_true_reward": expected_true_reward(pi, space),
        "reference_true_reward": expected_true_reward(pi.reference, space),
        "improvement_margin": improvement_margin(pi, pi.reference, space),
        "covariance_margin": covariance_margin(pi, pi.reference, space),
        "implicit_rank_rate": rank_preservation_rate(implicit_reward(pi), space),
    }
    _emit(result)
    if args.out:
        out = _out_dir(args)
        (out / "policy_eval.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
        _write_manifest(out, "eval-policy", args, [out / "policy_eval.json"])
    return EXIT_OK


def cmd_diagnose(args) -> int:
    model = RewardModel.load(args.reward)
    ds = load_dataset(args.data)
    test = load_dataset(args.test) if args.test else ds
    space = test.space
    loss = parse_loss(args.loss) if args.loss else None
    report = DiagnosticsReport(
        reward_accuracy=reward_accuracy(model, test),
        rank_preservation_rate=rank_preservation_rate(model, space),
        cpe_max_error=cpe_recovery_error(model, space, loss) if loss is not None and loss.is_cpe else None,
        improvement_margin=improvement_margin(optimal_policy(model, uniform_reference(len(space)), args.beta, space), uniform_reference(len(space)), space),
        metadata={"loss": args.loss, "noise": None if ds.noise is None else ds.noise.to_json(), "seed": ds.seed},
    )
    _emit(report.to_json())
    if args.out:
        out = _out_dir(args)
        (out / "diagnostics.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True, default=float) + "\n")
        _write_manifest(out, "diagnose", args, [out / "diagnostics.json"])
    return EXIT_OK


def cmd_sweep(args) -> int:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    for key in ("losses", "seeds", "noise"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.out:
        data["out_dir"] = args.out
    cfg = ExperimentConfig.from_json(data)
    if cfg.out_dir is None:
        raise ConfigError("sweep needs an output directory (--out or out_dir)")
    out = Path(cfg.out_dir)
    report = run_sweep(cfg, jobs=args.jobs, out_dir=out)
    print(report.table(), end="")
    written = [p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"]
    _write_manifest(out, "sweep", args, written)
    for row in report.failures:
        print(f"cell {row.key} failed: {row.error}", file=sys.stderr)
    return EXIT_FAILED if report.failures else EXIT_OK


def cmd_fig2(args) -> int:
    out = _out_dir(args)
    path = run_fig2(out, n=args.n, seed=args.seed)
    _write_manifest(out, "fig2", args, [path])
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = args.only or list(PROBES)
    unknown = set(names) - set(PROBES)
    if unknown:
        raise ConfigError(f"unknown probes {sorted(unknown)}; choose from {sorted(PROBES)}")
    results = []
    for name in names:
        res = PROBES[name]()
        print(res.line(), flush=True)
        results.append(res)
    if args.out:
        out = _out_dir(args)
        body = [{"name": r.name, "passed": r.passed, "summary": r.summary, "seconds": r.seconds} for r in results]
        (out / "verify.json").write_text(json.dumps(body, indent=2) + "\n")
        _write_manifest(out, "verify", args, [out / "verify.json"])
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def _add_training(p: argparse.ArgumentParser, lr: float = 0.05, epochs: int = 2000) -> None:
    p.add_argument("--loss", default="sigmoid", help="loss name, optionally with parameters, e.g. rdpo:eps=0.2")
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--clip", type=float, default=None, help="clamp rewards to [-clip, clip]")
    p.add_argument("--kind", choices=("tabular", "linear"), default="tabular")
    p.add_argument("--init", choices=("zeros", "gaussian"), default=None, help="default: zeros (tabular), gaussian (linear)")
    p.add_argument("--mode", choices=(EMPIRICAL, EXACT), help="expected dataset mode (checked against --data)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustpref", description="Noise-robust preference learning experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prefgen", help="generate a preference dataset")
    p.add_argument("generator", nargs="?", choices=("tabular", "gaussian", "digits"), default="tabular")
    p.add_argument("--space-size", type=int, default=10)
    p.add_argument("--reward-law", default="digits", help="digits, linear or random")
    p.add_argument("--n-pairs", "--n", type=int, default=1000)
    p.add_argument("--n-test-pairs", type=int, default=1000)
    p.add_argument("--mode", choices=(EMPIRICAL, EXACT), default=EMPIRICAL)
    p.add_argument("--prior", type=float, default=0.8, help="positive-label share for the gaussian generator")
    p.add_argument("--eps-p", type=float, default=0.0)
    p.add_argument("--eps-n", type=float, default=0.0)
    p.add_argument("--flip", action="store_true", help="apply a random flip after injecting noise")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prefgen)

    p = sub.add_parser("train-reward", help="fit a reward model on noisy labels")
    p.add_argument("--data", required=True)
    _add_training(p)
    p.add_argument("--out", required=True, help="output directory or .json file")
    p.set_defaults(func=cmd_train_reward)

    p = sub.add_parser("train-policy", help="fit a policy by reward-then-optimize or offline optimization")
    p.add_argument("--data", required=True)
    p.add_argument("--pipeline", choices=("rlhf", "offline"), default="offline")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--reference", default="uniform", help="'uniform' or a JSON file with reference probabilities")
    p.add_argument("--reward", help="reuse a trained reward model (rlhf pipeline)")
    p.add_argument("--baseline", action="store_true", help="allow non-symmetric offline losses")
    _add_training(p)
    p.add_argument("--out", required=True, help="output directory or .json file")
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("eval-policy", help="score a policy against the true reward")
    p.add_argument("--policy", required=True)
    p.add_argument("--data", help="dataset directory holding the action space")
    p.add_argument("--space", help="space.json sidecar of a dataset")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_policy)

    p = sub.add_parser("diagnose", help="accuracy, rank preservation and posterior recovery of a reward model")
    p.add_argument("--reward", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test", help="held-out dataset directory (defaults to --data)")
    p.add_argument("--loss", help="training loss, for the posterior recovery error")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="run a loss x noise x seed sweep from a JSON config")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--losses", nargs="+")
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--noise", nargs="+", type=float, help="symmetric noise rates")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fig2", help="risk curves before and after random flipping")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fig2)

    p = sub.add_parser("verify", help="run the guarantee probes and print pass/fail")
    p.add_argument("--only", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RobustPrefError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
