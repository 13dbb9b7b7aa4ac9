"""Command-line surface: ``robusthalf <command> [flags]``.

Exit codes: 0 success, 1 other library error, 2 config or input error,
3 generation error, 4 robust ERM infeasible.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
import pandas as pd
import structlog
from pydantic import ValidationError

from .certify import Counterexample, certify_dataset
from .config import settings
from .core import (
    Dataset,
    Halfspace,
    NormSpec,
    clean_error,
    empirical_robust_risk,
    format_p,
    margin_error,
    parse_p,
)
from .datagen import PlantSpec, generate, generate_overlap
from .datasets import read_dataset, read_model, write_dataset, write_json_lines, write_model
from .ellipsoid import FeasibilityConfig
from .errors import ConfigError, GenerationError, InvalidHypothesisError, InvalidInputError, RobustHalfError
from .logging_conf import setup_logging
from .mirror import MirrorDescentConfig, TrainedModel
from .perturbations import NormBallAdversary, PerturbationSet, from_config, to_config
from .rcn import (
    SurrogateSpec,
    glm_margin_bound,
    sample_budget,
    suboptimality_margin_bound,
    surrogate_value,
    train,
)
from .reductions import ApproxHyperplane, approx_sep_from_eval, evaluator_from_adversary, lp_ball_evaluator
from .rerm import Infeasible, rerm
from .schemas import DatasetMetadata, RunRecord, parse_adversary_config
from .utils import derive_rng, dumps, loads

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_GENERATION = 3
EXIT_INFEASIBLE = 4

# argparse bookkeeping that never goes into a RunRecord
_NOT_CONFIG = {"command", "func", "config"}


# ---------------------------------------------------
# Helpers
# ---------------------------------------------------
def _floats(text: str, flag: str = "list") -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def _tokens(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _load_json_arg(text: str) -> Any:
    path = Path(text)
    if path.suffix == ".json" and path.exists():
        return loads(path.read_bytes())
    try:
        return loads(text)
    except Exception:
        raise ConfigError(f"not a JSON object or .json file: {text!r}") from None


def _adversary(args: argparse.Namespace, meta: Optional[DatasetMetadata]) -> PerturbationSet:
    if args.adversary:
        return from_config(parse_adversary_config(_load_json_arg(args.adversary)))
    gamma = args.gamma if args.gamma is not None else (meta.gamma if meta else None)
    p = args.p if args.p is not None else (meta.p if meta else None)
    if gamma is None or p is None:
        raise ConfigError("pass --adversary, or --gamma and --p (or a dataset sidecar with both)")
    return NormBallAdversary(gamma, NormSpec(p))


def _from_meta(value: Any, meta: Optional[DatasetMetadata], key: str, flag: str) -> Any:
    if value is not None:
        return value
    found = getattr(meta, key, None) if meta else None
    if found is None:
        raise ConfigError(f"{flag} is required (no value in the dataset sidecar)")
    return found


def _holdout(meta: Optional[DatasetMetadata], d: int, m: int, seed: int) -> Dataset:
    if meta is None or meta.w_star is None:
        raise ConfigError("a holdout sample needs the planted halfspace from the dataset sidecar")
    spec = PlantSpec(
        d=d,
        m=m,
        gamma=meta.gamma,
        p=meta.p,
        eta=meta.eta or 0.0,
        seed=int(derive_rng(seed, "holdout").integers(2**31)),
        w_star=meta.w_star,
        bias=meta.bias or 0.0,
    )
    return generate(spec)


def _record_config(args: argparse.Namespace) -> dict[str, Any]:
    return {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}


def _emit(args: argparse.Namespace, record: RunRecord) -> None:
    payload = record.model_dump()
    if record.timing:
        logger.info("run.timing", **record.timing)
    if args.record:
        Path(args.record).parent.mkdir(parents=True, exist_ok=True)
        Path(args.record).write_bytes(dumps(payload, indent=True))
    if args.json:
        sys.stdout.write(dumps(payload).decode("utf-8") + "\n")
    else:
        for key, value in record.metrics.items():
            print(f"{key}: {value}")
        for key, value in record.artifacts.items():
            print(f"{key} -> {value}")


# ---------------------------------------------------
# Commands
# ---------------------------------------------------
def cmd_gen(args: argparse.Namespace) -> int:
    spec = PlantSpec(
        d=args.d,
        m=args.m,
        gamma=args.gamma,
        p=args.p,
        eta=args.eta,
        seed=args.seed,
        bias=args.plant_bias,
        margin_slack=args.margin_slack,
    )
    if args.overlap is not None:
        S = generate_overlap(spec, args.overlap, args.overlap_p)
    else:
        S = generate(spec)
    out = Path(args.out)
    if out.suffix != ".csv":
        out = out / "data.csv"
    paths = write_dataset(S, out)

    w_star = np.asarray(S.metadata.w_star)
    clean = np.where(S.X @ w_star + spec.bias > 0, 1, -1)
    metrics = {
        "m": len(S),
        "d": S.dim,
        "flip_fraction": float(np.mean(clean != S.y)),
        "min_margin": float(np.abs(S.X @ w_star + spec.bias).min()),
    }
    artifacts = {"dataset": str(paths[0])}
    if len(paths) > 1:
        artifacts["metadata"] = str(paths[1])
    _emit(args, RunRecord(command="gen", config=_record_config(args), seed=args.seed, metrics=metrics, artifacts=artifacts))
    return EXIT_OK


def cmd_train_rerm(args: argparse.Namespace) -> int:
    S = read_dataset(args.data)
    adv = _adversary(args, S.metadata)
    cfg = FeasibilityConfig(bits=args.bits)
    result = rerm(S, adv, cfg, tau=args.tau, bias=args.bias, fast=not args.exhaustive)

    stats = result.stats.to_dict()
    timing = {"wall_time": stats.pop("wall_time")}
    metrics: dict[str, Any] = {"tau": result.tau, **stats}
    artifacts: dict[str, str] = {}
    if isinstance(result, Infeasible):
        metrics["result"] = "infeasible"
        metrics["caveat"] = result.caveat
        logger.warning("rerm.infeasible", caveat=result.caveat)
        code = EXIT_INFEASIBLE
    else:
        metrics["result"] = "separator"
        metrics["empirical_robust_risk"] = empirical_robust_risk(result.h, S, adv, cfg)
        if args.out:
            artifacts["model"] = str(write_model(result.h, args.out))
        code = EXIT_OK
    config = _record_config(args) | {"adversary": to_config(adv)}
    _emit(args, RunRecord(command="train-rerm", config=config, metrics=metrics, artifacts=artifacts, timing=timing))
    return code


def _surrogate_spec(args: argparse.Namespace, meta: Optional[DatasetMetadata]) -> SurrogateSpec:
    return SurrogateSpec(
        gamma=_from_meta(args.gamma, meta, "gamma", "--gamma"),
        eta=_from_meta(args.eta, meta, "eta", "--eta"),
        epsilon=args.epsilon,
        p=_from_meta(args.p, meta, "p", "--p"),
        margin_fraction=args.margin_fraction,
    )


def _fit_rcn(S: Dataset, spec: SurrogateSpec, args: argparse.Namespace, seed: int) -> TrainedModel:
    steps = args.steps or sample_budget(spec, S.dim, args.surrogate)
    lipschitz = 1.0 if args.surrogate == "glm" else (1.0 - spec.lam) / spec.gamma
    cfg = MirrorDescentConfig(
        q=spec.q,
        steps=steps,
        lipschitz=lipschitz,
        step_size=args.step_size,
        averaging=args.averaging,
        seed=seed,
        batch_size=args.batch_size,
    )
    return train(S, spec, args.surrogate, cfg)


def _rcn_metrics(model: TrainedModel, S: Dataset, spec: SurrogateSpec, prefix: str = "") -> dict[str, float]:
    h = Halfspace(model.w) if np.any(model.w) else None
    fraction = spec.margin_fraction * spec.gamma
    out = {
        f"{prefix}margin_error_gamma": float(np.mean(S.y * (S.X @ model.w) <= spec.gamma)),
        f"{prefix}margin_error_fraction": float(np.mean(S.y * (S.X @ model.w) <= fraction)),
        f"{prefix}surrogate_value": surrogate_value(model.w, S, spec),
    }
    if h is not None:
        out[f"{prefix}robust_risk_fraction"] = empirical_robust_risk(h, S, (fraction, spec.norm_spec))
    return out


def cmd_train_rcn(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    S = read_dataset(args.data)
    spec = _surrogate_spec(args, S.metadata)
    model = _fit_rcn(S, spec, args, args.seed)

    metrics: dict[str, Any] = {"steps": model.steps, "step_size": model.step_size, "lam": spec.lam}
    if args.surrogate == "leaky":
        metrics["target_margin_error_bound"] = suboptimality_margin_bound(spec, spec.eps_prime)
    elif args.surrogate == "glm":
        metrics["target_margin_error_bound"] = glm_margin_bound(spec, spec.eps_prime_glm)
    metrics.update(_rcn_metrics(model, S, spec))
    if args.holdout_m:
        metrics.update(_rcn_metrics(model, _holdout(S.metadata, S.dim, args.holdout_m, args.seed), spec, "holdout_"))
    metrics["transcript"] = [
        {"step": e.step, "norm": e.norm, "value": e.value} for e in model.transcript
    ]
    timing = {"wall_time": time.perf_counter() - started}
    artifacts = {}
    if args.out:
        artifacts["model"] = str(write_model(model.to_dict(), args.out))
    config = _record_config(args) | {"surrogate_spec": spec.model_dump()}
    _emit(args, RunRecord(command="train-rcn", config=config, seed=args.seed, metrics=metrics, artifacts=artifacts, timing=timing))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    S = read_dataset(args.data)
    h, _ = read_model(args.model)
    adv = _adversary(args, S.metadata)
    metrics: dict[str, Any] = {
        "robust_risk": empirical_robust_risk(h, S, adv, FeasibilityConfig(bits=args.bits)),
        "clean_error": clean_error(h, S),
    }
    gamma = args.gamma if args.gamma is not None else (S.metadata.gamma if S.metadata else None)
    p = args.p if args.p is not None else (S.metadata.p if S.metadata else None)
    if gamma is not None and p is not None:
        spec = NormSpec(p)
        metrics["margin_error_gamma"] = margin_error(h, S, gamma, spec)
        metrics["margin_error_half"] = margin_error(h, S, gamma / 2.0, spec)
        metrics["raw_margin_error_half"] = margin_error(h, S, gamma / 2.0, spec, normalized=False)
    config = _record_config(args) | {"adversary": to_config(adv)}
    _emit(args, RunRecord(command="eval", config=config, metrics=metrics))
    return EXIT_OK


def cmd_certify(args: argparse.Namespace) -> int:
    S = read_dataset(args.data)
    h, _ = read_model(args.model)
    adv = _adversary(args, S.metadata)
    results = certify_dataset(adv, h, S, FeasibilityConfig(bits=args.bits), fast=not args.exhaustive)
    lines = [{"index": i} | r.to_dict() for i, r in enumerate(results)]
    artifacts = {}
    if args.out:
        artifacts["certificates"] = str(write_json_lines(lines, args.out))
    else:
        for line in lines:
            sys.stdout.write(dumps(line).decode("utf-8") + "\n")
    counter = sum(isinstance(r, Counterexample) for r in results)
    metrics = {"examples": len(results), "counterexamples": counter, "robust_risk": counter / len(results)}
    config = _record_config(args) | {"adversary": to_config(adv)}
    record = RunRecord(command="certify", config=config, metrics=metrics, artifacts=artifacts)
    if args.out:
        _emit(args, record)
    elif args.record:
        # stdout already carries the certificate lines
        Path(args.record).parent.mkdir(parents=True, exist_ok=True)
        Path(args.record).write_bytes(dumps(record.model_dump(), indent=True))
    return EXIT_OK


def cmd_reduce(args: argparse.Namespace) -> int:
    adv = from_config(parse_adversary_config(_load_json_arg(args.adversary)))
    x = np.asarray(_floats(args.x, "--x"))
    z = np.asarray(_floats(args.z, "--z"))
    if isinstance(adv, NormBallAdversary):
        evaluate = lp_ball_evaluator(adv.gamma, adv.spec)
    else:
        evaluate = evaluator_from_adversary(adv)
    R = args.radius if args.radius is not None else adv.radius_bound(x)
    if R is None:
        raise ConfigError("pass --radius: the adversary has no radius bound")
    started = time.perf_counter()
    res = approx_sep_from_eval(evaluate, x, z, args.gamma, R, FeasibilityConfig(bits=args.bits), refine=args.refine)
    timing = {"wall_time": time.perf_counter() - started}
    metrics: dict[str, Any] = {"queries": res.queries}
    if isinstance(res, ApproxHyperplane):
        metrics |= {"result": "hyperplane", "w": res.w.tolist(), "slack": res.slack}
    else:
        metrics["result"] = "near_inside"
    config = _record_config(args) | {"adversary": to_config(adv)}
    _emit(args, RunRecord(command="reduce", config=config, metrics=metrics, timing=timing))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    rows: list[dict[str, Any]] = []
    for p in _tokens(args.ps):
        for gamma in _floats(args.gammas, "--gammas"):
            for eta in _floats(args.etas, "--etas"):
                for eps in _floats(args.epsilons, "--epsilons"):
                    for rep in range(args.reps):
                        rows.append(_sweep_cell(args, parse_p(p), gamma, eta, eps, rep))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(out, index=False, lineterminator="\n", encoding="utf-8")
    metrics = {
        "cells": len(rows),
        "within_bound": sum(r["within_bound"] for r in rows),
    }
    _emit(args, RunRecord(command="sweep", config=_record_config(args), seed=args.seed, metrics=metrics, artifacts={"table": str(out)}))
    return EXIT_OK


def _sweep_cell(args: argparse.Namespace, p: float, gamma: float, eta: float, eps: float, rep: int) -> dict[str, Any]:
    seed = args.seed + rep
    S = generate(PlantSpec(d=args.d, m=args.m, gamma=gamma, p=p, eta=eta, seed=seed))
    spec = SurrogateSpec(gamma=gamma, eta=eta, epsilon=eps, p=p, margin_fraction=args.margin_fraction)
    model = _fit_rcn(S, spec, args, seed)
    holdout = _holdout(S.metadata, S.dim, args.holdout_m, seed)
    noisy = float(np.mean(holdout.y * (holdout.X @ model.w) <= spec.margin_fraction * gamma))
    bound = eta + eps + 0.02
    return {
        "p": format_p(p),
        "gamma": gamma,
        "eta": eta,
        "epsilon": eps,
        "rep": rep,
        "seed": seed,
        "steps": model.steps,
        "noisy_margin_error": noisy,
        "bound": bound,
        "within_bound": int(noisy <= bound),
        "w": " ".join(repr(float(v)) for v in model.w),
    }


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("robusthalf.main:app", host=args.host, port=args.port, log_level=args.log_level.lower())
    return EXIT_OK


# ---------------------------------------------------
# Parser
# ---------------------------------------------------
def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of flag values; explicit flags win")
    common.add_argument("--record", help="write the RunRecord JSON here")
    common.add_argument("--json", action="store_true", help="print the RunRecord to stdout")
    common.add_argument("--log-level", default=settings.LOG_LEVEL)
    return common


def _add_adversary(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--adversary", help="adversary JSON or path to a .json file")
    sub.add_argument("--gamma", type=float)
    sub.add_argument("--p")
    sub.add_argument("--bits", type=int, default=settings.PRECISION_BITS)


def _add_rcn(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--surrogate", choices=["leaky", "glm", "perceptron"], default="leaky")
    sub.add_argument("--epsilon", type=float, default=0.1)
    sub.add_argument("--steps", type=int, help="SMD steps (default: theory budget, capped)")
    sub.add_argument("--batch-size", type=int, default=1)
    sub.add_argument("--step-size", type=float)
    sub.add_argument("--averaging", choices=["uniform", "last"], default="uniform")
    sub.add_argument("--margin-fraction", type=float, default=0.5)
    sub.add_argument("--seed", type=int, default=0)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="robusthalf", description="Oracle-based robust halfspace learning")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common()
    subs: dict[str, argparse.ArgumentParser] = {}

    def add(name: str, func: Callable[[argparse.Namespace], int], help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        sub.set_defaults(func=func)
        subs[name] = sub
        return sub

    gen = add("gen", cmd_gen, "generate a planted dataset")
    gen.add_argument("--d", type=int, required=True)
    gen.add_argument("--m", type=int, required=True)
    gen.add_argument("--gamma", type=float, required=True)
    gen.add_argument("--p", default="2")
    gen.add_argument("--eta", type=float, default=0.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--plant-bias", type=float, default=0.0)
    gen.add_argument("--margin-slack", type=float, default=0.0)
    gen.add_argument("--overlap", type=float, help="append an opposite-label point at this distance")
    gen.add_argument("--overlap-p", default="inf")
    gen.add_argument("--out", required=True, help="directory or .csv path")

    rerm_p = add("train-rerm", cmd_train_rerm, "robust ERM via the ellipsoid method")
    rerm_p.add_argument("--data", required=True)
    _add_adversary(rerm_p)
    rerm_p.add_argument("--tau", type=float)
    rerm_p.add_argument("--bias", action="store_true", help="learn an affine halfspace")
    rerm_p.add_argument("--exhaustive", action="store_true", help="certify with the ellipsoid only")
    rerm_p.add_argument("--out")

    rcn_p = add("train-rcn", cmd_train_rcn, "learn under random classification noise")
    rcn_p.add_argument("--data", required=True)
    rcn_p.add_argument("--gamma", type=float)
    rcn_p.add_argument("--eta", type=float)
    rcn_p.add_argument("--p")
    rcn_p.add_argument("--holdout-m", type=int, default=0)
    _add_rcn(rcn_p)
    rcn_p.add_argument("--out")

    ev = add("eval", cmd_eval, "robust risk and margin errors of a model")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    _add_adversary(ev)

    ce = add("certify", cmd_certify, "per-example certificates as JSON lines")
    ce.add_argument("--model", required=True)
    ce.add_argument("--data", required=True)
    _add_adversary(ce)
    ce.add_argument("--exhaustive", action="store_true")
    ce.add_argument("--out")

    re_p = add("reduce", cmd_reduce, "approximate separation from a robust-loss evaluator")
    re_p.add_argument("--adversary", required=True)
    re_p.add_argument("--x", required=True, help="comma-separated clean point")
    re_p.add_argument("--z", required=True, help="comma-separated query point")
    re_p.add_argument("--gamma", type=float, required=True)
    re_p.add_argument("--radius", type=float)
    re_p.add_argument("--refine", type=int, default=0)
    re_p.add_argument("--bits", type=int, default=settings.PRECISION_BITS)

    sw = add("sweep", cmd_sweep, "train-rcn over a parameter grid")
    sw.add_argument("--etas", default="0,0.1,0.2,0.3")
    sw.add_argument("--gammas", default="0.2")
    sw.add_argument("--epsilons", default="0.1")
    sw.add_argument("--ps", default="2")
    sw.add_argument("--reps", type=int, default=1)
    sw.add_argument("--d", type=int, default=10)
    sw.add_argument("--m", type=int, default=10_000)
    sw.add_argument("--holdout-m", type=int, default=100_000)
    _add_rcn(sw)
    sw.add_argument("--out", required=True)

    sv = add("serve", cmd_serve, "run the HTTP service")
    sv.add_argument("--host", default="0.0.0.0")
    sv.add_argument("--port", type=int, default=8000)

    return parser, subs


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = subs[args.command]
        data = _load_json_arg(args.config)
        if not isinstance(data, dict):
            raise ConfigError("--config must hold a JSON object")
        known = {a.dest for a in sub._actions}
        values = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = sorted(set(values) - known - _NOT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown keys in {args.config}: {', '.join(unknown)}")
        for action in sub._actions:
            if action.dest in values:
                action.required = False
        sub.set_defaults(**{k: v for k, v in values.items() if k not in _NOT_CONFIG})
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except RobustHalfError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    setup_logging(args.log_level)
    structlog.contextvars.bind_contextvars(command=args.command)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, InvalidInputError, InvalidHypothesisError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except GenerationError as e:
        print(f"generation failed: {e}", file=sys.stderr)
        return EXIT_GENERATION
    except RobustHalfError as e:
        logger.error("command.failed", error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        structlog.contextvars.clear_contextvars()


if __name__ == "__main__":
    sys.exit(main())
