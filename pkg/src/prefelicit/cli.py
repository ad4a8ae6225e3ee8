"""Command-line interface: environment generation, CAV training, experiment
runs, report re-aggregation, and the session service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .catalog import (
    GaussianUserPrior,
    build_cav_training_set,
    load_catalog,
    load_tags,
    save_catalog,
    save_prior,
    save_tags,
)
from .cav import CavTrainConfig, cav_quality, save_cavs, train_cav, with_quality
from .simharness import (
    ExperimentConfig,
    RecsimEnvConfig,
    SyntheticEnvConfig,
    build_environment,
    config_from_json,
    gen_recsim_env,
    gen_synthetic_env,
    reaggregate,
    run_experiment,
)
from .util import scale_from_cov


def _cmd_gen_env(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.env == "synthetic":
        cfg = SyntheticEnvConfig(seed=args.seed)
        env = gen_synthetic_env(cfg)
    else:
        cfg = RecsimEnvConfig(seed=args.seed)
        env = gen_recsim_env(cfg)
    save_catalog(env.catalog, out / "catalog.ndjson")
    save_cavs(list(env.cavs), out / "cavs.ndjson")
    if env.tag_data is not None:
        save_tags(env.tag_data, out / "tags.ndjson")
    # population-level prior for cold-start sessions
    means = np.stack([p.mean for p, _ in env.population])
    cov = np.cov(means.T) + 0.05 * np.eye(means.shape[1])
    save_prior(GaussianUserPrior(means.mean(axis=0), scale_from_cov(cov)), out / "prior.json")
    print(f"wrote catalog ({len(env.catalog)} items), {len(env.cavs)} CAVs to {out}")
    return 0


def _cmd_train_cav(args: argparse.Namespace) -> int:
    catalog = load_catalog(args.catalog)
    tags = load_tags(args.tags)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = CavTrainConfig(reg_lambda=args.reg_lambda, tol=args.tol, max_iters=args.max_iters)
    cavs = []
    for tag in sorted(tags.tag_ids):
        emb, labels, _ = build_cav_training_set(tags, catalog, tag)
        cav = train_cav(emb, labels, tag, cfg, noise_sigma=args.sigma)
        cav = with_quality(cav, cav_quality(cav, emb, labels))
        cavs.append(cav)
        print(f"{tag}: quality {cav.quality:.3f} on {len(labels)} instances")
    save_cavs(cavs, out / "cavs.ndjson")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if args.seed is not None:
        obj["seed"] = args.seed
    cfg = config_from_json(obj)
    report = run_experiment(cfg, workers=args.workers, out_dir=args.out)
    cos = report.metric_matrix("cosine")
    print(f"{len(report.runs)} runs; final mean cosine {cos[:, -1].mean():.4f}")
    print(f"reports written to {args.out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    reaggregate(args.traces, args.out)
    print(f"re-aggregated {args.traces} into {args.out}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    serve(args.data_dir, port=args.port, static_dir=args.static_dir)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="prefelicit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", help="generate an environment and write its files")
    p.add_argument("--env", choices=["synthetic", "recsim"], default="synthetic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_env)

    p = sub.add_parser("train-cav", help="train concept vectors from tag data")
    p.add_argument("--catalog", required=True)
    p.add_argument("--tags", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reg-lambda", type=float, default=0.1)
    p.add_argument("--sigma", type=float, default=0.25)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=20_000)
    p.set_defaults(func=_cmd_train_cav)

    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="re-aggregate a traces.json")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("serve", help="start the interactive session service")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--static-dir", default=None)
    p.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
