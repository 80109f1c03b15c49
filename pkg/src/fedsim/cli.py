"""Command-line driver.

    fedsim generate --config exp.yaml --out data.fds
    fedsim run      --config exp.yaml [--seed N] [--backend parallel:4] [--out DIR]
    fedsim eval     --config exp.yaml --params DIR/final_params.json [--data data.fds] [--out DIR]
    fedsim bench    --config exp.yaml [--cohort-sizes 1,8,64] [--backend sequential] [--out DIR]
    fedsim inspect  (--config exp.yaml | --data data.fds) [--bins 10]

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .data import client_stats
from .exceptions import ConfigError, FedSimError, NonFiniteError
from .experiment import (
    apply_overrides,
    bench_cohort_scaling,
    build_model,
    evaluate_params,
    load_dataset,
    load_eval_dataset,
    resolve_config,
    run,
    write_bench,
    write_report_csv,
)
from .storage import load_federated, load_params, save_federated

log = logging.getLogger("fedsim")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _config(args):
    return apply_overrides(load_config(args.config), seed=args.seed, backend=args.backend, out=args.out)


def cmd_generate(args) -> int:
    cfg = _config(args)
    if cfg.dataset.synthetic is None:
        raise ConfigError("dataset.synthetic", "generate needs a synthetic dataset spec")
    fd = load_dataset(cfg)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "data.fds"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_federated(fd, out)
    print(f"wrote {len(fd)} clients, {sum(fd.client_size(c) for c in fd.client_ids())} examples to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    result = run(cfg, cfg.output_dir)
    last = result.diagnostics[-1]
    print(f"{len(result.diagnostics)} rounds, final train_loss {last.train_loss:.6g}; wrote {result.output_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    fd = load_federated(args.data) if args.data else load_dataset(cfg)
    cfg = resolve_config(cfg.replace(clients_per_round=1), fd)
    eval_fd = fd if args.data else load_eval_dataset(cfg, fd)
    report = evaluate_params(cfg, build_model(cfg), load_params(args.params), eval_fd)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "eval.csv")
    for name, value in report.overall.items():
        print(f"{name}: {value:.6g}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    sizes = [int(s) for s in args.cohort_sizes.split(",")] if args.cohort_sizes else None
    backends = [args.backend] if args.backend else None
    rows = bench_cohort_scaling(cfg, sizes, backends)
    write_bench(rows, cfg.output_dir)
    for r in rows:
        print(f"cohort {r.cohort_size:>4}  {r.backend:<12} {r.mean_s * 1000:9.3f} ms  (std {r.std_s * 1000:.3f})")
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.data:
        fd = load_federated(args.data)
    elif args.config:
        fd = load_dataset(_config(args))
    else:
        raise ConfigError("--data", "inspect needs --data or --config")
    stats = client_stats(fd)
    sizes = np.repeat(np.array(list(stats), dtype=np.float64), list(stats.values()))
    print(f"clients {len(sizes)}  examples {int(sizes.sum())}")
    if not len(sizes):
        return EXIT_OK
    print(f"size min {sizes.min():.0f}  median {np.median(sizes):g}  mean {sizes.mean():.3f}  max {sizes.max():.0f}")
    counts, edges = np.histogram(sizes, bins=args.bins)
    width = max(1, int(counts.max()))
    print("bin_low bin_high count")
    for lo, hi, n in zip(edges[:-1], edges[1:], counts):
        print(f"{lo:9.1f} {hi:9.1f} {n:6d} {'#' * int(round(40 * n / width))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description="Desk-scale federated learning simulation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help, config_required=True):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=config_required, help="experiment YAML file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--backend", help="sequential | parallel:N")
        p.add_argument("--out", help="output directory (for generate: output file)")
        p.set_defaults(func=func)
        return p

    add("generate", cmd_generate, "write the synthetic dataset to a container file")
    add("run", cmd_run, "train and write metrics, params and the resolved config")
    p = add("eval", cmd_eval, "evaluate saved params and write eval.csv")
    p.add_argument("--params", required=True, help="params JSON file")
    p.add_argument("--data", help="dataset container (default: the config's dataset)")
    p = add("bench", cmd_bench, "cohort-size scaling benchmark")
    p.add_argument("--cohort-sizes", help="comma separated, e.g. 1,8,64")
    p = add("inspect", cmd_inspect, "client size statistics and histogram", config_required=False)
    p.add_argument("--data", help="dataset container")
    p.add_argument("--bins", type=int, default=10)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FedSimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
