"""Command-line entry points: run, cost, icost, search.

Exit codes: 0 success, 1 runtime failure, 2 bad flags or unparsable input.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .agent import AgentConfig, run_seeded
from .coding import cost
from .envs import EnvFileError, make_env
from .features import ContextTreeMap, format_suffix_set, parse_suffix_set
from .files import atomic_write_text
from .history import TraceFormatError, parse_trace
from .icost import icost
from .search import CRITERIA, SearchConfig, anneal

log = logging.getLogger("phimdp")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    """Bad input: reported with exit code 2."""


class RuntimeFailure(Exception):
    """Reported with exit code 1."""


def fmt_number(x: float) -> str:
    """Integral values print bare, everything else round-trips exactly."""
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


# --- config file --------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment. Keys use flag names."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise RuntimeFailure(f"{path}: cannot open config file: {e.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{path}:line {lineno}: empty key")
        out[key.lstrip("-").replace("-", "_")] = (value, lineno)
    return out


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, argv, path):
    known = {a.dest for a in sub._actions}
    values = {}
    for key, (value, lineno) in read_config(path).items():
        if key not in known or key in ("help", "config", "command"):
            raise UsageError(f"{path}:line {lineno}: unknown key {key!r}")
        values[key] = value
    # string defaults go through each option's type converter, so flags still win
    sub.set_defaults(**values)
    return parser.parse_args(argv)


# --- inputs -------------------------------------------------------------------

def load_trace(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise RuntimeFailure(f"{path}: cannot open trace file: {e.strerror}") from None
    try:
        return parse_trace(text)
    except TraceFormatError as e:
        raise UsageError(f"{path}:{e}") from None


def load_phi(path, h) -> ContextTreeMap:
    if path is None:
        return ContextTreeMap.root(h.observations_alphabet.size)
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise RuntimeFailure(f"{path}: cannot open suffix-set file: {e.strerror}") from None
    try:
        return parse_suffix_set(text, h.observations_alphabet)
    except ValueError as e:
        raise UsageError(f"{path}: {e}") from None


def seed_list(text: str) -> list[int]:
    """``7``, ``1,2,5`` or an inclusive range ``0-9``."""
    seeds = []
    try:
        for part in text.split(","):
            lo, _, hi = part.strip().partition("-")
            seeds.extend(range(int(lo), int(hi) + 1) if hi else [int(lo)])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}")
    return seeds


def per_seed_path(path: Path, seed: int, many: bool) -> Path:
    return path.with_name(f"{path.stem}.seed{seed}{path.suffix}") if many else path


# --- subcommands --------------------------------------------------------------

def _run_one(job):
    env_spec, steps, cfg, trace_path, metrics_path, phi_path = job
    res = run_seeded(env_spec, steps, cfg)
    atomic_write_text(trace_path, res.trace_csv())
    atomic_write_text(metrics_path, res.metrics_csv())
    if phi_path is not None:
        atomic_write_text(phi_path, res.phi_text())
    return cfg.seed, res.average_reward(1, steps), len(res.final_phi)


def cmd_run(args) -> int:
    seeds = args.seeds if args.seeds is not None else [args.seed]
    many = len(seeds) > 1
    jobs = []
    for seed in seeds:
        try:
            cfg = AgentConfig(improve_iters_per_step=args.improve_iters, gamma_schedule=args.gamma_schedule,
                              rmax_poly_coeff=args.rmax_coeff, seed=seed, criterion=args.criterion,
                              explore=not args.no_explore)
        except ValueError as e:
            raise UsageError(str(e)) from None
        jobs.append((args.env, args.steps, cfg,
                     per_seed_path(Path(args.out).resolve(), seed, many),
                     per_seed_path(Path(args.metrics).resolve(), seed, many),
                     per_seed_path(Path(args.phi_out).resolve(), seed, many) if args.phi_out else None))
    try:
        make_env(args.env)  # fail early on a bad spec or env file
    except EnvFileError as e:
        if e.line is None:
            raise RuntimeFailure(str(e)) from None
        raise UsageError(str(e)) from None
    except ValueError as e:
        raise UsageError(str(e)) from None
    if args.workers > 1 and many:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    for seed, avg, m in results:
        log.info("seed %d: average reward %.4f, %d states", seed, avg, m)
    return 0


def cmd_cost(args) -> int:
    h = load_trace(args.trace)
    c = cost(load_phi(args.phi_file, h), h)
    print(",".join(fmt_number(x) for x in (c.state_bits, c.reward_bits, c.total)))
    return 0


def cmd_icost(args) -> int:
    h = load_trace(args.trace)
    res = icost(load_phi(args.phi_file, h), h, args.penalty)
    print(",".join([fmt_number(res.neg_log_likelihood), fmt_number(res.parameter_penalty), fmt_number(res.total), str(res.M)]))
    return 0


def cmd_search(args) -> int:
    h = load_trace(args.trace)
    phi0 = load_phi(args.phi_file, h)
    cfg = SearchConfig(iterations=args.iters, criterion=args.criterion, seed=args.seed,
                       icost_mode=args.penalty, log_every=max(1, args.iters // 10))
    res = anneal(phi0, h, cfg, log=log)
    text = format_suffix_set(res.best, h.observations_alphabet)
    if args.out is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(args.out, text)
    if args.log is not None:
        atomic_write_text(args.log, res.log_csv())
    return 0


# --- parser -------------------------------------------------------------------

def _nonneg(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _positive(text: str) -> int:
    v = _nonneg(text)
    if v == 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phimdp", description="Feature selection by code length and an online agent.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the agent in an environment")
    run.add_argument("--env", default="tiny", help="tiny, a builtin (flip, chain, bandit, bandit1) or file:<path>")
    run.add_argument("--steps", type=_positive, default=1000)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--seeds", type=seed_list, default=None, help="several seeds, e.g. 0-9 or 1,4,7")
    run.add_argument("--workers", type=_positive, default=1, help="parallel processes for a seed sweep")
    run.add_argument("--improve-iters", type=_nonneg, default=10)
    run.add_argument("--gamma-schedule", default="default", help="default or fixed:<gamma>")
    run.add_argument("--rmax-coeff", type=float, default=1.0)
    run.add_argument("--criterion", choices=CRITERIA, default="cost+support")
    run.add_argument("--no-explore", action="store_true", help="ablate the exploration state")
    run.add_argument("--out", default="trace.csv")
    run.add_argument("--metrics", default="metrics.csv")
    run.add_argument("--phi-out", default=None, help="also write the final suffix set")
    run.set_defaults(func=cmd_run)

    for name, func, helptext in (("cost", cmd_cost, "state and reward code length of a map"),
                                 ("icost", cmd_icost, "reward-only code length with states marginalized")):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("--trace", required=True)
        q.add_argument("--phi-file", required=True)
        if name == "icost":
            q.add_argument("--penalty", choices=("full", "observed"), default="observed")
        q.set_defaults(func=func)

    s = sub.add_parser("search", help="anneal over context trees for a recorded trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--phi-file", default=None, help="starting suffix set (default: the single empty context)")
    s.add_argument("--iters", type=_nonneg, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--criterion", choices=CRITERIA, default="cost")
    s.add_argument("--penalty", choices=("full", "observed"), default="observed")
    s.add_argument("--out", default=None, help="suffix-set output (default: stdout)")
    s.add_argument("--log", default="search_log.csv", help="iter,cost,accepted CSV")
    s.set_defaults(func=cmd_search)

    for q in sub.choices.values():
        q.add_argument("--config", default=None, help="key=value file; flags override it")
    p.commands = sub.choices
    return p


def setup_logging() -> None:
    level = os.environ.get("PHIMDP_LOG", "error").strip().lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"PHIMDP_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    pkg = logging.getLogger("phimdp")
    pkg.setLevel(LOG_LEVELS[level])
    # replace our handler on every call so it follows the current sys.stderr
    for h in [h for h in pkg.handlers if getattr(h, "_phimdp", False)]:
        pkg.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler._phimdp = True
    pkg.addHandler(handler)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        setup_logging()
        if args.config is not None:
            args = _apply_config(parser, parser.commands[args.command], argv, args.config)
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        print(f"phimdp: error: {e}", file=sys.stderr)
        return 2
    except RuntimeFailure as e:
        print(f"phimdp: {e}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError, ValueError) as e:
        print(f"phimdp: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
