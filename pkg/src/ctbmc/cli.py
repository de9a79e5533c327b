"""Command-line front end.

Subcommands: simulate, fit-em, fit-baum, analyze, loglik.  All output goes
to stdout as aligned tables; --out additionally writes a JSON report whose
numbers rerun bit-identically from the same inputs and seed (timings aside).

Exit codes: 0 success, 2 usage error, 3 file parse error, 4 validation
error, 5 numerical breakdown, 6 degenerate reestimation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import fit_discrete, recover_generator, time_sample
from .em import EmConfig, fit
from .errors import (
    DegenerateStateError,
    LogmError,
    ParseError,
    StationaryError,
    ValidationError,
    ZeroLikelihoodError,
)
from .inference import log_likelihood
from .io import (
    fit_result_to_dict,
    generator_to_dict,
    load_generator,
    load_path,
    save_generator,
    save_path,
)
from .linalg import expm
from .model import (
    InitialDistribution,
    detect_structure,
    dwell_distribution,
    stationary,
    underlying_is_markov,
    validate,
)
from .simulate import observe, simulate_joint, simulate_until_jumps

EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_NUMERICAL = 5
EXIT_DEGENERATE = 6


def _read(arg):
    try:
        return Path(arg).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {arg}: {exc}") from exc


def _format_blocks(gen, digits=4):
    width = digits + 8
    lines = []
    for l in range(gen.d):
        for i in range(gen.r):
            cells = []
            for n in range(gen.d):
                row = gen.blocks[l, n][i]
                cells.append(" ".join(f"{v:{width}.{digits}f}" for v in row))
            lines.append("  ".join(cells))
        if l < gen.d - 1:
            lines.append("")
    return "\n".join(lines)


def _uniform_init(path, r):
    return InitialDistribution.uniform(path.x0, r)


def cmd_simulate(args):
    doc = load_generator(_read(args.model))
    gen = doc.generator
    if args.x0 is not None:
        if args.s0 is not None:
            init = (args.x0, args.s0)
        else:
            init = InitialDistribution.uniform(args.x0, gen.r)
    else:
        init = None
    if args.target_jumps is not None:
        joint = simulate_until_jumps(gen, init=init, n_jumps=args.target_jumps, seed=args.seed)
    else:
        joint = simulate_joint(gen, init=init, horizon=args.T, seed=args.seed)
    path = observe(joint)
    meta = {"seed": args.seed if args.seed is not None else "none", "model": Path(args.model).name}
    text = save_path(path, metadata=meta)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {path.n_jumps} observable jumps over [0, {path.horizon!r}] to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_fit_em(args):
    doc = load_generator(_read(args.init_model))
    path = load_path(_read(args.path))
    mask = None
    if args.mask:
        if doc.mask is None:
            raise ValidationError(
                "--mask given but the initial model file carries no mask"
            )
        mask = doc.mask
    config = EmConfig(rel_tol=args.tol, max_iters=args.max_iters, mask=mask)
    init = _uniform_init(path, doc.generator.r)
    started = time.perf_counter()
    result = fit(doc.generator, init, path, config)
    elapsed = time.perf_counter() - started
    print(f"termination: {result.termination} after {result.iterations} iterations")
    print(f"log-likelihood: {float(result.loglik_trace[-1])!r}")
    print("estimated rates:")
    print(_format_blocks(result.estimate))
    if result.degenerate_states:
        print(f"degenerate states (rates frozen): {result.degenerate_states}")
    if args.out:
        report = fit_result_to_dict(result)
        report["command"] = "fit-em"
        report["package_version"] = __version__
        report["inputs"] = {"init_model": args.init_model, "path": args.path}
        report["settings"] = {"tol": args.tol, "max_iters": args.max_iters, "masked": bool(args.mask)}
        report["runtime_seconds"] = elapsed
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
        print(f"report written to {args.out}")
    return 0


def cmd_fit_baum(args):
    doc = load_generator(_read(args.init_model))
    gen0 = doc.generator
    path = load_path(_read(args.path))
    path.validate(d=gen0.d)
    sampled = time_sample(path, args.delta)
    r0 = expm(gen0.full() * args.delta)
    r0 /= r0.sum(axis=1, keepdims=True)
    started = time.perf_counter()
    discrete = fit_discrete(sampled, gen0.r, r0, rel_tol=args.tol, max_iters=args.max_iters)
    estimate, recovery = recover_generator(discrete.transition, args.delta, gen0.r)
    elapsed = time.perf_counter() - started
    print(f"samples: {sampled.n_samples} at step {args.delta!r}")
    print(f"termination: {discrete.termination} after {discrete.iterations} iterations")
    print(f"sampled-sequence log-likelihood: {float(discrete.loglik_trace[-1])!r}")
    print(f"recovery branch: {recovery.branch} (clamped rate mass {recovery.clamped_mass!r})")
    if recovery.note:
        print(f"note: {recovery.note}")
    try:
        cont = log_likelihood(estimate, _uniform_init(path, gen0.r), path)
        print(f"continuous-path log-likelihood of the estimate: {cont!r}")
    except (ZeroLikelihoodError, ValidationError) as exc:
        cont = None
        print(f"continuous-path log-likelihood unavailable: {exc}")
    print("estimated rates:")
    print(_format_blocks(estimate))
    if args.out:
        report = {
            "command": "fit-baum",
            "package_version": __version__,
            "inputs": {"init_model": args.init_model, "path": args.path},
            "settings": {
                "delta": args.delta,
                "tol": args.tol,
                "max_iters": args.max_iters,
            },
            "n_samples": sampled.n_samples,
            "iterations": int(discrete.iterations),
            "termination": discrete.termination,
            "loglik_trace": [float(v) for v in discrete.loglik_trace],
            "transition": discrete.transition.tolist(),
            "recovery": {
                "branch": recovery.branch,
                "clamped_mass": recovery.clamped_mass,
                "note": recovery.note,
            },
            "estimate": generator_to_dict(estimate),
            "continuous_loglik": cont,
            "runtime_seconds": elapsed,
        }
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
        print(f"report written to {args.out}")
    return 0


def cmd_analyze(args):
    doc = load_generator(_read(args.model))
    gen = doc.generator
    analysis = stationary(gen)
    flags = detect_structure(gen)
    markov, q = underlying_is_markov(gen)
    print(f"dimensions: d={gen.d} observable, r={gen.r} hidden")
    print("joint stationary law:")
    print("  " + " ".join(f"{v:.6f}" for v in analysis.pi))
    print("stationary law at observable jumps:")
    print("  " + " ".join(f"{v:.6f}" for v in analysis.nu))
    print("dwell time by observable state (mean, variance):")
    dwell_rows = []
    for l in range(gen.d):
        ph = dwell_distribution(gen, l, analysis=analysis)
        dwell_rows.append((ph.mean, ph.variance))
        print(f"  state {l}: {dwell_rows[-1][0]:.6f}, {dwell_rows[-1][1]:.6f}")
    names = [name for name in ("mmmp", "bmap", "map", "mmpp") if getattr(flags, name)]
    print(f"structure: {' '.join(names) if names else 'general'}")
    if markov:
        print("hidden coordinate alone is Markov with generator:")
        for row in q:
            print("  " + " ".join(f"{v:10.4f}" for v in row))
    else:
        print("hidden coordinate alone is not Markov")
    if args.out:
        report = {
            "command": "analyze",
            "package_version": __version__,
            "inputs": {"model": args.model},
            "pi": analysis.pi.tolist(),
            "nu": analysis.nu.tolist(),
            "embedded": analysis.embedded.tolist(),
            "dwell_moments": [
                {"state": l, "mean": m, "variance": v}
                for l, (m, v) in enumerate(dwell_rows)
            ],
            "structure": {
                "mmmp": flags.mmmp,
                "bmap": flags.bmap,
                "map": flags.map,
                "mmpp": flags.mmpp,
                "general": flags.general,
            },
            "underlying_markov": markov,
            "underlying_generator": None if q is None else q.tolist(),
        }
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
        print(f"report written to {args.out}")
    return 0


def cmd_loglik(args):
    doc = load_generator(_read(args.model))
    path = load_path(_read(args.path))
    value = log_likelihood(doc.generator, _uniform_init(path, doc.generator.r), path)
    print(repr(value))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ctbmc",
        description="Simulate and estimate continuous-time bivariate Markov chains.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw an observable path from a model")
    p.add_argument("--model", required=True, help="generator file")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--T", type=float, help="time horizon")
    group.add_argument("--target-jumps", type=int, help="stop at this many observable jumps")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--x0", type=int, default=None, help="fix the starting observable state")
    p.add_argument("--s0", type=int, default=None, help="fix the starting hidden state")
    p.add_argument("--out", default=None, help="path file to write (default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-em", help="fit by expectation-maximization on the exact path")
    p.add_argument("--init-model", required=True, help="starting generator file")
    p.add_argument("--path", required=True, help="observed path file")
    p.add_argument("--tol", type=float, default=1e-7, help="relative log-likelihood tolerance")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--mask", action="store_true", help="enforce the mask stored in the model file")
    p.add_argument("--out", default=None, help="JSON report file")
    p.set_defaults(func=cmd_fit_em)

    p = sub.add_parser("fit-baum", help="fit on a time-sampled path and recover rates")
    p.add_argument("--init-model", required=True)
    p.add_argument("--path", required=True)
    p.add_argument("--delta", type=float, required=True, help="sampling step")
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit_baum)

    p = sub.add_parser("analyze", help="stationary laws, dwell moments, structure flags")
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("loglik", help="log-likelihood of a path under a model")
    p.add_argument("--model", required=True)
    p.add_argument("--path", required=True)
    p.set_defaults(func=cmd_loglik)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ZeroLikelihoodError, LogmError, StationaryError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DegenerateStateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
