"""Command-line interface: ``bregmax <command> [options]``.

Exit codes: 0 on success, 1 on an input error, 2 when a check fails.
Output is a versioned JSON report (``--json``, the default) or a plain table.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings

import numpy as np

from .bbar import AmbiguousMaximizer, bbar_eval, conjecture_scan, maximize_bbar, normalize_direction
from .beta import BUILTIN_KINDS
from .errors import BregmaxError, ParseError, TrivialKernel
from .family import Instance
from .io import dumps_report, jsonable, load_direction, load_instance, load_pm
from .maximize import maximize_divergence
from .projection import rb_project
from .verify import cmd_verify

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CHECK = 2


class _InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors: exit status 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("BREGMAX_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise _InputError(f"BREGMAX_SEED must be an integer, got {env!r}") from None


def _tol_overrides(items) -> dict[str, float]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise _InputError(f"--tol expects key=value, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise _InputError(f"--tol {key}: {value!r} is not a number") from None
    return out


def _instance(args) -> Instance:
    if not args.instance:
        raise _InputError("an instance file is required (-i)")
    inst = load_instance(args.instance)
    overrides = _tol_overrides(args.tol)
    if overrides:
        try:
            inst = inst.with_tol(inst.tol.with_overrides(**overrides))
        except ValueError as exc:
            raise _InputError(f"--tol: {exc}") from None
    return inst


def _common(p: argparse.ArgumentParser, instance: bool = True) -> None:
    if instance:
        p.add_argument("-i", "--instance", help="instance JSON file")
    p.add_argument("--seed", type=int, default=None, help="random seed (default: $BREGMAX_SEED or 0)")
    p.add_argument("--tol", action="append", metavar="KEY=VALUE", help="tolerance override, repeatable")
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="fmt", action="store_const", const="json", help="JSON report (default)")
    fmt.add_argument("--table", dest="fmt", action="store_const", const="table", help="plain table")
    p.set_defaults(fmt="json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bregmax", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("project", help="reverse Bregman projection of a pm onto the family closure")
    _common(p)
    p.add_argument("-P", "--pm", required=True, help="pm JSON file")

    p = sub.add_parser("divergence", help="divergence B(P, E) of a pm from the family")
    _common(p)
    p.add_argument("-P", "--pm", required=True, help="pm JSON file")

    p = sub.add_parser("maximize", help="maximize B(P, E) over all pms")
    _common(p)
    p.add_argument("--starts", type=int, default=16, help="random multistart count")

    p = sub.add_parser("bbar", help="evaluate Bbar(u), or maximize it over the kernel space without -u")
    _common(p)
    p.add_argument("-u", "--direction", help="direction JSON file")
    p.add_argument("--starts", type=int, default=16, help="multistart count")

    p = sub.add_parser("conjecture-scan", help="count local maximizers of B(., F_u) for random u")
    _common(p)
    p.add_argument("--kind", choices=BUILTIN_KINDS, help="draw random generators of this kind (instead of -i)")
    p.add_argument("--zsize", type=int, help="|Z| with --kind")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--starts", type=int, default=32)

    p = sub.add_parser("verify", help="run the theorem and invariant checks on an instance")
    _common(p)
    p.add_argument("--starts", type=int, default=64, help="multistart budget and sample count")
    p.add_argument("--pairs", type=int, default=None, help="random (P, u) pairs for the inequality checks")
    return parser


# ---------------------------------------------------------------------------
# Commands; each returns (report dict, exit code)
# ---------------------------------------------------------------------------

def _labelled(inst: Instance, w) -> dict:
    return {z: float(x) for z, x in zip(inst.z_labels, np.asarray(w, dtype=float))}


def cmd_project(args):
    inst = _instance(args)
    p = load_pm(args.pm, inst.z_labels)
    res = rb_project(inst, p)
    return {
        "command": "project",
        "pi": _labelled(inst, res.pi.weights),
        "theta": res.theta,
        "face": [inst.z_labels[z] for z in res.face.members],
        "value": res.value,
        "dual_gap": res.dual_gap,
    }, EXIT_OK


def cmd_divergence(args):
    inst = _instance(args)
    p = load_pm(args.pm, inst.z_labels)
    return {"command": "divergence", "value": rb_project(inst, p).value}, EXIT_OK


def cmd_maximize(args):
    inst = _instance(args)
    seed = _seed(args)
    rep = maximize_divergence(inst, args.starts, seed)
    return {
        "command": "maximize",
        "seed": seed,
        "starts": args.starts,
        "global_value": rep.global_value,
        "global_argmax": _labelled(inst, rep.global_argmax.weights),
        "enumeration_value": rep.enumeration_value,
        "multistart_value": rep.multistart_value,
        "local_optima": [
            {"value": o.value, "pm": _labelled(inst, o.pm.weights), "residual": o.residual} for o in rep.local_optima
        ],
    }, EXIT_OK


def cmd_bbar(args):
    inst = _instance(args)
    seed = _seed(args)
    if args.direction:
        u = load_direction(args.direction, inst.z_labels)
        d = normalize_direction(u)
        res = bbar_eval(inst.beta, d, args.starts, seed, inst.tol)
        return {
            "command": "bbar",
            "seed": seed,
            "u": _labelled(inst, d.u),
            "value": res.value,
            "argmax": _labelled(inst, res.argmax.weights),
            "base": _labelled(inst, res.base.weights),
            "n_local": res.n_local,
        }, EXIT_OK
    try:
        res = maximize_bbar(inst, args.starts, seed)
    except TrivialKernel:
        return {"command": "bbar", "seed": seed, "value": 0.0, "note": "kernel space is {0}"}, EXIT_OK
    return {
        "command": "bbar",
        "seed": seed,
        "u": _labelled(inst, res.direction.u),
        "value": res.value,
        "argmax": _labelled(inst, res.detail.argmax.weights),
        "base": _labelled(inst, res.detail.base.weights),
        "n_local": res.detail.n_local,
        "evaluations": res.evaluations,
    }, EXIT_OK


def cmd_conjecture_scan(args):
    seed = _seed(args)
    if args.kind:
        if args.instance:
            raise _InputError("give either -i or --kind, not both")
        if args.zsize is None:
            raise _InputError("--kind needs --zsize")
        beta, zsize = args.kind, args.zsize
    else:
        inst = _instance(args)
        beta, zsize = inst.beta, None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AmbiguousMaximizer)
        rep = conjecture_scan(beta, zsize, args.trials, args.starts, seed)
    return {
        "command": "conjecture-scan",
        "seed": seed,
        "zsize": rep.zsize,
        "trials": len(rep.trials),
        "starts": rep.starts,
        "n_local_histogram": rep.n_local_histogram(),
        "counterexamples": [_trial_dict(t) for t in rep.counterexamples],
        "records": [{"trial": t.trial, "seed": t.seed, "n_local": t.n_local, "value": t.value} for t in rep.trials],
    }, EXIT_OK


def _trial_dict(t) -> dict:
    return {
        "trial": t.trial,
        "seed": t.seed,
        "kind": t.kind,
        "params": t.params,
        "u": t.u,
        "n_local": t.n_local,
        "value": t.value,
        "optima": [{"pm": p, "value": v} for p, v in t.optima],
    }


def cmd_verify_cli(args):
    inst = _instance(args)
    seed = _seed(args)
    rep = cmd_verify(inst, seed, args.starts, args.pairs)
    body = {"command": "verify"}
    body.update(rep.to_dict())
    return body, EXIT_OK if rep.passed else EXIT_CHECK


COMMANDS = {
    "project": cmd_project,
    "divergence": cmd_divergence,
    "maximize": cmd_maximize,
    "bbar": cmd_bbar,
    "conjecture-scan": cmd_conjecture_scan,
    "verify": cmd_verify_cli,
}


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def format_table(report: dict) -> str:
    lines = []

    def emit(prefix, value):
        if isinstance(value, dict):
            for k, v in value.items():
                emit(f"{prefix}.{k}" if prefix else str(k), v)
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            for i, v in enumerate(value):
                emit(f"{prefix}[{i}]", v)
        else:
            lines.append((prefix, value))

    emit("", jsonable(report))
    width = max((len(k) for k, _ in lines), default=0)
    return "".join(f"{k:<{width}}  {v}\n" for k, v in lines)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report, code = COMMANDS[args.command](args)
    except (_InputError, ParseError) as exc:
        print(f"bregmax: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BregmaxError, ValueError) as exc:
        print(f"bregmax: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.fmt == "table":
        sys.stdout.write(format_table(report))
    else:
        sys.stdout.write(dumps_report(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
