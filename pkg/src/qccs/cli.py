"""Command-line interface: ``qccs parse|lts|observe|enumerate|check``.

Configurations are named as ``FILE:NAME``.  ``FILE`` may also be the stem of
a bundled model (``example1`` ... ``example3``, ``restriction``).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from . import equiv as E
from . import qterm as T
from . import sched as F
from . import semantics as S
from .parser import ModelFile, ParseError, parse_model, print_process
from .qstate import QStateError

EXIT_OK, EXIT_REFUTED, EXIT_INCONCLUSIVE = 0, 1, 2
EXIT_ERROR = 3


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    inputs: list[str] = field(default_factory=list)
    mode: str = "schedulers"
    max_nodes: int = S.MAX_NODES
    max_resolvers: int = F.DEFAULT_CAP
    tol: float = 1e-9
    fmt: str = "text"

    def __post_init__(self):
        if self.max_nodes <= 0 or self.max_resolvers <= 0:
            raise CliError("caps must be positive")
        if not 0 < self.tol <= 1e-3:
            raise CliError("tolerance must lie in (0, 1e-3]")
        if self.mode not in ("schedulers", "strategies"):
            raise CliError(f"unknown mode {self.mode!r}")
        if self.fmt not in ("text", "json", "dot"):
            raise CliError(f"unknown format {self.fmt!r}")


# --- loading ---------------------------------------------------------------

def bundled_models() -> list[str]:
    root = resources.files("qccs") / "models"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".qccs"))


def read_source(path: str) -> str:
    p = Path(path)
    if p.is_file():
        return p.read_text()
    bundled = resources.files("qccs") / "models" / f"{path}.qccs"
    if bundled.is_file():
        return bundled.read_text()
    raise CliError(f"no such model file: {path}")


def load_model(path: str, extra: Sequence[str] = ()) -> ModelFile:
    """Parse ``path``; each extra file is parsed as a continuation of it."""
    text = read_source(path)
    for e in extra:
        text += "\n" + read_source(e)
    try:
        return parse_model(text)
    except ParseError as exc:
        raise CliError(f"{path}: {exc}") from None


def split_selector(sel: str) -> tuple[str, str]:
    path, sep, name = sel.rpartition(":")
    if not sep or not path or not name:
        raise CliError(f"expected FILE:CONFIG, got {sel!r}")
    return path, name


def select(model: ModelFile, name: str) -> S.Configuration:
    if name not in model.configs:
        known = ", ".join(sorted(model.configs)) or "none"
        raise CliError(f"unknown configuration {name!r} (known: {known})")
    p, st = model.configs[name]
    return S.Configuration(p, st)


def load_pair(sel_a: str, sel_b: str, extra: Sequence[str]) -> tuple[ModelFile, S.Configuration, S.Configuration]:
    (fa, na), (fb, nb) = split_selector(sel_a), split_selector(sel_b)
    model = load_model(fa, extra)
    if fb == fa:
        return model, select(model, na), select(model, nb)
    other = load_model(fb)
    c1, c2 = select(model, na), select(other, nb)
    if model.register != other.register:
        raise CliError(f"registers differ: {model.register} vs {other.register}")
    try:
        defs = model.defs.merged(other.defs)
    except T.TermError as exc:
        raise CliError(str(exc)) from None
    return ModelFile(model.register, defs, {}, model.contexts, model.env_ops), c1, c2


def context_basis(model: ModelFile) -> E.TestBasis:
    contexts = tuple(sorted(model.contexts.items())) or (("nil", T.Nil()),)
    envs = tuple(E.EnvOp(model.defs.supers[op], qs) for op, qs in model.env_ops)
    return E.TestBasis(contexts, envs)


# --- commands --------------------------------------------------------------

def cmd_parse(args, out) -> int:
    model = load_model(args.file)
    problems = []
    for name, (p, _) in sorted(model.configs.items()):
        v = T.check_legal(p, model.defs)
        if v is not None:
            problems.append(f"config {name}: {v}")
    for name, p in sorted(model.contexts.items()):
        v = T.check_legal(p, model.defs)
        if v is not None:
            problems.append(f"context {name}: {v}")
    if args.format == "json":
        doc = {"format": "qccs-parse/1", "register": list(model.register),
               "channels": {k: c.kind for k, c in sorted(model.defs.channels.items())},
               "procs": sorted(model.defs.procs),
               "configs": {k: {"process": print_process(p), "state": s.describe()}
                           for k, (p, s) in sorted(model.configs.items())},
               "contexts": {k: print_process(p) for k, p in sorted(model.contexts.items())},
               "problems": problems}
        out.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        out.write(f"register: {', '.join(model.register) or '(empty)'}\n")
        for k, (p, s) in sorted(model.configs.items()):
            out.write(f"config {k} = {print_process(p)} @ {s.describe()}\n")
        for k, p in sorted(model.contexts.items()):
            out.write(f"context {k} = {print_process(p)}\n")
        if not model.configs:
            out.write("warning: no configurations\n")
        for msg in problems:
            out.write(f"error: {msg}\n")
    return EXIT_ERROR if problems else EXIT_OK


def _graph(args, sel: str, extra: Sequence[str] = ()) -> S.PltsGraph:
    path, name = split_selector(sel)
    model = load_model(path, extra)
    return S.build_plts(select(model, name), model.defs, args.max_nodes)


def cmd_lts(args, out) -> int:
    g = _graph(args, args.config)
    if args.shape == "tree":
        try:
            g = S.unfold_tree(g, args.max_nodes)
        except S.StateSpaceExceeded:
            raise
        except S.SemanticsError:
            sys.stderr.write("note: the graph has cycles, rendering it without unfolding\n")
    if args.format == "dot":
        out.write(S.graph_to_dot(g, split_selector(args.config)[1]))
    elif args.format == "json":
        out.write(S.dumps_graph(g))
    else:
        out.write(S.graph_to_text(g))
    return EXIT_OK


def cmd_observe(args, out) -> int:
    sel = args.config
    extra = [args.contexts] if args.contexts else []
    path, name = split_selector(sel)
    model = load_model(path, extra)
    c = select(model, name)
    channels = [args.channel] if args.channel else model.defs.classical_channels()
    if args.enumerate:
        return _observe_all(args, model, c, channels, out)
    text = Path(args.witness).read_text()
    head = F.witness_header(text)
    ctx = head.get("context", "nil")
    if ctx != "nil":
        if ctx not in model.contexts:
            raise CliError(f"witness needs context {ctx!r}; pass it with --contexts")
        c = S.Configuration(T.Par(c.process, model.contexts[ctx]), c.state)
    g = S.build_plts(c, model.defs, args.max_nodes)
    f = F.parse_witness(text, g)
    try:
        F.weak_tau_closure(S.Distribution.point(g.nodes[g.root]), f)
        msg = ""
    except F.TauDivergence as exc:
        msg = str(exc)
    v = F.observation_vector(f, channels)
    if args.format == "json":
        out.write(json.dumps({"format": "qccs-observe/1", "context": ctx, "channels": channels,
                              "vector": None if v is None else list(v), "divergence": msg},
                             indent=2, sort_keys=True) + "\n")
    else:
        out.write(f"context: {ctx}\n")
        if v is None:
            out.write(f"undefined: {msg}\n")
        for ch, p in zip(channels, v or ()):
            out.write(f"{ch}\t{F.fmt_num(round(p, 12))}\n")
    return EXIT_OK


def _observe_all(args, model: ModelFile, c: S.Configuration, channels: list[str], out) -> int:
    g = S.build_plts(c, model.defs, args.max_nodes)
    found = F.achievable_observations(g, args.mode, channels, args.max_resolvers)
    pairs = sorted({(ch, round(a.vector[k], 12)) for a in found if a.vector is not None
                    for k, ch in enumerate(channels)})
    divergent = any(a.vector is None for a in found)
    if args.format == "json":
        out.write(json.dumps({"format": "qccs-observe/1", "mode": args.mode, "channels": channels,
                              "pairs": [list(x) for x in pairs], "divergent": divergent},
                             indent=2, sort_keys=True) + "\n")
    else:
        out.write(f"mode: {args.mode}\n")
        for ch, p in pairs:
            out.write(f"{ch}\t{F.fmt_num(p)}\n")
        if divergent:
            out.write("some resolvers diverge\n")
    return EXIT_OK


def cmd_enumerate(args, out) -> int:
    g = _graph(args, args.config)
    channels = g.defs.classical_channels()
    lines, rows = [], []
    if args.full:
        gen = F.enumerate_schedulers(g, args.max_resolvers) if args.mode == "schedulers" \
            else F.enumerate_strategies(g, args.max_resolvers)
        for n, f in enumerate(gen):
            v = F.observation_vector(f, channels)
            rows.append({"resolver": n, "vector": None if v is None else list(v)})
            lines.append(f"{n}\t{F.format_vector(channels, v)}")
    else:
        for n, a in enumerate(F.achievable_observations(g, args.mode, channels, args.max_resolvers)):
            rows.append({"vector": None if a.vector is None else list(a.vector)})
            lines.append(f"{n}\t{F.format_vector(channels, a.vector)}")
    if args.format == "json":
        out.write(json.dumps({"format": "qccs-enumerate/1", "mode": args.mode, "full": bool(args.full),
                              "channels": channels, "rows": rows}, indent=2, sort_keys=True) + "\n")
    else:
        total = F.scheduler_count(g) if args.mode == "schedulers" else F.strategy_count(F.StrategyIndex(g))
        out.write(f"mode: {args.mode}; {total} resolvers in total\n")
        out.write("\n".join(lines) + "\n")
    return EXIT_OK



def cmd_check(args, out) -> int:
    extra = [x for x in (args.contexts, args.superops) if x]
    model, c1, c2 = load_pair(args.left, args.right, extra)
    basis = context_basis(model)
    if args.relation == "openbisim":
        res = E.open_bisimilar(c1, c2, model.defs, basis, args.tol)
        code = EXIT_OK if res.verified else EXIT_REFUTED
        if args.format == "json":
            out.write(json.dumps({"format": "qccs-verdict/1", "relation": "openbisim",
                                  "result": E.EQUIVALENT if res.verified else E.REFUTED,
                                  "environments": [e.label for e in basis.environments()],
                                  "reason": res.reason}, indent=2, sort_keys=True) + "\n")
        else:
            out.write(f"result: {E.EQUIVALENT if res.verified else E.REFUTED}\nrelation: openbisim\n")
            out.write(res.describe() + "\n")
        return code
    mode = "schedulers" if args.relation == "oe" else "strategies"
    v = E.check_obs_equiv(c1, c2, model.defs, basis, mode, args.max_resolvers, args.tol, args.max_nodes)
    if args.format == "json":
        doc = v.to_json()
        doc["relation"] = args.relation
        out.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        out.write(f"relation: {args.relation}\n" + v.to_text())
    if args.witness_out and v.witness is not None:
        Path(args.witness_out).write_text(v.witness.table())
    return {E.EQUIVALENT: EXIT_OK, E.REFUTED: EXIT_REFUTED}.get(v.result, EXIT_INCONCLUSIVE)


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qccs", description="Analyse qCCS configurations.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, fmts=("text", "json")):
        p.add_argument("--format", choices=fmts, default="text")
        p.add_argument("--max-nodes", type=int, default=S.MAX_NODES)
        p.add_argument("--max-resolvers", type=int, default=F.DEFAULT_CAP,
                       help="cap on enumerated schedulers or strategies")
        p.add_argument("--tol", type=float, default=1e-9, help="probability tolerance, in (0, 1e-3]")
        p.add_argument("-o", "--output", help="write the report here instead of stdout")

    p = sub.add_parser("parse", help="parse a model file and check legality")
    p.add_argument("file")
    common(p)

    p = sub.add_parser("lts", help="render the transition system of a configuration")
    p.add_argument("config", metavar="FILE:CONFIG")
    p.add_argument("--shape", choices=("tree", "graph"), default="tree",
                   help="tree unfolding (default) or the graph with equal configurations merged")
    common(p, ("text", "json", "dot"))

    p = sub.add_parser("observe", help="replay a witness and report output probabilities")
    p.add_argument("config", metavar="FILE:CONFIG")
    how = p.add_mutually_exclusive_group(required=True)
    how.add_argument("--witness", help="witness table written by check --witness-out")
    how.add_argument("--enumerate", action="store_true", help="list achievable (channel, p) pairs instead")
    p.add_argument("--mode", choices=("schedulers", "strategies"), default="schedulers")
    p.add_argument("--channel")
    p.add_argument("--contexts", help="file of context statements")
    common(p)

    p = sub.add_parser("enumerate", help="list achievable observation vectors")
    p.add_argument("config", metavar="FILE:CONFIG")
    p.add_argument("--mode", choices=("schedulers", "strategies"), default="schedulers")
    p.add_argument("--full", action="store_true", help="list every resolver, not just distinct vectors")
    common(p)

    p = sub.add_parser("check", help="compare two configurations")
    p.add_argument("left", metavar="FILE:CONFIG")
    p.add_argument("right", metavar="FILE:CONFIG")
    p.add_argument("--relation", choices=("oe", "oest", "openbisim"), default="oe")
    p.add_argument("--contexts", help="file of context statements")
    p.add_argument("--superops", help="file of super and env statements for open bisimulation")
    p.add_argument("--witness-out", help="write the refuting witness table here")
    common(p)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        RunConfig(args.command, [], getattr(args, "mode", "schedulers"), args.max_nodes,
                  args.max_resolvers, args.tol, args.format)
        handler = {"parse": cmd_parse, "lts": cmd_lts, "observe": cmd_observe,
                   "enumerate": cmd_enumerate, "check": cmd_check}[args.command]
        if args.output:
            with open(args.output, "w") as out:
                return handler(args, out)
        return handler(args, sys.stdout)
    except (F.EnumerationCapExceeded, S.StateSpaceExceeded) as exc:
        sys.stderr.write(f"inconclusive: {exc}\n")
        return EXIT_INCONCLUSIVE
    except (CliError, ParseError, T.TermError, S.SemanticsError, QStateError, F.WitnessError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
