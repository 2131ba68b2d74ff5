"""Command-line experiment driver.

    healnet run       simulate churn, write steps.csv / summary.json (and a trace)
    healnet spectra   lambda_2, gap and diameter of Z(p) over a prime range
    healnet dht-demo  store keys, churn, look every key up again
    healnet audit     replay a recorded action log, re-checking every invariant
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from .adversary import Scripted, Strategy, format_action, make_strategy
from .dht import Dht, Missing
from .mapping import Violation
from .pcycle import initial_prime, is_prime, pcycle
from .protocol import SIMPLIFIED, STAGGERED_TICK, TYPE1, Overlay, ProtocolConfig
from .simnet import RecoveryStalled, StepReport
from .spectral import pcycle_graph, second_eigenvalue

log = logging.getLogger(__name__)

OUTPUT_ENV = "HEALNET_OUTPUT_DIR"
CSV_HEADER = [
    "step",
    "event",
    "recovery_type",
    "rounds",
    "messages",
    "topology_changes",
    "n",
    "p",
    "max_load",
    "spare",
    "low",
    "lambda_quotient",
    "lambda_virtual",
]
MAX_THETA = Fraction(1, 545)
SPECTRAL_TOL = 1e-9


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 1
    n0: int = 64
    steps: int = 1000
    strategy: str = "uniform-churn:0.5"
    theta: Fraction = MAX_THETA
    ell: int = 8
    c_T: int = 8
    c_rho: int = 16
    type2_mode: str = "Staggered"
    spectral_checkpoint_every: int = 100
    out_dir: Optional[str] = None
    trace: bool = False
    script: Optional[str] = None
    paper_faithful: bool = True

    def validate(self) -> None:
        if self.n0 < 4:
            raise ConfigError("n0 must be at least 4")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if not 0 < self.theta < 1:
            raise ConfigError("theta must lie in (0, 1)")
        if self.paper_faithful and self.theta > MAX_THETA:
            raise ConfigError(f"theta {self.theta} exceeds {MAX_THETA}; pass paper_faithful=false to allow it")
        if self.type2_mode not in ("Staggered", "Simplified"):
            raise ConfigError(f"unknown type2_mode {self.type2_mode!r}")
        if self.spectral_checkpoint_every < 0:
            raise ConfigError("spectral_checkpoint_every must be >= 0")

    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(self.theta, ell=self.ell, c_T=self.c_T, c_rho=self.c_rho, type2_mode=self.type2_mode)

    def header(self) -> str:
        return " ".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self) if f.name not in ("out_dir", "script"))


def _convert(name: str, raw: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if raw == "None":
        return None
    if "Fraction" in str(kind):
        return Fraction(raw)
    if "bool" in str(kind):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if "int" in str(kind):
        return int(raw)
    return raw


def parse_config_text(text: str) -> Dict[str, object]:
    """key=value lines; `#` starts a comment.  Keys are RunConfig field names."""
    known = {f.name for f in fields(RunConfig)}
    out: Dict[str, object] = {}
    for ln in text.splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise ConfigError(f"expected key=value, got {ln!r}")
        k, v = (s.strip() for s in ln.split("=", 1))
        if k not in known:
            raise ConfigError(f"unknown config key {k!r}")
        try:
            out[k] = _convert(k, v)
        except ValueError as exc:
            raise ConfigError(f"{k}: {exc}") from exc
    return out


def default_out_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "healnet-out")


# simulation


def fmt_float(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.12g}"


def csv_row(r: StepReport) -> List[str]:
    return [
        str(r.step_index),
        r.event,
        r.recovery_type,
        str(r.rounds_used),
        str(r.messages_used),
        str(r.topology_changes),
        str(r.n),
        str(r.p),
        str(r.max_load),
        str(r.spare_count),
        str(r.low_count),
        fmt_float(r.lambda_quotient),
        fmt_float(r.lambda_virtual),
    ]


@lru_cache(maxsize=64)
def cycle_lambda2(p: int) -> float:
    return second_eigenvalue(pcycle_graph(pcycle(p))).lambda2


def spectral_check(ov: Overlay) -> tuple:
    """(lambda of the quotient, lambda of the fully present cycle, violation or None)."""
    lq = second_eigenvalue(ov.quotient().multigraph()).lambda2
    lz = cycle_lambda2(ov.reference_p())
    if ov.window is None:
        bad = lq > lz + SPECTRAL_TOL
        why = f"lambda(quotient) {lq:.12g} > lambda(Z({ov.reference_p()})) {lz:.12g}"
    else:
        floor = (1 - lz) ** 2 / 8
        bad = 1 - lq < floor - SPECTRAL_TOL
        why = f"window gap {1 - lq:.12g} < (1-lambda_ref)^2/8 = {floor:.12g}"
    return lq, lz, (Violation("spectral", why) if bad else None)


@dataclass
class RunResult:
    config: RunConfig
    reports: List[StepReport] = field(default_factory=list)
    violations: List[tuple] = field(default_factory=list)  # (step, Violation)
    error: Optional[str] = None
    window_steps: List[int] = field(default_factory=list)
    overlay: Optional[Overlay] = None
    actions: List[str] = field(default_factory=list)
    trace: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and self.error is None


def simulate(
    cfg: RunConfig,
    strategy: Optional[Strategy] = None,
    audit_every: int = 1,
    on_step: Optional[Callable[[Overlay, StepReport], None]] = None,
) -> RunResult:
    """Run the step loop, auditing invariants every `audit_every` steps (and every window step)."""
    cfg.validate()
    ov = Overlay.bootstrap(cfg.n0, cfg.protocol(), seed=cfg.seed)
    if strategy is None:
        strategy = make_strategy(cfg.strategy, seed=cfg.seed)
    res = RunResult(cfg, overlay=ov)
    if cfg.trace:
        ov.trace = []
    for t in range(1, cfg.steps + 1):
        if isinstance(strategy, Scripted) and strategy.exhausted():
            break
        action = strategy.next_action(ov)
        res.actions.append(format_action(action))
        if ov.trace is not None:
            ov.trace.append(f"# step {t} {format_action(action)}")
        try:
            rep = ov.apply(action)
        except RecoveryStalled as exc:
            res.error = f"step {t}: recovery stalled: {exc}"
            log.error(res.error)
            break
        in_window = ov.window is not None or rep.recovery_type == STAGGERED_TICK
        if in_window:
            res.window_steps.append(t)
        every = cfg.spectral_checkpoint_every
        if every and (t % every == 0 or ov.window is not None):
            lq, lz, bad = spectral_check(ov)
            rep.lambda_quotient, rep.lambda_virtual = lq, lz
            if bad is not None:
                res.violations.append((t, bad))
        if t % audit_every == 0 or in_window:
            for v in ov.check_invariants():
                res.violations.append((t, v))
        res.reports.append(rep)
        if on_step is not None:
            on_step(ov, rep)
    if ov.trace is not None:
        res.trace = ov.trace
    return res


def summarize(res: RunResult) -> dict:
    reps = res.reports
    by_type = {}
    for kind in (TYPE1, SIMPLIFIED, STAGGERED_TICK):
        rs = [r for r in reps if r.recovery_type == kind]
        if not rs:
            continue
        by_type[kind] = {
            "steps": len(rs),
            "max_rounds": max(r.rounds_used for r in rs),
            "avg_rounds": round(sum(r.rounds_used for r in rs) / len(rs), 6),
            "max_messages": max(r.messages_used for r in rs),
            "avg_messages": round(sum(r.messages_used for r in rs) / len(rs), 6),
        }
    inflations = deflations = 0
    p_prev = initial_prime(res.config.n0)
    for r in reps:
        inflations += r.p > p_prev
        deflations += r.p < p_prev
        p_prev = r.p
    gaps = [1 - r.lambda_quotient for r in reps if r.lambda_quotient is not None]
    return {
        "config": res.config.header(),
        "steps": len(reps),
        "total_rounds": sum(r.rounds_used for r in reps),
        "total_messages": sum(r.messages_used for r in reps),
        "total_topology_changes": sum(r.topology_changes for r in reps),
        "by_recovery_type": by_type,
        "inflations": inflations,
        "deflations": deflations,
        "min_spectral_gap": None if not gaps else round(min(gaps), 12),
        "final_n": res.overlay.n,
        "final_p": res.overlay.p,
        "violations": len(res.violations),
        "error": res.error,
    }


def csv_text(reports: Sequence[StepReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow(csv_row(r))
    return buf.getvalue()


def write_outputs(res: RunResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "steps.csv").write_text(csv_text(res.reports))
    (out / "summary.json").write_text(json.dumps(summarize(res), indent=2, sort_keys=True) + "\n")
    actions = [f"# {res.config.header()}"] + res.actions
    (out / "actions.txt").write_text("\n".join(actions) + "\n")
    if res.config.trace:
        (out / "trace.log").write_text("\n".join(res.trace) + "\n")
    if not res.ok:
        lines = [f"step {t}: {v.kind}: {v.detail}" for t, v in res.violations]
        if res.error:
            lines.append(res.error)
        ov = res.overlay
        lines.append(f"state: n={ov.n} p={ov.p} window={ov.window.kind if ov.window else None}")
        lines.append(ov.cur.snapshot(len(res.reports)))
        (out / "diagnostic.txt").write_text("\n".join(lines) + "\n")


# subcommands


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    values: Dict[str, object] = {}
    if args.config:
        values.update(parse_config_text(Path(args.config).read_text()))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = _convert(f.name, str(v)) if isinstance(v, str) else v
    try:
        cfg = RunConfig(**values)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    strategy = None
    if cfg.script:
        strategy = Scripted(Path(cfg.script).read_text().splitlines())
    started = time.perf_counter()
    res = simulate(cfg, strategy, audit_every=args.audit_every)
    out = Path(cfg.out_dir or default_out_dir())
    write_outputs(res, out)
    log.info("ran %d steps in %.1fs", len(res.reports), time.perf_counter() - started)
    for t, v in res.violations[:20]:
        print(f"step {t}: {v.kind}: {v.detail}", file=sys.stderr)
    if res.error:
        print(res.error, file=sys.stderr)
    return 0 if res.ok else 1


def spectra_rows(pmin: int, pmax: int) -> List[List[str]]:
    rows = []
    for p in range(max(5, pmin), pmax + 1):
        if not is_prime(p):
            continue
        sp = second_eigenvalue(pcycle_graph(pcycle(p)))
        rows.append([str(p), fmt_float(sp.lambda2), fmt_float(sp.gap), str(pcycle(p).diameter)])
    return rows


def cmd_spectra(args: argparse.Namespace) -> int:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "lambda2", "gap", "diameter"])
    w.writerows(spectra_rows(args.pmin, args.pmax))
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def read_keys(text: str) -> Dict[int, bytes]:
    """`<key> <value>` per line; the key is a decimal or 0x-prefixed 64-bit integer."""
    out = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        k, _, v = ln.partition(" ")
        out[int(k, 0)] = v.strip().encode()
    return out


def dht_demo(cfg: RunConfig, keys: Dict[int, bytes], strategy: Optional[Strategy] = None) -> tuple:
    """Returns (rows of per-op stats, lost keys, overlay problems)."""
    import random

    cfg.validate()
    ov = Overlay.bootstrap(cfg.n0, cfg.protocol(), seed=cfg.seed)
    d = Dht(ov)
    rng = random.Random(cfg.seed)
    for k, v in keys.items():
        d.put(rng.choice(ov.nodes), k, v)
    if strategy is None:
        strategy = make_strategy(cfg.strategy, seed=cfg.seed)
    problems: List[str] = []
    for t in range(1, cfg.steps + 1):
        if isinstance(strategy, Scripted) and strategy.exhausted():
            break
        ov.apply(strategy.next_action(ov))
        problems += [f"step {t}: {p}" for p in d.audit(keys)]
        problems += [f"step {t}: {v.kind}: {v.detail}" for v in ov.check_invariants()]
    lost = []
    for k, v in keys.items():
        try:
            got, _ = d.get(rng.choice(ov.nodes), k)
            if got != v:
                lost.append(k)
        except Missing:
            lost.append(k)
    rows = [[o.op, str(o.key), str(o.hops), str(o.extra_hops), str(o.messages)] for o in d.ops]
    return rows, lost, problems


def cmd_dht_demo(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    keys = read_keys(Path(args.keys).read_text())
    strategy = Scripted(Path(cfg.script).read_text().splitlines()) if cfg.script else None
    rows, lost, problems = dht_demo(cfg, keys, strategy)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["op", "key", "hops", "extra_hops", "messages"])
    w.writerows(rows)
    for p in problems[:20]:
        print(p, file=sys.stderr)
    if lost:
        print(f"{len(lost)} keys lost", file=sys.stderr)
    return 0 if not lost and not problems else 1


def audit_log(text: str, spectral_every: Optional[int] = None) -> RunResult:
    """Replay an actions.txt written by `run` and re-check every invariant after every step."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ConfigError("action log lacks its config header")
    values = {}
    for tok in lines[0][2:].split():
        k, _, v = tok.partition("=")
        values[k] = _convert(k, v)
    cfg = RunConfig(**values)
    if spectral_every is not None:
        cfg.spectral_checkpoint_every = spectral_every
    script = Scripted(lines[1:])
    cfg.steps = len(script.actions)
    return simulate(cfg, script, audit_every=1)


def cmd_audit(args: argparse.Namespace) -> int:
    res = audit_log(Path(args.log).read_text(), args.spectral_every)
    if args.csv:
        want = Path(args.csv).read_text()
        if csv_text(res.reports) != want:
            print("replayed metrics differ from the recorded CSV", file=sys.stderr)
            return 1
    for t, v in res.violations[:20]:
        print(f"step {t}: {v.kind}: {v.detail}", file=sys.stderr)
    if res.error:
        print(res.error, file=sys.stderr)
    print(f"audited {len(res.reports)} steps: {'ok' if res.ok else 'FAILED'}")
    return 0 if res.ok else 1


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--strategy", help="name[:param], e.g. uniform-churn:0.5")
    p.add_argument("--theta", type=Fraction)
    p.add_argument("--ell", type=int)
    p.add_argument("--c-T", dest="c_T", type=int)
    p.add_argument("--c-rho", dest="c_rho", type=int)
    p.add_argument("--mode", dest="type2_mode", choices=["Staggered", "Simplified"])
    p.add_argument("--checkpoint-every", dest="spectral_checkpoint_every", type=int)
    p.add_argument("--out", dest="out_dir", help=f"output directory (default ${OUTPUT_ENV} or ./healnet-out)")
    p.add_argument("--trace", action="store_const", const=True, default=None)
    p.add_argument("--script", help="action script replacing the strategy")
    p.add_argument("--allow-large-theta", dest="paper_faithful", action="store_const", const=False, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="healnet", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate churn and write metrics")
    _add_run_flags(run)
    run.add_argument("--audit-every", type=int, default=1, help="check invariants every k steps")
    run.set_defaults(func=cmd_run)

    sp = sub.add_parser("spectra", help="CSV of (p, lambda2, gap, diameter)")
    sp.add_argument("--pmin", type=int, default=5)
    sp.add_argument("--pmax", type=int, default=101)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_spectra)

    dd = sub.add_parser("dht-demo", help="store keys, churn, verify lookups")
    _add_run_flags(dd)
    dd.add_argument("--keys", required=True, help="file of `<key> <value>` lines")
    dd.set_defaults(func=cmd_dht_demo)

    au = sub.add_parser("audit", help="replay an action log re-checking invariants")
    au.add_argument("log", help="actions.txt written by `run`")
    au.add_argument("--csv", help="steps.csv to compare the replay against")
    au.add_argument("--spectral-every", type=int)
    au.set_defaults(func=cmd_audit)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
