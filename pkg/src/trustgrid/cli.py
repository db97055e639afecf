"""Command-line front end: ``trustgrid simulate | benchmark | inspect | rerun``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .errors import ConfigInvalid, NetworkTooSmall, ParseError, TrustGridError
from .identity import render_certificate
from .ledger import TRADING, TRUST, LedgerView
from .simulation.benchmarks import benchmark_csv, check_sizes, run_join_benchmark, run_trust_benchmark
from .simulation.config import SCENARIOS, SimConfig, config_from_mapping, load_config, parse_override, preset_path
from .simulation.engine import SimResult, run_market_sim
from .simulation.metrics import MetricsReport, measure_ct

log = logging.getLogger("trustgrid")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DEFAULT_OUT = "trustgrid-out"
DEFAULT_SIZES = (100, 200, 300, 400, 500)
PRESETS = {"config1": "network-config1.toml", "config2": "network-config2.toml"}

SIM_FILES = {
    "prices": "prices.csv",
    "trades": "trades.csv",
    "trust_ledger": "ledger-trust.jsonl",
    "trading_ledger": "ledger-trading.jsonl",
    "graph": "graph.txt",
    "certificates": "certificates.json",
    "metrics": "metrics.json",
}


class UsageError(Exception):
    """Bad arguments or state that the user must fix; exit status 2."""


def header(seed: int) -> str:
    return f"# trustgrid {__version__} seed={seed}\n"


def parse_sizes(text: str) -> list[int]:
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must be a comma-separated list of integers, got {text!r}")
    try:
        return check_sizes(sizes)
    except (NetworkTooSmall, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get("RETINA_OUT") or DEFAULT_OUT)


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- simulate ----------------------------------------------------------------


def resolve_config(args: argparse.Namespace) -> SimConfig:
    overrides = list(args.set or [])
    if args.config:
        cfg = load_config(args.config, overrides)
    elif args.preset:
        cfg = load_config(preset_path(PRESETS[args.preset]), overrides)
    else:
        cfg = config_from_mapping(dict(map(parse_override, overrides)))
    changes: dict[str, Any] = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        cfg = config_from_mapping(changes, base=cfg)
    if args.scenario:
        cfg = cfg.with_scenario(args.scenario)
    return cfg


def write_simulation(result: SimResult, dest: Path, tampered: Sequence[int]) -> dict[str, Any]:
    cfg = result.config
    dest.mkdir(parents=True, exist_ok=True)
    h = header(cfg.seed)
    metrics = MetricsReport()
    metrics.add_market(result)
    certs = {str(n): render_certificate(c) for n, c in sorted(result.net.certs.items())}
    _write(dest / SIM_FILES["prices"], result.price_csv())
    _write(dest / SIM_FILES["trades"], result.trade_csv())
    _write(dest / SIM_FILES["trust_ledger"], h + result.net.trust_ledger.dump_jsonl())
    _write(dest / SIM_FILES["trading_ledger"], h + result.market.ledger.dump_jsonl())
    _write(dest / SIM_FILES["graph"], h + result.net.export_edges())
    _write(dest / SIM_FILES["certificates"], _dump_json({"tool": f"trustgrid {__version__}", "seed": cfg.seed, "certificates": certs}))
    _write(dest / SIM_FILES["metrics"], metrics.to_json())
    manifest = {
        "command": "simulate",
        "tool": f"trustgrid {__version__}",
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "tampered": list(tampered),
        "outputs": dict(SIM_FILES),
        "ledger_digests": result.ledger_digests(),
    }
    _write(dest / "manifest.json", _dump_json(manifest))
    return manifest


def run_simulate(cfg: SimConfig, tampered: Sequence[int], dest: Path) -> int:
    total = cfg.total_nodes
    for t in tampered:
        if not 1 <= t <= total:
            raise UsageError(f"--tamper {t}: no such node (ids run 1..{total})")
    result = run_market_sim(cfg, tampered=tampered)
    write_simulation(result, dest, tampered)
    mean = result.mean_price()
    print(f"cycles={cfg.market_cycles} trades={len(result.trades)} mean_price={mean:.6f} "
          f"utility_fallbacks={result.utility_fallback_count}")
    for node, cycle in sorted(result.detections.items()):
        print(f"revoked node {node} in cycle {cycle}")
    print(f"outputs written to {dest}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    return run_simulate(resolve_config(args), sorted(set(args.tamper or [])), out_dir(args.out))


# -- benchmark ---------------------------------------------------------------


def run_benchmark(mode: str, sizes: list[int], decentralized: bool, seed: int, reps: int, dest: Path) -> int:
    if mode == "join":
        rows = run_join_benchmark(sizes, reps=reps, seed=seed)
    else:
        rows = run_trust_benchmark(sizes, decentralized=decentralized, trials=reps, seed=seed)
    name = f"benchmark-{mode}{'-decentralized' if decentralized else ''}"
    dest.mkdir(parents=True, exist_ok=True)
    text = benchmark_csv(rows, seed)
    _write(dest / f"{name}.csv", text)
    metrics = MetricsReport.from_components(measure_ct(), seed=seed)
    if mode == "join":
        metrics.join_series = MetricsReport.series(rows)
    else:
        metrics.trust_delay_series = MetricsReport.series(rows)
    _write(dest / f"{name}-metrics.json", metrics.to_json())
    manifest = {
        "command": "benchmark",
        "tool": f"trustgrid {__version__}",
        "seed": seed,
        "config": {"mode": mode, "sizes": sizes, "decentralized": decentralized, "reps": reps},
        "outputs": {"benchmark": f"{name}.csv", "metrics": f"{name}-metrics.json"},
    }
    _write(dest / f"{name}-manifest.json", _dump_json(manifest))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    if args.decentralized and args.mode != "trust":
        raise UsageError("--decentralized applies to the trust benchmark only")
    reps = args.reps if args.reps is not None else (5 if args.mode == "join" else 100)
    if reps < 1:
        raise UsageError("--reps must be >= 1")
    seed = 42 if args.seed is None else args.seed
    return run_benchmark(args.mode, args.sizes, args.decentralized, seed, reps, out_dir(args.out))


# -- rerun -------------------------------------------------------------------


def cmd_rerun(args: argparse.Namespace) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read manifest {args.manifest}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.manifest}: not valid JSON ({exc})") from None
    command = manifest.get("command")
    cfg = manifest.get("config", {})
    dest = out_dir(args.out)
    if command == "simulate":
        return run_simulate(config_from_mapping(cfg), manifest.get("tampered", []), dest)
    if command == "benchmark":
        return run_benchmark(cfg["mode"], check_sizes(cfg["sizes"]), cfg["decentralized"], manifest["seed"], cfg["reps"], dest)
    raise UsageError(f"{args.manifest}: unknown command {command!r}")


# -- inspect -----------------------------------------------------------------


def _state_file(state: Path, key: str) -> Path:
    path = state / SIM_FILES[key]
    if not path.is_file():
        raise UsageError(f"{path} not found; run `trustgrid simulate --out {state}` first")
    return path


def cmd_inspect(args: argparse.Namespace) -> int:
    state = out_dir(args.state)
    if args.target == "cert":
        data = json.loads(_state_file(state, "certificates").read_text(encoding="utf-8"))
        text = data["certificates"].get(str(args.node))
        if text is None:
            raise UsageError(f"unknown node {args.node}")
        print(text)
    elif args.target == "ledger":
        key = "trust_ledger" if args.kind == TRUST else "trading_ledger"
        raw = _state_file(state, key).read_text(encoding="utf-8")
        try:
            view = LedgerView.load_jsonl(raw, kind=args.kind)
        except ParseError as exc:
            raise UsageError(f"{SIM_FILES[key]}: {exc}") from None
        report = view.audit()
        if not report.valid:
            log.warning("ledger audit failed at block %s: %s", report.first_bad_block, report.reason)
        sys.stdout.write(view.dump_jsonl())
    else:
        text = _state_file(state, "graph").read_text(encoding="utf-8")
        sys.stdout.write("".join(line + "\n" for line in text.splitlines() if not line.startswith("#")))
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trustgrid", description="Hybrid PKI/Web-of-Trust energy market simulator.")
    parser.add_argument("--version", action="version", version=f"trustgrid {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the market simulation")
    src = sim.add_mutually_exclusive_group()
    src.add_argument("--config", metavar="PATH", help="TOML config file")
    src.add_argument("--preset", choices=sorted(PRESETS), help="shipped network configuration")
    sim.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
    sim.add_argument("--scenario", choices=list(SCENARIOS), help="buyer/seller mix")
    sim.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    sim.add_argument("--tamper", action="append", type=int, metavar="NODE", help="node with tampered software (repeatable)")
    sim.add_argument("--out", metavar="DIR", help="output directory (default: $RETINA_OUT or ./trustgrid-out)")
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("benchmark", help="join or trust benchmark against the flooding WoT baseline")
    bench.add_argument("mode", choices=["join", "trust"])
    bench.add_argument("--sizes", type=parse_sizes, default=list(DEFAULT_SIZES), metavar="N,N,...")
    bench.add_argument("--decentralized", action="store_true", help="search partial ledgers only (trust mode)")
    bench.add_argument("--seed", type=int)
    bench.add_argument("--reps", type=int, help="repetitions per size (join: 5, trust: 100)")
    bench.add_argument("--out", metavar="DIR")
    bench.set_defaults(func=cmd_benchmark)

    insp = sub.add_parser("inspect", help="print artifacts of a previous simulate run")
    insp.add_argument("--state", metavar="DIR", help="run directory (default: $RETINA_OUT or ./trustgrid-out)")
    targets = insp.add_subparsers(dest="target", required=True)
    cert = targets.add_parser("cert", help="certificate of one node")
    cert.add_argument("node", type=int)
    ledger = targets.add_parser("ledger", help="ledger as line-delimited JSON")
    ledger.add_argument("kind", choices=[TRUST, TRADING])
    targets.add_parser("graph", help="trust edges, one 'a b' pair per line")
    insp.set_defaults(func=cmd_inspect)

    rerun = sub.add_parser("rerun", help="repeat a run from its manifest")
    rerun.add_argument("manifest", metavar="PATH")
    rerun.add_argument("--out", metavar="DIR")
    rerun.set_defaults(func=cmd_rerun)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigInvalid, NetworkTooSmall) as exc:
        print(f"trustgrid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrustGridError, OSError) as exc:
        print(f"trustgrid: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is still a runtime failure, not a crash code
        log.debug("unexpected error", exc_info=True)
        print(f"trustgrid: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
