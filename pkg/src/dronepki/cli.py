"""Command-line entry point: ``dronepki <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from . import bench
from .crypto import PublicKey
from .errors import TickBudgetExhausted
from .ledger import dump_jsonl, load_jsonl, verify_chain
from .plugin import VerificationArray
from .replay import replay_file
from .simnet import AdversaryScenario, SimConfig, run


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _adversary(text: str) -> AdversaryScenario:
    try:
        return AdversaryScenario.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    config = SimConfig(
        seed=args.seed,
        n_validators=args.validators,
        n_operators=args.operators,
        n_transactions=args.transactions,
        challenge_mode=args.mode,
        age_threshold=args.age_threshold,
        poll_retries=args.poll_retries,
        adversary=args.adversary,
        strict_voting=args.strict_voting,
    )
    status = 0
    try:
        trace = run(config)
    except TickBudgetExhausted as exc:
        logging.error("%s", exc)
        trace, status = exc.trace, 2
    trace.write(args.out)
    if args.ledger_out:
        dump_jsonl(trace.ledger.blocks, args.ledger_out)
    _print({"trace": str(args.out), "outcome": trace.outcome, "metrics": trace.metrics})
    return status


def cmd_ledger_verify(args) -> int:
    try:
        blocks = load_jsonl(args.file)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot read ledger: {exc}", file=sys.stderr)
        return 1
    validators = [PublicKey.from_hex(k) for k in args.validator] if args.validator else None
    report = verify_chain(blocks, validators)
    if report.ok:
        print(f"OK: {report.blocks_checked} blocks verified")
        return 0
    print(f"FAIL at block {report.failed_at}: {report.reason}")
    return 1


def cmd_consensus_replay(args) -> int:
    report = replay_file(args.trace)
    _print(report.to_dict())
    return 0 if report.ok else 1


def cmd_verify(args) -> int:
    try:
        blocks = load_jsonl(args.ledger)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot read ledger: {exc}", file=sys.stderr)
        return 1
    if not args.skip_chain_check:
        report = verify_chain(blocks)
        if not report.ok:
            print(f"ledger fails verification at block {report.failed_at}: {report.reason}", file=sys.stderr)
            return 1
    plugin = VerificationArray().sync(blocks, args.now)
    valid = plugin.is_valid(args.drone_name)
    print(f"{args.drone_name}: {'valid' if valid else 'invalid'}")
    return 0 if valid else 1


def _bench(args, axis: str) -> int:
    if axis == "nodes":
        points = bench.sweep_nodes(args.counts, args.tx, args.reps, args.seed, args.workers)
        config = {"node_counts": args.counts, "tx_count": args.tx}
    else:
        points = bench.sweep_transactions(args.counts, args.nodes, args.reps, args.seed, args.workers)
        config = {"tx_counts": args.counts, "node_count": args.nodes}
    config.update(repetitions=args.reps, base_seed=args.seed, arrival_interval=0)
    config["timing"] = asdict(bench.bench_config(1, 1, 0).timing)
    bench.write_csv(points, args.out)
    sidecar = bench.sidecar_path(args.out)
    bench.write_metadata(sidecar, axis, points, config)
    with open(args.out, encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    print(f"# metadata: {sidecar}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dronepki", description="Drone certificate ledger, simulator and benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the network simulator and write a JSON-lines trace")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--validators", type=int, default=4)
    s.add_argument("--operators", type=int, default=2)
    s.add_argument("--transactions", type=int, default=10)
    s.add_argument("--mode", choices=("sign-only", "handshake"), default="sign-only")
    s.add_argument("--adversary", type=_adversary, default=AdversaryScenario(),
                   help="none | spoof[:K] | malicious:K | target:V,O | sybil:K")
    s.add_argument("--age-threshold", type=int, default=200)
    s.add_argument("--poll-retries", type=int, default=3)
    s.add_argument("--strict-voting", action="store_true", help="every voter re-runs the challenge itself")
    s.add_argument("--out", type=Path, default=Path("trace.jsonl"))
    s.add_argument("--ledger-out", type=Path, help="also export the terminal ledger as JSON lines")
    s.set_defaults(func=cmd_simulate)

    lg = sub.add_parser("ledger", help="ledger file tools")
    lsub = lg.add_subparsers(dest="ledger_command", required=True)
    lv = lsub.add_parser("verify", help="re-verify every pointer, signature and threshold")
    lv.add_argument("file", type=Path)
    lv.add_argument("--validator", action="append", metavar="HEX",
                    help="restrict footer signers to these keys (repeatable)")
    lv.set_defaults(func=cmd_ledger_verify)

    cs = sub.add_parser("consensus", help="consensus trace tools")
    csub = cs.add_subparsers(dest="consensus_command", required=True)
    cr = csub.add_parser("replay", help="re-verify every commit in a trace against an independent oracle")
    cr.add_argument("trace", type=Path)
    cr.set_defaults(func=cmd_consensus_replay)

    v = sub.add_parser("verify", help="check a drone's certificate; exit 0 if valid, 1 otherwise")
    v.add_argument("drone_name")
    v.add_argument("--ledger", type=Path, default=Path("ledger.jsonl"))
    v.add_argument("--now", type=int, default=0, help="tick at which to evaluate expiry")
    v.add_argument("--skip-chain-check", action="store_true")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="latency/throughput sweeps (CSV plus JSON sidecar)")
    bsub = b.add_subparsers(dest="bench_command", required=True)
    bn = bsub.add_parser("nodes", help="vary validator count at a fixed transaction count")
    bn.add_argument("--counts", type=_int_list, default=[2, 4, 6, 8, 10, 12])
    bn.add_argument("--tx", type=int, default=2000)
    bt = bsub.add_parser("txs", help="vary transaction count at a fixed validator count")
    bt.add_argument("--counts", type=_int_list, default=[100, 500, 1000, 1500, 2000])
    bt.add_argument("--nodes", type=int, default=12)
    for parser, axis, out in ((bn, "nodes", "nodes.csv"), (bt, "txs", "txs.csv")):
        parser.add_argument("--reps", type=int, default=5)
        parser.add_argument("--seed", type=int, default=1, help="first seed; repetitions use seed, seed+1, ...")
        parser.add_argument("--workers", type=int, default=None, help="run sweep points in parallel processes")
        parser.add_argument("--out", type=Path, default=Path(out))
        parser.set_defaults(func=lambda a, axis=axis: _bench(a, axis))
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
