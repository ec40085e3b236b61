"""Command line entry points: gen, replay, oracle, report, broker.

Exit codes: 0 on success, 2 when an acceptance threshold is not met
(replay --min-throughput), 1 on any other error.
"""

from __future__ import annotations

import argparse
import signal
import sys
import threading

from . import corpus as corpus_mod
from . import oracle as oracle_mod
from . import replay as replay_mod
from .idmef import iter_corpus, write_corpus
from .managers import load_rules
from .overlay import start_node


def _cmd_gen(args) -> int:
    spec = corpus_mod.load_corpus_spec(args.spec)
    alerts = corpus_mod.generate(spec)
    count = write_corpus(args.out, alerts)
    print(f"wrote {count} alerts to {args.out}")
    return 0


def _cmd_replay(args) -> int:
    rate = None if args.rate == "max" else float(args.rate)
    rules = load_rules(args.rules) if args.rules else ()
    metrics = replay_mod.run_replay(
        args.corpus,
        args.deploy,
        rate=rate,
        csv_path=args.csv,
        rules=rules,
        effector_log=args.effector_log,
        launch=not args.no_launch,
    )
    print(replay_mod.render_table(metrics))
    if not metrics.valid:
        return 1
    if args.min_throughput and metrics.throughput < args.min_throughput:
        print(f"FAIL: throughput {metrics.throughput:.1f} msg/s "
              f"below floor {args.min_throughput:.1f}", file=sys.stderr)
        return 2
    return 0


def _cmd_oracle(args) -> int:
    with open(args.filters, "r", encoding="utf-8") as fh:
        filters = oracle_mod.parse_filters_file(fh.read())
    pairs = oracle_mod.expected_deliveries(iter_corpus(args.corpus), filters)
    with open(args.out, "w", encoding="utf-8") as fh:
        for (sub_id, message_id), n in sorted(pairs.items()):
            for _ in range(n):
                fh.write(f"{sub_id}\t{message_id}\n")
    print(f"wrote {sum(pairs.values())} expected deliveries to {args.out}")
    return 0


def _cmd_report(args) -> int:
    samples = replay_mod.load_samples_csv(args.infile)
    print(replay_mod.summarize_samples(samples))
    return 0


def _cmd_broker(args) -> int:
    deployment = replay_mod.load_deployment(args.config)
    node = start_node(deployment.topology, args.id)
    stop = threading.Event()

    def handle(_signum, _frame):
        stop.set()

    signal.signal(signal.SIGTERM, handle)
    signal.signal(signal.SIGINT, handle)
    print(f"broker {args.id} listening on {node.listen_host}:{node.listen_port}", flush=True)
    while not stop.wait(0.5):  # short timeout keeps signal delivery prompt
        pass
    node.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alertmesh")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="generate a synthetic alert corpus")
    gen.add_argument("--spec", required=True, help="corpus spec file")
    gen.add_argument("--out", required=True, help="output corpus file")
    gen.set_defaults(fn=_cmd_gen)

    rep = commands.add_parser("replay", help="replay a corpus through a deployment")
    rep.add_argument("--corpus", required=True)
    rep.add_argument("--deploy", required=True, help="deployment config file")
    rep.add_argument("--rate", default="max", help="messages per second, or 'max'")
    rep.add_argument("--csv", default=None, help="write CPU/memory samples to this CSV")
    rep.add_argument("--rules", default=None, help="scenario rules for the correlation manager")
    rep.add_argument("--effector-log", default=None, help="policy manager effector log path")
    rep.add_argument("--no-launch", action="store_true",
                     help="attach to already-running brokers instead of launching them")
    rep.add_argument("--min-throughput", type=float, default=0.0,
                     help="exit 2 if sustained throughput falls below this floor")
    rep.set_defaults(fn=_cmd_replay)

    orc = commands.add_parser("oracle", help="compute expected deliveries by brute force")
    orc.add_argument("--corpus", required=True)
    orc.add_argument("--filters", required=True, help="file of '<sub_id> <filter>' lines")
    orc.add_argument("--out", required=True)
    orc.set_defaults(fn=_cmd_oracle)

    rpt = commands.add_parser("report", help="summarize a replay CSV")
    rpt.add_argument("--in", dest="infile", required=True)
    rpt.set_defaults(fn=_cmd_report)

    brk = commands.add_parser("broker", help="run one broker of a deployment")
    brk.add_argument("--config", required=True, help="topology/deployment config file")
    brk.add_argument("--id", required=True, help="broker id to serve")
    brk.set_defaults(fn=_cmd_broker)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 1
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
