"""Command-line entry point: ``trapmat {serve,params,matmul,matvec-stream,bench}``.

Exit codes: 0 ok, 2 parameter error, 3 dishonest-server abort, 4 transport error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from fractions import Fraction


from . import costs
from .bench import bench
from .client import DelegationClient
from .errors import (
    ConfigError,
    DishonestServerError,
    FallbackError,
    ProtocolError,
    ShapeError,
    TransportError,
)
from .lpn import SecurityTable, build_schedule
from .protocol import DelegationServer, ServerSession, check_lambda_prime
from .ring import OpCounter
from .rng import SeededRng
from .transport import encode_dense, loopback_pair, tcp_connect, tcp_serve
from .trapdoor import TargetedGenerator

log = logging.getLogger("trapmat")

EXIT_OK, EXIT_PARAM, EXIT_DISHONEST, EXIT_TRANSPORT = 0, 2, 3, 4


def _addr(text):
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host, int(port)


def _sizes(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None


def _schedule_args(p, lam_default=128):
    p.add_argument("--delta", type=Fraction, default=Fraction(1, 4))
    p.add_argument("--epsilon", type=Fraction, default=Fraction(1, 2))
    p.add_argument("--lambda", dest="lam", type=int, default=lam_default,
                   help="security parameter; 40 is desk mode for small n")
    p.add_argument("--table", help="security table file (else $TRAPMAT_SECURITY_TABLE or bundled)")


def _table(args):
    return SecurityTable.load(args.table) if args.table else SecurityTable.default()


def _schedule(args, n):
    return build_schedule(n, args.delta, args.epsilon, args.lam, table=_table(args))


def _print_schedule(s, out):
    print(f"n={s.n} d={s.d} nu={s.nu} lambda={s.lam} lambda'={s.lambda_prime} "
          f"init-check lambda'={check_lambda_prime(s)} delta={s.delta} epsilon={s.epsilon}", file=out)
    for i in range(1, s.d + 1):
        print(f"  layer {i}: n_{i}={s.dims[i]}  mu_{i}={s.mus[i - 1]}", file=out)


# -- commands ---------------------------------------------------------------------

def cmd_params(args, out):
    s = _schedule(args, args.n)
    _print_schedule(s, out)
    pred = costs.predict(args.m or args.n, args.l, s)
    for name, value in pred.rows():
        print(f"{name:34s} {value}", file=out)
    return EXIT_OK


def cmd_serve(args, out):
    stats = {}

    def on_message(msg, reply, tap):
        entry = stats.setdefault(msg.session, {"t0": time.perf_counter(), "msgs": 0})
        entry["msgs"] += 1
        log.info("session %s %s -> %s  up=%d down=%d elapsed=%.3fs",
                 msg.session.hex()[:8], msg.kind.name, reply.kind.name if reply else "-",
                 tap.bytes_down, tap.bytes_up, time.perf_counter() - entry["t0"])

    # each connection gets its own dispatcher, so sessions never share state
    server = tcp_serve(args.listen, DelegationServer, on_message=on_message)
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", file=out, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _connect(args):
    """Endpoint plus the in-process server when ``--connect loopback``."""
    if args.connect == "loopback":
        server_counter = OpCounter()
        server = DelegationServer(lambda sid: ServerSession(sid, counter=server_counter))
        ep, _ = loopback_pair(server)
        return ep, server_counter
    return tcp_connect(_addr(args.connect), timeout=args.timeout), None


def _stats_line(ep, client_counter, server_counter, timings, extra=""):
    server_muls = server_counter.ring_muls if server_counter is not None else "n/a"
    return (f"rounds={ep.tap.rounds} bytes={ep.tap.total} client_muls={client_counter.ring_muls} "
            f"server_muls={server_muls} " + " ".join(f"{k}_s={v:.4f}" for k, v in timings.items())
            + extra)


def cmd_matmul(args, out):
    rng = SeededRng(args.seed)
    m = args.m or args.n
    l = args.l or args.n
    data = rng.fork()
    A = data.words(m * args.n).reshape(m, args.n)
    B = data.words(args.n * l).reshape(args.n, l)
    schedule = _schedule(args, args.n)
    ep, server_counter = _connect(args)
    counter = OpCounter()
    client = DelegationClient(ep, schedule, rng.fork(), counter, verify_output=args.verify)
    try:
        t0 = time.perf_counter()
        C = client.multiply_once(A, B)
        wall = time.perf_counter() - t0
    finally:
        ep.close()
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(encode_dense(C))
    print(_stats_line(ep, counter, server_counter, {"wall": wall}), file=out)
    return EXIT_OK


def cmd_matvec_stream(args, out):
    rng = SeededRng(args.seed)
    n, m = args.n, args.m or args.n
    data = rng.fork()
    A = data.words(m * n).reshape(m, n)
    schedule = _schedule(args, n)
    ep, server_counter = _connect(args)
    counter = OpCounter()
    client = DelegationClient(ep, schedule, rng.fork(), counter, verify_output=args.verify)
    sink = open(args.out, "wb") if args.out else None
    try:
        t0 = time.perf_counter()
        client.initialize(A)
        init_s = time.perf_counter() - t0
        init_muls = counter.ring_muls
        gen = None
        t0 = time.perf_counter()
        for _ in range(args.count):
            if gen is None or gen.remaining == 0:
                gen = TargetedGenerator(client, args.batch, 1)
            v = data.words(n).reshape(n, 1)
            y = client.multiply(v, masks=gen.pull())
            if sink is not None:
                sink.write(encode_dense(y))
        online_s = time.perf_counter() - t0
    finally:
        ep.close()
        if sink is not None:
            sink.close()
    online_muls = counter.ring_muls - init_muls
    k = max(args.count, 1)
    extra = (f" count={args.count} init_muls={init_muls} amortized_init_muls={init_muls / k:.1f} "
             f"online_muls_per_vector={online_muls / k:.1f} naive_muls_per_vector={m * n}")
    print(_stats_line(ep, counter, server_counter, {"init": init_s, "online": online_s}, extra), file=out)
    return EXIT_OK


def cmd_bench(args, out):
    sizes = args.sizes
    if sizes is None:
        sizes = [2 ** k + (0 if args.pow2 else 1) for k in (9, 10, 11)]
    elif args.pow2:
        sizes = [1 << (s.bit_length() - 1) for s in sizes]
    audit = None
    if args.audit:
        audit = (Fraction(args.audit[0]), Fraction(args.audit[1]))
    bench(sizes, trials=args.trials, delta=args.delta, epsilon=args.epsilon, lam=args.lam,
          table=_table(args), workload=args.workload, steps=args.steps, seed=args.seed,
          grid_search=args.grid_search, audit=audit, csv_path=args.csv,
          out=out if args.csv is None else None)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="trapmat", description="Confidential delegated matrix multiplication")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run a delegation server")
    s.add_argument("--listen", type=_addr, default=("127.0.0.1", 7433))
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("params", help="print the schedule and predicted costs")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--m", type=int)
    s.add_argument("--l", type=int, default=1)
    _schedule_args(s)
    s.set_defaults(func=cmd_params)

    for name, func in (("matmul", cmd_matmul), ("matvec-stream", cmd_matvec_stream)):
        s = sub.add_parser(name)
        s.add_argument("--connect", default="loopback", help="host:port, or 'loopback' for in-process")
        s.add_argument("--n", type=int, required=True)
        s.add_argument("--m", type=int)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", help="write results in dense wire format")
        s.add_argument("--verify", action="store_true", help="Freivalds-check every product")
        s.add_argument("--timeout", type=float, default=600.0)
        _schedule_args(s)
        s.set_defaults(func=func)
        if name == "matmul":
            s.add_argument("--l", type=int)
        else:
            s.add_argument("--count", type=int, default=16)
            s.add_argument("--batch", type=int, default=64, help="targeted-generator batch size t")

    s = sub.add_parser("bench", help="CSV timing table")
    s.add_argument("--sizes", type=_sizes)
    s.add_argument("--pow2", action="store_true", help="round sizes to powers of two")
    s.add_argument("--trials", type=int, default=5)
    s.add_argument("--csv")
    s.add_argument("--workload", choices=["matvec", "matmul"], default="matvec")
    s.add_argument("--steps", type=int, default=8, help="online steps timed per matvec trial")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--audit", nargs=2, metavar=("ALPHA", "C"))
    s.add_argument("--grid-search", action="store_true")
    _schedule_args(s, lam_default=40)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None, out=None):
    out = out if out is not None else sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "serve" else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args, out)
    except FallbackError as exc:
        print(f"fallback: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except (ConfigError, ShapeError, ValueError, OSError) as exc:
        if isinstance(exc, TransportError):
            print(f"transport error: {exc}", file=sys.stderr)
            return EXIT_TRANSPORT
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except DishonestServerError as exc:
        print(f"dishonest server, session aborted: {exc}", file=sys.stderr)
        return EXIT_DISHONEST
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_DISHONEST


if __name__ == "__main__":
    sys.exit(main())
