"""Command-line entry points for replay, policy management, and benchmarks."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, policies
from .patch import (PatchClient, PatchOp, PatchServer, PatchStatus,
                    pack_map_delete, pack_map_put)
from .vm import BACKEND, available_backends
from .vm.ctx import build_context
from .vm.program import ContainerError, decode_containers, verify_program
from .vm.store import PolicyStore
from .vm.verifier import VerifierError


def _cmd_run(args) -> int:
    factory = harness.make_engine_factory(
        policy_dir=args.policies, bonds_path=args.bonds,
        strict_keysize=args.strict_keysize,
        repeat_threshold=args.repeat_threshold, backend=args.backend)
    traces = harness.load_traces(args.trace)
    report = harness.run_matrix(traces, factory)
    for result in report.results:
        flag = "ok " if result.passed else "FAIL"
        expected = result.expected.name if result.expected else "clean"
        got = (f"{result.alerts[0].source}:{result.alerts[0].ident}"
               f" -> {result.alerts[0].sink.name}" if result.alerts else "silent")
        print(f"{flag} {result.name:44} expect={expected:22} got={got}")
    summary = report.to_dict()["summary"]
    print(f"{summary['passed']}/{summary['traces']} traces matched expectations "
          f"in {summary['elapsed_s']:.3f}s")
    if args.report:
        Path(args.report).write_text(report.to_json())
        print(f"report written to {args.report}")
    return 0 if report.passed else 1


def _cmd_gen_corpus(args) -> int:
    written = harness.write_corpus(args.out)
    print(f"{len(written)} traces written to {args.out}")
    return 0


def _cmd_gen_policies(args) -> int:
    written = policies.write_policies(args.out)
    print(f"{len(written)} files written to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    report = harness.throughput_report(packets=args.packets, repeats=args.repeats)
    if args.json:
        print(json.dumps(report, indent=2))
        return 0
    print(f"replaying {report['packets']} packets per configuration "
          f"(default backend: {BACKEND})")
    for backend, cfg in report["configs"].items():
        one, ten = cfg["rules_1"], cfg["rules_10"]
        print(f"  {backend:7} 1 rule:  {one['us_per_packet']:9.3f} us/packet "
              f"({one['programs_run']} program runs)")
        print(f"  {backend:7} 10 rules:{ten['us_per_packet']:9.3f} us/packet "
              f"({ten['programs_run']} program runs)  ratio {cfg['ratio']:.3f}")
    return 0


def _cmd_verify_prog(args) -> int:
    failures = 0
    for file in args.files:
        blob = Path(file).read_bytes()
        try:
            programs = decode_containers(blob)
        except ContainerError as exc:
            print(f"FAIL {file}: {exc}")
            failures += 1
            continue
        for program in programs:
            try:
                vp = verify_program(program)
            except VerifierError as exc:
                print(f"FAIL {file} [{program.program_id}]: {exc}")
                failures += 1
            else:
                print(f"ok   {file} [{program.program_id}] "
                      f"{len(program.bytecode)} bytes, "
                      f"worst case {vp.worst_case_instructions} instructions")
    return 1 if failures else 0


def _cmd_eval(args) -> int:
    blob = Path(args.program).read_bytes()
    programs = decode_containers(blob)
    store = PolicyStore(backend=args.backend)
    store.install(programs)
    source = open(args.ctx, encoding="utf-8") if args.ctx != "-" else sys.stdin
    try:
        for line in source:
            line = line.strip()
            if not line:
                continue
            ctx_spec = json.loads(line)
            dc = {i: v for i, v in enumerate(ctx_spec.get("dc", []))}
            ctx = build_context(ctx_spec.get("state", 0), ctx_spec.get("event", 0),
                                bytes.fromhex(ctx_spec.get("pkt", "")), dc)
            outputs = []
            for program in programs:
                outcome = store.execute(store.get(program.program_id), ctx)
                outputs.append({
                    "id": program.program_id,
                    "verdict": outcome.verdict,
                    "r0": outcome.raw,
                    "fault": outcome.fault,
                })
            print(json.dumps(outputs if len(outputs) > 1 else outputs[0]))
    finally:
        if source is not sys.stdin:
            source.close()
    return 0


def _cmd_serve(args) -> int:
    store = PolicyStore()
    if args.policies:
        store.load_directory(args.policies)
    server = PatchServer(args.socket, store)
    print(f"serving {len(store.program_ids())} programs on {args.socket}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _cmd_patch(args) -> int:
    client = PatchClient(args.socket)
    if args.action == "install":
        blob = b"".join(Path(f).read_bytes() for f in args.args)
        status, body = client.request(PatchOp.INSTALL_PROGRAM, blob)
    elif args.action == "remove":
        status, body = client.remove(args.args[0])
    elif args.action == "list":
        status, body = client.request(PatchOp.LIST)
    elif args.action == "ping":
        status, body = client.request(PatchOp.PING, b"ping")
    elif args.action == "map-put":
        map_id, key_hex, value_hex = args.args
        status, body = client.request(
            PatchOp.MAP_PUT,
            pack_map_put(int(map_id), bytes.fromhex(key_hex), bytes.fromhex(value_hex)))
    elif args.action == "map-delete":
        map_id, key_hex = args.args
        status, body = client.request(
            PatchOp.MAP_DELETE, pack_map_delete(int(map_id), bytes.fromhex(key_hex)))
    else:
        print(f"unknown action {args.action}", file=sys.stderr)
        return 2
    print(f"{status.name} {body.decode(errors='replace')}")
    return 0 if status is PatchStatus.OK else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blegate",
        description="session-layer traffic inspection with verified policy programs")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="replay traces and score detections")
    run.add_argument("--trace", required=True, help="trace file or directory")
    run.add_argument("--policies", help="directory of .ifw1/.path files "
                                        "(default: built-in policy set)")
    run.add_argument("--bonds", help="bond table file")
    run.add_argument("--strict-keysize", action="store_true",
                     help="alert on any key-size change, not only reductions")
    run.add_argument("--repeat-threshold", type=int, default=2)
    run.add_argument("--backend", choices=available_backends())
    run.add_argument("--report", help="write a JSON report here")
    run.set_defaults(func=_cmd_run)

    gen_corpus = sub.add_parser("gen-corpus", help="write the reference trace corpus")
    gen_corpus.add_argument("--out", required=True)
    gen_corpus.set_defaults(func=_cmd_gen_corpus)

    gen_policies = sub.add_parser("gen-policies",
                                  help="write the default policy set as containers")
    gen_policies.add_argument("--out", required=True)
    gen_policies.set_defaults(func=_cmd_gen_policies)

    bench = sub.add_parser("bench", help="per-packet cost, 1 rule vs 10, per backend")
    bench.add_argument("--packets", type=int, default=1000)
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--json", action="store_true")
    bench.set_defaults(func=_cmd_bench)

    verify = sub.add_parser("verify-prog", help="verify policy containers")
    verify.add_argument("files", nargs="+")
    verify.set_defaults(func=_cmd_verify_prog)

    ev = sub.add_parser("eval", help="run a container over JSON context lines")
    ev.add_argument("--program", required=True, help="container file")
    ev.add_argument("--ctx", default="-",
                    help="JSON-lines file of contexts (default stdin)")
    ev.add_argument("--backend", choices=available_backends())
    ev.set_defaults(func=_cmd_eval)

    serve = sub.add_parser("serve", help="expose a policy store on a unix socket")
    serve.add_argument("--socket", required=True)
    serve.add_argument("--policies")
    serve.set_defaults(func=_cmd_serve)

    patch = sub.add_parser("patch", help="talk to a running policy store")
    patch.add_argument("--socket", required=True)
    patch.add_argument("action", choices=["install", "remove", "list", "ping",
                                          "map-put", "map-delete"])
    patch.add_argument("args", nargs="*")
    patch.set_defaults(func=_cmd_patch)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
