"""Acceptance gate: one test, one verdict line, per shipping criterion.

Each criterion runs end to end against the public surface (traces on
disk, the management socket, both execution backends) rather than
against internals, so a green run here means the package does what the
README promises.
"""

import dataclasses
import random
import statistics
import threading
import time

import conftest

from blegate import corpus
from blegate.corpus import all_traces
from blegate.engine import Direction, InspectionEngine, PacketRecord
from blegate.fsm import SessionState
from blegate.harness import (
    make_engine_factory,
    replay,
    run_matrix,
    throughput_report,
    truncated_is_benign,
)
from blegate.patch import PatchClient, PatchServer, PatchStatus
from blegate.policies import default_paths, default_rules
from blegate.vm import (
    Hook,
    PolicyStore,
    available_backends,
    run_with_backend,
)
from blegate.vm.ctx import build_context
from blegate.vm.maps import MapSet
from blegate.vm.program import encode_container
from blegate.vm.runtime import RuntimeFault, VmHelpers
from blegate.vm.store import SCRATCH_MAP_ID
from blegate.vm.verifier import VerifierError, verify_bytecode

_FUZZ_ROUNDS = 100_000


def _verdict(tag: str, ok: bool, detail: str) -> None:
    line = f"[{tag}] {'PASS' if ok else 'FAIL'}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- 1: detection matrix ---------------------------------------------------------------


def test_c1_detection_matrix():
    """Every attack trace lands in its expected sink; benign stays silent."""
    start = time.perf_counter()
    report = run_matrix(all_traces(), make_engine_factory())
    elapsed = time.perf_counter() - start
    summary = report.to_dict()["summary"]
    wrong = [r.name for r in report.results if not r.passed]
    _verdict(
        "C1", report.passed and elapsed < 10.0,
        f"{summary['passed']}/{summary['traces']} traces correct "
        f"in {elapsed:.2f}s (limit 10s)"
        + (f"; wrong: {wrong}" if wrong else ""))


# -- 2: truncated attacks are benign -----------------------------------------------------


def test_c2_truncated_attacks_stay_silent():
    """Cutting any attack right before its alerting packet yields no alert."""
    factory = make_engine_factory()
    attacks = [s for s in all_traces() if not s.is_benign]
    noisy = [s.name for s in attacks if not truncated_is_benign(s, factory)]
    _verdict(
        "C2", not noisy,
        f"{len(attacks) - len(noisy)}/{len(attacks)} attack prefixes silent"
        + (f"; premature alerts: {noisy}" if noisy else ""))


# -- 3: entropy downgrade end to end ----------------------------------------------------


def test_c3_entropy_downgrade_end_to_end():
    """Bond at 16 bytes, re-pair at 7: alert. Fresh peer at 7: silence."""
    factory = make_engine_factory()
    spec = next(s for s in all_traces() if s.name == "attack-knob-entropy-downgrade")
    attacked = replay(spec, factory())
    downgrade_ok = (attacked.alerts
                    and attacked.alerts[0].sink is SessionState.PAIRING_EXPLOITATION)

    # the session layer alone must carry the detection when no rules exist
    bare = InspectionEngine(PolicyStore(), paths=default_paths())
    path_only = replay(spec, bare)
    path_ok = (path_only.alerts and path_only.alerts[0].source == "path"
               and path_only.alerts[0].sink is SessionState.PAIRING_EXPLOITATION)

    fresh = replay(next(s for s in all_traces()
                        if s.name == "benign-first-pairing-weak-keysize"), factory())
    fresh_ok = not fresh.alerts

    _verdict(
        "C3", bool(downgrade_ok and path_ok and fresh_ok),
        "bonded key-size downgrade sinks to PAIRING_EXPLOITATION "
        f"(rule layer: {bool(downgrade_ok)}, session layer alone: {bool(path_ok)}); "
        f"fresh peer at entropy 7 clean: {fresh_ok}")


# -- 4: fuzz robustness ------------------------------------------------------------------


def _fuzz_program(rng: random.Random, rule_codes) -> bytes:
    roll = rng.random()
    if roll < 0.50:
        return rng.randbytes(8 * rng.randint(1, 12))
    base = bytearray(rng.choice(rule_codes))
    if roll < 0.80:
        for _ in range(rng.randint(1, 4)):
            base[rng.randrange(len(base))] ^= 1 << rng.randrange(8)
        return bytes(base)
    cut = 8 * rng.randint(0, len(base) // 8)
    return bytes(base[:cut]) + rng.randbytes(8 * rng.randint(0, 3))


def _fresh_helpers() -> VmHelpers:
    maps = MapSet()
    maps.create("scratch", SCRATCH_MAP_ID, max_entries=64)
    return VmHelpers(maps)


def test_c4_fuzz_programs_and_payloads():
    """Random bytecode and random packets: reject or verdict, never crash."""
    rng = random.Random(0xB1E55ED)
    rule_codes = [p.bytecode for p in default_rules()]
    ctx = build_context(int(SessionState.KEY_SHARING), 7, b"\x00" * 24, {})
    backends = available_backends()
    verified = 0
    for _ in range(_FUZZ_ROUNDS):
        code = _fuzz_program(rng, rule_codes)
        try:
            verify_bytecode(code)
        except VerifierError:
            continue
        verified += 1
        outcomes = []
        for backend in backends:
            try:
                raw, executed = run_with_backend(backend, code, ctx,
                                                 _fresh_helpers(), 65536)
                outcomes.append(("ok", raw, executed))
            except RuntimeFault as exc:
                outcomes.append(("fault", exc.reason))
        assert all(o == outcomes[0] for o in outcomes), (code.hex(), outcomes)

    engine = make_engine_factory()()
    corpus_payloads = [bytes(r.payload) for s in all_traces() for r in s.records]
    hooks = list(Hook)
    peers = ["f00dcafe0001", "f00dcafe0002", "aabbccddee00"]
    for seq in range(_FUZZ_ROUNDS):
        roll = rng.random()
        if roll < 0.45:
            payload = rng.randbytes(rng.randint(0, 48))
        elif roll < 0.90:
            payload = bytearray(rng.choice(corpus_payloads))
            if payload:
                payload[rng.randrange(len(payload))] ^= 1 << rng.randrange(8)
            payload = bytes(payload)
        else:
            payload = rng.choice(corpus_payloads)
        engine.process(PacketRecord(
            seq, rng.choice((Direction.RX, Direction.TX)), rng.choice(hooks),
            rng.choice(peers), payload))
    mediated = len(engine.decisions)

    _verdict(
        "C4", verified > 0 and mediated == _FUZZ_ROUNDS,
        f"{_FUZZ_ROUNDS} random programs ({verified} verified, backends agree) "
        f"and {_FUZZ_ROUNDS} random payloads ({mediated} mediated) without a crash")


# -- 5: live policy flip -----------------------------------------------------------------


def _replay_as(engine: InspectionEngine, records, peer: str):
    alerts = []
    for rec in records:
        alerts.extend(engine.process(dataclasses.replace(rec, peer=peer)))
    return alerts


def test_c5_hot_patch_flips_detection(tmp_path):
    """Removing and reinstalling a rule over the socket flips detection
    with no restart; a corrupted install leaves the store digest intact."""
    store = PolicyStore()
    store.install(default_rules())
    engine = InspectionEngine(store, paths=())   # one engine, never rebuilt
    records = next(s for s in all_traces()
                   if s.name == "attack-connection-interval-zero").records

    server = PatchServer(str(tmp_path / "mgmt.sock"), store)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        client = PatchClient(str(tmp_path / "mgmt.sock"))
        before = _replay_as(engine, records, "f00dcafe0001")
        assert client.remove("interval-zero")[0] is PatchStatus.OK
        without = _replay_as(engine, records, "f00dcafe0002")
        rule = next(p for p in default_rules() if p.program_id == "interval-zero")
        assert client.install(encode_container(rule))[0] is PatchStatus.OK
        after = _replay_as(engine, records, "f00dcafe0003")

        digest_before = store.digest()
        corrupt = bytearray(encode_container(rule))
        corrupt[-1] ^= 0xFF
        status, _ = client.install(bytes(corrupt))
        digest_after = store.digest()
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)

    flipped = bool(before) and not without and bool(after)
    atomic = status is PatchStatus.REJECTED and digest_before == digest_after
    _verdict(
        "C5", flipped and atomic,
        f"detection with/without/with rule: {len(before)}/{len(without)}/"
        f"{len(after)} alerts; corrupt install rejected with digest unchanged: {atomic}")


# -- 6: mediation stays cheap as rules grow ----------------------------------------------


def test_c6_ten_rules_within_twice_one_rule():
    """10 installed rules cost at most 2x one rule per packet over 1000 packets."""
    report = throughput_report(packets=1000, repeats=3)
    parts = []
    ok = True
    for backend, cfg in sorted(report["configs"].items()):
        one = cfg["rules_1"]["us_per_packet"]
        ten = cfg["rules_10"]["us_per_packet"]
        ok = ok and cfg["ratio"] <= 2.0
        parts.append(f"{backend} {one:.2f}/{ten:.2f} us/pkt (x{cfg['ratio']:.2f})")
    _verdict(
        "C6", ok and {"native", "pure"} <= set(report["configs"]),
        "1 rule vs 10 rules: " + ", ".join(parts)
        + "; limit x2.00; on-device baseline 1.094/1.219 us")


# -- 7: policies stay small --------------------------------------------------------------


def test_c7_policy_containers_stay_small():
    """Every shipped rule fits the 512-byte bytecode cap."""
    rules = default_rules()
    code_sizes = [len(p.bytecode) for p in rules]
    container_sizes = [len(encode_container(p)) for p in rules]
    mean = statistics.mean(container_sizes)
    _verdict(
        "C7", max(code_sizes) <= 512,
        f"{len(rules)} rules, bytecode max {max(code_sizes)}B (cap 512B), "
        f"mean container {mean:.1f}B vs on-device mean 137.2B")
