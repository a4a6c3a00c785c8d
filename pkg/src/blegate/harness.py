"""Trace replay: serialization, detection scoring, and throughput.

A trace file is line-oriented text so captures can be diffed and edited
by hand.  Each packet line reads

    <seq> <RX|TX> <hook> <peer-address> <payload-hex>  [# note]

and two comment directives carry metadata: ``# trace: <name>`` and
``# expect: clean`` or ``# expect: alert <SINK>``.  Replay always uses
a fresh engine per trace, so verdicts are order-independent across the
corpus.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from . import corpus
from .bonds import BondStore
from .engine import Direction, EngineConfig, InspectionEngine, PacketRecord
from .fsm import MaliciousPath, SessionState
from .policies import default_paths, default_rules, load_paths
from .vm.ctx import Hook
from .vm.store import PolicyStore

TRACE_SUFFIX = ".trace"


# -- text format -------------------------------------------------------------------

def format_trace(spec: corpus.TraceSpec) -> str:
    lines = [f"# trace: {spec.name}"]
    if spec.expect_sink is None:
        lines.append("# expect: clean")
    else:
        lines.append(f"# expect: alert {spec.expect_sink.name}")
    for rec in spec.records:
        base = (f"{rec.seq} {rec.direction.name} {rec.hook.name} "
                f"{rec.peer} {rec.payload.hex()}")
        if rec.note:
            base += f"  # {rec.note}"
        lines.append(base)
    return "\n".join(lines) + "\n"


def parse_trace(text: str, name: str = "") -> corpus.TraceSpec:
    expect: Optional[SessionState] = None
    saw_expect = False
    records: List[PacketRecord] = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if body.startswith("trace:"):
                name = body[len("trace:"):].strip() or name
            elif body.startswith("expect:"):
                expect_text = body[len("expect:"):].strip()
                saw_expect = True
                if expect_text == "clean":
                    expect = None
                elif expect_text.startswith("alert"):
                    expect = SessionState[expect_text.split()[1]]
                else:
                    raise ValueError(f"line {lineno}: unknown expectation {expect_text!r}")
            continue
        payload_line, _, note = line.partition("#")
        fields = payload_line.split()
        if len(fields) != 5:
            raise ValueError(f"line {lineno}: want 5 fields, got {len(fields)}")
        seq_text, direction_text, hook_text, peer, payload_hex = fields
        records.append(PacketRecord(
            int(seq_text), Direction[direction_text.upper()], Hook.parse(hook_text),
            peer, bytes.fromhex(payload_hex), note.strip()))
    if not saw_expect:
        raise ValueError(f"trace {name or '<unnamed>'} carries no '# expect:' line")
    return corpus.TraceSpec(name or "unnamed", expect, records)


def write_corpus(out_dir) -> List[Path]:
    """Materialize the reference corpus as trace files; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for spec in corpus.all_traces():
        path = out / f"{spec.name}{TRACE_SUFFIX}"
        path.write_text(format_trace(spec))
        written.append(path)
    return written


def load_traces(path) -> List[corpus.TraceSpec]:
    """Load one trace file, or every ``*.trace`` under a directory."""
    p = Path(path)
    if p.is_dir():
        return [parse_trace(f.read_text(), f.stem)
                for f in sorted(p.glob(f"*{TRACE_SUFFIX}"))]
    return [parse_trace(p.read_text(), p.stem)]


# -- engine construction -------------------------------------------------------------

def make_engine_factory(policy_dir=None, bonds_path=None,
                        strict_keysize: bool = False, repeat_threshold: int = 2,
                        backend: Optional[str] = None) -> Callable[[], InspectionEngine]:
    """Build identical, independent engines; one per replayed trace.

    Without a policy directory the packaged default rule set and
    malicious-path definitions are used.
    """
    def factory() -> InspectionEngine:
        store = PolicyStore(backend=backend)
        if policy_dir is None:
            store.install(default_rules())
            paths: Sequence[MaliciousPath] = default_paths()
        else:
            store.load_directory(policy_dir)
            paths = load_paths(policy_dir)
        bonds = BondStore.load(bonds_path) if bonds_path else None
        config = EngineConfig(repeat_threshold=repeat_threshold,
                              strict_keysize=strict_keysize)
        return InspectionEngine(store=store, paths=paths, bonds=bonds, config=config)
    return factory


# -- replay and scoring ---------------------------------------------------------------

@dataclass
class TraceResult:
    name: str
    expected: Optional[SessionState]
    alerts: list
    packets: int
    elapsed_s: float

    @property
    def passed(self) -> bool:
        if self.expected is None:
            return not self.alerts
        return bool(self.alerts) and self.alerts[0].sink is self.expected

    @property
    def verdict(self) -> str:
        if self.expected is None:
            return "clean" if self.passed else "false-alert"
        if not self.alerts:
            return "missed"
        return "detected" if self.passed else "wrong-sink"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "expected": self.expected.name if self.expected else "clean",
            "verdict": self.verdict,
            "passed": self.passed,
            "packets": self.packets,
            "elapsed_s": round(self.elapsed_s, 6),
            "alerts": [
                {"seq": a.seq, "source": a.source, "ident": a.ident,
                 "sink": a.sink.name, "detail": a.detail}
                for a in self.alerts
            ],
        }


def replay(spec: corpus.TraceSpec, engine: InspectionEngine) -> TraceResult:
    start = time.perf_counter()
    alerts = []
    for rec in spec.records:
        alerts.extend(engine.process(rec))
    elapsed = time.perf_counter() - start
    return TraceResult(spec.name, spec.expect_sink, alerts, len(spec.records), elapsed)


@dataclass
class DetectionReport:
    results: List[TraceResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> dict:
        return {
            "summary": {
                "traces": len(self.results),
                "passed": sum(r.passed for r in self.results),
                "failed": sum(not r.passed for r in self.results),
                "elapsed_s": round(sum(r.elapsed_s for r in self.results), 6),
            },
            "traces": [r.to_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def run_matrix(traces: Sequence[corpus.TraceSpec],
               engine_factory: Callable[[], InspectionEngine]) -> DetectionReport:
    report = DetectionReport()
    for spec in traces:
        report.results.append(replay(spec, engine_factory()))
    return report


def truncation_point(spec: corpus.TraceSpec,
                     engine_factory: Callable[[], InspectionEngine]) -> Optional[int]:
    """Index of the first record that raises an alert, or None if silent."""
    engine = engine_factory()
    for index, rec in enumerate(spec.records):
        if engine.process(rec):
            return index
    return None


def truncated_is_benign(spec: corpus.TraceSpec,
                        engine_factory: Callable[[], InspectionEngine]) -> bool:
    """Every strict prefix that stops before the alerting packet stays silent."""
    cut = truncation_point(spec, engine_factory)
    if cut is None:
        raise ValueError(f"trace {spec.name} never alerts; nothing to truncate")
    engine = engine_factory()
    truncated = corpus.TraceSpec(spec.name, None, spec.records[:cut])
    return not replay(truncated, engine).alerts


# -- throughput -----------------------------------------------------------------------

def _bench_rules(count: int) -> list:
    """Deterministic slice of the default set; always includes the rule
    that fires on every inbound data packet so the single-rule baseline
    still exercises the interpreter."""
    ordered = sorted(default_rules(), key=lambda p: p.program_id)
    if count == 1:
        return [p for p in ordered if p.program_id == "malformed-data"]
    return ordered[:count]


def bench_replay(records: Sequence[PacketRecord], rules: list,
                 backend: Optional[str], repeats: int = 3) -> dict:
    """Replay the stream ``repeats`` times on fresh engines; best-of wins.

    Returns per-packet microseconds plus how many VM program runs the
    stream triggered, so ratios can be sanity-checked.
    """
    best = None
    programs_run = instructions = 0
    for _ in range(repeats):
        store = PolicyStore(backend=backend)
        store.install(rules)
        engine = InspectionEngine(store=store, paths=())
        start = time.perf_counter()
        for rec in records:
            engine.process(rec)
        elapsed = time.perf_counter() - start
        if best is None or elapsed < best:
            best = elapsed
            programs_run = sum(d.programs_run for d in engine.decisions)
            instructions = sum(d.instructions for d in engine.decisions)
        if any(a for a in engine.alerts):
            raise RuntimeError(f"benchmark stream alerted: {engine.alerts[0]}")
    return {
        "us_per_packet": best / len(records) * 1e6,
        "programs_run": programs_run,
        "instructions": instructions,
    }


def throughput_report(packets: int = 1000, repeats: int = 3,
                      backends: Optional[Sequence[str]] = None) -> dict:
    """Per-packet cost with 1 installed rule versus 10, per backend."""
    from .vm import available_backends

    stream = corpus.bench_stream(packets)
    report = {"packets": len(stream), "configs": {}}
    for backend in backends or available_backends():
        one = bench_replay(stream, _bench_rules(1), backend, repeats)
        ten = bench_replay(stream, _bench_rules(10), backend, repeats)
        report["configs"][backend] = {
            "rules_1": one,
            "rules_10": ten,
            "ratio": ten["us_per_packet"] / one["us_per_packet"],
        }
    return report
