"""Re-run a stored trace from its embedded scenario and seed.

A trace carries everything needed to rebuild its run, so replay is just
"parse scenario, simulate with the recorded seed, re-judge, serialize" and
a byte comparison against the stored file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .monitors import check
from .scenario import ParseError, Scenario
from .trace import Trace, TraceError


@dataclass
class Divergence:
    where: str  # "record" or a header field name
    index: Optional[int]
    stored: object
    replayed: object

    def describe(self) -> str:
        if self.where == "record":
            return (
                f"first divergence at record {self.index}:\n"
                f"  stored:   {self.stored}\n  replayed: {self.replayed}"
            )
        return f"header field {self.where!r} differs: stored {self.stored!r}, replayed {self.replayed!r}"


@dataclass
class ReplayResult:
    stored: Trace
    replayed: Trace
    identical: bool
    divergence: Optional[Divergence]


def rerun(stored: Trace) -> Trace:
    try:
        scenario = Scenario.from_dict(stored.scenario)
    except ParseError as exc:
        raise TraceError(f"embedded scenario is invalid: {exc}") from exc
    trace = scenario.simulation(stored.seed).run()
    if stored.monitors:
        trace.monitors = check(trace, scenario.config, timing=scenario.timing).to_dict()
    return trace


def first_divergence(stored: Trace, replayed: Trace) -> Optional[Divergence]:
    for i, (a, b) in enumerate(zip(stored.records, replayed.records)):
        if a != b:
            return Divergence("record", i, a, b)
    if len(stored.records) != len(replayed.records):
        i = min(len(stored.records), len(replayed.records))
        get = lambda rs: rs[i] if i < len(rs) else "<end of trace>"
        return Divergence("record", i, get(stored.records), get(replayed.records))
    for name in ("seed", "scenario", "final", "monitors"):
        a, b = getattr(stored, name), getattr(replayed, name)
        if a != b:
            return Divergence(name, None, a, b)
    return None


def replay_text(text: str) -> ReplayResult:
    stored = Trace.loads(text)
    replayed = rerun(stored)
    identical = replayed.dumps() == text
    divergence = None
    if not identical:
        # A formatting-only difference still counts; report the header then.
        divergence = first_divergence(stored, replayed) or Divergence(
            "bytes", None, "stored file", "canonical serialization"
        )
    return ReplayResult(stored, replayed, identical, divergence)


def replay(path) -> ReplayResult:
    return replay_text(Path(path).read_text())
