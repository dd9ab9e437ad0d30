"""Invariant monitors evaluated over a finished trace.

Every monitor reads only the trace records, so a stored or hand-mutated
trace can be checked exactly like a fresh one. A failing verdict carries
the index of the first record that violates the property.

Safety monitors apply to every run. The timing monitors (delivery bound,
view synchronization, view progress, commit latency) state deadlines that
hold only after GST and only when the timeout exceeds the sync and
delivery bounds, so they are opt-in per run.
"""

from __future__ import annotations

import bisect
import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

from .messages import Config
from .trace import Trace

RETRANSMITTED_TYPES = ("CommitVote", "TimeoutVote", "NewView")


@dataclass(frozen=True)
class Verdict:
    name: str
    ok: bool
    index: Optional[int] = None
    detail: str = ""
    skipped: bool = False

    def to_dict(self) -> dict:
        out = {"ok": self.ok}
        if self.skipped:
            out["skipped"] = True
        if not self.ok:
            out["index"] = self.index
            out["detail"] = self.detail
        return out


def _pass(name: str) -> Verdict:
    return Verdict(name, True)


def _fail(name: str, index: int, detail: str) -> Verdict:
    return Verdict(name, False, index, detail)


class View:
    """Read-side helpers over a trace for one configuration."""

    def __init__(self, trace: Trace, cfg: Config):
        self.trace = trace
        self.records = trace.records
        self.cfg = cfg
        final = trace.final
        self.faulty = set(final.get("faulty", []))
        self.correct = [i for i in range(cfg.n) if i not in self.faulty]
        self.gst = final.get("gst", 0)
        self.horizon = final.get("horizon")

    def within(self, deadline: int) -> bool:
        return self.horizon is None or deadline <= self.horizon

    def is_correct(self, node) -> bool:
        return node is not None and node not in self.faulty

    def correct_emissions(self) -> Iterator[tuple[int, dict, dict]]:
        for i, rec in enumerate(self.records):
            if self.is_correct(rec.get("node")) and rec.get("ev") != "adv_send":
                for msg in rec.get("emit", ()):
                    yield i, rec, msg

    def commits(self) -> Iterator[tuple[int, dict, list]]:
        for i, rec in enumerate(self.records):
            if self.is_correct(rec.get("node")):
                for entry in rec.get("commits", ()):
                    yield i, rec, entry

    def view_timeline(self) -> dict[int, tuple[list[int], list[int], list[int]]]:
        """Per correct node: (times, views, record indices) at each view change."""
        out = {r: ([0], [0], [-1]) for r in self.correct}
        for i, rec in enumerate(self.records):
            node = rec.get("node")
            view = rec.get("delta", {}).get("view")
            if view is not None and node in out and rec.get("ev") != "adv_send":
                times, views, idx = out[node]
                times.append(rec["t"])
                views.append(view)
                idx.append(i)
        return out


def _qcs(summary: Optional[dict]) -> Iterator[dict]:
    """All QC summaries nested in a message or QC summary."""
    if not summary:
        return
    for key in ("just", "hcqc"):
        qc = summary.get(key)
        if isinstance(qc, dict):
            yield qc
            yield from _qcs(qc)


# -- safety -----------------------------------------------------------------


def agreement(v: View) -> Verdict:
    name = "agreement"
    first: dict[int, tuple[str, int]] = {}
    for i, rec, (number, h, *_rest) in v.commits():
        seen = first.setdefault(number, (h, rec["node"]))
        if seen[0] != h:
            return _fail(
                name, i,
                f"replica {rec['node']} committed {h} at #{number}; "
                f"replica {seen[1]} committed {seen[0]}",
            )
    return _pass(name)


def validity(v: View) -> Verdict:
    name = "validity"
    proposed: set[tuple[int, str]] = set()
    for i, rec in enumerate(v.records):
        msgs = list(rec.get("emit", ()))
        if rec.get("ev") in ("recv", "adv_send") and "msg" in rec:
            msgs.append(rec["msg"])
        for msg in msgs:
            block = msg.get("block") if msg.get("type") == "Proposal" else None
            if block and block.get("payload"):
                proposed.add((block["n"], block["hash"]))
        if v.is_correct(rec.get("node")):
            for number, h, *_rest in rec.get("commits", ()):
                if (number, h) not in proposed:
                    return _fail(
                        name, i,
                        f"replica {rec['node']} committed #{number} {h} "
                        "that no valid proposal carried",
                    )
    return _pass(name)


def single_vote_per_view(v: View) -> Verdict:
    name = "single_vote_per_view"
    voted: dict[int, dict[int, dict]] = defaultdict(dict)
    for i, rec, msg in v.correct_emissions():
        if msg["type"] != "CommitVote":
            continue
        prior = voted[rec["node"]].get(msg["view"])
        if prior is not None:
            return _fail(
                name, i, f"replica {rec['node']} voted twice in view {msg['view']}"
            )
        voted[rec["node"]][msg["view"]] = msg
    return _pass(name)


def commit_qc_uniqueness(v: View) -> Verdict:
    name = "commit_qc_uniqueness"
    by_view: dict[int, tuple[int, str]] = {}

    def check(i: int, view: int, number: int, h: str) -> Optional[Verdict]:
        seen = by_view.setdefault(view, (number, h))
        if seen != (number, h):
            return _fail(
                name, i,
                f"commit QCs for view {view} disagree: #{seen[0]} {seen[1]} "
                f"and #{number} {h}",
            )
        return None

    for i, rec in enumerate(v.records):
        msgs = []
        if rec.get("ev") == "adv_send":
            if rec.get("valid"):
                msgs.append(rec["msg"])
        elif v.is_correct(rec.get("node")):
            msgs.extend(rec.get("emit", ()))
            for number, h, _payload, qc_view in rec.get("commits", ()):
                bad = check(i, qc_view, number, h)
                if bad:
                    return bad
        for msg in msgs:
            for qc in _qcs(msg):
                if qc.get("kind") == "commit":
                    bad = check(i, qc["view"], qc["n"], qc["hash"])
                    if bad:
                        return bad
    return _pass(name)


def no_leader_equivocation(v: View) -> Verdict:
    name = "no_leader_equivocation"
    sent: dict[tuple[int, int], str] = {}
    for i, rec, msg in v.correct_emissions():
        if msg["type"] != "Proposal":
            continue
        body = json.dumps({k: x for k, x in msg.items() if k != "id"}, sort_keys=True)
        key = (rec["node"], msg["view"])
        if sent.setdefault(key, body) != body:
            return _fail(
                name, i, f"replica {rec['node']} sent two proposals for view {msg['view']}"
            )
    return _pass(name)


def qc_support(v: View) -> Verdict:
    name = "qc_support"
    for i, rec, msg in v.correct_emissions():
        for qc in _qcs(msg):
            if qc.get("signers", 0) < v.cfg.quorum:
                return _fail(
                    name, i,
                    f"replica {rec['node']} relayed a {qc['kind']} QC for view "
                    f"{qc.get('view')} with {qc.get('signers')} signers",
                )
    return _pass(name)


def monotonic_state(v: View) -> Verdict:
    name = "monotonic_state"
    last: dict[tuple[int, str], int] = {}
    for i, rec in enumerate(v.records):
        node = rec.get("node")
        if not v.is_correct(node) or rec.get("ev") == "adv_send":
            continue
        for field in ("view", "hcqc", "htqc", "hv"):
            value = rec.get("delta", {}).get(field, "absent")
            if value == "absent":
                continue
            prior = last.get((node, field))
            if value is None and prior is not None or (
                value is not None and prior is not None and value < prior
            ):
                return _fail(
                    name, i, f"replica {node} {field} went from {prior} to {value}"
                )
            last[(node, field)] = value
    return _pass(name)


def dedup(v: View) -> Verdict:
    """A redelivered message never triggers a second effect."""
    name = "dedup"
    acted: set[tuple[int, int]] = set()
    for i, rec in enumerate(v.records):
        if rec.get("ev") != "recv" or not v.is_correct(rec.get("node")):
            continue
        if not ("emit" in rec or "delta" in rec or "commits" in rec):
            continue
        key = (rec["node"], rec["msg"]["id"])
        if key in acted:
            return _fail(
                name, i, f"replica {rec['node']} acted twice on message {key[1]}"
            )
        acted.add(key)
    return _pass(name)


# -- timing -----------------------------------------------------------------


def delivery_bound(v: View) -> Verdict:
    """Correct-to-correct messages sent after GST, and the latest of each
    retransmitted type sent before it, arrive within delta_rcv of
    max(send time, GST)."""
    name = "delivery_bound"
    bound = v.cfg.delta_rcv
    received: dict[tuple[int, int], int] = {}
    for rec in v.records:
        if rec.get("ev") == "recv":
            received.setdefault((rec["node"], rec["msg"]["id"]), rec["t"])
    latest_pre: dict[tuple[int, str], tuple[int, int]] = {}
    obligations = []
    for i, rec, msg in v.correct_emissions():
        if rec["t"] >= v.gst:
            obligations.append((i, rec["node"], msg["id"], rec["t"] + bound))
        elif msg["type"] in RETRANSMITTED_TYPES:
            latest_pre[(rec["node"], msg["type"])] = (i, msg["id"])
    for (node, _), (i, mid) in latest_pre.items():
        obligations.append((i, node, mid, v.gst + bound))
    obligations.sort()
    for i, frm, mid, deadline in obligations:
        if not v.within(deadline):
            continue
        for to in v.correct:
            got = received.get((to, mid))
            if got is None or got > deadline:
                return _fail(
                    name, i,
                    f"message {mid} from {frm} reached {to} "
                    f"{'never' if got is None else f'at {got}'}; deadline {deadline}",
                )
    return _pass(name)


def _first_at_least(timeline, view: int) -> Optional[tuple[int, int]]:
    times, views, idx = timeline
    k = bisect.bisect_left(views, view)
    if k == len(views):
        return None
    return times[k], idx[k]


def _max_view_changes(v: View, timelines) -> list[tuple[int, int, int]]:
    """(time, max correct view, record index) at GST and whenever it grows."""
    events = []
    for node, (times, views, idx) in timelines.items():
        events.extend(zip(times, views, idx))
    events.sort(key=lambda e: (e[0], e[2]))
    out = []
    vmax, trigger = 0, -1
    k = 0
    while k < len(events) and events[k][0] <= v.gst:
        if events[k][1] > vmax:
            vmax, trigger = events[k][1], events[k][2]
        k += 1
    out.append((v.gst, vmax, trigger))
    while k < len(events):
        t = events[k][0]
        grew = False
        while k < len(events) and events[k][0] == t:
            if events[k][1] > vmax:
                vmax, trigger, grew = events[k][1], events[k][2], True
            k += 1
        if grew:
            out.append((t, vmax, trigger))
    return out


def _all_reach(v: View, timelines, view: int, deadline: int):
    for node in v.correct:
        hit = _first_at_least(timelines[node], view)
        if hit is None or hit[0] > deadline:
            return node, hit
    return None


def view_sync(v: View) -> Verdict:
    name = "view_sync"
    timelines = v.view_timeline()
    for t, vmax, trigger in _max_view_changes(v, timelines):
        deadline = t + v.cfg.delta_rcv
        if not v.within(deadline):
            continue
        miss = _all_reach(v, timelines, vmax, deadline)
        if miss:
            return _fail(
                name, max(trigger, 0),
                f"view {vmax} reached at {t}; replica {miss[0]} not there by {deadline}",
            )
    return _pass(name)


def view_progress(v: View) -> Verdict:
    name = "view_progress"
    timelines = v.view_timeline()
    bound = v.cfg.delta_timeout + 2 * v.cfg.delta_rcv
    for t, vmax, trigger in _max_view_changes(v, timelines):
        deadline = t + bound
        if not v.within(deadline):
            continue
        miss = _all_reach(v, timelines, vmax + 1, deadline)
        if miss:
            return _fail(
                name, max(trigger, 0),
                f"max view {vmax} at {t}; replica {miss[0]} not past it by {deadline}",
            )
    return _pass(name)


def commit_latency(v: View) -> Verdict:
    """With a correct leader, a view that starts after GST commits its
    proposal everywhere within delta_sync + 2 delta_rcv."""
    name = "commit_latency"
    cfg = v.cfg
    bound = cfg.delta_sync + 2 * cfg.delta_rcv
    timelines = v.view_timeline()
    proposals: dict[int, tuple[int, str]] = {}
    for _, rec, msg in v.correct_emissions():
        if msg["type"] == "Proposal" and msg["view"] not in proposals:
            block = msg.get("block")
            h = block["hash"] if block else msg["implied"][1]
            proposals[msg["view"]] = (msg["implied"][0], h)
    committed: dict[tuple[int, int, str], int] = {}
    for _, rec, (number, h, *_rest) in v.commits():
        committed.setdefault((rec["node"], number, h), rec["t"])
    for t, vmax, trigger in _max_view_changes(v, timelines):
        if t < v.gst or vmax == 0 or cfg.leader(vmax) in v.faulty:
            continue
        deadline = t + bound
        if not v.within(deadline):
            continue
        target = proposals.get(vmax)
        if target is None:
            return _fail(name, trigger, f"correct leader of view {vmax} never proposed")
        for node in v.correct:
            at = committed.get((node, target[0], target[1]))
            if at is None or at > deadline:
                return _fail(
                    name, trigger,
                    f"view {vmax} started at {t}; replica {node} had not committed "
                    f"#{target[0]} by {deadline}",
                )
        miss = _all_reach(v, timelines, vmax + 1, deadline)
        if miss:
            return _fail(
                name, trigger, f"replica {miss[0]} still in view {vmax} at {deadline}"
            )
    return _pass(name)


SAFETY: dict[str, Callable[[View], Verdict]] = {
    "agreement": agreement,
    "validity": validity,
    "single_vote_per_view": single_vote_per_view,
    "commit_qc_uniqueness": commit_qc_uniqueness,
    "no_leader_equivocation": no_leader_equivocation,
    "qc_support": qc_support,
    "monotonic_state": monotonic_state,
    "dedup": dedup,
}

TIMING: dict[str, Callable[[View], Verdict]] = {
    "delivery_bound": delivery_bound,
    "view_sync": view_sync,
    "view_progress": view_progress,
    "commit_latency": commit_latency,
}

ALL = {**SAFETY, **TIMING}


@dataclass
class Report:
    verdicts: list[Verdict]

    @property
    def ok(self) -> bool:
        return all(v.ok for v in self.verdicts)

    def failures(self) -> list[Verdict]:
        return [v for v in self.verdicts if not v.ok]

    def to_dict(self) -> dict:
        return {v.name: v.to_dict() for v in self.verdicts}

    def __getitem__(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)


def check(trace: Trace, cfg: Config, timing: bool = False, only=None) -> Report:
    view = View(trace, cfg)
    verdicts = []
    for name, fn in ALL.items():
        if only is not None and name not in only:
            continue
        if name in TIMING and not timing:
            verdicts.append(Verdict(name, True, skipped=True))
            continue
        verdicts.append(fn(view))
    return Report(verdicts)
