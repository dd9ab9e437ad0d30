"""Deterministic discrete-event simulation of a ChonkyBFT committee.

Time is an integer. Every queued item carries a sequence number, so the
queue pops in (time, seq) order and a run is a pure function of its
inputs. Network behaviour follows partial synchrony:

* before ``gst`` the adversary (or scripted delay rules) picks any delay,
  or holds a message indefinitely;
* from ``gst`` on, correct-to-correct messages arrive within ``delta_rcv``;
* at ``gst`` each correct replica's latest commit vote, timeout vote and
  new-view message is resent to every correct replica that has not seen it;
* block sync delivers proposed blocks and committed (block, QC) pairs to
  every correct replica ``delta_sync`` after ``max(t, gst)``.
"""

from __future__ import annotations

import heapq
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

from .adversary import DROP
from .messages import (
    Block,
    Config,
    NewView,
    Proposal,
    SignedCommitVote,
    SignedTimeoutVote,
    Validator,
    hash_block,
)
from .replica import (
    Broadcast,
    MessageReceived,
    Replica,
    ResetTimer,
    Start,
    SyncBlock,
    SyncCommit,
    TimerFired,
)
from .trace import Trace, message_view, payload_text, short, summarize, type_name

RETRANSMITTED = (SignedCommitVote, SignedTimeoutVote, NewView)


@dataclass
class DelayRule:
    """Scripted delivery override. ``None`` fields match anything."""

    type: Optional[str] = None
    senders: Optional[list[int]] = None
    recipients: Optional[list[int]] = None
    views: Optional[list[int]] = None
    delay: int = 0
    drop: bool = False

    def matches(self, tname: str, view, frm: int, to: int) -> bool:
        return (
            (self.type is None or self.type == tname)
            and (self.senders is None or frm in self.senders)
            and (self.recipients is None or to in self.recipients)
            and (self.views is None or view in self.views)
        )


@dataclass
class DeliverySchedule:
    """Network timing. ``policy`` is one of worst, fixed, uniform."""

    gst: int = 0
    policy: str = "worst"
    delay: int = 1
    pre_gst_max_delay: int = 0
    pre_gst_drop: float = 0.0
    rules: list[DelayRule] = field(default_factory=list)
    retransmit_period: Optional[int] = None
    sync: str = "worst"

    def __post_init__(self):
        if self.policy not in ("worst", "fixed", "uniform"):
            raise ValueError(f"unknown delay policy {self.policy!r}")
        if self.sync not in ("worst", "uniform"):
            raise ValueError(f"unknown sync policy {self.sync!r}")


@dataclass
class StopCondition:
    max_time: Optional[int] = None
    max_steps: Optional[int] = None
    commits: Optional[int] = None
    views: Optional[int] = None


class Simulation:
    """One run. Also serves as the context object handed to adversaries."""

    def __init__(
        self,
        cfg: Config,
        schedule: Optional[DeliverySchedule] = None,
        adversary=None,
        faulty=(),
        seed: int = 0,
        stop: Optional[StopCondition] = None,
        record: bool = True,
        scenario: Optional[dict] = None,
    ):
        self.cfg = cfg
        self.schedule = schedule or DeliverySchedule()
        self.stop = stop or StopCondition()
        self.seed = seed
        self.record = record
        self.scenario = scenario or {}
        self.adversary = adversary
        controlled = set(faulty) | set(getattr(adversary, "controlled", ()))
        self.faulty = sorted(controlled)
        self.correct = [i for i in range(cfg.n) if i not in controlled]
        self._is_correct = [i not in controlled for i in range(cfg.n)]
        self.validator = Validator(cfg)
        self.replicas = {
            i: Replica(i, cfg, self.validator, payload_salt=seed) for i in self.correct
        }
        self.shadows: dict[int, Replica] = {}
        if adversary is not None and getattr(adversary, "uses_shadow", False):
            for i in self.faulty:
                self.shadows[i] = Replica(i, cfg, self.validator, payload_salt=seed)
        self.net_rng = random.Random(f"net/{seed}")
        self.rng = random.Random(f"adversary/{seed}")

        self.now = 0
        self._queue: list = []
        self._seq = 0
        self._timer_gen: dict[int, int] = defaultdict(int)
        self._messages: list = []  # id -> (message, sender, send time)
        self._msg_ids: dict[int, int] = {}
        self._summaries: dict[int, dict] = {}
        self._latest: dict[tuple[int, str], int] = {}
        self._pre_gst: dict[int, set[int]] = {}  # pre-GST id -> delivered set
        self._synced_commits: set[int] = set()
        self.records: list[dict] = []
        self.steps = 0
        self.stats = {
            "handlers": Counter(),
            "proposals": Counter(),
            "commit_votes": Counter(),
            "deliveries": 0,
        }
        self.verdict = None

    # -- queue --------------------------------------------------------------

    def _push(self, time: int, kind: str, *data) -> None:
        heapq.heappush(self._queue, (time, self._seq, kind, data))
        self._seq += 1

    def schedule_call(self, delay: int, fn: Callable[[], None]) -> None:
        self._push(self.now + delay, "call", fn)

    # -- adversary-facing context ---------------------------------------------

    @property
    def gst(self) -> int:
        return self.schedule.gst

    def key(self, rid: int):
        if rid not in self.faulty:
            raise PermissionError(f"replica {rid} is not under adversary control")
        return self.cfg.keys[rid]

    def shadow(self, rid: int) -> Optional[Replica]:
        return self.shadows.get(rid)

    def send(self, frm: int, msg, to=None, delay: Optional[int] = None) -> None:
        """Send on behalf of a faulty replica."""
        if frm not in self.faulty:
            raise PermissionError(f"replica {frm} is not under adversary control")
        recipients = list(range(self.cfg.n)) if to is None else sorted(set(to))
        mid = self._register(msg, frm)
        if self.record:
            self.records.append(
                {
                    "t": self.now,
                    "node": frm,
                    "ev": "adv_send",
                    "msg": self._summary(mid),
                    "to": recipients,
                    "valid": self.validator(msg),
                }
            )
        self._maybe_sync_block(msg)
        self._dispatch(mid, frm, recipients, fixed=delay)

    # -- message plumbing ---------------------------------------------------

    def _register(self, msg, frm: int) -> int:
        mid = self._msg_ids.get(id(msg))
        if mid is not None and self._messages[mid][0] is msg:
            return mid
        mid = len(self._messages)
        self._messages.append((msg, frm, self.now))
        self._msg_ids[id(msg)] = mid
        return mid

    def _summary(self, mid: int) -> dict:
        s = self._summaries.get(mid)
        if s is None:
            s = summarize(self._messages[mid][0], self.cfg)
            s["id"] = mid
            self._summaries[mid] = s
        return s

    def _post_gst_delay(self) -> int:
        sched = self.schedule
        if sched.policy == "worst":
            return self.cfg.delta_rcv
        if sched.policy == "fixed":
            return min(sched.delay, self.cfg.delta_rcv)
        return self.net_rng.randint(0, self.cfg.delta_rcv)

    def _delay(self, msg, tname: str, view, frm: int, to: int):
        if frm == to:
            return 0
        d = None
        for rule in self.schedule.rules:
            if rule.matches(tname, view, frm, to):
                d = DROP if rule.drop else rule.delay
                break
        pre = self.now < self.gst
        bound = self._is_correct[frm] and self._is_correct[to]
        if d is None and self.adversary is not None and (pre or not bound):
            d = self.adversary.delay(self, msg, frm, to)
        if d is None:
            if pre and self.schedule.pre_gst_drop and (
                self.net_rng.random() < self.schedule.pre_gst_drop
            ):
                d = DROP
            elif pre and self.schedule.pre_gst_max_delay:
                d = self.net_rng.randint(0, self.schedule.pre_gst_max_delay)
            else:
                d = self._post_gst_delay()
        if bound and not pre and (d == DROP or d > self.cfg.delta_rcv):
            d = self.cfg.delta_rcv
        return d

    def _dispatch(self, mid: int, frm: int, recipients, fixed: Optional[int] = None):
        msg = self._messages[mid][0]
        tname = type_name(msg)
        view = message_view(msg)
        groups: dict[int, list[int]] = {}
        for to in recipients:
            d = self._delay(msg, tname, view, frm, to) if fixed is None or to == frm else fixed
            if d == DROP:
                continue
            groups.setdefault(d, []).append(to)
        for d in sorted(groups):
            self._push(self.now + d, "deliver", mid, frm, tuple(groups[d]))

    def _broadcast(self, frm: int, msg) -> None:
        mid = self._register(msg, frm)
        if self._is_correct[frm] and isinstance(msg, RETRANSMITTED):
            self._latest[(frm, type_name(msg))] = mid
            if self.now < self.gst:
                self._pre_gst[mid] = set()
        if self.adversary is not None:
            self.adversary.observe(self, frm, msg)
        self._maybe_sync_block(msg)
        self._dispatch(mid, frm, range(self.cfg.n))
        return mid

    def _maybe_sync_block(self, msg) -> None:
        if isinstance(msg, Proposal) and msg.block is not None:
            at = max(self.now, self.gst) + self._sync_delay()
            self._push(at, "sync_block", msg.block)

    def _sync_delay(self) -> int:
        if self.schedule.sync == "worst":
            return self.cfg.delta_sync
        return self.net_rng.randint(0, self.cfg.delta_sync)

    # -- running ------------------------------------------------------------

    def run(self) -> Trace:
        for i in range(self.cfg.n):
            self._push(0, "start", i)
        if self.gst > 0:
            self._push(self.gst, "retransmit")
        if self.adversary is not None:
            self.adversary.setup(self)
        self.verdict = "quiescent"
        while self._queue:
            time, _, kind, data = self._queue[0]
            if self.stop.max_time is not None and time > self.stop.max_time:
                self.verdict = "max_time"
                break
            heapq.heappop(self._queue)
            self.now = time
            if not self._process(kind, data):
                break
        return self.trace()

    def _budget_left(self) -> bool:
        if self.stop.max_steps is not None and self.steps >= self.stop.max_steps:
            self.verdict = "max_steps"
            return False
        return True

    def _goal_reached(self) -> bool:
        stop = self.stop
        if stop.commits is not None and all(
            len(self.replicas[i].state.committed_blocks) >= stop.commits
            for i in self.correct
        ):
            self.verdict = "commits"
            return True
        if stop.views is not None and all(
            self.replicas[i].state.view >= stop.views for i in self.correct
        ):
            self.verdict = "views"
            return True
        return False

    def _process(self, kind: str, data) -> bool:
        if kind == "deliver":
            mid, frm, recipients = data
            msg = self._messages[mid][0]
            for to in recipients:
                if mid in self._pre_gst:
                    self._pre_gst[mid].add(to)
                self.stats["deliveries"] += 1
                if self._is_correct[to]:
                    if not self._budget_left():
                        return False
                    self._step(to, "recv", MessageReceived(msg, frm), mid=mid, frm=frm)
                    if self._goal_reached():
                        return False
                elif to in self.shadows:
                    self._shadow_step(to, MessageReceived(msg, frm))
                elif self.adversary is not None:
                    self.adversary.on_deliver(self, to, msg)
            return True
        if kind == "start":
            return self._node_event(data[0], "start", Start())
        if kind == "timer":
            rid, gen = data
            if self._timer_gen[rid] != gen:
                return True
            return self._node_event(rid, "timer", TimerFired())
        if kind == "sync_block":
            (block,) = data
            for rid in self.correct + sorted(self.shadows):
                if not self._node_event(rid, "sync_block", SyncBlock(block)):
                    return False
            return True
        if kind == "sync_commit":
            block, qc = data
            for rid in self.correct:
                if not self._node_event(rid, "sync_commit", SyncCommit(block, qc)):
                    return False
            return True
        if kind == "retransmit":
            self._retransmit()
            return True
        if kind == "call":
            data[0]()
            return True
        raise ValueError(f"unknown queue item {kind}")

    def _node_event(self, rid: int, ev: str, event) -> bool:
        if self._is_correct[rid]:
            if not self._budget_left():
                return False
            self._step(rid, ev, event)
            return not self._goal_reached()
        if rid in self.shadows:
            self._shadow_step(rid, event)
        return True

    def _snapshot(self, r: Replica) -> tuple:
        s = r.state
        return (
            s.view,
            s.phase.value,
            None if s.high_commit_qc is None else s.high_commit_qc.vote.view,
            None if s.high_timeout_qc is None else s.high_timeout_qc.votes[0][1].view,
            None if s.high_vote is None else s.high_vote.view,
        )

    def _step(self, rid: int, ev: str, event, mid=None, frm=None) -> None:
        r = self.replicas[rid]
        before = self._snapshot(r) if self.record else None
        chain_before = len(r.state.committed_blocks)
        out = r.handle(event)
        self.steps += 1
        self.stats["handlers"][ev] += 1
        emitted = []
        timer = None
        for eff in out:
            if isinstance(eff, Broadcast):
                emitted.append(self._broadcast(rid, eff.message))
                self._count(eff.message)
            elif isinstance(eff, ResetTimer):
                timer = eff.duration
                self._set_timer(rid, eff.duration)
        chain = r.state.committed_blocks
        for block, qc in chain[chain_before:]:
            if block.number not in self._synced_commits:
                self._synced_commits.add(block.number)
                at = max(self.now, self.gst) + self._sync_delay()
                self._push(at, "sync_commit", block, qc)
        if not self.record:
            return
        rec = {"t": self.now, "node": rid, "ev": ev, "note": r.note}
        if mid is not None:
            rec["msg"] = self._summary(mid)
            rec["from"] = frm
        if ev == "sync_block":
            rec["block"] = {"n": event.block.number, "hash": short(hash_block(event.block))}
        if ev == "sync_commit":
            rec["block"] = {"n": event.block.number, "hash": short(event.qc.vote.block_hash)}
        if emitted:
            rec["emit"] = [self._summary(m) for m in emitted]
        if timer is not None:
            rec["timer"] = timer
        after = self._snapshot(r)
        names = ("view", "phase", "hcqc", "htqc", "hv")
        delta = {k: a for k, b, a in zip(names, before, after) if a != b}
        if delta:
            rec["delta"] = delta
        if len(chain) > chain_before:
            rec["commits"] = [
                [b.number, short(hash_block(b)), payload_text(b), qc.vote.view]
                for b, qc in chain[chain_before:]
            ]
        self.records.append(rec)

    def _count(self, msg) -> None:
        if isinstance(msg, Proposal):
            self.stats["proposals"][message_view(msg)] += 1
        elif isinstance(msg, SignedCommitVote):
            self.stats["commit_votes"][msg.vote.view] += 1

    def _shadow_step(self, rid: int, event) -> None:
        out = self.shadows[rid].handle(event)
        for eff in out:
            if isinstance(eff, ResetTimer):
                self._set_timer(rid, eff.duration)
            elif isinstance(eff, Broadcast):
                for msg, to in self.adversary.filter(self, rid, eff.message):
                    self.send(rid, msg, to)

    def _set_timer(self, rid: int, duration: int) -> None:
        self._timer_gen[rid] += 1
        self._push(self.now + duration, "timer", rid, self._timer_gen[rid])

    def _retransmit(self) -> None:
        resent = []
        for (frm, _), mid in sorted(self._latest.items()):
            delivered = self._pre_gst.get(mid)
            if delivered is None:
                continue
            missing = [to for to in self.correct if to not in delivered and to != frm]
            if not missing:
                continue
            resent.append([mid, missing])
            groups: dict[int, list[int]] = {}
            for to in missing:
                groups.setdefault(self._post_gst_delay(), []).append(to)
            for d in sorted(groups):
                self._push(self.now + d, "deliver", mid, frm, tuple(groups[d]))
        if resent and self.record:
            self.records.append({"t": self.now, "node": None, "ev": "retransmit", "resent": resent})
        if resent:
            period = self.schedule.retransmit_period or self.cfg.delta_rcv
            self._push(self.now + period, "retransmit")

    # -- results ------------------------------------------------------------

    def chains(self) -> dict[int, list[Block]]:
        return {
            i: [b for b, _ in self.replicas[i].state.committed_blocks] for i in self.correct
        }

    def horizon(self) -> Optional[int]:
        """Last time up to which every queued event was processed."""
        if self.verdict == "max_time":
            return self.stop.max_time
        if self.verdict == "quiescent":
            return None
        return self.now - 1

    def trace(self) -> Trace:
        final = {
            "chains": {
                str(i): [payload_text(b) for b in blocks]
                for i, blocks in self.chains().items()
            },
            "hashes": {
                str(i): [short(hash_block(b)) for b in blocks]
                for i, blocks in self.chains().items()
            },
            "views": {str(i): self.replicas[i].state.view for i in self.correct},
            "end_time": self.now,
            "horizon": self.horizon(),
            "gst": self.gst,
            "faulty": self.faulty,
            "steps": self.steps,
            "verdict": self.verdict,
        }
        if self.adversary is not None and self.adversary.stats():
            final["adversary"] = self.adversary.stats()
        return Trace(
            scenario=self.scenario,
            seed=self.seed,
            records=self.records,
            final=final,
        )

