"""Byzantine behaviours for the simulator.

A behaviour controls a set of replicas. The simulator calls it at a few
points and passes itself as ``ctx``:

* ``setup(ctx)`` once before the first event;
* ``observe(ctx, frm, msg)`` for every message a correct replica (or a
  shadow) broadcasts, since the adversary controls the channels;
* ``filter(ctx, rid, msg)`` for every broadcast of a controlled replica's
  shadow, returning ``(message, recipients)`` pairs to actually send;
* ``delay(ctx, msg, frm, to)`` before GST, or when either end is faulty,
  returning a delay, ``DROP`` or ``None`` for the default;
* ``on_deliver(ctx, to, msg)`` for messages reaching a controlled replica
  that has no shadow.

A shadow is an honest replica run on the faulty node's behalf so that the
behaviour only has to describe how it deviates. Behaviours sign only with
``ctx.key(rid)``, which refuses keys of correct replicas.
"""

from __future__ import annotations

import random
from dataclasses import replace
from typing import Optional

from .messages import (
    Block,
    CommitQC,
    CommitVote,
    Config,
    NewView,
    Proposal,
    SignedCommitVote,
    SignedTimeoutVote,
    TimeoutQC,
    TimeoutVote,
    hash_block,
    make_timeout_qc,
    sign_commit_vote,
    sign_new_view,
    sign_proposal,
    sign_timeout_vote,
    validate_timeout_qc,
)
from .qc import view_of

DROP = "drop"


class AdversaryError(ValueError):
    pass


class Behavior:
    name = "honest"
    uses_shadow = False

    def __init__(self, controlled=()):
        self.controlled = tuple(sorted(set(controlled)))

    def params(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"name": self.name, "controlled": list(self.controlled), **self.params()}

    def setup(self, ctx) -> None:
        pass

    def observe(self, ctx, frm: int, msg) -> None:
        pass

    def filter(self, ctx, rid: int, msg):
        return [(msg, None)]

    def delay(self, ctx, msg, frm: int, to: int):
        return None

    def on_deliver(self, ctx, to: int, msg) -> None:
        pass

    def stats(self) -> dict:
        return {}


class Silent(Behavior):
    """Controlled replicas never send and ignore everything."""

    name = "silent"


class EquivocatingProposer(Behavior):
    """Leader that splits the correct replicas between two proposals.

    ``split`` lists the replicas that get the shadow's proposal; every other
    replica gets a conflicting block with the same number and
    justification. The faulty replica votes for both, claims the second in
    its timeout vote, and once it has seen ``tqc_size`` timeout votes for
    the view it assembles a timeout QC and sends it in a NewView.
    """

    name = "equivocating_proposer"
    uses_shadow = True

    def __init__(
        self,
        controlled=(),
        view: Optional[int] = None,
        split: Optional[list[int]] = None,
        tqc_size: Optional[int] = None,
        double_vote: bool = True,
    ):
        super().__init__(controlled)
        self.view = view
        self.split = None if split is None else sorted(split)
        self.tqc_size = tqc_size
        self.double_vote = double_vote
        self._second: dict[int, CommitVote] = {}  # view -> vote for the other block
        self._sides: dict[int, tuple[list[int], list[int]]] = {}
        self._timeouts: dict[int, dict[bytes, SignedTimeoutVote]] = {}
        self._assembled: set[int] = set()
        self.equivocations = 0

    def params(self) -> dict:
        return {
            "view": self.view,
            "split": self.split,
            "tqc_size": self.tqc_size,
            "double_vote": self.double_vote,
        }

    def _targets(self, view: int) -> bool:
        return self.view is None or self.view == view

    def _sides_for(self, ctx, view: int, rid: int):
        if view not in self._sides:
            if self.split is not None:
                first = [i for i in self.split if i != rid]
            else:
                first = [i for i in ctx.correct if ctx.rng.random() < 0.5]
            second = [i for i in range(ctx.cfg.n) if i not in first and i != rid]
            self._sides[view] = (first, second)
        return self._sides[view]

    def filter(self, ctx, rid: int, msg):
        if isinstance(msg, Proposal) and msg.block is not None:
            view = view_of(msg.justification) + 1
            if not self._targets(view):
                return [(msg, None)]
            first, second = self._sides_for(ctx, view, rid)
            other = Block(msg.block.number, msg.block.payload + b"'")
            rival = sign_proposal(ctx.key(rid), other, msg.justification)
            self._second[view] = CommitVote(view, other.number, hash_block(other))
            self.equivocations += 1
            return [(msg, first + [rid]), (rival, second)]
        if isinstance(msg, SignedCommitVote) and msg.vote.view in self._second:
            first, second = self._sides[msg.vote.view]
            out = [(msg, first + [rid])]
            if self.double_vote:
                extra = sign_commit_vote(ctx.key(rid), self._second[msg.vote.view])
                out.append((extra, second))
            return out
        if isinstance(msg, SignedTimeoutVote) and msg.vote.view in self._second:
            lie = replace(msg.vote, high_vote=self._second[msg.vote.view])
            signed = sign_timeout_vote(ctx.key(rid), lie, msg.high_commit_qc)
            self._collect(ctx, signed)
            return [(signed, None)]
        return [(msg, None)]

    def observe(self, ctx, frm: int, msg) -> None:
        if isinstance(msg, SignedTimeoutVote) and msg.vote.view in self._second:
            self._collect(ctx, msg)

    def _collect(self, ctx, st: SignedTimeoutVote) -> None:
        view = st.vote.view
        pool = self._timeouts.setdefault(view, {})
        pool.setdefault(st.sig.signer, st)
        want = self.tqc_size or ctx.cfg.n
        if len(pool) >= max(want, ctx.cfg.quorum) and view not in self._assembled:
            self._assembled.add(view)
            rid = self.controlled[0]
            tqc = make_timeout_qc(pool.values())
            ctx.send(rid, sign_new_view(ctx.key(rid), tqc))


class QCForger(Behavior):
    """Builds valid but adversarial timeout QCs from votes it has seen.

    For each view in which it has collected enough timeout votes it picks a
    random quorum-sized subset, adds its own vote claiming a stale or
    arbitrary high vote, and broadcasts a NewView carrying the result to a
    random subset of replicas. Attempts that fail validation (a stale
    attached commit QC, a tampered signature) are counted, not sent.
    """

    name = "qc_forger"
    uses_shadow = True

    def __init__(self, controlled=(), attempts: int = 2, tamper: float = 0.3):
        super().__init__(controlled)
        self.attempts = attempts
        self.tamper = tamper
        self._timeouts: dict[int, dict[bytes, SignedTimeoutVote]] = {}
        self._commit_votes: list[CommitVote] = []
        self._commit_qcs: list[CommitQC] = []
        self._done: dict[int, int] = {}
        self.sent = 0
        self.suppressed = 0

    def params(self) -> dict:
        return {"attempts": self.attempts, "tamper": self.tamper}

    def stats(self) -> dict:
        return {"sent": self.sent, "suppressed": self.suppressed}

    def observe(self, ctx, frm: int, msg) -> None:
        if isinstance(msg, SignedCommitVote):
            if msg.vote not in self._commit_votes:
                self._commit_votes.append(msg.vote)
        elif isinstance(msg, SignedTimeoutVote):
            if msg.high_commit_qc is not None:
                self._remember_qc(msg.high_commit_qc)
            self._timeouts.setdefault(msg.vote.view, {}).setdefault(msg.sig.signer, msg)
            self._try_forge(ctx, msg.vote.view)
        elif isinstance(msg, (Proposal, NewView)):
            j = msg.justification
            if isinstance(j, CommitQC):
                self._remember_qc(j)
            elif j.high_commit_qc is not None:
                self._remember_qc(j.high_commit_qc)

    def _remember_qc(self, qc: CommitQC) -> None:
        if qc not in self._commit_qcs:
            self._commit_qcs.append(qc)

    def _own_vote(self, ctx, rid: int, view: int) -> SignedTimeoutVote:
        rng = ctx.rng
        hv = rng.choice(self._commit_votes) if self._commit_votes and rng.random() < 0.7 else None
        qc = rng.choice(self._commit_qcs) if self._commit_qcs and rng.random() < 0.5 else None
        vote = TimeoutVote(view, hv, None if qc is None else qc.vote.view)
        return sign_timeout_vote(ctx.key(rid), vote, qc)

    def _try_forge(self, ctx, view: int) -> None:
        cfg = ctx.cfg
        rid = self.controlled[0]
        pool = {
            k: v for k, v in self._timeouts.get(view, {}).items()
            if cfg.replica_of[k] not in self.controlled
        }
        if len(pool) < cfg.quorum - len(self.controlled):
            return
        if self._done.get(view, 0) >= self.attempts:
            return
        self._done[view] = self._done.get(view, 0) + 1
        rng = ctx.rng
        honest = sorted(pool.values(), key=lambda st: st.sig.signer)
        k = rng.randint(cfg.quorum - len(self.controlled), len(honest))
        chosen = rng.sample(honest, k)
        chosen += [self._own_vote(ctx, c, view) for c in self.controlled]
        tqc = make_timeout_qc(chosen)
        if self._commit_qcs and rng.random() < 0.3:
            # swap in some other known commit QC; valid only if it matches
            # the highest claimed view
            tqc = replace(tqc, high_commit_qc=rng.choice(self._commit_qcs))
        if rng.random() < self.tamper:
            tqc = _tamper(tqc)
        if not validate_timeout_qc(tqc, cfg):
            self.suppressed += 1
            return
        to = [i for i in range(cfg.n) if rng.random() < 0.7]
        ctx.send(rid, sign_new_view(ctx.key(rid), tqc), to)
        self.sent += 1


def _tamper(tqc: TimeoutQC) -> TimeoutQC:
    """Corrupt one signature part; validation must reject the result."""
    pk, d = tqc.agg_sig.parts[0]
    bad = (pk, bytes(32) if d != bytes(32) else b"\x01" * 32)
    parts = (bad,) + tqc.agg_sig.parts[1:]
    return replace(tqc, agg_sig=replace(tqc.agg_sig, parts=parts))


class VoteWithholder(Behavior):
    """Withholds its own commit votes and, before GST, routes correct
    replicas' commit votes only to ``targets``.

    With the targets still able to form a commit QC, this is the "secretly
    finalized" situation: a few replicas commit while the rest time out
    holding high votes for the same block.
    """

    name = "vote_withholder"
    uses_shadow = True

    def __init__(self, controlled=(), targets: Optional[list[int]] = None):
        super().__init__(controlled)
        self.targets = None if targets is None else sorted(targets)
        self.withheld = 0

    def params(self) -> dict:
        return {"targets": self.targets}

    def setup(self, ctx) -> None:
        if self.targets is None:
            self.targets = sorted(ctx.rng.sample(ctx.correct, 1))

    def filter(self, ctx, rid: int, msg):
        if isinstance(msg, SignedCommitVote):
            self.withheld += 1
            return []
        return [(msg, None)]

    def delay(self, ctx, msg, frm: int, to: int):
        if (
            ctx.now < ctx.gst
            and isinstance(msg, SignedCommitVote)
            and frm not in self.controlled
            and to not in self.targets
        ):
            return DROP
        return None


BEHAVIORS = {
    cls.name: cls for cls in (Silent, EquivocatingProposer, QCForger, VoteWithholder)
}


def make_behavior(spec: dict, cfg: Config) -> Behavior:
    """Build a behaviour from its scenario description."""
    spec = dict(spec)
    name = spec.pop("name", None)
    cls = BEHAVIORS.get(name)
    if cls is None:
        raise AdversaryError(f"unknown adversary {name!r}")
    controlled = spec.pop("controlled", [])
    for rid in controlled:
        if not 0 <= rid < cfg.n:
            raise AdversaryError(f"controlled replica {rid} is not in the committee")
    if len(set(controlled)) > cfg.f and not cfg.unsafe:
        raise AdversaryError(
            f"{len(set(controlled))} controlled replicas exceed f={cfg.f}; "
            "set unsafe to allow"
        )
    try:
        return cls(controlled, **spec)
    except TypeError as exc:
        raise AdversaryError(f"bad parameters for {name}: {exc}") from exc


def random_behavior(cfg: Config, rng: random.Random) -> Behavior:
    """Sample one of the shipped behaviours with random parameters."""
    if cfg.f == 0 or rng.random() < 0.05:
        return Silent(())
    faulty = set(rng.sample(range(cfg.n), cfg.f))
    if rng.random() < 0.5:
        # make the early leaders faulty often, since runs are short
        faulty.discard(next(iter(sorted(faulty))))
        faulty.add(cfg.leader(1))
    faulty = sorted(faulty)
    name = rng.choice(sorted(BEHAVIORS))
    correct = [i for i in range(cfg.n) if i not in faulty]
    if name == "equivocating_proposer":
        split = sorted(rng.sample(correct, rng.randint(0, len(correct))))
        size = rng.choice([None, cfg.quorum])
        return EquivocatingProposer(faulty, split=split, tqc_size=size)
    if name == "qc_forger":
        return QCForger(faulty, attempts=rng.randint(1, 3))
    if name == "vote_withholder":
        return VoteWithholder(faulty, targets=sorted(rng.sample(correct, rng.randint(1, 2))))
    return Silent(faulty)

