"""The ChonkyBFT replica as an event-driven state machine.

A ``Replica`` consumes one event at a time (start, timer expiry, a received
message, or a block-sync delivery) and returns an outbox of effects for the
environment to carry out. Nothing in here touches a clock or a socket.

Condition-triggered handlers (the timer reset on view change and the
proposer step) are re-evaluated after every event, so a proposer waiting
for missing blocks fires as soon as the block store catches up. Proposals
that arrive before the blocks below them are held and retried the same way.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .messages import (
    Block,
    CommitQC,
    CommitVote,
    Config,
    Justification,
    NewView,
    Proposal,
    SignedCommitVote,
    SignedTimeoutVote,
    TimeoutQC,
    TimeoutVote,
    Validator,
    hash_block,
    make_commit_qc,
    make_timeout_qc,
    sign_commit_vote,
    sign_new_view,
    sign_proposal,
    sign_timeout_vote,
    validate_commit_qc,
)
from .qc import finalized_hash_conflict, get_implied_block, max_qc, max_timeout_qc, view_of

logger = logging.getLogger(__name__)


class Phase(str, enum.Enum):
    PREPARE = "Prepare"
    COMMIT = "Commit"
    TIMEOUT = "Timeout"


class ProtocolInvariantError(AssertionError):
    pass


# -- events and effects -----------------------------------------------------


@dataclass(frozen=True)
class Start:
    pass


@dataclass(frozen=True)
class TimerFired:
    pass


@dataclass(frozen=True)
class MessageReceived:
    message: object
    sender: int


@dataclass(frozen=True)
class SyncBlock:
    block: Block


@dataclass(frozen=True)
class SyncCommit:
    block: Block
    qc: CommitQC


Event = Union[Start, TimerFired, MessageReceived, SyncBlock, SyncCommit]


@dataclass(frozen=True)
class Broadcast:
    message: object


@dataclass(frozen=True)
class ResetTimer:
    duration: int


Outbox = list


# -- state ------------------------------------------------------------------


@dataclass
class ReplicaState:
    view: int = 0
    phase: Phase = Phase.PREPARE
    high_vote: Optional[CommitVote] = None
    high_commit_qc: Optional[CommitQC] = None
    high_timeout_qc: Optional[TimeoutQC] = None
    committed_blocks: list[tuple[Block, CommitQC]] = field(default_factory=list)
    cached_blocks: dict[tuple[int, bytes], Block] = field(default_factory=dict)
    # commit QCs for blocks not yet in the chain, by block number
    finalized: dict[int, CommitQC] = field(default_factory=dict)
    # the two ``cur_view`` variables: proposer logic and timer logic
    proposer_view: int = 0
    timer_view: int = 0
    commit_pool: dict[CommitVote, dict[bytes, SignedCommitVote]] = field(
        default_factory=dict
    )
    commit_fired: set[CommitVote] = field(default_factory=set)
    timeout_pool: dict[int, dict[bytes, SignedTimeoutVote]] = field(
        default_factory=dict
    )
    timeout_fired: set[int] = field(default_factory=set)
    seen: set[tuple] = field(default_factory=set)
    pending_proposals: list[Proposal] = field(default_factory=list)
    started: bool = False


def default_verify_block(number: int, block: Block) -> bool:
    return block.number == number and len(block.payload) > 0


def default_payload(view: int, number: int, salt: int = 0) -> bytes:
    text = f"b{number}@v{view}"
    if salt:
        text += f"/{salt}"
    return text.encode()


class Replica:
    def __init__(
        self,
        rid: int,
        cfg: Config,
        validator: Optional[Validator] = None,
        verify_block: Callable[[int, Block], bool] = default_verify_block,
        payload_salt: int = 0,
    ):
        self.id = rid
        self.cfg = cfg
        self.key = cfg.keys[rid]
        self.state = ReplicaState()
        self.validator = validator or Validator(cfg)
        self._verify_block = verify_block
        self.payload_salt = payload_salt
        # one-line outcome of the last handler, for traces
        self.note = ""
        self.evidence: list[str] = []

    # -- dispatch -----------------------------------------------------------

    def handle(self, event: Event) -> Outbox:
        out: Outbox = []
        self.note = ""
        chain_before = len(self.state.committed_blocks)
        if isinstance(event, Start):
            self.on_start(out)
        elif isinstance(event, TimerFired):
            self.on_timer_fired(out)
        elif isinstance(event, MessageReceived):
            self.on_message(event.message, out)
        elif isinstance(event, SyncBlock):
            self.on_sync_block(event.block)
        elif isinstance(event, SyncCommit):
            self.on_sync_commit(event.block, event.qc)
        else:
            raise TypeError(f"unknown event {event!r}")
        self._wake(out, chain_before)
        return out

    def on_message(self, msg, out: Outbox) -> None:
        if isinstance(msg, Proposal):
            self.on_proposal(msg, out)
        elif isinstance(msg, SignedCommitVote):
            self.on_commit_vote(msg, out)
        elif isinstance(msg, SignedTimeoutVote):
            self.on_timeout_vote(msg, out)
        elif isinstance(msg, NewView):
            self.on_new_view(msg, out)
        else:
            self.note = "discard: unknown message"

    def _wake(self, out: Outbox, chain_before: int) -> None:
        s = self.state
        while True:
            if s.view > s.timer_view:
                s.timer_view = s.view
                out.append(ResetTimer(self.cfg.delta_timeout))
                self._prune()
            if self.proposer_step(out):
                continue
            if s.pending_proposals and len(s.committed_blocks) > chain_before:
                chain_before = len(s.committed_blocks)
                pending, s.pending_proposals = s.pending_proposals, []
                for p in pending:
                    self.on_proposal(p, out, retry=True)
                continue
            break

    def _prune(self) -> None:
        s = self.state
        s.commit_pool = {v: p for v, p in s.commit_pool.items() if v.view >= s.view}
        s.commit_fired = {v for v in s.commit_fired if v.view >= s.view}
        s.timeout_pool = {v: p for v, p in s.timeout_pool.items() if v >= s.view}
        s.timeout_fired = {v for v in s.timeout_fired if v >= s.view}
        s.pending_proposals = [
            p for p in s.pending_proposals if view_of(p.justification) + 1 >= s.view
        ]

    # -- start and timers ---------------------------------------------------

    def on_start(self, out: Outbox) -> None:
        s = self.state
        if s.started:
            self.note = "ignore: already started"
            return
        s.started = True
        out.append(ResetTimer(self.cfg.delta_timeout))
        s.timer_view = s.proposer_view = s.view
        self.on_timer_fired(out)

    def on_timer_fired(self, out: Outbox) -> None:
        s = self.state
        if s.phase == Phase.TIMEOUT:
            self.note = self.note or "ignore: already timed out"
            return
        s.phase = Phase.TIMEOUT
        hcqc = s.high_commit_qc
        vote = TimeoutVote(s.view, s.high_vote, None if hcqc is None else hcqc.vote.view)
        signed = sign_timeout_vote(self.key, vote, hcqc)
        out.append(Broadcast(signed))
        self.note = f"timeout vote v{s.view}"
        self._add_timeout_vote(signed, out)

    # -- proposer -----------------------------------------------------------

    def create_justification_qc(self) -> Justification:
        s = self.state
        if s.high_commit_qc is None and s.high_timeout_qc is None:
            raise ProtocolInvariantError("no quorum certificate to justify a view")
        if s.high_commit_qc is not None and (
            s.high_timeout_qc is None
            or view_of(s.high_commit_qc) >= view_of(s.high_timeout_qc)
        ):
            return s.high_commit_qc
        return s.high_timeout_qc

    def create_proposal(self, number: int) -> Block:
        return Block(number, default_payload(self.state.view, number, self.payload_salt))

    def proposer_step(self, out: Outbox) -> bool:
        """Propose once per view when leading it. Returns True if it fired."""
        s = self.state
        if not (s.view > s.proposer_view and self.cfg.leader(s.view) == self.id):
            return False
        qc = self.create_justification_qc()
        number, block_hash = get_implied_block(qc, self.cfg)
        if len(s.committed_blocks) < number:
            # wait for the blocks below to arrive via sync
            return False
        s.proposer_view = s.view
        block = self.create_proposal(number) if block_hash is None else None
        out.append(Broadcast(sign_proposal(self.key, block, qc)))
        return True

    # -- proposals ----------------------------------------------------------

    def on_proposal(self, p: Proposal, out: Outbox, retry: bool = False) -> None:
        s = self.state
        qc = p.justification
        if isinstance(qc, TimeoutQC) and not qc.votes:
            self.note = "discard: empty timeout QC"
            return
        v = view_of(qc) + 1
        if not ((s.phase == Phase.PREPARE and s.view == v) or v > s.view):
            self.note = f"discard: proposal for v{v} at v{s.view}/{s.phase.value}"
            return
        if p.sig.signer != self.cfg.public_keys[self.cfg.leader(v)]:
            self.note = f"discard: proposal signer is not leader({v})"
            return
        if not self.validator(p):
            self.note = "discard: invalid proposal"
            return
        number, block_hash = get_implied_block(qc, self.cfg)
        if finalized_hash_conflict(qc, self.cfg):
            logger.info("replica %d: high vote and high QC share number %d", self.id, number)
        if len(s.committed_blocks) < number:
            s.pending_proposals.append(p)
            self.note = f"defer: missing blocks below {number}"
            return
        if (block_hash is None) != (p.block is not None):
            self.note = "discard: block presence does not match implied block"
            self.evidence.append(f"v{v}: block/hash mismatch")
            return
        if block_hash is None:
            if not self.verify_block(number, p.block):
                self.note = "discard: block failed verification"
                self.evidence.append(f"v{v}: invalid block from leader")
                return
            block_hash = hash_block(p.block)
            s.cached_blocks[(number, block_hash)] = p.block
        vote = CommitVote(v, number, block_hash)
        s.phase, s.view, s.high_vote = Phase.COMMIT, v, vote
        self._fold(qc)
        self._extend_chain()
        signed = sign_commit_vote(self.key, vote)
        out.append(Broadcast(signed))
        self.note = ("retry: " if retry else "") + (
            f"vote v{v} #{number} " + ("fresh" if p.block is not None else "repropose")
        )
        self._add_commit_vote(signed, out)

    def verify_block(self, number: int, block: Block) -> bool:
        return self._verify_block(number, block)

    # -- commit votes -------------------------------------------------------

    def on_commit_vote(self, sv: SignedCommitVote, out: Outbox) -> None:
        if sv.vote.view < self.state.view:
            self.note = "discard: stale commit vote"
            return
        if not self.validator(sv):
            self.note = "discard: invalid commit vote"
            return
        self._add_commit_vote(sv, out)

    def on_commit_votes(self, votes, out: Outbox) -> None:
        for sv in votes:
            self.on_commit_vote(sv, out)

    def _add_commit_vote(self, sv: SignedCommitVote, out: Outbox) -> None:
        s = self.state
        pool = s.commit_pool.setdefault(sv.vote, {})
        if sv.sig.signer in pool:
            self.note = self.note or "ignore: duplicate commit vote"
            return
        pool[sv.sig.signer] = sv
        if (
            len(pool) >= self.cfg.quorum
            and sv.vote not in s.commit_fired
            and sv.vote.view >= s.view
        ):
            s.commit_fired.add(sv.vote)
            qc = make_commit_qc(pool.values())
            self.process_commit_qc(qc)
            self.note = f"commit QC v{qc.vote.view} #{qc.vote.block_number}"
            self.start_new_view(qc.vote.view + 1, out)

    # -- timeout votes ------------------------------------------------------

    def on_timeout_vote(self, st: SignedTimeoutVote, out: Outbox) -> None:
        if st.vote.view < self.state.view:
            self.note = "discard: stale timeout vote"
            return
        if not self.validator(st):
            self.note = "discard: invalid timeout vote"
            return
        self._add_timeout_vote(st, out)

    def on_timeout_votes(self, votes, out: Outbox) -> None:
        for st in votes:
            self.on_timeout_vote(st, out)

    def _add_timeout_vote(self, st: SignedTimeoutVote, out: Outbox) -> None:
        s = self.state
        view = st.vote.view
        pool = s.timeout_pool.setdefault(view, {})
        if st.sig.signer in pool:
            self.note = self.note or "ignore: duplicate timeout vote"
            return
        pool[st.sig.signer] = st
        if len(pool) >= self.cfg.quorum and view not in s.timeout_fired and view >= s.view:
            s.timeout_fired.add(view)
            tqc = make_timeout_qc(pool.values())
            self.process_commit_qc(tqc.high_commit_qc)
            s.high_timeout_qc = max_timeout_qc(tqc, s.high_timeout_qc)
            self.note = f"timeout QC v{view}"
            self.start_new_view(view + 1, out)

    # -- new view -----------------------------------------------------------

    def on_new_view(self, nv: NewView, out: Outbox) -> None:
        s = self.state
        qc = nv.justification
        if isinstance(qc, TimeoutQC) and not qc.votes:
            self.note = "discard: empty timeout QC"
            return
        v = view_of(qc) + 1
        if v < s.view:
            self.note = "discard: stale new view"
            return
        key = ("nv", nv.sig.signer, nv.sig.payload_digest)
        if key in s.seen:
            self.note = "ignore: duplicate new view"
            return
        if not self.validator(nv):
            self.note = "discard: invalid new view"
            return
        s.seen.add(key)
        self._fold(qc)
        if v > s.view:
            self.note = f"new view -> v{v}"
            self.start_new_view(v, out)
        else:
            self.note = f"new view folded at v{s.view}"

    def start_new_view(self, view: int, out: Outbox) -> None:
        s = self.state
        s.phase, s.view = Phase.PREPARE, view
        out.append(Broadcast(sign_new_view(self.key, self.create_justification_qc())))

    # -- commit store -------------------------------------------------------

    def _fold(self, qc: Justification) -> None:
        if isinstance(qc, CommitQC):
            self.process_commit_qc(qc)
        else:
            self.process_commit_qc(qc.high_commit_qc)
            self.state.high_timeout_qc = max_timeout_qc(qc, self.state.high_timeout_qc)

    def process_commit_qc(self, qc: Optional[CommitQC]) -> None:
        if qc is None:
            return
        s = self.state
        s.high_commit_qc = max_qc(qc, s.high_commit_qc)
        number = qc.vote.block_number
        block = s.cached_blocks.get((number, qc.vote.block_hash))
        if block is not None and number == len(s.committed_blocks):
            s.committed_blocks.append((block, qc))
            s.finalized.pop(number, None)
        elif number >= len(s.committed_blocks):
            # finalized hash without contents yet; the block fetcher fills it in
            s.finalized.setdefault(number, qc)
        self._extend_chain()

    def _extend_chain(self) -> None:
        s = self.state
        while True:
            k = len(s.committed_blocks)
            qc = s.finalized.get(k)
            if qc is None:
                return
            block = s.cached_blocks.get((k, qc.vote.block_hash))
            if block is None:
                return
            s.committed_blocks.append((block, qc))
            del s.finalized[k]

    def on_sync_block(self, block: Block) -> None:
        self.state.cached_blocks.setdefault((block.number, hash_block(block)), block)
        self._extend_chain()
        self.note = f"sync block #{block.number}"

    def on_sync_commit(self, block: Block, qc: CommitQC) -> None:
        if hash_block(block) != qc.vote.block_hash or not validate_commit_qc(qc, self.cfg):
            self.note = "discard: bad sync commit"
            return
        self.state.cached_blocks.setdefault((block.number, qc.vote.block_hash), block)
        self.process_commit_qc(qc)
        self.note = f"sync commit #{block.number}"
