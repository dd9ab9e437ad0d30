"""Protocol messages, quorum certificates, canonical encoding and validity rules."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from functools import cached_property, lru_cache
from typing import Optional, Union

from . import crypto
from .crypto import AggregateSignature, KeyPair, Signature


# -- value types ------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    number: int
    payload: bytes


@dataclass(frozen=True)
class CommitVote:
    view: int
    block_number: int
    block_hash: bytes


@dataclass(frozen=True)
class SignedCommitVote:
    vote: CommitVote
    sig: Signature


@dataclass(frozen=True)
class CommitQC:
    vote: CommitVote
    agg_sig: AggregateSignature


@dataclass(frozen=True)
class TimeoutVote:
    view: int
    high_vote: Optional[CommitVote]
    high_commit_qc_view: Optional[int]


@dataclass(frozen=True)
class SignedTimeoutVote:
    vote: TimeoutVote
    high_commit_qc: Optional[CommitQC]
    sig: Signature


@dataclass(frozen=True)
class TimeoutQC:
    # (public key, vote) pairs sorted by key; see votes_by_key()
    votes: tuple[tuple[bytes, TimeoutVote], ...]
    high_commit_qc: Optional[CommitQC]
    agg_sig: AggregateSignature

    def votes_by_key(self) -> dict[bytes, TimeoutVote]:
        return dict(self.votes)


Justification = Union[CommitQC, TimeoutQC]


@dataclass(frozen=True)
class Proposal:
    block: Optional[Block]
    justification: Justification
    sig: Signature


@dataclass(frozen=True)
class NewView:
    justification: Justification
    sig: Signature


Message = Union[Proposal, SignedCommitVote, SignedTimeoutVote, NewView]


# -- configuration ----------------------------------------------------------


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    """Committee size, fault bound, timing constants and leader schedule.

    ``leaders`` overrides the round-robin rule ``leader(v) = v mod n`` for
    individual views. ``unsafe`` admits n < 5f + 1 for boundary experiments.
    """

    n: int
    f: int
    delta_timeout: int = 40
    delta_rcv: int = 5
    delta_sync: int = 10
    leaders: tuple[tuple[int, int], ...] = ()
    unsafe: bool = False

    def __post_init__(self):
        if self.n < 1 or self.f < 0:
            raise ConfigError(f"bad committee size n={self.n} f={self.f}")
        if self.n < 5 * self.f + 1 and not self.unsafe:
            raise ConfigError(
                f"n={self.n} < 5f+1={5 * self.f + 1}; pass unsafe=True to allow"
            )
        if min(self.delta_timeout, self.delta_rcv, self.delta_sync) <= 0:
            raise ConfigError("timing constants must be positive")
        for view, rid in self.leaders:
            if not 0 <= rid < self.n:
                raise ConfigError(f"leader {rid} for view {view} is not a replica")

    @property
    def quorum(self) -> int:
        return self.n - self.f

    @property
    def subquorum(self) -> int:
        return self.n - 3 * self.f

    @property
    def timing_ok(self) -> bool:
        return self.delta_timeout > self.delta_sync + 2 * self.delta_rcv

    @cached_property
    def _leader_map(self) -> dict[int, int]:
        return dict(self.leaders)

    def leader(self, view: int) -> int:
        return self._leader_map.get(view, view % self.n)

    @cached_property
    def keys(self) -> tuple[KeyPair, ...]:
        return tuple(crypto.keygen(i) for i in range(self.n))

    @cached_property
    def public_keys(self) -> tuple[bytes, ...]:
        return tuple(k.public_key for k in self.keys)

    @cached_property
    def replica_of(self) -> dict[bytes, int]:
        return {pk: i for i, pk in enumerate(self.public_keys)}


# -- canonical encoding -----------------------------------------------------

_NONE, _INT, _BYTES, _SEQ = 0x00, 0x01, 0x02, 0x03

_KINDS: dict[type, int] = {
    Signature: 0x10,
    AggregateSignature: 0x11,
    Block: 0x12,
    CommitVote: 0x13,
    SignedCommitVote: 0x14,
    CommitQC: 0x15,
    TimeoutVote: 0x16,
    SignedTimeoutVote: 0x17,
    TimeoutQC: 0x18,
    Proposal: 0x19,
    NewView: 0x1A,
}
_BY_CODE = {code: cls for cls, code in _KINDS.items()}
_FIELDS = {cls: tuple(f.name for f in fields(cls)) for cls in _KINDS}

# Unsigned bodies of proposals and new-view messages.
_PROPOSAL_BODY = 0x30
_NEW_VIEW_BODY = 0x31


class DecodeError(ValueError):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"at byte {offset}: {reason}")
        self.offset = offset
        self.reason = reason


def _put(value, out: bytearray) -> None:
    if value is None:
        out.append(_NONE)
    elif isinstance(value, bool):
        raise TypeError("booleans have no canonical encoding")
    elif isinstance(value, int):
        if value < 0 or value >= 1 << 64:
            raise ValueError(f"integer {value} out of range")
        out.append(_INT)
        out += struct.pack(">Q", value)
    elif isinstance(value, bytes):
        out.append(_BYTES)
        out += struct.pack(">I", len(value))
        out += value
    elif isinstance(value, tuple):
        out.append(_SEQ)
        out += struct.pack(">I", len(value))
        for item in value:
            _put(item, out)
    else:
        code = _KINDS.get(type(value))
        if code is None:
            raise TypeError(f"cannot encode {type(value).__name__}")
        out.append(code)
        for name in _FIELDS[type(value)]:
            _put(getattr(value, name), out)


def encode(message) -> bytes:
    out = bytearray()
    _put(message, out)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, k: int) -> bytes:
        if self.pos + k > len(self.data):
            raise DecodeError(self.pos, f"truncated: need {k} bytes")
        chunk = self.data[self.pos : self.pos + k]
        self.pos += k
        return chunk

    def value(self):
        start = self.pos
        tag = self.take(1)[0]
        if tag == _NONE:
            return None
        if tag == _INT:
            return struct.unpack(">Q", self.take(8))[0]
        if tag == _BYTES:
            (size,) = struct.unpack(">I", self.take(4))
            return self.take(size)
        if tag == _SEQ:
            (count,) = struct.unpack(">I", self.take(4))
            if count > len(self.data) - self.pos:
                raise DecodeError(start, f"sequence length {count} exceeds input")
            return tuple(self.value() for _ in range(count))
        cls = _BY_CODE.get(tag)
        if cls is None:
            raise DecodeError(start, f"unknown tag 0x{tag:02x}")
        values = [self.value() for _ in _FIELDS[cls]]
        problem = _SHAPES[cls](*values)
        if problem:
            raise DecodeError(start, f"malformed {cls.__name__}: {problem}")
        return cls(*values)


def decode(data: bytes):
    reader = _Reader(data)
    value = reader.value()
    if reader.pos != len(data):
        raise DecodeError(reader.pos, f"{len(data) - reader.pos} trailing bytes")
    return value


def _is(value, *types) -> bool:
    return isinstance(value, types) and not isinstance(value, bool)


def _opt(value, *types) -> bool:
    return value is None or _is(value, *types)


def _pairs(value, second) -> bool:
    return _is(value, tuple) and all(
        _is(p, tuple) and len(p) == 2 and _is(p[0], bytes) and _is(p[1], second)
        for p in value
    )


def _expect(ok: bool, what: str) -> str:
    return "" if ok else what


_SHAPES = {
    Signature: lambda s, d: _expect(_is(s, bytes) and _is(d, bytes), "fields"),
    AggregateSignature: lambda parts: _expect(_pairs(parts, bytes), "parts"),
    Block: lambda n, p: _expect(_is(n, int) and _is(p, bytes), "fields"),
    CommitVote: lambda v, n, h: _expect(
        _is(v, int) and _is(n, int) and _is(h, bytes), "fields"
    ),
    SignedCommitVote: lambda v, s: _expect(
        _is(v, CommitVote) and _is(s, Signature), "fields"
    ),
    CommitQC: lambda v, a: _expect(
        _is(v, CommitVote) and _is(a, AggregateSignature), "fields"
    ),
    TimeoutVote: lambda v, hv, hq: _expect(
        _is(v, int) and _opt(hv, CommitVote) and _opt(hq, int), "fields"
    ),
    SignedTimeoutVote: lambda v, q, s: _expect(
        _is(v, TimeoutVote) and _opt(q, CommitQC) and _is(s, Signature), "fields"
    ),
    TimeoutQC: lambda votes, q, a: _expect(
        _pairs(votes, TimeoutVote)
        and _opt(q, CommitQC)
        and _is(a, AggregateSignature),
        "fields",
    ),
    Proposal: lambda b, j, s: _expect(
        _opt(b, Block) and _is(j, CommitQC, TimeoutQC) and _is(s, Signature),
        "fields",
    ),
    NewView: lambda j, s: _expect(
        _is(j, CommitQC, TimeoutQC) and _is(s, Signature), "fields"
    ),
}


@lru_cache(maxsize=65536)
def vote_bytes(vote: CommitVote | TimeoutVote) -> bytes:
    return encode(vote)


def proposal_body(block: Optional[Block], justification: Justification) -> bytes:
    out = bytearray([_PROPOSAL_BODY])
    _put(block, out)
    _put(justification, out)
    return bytes(out)


def new_view_body(justification: Justification) -> bytes:
    out = bytearray([_NEW_VIEW_BODY])
    _put(justification, out)
    return bytes(out)


# -- construction helpers ---------------------------------------------------


def hash_block(block: Block) -> bytes:
    return crypto.digest(block.payload)


def sign_commit_vote(key: KeyPair, vote: CommitVote) -> SignedCommitVote:
    return SignedCommitVote(vote, crypto.sign(key.private_key, vote_bytes(vote)))


def sign_timeout_vote(
    key: KeyPair, vote: TimeoutVote, high_commit_qc: Optional[CommitQC]
) -> SignedTimeoutVote:
    return SignedTimeoutVote(
        vote, high_commit_qc, crypto.sign(key.private_key, vote_bytes(vote))
    )


def sign_proposal(
    key: KeyPair, block: Optional[Block], justification: Justification
) -> Proposal:
    sig = crypto.sign(key.private_key, proposal_body(block, justification))
    return Proposal(block, justification, sig)


def sign_new_view(key: KeyPair, justification: Justification) -> NewView:
    return NewView(
        justification, crypto.sign(key.private_key, new_view_body(justification))
    )


def make_commit_qc(votes) -> CommitQC:
    """Aggregate signed commit votes that all carry the same vote."""
    votes = list(votes)
    if not votes:
        raise ValueError("no votes")
    vote = votes[0].vote
    if any(v.vote != vote for v in votes):
        raise ValueError("commit votes differ")
    return CommitQC(vote, crypto.aggregate(v.sig for v in votes))


def make_timeout_qc(
    votes, high_commit_qc: Optional[CommitQC] = None, pick_high_qc: bool = True
) -> TimeoutQC:
    """Aggregate signed timeout votes into a TimeoutQC.

    With ``pick_high_qc`` the attached commit QC with the highest view is
    chosen; ties go to the signer with the lowest public key.
    """
    votes = sorted(votes, key=lambda st: st.sig.signer)
    agg = crypto.aggregate(st.sig for st in votes)
    if pick_high_qc:
        best = None
        for st in votes:
            qc = st.high_commit_qc
            if qc is not None and (best is None or qc.vote.view > best.vote.view):
                best = qc
        high_commit_qc = best
    pairs = tuple((st.sig.signer, st.vote) for st in votes)
    return TimeoutQC(pairs, high_commit_qc, agg)


# -- validity ---------------------------------------------------------------


def signers(qc: Justification) -> frozenset[bytes]:
    return frozenset(qc.agg_sig.signers())


def _committee_quorum(keys, cfg: Config) -> bool:
    known = cfg.replica_of
    return len(keys) >= cfg.quorum and all(pk in known for pk in keys)


def validate_commit_qc(qc: CommitQC, cfg: Config) -> bool:
    keys = qc.agg_sig.signers()
    if not _committee_quorum(keys, cfg):
        return False
    msg = vote_bytes(qc.vote)
    return crypto.aggregate_verify(keys, [msg] * len(keys), qc.agg_sig)


def validate_timeout_qc(qc: TimeoutQC, cfg: Config) -> bool:
    keys = qc.agg_sig.signers()
    if not _committee_quorum(keys, cfg):
        return False
    if tuple(pk for pk, _ in qc.votes) != keys:
        return False
    if not crypto.aggregate_verify(
        keys, [vote_bytes(v) for _, v in qc.votes], qc.agg_sig
    ):
        return False
    views = {v.view for _, v in qc.votes}
    if len(views) != 1:
        return False
    qc_views = [v.high_commit_qc_view for _, v in qc.votes]
    if qc.high_commit_qc is None:
        return all(x is None for x in qc_views)
    present = [x for x in qc_views if x is not None]
    if not present or qc.high_commit_qc.vote.view != max(present):
        return False
    return validate_commit_qc(qc.high_commit_qc, cfg)


def validate_justification(qc, cfg: Config) -> bool:
    if isinstance(qc, CommitQC):
        return validate_commit_qc(qc, cfg)
    if isinstance(qc, TimeoutQC):
        return validate_timeout_qc(qc, cfg)
    return False


def _known_signer(sig: Signature, cfg: Config) -> bool:
    return sig.signer in cfg.replica_of


def validate_signed_commit_vote(sv: SignedCommitVote, cfg: Config) -> bool:
    return _known_signer(sv.sig, cfg) and crypto.verify(
        sv.sig, vote_bytes(sv.vote), sv.sig.signer
    )


def validate_signed_timeout_vote(st: SignedTimeoutVote, cfg: Config) -> bool:
    if not _known_signer(st.sig, cfg):
        return False
    if not crypto.verify(st.sig, vote_bytes(st.vote), st.sig.signer):
        return False
    if st.high_commit_qc is None:
        return st.vote.high_commit_qc_view is None
    return st.vote.high_commit_qc_view == st.high_commit_qc.vote.view and (
        validate_commit_qc(st.high_commit_qc, cfg)
    )


def validate_proposal(p: Proposal, cfg: Config) -> bool:
    return (
        _known_signer(p.sig, cfg)
        and crypto.verify(p.sig, proposal_body(p.block, p.justification), p.sig.signer)
        and validate_justification(p.justification, cfg)
    )


def validate_new_view(nv: NewView, cfg: Config) -> bool:
    return (
        _known_signer(nv.sig, cfg)
        and crypto.verify(nv.sig, new_view_body(nv.justification), nv.sig.signer)
        and validate_justification(nv.justification, cfg)
    )


_VALIDATORS = {
    Proposal: validate_proposal,
    SignedCommitVote: validate_signed_commit_vote,
    SignedTimeoutVote: validate_signed_timeout_vote,
    NewView: validate_new_view,
}


def validate_message(msg, cfg: Config) -> bool:
    check = _VALIDATORS.get(type(msg))
    return check is not None and check(msg, cfg)


@dataclass
class Validator:
    """Memoizing wrapper around validate_message.

    The simulator hands the same message object to every recipient, so the
    verdict is cached by object identity (the object is kept alive alongside
    its verdict, which keeps ids from being reused).
    """

    cfg: Config
    _cache: dict[int, tuple[object, bool]] = field(default_factory=dict, repr=False)

    def __call__(self, msg) -> bool:
        hit = self._cache.get(id(msg))
        if hit is not None and hit[0] is msg:
            return hit[1]
        verdict = validate_message(msg, self.cfg)
        self._cache[id(msg)] = (msg, verdict)
        return verdict


def signer_id(msg, cfg: Config) -> Optional[int]:
    return cfg.replica_of.get(msg.sig.signer)

