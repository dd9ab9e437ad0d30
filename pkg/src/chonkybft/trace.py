"""Human-readable message summaries and the trace file format.

A trace is a JSON document: a header (schema version, scenario, seed),
one record per handler invocation or adversary action, and the final
per-replica chains. Records are written one per line so golden traces diff
cleanly, and every mapping is key-sorted so equal runs give equal bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

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
    hash_block,
)
from .qc import get_implied_block, high_vote_of, view_of

SCHEMA_VERSION = 1
HASH_CHARS = 12


class TraceError(ValueError):
    pass


def short(h: Optional[bytes]) -> Optional[str]:
    return None if h is None else h.hex()[:HASH_CHARS]


def payload_text(block: Block) -> str:
    try:
        return block.payload.decode("ascii")
    except UnicodeDecodeError:
        return "0x" + block.payload.hex()


def vote_summary(vote: Optional[CommitVote]) -> Optional[list]:
    if vote is None:
        return None
    return [vote.view, vote.block_number, short(vote.block_hash)]


def qc_summary(qc, cfg: Config) -> Optional[dict]:
    if qc is None:
        return None
    if isinstance(qc, CommitQC):
        return {
            "kind": "commit",
            "view": qc.vote.view,
            "n": qc.vote.block_number,
            "hash": short(qc.vote.block_hash),
            "signers": len(qc.agg_sig.parts),
        }
    if not qc.votes:
        return {"kind": "timeout", "view": None, "signers": 0}
    return {
        "kind": "timeout",
        "view": view_of(qc),
        "signers": len(qc.agg_sig.parts),
        "hv": vote_summary(high_vote_of(qc, cfg)),
        "tally": _tally(qc),
        "hcqc": qc_summary(qc.high_commit_qc, cfg),
    }


def _tally(tqc) -> list[list]:
    """Distinct high votes in a timeout certificate with their counts."""
    counts: dict = {}
    for _, v in tqc.votes:
        key = vote_summary(v.high_vote)
        counts[json.dumps(key)] = counts.get(json.dumps(key), 0) + 1
    return [[json.loads(k), c] for k, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


def _signer(msg, cfg: Config):
    return cfg.replica_of.get(msg.sig.signer, "?")


def summarize(msg, cfg: Config) -> dict:
    if isinstance(msg, Proposal):
        j = qc_summary(msg.justification, cfg)
        implied = (None, None)
        if j["view"] is not None:
            implied = get_implied_block(msg.justification, cfg)
        out = {
            "type": "Proposal",
            "signer": _signer(msg, cfg),
            "view": None if j["view"] is None else j["view"] + 1,
            "implied": [implied[0], short(implied[1])],
            "just": j,
        }
        if msg.block is not None:
            out["block"] = {
                "n": msg.block.number,
                "hash": short(hash_block(msg.block)),
                "payload": payload_text(msg.block),
            }
        else:
            out["block"] = None
        return out
    if isinstance(msg, SignedCommitVote):
        v = msg.vote
        return {
            "type": "CommitVote",
            "signer": _signer(msg, cfg),
            "view": v.view,
            "n": v.block_number,
            "hash": short(v.block_hash),
        }
    if isinstance(msg, SignedTimeoutVote):
        v = msg.vote
        return {
            "type": "TimeoutVote",
            "signer": _signer(msg, cfg),
            "view": v.view,
            "hv": vote_summary(v.high_vote),
            "hcqc_view": v.high_commit_qc_view,
            "hcqc": qc_summary(msg.high_commit_qc, cfg),
        }
    if isinstance(msg, NewView):
        j = qc_summary(msg.justification, cfg)
        return {
            "type": "NewView",
            "signer": _signer(msg, cfg),
            "view": None if j["view"] is None else j["view"] + 1,
            "just": j,
        }
    return {"type": type(msg).__name__}


def message_view(msg) -> Optional[int]:
    """The view a message belongs to, as used by delay rules."""
    if isinstance(msg, (SignedCommitVote, SignedTimeoutVote)):
        return msg.vote.view
    if isinstance(msg, (Proposal, NewView)):
        j = msg.justification
        if isinstance(j, TimeoutQC) and not j.votes:
            return None
        return view_of(j) + 1
    return None


MESSAGE_TYPES = {
    "Proposal": Proposal,
    "CommitVote": SignedCommitVote,
    "TimeoutVote": SignedTimeoutVote,
    "NewView": NewView,
}


def type_name(msg) -> str:
    for name, cls in MESSAGE_TYPES.items():
        if isinstance(msg, cls):
            return name
    return type(msg).__name__


@dataclass
class Trace:
    scenario: dict
    seed: int
    records: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    monitors: dict = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    def dumps(self) -> str:
        head = {
            "final": self.final,
            "monitors": self.monitors,
            "scenario": self.scenario,
            "schema": self.schema,
            "seed": self.seed,
        }
        lines = ["{"]
        for key in sorted(head):
            lines.append(f"{json.dumps(key)}: {_dump(head[key])},")
        lines.append('"records": [')
        if self.records:
            lines.append(",\n".join(_dump(r) for r in self.records))
        lines.append("]")
        lines.append("}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Trace":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TraceError(f"trace is not JSON: {exc}") from exc
        if not isinstance(raw, dict) or "schema" not in raw:
            raise TraceError("missing schema field")
        if raw["schema"] != SCHEMA_VERSION:
            raise TraceError(
                f"trace schema {raw['schema']!r} does not match {SCHEMA_VERSION}"
            )
        return cls(
            scenario=raw["scenario"],
            seed=raw["seed"],
            records=raw.get("records", []),
            final=raw.get("final", {}),
            monitors=raw.get("monitors", {}),
        )


def _dump(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))
