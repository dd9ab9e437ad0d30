"""Pure decisions over quorum certificates.

``high_vote_of`` and ``get_implied_block`` decide whether a leader must
re-propose a block that might already be finalized, or may move on to a
fresh block.
"""

from __future__ import annotations

from collections import Counter
from typing import Optional

from .messages import CommitQC, CommitVote, Config, Justification, TimeoutQC


def max_qc(qc1: Optional[CommitQC], qc2: Optional[CommitQC]) -> Optional[CommitQC]:
    """Higher-view commit QC; ``qc1`` wins ties."""
    if qc1 is None:
        return qc2
    if qc2 is None:
        return qc1
    return qc1 if qc1.vote.view >= qc2.vote.view else qc2


def max_timeout_qc(
    qc1: Optional[TimeoutQC], qc2: Optional[TimeoutQC]
) -> Optional[TimeoutQC]:
    if qc1 is None:
        return qc2
    if qc2 is None:
        return qc1
    return qc1 if view_of(qc1) >= view_of(qc2) else qc2


def view_of(qc: Justification) -> int:
    if isinstance(qc, CommitQC):
        return qc.vote.view
    # a valid timeout QC has a single common view
    return qc.votes[0][1].view


def high_vote_of(tqc: TimeoutQC, cfg: Config) -> Optional[CommitVote]:
    """The high vote backed by a subquorum of at least n - 3f timeout votes.

    Returns None when no value reaches the threshold or when two distinct
    values both do. Votes are compared as full (view, number, hash) triples.
    """
    counts = Counter(v.high_vote for _, v in tqc.votes if v.high_vote is not None)
    backed = [hv for hv, k in counts.items() if k >= cfg.subquorum]
    return backed[0] if len(backed) == 1 else None


def get_implied_block(qc: Justification, cfg: Config) -> tuple[int, Optional[bytes]]:
    """(block_number, block_hash) a proposal justified by ``qc`` must carry.

    A hash is returned only for a re-proposal; ``None`` means a fresh block.
    """
    if isinstance(qc, CommitQC):
        return qc.vote.block_number + 1, None
    hv = high_vote_of(qc, cfg)
    hqc = qc.high_commit_qc
    if hv is not None and (hqc is None or hv.block_number > hqc.vote.block_number):
        return hv.block_number, hv.block_hash
    if hqc is None:
        return 0, None
    return hqc.vote.block_number + 1, None


def finalized_hash_conflict(qc: Justification, cfg: Config) -> bool:
    """Flags a timeout QC whose unique high vote has the same number as its
    commit QC but a different hash; the code path proposes number + 1."""
    if not isinstance(qc, TimeoutQC) or qc.high_commit_qc is None:
        return False
    hv = high_vote_of(qc, cfg)
    hqc = qc.high_commit_qc.vote
    return (
        hv is not None
        and hv.block_number == hqc.block_number
        and hv.block_hash != hqc.block_hash
    )
