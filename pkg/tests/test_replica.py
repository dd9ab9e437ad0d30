"""Handler-level tests: feed events to one replica, inspect its outbox."""

import pytest

from chonkybft.messages import (
    Block,
    CommitVote,
    Config,
    NewView,
    Proposal,
    SignedCommitVote,
    SignedTimeoutVote,
    TimeoutVote,
    hash_block,
    make_commit_qc,
    make_timeout_qc,
    sign_commit_vote,
    sign_new_view,
    sign_proposal,
    sign_timeout_vote,
)
from chonkybft.replica import (
    Broadcast,
    MessageReceived,
    Phase,
    Replica,
    ResetTimer,
    Start,
    SyncBlock,
    SyncCommit,
    TimerFired,
)

CFG = Config(6, 1)
KEYS = CFG.keys


def sent(out, kind):
    return [e.message for e in out if isinstance(e, Broadcast) and isinstance(e.message, kind)]


def recv(replica, msg, frm=0):
    return replica.handle(MessageReceived(msg, frm))


def genesis_tqc(ids=range(5)):
    return make_timeout_qc(
        sign_timeout_vote(KEYS[i], TimeoutVote(0, None, None), None) for i in ids
    )


def block(n=0, tag="x"):
    return Block(n, f"{tag}{n}".encode())


def vote_for(view, b):
    return CommitVote(view, b.number, hash_block(b))


def cqc(view, b, ids=range(5)):
    return make_commit_qc(sign_commit_vote(KEYS[i], vote_for(view, b)) for i in ids)


def started(rid):
    r = Replica(rid, CFG)
    r.handle(Start())
    return r


def in_view_1(rid):
    r = started(rid)
    recv(r, sign_new_view(KEYS[1], genesis_tqc()))
    assert r.state.view == 1
    return r


def test_start_times_out_view_zero():
    r = Replica(2, CFG)
    out = r.handle(Start())
    assert ResetTimer(CFG.delta_timeout) in out
    [tv] = sent(out, SignedTimeoutVote)
    assert tv.vote == TimeoutVote(0, None, None)
    assert r.handle(Start()) == []


def test_leader_proposes_after_timeout_quorum():
    r = started(1)
    out = []
    for i in (0, 2, 3, 4):
        out += recv(r, sign_timeout_vote(KEYS[i], TimeoutVote(0, None, None), None), i)
    assert r.state.view == 1
    [nv] = sent(out, NewView)
    [p] = sent(out, Proposal)
    assert p.block is not None and p.block.number == 0
    assert p.justification == nv.justification
    # the leader also votes for its own proposal when it arrives back
    [own] = sent(recv(r, p, 1), SignedCommitVote)
    assert own.vote.view == 1


def test_follower_votes_once_per_view():
    r = started(2)
    b = block()
    p = sign_proposal(KEYS[1], b, genesis_tqc())
    [v] = sent(recv(r, p, 1), SignedCommitVote)
    assert v.vote == vote_for(1, b)
    assert r.state.phase == Phase.COMMIT
    rival = sign_proposal(KEYS[1], block(tag="y"), genesis_tqc())
    assert sent(recv(r, rival, 1), SignedCommitVote) == []
    assert "discard" in r.note


def test_proposal_from_non_leader_is_dropped():
    r = started(2)
    p = sign_proposal(KEYS[3], block(), genesis_tqc())
    assert recv(r, p, 3) == []
    assert "not leader" in r.note


def test_proposal_with_invalid_justification_is_dropped():
    r = started(2)
    p = sign_proposal(KEYS[1], block(), genesis_tqc(ids=range(4)))
    assert sent(recv(r, p, 1), SignedCommitVote) == []
    assert "invalid" in r.note


def test_commit_quorum_commits_and_advances():
    r = started(2)
    b = block()
    recv(r, sign_proposal(KEYS[1], b, genesis_tqc()), 1)
    out = []
    for i in (0, 1, 3, 4):
        out += recv(r, sign_commit_vote(KEYS[i], vote_for(1, b)), i)
    assert [blk for blk, _ in r.state.committed_blocks] == [b]
    assert r.state.view == 2 and r.state.phase == Phase.PREPARE
    [nv] = sent(out, NewView)
    assert nv.justification.vote == vote_for(1, b)
    assert ResetTimer(CFG.delta_timeout) in out


def test_duplicate_and_stale_votes_are_ignored():
    r = started(2)
    b = block()
    recv(r, sign_proposal(KEYS[1], b, genesis_tqc()), 1)
    v = sign_commit_vote(KEYS[3], vote_for(1, b))
    recv(r, v, 3)
    recv(r, v, 3)
    assert r.note.startswith("ignore")
    assert len(r.state.commit_pool[v.vote]) == 2
    recv(r, sign_timeout_vote(KEYS[3], TimeoutVote(0, None, None), None), 3)
    assert "stale" in r.note


def test_new_view_with_commit_qc_commits_a_laggard():
    r = started(3)
    b = block()
    recv(r, sign_proposal(KEYS[1], b, genesis_tqc()), 1)
    out = recv(r, sign_new_view(KEYS[0], cqc(1, b)), 0)
    assert [blk for blk, _ in r.state.committed_blocks] == [b]
    assert r.state.view == 2
    assert sent(out, NewView)


def test_commit_qc_without_block_waits_for_sync():
    r = started(3)
    b = block()
    qc = cqc(1, b)
    recv(r, sign_new_view(KEYS[0], qc), 0)
    assert r.state.committed_blocks == [] and 0 in r.state.finalized
    r.handle(SyncBlock(b))
    assert [blk for blk, _ in r.state.committed_blocks] == [b]


def test_bad_sync_commit_is_rejected():
    r = started(3)
    b = block()
    r.handle(SyncCommit(block(tag="z"), cqc(1, b)))
    assert r.state.committed_blocks == [] and "bad" in r.note


def test_timer_sends_one_timeout_vote_with_high_vote():
    r = in_view_1(2)
    b = block()
    # leader of view 2 is replica 2, so use view 1 proposal from leader 1
    recv(r, sign_proposal(KEYS[1], b, genesis_tqc()), 1)
    [tv] = sent(r.handle(TimerFired()), SignedTimeoutVote)
    assert tv.vote == TimeoutVote(1, vote_for(1, b), None)
    assert r.handle(TimerFired()) == []


def _tqc_view1(b, ids=range(5)):
    hv = vote_for(1, b)
    return make_timeout_qc(
        sign_timeout_vote(KEYS[i], TimeoutVote(1, hv, None), None) for i in ids
    )


def test_reproposal_must_carry_no_block():
    b = block()
    r = in_view_1(4)
    tqc = _tqc_view1(b)
    good = sign_proposal(KEYS[2], None, tqc)
    # the vote names the hash; the block itself need not be known locally
    [v] = sent(recv(r, good, 2), SignedCommitVote)
    assert v.vote == CommitVote(2, 0, hash_block(b))
    assert (0, hash_block(b)) not in r.state.cached_blocks

    r3 = in_view_1(4)
    bad = sign_proposal(KEYS[2], block(tag="new"), tqc)
    assert sent(recv(r3, bad, 2), SignedCommitVote) == []
    assert r3.evidence


def test_proposal_above_the_chain_is_deferred_until_sync():
    b0, b1 = block(0), block(1)
    r = started(4)
    p = sign_proposal(KEYS[2], b1, cqc(1, b0))
    assert sent(recv(r, p, 2), SignedCommitVote) == []
    assert r.note.startswith("defer")
    out = r.handle(SyncCommit(b0, cqc(1, b0)))
    [v] = sent(out, SignedCommitVote)
    assert v.vote == vote_for(2, b1)


def test_view_jump_on_future_proposal():
    r = started(4)
    b0, b1 = block(0), block(1)
    r.handle(SyncCommit(b0, cqc(1, b0)))
    [v] = sent(recv(r, sign_proposal(KEYS[2], b1, cqc(1, b0)), 2), SignedCommitVote)
    assert r.state.view == 2 and v.vote.view == 2


def test_duplicate_new_view_is_ignored():
    r = started(3)
    nv = sign_new_view(KEYS[0], genesis_tqc())
    recv(r, nv, 0)
    assert recv(r, nv, 0) == []
    assert "duplicate" in r.note


def test_unknown_event_type():
    with pytest.raises(TypeError):
        Replica(0, CFG).handle(object())
