"""Every monitor passes on real runs and fails on a deliberately broken trace."""

import copy
from pathlib import Path

import pytest

from chonkybft.monitors import ALL, SAFETY, TIMING, check
from chonkybft.scenario import EXIT_FAIL, Outcome, Scenario, execute
from chonkybft.trace import Trace

ROOT = Path(__file__).resolve().parent.parent
GOLDEN = ROOT / "tests" / "golden" / "fig1_happy-seed0.json"


@pytest.fixture(scope="module")
def happy():
    trace = Trace.loads(GOLDEN.read_text())
    return trace, Scenario.from_dict(trace.scenario).config


@pytest.fixture(scope="module")
def lively():
    scenario = Scenario.load(ROOT / "scenarios" / "liveness_silent_follower.json")
    outcome = execute(scenario)
    assert outcome.ok
    return outcome.trace, scenario.config


def records_of(trace, node, ev=None):
    return [
        r for r in trace.records
        if r.get("node") == node and (ev is None or r.get("ev") == ev)
    ]


def emitted(trace, node, kind):
    for rec in records_of(trace, node):
        for msg in rec.get("emit", ()):
            if msg["type"] == kind:
                yield rec, msg


def with_commits(trace, node):
    return [r for r in records_of(trace, node) if r.get("commits")]


# -- mutations ----------------------------------------------------------------


def break_agreement(trace, cfg):
    with_commits(trace, 1)[0]["commits"][0][1] = "ffffffffffff"


def break_validity(trace, cfg):
    # same fake hash everywhere, so only validity can notice
    for rec in trace.records:
        for entry in rec.get("commits", ()):
            entry[1] = "ffffffffffff"


def break_single_vote(trace, cfg):
    rec, vote = next(emitted(trace, 2, "CommitVote"))
    twin = dict(vote, id=10_000, hash="eeeeeeeeeeee")
    later = records_of(trace, 2)[-1]
    later.setdefault("emit", []).append(twin)


def break_commit_qc_uniqueness(trace, cfg):
    rec, nv = next(
        (r, m) for r, m in emitted(trace, 3, "NewView") if m["just"]["kind"] == "commit"
    )
    forged = copy.deepcopy(nv)
    forged["id"] = 10_001
    forged["just"]["hash"] = "dddddddddddd"
    records_of(trace, 4)[-1].setdefault("emit", []).append(forged)


def break_leader_equivocation(trace, cfg):
    rec, prop = next(emitted(trace, 0, "Proposal"))
    rival = copy.deepcopy(prop)
    rival["id"] = 10_002
    rival["block"]["hash"] = "cccccccccccc"
    rec["emit"].append(rival)


def break_qc_support(trace, cfg):
    rec, nv = next(emitted(trace, 1, "NewView"))
    nv["just"]["signers"] = cfg.quorum - 1


def break_monotonic_state(trace, cfg):
    records_of(trace, 2)[-1].setdefault("delta", {})["view"] = 0


def break_dedup(trace, cfg):
    acting = next(
        i for i, r in enumerate(trace.records)
        if r.get("ev") == "recv" and r.get("node") == 1 and "emit" in r
    )
    trace.records.append(copy.deepcopy(trace.records[acting]))


def break_delivery_bound(trace, cfg):
    gst = trace.final["gst"]
    horizon = trace.final["horizon"]
    rec, msg = next(
        (r, m) for r, m in emitted(trace, 0, "CommitVote")
        if r["t"] >= gst and r["t"] + cfg.delta_rcv <= horizon
    )
    trace.records = [
        r for r in trace.records
        if not (r.get("ev") == "recv" and r.get("node") == 2 and r["msg"]["id"] == msg["id"])
    ]


def _strip_view_changes(trace, nodes, after):
    for rec in trace.records:
        if rec.get("node") in nodes and rec["t"] > after:
            rec.get("delta", {}).pop("view", None)


def break_view_sync(trace, cfg):
    _strip_view_changes(trace, {2}, after=100)


def break_view_progress(trace, cfg):
    _strip_view_changes(trace, set(range(cfg.n)), after=100)


def break_commit_latency(trace, cfg):
    for rec in with_commits(trace, 3)[5:6]:
        rec["commits"] = []


MUTATIONS = {
    "agreement": ("happy", break_agreement),
    "validity": ("happy", break_validity),
    "single_vote_per_view": ("happy", break_single_vote),
    "commit_qc_uniqueness": ("lively", break_commit_qc_uniqueness),
    "no_leader_equivocation": ("happy", break_leader_equivocation),
    "qc_support": ("happy", break_qc_support),
    "monotonic_state": ("happy", break_monotonic_state),
    "dedup": ("happy", break_dedup),
    "delivery_bound": ("lively", break_delivery_bound),
    "view_sync": ("lively", break_view_sync),
    "view_progress": ("lively", break_view_progress),
    "commit_latency": ("lively", break_commit_latency),
}


def test_every_monitor_has_a_mutation():
    assert set(MUTATIONS) == set(ALL)
    assert len(ALL) == 12


def test_monitor_sets_are_disjoint():
    assert not set(SAFETY) & set(TIMING)


@pytest.mark.parametrize("name", sorted(MUTATIONS))
def test_mutated_trace_fails(name, request):
    fixture, mutate = MUTATIONS[name]
    trace, cfg = request.getfixturevalue(fixture)
    timing = name in TIMING
    assert check(trace, cfg, timing=timing)[name].ok

    broken = Trace.loads(trace.dumps())
    mutate(broken, cfg)
    verdict = check(broken, cfg, timing=timing, only={name})[name]
    assert not verdict.ok
    assert verdict.index is not None and 0 <= verdict.index < len(broken.records)
    assert verdict.detail

    report = check(broken, cfg, timing=timing)
    assert Outcome(broken, report, []).exit_code == EXIT_FAIL


def test_timing_monitors_skip_unless_requested(happy):
    trace, cfg = happy
    report = check(trace, cfg)
    for name in TIMING:
        assert report[name].ok and report[name].skipped
    assert report.ok


def test_only_restricts_the_report(happy):
    trace, cfg = happy
    report = check(trace, cfg, only={"agreement"})
    assert [v.name for v in report.verdicts] == ["agreement"]


def test_deadlines_past_the_horizon_are_not_judged(lively):
    trace, cfg = lively
    cut = Trace.loads(trace.dumps())
    horizon = cut.final["horizon"]
    # drop a message sent right at the end: its deadline lies past the horizon
    late = [r for r in cut.records if r["t"] > horizon - cfg.delta_rcv + 1]
    ids = {m["id"] for r in late for m in r.get("emit", ())}
    assert ids
    cut.records = [
        r for r in cut.records
        if not (r.get("ev") == "recv" and r["msg"]["id"] in ids)
    ]
    assert check(cut, cfg, timing=True, only={"delivery_bound"}).ok
