"""Scenario files: loading, validation, running, and expectation checks.

A scenario is a JSON document with a schema version, the committee
configuration, an adversary, a delivery schedule, a stop condition and the
outcome it expects. ``run_scenario`` returns an exit code that depends only
on the verdicts: 0 when every monitor and expectation passes, 1 on any
failure, 2 when the file does not parse or validate.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from .adversary import AdversaryError, Behavior, make_behavior
from .messages import Config, ConfigError
from .monitors import Report, check
from .sim import DelayRule, DeliverySchedule, Simulation, StopCondition
from .trace import Trace

SCHEMA_VERSION = 1
TRACE_DIR_ENV = "CHONKYBFT_TRACE_DIR"

EXIT_OK, EXIT_FAIL, EXIT_PARSE = 0, 1, 2

_INT = {"type": "integer", "minimum": 0}
_OPT_INT = {"type": ["integer", "null"], "minimum": 0}
_IDS = {"type": "array", "items": _INT}
_OPT_IDS = {"type": ["array", "null"], "items": _INT}

SCHEMA = {
    "type": "object",
    "required": ["schema", "name", "config"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "seed": _INT,
        "config": {
            "type": "object",
            "required": ["n", "f"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "f": _INT,
                "delta_timeout": {"type": "integer", "minimum": 1},
                "delta_rcv": {"type": "integer", "minimum": 1},
                "delta_sync": {"type": "integer", "minimum": 1},
                "leaders": {
                    "type": "object",
                    "patternProperties": {"^[0-9]+$": _INT},
                    "additionalProperties": False,
                },
                "unsafe": {"type": "boolean"},
            },
        },
        "adversary": {
            "type": ["object", "null"],
            "required": ["name"],
            "properties": {"name": {"type": "string"}, "controlled": _IDS},
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gst": _INT,
                "policy": {"enum": ["worst", "fixed", "uniform"]},
                "delay": _INT,
                "pre_gst_max_delay": _INT,
                "pre_gst_drop": {"type": "number", "minimum": 0, "maximum": 1},
                "retransmit_period": _OPT_INT,
                "sync": {"enum": ["worst", "uniform"]},
                "rules": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "type": {
                                "enum": ["Proposal", "CommitVote", "TimeoutVote", "NewView", None]
                            },
                            "senders": _OPT_IDS,
                            "recipients": _OPT_IDS,
                            "views": _OPT_IDS,
                            "delay": _INT,
                            "drop": {"type": "boolean"},
                        },
                    },
                },
            },
        },
        "stop": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_time": _OPT_INT,
                "max_steps": _OPT_INT,
                "commits": _OPT_INT,
                "views": _OPT_INT,
            },
        },
        "monitors": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"timing": {"type": "boolean"}},
        },
        "expect": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "chains": {
                    "type": "object",
                    "additionalProperties": {"type": "array", "items": {"type": "string"}},
                },
                "min_commits": _INT,
                "commit_via": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["node", "number", "via"],
                        "additionalProperties": False,
                        "properties": {
                            "node": _INT,
                            "number": _INT,
                            "via": {"enum": ["CommitVote", "NewView", "Proposal", "TimeoutVote", "sync"]},
                        },
                    },
                },
                "proposals": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["view"],
                        "additionalProperties": False,
                        "properties": {
                            "view": _INT,
                            "signer": _INT,
                            "fresh": {"type": "boolean"},
                            "number": _INT,
                            "high_vote": {"type": ["array", "null"]},
                            "subquorums": _INT,
                        },
                    },
                },
                "commit_matches_proposal": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["number", "view"],
                        "additionalProperties": False,
                        "properties": {"number": _INT, "view": _INT},
                    },
                },
            },
        },
    },
}


class ParseError(ValueError):
    """A scenario that does not parse; ``location`` says where."""

    def __init__(self, location: str, reason: str):
        super().__init__(f"{location}: {reason}")
        self.location = location
        self.reason = reason


@dataclass
class Scenario:
    name: str
    config: Config
    adversary: Optional[dict] = None
    schedule: DeliverySchedule = field(default_factory=DeliverySchedule)
    stop: StopCondition = field(default_factory=StopCondition)
    seed: int = 0
    timing: bool = False
    expect: dict = field(default_factory=dict)
    description: str = ""

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        cfg = self.config
        sched = self.schedule
        out = {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "config": {
                "n": cfg.n,
                "f": cfg.f,
                "delta_timeout": cfg.delta_timeout,
                "delta_rcv": cfg.delta_rcv,
                "delta_sync": cfg.delta_sync,
                "leaders": {str(v): r for v, r in cfg.leaders},
                "unsafe": cfg.unsafe,
            },
            "adversary": self.adversary,
            "schedule": {
                "gst": sched.gst,
                "policy": sched.policy,
                "delay": sched.delay,
                "pre_gst_max_delay": sched.pre_gst_max_delay,
                "pre_gst_drop": sched.pre_gst_drop,
                "retransmit_period": sched.retransmit_period,
                "sync": sched.sync,
                "rules": [
                    {
                        "type": r.type,
                        "senders": r.senders,
                        "recipients": r.recipients,
                        "views": r.views,
                        "delay": r.delay,
                        "drop": r.drop,
                    }
                    for r in sched.rules
                ],
            },
            "stop": {
                "max_time": self.stop.max_time,
                "max_steps": self.stop.max_steps,
                "commits": self.stop.commits,
                "views": self.stop.views,
            },
            "monitors": {"timing": self.timing},
            "expect": self.expect,
        }
        if self.description:
            out["description"] = self.description
        return out

    @classmethod
    def from_dict(cls, raw) -> "Scenario":
        validator = jsonschema.Draft202012Validator(SCHEMA)
        errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
        if errors:
            err = errors[0]
            raise ParseError(_location(err.absolute_path), err.message)
        c = raw["config"]
        try:
            cfg = Config(
                n=c["n"],
                f=c["f"],
                delta_timeout=c.get("delta_timeout", 40),
                delta_rcv=c.get("delta_rcv", 5),
                delta_sync=c.get("delta_sync", 10),
                leaders=tuple(sorted((int(v), r) for v, r in c.get("leaders", {}).items())),
                unsafe=c.get("unsafe", False),
            )
        except ConfigError as exc:
            raise ParseError("config", str(exc)) from exc
        s = raw.get("schedule", {})
        schedule = DeliverySchedule(
            gst=s.get("gst", 0),
            policy=s.get("policy", "worst"),
            delay=s.get("delay", 1),
            pre_gst_max_delay=s.get("pre_gst_max_delay", 0),
            pre_gst_drop=s.get("pre_gst_drop", 0.0),
            retransmit_period=s.get("retransmit_period"),
            sync=s.get("sync", "worst"),
            rules=[DelayRule(**r) for r in s.get("rules", [])],
        )
        st = raw.get("stop", {})
        stop = StopCondition(**{k: st.get(k) for k in ("max_time", "max_steps", "commits", "views")})
        if all(v is None for v in vars(stop).values()):
            raise ParseError("stop", "a run needs at least one stop condition")
        adversary = raw.get("adversary")
        if adversary is not None:
            try:
                make_behavior(adversary, cfg)
            except AdversaryError as exc:
                raise ParseError("adversary", str(exc)) from exc
        return cls(
            name=raw["name"],
            config=cfg,
            adversary=adversary,
            schedule=schedule,
            stop=stop,
            seed=raw.get("seed", 0),
            timing=raw.get("monitors", {}).get("timing", False),
            expect=raw.get("expect", {}),
            description=raw.get("description", ""),
        )

    @classmethod
    def loads(cls, text: str) -> "Scenario":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {exc.lineno} column {exc.colno}", exc.msg) from exc
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ParseError(str(path), exc.strerror or str(exc)) from exc
        try:
            return cls.loads(text)
        except ParseError as exc:
            raise ParseError(f"{path}: {exc.location}", exc.reason) from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    # -- running ------------------------------------------------------------

    def behavior(self) -> Optional[Behavior]:
        return None if self.adversary is None else make_behavior(self.adversary, self.config)

    def simulation(self, seed: Optional[int] = None, record: bool = True) -> Simulation:
        seed = self.seed if seed is None else seed
        return Simulation(
            self.config,
            self.schedule,
            self.behavior(),
            seed=seed,
            stop=self.stop,
            record=record,
            scenario=self.to_dict(),
        )


def _location(path) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else part)
    return out or "<root>"


@dataclass
class Outcome:
    trace: Trace
    report: Report
    failed_expectations: list[str]
    trace_path: Optional[Path] = None

    @property
    def ok(self) -> bool:
        return self.report.ok and not self.failed_expectations

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.ok else EXIT_FAIL


def execute(scenario: Scenario, seed: Optional[int] = None) -> Outcome:
    trace = scenario.simulation(seed).run()
    report = check(trace, scenario.config, timing=scenario.timing)
    trace.monitors = report.to_dict()
    return Outcome(trace, report, check_expectations(trace, scenario))


def trace_dir() -> Path:
    return Path(os.environ.get(TRACE_DIR_ENV, "traces"))


def save_trace(trace: Trace, name: str, directory: Optional[Path] = None) -> Path:
    directory = trace_dir() if directory is None else Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}-seed{trace.seed}.json"
    path.write_text(trace.dumps())
    return path


def run_scenario(path) -> tuple[Optional[Trace], Optional[Report], int]:
    """Load, run and judge one scenario file.

    Parse errors give exit code 2 and no trace. A failing run is written to
    the trace directory so the counterexample can be replayed.
    """
    try:
        scenario = Scenario.load(path)
    except ParseError:
        return None, None, EXIT_PARSE
    outcome = execute(scenario)
    if not outcome.ok or TRACE_DIR_ENV in os.environ:
        outcome.trace_path = save_trace(outcome.trace, scenario.name)
    return outcome.trace, outcome.report, outcome.exit_code


# -- expectations -------------------------------------------------------------


def _proposals(trace: Trace) -> dict[int, dict]:
    """First proposal sent for each view, by a correct or faulty leader."""
    out: dict[int, dict] = {}
    for rec in trace.records:
        msgs = [rec["msg"]] if rec.get("ev") == "adv_send" else rec.get("emit", ())
        for msg in msgs:
            if msg.get("type") == "Proposal" and msg.get("view") is not None:
                out.setdefault(msg["view"], msg)
    return out


def _commit_records(trace: Trace) -> dict[tuple[int, int], dict]:
    out = {}
    for rec in trace.records:
        for number, h, _payload, _qc_view in rec.get("commits", ()):
            out.setdefault((rec["node"], number), {"rec": rec, "hash": h})
    return out


def check_expectations(trace: Trace, scenario: Scenario) -> list[str]:
    expect = scenario.expect
    final = trace.final
    problems = []
    for node, chain in expect.get("chains", {}).items():
        got = final["chains"].get(node)
        if got != chain:
            problems.append(f"replica {node} chain {got} != expected {chain}")
    if "min_commits" in expect:
        k = expect["min_commits"]
        short_chains = {n: len(c) for n, c in final["chains"].items() if len(c) < k}
        if short_chains:
            problems.append(f"replicas below {k} commits: {short_chains}")
    commits = _commit_records(trace)
    for item in expect.get("commit_via", ()):
        hit = commits.get((item["node"], item["number"]))
        if hit is None:
            problems.append(f"replica {item['node']} never committed #{item['number']}")
            continue
        rec = hit["rec"]
        via = rec["msg"]["type"] if rec["ev"] == "recv" else "sync"
        if via != item["via"]:
            problems.append(
                f"replica {item['node']} committed #{item['number']} via {via}, "
                f"expected {item['via']}"
            )
    proposals = _proposals(trace)
    for item in expect.get("proposals", ()):
        p = proposals.get(item["view"])
        if p is None:
            problems.append(f"no proposal for view {item['view']}")
            continue
        if "signer" in item and p["signer"] != item["signer"]:
            problems.append(f"view {item['view']} proposed by {p['signer']}")
        if "fresh" in item and (p["block"] is not None) != item["fresh"]:
            kind = "fresh" if p["block"] is not None else "a re-proposal"
            problems.append(f"view {item['view']} proposal is {kind}")
        if "number" in item and p["implied"][0] != item["number"]:
            problems.append(f"view {item['view']} proposes #{p['implied'][0]}")
        if "high_vote" in item:
            hv = p["just"].get("hv") if p["just"]["kind"] == "timeout" else None
            if hv != item["high_vote"]:
                problems.append(f"view {item['view']} justification high vote is {hv}")
        if "subquorums" in item:
            tally = p["just"].get("tally", [])
            k = sum(1 for vote, c in tally if vote is not None and c >= scenario.config.subquorum)
            if k != item["subquorums"]:
                problems.append(f"view {item['view']} justification has {k} subquorums")
    for item in expect.get("commit_matches_proposal", ()):
        p = proposals.get(item["view"])
        block = p and p.get("block")
        if not block:
            problems.append(f"no fresh proposal in view {item['view']}")
            continue
        for node in final["chains"]:
            hit = commits.get((int(node), item["number"]))
            if hit is None or hit["hash"] != block["hash"]:
                problems.append(
                    f"replica {node} #{item['number']} does not match the view "
                    f"{item['view']} proposal"
                )
    return problems
