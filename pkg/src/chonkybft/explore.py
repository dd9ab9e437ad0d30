"""Randomized exploration: many short seeded runs checked by the monitors.

Each seed deterministically picks an adversary, a network schedule and a
step budget, so any violating run is written out as a self-contained trace
whose embedded scenario reproduces it exactly.

``guided=True`` samples from a narrow family aimed at the quorum
intersection argument: an equivocating leader, commit votes of its view
routed to a few replicas only, and those replicas cut off until far past
the end of the run. With n >= 5f + 1 the family is harmless; below that it
finds agreement violations quickly.
"""

from __future__ import annotations

import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .adversary import EquivocatingProposer, random_behavior
from .messages import Config
from .monitors import check
from .scenario import Scenario
from .sim import DelayRule, DeliverySchedule, StopCondition

MESSAGE_TYPES = ["Proposal", "CommitVote", "TimeoutVote", "NewView"]
GUIDED_HORIZON = 150


def _subset(rng: random.Random, items, lo: int = 0) -> list[int]:
    k = rng.randint(lo, len(items))
    return sorted(rng.sample(list(items), k))


def sample_scenario(cfg: Config, seed: int, steps: int) -> Scenario:
    """A random run: any shipped behaviour, random pre-GST chaos."""
    rng = random.Random(f"explore/{cfg.n}/{cfg.f}/{seed}")
    behavior = random_behavior(cfg, rng)
    gst = rng.choice([0, rng.randint(1, 120)])
    rules = []
    for _ in range(rng.randint(0, 2)):
        rules.append(
            DelayRule(
                type=rng.choice(MESSAGE_TYPES + [None]),
                senders=_subset(rng, range(cfg.n), 1) if rng.random() < 0.5 else None,
                recipients=_subset(rng, range(cfg.n), 1) if rng.random() < 0.5 else None,
                views=sorted(rng.sample(range(4), rng.randint(1, 2))),
                delay=rng.randint(0, 60),
                drop=rng.random() < 0.5,
            )
        )
    schedule = DeliverySchedule(
        gst=gst,
        policy="uniform",
        pre_gst_max_delay=rng.randint(0, 40),
        pre_gst_drop=rng.choice([0.0, 0.1, 0.3]),
        rules=rules,
        sync="uniform",
    )
    return Scenario(
        name=f"explore-n{cfg.n}-f{cfg.f}",
        config=cfg,
        adversary=behavior.to_dict(),
        schedule=schedule,
        stop=StopCondition(max_steps=steps * cfg.n, max_time=2000),
        seed=seed,
    )


def guided_scenario(cfg: Config, seed: int, steps: Optional[int] = None) -> Scenario:
    """Equivocating leader plus targeted commit-vote routing."""
    rng = random.Random(f"guided/{cfg.n}/{cfg.f}/{seed}")
    leader = cfg.leader(1)
    correct = [i for i in range(cfg.n) if i != leader]
    split = _subset(rng, correct, 1)
    routed = _subset(rng, split, 1)
    isolated = _subset(rng, routed)
    rules = [
        DelayRule(
            type="CommitVote",
            views=[1],
            recipients=[i for i in range(cfg.n) if i not in routed],
            drop=True,
        )
    ]
    if isolated:
        rules.append(DelayRule(senders=isolated, drop=True))
    adversary = EquivocatingProposer(
        [leader], view=1, split=split, tqc_size=rng.choice([None, cfg.quorum])
    )
    stop = StopCondition(max_time=GUIDED_HORIZON)
    if steps:
        stop.max_steps = steps * cfg.n
    return Scenario(
        name=f"guided-n{cfg.n}-f{cfg.f}",
        config=cfg,
        adversary=adversary.to_dict(),
        schedule=DeliverySchedule(gst=10**6, policy="fixed", delay=1, rules=rules),
        stop=stop,
        seed=seed,
    )


@dataclass
class RunResult:
    seed: int
    behavior: str
    failures: list[str]
    steps: int
    trace_text: Optional[str] = None


def run_one(args) -> RunResult:
    n, f, unsafe, seed, steps, guided = args
    cfg = Config(n, f, unsafe=unsafe)
    if steps == 0:
        return RunResult(seed, "none", [], 0)
    make = guided_scenario if guided else sample_scenario
    scenario = make(cfg, seed, steps)
    trace = scenario.simulation().run()
    report = check(trace, cfg)
    failures = [v.name for v in report.failures()]
    text = None
    if failures:
        trace.monitors = report.to_dict()
        text = trace.dumps()
    return RunResult(seed, scenario.adversary["name"], failures, trace.final["steps"], text)


@dataclass
class Summary:
    n: int
    f: int
    runs: int = 0
    steps: int = 0
    elapsed: float = 0.0
    violations: list[dict] = field(default_factory=list)
    behaviors: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "f": self.f,
            "runs": self.runs,
            "handler_steps": self.steps,
            "elapsed_s": round(self.elapsed, 2),
            "behaviors": dict(sorted(self.behaviors.items())),
            "violations": self.violations,
        }


def explore(
    n: int,
    f: int,
    seeds,
    steps: int = 30,
    unsafe: bool = False,
    guided: bool = False,
    workers: int = 1,
    out_dir: Optional[Path] = None,
    stop_after: Optional[int] = None,
) -> Summary:
    """Run every seed; persist violating traces under ``out_dir``.

    ``steps`` is a per-replica handler budget. ``stop_after`` ends the search
    once that many violations are found.
    """
    Config(n, f, unsafe=unsafe)  # reject bad configurations up front
    summary = Summary(n, f)
    jobs = [(n, f, unsafe, s, steps, guided) for s in seeds]
    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_one, jobs, chunksize=64))
    else:
        results = []
        for job in jobs:
            results.append(run_one(job))
            if stop_after and sum(1 for r in results if r.failures) >= stop_after:
                break
    for r in sorted(results, key=lambda r: r.seed):
        summary.runs += 1
        summary.steps += r.steps
        summary.behaviors[r.behavior] = summary.behaviors.get(r.behavior, 0) + 1
        if r.failures:
            entry = {"seed": r.seed, "behavior": r.behavior, "monitors": r.failures}
            if r.trace_text is not None and out_dir is not None:
                kind = "guided" if guided else "explore"
                path = Path(out_dir) / f"{kind}-n{n}-f{f}-seed{r.seed}.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(r.trace_text)
                entry["trace"] = str(path)
            summary.violations.append(entry)
    summary.elapsed = time.perf_counter() - start
    return summary
