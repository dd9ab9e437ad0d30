"""Failure-free throughput smoke benchmark.

Runs ``views`` views with every replica correct (or a few silent ones),
then reports wall time, simulated views per second, handler counts, and
whether each view saw exactly one proposal and at least n - f commit votes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

from .adversary import Silent
from .messages import Config
from .sim import DeliverySchedule, Simulation, StopCondition


@dataclass
class BenchResult:
    n: int
    f: int
    views: int
    wall_s: float
    handlers: dict[str, int]
    proposals: dict[int, int]
    commit_votes: dict[int, int]
    commits: int
    deliveries: int

    @property
    def views_per_s(self) -> float:
        return self.views / self.wall_s if self.wall_s else float("inf")

    def one_proposal_per_view(self) -> bool:
        return all(self.proposals.get(v, 0) == 1 for v in range(1, self.views + 1))

    def quorum_votes_per_view(self) -> bool:
        quorum = self.n - self.f
        return all(
            self.commit_votes.get(v, 0) >= quorum for v in range(1, self.views + 1)
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "f": self.f,
            "views": self.views,
            "wall_s": round(self.wall_s, 3),
            "views_per_s": round(self.views_per_s, 2),
            "commits": self.commits,
            "deliveries": self.deliveries,
            "handlers": dict(sorted(self.handlers.items())),
            "one_proposal_per_view": self.one_proposal_per_view(),
            "quorum_votes_per_view": self.quorum_votes_per_view(),
            "min_commit_votes": min(
                (self.commit_votes.get(v, 0) for v in range(1, self.views + 1)), default=0
            ),
        }


def bench(
    n: int,
    views: int,
    f: Optional[int] = None,
    silent: tuple[int, ...] = (),
    leaders: tuple[tuple[int, int], ...] = (),
) -> BenchResult:
    f = (n - 1) // 5 if f is None else f
    cfg = Config(n, f, leaders=leaders)
    adversary = Silent(silent) if silent else None
    sim = Simulation(
        cfg,
        DeliverySchedule(policy="fixed", delay=1),
        adversary,
        stop=StopCondition(views=views + 1),
        record=False,
    )
    start = time.perf_counter()
    sim.run()
    wall = time.perf_counter() - start
    return BenchResult(
        n=n,
        f=f,
        views=views,
        wall_s=wall,
        handlers=dict(sim.stats["handlers"]),
        proposals=dict(sim.stats["proposals"]),
        commit_votes=dict(sim.stats["commit_votes"]),
        commits=min(len(c) for c in sim.chains().values()),
        deliveries=sim.stats["deliveries"],
    )
