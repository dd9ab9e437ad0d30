"""ChonkyBFT: a deterministic reference implementation and test harness.

The replica state machine is pure; the simulator drives it over a seeded
partially synchronous network with pluggable Byzantine behaviours, and the
monitors judge the resulting traces.
"""

from .messages import Config
from .replica import Replica
from .scenario import Scenario, execute, run_scenario
from .sim import DelayRule, DeliverySchedule, Simulation, StopCondition
from .trace import Trace

__version__ = "0.1.0"
