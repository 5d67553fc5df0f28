"""Exception hierarchy shared by the simulator, planners and CLI."""


class DiskBathError(Exception):
    """Base class for all package errors."""


class StuckParticle(DiskBathError):
    """A particle with zero velocity has no next boundary event."""


class NotOnDisk(DiskBathError):
    """A point that should lie on a disk boundary does not."""


class DynamicsHalted(DiskBathError):
    """The dynamics reached a configuration where it is undefined."""

    def __init__(self, reason, time, detail=None):
        self.reason = reason
        self.time = time
        self.detail = detail or {}
        super().__init__(f"{reason} at t={time!r}")


class SimultaneousSameDisk(DynamicsHalted):
    def __init__(self, time, detail=None):
        super().__init__("SimultaneousSameDisk", time, detail)


class NoPreimage(DiskBathError):
    """Free-flight coordinates that no injection inside the horizon can produce."""


class NoCollision(DiskBathError):
    """The trajectory misses the disk inside the admissible window."""


class InsufficientSamples(DiskBathError):
    pass


class PlanningError(DiskBathError):
    """Base class for planner failures; ``code`` is machine readable."""

    code = "planning_error"


class Infeasible(PlanningError):
    code = "infeasible"


class BudgetTooTight(PlanningError):
    code = "budget_too_tight"


class PlanSearchExhausted(PlanningError):
    code = "plan_search_exhausted"

    def __init__(self, message, reasons=None):
        super().__init__(message)
        self.reasons = list(reasons or [])


class NotAdmissible(PlanningError):
    code = "not_admissible"


class ConfigError(DiskBathError):
    pass
