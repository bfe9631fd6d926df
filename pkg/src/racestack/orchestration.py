"""Supervision state machine: diagnostics, watchdog, graded emergency
responses, and the merge of race-control and basestation behavior requests
into one orchestration command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum


class DiagLevel(IntEnum):
    OK = 0
    WARN = 1
    ERROR = 2
    STALE = 3


class EmergencyLevel(IntEnum):
    NONE = 0
    SAFE_STOP = 1
    EMERGENCY_STOP = 2
    HARD_EMERGENCY = 3


@dataclass(frozen=True)
class DiagnosticReport:
    module: str
    level: DiagLevel
    metrics: dict = field(default_factory=dict)
    timestamp: float = 0.0

    def __post_init__(self):
        if self.level == DiagLevel.STALE:
            raise ValueError("modules never self-report Stale; the watchdog assigns it")


@dataclass(frozen=True)
class OrchestrationCommand:
    max_velocity: float = math.inf
    overtaking_permitted: bool = True
    following_distance: float = 0.0
    pit_requested: bool = False
    emergency_level: EmergencyLevel = EmergencyLevel.NONE

    def __post_init__(self):
        if self.max_velocity < 0:
            raise ValueError("max_velocity must be nonnegative")


VALID_FLAGS = ("green", "yellow", "red", "checkered", "custom")
VALID_SOURCES = ("race_control", "basestation")


@dataclass(frozen=True)
class FlagRequest:
    source: str
    flag: str
    sequence: int
    timestamp: float = 0.0
    speed: float | None = None          # yellow flag speed, m/s
    fields: dict = field(default_factory=dict)  # custom flag command fields

    def __post_init__(self):
        if self.source not in VALID_SOURCES:
            raise ValueError(f"unknown source '{self.source}'")
        if self.flag not in VALID_FLAGS:
            raise ValueError(f"unknown flag '{self.flag}'")
        if self.flag == "yellow" and (self.speed is None or self.speed < 0):
            raise ValueError("yellow flag needs a nonnegative speed")


# default response policy: (module, level) -> emergency response
DEFAULT_POLICY: dict[tuple[str, DiagLevel], EmergencyLevel] = {
    ("planner", DiagLevel.ERROR): EmergencyLevel.EMERGENCY_STOP,
    ("planner", DiagLevel.STALE): EmergencyLevel.EMERGENCY_STOP,
    ("controller", DiagLevel.STALE): EmergencyLevel.HARD_EMERGENCY,
    ("controller", DiagLevel.ERROR): EmergencyLevel.HARD_EMERGENCY,
    ("state", DiagLevel.STALE): EmergencyLevel.HARD_EMERGENCY,
    ("prediction", DiagLevel.ERROR): EmergencyLevel.SAFE_STOP,
    ("prediction", DiagLevel.STALE): EmergencyLevel.SAFE_STOP,
}


def watchdog_tick(reports: dict[str, DiagnosticReport], now: float,
                  timeout: float = 0.5) -> dict[str, DiagLevel]:
    """Current level per module: the reported level while fresh, Stale once
    the newest report is older than the timeout."""
    if timeout <= 0:
        raise ValueError("watchdog timeout must be positive")
    levels = {}
    for module, rep in reports.items():
        if now - rep.timestamp > timeout:
            levels[module] = DiagLevel.STALE
        else:
            levels[module] = rep.level
    return levels


def decide_emergency(levels: dict[str, DiagLevel],
                     policy: dict | None = None) -> EmergencyLevel:
    """Maximum-severity response across all module/level pairs."""
    policy = DEFAULT_POLICY if policy is None else policy
    response = EmergencyLevel.NONE
    for module, level in levels.items():
        response = max(response, policy.get((module, level), EmergencyLevel.NONE))
    return response


def _flag_command(req: FlagRequest | None) -> OrchestrationCommand:
    if req is None:
        return OrchestrationCommand()
    if req.flag == "green":
        return OrchestrationCommand()
    if req.flag == "yellow":
        return OrchestrationCommand(max_velocity=float(req.speed),
                                    overtaking_permitted=False)
    if req.flag == "red":
        return OrchestrationCommand(emergency_level=EmergencyLevel.SAFE_STOP,
                                    overtaking_permitted=False)
    if req.flag == "checkered":
        return OrchestrationCommand(pit_requested=True)
    # custom: explicit fields
    return OrchestrationCommand(
        max_velocity=float(req.fields.get("max_velocity", math.inf)),
        overtaking_permitted=bool(req.fields.get("overtaking_permitted", True)),
        following_distance=float(req.fields.get("following_distance", 0.0)),
        pit_requested=bool(req.fields.get("pit_requested", False)),
    )


def merge_requests(race_control: FlagRequest | None,
                   basestation: FlagRequest | None,
                   mode: str = "official") -> OrchestrationCommand:
    """Field-wise most-restrictive merge. Race control always applies;
    basestation requests only count in testing mode."""
    if mode not in ("testing", "official"):
        raise ValueError("mode must be 'testing' or 'official'")
    rc = _flag_command(race_control)
    if mode != "testing" or basestation is None:
        return rc
    bs = _flag_command(basestation)
    return OrchestrationCommand(
        max_velocity=min(rc.max_velocity, bs.max_velocity),
        overtaking_permitted=rc.overtaking_permitted and bs.overtaking_permitted,
        following_distance=max(rc.following_distance, bs.following_distance),
        pit_requested=rc.pit_requested or bs.pit_requested,
        emergency_level=max(rc.emergency_level, bs.emergency_level),
    )


@dataclass
class IncidentRecord:
    timestamp: float
    cause: str
    level: EmergencyLevel


class Orchestrator:
    """Per-vehicle supervision: consumes diagnostic reports and flag requests
    in timestamp order, emits one orchestration command per tick.

    The fault-driven emergency level latches (monotone within an incident)
    until an explicit basestation clear in testing mode. Flag-driven
    restrictions follow the currently active flags.
    """

    def __init__(self, mode: str = "official", watchdog_timeout: float = 0.5,
                 policy: dict | None = None,
                 expected_modules: tuple = ("planner", "prediction", "controller", "state")):
        if mode not in ("testing", "official"):
            raise ValueError("mode must be 'testing' or 'official'")
        self.mode = mode
        self.watchdog_timeout = watchdog_timeout
        self.policy = DEFAULT_POLICY if policy is None else policy
        self.expected_modules = expected_modules
        self.reports: dict[str, DiagnosticReport] = {}
        self.flags: dict[str, FlagRequest] = {}
        self._last_seq: dict[str, int] = {}
        self.fault_emergency = EmergencyLevel.NONE
        self.incident_log: list[IncidentRecord] = []
        self.levels: dict[str, DiagLevel] = {}
        self._was_stale: set[str] = set()
        self._armed_at: float | None = None

    # -- event intake ---------------------------------------------------------

    def submit_report(self, report: DiagnosticReport):
        self.reports[report.module] = report

    def submit_flag(self, req: FlagRequest):
        last = self._last_seq.get(req.source, -1)
        if req.sequence <= last:
            raise ValueError(
                f"flag sequence {req.sequence} from {req.source} not increasing (last {last})")
        self._last_seq[req.source] = req.sequence
        self.flags[req.source] = req

    def clear_emergency(self, source: str = "basestation", now: float = 0.0):
        """Explicit re-arm; only the basestation in testing mode may clear."""
        if self.mode != "testing" or source != "basestation":
            raise PermissionError("emergency clear requires basestation in testing mode")
        if self.fault_emergency != EmergencyLevel.NONE:
            self.incident_log.append(IncidentRecord(now, "manual clear", EmergencyLevel.NONE))
        self.fault_emergency = EmergencyLevel.NONE

    # -- evaluation -----------------------------------------------------------

    def tick(self, now: float) -> OrchestrationCommand:
        if self._armed_at is None:
            self._armed_at = now
        known = dict(self.reports)
        # expected modules that never reported count from the arming instant,
        # so startup gets one watchdog period of grace
        for module in self.expected_modules:
            known.setdefault(module, DiagnosticReport(module=module, level=DiagLevel.OK,
                                                      timestamp=self._armed_at))
        self.levels = watchdog_tick(known, now, self.watchdog_timeout)

        for module, level in self.levels.items():
            if level == DiagLevel.STALE and module not in self._was_stale:
                self._was_stale.add(module)
                self.incident_log.append(IncidentRecord(now, f"{module} stale", EmergencyLevel.NONE))
            elif level != DiagLevel.STALE and module in self._was_stale:
                self._was_stale.discard(module)
                self.incident_log.append(IncidentRecord(now, f"{module} recovered", EmergencyLevel.NONE))

        fault = decide_emergency(self.levels, self.policy)
        if fault > self.fault_emergency:
            cause = ", ".join(f"{m}={l.name}" for m, l in self.levels.items()
                              if self.policy.get((m, l), EmergencyLevel.NONE) == fault)
            self.fault_emergency = fault
            self.incident_log.append(IncidentRecord(now, cause, fault))

        merged = merge_requests(self.flags.get("race_control"),
                                self.flags.get("basestation"), self.mode)
        level = max(merged.emergency_level, self.fault_emergency)
        if level != merged.emergency_level:
            merged = replace(merged, emergency_level=level)
        return merged
