"""Deterministic fixed-step multi-agent race loop.

At every planner tick each agent receives the true states of all other
agents (virtual detection), runs prediction, planning, and orchestration;
dynamics advance at the simulation rate between ticks. Identical scenario
and seed produce identical results; live commands are recorded into a log
that replays deterministically.
"""

from __future__ import annotations

import json
import math
import time as walltime
from dataclasses import dataclass, field

import numpy as np

from .agent import Agent
from .orchestration import EmergencyLevel, FlagRequest
from .planner import rect_penetration
from .prediction import ConeParams
from .scenario import Scenario, ScenarioAssets, load_assets
from .wire import CommandLog, Hub

CAR_LENGTH = 5.0
CAR_WIDTH = 1.9
GRID_GAP = 10.0
GRID_STAGGER = 1.5


class ScenarioRuntimeError(RuntimeError):
    pass


@dataclass
class RaceResult:
    scenario_name: str
    seed: int
    mode: str
    track_length: float
    sim_time: float
    agents: list = field(default_factory=list)
    overtake_events: list = field(default_factory=list)
    collision_events: list = field(default_factory=list)
    emergency_events: list = field(default_factory=list)
    lap_events: list = field(default_factory=list)
    command_log: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=1, default=_jsonify)

    def agent(self, name: str) -> dict:
        for a in self.agents:
            if a["name"] == name:
                return a
        raise KeyError(name)


def _jsonify(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


class _OvertakeTracker:
    """Right-of-way bookkeeping for one ordered (attacker, defender) pair.

    An attempt starts when the trailing car is within the engagement length
    and beyond the lateral cone threshold; it completes when the attacker
    leads by a car length for a sustained second.
    """

    def __init__(self, attacker: str, defender: str, cone: ConeParams,
                 length: float):
        self.attacker = attacker
        self.defender = defender
        self.cone = cone
        self.length = length
        self.state = "idle"       # idle | attempt
        self.lead_since: float | None = None

    def step(self, t: float, att, dfd, events: list):
        ds_behind = (dfd.fp.s - att.fp.s) % self.length
        ds_ahead = (att.fp.s - dfd.fp.s) % self.length
        dn = abs(att.fp.n - dfd.fp.n)

        if self.state == "idle":
            if 0.0 < ds_behind <= self.cone.length \
                    and dn > self.cone.half_width_at(ds_behind):
                self.state = "attempt"
                self.lead_since = None
                events.append({"t": round(t, 4), "event": "overtake_attempt",
                               "attacker": self.attacker, "defender": self.defender,
                               "s": round(att.fp.s, 2)})
        else:
            if CAR_LENGTH <= ds_ahead < self.length / 2:
                if self.lead_since is None:
                    self.lead_since = t
                elif t - self.lead_since >= 1.0:
                    events.append({"t": round(t, 4), "event": "overtake",
                                   "attacker": self.attacker,
                                   "defender": self.defender,
                                   "s": round(att.fp.s, 2)})
                    self.state = "idle"
                    self.lead_since = None
            else:
                self.lead_since = None
                if ds_behind > 1.5 * self.cone.length:
                    self.state = "idle"


def detect_collision(agents: list[Agent], active: dict, t: float,
                     events: list) -> list[tuple[Agent, Agent]]:
    """Oriented-rectangle overlap per pair; events on the rising edge only."""
    hits = []
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            a, b = agents[i], agents[j]
            if a.status == "crashed" and b.status == "crashed":
                continue
            pen = rect_penetration((a.state.x, a.state.y), a.state.psi,
                                   (b.state.x, b.state.y), b.state.psi,
                                   CAR_LENGTH, CAR_WIDTH)
            key = (a.name, b.name)
            if pen > 0.0:
                if not active.get(key, False):
                    active[key] = True
                    events.append({"t": round(t, 4), "event": "collision",
                                   "agents": [a.name, b.name],
                                   "s": round(a.fp.s, 2),
                                   "penetration": round(pen, 3)})
                    hits.append((a, b))
            else:
                active[key] = False
    return hits


def run_race(scenario: Scenario, hub: Hub | None = None,
             replay_log: CommandLog | None = None,
             realtime: bool = False,
             assets: ScenarioAssets | None = None) -> RaceResult:
    """Run one race to completion and score it."""
    scenario.validate()
    rng = np.random.default_rng(scenario.seed)  # reserved for scenario noise
    del rng
    if assets is None:
        assets = load_assets(scenario)
    ref = assets.ref
    agents = [Agent(a, assets, orchestration_mode=scenario.orchestration_mode)
              for a in assets.agents]

    # rolling start grid: slots stacked behind the line, staggered laterally
    for ag in agents:
        slot = ag.spec.grid_slot
        s0 = (ref.length - GRID_GAP * (slot + 1)) % ref.length
        n0 = GRID_STAGGER if slot % 2 else -GRID_STAGGER
        if len(agents) == 1:
            n0 = 0.0
        ag.place_on_grid(s0, n0, scenario.rolling_speed)

    dt = scenario.sim.dt
    steps_per_plan = max(1, int(round(scenario.planner_period / dt)))
    telemetry_every = max(1, int(round(0.1 / dt)))
    command_log = CommandLog()
    flag_seq = {"race_control": 0, "basestation": 0}

    events: list = []
    overtakes: list = []
    collisions: list = []
    emergencies: list = []
    laps: list = []
    trackers = [
        _OvertakeTracker(a.name, b.name, b.spec.cone, ref.length)
        for a in agents for b in agents if a is not b
    ]
    collision_active: dict = {}
    prev_emergency = {ag.name: EmergencyLevel.NONE for ag in agents}
    prev_laps = {ag.name: 0 for ag in agents}
    pending_faults = sorted(scenario.fault_events, key=lambda e: e.t)
    pending_flags = sorted(scenario.flag_events, key=lambda e: e.t)

    def apply_command(cmd: dict, now: float, tick: int):
        command_log.record(tick, cmd)
        if cmd["action"] == "flag":
            source = cmd["source"]
            if source == "basestation" and scenario.orchestration_mode != "testing":
                if hub:
                    hub.broadcast({"type": "error", "t": round(now, 3),
                                   "reason": "basestation commands rejected in official mode"})
                return
            flag_seq[source] += 1
            req = FlagRequest(source=source, flag=cmd["flag"],
                              sequence=flag_seq[source], timestamp=now,
                              speed=cmd.get("speed"),
                              fields=cmd.get("fields", {}))
            for ag in agents:
                ag.orchestrator.submit_flag(req)
        elif cmd["action"] == "clear_emergency":
            for ag in agents:
                try:
                    ag.orchestrator.clear_emergency(cmd.get("source", "basestation"), now)
                except PermissionError:
                    pass
        elif cmd["action"] == "inject_fault":
            for ag in agents:
                if ag.name == cmd["agent"]:
                    ag.inject_fault(cmd["module"], cmd.get("kind", "silent"),
                                    until=now + cmd.get("duration", 1e9))

    t = 0.0
    step = 0
    tick = 0
    wall_start = walltime.monotonic()
    while t < scenario.t_max:
        if step % steps_per_plan == 0:
            # scenario-scripted events fire at tick boundaries
            while pending_flags and pending_flags[0].t <= t:
                ev = pending_flags.pop(0)
                req = ev.request
                apply_command({"type": "command", "action": "flag",
                               "source": req.source, "flag": req.flag,
                               "speed": req.speed, "fields": req.fields},
                              t, tick)
            while pending_faults and pending_faults[0].t <= t:
                ev = pending_faults.pop(0)
                apply_command({"type": "command", "action": "inject_fault",
                               "agent": ev.agent, "module": ev.module,
                               "kind": ev.kind, "duration": ev.duration},
                              t, tick)
            if replay_log is not None:
                for cmd in replay_log.at_tick(tick):
                    apply_command(cmd, t, tick)
            if hub is not None:
                while not hub.commands.empty():
                    apply_command(hub.commands.get_nowait(), t, tick)

            # lockstep virtual detection: states sampled before anyone plans
            snapshot = {ag.name: ag.tracked_object(t) for ag in agents}
            for ag in agents:
                if ag.status in ("finished", "stopped", "crashed"):
                    continue
                others = [snapshot[o.name] for o in agents if o is not ag
                          and o.status != "stopped"]
                ag.plan_tick(t, others)
                lvl = ag.command.emergency_level
                if lvl > prev_emergency[ag.name]:
                    emergencies.append({"t": round(t, 4), "event": "emergency",
                                        "agent": ag.name, "level": lvl.name})
                    if hub:
                        hub.broadcast({"type": "race_event", "t": round(t, 3),
                                       "event": "emergency", "agent": ag.name,
                                       "level": lvl.name})
                prev_emergency[ag.name] = max(prev_emergency[ag.name], lvl)
                if lvl == EmergencyLevel.NONE:
                    prev_emergency[ag.name] = EmergencyLevel.NONE
            tick += 1

        for ag in agents:
            ag.control_tick(t, dt)

        # pairwise safety metrics on true states
        racing = [ag for ag in agents if ag.status in ("racing", "finished")]
        for a in racing:
            for b in racing:
                if a is b:
                    continue
                dsb = (b.fp.s - a.fp.s) % ref.length
                ds = dsb if dsb < ref.length / 2 else dsb - ref.length
                v_rel = max(0.0, a.state.v - b.state.v)
                ea, eb = a.spec.planner.ellipse.axes(v_rel)
                d_e = math.hypot(ds / float(ea), (a.fp.n - b.fp.n) / float(eb))
                if d_e < a.counters.min_ellipse_distance:
                    a.counters.min_ellipse_distance = d_e

        for hit_a, hit_b in detect_collision(agents, collision_active, t, collisions):
            for ag in (hit_a, hit_b):
                if ag.status == "racing":
                    ag.status = "crashed"
        for tr in trackers:
            att = next(a for a in agents if a.name == tr.attacker)
            dfd = next(a for a in agents if a.name == tr.defender)
            # right-of-way bookkeeping starts once both have taken the start line
            if att.status == "racing" and dfd.status in ("racing", "finished") \
                    and att.progress > 0 and dfd.progress > 0:
                tr.step(t, att, dfd, overtakes)

        for ag in agents:
            if ag.laps_done > prev_laps[ag.name]:
                prev_laps[ag.name] = ag.laps_done
                rec = {"t": round(ag.lap_crossings[-1], 4), "event": "lap",
                       "agent": ag.name, "lap": ag.laps_done,
                       "lap_time": round(ag.lap_times[-1], 4)}
                laps.append(rec)
                if hub:
                    hub.broadcast({"type": "race_event", **rec})

        if hub is not None and step % telemetry_every == 0:
            for ag in agents:
                hub.broadcast(telemetry_record(ag, t))
            for ag in agents:
                for module, level in ag.orchestrator.levels.items():
                    hub.broadcast({"type": "diagnostic", "t": round(t, 3),
                                   "agent": ag.name, "module": module,
                                   "level": level.name})

        t += dt
        step += 1
        if all(ag.status in ("finished", "stopped", "crashed") for ag in agents):
            break
        if realtime:
            lag = t - (walltime.monotonic() - wall_start)
            if lag > 0:
                walltime.sleep(min(lag, 0.05))

    # finishing order: finished by crossing time, the rest by progress
    def sort_key(ag: Agent):
        if ag.status == "finished" and len(ag.lap_crossings) > scenario.laps - 1:
            return (0, ag.lap_crossings[scenario.laps])
        return (1, -ag.progress)

    ranked = sorted(agents, key=sort_key)
    result = RaceResult(
        scenario_name=scenario.name, seed=scenario.seed, mode=scenario.mode,
        track_length=round(ref.length, 3), sim_time=round(t, 4),
        overtake_events=overtakes, collision_events=collisions,
        emergency_events=emergencies, lap_events=laps,
        command_log=command_log.entries,
    )
    for pos, ag in enumerate(ranked, start=1):
        result.agents.append({
            "name": ag.name,
            "position": pos,
            "status": ag.status,
            "laps": ag.laps_done,
            "lap_times": [float(round(x, 4)) for x in ag.lap_times],
            "finish_time": float(round(ag.lap_crossings[scenario.laps], 4))
            if len(ag.lap_crossings) > scenario.laps else None,
            "tc_interventions": ag.counters.tc,
            "abs_interventions": ag.counters.abs_,
            "plan_failures": ag.counters.plan_failures,
            "max_plan_deviation": round(ag.counters.max_plan_deviation, 4),
            "min_ellipse_distance": round(ag.counters.min_ellipse_distance, 4)
            if math.isfinite(ag.counters.min_ellipse_distance) else None,
            "progress": round(ag.progress, 2),
            "final_speed": round(ag.state.v, 3),
            "tire_temp": round(ag.state.t_tire, 2),
            "incidents": [
                {"t": round(r.timestamp, 4), "cause": r.cause, "level": r.level.name}
                for r in ag.orchestrator.incident_log],
        })
    events.extend(overtakes)
    return result


def telemetry_record(ag: Agent, t: float) -> dict:
    dev = 0.0
    if ag.trajectory is not None:
        dev = ag.fp.n - ag.trajectory.point_at(ag.state.time - ag.traj_origin)["n"]
    return {
        "type": "telemetry", "t": round(t, 3), "id": ag.name,
        "x": round(ag.state.x, 3), "y": round(ag.state.y, 3),
        "psi": round(ag.state.psi, 4), "v": round(ag.state.v, 3),
        "ax": round(ag.state.ax, 3), "ay": round(ag.state.ay, 3),
        "psi_dot": round(ag.state.psi_dot, 4),
        "s": round(ag.fp.s, 2), "n": round(ag.fp.n, 3),
        "n_dev": round(dev, 4),
        "lap": ag.laps_done, "t_tire": round(ag.state.t_tire, 2),
        "tc_count": ag.counters.tc, "abs_count": ag.counters.abs_,
        "status": ag.status,
        "emergency": ag.command.emergency_level.name,
    }
