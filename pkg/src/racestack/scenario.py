"""Scenario files: race format, track, grip maps, per-agent configuration,
and scripted events. JSON on disk, dataclasses in memory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .grip import AccelConstraintShape, GGGVDiagram, GripMap, make_gggv
from .orchestration import FlagRequest
from .planner import CostWeights, PlannerConfig, SafetyEllipse
from .prediction import ConeParams, PredictionThresholds
from .raceline import Raceline, centerline_raceline, offset_path_points, optimize_path
from .track import RawBounds, ReferenceLine, build_reference_line, load_track_file, prepare_track
from .tracks import build_builtin
from .vehicle import ControllerGains, SimParams, TireModel, TireTempParams


class ScenarioError(ValueError):
    pass


@dataclass
class FaultEvent:
    t: float
    agent: str
    module: str
    kind: str = "silent"        # "silent" | "error"
    duration: float = math.inf


@dataclass
class FlagEvent:
    t: float
    request: FlagRequest


@dataclass
class AgentSpec:
    name: str
    grid_slot: int
    shape_rho: float = 1.8
    theta_uplift: float = 1.0           # multiplies the agent's ground-truth grip
    belief_follows_truth: bool = True   # uplift also applied to the belief map
    temp_belief: bool = True            # planner/controller know the tire temperature
    temp_model: bool = True             # simulate tire temperature at all
    limit_fraction: float = 1.0         # scales the believed limits (0.9 = cautious)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    gains: ControllerGains = field(default_factory=ControllerGains)
    tire: TireModel = field(default_factory=TireModel)
    tire_temp: TireTempParams = field(default_factory=TireTempParams)
    cone: ConeParams = field(default_factory=ConeParams)
    thresholds: PredictionThresholds = field(default_factory=PredictionThresholds)
    start_tire_temp: float | None = None  # None -> ambient


@dataclass
class Scenario:
    name: str = "scenario"
    track: str = "builtin:stadium_chicane"
    mode: str = "time_trial"            # time_trial | attack_defend | final
    laps: int = 3
    rolling_speed: float = 12.0
    seed: int = 0
    orchestration_mode: str = "testing"
    gggv_file: str | None = None
    grip_belief_file: str | None = None
    grip_truth_file: str | None = None
    raceline_file: str | None = None    # None -> compute
    caps: list = field(default_factory=list)
    smoothing_cutoff: float = 40.0
    # corridor clearance for the offline path; sized to cover worst-case
    # closed-loop tracking deviation (the desk-scale stand-in for shifting
    # bounds where repeatable deviations occur)
    raceline_margin: float = 1.0
    agents: list[AgentSpec] = field(default_factory=list)
    flag_events: list[FlagEvent] = field(default_factory=list)
    fault_events: list[FaultEvent] = field(default_factory=list)
    sim: SimParams = field(default_factory=SimParams)
    planner_period: float = 0.05
    t_max: float = 600.0
    base_dir: Path = field(default_factory=Path)

    def validate(self):
        if not self.agents:
            raise ScenarioError("scenario needs at least one agent")
        slots = [a.grid_slot for a in self.agents]
        if len(set(slots)) != len(slots):
            raise ScenarioError("grid slots must be unique")
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names):
            raise ScenarioError("agent names must be unique")
        if self.mode not in ("time_trial", "attack_defend", "final"):
            raise ScenarioError(f"unknown race mode '{self.mode}'")
        if self.laps < 1:
            raise ScenarioError("laps must be >= 1")


def _build(cls, data: dict, **extra):
    """Construct a dataclass from a dict, rejecting unknown keys."""
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(data) - fields
    if unknown:
        raise ScenarioError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{**data, **extra})


def _agent_spec(data: dict) -> AgentSpec:
    data = dict(data)
    planner_d = data.pop("planner", {})
    weights_d = planner_d.pop("weights", None)
    ellipse_d = planner_d.pop("ellipse", None)
    if weights_d is not None:
        planner_d["weights"] = _build(CostWeights, weights_d)
    if ellipse_d is not None:
        planner_d["ellipse"] = _build(SafetyEllipse, ellipse_d)
    data["planner"] = _build(PlannerConfig, planner_d)
    for key, cls in (("gains", ControllerGains), ("tire", TireModel),
                     ("tire_temp", TireTempParams), ("cone", ConeParams),
                     ("thresholds", PredictionThresholds)):
        if key in data:
            data[key] = _build(cls, data[key])
    return _build(AgentSpec, data)


def load_scenario(path) -> Scenario:
    path = Path(path)
    with open(path) as f:
        data = json.load(f)
    return scenario_from_dict(data, base_dir=path.parent)


def scenario_from_dict(data: dict, base_dir: Path | None = None) -> Scenario:
    data = dict(data)
    agents = [_agent_spec(a) for a in data.pop("agents", [])]
    flag_events = []
    fault_events = []
    for ev in data.pop("events", []):
        t = float(ev["t"])
        if "flag" in ev:
            fd = dict(ev["flag"])
            fd.setdefault("sequence", len(flag_events) + 1)
            fd.setdefault("timestamp", t)
            flag_events.append(FlagEvent(t=t, request=FlagRequest(**fd)))
        elif "fault" in ev:
            fault_events.append(_build(FaultEvent, dict(ev["fault"]), t=t))
        else:
            raise ScenarioError(f"event at t={t} is neither flag nor fault")
    sim_d = data.pop("sim", {})
    sc = _build(Scenario, data, agents=agents, flag_events=flag_events,
                fault_events=fault_events, sim=_build(SimParams, sim_d),
                base_dir=base_dir or Path())
    sc.validate()
    return sc


# ---------------------------------------------------------------------------
# materialization: files and builtins to live objects
# ---------------------------------------------------------------------------

@dataclass
class AgentAssets:
    spec: AgentSpec
    shape: AccelConstraintShape
    belief_grip: GripMap
    truth_grip: GripMap
    raceline: Raceline


@dataclass
class ScenarioAssets:
    scenario: Scenario
    ref: ReferenceLine
    bounds: RawBounds
    gggv: GGGVDiagram
    agents: list[AgentAssets]


def _resolve(base: Path, name: str | None) -> Path | None:
    if name is None:
        return None
    p = Path(name)
    return p if p.is_absolute() else base / p


def load_assets(sc: Scenario) -> ScenarioAssets:
    """Build every object a race needs from the scenario description."""
    sc.validate()
    if sc.track.startswith("builtin:"):
        raw, _ = build_builtin(sc.track)
    else:
        raw, _ = load_track_file(_resolve(sc.base_dir, sc.track))
    # smoothing removes curvature steps that otherwise excite the planner's
    # frame kinematics at lateral offset
    center_ref, bounds = prepare_track(raw, cutoff_wavelength=sc.smoothing_cutoff)

    # the racing frame is generated around the optimized path: the path is
    # grip-independent (pure geometry), so all agents share one frame
    half_width = max(a.planner.half_width for a in sc.agents)
    alpha = optimize_path(center_ref, None, half_width + sc.raceline_margin)
    ref = build_reference_line(offset_path_points(center_ref, alpha), bounds)

    gpath = _resolve(sc.base_dir, sc.gggv_file)
    gggv = GGGVDiagram.load(gpath) if gpath else make_gggv()

    def base_grip(file_name):
        p = _resolve(sc.base_dir, file_name)
        if p:
            gm = GripMap.load(p)
            if abs(gm.track_length - ref.length) > 1.0:
                raise ScenarioError("grip map track length does not match the track")
            return gm
        return GripMap(track_length=ref.length)

    belief_base = base_grip(sc.grip_belief_file)
    truth_base = base_grip(sc.grip_truth_file or sc.grip_belief_file)

    agents = []
    for spec in sc.agents:
        shape = AccelConstraintShape(rho=spec.shape_rho)
        truth = truth_base.copy()
        truth.scale_all(spec.theta_uplift)
        truth = truth.snapshot()
        belief = belief_base.copy()
        if spec.belief_follows_truth and spec.theta_uplift != 1.0:
            belief.scale_all(spec.theta_uplift)
        belief = belief.snapshot()
        rl_path = _resolve(sc.base_dir, sc.raceline_file)
        if rl_path:
            rl = Raceline.load(rl_path, ref)
        else:
            rl = centerline_raceline(ref, gggv, belief, shape,
                                     caps=sc.caps or None,
                                     mu=spec.limit_fraction)
        agents.append(AgentAssets(spec=spec, shape=shape, belief_grip=belief,
                                  truth_grip=truth, raceline=rl))
    return ScenarioAssets(scenario=sc, ref=ref, bounds=bounds, gggv=gggv,
                          agents=agents)
