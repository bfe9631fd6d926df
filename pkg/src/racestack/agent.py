"""Per-vehicle stack wiring: virtual detection in, prediction, planning,
orchestrated emergency behavior, tracking control, and simulated dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import planner as lp
from .grip import scaled_limits
from .orchestration import (DiagLevel, DiagnosticReport, EmergencyLevel,
                            OrchestrationCommand, Orchestrator)
from .prediction import PredictedTrajectory, TrackedObject, in_virtual_cone, predict
from .scenario import AgentAssets, ScenarioAssets
from .track import FrenetPose, cart_to_frenet, frenet_to_cart
from .vehicle import (Actuation, ControllerGains, SimParams, SlipResult,
                      VehicleState, apply_slip_clamps, step_dynamics, track_step)

SAFESTOP_DECEL = 5.0  # m/s^2 cap ramp while actively replanning to a stop


@dataclass
class AgentCounters:
    tc: int = 0
    abs_: int = 0
    plan_failures: int = 0
    max_plan_deviation: float = 0.0
    min_ellipse_distance: float = math.inf


class Agent:
    """One vehicle: planner state, controller state, orchestration, metrics."""

    def __init__(self, assets: AgentAssets, world: ScenarioAssets,
                 orchestration_mode: str = "testing"):
        self.spec = assets.spec
        self.name = self.spec.name
        self.assets = assets
        self.world = world
        self.ref = world.ref
        self.rl = assets.raceline
        self.gggv = world.gggv
        self.shape = assets.shape
        self.sim_params = world.scenario.sim
        self.planner_period = world.scenario.planner_period

        self.orchestrator = Orchestrator(mode=orchestration_mode)
        self.state = VehicleState()
        self.fp = FrenetPose(0.0, 0.0)
        self.trajectory: lp.TrajectorySample | None = None
        self.traj_origin = 0.0
        self.emergency_traj: lp.TrajectorySample | None = None
        self.frozen_emergency: lp.TrajectorySample | None = None
        self.frozen_origin = 0.0
        self.command = OrchestrationCommand()
        self.counters = AgentCounters()
        self.status = "racing"          # racing | finished | stopped | crashed
        self.progress = 0.0             # unwrapped distance past the start line
        self.lap_crossings: list[float] = []
        self.safestop_cap = math.inf
        self._tc_active = False
        self._abs_active = False
        self._silenced: dict[str, float] = {}
        self._forced_error: dict[str, float] = {}
        self._stop_timer = 0.0
        self._plan_failed_last = False

    # -- setup ----------------------------------------------------------------

    def place_on_grid(self, s0: float, n0: float, v0: float):
        psi = float(self.ref.sample_psi(s0))
        pos = frenet_to_cart(FrenetPose(s0, n0), self.ref)
        temp0 = self.spec.start_tire_temp
        if temp0 is None:
            temp0 = self.spec.tire_temp.t_ambient
        self.state = VehicleState(x=float(pos[0]), y=float(pos[1]), psi=psi,
                                  v=v0, t_tire=temp0)
        self.fp = FrenetPose(self.ref.wrap(s0), n0, 0.0)
        self.progress = -((self.ref.length - self.ref.wrap(s0)) % self.ref.length)
        if self.progress < -self.ref.length / 2:
            self.progress += self.ref.length

    # -- belief and truth helpers ----------------------------------------------

    def _mu_belief(self) -> float:
        mu = self.spec.limit_fraction
        if self.spec.temp_model and self.spec.temp_belief:
            mu *= self.spec.tire.mu(self.state.t_tire)
        return mu

    def _mu_truth(self) -> float:
        if self.spec.temp_model:
            return self.spec.tire.mu(self.state.t_tire)
        return 1.0

    def believed_limits(self, v: float):
        az = float(self.ref.sample_az(self.fp.s))
        n_ref = float(self.rl.sample_alpha(self.fp.s))
        return scaled_limits(self.assets.belief_grip, self.gggv, self.fp, v, az,
                             mu=self._mu_belief(), n_ref=n_ref)

    def truth_limits(self, v: float):
        az = float(self.ref.sample_az(self.fp.s))
        n_ref = float(self.rl.sample_alpha(self.fp.s))
        return scaled_limits(self.assets.truth_grip, self.gggv, self.fp, v, az,
                             mu=self._mu_truth(), n_ref=n_ref)

    # -- fault injection --------------------------------------------------------

    def inject_fault(self, module: str, kind: str, until: float):
        if kind == "silent":
            self._silenced[module] = until
        elif kind == "error":
            self._forced_error[module] = until
        else:
            raise ValueError(f"unknown fault kind '{kind}'")

    def _report(self, now: float, module: str, level: DiagLevel, **metrics):
        if now < self._silenced.get(module, -math.inf):
            return
        if now < self._forced_error.get(module, -math.inf):
            level = DiagLevel.ERROR
        self.orchestrator.submit_report(DiagnosticReport(
            module=module, level=level, metrics=metrics, timestamp=now))

    # -- planning tick -----------------------------------------------------------

    def plan_tick(self, now: float, others: list[TrackedObject]):
        spec = self.spec
        self._report(now, "state", DiagLevel.OK, v=self.state.v)

        cmd = self.orchestrator.tick(now)
        if cmd.emergency_level >= EmergencyLevel.SAFE_STOP:
            if math.isinf(self.safestop_cap):
                self.safestop_cap = max(self.state.v, 0.0)
            self.safestop_cap = max(0.0, self.safestop_cap
                                    - SAFESTOP_DECEL * self.planner_period)
        else:
            self.safestop_cap = math.inf
        self.command = cmd

        if cmd.emergency_level >= EmergencyLevel.EMERGENCY_STOP:
            if self.frozen_emergency is None and self.emergency_traj is not None:
                self.frozen_emergency = self.emergency_traj
                self.frozen_origin = now
            self._report(now, "controller", DiagLevel.OK)
            return

        engaged = []
        for obj in others:
            if in_virtual_cone(self.fp.s, self.fp.n, obj.s, obj.n,
                               spec.cone, self.ref.length):
                continue
            engaged.append(obj)
        predictions: list[PredictedTrajectory] = []
        pred_level = DiagLevel.OK
        for obj in engaged:
            try:
                predictions.append(predict(obj, self.rl, spec.planner.horizon,
                                           spec.planner.dt, spec.thresholds))
            except Exception:
                pred_level = DiagLevel.ERROR
        self._report(now, "prediction", pred_level, engaged=len(engaged))

        start = self._start_state(now)
        cfg = spec.planner
        if not cmd.overtaking_permitted and cfg.n_lateral > 3:
            cfg = replace(cfg, n_lateral=3)
        if cmd.following_distance > 0:
            cfg = replace(cfg, ellipse=replace(
                cfg.ellipse, a_long_base=max(cfg.ellipse.a_long_base,
                                             cmd.following_distance)))
        max_v = min(cmd.max_velocity, self.safestop_cap)
        result = lp.plan_cycle(start, self.rl, predictions,
                               self.assets.belief_grip, self.gggv, self.shape,
                               cfg, max_velocity=max_v, mu=self._mu_belief())
        if result.failure:
            self.counters.plan_failures += 1
            self._plan_failed_last = True
            self._report(now, "planner", DiagLevel.ERROR, valid=0)
        else:
            self._plan_failed_last = False
            self.trajectory = result.chosen
            self.traj_origin = now
            self.emergency_traj = result.emergency
            self._report(now, "planner", DiagLevel.OK,
                         cost=result.chosen.cost.total)
        self._report(now, "controller", DiagLevel.OK)

    def _start_state(self, now: float) -> lp.StartState:
        traj = self.trajectory
        if traj is not None:
            age = now - self.traj_origin
            pt = traj.point_at(age)
            if abs(self.fp.n - pt["n"]) < 0.75 and age <= traj.t[-1]:
                return lp.StartState(
                    s=pt["s"],
                    s_dot=float(np.interp(age, traj.t, traj.s_dot)),
                    s_ddot=float(np.interp(age, traj.t, traj.s_ddot)),
                    n=pt["n"],
                    n_dot=float(np.interp(age, traj.t, traj.n_dot)),
                    n_ddot=float(np.interp(age, traj.t, traj.n_ddot)),
                )
        kappa = float(self.ref.sample_kappa(self.fp.s))
        denom = max(1.0 - kappa * self.fp.n, 0.2)
        return lp.StartState(
            s=self.fp.s,
            s_dot=self.state.v * math.cos(self.fp.dpsi) / denom,
            s_ddot=self.state.ax,
            n=self.fp.n,
            n_dot=self.state.v * math.sin(self.fp.dpsi),
            n_ddot=0.0,
        )

    # -- control tick ------------------------------------------------------------

    def control_tick(self, now: float, dt: float):
        if self.status in ("finished", "stopped", "crashed"):
            self._integrate(Actuation(ax=-self.truth_limits(self.state.v).ax_brake,
                                      kappa=0.0), dt, braking_only=True)
            return

        level = self.command.emergency_level
        believed = self.believed_limits(self.state.v)

        if level >= EmergencyLevel.HARD_EMERGENCY or self.status == "crashed":
            act = Actuation(ax=-believed.ax_brake * 1.5, kappa=0.0)
        elif level >= EmergencyLevel.EMERGENCY_STOP and self.frozen_emergency is not None:
            act = track_step(self.state, self.frozen_emergency,
                             now - self.frozen_origin, self.ref, believed,
                             self.shape, self.spec.gains,
                             brake_limit=believed.ax_brake)
        elif self.trajectory is not None:
            act = track_step(self.state, self.trajectory, now - self.traj_origin,
                             self.ref, believed, self.shape, self.spec.gains,
                             brake_limit=believed.ax_brake)
            if not act.stale:
                dev = abs(self.fp.n - self.trajectory.point_at(now - self.traj_origin)["n"])
                if dev > self.counters.max_plan_deviation:
                    self.counters.max_plan_deviation = dev
        else:
            act = Actuation(ax=0.0, kappa=0.0)

        self._integrate(act, dt)

    def _integrate(self, act: Actuation, dt: float, braking_only: bool = False):
        truth = self.truth_limits(self.state.v)
        avail = truth.ax_drive if act.ax >= 0 else truth.ax_brake
        slip: SlipResult = apply_slip_clamps(act.ax, avail, self.spec.tire)
        if slip.tc and not self._tc_active:
            self.counters.tc += 1
        if slip.abs_ and not self._abs_active:
            self.counters.abs_ += 1
        self._tc_active = slip.tc
        self._abs_active = slip.abs_

        temp = self.spec.tire_temp if self.spec.temp_model else None
        new_state = step_dynamics(self.state, Actuation(ax=slip.ax, kappa=act.kappa),
                                  truth, self.shape, self.sim_params,
                                  tire_temp=temp, dt=dt)
        old_s = self.fp.s
        self.state = new_state
        self.fp = cart_to_frenet((new_state.x, new_state.y), self.ref,
                                 heading=new_state.psi)
        ds = (self.fp.s - old_s + self.ref.length / 2.0) % self.ref.length \
            - self.ref.length / 2.0
        before = self.progress
        self.progress += ds
        laps_cfg = self.world.scenario.laps
        k = len(self.lap_crossings)
        crossing = k * self.ref.length
        if before < crossing <= self.progress:
            frac = (crossing - before) / max(self.progress - before, 1e-9)
            self.lap_crossings.append(new_state.time - dt + frac * dt)
            if k >= laps_cfg and self.status == "racing":
                self.status = "finished"

        if self.state.v < 0.05 and self.status == "racing":
            self._stop_timer += dt
            if self._stop_timer > 1.0 and (
                    self.command.emergency_level > EmergencyLevel.NONE
                    or braking_only or self.counters.plan_failures > 0):
                self.status = "stopped"
        else:
            self._stop_timer = 0.0

    # -- exported metrics ----------------------------------------------------------

    @property
    def lap_times(self) -> list[float]:
        return [t1 - t0 for t0, t1 in zip(self.lap_crossings, self.lap_crossings[1:])]

    @property
    def laps_done(self) -> int:
        return max(0, len(self.lap_crossings) - 1)

    def tracked_object(self, now: float) -> TrackedObject:
        return TrackedObject(obj_id=self.spec.grid_slot, timestamp=now,
                             s=self.fp.s, n=self.fp.n, v=self.state.v,
                             dpsi=self.fp.dpsi)
