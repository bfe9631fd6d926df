"""Vehicle simulation and trajectory execution.

A point-mass model with first-order actuator lags stands in for the full
vehicle. The controller is hierarchical: curvature/acceleration feedforward
from the planned trajectory plus deviation feedback, projected onto the
believed acceleration shape; slip clamps emulate TC/ABS against the ground
truth grip; tire temperature follows a first-order generation/cooling law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .grip import AccelConstraintShape, GGGVDiagram, GripMap, Limits, project_to_shape, scaled_limits
from .planner import TrajectorySample
from .track import FrenetPose, ReferenceLine, cart_to_frenet

V_EPS = 0.5  # m/s, below this curvature commands are meaningless


@dataclass(frozen=True)
class TireModel:
    """Grip multiplier over temperature plus the TC/ABS slip threshold."""

    mu_peak: float = 1.0
    slip_threshold: float = 0.1
    t_low: float = 40.0       # degC, floor below this
    t_opt_low: float = 70.0
    t_opt_high: float = 110.0
    t_high: float = 150.0     # degC, fallen back to floor above this
    cold_floor: float = 0.7

    def mu(self, temp: float) -> float:
        """Piecewise linear multiplier: floor when cold or overheated, peak
        inside the optimal window."""
        if temp <= self.t_low:
            f = 0.0
        elif temp < self.t_opt_low:
            f = (temp - self.t_low) / (self.t_opt_low - self.t_low)
        elif temp <= self.t_opt_high:
            f = 1.0
        elif temp < self.t_high:
            f = 1.0 - (temp - self.t_opt_high) / (self.t_high - self.t_opt_high)
        else:
            f = 0.0
        return self.mu_peak * (self.cold_floor + (1.0 - self.cold_floor) * f)


@dataclass(frozen=True)
class TireTempParams:
    # calibrated so warm-up takes about a lap and a half on the acceptance
    # track and equilibrium sits inside the optimal window
    t_ambient: float = 30.0
    k_gen: float = 0.13       # degC per (m/s^2 of excitation at v_ref)
    k_cool: float = 0.02      # 1/s
    v_ref: float = 40.0       # m/s
    t_max: float = 150.0


def tire_temp_step(temp: float, ax: float, ay: float, v: float, dt: float,
                   params: TireTempParams) -> float:
    """Explicit step of dT/dt = k_gen (|ax|+|ay|) v / v_ref - k_cool (T - T_amb)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    gen = params.k_gen * (abs(ax) + abs(ay)) * v / params.v_ref
    cool = params.k_cool * (temp - params.t_ambient)
    t_new = temp + dt * (gen - cool)
    return float(min(max(t_new, params.t_ambient), params.t_max))


@dataclass
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    v: float = 0.0
    ax: float = 0.0           # realized longitudinal
    ay: float = 0.0           # realized lateral
    psi_dot: float = 0.0
    t_tire: float = 30.0
    ax_act: float = 0.0       # lagged actuator states
    kappa_act: float = 0.0
    time: float = 0.0


@dataclass(frozen=True)
class ControllerGains:
    lookahead: float = 0.2       # s, longitudinal feedforward preview (tau_ax)
    lookahead_kappa: float = 0.1 # s, steering preview sized to the lag
    k_n: float = 3.0             # (m/s^2) per m of lateral deviation
    k_psi: float = 1.8           # (m/s^2) per rad per (m/s)
    k_v: float = 1.1             # (m/s^2) per (m/s) speed error
    drag_ff: float = 0.2         # feedforward for the rolling loss
    stale_after: float = 0.15    # s, three planner cycles


@dataclass(frozen=True)
class Actuation:
    ax: float
    kappa: float
    stale: bool = False
    feedforward_only: bool = False


@dataclass(frozen=True)
class SimParams:
    tau_ax: float = 0.15
    tau_kappa: float = 0.08
    rolling_loss: float = 0.2  # m/s^2 opposing motion
    dt: float = 0.01


class StaleTrajectoryError(RuntimeError):
    pass


def track_step(state: VehicleState, traj: TrajectorySample, traj_age: float,
               ref: ReferenceLine, believed: Limits, shape: AccelConstraintShape,
               gains: ControllerGains, brake_limit: float) -> Actuation:
    """High-level tracking: reference lookup at the lookahead time, lateral
    and longitudinal feedforward plus deviation feedback, projection onto the
    believed constraint shape.

    ``traj_age`` is the time since the trajectory's t=0. A stale trajectory
    (age beyond three planner cycles) commands an emergency brake instead.
    """
    if traj_age > gains.stale_after and not traj.emergency:
        return Actuation(ax=-brake_limit, kappa=0.0, stale=True)

    fp = cart_to_frenet((state.x, state.y), ref, heading=state.psi)
    now_pt = traj.point_at(traj_age)
    la_ax = traj.point_at(traj_age + gains.lookahead)
    la_k = traj.point_at(traj_age + gains.lookahead_kappa)

    dn = fp.n - now_pt["n"]
    e_psi = fp.dpsi - now_pt["psi_rel"]
    ay_cmd = state.v**2 * la_k["kappa"] - gains.k_n * dn \
        - gains.k_psi * state.v * e_psi
    ax_cmd = la_ax["ax"] + gains.k_v * (now_pt["v"] - state.v) + gains.drag_ff

    ax_p, ay_p = project_to_shape(shape, ax_cmd, ay_cmd, believed)
    kappa_cmd = ay_p / state.v**2 if state.v > V_EPS else 0.0
    return Actuation(ax=ax_p, kappa=kappa_cmd)


@dataclass(frozen=True)
class SlipResult:
    ax: float
    tc: bool = False
    abs_: bool = False


def apply_slip_clamps(ax_cmd: float, available_ax: float,
                      tire: TireModel) -> SlipResult:
    """TC/ABS with a fixed slip threshold.

    The slip surrogate is the relative longitudinal overshoot beyond the
    ground-truth available acceleration. Above the threshold the command is
    clamped to available * (1 + threshold/2) and an intervention is counted.
    """
    if available_ax <= 0:
        return SlipResult(ax=0.0, tc=ax_cmd > 0, abs_=ax_cmd < 0)
    mag = abs(ax_cmd)
    sign = 1.0 if ax_cmd >= 0 else -1.0
    slip = max(0.0, mag - available_ax) / available_ax
    cap = available_ax * (1.0 + tire.slip_threshold)
    if slip > tire.slip_threshold:
        clamped = available_ax * (1.0 + 0.5 * tire.slip_threshold)
        return SlipResult(ax=sign * clamped, tc=sign > 0, abs_=sign < 0)
    return SlipResult(ax=sign * min(mag, cap))


def step_dynamics(state: VehicleState, actuation: Actuation,
                  ground_truth: Limits, shape: AccelConstraintShape,
                  params: SimParams, tire_temp: TireTempParams | None = None,
                  dt: float | None = None) -> VehicleState:
    """Advance the point-mass model one step: actuator lags, joint clipping to
    the ground-truth feasible set, kinematic integration, temperature update."""
    dt = params.dt if dt is None else dt
    if dt > 0.01 + 1e-12:
        raise ValueError("simulation step must be <= 0.01 s")

    ax_act = state.ax_act + (dt / params.tau_ax) * (actuation.ax - state.ax_act)
    kappa_act = state.kappa_act + (dt / params.tau_kappa) * (actuation.kappa - state.kappa_act)

    ay_des = state.v**2 * kappa_act
    ax_real, ay_real = project_to_shape(shape, ax_act, ay_des, ground_truth)

    loss = params.rolling_loss if state.v > 1e-6 else 0.0
    v_new = state.v + (ax_real - loss) * dt
    if v_new < 0.0:
        v_new = 0.0
    kappa_real = ay_real / state.v**2 if state.v > V_EPS else 0.0
    psi_dot = 0.5 * (state.v + v_new) * kappa_real
    psi_mid = state.psi + 0.5 * psi_dot * dt
    v_mid = 0.5 * (state.v + v_new)

    t_tire = state.t_tire
    if tire_temp is not None:
        t_tire = tire_temp_step(state.t_tire, ax_real, ay_real, v_mid, dt, tire_temp)

    return replace(
        state,
        x=state.x + v_mid * math.cos(psi_mid) * dt,
        y=state.y + v_mid * math.sin(psi_mid) * dt,
        psi=_wrap_pi(state.psi + psi_dot * dt),
        v=v_new,
        ax=ax_real,
        ay=ay_real,
        psi_dot=psi_dot,
        t_tire=t_tire,
        ax_act=ax_act,
        kappa_act=kappa_act,
        time=state.time + dt,
    )


def _wrap_pi(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def longitudinal_available(gm_truth: GripMap | None, gggv: GGGVDiagram,
                           fp: FrenetPose, v: float, az: float,
                           mu: float, drive: bool) -> float:
    """Ground-truth longitudinal grip limit at the true position and tire
    temperature (for the slip clamps)."""
    lim = scaled_limits(gm_truth, gggv, fp, v, az, mu=mu)
    return lim.ax_drive if drive else lim.ax_brake
