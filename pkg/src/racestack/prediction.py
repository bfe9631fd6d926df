"""Opponent motion prediction: rail-relative and hold-the-line methods plus
the virtual cone filter that implements the right-of-way engagement rule.

Exactly one predicted trajectory is produced per opponent per cycle. The rail
method keeps the opponent's fractional position between the prediction
raceline and the bound on its side; hold-the-line keeps the absolute distance
to the nearer bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raceline import Raceline
from .track import ReferenceLine


class PredictionError(ValueError):
    pass


@dataclass(frozen=True)
class TrackedObject:
    """Opponent state handed over by detection (ground truth in simulation)."""

    obj_id: int
    timestamp: float
    s: float
    n: float
    v: float
    dpsi: float = 0.0

    def __post_init__(self):
        if self.v < 0:
            raise PredictionError("tracked speed must be nonnegative")


@dataclass(frozen=True)
class ConeParams:
    """Curvilinear cone behind the ego: opponents inside are not engaged."""

    length: float = 30.0
    near_half_width: float = 0.8
    far_half_width: float = 2.5

    def __post_init__(self):
        if self.length <= 0 or self.near_half_width <= 0 or self.far_half_width <= 0:
            raise PredictionError("cone dimensions must be positive")
        if self.far_half_width < self.near_half_width:
            raise PredictionError("cone must widen with distance")

    def half_width_at(self, ds: float) -> float:
        return self.near_half_width + (self.far_half_width - self.near_half_width) \
            * ds / self.length


@dataclass(frozen=True)
class PredictionThresholds:
    n_dev: float = 2.0       # m, lateral deviation beyond which rail is dropped
    sigma_dev: float = 0.35  # relative speed deviation beyond which rail is dropped


@dataclass
class PredictedTrajectory:
    obj_id: int
    method: str              # "rail" | "hold_line"
    t: np.ndarray
    s: np.ndarray
    n: np.ndarray
    v: np.ndarray
    lam: float = 0.0         # lateral fraction toward the bound on the object's side
    sigma: float = 1.0       # speed scale against the prediction raceline

    def __len__(self):
        return len(self.t)


def _check_on_track(obj: TrackedObject, ref: ReferenceLine):
    w_l, w_r = ref.sample_widths(obj.s)
    if obj.n > float(w_l) + 1e-6 or obj.n < -float(w_r) - 1e-6:
        raise PredictionError(
            f"object {obj.obj_id} off track: n={obj.n:.2f} outside [-{float(w_r):.2f}, {float(w_l):.2f}]"
        )


def _side_distance(rl: Raceline, s, positive_side: bool):
    """Distance from the raceline to the bound on one side (> 0)."""
    w_l, w_r = rl.ref.sample_widths(s)
    n_rl = rl.sample_alpha(s)
    return (w_l - n_rl) if positive_side else (n_rl + w_r)


def predict_rail(obj: TrackedObject, rl: Raceline, horizon: float = 4.0,
                 dt: float = 0.1) -> PredictedTrajectory:
    """Rail prediction: the lateral fraction between raceline and bound and
    the speed ratio against the raceline both stay constant over the horizon."""
    _check_on_track(obj, rl.ref)
    n_rl0 = float(rl.sample_alpha(obj.s))
    v_rl0 = float(rl.sample_v(obj.s))
    if v_rl0 <= 0:
        raise PredictionError("raceline speed is zero at the object position")

    d = obj.n - n_rl0
    positive_side = d >= 0
    dist0 = float(_side_distance(rl, obj.s, positive_side))
    lam_signed = d / dist0 if dist0 > 0 else 0.0
    lam_signed = float(np.clip(lam_signed, -1.0, 1.0))
    sigma = obj.v / v_rl0

    steps = int(round(horizon / dt))
    t = np.arange(steps + 1) * dt
    s = np.empty(steps + 1)
    s[0] = rl.ref.wrap(obj.s)
    for k in range(steps):
        # midpoint integration of ds/dt = sigma * v_rl(s)
        v1 = sigma * float(rl.sample_v(s[k]))
        s_mid = s[k] + 0.5 * dt * v1
        v2 = sigma * float(rl.sample_v(s_mid))
        s[k + 1] = rl.ref.wrap(s[k] + dt * v2)

    n_rl = rl.sample_alpha(s)
    dist = np.asarray(_side_distance(rl, s, positive_side), dtype=float)
    n = n_rl + lam_signed * dist
    v = sigma * rl.sample_v(s)
    return PredictedTrajectory(obj_id=obj.obj_id, method="rail", t=t, s=s, n=n,
                               v=np.asarray(v, dtype=float), lam=lam_signed, sigma=sigma)


def predict_hold_line(obj: TrackedObject, ref: ReferenceLine, horizon: float = 4.0,
                      dt: float = 0.1, v_rl_at_obj: float | None = None) -> PredictedTrajectory:
    """Hold-the-line prediction: constant absolute distance to the nearer
    bound, constant speed."""
    _check_on_track(obj, ref)
    w_l0, w_r0 = (float(w) for w in ref.sample_widths(obj.s))
    d_left = w_l0 - obj.n
    d_right = obj.n + w_r0
    hold_left = d_left <= d_right

    steps = int(round(horizon / dt))
    t = np.arange(steps + 1) * dt
    s = ref.wrap(obj.s + obj.v * t)
    w_l, w_r = ref.sample_widths(s)
    n = (w_l - d_left) if hold_left else (d_right - w_r)
    v = np.full(steps + 1, obj.v)
    sigma = obj.v / v_rl_at_obj if v_rl_at_obj else 1.0
    return PredictedTrajectory(obj_id=obj.obj_id, method="hold_line", t=t, s=s,
                               n=np.asarray(n, dtype=float), v=v, sigma=sigma)


def select_method(obj: TrackedObject, rl: Raceline,
                  thresholds: PredictionThresholds | None = None) -> str:
    """Rail for behavior the prediction raceline covers, hold-the-line for
    significant lateral or speed deviation."""
    thresholds = thresholds or PredictionThresholds()
    n_rl = float(rl.sample_alpha(obj.s))
    v_rl = float(rl.sample_v(obj.s))
    sigma = obj.v / v_rl if v_rl > 0 else 0.0
    if abs(obj.n - n_rl) > thresholds.n_dev or abs(sigma - 1.0) > thresholds.sigma_dev:
        return "hold_line"
    return "rail"


def predict(obj: TrackedObject, rl: Raceline, horizon: float = 4.0, dt: float = 0.1,
            thresholds: PredictionThresholds | None = None) -> PredictedTrajectory:
    """One trajectory per opponent: method selection plus prediction."""
    method = select_method(obj, rl, thresholds)
    if method == "rail":
        return predict_rail(obj, rl, horizon, dt)
    v_rl = float(rl.sample_v(obj.s))
    return predict_hold_line(obj, rl.ref, horizon, dt, v_rl_at_obj=v_rl)


def in_virtual_cone(ego_s: float, ego_n: float, opp_s: float, opp_n: float,
                    cone: ConeParams, track_length: float) -> bool:
    """True when the opponent sits in the cone behind the ego and is therefore
    ignored by planning (no overtaking attempt signaled)."""
    ds = (ego_s - opp_s) % track_length
    if not (0.0 < ds <= cone.length):
        return False
    return abs(opp_n - ego_n) <= cone.half_width_at(ds)
