"""Point-mass multi-vehicle driving simulator.

Three highway scenarios (blocked lane, lane change, two-lane overtake) on a
straight vertical road. Every vehicle follows the same point-mass dynamics

    (dx, dy, dphi, dv) = (v cos(phi), v sin(phi), a1, a2 - alpha * v)

with velocity clipped to [-1, 1] after each update. Non-ego vehicles track
scripted target speeds/headings with bounded uniform input noise drawn from
the episode seed, so a fixed seed reproduces the scene exactly.

The ground-truth cost fires when the ego is off-road, driving backward,
over the speed limit, or too close to another vehicle under the Gaussian
proximity kernel exp(-b*(c1*dx^2 + c2*dy^2) + b*a) >= 0.4 with
a = 0.01, b = 30, c1 = 10, c2 = 2. Collision uses the same kernel at a
higher threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..types import ValidationError
from .base import StepResult

# proximity kernel constants
PROX_A = 0.01
PROX_B = 30.0
PROX_C1 = 10.0
PROX_C2 = 2.0
COST_PROXIMITY_THRESHOLD = 0.4

V_CLIP = 1.0
ACTION_LOW = -1.0
ACTION_HIGH = 1.0

SCENARIOS = ("blocked", "lane_change", "two_lane_overtake")
REWARD_MODES = ("ppo_shaped", "cmdp_split")


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    phi: float
    v: float

    def advanced(self, a1: float, a2: float, alpha: float) -> "VehicleState":
        dx = self.v * math.cos(self.phi)
        dy = self.v * math.sin(self.phi)
        v = self.v + a2 - alpha * self.v
        v = min(max(v, -V_CLIP), V_CLIP)
        return VehicleState(self.x + dx, self.y + dy, self.phi + a1, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi, self.v], dtype=np.float64)


@dataclass(frozen=True)
class ScriptedVehicle:
    """Scripted traffic: proportional control toward a target speed/heading,
    perturbed by per-step uniform input noise."""

    state: VehicleState
    target_v: float
    target_phi: float

    def control(self, alpha: float) -> tuple[float, float]:
        a1 = 0.5 * (self.target_phi - self.state.phi)
        a2 = alpha * self.target_v + 0.5 * (self.target_v - self.state.v)
        return a1, a2


@dataclass(frozen=True)
class DriverConfig:
    scenario: str = "blocked"
    alpha: float = 0.1
    v_max: float = 0.6
    lane_width: float = 0.17
    n_lanes: int = 2
    road_top: float = 2.0
    lane_center_tol: float = 0.04
    noise_scale: float = 0.05
    horizon: int = 100
    collision_threshold: float = 0.9
    reward_mode: str = "cmdp_split"
    collision_penalty: float = -100.0
    minor_penalty: float = -1.0
    progress_scale: float = 10.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.reward_mode not in REWARD_MODES:
            raise ValidationError(f"unknown reward_mode {self.reward_mode!r}")
        if self.n_lanes < 1 or self.lane_width <= 0:
            raise ValidationError("lane geometry must be positive")

    @property
    def road_half_width(self) -> float:
        return self.n_lanes * self.lane_width / 2.0

    @property
    def lane_centers(self) -> list[float]:
        left = -self.road_half_width + self.lane_width / 2.0
        return [left + i * self.lane_width for i in range(self.n_lanes)]


def proximity(d_x: float, d_y: float) -> float:
    """Gaussian closeness kernel; >= 0.4 means "too close" (cost)."""
    return math.exp(-PROX_B * (PROX_C1 * d_x**2 + PROX_C2 * d_y**2) + PROX_B * PROX_A)


def proximity_cost_radius_y() -> float:
    """Longitudinal distance (d_x = 0) at which the proximity cost flips."""
    return math.sqrt((PROX_A + math.log(COST_PROXIMITY_THRESHOLD) / (-PROX_B)) / PROX_C2)


def _initial_scene(cfg: DriverConfig) -> tuple[VehicleState, list[ScriptedVehicle]]:
    right, left = cfg.lane_centers[-1], cfg.lane_centers[0]
    up, down = math.pi / 2.0, -math.pi / 2.0
    if cfg.scenario == "blocked":
        ego = VehicleState(right, 0.0, up, 0.02)
        others = [
            ScriptedVehicle(VehicleState(right, 0.5, up, 0.0), target_v=0.0, target_phi=up),
            ScriptedVehicle(VehicleState(left, 0.8, up, 0.02), target_v=0.02, target_phi=up),
        ]
    elif cfg.scenario == "lane_change":
        ego = VehicleState(left, 0.0, up, 0.02)
        others = [
            ScriptedVehicle(VehicleState(left, 0.6, up, 0.015), target_v=0.015, target_phi=up),
            ScriptedVehicle(VehicleState(right, 0.35, up, 0.03), target_v=0.03, target_phi=up),
        ]
    else:  # two_lane_overtake
        ego = VehicleState(right, 0.0, up, 0.03)
        others = [
            ScriptedVehicle(VehicleState(right, 0.5, up, 0.015), target_v=0.015, target_phi=up),
            ScriptedVehicle(VehicleState(left, 1.9, down, 0.04), target_v=0.04, target_phi=down),
        ]
    return ego, others


class DriverWorld:
    """Mutable scene state for one episode."""

    def __init__(self, config: DriverConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.ego, self.others = _initial_scene(config)
        self.step_count = 0
        self.terminated = False
        self.collided = False

    @property
    def n_vehicles(self) -> int:
        return 1 + len(self.others)

    def observation(self) -> np.ndarray:
        """Concatenation of all vehicle states, ego first."""
        parts = [self.ego.as_array()] + [o.state.as_array() for o in self.others]
        return np.concatenate(parts)

    def off_road(self) -> bool:
        return abs(self.ego.x) > self.config.road_half_width

    def backward(self) -> bool:
        return self.ego.v < 0.0

    def off_lane_center(self) -> bool:
        return min(abs(self.ego.x - c) for c in self.config.lane_centers) > self.config.lane_center_tol

    def max_proximity(self) -> float:
        if not self.others:
            return 0.0
        return max(proximity(o.state.x - self.ego.x, o.state.y - self.ego.y) for o in self.others)

    def step(self, action) -> StepResult:
        if self.terminated:
            raise RuntimeError("cannot step a terminated world")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (2,):
            raise ValidationError(f"driver action must have 2 components, got shape {a.shape}")
        if np.any(a < ACTION_LOW - 1e-9) or np.any(a > ACTION_HIGH + 1e-9):
            raise ValidationError(f"action {a} outside bounds [{ACTION_LOW}, {ACTION_HIGH}]")
        a = np.clip(a, ACTION_LOW, ACTION_HIGH)

        y_before = self.ego.y
        self.ego = self.ego.advanced(float(a[0]), float(a[1]), self.config.alpha)
        new_others = []
        for veh in self.others:
            a1, a2 = veh.control(self.config.alpha)
            a1 += self.rng.uniform(-self.config.noise_scale, self.config.noise_scale)
            a2 += self.rng.uniform(-self.config.noise_scale, self.config.noise_scale)
            new_others.append(replace(veh, state=veh.state.advanced(a1, a2, self.config.alpha)))
        self.others = new_others
        self.step_count += 1

        self.collided = self.max_proximity() >= self.config.collision_threshold
        reached_top = self.ego.y >= self.config.road_top
        timed_out = self.step_count >= self.config.horizon
        self.terminated = self.collided or reached_top or timed_out

        reward = self.config.progress_scale * (self.ego.y - y_before)
        if self.off_lane_center():
            reward += self.config.minor_penalty
        if self.config.reward_mode == "ppo_shaped":
            if self.off_road():
                reward += self.config.minor_penalty
            if self.backward():
                reward += self.config.minor_penalty
        if self.collided:
            reward += self.config.collision_penalty

        return StepResult(
            next_obs=self.observation(),
            reward=float(reward),
            done=self.terminated,
            gt_cost=driver_gt_cost(self),
        )


def driver_step(world: DriverWorld, action) -> StepResult:
    return world.step(action)


def driver_gt_cost(world: DriverWorld) -> int:
    """Binary ground-truth cost of the current scene (ego perspective)."""
    if world.off_road() or world.backward():
        return 1
    if world.ego.v > world.config.v_max:
        return 1
    if world.max_proximity() >= COST_PROXIMITY_THRESHOLD:
        return 1
    return 0


class DriverEnv:
    """Episodic environment facade over :class:`DriverWorld`."""

    is_discrete = False

    def __init__(self, config: DriverConfig):
        self.config = config
        self.world: DriverWorld | None = None

    @property
    def obs_dim(self) -> int:
        return 4 * (1 + 2)

    @property
    def action_dim(self) -> int:
        return 2

    @property
    def task_feature_indices(self) -> list[int]:
        return list(range(self.obs_dim))

    def reset(self, seed: int | None = None) -> np.ndarray:
        self.world = DriverWorld(self.config, seed=0 if seed is None else seed)
        return self.world.observation()

    def step(self, action) -> StepResult:
        if self.world is None:
            raise RuntimeError("reset() must be called before step()")
        return self.world.step(action)

    @property
    def episode_terminated(self) -> bool:
        """Collision or reaching the road top, as opposed to timing out."""
        if self.world is None:
            return False
        return self.world.collided or self.world.ego.y >= self.config.road_top

    def render_meta(self) -> dict:
        return {
            "env": "driver",
            "scenario": self.config.scenario,
            "lane_width": self.config.lane_width,
            "n_lanes": self.config.n_lanes,
            "road_top": self.config.road_top,
            "n_vehicles": 3,
        }
