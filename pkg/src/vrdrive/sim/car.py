"""Point-mass car kinematics, the 9-action scheme and the driving reward."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .track import Track

V_MAX = 20.0
STEER_RATE = 0.25  # rad/s
ACCEL = 4.0  # m/s^2
BRAKE = 6.0  # m/s^2
DT = 0.1
MAX_STEPS = 2000
N_ACTIONS = 9

# lateral: +1 left, 0 straight, -1 right; longitudinal: +1 accelerate, -1 brake, 0 coast
ACTIONS: tuple[tuple[int, int], ...] = (
    (0, 1), (1, 1), (-1, 1),
    (0, -1), (1, -1), (-1, -1),
    (0, 0), (1, 0), (-1, 0),
)
ACTION_NAMES = (
    "straight+accelerate", "left+accelerate", "right+accelerate",
    "straight+brake", "left+brake", "right+brake",
    "straight", "left", "right",
)


@dataclass(frozen=True)
class RewardConfig:
    beta: float = 0.006
    gamma: float = -0.025

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.gamma < 0:
            raise ValueError(f"gamma must be negative, got {self.gamma}")


@dataclass(frozen=True)
class CarState:
    position: tuple[float, float]
    heading: float
    speed: float
    alpha: float
    dist_center: float
    collided: bool
    steps: int = 0
    arc: float = 0.0


def wrap_angle(a: float) -> float:
    """Map to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def reward(speed: float, alpha: float, dist_center: float, collided: bool,
           cfg: RewardConfig = RewardConfig()) -> float:
    if collided:
        return cfg.gamma
    return (speed * math.cos(alpha) - dist_center) * cfg.beta


def observe(track: Track, position, heading: float, speed: float, steps: int) -> CarState:
    """Build a CarState with all track-relative quantities derived from the pose."""
    _, dist, _, tangent, arc = track.nearest(position)
    return CarState(
        position=(float(position[0]), float(position[1])),
        heading=heading,
        speed=speed,
        alpha=wrap_angle(heading - tangent),
        dist_center=dist,
        collided=dist > track.half_width,
        steps=steps,
        arc=arc,
    )


def reset(track: Track, rng_seed: int = 0, start: float = 0.0) -> CarState:
    """Spawn on the centerline at lap fraction ``start`` facing along the tangent.

    ``rng_seed`` is accepted for interface symmetry; the spawn itself is
    seed-independent.
    """
    pos, tangent = track.point_at(start)
    return observe(track, pos, tangent, 0.0, 0)


def decode_action(action: int) -> tuple[int, int]:
    if not isinstance(action, (int,)) and not hasattr(action, "__index__"):
        raise TypeError(f"action must be an integer index, got {action!r}")
    a = int(action)
    if not 0 <= a < N_ACTIONS:
        raise ValueError(f"action must be in 0..{N_ACTIONS - 1}, got {action}")
    return ACTIONS[a]


def step(state: CarState, action: int, track: Track, dt: float = DT,
         cfg: RewardConfig = RewardConfig(), max_steps: int = MAX_STEPS) -> tuple[CarState, float, bool]:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    lateral, longitudinal = decode_action(action)
    heading = wrap_angle(state.heading + lateral * STEER_RATE * dt)
    x = state.position[0] + state.speed * math.cos(heading) * dt
    y = state.position[1] + state.speed * math.sin(heading) * dt
    v = state.speed
    if longitudinal > 0:
        v += ACCEL * dt
    elif longitudinal < 0:
        v -= BRAKE * dt
    v = min(max(v, 0.0), V_MAX)
    new = observe(track, (x, y), heading, v, state.steps + 1)
    r = reward(new.speed, new.alpha, new.dist_center, new.collided, cfg)
    done = new.collided or new.steps >= max_steps
    return new, r, done

