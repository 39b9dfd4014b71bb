"""Scripted drivers used for data collection and the labelled drive log."""

from __future__ import annotations

import math

import numpy as np

from .car import ACTIONS, CarState, wrap_angle
from .track import Track

WHEELBASE = 2.7
STEER_RATIO = 15.0  # steering-wheel degrees per road-wheel degree
TURN_THRESHOLD_DEG = 10.0
CRUISE_SPEED = 10.0
LOOKAHEAD = 10.0


def _action_index(lateral: int, longitudinal: int) -> int:
    return ACTIONS.index((lateral, longitudinal))


def steering_wheel_angle(state: CarState, track: Track, lookahead: float = LOOKAHEAD) -> float:
    """Pure-pursuit steering-wheel angle in degrees toward a point ahead on the centerline.

    Negative angles steer left (counter-clockwise), matching the
    convention of the drive-log labels.
    """
    target, _ = track.point_at(((state.arc + lookahead) / track.length) % 1.0)
    dx = target[0] - state.position[0]
    dy = target[1] - state.position[1]
    eta = wrap_angle(math.atan2(dy, dx) - state.heading)
    dist = max(math.hypot(dx, dy), 1e-6)
    curvature = 2.0 * math.sin(eta) / dist  # positive = turn left
    return -STEER_RATIO * math.degrees(math.atan(WHEELBASE * curvature))


def center_follow(state: CarState, track: Track, cruise: float = CRUISE_SPEED,
                  lookahead: float = LOOKAHEAD) -> tuple[int, float]:
    """Bang-bang centerline follower; returns (action index, steering-wheel angle).

    The lateral command is exactly the label rule applied to the angle, so
    a log recorded with this driver is self-consistent.
    """
    angle = steering_wheel_angle(state, track, lookahead)
    lateral = 1 if angle <= -TURN_THRESHOLD_DEG else (-1 if angle >= TURN_THRESHOLD_DEG else 0)
    longitudinal = 1 if state.speed < cruise else 0
    return _action_index(lateral, longitudinal), angle


def random_drive(state: CarState, track: Track, rng: np.random.Generator, cruise: float = CRUISE_SPEED) -> int:
    """Center-following with random lateral perturbations (wanders but rarely crashes)."""
    action, _ = center_follow(state, track, cruise)
    if rng.random() < 0.3:
        lateral = int(rng.integers(-1, 2))
        action = _action_index(lateral, ACTIONS[action][1])
    return action
