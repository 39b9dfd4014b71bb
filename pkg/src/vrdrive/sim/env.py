from __future__ import annotations

import numpy as np

from . import car
from .render import RenderStyle, render
from .track import Track


class DrivingEnv:
    """One simulator instance: a track, a visual style and the current car state.

    Instances share nothing mutable, so each worker thread can own one.
    """

    def __init__(self, track: Track, style: RenderStyle, reward_cfg: car.RewardConfig | None = None,
                 max_steps: int = car.MAX_STEPS, dt: float = car.DT):
        self.track = track
        self.style = style
        self.reward_cfg = reward_cfg or car.RewardConfig()
        self.max_steps = max_steps
        self.dt = dt
        self.state: car.CarState | None = None

    def reset(self, start: float = 0.0) -> np.ndarray:
        self.state = car.reset(self.track, start=start)
        return render(self.state, self.track, self.style)

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        self.state, r, done = car.step(self.state, action, self.track, self.dt,
                                       self.reward_cfg, self.max_steps)
        return render(self.state, self.track, self.style), r, done
