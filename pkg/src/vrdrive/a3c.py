"""Asynchronous advantage actor-critic over rendered driving frames.

Workers are threads.  Each owns a simulator, a private copy of the policy
network and its own RNG; the only shared object is :class:`GlobalParams`,
whose parameters, RMSProp statistics and counters change exclusively under
its lock (snapshot and apply are the two critical sections).
"""

from __future__ import annotations

import csv
import logging
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import sim
from .autodiff import RMSProp, Tensor, clip_by_global_norm
from .autodiff import functional as F
from .nets import N_ACTIONS, STACK, PolicyValueNet

log = logging.getLogger(__name__)

CURVE_HEADER = ("wall_clock_s", "global_step", "worker_id", "episode_reward", "episode_len")
OBS_MODES = ("raw", "translated", "randomized")


@dataclass
class A3CConfig:
    workers: int = 12
    lr: float = 0.01
    rms_decay: float = 0.9
    rms_eps: float = 0.1
    discount: float = 0.99
    t_max: int = 5
    entropy_coeff: float = 0.01
    value_coeff: float = 0.5
    grad_clip_norm: float = 40.0
    obs_mode: str = "raw"
    style: str = "virtual"  # base style in raw mode ("real" gives the oracle condition)
    styles: int = 10  # randomized-mode style count
    max_episode_steps: int = sim.MAX_STEPS
    random_start: bool = True
    checkpoint_every: int = 0
    reward: sim.RewardConfig = field(default_factory=sim.RewardConfig)

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must be in (0, 1), got {self.discount}")
        if self.obs_mode not in OBS_MODES:
            raise ValueError(f"obs_mode must be one of {OBS_MODES}, got {self.obs_mode!r}")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    done: bool
    value_est: float


@dataclass
class RolloutSegment:
    transitions: list[Transition]
    bootstrap: float = 0.0

    def __post_init__(self):
        dones = [t.done for t in self.transitions]
        if any(dones[:-1]):
            raise ValueError("a rollout segment may only end with a terminal transition")


# ---------------------------------------------------------------------------
# pure helpers
# ---------------------------------------------------------------------------

def stack_frames(history: Sequence[np.ndarray]) -> np.ndarray:
    """Channel-concatenate exactly four (3, H, W) frames, oldest first."""
    if len(history) != STACK:
        raise ValueError(f"expected {STACK} frames, got {len(history)}")
    return np.concatenate(list(history), axis=0)


class FrameStack:
    """Rolling window of the last four frames; a new episode repeats its first frame."""

    def __init__(self):
        self.frames: deque[np.ndarray] = deque(maxlen=STACK)

    def reset(self, frame: np.ndarray) -> np.ndarray:
        self.frames.clear()
        self.frames.extend([frame] * STACK)
        return stack_frames(self.frames)

    def push(self, frame: np.ndarray) -> np.ndarray:
        self.frames.append(frame)
        return stack_frames(self.frames)


def n_step_returns(segment: RolloutSegment, discount: float) -> tuple[np.ndarray, np.ndarray]:
    """Discounted n-step returns and advantages, seeded with the bootstrap value."""
    trs = segment.transitions
    if not trs:
        raise ValueError("empty rollout segment")
    R = 0.0 if trs[-1].done else float(segment.bootstrap)
    returns = np.empty(len(trs))
    for t in range(len(trs) - 1, -1, -1):
        R = trs[t].reward + discount * R
        returns[t] = R
    values = np.array([t.value_est for t in trs])
    return returns, returns - values


def entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, 1e-12, 1.0)
    return -(probs * np.log(p)).sum(axis=-1)


def act_greedy(net: PolicyValueNet, obs: np.ndarray) -> int:
    probs, _ = net.forward(obs)
    return greedy_from_probs(probs[0])


def greedy_from_probs(probs: np.ndarray) -> int:
    if not np.isfinite(probs).all():
        raise FloatingPointError("non-finite action probabilities")
    return int(np.argmax(probs))  # first maximum wins ties


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(probs)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(probs) - 1))


def a3c_loss(net: PolicyValueNet, p: dict[str, Tensor], obs: np.ndarray, actions: np.ndarray,
             returns: np.ndarray, cfg: A3CConfig, advantages: np.ndarray | None = None
             ) -> tuple[Tensor, dict[str, float]]:
    """Policy-gradient + value + entropy loss, summed over the segment.

    The advantage defaults to ``returns`` minus the critic's current
    estimate; either way it is a constant (no gradient flows through it).
    """
    logits, values = net.logits_value(obs, p)
    logp = F.log_softmax(logits)
    probs = F.softmax(logits)
    if advantages is None:
        advantages = returns - values.data
    adv = np.asarray(advantages, dtype=logits.dtype)
    policy = F.mul(F.sum_(F.mul(F.pick(logp, actions), Tensor(adv))), -1.0)
    err = F.sub(Tensor(returns.astype(values.dtype)), values)
    value = F.mul(F.sum_(F.square(err)), cfg.value_coeff)
    ent = F.mul(F.sum_(F.mul(probs, logp)), -1.0)
    total = F.sub(F.add(policy, value), F.mul(ent, cfg.entropy_coeff))
    stats = {"policy": float(policy.data), "value": float(value.data), "entropy": float(ent.data) / len(actions)}
    return total, stats


# ---------------------------------------------------------------------------
# shared state
# ---------------------------------------------------------------------------

class GlobalParams:
    def __init__(self, net: PolicyValueNet, cfg: A3CConfig):
        self.net = net
        self.opt = RMSProp(lr=cfg.lr, decay=cfg.rms_decay, eps=cfg.rms_eps)
        self.lock = threading.Lock()
        self.step = 0
        self.updates: dict[int, int] = {}
        self.dropped = 0
        self.nonfinite_seen = False

    def snapshot(self, into: PolicyValueNet) -> int:
        with self.lock:
            for k, v in self.net.params.items():
                np.copyto(into.params[k], v)
            return self.step

    def apply(self, worker_id: int, grads: dict[str, np.ndarray], steps: int) -> int:
        with self.lock:
            self.opt.step(self.net.params, grads)
            if not all(np.isfinite(v).all() for v in self.net.params.values()):
                self.nonfinite_seen = True
                raise FloatingPointError("global parameters became non-finite")
            self.step += steps
            self.updates[worker_id] = self.updates.get(worker_id, 0) + 1
            return self.step

    def add_steps(self, steps: int) -> int:
        with self.lock:
            self.step += steps
            return self.step


# ---------------------------------------------------------------------------
# workers
# ---------------------------------------------------------------------------

ObsFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class EpisodeStat:
    wall_clock_s: float
    global_step: int
    worker_id: int
    episode_reward: float
    episode_len: int

    def row(self) -> tuple:
        return (f"{self.wall_clock_s:.3f}", self.global_step, self.worker_id,
                repr(float(self.episode_reward)), self.episode_len)


@dataclass
class WorkerSpec:
    worker_id: int
    env: sim.DrivingEnv
    styles: list[sim.RenderStyle] = field(default_factory=list)
    obs_fn: ObsFn | None = None


def worker_loop(spec: WorkerSpec, shared: GlobalParams, cfg: A3CConfig, budget: int, seed: int,
                t0: float, emit: Callable[[EpisodeStat], None]) -> None:
    """Roll out, compute local gradients, apply them to the shared parameters."""
    rng = np.random.default_rng([seed, spec.worker_id, 0xA3C])
    local = shared.net.copy()
    env = spec.env
    stacker = FrameStack()
    episode = 0

    def observe(frame):
        return spec.obs_fn(frame) if spec.obs_fn is not None else frame

    def new_episode():
        if spec.styles:
            env.style = spec.styles[(spec.worker_id + episode) % len(spec.styles)]
        start = float(rng.random()) if cfg.random_start else 0.0
        return stacker.reset(observe(env.reset(start)))

    obs = new_episode()
    ep_reward, ep_len = 0.0, 0
    global_step = shared.snapshot(local)
    while global_step < budget:
        trs: list[Transition] = []
        done = False
        while len(trs) < cfg.t_max and not done:
            probs, value = local.forward(obs[None])
            a = sample_action(probs[0], rng)
            frame, r, done = env.step(a)
            trs.append(Transition(obs, a, r, done, float(value[0])))
            ep_reward += r
            ep_len += 1
            if not done:
                obs = stacker.push(observe(frame))
        bootstrap = 0.0 if done else float(local.forward(obs[None])[1][0])
        seg = RolloutSegment(trs, bootstrap)
        returns, _ = n_step_returns(seg, cfg.discount)
        p = local.tensors()
        loss, _ = a3c_loss(local, p, np.stack([t.obs for t in trs]), np.array([t.action for t in trs]),
                           returns, cfg)
        loss.backward()
        grads = {k: t.grad for k, t in p.items() if t.grad is not None}
        norm = clip_by_global_norm(grads, cfg.grad_clip_norm)
        if not math.isfinite(norm) or not np.isfinite(float(loss.data)):
            with shared.lock:
                shared.dropped += 1
            log.warning("worker %d dropped a segment with non-finite gradient", spec.worker_id)
            global_step = shared.add_steps(len(trs))
        else:
            global_step = shared.apply(spec.worker_id, grads, len(trs))
        if done:
            emit(EpisodeStat(time.perf_counter() - t0, global_step, spec.worker_id, ep_reward, ep_len))
            episode += 1
            ep_reward, ep_len = 0.0, 0
            obs = new_episode()
        global_step = shared.snapshot(local)


# ---------------------------------------------------------------------------
# training driver
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    net: PolicyValueNet
    curve: list[EpisodeStat]
    global_step: int
    updates: dict[int, int]
    dropped: int
    nonfinite_seen: bool


def build_workers(cfg: A3CConfig, track: sim.Track, seed: int, obs_fn: ObsFn | None = None) -> list[WorkerSpec]:
    if cfg.obs_mode == "translated" and obs_fn is None:
        raise ValueError("translated mode needs a translation pipeline")
    base = sim.RenderStyle(cfg.style)
    if cfg.obs_mode == "translated":
        base = sim.VIRTUAL
    styles = sim.randomized_styles(cfg.styles, seed) if cfg.obs_mode == "randomized" else []
    specs = []
    for w in range(cfg.workers):
        env = sim.DrivingEnv(track, styles[w % len(styles)] if styles else base, cfg.reward,
                             max_steps=cfg.max_episode_steps)
        specs.append(WorkerSpec(w, env, styles, obs_fn))
    return specs


def train(cfg: A3CConfig, track: sim.Track, budget_steps: int, seed: int = 0,
          obs_fn: ObsFn | None = None, net: PolicyValueNet | None = None,
          curve_path: str | Path | None = None,
          on_checkpoint: Callable[[GlobalParams], None] | None = None) -> TrainResult:
    """Train a policy until the shared step counter reaches ``budget_steps``.

    ``obs_fn`` maps each rendered frame to the agent's observation; in
    translated mode it is the realistic output of the translation pipeline.
    """
    if budget_steps <= 0:
        raise ValueError("budget_steps must be positive")
    net = net if net is not None else PolicyValueNet(seed=seed)
    shared = GlobalParams(net, cfg)
    specs = build_workers(cfg, track, seed, obs_fn)
    track.segment_field()
    curve: list[EpisodeStat] = []
    curve_lock = threading.Lock()
    fh = writer = None
    if curve_path is not None:
        fh = open(curve_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
    next_ckpt = [cfg.checkpoint_every]

    def emit(stat: EpisodeStat):
        with curve_lock:
            curve.append(stat)
            if writer is not None:
                writer.writerow(stat.row())
                fh.flush()
            if on_checkpoint is not None and cfg.checkpoint_every and stat.global_step >= next_ckpt[0]:
                next_ckpt[0] += cfg.checkpoint_every
                with shared.lock:
                    on_checkpoint(shared)

    t0 = time.perf_counter()
    errors: list[BaseException] = []
    try:
        if cfg.workers == 1:
            worker_loop(specs[0], shared, cfg, budget_steps, seed, t0, emit)
        else:
            def run(spec):
                try:
                    worker_loop(spec, shared, cfg, budget_steps, seed, t0, emit)
                except BaseException as exc:  # surfaced after join
                    errors.append(exc)

            threads = [threading.Thread(target=run, args=(s,), name=f"a3c-{s.worker_id}", daemon=True)
                       for s in specs]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
    finally:
        if fh is not None:
            fh.close()
    if errors:
        raise errors[0]
    return TrainResult(shared.net, curve, shared.step, dict(shared.updates), shared.dropped, shared.nonfinite_seen)


def smoothed(values: Iterable[float], window: int = 10) -> np.ndarray:
    v = np.asarray(list(values), dtype=float)
    if len(v) == 0:
        return v
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty(len(v))
    for i in range(len(v)):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out
