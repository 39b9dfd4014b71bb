"""Evaluation protocols: steering labels, action accuracy on a drive log,
the supervised baseline, and the four-way transfer comparison."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import a3c, sim, vrt1
from .autodiff import Adam
from .autodiff import functional as F
from .nets import PolicyValueNet

log = logging.getLogger(__name__)

STRAIGHT, LEFT, RIGHT = 0, 1, 2
LABEL_NAMES = ("straight", "left", "right")
TURN_DEG = 10.0
METHODS = ("Oracle", "Ours", "DR", "B-RL", "SV")
MIN_TRANSFER_BUDGET = 1000
MIN_EVAL_EPISODES = 50


def map_steering_to_action(angle_degrees: float) -> int:
    """Open interval (-10, 10) is straight; <= -10 is left, >= 10 is right."""
    a = float(angle_degrees)
    if not math.isfinite(a):
        raise ValueError(f"steering angle must be finite, got {angle_degrees!r}")
    if a <= -TURN_DEG:
        return LEFT
    if a >= TURN_DEG:
        return RIGHT
    return STRAIGHT


def collapse_9_to_3(action: int) -> int:
    lateral, _ = sim.decode_action(action)
    return {0: STRAIGHT, 1: LEFT, -1: RIGHT}[lateral]


# lateral-only actions with no throttle change, used as the 9-way target for 3-way labels
COAST_ACTION = {STRAIGHT: 6, LEFT: 7, RIGHT: 8}


# ---------------------------------------------------------------------------
# drive log
# ---------------------------------------------------------------------------

@dataclass
class LabeledDriveLog:
    frames: np.ndarray  # (n, 3, H, W)
    angles: np.ndarray  # steering-wheel degrees, negative = left

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ValueError(f"frames must be (n, 3, H, W), got {self.frames.shape}")
        if len(self.frames) != len(self.angles):
            raise ValueError("frames and angles differ in length")

    @property
    def labels(self) -> np.ndarray:
        return np.array([map_steering_to_action(a) for a in self.angles], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.frames)

    def split(self, fraction: float = 0.5) -> tuple["LabeledDriveLog", "LabeledDriveLog"]:
        """Contiguous split (first part, rest) so the two logs cover different road."""
        k = int(round(len(self) * fraction))
        return (LabeledDriveLog(self.frames[:k], self.angles[:k]),
                LabeledDriveLog(self.frames[k:], self.angles[k:]))

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        (d / "frames").mkdir(parents=True, exist_ok=True)
        with open(d / "angles.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("frame", "steering_deg"))
            for i, (f, a) in enumerate(zip(self.frames, self.angles)):
                name = f"frames/{i:05d}.vrt"
                vrt1.save(d / name, f)
                w.writerow((name, repr(float(a))))

    @classmethod
    def load(cls, directory: str | Path) -> "LabeledDriveLog":
        d = Path(directory)
        frames, angles = [], []
        with open(d / "angles.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                frames.append(vrt1.load(d / row["frame"]))
                angles.append(float(row["steering_deg"]))
        if not frames:
            raise ValueError(f"{d}: empty drive log")
        return cls(np.stack(frames), np.array(angles))


def make_drive_log(track: sim.Track, n: int, style: sim.RenderStyle = sim.REAL, start: float = 0.0,
                   cruise: float = sim.control.CRUISE_SPEED) -> LabeledDriveLog:
    """Record ``n`` consecutive frames of the centerline follower with its steering angles."""
    if n < 1:
        raise ValueError("drive log needs at least one frame")
    s = sim.reset(track, start=start)
    frames = np.empty((n, 3, sim.HEIGHT, sim.WIDTH), dtype=np.float32)
    angles = np.empty(n)
    for i in range(n):
        a, ang = sim.center_follow(s, track, cruise=cruise)
        frames[i] = sim.render(s, track, style)
        angles[i] = ang
        s, _, _ = sim.step(s, a, track, max_steps=n + 1)
        if s.collided:
            raise RuntimeError(f"log driver left the road at frame {i}")
    return LabeledDriveLog(frames, angles)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    method: str
    accuracy: float = float("nan")
    confusion: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), dtype=np.int64))
    mean_reward: float | None = None
    reward_min: float | None = None
    reward_max: float | None = None
    per_seed: list[float] = field(default_factory=list)

    @classmethod
    def from_predictions(cls, method: str, truth: np.ndarray, pred: np.ndarray) -> "EvalReport":
        conf = np.zeros((3, 3), dtype=np.int64)
        np.add.at(conf, (truth, pred), 1)
        return cls(method, float(np.trace(conf) / conf.sum()), conf)


def _stacked(frames: np.ndarray) -> np.ndarray:
    """Per-frame stacked observations over an ordered log (start padded by repetition)."""
    n = len(frames)
    idx = np.maximum(np.arange(n)[:, None] + np.arange(-a3c.STACK + 1, 1)[None, :], 0)
    return frames[idx].reshape(n, 3 * a3c.STACK, *frames.shape[2:])


def policy_actions(net: PolicyValueNet, obs: np.ndarray, batch: int = 64) -> np.ndarray:
    out = np.empty(len(obs), dtype=np.int64)
    for s in range(0, len(obs), batch):
        probs, _ = net.forward(obs[s:s + batch])
        for k, p in enumerate(probs):
            out[s + k] = a3c.greedy_from_probs(p)
    return out


def evaluate_on_log(policy: PolicyValueNet | Callable[[np.ndarray], np.ndarray], drive_log: LabeledDriveLog,
                    method: str = "Ours") -> EvalReport:
    """Greedy 9-way actions on the stacked log, collapsed to 3 labels and scored."""
    if len(drive_log) == 0:
        raise ValueError("empty drive log")
    obs = _stacked(drive_log.frames)
    if isinstance(policy, PolicyValueNet):
        expect = (policy.in_ch, policy.size, policy.size)
        if obs.shape[1:] != expect:
            raise ValueError(f"log frames give observations {obs.shape[1:]}, policy expects {expect}")
        actions = policy_actions(policy, obs)
    else:
        actions = np.asarray(policy(obs), dtype=np.int64)
    pred = np.array([collapse_9_to_3(int(a)) for a in actions])
    return EvalReport.from_predictions(method, drive_log.labels, pred)


def train_supervised_baseline(drive_log: LabeledDriveLog, epochs: int = 10, seed: int = 0, lr: float = 1e-3,
                              batch: int = 32) -> PolicyValueNet:
    """Cross-entropy on the policy head; each 3-way label targets its coasting 9-way action."""
    labels = drive_log.labels
    if len(np.unique(labels)) < 2:
        warnings.warn("drive log holds a single steering class; the baseline can only learn that class",
                      RuntimeWarning, stacklevel=2)
    net = PolicyValueNet(seed=seed, zero_policy_head=True)
    obs = _stacked(drive_log.frames)
    target = np.array([COAST_ACTION[int(c)] for c in labels])
    opt = Adam(lr=lr, beta1=0.9)
    rng = np.random.default_rng([seed, 0x5B])
    for _ in range(epochs):
        perm = rng.permutation(len(obs))
        for s in range(0, len(perm), batch):
            bi = perm[s:s + batch]
            p = net.tensors()
            logits, _ = net.logits_value(obs[bi], p)
            loss = F.mul(F.mean(F.pick(F.log_softmax(logits), target[bi])), -1.0)
            loss.backward()
            opt.step(net.params, {k: t.grad for k, t in p.items()})
    return net


# ---------------------------------------------------------------------------
# closed-loop evaluation
# ---------------------------------------------------------------------------

def greedy_episodes(net: PolicyValueNet, track: sim.Track, style: sim.RenderStyle, episodes: int,
                    seed: int = 0, max_steps: int = 500,
                    obs_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> np.ndarray:
    """Total reward of greedy episodes from evenly spread, seed-jittered starts.

    All episodes advance in lockstep so the policy runs one batched
    forward per step.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    rng = np.random.default_rng([seed, 0xE7A1])
    starts = (np.arange(episodes) + rng.random(episodes)) / episodes
    envs = [sim.DrivingEnv(track, style, max_steps=max_steps) for _ in range(episodes)]
    stacks = [a3c.FrameStack() for _ in range(episodes)]
    fix = obs_fn or (lambda f: f)
    obs = np.stack([st.reset(fix(e.reset(float(s0)))) for st, e, s0 in zip(stacks, envs, starts)])
    totals = np.zeros(episodes)
    alive = np.ones(episodes, dtype=bool)
    while alive.any():
        live = np.flatnonzero(alive)
        actions = policy_actions(net, obs[live])
        for k, a in zip(live, actions):
            frame, r, done = envs[k].step(int(a))
            totals[k] += r
            if done:
                alive[k] = False
            else:
                obs[k] = stacks[k].push(fix(frame))
    return totals


@dataclass
class TransferSetup:
    track_train: sim.Track
    track_test: sim.Track
    pipeline: object | None = None  # gan.TranslationPipeline
    cfg: a3c.A3CConfig = field(default_factory=a3c.A3CConfig)
    eval_episodes: int = MIN_EVAL_EPISODES
    eval_max_steps: int = 500
    out: Path | None = None


def _method_config(method: str, base: a3c.A3CConfig) -> a3c.A3CConfig:
    from dataclasses import replace

    if method == "Oracle":
        return replace(base, obs_mode="raw", style="real")
    if method == "Ours":
        return replace(base, obs_mode="translated")
    if method == "DR":
        return replace(base, obs_mode="randomized")
    if method == "B-RL":
        return replace(base, obs_mode="raw", style="virtual")
    raise ValueError(f"unknown method {method!r}")


def run_transfer_agent(method: str, setup: TransferSetup, budget: int, seed: int) -> tuple[float, a3c.TrainResult]:
    """Train one agent for ``method`` and return its mean greedy reward on the test track."""
    cfg = _method_config(method, setup.cfg)
    track = setup.track_test if method == "Oracle" else setup.track_train
    obs_fn = None
    if method == "Ours":
        if setup.pipeline is None:
            raise ValueError("the Ours condition needs a translation pipeline")
        obs_fn = setup.pipeline.realistic
    curve_path = None
    if setup.out is not None:
        setup.out.mkdir(parents=True, exist_ok=True)
        curve_path = setup.out / f"curve_{method}_seed{seed}.csv"
    res = a3c.train(cfg, track, budget, seed=seed, obs_fn=obs_fn, curve_path=curve_path)
    if setup.out is not None:
        from . import checkpoint

        checkpoint.save(setup.out / f"policy_{method}_seed{seed}.ckpt", res.net)
    rewards = greedy_episodes(res.net, setup.track_test, sim.REAL, setup.eval_episodes, seed=seed,
                              max_steps=setup.eval_max_steps)
    log.info("%s seed %d: mean greedy reward %.3f", method, seed, rewards.mean())
    return float(rewards.mean()), res


def transfer_experiment(setup: TransferSetup, budget: int, seeds: Sequence[int],
                        methods: Sequence[str] = ("Oracle", "Ours", "DR", "B-RL")) -> list[EvalReport]:
    """Train and evaluate every method on every seed; reports hold seed-mean, min and max."""
    if budget < MIN_TRANSFER_BUDGET:
        raise ValueError(f"budget {budget} is below the minimum of {MIN_TRANSFER_BUDGET} steps; refusing to report")
    if setup.track_train.same_geometry(setup.track_test):
        raise ValueError("train and test tracks must differ")
    if setup.eval_episodes < MIN_EVAL_EPISODES:
        raise ValueError(f"need >= {MIN_EVAL_EPISODES} evaluation episodes")
    reports = []
    for method in methods:
        scores = [run_transfer_agent(method, setup, budget, s)[0] for s in seeds]
        reports.append(EvalReport(method, mean_reward=float(np.mean(scores)), reward_min=float(np.min(scores)),
                                  reward_max=float(np.max(scores)), per_seed=scores))
        if setup.out is not None:
            write_reports(reports, setup.out / "transfer")
    return reports


def transfer_ordering(reports: Sequence[EvalReport], ratio: float = 1.2) -> dict[str, bool]:
    r = {rep.method: rep.mean_reward for rep in reports}
    return {
        "Oracle >= Ours": r["Oracle"] >= r["Ours"],
        "Ours >= DR": r["Ours"] >= r["DR"],
        f"Ours >= {ratio} x B-RL": r["Ours"] >= ratio * r["B-RL"],
    }


def write_reports(reports: Sequence[EvalReport], stem: str | Path) -> tuple[Path, Path]:
    """``<stem>.csv`` and an aligned ``<stem>.txt`` table."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = ("method", "accuracy", "mean_reward", "reward_min", "reward_max", "per_seed")

    def fmt(v):
        return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4f}"

    rows = [(r.method, fmt(r.accuracy), fmt(r.mean_reward), fmt(r.reward_min), fmt(r.reward_max),
             " ".join(f"{x:.4f}" for x in r.per_seed)) for r in reports]
    csv_path = stem.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(x).ljust(wd) for x, wd in zip(row, widths)).rstrip() for row in (header, *rows)]
    txt_path = stem.with_suffix(".txt")
    txt_path.write_text("\n".join(lines) + "\n")
    return csv_path, txt_path
