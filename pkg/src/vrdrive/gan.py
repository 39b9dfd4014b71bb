"""Two-stage conditional-GAN translation: virtual -> parsing -> realistic.

Each stage is a U-Net generator trained against its own patch
discriminator with the adversarial + L1 objective.  The composed pair is
the frame filter applied to simulator output during agent training.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, sim, vrt1
from .autodiff import Adam, Tensor
from .autodiff import functional as F
from .nets import Discriminator, Generator

log = logging.getLogger(__name__)

P_CLAMP = (1e-7, 1.0 - 1e-7)
CURVE_HEADER = ("epoch", "d_loss", "g_adv", "g_l1", "holdout_l1")
STAGES = ("virtual_to_parsing", "parsing_to_real")
MIN_TRAIN = 64
MIN_PAIRS = 64
HOLDOUT_FRACTION = 0.125


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GanLossReport:
    d_loss: float
    g_adv_loss: float
    g_l1_loss: float
    combined: float
    lam: float = 100.0


def _log_p(d: Tensor) -> Tensor:
    return F.log(d, clamp=P_CLAMP)


def _log_1mp(d: Tensor) -> Tensor:
    # clamping 1 - D to the same interval is the same as clamping D
    return F.log(F.add(F.mul(d, -1.0), 1.0), clamp=P_CLAMP)


def d_loss_from_probs(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """``-[mean log D(x, s) + mean log(1 - D(x, G(x)))]`` over the patch grid."""
    return F.mul(F.add(F.mean(_log_p(d_real)), F.mean(_log_1mp(d_fake))), -1.0)


def g_adv_from_probs(d_fake: Tensor) -> Tensor:
    """Non-saturating generator term ``-mean log D(x, G(x))``."""
    return F.mul(F.mean(_log_p(d_fake)), -1.0)


def d_loss(D: Discriminator, condition, real_target, fake_target, train: bool = False,
           p: dict[str, Tensor] | None = None) -> Tensor:
    loss = d_loss_from_probs(D.forward(condition, real_target, train, p), D.forward(condition, fake_target, train, p))
    _check_finite(loss, "discriminator loss")
    return loss


def g_loss(D: Discriminator, condition, fake_target, real_target, lam: float = 100.0,
           train: bool = False, p: dict[str, Tensor] | None = None) -> tuple[Tensor, GanLossReport]:
    """Combined generator objective and its report (``d_loss`` left at 0)."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    fake = fake_target if isinstance(fake_target, Tensor) else Tensor(np.asarray(fake_target, dtype=D.dtype))
    adv = g_adv_from_probs(D.forward(condition, fake, train, p))
    l1 = F.l1_mean(fake, real_target)
    combined = F.add(adv, F.mul(l1, lam))
    _check_finite(combined, "generator loss")
    adv_v, l1_v = float(adv.data), float(l1.data)
    return combined, GanLossReport(0.0, adv_v, l1_v, adv_v + lam * l1_v, lam)


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def _check_finite(t: Tensor, what: str) -> None:
    if not np.isfinite(t.data).all():
        raise FloatingPointError(f"{what} is not finite ({t.data})")


# ---------------------------------------------------------------------------
# paired data
# ---------------------------------------------------------------------------

@dataclass
class PairedSet:
    """Aligned (condition, target) frames with a held-out mask.

    ``labels`` holds the exact class map of every pair and ``arc`` the
    track position it was captured at.
    """

    condition: np.ndarray  # (n, 3, H, W) float32
    target: np.ndarray
    holdout: np.ndarray  # (n,) bool
    labels: np.ndarray  # (n, H, W) uint8
    arc: np.ndarray
    track_length: float = 0.0

    def __post_init__(self):
        n = len(self.condition)
        if not (len(self.target) == len(self.holdout) == len(self.labels) == n):
            raise ValueError("paired set arrays disagree in length")
        if self.condition.shape != self.target.shape:
            raise ValueError(f"condition {self.condition.shape} vs target {self.target.shape}")

    def __len__(self) -> int:
        return len(self.condition)

    @property
    def train_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.holdout)

    @property
    def holdout_idx(self) -> np.ndarray:
        return np.flatnonzero(self.holdout)

    def coverage(self) -> float:
        """Lap fraction spanned by the samples: one minus the largest arc gap between neighbours."""
        if self.track_length <= 0 or len(self.arc) == 0:
            return 0.0
        arc = np.sort(np.mod(self.arc, self.track_length))
        gaps = np.diff(np.concatenate([arc, [arc[0] + self.track_length]]))
        return float(1.0 - gaps.max() / self.track_length)


def sample_states(track: sim.Track, n: int, policy: str = "CenterFollow", seed: int = 0) -> list[sim.CarState]:
    """Drive the simulator to ``n`` distinct states spread over one lap.

    Sample ``i`` starts near lap fraction ``i / n`` and is driven for a
    random 10..40 steps, so speed, heading and lateral offset vary the way
    they would in a recorded drive.
    """
    if n < MIN_PAIRS:
        raise ValueError(f"need n >= {MIN_PAIRS} pairs, got {n}")
    if policy not in ("CenterFollow", "RandomDrive"):
        raise ValueError(f"unknown data policy {policy!r}")
    rng = np.random.default_rng([seed, 0xDA7A])
    states = []
    for i in range(n):
        while True:
            frac = (i + rng.random()) / n
            lead = int(rng.integers(10, 41))
            # back off so the capture lands near the target fraction
            s = sim.reset(track, start=(frac - lead * sim.DT * 8.0 / track.length) % 1.0)
            s = sim.CarState(s.position, s.heading, float(rng.uniform(4.0, 12.0)), s.alpha, s.dist_center,
                             s.collided, 0, s.arc)
            for _ in range(lead):
                if policy == "CenterFollow":
                    a, _ = sim.center_follow(s, track, cruise=8.0)
                else:
                    a = sim.random_drive(s, track, rng, cruise=8.0)
                s, _, done = sim.step(s, a, track)
                if done:
                    break
            if not s.collided:
                states.append(s)
                break
    return states


def holdout_mask(n: int, seed: int, fraction: float = HOLDOUT_FRACTION) -> np.ndarray:
    k = max(1, int(np.ceil(n * fraction)))
    mask = np.zeros(n, dtype=bool)
    mask[np.random.default_rng([seed, 0x401D]).choice(n, size=k, replace=False)] = True
    return mask


def generate_paired_data(track: sim.Track, n: int, policy: str = "CenterFollow",
                         seed: int = 0) -> tuple[PairedSet, PairedSet]:
    """(Virtual, Parsing) and (Parsing, Real) pairs rendered from shared states."""
    states = sample_states(track, n, policy, seed)
    virt = np.empty((n, 3, sim.HEIGHT, sim.WIDTH), dtype=np.float32)
    pars = np.empty_like(virt)
    real = np.empty_like(virt)
    labels = np.empty((n, sim.HEIGHT, sim.WIDTH), dtype=np.uint8)
    for i, s in enumerate(states):
        sc = sim.scene(s, track)
        labels[i] = sc.labels
        virt[i] = sim.colorize(sc, sim.VIRTUAL, track)
        pars[i] = sim.colorize(sc, sim.PARSING, track)
        real[i] = sim.colorize(sc, sim.REAL, track)
    mask = holdout_mask(n, seed)
    arc = np.array([s.arc for s in states])
    return (PairedSet(virt, pars, mask, labels, arc, track.length),
            PairedSet(pars.copy(), real, mask.copy(), labels.copy(), arc.copy(), track.length))


def save_paired_set(data: PairedSet, out: str | Path) -> None:
    """Directory of VRT1 frames plus ``index.txt`` (``<pair_id> <cond> <target> <split>``)."""
    out = Path(out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(len(data)):
        cond = f"frames/{i:05d}_cond.vrt"
        tgt = f"frames/{i:05d}_target.vrt"
        vrt1.save(out / cond, data.condition[i])
        vrt1.save(out / tgt, data.target[i])
        lines.append(f"{i:05d} {cond} {tgt} {'heldout' if data.holdout[i] else 'train'}")
    (out / "index.txt").write_text("\n".join(lines) + "\n")
    vrt1.save(out / "labels.vrt", data.labels.astype(np.float32))
    vrt1.save(out / "arc.vrt", np.concatenate([[data.track_length], data.arc]).astype(np.float64))


def load_paired_set(root: str | Path) -> PairedSet:
    root = Path(root)
    index = root / "index.txt"
    if not index.exists():
        raise FileNotFoundError(f"{index}: dataset index not found")
    cond, tgt, hold = [], [], []
    for lineno, line in enumerate(index.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4 or parts[3] not in ("train", "heldout"):
            raise ValueError(f"{index}:{lineno}: malformed index line {line!r}")
        cond.append(vrt1.load(root / parts[1]))
        tgt.append(vrt1.load(root / parts[2]))
        hold.append(parts[3] == "heldout")
    if not cond:
        raise ValueError(f"{index}: empty dataset")
    labels = vrt1.load(root / "labels.vrt").astype(np.uint8)
    arc = vrt1.load(root / "arc.vrt")
    return PairedSet(np.stack(cond), np.stack(tgt), np.array(hold), labels, arc[1:], float(arc[0]))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class GanConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    batch: int = 16
    lam: float = 100.0
    epochs: int = 200
    size: int = 64


@dataclass
class EpochRecord:
    epoch: int
    d_loss: float
    g_adv: float
    g_l1: float
    holdout_l1: float

    def row(self) -> tuple:
        return (self.epoch, repr(self.d_loss), repr(self.g_adv), repr(self.g_l1), repr(self.holdout_l1))


@dataclass
class StageResult:
    generator: Generator
    discriminator: Discriminator
    curve: list[EpochRecord] = field(default_factory=list)
    initial_holdout_l1: float = float("nan")
    seconds: float = 0.0


def predict(G: Generator, frames: np.ndarray, batch: int = 32, noise: np.random.Generator | None = None) -> np.ndarray:
    """Eval-mode generator output for a stack of frames."""
    out = np.empty(frames.shape, dtype=np.float32)
    for s in range(0, len(frames), batch):
        out[s:s + batch] = G.forward(frames[s:s + batch], train=False, noise=noise).data
    return out


def holdout_l1(G: Generator, data: PairedSet) -> float:
    idx = data.holdout_idx
    if len(idx) == 0:
        return float("nan")
    return l1_distance(predict(G, data.condition[idx]), data.target[idx])


def train_stage(stage: str, data: PairedSet, epochs: int | None = None, seed: int = 0,
                cfg: GanConfig | None = None, curve_path: str | Path | None = None,
                checkpoint_dir: str | Path | None = None, G: Generator | None = None,
                D: Discriminator | None = None) -> StageResult:
    """Alternate one discriminator step and one generator step per minibatch.

    The curve gets one row per epoch: mean losses over its minibatches and
    the eval-mode L1 on the held-out split.  On a non-finite loss the last
    good weights are written (when ``checkpoint_dir`` is given) and the
    error is re-raised.
    """
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    cfg = cfg or GanConfig()
    epochs = cfg.epochs if epochs is None else epochs
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    train_idx = data.train_idx
    if len(train_idx) == 0:
        raise ValueError("empty training split")
    if len(train_idx) < MIN_TRAIN:
        raise ValueError(f"need at least {MIN_TRAIN} training pairs, got {len(train_idx)}")
    label = STAGES.index(stage)
    G = G or Generator(cfg.size, seed=seed * 2 + 0 + 16 * label)
    D = D or Discriminator(cfg.size, seed=seed * 2 + 1 + 16 * label)
    opt_g = Adam(lr=cfg.lr, beta1=cfg.beta1)
    opt_d = Adam(lr=cfg.lr, beta1=cfg.beta1)
    order_rng = np.random.default_rng([seed, label, 0x5EED])
    noise_rng = np.random.default_rng([seed, label, 0x2015E])
    t0 = time.perf_counter()
    result = StageResult(G, D, initial_holdout_l1=holdout_l1(G, data))
    fh = writer = None
    if curve_path is not None:
        Path(curve_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(curve_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
    last_good = (G.copy(), D.copy())
    try:
        for epoch in range(1, epochs + 1):
            perm = order_rng.permutation(train_idx)
            sums = np.zeros(3)
            batches = 0
            for s in range(0, len(perm), cfg.batch):
                bi = np.sort(perm[s:s + cfg.batch])
                cond = data.condition[bi]
                real = data.target[bi]
                try:
                    rep = _train_step(G, D, opt_g, opt_d, cond, real, cfg.lam, noise_rng)
                except FloatingPointError:
                    if checkpoint_dir is not None:
                        _save_pair(checkpoint_dir, stage, *last_good, tag="lastgood")
                    raise
                sums += (rep.d_loss, rep.g_adv_loss, rep.g_l1_loss)
                batches += 1
            means = sums / max(batches, 1)
            rec = EpochRecord(epoch, float(means[0]), float(means[1]), float(means[2]), holdout_l1(G, data))
            result.curve.append(rec)
            last_good = (G.copy(), D.copy())
            log.info("%s epoch %d d=%.4f adv=%.4f l1=%.4f holdout_l1=%.4f", stage, epoch, *means, rec.holdout_l1)
            if writer is not None:
                writer.writerow(rec.row())
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    result.seconds = time.perf_counter() - t0
    if checkpoint_dir is not None:
        _save_pair(checkpoint_dir, stage, G, D)
    return result


def _train_step(G: Generator, D: Discriminator, opt_g: Adam, opt_d: Adam, cond: np.ndarray, real: np.ndarray,
                lam: float, noise: np.random.Generator) -> GanLossReport:
    pg = G.tensors()
    fake = G.forward(cond, train=True, noise=noise, p=pg)
    # discriminator step on a detached copy of the fake batch
    pd = D.tensors()
    ld = d_loss(D, cond, real, Tensor(fake.data), train=True, p=pd)
    ld.backward()
    opt_d.step(D.params, {k: t.grad for k, t in pd.items()})
    # generator step through the freshly updated discriminator
    pd = D.tensors(requires_grad=False)
    lg, rep = g_loss(D, cond, fake, real, lam, train=True, p=pd)
    lg.backward()
    opt_g.step(G.params, {k: t.grad for k, t in pg.items()})
    return GanLossReport(float(ld.data), rep.g_adv_loss, rep.g_l1_loss, rep.combined, lam)


def _save_pair(directory, stage: str, G: Generator, D: Discriminator, tag: str = "final") -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    checkpoint.save(d / f"{stage}.{tag}.generator.ckpt", G)
    checkpoint.save(d / f"{stage}.{tag}.discriminator.ckpt", D)


# ---------------------------------------------------------------------------
# composed pipeline
# ---------------------------------------------------------------------------

def pixel_class_accuracy(G1: Generator, data: PairedSet, idx: np.ndarray | None = None) -> np.ndarray:
    """Per-frame fraction of pixels whose nearest-palette class matches the exact class map."""
    idx = data.holdout_idx if idx is None else idx
    pred = predict(G1, data.condition[idx])
    return np.array([(sim.nearest_palette_classes(p) == data.labels[i]).mean() for p, i in zip(pred, idx)])


@dataclass
class TranslationPipeline:
    g1: Generator
    g2: Generator
    noise_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        for name, g in (("g1", self.g1), ("g2", self.g2)):
            if g.in_ch != 3 or g.out_ch != 3:
                raise ValueError(f"{name} must map 3-channel frames to 3-channel frames")
        self._rng = np.random.default_rng([self.seed, 0x7A1]) if self.noise_mode else None

    def translate_batch(self, frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[1:] != (3, self.g1.size, self.g1.size):
            raise ValueError(f"expected (n, 3, {self.g1.size}, {self.g1.size}) frames, got {frames.shape}")
        parsing = self.g1.forward(frames, train=False, noise=self._rng).data
        realistic = self.g2.forward(parsing, train=False, noise=self._rng).data
        return parsing, realistic

    def realistic(self, frame: np.ndarray) -> np.ndarray:
        return self.translate_batch(frame[None])[1][0]

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        checkpoint.save(d / "g1.ckpt", self.g1)
        checkpoint.save(d / "g2.ckpt", self.g2)

    @classmethod
    def load(cls, directory: str | Path, noise_mode: bool = False, seed: int = 0) -> "TranslationPipeline":
        d = Path(directory)
        g1, _ = checkpoint.load(d / "g1.ckpt")
        g2, _ = checkpoint.load(d / "g2.ckpt")
        if not isinstance(g1, Generator) or not isinstance(g2, Generator):
            raise checkpoint.CheckpointError(f"{d}: pipeline checkpoints must hold generators")
        return cls(g1, g2, noise_mode, seed)


def translate(pipeline: TranslationPipeline, virtual: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(parsing estimate, realistic frame) for one 3x64x64 virtual frame."""
    virtual = np.asarray(virtual)
    if virtual.shape != (3, pipeline.g1.size, pipeline.g1.size):
        raise ValueError(f"expected a (3, {pipeline.g1.size}, {pipeline.g1.size}) frame, got {virtual.shape}")
    parsing, realistic = pipeline.translate_batch(virtual[None])
    return parsing[0], realistic[0]
