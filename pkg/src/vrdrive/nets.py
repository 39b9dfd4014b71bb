"""U-Net generator, patch discriminator and the policy-value network."""

from __future__ import annotations

import copy
from typing import Sequence

import numpy as np

from .autodiff import ShapeError, Tensor
from .autodiff import functional as F

GEN_CHANNELS = (32, 64, 128, 256, 256, 256)
DISC_CHANNELS = (32, 64, 128)
POLICY_CHANNELS = (16, 32, 32, 64)
POLICY_KERNELS = (5, 3, 3, 3)
POLICY_HIDDEN = 256
N_ACTIONS = 9
STACK = 4
LEAK = 0.2
DROPOUT_RATE = 0.5
DROPOUT_LEVELS = 3

# parameter counts of the default 64x64 configurations (trainable arrays only)
GENERATOR_PARAMS = 7_345_155
DISCRIMINATOR_PARAMS = 169_377
POLICY_PARAMS = 302_170


class Net:
    """Named parameter arrays plus non-trainable buffers (batchnorm stats)."""

    arch: str

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        """Tensors sharing memory with ``params`` (optimizer updates show through)."""
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def copy(self) -> "Net":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Net":
        out = self.copy()
        out.params = {k: v.astype(dtype) for k, v in out.params.items()}
        out.buffers = {k: v.astype(dtype) for k, v in out.buffers.items()}
        return out

    def load_arrays(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]) -> None:
        for store, incoming, kind in ((self.params, params, "parameter"), (self.buffers, buffers, "buffer")):
            if set(store) != set(incoming):
                missing = sorted(set(store) - set(incoming))
                extra = sorted(set(incoming) - set(store))
                raise ShapeError(f"{self.arch}: {kind} names differ (missing {missing}, unexpected {extra})")
            for k, v in incoming.items():
                if v.shape != store[k].shape:
                    raise ShapeError(f"{self.arch}: {kind} {k!r} has shape {v.shape}, expected {store[k].shape}")
                store[k] = np.array(v, dtype=store[k].dtype)

    def _p(self, p: dict[str, Tensor] | None) -> dict[str, Tensor]:
        return self.tensors(requires_grad=False) if p is None else p

    def _bn(self, p, name: str, x: Tensor, train: bool) -> Tensor:
        return F.batchnorm2d(x, p[f"{name}.scale"], p[f"{name}.shift"],
                             self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"], train)

    def _add_bn(self, name: str, c: int, rng: np.random.Generator) -> None:
        self.params[f"{name}.scale"] = rng.normal(1.0, 0.02, size=c).astype(np.float32)
        self.params[f"{name}.shift"] = np.zeros(c, dtype=np.float32)
        self.buffers[f"{name}.mean"] = np.zeros(c, dtype=np.float32)
        self.buffers[f"{name}.var"] = np.ones(c, dtype=np.float32)


def _normal(rng, shape, std):
    return rng.normal(0.0, std, size=shape).astype(np.float32)


class Generator(Net):
    """U-Net: stride-2 4x4 conv encoder down to 1x1, mirrored deconv decoder.

    Encoder level ``i`` (1-based, excluding the bottleneck) is concatenated
    onto the output of decoder level ``depth - i``.  Dropout on the
    innermost ``DROPOUT_LEVELS`` decoder levels is the generator's noise
    input; it is only active when a noise generator is passed to forward.
    """

    def __init__(self, size: int = 64, channels: Sequence[int] = GEN_CHANNELS, in_ch: int = 3,
                 out_ch: int = 3, seed: int = 0):
        super().__init__()
        depth = len(channels)
        if size != 2 ** depth:
            raise ValueError(f"{depth} stride-2 levels need a {2 ** depth}px input, got {size}")
        self.size = size
        self.channels = tuple(int(c) for c in channels)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.arch = f"generator:{size}:{','.join(map(str, self.channels))}"
        rng = np.random.default_rng(seed)
        prev = in_ch
        for i, c in enumerate(self.channels, start=1):
            self.params[f"enc{i}.w"] = _normal(rng, (c, 4, 4, prev), 0.02)
            if i == 1:
                self.params["enc1.b"] = np.zeros(c, dtype=np.float32)
            else:
                self._add_bn(f"enc{i}.bn", c, rng)
            prev = c
        # decoder level j upsamples to the resolution of encoder level depth - j
        for j in range(1, depth + 1):
            skip = self.channels[depth - j - 1] if j < depth else 0
            c_out = skip if j < depth else self.channels[0]
            self.params[f"dec{j}.w"] = _normal(rng, (prev, 4, 4, c_out), 0.02)
            self._add_bn(f"dec{j}.bn", c_out, rng)
            prev = c_out + skip
        self.params["out.w"] = _normal(rng, (out_ch, 1, 1, prev), 0.02)
        self.params["out.b"] = np.zeros(out_ch, dtype=np.float32)

    def forward(self, x: Tensor | np.ndarray, train: bool = False, noise: np.random.Generator | None = None,
                p: dict[str, Tensor] | None = None, trace: dict | None = None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim == 3:
            x = F.reshape(x, (1,) + x.shape)
        expect = (self.in_ch, self.size, self.size)
        if x.shape[1:] != expect:
            raise ShapeError(f"generator expects (batch, {expect[0]}, {expect[1]}, {expect[2]}), got {x.shape}")
        p = self._p(p)
        depth = len(self.channels)
        skips = []
        h = x
        for i in range(1, depth + 1):
            h = F.conv2d(h, p[f"enc{i}.w"], p.get("enc1.b") if i == 1 else None, stride=2, padding=1)
            if i > 1:
                h = self._bn(p, f"enc{i}.bn", h, train)
            h = F.leaky_relu(h, LEAK)
            if trace is not None:
                trace[f"enc{i}"] = h.data
            skips.append(h)
        for j in range(1, depth + 1):
            h = F.deconv2d(h, p[f"dec{j}.w"], None, stride=2, padding=1)
            h = self._bn(p, f"dec{j}.bn", h, train)
            if j <= DROPOUT_LEVELS and j < depth:
                h = F.dropout(h, DROPOUT_RATE, noise)
            h = F.relu(h)
            if j < depth:
                h = F.concat([h, skips[depth - j - 1]], axis=1)
            if trace is not None:
                trace[f"dec{j}"] = h.data
        return F.tanh(F.conv2d(h, p["out.w"], p["out.b"], stride=1, padding=0))


class Discriminator(Net):
    """Conditional patch discriminator on the channel concat of (condition, candidate)."""

    def __init__(self, size: int = 64, channels: Sequence[int] = DISC_CHANNELS, in_ch: int = 6, seed: int = 0):
        super().__init__()
        self.size = size
        self.channels = tuple(int(c) for c in channels)
        self.in_ch = in_ch
        self.arch = f"discriminator:{size}:{','.join(map(str, self.channels))}"
        rng = np.random.default_rng(seed)
        prev = in_ch
        for i, c in enumerate(self.channels, start=1):
            self.params[f"c{i}.w"] = _normal(rng, (c, 4, 4, prev), 0.02)
            if i == 1:
                self.params["c1.b"] = np.zeros(c, dtype=np.float32)
            else:
                self._add_bn(f"c{i}.bn", c, rng)
            prev = c
        self.params["head.w"] = _normal(rng, (1, 4, 4, prev), 0.02)
        self.params["head.b"] = np.zeros(1, dtype=np.float32)

    @property
    def grid(self) -> int:
        return self.size >> (len(self.channels) + 1)

    def forward(self, condition: Tensor | np.ndarray, candidate: Tensor | np.ndarray, train: bool = False,
                p: dict[str, Tensor] | None = None) -> Tensor:
        dt = self.dtype
        condition = condition if isinstance(condition, Tensor) else Tensor(np.asarray(condition, dtype=dt))
        candidate = candidate if isinstance(candidate, Tensor) else Tensor(np.asarray(candidate, dtype=dt))
        if condition.shape != candidate.shape:
            raise ShapeError(f"discriminator: condition {condition.shape} vs candidate {candidate.shape}")
        if condition.data.ndim != 4 or 2 * condition.shape[1] != self.in_ch or condition.shape[2:] != (self.size, self.size):
            raise ShapeError(f"discriminator expects (batch, {self.in_ch // 2}, {self.size}, {self.size}), "
                             f"got {condition.shape}")
        p = self._p(p)
        h = F.concat([condition, candidate], axis=1)
        for i in range(1, len(self.channels) + 1):
            h = F.conv2d(h, p[f"c{i}.w"], p.get("c1.b") if i == 1 else None, stride=2, padding=1)
            if i > 1:
                h = self._bn(p, f"c{i}.bn", h, train)
            h = F.leaky_relu(h, LEAK)
        h = F.conv2d(h, p["head.w"], p["head.b"], stride=2, padding=1)
        return F.sigmoid(h)


class PolicyValueNet(Net):
    """Four stride-2 ReLU convs over stacked frames, a dense layer, and two heads."""

    def __init__(self, size: int = 64, in_ch: int = 3 * STACK, channels: Sequence[int] = POLICY_CHANNELS,
                 kernels: Sequence[int] = POLICY_KERNELS, hidden: int = POLICY_HIDDEN,
                 n_actions: int = N_ACTIONS, seed: int = 0, zero_policy_head: bool = False):
        super().__init__()
        self.size = size
        self.in_ch = in_ch
        self.channels = tuple(int(c) for c in channels)
        self.kernels = tuple(int(k) for k in kernels)
        self.hidden = hidden
        self.n_actions = n_actions
        self.arch = (f"policy:{size}:{in_ch}:{','.join(map(str, self.channels))}:"
                     f"{','.join(map(str, self.kernels))}:{hidden}:{n_actions}")
        rng = np.random.default_rng(seed)
        prev = in_ch
        spatial = size
        for i, (c, k) in enumerate(zip(self.channels, self.kernels), start=1):
            self.params[f"conv{i}.w"] = _normal(rng, (c, k, k, prev), np.sqrt(2.0 / (prev * k * k)))
            self.params[f"conv{i}.b"] = np.zeros(c, dtype=np.float32)
            spatial = F.conv_out_size(spatial, k, 2, k // 2)
            prev = c
        self.flat = prev * spatial * spatial
        self.params["fc.w"] = _normal(rng, (self.flat, hidden), np.sqrt(2.0 / self.flat))
        self.params["fc.b"] = np.zeros(hidden, dtype=np.float32)
        pstd = 0.0 if zero_policy_head else 0.01
        self.params["pi.w"] = _normal(rng, (hidden, n_actions), pstd)
        self.params["pi.b"] = np.zeros(n_actions, dtype=np.float32)
        self.params["v.w"] = _normal(rng, (hidden, 1), 1.0 / np.sqrt(hidden))
        self.params["v.b"] = np.zeros(1, dtype=np.float32)

    def logits_value(self, obs: Tensor | np.ndarray, p: dict[str, Tensor] | None = None) -> tuple[Tensor, Tensor]:
        obs = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=self.dtype))
        if obs.data.ndim == 3:
            obs = F.reshape(obs, (1,) + obs.shape)
        if obs.shape[1:] != (self.in_ch, self.size, self.size):
            raise ShapeError(f"policy expects (batch, {self.in_ch}, {self.size}, {self.size}), got {obs.shape}")
        p = self._p(p)
        h = obs
        for i, k in enumerate(self.kernels, start=1):
            h = F.relu(F.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], stride=2, padding=k // 2))
        h = F.reshape(h, (h.shape[0], -1))
        h = F.relu(F.dense(h, p["fc.w"], p["fc.b"]))
        logits = F.dense(h, p["pi.w"], p["pi.b"])
        value = F.reshape(F.dense(h, p["v.w"], p["v.b"]), (h.shape[0],))
        return logits, value

    def forward(self, obs, p: dict[str, Tensor] | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Action probabilities (batch, 9) and values (batch,)."""
        logits, value = self.logits_value(obs, p)
        probs = F.softmax(logits).data
        if not (np.isfinite(probs).all() and np.isfinite(value.data).all()):
            raise FloatingPointError("policy network produced non-finite outputs")
        return probs, value.data


def build(arch: str) -> Net:
    """Instantiate an untrained network from its architecture string."""
    kind, *fields = arch.split(":")
    if kind == "generator":
        return Generator(int(fields[0]), [int(c) for c in fields[1].split(",")])
    if kind == "discriminator":
        return Discriminator(int(fields[0]), [int(c) for c in fields[1].split(",")])
    if kind == "policy":
        size, in_ch, ch, ks, hidden, n = fields
        return PolicyValueNet(int(size), int(in_ch), [int(c) for c in ch.split(",")],
                              [int(k) for k in ks.split(",")], int(hidden), int(n))
    raise ValueError(f"unknown architecture {arch!r}")
