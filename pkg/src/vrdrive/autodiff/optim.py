"""Adam and RMSProp over dicts of named numpy arrays.

Optimizers hold only their moment buffers and step counter; ``step`` is a
deterministic function of (params, grads, state), so replaying a recorded
gradient sequence reproduces parameters bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError


def _check(params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")


@dataclass
class Adam:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    kind = "adam"

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place.  Missing gradients count as zero."""
        _check(params, grads)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.float64)}
        out.update({f"m/{k}": v for k, v in self.m.items()})
        out.update({f"v/{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["t"][0])
        self.m = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("m/")}
        self.v = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("v/")}


@dataclass
class RMSProp:
    """``ms = decay*ms + (1-decay)*g^2``; ``p -= lr * g / sqrt(ms + eps)``."""

    lr: float = 0.01
    decay: float = 0.9
    eps: float = 0.1
    t: int = 0
    ms: dict[str, np.ndarray] = field(default_factory=dict)

    kind = "rmsprop"

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        _check(params, grads)
        self.t += 1
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            ms = self.ms.setdefault(name, np.zeros_like(p))
            ms *= self.decay
            ms += (1.0 - self.decay) * g * g
            p -= (self.lr * g / np.sqrt(ms + self.eps)).astype(p.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.float64)}
        out.update({f"ms/{k}": v for k, v in self.ms.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["t"][0])
        self.ms = {k[3:]: v.copy() for k, v in arrays.items() if k.startswith("ms/")}


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if np.isfinite(total) and total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total
