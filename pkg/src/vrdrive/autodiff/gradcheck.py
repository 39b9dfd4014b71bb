from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    checked: int


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.max_rel_err < self.tolerance for e in self.entries)

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            flag = "ok  " if e.max_rel_err < self.tolerance else "FAIL"
            out.append(f"{flag} {e.name:<32s} max_rel_err={e.max_rel_err:.3e} checked={e.checked}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a| + |n|, floor)``."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def grad_check(loss_fn: Callable[[dict[str, Tensor]], Tensor], params: dict[str, Tensor],
               tolerance: float = 1e-4, h: float = 1e-5, max_entries: int = 24,
               seed: int = 0) -> GradCheckReport:
    """Compare backprop gradients with central differences.

    ``loss_fn`` must be deterministic in ``params`` (fixed dropout masks,
    fixed data).  Parameters should be float64; at most ``max_entries``
    randomly chosen coordinates per tensor are perturbed.
    """
    for t in params.values():
        t.grad = None
        t.requires_grad = True
    loss = loss_fn(params)
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(f"grad_check: non-finite loss {loss.data}")
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for k, t in params.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_entries else rng.choice(n, size=max_entries, replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn(params).data)
            flat[i] = orig - h
            fm = float(loss_fn(params).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"grad_check: non-finite loss while perturbing {name}[{i}]")
            numeric[j] = (fp - fm) / (2.0 * h)
        err = relative_error(analytic[name].reshape(-1)[idx], numeric)
        report.entries.append(GradCheckEntry(name, float(err.max()) if err.size else 0.0, len(idx)))
    return report
