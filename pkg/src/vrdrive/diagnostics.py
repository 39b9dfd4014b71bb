"""Gradient checks for every layer type and for reduced 16x16 networks."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .autodiff import GradCheckReport, Tensor, grad_check
from .autodiff import functional as F
from .nets import Discriminator, Generator, PolicyValueNet

SMALL_GEN = (4, 6, 8, 8)  # 16x16 -> 1x1
SMALL_DISC = (4, 6)
SMALL_POLICY = (4, 6, 6, 8)


def _rand(rng, *shape, scale=1.0):
    return rng.normal(0.0, scale, size=shape)


def _weighted(out: Tensor, rng_seed: int = 99) -> Tensor:
    """Scalar probe ``sum(out * r)`` with a fixed random weighting."""
    r = np.random.default_rng(rng_seed).normal(size=out.shape)
    return F.sum_(F.mul(out, Tensor(r)))


def _layer_cases() -> dict[str, tuple[Callable[[dict[str, Tensor]], Tensor], dict[str, Tensor]]]:
    rng = np.random.default_rng(0)
    x4 = _rand(rng, 2, 3, 6, 6)
    mask_rng_seed = 5
    cases = {}

    def case(name, fn, **arrays):
        cases[name] = (fn, {k: Tensor(np.asarray(v, dtype=np.float64)) for k, v in arrays.items()})

    case("dense", lambda p: _weighted(F.dense(p["x"], p["w"], p["b"])),
         x=_rand(rng, 3, 5), w=_rand(rng, 5, 4), b=_rand(rng, 4))
    case("conv2d", lambda p: _weighted(F.conv2d(p["x"], p["w"], p["b"], stride=2, padding=1)),
         x=x4, w=_rand(rng, 4, 4, 4, 3), b=_rand(rng, 4))
    case("conv2d_k3_s1", lambda p: _weighted(F.conv2d(p["x"], p["w"], p["b"], stride=1, padding=1)),
         x=x4, w=_rand(rng, 2, 3, 3, 3), b=_rand(rng, 2))
    case("deconv2d", lambda p: _weighted(F.deconv2d(p["x"], p["w"], p["b"], stride=2, padding=1)),
         x=_rand(rng, 2, 3, 3, 3), w=_rand(rng, 3, 4, 4, 2), b=_rand(rng, 2))
    case("batchnorm2d_train", lambda p: _weighted(F.batchnorm2d(p["x"], p["g"], p["b"], np.zeros(3), np.ones(3), True)),
         x=x4, g=1.0 + 0.1 * _rand(rng, 3), b=_rand(rng, 3))
    case("batchnorm2d_eval", lambda p: _weighted(F.batchnorm2d(p["x"], p["g"], p["b"], np.full(3, 0.2),
                                                               np.full(3, 1.5), False)),
         x=x4, g=1.0 + 0.1 * _rand(rng, 3), b=_rand(rng, 3))
    # keep inputs away from the kinks so central differences are valid
    away = np.where(np.abs(x4) < 0.05, 0.3, x4)
    case("relu", lambda p: _weighted(F.relu(p["x"])), x=away)
    case("leaky_relu", lambda p: _weighted(F.leaky_relu(p["x"], 0.2)), x=away)
    case("tanh", lambda p: _weighted(F.tanh(p["x"])), x=x4)
    case("sigmoid", lambda p: _weighted(F.sigmoid(p["x"])), x=x4)
    case("softmax", lambda p: _weighted(F.softmax(p["x"])), x=_rand(rng, 4, 9))
    case("log_softmax", lambda p: _weighted(F.log_softmax(p["x"])), x=_rand(rng, 4, 9))
    case("log_clamped", lambda p: _weighted(F.log(p["x"], clamp=(1e-7, 1 - 1e-7))),
         x=rng.uniform(0.1, 0.9, size=(3, 4)))
    case("dropout_fixed_mask", lambda p: _weighted(F.dropout(p["x"], 0.5, np.random.default_rng(mask_rng_seed))),
         x=x4)
    case("concat", lambda p: _weighted(F.concat([p["a"], p["b"]], axis=1)),
         a=_rand(rng, 2, 2, 3, 3), b=_rand(rng, 2, 3, 3, 3))
    case("pick", lambda p: _weighted(F.pick(p["x"], np.array([0, 3, 8, 3]))), x=_rand(rng, 4, 9))
    case("l1_mean", lambda p: F.l1_mean(p["a"], p["b"]), a=_rand(rng, 2, 3, 4, 4), b=_rand(rng, 2, 3, 4, 4) + 0.5)
    case("square_mean", lambda p: F.mean(F.square(p["x"])), x=x4)
    return cases


def _net_cases():
    rng = np.random.default_rng(1)
    gen = Generator(16, SMALL_GEN, seed=3).astype(np.float64)
    disc = Discriminator(16, SMALL_DISC, seed=4).astype(np.float64)
    pol = PolicyValueNet(16, 12, SMALL_POLICY, (5, 3, 3, 3), hidden=16, seed=5).astype(np.float64)
    xg = np.tanh(_rand(rng, 2, 3, 16, 16))
    yg = np.tanh(_rand(rng, 2, 3, 16, 16))
    obs = _rand(rng, 3, 12, 16, 16)

    def gen_loss(p):
        # train-mode batchnorm with a fixed dropout mask keeps the function deterministic
        out = gen.forward(xg, train=True, noise=np.random.default_rng(7), p=p)
        return F.add(F.l1_mean(out, yg), F.mul(_weighted(out), 0.01))

    def disc_loss(p):
        return _weighted(disc.forward(xg, yg, train=True, p=p))

    def policy_loss(p):
        logits, value = pol.logits_value(obs, p)
        return F.add(_weighted(F.log_softmax(logits)), F.sum_(F.square(value)))

    return {
        "generator16": (gen_loss, gen.tensors()),
        "discriminator16": (disc_loss, disc.tensors()),
        "policy16": (policy_loss, pol.tensors()),
    }


def run_gradcheck(tolerance: float = 1e-4, h: float = 1e-5, max_entries: int = 12,
                  include_nets: bool = True) -> tuple[dict[str, GradCheckReport], float]:
    """All layer and network checks in double precision; returns (reports, seconds)."""
    t0 = time.perf_counter()
    reports = {}
    cases = _layer_cases()
    if include_nets:
        cases.update(_net_cases())
    for name, (fn, params) in cases.items():
        reports[name] = grad_check(fn, params, tolerance=tolerance, h=h, max_entries=max_entries)
    return reports, time.perf_counter() - t0
