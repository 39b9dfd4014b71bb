"""Line-oriented ``key = value`` run configuration.

Precedence: command-line flags, then the config file, then the defaults
below.  Unknown keys are rejected wherever they come from.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from . import sim
from .a3c import A3CConfig
from .gan import GanConfig

# key -> (default, type, help)
DEFAULTS: dict[str, tuple[object, type, str]] = {
    "sim.beta": (0.006, float, "reward scale on speed along the track"),
    "sim.gamma": (-0.025, float, "reward on collision"),
    "sim.max_steps": (sim.MAX_STEPS, int, "episode step cap"),
    "gan.lr": (2e-4, float, "Adam learning rate"),
    "gan.beta1": (0.5, float, "Adam first-moment decay"),
    "gan.batch": (16, int, "minibatch size"),
    "gan.lambda": (100.0, float, "L1 weight in the generator objective"),
    "gan.epochs": (200, int, "training epochs per stage"),
    "gan.noise": (False, bool, "keep dropout noise active when translating"),
    "a3c.workers": (12, int, "asynchronous worker threads"),
    "a3c.lr": (0.01, float, "RMSProp learning rate"),
    "a3c.rms_decay": (0.9, float, "RMSProp squared-gradient decay"),
    "a3c.rms_eps": (0.1, float, "RMSProp epsilon (inside the square root)"),
    "a3c.discount": (0.99, float, "return discount"),
    "a3c.t_max": (5, int, "rollout length per update"),
    "a3c.entropy_coeff": (0.01, float, "entropy bonus weight"),
    "a3c.value_coeff": (0.5, float, "value loss weight"),
    "a3c.grad_clip_norm": (40.0, float, "global gradient norm clip"),
    "a3c.styles": (10, int, "style count in randomized mode"),
    "a3c.max_episode_steps": (sim.MAX_STEPS, int, "training episode step cap"),
    "a3c.random_start": (True, bool, "start training episodes at random lap positions"),
    "a3c.checkpoint_every": (0, int, "checkpoint interval in global steps (0 = only at the end)"),
    "eval.episodes": (50, int, "greedy episodes per trained agent"),
    "eval.max_steps": (500, int, "step cap of an evaluation episode"),
    "eval.log_frames": (600, int, "frames in the labelled drive log"),
    "eval.sv_epochs": (10, int, "supervised baseline epochs"),
}


class ConfigError(ValueError):
    pass


def _convert(key: str, text: str):
    _, typ, _ = DEFAULTS[key]
    if typ is bool:
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        return typ(text.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {text!r}") from None


def parse(text: str, source: str = "<config>") -> dict[str, object]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def resolve(path: str | Path | None = None, overrides: dict[str, object] | None = None) -> dict[str, object]:
    cfg = {k: d for k, (d, _, _) in DEFAULTS.items()}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{p}: cannot read config ({exc.strerror})") from None
        cfg.update(parse(text, str(p)))
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in DEFAULTS:
            raise ConfigError(f"unknown key {k!r}")
        cfg[k] = _convert(k, v) if isinstance(v, str) else v
    return cfg


def dump(cfg: dict[str, object]) -> str:
    return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n" for k, v in sorted(cfg.items()))


def write_resolved(cfg: dict[str, object], out_dir: str | Path) -> Path:
    p = Path(out_dir) / "config.resolved"
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(dump(cfg), encoding="utf-8")
    return p


def reward_config(cfg) -> sim.RewardConfig:
    return sim.RewardConfig(beta=cfg["sim.beta"], gamma=cfg["sim.gamma"])


def gan_config(cfg) -> GanConfig:
    return GanConfig(lr=cfg["gan.lr"], beta1=cfg["gan.beta1"], batch=cfg["gan.batch"], lam=cfg["gan.lambda"],
                     epochs=cfg["gan.epochs"])


def a3c_config(cfg, **changes) -> A3CConfig:
    base = A3CConfig(
        workers=cfg["a3c.workers"], lr=cfg["a3c.lr"], rms_decay=cfg["a3c.rms_decay"], rms_eps=cfg["a3c.rms_eps"],
        discount=cfg["a3c.discount"], t_max=cfg["a3c.t_max"], entropy_coeff=cfg["a3c.entropy_coeff"],
        value_coeff=cfg["a3c.value_coeff"], grad_clip_norm=cfg["a3c.grad_clip_norm"], styles=cfg["a3c.styles"],
        max_episode_steps=min(cfg["a3c.max_episode_steps"], cfg["sim.max_steps"]),
        random_start=cfg["a3c.random_start"], checkpoint_every=cfg["a3c.checkpoint_every"],
        reward=reward_config(cfg))
    return replace(base, **changes)
