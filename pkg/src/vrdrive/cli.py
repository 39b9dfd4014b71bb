"""``vrdrive`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import a3c, checkpoint, config, evaluate, gan, sim, vrt1
from .nets import PolicyValueNet

log = logging.getLogger("vrdrive")


class CliError(Exception):
    pass


def _track(spec: str) -> sim.Track:
    return sim.make_track(int(spec) if spec.lstrip("-").isdigit() else spec)


def _overrides(args, mapping: dict[str, str]) -> dict[str, object]:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    for attr, key in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = v
    return out


def _setup(args, mapping: dict[str, str] | None = None) -> dict[str, object]:
    cfg = config.resolve(args.config, _overrides(args, mapping or {}))
    if getattr(args, "out", None):
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CliError(f"{out}: cannot create output directory ({exc.strerror})") from None
        config.write_resolved(cfg, out)
    return cfg


def _load_policy(path: str) -> PolicyValueNet:
    net, _ = checkpoint.load(path)
    if not isinstance(net, PolicyValueNet):
        raise CliError(f"{path}: checkpoint does not hold a policy network ({net.arch})")
    return net


def _load_pipeline(path: str | None, cfg) -> gan.TranslationPipeline:
    if path is None:
        raise CliError("--pipeline is required here")
    return gan.TranslationPipeline.load(path, noise_mode=cfg["gan.noise"])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> None:
    _setup(args)
    track = _track(args.track)
    stage1, stage2 = gan.generate_paired_data(track, args.n, args.policy, args.seed)
    out = Path(args.out)
    gan.save_paired_set(stage1, out / "stage1")
    gan.save_paired_set(stage2, out / "stage2")
    print(f"wrote {len(stage1)} pairs per stage to {out} (lap coverage {stage1.coverage():.3f})")


def _train_gan(args, stage: str, sub: str, name: str) -> None:
    cfg = _setup(args, {"epochs": "gan.epochs"})
    data = gan.load_paired_set(Path(args.data) / sub)
    out = Path(args.out)
    res = gan.train_stage(stage, data, cfg["gan.epochs"], args.seed, config.gan_config(cfg),
                          curve_path=out / f"curve_{name}.csv", checkpoint_dir=out / "stages")
    checkpoint.save(out / f"{name}.ckpt", res.generator)
    checkpoint.save(out / f"{name}_disc.ckpt", res.discriminator)
    final = res.curve[-1].holdout_l1 if res.curve else res.initial_holdout_l1
    msg = f"{name}: held-out L1 {res.initial_holdout_l1:.4f} -> {final:.4f} in {res.seconds:.0f}s"
    if stage == gan.STAGES[0]:
        acc = gan.pixel_class_accuracy(res.generator, data)
        msg += f"; held-out pixel-class accuracy {acc.mean():.4f}"
    print(msg)


def cmd_train_g1(args) -> None:
    _train_gan(args, gan.STAGES[0], "stage1", "g1")


def cmd_train_g2(args) -> None:
    _train_gan(args, gan.STAGES[1], "stage2", "g2")


def cmd_train_agent(args) -> None:
    cfg = _setup(args, {"workers": "a3c.workers", "styles": "a3c.styles"})
    mode = args.mode
    obs_fn = None
    if mode == "translated":
        obs_fn = _load_pipeline(args.pipeline, cfg).realistic
    acfg = config.a3c_config(cfg, obs_mode=mode, style=args.style)
    out = Path(args.out)

    def on_ckpt(shared):
        checkpoint.save(out / f"policy_step{shared.step}.ckpt", shared.net, shared.opt.state_arrays())

    res = a3c.train(acfg, _track(args.track), args.budget, args.seed, obs_fn=obs_fn,
                    curve_path=out / "curve.csv", on_checkpoint=on_ckpt)
    checkpoint.save(out / "policy.ckpt", res.net, meta={"global_step": str(res.global_step)})
    rewards = [s.episode_reward for s in res.curve]
    print(f"trained {res.global_step} steps, {len(rewards)} episodes, "
          f"updates per worker {dict(sorted(res.updates.items()))}, dropped segments {res.dropped}")


def cmd_evaluate(args) -> None:
    cfg = _setup(args)
    if args.transfer:
        seeds = [int(s) for s in args.seeds.split(",")]
        pipeline = _load_pipeline(args.pipeline, cfg)
        setup = evaluate.TransferSetup(_track(args.train_track), _track(args.test_track), pipeline,
                                       config.a3c_config(cfg), cfg["eval.episodes"], cfg["eval.max_steps"],
                                       Path(args.out) if args.out else None)
        reports = evaluate.transfer_experiment(setup, args.budget, seeds)
        if args.out:
            evaluate.write_reports(reports, Path(args.out) / "transfer")
        for rep in reports:
            print(f"{rep.method:<7s} mean {rep.mean_reward:.3f} (min {rep.reward_min:.3f}, max {rep.reward_max:.3f})")
        for k, ok in evaluate.transfer_ordering(reports).items():
            print(f"{'PASS' if ok else 'FAIL'} {k}")
        return
    if args.policy is None:
        raise CliError("evaluate needs --policy (with --log) or --transfer")
    if args.log:
        drive_log = evaluate.LabeledDriveLog.load(args.log)
    else:
        drive_log = evaluate.make_drive_log(_track(args.test_track), cfg["eval.log_frames"])
    rep = evaluate.evaluate_on_log(_load_policy(args.policy), drive_log, args.method)
    if args.out:
        evaluate.write_reports([rep], Path(args.out) / "log_eval")
    print(f"{rep.method}: accuracy {rep.accuracy:.4f} over {len(drive_log)} frames")
    print("confusion (rows truth, cols predicted; straight/left/right):")
    print(rep.confusion)


def _read_frame(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".ppm":
        return sim.read_ppm_frame(path)
    return vrt1.load(path)


def cmd_translate(args) -> None:
    cfg = _setup(args)
    pipeline = _load_pipeline(args.pipeline, cfg)
    src = Path(args.input)
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in (".ppm", ".vrt")) if src.is_dir() else [src]
    if not files:
        raise CliError(f"{src}: no .ppm or .vrt frames found")
    out = Path(args.out)
    for f in files:
        parsing, realistic = gan.translate(pipeline, _read_frame(f))
        sim.write_ppm(out / f"{f.stem}_parsing.ppm", parsing)
        sim.write_ppm(out / f"{f.stem}_realistic.ppm", realistic)
        vrt1.save(out / f"{f.stem}_realistic.vrt", realistic)
    print(f"translated {len(files)} frame(s) into {out}")


def cmd_gradcheck(args) -> None:
    from .diagnostics import run_gradcheck

    reports, secs = run_gradcheck(tolerance=args.tolerance)
    failed = False
    for name, rep in reports.items():
        print(f"{'ok  ' if rep.passed else 'FAIL'} {name:<22s} max_rel_err={rep.max_rel_err:.3e}")
        failed |= not rep.passed
    print(f"{len(reports)} checks in {secs:.1f}s")
    if failed:
        raise CliError("gradient check failed")


def cmd_render_rollout(args) -> None:
    _setup(args)
    track = _track(args.track)
    style = sim.RenderStyle(args.style)
    net = _load_policy(args.policy) if args.policy else None
    env = sim.DrivingEnv(track, style, max_steps=args.steps)
    stack = a3c.FrameStack()
    out = Path(args.out)
    frame = env.reset(args.start)
    obs = stack.reset(frame)
    rows = []
    for t in range(args.steps):
        if net is not None:
            a = a3c.act_greedy(net, obs[None])
        else:
            a, _ = sim.center_follow(env.state, track)
        sim.write_ppm(out / f"frame_{t:05d}.ppm", frame)
        frame, r, done = env.step(a)
        rows.append((t, a, sim.ACTION_NAMES[a], repr(r)))
        if done:
            break
        obs = stack.push(frame)
    with open(out / "actions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step", "action", "name", "reward"))
        w.writerows(rows)
    print(f"wrote {len(rows)} frames to {out}")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vrdrive", description="Virtual-to-real driving: simulator, "
                                 "two-stage image translation, A3C agent and evaluation.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="key = value config file (flags override it)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", required=out_required, help="output directory")
        return p

    p = common(sub.add_parser("gen-data", help="render paired training frames"))
    p.add_argument("--track", default="A", help="A, B or an integer seed")
    p.add_argument("--n", type=int, default=512, help="pairs per stage (>= 64)")
    p.add_argument("--policy", default="CenterFollow", choices=("CenterFollow", "RandomDrive"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    for name, fn, what in (("train-g1", cmd_train_g1, "virtual -> parsing"),
                           ("train-g2", cmd_train_g2, "parsing -> realistic")):
        p = common(sub.add_parser(name, help=f"train the {what} generator"))
        p.add_argument("--data", required=True, help="directory written by gen-data")
        p.add_argument("--epochs", type=int, help="overrides gan.epochs")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=fn)

    p = common(sub.add_parser("train-agent", help="train an A3C driving agent"))
    p.add_argument("--mode", choices=a3c.OBS_MODES, default="raw")
    p.add_argument("--style", choices=("virtual", "real"), default="virtual", help="frame style in raw mode")
    p.add_argument("--track", default="A")
    p.add_argument("--pipeline", help="directory with g1.ckpt and g2.ckpt (translated mode)")
    p.add_argument("--budget", type=int, default=200_000, help="global step budget")
    p.add_argument("--workers", type=int, help="overrides a3c.workers")
    p.add_argument("--styles", type=int, help="overrides a3c.styles")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_agent)

    p = common(sub.add_parser("evaluate", help="score a policy on a drive log or run the transfer experiment"),
               out_required=False)
    p.add_argument("--policy", help="policy checkpoint")
    p.add_argument("--log", help="drive-log directory (default: record one on the test track)")
    p.add_argument("--method", default="Ours", choices=evaluate.METHODS)
    p.add_argument("--transfer", action="store_true", help="train and compare Oracle / Ours / DR / B-RL")
    p.add_argument("--pipeline", help="translation pipeline for the Ours condition")
    p.add_argument("--budget", type=int, default=200_000)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--train-track", default="A")
    p.add_argument("--test-track", default="B")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("translate", help="run frames through the translation pipeline"))
    p.add_argument("--pipeline", required=True)
    p.add_argument("--in", dest="input", required=True, help="a .vrt/.ppm frame or a directory of them")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and reduced networks")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("render-rollout", help="write a PPM frame sequence of one episode"))
    p.add_argument("--policy", help="policy checkpoint (default: scripted centerline driver)")
    p.add_argument("--style", default="virtual", choices=("virtual", "parsing", "real"))
    p.add_argument("--track", default="A")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--start", type=float, default=0.0, help="lap fraction of the spawn point")
    p.set_defaults(func=cmd_render_rollout)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (CliError, config.ConfigError, checkpoint.CheckpointError, vrt1.FormatError, sim.TrackError,
            ValueError, FileNotFoundError, OSError, FloatingPointError) as exc:
        print(f"vrdrive {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
