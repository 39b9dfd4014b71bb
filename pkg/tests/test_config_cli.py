import numpy as np
import pytest

from vrdrive import checkpoint, cli, config, gan, sim, vrt1
from vrdrive.nets import Generator


def test_defaults_and_precedence(tmp_path):
    cfg = config.resolve()
    assert cfg["a3c.lr"] == 0.01 and cfg["a3c.workers"] == 12 and cfg["gan.lambda"] == 100.0
    f = tmp_path / "run.cfg"
    f.write_text("# comment\na3c.lr = 0.005\ngan.noise = yes\n")
    cfg = config.resolve(f)
    assert cfg["a3c.lr"] == 0.005 and cfg["gan.noise"] is True
    cfg = config.resolve(f, {"a3c.lr": "0.002"})
    assert cfg["a3c.lr"] == 0.002


def test_unknown_and_malformed_keys(tmp_path):
    with pytest.raises(config.ConfigError, match="unknown key"):
        config.parse("a3c.learning_rate = 1")
    with pytest.raises(config.ConfigError, match="expected"):
        config.parse("a3c.workers = many")
    with pytest.raises(config.ConfigError):
        config.resolve(overrides={"nope": 1})
    with pytest.raises(config.ConfigError, match="cannot read"):
        config.resolve(tmp_path / "missing.cfg")


def test_dump_round_trip():
    cfg = config.resolve()
    assert config.resolve(overrides=config.parse(config.dump(cfg))) == cfg


def test_a3c_config_builder():
    acfg = config.a3c_config(config.resolve(overrides={"a3c.t_max": 7}), obs_mode="randomized")
    assert acfg.t_max == 7 and acfg.obs_mode == "randomized"


def test_cli_gen_data_refuses_tiny(tmp_path, capsys):
    assert cli.main(["gen-data", "--n", "10", "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_unknown_set_key(tmp_path, capsys):
    assert cli.main(["gen-data", "--set", "bogus=1", "--out", str(tmp_path)]) == 1
    assert "bogus" in capsys.readouterr().err


def test_cli_gen_data_and_resolved_config(tmp_path):
    assert cli.main(["gen-data", "--n", "64", "--track", "B", "--set", "gan.epochs=3",
                     "--out", str(tmp_path)]) == 0
    assert (tmp_path / "stage1" / "index.txt").exists()
    assert (tmp_path / "stage2" / "index.txt").exists()
    assert "gan.epochs = 3" in (tmp_path / "config.resolved").read_text()
    data = gan.load_paired_set(tmp_path / "stage1")
    assert len(data) == 64


def test_cli_render_rollout(tmp_path):
    assert cli.main(["render-rollout", "--steps", "5", "--style", "real", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "actions.csv").read_text().splitlines()
    assert lines[0] == "step,action,name,reward" and len(lines) == 6
    img = sim.read_ppm(tmp_path / "frame_00000.ppm")
    assert img.shape == (64, 64, 3)


def test_cli_translate(tmp_path, rng):
    pipe = gan.TranslationPipeline(Generator(seed=0), Generator(seed=1))
    pipe.save(tmp_path / "pipe")
    frame = rng.uniform(-1, 1, size=(3, 64, 64)).astype(np.float32)
    vrt1.save(tmp_path / "f.vrt", frame)
    assert cli.main(["translate", "--pipeline", str(tmp_path / "pipe"), "--in", str(tmp_path / "f.vrt"),
                     "--out", str(tmp_path / "o")]) == 0
    out = vrt1.load(tmp_path / "o" / "f_realistic.vrt")
    assert np.array_equal(out, gan.translate(pipe, frame)[1])
    assert (tmp_path / "o" / "f_parsing.ppm").exists()


def test_cli_wrong_checkpoint_kind(tmp_path, capsys):
    checkpoint.save(tmp_path / "g.ckpt", Generator(seed=0))
    assert cli.main(["render-rollout", "--policy", str(tmp_path / "g.ckpt"), "--out", str(tmp_path / "r")]) == 1
    assert "policy" in capsys.readouterr().err


def test_cli_evaluate_needs_policy(tmp_path):
    assert cli.main(["evaluate", "--out", str(tmp_path)]) == 1


def test_cli_gradcheck(capsys):
    assert cli.main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "policy16" in out
