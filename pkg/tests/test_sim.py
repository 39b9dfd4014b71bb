import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import importlib

from vrdrive import sim

R = importlib.import_module("vrdrive.sim.render")  # the package re-exports a function of the same name


def stadium(straight=200.0, radius=60.0, spacing=2.0, half_width=6.0):
    """Closed track with two long straights along the x axis."""
    pts = []
    n_s = int(straight / spacing)
    for i in range(n_s):
        pts.append((-straight / 2 + i * spacing, -radius))
    n_a = int(math.pi * radius / spacing)
    for i in range(n_a):
        a = -math.pi / 2 + math.pi * i / n_a
        pts.append((straight / 2 + radius * math.cos(a), radius * math.sin(a)))
    for i in range(n_s):
        pts.append((straight / 2 - i * spacing, radius))
    for i in range(n_a):
        a = math.pi / 2 + math.pi * i / n_a
        pts.append((-straight / 2 + radius * math.cos(a), radius * math.sin(a)))
    return sim.Track("stadium", np.array(pts), half_width, 7)


# -- reward ------------------------------------------------------------------

def test_reward_examples():
    assert abs(sim.reward(10.0, 0.0, 0.0, False) - 0.06) <= 1e-12
    assert sim.reward(3.0, 0.2, 0.5, True) == -0.025
    assert abs(sim.reward(5.0, math.pi / 2, 1.0, False) - (-0.006)) <= 1e-12


def test_reward_config_validation():
    with pytest.raises(ValueError):
        sim.RewardConfig(beta=0.0)
    with pytest.raises(ValueError):
        sim.RewardConfig(gamma=0.1)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 20), st.floats(-math.pi, math.pi), st.floats(0, 6), st.floats(0.01, 3))
def test_reward_bound_and_monotone(v, alpha, d, dd):
    r = sim.reward(v, alpha, d, False)
    assert r <= v * 0.006 + 1e-15
    assert sim.reward(v, alpha, d + dd, False) < r


# -- tracks ------------------------------------------------------------------

def test_named_tracks_differ_and_are_idempotent(track_a, track_b):
    assert not track_a.same_geometry(track_b)
    assert track_a.style_seed != track_b.style_seed
    assert sim.make_track("A").same_geometry(track_a)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_seeded_tracks_are_valid(seed):
    t = sim.make_track(seed)
    assert t.n_segments >= 32
    gaps = np.hypot(*np.diff(np.vstack([t.centerline, t.centerline[:1]]), axis=0).T)
    assert gaps.max() < 5.0
    assert t.half_width > sim.track.CAR_WIDTH


def test_track_invariants_enforced():
    ring = np.column_stack([np.cos(np.linspace(0, 2 * np.pi, 20, endpoint=False)),
                            np.sin(np.linspace(0, 2 * np.pi, 20, endpoint=False))])
    with pytest.raises(sim.TrackError):
        sim.Track("few", ring, 6.0, 0)  # fewer than 32 vertices
    big = stadium().centerline
    with pytest.raises(sim.TrackError):
        sim.Track("narrow", big, 1.5, 0)
    with pytest.raises(sim.TrackError):
        sim.Track("gappy", big[::4], 6.0, 0)
    bowtie = np.array([(np.sin(t) * 100, np.sin(2 * t) * 50) for t in np.linspace(0, 2 * np.pi, 400, endpoint=False)])
    with pytest.raises(sim.TrackError):
        sim.Track("bowtie", bowtie, 6.0, 0)


def test_nearest_matches_brute_force(track_a, rng):
    g = track_a._geom
    for _ in range(50):
        p = track_a.centerline[rng.integers(track_a.n_segments)] + rng.normal(0, 5, size=2)
        i, dist, signed, _, _ = track_a.nearest(p)
        best = min(
            np.hypot(*(p - (a + np.clip(np.dot(p - a, d) / np.dot(d, d), 0, 1) * d)))
            for a, d in zip(g["start"], g["seg"])
        )
        assert dist == pytest.approx(best, abs=1e-9)
        assert abs(signed) == pytest.approx(dist)


def test_project_many_matches_nearest(track_a, rng):
    pts = track_a.centerline[rng.integers(track_a.n_segments, size=200)] + rng.normal(0, 8, size=(200, 2))
    signed, arc = track_a.project_many(pts[:, 0], pts[:, 1])
    for k in range(len(pts)):
        _, _, s_ref, _, arc_ref = track_a.nearest(pts[k])
        assert signed[k] == pytest.approx(s_ref, abs=1e-6)


# -- kinematics ----------------------------------------------------------------

def test_reset_spawns_on_centerline(track_a):
    s7 = sim.reset(track_a, 7)
    assert s7.dist_center == pytest.approx(0.0, abs=1e-9)
    assert s7.alpha == pytest.approx(0.0, abs=1e-9)
    assert s7.speed == 0.0 and not s7.collided
    assert sim.reset(track_a, 7) == s7
    assert sim.reset(track_a, 8) == s7


def test_step_rejects_bad_input(track_a):
    s = sim.reset(track_a)
    with pytest.raises(ValueError):
        sim.step(s, 9, track_a)
    with pytest.raises(ValueError):
        sim.step(s, -1, track_a)
    with pytest.raises(ValueError):
        sim.step(s, 0, track_a, dt=0.0)


def test_state_invariants_along_random_trajectory(track_a, rng):
    s = sim.reset(track_a)
    for _ in range(400):
        s, r, done = sim.step(s, int(rng.integers(9)), track_a)
        _, dist, _, _, _ = track_a.nearest(s.position)
        assert abs(dist - s.dist_center) <= 1e-9
        assert s.collided == (s.dist_center > track_a.half_width)
        assert -math.pi < s.alpha <= math.pi
        assert 0.0 <= s.speed <= sim.V_MAX
        assert sim.RewardConfig().gamma <= r <= sim.V_MAX * 0.006
        if done:
            assert r == -0.025 or s.steps >= sim.MAX_STEPS
            s = sim.reset(track_a, start=float(rng.random()))


def test_collision_ends_episode_with_gamma(track_a):
    s = sim.reset(track_a)
    done = False
    while not done:
        s, r, done = sim.step(s, 2, track_a)  # hard right with throttle
    assert s.collided and r == -0.025


def test_step_budget_ends_episode(track_a):
    s = sim.reset(track_a)
    for _ in range(5):
        s, _, done = sim.step(s, 6, track_a, max_steps=5)
    assert done and not s.collided


def test_straight_line_sanity():
    t = stadium()
    s = sim.reset(t, start=0.05)
    d0 = s.dist_center
    for _ in range(60):
        s, _, _ = sim.step(s, 0, t)
        assert s.dist_center == pytest.approx(d0, abs=1e-9)
    assert s.speed == sim.V_MAX


def test_left_action_turns_counterclockwise(track_a):
    s = sim.reset(track_a)
    s1, _, _ = sim.step(s, 1, track_a)
    s2, _, _ = sim.step(s, 2, track_a)
    assert s1.heading > s.heading > s2.heading


def test_determinism(track_a):
    def run():
        s = sim.reset(track_a)
        rng = np.random.default_rng(3)
        frames = []
        for _ in range(30):
            s, _, _ = sim.step(s, int(rng.integers(9)), track_a)
            frames.append(sim.render(s, track_a, sim.REAL))
        return s, np.stack(frames)

    (s1, f1), (s2, f2) = run(), run()
    assert s1 == s2
    assert np.array_equal(f1, f2)


# -- rendering -----------------------------------------------------------------

@pytest.fixture(scope="module")
def some_states(track_a):
    rng = np.random.default_rng(5)
    out = []
    for k in range(6):
        s = sim.reset(track_a, start=k / 6)
        for _ in range(int(rng.integers(5, 30))):
            s, _, _ = sim.step(s, sim.center_follow(s, track_a)[0], track_a)
        out.append(s)
    return out


def test_frames_in_range_and_shape(track_a, some_states):
    for s in some_states:
        for style in (sim.VIRTUAL, sim.PARSING, sim.REAL, *sim.randomized_styles(3, 0)):
            f = sim.render(s, track_a, style)
            assert f.shape == (3, 64, 64) and f.dtype == np.float32
            assert f.min() >= -1.0 and f.max() <= 1.0


def test_parsing_render_is_palette_image_of_segmap(track_a, some_states):
    for s in some_states:
        seg = sim.render_segmentation(s, track_a)
        assert set(np.unique(seg)) <= set(range(sim.K_CLS))
        par = sim.render(s, track_a, sim.PARSING)
        assert np.array_equal(par, sim.palette_image(seg))
        assert np.array_equal(sim.nearest_palette_classes(par), seg)
        triples = {tuple(c) for c in par.reshape(3, -1).T}
        assert len(triples) <= sim.K_CLS


def test_segmentation_is_style_invariant(track_a, some_states):
    styles = (sim.VIRTUAL, sim.REAL, *sim.randomized_styles(4, 1))
    for s in some_states:
        sc = sim.scene(s, track_a)
        for style in styles:
            # every style colours the same class map
            assert np.array_equal(sim.scene(s, track_a).labels, sc.labels)
            assert sim.colorize(sc, style, track_a).shape == (3, 64, 64)


def test_virtual_and_real_differ_in_most_pixels(track_a, some_states):
    # measured once on these states: about 100% of pixels differ by more than 2/255
    for s in some_states:
        v = sim.render(s, track_a, sim.VIRTUAL)
        r = sim.render(s, track_a, sim.REAL)
        differ = (np.abs(v - r) > 2 / 255).any(axis=0).mean()
        assert differ >= 0.30


def test_bottom_rows_are_road_when_centered(track_a):
    seg = sim.render_segmentation(sim.reset(track_a), track_a)
    bottom = seg[-8:, 16:48]
    assert np.isin(bottom, [R.ROAD, R.LANE]).mean() > 0.9
    assert (seg[:R.HORIZON - R.SKYLINE_MAX] == R.SKY).all()


def test_randomized_styles():
    a = sim.randomized_styles(10, 3)
    assert len(a) == 10 and a == sim.randomized_styles(10, 3)
    pals = [R.palette_for(s, 1101).colors.tobytes() for s in a]
    assert len(set(pals)) == 10
    one = sim.randomized_styles(1, 3)
    assert R.palette_for(one[0], 1101).colors.tobytes() != R.palette_for(sim.VIRTUAL, 1101).colors.tobytes()
    with pytest.raises(ValueError):
        sim.randomized_styles(0, 3)


def test_ppm_pgm_round_trip(tmp_path, track_a):
    s = sim.reset(track_a)
    f = sim.render(s, track_a, sim.REAL)
    sim.write_ppm(tmp_path / "f.ppm", f)
    back = sim.read_ppm_frame(tmp_path / "f.ppm")
    assert np.abs(back - f).max() <= 1.0 / 255 + 1e-6
    assert (tmp_path / "f.ppm").read_bytes().startswith(b"P6\n64 64\n255\n")
    seg = sim.render_segmentation(s, track_a)
    sim.write_pgm(tmp_path / "s.pgm", seg)
    assert np.array_equal(sim.read_pgm(tmp_path / "s.pgm"), seg)


# -- scripted driver --------------------------------------------------------------

def test_center_follow_drives_a_lap(track_b):
    s = sim.reset(track_b)
    travelled = 0.0
    for _ in range(1200):
        a, ang = sim.center_follow(s, track_b)
        lateral, _ = sim.decode_action(a)
        assert lateral == (1 if ang <= -10 else -1 if ang >= 10 else 0)
        prev = s.position
        s, _, done = sim.step(s, a, track_b)
        travelled += math.dist(prev, s.position)
        assert not done
    assert travelled > track_b.length * 0.9
