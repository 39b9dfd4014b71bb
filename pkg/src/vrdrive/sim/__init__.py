from .car import (ACTION_NAMES, ACTIONS, DT, MAX_STEPS, N_ACTIONS, V_MAX, CarState, RewardConfig,
                  decode_action, observe, reset, reward, step, wrap_angle)
from .control import center_follow, random_drive, steering_wheel_angle
from .env import DrivingEnv
from .io import bytes_to_frame, read_pgm, read_ppm, read_ppm_frame, write_pgm, write_ppm
from .render import (CLASS_NAMES, HEIGHT, K_CLS, PARSING, PARSING_PALETTE, REAL, VIRTUAL, WIDTH,
                     RenderStyle, nearest_palette_classes, palette_image, randomized_styles, render,
                     render_segmentation, scene, colorize)
from .track import Track, TrackError, make_track, min_turn_radius

__all__ = [
    "ACTIONS", "ACTION_NAMES", "CLASS_NAMES", "CarState", "DT", "DrivingEnv", "HEIGHT", "K_CLS",
    "MAX_STEPS", "N_ACTIONS", "PARSING", "PARSING_PALETTE", "REAL", "RenderStyle", "RewardConfig",
    "Track", "TrackError", "VIRTUAL", "V_MAX", "WIDTH", "colorize", "decode_action", "make_track",
    "min_turn_radius", "nearest_palette_classes", "observe", "palette_image", "randomized_styles",
    "read_pgm", "read_ppm", "render", "render_segmentation", "reset", "reward", "scene", "step",
    "wrap_angle", "write_pgm", "write_ppm", "bytes_to_frame", "read_ppm_frame", "center_follow", "random_drive", "steering_wheel_angle",
]
