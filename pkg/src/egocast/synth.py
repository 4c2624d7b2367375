"""Seeded synthetic motion: stand / walk / reach archetypes on a kinematic template.

Randomness comes exclusively from numpy's PCG64 bit generator, seeded through
``numpy.random.SeedSequence``; a sequence is a pure function of
``(archetype, skeleton, duration_s, seed, fps)``.

The body is posed in a heading-aligned frame (forward, left, up) and mapped
into a z-up world frame.  A per-sequence posture (body scale, arm elevation,
stance, crouch) is drawn once; it is visible in the body pose but only weakly
in the headset stream, which is what makes visual cues useful downstream.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from egocast.pose import (
    SKELETON_17,
    HeadsetPose,
    PoseFrame,
    PoseSequence,
    SkeletonSpec,
    get_skeleton,
)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class MotionArchetype:
    name: str
    speed: tuple[float, float]          # m/s range, sampled per sequence
    turn_rate: float                    # rad/s std of heading drift per waypoint
    waypoint_noise: float               # m, lateral jitter of spline waypoints
    leg_amplitude: float                # rad, thigh swing
    arm_amplitude: float                # rad, arm swing
    reach_amplitude: float              # rad, periodic arm elevation
    reach_frequency: float              # Hz
    head_bob: float                     # m

    def __post_init__(self):
        amps = (self.leg_amplitude, self.arm_amplitude, self.reach_amplitude, self.head_bob, self.waypoint_noise)
        if min(amps) < 0:
            raise ValueError("archetype amplitudes must be non-negative")
        if self.name == "walk" and not (0.3 <= self.speed[0] <= self.speed[1] <= 2.0):
            raise ValueError("walk speed must lie in [0.3, 2.0] m/s")


ARCHETYPES: dict[str, MotionArchetype] = {
    "stand": MotionArchetype("stand", (0.0, 0.0), 0.15, 0.0, 0.0, 0.08, 0.25, 0.15, 0.0),
    "walk": MotionArchetype("walk", (0.8, 1.4), 0.35, 0.05, 0.45, 0.35, 0.0, 0.0, 0.025),
    "reach": MotionArchetype("reach", (0.0, 0.0), 0.25, 0.0, 0.0, 0.0, 1.3, 0.3, 0.0),
}


def _rot_about_left(v: np.ndarray, angle) -> np.ndarray:
    """Rotate body-frame vectors (forward, left, up) about the left axis.

    Positive angles swing a downward vector forward.
    """
    c, s = np.cos(angle), np.sin(angle)
    f, l, u = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([c * f - s * u, l, s * f + c * u], axis=-1)


def _rot_about_forward(v: np.ndarray, angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    f, l, u = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([f, c * l - s * u, s * l + c * u], axis=-1)


def _limb(origin, angle_fwd, angle_side, length, side_sign):
    """Endpoint of a limb hanging from ``origin`` swung forward then outward."""
    down = np.zeros(np.broadcast(angle_fwd, angle_side).shape + (3,))
    down[..., 2] = -length
    v = _rot_about_forward(down, -side_sign * angle_side)
    v = _rot_about_left(v, angle_fwd)
    return origin + v


def _body_points(phase, posture, lean, reach_l, reach_r, arm_swing, leg_amp, bob):
    """Named joint positions in the heading frame, each ``[T, 3]``."""
    s = posture["scale"]
    T = phase.shape[0]
    zero = np.zeros(T)

    pelvis_h = (0.95 - posture["crouch"]) * s - bob * np.cos(2 * phase)
    pelvis = np.stack([zero, zero, pelvis_h], axis=-1)

    def upper(offset):
        # upper-body points lean forward about the pelvis
        return pelvis + _rot_about_left(np.broadcast_to(np.asarray(offset) * s, (T, 3)), lean)

    spine = upper([0, 0, 0.15])
    chest = upper([0, 0, 0.35])
    neck = upper([0, 0, 0.55])
    head = upper([0.02, 0, 0.68])
    nose = upper([0.11, 0, 0.68])
    eyes = [upper([0.09, 0.03, 0.71]), upper([0.09, -0.03, 0.71])]
    ears = [upper([0.0, 0.075, 0.69]), upper([0.0, -0.075, 0.69])]
    shoulders = [upper([0, 0.18, 0.5]), upper([0, -0.18, 0.5])]

    pts = {
        "pelvis": pelvis, "spine": spine, "chest": chest, "neck": neck, "head": head, "nose": nose,
        "left_eye": eyes[0], "right_eye": eyes[1], "left_ear": ears[0], "right_ear": ears[1],
        "left_shoulder": shoulders[0], "right_shoulder": shoulders[1],
    }
    for side, sign, reach, swing in (("left", 1.0, reach_l, -arm_swing), ("right", -1.0, reach_r, arm_swing)):
        sh = pts[f"{side}_shoulder"]
        elev = posture[f"{side}_arm"] + reach + swing + lean
        abd = posture[f"{side}_abduct"] + zero
        elbow = _limb(sh, elev, abd, 0.28 * s, sign)
        fore = elev + posture["elbow_flex"] + 0.3 * reach
        wrist = _limb(elbow, fore, abd, 0.26 * s, sign)
        hand = _limb(wrist, fore, abd, 0.08 * s, sign)
        pts[f"{side}_elbow"], pts[f"{side}_wrist"], pts[f"{side}_hand"] = elbow, wrist, hand

        hip = pelvis + np.array([0.0, sign * (0.1 + posture["stance"]) * s, -0.02 * s])
        thigh = posture["knee_bend"] + sign * leg_amp * np.sin(phase)
        knee = _limb(hip, thigh, zero + 0.5 * posture["stance"], 0.45 * s, sign)
        flex = 2 * posture["knee_bend"] + 0.5 * leg_amp * (1 - np.cos(phase + (0 if sign > 0 else np.pi))) / 2
        ankle = _limb(knee, thigh - flex, zero, 0.43 * s, sign)
        foot = ankle + np.stack([zero + 0.12 * s, zero, zero - 0.05 * s], axis=-1)
        pts[f"{side}_hip"], pts[f"{side}_knee"], pts[f"{side}_ankle"], pts[f"{side}_foot"] = hip, knee, ankle, foot
    return pts


def _yaw_pitch_quaternion(yaw: np.ndarray, pitch: np.ndarray) -> np.ndarray:
    """(w, x, y, z) for a z-axis yaw followed by a pitch about the body's lateral axis."""
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    # q_yaw (about z) * q_pitch (about y)
    q = np.stack([cy * cp, -sy * sp, cy * sp, sy * cp], axis=-1)
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return np.where(q[:, :1] < 0, -q, q)


def _root_track(arch: MotionArchetype, duration_s: float, t: np.ndarray, rng: np.random.Generator,
                speed: float | None = None):
    """Ground-plane root positions ``[T, 2]`` and heading ``[T]``."""
    drawn = rng.uniform(*arch.speed)
    speed = drawn if speed is None else speed
    h0 = rng.uniform(-np.pi, np.pi)
    start = rng.uniform(-2.0, 2.0, size=2)
    if speed > 0:
        n_way = int(np.ceil(duration_s)) + 2
        tw = np.arange(n_way, dtype=np.float64)
        headings = h0 + np.cumsum(rng.normal(0.0, arch.turn_rate, n_way))
        steps = speed * np.stack([np.cos(headings), np.sin(headings)], axis=-1)
        steps += rng.normal(0.0, arch.waypoint_noise, steps.shape)
        way = start + np.vstack([np.zeros((1, 2)), np.cumsum(steps[:-1], axis=0)])
        spline = CubicSpline(tw, way, axis=0, bc_type="natural")
        xy = spline(t)
        vel = spline(t, 1)
        heading = np.unwrap(np.arctan2(vel[:, 1], vel[:, 0]))
        return xy, heading, speed
    # stationary archetypes: small sway and a slowly turning body
    sway_f = rng.uniform(0.1, 0.3, size=2)
    sway_ph = rng.uniform(0, 2 * np.pi, size=2)
    xy = start + 0.02 * np.sin(2 * np.pi * sway_f * t[:, None] + sway_ph)
    n_way = int(np.ceil(duration_s / 2.0)) + 2
    tw = np.arange(n_way, dtype=np.float64) * 2.0
    yaw_way = h0 + np.cumsum(rng.normal(0.0, arch.turn_rate * 2.0, n_way))
    heading = CubicSpline(tw, yaw_way, bc_type="natural")(t)
    return xy, heading, 0.0


def _posture(arch: MotionArchetype, rng: np.random.Generator) -> dict:
    p = {
        "scale": rng.uniform(0.9, 1.1),
        "crouch": 0.0,
        "knee_bend": 0.0,
        "stance": rng.uniform(0.0, 0.06),
        "elbow_flex": rng.uniform(0.1, 0.9),
        "left_arm": rng.uniform(-0.1, 0.4),
        "right_arm": rng.uniform(-0.1, 0.4),
        "left_abduct": rng.uniform(0.05, 0.3),
        "right_abduct": rng.uniform(0.05, 0.3),
    }
    if arch.name != "walk":
        # stationary bodies get wider posture variety: raised arms, crouching
        p["left_arm"] = rng.uniform(-0.2, 1.6)
        p["right_arm"] = rng.uniform(-0.2, 1.6)
        p["left_abduct"] = rng.uniform(0.05, 1.0)
        p["right_abduct"] = rng.uniform(0.05, 1.0)
        if rng.uniform() < 0.4:
            p["crouch"] = rng.uniform(0.1, 0.35)
            p["knee_bend"] = p["crouch"] * 1.5
    return p


def generate_sequence(
    archetype: str | MotionArchetype,
    skeleton: SkeletonSpec | str | int = SKELETON_17,
    duration_s: float = 10.0,
    seed: int = 0,
    fps: float = 30.0,
    min_frames: int = 20,
    speed: float | None = None,
) -> PoseSequence:
    """One fully annotated sequence.  ``speed`` (m/s) overrides the archetype's sampled speed."""
    arch = ARCHETYPES[archetype] if isinstance(archetype, str) else archetype
    skeleton = get_skeleton(skeleton)
    n_frames = int(round(duration_s * fps))
    if n_frames < min_frames:
        raise DataError(f"duration {duration_s}s gives {n_frames} frames, fewer than one window of {min_frames}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    t = np.arange(n_frames) / fps
    xy, heading, speed = _root_track(arch, duration_s, t, rng, speed)
    posture = _posture(arch, rng)

    phase0 = rng.uniform(0, 2 * np.pi)
    step_hz = 0.6 + 0.5 * speed
    phase = phase0 + 2 * np.pi * step_hz * t if speed > 0 else np.full(n_frames, phase0)
    leg_amp = arch.leg_amplitude * min(1.0, speed)
    arm_swing = arch.arm_amplitude * (np.sin(phase) if speed > 0 else np.sin(2 * np.pi * 0.2 * t + phase0))

    reach_l = np.zeros(n_frames)
    reach_r = np.zeros(n_frames)
    lean = np.zeros(n_frames)
    if arch.reach_amplitude > 0:
        f = arch.reach_frequency * rng.uniform(0.7, 1.3)
        cyc = 0.5 - 0.5 * np.cos(2 * np.pi * f * t + phase0)
        if arch.name == "reach":
            # alternate arms every cycle; lean into the reach
            which = (np.floor(f * t + phase0 / (2 * np.pi)) % 2).astype(bool)
            reach_l = np.where(which, arch.reach_amplitude * cyc, 0.0)
            reach_r = np.where(which, 0.0, arch.reach_amplitude * cyc)
            lean = 0.35 * cyc
        else:
            reach_l = arch.reach_amplitude * cyc * rng.uniform(0, 1)
            reach_r = arch.reach_amplitude * (1 - cyc) * rng.uniform(0, 1)
    pts = _body_points(phase, posture, lean, reach_l, reach_r, arm_swing, leg_amp, arch.head_bob)

    ch, sh = np.cos(heading), np.sin(heading)

    def to_world(p):
        wx = xy[:, 0] + ch * p[:, 0] - sh * p[:, 1]
        wy = xy[:, 1] + sh * p[:, 0] + ch * p[:, 1]
        return np.stack([wx, wy, p[:, 2]], axis=-1)

    body = np.stack([to_world(pts[name]) for name in skeleton.joints], axis=1)

    offset = np.array([rng.normal(0, 0.01), rng.normal(0, 0.01), 0.1 + rng.normal(0, 0.01)])
    head_idx = skeleton.index(skeleton.head)
    positions = body[:, head_idx, :] + offset
    pitch = lean + 0.04 * np.sin(2 * phase) * (speed > 0) + posture["crouch"] * 0.5
    rotations = _yaw_pitch_quaternion(heading, pitch)

    frames = [
        PoseFrame(i, i / fps, HeadsetPose(positions[i], rotations[i]), body[i])
        for i in range(n_frames)
    ]
    return PoseSequence(skeleton, frames, arch.name, fps)


@dataclass
class GeneratorConfig:
    seed: int = 0
    sequences_per_archetype: int = 4
    test_sequences_per_archetype: int = 2
    duration_s: float = 10.0
    fps: float = 30.0
    skeleton: str = "body17"
    archetypes: tuple[str, ...] = ("stand", "walk", "reach")


@dataclass
class Dataset:
    train: list[PoseSequence]
    test: list[PoseSequence]
    train_seeds: list[int] = field(default_factory=list)
    test_seeds: list[int] = field(default_factory=list)


def sequence_seed(base: int, split: int, archetype_index: int, i: int) -> int:
    ss = np.random.SeedSequence([int(base), split, archetype_index, i])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def generate_dataset(config: GeneratorConfig) -> Dataset:
    """Balanced train/test split; per-sequence seeds are derived so the splits never share one."""
    out = Dataset([], [])
    for split, count in ((0, config.sequences_per_archetype), (1, config.test_sequences_per_archetype)):
        seqs, seeds = (out.train, out.train_seeds) if split == 0 else (out.test, out.test_seeds)
        for i in range(count):
            for a, name in enumerate(config.archetypes):
                s = sequence_seed(config.seed, split, a, i)
                seqs.append(generate_sequence(name, config.skeleton, config.duration_s, s, config.fps))
                seeds.append(s)
    return out
