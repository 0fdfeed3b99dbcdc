"""GroupToy: a synthetic multi-actor video benchmark with exact motion ground truth.

Eight activity classes, each defined purely by how the "key" actors move;
non-key actors drift slowly, the camera jitters as a whole-frame translation,
and the renderer's displacement field is recorded exactly as gt_flow. Only
the video-level label is meant for training; actor tracks sit behind an
evaluation-only accessor.

All positions, velocities and jitter offsets are quantized to 1/64 px so that
mirrored generation is bitwise-exact: generating the flip-swapped class with
mirrored random draws reproduces horizontal_flip of the original sample down
to the last bit.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .numerics.tensor_io import TensorIOError, f32_quantize, read_tensor, write_tensor

__all__ = [
    "CLASS_NAMES",
    "GenerationError",
    "DatasetError",
    "TracksUnavailableError",
    "GenConfig",
    "ActorTrack",
    "VideoSample",
    "flip_class",
    "generate_sample",
    "generate_dataset",
    "horizontal_flip",
    "segment_indices",
    "key_attention_masks",
    "write_dataset",
    "read_dataset",
    "tracks_disabled",
]

CLASS_NAMES = [
    "converge-left",
    "converge-right",
    "scatter",
    "chase",
    "huddle-break",
    "cross-l2r",
    "cross-r2l",
    "lone-runner",
]

_FLIP_SWAP = {
    "converge-left": "converge-right",
    "converge-right": "converge-left",
    "cross-l2r": "cross-r2l",
    "cross-r2l": "cross-l2r",
}


def flip_class(label: int) -> int:
    """Label index after a horizontal flip (an involution)."""
    name = CLASS_NAMES[label]
    return CLASS_NAMES.index(_FLIP_SWAP.get(name, name))


class GenerationError(Exception):
    """Scene construction failed (e.g. actors don't fit without overlap)."""


class DatasetError(Exception):
    """Dataset files are missing, corrupt, or contain unknown labels."""


class TracksUnavailableError(Exception):
    """Actor tracks were requested while the evaluation-only gate is closed."""


_tracks_enabled = True


@contextmanager
def tracks_disabled():
    """Firewall for weak supervision: inside this context any access to actor
    tracks raises, proving the training path never touches them."""
    global _tracks_enabled
    prev = _tracks_enabled
    _tracks_enabled = False
    try:
        yield
    finally:
        _tracks_enabled = prev


@dataclass
class GenConfig:
    H0: int = 64
    W0: int = 96
    T_raw: int = 24
    actor_min: int = 6
    actor_max: int = 10
    speed_min: float = 1.7
    speed_max: float = 3.4
    jitter_amplitude: float = 0.25  # per-frame walk step; cumulative clamp 6x
    class_mix: Optional[Sequence[float]] = None
    seed: int = 0

    def validate(self) -> None:
        if min(self.H0, self.W0, self.T_raw) <= 0:
            raise GenerationError("extents must be positive")
        if not (0 < self.actor_min <= self.actor_max):
            raise GenerationError("bad actor count range")
        if not (0 < self.speed_min <= self.speed_max):
            raise GenerationError("bad speed range")
        if self.jitter_amplitude < 0:
            raise GenerationError("jitter amplitude must be nonnegative")
        if self.class_mix is not None and (
                len(self.class_mix) != len(CLASS_NAMES)
                or min(self.class_mix) < 0 or sum(self.class_mix) <= 0):
            raise GenerationError("class_mix needs one nonnegative weight per class")


@dataclass
class ActorTrack:
    positions: np.ndarray  # (T_raw, 2) scene-coordinate (x, y) centers
    radius: float
    color: np.ndarray  # (3,) RGB in [0, 1]
    is_key: bool


@dataclass
class VideoSample:
    frames: np.ndarray  # (T_raw, H0, W0, 3) in [0, 1]
    label: int
    gt_flow: Optional[np.ndarray]  # (T_raw, H0, W0) nonnegative magnitudes
    camera_jitter: np.ndarray  # (T_raw, 2) whole-frame (x, y) translation
    _tracks: List[ActorTrack] = field(repr=False, default_factory=list)

    @property
    def label_name(self) -> str:
        return CLASS_NAMES[self.label]

    def tracks_for_eval(self) -> List[ActorTrack]:
        if not _tracks_enabled:
            raise TracksUnavailableError(
                "actor tracks are evaluation-only and currently disabled")
        return self._tracks


# ---------------------------------------------------------------------------
# randomness with a mirror: every continuous draw is quantized to 1/64 px,
# and the mirrored wrapper reflects x-like quantities exactly.


def _q64(v):
    return np.round(np.asarray(v, dtype=np.float64) * 64.0) / 64.0


class _Draws:
    """Random draws for scene construction, all spatial values dyadic (1/64)."""

    def __init__(self, rng: np.random.Generator, W0: int, H0: int):
        self.rng = rng
        self.W0 = W0
        self.H0 = H0

    # mirror-invariant scalars -------------------------------------------
    def int_range(self, lo: int, hi: int) -> int:
        return int(self.rng.integers(lo, hi + 1))

    def scalar(self, lo: float, hi: float) -> float:
        return float(_q64(self.rng.uniform(lo, hi)))

    def color(self) -> np.ndarray:
        return f32_quantize(self.rng.uniform(0.30, 0.95, size=3))

    # positions ----------------------------------------------------------
    def x_any(self, margin: float) -> float:
        return float(_q64(self.rng.uniform(margin, self.W0 - 1 - margin)))

    def y_any(self, margin: float) -> float:
        return float(_q64(self.rng.uniform(margin, self.H0 - 1 - margin)))

    def x_sided(self, lo_frac: float, hi_frac: float, side: int) -> float:
        """A horizontal band; side -1 anchors it at the left edge, +1 mirrors it."""
        v = float(_q64(self.rng.uniform(lo_frac * (self.W0 - 1),
                                        hi_frac * (self.W0 - 1))))
        return v if side < 0 else (self.W0 - 1) - v

    def x_centered(self, halfwidth: float) -> float:
        v = float(_q64(self.rng.uniform(-halfwidth, halfwidth)))
        return (self.W0 - 1) / 2.0 + v

    def y_centered(self, halfheight: float) -> float:
        v = float(_q64(self.rng.uniform(-halfheight, halfheight)))
        return (self.H0 - 1) / 2.0 + v

    # velocities ---------------------------------------------------------
    def vx_signed(self, lo: float, hi: float, direction: int) -> float:
        return direction * float(_q64(self.rng.uniform(lo, hi)))

    def vx_sym(self, amp: float) -> float:
        return float(_q64(self.rng.uniform(-amp, amp)))

    def vy_sym(self, amp: float) -> float:
        return float(_q64(self.rng.uniform(-amp, amp)))

    def unit_pair(self) -> Tuple[float, float]:
        """Quantized (cos, sin) of a uniform angle."""
        th = self.rng.uniform(0.0, 2.0 * np.pi)
        return float(_q64(np.cos(th))), float(_q64(np.sin(th)))

    def rot_pair(self, lo: float, hi: float) -> Tuple[float, float]:
        """Quantized per-frame rotation (cos w, sin w) with random handedness."""
        w = self.rng.uniform(lo, hi)
        sign = 1.0 if self.rng.random() < 0.5 else -1.0
        return float(_q64(np.cos(w))), float(sign * _q64(np.sin(w)))


class _MirrorDraws:
    """Reflects the x-axis of every draw from a base `_Draws`, exactly."""

    def __init__(self, base: _Draws):
        self.base = base
        self.W0 = base.W0
        self.H0 = base.H0

    def int_range(self, lo, hi):
        return self.base.int_range(lo, hi)

    def scalar(self, lo, hi):
        return self.base.scalar(lo, hi)

    def color(self):
        return self.base.color()

    def x_any(self, margin):
        return (self.W0 - 1) - self.base.x_any(margin)

    def y_any(self, margin):
        return self.base.y_any(margin)

    def x_sided(self, lo_frac, hi_frac, side):
        return (self.W0 - 1) - self.base.x_sided(lo_frac, hi_frac, -side)

    def x_centered(self, halfwidth):
        return (self.W0 - 1) - self.base.x_centered(halfwidth)

    def y_centered(self, halfheight):
        return self.base.y_centered(halfheight)

    def vx_signed(self, lo, hi, direction):
        return -self.base.vx_signed(lo, hi, -direction)

    def vx_sym(self, amp):
        return -self.base.vx_sym(amp)

    def vy_sym(self, amp):
        return self.base.vy_sym(amp)

    def unit_pair(self):
        c, s = self.base.unit_pair()
        return -c, s

    def rot_pair(self, lo, hi):
        c, s = self.base.rot_pair(lo, hi)
        return c, -s


# ---------------------------------------------------------------------------
# scene construction


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def _place(draws, n: int, radii, taken: List[Tuple[float, float, float]],
           xy_fn, gap: float = 1.0, tries_per: int = 500):
    """Rejection-place n circles without overlap against `taken` and each other."""
    placed = []
    for i in range(n):
        r = radii[i]
        ok = False
        for _ in range(tries_per):
            x, y = xy_fn(r)
            good = True
            for (ox, oy, orr) in taken + placed:
                dx, dy = x - ox, y - oy
                lim = r + orr + gap
                if dx * dx + dy * dy < lim * lim:
                    good = False
                    break
            if good:
                placed.append((x, y, r))
                ok = True
                break
        if not ok:
            raise GenerationError(
                f"could not place actor {len(taken) + i + 1} without overlap "
                f"(frame too crowded)")
    return placed


def _toward(px, py, tx, ty, speed):
    """One step toward a target, arriving without overshoot; dyadic output."""
    dx, dy = tx - px, ty - py
    d = float(np.sqrt(dx * dx + dy * dy))
    if d == 0.0:
        return 0.0, 0.0, d
    step = min(speed, d)
    return float(_q64(step * dx / d)), float(_q64(step * dy / d)), d


def _ray_to_walls(px, py, ux, uy, lo_x, hi_x, lo_y, hi_y):
    """Distance along (ux, uy) from (px, py) to the first wall."""
    best = np.inf
    if ux > 0:
        best = min(best, (hi_x - px) / ux)
    elif ux < 0:
        best = min(best, (lo_x - px) / ux)
    if uy > 0:
        best = min(best, (hi_y - py) / uy)
    elif uy < 0:
        best = min(best, (lo_y - py) / uy)
    return best


def _rot_step(c, s, cd, sd):
    """Apply a quantized rotation step to a quantized (cos, sin) state."""
    return float(_q64(cd * c - sd * s)), float(_q64(sd * c + cd * s))


def _normalized(dx, dy, draws):
    d = float(np.sqrt(dx * dx + dy * dy))
    if d == 0.0:
        return draws.unit_pair()
    return dx / d, dy / d


def _build_tracks(label: int, cfg: GenConfig, draws
                  ) -> Tuple[List[ActorTrack], np.ndarray]:
    """Choreograph all actor trajectories for one sample.

    Returns the actors in painter order (non-key first, keys on top).
    The same call sequence runs for a flip-swapped class under mirrored
    draws, which is what makes paired-seed mirroring bitwise.
    """
    name = CLASS_NAMES[label]
    W0, H0, T = cfg.W0, cfg.H0, cfg.T_raw
    n_total = draws.int_range(cfg.actor_min, cfg.actor_max)
    if name == "lone-runner":
        n_key = 1
    else:
        n_key = draws.int_range(3, max(3, min(5, n_total - 1)))
    n_bg = n_total - n_key

    # class-level parameters, drawn before any actor state
    side = 0
    target = center = None
    rotpair = None
    orbit_R = None
    if name in ("converge-left", "converge-right"):
        side = -1 if name == "converge-left" else 1
        target = (draws.x_sided(0.16, 0.28, side), draws.y_any(0.32 * H0))
    elif name in ("scatter", "huddle-break"):
        center = (draws.x_centered(6.0), draws.y_centered(5.0))
    elif name == "chase":
        center = (draws.x_centered(9.0), draws.y_centered(4.0))
        orbit_R = draws.scalar(14.0, 19.0)
        w_lo = max(0.085, (cfg.speed_min + 0.15) / orbit_R)
        w_hi = max(w_lo + 0.01, min(0.17, cfg.speed_max / orbit_R))
        rotpair = draws.rot_pair(w_lo, w_hi)

    radii_bg = [draws.scalar(3.0, 4.25) for _ in range(n_bg)]
    colors_bg = [draws.color() for _ in range(n_bg)]
    radii_k = [draws.scalar(3.25, 4.5) for _ in range(n_key)]
    colors_k = [draws.color() for _ in range(n_key)]

    # jitter: a small clamped random walk, shared by the whole frame
    amp = cfg.jitter_amplitude
    jitter = np.zeros((T, 2))
    jx = jy = 0.0
    for t in range(1, T):
        jx = _clamp(jx + draws.vx_sym(amp), -6 * amp, 6 * amp)
        jy = _clamp(jy + draws.vy_sym(amp), -6 * amp, 6 * amp)
        jitter[t] = (jx, jy)

    # initial placement --------------------------------------------------
    def margin_fn(r):
        return r + 0.5

    taken: List[Tuple[float, float, float]] = []
    bg_pos = _place(draws, n_bg, radii_bg, taken,
                    lambda r: (draws.x_any(margin_fn(r)), draws.y_any(margin_fn(r))))
    taken = list(bg_pos)

    if name == "scatter":
        key_pos = _place(draws, n_key, radii_k, taken,
                         lambda r: (draws.x_centered(13.0), draws.y_centered(10.0)),
                         gap=0.25, tries_per=2000)
    elif name in ("cross-l2r", "cross-r2l"):
        direction = 1 if name == "cross-l2r" else -1
        slots = np.linspace(0.16 * (H0 - 1), 0.84 * (H0 - 1), n_key)
        key_pos = []
        for i in range(n_key):
            r = radii_k[i]
            x = draws.x_sided(0.02, 0.10, -direction)
            y = _clamp(float(_q64(slots[i] + draws.vy_sym(1.0))),
                       margin_fn(r), H0 - 1 - margin_fn(r))
            key_pos.append((_clamp(x, margin_fn(r), W0 - 1 - margin_fn(r)), y, r))
    elif name == "chase":
        key_pos = None  # orbit construction below places the keys directly
    else:
        key_pos = _place(draws, n_key, radii_k, taken,
                         lambda r: (draws.x_any(margin_fn(r)), draws.y_any(margin_fn(r))))

    # trajectory state ----------------------------------------------------
    pos = np.zeros((n_total, T, 2))
    for i, (x, y, _r) in enumerate(bg_pos):
        pos[i, 0] = (x, y)

    key_off = n_bg
    per_key: List[dict] = []

    if name in ("converge-left", "converge-right"):
        tx0, ty0 = target
        for i, (x, y, r) in enumerate(key_pos):
            pos[key_off + i, 0] = (x, y)
            ox = draws.vx_sym(4.0)
            oy = draws.vy_sym(3.5)
            tx = _clamp(tx0 + ox, r + 1.0, W0 - 2 - r)
            ty = _clamp(ty0 + oy, r + 1.0, H0 - 2 - r)
            d0 = float(np.hypot(tx - x, ty - y))
            sp = _clamp(d0 / max(T - 6, 1), cfg.speed_min, cfg.speed_max)
            per_key.append({"target": (tx, ty), "speed": sp})
    elif name == "scatter":
        cx, cy = center
        for i, (x, y, r) in enumerate(key_pos):
            pos[key_off + i, 0] = (x, y)
            ux, uy = _normalized(x - cx, y - cy, draws)
            ray = _ray_to_walls(x, y, ux, uy, r + 0.5, W0 - 1 - r - 0.5,
                                r + 0.5, H0 - 1 - r - 0.5)
            sp = _clamp(0.85 * ray / max(T - 1, 1), cfg.speed_min, cfg.speed_max)
            vx, vy = float(_q64(sp * ux)), float(_q64(sp * uy))
            per_key.append({"v": (vx, vy)})
    elif name == "huddle-break":
        cx, cy = center
        t_mid = T // 2
        for i, (x, y, r) in enumerate(key_pos):
            pos[key_off + i, 0] = (x, y)
            ox = draws.vx_sym(4.0)
            oy = draws.vy_sym(3.0)
            tx = _clamp(cx + ox, r + 1.0, W0 - 2 - r)
            ty = _clamp(cy + oy, r + 1.0, H0 - 2 - r)
            d0 = float(np.hypot(tx - x, ty - y))
            sp_in = _clamp(d0 / max(t_mid - 1, 1), cfg.speed_min, cfg.speed_max)
            per_key.append({"target": (tx, ty), "speed_in": sp_in, "t_mid": t_mid})
    elif name == "chase":
        cx, cy = center
        cd, sd = rotpair
        c_i, s_i = draws.unit_pair()
        for i in range(n_key):
            r = radii_k[i]
            x = _clamp(float(_q64(cx + orbit_R * c_i)), r + 0.5, W0 - 1.5 - r)
            y = _clamp(float(_q64(cy + orbit_R * s_i)), r + 0.5, H0 - 1.5 - r)
            pos[key_off + i, 0] = (x, y)
            per_key.append({"cs": (c_i, s_i), "R": orbit_R, "center": (cx, cy),
                            "rot": (cd, sd)})
            for _ in range(6):  # trail the next pursuer along the orbit
                c_i, s_i = _rot_step(c_i, s_i, cd, -sd)
    elif name in ("cross-l2r", "cross-r2l"):
        direction = 1 if name == "cross-l2r" else -1
        for i, (x, y, r) in enumerate(key_pos):
            pos[key_off + i, 0] = (x, y)
            vx = draws.vx_signed(max(cfg.speed_min + 0.9, 2.6), cfg.speed_max,
                                 direction)
            vy = draws.vy_sym(0.15)
            per_key.append({"v": (vx, vy)})
    elif name == "lone-runner":
        x, y, r = key_pos[0]
        pos[key_off, 0] = (x, y)
        ux, uy = draws.unit_pair()
        sp = draws.scalar(max(cfg.speed_max - 0.5, cfg.speed_min), cfg.speed_max)
        per_key.append({"v": [float(_q64(sp * ux)), float(_q64(sp * uy))]})
    else:  # pragma: no cover
        raise GenerationError(f"unknown class {name!r}")

    bg_amp = 0.05 if name == "lone-runner" else 0.15

    # frame-by-frame stepping --------------------------------------------
    for t in range(T - 1):
        for i in range(n_bg):
            r = radii_bg[i]
            vx = draws.vx_sym(bg_amp)
            vy = draws.vy_sym(bg_amp)
            x = _clamp(pos[i, t, 0] + vx, r + 0.5, W0 - 1.5 - r)
            y = _clamp(pos[i, t, 1] + vy, r + 0.5, H0 - 1.5 - r)
            pos[i, t + 1] = (x, y)
        for k in range(n_key):
            idx = key_off + k
            r = radii_k[k]
            st = per_key[k]
            px, py = pos[idx, t]
            if name in ("converge-left", "converge-right"):
                tx, ty = st["target"]
                vx, vy, d = _toward(px, py, tx, ty, st["speed"])
                if d < 0.75:
                    vx, vy = draws.vx_sym(0.3), draws.vy_sym(0.3)
            elif name == "scatter":
                vx, vy = st["v"]
            elif name == "huddle-break":
                if t < st["t_mid"]:
                    tx, ty = st["target"]
                    vx, vy, d = _toward(px, py, tx, ty, st["speed_in"])
                    if d < 0.5:
                        vx, vy = 0.0, 0.0
                else:
                    if "v_out" not in st:
                        cx, cy = center
                        ux, uy = _normalized(px - cx, py - cy, draws)
                        ray = _ray_to_walls(px, py, ux, uy, r + 0.5,
                                            W0 - 1 - r - 0.5, r + 0.5,
                                            H0 - 1 - r - 0.5)
                        sp = _clamp(0.85 * ray / max(T - st["t_mid"], 1),
                                    cfg.speed_min, cfg.speed_max)
                        st["v_out"] = (float(_q64(sp * ux)), float(_q64(sp * uy)))
                    vx, vy = st["v_out"]
            elif name == "chase":
                c_i, s_i = st["cs"]
                cd, sd = st["rot"]
                c_i, s_i = _rot_step(c_i, s_i, cd, sd)
                st["cs"] = (c_i, s_i)
                cx, cy = st["center"]
                R = st["R"]
                nx = _clamp(float(_q64(cx + R * c_i)), r + 0.5, W0 - 1.5 - r)
                ny = _clamp(float(_q64(cy + R * s_i)), r + 0.5, H0 - 1.5 - r)
                pos[idx, t + 1] = (nx, ny)
                continue
            elif name in ("cross-l2r", "cross-r2l"):
                vx, vy = st["v"]
            else:  # lone-runner
                vx, vy = st["v"]
                nx = px + vx
                ny = py + vy
                lo_x, hi_x = r + 0.5, W0 - 1.5 - r
                lo_y, hi_y = r + 0.5, H0 - 1.5 - r
                if nx < lo_x:
                    nx = 2 * lo_x - nx
                    vx = -vx
                elif nx > hi_x:
                    nx = 2 * hi_x - nx
                    vx = -vx
                if ny < lo_y:
                    ny = 2 * lo_y - ny
                    vy = -vy
                elif ny > hi_y:
                    ny = 2 * hi_y - ny
                    vy = -vy
                st["v"] = [vx, vy]
                pos[idx, t + 1] = (nx, ny)
                continue
            x = _clamp(px + vx, r + 0.5, W0 - 1.5 - r)
            y = _clamp(py + vy, r + 0.5, H0 - 1.5 - r)
            pos[idx, t + 1] = (x, y)

    tracks = []
    for i in range(n_bg):
        tracks.append(ActorTrack(positions=pos[i].copy(), radius=radii_bg[i],
                                 color=colors_bg[i], is_key=False))
    for k in range(n_key):
        tracks.append(ActorTrack(positions=pos[key_off + k].copy(),
                                 radius=radii_k[k], color=colors_k[k],
                                 is_key=True))
    return tracks, jitter


# ---------------------------------------------------------------------------
# rendering


class _Background:
    """Smooth analytic background: linear gradients plus a few fixed sinusoids.

    Evaluable at arbitrary (possibly jitter-shifted) float coordinates, which
    keeps whole-frame camera translation exact. Fixed per dataset seed so
    location appearance is a learnable position cue.
    """

    def __init__(self, seed: int, W0: int, H0: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E3779B9]))
        self.W0, self.H0 = W0, H0
        self.waves = []
        for _ in range(3):
            per_ch = []
            for _ in range(3):
                wavelength = rng.uniform(14.0, 44.0)
                ang = rng.uniform(0.0, np.pi)
                fx = np.cos(ang) / wavelength
                fy = np.sin(ang) / wavelength
                phase = rng.uniform(0.0, 2.0 * np.pi)
                amp = rng.uniform(0.025, 0.055)
                per_ch.append((fx, fy, phase, amp))
            self.waves.append(per_ch)

    def eval(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        W0, H0 = self.W0, self.H0
        out = np.empty(xs.shape + (3,))
        base = (0.30, 0.34, 0.30)
        out[..., 0] = base[0] + 0.24 * xs / (W0 - 1)
        out[..., 1] = base[1]
        out[..., 2] = base[2] + 0.24 * ys / (H0 - 1)
        for ch in range(3):
            for (fx, fy, phase, amp) in self.waves[ch]:
                out[..., ch] += amp * np.sin(
                    2.0 * np.pi * (fx * xs + fy * ys) + phase)
        return np.clip(out, 0.0, 1.0)


_BG_CACHE: dict = {}


def _background_for(cfg: GenConfig) -> _Background:
    key = (cfg.seed, cfg.W0, cfg.H0)
    bg = _BG_CACHE.get(key)
    if bg is None:
        bg = _Background(cfg.seed, cfg.W0, cfg.H0)
        _BG_CACHE[key] = bg
    return bg


def _render(tracks: List[ActorTrack], jitter: np.ndarray, cfg: GenConfig,
            mirror: bool) -> Tuple[np.ndarray, np.ndarray]:
    """Rasterize frames and the exact displacement-magnitude field."""
    W0, H0, T = cfg.W0, cfg.H0, cfg.T_raw
    bg = _background_for(cfg)
    ys_grid, xs_grid = np.mgrid[0:H0, 0:W0].astype(np.float64)

    frames = np.empty((T, H0, W0, 3))
    flow = np.zeros((T, H0, W0))

    for t in range(T):
        jx, jy = jitter[t]
        bx = xs_grid - jx
        if mirror:
            bx = (W0 - 1) - bx
        frame = bg.eval(bx, ys_grid - jy)
        for tr in tracks:
            cx = tr.positions[t, 0] + jx
            cy = tr.positions[t, 1] + jy
            dx = xs_grid - cx
            dy = ys_grid - cy
            dist = np.sqrt(dx * dx + dy * dy)
            cov = np.clip(tr.radius + 0.5 - dist, 0.0, 1.0)[..., None]
            frame = frame * (1.0 - cov) + tr.color * cov
        frames[t] = frame

    for t in range(T - 1):
        djx = jitter[t + 1, 0] - jitter[t, 0]
        djy = jitter[t + 1, 1] - jitter[t, 1]
        fl = np.full((H0, W0), float(np.hypot(djx, djy)))
        for tr in tracks:  # painter order: later actors own disputed pixels
            cx = tr.positions[t, 0] + jitter[t, 0]
            cy = tr.positions[t, 1] + jitter[t, 1]
            dx = xs_grid - cx
            dy = ys_grid - cy
            inside = dx * dx + dy * dy <= tr.radius * tr.radius
            vx = tr.positions[t + 1, 0] - tr.positions[t, 0] + djx
            vy = tr.positions[t + 1, 1] - tr.positions[t, 1] + djy
            fl[inside] = float(np.hypot(vx, vy))
        flow[t] = fl
    flow[T - 1] = flow[T - 2]

    return f32_quantize(frames), f32_quantize(flow)


def generate_sample(label: int, cfg: GenConfig, seed: int,
                    mirror: bool = False) -> VideoSample:
    """Deterministically build one labeled clip.

    With mirror=True every random draw is reflected about the vertical axis;
    generating the flip-swapped class this way reproduces horizontal_flip of
    the base sample bitwise (paired-seed equivariance).
    """
    cfg.validate()
    if not 0 <= label < len(CLASS_NAMES):
        raise GenerationError(f"label {label} out of range")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, seed]))
    draws: object = _Draws(rng, cfg.W0, cfg.H0)
    if mirror:
        draws = _MirrorDraws(draws)
    tracks, jitter = _build_tracks(label, cfg, draws)
    frames, flow = _render(tracks, jitter, cfg, mirror)
    return VideoSample(frames=frames, label=label, gt_flow=flow,
                       camera_jitter=jitter, _tracks=tracks)


def generate_dataset(cfg: GenConfig, count: int) -> List[VideoSample]:
    """A class-balanced (or class_mix-weighted) list of samples."""
    cfg.validate()
    if count <= 0:
        raise GenerationError("sample count must be positive")
    n_cls = len(CLASS_NAMES)
    weights = np.asarray(cfg.class_mix if cfg.class_mix is not None
                         else [1.0] * n_cls, dtype=np.float64)
    weights = weights / weights.sum()
    quota = np.floor(weights * count).astype(int)
    rem = count - quota.sum()
    order = np.argsort(-(weights * count - quota), kind="stable")
    for i in range(rem):
        quota[order[i]] += 1
    labels = [c for c in range(n_cls) for _ in range(quota[c])]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    rng.shuffle(labels)
    return [generate_sample(lab, cfg, seed=i) for i, lab in enumerate(labels)]


# ---------------------------------------------------------------------------
# sample-level transforms


def horizontal_flip(s: VideoSample) -> VideoSample:
    """Mirror a sample along width and swap direction-sensitive labels."""
    W0 = s.frames.shape[2]
    frames = s.frames[:, :, ::-1, :].copy()
    flow = None if s.gt_flow is None else s.gt_flow[:, :, ::-1].copy()
    jitter = s.camera_jitter.copy()
    jitter[:, 0] = -jitter[:, 0]
    tracks = []
    for tr in s._tracks:
        p = tr.positions.copy()
        p[:, 0] = (W0 - 1) - p[:, 0]
        tracks.append(ActorTrack(positions=p, radius=tr.radius,
                                 color=tr.color.copy(), is_key=tr.is_key))
    return VideoSample(frames=frames, label=flip_class(s.label), gt_flow=flow,
                       camera_jitter=jitter, _tracks=tracks)


def segment_indices(T_raw: int, T: int, mode: str, seed=0) -> np.ndarray:
    """TSN-style frame picks: T contiguous segments, center in eval mode,
    uniform within each segment in train mode."""
    if not 1 <= T <= T_raw:
        raise ValueError(f"need T_raw >= T >= 1, got T_raw={T_raw}, T={T}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train|eval, got {mode!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    starts = [(i * T_raw) // T for i in range(T + 1)]
    out = np.empty(T, dtype=np.int64)
    for i in range(T):
        lo, hi = starts[i], starts[i + 1]
        if mode == "eval":
            out[i] = lo + (hi - lo - 1) // 2
        else:
            out[i] = lo + int(rng.integers(hi - lo))
    return out


def key_attention_masks(s: VideoSample, frame_indices: Sequence[int],
                        H: int, W: int, threshold: float = 0.1) -> np.ndarray:
    """Binary (len(idx), H*W) masks of grid cells overlapping key actors.

    A cell counts as key if at least `threshold` of its pixels fall inside a
    key actor's rendered disk. Uses the evaluation-only tracks accessor.
    """
    tracks = s.tracks_for_eval()
    H0, W0 = s.frames.shape[1], s.frames.shape[2]
    ys, xs = np.mgrid[0:H0, 0:W0].astype(np.float64)
    masks = np.zeros((len(frame_indices), H * W))
    for row, t in enumerate(frame_indices):
        pix = np.zeros((H0, W0))
        jx, jy = s.camera_jitter[t]
        for tr in tracks:
            if not tr.is_key:
                continue
            dx = xs - (tr.positions[t, 0] + jx)
            dy = ys - (tr.positions[t, 1] + jy)
            pix[dx * dx + dy * dy <= tr.radius * tr.radius] = 1.0
        cell = pix.reshape(H, H0 // H, W, W0 // W).mean(axis=(1, 3))
        masks[row] = (cell.reshape(-1) >= threshold).astype(np.float64)
    return masks


# ---------------------------------------------------------------------------
# disk format


def write_dataset(samples: Sequence[VideoSample], dir_path: str) -> None:
    """Lay out manifest.tsv plus per-sample tensor files; bitwise round-trip."""
    os.makedirs(dir_path, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        sid = f"s{i:05d}"
        sub = os.path.join(dir_path, sid)
        os.makedirs(sub, exist_ok=True)
        write_tensor(os.path.join(sub, "frames.flmt"), s.frames)
        write_tensor(os.path.join(sub, "flow.flmt"), s.gt_flow)
        T = s.frames.shape[0]
        rows = []
        for tr in s._tracks:
            rows.append(np.concatenate([
                tr.positions[:, 0], tr.positions[:, 1],
                [tr.radius], tr.color, [1.0 if tr.is_key else 0.0]]))
        write_tensor(os.path.join(sub, "tracks.flmt"), np.asarray(rows))
        write_tensor(os.path.join(sub, "jitter.flmt"), s.camera_jitter)
        lines.append("\t".join([
            sid, CLASS_NAMES[s.label],
            f"{sid}/frames.flmt", f"{sid}/flow.flmt",
            f"{sid}/tracks.flmt", f"{sid}/jitter.flmt"]) + "\n")
    with open(os.path.join(dir_path, "manifest.tsv"), "w") as fh:
        fh.writelines(lines)


def read_dataset(dir_path: str, load_flow: bool = True) -> List[VideoSample]:
    manifest = os.path.join(dir_path, "manifest.tsv")
    try:
        with open(manifest) as fh:
            raw = fh.readlines()
    except OSError as e:
        raise DatasetError(f"cannot read manifest {manifest}: {e}") from e
    samples = []
    for ln, line in enumerate(raw, 1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise DatasetError(f"{manifest}:{ln}: expected 6 tab-separated fields")
        sid, cls_name, f_frames, f_flow, f_tracks, f_jitter = parts
        if cls_name not in CLASS_NAMES:
            raise DatasetError(f"{manifest}:{ln}: unknown class {cls_name!r}")
        label = CLASS_NAMES.index(cls_name)
        try:
            frames = read_tensor(os.path.join(dir_path, f_frames))
            flow = read_tensor(os.path.join(dir_path, f_flow)) if load_flow else None
            track_rows = read_tensor(os.path.join(dir_path, f_tracks))
            jitter = read_tensor(os.path.join(dir_path, f_jitter))
        except TensorIOError as e:
            raise DatasetError(f"sample {sid}: {e}") from e
        T = frames.shape[0]
        tracks = []
        for row in track_rows:
            tracks.append(ActorTrack(
                positions=np.stack([row[:T], row[T:2 * T]], axis=1),
                radius=float(row[2 * T]),
                color=row[2 * T + 1:2 * T + 4].copy(),
                is_key=bool(row[2 * T + 4] > 0.5)))
        samples.append(VideoSample(frames=frames, label=label, gt_flow=flow,
                                   camera_jitter=jitter, _tracks=tracks))
    return samples
