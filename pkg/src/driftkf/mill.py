"""Milling kinematics and the Kienzle force law.

Forces are expressed in the frame of the cutting edge (tangential/radial).
The helical flute is discretised into a staircase of straight disk elements,
each one lagging the tool tip by ``2 tan(beta) z / D``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ToolSpec:
    diameter: float = 10.0
    tooth_count: int = 2
    helix_angle: float = 45.0  # deg
    rake_angle: float = 20.0  # deg, not used by the force law
    disk_count: int = 23

    def __post_init__(self):
        if self.diameter <= 0:
            raise ValueError("diameter must be positive")
        if self.tooth_count < 1:
            raise ValueError("tooth_count must be >= 1")
        if not 0.0 <= self.helix_angle < 90.0:
            raise ValueError("helix_angle must lie in [0, 90) deg")
        if self.disk_count < 1:
            raise ValueError("disk_count must be >= 1")


@dataclass(frozen=True)
class ProcessSpec:
    feed_per_tooth: float = 0.1  # mm
    cutting_velocity: float = 2.44  # m/s
    depth_of_cut: float = 2.0  # mm
    width_of_cut: float = 3.0  # mm
    sample_rate: float = 10_000.0  # Hz
    milling_direction: str = "up"

    def __post_init__(self):
        if self.feed_per_tooth <= 0 or self.depth_of_cut <= 0:
            raise ValueError("feed_per_tooth and depth_of_cut must be positive")
        if self.width_of_cut <= 0:
            raise ValueError("width_of_cut must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.milling_direction not in ("up", "down"):
            raise ValueError("milling_direction must be 'up' or 'down'")


@dataclass(frozen=True)
class CoefficientSet:
    """Kienzle coefficients ``(k_t, m_t, k_r, m_r)``."""

    k_t: float
    m_t: float
    k_r: float
    m_r: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_tuple()):
            raise ValueError("coefficients must be finite")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.k_t, self.m_t, self.k_r, self.m_r)

    def scaled(self, factor: float) -> "CoefficientSet":
        return CoefficientSet(*(factor * v for v in self.as_tuple()))


# X5CrNi18-10 reference coefficients
X5CRNI18_10 = CoefficientSet(k_t=1700.0, m_t=0.18, k_r=350.0, m_r=0.55)


@dataclass
class EngagementSample:
    spindle_angle: float
    per_disk_h: np.ndarray  # (tooth_count * disk_count,), mm
    b_disk: float
    h_sum: float = field(init=False)

    def __post_init__(self):
        self.per_disk_h = np.asarray(self.per_disk_h, dtype=float)
        if np.any(self.per_disk_h < 0):
            raise ValueError("chip thickness cannot be negative")
        self.h_sum = float(self.per_disk_h.sum())

    @property
    def engaged(self) -> np.ndarray:
        """Chip thickness of the engaged disks only."""
        return self.per_disk_h[self.per_disk_h > 0]


def chip_thickness(angle, f_z, entry=0.0, exit=math.pi):
    """Undeformed chip thickness ``f_z sin(angle)`` inside the arc, else 0.

    ``angle`` may be an array; it is wrapped into ``[0, 2 pi)`` first.
    """
    phi = np.mod(angle, 2.0 * math.pi)
    inside = (phi > entry) & (phi < exit)
    h = np.where(inside, f_z * np.sin(phi), 0.0)
    h = np.maximum(h, 0.0)
    if np.ndim(h) == 0:
        return float(h)
    return h


def engagement_arc(process: ProcessSpec, tool: ToolSpec) -> tuple[float, float]:
    """Entry and exit immersion angles of a single straight edge."""
    ratio = process.width_of_cut / tool.diameter
    if not 0.0 < ratio <= 1.0:
        raise ValueError("width_of_cut must satisfy 0 < a_e <= D")
    sweep = math.acos(1.0 - 2.0 * ratio)
    if process.milling_direction == "up":
        return 0.0, sweep
    return math.pi - sweep, math.pi


def helix_lag(tool: ToolSpec, z: float) -> float:
    return 2.0 * math.tan(math.radians(tool.helix_angle)) * z / tool.diameter


def disk_lags(tool: ToolSpec, process: ProcessSpec) -> np.ndarray:
    """Helix lag of every disk, evaluated at the disk's axial midpoint."""
    b = process.depth_of_cut / tool.disk_count
    z_mid = (np.arange(tool.disk_count) + 0.5) * b
    return 2.0 * math.tan(math.radians(tool.helix_angle)) * z_mid / tool.diameter


def kienzle_force(c: CoefficientSet, b: float, h: float) -> tuple[float, float]:
    if h <= 0:
        raise ValueError("chip thickness must be positive (ploughing/disengaged)")
    if b <= 0:
        raise ValueError("chip width must be positive")
    return c.k_t * b * h ** (1.0 - c.m_t), c.k_r * b * h ** (1.0 - c.m_r)


def altintas_force(k_e: float, k_c: float, b: float, h: float) -> float:
    return b * (k_e + k_c * h)


def disk_thickness(tool: ToolSpec, process: ProcessSpec, spindle_angle) -> np.ndarray:
    """Per-disk chip thickness for one or many spindle angles.

    Returns shape ``(..., tooth_count * disk_count)`` ordered tooth-major.
    """
    entry, exit = engagement_arc(process, tool)
    pitch = 2.0 * math.pi / tool.tooth_count
    offsets = np.arange(tool.tooth_count) * pitch
    phi = (
        np.asarray(spindle_angle, dtype=float)[..., None, None]
        + offsets[:, None]
        - disk_lags(tool, process)[None, :]
    )
    h = chip_thickness(phi, process.feed_per_tooth, entry, exit)
    return np.reshape(h, np.shape(h)[:-2] + (-1,))


def summed_force(k, m, b, h):
    """Sum of ``k b h^(1-m)`` over the engaged entries of ``h``.

    ``k`` and ``m`` broadcast against each other (e.g. whole ensembles);
    ``h`` is a 1-D array of per-disk thickness, zeros are skipped.
    """
    h = np.asarray(h, dtype=float)
    h = h[h > 0]
    k = np.asarray(k, dtype=float)
    m = np.asarray(m, dtype=float)
    if h.size == 0:
        return np.zeros(np.broadcast(k, m).shape)
    # one engaged disk at a time keeps the work arrays cache-sized
    a = 1.0 - m
    acc = np.zeros(a.shape)
    tmp = np.empty(a.shape)
    for log_h in np.log(h):
        np.multiply(a, log_h, out=tmp)
        acc += np.exp(tmp, out=tmp)
    return k * b * acc


def total_force(
    tool: ToolSpec, process: ProcessSpec, c: CoefficientSet, spindle_angle: float
) -> tuple[float, float, EngagementSample]:
    b = process.depth_of_cut / tool.disk_count
    eng = EngagementSample(
        spindle_angle=float(spindle_angle),
        per_disk_h=disk_thickness(tool, process, spindle_angle),
        b_disk=b,
    )
    f_t = float(summed_force(c.k_t, c.m_t, b, eng.per_disk_h))
    f_r = float(summed_force(c.k_r, c.m_r, b, eng.per_disk_h))
    return f_t, f_r, eng


def spindle_speed(tool: ToolSpec, process: ProcessSpec) -> float:
    """Revolutions per second from cutting velocity (m/s) and diameter (mm)."""
    return process.cutting_velocity * 1000.0 / (math.pi * tool.diameter)


def samples_per_revolution(tool: ToolSpec, process: ProcessSpec) -> int:
    return round(process.sample_rate / spindle_speed(tool, process))
