"""Benchmark signal generation: coefficient trajectories, force traces, noise,
and the ploughing filter that yields the corrected samples."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .mill import (
    X5CRNI18_10,
    CoefficientSet,
    EngagementSample,
    ProcessSpec,
    ToolSpec,
    disk_thickness,
    samples_per_revolution,
    spindle_speed,
    summed_force,
)

CASES = ("static", "ascending", "alternating")
CSV_HEADER = ["index", "angle", "h_sum", "Ft_clean", "Fr_clean",
              "Ft_noisy", "Fr_noisy", "kt", "kr", "mt", "mr"]

# Gives ~1150 corrected samples with the default tool and process.
DEFAULT_REVS = 19
PLOUGHING_THRESHOLD = 0.01  # mm


@dataclass(frozen=True)
class TrajectoryCase:
    kind: str = "static"
    relative_amplitude: float = 0.20
    periods: float = 2.0

    def __post_init__(self):
        if self.kind not in CASES:
            raise ValueError(f"unknown trajectory case {self.kind!r}; expected one of {CASES}")
        if not 0.0 < self.relative_amplitude < 1.0:
            raise ValueError("relative_amplitude must lie in (0, 1)")
        if self.periods <= 0:
            raise ValueError("periods must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    snr: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be positive")


@dataclass(frozen=True)
class SignalSample:
    index: int
    spindle_angle: float
    h_sum: float
    F_t_clean: float
    F_r_clean: float
    F_t_noisy: float
    F_r_noisy: float
    true_coeffs: CoefficientSet


@dataclass(frozen=True)
class SignalSeries:
    """Column-wise storage of a simulated run.

    ``coeffs`` columns are ordered ``(k_t, k_r, m_t, m_r)``, the same order as
    the parameter block of the filter state.
    """

    angle: np.ndarray
    h: np.ndarray  # (n, tooth_count * disk_count) per-disk chip thickness
    b_disk: float
    ft_clean: np.ndarray
    fr_clean: np.ndarray
    ft_noisy: np.ndarray
    fr_noisy: np.ndarray
    coeffs: np.ndarray  # (n, 4)

    def __len__(self):
        return len(self.angle)

    @property
    def index(self) -> np.ndarray:
        return np.arange(len(self))

    @property
    def h_sum(self) -> np.ndarray:
        return self.h.sum(axis=1)

    def __getitem__(self, i: int) -> SignalSample:
        kt, kr, mt, mr = self.coeffs[i]
        return SignalSample(
            index=int(self.index[i]),
            spindle_angle=float(self.angle[i]),
            h_sum=float(self.h_sum[i]),
            F_t_clean=float(self.ft_clean[i]),
            F_r_clean=float(self.fr_clean[i]),
            F_t_noisy=float(self.ft_noisy[i]),
            F_r_noisy=float(self.fr_noisy[i]),
            true_coeffs=CoefficientSet(k_t=kt, m_t=mt, k_r=kr, m_r=mr),
        )

    def engagement(self, i: int) -> EngagementSample:
        return EngagementSample(float(self.angle[i]), self.h[i], self.b_disk)

    def take(self, mask_or_idx) -> "SignalSeries":
        return replace(
            self,
            angle=self.angle[mask_or_idx],
            h=self.h[mask_or_idx],
            ft_clean=self.ft_clean[mask_or_idx],
            fr_clean=self.fr_clean[mask_or_idx],
            ft_noisy=self.ft_noisy[mask_or_idx],
            fr_noisy=self.fr_noisy[mask_or_idx],
            coeffs=self.coeffs[mask_or_idx],
        )

    @property
    def noise_std(self) -> tuple[float, float]:
        """Per-channel std of the noise actually drawn (diagnostic only)."""
        return (float(np.std(self.ft_noisy - self.ft_clean)),
                float(np.std(self.fr_noisy - self.fr_clean)))


def coefficient_at(case: TrajectoryCase, base: CoefficientSet, t: float) -> CoefficientSet:
    if not 0.0 <= t <= 1.0:
        raise ValueError("normalised time must lie in [0, 1]")
    if case.kind == "static":
        return base
    if case.kind == "ascending":
        factor = 1.0 + case.relative_amplitude * t
    else:
        factor = 1.0 + case.relative_amplitude * math.sin(2.0 * math.pi * case.periods * t)
    return base.scaled(factor)


def _trajectory(case: TrajectoryCase, base: CoefficientSet, n: int) -> np.ndarray:
    last = max(n - 1, 1)
    rows = []
    for i in range(n):
        c = coefficient_at(case, base, i / last)
        rows.append((c.k_t, c.k_r, c.m_t, c.m_r))
    return np.array(rows, dtype=float)


def simulate_run(
    tool: ToolSpec,
    process: ProcessSpec,
    case: TrajectoryCase,
    n_rev: int = DEFAULT_REVS,
    base: CoefficientSet = X5CRNI18_10,
) -> SignalSeries:
    """Noise-free force traces for ``n_rev`` revolutions, one sample per tick."""
    if n_rev < 1:
        raise ValueError("n_rev must be >= 1")
    n = n_rev * samples_per_revolution(tool, process)
    omega = 2.0 * math.pi * spindle_speed(tool, process)
    angle = omega * np.arange(n) / process.sample_rate
    h = disk_thickness(tool, process, angle)
    b = process.depth_of_cut / tool.disk_count
    coeffs = _trajectory(case, base, n)
    # per-sample loop keeps the sum identical to mill.total_force
    ft = np.array([summed_force(coeffs[i, 0], coeffs[i, 2], b, h[i]) for i in range(n)])
    fr = np.array([summed_force(coeffs[i, 1], coeffs[i, 3], b, h[i]) for i in range(n)])
    return SignalSeries(angle=angle, h=h, b_disk=b, ft_clean=ft, fr_clean=fr,
                        ft_noisy=ft.copy(), fr_noisy=fr.copy(), coeffs=coeffs)


def rms(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x)))


def noise_sigma(series: SignalSeries, snr: float) -> tuple[float, float]:
    """Noise std per channel: rms of the clean signal divided by the S/N."""
    return rms(series.ft_clean) / snr, rms(series.fr_clean) / snr


def add_noise(series: SignalSeries, spec: NoiseSpec) -> SignalSeries:
    if len(series) == 0:
        raise ValueError("cannot add noise to an empty series")
    sigma_t, sigma_r = noise_sigma(series, spec.snr)
    rng = np.random.default_rng(spec.seed)
    eps_t = rng.normal(0.0, 1.0, len(series)) * sigma_t
    eps_r = rng.normal(0.0, 1.0, len(series)) * sigma_r
    return replace(series, ft_noisy=series.ft_clean + eps_t,
                   fr_noisy=series.fr_clean + eps_r)


def ploughing_filter(series: SignalSeries, h_th: float = PLOUGHING_THRESHOLD) -> SignalSeries:
    """Keep the samples whose summed chip thickness reaches ``h_th``."""
    return series.take(series.h_sum >= h_th)


def write_signal_csv(series: SignalSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        h_sum = series.h_sum
        for i in range(len(series)):
            writer.writerow([
                i,
                repr(float(series.angle[i])),
                repr(float(h_sum[i])),
                repr(float(series.ft_clean[i])),
                repr(float(series.fr_clean[i])),
                repr(float(series.ft_noisy[i])),
                repr(float(series.fr_noisy[i])),
                *(repr(float(v)) for v in series.coeffs[i]),
            ])


def read_signal_csv(path, tool: ToolSpec, process: ProcessSpec) -> SignalSeries:
    """Load a signal CSV and rebuild per-disk engagement from the angles."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    if rows.size == 0:
        raise ValueError(f"{path}: no samples")
    angle = rows[:, 1]
    return SignalSeries(
        angle=angle,
        h=disk_thickness(tool, process, angle),
        b_disk=process.depth_of_cut / tool.disk_count,
        ft_clean=rows[:, 3], fr_clean=rows[:, 4],
        ft_noisy=rows[:, 5], fr_noisy=rows[:, 6],
        coeffs=rows[:, 7:11],
    )
