"""Spike encoders, decoders, the closed-form Gaussian fusion oracle, and
accuracy metrics.

All heading statistics are circular: decoding uses population vectors over
preferred headings, Gaussian fits report the circular mean in degrees and a
variance in degrees^2 derived from the resultant length.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DistanceLevels",
    "GaussianEstimate",
    "GridMap",
    "encode_speed",
    "encode_distance",
    "decode_heading",
    "decode_map",
    "fit_gaussian",
    "optimal_posterior",
    "circular_error",
    "map_f1",
    "heading_metrics",
]

RAD = math.pi / 180.0
DEG = 180.0 / math.pi


@dataclass(frozen=True)
class DistanceLevels:
    """Three-level discretization of depth readings."""

    t1: float = 4.0 / 3.0
    t2: float = 7.0 / 3.0
    max_range: float = 4.0

    def __post_init__(self):
        if not (0.0 < self.t1 < self.t2 < self.max_range):
            raise ValueError("need 0 < t1 < t2 < max_range")

    @property
    def n_levels(self) -> int:
        return 3

    def level(self, reading: float) -> int | None:
        """Level index for a reading, or None for no-return."""
        if not math.isfinite(reading) or reading > self.max_range:
            return None
        if reading < self.t1:
            return 0
        if reading < self.t2:
            return 1
        return 2

    def representative(self, level: int) -> float:
        """Midpoint distance of a level's range."""
        bounds = [(0.0, self.t1), (self.t1, self.t2), (self.t2, self.max_range)]
        lo, hi = bounds[level]
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class GaussianEstimate:
    mu: float        # degrees in [0, 360)
    sigma2: float    # degrees^2, > 0

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be > 0")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


@dataclass
class GridMap:
    """Square occupancy grid; cells[row, col] with row along +y."""

    cells: np.ndarray
    cell_size: float = 0.2
    origin: tuple[float, float] = (-2.0, -2.0)

    @staticmethod
    def empty(n: int = 20, cell_size: float = 0.2,
              origin: tuple[float, float] = (-2.0, -2.0)) -> "GridMap":
        return GridMap(np.zeros((n, n)), cell_size, origin)

    @property
    def n(self) -> int:
        return self.cells.shape[0]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        col = int((x - self.origin[0]) / self.cell_size)
        row = int((y - self.origin[1]) / self.cell_size)
        n = self.n
        return min(max(row, 0), n - 1), min(max(col, 0), n - 1)

    def mark(self, x: float, y: float, value: float = 1.0) -> None:
        r, c = self.cell_of(x, y)
        self.cells[r, c] = min(self.cells[r, c] + value, 1.0)

    def occupied(self, threshold: float = 0.5) -> set[tuple[int, int]]:
        rows, cols = np.nonzero(self.cells >= threshold)
        return set(zip(rows.tolist(), cols.tolist()))

    def to_pgm(self, path) -> None:
        """Plain PGM (P2), 0 = free, 255 = occupied."""
        n = self.n
        vals = np.clip(np.rint(self.cells * 255), 0, 255).astype(int)
        lines = ["P2", f"{n} {n}", "255"]
        # write top row first (max y)
        for r in range(n - 1, -1, -1):
            lines.append(" ".join(str(v) for v in vals[r]))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def sidecar_json(self) -> str:
        return json.dumps(
            {"cell_size": self.cell_size, "origin": list(self.origin),
             "n": self.n},
            sort_keys=True,
        )


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------

def encode_speed(reported_omega: float, omega_max: float = 60.0,
                 rate_max: float = 12.0) -> tuple[float, float]:
    """Angular speed to (cw_rate, ccw_rate) in Hz; positive omega is CCW.

    The default rate_max is matched to the attractor's one-bin-per-spike
    transition gain: at 5 deg/bin, omega_max/resolution = 12 Hz.
    """
    rate = min(abs(reported_omega) / omega_max, 1.0) * rate_max
    if reported_omega > 0:
        return 0.0, rate
    if reported_omega < 0:
        return rate, 0.0
    return 0.0, 0.0


def encode_distance(reading: float, heading_bin: int, levels: DistanceLevels,
                    n_bins: int = 72) -> tuple[set[tuple[int, int]], set[tuple[int, int]]]:
    """Reading to (sensory active set, inverse active set) of (bin, level).

    No-return yields an empty sensory set and all levels in the inverse set.
    """
    if not (0 <= heading_bin < n_bins):
        raise ValueError(f"heading_bin {heading_bin} out of range")
    lvl = levels.level(reading)
    all_levels = set(range(levels.n_levels))
    if lvl is None:
        return set(), {(heading_bin, l) for l in all_levels}
    return {(heading_bin, lvl)}, {(heading_bin, l) for l in all_levels - {lvl}}


# ---------------------------------------------------------------------------
# decoders
# ---------------------------------------------------------------------------

def _population_vector(counts: np.ndarray, headings_deg: np.ndarray) -> tuple[float, float]:
    """(mean degrees, resultant length R); R==0 means undecodable."""
    total = counts.sum()
    if total == 0:
        return float("nan"), 0.0
    ang = headings_deg * RAD
    x = float(np.dot(counts, np.cos(ang)))
    y = float(np.dot(counts, np.sin(ang)))
    r = math.hypot(x, y) / total
    if r < 1e-9:
        return float("nan"), 0.0
    return math.degrees(math.atan2(y, x)) % 360.0, r


def decode_heading(counts: np.ndarray, headings_deg: np.ndarray) -> float | None:
    """Circular population-vector mean of spike counts; None if undecodable."""
    mu, r = _population_vector(np.asarray(counts, dtype=float),
                               np.asarray(headings_deg, dtype=float))
    if r == 0.0:
        return None
    return mu


def fit_gaussian(counts: np.ndarray, headings_deg: np.ndarray,
                 max_sigma_deg: float = 45.0) -> GaussianEstimate | None:
    """Circular-Gaussian fit of a spike-count profile; None if degenerate.

    Requires spikes in at least two distinct bins and a concentration
    tight enough to be meaningful (sigma <= max_sigma_deg).
    """
    counts = np.asarray(counts, dtype=float)
    if counts.sum() < 2 or np.count_nonzero(counts) < 2:
        return None
    mu, r = _population_vector(counts, np.asarray(headings_deg, dtype=float))
    if r <= 0.0 or r >= 1.0:
        return None
    sigma2 = -2.0 * math.log(r) * DEG * DEG
    if math.sqrt(sigma2) > max_sigma_deg:
        return None
    return GaussianEstimate(mu=mu, sigma2=sigma2)


def decode_map(strengths: np.ndarray, levels: DistanceLevels,
               robot_position: tuple[float, float],
               resolution_deg: float = 5.0, threshold: float = 0.5,
               grid: GridMap | None = None) -> GridMap:
    """Project above-threshold (bin, level) map strengths into an occupancy grid.

    ``strengths`` has shape (n_bins, n_levels). Each above-threshold entry
    marks the cell at robot_position + representative_distance * heading
    unit vector, clipped to the grid extent. Pure function of its inputs.
    """
    strengths = np.asarray(strengths, dtype=float)
    n_bins, n_levels = strengths.shape
    if grid is None:
        grid = GridMap.empty()
    lo_x = grid.origin[0] + 1e-6
    lo_y = grid.origin[1] + 1e-6
    hi_x = grid.origin[0] + grid.n * grid.cell_size - 1e-6
    hi_y = grid.origin[1] + grid.n * grid.cell_size - 1e-6
    for b in range(n_bins):
        for l in range(n_levels):
            if strengths[b, l] < threshold:
                continue
            ang = b * resolution_deg * RAD
            r = levels.representative(l)
            x = robot_position[0] + r * math.cos(ang)
            y = robot_position[1] + r * math.sin(ang)
            grid.mark(min(max(x, lo_x), hi_x), min(max(y, lo_y), hi_y))
    return grid


# ---------------------------------------------------------------------------
# Gaussian product oracle
# ---------------------------------------------------------------------------

def circular_diff(a: float, b: float) -> float:
    """Signed circular difference a-b in (-180, 180]."""
    d = (a - b) % 360.0
    if d > 180.0:
        d -= 360.0
    return d


def circular_error(a: float, b: float) -> float:
    return abs(circular_diff(a, b))


def optimal_posterior(g1: GaussianEstimate, g2: GaussianEstimate) -> GaussianEstimate:
    """Product of two heading Gaussians, on locally unwrapped angles.

    Requires the circular separation of the means to be below 90 degrees;
    fusing cues on opposite sides of the circle is ambiguous.
    """
    sep = circular_error(g1.mu, g2.mu)
    if sep >= 90.0:
        raise ValueError(f"cue separation {sep:.1f} deg >= 90, fusion ambiguous")
    mu2 = g1.mu + circular_diff(g2.mu, g1.mu)  # unwrap g2 next to g1
    s1, s2 = g1.sigma2, g2.sigma2
    mu3 = (s2 * g1.mu + s1 * mu2) / (s1 + s2)
    sigma3 = 1.0 / (1.0 / s1 + 1.0 / s2)
    return GaussianEstimate(mu=mu3 % 360.0, sigma2=sigma3)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def heading_metrics(true_series: np.ndarray, decoded_series: np.ndarray) -> dict:
    """Mean/STD of the circular heading error over paired series."""
    errs = np.array([
        circular_error(t, d)
        for t, d in zip(true_series, decoded_series)
        if not (math.isnan(d) or math.isnan(t))
    ])
    if len(errs) == 0:
        return {"mean_error_deg": float("nan"), "std_error_deg": float("nan"),
                "n_points": 0}
    return {
        "mean_error_deg": float(errs.mean()),
        "std_error_deg": float(errs.std()),
        "n_points": int(len(errs)),
    }


def rasterize_segments(segments, grid: GridMap) -> set[tuple[int, int]]:
    """Cells traversed by the segments, sampled at quarter-cell spacing."""
    cells: set[tuple[int, int]] = set()
    step = grid.cell_size / 4.0
    for (x1, y1, x2, y2) in segments:
        length = math.hypot(x2 - x1, y2 - y1)
        n = max(int(length / step), 1)
        for i in range(n + 1):
            t = i / n
            cells.add(grid.cell_of(x1 + t * (x2 - x1), y1 + t * (y2 - y1)))
    return cells


def map_f1(grid: GridMap, segments, threshold: float = 0.5) -> dict:
    """F1 of predicted occupied cells vs rasterized true walls.

    Matching is tolerant to one cell (Chebyshev distance <= 1) in both
    directions: a predicted cell is a true positive if a wall cell lies
    within one cell of it, and a wall cell counts as found if a predicted
    cell lies within one cell of it.
    """
    true_cells = rasterize_segments(segments, grid)
    pred_cells = grid.occupied(threshold)

    def near(cell, others):
        r, c = cell
        return any(abs(r - r2) <= 1 and abs(c - c2) <= 1 for r2, c2 in others)

    if not pred_cells or not true_cells:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0,
                "n_pred": len(pred_cells), "n_true": len(true_cells)}
    tp_pred = sum(1 for p in pred_cells if near(p, true_cells))
    found = sum(1 for t in true_cells if near(t, pred_cells))
    precision = tp_pred / len(pred_cells)
    recall = found / len(true_cells)
    f1 = 0.0 if precision + recall == 0 else \
        2 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1,
            "n_pred": len(pred_cells), "n_true": len(true_cells)}
