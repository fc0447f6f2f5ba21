"""First-level balance analysis: percent-balanced metric and total-stop detection.

The per-sample score is 1 below the horizontal tolerance, 0 at the ground
magnitude, and linearly interpolated between; the window percentage is the
rounded mean. Both anchors of the metric hold exactly: an all-zero window
scores 100, a window pinned at the ground magnitude scores 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BalanceError(ValueError):
    pass


@dataclass(frozen=True)
class BalanceConfig:
    tolerance: float = 100.0        # tilt magnitude treated as horizontal, counts
    ground_magnitude: float = 1000.0  # tilt magnitude of board-on-ground contact
    stop_sigma: float = 5.0         # per-axis stdev below which the board is stopped
    result_period_s: float = 1.0

    def __post_init__(self):
        if not 0 < self.tolerance < self.ground_magnitude:
            raise BalanceError(
                f"need 0 < tolerance < ground_magnitude, got {self.tolerance}, {self.ground_magnitude}"
            )
        if self.stop_sigma <= 0:
            raise BalanceError("stop_sigma must be positive")


@dataclass(frozen=True)
class BalanceResult:
    t_s: float
    percent: int
    stopped: bool


def balance_percent(xy, cfg: BalanceConfig | None = None) -> int:
    """Percentage of the window spent in a balanced position, 0..100."""
    cfg = cfg or BalanceConfig()
    arr = np.asarray(xy, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise BalanceError(f"expected a non-empty (N, 2) sample window, got shape {arr.shape}")
    m = np.hypot(arr[:, 0], arr[:, 1])
    score = (cfg.ground_magnitude - m) / (cfg.ground_magnitude - cfg.tolerance)
    score = np.clip(score, 0.0, 1.0)
    mean = float(np.mean(score))
    return int(np.sign(mean) * np.floor(abs(100.0 * mean) + 0.5))


def detect_stop(xy, cfg: BalanceConfig | None = None) -> bool:
    """True iff both axes are still: per-axis stdev below stop_sigma."""
    cfg = cfg or BalanceConfig()
    arr = np.asarray(xy, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise BalanceError(f"need at least two (x, y) samples, got shape {arr.shape}")
    return bool(np.all(np.std(arr, axis=0) < cfg.stop_sigma))
