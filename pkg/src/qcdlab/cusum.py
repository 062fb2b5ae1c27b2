"""CUSUM detector: reflected random walk with a threshold stopping rule."""
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class DetectorState:
    xi: float = 0.0
    n: int = 0
    H: float = 1.0
    stopped: bool = False
    tau_s: Optional[int] = None


@dataclass(frozen=True)
class CostSpec:
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")


def cusum_update(xi: float, f: float) -> float:
    return max(0.0, xi + f)


def run_detector(observations, F, H: float) -> DetectorState:
    """Run CUSUM on Y_0, Y_1, ... and stop at the first n with Xi_n >= H.

    Xi_0 = 0 and Xi_n is driven by F(Y_n) for n >= 1, so Y_0 never enters
    the statistic.  ``F`` may be a Statistic or a plain callable; if the
    stream is exhausted first the returned state has ``stopped=False``.
    """
    if not H > 0:
        raise ValueError("threshold must be positive")
    obs = np.asarray(observations)
    if obs.shape[0] == 0:
        raise ValueError("empty observation stream")
    f = np.asarray(F(obs[1:]), dtype=float)
    state = DetectorState(H=H)
    for n, fn in enumerate(f, start=1):
        state.xi = cusum_update(state.xi, fn)
        state.n = n
        if state.xi >= H:
            state.stopped = True
            state.tau_s = n
            break
    return state


def run_increments(increments, H: float) -> DetectorState:
    """Same as run_detector but fed F(Y_1), F(Y_2), ... directly."""
    return run_detector(np.concatenate([[0.0], np.asarray(increments, dtype=float)]), lambda x: x, H)


def pathwise_loss(tau_s, tau_a, kappa):
    """(tau_s - tau_a)_+ + kappa (tau_s - tau_a)_-; vectorises over arrays."""
    d = np.asarray(tau_s) - np.asarray(tau_a)
    out = np.maximum(d, 0) + kappa * np.maximum(-d, 0)
    return out if out.ndim else float(out)
