"""Grids, state history with windowed integrals, and the plant abstraction.

Shared building blocks: the uniform spatial grid on [0, D], a time-stamped
buffer of ODE-state samples supporting interpolation and moving-window
trapezoid integrals, node-sampled spatial profiles, and the callback bundle
describing a plant (dynamics f, window-dependent speed lam with declared
bounds, nominal law kappa, source g, friction c, boundary-condition kind).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, RangeError, SpeedBoundViolation

# Relative slack accepted by the speed guard; covers round-off at the band
# edges (e.g. an exactly-empty history hitting lam_max).
_SPEED_GUARD_RTOL = 1e-8

# Queries this close to the history span edges (relative to span length) are
# snapped instead of rejected.
_SPAN_RTOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on [0, D] with N cells (N + 1 nodes)."""

    D: float
    N: int
    x: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.D > 0:
            raise DomainError(f"domain length must be positive, got {self.D}")
        if self.N < 2:
            raise DomainError(f"need at least 2 cells, got {self.N}")
        object.__setattr__(self, "x", np.linspace(0.0, self.D, self.N + 1))

    @property
    def dx(self) -> float:
        return self.D / self.N


@dataclass(frozen=True)
class SpatialProfile:
    """Field values sampled on the N + 1 nodes of a grid."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.N + 1,):
            raise DomainError(
                f"profile needs {self.grid.N + 1} node values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise DomainError("profile contains non-finite values")
        object.__setattr__(self, "values", vals)

    def copy(self) -> "SpatialProfile":
        return SpatialProfile(self.values.copy(), self.grid)


class BoundaryKind(Enum):
    """How the boundary input actuates the line: node value or flux."""

    VALUE = "value"
    FLUX = "flux"


@dataclass
class PlantModel:
    """Callbacks and declared bounds defining one closed-loop plant.

    ``f(state, input)`` is the ODE right side, ``lam(z)`` the transport speed
    as a function of the moving-window integral z (bounded by the declared
    ``lam_min``/``lam_max``; every evaluation is guarded), ``kappa`` the
    nominal delay-free law, ``source_g(x, v)`` the recycle source
    (numpy-broadcastable, g(x, 0) = 0), ``friction_c(x)`` the additive
    friction coefficient. ``bc_kind`` selects value- or flux-actuation, which
    also fixes the ODE input map (value: u(0,t); flux: lam * u(0,t)).
    """

    name: str
    f: Callable[[float, float], float]
    lam: Callable[[float], float]
    lam_min: float
    lam_max: float
    kappa: Optional[Callable[[float], float]]
    source_g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz_g: float
    friction_c: Callable[[np.ndarray], np.ndarray]
    bc_kind: BoundaryKind
    g_lin: Optional[Callable[[np.ndarray], np.ndarray]] = None
    g_is_zero: bool = False
    # optional scalar fast path for source_g, used in the marching hot loop
    source_g_scalar: Optional[Callable[[float, float], float]] = None
    # set when friction_c is spatially constant; enables closed-form kernel rows
    c_const: Optional[float] = None
    # optional vectorized nominal law, used by per-step diagnostics
    kappa_vec: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self) -> None:
        if not (0.0 < self.lam_min <= self.lam_max):
            raise DomainError(
                f"speed bounds must satisfy 0 < lam_min <= lam_max, "
                f"got [{self.lam_min}, {self.lam_max}]"
            )

    def speed(self, z: float) -> float:
        """Guarded speed evaluation; aborts if the declared band is left."""
        val = float(self.lam(z))
        lo = self.lam_min * (1.0 - _SPEED_GUARD_RTOL)
        hi = self.lam_max * (1.0 + _SPEED_GUARD_RTOL)
        if not (lo <= val <= hi):
            raise SpeedBoundViolation(
                f"lam({z}) = {val} outside declared band "
                f"[{self.lam_min}, {self.lam_max}] for plant '{self.name}'"
            )
        return val

    @property
    def lam_is_constant(self) -> bool:
        return self.lam_min == self.lam_max


class HistoryBuffer:
    """Strictly increasing (time, state) samples with trapezoid integrals.

    A cumulative trapezoid table is maintained incrementally so window
    integrals are O(log n) lookups. Retention keeps everything newer than
    ``now - window - slack`` (slack defaults to two windows, so diagnostics
    can re-read recent past windows).
    """

    def __init__(self, window: float, slack: Optional[float] = None):
        if window < 0:
            raise DomainError(f"window must be nonnegative, got {window}")
        self.window = float(window)
        self.slack = 2.0 * self.window if slack is None else float(slack)
        cap = 1024
        self._t = np.empty(cap)
        self._v = np.empty(cap)
        self._c = np.empty(cap)  # cumulative trapezoid, _c[0] = 0
        self._n = 0

    @classmethod
    def from_callable(
        cls,
        h: Callable[[float], float],
        window: float,
        dt: float,
        t0: float = 0.0,
        slack: Optional[float] = None,
    ) -> "HistoryBuffer":
        """Seed a buffer by sampling ``h`` on [t0 - window, t0] at spacing dt."""
        buf = cls(window, slack=slack)
        if window == 0.0:
            buf.append(t0, float(h(t0)))
            return buf
        n = max(1, int(round(window / dt)))
        for s in np.linspace(t0 - window, t0, n + 1):
            buf.append(float(s), float(h(s)))
        return buf

    def __len__(self) -> int:
        return self._n

    @property
    def t_min(self) -> float:
        if self._n == 0:
            raise RangeError("history buffer is empty")
        return float(self._t[0])

    @property
    def t_max(self) -> float:
        if self._n == 0:
            raise RangeError("history buffer is empty")
        return float(self._t[self._n - 1])

    def append(self, t: float, value: float) -> None:
        if self._n and t <= self._t[self._n - 1]:
            raise RangeError(
                f"sample times must strictly increase: {t} after {self._t[self._n - 1]}"
            )
        if self._n == self._t.shape[0]:
            self._grow()
        i = self._n
        self._t[i] = t
        self._v[i] = value
        if i == 0:
            self._c[i] = 0.0
        else:
            self._c[i] = self._c[i - 1] + 0.5 * (self._v[i - 1] + value) * (
                t - self._t[i - 1]
            )
        self._n += 1

    def _grow(self) -> None:
        cap = 2 * self._t.shape[0]
        for name in ("_t", "_v", "_c"):
            new = np.empty(cap)
            new[: self._n] = getattr(self, name)[: self._n]
            setattr(self, name, new)

    def _clip(self, s: float) -> float:
        lo, hi = self._t[0], self._t[self._n - 1]
        span = max(hi - lo, 1.0)
        if s < lo - _SPAN_RTOL * span or s > hi + _SPAN_RTOL * span:
            raise RangeError(
                f"time {s} outside stored history span [{lo}, {hi}]"
            )
        return min(max(s, lo), hi)

    def interp(self, s: float) -> float:
        """Piecewise-linear interpolation; exact at sample times."""
        if self._n == 0:
            raise RangeError("history buffer is empty")
        s = self._clip(s)
        t = self._t[: self._n]
        k = int(np.searchsorted(t, s, side="right")) - 1
        if k >= self._n - 1:
            return float(self._v[self._n - 1])
        if k < 0:
            return float(self._v[0])
        w = (s - t[k]) / (t[k + 1] - t[k])
        return float(self._v[k] + w * (self._v[k + 1] - self._v[k]))

    def cum_at(self, s: float) -> float:
        """Cumulative trapezoid integral of the interpolant from t_min to s."""
        if self._n == 0:
            raise RangeError("history buffer is empty")
        s = self._clip(s)
        t = self._t[: self._n]
        k = int(np.searchsorted(t, s, side="right")) - 1
        if k >= self._n - 1:
            return float(self._c[self._n - 1])
        if k < 0:
            k = 0
        vs = self._v[k] + (s - t[k]) / (t[k + 1] - t[k]) * (self._v[k + 1] - self._v[k])
        return float(self._c[k] + 0.5 * (self._v[k] + vs) * (s - t[k]))

    def cum_at_many(self, s: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`cum_at` for already-clipped query times."""
        if self._n == 0:
            raise RangeError("history buffer is empty")
        if self._n == 1:
            return np.zeros_like(np.asarray(s, dtype=float))
        t = self._t[: self._n]
        v = self._v[: self._n]
        c = self._c[: self._n]
        s = np.clip(np.asarray(s, dtype=float), t[0], t[-1])
        k = np.clip(np.searchsorted(t, s, side="right") - 1, 0, self._n - 2)
        vs = v[k] + (s - t[k]) / (t[k + 1] - t[k]) * (v[k + 1] - v[k])
        return c[k] + 0.5 * (v[k] + vs) * (s - t[k])

    def window_integral(self, a: float, b: float) -> float:
        """Trapezoid integral of the interpolated history over [a, b]."""
        if a > b:
            raise RangeError(f"window integral needs a <= b, got [{a}, {b}]")
        if a == b:
            return 0.0
        return self.cum_at(b) - self.cum_at(a)

    def prune(self, now: float) -> int:
        """Drop samples older than now - window - slack; returns drop count."""
        cutoff = now - self.window - self.slack
        t = self._t[: self._n]
        k = int(np.searchsorted(t, cutoff, side="right")) - 1
        if k <= 0:
            return 0
        # keep one sample at or before the cutoff so interpolation still
        # covers [now - window, now] with margin
        for name in ("_t", "_v", "_c"):
            arr = getattr(self, name)
            arr[: self._n - k] = arr[k : self._n]
        self._n -= k
        return k


def window_integral(hist: HistoryBuffer, a: float, b: float) -> float:
    """Moving-window trapezoid integral of the stored history over [a, b]."""
    return hist.window_integral(a, b)


def interp_history(hist: HistoryBuffer, s: float) -> float:
    """Interpolated state at time s (exact at sample times)."""
    return hist.interp(s)
