"""Nominal softened bang-bang law, boundary feedback laws, safety certificate.

The nominal law is a piecewise-exponential saturating feedback whose two
branch gains are synthesized so value and slope match at the setpoint. The
boundary laws evaluate the nominal law on the marched predictor layers and
subtract the source-compensation integral; the flux variant additionally
scales by the predicted speeds and the friction kernel.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import BoundaryKind, PlantModel
from .errors import DomainError, NoPositiveRoot
from .predictor import PredictorBundle

logger = logging.getLogger(__name__)

_RESIDUAL_TOL = 1e-10


def s_min(q_star: float, alpha: float, b_max: float, q_max: float) -> float:
    """Smallest admissible setpoint slope for the saturating nominal law."""
    if not (0.0 < q_star < q_max):
        raise DomainError(
            f"setpoint must lie strictly inside (0, q_max), got {q_star}"
        )
    if alpha <= 0.0:
        raise DomainError(f"connectivity coefficient must be positive, got {alpha}")
    left = (b_max - q_star / alpha) / q_star
    right = (q_star / alpha) / (q_max - q_star)
    return max(left, right)


def _gain_residual(lam: float, drive: float, slope: float, span: float) -> float:
    return lam * drive - slope * (1.0 - math.exp(-lam * span))


def _solve_branch(drive: float, slope: float, span: float, label: str) -> float:
    """Unique positive root of lam*drive = slope*(1 - exp(-lam*span)).

    Exists iff slope exceeds drive/span strictly (the root coalesces at zero
    otherwise). Bracket grows geometrically, then plain bisection.
    """
    if drive <= 0.0:
        raise NoPositiveRoot(
            f"{label} branch is degenerate: saturation drive {drive} <= 0"
        )
    if slope * span <= drive:
        raise NoPositiveRoot(
            f"{label} branch has no positive gain: slope {slope} does not exceed "
            f"the minimum {drive / span}"
        )
    lo = 1e-8
    hi = slope * span / drive  # residual is positive from here on
    while _gain_residual(hi, drive, slope, span) <= 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise NoPositiveRoot(f"{label} branch bracket search failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _gain_residual(mid, drive, slope, span) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    root = 0.5 * (lo + hi)
    if abs(_gain_residual(root, drive, slope, span)) > _RESIDUAL_TOL:
        raise NoPositiveRoot(f"{label} branch root residual above tolerance")
    return root


def solve_gains(
    q_star: float, alpha: float, b_max: float, q_max: float, slope: float
) -> tuple[float, float]:
    """Branch gains making the saturating law C^1 at the setpoint."""
    smin = s_min(q_star, alpha, b_max, q_max)
    if slope <= smin:
        raise NoPositiveRoot(
            f"slope {slope} must strictly exceed the minimum {smin}"
        )
    lam_left = _solve_branch(b_max - q_star / alpha, slope, q_star, "left")
    lam_right = _solve_branch(q_star / alpha, slope, q_max - q_star, "right")
    return lam_left, lam_right


@dataclass(frozen=True)
class BangBangGains:
    """Parameters of the softened bang-bang law with synthesized branch gains."""

    q_star: float
    mu: float
    alpha: float
    b_max: float
    q_max: float
    slope: float
    lam_left: float
    lam_right: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.q_star <= min(self.q_max, self.mu)):
            raise DomainError(
                f"setpoint {self.q_star} outside [0, min(q_max, mu)]"
            )
        if self.b_max > min(self.q_max, self.mu) / self.alpha + 1e-12:
            raise DomainError(
                f"b_max {self.b_max} exceeds min(q_max, mu)/alpha"
            )
        if self.slope < s_min(self.q_star, self.alpha, self.b_max, self.q_max):
            raise DomainError("slope below the admissible minimum")
        if self.lam_left <= 0.0 or self.lam_right <= 0.0:
            raise DomainError("branch gains must be strictly positive")
        rl = _gain_residual(
            self.lam_left, self.b_max - self.q_star / self.alpha, self.slope, self.q_star
        )
        rr = _gain_residual(
            self.lam_right, self.q_star / self.alpha, self.slope, self.q_max - self.q_star
        )
        if abs(rl) > _RESIDUAL_TOL or abs(rr) > _RESIDUAL_TOL:
            raise DomainError(f"gain residuals too large: ({rl}, {rr})")

    @classmethod
    def synthesize(
        cls,
        q_star: float,
        alpha: float,
        b_max: float,
        q_max: float,
        mu: float,
        s_offset: float,
    ) -> "BangBangGains":
        """Build gains with slope = s_min + s_offset."""
        slope = s_min(q_star, alpha, b_max, q_max) + s_offset
        lam_left, lam_right = solve_gains(q_star, alpha, b_max, q_max, slope)
        return cls(q_star, mu, alpha, b_max, q_max, slope, lam_left, lam_right)


class ClampStats:
    """Counts how often the nominal law saw an out-of-range argument."""

    def __init__(self) -> None:
        self.count = 0

    def hit(self, q: float) -> None:
        self.count += 1
        logger.debug("bang_bang argument %s clamped to the queue range", q)


def bang_bang_left(q: float, gains: BangBangGains) -> float:
    """Low-load branch of the saturating law (smooth on all of R)."""
    base = gains.q_star / gains.alpha
    num = 1.0 - math.exp(gains.lam_left * (q - gains.q_star))
    den = 1.0 - math.exp(-gains.lam_left * gains.q_star)
    return base + (gains.b_max - base) * num / den


def bang_bang_right(q: float, gains: BangBangGains) -> float:
    """High-load branch of the saturating law (smooth on all of R)."""
    base = gains.q_star / gains.alpha
    num = 1.0 - math.exp(-gains.lam_right * (q - gains.q_star))
    den = 1.0 - math.exp(-gains.lam_right * (gains.q_max - gains.q_star))
    return base - base * num / den


def bang_bang(q: float, gains: BangBangGains, stats: ClampStats | None = None) -> float:
    """Softened bang-bang input: saturates at b_max when empty, 0 when full."""
    if q < 0.0 or q > gains.q_max:
        if stats is not None:
            stats.hit(q)
        else:
            logger.debug("bang_bang argument %s clamped to the queue range", q)
        q = min(max(q, 0.0), gains.q_max)
    if q < gains.q_star:
        return bang_bang_left(q, gains)
    if q > gains.q_star:
        return bang_bang_right(q, gains)
    return gains.q_star / gains.alpha


def bang_bang_vec(q: np.ndarray, gains: BangBangGains) -> np.ndarray:
    """Vectorized :func:`bang_bang` (clamps silently; diagnostics use)."""
    q = np.clip(np.asarray(q, dtype=float), 0.0, gains.q_max)
    base = gains.q_star / gains.alpha
    out = np.full_like(q, base)
    den_l = 1.0 - math.exp(-gains.lam_left * gains.q_star)
    den_r = 1.0 - math.exp(-gains.lam_right * (gains.q_max - gains.q_star))
    left = q < gains.q_star
    right = q > gains.q_star
    out[left] = base + (gains.b_max - base) * (
        1.0 - np.exp(gains.lam_left * (q[left] - gains.q_star))
    ) / den_l
    out[right] = base - base * (
        1.0 - np.exp(-gains.lam_right * (q[right] - gains.q_star))
    ) / den_r
    return out


def _trapz_weights(n_nodes: int, dx: float) -> np.ndarray:
    wt = np.full(n_nodes, dx)
    wt[0] = wt[-1] = 0.5 * dx
    return wt


def value_law_arrays(
    plant: PlantModel,
    grid,
    p1_end: float,
    p2: np.ndarray,
    inv: np.ndarray,
    g_lin: Callable[[np.ndarray], np.ndarray],
) -> float:
    """Value-control law evaluated on raw layer arrays."""
    wt = _trapz_weights(grid.N + 1, grid.dx)
    integ = float(np.dot(wt, np.asarray(g_lin(grid.D - grid.x)) * p2 * inv))
    return plant.kappa(p1_end) - integ


def flux_law_arrays(
    plant: PlantModel,
    grid,
    p1_end: float,
    p2: np.ndarray,
    inv: np.ndarray,
    K_col: np.ndarray,
) -> float:
    """Flux-control law evaluated on raw layer arrays."""
    wt = _trapz_weights(grid.N + 1, grid.dx)
    g_vals = np.asarray(plant.source_g(grid.D - grid.x, p2))
    integ = float(np.dot(wt, g_vals * inv / K_col))
    lam0 = 1.0 / inv[0]
    lamD = 1.0 / inv[-1]
    nominal = lam0 * plant.kappa(p1_end) / (lamD * K_col[-1])
    return nominal - lam0 * integ


def control_linear_recycle(
    plant: PlantModel,
    bundle: PredictorBundle,
    g_lin: Callable[[np.ndarray], np.ndarray],
) -> float:
    """Boundary value law for value-actuated lines with a linear recycle source."""
    if plant.bc_kind is not BoundaryKind.VALUE:
        raise DomainError("value-control law requires a value-actuated plant")
    return value_law_arrays(
        plant,
        bundle.grid,
        float(bundle.p1.values[-1]),
        bundle.p2.values,
        bundle.inv_speed.values,
        g_lin,
    )


def control_flux(plant: PlantModel, bundle: PredictorBundle) -> float:
    """Boundary flux law: speed-scaled nominal term plus kernel-weighted
    compensation of the source term."""
    if plant.bc_kind is not BoundaryKind.FLUX:
        raise DomainError("flux-control law requires a flux-actuated plant")
    return flux_law_arrays(
        plant,
        bundle.grid,
        float(bundle.p1.values[-1]),
        bundle.p2.values,
        bundle.inv_speed.values,
        bundle.kernel_col.values,
    )


def production_law_literal(
    gains: BangBangGains, bundle: PredictorBundle, rework_rate: float, proc_time: float
) -> float:
    """Direct coding of the specialized production-line law.

    Kept for cross-checking the general flux law; its compensation integral
    carries an extra processing-time factor relative to the specialization of
    the general law, which the comparison test accounts for.
    """
    grid = bundle.grid
    xs = grid.x
    p2 = bundle.p2.values
    p3 = bundle.p3.values
    K_col = bundle.kernel_col.values
    wt = _trapz_weights(grid.N + 1, grid.dx)
    nominal = (
        (1.0 + p3[-1])
        * bang_bang(bundle.p1.values[-1], gains)
        / ((1.0 + p3[0]) * K_col[-1])
    )
    integrand = rework_rate * proc_time * xs * p2 * (1.0 + p3) / (K_col * (1.0 + p3[0]))
    return nominal - float(np.dot(wt, integrand))


@dataclass(frozen=True)
class SafetyCertificate:
    """Initial-data positivity certificate for the production model."""

    lhs: float
    rhs: float
    M: float
    rho_bar: float
    u_lower: float
    satisfied: bool


def safety_check(
    A: float,
    C_max: float,
    P: float,
    tau: float,
    Q_max: float,
    D: float,
    B_max: float,
    rho0_max: float,
    Q0: float,
    u_nominal_values: Sequence[float],
) -> SafetyCertificate:
    """Evaluate the positivity certificate from the initial data.

    ``u_nominal_values`` are the nominal-control evaluations whose minimum
    bounds the control from below (setpoint feed, law at Q0, law at the
    initial end-of-line forecast).
    """
    if A <= 0.0:
        raise DomainError(f"rework rate must be positive, got {A}")
    if C_max < 0.0:
        raise DomainError(f"friction coefficient must be nonnegative, got {C_max}")
    if not (0.0 <= Q0 < Q_max):
        raise DomainError(f"initial load {Q0} outside [0, Q_max)")
    u_lower = min(float(v) for v in u_nominal_values)
    if u_lower <= 0.0:
        raise DomainError(f"minimum nominal control must be positive, got {u_lower}")
    congestion = 1.0 + tau * Q_max
    rho_bar = max(rho0_max, P * congestion**2 * B_max)
    M = rho_bar * math.exp(2.0 * A * P * D**2 * congestion)
    lhs = M / u_lower
    rhs = 2.0 / (A * D * P**2 * congestion)
    return SafetyCertificate(
        lhs=lhs, rhs=rhs, M=M, rho_bar=rho_bar, u_lower=u_lower, satisfied=lhs < rhs
    )
