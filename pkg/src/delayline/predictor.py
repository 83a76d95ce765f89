"""Multi-layer predictor marching, transport kernels, and characteristics.

The coupled layer system is solved by forward spatial marching on the node
grid: node j is computed from nodes 0..j-1 with trapezoid quadrature, and the
implicit diagonal contribution at node j is resolved by a damped-free Picard
iteration (tolerance 1e-12 in max norm, 50-iteration cap). The indicator
weight in the window-integral layer is never sampled; its support is turned
into exact clipped integration limits on both the history and the spatial
integrals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import BoundaryKind, Grid, HistoryBuffer, PlantModel, SpatialProfile
from .errors import (
    DelaylineError,
    DomainError,
    NonConvergence,
    NotYetReachable,
    RangeError,
)

FP_TOL = 1e-12
FP_MAX_ITER = 50


@dataclass(frozen=True)
class PredictorBundle:
    """The coupled predictor layers at one time instant.

    ``p1`` forecasts the ODE state along characteristics, ``p2`` the
    effective boundary value, ``p3`` the moving-window integral seen at the
    prediction instant, ``sigma`` the prediction instants themselves.
    ``kernel_col`` holds the friction kernel column K(D, y) on the nodes and
    ``inv_speed`` caches 1/lam(p3) exactly as used during the march, so
    control laws and transforms stay quadrature-consistent with the layers.
    """

    t: float
    p1: SpatialProfile
    p2: SpatialProfile
    p3: SpatialProfile
    sigma: SpatialProfile
    kernel_col: SpatialProfile
    inv_speed: SpatialProfile

    @property
    def grid(self) -> Grid:
        return self.p1.grid


def _clipped_prefix_scalar(
    xs: np.ndarray,
    sig: np.ndarray,
    G: np.ndarray,
    cumG: np.ndarray,
    j: int,
    a: float,
    sig_j: float,
    G_j: float,
) -> float:
    """Integral of the piecewise-linear integrand G from 0 to y*(a).

    y* is where the strictly increasing sigma profile crosses ``a``; the
    partial cell uses the trapezoid of the linearly interpolated integrand.
    Node j is still being iterated, so its sigma/G come in as scalars.
    """
    if a <= sig[0]:
        return 0.0
    if a >= sig[j - 1]:
        k = j - 1
        right_sig, right_G = sig_j, G_j
    else:
        k = int(np.searchsorted(sig[:j], a, side="right")) - 1
        right_sig, right_G = sig[k + 1], G[k + 1]
    frac = (a - sig[k]) / (right_sig - sig[k])
    G_at = G[k] + frac * (right_G - G[k])
    dx = xs[1] - xs[0]
    return float(cumG[k] + 0.5 * (G[k] + G_at) * frac * dx)


def _clipped_prefix_vec(
    xs: np.ndarray,
    sig: np.ndarray,
    G: np.ndarray,
    cumG: np.ndarray,
    a: np.ndarray,
) -> np.ndarray:
    """Vectorized variant of :func:`_clipped_prefix_scalar` on full arrays."""
    n = sig.shape[0]
    dx = xs[1] - xs[0]
    k = np.clip(np.searchsorted(sig, a, side="right") - 1, 0, n - 2)
    frac = (a - sig[k]) / (sig[k + 1] - sig[k])
    G_at = G[k] + frac * (G[k + 1] - G[k])
    out = cumG[k] + 0.5 * (G[k] + G_at) * frac * dx
    return np.where(a <= sig[0], 0.0, out)


class _March:
    """Forward spatial marching of the coupled predictor layers.

    ``backward=True`` switches the boundary-value layer to its algebraic
    target-side form (the field is then the target state w instead of the
    actuator state u); everything else is shared, which is what makes the
    forward and backward layers agree to iteration tolerance on consistent
    inputs.
    """

    def __init__(
        self,
        plant: PlantModel,
        grid: Grid,
        X_now: float,
        hist: HistoryBuffer,
        field_values: np.ndarray,
        t: float,
        backward: bool = False,
    ):
        self.plant = plant
        self.grid = grid
        self.X = float(X_now)
        self.hist = hist
        self.t = float(t)
        self.backward = backward
        self.tau = hist.window
        N = grid.N
        self.field = np.asarray(field_values, dtype=float).copy()
        if self.field.shape != (N + 1,):
            raise DomainError("field length does not match the grid")
        self.xs = grid.x
        self.dx = grid.dx
        self.flux = plant.bc_kind is BoundaryKind.FLUX
        for name in ("p1", "p2", "p3", "sig", "invlam", "F", "G", "cumF", "cumInv", "cumG"):
            setattr(self, name, np.empty(N + 1))
        # friction value at zero offset, used by the diagonal kernel cell
        self._c0 = float(np.asarray(plant.friction_c(np.array([0.0])))[0])
        self._hist_cum_t = hist.cum_at(self.t) if len(hist) else 0.0
        self._node0()

    # -- shared pieces -----------------------------------------------------

    def _eff_input(self, p2_val: float, invlam_val: float) -> float:
        return p2_val / invlam_val if self.flux else p2_val

    def _g_scalar(self, x: float, v: float) -> float:
        fast = self.plant.source_g_scalar
        if fast is not None:
            return fast(x, v)
        return float(np.asarray(self.plant.source_g(np.array([x]), np.array([v])))[0])

    def _invlam_relaxed(self, z: float) -> float:
        """Clamped speed inverse for scratch iterates; the converged value is
        re-evaluated through the raising guard."""
        val = float(self.plant.lam(z))
        lo = self.plant.lam_min * (1.0 - 1e-6)
        hi = self.plant.lam_max * (1.0 + 1e-6)
        return 1.0 / min(max(val, lo), hi)

    def _hist_part(self, a: float) -> float:
        if a >= self.t:
            return 0.0
        return self._hist_cum_t - self.hist.cum_at(a)

    def _node0(self) -> None:
        t, tau = self.t, self.tau
        p3_0 = self.hist.window_integral(t - tau, t)
        lam0 = self.plant.speed(p3_0)
        self.p3[0] = p3_0
        self.invlam[0] = 1.0 / lam0
        self.p1[0] = self.X
        self.sig[0] = t
        if self.backward:
            kap = self.plant.kappa(self.X)
            val = self.field[0] + kap
            self.p2[0] = val * self.invlam[0] if self.flux else val
        else:
            self.p2[0] = self.field[0]  # K(0,0) = 1
        eff = self._eff_input(self.p2[0], self.invlam[0])
        self.F[0] = self.plant.f(self.p1[0], eff) * self.invlam[0]
        self.G[0] = self.p1[0] * self.invlam[0]
        self.cumF[0] = 0.0
        self.cumInv[0] = 0.0
        self.cumG[0] = 0.0

    def _prepare_row(self, j: int) -> None:
        """One pass over finalized nodes: kernel suffix sums and source row.

        H(x_j, y_k) factorizes as exp(S_k) * exp(s_last) where S_k covers
        [x_k, x_{j-1}] over finalized nodes and s_last the last (implicit)
        cell, so the Picard iteration only updates scalar diagonal terms.
        """
        xj = self.xs[j]
        c_const = self.plant.c_const
        if c_const is not None:
            # constant friction: the suffix integral telescopes through sigma
            S = c_const * (self.sig[j - 1] - self.sig[:j])
            self._row_m_last = c_const * self.invlam[j - 1]
        else:
            m = np.asarray(self.plant.friction_c(xj - self.xs[:j])) * self.invlam[:j]
            self._row_m_last = float(m[j - 1])
            if j == 1:
                S = np.zeros(1)
            else:
                cells = 0.5 * self.dx * (m[:-1] + m[1:])
                S = np.concatenate((np.cumsum(cells[::-1])[::-1], [0.0]))
        self._row_S0 = float(S[0])
        if self.plant.g_is_zero:
            self._row_base = 0.0
            return
        J = (
            np.asarray(self.plant.source_g(xj - self.xs[:j], self.p2[:j]))
            * self.invlam[:j]
        )
        wt = np.full(j, self.dx)
        wt[0] = 0.5 * self.dx
        self._row_base = float(np.dot(wt, np.exp(S) * J))

    def _resolve_node(self, j: int) -> None:
        plant, t, tau, dx = self.plant, self.t, self.tau, self.dx
        backward = self.backward
        if not backward:
            self._prepare_row(j)
            row_S0, row_base = self._row_S0, self._row_base
            m_last, c0 = self._row_m_last, self._c0
            u_j = self.field[j]
            g_fast = plant.source_g_scalar
        else:
            w_j = self.field[j]
        flux = self.flux
        f, kappa = plant.f, plant.kappa
        speed_inv = self._invlam_relaxed
        X = self.X
        exp = math.exp
        # seed with the previous node, linearly extrapolated when possible
        if j >= 2:
            p1_g = 2.0 * self.p1[j - 1] - self.p1[j - 2]
            p2_g = 2.0 * self.p2[j - 1] - self.p2[j - 2]
            p3_g = 2.0 * self.p3[j - 1] - self.p3[j - 2]
            sig_g = 2.0 * self.sig[j - 1] - self.sig[j - 2]
        else:
            p1_g, p2_g, p3_g = self.p1[j - 1], self.p2[j - 1], self.p3[j - 1]
            sig_g = self.sig[j - 1]
        cumF_prev = self.cumF[j - 1]
        cumInv_prev = self.cumInv[j - 1]
        cumG_prev = self.cumG[j - 1]
        F_prev, G_prev = self.F[j - 1], self.G[j - 1]
        inv_prev = self.invlam[j - 1]
        hist_cum_t = self._hist_cum_t
        hist_cum_at = self.hist.cum_at
        for _ in range(FP_MAX_ITER):
            invlam_j = speed_inv(p3_g)
            sig_new = t + cumInv_prev + 0.5 * dx * (inv_prev + invlam_j)
            a = sig_new - tau
            G_j = p1_g * invlam_j
            full = cumG_prev + 0.5 * dx * (G_prev + G_j)
            hist_part = hist_cum_t - hist_cum_at(a) if a < t else 0.0
            p3_new = hist_part + full - _clipped_prefix_scalar(
                self.xs, self.sig, self.G, self.cumG, j, a, sig_new, G_j
            )
            if backward:
                val = w_j + kappa(p1_g)
                p2_new = val * invlam_j if flux else val
            else:
                s_last = 0.5 * dx * (m_last + c0 * invlam_j)
                if g_fast is not None:
                    diag = 0.5 * dx * g_fast(0.0, p2_g) * invlam_j
                else:
                    diag = 0.5 * dx * self._g_scalar(0.0, p2_g) * invlam_j
                p2_new = exp(row_S0 + s_last) * u_j + exp(s_last) * row_base + diag
            eff = p2_new / invlam_j if flux else p2_new
            F_j = f(p1_g, eff) * invlam_j
            p1_new = X + cumF_prev + 0.5 * dx * (F_prev + F_j)
            delta = max(
                abs(p1_new - p1_g),
                abs(p2_new - p2_g),
                abs(p3_new - p3_g),
                abs(sig_new - sig_g),
            )
            p1_g, p2_g, p3_g, sig_g = p1_new, p2_new, p3_new, sig_new
            if delta <= FP_TOL:
                break
        else:
            raise NonConvergence(
                f"predictor cell iteration at node {j} exceeded {FP_MAX_ITER} iterations"
            )
        self.p1[j], self.p2[j], self.p3[j] = p1_g, p2_g, p3_g
        invlam_j = 1.0 / plant.speed(p3_g)
        self.invlam[j] = invlam_j
        eff = self._eff_input(p2_g, invlam_j)
        self.F[j] = plant.f(p1_g, eff) * invlam_j
        self.G[j] = p1_g * invlam_j
        self.cumF[j] = cumF_prev + 0.5 * dx * (F_prev + self.F[j])
        self.cumInv[j] = cumInv_prev + 0.5 * dx * (inv_prev + invlam_j)
        self.cumG[j] = cumG_prev + 0.5 * dx * (G_prev + self.G[j])
        self.sig[j] = t + self.cumInv[j]

    def _fast_state_node(self, j: int, inv: float) -> None:
        """Scalar state recurrence at node j for the constant-speed path.

        Must stay operation-for-operation identical to the inlined loop in
        :meth:`_run_fast_constant_speed` (used for boundary re-resolution).
        """
        plant, dx = self.plant, self.dx
        f, kappa = plant.f, plant.kappa
        flux, backward = self.flux, self.backward
        half_dx = 0.5 * dx
        lam = 1.0 / inv
        p1_g = (
            2.0 * self.p1[j - 1] - self.p1[j - 2] if j >= 2 else self.p1[j - 1]
        )
        base = self.X + self.cumF[j - 1] + half_dx * self.F[j - 1]
        for _ in range(FP_MAX_ITER):
            if backward:
                val = self.field[j] + kappa(p1_g)
                p2_j = val * inv if flux else val
            else:
                p2_j = self.p2[j]
            eff = p2_j * lam if flux else p2_j
            p1_new = base + half_dx * f(p1_g, eff) * inv
            if abs(p1_new - p1_g) <= FP_TOL:
                p1_g = p1_new
                break
            p1_g = p1_new
        else:
            raise NonConvergence(
                f"predictor cell iteration at node {j} exceeded {FP_MAX_ITER} iterations"
            )
        self.p1[j] = p1_g
        if backward:
            val = self.field[j] + kappa(p1_g)
            self.p2[j] = val * inv if flux else val
        eff = self.p2[j] * lam if flux else self.p2[j]
        self.F[j] = f(p1_g, eff) * inv
        self.cumF[j] = self.cumF[j - 1] + half_dx * (self.F[j - 1] + self.F[j])
        self.G[j] = p1_g * inv
        self.cumG[j] = self.cumG[j - 1] + half_dx * (self.G[j - 1] + self.G[j])

    def _fast_window_node(self, j: int) -> None:
        t, tau = self.t, self.tau
        a = self.sig[j] - tau
        hist_part = self._hist_cum_t - self.hist.cum_at(a) if a < t else 0.0
        ctilde = _clipped_prefix_scalar(
            self.xs, self.sig, self.G, self.cumG, j, a, self.sig[j], self.G[j]
        )
        self.p3[j] = hist_part + self.cumG[j] - ctilde

    def _run_fast_constant_speed(self) -> None:
        """Vectorized march for constant speed with no recycle source.

        Reproduces the node-by-node discretization exactly: with lam fixed
        the layers decouple except for the scalar state recurrence.
        """
        N = self.grid.N
        plant, t, tau, dx = self.plant, self.t, self.tau, self.dx
        inv = 1.0 / plant.speed(self.p3[0])
        self._fast_inv = inv
        self.invlam[:] = inv
        self.sig[:] = t + self.xs * inv
        self.cumInv[:] = self.xs * inv
        if plant.c_const is not None:
            cumc = plant.c_const * self.xs
        else:
            cvals = np.asarray(plant.friction_c(self.xs), dtype=float)
            cumc = np.concatenate(
                ([0.0], np.cumsum(0.5 * dx * (cvals[:-1] + cvals[1:])))
            )
        self._fast_kdiag = np.exp(inv * cumc)
        if not self.backward:
            self.p2[:] = self._fast_kdiag * self.field
        # inlined state recurrence: this loop dominates constant-speed runs
        f, kappa = plant.f, plant.kappa
        flux, backward, X = self.flux, self.backward, self.X
        p1, p2, F, G = self.p1, self.p2, self.F, self.G
        cumF, cumG, field = self.cumF, self.cumG, self.field
        half_dx = 0.5 * dx
        lam = 1.0 / inv
        for j in range(1, N + 1):
            p1_g = 2.0 * p1[j - 1] - p1[j - 2] if j >= 2 else p1[j - 1]
            base = X + cumF[j - 1] + half_dx * F[j - 1]
            for _ in range(FP_MAX_ITER):
                if backward:
                    val = field[j] + kappa(p1_g)
                    p2_j = val * inv if flux else val
                else:
                    p2_j = p2[j]
                eff = p2_j * lam if flux else p2_j
                p1_new = base + half_dx * f(p1_g, eff) * inv
                if abs(p1_new - p1_g) <= FP_TOL:
                    p1_g = p1_new
                    break
                p1_g = p1_new
            else:
                raise NonConvergence(
                    f"predictor cell iteration at node {j} exceeded {FP_MAX_ITER} iterations"
                )
            p1[j] = p1_g
            if backward:
                val = field[j] + kappa(p1_g)
                p2[j] = val * inv if flux else val
            eff = p2[j] * lam if flux else p2[j]
            F[j] = f(p1_g, eff) * inv
            cumF[j] = cumF[j - 1] + half_dx * (F[j - 1] + F[j])
            G[j] = p1_g * inv
            cumG[j] = cumG[j - 1] + half_dx * (G[j - 1] + G[j])
        a = self.sig - tau
        hist_part = np.where(
            a < t, self._hist_cum_t - self.hist.cum_at_many(np.minimum(a, t)), 0.0
        )
        clipped = _clipped_prefix_vec(self.xs, self.sig, self.G, self.cumG, a)
        self.p3[:] = hist_part + self.cumG - clipped
        self.p3[0] = self.hist.window_integral(t - tau, t)

    def run(self) -> "_March":
        if self.plant.lam_is_constant and (self.plant.g_is_zero or self.backward):
            self._run_fast_constant_speed()
        else:
            for j in range(1, self.grid.N + 1):
                self._resolve_node(j)
        self._check_invariants()
        return self

    def set_last_field(self, value: float) -> None:
        """Update the boundary node of the field and re-resolve node N only."""
        N = self.grid.N
        self.field[N] = value
        if self.plant.lam_is_constant and (self.plant.g_is_zero or self.backward):
            if not self.backward:
                self.p2[N] = self._fast_kdiag[N] * value
            self._fast_state_node(N, self._fast_inv)
            self._fast_window_node(N)
        else:
            self._resolve_node(N)

    def _check_invariants(self) -> None:
        dsig = np.diff(self.sig)
        if np.any(dsig <= 0):
            raise DelaylineError("prediction instants are not strictly increasing")
        lo = self.xs / self.plant.lam_max
        hi = self.xs / self.plant.lam_min
        off = self.sig - self.t
        tol = 1e-7 * (1.0 + hi[-1])
        if np.any(off < lo - tol) or np.any(off > hi + tol):
            raise DelaylineError(
                "prediction instants left the [x/lam_max, x/lam_min] bracket"
            )

    def kernel_column(self) -> np.ndarray:
        """K(D, y) on the nodes, from the cumulative friction integral."""
        if self.plant.c_const is not None:
            return np.exp(self.plant.c_const * (self.sig - self.t))
        m = np.asarray(self.plant.friction_c(self.grid.D - self.xs)) * self.invlam
        cells = 0.5 * self.dx * (m[:-1] + m[1:])
        return np.exp(np.concatenate(([0.0], np.cumsum(cells))))

    def bundle(self) -> PredictorBundle:
        g = self.grid
        return PredictorBundle(
            t=self.t,
            p1=SpatialProfile(self.p1.copy(), g),
            p2=SpatialProfile(self.p2.copy(), g),
            p3=SpatialProfile(self.p3.copy(), g),
            sigma=SpatialProfile(self.sig.copy(), g),
            kernel_col=SpatialProfile(self.kernel_column(), g),
            inv_speed=SpatialProfile(self.invlam.copy(), g),
        )


def march_predictors(
    plant: PlantModel,
    grid: Grid,
    X_now: float,
    hist: HistoryBuffer,
    u_now: SpatialProfile,
    t: float,
) -> PredictorBundle:
    """Solve the coupled predictor layers from the current plant state."""
    return _March(plant, grid, X_now, hist, u_now.values, t).run().bundle()


def march_backward_predictors(
    plant: PlantModel,
    grid: Grid,
    X_now: float,
    hist: HistoryBuffer,
    w_now: SpatialProfile,
    t: float,
) -> PredictorBundle:
    """Solve the target-side layer system driven by the target state w."""
    return _March(plant, grid, X_now, hist, w_now.values, t, backward=True).run().bundle()


def current_state_bundle(
    plant: PlantModel,
    grid: Grid,
    X_now: float,
    R_now: float,
    u_now: SpatialProfile,
    t: float,
) -> PredictorBundle:
    """Layer stand-in built from current measurements instead of forecasts.

    Used by the delay-uncompensated baseline: the boundary law keeps its
    structure (kernel scaling, source compensation) but every predicted
    quantity is replaced by its current value, so only the delay
    compensation is removed.
    """
    inv = 1.0 / plant.speed(R_now)
    xs = grid.x
    sigma = t + xs * inv
    if plant.c_const is not None:
        kcol = np.exp(plant.c_const * inv * xs)
    else:
        m = np.asarray(plant.friction_c(grid.D - xs)) * inv
        cells = 0.5 * grid.dx * (m[:-1] + m[1:])
        kcol = np.exp(np.concatenate(([0.0], np.cumsum(cells))))
    const = lambda v: SpatialProfile(np.full(grid.N + 1, v), grid)
    return PredictorBundle(
        t=t,
        p1=const(X_now),
        p2=u_now.copy(),
        p3=const(R_now),
        sigma=SpatialProfile(sigma, grid),
        kernel_col=SpatialProfile(kcol, grid),
        inv_speed=const(inv),
    )


def _kernel_exponent(
    c: Callable[[np.ndarray], np.ndarray],
    lam: Callable[[float], float],
    p3: SpatialProfile,
    x1: float,
    x2: float,
) -> float:
    grid = p3.grid
    if not (0.0 <= x2 <= x1 <= grid.D + 1e-12 * grid.D):
        raise DomainError(f"kernel needs 0 <= x2 <= x1 <= D, got ({x1}, {x2})")
    xs = grid.x
    invlam = np.array([1.0 / lam(z) for z in p3.values])
    m = np.asarray(c(x1 - xs)) * invlam
    k = int(np.floor(x2 / grid.dx + 1e-12))
    k = min(k, grid.N)
    cells = 0.5 * grid.dx * (m[:k] + m[1 : k + 1]) if k > 0 else np.empty(0)
    total = float(np.sum(cells))
    rem = x2 - xs[k]
    if rem > 1e-14 * grid.D and k < grid.N:
        frac = rem / grid.dx
        m_at = m[k] + frac * (m[k + 1] - m[k])
        total += 0.5 * (m[k] + m_at) * rem
    return total


def kernel_K(
    c: Callable[[np.ndarray], np.ndarray],
    lam: Callable[[float], float],
    p3: SpatialProfile,
    x1: float,
    x2: float,
) -> float:
    """Friction kernel exp(int_0^x2 c(x1 - z) / lam(p3(z)) dz)."""
    return math.exp(_kernel_exponent(c, lam, p3, x1, x2))


def kernel_L(
    c: Callable[[np.ndarray], np.ndarray],
    lam: Callable[[float], float],
    pi3: SpatialProfile,
    x1: float,
    x2: float,
) -> float:
    """Inverse friction kernel exp(-int_0^x2 c(x1 - z) / lam(pi3(z)) dz)."""
    return math.exp(-_kernel_exponent(c, lam, pi3, x1, x2))


class CharacteristicMap:
    """Cumulative travel distance xi(t) of the transport characteristics."""

    def __init__(self, t0: float = 0.0):
        cap = 1024
        self._t = np.empty(cap)
        self._xi = np.empty(cap)
        self._t[0] = t0
        self._xi[0] = 0.0
        self._n = 1

    @property
    def t_max(self) -> float:
        return float(self._t[self._n - 1])

    @property
    def times(self) -> np.ndarray:
        return self._t[: self._n]

    @property
    def xi_samples(self) -> np.ndarray:
        return self._xi[: self._n]

    def _append(self, t: float, xi: float) -> None:
        if self._n == self._t.shape[0]:
            for name in ("_t", "_xi"):
                new = np.empty(2 * self._n)
                new[: self._n] = getattr(self, name)[: self._n]
                setattr(self, name, new)
        self._t[self._n] = t
        self._xi[self._n] = xi
        self._n += 1

    def xi_at(self, t: float) -> float:
        ts = self._t[: self._n]
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise RangeError(f"time {t} outside recorded characteristic span")
        t = min(max(t, ts[0]), ts[-1])
        k = int(np.searchsorted(ts, t, side="right")) - 1
        if k >= self._n - 1:
            return float(self._xi[self._n - 1])
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        return float(self._xi[k] + w * (self._xi[k + 1] - self._xi[k]))


def update_xi(
    cmap: CharacteristicMap,
    hist: HistoryBuffer,
    t: float,
    dt: float,
    plant: PlantModel,
) -> CharacteristicMap:
    """Append xi(t) = xi(t - dt) + trapezoid of lam(window integral) over [t-dt, t]."""
    t_prev = cmap.t_max
    if abs((t - dt) - t_prev) > 1e-9 * max(1.0, dt):
        raise RangeError(
            f"characteristic map is current through {t_prev}, cannot append at {t}"
        )
    tau = hist.window
    lam0 = plant.speed(hist.window_integral(t_prev - tau, t_prev))
    lam1 = plant.speed(hist.window_integral(t - tau, t))
    cmap._append(t, cmap.xi_samples[-1] + 0.5 * dt * (lam0 + lam1))
    return cmap


def compute_delay(cmap: CharacteristicMap, t: float, D: float) -> float:
    """Invert xi(t) - xi(phi) = D for the implicit transport delay phi."""
    xi_t = cmap.xi_at(t)
    if xi_t < D * (1.0 - 1e-12):
        raise NotYetReachable(
            f"characteristic through t={t} started before the recorded origin "
            f"(xi={xi_t} < D={D})"
        )
    target = xi_t - D
    ts, xis = cmap.times, cmap.xi_samples
    k = int(np.searchsorted(xis, target, side="right")) - 1
    k = min(max(k, 0), len(ts) - 2)
    if xis[k + 1] == xis[k]:
        phi = float(ts[k])
    else:
        w = (target - xis[k]) / (xis[k + 1] - xis[k])
        phi = float(ts[k] + w * (ts[k + 1] - ts[k]))
    residual = abs((xi_t - cmap.xi_at(phi)) - D)
    if residual > 1e-9 * max(1.0, xi_t):
        raise DelaylineError(f"delay inversion residual {residual} too large")
    return phi


def find_gamma_cutoff(
    sigma: SpatialProfile, x_index: int, tau: float, t: float
) -> float:
    """Smallest y whose prediction instant is within tau of sigma(x_index).

    Returns 0 when the window still intersects the current time; between
    nodes the strictly increasing sigma profile is inverted linearly.
    """
    sig = sigma.values
    if not (0 <= x_index <= sigma.grid.N):
        raise DomainError(f"node index {x_index} outside the grid")
    a = sig[x_index] - tau
    if a <= t:
        return 0.0
    k = int(np.searchsorted(sig[: x_index + 1], a, side="right")) - 1
    k = min(max(k, 0), x_index - 1)
    frac = (a - sig[k]) / (sig[k + 1] - sig[k])
    return float(sigma.grid.x[k] + frac * sigma.grid.dx)
