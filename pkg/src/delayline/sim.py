"""Closed-loop time stepping: upwind transport, ODE/buffer update, logging.

One run is a sequential forward-Euler loop. Per step: refresh the window
integral, evaluate the scenario's boundary input (for compensated runs the
predictor layers and the boundary node are made mutually consistent by a
short outer iteration), inject it at the controlled node, advance the PDE
with a first-order upwind step, advance the ODE with the pre-step outlet
value, and log.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .control import (
    ClampStats,
    control_flux,
    control_linear_recycle,
    flux_law_arrays,
    value_law_arrays,
)
from .core import BoundaryKind, Grid, HistoryBuffer, PlantModel, SpatialProfile
from .errors import CFLViolation, DomainError, NonConvergence, NonFiniteState
from .predictor import (
    CharacteristicMap,
    PredictorBundle,
    _March,
    current_state_bundle,
    update_xi,
)

logger = logging.getLogger(__name__)

_COMPAT_TOL = 1e-6
_BOUNDARY_FP_TOL = 1e-12
_BOUNDARY_FP_MAX = 24
_PRUNE_EVERY = 512


class Scenario(Enum):
    OPEN_LOOP = "open_loop"
    UNCOMPENSATED = "uncompensated"
    COMPENSATED = "compensated"


def pde_step(
    u: np.ndarray,
    speed: float,
    source_eval: Callable[[np.ndarray, float, np.ndarray], np.ndarray],
    boundary_value: float,
    dt: float,
    grid: Grid,
) -> np.ndarray:
    """One forward-Euler step of du/dt = speed * du/dx + source.

    Transport moves toward x = 0, so the upwind difference uses the right
    neighbor; the controlled node N is set to ``boundary_value`` afterwards.
    """
    dx = grid.dx
    if speed * dt > dx * (1.0 + 1e-12):
        raise CFLViolation(
            f"CFL violated: speed*dt = {speed * dt} exceeds dx = {dx}"
        )
    src = np.asarray(source_eval(grid.x, float(u[0]), u))
    out = np.empty_like(u)
    out[:-1] = u[:-1] + dt * (speed * (u[1:] - u[:-1]) / dx + src[:-1])
    out[-1] = boundary_value
    return out


def ode_step_general(
    X: float, input_value: float, f: Callable[[float, float], float], dt: float
) -> float:
    """Forward-Euler step of dX/dt = f(X, input)."""
    return X + dt * f(X, input_value)


def buffer_step(
    Q: float, phi_out: float, alpha: float, mu: float, dt: float
) -> float:
    """Forward-Euler buffer update: inflow alpha*phi_out, service min(Q, mu)."""
    return Q + dt * (alpha * phi_out - min(Q, mu))


@dataclass
class SimConfig:
    """Everything one closed-loop run needs."""

    grid: Grid
    dt: float
    t_final: float
    scenario: Scenario
    plant: PlantModel
    tau: float
    u0: np.ndarray
    history: Callable[[float], float]
    open_loop_input: float = 0.0
    snapshot_every: int = 100
    diagnostic_every: int = 1
    probe_times: tuple[float, ...] = ()
    alpha: Optional[float] = None
    mu: Optional[float] = None
    clamp_stats: Optional[ClampStats] = None
    check_compatibility: bool = True

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.t_final <= 0:
            raise DomainError("dt and t_final must be positive")
        if self.plant.lam_max * self.dt > self.grid.dx * (1.0 + 1e-12):
            raise CFLViolation(
                f"CFL violated: lam_max*dt = {self.plant.lam_max * self.dt} "
                f"exceeds dx = {self.grid.dx}"
            )
        self.u0 = np.asarray(self.u0, dtype=float)
        if self.u0.shape != (self.grid.N + 1,):
            raise DomainError("u0 length does not match the grid")
        if self.snapshot_every < 1:
            raise DomainError("snapshot_every must be >= 1")


@dataclass
class ProbeRecord:
    t: float
    state: float
    window_integral: float
    u: SpatialProfile
    bundle: PredictorBundle


@dataclass
class RunLog:
    """Per-step series, profile snapshots, and target-state diagnostics."""

    scenario: Scenario
    grid: Grid
    dt: float
    tau: float
    t: np.ndarray
    state: np.ndarray
    control: np.ndarray
    nu_in: np.ndarray
    nu_out: np.ndarray
    q_flux: np.ndarray
    u_at_0: np.ndarray
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)
    target_t: list[float] = field(default_factory=list)
    sup_w: list[float] = field(default_factory=list)
    w_at_d: list[float] = field(default_factory=list)
    p3_gap: list[float] = field(default_factory=list)
    gains_t: list[float] = field(default_factory=list)
    kernel_dd: list[float] = field(default_factory=list)
    xi_map: Optional[CharacteristicMap] = None
    probes: dict[float, ProbeRecord] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    clamp_count: int = 0
    w0_sup: Optional[float] = None
    sigma_d0: Optional[float] = None
    min_state: float = math.inf
    min_profile: float = math.inf
    min_control: float = math.inf

    def warn(self, msg: str) -> None:
        self.warnings.append(msg)
        logger.warning(msg)


def _source_for(
    plant: PlantModel, grid: Grid
) -> Callable[[np.ndarray, float, np.ndarray], np.ndarray]:
    c_arr = np.asarray(plant.friction_c(grid.x), dtype=float)

    def source(xs: np.ndarray, u0: float, u: np.ndarray) -> np.ndarray:
        g = np.asarray(plant.source_g(xs, np.full_like(xs, u0)))
        return g + c_arr * u

    return source


def _boundary_from_input(plant: PlantModel, U: float, speed: float) -> float:
    if plant.bc_kind is BoundaryKind.FLUX:
        return U / speed
    return U


def _law_on_bundle(plant: PlantModel, bundle: PredictorBundle) -> float:
    if plant.bc_kind is BoundaryKind.FLUX:
        return control_flux(plant, bundle)
    if plant.g_lin is None:
        raise DomainError(
            "value-actuated compensated runs need the linear recycle factor g_lin"
        )
    return control_linear_recycle(plant, bundle, plant.g_lin)


def _law_on_march(plant: PlantModel, grid: Grid, eng: _March) -> float:
    if plant.bc_kind is BoundaryKind.FLUX:
        return flux_law_arrays(
            plant, grid, float(eng.p1[-1]), eng.p2, eng.invlam, eng.kernel_column()
        )
    if plant.g_lin is None:
        raise DomainError(
            "value-actuated compensated runs need the linear recycle factor g_lin"
        )
    return value_law_arrays(
        plant, grid, float(eng.p1[-1]), eng.p2, eng.invlam, plant.g_lin
    )


def _consistent_boundary(
    plant: PlantModel,
    grid: Grid,
    X: float,
    hist: HistoryBuffer,
    u: np.ndarray,
    t: float,
    speed: float,
) -> tuple[float, float, _March]:
    """March the layers and make the controlled node agree with the law.

    The marched boundary layer at the last node depends on the injected
    value, which the law itself produces, so the scalar pair is resolved by
    a short outer fixed point (the sensitivity is one quadrature cell).
    """
    eng = _March(plant, grid, X, hist, u, t)
    eng.run()
    u_bnd = float(u[-1])
    for _ in range(_BOUNDARY_FP_MAX):
        U = _law_on_march(plant, grid, eng)
        target = _boundary_from_input(plant, U, speed)
        if abs(target - u_bnd) <= _BOUNDARY_FP_TOL * max(1.0, abs(target)):
            return U, target, eng
        u_bnd = target
        eng.set_last_field(target)
    raise NonConvergence("boundary/law consistency iteration did not converge")


def _kappa_profile(plant: PlantModel, vals: np.ndarray) -> np.ndarray:
    if plant.kappa_vec is not None:
        return np.asarray(plant.kappa_vec(vals), dtype=float)
    return np.array([plant.kappa(v) for v in vals])


def target_state_from_layers(plant: PlantModel, eng_or_bundle) -> np.ndarray:
    """Target state w on the nodes, via the marched layers.

    Algebraically identical to the full integral transform evaluated with
    the same quadrature: the boundary layer already carries the source
    integral, so w = (speed-scaled) boundary layer minus the nominal term.
    """
    if isinstance(eng_or_bundle, PredictorBundle):
        p1 = eng_or_bundle.p1.values
        p2 = eng_or_bundle.p2.values
        inv = eng_or_bundle.inv_speed.values
    else:
        p1, p2, inv = eng_or_bundle.p1, eng_or_bundle.p2, eng_or_bundle.invlam
    kap = _kappa_profile(plant, p1)
    if plant.bc_kind is BoundaryKind.FLUX:
        return p2 / inv - kap
    return p2 - kap


def run_closed_loop(cfg: SimConfig) -> RunLog:
    """Run one scenario to t_final and return the full log."""
    grid, plant, dt, tau = cfg.grid, cfg.plant, cfg.dt, cfg.tau
    n_steps = int(round(cfg.t_final / dt))
    if abs(n_steps * dt - cfg.t_final) > 1e-9 * max(1.0, cfg.t_final):
        raise DomainError("t_final must be an integer number of steps")
    hist = HistoryBuffer.from_callable(cfg.history, tau, dt)
    X = float(cfg.history(0.0))
    u = cfg.u0.copy()
    cmap = CharacteristicMap(0.0)
    source = _source_for(plant, grid)
    flux_kind = plant.bc_kind is BoundaryKind.FLUX
    n_rows = n_steps + 1
    log = RunLog(
        scenario=cfg.scenario,
        grid=grid,
        dt=dt,
        tau=tau,
        t=np.empty(n_rows),
        state=np.empty(n_rows),
        control=np.empty(n_rows),
        nu_in=np.empty(n_rows),
        nu_out=np.empty(n_rows),
        q_flux=np.empty(n_rows),
        u_at_0=np.empty(n_rows),
        xi_map=cmap,
    )
    probe_steps = {int(round(pt / dt)): pt for pt in cfg.probe_times}
    compensated = cfg.scenario is Scenario.COMPENSATED

    for k in range(n_rows):
        t = k * dt
        R = hist.window_integral(t - tau, t)
        speed = plant.speed(R)
        eng: Optional[_March] = None
        if cfg.scenario is Scenario.COMPENSATED:
            U, u_bnd, eng = _consistent_boundary(plant, grid, X, hist, u, t, speed)
            if k == 0 and cfg.check_compatibility:
                mismatch = abs(u[-1] - u_bnd)
                if mismatch > _COMPAT_TOL:
                    log.warn(
                        f"initial boundary node {u[-1]} incompatible with the "
                        f"control law value {u_bnd} (|diff| = {mismatch}); "
                        "overwriting the boundary node"
                    )
        elif cfg.scenario is Scenario.UNCOMPENSATED:
            if plant.kappa is None:
                raise DomainError("uncompensated runs need a nominal law")
            # same boundary law, but fed current measurements in place of the
            # marched forecast layers: only the delay compensation is removed
            measured = current_state_bundle(
                plant, grid, X, R, SpatialProfile(u, grid), t
            )
            U = _law_on_bundle(plant, measured)
            u_bnd = _boundary_from_input(plant, U, speed)
        else:
            U = cfg.open_loop_input
            u_bnd = _boundary_from_input(plant, U, speed)
        u[-1] = u_bnd

        q = speed * u[0] if flux_kind else float(u[0])
        log.t[k] = t
        log.state[k] = X
        log.control[k] = U
        log.q_flux[k] = q
        log.u_at_0[k] = u[0]
        if cfg.alpha is not None and cfg.mu is not None:
            log.nu_in[k] = cfg.alpha * q
            log.nu_out[k] = min(X, cfg.mu)
        else:
            log.nu_in[k] = q
            log.nu_out[k] = 0.0
        log.min_state = min(log.min_state, X)
        log.min_profile = min(log.min_profile, float(u.min()))
        log.min_control = min(log.min_control, U)

        want_diag = (
            (compensated and k % cfg.diagnostic_every == 0)
            or (k % cfg.snapshot_every == 0)
            or k == n_steps
        )
        if want_diag:
            if eng is None:
                eng = _March(plant, grid, X, hist, u, t)
                eng.run()
            log.gains_t.append(t)
            log.kernel_dd.append(float(eng.kernel_column()[-1]))
            if k == 0:
                log.sigma_d0 = float(eng.sig[-1])
            if plant.kappa is not None:
                w_vals = target_state_from_layers(plant, eng)
                log.target_t.append(t)
                log.sup_w.append(float(np.max(np.abs(w_vals))))
                log.w_at_d.append(float(w_vals[-1]))
                log.p3_gap.append(float(eng.p3[0] - R))
                if k == 0:
                    log.w0_sup = log.sup_w[0]
        if k % cfg.snapshot_every == 0 or k == n_steps:
            log.snapshots.append((t, u.copy()))
        if k in probe_steps:
            if eng is None:
                eng = _March(plant, grid, X, hist, u, t)
                eng.run()
            log.probes[probe_steps[k]] = ProbeRecord(
                t=t,
                state=X,
                window_integral=R,
                u=SpatialProfile(u.copy(), grid),
                bundle=eng.bundle(),
            )

        if k == n_steps:
            break
        u = pde_step(u, speed, source, u[-1], dt, grid)
        X = ode_step_general(X, q, plant.f, dt)
        if not math.isfinite(X) or not np.all(np.isfinite(u)):
            raise NonFiniteState(f"state became non-finite at t = {t + dt}")
        hist.append(t + dt, X)
        update_xi(cmap, hist, t + dt, dt, plant)
        if k % _PRUNE_EVERY == 0 and k > 0:
            hist.prune(t + dt)

    if cfg.clamp_stats is not None:
        log.clamp_count = cfg.clamp_stats.count
    return log
