"""Bundled example plants and ready-made run configurations.

Three closed-loop setups are provided: a value-actuated line with a linear
recycle source, a flux-actuated line with nonlinear recycle plus friction,
and the buffer-driven production line. Each satisfies the declared speed
bounds on its reachable window-integral range by construction.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .control import BangBangGains, ClampStats, bang_bang, bang_bang_vec
from .core import BoundaryKind, Grid, PlantModel
from .sim import Scenario, SimConfig

# Production-line speed floor uses twice the nominal window bound so that
# transient forecast overshoot of the load never trips the speed guard.
_P3_MARGIN = 2.0


def production_line_plant(
    P: float = 0.25,
    tau: float = 0.2,
    A: float = 0.1,
    C0: float = 1.0,
    alpha: float = 0.5,
    mu: float = 0.8,
    D: float = 2.0,
    q_max: float = 1.0,
    gains: Optional[BangBangGains] = None,
    clamp_stats: Optional[ClampStats] = None,
) -> PlantModel:
    """Conveyor with recycle A*(D - x)*rho(0,t), friction C0, flux actuation."""
    kappa = None
    kappa_vec = None
    if gains is not None:
        kappa = lambda q: bang_bang(q, gains, clamp_stats)
        kappa_vec = lambda arr: bang_bang_vec(arr, gains)
    return PlantModel(
        name="production_line",
        f=lambda Q, q: alpha * q - min(Q, mu),
        lam=lambda z: 1.0 / (P * (1.0 + z)),
        lam_min=1.0 / (P * (1.0 + _P3_MARGIN * tau * q_max)),
        lam_max=1.0 / P,
        kappa=kappa,
        source_g=lambda x, v: A * (D - x) * v,
        lipschitz_g=A * D,
        friction_c=lambda x: -C0 * np.ones_like(np.asarray(x, dtype=float)),
        bc_kind=BoundaryKind.FLUX,
        source_g_scalar=lambda x, v: A * (D - x) * v,
        c_const=-C0,
        kappa_vec=kappa_vec,
    )


def section2_plant(D: float = 1.0) -> PlantModel:
    """Value-actuated line with a linear recycle source and no friction."""
    g_lin = lambda x: 0.4 * (1.0 - np.asarray(x, dtype=float) / D)
    return PlantModel(
        name="section2",
        f=lambda X, u: 0.5 * X + u,
        lam=lambda z: 1.0 + 0.3 * math.tanh(z),
        lam_min=0.7,
        lam_max=1.3,
        kappa=lambda X: -1.5 * X,
        source_g=lambda x, v: g_lin(x) * v,
        lipschitz_g=0.4,
        friction_c=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        bc_kind=BoundaryKind.VALUE,
        g_lin=g_lin,
        source_g_scalar=lambda x, v: 0.4 * (1.0 - x / D) * v,
        c_const=0.0,
        kappa_vec=lambda arr: -1.5 * np.asarray(arr, dtype=float),
    )


def section3_plant(D: float = 1.0) -> PlantModel:
    """Flux-actuated line with nonlinear recycle and space-varying friction."""
    return PlantModel(
        name="section3",
        f=lambda X, q: 0.6 * X - 0.1 * X**3 + q,
        lam=lambda z: 1.0 + 0.25 * math.tanh(z),
        lam_min=0.75,
        lam_max=1.25,
        kappa=lambda X: -1.1 * X,
        source_g=lambda x, v: 0.3 * (D - np.asarray(x, dtype=float)) * np.tanh(v),
        lipschitz_g=0.3 * D,
        friction_c=lambda x: -(0.2 + 0.1 * np.asarray(x, dtype=float) / D),
        bc_kind=BoundaryKind.FLUX,
        source_g_scalar=lambda x, v: 0.3 * (D - x) * math.tanh(v),
        kappa_vec=lambda arr: -1.1 * np.asarray(arr, dtype=float),
    )


def constant_speed_plant(
    a: float, b: float, k_gain: float, v: float, D: float
) -> PlantModel:
    """Linear plant behind a constant-speed line: the classical-compensator case."""
    return PlantModel(
        name="constant_speed",
        f=lambda X, q: a * X + b * q,
        lam=lambda z: v,
        lam_min=v,
        lam_max=v,
        kappa=lambda X: -k_gain * X,
        source_g=lambda x, vv: np.zeros_like(np.asarray(x, dtype=float) + vv),
        lipschitz_g=0.0,
        friction_c=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        bc_kind=BoundaryKind.FLUX,
        g_is_zero=True,
        source_g_scalar=lambda x, v: 0.0,
        c_const=0.0,
        kappa_vec=lambda arr: -k_gain * np.asarray(arr, dtype=float),
    )


def production_config(
    scenario: Scenario,
    n_cells: int = 80,
    dt: float = 0.0025,
    t_final: float = 20.0,
    q_star: float = 0.3,
    mu: float = 0.8,
    P: float = 0.25,
    q_max: float = 1.0,
    b_max: float = 1.2,
    alpha: float = 0.5,
    tau: float = 0.2,
    D: float = 2.0,
    C0: float = 1.0,
    A: float = 0.1,
    s_offset: float = 20.0,
    rho0_const: float = 0.0,
    h_const: float = 0.0,
    snapshot_every: int = 100,
    probe_times: tuple[float, ...] = (),
) -> SimConfig:
    """The buffer-regulation experiment configuration."""
    grid = Grid(D, n_cells)
    stats = ClampStats()
    gains = None
    if scenario is not Scenario.OPEN_LOOP:
        gains = BangBangGains.synthesize(q_star, alpha, b_max, q_max, mu, s_offset)
    plant = production_line_plant(
        P=P, tau=tau, A=A, C0=C0, alpha=alpha, mu=mu, D=D, q_max=q_max,
        gains=gains, clamp_stats=stats,
    )
    return SimConfig(
        grid=grid,
        dt=dt,
        t_final=t_final,
        scenario=scenario,
        plant=plant,
        tau=tau,
        u0=np.full(n_cells + 1, rho0_const),
        history=lambda s: h_const,
        open_loop_input=q_star / alpha,
        snapshot_every=snapshot_every,
        probe_times=probe_times,
        alpha=alpha,
        mu=mu,
        clamp_stats=stats,
    )


def section2_config(
    scenario: Scenario = Scenario.COMPENSATED,
    n_cells: int = 80,
    dt: float = 0.005,
    t_final: float = 8.0,
    D: float = 1.0,
    tau: float = 0.2,
    x0: float = 0.8,
    u0_const: float = 0.0,
    snapshot_every: int = 100,
    probe_times: tuple[float, ...] = (),
) -> SimConfig:
    grid = Grid(D, n_cells)
    plant = section2_plant(D)
    return SimConfig(
        grid=grid,
        dt=dt,
        t_final=t_final,
        scenario=scenario,
        plant=plant,
        tau=tau,
        u0=np.full(n_cells + 1, u0_const),
        history=lambda s: x0,
        snapshot_every=snapshot_every,
        probe_times=probe_times,
    )


def section3_config(
    scenario: Scenario = Scenario.COMPENSATED,
    n_cells: int = 80,
    dt: float = 0.005,
    t_final: float = 8.0,
    D: float = 1.0,
    tau: float = 0.25,
    x0: float = 1.0,
    u0_const: float = 0.0,
    snapshot_every: int = 100,
    probe_times: tuple[float, ...] = (),
) -> SimConfig:
    grid = Grid(D, n_cells)
    plant = section3_plant(D)
    return SimConfig(
        grid=grid,
        dt=dt,
        t_final=t_final,
        scenario=scenario,
        plant=plant,
        tau=tau,
        u0=np.full(n_cells + 1, u0_const),
        history=lambda s: x0,
        snapshot_every=snapshot_every,
        probe_times=probe_times,
    )
