import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from delayline.core import Grid
from delayline.errors import CFLViolation, DomainError
from delayline.plants import (
    production_config,
    production_line_plant,
    section2_config,
    section3_config,
)
from delayline.sim import (
    Scenario,
    SimConfig,
    buffer_step,
    ode_step_general,
    pde_step,
    run_closed_loop,
)

NO_SOURCE = lambda xs, u0, u: np.zeros_like(xs)


class TestPdeStep:
    def test_zero_equilibrium_preserved(self):
        grid = Grid(1.0, 16)
        plant = production_line_plant()
        src = lambda xs, u0, u: np.asarray(plant.source_g(xs, np.full_like(xs, u0))) - u
        out = pde_step(np.zeros(17), 1.0, src, 0.0, 0.01, grid)
        assert np.all(out == 0.0)

    def test_unit_cfl_shifts_one_cell(self):
        grid = Grid(1.0, 10)
        u = np.zeros(11)
        u[7] = 1.0
        dt = grid.dx / 2.0
        out = pde_step(u, 2.0, NO_SOURCE, 0.0, dt, grid)
        expect = np.zeros(11)
        expect[6] = 1.0
        assert np.allclose(out, expect, atol=1e-15)

    def test_constants_are_solutions(self):
        grid = Grid(1.0, 10)
        out = pde_step(np.full(11, 3.3), 1.5, NO_SOURCE, 3.3, 0.01, grid)
        assert np.allclose(out, 3.3, atol=1e-15)

    def test_cfl_guard(self):
        grid = Grid(1.0, 10)
        with pytest.raises(CFLViolation):
            pde_step(np.zeros(11), 4.0, NO_SOURCE, 0.0, 0.1, grid)

    @given(
        vals=hnp.arrays(np.float64, 21, elements=st.floats(-5, 5)),
        bnd=st.floats(-2, 2),
        cfl=st.floats(0.1, 1.0),
    )
    @settings(max_examples=80, deadline=None)
    def test_max_norm_stability(self, vals, bnd, cfl):
        grid = Grid(1.0, 20)
        speed = 1.0
        dt = cfl * grid.dx / speed
        u = vals.copy()
        cap = max(np.max(np.abs(u)), abs(bnd))
        for _ in range(5):
            u[-1] = bnd
            u = pde_step(u, speed, NO_SOURCE, bnd, dt, grid)
            assert np.max(np.abs(u)) <= cap + 1e-12


class TestOdeAndBufferSteps:
    def test_zero_derivative(self):
        assert ode_step_general(1.7, 9.9, lambda X, u: 0.0, 0.1) == 1.7

    def test_euler_arithmetic(self):
        assert ode_step_general(0.0, 1.0, lambda X, u: u, 0.1) == pytest.approx(0.1)

    def test_buffer_equilibrium_fixed_point(self):
        q = buffer_step(0.3, 0.6, alpha=0.5, mu=0.8, dt=0.01)
        assert q == 0.3

    def test_saturated_service(self):
        q0 = 0.9
        q1 = buffer_step(q0, 0.0, alpha=0.5, mu=0.8, dt=0.01)
        assert q1 == pytest.approx(q0 - 0.01 * 0.8)

    def test_pure_drain(self):
        q = 0.5
        for _ in range(100):
            q = buffer_step(q, 0.0, alpha=0.5, mu=0.8, dt=0.01)
        assert 0.0 < q < 0.5
        assert q == pytest.approx(0.5 * math.exp(-1.0), abs=0.01)

    def test_buffer_step_matches_plant_dynamics(self):
        plant = production_line_plant()
        for q, phi in ((0.3, 0.6), (0.9, 0.1), (0.0, 1.2)):
            direct = buffer_step(q, phi, alpha=0.5, mu=0.8, dt=0.01)
            via_f = ode_step_general(q, phi, plant.f, 0.01)
            assert direct == pytest.approx(via_f, abs=1e-15)


class TestSimConfigGuards:
    def test_cfl_rejects_large_dt(self):
        with pytest.raises(CFLViolation):
            production_config(Scenario.COMPENSATED, n_cells=80, dt=0.01, t_final=1.0)

    def test_experiment_dt_accepted(self):
        cfg = production_config(Scenario.COMPENSATED, n_cells=80, dt=0.0025, t_final=1.0)
        assert cfg.plant.lam_max * cfg.dt <= cfg.grid.dx

    def test_bad_u0_length(self):
        cfg = production_config(Scenario.COMPENSATED, t_final=1.0)
        with pytest.raises(DomainError):
            SimConfig(
                grid=cfg.grid, dt=cfg.dt, t_final=1.0, scenario=cfg.scenario,
                plant=cfg.plant, tau=cfg.tau, u0=np.zeros(5), history=lambda s: 0.0,
            )


class TestRunClosedLoop:
    def test_global_zero_equilibrium(self):
        # zero data, zero setpoint feed: everything stays identically zero
        cfg = production_config(Scenario.OPEN_LOOP, n_cells=20, t_final=0.5, q_star=0.3)
        cfg.open_loop_input = 0.0
        log = run_closed_loop(cfg)
        assert np.all(log.state == 0.0)
        assert np.all(log.control == 0.0)
        assert all(np.all(p == 0.0) for _, p in log.snapshots)

    def test_compatibility_overwrite_warns(self):
        cfg = production_config(Scenario.COMPENSATED, n_cells=20, t_final=0.1)
        log = run_closed_loop(cfg)
        assert any("incompatible" in w for w in log.warnings)

    def test_flux_identity_logged(self):
        cfg = production_config(Scenario.COMPENSATED, n_cells=20, t_final=0.5)
        log = run_closed_loop(cfg)
        # q(t) must equal speed * u(0,t) as computed; speed = lam(R)
        for k in (0, 50, 100, 200):
            t = log.t[k]
            # reconstruct R from logged state series
            mask = (log.t >= t - cfg.tau - 1e-12) & (log.t <= t + 1e-12)
            R = np.trapezoid(log.state[mask], log.t[mask])
            lam = cfg.plant.lam(R)
            assert log.q_flux[k] == pytest.approx(lam * log.u_at_0[k], rel=1e-9)

    def test_window_layer_anchored_every_step(self):
        cfg = production_config(Scenario.COMPENSATED, n_cells=20, t_final=0.5)
        log = run_closed_loop(cfg)
        assert max(abs(g) for g in log.p3_gap) == 0.0

    def test_target_boundary_pinned_every_step(self):
        for cfg in (
            production_config(Scenario.COMPENSATED, n_cells=20, t_final=0.5),
            section2_config(n_cells=20, t_final=0.5),
            section3_config(n_cells=20, t_final=0.5),
        ):
            log = run_closed_loop(cfg)
            tol = 1e-8 * (1.0 + log.w0_sup)
            assert max(abs(v) for v in log.w_at_d) <= tol

    def test_determinism(self):
        logs = [
            run_closed_loop(production_config(Scenario.COMPENSATED, n_cells=20, t_final=0.3))
            for _ in range(2)
        ]
        assert np.array_equal(logs[0].state, logs[1].state)
        assert np.array_equal(logs[0].control, logs[1].control)
        assert logs[0].sup_w == logs[1].sup_w

    def test_buffer_series_consistency(self):
        cfg = production_config(Scenario.COMPENSATED, n_cells=20, t_final=0.5)
        log = run_closed_loop(cfg)
        assert np.allclose(log.nu_in, 0.5 * log.q_flux, atol=1e-15)
        assert np.allclose(log.nu_out, np.minimum(log.state, 0.8), atol=1e-15)
        # forward-Euler consistency of the logged series
        k = 120
        expect = log.state[k] + cfg.dt * (log.nu_in[k] - log.nu_out[k])
        assert log.state[k + 1] == pytest.approx(expect, abs=1e-15)

    def test_probe_records(self):
        cfg = production_config(
            Scenario.COMPENSATED, n_cells=20, t_final=0.5, probe_times=(0.25,)
        )
        log = run_closed_loop(cfg)
        probe = log.probes[0.25]
        assert probe.t == pytest.approx(0.25)
        assert probe.bundle.p3.values[0] == pytest.approx(probe.window_integral)

    def test_log_timestamps_uniform(self):
        cfg = production_config(Scenario.COMPENSATED, n_cells=20, t_final=0.2)
        log = run_closed_loop(cfg)
        steps = np.diff(log.t)
        assert np.all(steps > 0)
        assert np.allclose(steps, cfg.dt, rtol=0, atol=1e-12)

    def test_uncompensated_and_open_loop_have_diag_at_cadence(self):
        cfg = production_config(
            Scenario.UNCOMPENSATED, n_cells=20, t_final=0.5, snapshot_every=50
        )
        log = run_closed_loop(cfg)
        assert len(log.gains_t) >= 4
        assert len(log.snapshots) >= 4


@pytest.mark.slow
class TestTrajectoryOrder:
    def test_first_order_against_fine_reference(self):
        def traj(n, dt, t_final=1.5):
            cfg = production_config(
                Scenario.COMPENSATED, n_cells=n, dt=dt, t_final=t_final,
                snapshot_every=10**9,
            )
            cfg.diagnostic_every = 10**9
            log = run_closed_loop(cfg)
            return log.t, log.state

        t80, q80 = traj(80, 0.0025)
        t160, q160 = traj(160, 0.00125)
        tref, qref = traj(640, 0.0025 / 8)
        e80 = np.max(np.abs(q80 - np.interp(t80, tref, qref)))
        e160 = np.max(np.abs(q160 - np.interp(t160, tref, qref)))
        assert 1.6 <= e80 / e160 <= 2.4
