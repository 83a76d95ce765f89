import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayline.core import (
    BoundaryKind,
    Grid,
    HistoryBuffer,
    PlantModel,
    SpatialProfile,
    interp_history,
    window_integral,
)
from delayline.errors import DomainError, RangeError, SpeedBoundViolation


def make_hist(samples):
    buf = HistoryBuffer(window=max(t for t, _ in samples) - min(t for t, _ in samples))
    for t, v in samples:
        buf.append(t, v)
    return buf


class TestGrid:
    def test_node_coordinates(self):
        g = Grid(2.0, 80)
        assert g.dx == 2.0 / 80
        assert g.x[0] == 0.0
        assert g.x[-1] == 2.0
        assert len(g.x) == 81

    def test_invalid_dimensions(self):
        with pytest.raises(DomainError):
            Grid(-1.0, 10)
        with pytest.raises(DomainError):
            Grid(1.0, 1)


class TestSpatialProfile:
    def test_length_check(self):
        g = Grid(1.0, 4)
        with pytest.raises(DomainError):
            SpatialProfile(np.zeros(4), g)

    def test_finite_check(self):
        g = Grid(1.0, 4)
        vals = np.zeros(5)
        vals[2] = np.nan
        with pytest.raises(DomainError):
            SpatialProfile(vals, g)


class TestWindowIntegral:
    def test_constant_history(self):
        buf = HistoryBuffer.from_callable(lambda s: 0.4, window=0.2, dt=0.01)
        assert window_integral(buf, -0.2, 0.0) == pytest.approx(0.08, abs=1e-15)
        assert window_integral(buf, -0.2, 0.0) == pytest.approx(0.4 * 0.2, abs=1e-15)

    def test_empty_interval(self):
        buf = make_hist([(0.0, 1.0), (1.0, 2.0)])
        assert window_integral(buf, 0.3, 0.3) == 0.0

    def test_exact_on_linear_data(self):
        buf = HistoryBuffer(1.0)
        for s in np.linspace(0.0, 1.0, 11):
            buf.append(float(s), float(s))
        assert window_integral(buf, 0.0, 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_out_of_span(self):
        buf = make_hist([(0.0, 0.0), (1.0, 1.0)])
        with pytest.raises(RangeError):
            window_integral(buf, 0.0, 2.0)
        with pytest.raises(RangeError):
            window_integral(buf, 0.5, 0.2)

    @given(
        a=st.floats(0.0, 1.0),
        b=st.floats(0.0, 1.0),
        c=st.floats(0.0, 1.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_additive(self, a, b, c):
        a, b, c = sorted((a, b, c))
        buf = HistoryBuffer(1.0)
        rng = np.random.default_rng(7)
        vals = rng.normal(size=21)
        for s, v in zip(np.linspace(0.0, 1.0, 21), vals):
            buf.append(float(s), float(v))
        whole = buf.window_integral(a, c)
        split = buf.window_integral(a, b) + buf.window_integral(b, c)
        assert abs(whole - split) <= 1e-12

    def test_second_order_convergence(self):
        # trapezoid on sampled smooth data: error ratio ~4 per halving
        f = lambda s: math.sin(3.0 * s) + 0.5 * s * s
        exact = (-math.cos(3.0) + 1.0) / 3.0 + 0.5 / 3.0
        errs = []
        for n in (32, 64, 128):
            buf = HistoryBuffer(1.0)
            for s in np.linspace(0.0, 1.0, n + 1):
                buf.append(float(s), f(float(s)))
            errs.append(abs(buf.window_integral(0.0, 1.0) - exact))
        for coarse, fine in zip(errs, errs[1:]):
            assert 3.4 <= coarse / fine <= 4.6


class TestInterpHistory:
    def test_midpoint(self):
        buf = make_hist([(0.0, 0.0), (1.0, 1.0)])
        assert interp_history(buf, 0.5) == pytest.approx(0.5, abs=1e-15)

    def test_exact_at_samples(self):
        buf = make_hist([(0.0, 0.3), (0.5, -0.7), (1.0, 1.9)])
        assert interp_history(buf, 0.5) == -0.7

    def test_out_of_span(self):
        buf = make_hist([(0.0, 0.0), (1.0, 1.0)])
        with pytest.raises(RangeError):
            interp_history(buf, 2.0)


class TestHistoryBuffer:
    def test_strictly_increasing_times(self):
        buf = make_hist([(0.0, 0.0), (1.0, 1.0)])
        with pytest.raises(RangeError):
            buf.append(1.0, 2.0)

    def test_seeding_covers_window(self):
        buf = HistoryBuffer.from_callable(lambda s: 1.0, window=0.2, dt=0.0025)
        assert buf.t_min <= -0.2
        assert buf.t_max == 0.0
        assert buf.window_integral(-0.2, 0.0) == pytest.approx(0.2, abs=1e-14)

    def test_prune_keeps_current_window(self):
        tau = 0.2
        buf = HistoryBuffer.from_callable(lambda s: 1.0, window=tau, dt=0.01)
        t = 0.0
        for k in range(1, 401):
            t = k * 0.01
            buf.append(t, math.sin(t))
            if k % 50 == 0:
                buf.prune(t)
        ref = sum(
            0.005 * (math.sin(t - tau + i * 0.01) + math.sin(t - tau + (i + 1) * 0.01))
            for i in range(20)
        )
        assert buf.window_integral(t - tau, t) == pytest.approx(ref, abs=1e-12)
        assert buf.t_min >= t - 3.5 * tau

    def test_cum_at_many_matches_scalar(self, rng):
        buf = HistoryBuffer(1.0)
        for s, v in zip(np.linspace(0.0, 1.0, 31), rng.normal(size=31)):
            buf.append(float(s), float(v))
        queries = rng.uniform(0.0, 1.0, size=40)
        vec = buf.cum_at_many(queries)
        for q, r in zip(queries, vec):
            assert r == pytest.approx(buf.cum_at(float(q)), abs=1e-15)


class TestPlantGuard:
    def test_speed_guard(self):
        plant = PlantModel(
            name="toy",
            f=lambda X, u: 0.0,
            lam=lambda z: 1.0 + z,
            lam_min=0.5,
            lam_max=1.5,
            kappa=lambda X: 0.0,
            source_g=lambda x, v: np.zeros_like(np.asarray(x, dtype=float)),
            lipschitz_g=0.0,
            friction_c=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            bc_kind=BoundaryKind.VALUE,
        )
        assert plant.speed(0.0) == 1.0
        with pytest.raises(SpeedBoundViolation):
            plant.speed(2.0)
        with pytest.raises(SpeedBoundViolation):
            plant.speed(-0.9)

    def test_bad_bounds(self):
        with pytest.raises(DomainError):
            PlantModel(
                name="bad",
                f=lambda X, u: 0.0,
                lam=lambda z: 1.0,
                lam_min=0.0,
                lam_max=1.0,
                kappa=None,
                source_g=lambda x, v: np.zeros_like(np.asarray(x, dtype=float)),
                lipschitz_g=0.0,
                friction_c=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                bc_kind=BoundaryKind.VALUE,
            )


class TestBundledPlantContracts:
    def test_source_vanishes_at_zero(self):
        from delayline.plants import production_line_plant, section2_plant, section3_plant

        for plant in (production_line_plant(), section2_plant(), section3_plant()):
            xs = np.linspace(0.0, 2.0, 9)
            assert np.allclose(plant.source_g(xs, np.zeros_like(xs)), 0.0)

    def test_nominal_law_vanishes_at_origin(self):
        # holds for the regulation-to-origin examples; the production law
        # regulates to a nonzero setpoint instead
        from delayline.plants import section2_plant, section3_plant

        assert section2_plant().kappa(0.0) == 0.0
        assert section3_plant().kappa(0.0) == 0.0

    def test_declared_speed_bands(self):
        from delayline.plants import production_line_plant, section3_plant

        prod = production_line_plant()
        for z in np.linspace(0.0, 0.2, 11):  # reachable window-integral range
            assert prod.lam_min <= prod.lam(z) <= prod.lam_max
        sec3 = section3_plant()
        for z in np.linspace(-5.0, 5.0, 21):
            assert sec3.lam_min <= sec3.lam(z) <= sec3.lam_max
