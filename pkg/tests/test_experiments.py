import numpy as np
import pytest

from proxsweep.experiments import (
    StudyConfig,
    StudyResult,
    continuity_study,
    convergence_order_study,
    empirical_orders,
    explicit_lipschitz_constant,
    get_benchmark,
    implicit_lipschitz_study,
    lipschitz_pointwise_margins,
    lipschitz_study,
    perturbation_shape,
)
from proxsweep.paths import uniform_grid
from proxsweep.sweep_explicit import solve


class TestBenchmarks:
    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown benchmark"):
            get_benchmark("torus")

    def test_play_grid_avoids_kink(self):
        prob = get_benchmark("play").problem(100)
        assert not np.any(np.isclose(prob.grid.nodes, 0.5))

    def test_star_starts_on_boundary(self):
        prob = get_benchmark("star").problem(500)
        assert prob.cons.value(prob.x0, prob.w.values[0]) == pytest.approx(1.0, abs=1e-9)


class TestHelpers:
    def test_orders(self):
        assert empirical_orders([0.1, 0.05], [1e-2, 2.5e-3]) == [pytest.approx(2.0)]
        assert empirical_orders([0.1, 0.05], [0.0, 1.0]) == [None]

    def test_perturbation_deterministic(self):
        g = uniform_grid(1.0, 50)
        a = perturbation_shape(g, 2, np.random.default_rng(5), pin_start=True)
        b = perturbation_shape(g, 2, np.random.default_rng(5), pin_start=True)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.values[0], [0.0, 0.0])
        assert np.all(np.abs(a.values) <= 1.0)

    def test_scales_validated(self):
        with pytest.raises(ValueError):
            StudyConfig("continuity", scales=(1e-2, 1e-1))

    def test_csv(self):
        r = StudyResult("x", "play", rows=[{"a": 1, "b": 0.5, "c": None, "d": True}])
        assert r.to_csv() == "a,b,c,d\n1,0.5,,1\n"
        assert StudyResult("x", "play").to_csv() == ""


class TestStudies:
    def test_continuity_play_floor_at_rounding(self):
        res = continuity_study(StudyConfig("continuity", "play", n=400))
        assert res.summary["floor"] == 0.0
        assert res.summary["floor_at_rounding"]
        assert res.summary["monotone"]
        assert res.summary["ratio_spread"] <= 4.0
        assert res.passed

    def test_lipschitz_play(self):
        res = lipschitz_study(StudyConfig("lipschitz", "play", (1e-2, 5e-3, 2.5e-3), n=400))
        assert res.passed
        assert res.summary["max_ratio"] <= res.summary["C_R"]
        assert res.summary["ratio_spread"] == pytest.approx(1.0, abs=1e-6)

    def test_pointwise_margins_nonnegative_for_play(self):
        prob = get_benchmark("play").problem(400)
        t1 = solve(prob)
        np.testing.assert_array_less(-1e-9, lipschitz_pointwise_margins(prob, t1, prob, t1))

    def test_lipschitz_constant_finite(self):
        C = explicit_lipschitz_constant(get_benchmark("star").problem(500))
        assert np.isfinite(C) and C > 1

    def test_implicit_study(self):
        res = implicit_lipschitz_study(StudyConfig("implicit", scales=(1e-2, 5e-3), n=100))
        assert res.passed
        assert res.summary["max_ratio"] <= res.summary["K_R"]

    def test_order_play(self):
        res = convergence_order_study("play", [100, 200, 400])
        assert res.passed
        for o in res.summary["w11_orders"]:
            assert o == pytest.approx(1.0, abs=0.1)
        assert res.rows[0]["w11_order"] is None

    def test_order_ball_with_reference(self):
        res = convergence_order_study("ball", [50, 100], reference_n=400)
        assert res.summary["reference_n"] == 400
        assert len(res.rows) == 2
