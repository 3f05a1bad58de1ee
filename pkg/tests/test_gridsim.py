import numpy as np
import pytest

from icagan_bsd import gridsim
from icagan_bsd.exceptions import DataError, ShapeError
from icagan_bsd.gridsim import AttackPlan, Gmm, GridModel, MeasurementSeries


@pytest.fixture(scope="module")
def bus4():
    return GridModel.load("fixtures/bus4.json")


def two_meter():
    return GridModel(np.array([[1.0], [1.0]]), np.ones(2), ())


class TestFixtures:
    def test_bus4_shape(self, bus4):
        assert (bus4.m, bus4.n) == (10, 3)
        assert bus4.is_observable()

    def test_bus30(self):
        m = GridModel.load("bus30")
        assert m.n == 29 and m.m > m.n and m.is_observable()

    def test_unknown_path(self, tmp_path):
        with pytest.raises(DataError):
            GridModel.load(tmp_path / "nope.json")

    def test_json_round_trip(self, bus4, tmp_path):
        bus4.save(tmp_path / "g.json")
        back = GridModel.load(tmp_path / "g.json")
        assert np.array_equal(back.H, bus4.H) and back.channels == bus4.channels

    def test_invalid_sigma(self):
        with pytest.raises(DataError):
            GridModel(np.eye(2), np.array([1.0, 0.0]), ())

    def test_dc_flows_sum_to_injection(self):
        # injection at a bus equals the sum of flows leaving it
        m = gridsim.dc_model(3, [(0, 1), (1, 2), (0, 2)], [2.0, 3.0, 4.0], [1])
        assert np.allclose(m.H[3], m.H[1] - m.H[0])


class TestSimulate:
    def test_noiseless_constant_state(self, bus4):
        tiny = GridModel(bus4.H, np.full(bus4.m, 1e-300), bus4.channels)
        s = np.array([0.1, -0.2, 0.05])
        out = gridsim.simulate(tiny, 50, seed=0, phi=1.0, innovation=0.0, s0=s)
        assert np.allclose(out.values, bus4.H @ s, rtol=0, atol=1e-15)

    def test_lag1_autocorrelation(self, bus4):
        v = gridsim.simulate(bus4, 20_000, seed=1).values
        for ch in v.T:
            x = ch - ch.mean()
            assert np.dot(x[1:], x[:-1]) / np.dot(x, x) > 0.9

    def test_deterministic(self, bus4):
        a = gridsim.simulate(bus4, 100, seed=3).values
        b = gridsim.simulate(bus4, 100, seed=3).values
        assert np.array_equal(a, b)

    def test_csv_round_trip(self, bus4, tmp_path):
        s = gridsim.simulate(bus4, 30, seed=4)
        s.to_csv(tmp_path / "d.csv")
        text = (tmp_path / "d.csv").read_text().splitlines()
        assert text[0] == "t," + ",".join(f"ch_{i}" for i in range(10))
        back = MeasurementSeries.from_csv(tmp_path / "d.csv")
        assert np.array_equal(back.values, s.values)


class TestGmm:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(DataError):
            Gmm((0.5, 0.4), (0, 1), (1, 1))

    def test_moments(self):
        g = Gmm.symmetric(5.0, 1.0)
        assert g.mean == 0 and g.var == pytest.approx(26.0)
        x = g.sample(np.random.default_rng(0), 200_000)
        assert abs(x.mean()) < 0.05
        assert x.var() == pytest.approx(26.0, rel=0.02)


class TestInjectBad:
    def test_degenerate_mixture_is_identity(self, bus4):
        s = gridsim.simulate(bus4, 200, seed=0)
        out = gridsim.inject_bad(s, [0, 3], Gmm((1.0,), (0.0,), (0.0,)), 10, 50, seed=1)
        assert np.array_equal(out.values, s.values)

    def test_locality(self, bus4):
        s = gridsim.simulate(bus4, 200, seed=0)
        out = gridsim.inject_bad(s, [1, 4, 5, 8], Gmm.symmetric(), 20, 80, seed=1, scale=bus4.sigma)
        untouched = np.ones_like(s.values, bool)
        untouched[20:100][:, [1, 4, 5, 8]] = False
        assert np.array_equal(out.values[untouched], s.values[untouched])
        assert not np.any(out.values[20:100][:, [1, 4, 5, 8]] == s.values[20:100][:, [1, 4, 5, 8]])

    def test_mixture_moments(self):
        s = MeasurementSeries(np.random.default_rng(0).normal(size=(100_000, 1)))
        out = gridsim.inject_bad(s, [0], Gmm.symmetric(), 0, 100_000, seed=2)
        d = out.values[:, 0]
        assert abs(d.mean() - s.values.mean()) < 0.06
        assert d.var() == pytest.approx(s.values.var() + 26.0, rel=0.02)

    @pytest.mark.parametrize("channels", [[], [1, 1], [10]])
    def test_bad_channels(self, bus4, channels):
        s = gridsim.simulate(bus4, 50, seed=0)
        with pytest.raises(DataError):
            gridsim.inject_bad(s, channels, Gmm.symmetric(), 0, 10)

    def test_window_outside(self, bus4):
        s = gridsim.simulate(bus4, 50, seed=0)
        with pytest.raises(DataError):
            gridsim.inject_bad(s, [0], Gmm.symmetric(), 45, 10)


class TestUnobservableAttack:
    def test_residual_invariance_and_state_shift(self, bus4):
        rng = np.random.default_rng(0)
        s = gridsim.simulate(bus4, 100, seed=1)
        plan = AttackPlan.random(bus4, rng)
        out = gridsim.unobservable_attack(bus4, plan, s, 0, 100, seed=2)
        x0 = gridsim.wls(bus4, s.values)
        x1 = gridsim.wls(bus4, out.values)
        w = (out.values - s.values) @ bus4.H @ plan.delta / np.dot(bus4.H @ plan.delta, bus4.H @ plan.delta)
        assert np.allclose(x1 - x0, np.outer(w, plan.delta), rtol=0, atol=1e-9)
        for t in range(100):
            J0 = gridsim.jx(bus4, s.values[t], x0[t])
            J1 = gridsim.jx(bus4, out.values[t], x1[t])
            assert abs(J1 - J0) / max(J0, 1.0) <= 1e-9

    def test_zero_delta_rejected(self, bus4):
        s = gridsim.simulate(bus4, 10, seed=1)
        with pytest.raises(DataError):
            gridsim.unobservable_attack(bus4, AttackPlan(np.zeros(3), Gmm.symmetric()), s, 0, 5)

    def test_zero_magnitude_unchanged(self, bus4):
        s = gridsim.simulate(bus4, 10, seed=1)
        plan = AttackPlan(np.ones(3), Gmm((1.0,), (0.0,), (0.0,)))
        assert np.array_equal(gridsim.unobservable_attack(bus4, plan, s, 0, 10).values, s.values)

    def test_largest_channel_scaled_to_sigma(self, bus4):
        plan = AttackPlan.random(bus4, np.random.default_rng(3))
        assert np.max(np.abs(bus4.H @ plan.delta) / bus4.sigma) == pytest.approx(1.0)


class TestWls:
    def test_consistent(self):
        assert gridsim.wls(two_meter(), [1.0, 1.0]) == pytest.approx([1.0])

    def test_average(self):
        assert gridsim.wls(two_meter(), [1.0, 2.0]) == pytest.approx([1.5])

    def test_noiseless_recovery(self, bus4):
        x0 = np.array([0.3, -0.1, 0.2])
        assert np.allclose(gridsim.wls(bus4, bus4.H @ x0), x0)

    def test_rank_deficient(self):
        m = GridModel(np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]), np.ones(3), ())
        with pytest.raises(DataError):
            gridsim.wls(m, np.ones(3))

    def test_linearity(self, bus4):
        rng = np.random.default_rng(0)
        z, d = rng.normal(size=10), rng.normal(size=10)
        assert np.allclose(gridsim.wls(bus4, z + d), gridsim.wls(bus4, z) + gridsim.wls(bus4, d))

    def test_wrong_width(self, bus4):
        with pytest.raises(ShapeError):
            gridsim.wls(bus4, np.ones(9))


class TestJx:
    def test_noiseless_block(self, bus4):
        Z = np.random.default_rng(0).normal(size=(80, 3)) @ bus4.H.T
        r = gridsim.jx_detect(bus4, Z)
        assert r.label == "anomaly_free" and r.removed == () and r.score == pytest.approx(0, abs=1e-12)

    def test_offset_channel_removed_first(self, bus4):
        s = gridsim.simulate(bus4, 80, seed=3).values.copy()
        s[:, 6] += 100 * bus4.sigma[6]
        r = gridsim.jx_detect(bus4, s)
        assert r.label == "anomaly" and r.removed[0] == 6

    def test_null_mean_matches_df(self, bus4):
        s = gridsim.simulate(bus4, 10_000 * 8, seed=5).values.reshape(10_000, 8, 10)
        J = gridsim.block_j(bus4, s)
        df = (bus4.m - bus4.n) * 8
        assert abs(J.mean() / df - 1) < 0.03

    def test_unobservable_when_all_removed(self):
        m = two_meter()
        r = gridsim.jx_detect(m, np.array([[0.0, 100.0]]))
        assert r.label == "anomaly" and r.unobservable

    def test_attack_detection_at_chance(self, bus4):
        rng = np.random.default_rng(11)
        hits = 0
        trials = 1000
        clean = gridsim.simulate(bus4, trials * 20, seed=12)
        for k in range(trials):
            plan = AttackPlan.random(bus4, rng)
            out = gridsim.unobservable_attack(bus4, plan, clean, k * 20, 20, seed=k)
            hits += gridsim.jx_detect(bus4, out.values[k * 20 : (k + 1) * 20]).label == "anomaly"
        assert abs(hits / trials - 0.05) <= 0.05
