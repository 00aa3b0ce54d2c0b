"""Unit tests for the pH neutralization simulator and signal scaling."""

import numpy as np
import pytest

from lstmpc import plant
from lstmpc.errors import UnphysicalStateError

# Published nominal operating point of the benchmark tank.
NOMINAL_STATE = np.array([-4.32e-4, 5.28e-4, 14.0])


@pytest.fixture(scope="module")
def params():
    return plant.PhParams()


class TestEquilibrium:
    def test_matches_nominal_state(self, params):
        eq = plant.equilibrium(params)
        np.testing.assert_allclose(eq, NOMINAL_STATE, atol=5e-6)

    def test_is_fixed_point_of_dynamics(self, params):
        eq = plant.equilibrium(params, u_phi=14.2, d_phi=0.6)
        np.testing.assert_allclose(plant._xdot(params, eq, 14.2, 0.6),
                                   np.zeros(3), atol=1e-15)


class TestPlantStep:
    def test_nominal_drift_over_1000s(self, params):
        x = NOMINAL_STATE.copy()
        for _ in range(100):
            x = plant.plant_step(params, x, 15.6, 0.55, 10.0)
        assert np.max(np.abs(x - NOMINAL_STATE)) < 1e-3

    def test_level_decay_decoupled(self, params):
        # with all inflows zero only the outflow term drives the level and
        # the concentration states are frozen
        x = NOMINAL_STATE.copy()
        p0 = plant.PhParams(q1=0.0)
        dx0 = plant._xdot(p0, x, 0.0, 0.0)
        np.testing.assert_allclose(dx0[:2], 0.0, atol=1e-18)
        outflow = p0.C_v4 * (x[2] + p0.z) ** p0.n_exp
        assert dx0[2] == pytest.approx(-outflow / p0.A1, abs=1e-15)

    def test_rk4_richardson_ratio(self, params):
        x0 = NOMINAL_STATE + np.array([2e-4, -1e-4, 1.0])
        dt = 40.0
        coarse = plant.plant_step(params, x0, 16.2, 0.55, dt, substeps=1)
        fine = plant.plant_step(params, x0, 16.2, 0.55, dt, substeps=2)
        finest = plant.plant_step(params, x0, 16.2, 0.55, dt, substeps=4)
        # order-4 scheme: halving the step divides the error by ~16, so the
        # successive-difference ratio sits near 16 as well
        ratio = np.linalg.norm(coarse - fine) / np.linalg.norm(fine - finest)
        assert 12.0 <= ratio <= 20.0

    def test_input_saturation(self, params):
        # inputs outside [12.5, 17] are clamped: same result as the boundary
        x = NOMINAL_STATE.copy()
        lo = plant.plant_step(params, x, 5.0, 0.55, 10.0)
        lo_ref = plant.plant_step(params, x, 12.5, 0.55, 10.0)
        np.testing.assert_array_equal(lo, lo_ref)

    def test_rejects_nonpositive_level(self, params):
        with pytest.raises(UnphysicalStateError):
            plant.plant_step(params, [0.0, 0.0, -1.0], 15.6, 0.55, 10.0)


class TestMeasurePh:
    def test_nominal_ph(self, params):
        assert plant.measure_ph(params, NOMINAL_STATE) == pytest.approx(7.0, abs=0.01)

    def test_strong_acid_limit(self, params):
        x = np.array([1e-3, 0.0, 14.0])
        assert plant.measure_ph(params, x) == pytest.approx(3.0, abs=0.01)

    def test_charge_balance_residual(self, params):
        rng = np.random.default_rng(6)
        for _ in range(50):
            x = np.array([rng.uniform(-2e-3, 2e-3), rng.uniform(0.0, 2e-3), 14.0])
            ph = plant.measure_ph(params, x)
            assert abs(plant.charge_balance(params, x, ph)) < 1e-12

    def test_single_root_bracket(self, params):
        # the titration residual is monotone in pH, so the root is unique
        x = NOMINAL_STATE
        phs = np.linspace(0.0, 14.0, 200)
        vals = [plant.charge_balance(params, x, ph) for ph in phs]
        assert np.sum(np.diff(np.sign(vals)) != 0) == 1

    def test_monotone_in_alkaline_flow(self, params):
        phs = []
        for u in (13.0, 14.5, 16.0, 17.0):
            eq = plant.equilibrium(params, u_phi=u)
            phs.append(plant.measure_ph(params, eq))
        assert all(a < b for a, b in zip(phs, phs[1:]))

    def test_rejects_no_sign_change(self, params):
        with pytest.raises(UnphysicalStateError):
            plant.measure_ph(params, np.array([2.0, 0.0, 14.0]))


class TestNormalizer:
    def test_endpoints(self):
        nrm = plant.Normalizer(12.5, 17.0, 6.0, 9.0)
        assert nrm.normalize_u(12.5) == -1.0
        assert nrm.normalize_u(17.0) == 1.0
        assert nrm.normalize_y(6.0) == -1.0
        assert nrm.normalize_y(9.0) == 1.0

    def test_round_trip(self):
        nrm = plant.Normalizer(12.5, 17.0, 5.0, 10.0)
        rng = np.random.default_rng(0)
        v = rng.uniform(-1.0, 1.0, 100)
        np.testing.assert_allclose(nrm.normalize_u(nrm.denormalize_u(v)), v, atol=1e-12)
        np.testing.assert_allclose(nrm.normalize_y(nrm.denormalize_y(v)), v, atol=1e-12)

    def test_rejects_bad_ranges(self):
        with pytest.raises(ValueError):
            plant.Normalizer(2.0, 1.0, 0.0, 1.0)
