import numpy as np
import numpy.testing as npt
import pytest
import scipy.linalg as sla

from sechyp.errors import Blowup, DegenerateBasis
from sechyp.flowcalc import (OrbitSegment, StepControl, batch_rk4, integrate,
                             load_orbit_cache, orbit_to_csv,
                             restrict_cocycle, save_orbit_cache, wedge2_of,
                             wedge_cocycle)
from sechyp.models import make_linear_saddle


class TestIntegrate:
    def test_linear_saddle_closed_form(self):
        m = make_linear_saddle([1.0, -2.0])
        orb = integrate(m, [1.0, 1.0], 1.0)
        expected = np.array([np.e, np.exp(-2.0)])
        rel = np.abs(orb.states[-1] - expected) / expected
        assert rel.max() < 1e-8

    def test_equilibrium_orbit_constant(self, lorenz):
        orb = integrate(lorenz, np.zeros(3), 2.0)
        assert np.max(np.abs(orb.states)) < 1e-12
        # step factors are matrix exponentials of the linearization
        j = lorenz.jacobian(np.zeros(3))
        k = orb.n_steps // 2
        h = orb.times[k + 1] - orb.times[k]
        npt.assert_allclose(orb.step_cocycles[k], sla.expm(h * j), atol=1e-9)

    def test_lorenz_stays_in_reference_box(self, lorenz):
        # reference run at rtol 1e-12 gave x in [-17.3, 19.6],
        # y in [-22.8, 27.2], z in [0.96, 47.9]; assert the documented
        # envelope |x|,|y| <= 30, 0 <= z <= 60 plus a 10%-inflated
        # regression band around the reference box
        orb = integrate(lorenz, [1.0, 1.0, 1.0], 50.0)
        lo = orb.states.min(axis=0)
        hi = orb.states.max(axis=0)
        assert np.all(np.abs(orb.states[:, :2]) <= 30.0)
        assert np.all((orb.states[:, 2] >= 0.0) & (orb.states[:, 2] <= 60.0))
        assert lo[0] > -19.0 and hi[0] < 21.6
        assert lo[1] > -25.1 and hi[1] < 29.9
        assert lo[2] > 0.8 and hi[2] < 52.7

    def test_monotone_grid_and_shapes(self, lorenz_orbit):
        assert np.all(np.diff(lorenz_orbit.times) > 0)
        n = lorenz_orbit.n_steps
        assert lorenz_orbit.states.shape == (n + 1, 3)
        assert lorenz_orbit.step_cocycles.shape == (n, 3, 3)
        assert lorenz_orbit.renorm_log.shape == (n,)

    def test_blowup(self):
        m = make_linear_saddle([2.0])
        with pytest.raises(Blowup):
            integrate(m, [1.0], 20.0, StepControl(bound=1e4))

    def test_rejects_bad_inputs(self, lorenz):
        with pytest.raises(ValueError):
            integrate(lorenz, [1.0, 1.0, 1.0], 0.0)
        with pytest.raises(ValueError):
            integrate(lorenz, [np.nan, 1.0, 1.0], 1.0)

    def test_determinism_bit_identical(self, lorenz):
        a = integrate(lorenz, [1.0, 1.0, 1.0], 5.0)
        b = integrate(lorenz, [1.0, 1.0, 1.0], 5.0)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.step_cocycles, b.step_cocycles)


class TestCocycleProperties:
    def test_composition_against_restarted_integration(self, lorenz, lorenz_orbit):
        # compose factors over [s, t] and compare against a fresh
        # integration started at x(s) over the same span
        rng = np.random.default_rng(17)
        for _ in range(12):
            i = int(rng.integers(0, lorenz_orbit.n_steps // 2))
            j = int(rng.integers(i + 10, lorenz_orbit.n_steps))
            span = lorenz_orbit.times[j] - lorenz_orbit.times[i]
            if span > 12.0:
                j = lorenz_orbit.index_at(lorenz_orbit.times[i] + 12.0)
                span = lorenz_orbit.times[j] - lorenz_orbit.times[i]
            fresh = integrate(lorenz, lorenz_orbit.states[i], span)
            m1, s1 = lorenz_orbit.propagator(i, j)
            m2, s2 = fresh.propagator(0, fresh.n_steps)
            m1, m2 = m1 * np.exp(s1), m2 * np.exp(s2)
            assert np.linalg.norm(m1 - m2) / np.linalg.norm(m2) < 1e-6

    def test_stored_factor_associativity(self, lorenz_orbit):
        rng = np.random.default_rng(23)
        n = lorenz_orbit.n_steps
        for _ in range(100):
            a, b, c = sorted(rng.integers(0, n, 3))
            if a == b or b == c:
                continue
            m_ab, s_ab = lorenz_orbit.propagator(a, b)
            m_bc, s_bc = lorenz_orbit.propagator(b, c)
            m_ac, s_ac = lorenz_orbit.propagator(a, c)
            lhs = (m_bc @ m_ab) * np.exp(s_ab + s_bc)
            rhs = m_ac * np.exp(s_ac)
            assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-7

    def test_liouville_constant_divergence(self, lorenz_orbit):
        # log det of the cocycle equals the integrated divergence,
        # which is exactly -(41/3) T for the Lorenz field
        t = lorenz_orbit.t_span
        ld = lorenz_orbit.log_det()
        assert abs(ld + 41.0 / 3.0 * t) / (41.0 / 3.0 * t) < 1e-6


class TestWedge:
    def test_diagonal(self):
        npt.assert_allclose(wedge2_of(np.diag([2.0, 3.0, 5.0])),
                            np.diag([6.0, 10.0, 15.0]))

    def test_identity(self):
        npt.assert_allclose(wedge2_of(np.eye(4)), np.eye(6))

    def test_determinant_squared_3x3(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            m = rng.standard_normal((3, 3))
            lhs = np.linalg.det(wedge2_of(m))
            rhs = np.linalg.det(m) ** 2
            assert abs(lhs - rhs) / max(abs(rhs), 1e-12) < 1e-10

    def test_multiplicative(self):
        rng = np.random.default_rng(31)
        for _ in range(1000):
            n = int(rng.integers(2, 5))
            a = rng.standard_normal((n, n))
            b = rng.standard_normal((n, n))
            lhs = wedge2_of(a @ b)
            rhs = wedge2_of(a) @ wedge2_of(b)
            assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-9

    def test_rejects_scalars(self):
        with pytest.raises(ValueError):
            wedge2_of(np.array([[2.0]]))


class TestWedgeCocycle:
    def test_saddle_pairwise_sums(self):
        # one-step wedge factor of exp(t diag(2,-3,-0.5)) is
        # diag(e^{-1}, e^{1.5}, e^{-3.5}) at t = 1
        m = make_linear_saddle([2.0, -3.0, -0.5])
        orb = integrate(m, np.full(3, 1e-8), 1.0)
        wc = wedge_cocycle(orb)
        mat, ls = wc.propagator(0, wc.wedge_factors.shape[0])
        expected = np.diag(np.exp([-1.0, 1.5, -3.5]))
        npt.assert_allclose(mat * np.exp(ls), expected, rtol=1e-7, atol=1e-9)

    def test_matches_minor_oracle(self, lorenz_orbit):
        wc = wedge_cocycle(lorenz_orbit)
        rng = np.random.default_rng(37)
        for k in rng.integers(0, lorenz_orbit.n_steps, 50):
            oracle = wedge2_of(lorenz_orbit.step_cocycles[k])
            got = wc.wedge_factors[k] * np.exp(
                wc.renorm_log[k] - 2 * lorenz_orbit.renorm_log[k])
            assert np.linalg.norm(got - oracle) / np.linalg.norm(oracle) < 1e-6

    def test_zero_length_orbit(self, lorenz):
        orb = OrbitSegment(model=lorenz, times=np.array([0.0]),
                           states=np.zeros((1, 3)),
                           step_cocycles=np.zeros((0, 3, 3)),
                           renorm_log=np.zeros(0))
        wc = wedge_cocycle(orb)
        assert wc.wedge_factors.shape == (0, 3, 3)


class TestRestrictCocycle:
    def test_invariant_axis(self, saddle_orbit):
        # span{e2} is exactly invariant; restricted factors are e^{-3 dt}
        res = restrict_cocycle(saddle_orbit.step_cocycles,
                               np.eye(3)[:, [1]],
                               transport=np.tile(np.eye(3)[:, [1]],
                                                 (saddle_orbit.n_steps + 1, 1, 1)))
        dts = np.diff(saddle_orbit.times)
        npt.assert_allclose(res.factors[:, 0, 0], np.exp(-3.0 * dts), rtol=1e-9)
        assert res.max_defect < 1e-12

    def test_full_space_preserves_singular_values(self, lorenz_orbit):
        res = restrict_cocycle(lorenz_orbit.step_cocycles[:200], np.eye(3))
        for k in range(0, 200, 25):
            sv_r = np.linalg.svd(res.factors[k], compute_uv=False)
            sv_a = np.linalg.svd(lorenz_orbit.step_cocycles[k], compute_uv=False)
            npt.assert_allclose(sv_r, sv_a, rtol=1e-10)

    def test_estimated_stable_bundle_defect(self, lorenz_seq_60):
        # pushing the estimated E^s forward must leak < 1e-3 relative
        _, defects = lorenz_seq_60.restricted("s")
        assert defects.max() < 1e-3

    def test_degenerate_basis_raises(self):
        factors = np.tile(np.diag([1.0, 1e-10, 1.0]), (12, 1, 1))
        with pytest.raises(DegenerateBasis):
            restrict_cocycle(factors, np.eye(3)[:, :2])


class TestOrbitIO:
    def test_csv_columns(self, lorenz_orbit, tmp_path):
        path = tmp_path / "orbit.csv"
        orbit_to_csv(lorenz_orbit, path, header_comment="test")
        lines = path.read_text().splitlines()
        assert lines[0] == "# test"
        assert lines[1] == "t,x0,x1,x2,renorm_log"
        assert len(lines) == lorenz_orbit.n_steps + 3

    def test_cache_roundtrip(self, lorenz_orbit, tmp_path):
        path = tmp_path / "orbit.sechyp"
        save_orbit_cache(lorenz_orbit, path)
        assert path.read_bytes()[:7] == b"SECHYP1"
        back = load_orbit_cache(path)
        assert np.array_equal(back.times, lorenz_orbit.times)
        assert np.array_equal(back.states, lorenz_orbit.states)
        assert np.array_equal(back.step_cocycles, lorenz_orbit.step_cocycles)

    def test_cache_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTSECH" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_orbit_cache(path)

    def test_csv_deterministic_bytes(self, lorenz, tmp_path):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        orbit_to_csv(integrate(lorenz, [1.0, 1.0, 1.0], 3.0), p1)
        orbit_to_csv(integrate(lorenz, [1.0, 1.0, 1.0], 3.0), p2)
        assert p1.read_bytes() == p2.read_bytes()


def test_batch_rk4_matches_adaptive(lorenz):
    x = np.array([[1.0, 1.0, 1.0], [-3.0, 2.0, 20.0]])
    end = batch_rk4(lorenz, x, 0.002, 1000)
    ref0 = integrate(lorenz, x[0], 2.0).states[-1]
    ref1 = integrate(lorenz, x[1], 2.0).states[-1]
    assert np.linalg.norm(end[0] - ref0) < 1e-6
    assert np.linalg.norm(end[1] - ref1) < 1e-6
