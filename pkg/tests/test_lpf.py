import numpy as np
import numpy.testing as npt
import pytest

from sechyp.errors import NearSingularity, NoReturn, SingularPoint
from sechyp.flowcalc import integrate
from sechyp.lpf import (NormalFrame, SectionSpec, direct_lpf_factor, lpf_along,
                        normal_frame, project_normal, recover_ambient,
                        return_map)
from sechyp.models import (make_geometric_lorenz_suspension,
                           make_linear_field)
from sechyp.util import orthonormal_complement


class TestNormalFrame:
    def test_orthonormality(self, lorenz):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.uniform(-15, 15, 3)
            fr = normal_frame(lorenz, x)
            g = fr.normal_basis.T @ fr.normal_basis
            npt.assert_allclose(g, np.eye(2), atol=1e-12)
            npt.assert_allclose(fr.normal_basis.T @ fr.flow_dir, 0.0, atol=1e-12)

    def test_near_singularity_raises(self, lorenz):
        with pytest.raises(NearSingularity):
            normal_frame(lorenz, np.zeros(3) + 1e-12)


class TestProjectNormal:
    def test_already_normal(self):
        d = np.array([1.0, 0.0, 0.0])
        fr = NormalFrame(point=np.zeros(3), flow_dir=d,
                         normal_basis=orthonormal_complement(d))
        coords = project_normal(fr, np.array([0.0, 1.0, 0.0]))
        npt.assert_allclose(np.linalg.norm(coords), 1.0, atol=1e-14)
        npt.assert_allclose(recover_ambient(fr, coords), [0.0, 1.0, 0.0],
                            atol=1e-14)

    def test_flow_direction_killed(self):
        d = np.array([0.6, 0.8, 0.0])
        fr = NormalFrame(point=np.zeros(3), flow_dir=d,
                         normal_basis=orthonormal_complement(d))
        npt.assert_allclose(project_normal(fr, d), 0.0, atol=1e-14)

    def test_gram_projection_formula(self):
        d = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
        fr = NormalFrame(point=np.zeros(3), flow_dir=d,
                         normal_basis=orthonormal_complement(d))
        coords = project_normal(fr, np.array([1.0, 0.0, 0.0]))
        npt.assert_allclose(recover_ambient(fr, coords), [0.5, -0.5, 0.0],
                            atol=1e-14)


class TestLPFAlong:
    def test_identity_at_zero_span(self, lorenz_orbit):
        lp = lpf_along(lorenz_orbit)
        m, ls = lp.propagator(5, 5)
        npt.assert_allclose(m * np.exp(ls), np.eye(2))

    def test_circular_flow_period_contraction(self):
        # planar rotation with decoupled vertical contraction: over one
        # period the LPF singular values are 1 and e^{-2 pi}
        circ = make_linear_field([[0.0, -1.0, 0.0],
                                  [1.0, 0.0, 0.0],
                                  [0.0, 0.0, -1.0]], name="circular")
        orb = integrate(circ, [1.0, 0.0, 0.0], 2 * np.pi)
        lp = lpf_along(orb)
        m, ls = lp.propagator(0, lp.n_steps)
        sv = np.linalg.svd(m, compute_uv=False) * np.exp(ls)
        npt.assert_allclose(sv, [1.0, np.exp(-2 * np.pi)], rtol=1e-8)

    def test_cocycle_relation(self, lorenz_orbit):
        # composed per-step factors against the endpoint-frame factor
        # built from the tangent cocycle alone
        lp = lpf_along(lorenz_orbit)
        rng = np.random.default_rng(41)
        for _ in range(100):
            i = int(rng.integers(0, lorenz_orbit.n_steps - 200))
            span = float(rng.uniform(0.5, 8.0))
            j = lorenz_orbit.index_at(lorenz_orbit.times[i] + span)
            m1, s1 = lp.propagator(i, j)
            m2, s2 = direct_lpf_factor(lp, i, j)
            m1, m2 = m1 * np.exp(s1), m2 * np.exp(s2)
            assert np.linalg.norm(m1 - m2) / np.linalg.norm(m2) < 1e-6

    def test_projection_is_contraction(self, lorenz_orbit):
        # ||P^t|| <= ||DX_t|| step by step
        lp = lpf_along(lorenz_orbit)
        rng = np.random.default_rng(43)
        for k in rng.integers(0, lorenz_orbit.n_steps, 200):
            p_norm = np.linalg.norm(lp.lpf_factors[k], 2)
            d_norm = np.linalg.norm(lorenz_orbit.step_cocycles[k], 2)
            assert p_norm <= d_norm * (1 + 1e-12)

    def test_frame_independence_of_singular_values(self, lorenz_orbit):
        # a different admissible frame family (seeded rotation of the
        # initial completion) leaves composed factors orthogonally
        # equivalent: singular values match over any span
        lp1 = lpf_along(lorenz_orbit)
        lp2 = lpf_along(lorenz_orbit, frame_seed=99)
        assert not np.allclose(lp1.frames[0], lp2.frames[0])
        for i, j in ((100, 900), (40, 2000), (0, lorenz_orbit.n_steps)):
            m1, s1 = lp1.propagator(i, j)
            m2, s2 = lp2.propagator(i, j)
            sv1 = np.linalg.svd(m1, compute_uv=False)
            sv2 = np.linalg.svd(m2, compute_uv=False)
            # compare the values representable above the float floor
            top = sv1[0]
            for a, b in zip(sv1, sv2):
                if a > top * 1e-12:
                    assert abs(a * np.exp(s1) - b * np.exp(s2)) / (a * np.exp(s1)) < 1e-9

    def test_near_singularity_raises(self, lorenz):
        orb = integrate(lorenz, np.zeros(3), 1.0)
        with pytest.raises(NearSingularity):
            lpf_along(orb)


class TestReturnMap:
    def test_constant_roof_times(self, intermittent_map):
        sus = make_geometric_lorenz_suspension(intermittent_map,
                                               roof_log_coeff=0.0, tau0=1.0)
        res = return_map(sus, "suspension-canonical", [0.3, 0.1], 7)
        npt.assert_allclose(res.times, 1.0)

    def test_log_roof_value(self, intermittent_suspension):
        # tau(x) = -log|x| + 1 evaluates to 2 at x = e^{-1}
        res = return_map(intermittent_suspension, "suspension-canonical",
                         [np.exp(-1.0), 0.0], 1)
        npt.assert_allclose(res.times[0], 2.0, rtol=1e-14)

    def test_first_image_hits_singular_line(self, intermittent_suspension):
        # R(x, y) = (f(x), g(x, y)) with f(0.25) = 0 and g(0.25, 0) = 1/2
        res = return_map(intermittent_suspension, "suspension-canonical",
                         [0.25, 0.0], 1)
        npt.assert_allclose(res.points[0], [0.0, 0.5], atol=1e-15)
        with pytest.raises(SingularPoint):
            return_map(intermittent_suspension, "suspension-canonical",
                       [0.25, 0.0], 2)

    def test_lorenz_section_crossings(self, lorenz):
        sec = SectionSpec(point=np.array([0.0, 0.0, 27.0]),
                          normal=np.array([0.0, 0.0, 1.0]))
        res = return_map(lorenz, sec, [1.0, 1.0, 1.0], 6)
        assert len(res.points) == 6
        for p, t in zip(res.points, res.times):
            assert abs(p[2] - 27.0) < 1e-8
        assert all(t2 > t1 for t1, t2 in zip(res.times, res.times[1:]))
        # prescribed orientation: upward flux at each crossing
        for p in res.points:
            assert lorenz.eval(p)[2] > 0

    def test_no_return_raises(self, lorenz):
        sec = SectionSpec(point=np.array([0.0, 0.0, 500.0]),
                          normal=np.array([0.0, 0.0, 1.0]))
        with pytest.raises(NoReturn):
            return_map(lorenz, sec, [1.0, 1.0, 1.0], 1, t_budget=20.0)
