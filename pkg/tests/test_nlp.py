import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbsqp.models import box1d_ocp, double_integrator_ocp, eqqp_ocp, hiv_ocp
from qbsqp.nlp import (
    BarrierConfig,
    ConfigurationError,
    InfeasiblePointError,
    OcpDefinition,
    build_qp,
    eval_barrier_objective,
    fd_jacobian,
    rollout,
    transcribe,
    validate_derivatives,
)


def scalar_linear_ocp(horizon=2):
    """f(x, u) = x + u with quadratic cost; n = m = 1."""
    return OcpDefinition(
        n=1, m=1, horizon=horizon, x_init=np.array([1.0]),
        dynamics=lambda x, u: x + u,
        dynamics_jac_x=lambda x, u: np.ones((1, 1)),
        dynamics_jac_u=lambda x, u: np.ones((1, 1)),
        stage_cost=lambda x, u: 0.5 * float(x[0] ** 2 + u[0] ** 2),
        terminal_cost=lambda x: 0.5 * float(x[0] ** 2),
        name="scalar_linear",
    )


class TestTranscribe:
    def test_dimension_formulas_scalar(self):
        nlp = transcribe(scalar_linear_ocp(horizon=2))
        assert nlp.n_z == 2 * 2 + 1 == 5
        assert nlp.m_eq == 3

    def test_dimension_formulas_hiv(self):
        nlp = transcribe(hiv_ocp())
        assert nlp.n_z == 60 * 5 + 3 == 303
        assert nlp.m_eq == 61 * 3
        assert nlp.n_ineq == 60 * 7 + 3

    def test_rollout_is_exactly_feasible(self):
        nlp = transcribe(scalar_linear_ocp(horizon=4))
        rng = np.random.default_rng(0)
        for _ in range(5):
            z = rollout(nlp, rng.standard_normal((4, 1)))
            assert np.linalg.norm(nlp.equalities(z)) == 0.0

    def test_layout_is_stagewise_stacked(self):
        nlp = transcribe(scalar_linear_ocp(horizon=2))
        xs = np.array([[1.0], [2.0], [3.0]])
        us = np.array([[10.0], [20.0]])
        z = nlp.join(xs, us)
        np.testing.assert_array_equal(z, [1.0, 10.0, 2.0, 20.0, 3.0])
        xs2, us2 = nlp.split(z)
        np.testing.assert_array_equal(xs, xs2)
        np.testing.assert_array_equal(us, us2)

    def test_equality_ordering_pin_first(self):
        nlp = transcribe(scalar_linear_ocp(horizon=2))
        z = np.array([5.0, 0.0, 0.0, 0.0, 0.0])
        g = nlp.equalities(z)
        assert g[0] == 5.0 - 1.0  # x_0 - x_init
        assert g[1] == 0.0 - 5.0  # x_1 - (x_0 + u_0)

    def test_dimension_mismatch_names_offender(self):
        bad = OcpDefinition(
            n=2, m=1, horizon=2, x_init=np.zeros(2),
            dynamics=lambda x, u: np.zeros(3),  # wrong size
            stage_cost=lambda x, u: 0.0,
            terminal_cost=lambda x: 0.0,
        )
        with pytest.raises(ConfigurationError, match="dynamics"):
            transcribe(bad)

    def test_jacobian_fd_fallback(self):
        ocp = OcpDefinition(
            n=1, m=1, horizon=2, x_init=np.array([1.0]),
            dynamics=lambda x, u: x * x + u,
            stage_cost=lambda x, u: float(x[0] ** 2 + u[0] ** 2),
            terminal_cost=lambda x: float(x[0] ** 2),
        )
        nlp = transcribe(ocp)
        z = rollout(nlp, np.array([[0.1], [0.2]]))
        jac = nlp.equalities_jacobian(z)
        jac_fd = fd_jacobian(nlp.equalities, z)
        np.testing.assert_allclose(jac, jac_fd, atol=1e-7)


class TestBarrierObjective:
    def test_zero_cost_single_constraint(self):
        # F = 0, H = -1, mu = 0.1, log barrier -> 0.1 * (-log 1) = 0
        ocp = box1d_ocp()
        nlp = transcribe(ocp)
        z = np.array([0.0, 0.0, 0.0])  # H = u - 1 = -1
        cfg = BarrierConfig(mu=0.1)
        f_z = nlp.objective(z)
        val = eval_barrier_objective(nlp, z, cfg)
        assert val == pytest.approx(f_z + 0.0, abs=1e-15)

    def test_boundary_gives_infinity(self):
        nlp = transcribe(box1d_ocp())
        z = np.array([0.0, 1.0, 1.0])  # H = 0
        assert eval_barrier_objective(nlp, z, BarrierConfig(mu=0.1)) == float("inf")

    def test_hand_example_two_constraints(self):
        # F = 2, H = (-0.5, -2), mu = 1 -> 2 - log 0.5 - log 2 = 2
        ocp = OcpDefinition(
            n=1, m=1, horizon=1, x_init=np.zeros(1),
            dynamics=lambda x, u: np.array([u[0]]),
            stage_cost=lambda x, u: 2.0,
            terminal_cost=lambda x: 0.0,
            path_constraints=lambda x, u: np.array([u[0] - 0.5, u[0] - 2.0]),
            n_path=2,
        )
        nlp = transcribe(ocp)
        z = np.zeros(3)  # u = 0: H = (-0.5, -2)
        val = eval_barrier_objective(nlp, z, BarrierConfig(mu=1.0))
        assert val == pytest.approx(2.0, abs=1e-14)

    def test_barrier_monotone_and_affine_in_mu(self):
        nlp = transcribe(box1d_ocp())
        z = np.array([0.0, 0.5, 0.5])
        h = nlp.inequalities(z)
        slope = float(np.sum(-np.log(-h)))
        vals = [eval_barrier_objective(nlp, z, BarrierConfig(mu=m))
                for m in (0.5, 1.0, 2.0)]
        f0 = nlp.objective(z)
        for mu, v in zip((0.5, 1.0, 2.0), vals):
            assert v == pytest.approx(f0 + mu * slope, rel=1e-13)

    def test_log_barrier_derivative_signs(self):
        # phi(s) = -log(-s) increases toward the boundary and is convex:
        # phi'(s) = -1/s > 0 and phi''(s) = 1/s^2 > 0 on s < 0.
        from qbsqp.nlp import log_barrier, log_barrier_d1, log_barrier_d2
        s = -np.logspace(-6, 2, 50)
        assert np.all(log_barrier_d1(s) > 0.0)
        assert np.all(log_barrier_d2(s) > 0.0)
        assert log_barrier(np.array([-1e-12]))[0] > log_barrier(np.array([-1.0]))[0]


class TestBuildQp:
    def test_pure_quadratic_identity(self):
        # F = 0.5*||z||^2, no inequalities -> Q = I, g = z
        nlp = transcribe(eqqp_ocp())
        rng = np.random.default_rng(1)
        z = rng.standard_normal(3)
        qp = build_qp(nlp, z, BarrierConfig(mu=1.0))
        np.testing.assert_allclose(qp.Q, np.eye(3), atol=1e-14)
        np.testing.assert_allclose(qp.g, z, atol=1e-14)
        eigs = np.linalg.eigvalsh(qp.Q)
        assert eigs.min() > 0.0

    def test_scalar_barrier_terms(self):
        # H(z) = u - 1 at u = 0, mu = 1: phi''(-1) = 1 adds to Q_uu,
        # phi'(-1)*grad H = +1 * e_u... with phi'(s) = -1/s -> phi'(-1) = 1.
        nlp = transcribe(box1d_ocp())
        z = np.zeros(3)
        qp = build_qp(nlp, z, BarrierConfig(mu=1.0))
        sigma = qp.diagnostics["sigma"]
        # stage cost hess on u is 2; barrier adds 1
        assert qp.Q[1, 1] == pytest.approx(3.0 + sigma, rel=1e-12)
        # g_u = 2*(u-2) + mu*phi'(-1)*1 = -4 + 1
        assert qp.g[1] == pytest.approx(-3.0, rel=1e-12)

    def test_infeasible_point_rejected(self):
        nlp = transcribe(box1d_ocp())
        with pytest.raises(InfeasiblePointError):
            build_qp(nlp, np.array([0.0, 2.0, 2.0]), BarrierConfig(mu=1.0))

    def test_jacobian_band_structure_double_integrator(self):
        ocp, _ = double_integrator_ocp(horizon=3)
        nlp = transcribe(ocp)
        z = rollout(nlp, np.array([[0.3], [-0.2], [0.1]]))
        a = nlp.equalities_jacobian(z)

        # row block k touches only z_k and z_{k+1}
        n, m = 2, 1
        for k in range(3):
            rows = slice((k + 1) * n, (k + 2) * n)
            cols_ok = np.zeros(nlp.n_z, dtype=bool)
            off = nlp.stage_offsets[k]
            cols_ok[off:off + n + m] = True
            nxt = nlp.stage_offsets[k + 1]
            cols_ok[nxt:nxt + n] = True
            assert np.all(a[rows][:, ~cols_ok] == 0.0)

        # nonzero count from the known stage matrices:
        # pin I2 (2) + per stage: fx has 3 nonzeros, fu has 2, identity 2
        assert np.count_nonzero(a) == 2 + 3 * (3 + 2 + 2)

        a_fd = fd_jacobian(nlp.equalities, z)
        np.testing.assert_allclose(a, a_fd, atol=1e-8)

    def test_gradient_matches_fd_at_random_feasible_points(self):
        nlp = transcribe(box1d_ocp())
        rng = np.random.default_rng(2)
        cfg = BarrierConfig(mu=0.3)
        for _ in range(20):
            z = rng.standard_normal(3)
            z[1] = rng.uniform(-2.0, 0.9)  # strictly feasible control
            qp = build_qp(nlp, z, cfg)
            fd = fd_jacobian(
                lambda v: np.array([eval_barrier_objective(nlp, v, cfg)]), z)[0]
            denom = max(1.0, np.max(np.abs(fd)))
            assert np.max(np.abs(qp.g - fd)) / denom < 1e-5

    def test_hessian_matches_fd_for_linear_constraint_rows(self):
        # Quadratic costs + linear H rows: the Gauss-Newton + barrier Q is
        # the exact Hessian of the barrier objective.
        p = hiv_ocp()
        small = transcribe(
            OcpDefinition(
                **{**p.__dict__, "horizon": 2},
            )
        )
        z = rollout(small, np.full((2, 2), 0.3))
        cfg = BarrierConfig(mu=1e-2)
        qp = build_qp(small, z, cfg)
        from qbsqp.nlp import fd_hessian
        h_fd = fd_hessian(lambda v: eval_barrier_objective(small, v, cfg), z)
        scale = max(1.0, np.max(np.abs(h_fd)))
        assert np.max(np.abs(qp.Q - qp.diagnostics["sigma"] * np.eye(small.n_z) - h_fd)) / scale < 2e-4

    def test_damping_recovers_rank_deficient_hessian(self):
        nlp = transcribe(box1d_ocp())  # x-rows of the cost Hessian are zero
        qp = build_qp(nlp, np.zeros(3), BarrierConfig(mu=1.0))
        assert qp.diagnostics["sigma"] >= 1e-8
        assert np.linalg.eigvalsh(qp.Q).min() > 0.0


class TestValidateDerivatives:
    def test_passes_on_correct_model(self):
        worst = validate_derivatives(hiv_ocp(), n_points=2)
        assert max(worst.values()) < 1e-5

    def test_catches_wrong_jacobian(self):
        ocp = scalar_linear_ocp()
        bad = OcpDefinition(**{**ocp.__dict__,
                               "dynamics_jac_x": lambda x, u: 2.0 * np.ones((1, 1))})
        with pytest.raises(ConfigurationError, match="dynamics_jac_x"):
            validate_derivatives(bad)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-6, 10.0), st.floats(-5.0, 0.95))
def test_barrier_affine_slope_property(mu, u):
    nlp = transcribe(box1d_ocp())
    z = np.array([0.0, u, u])
    h = nlp.inequalities(z)
    expected = nlp.objective(z) + mu * float(np.sum(-np.log(-h)))
    got = eval_barrier_objective(nlp, z, BarrierConfig(mu=mu))
    assert got == pytest.approx(expected, rel=1e-12)
