import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm, solve_continuous_are

from releqf.eqf import (
    EquivariantFilter,
    FilterState,
    GainConfig,
    apply_correction,
    compute_A,
    compute_C,
    compute_C_star,
    correction,
    correction_closed_form,
    group_error_norms,
    local_error,
    lyapunov_value,
    predict,
    predicted_output,
    propagate_sigma,
    riccati_damping_exact,
    riccati_step,
    state_estimate,
    transition_matrix,
    update,
)
from releqf.errors import LostPositivity
from releqf.liegroup import GroupElement, random_group_element, random_rotation, so3_exp, wedge
from releqf.model import ManifoldState, Measurement, ReferenceDirections, SystemInput, measure
from releqf.symmetry import ORIGIN, LocalError, group_from_state, phi, theta, theta_inv

REFS = ReferenceDirections.default()
GAINS = GainConfig()


def random_refs(rng):
    return ReferenceDirections.normalized(rng.normal(size=3), rng.normal(size=3))


def random_fs(rng, gains=GAINS):
    """Filter state with a random SPD Riccati matrix near the default."""
    B = rng.normal(size=(6, 6)) * 0.3
    Sigma = np.eye(6) + B @ B.T
    return FilterState(random_group_element(rng), Sigma)


def truth_from_error(X_hat, eps):
    """Truth group element whose local error w.r.t. ``X_hat`` is ``eps``."""
    E = group_from_state(theta_inv(LocalError.from_vector(eps)))
    return GroupElement(E.Q @ X_hat.Q, E.Q @ X_hat.q + E.q)


def output_of(X, refs):
    return measure(phi(X, ORIGIN), refs)


# gains


def test_gain_config_defaults_and_validation():
    g = GainConfig()
    assert np.array_equal(g.N, 0.1 * np.eye(6)) and g.k_n == pytest.approx(10.0)
    assert np.allclose(g.N_inv, 10 * np.eye(6))
    s = GainConfig.scalar(k_n=4.0, m=2.0, sigma0=3.0)
    assert np.allclose(s.N, np.eye(6) / 4) and np.allclose(s.M, 2 * np.eye(6))
    assert GainConfig(N=np.diag([1.0, 2, 3, 4, 5, 6])).k_n is None
    with pytest.raises(ValueError):
        GainConfig(M=-np.eye(6))
    with pytest.raises(ValueError):
        GainConfig(N=np.eye(5))
    with pytest.raises(ValueError):
        GainConfig(Sigma0=np.triu(np.ones((6, 6))))
    with pytest.raises(ValueError):
        GainConfig.scalar(k_n=0.0)


# prediction


def test_predict_free_drift():
    fs = FilterState.initial(GAINS)
    dt = 0.01
    out = predict(fs, np.zeros(3), dt, GAINS)
    assert np.array_equal(out.X_hat.Q, np.eye(3)) and not out.X_hat.q.any()
    # A keeps its -I coupling at q_hat = 0, so only the trace grows by dt tr(M)
    growth = np.trace(out.Sigma) - np.trace(fs.Sigma)
    assert abs(growth - dt * np.trace(GAINS.M)) <= 6 * dt * dt
    A = compute_A(np.zeros(3))
    assert np.allclose(out.Sigma, fs.Sigma + dt * (A + A.T + GAINS.M), atol=dt * dt)
    assert out.t == pytest.approx(dt)


def test_predict_zero_q_is_right_translation(rng):
    Q = random_rotation(rng)
    u = rng.normal(size=3)
    out = predict(FilterState(GroupElement(Q, np.zeros(3)), np.eye(6)), u, 0.05, GAINS)
    assert np.abs(out.X_hat.Q - Q @ expm(0.05 * wedge(u))).max() <= 1e-14


def test_predict_matches_ode_solution(rng):
    # Q_dot = Q u^ + q^ Q integrated with a high-accuracy ODE solver
    Q0 = random_rotation(rng)
    u, q = rng.normal(size=3), rng.normal(size=3)
    fs = FilterState(GroupElement(Q0, q), np.eye(6))
    T = 0.3

    def rhs(_, y):
        Q = y.reshape(3, 3)
        return (Q @ wedge(u) + wedge(q) @ Q).ravel()

    sol = solve_ivp(rhs, (0, T), Q0.ravel(), rtol=1e-12, atol=1e-13)
    ref = sol.y[:, -1].reshape(3, 3)
    for n in (1, 2, 4, 8):
        s = fs
        for _ in range(n):
            s = predict(s, u, T / n, GAINS)
        assert np.abs(s.X_hat.Q - ref).max() <= 1e-10


def test_predict_step_halving(rng):
    # group state after one step and after two half steps; the splitting is exact
    fs = FilterState(random_group_element(rng), np.eye(6))
    u = rng.normal(size=3)
    errs = []
    for dt in (0.1, 0.05, 0.025):
        a = predict(fs, u, dt, GAINS).X_hat.Q
        b = predict(predict(fs, u, dt / 2, GAINS), u, dt / 2, GAINS).X_hat.Q
        errs.append(np.abs(a - b).max())
    assert max(errs) <= 1e-14


def test_predict_rejects_bad_dt():
    with pytest.raises(ValueError):
        predict(FilterState.initial(GAINS), np.zeros(3), 0.0, GAINS)
    with pytest.raises(ValueError):
        predict(FilterState.initial(GAINS), np.zeros(3), 0.01, GAINS, propagation="rk4")


def test_transition_matrix_matches_expm(rng):
    for scale in (0.0, 1e-7, 1e-3, 1.0, 5.0):
        for dt in (0.01, 0.1, 1.0):
            q = rng.normal(size=3) * scale
            assert np.abs(transition_matrix(q, dt) - expm(dt * compute_A(q))).max() <= 1e-12


def test_propagate_sigma_first_order_agrees_with_euler(rng):
    fs = random_fs(rng)
    q = rng.normal(size=3)
    A = compute_A(q)
    for dt in (1e-2, 1e-3):
        exact = propagate_sigma(fs.Sigma, q, GAINS, dt)
        euler = riccati_step(fs.Sigma, A, None, GAINS, dt)
        assert np.abs(exact - euler).max() <= 20 * dt * dt


def test_euler_propagation_option(rng):
    fs = random_fs(rng)
    q = rng.normal(size=3)
    a = predict(FilterState(GroupElement(np.eye(3), q), fs.Sigma), np.zeros(3), 0.01, GAINS, propagation="euler")
    ref = fs.Sigma + 0.01 * (compute_A(q) @ fs.Sigma + fs.Sigma @ compute_A(q).T + GAINS.M)
    assert np.abs(a.Sigma - ref).max() <= 1e-14


# linearisation


def test_compute_A_examples():
    A = compute_A(np.zeros(3))
    ref = np.zeros((6, 6))
    ref[:3, 3:] = -np.eye(3)
    assert np.array_equal(A, ref)
    A = compute_A([1.0, 2.0, 3.0])
    assert np.array_equal(A[3:, 3:], wedge([1, 2, 3]))


def test_compute_A_matches_error_flow(rng):
    # numeric Jacobian of the uncorrected error dynamics at eps = 0; truth and
    # estimate follow the same group flow
    for _ in range(5):
        X_hat = random_group_element(rng)
        u = rng.normal(size=3)
        h, dt = 1e-5, 1e-6
        J = np.zeros((6, 6))
        for k in range(6):
            cols = []
            for sgn in (1, -1):
                eps0 = np.zeros(6)
                eps0[k] = sgn * h
                X = truth_from_error(X_hat, eps0)
                fx = FilterState(X, np.eye(6))
                fxh = FilterState(X_hat, np.eye(6))
                fp = predict(fx, u, dt, GAINS).X_hat
                fhp = predict(fxh, u, dt, GAINS).X_hat
                eps1 = local_error(fp, fhp)
                cols.append((eps1 - eps0) / dt)
            J[:, k] = (cols[0] - cols[1]) / (2 * h)
        assert np.abs(J - compute_A(X_hat.q)).max() <= 1e-4


def test_compute_C_examples(rng):
    C = compute_C(REFS, np.eye(3))
    assert np.array_equal(C[:3, :3], wedge(REFS.d1_ring))
    assert np.array_equal(C[3:, :3], wedge(REFS.d2_ring))
    assert not C[:, 3:].any()


def test_compute_C_star_examples(rng):
    Q = random_rotation(rng)
    yh = predicted_output(GroupElement(Q, np.zeros(3)), REFS)
    Cs = compute_C_star(yh, yh, Q)
    assert not Cs[:, 3:].any()
    assert np.allclose(Cs[:3, :3], wedge(yh.d1) @ Q.T, atol=1e-15)
    # with y = y_hat both matrices coincide: (Q^T d)^ Q^T = Q^T d^
    assert np.allclose(Cs, compute_C(REFS, Q), atol=1e-14)


def _residual_slope(rng, use_star):
    refs = random_refs(rng)
    X_hat = random_group_element(rng)
    direction = rng.normal(size=6)
    direction /= np.linalg.norm(direction)
    scales = np.logspace(-1, -3, 9)
    res = []
    for s in scales:
        eps = s * direction
        y = output_of(truth_from_error(X_hat, eps), refs)
        yh = predicted_output(X_hat, refs)
        C = compute_C_star(y, yh, X_hat.Q) if use_star else compute_C(refs, X_hat.Q)
        res.append(np.linalg.norm(y.stacked() - yh.stacked() - C @ eps))
    return np.polyfit(np.log(scales), np.log(res), 1)[0]


def test_output_matrix_residual_orders(rng):
    for _ in range(5):
        assert _residual_slope(rng, False) >= 1.8
        assert _residual_slope(rng, True) >= 2.7


def test_correction_paths_agree(rng):
    for _ in range(50):
        refs = random_refs(rng)
        gains = GainConfig.scalar(k_n=rng.uniform(1, 20), m=1.0, sigma0=1.0)
        fs = random_fs(rng, gains)
        y = output_of(random_group_element(rng), refs)
        a = correction(fs, y, refs, gains, use_c_star=True)
        b = correction(fs, y, refs, gains, use_c_star=False)
        c = correction_closed_form(fs, y, refs, gains.k_n)
        for other in (b, c):
            assert np.abs(a.S - other.S).max() <= 1e-10
            assert np.abs(a.s - other.s).max() <= 1e-10


def test_correction_zero_innovation_and_linearity(rng):
    fs = random_fs(rng)
    yh = predicted_output(fs.X_hat, REFS)
    z = correction(fs, yh, REFS, GAINS)
    assert not z.S.any() and not z.s.any()
    y = output_of(random_group_element(rng), REFS)
    a = correction(fs, y, REFS, GAINS)
    half = GainConfig(N=GAINS.N / 2)
    b = correction(fs, y, REFS, half)
    assert np.allclose(b.S, 2 * a.S, rtol=1e-14, atol=0) and np.allclose(b.s, 2 * a.s, rtol=1e-14, atol=0)


# Riccati


def test_riccati_step_growth_only(rng):
    fs = random_fs(rng)
    out = riccati_step(fs.Sigma, np.zeros((6, 6)), None, GAINS, 0.01)
    assert np.allclose(out, fs.Sigma + 0.01 * GAINS.M, atol=1e-15)
    out = riccati_step(fs.Sigma, np.zeros((6, 6)), np.zeros((6, 6)), GAINS, 0.01)
    assert np.allclose(out, fs.Sigma + 0.01 * GAINS.M, atol=1e-15)


def test_riccati_step_damping_decreases_loewner(rng):
    gains = GainConfig(M=np.eye(6), N=np.eye(6))
    C = rng.normal(size=(6, 6))
    out = riccati_step(np.eye(6), np.zeros((6, 6)), C, gains, 0.01, include_M=False)
    assert np.linalg.eigvalsh(np.eye(6) - out).min() >= -1e-15
    assert np.linalg.eigvalsh(np.eye(6) - out).max() > 0


def test_riccati_stationary_point(rng):
    for _ in range(5):
        q = rng.normal(size=3)
        A = compute_A(q)
        C = compute_C(random_refs(rng), random_rotation(rng))
        S = solve_continuous_are(A.T, C.T, GAINS.M, GAINS.N)
        dt = 0.01
        assert np.linalg.norm(riccati_step(S, A, C, GAINS, dt) - S) <= 1e-8 * dt


def test_riccati_step_guards():
    C = compute_C(REFS, np.eye(3))
    with pytest.raises(LostPositivity):
        riccati_step(np.eye(6), np.zeros((6, 6)), C, GAINS, 1.0, include_M=False)
    with pytest.raises(ValueError):
        riccati_step(np.eye(6), np.zeros((6, 6)), C, GAINS, 0.0)


def test_exact_damping_matches_information_form(rng):
    fs = random_fs(rng)
    C = compute_C(REFS, random_rotation(rng))
    for dt in (0.01, 1.0, 100.0):
        out = riccati_damping_exact(fs.Sigma, C, GAINS, dt)
        ref = np.linalg.inv(np.linalg.inv(fs.Sigma) + dt * C.T @ GAINS.N_inv @ C)
        assert np.allclose(out, ref, rtol=1e-9, atol=1e-12)


# update


def test_update_zero_innovation_keeps_state(rng):
    fs = random_fs(rng)
    yh = predicted_output(fs.X_hat, REFS)
    for its in (1, 5):
        out, delta = update(fs, yh, REFS, GAINS, 0.01, its)
        assert np.abs(out.X_hat.Q - fs.X_hat.Q).max() <= 1e-15
        assert np.abs(out.X_hat.q - fs.X_hat.q).max() <= 1e-15
        assert not delta.S.any()


def test_update_applies_correction(rng):
    fs = random_fs(rng)
    y = output_of(random_group_element(rng), REFS)
    delta = correction(fs, y, REFS, GAINS)
    out, last = update(fs, y, REFS, GAINS, 0.01, 1)
    X = apply_correction(fs.X_hat, delta, 0.01)
    assert np.abs(out.X_hat.Q - X.Q).max() <= 1e-15 and np.abs(out.X_hat.q - X.q).max() <= 1e-15
    gamma1 = np.array([delta.S[2, 1], delta.S[0, 2], delta.S[1, 0]])
    assert np.allclose(out.X_hat.Q, so3_exp(0.01 * gamma1) @ fs.X_hat.Q)
    assert np.allclose(out.X_hat.q, fs.X_hat.q + 0.01 * (delta.S @ fs.X_hat.q + delta.s))
    assert np.array_equal(last.S, delta.S)
    # the default damping is the Euler step of -Sigma C^T N^-1 C Sigma
    C = compute_C(REFS, fs.X_hat.Q)
    ref = fs.Sigma - 0.01 * fs.Sigma @ C.T @ GAINS.N_inv @ C @ fs.Sigma
    assert np.allclose(out.Sigma, ref, atol=1e-14)


def test_update_damping_modes(rng):
    fs = FilterState(random_group_element(rng), np.eye(6))
    y = output_of(random_group_element(rng), REFS)
    with pytest.raises(LostPositivity):
        update(fs, y, REFS, GAINS, 1.0, 1, damping="euler")
    a, _ = update(fs, y, REFS, GAINS, 1.0, 1, damping="auto")
    b, _ = update(fs, y, REFS, GAINS, 1.0, 1, damping="exact")
    assert np.array_equal(a.Sigma, b.Sigma)
    np.linalg.cholesky(a.Sigma)
    with pytest.raises(ValueError):
        update(fs, y, REFS, GAINS, 1.0, 0)
    with pytest.raises(ValueError):
        update(fs, y, REFS, GAINS, 1.0, 1, damping="rk4")
    with pytest.raises(ValueError):
        update(fs, y, REFS, GAINS, 1.0, 1, riccati_output="D")
    with pytest.raises(ValueError):
        update(fs, y, REFS, GAINS, -1.0, 1)


def test_update_riccati_output_choice(rng):
    fs = random_fs(rng)
    y = output_of(random_group_element(rng), REFS)
    a, _ = update(fs, y, REFS, GAINS, 0.01, 1, riccati_output="C")
    b, _ = update(fs, y, REFS, GAINS, 0.01, 1, riccati_output="C_star")
    assert np.array_equal(a.X_hat.Q, b.X_hat.Q)
    yh = predicted_output(fs.X_hat, REFS)
    Cs = compute_C_star(y, yh, fs.X_hat.Q)
    ref = fs.Sigma - 0.01 * fs.Sigma @ Cs.T @ GAINS.N_inv @ Cs @ fs.Sigma
    assert np.allclose(b.Sigma, ref, atol=1e-14)


def test_update_iterations_use_reduced_period(rng):
    fs = random_fs(rng)
    y = output_of(random_group_element(rng), REFS)
    a, _ = update(fs, y, REFS, GAINS, 0.005, 2)
    s, _ = update(fs, y, REFS, GAINS, 0.005, 1)
    s, _ = update(s, y, REFS, GAINS, 0.005, 1)
    assert np.array_equal(a.X_hat.Q, s.X_hat.Q) and np.array_equal(a.Sigma, s.Sigma)
    c, _ = update(fs, y, REFS, GAINS, 0.005, 2, scale_damping=False)
    assert not np.array_equal(c.Sigma, a.Sigma)


# read-out and Lyapunov function


def test_state_estimate(rng):
    e = state_estimate(FilterState.initial(GAINS))
    assert np.array_equal(e.R, np.eye(3)) and not e.omega.any()
    for _ in range(10):
        X = random_group_element(rng)
        e = state_estimate(FilterState(X, np.eye(6)))
        ref = phi(X, ORIGIN)
        assert np.abs(e.R - ref.R).max() <= 1e-12 and np.abs(e.omega - ref.omega).max() <= 1e-12
        assert np.abs(local_error(X, X)).max() <= 1e-14


def test_lyapunov_value(rng):
    fs = random_fs(rng)
    assert lyapunov_value(fs, fs.X_hat) <= 1e-28
    for _ in range(20):
        X = truth_from_error(fs.X_hat, rng.normal(size=6) * 0.5)
        assert lyapunov_value(fs, X) >= 0.0


def test_group_error_norms(rng):
    X, Xh = random_group_element(rng), random_group_element(rng)
    eq, eqv = group_error_norms(X, Xh)
    x, xh = phi(X, ORIGIN), phi(Xh, ORIGIN)
    # the group error norms equal the manifold-level differences
    assert eq == pytest.approx(np.linalg.norm(x.R - xh.R), rel=1e-12)
    assert eqv == pytest.approx(np.linalg.norm(x.omega - xh.omega), rel=1e-12)


# whole-filter properties


def _noise_free_run(filt, x0, u, refs, T, dt=0.01):
    x = x0
    inp = SystemInput(u)
    from releqf.model import integrate_truth

    for _ in range(int(round(T / dt))):
        filt.predict(u, dt)
        x = integrate_truth(x, inp, dt)
        filt.update(measure(x, refs), dt, 1)
    return x


def test_orthonormality_drift_long_run():
    rng = np.random.default_rng(41)
    filt = EquivariantFilter(REFS)
    x = ManifoldState(random_rotation(rng), rng.uniform(-1.5, 1.5, 3))
    _noise_free_run(filt, x, rng.uniform(-1.5, 1.5, 3), REFS, 1000.0)
    Q = filt.state.X_hat.Q
    assert np.linalg.norm(Q.T @ Q - np.eye(3)) <= 1e-8
    np.linalg.cholesky(filt.state.Sigma)
    assert np.linalg.norm(filt.state.Sigma - filt.state.Sigma.T) <= 1e-9


def test_noise_free_convergence_from_small_error():
    rng = np.random.default_rng(43)
    for _ in range(3):
        x = ManifoldState(random_rotation(rng), rng.uniform(-1.5, 1.5, 3))
        eps = rng.normal(size=6)
        eps *= 0.3 / np.linalg.norm(eps)
        X = group_from_state(x)
        X_hat = truth_from_error(X, -eps)  # so that the truth sits at error eps
        filt = EquivariantFilter(REFS, state=FilterState(X_hat, np.eye(6)))
        xe = _noise_free_run(filt, x, rng.uniform(-1.5, 1.5, 3), REFS, 10.0)
        eq, eqv = group_error_norms(group_from_state(xe), filt.state.X_hat)
        assert eq < 1e-3 and eqv < 1e-3


def test_filter_equivariance_under_frame_change():
    from releqf.sim import ScenarioConfig, generate_scenario, run_streams, transform_streams

    rng = np.random.default_rng(47)
    cfg = ScenarioConfig(seed=3, duration=5.0)
    scen = generate_scenario(cfg)
    base = run_streams(EquivariantFilter(cfg.refs), scen.streams)
    G = random_rotation(rng)
    refs_G = ReferenceDirections(G @ cfg.refs.d1_ring, G @ cfg.refs.d2_ring)
    start = FilterState(GroupElement(G, np.zeros(3)), np.eye(6))
    moved = run_streams(EquivariantFilter(refs_G, state=start), transform_streams(scen.streams, G))
    assert np.abs(base.err_Q - moved.err_Q).max() <= 1e-8
    assert np.abs(base.err_q - moved.err_q).max() <= 1e-8


def test_filter_driver_interface(rng):
    f = EquivariantFilter(REFS)
    f.predict(rng.normal(size=3), 0.01)
    f.update(output_of(random_group_element(rng), REFS), 0.01)
    dQ, dq = f.correction_vectors()
    assert dQ.shape == (3,) and dq.shape == (3,) and np.any(dQ)
    assert f.sigma_trace() == pytest.approx(np.trace(f.state.Sigma))
    assert math.isfinite(f.estimate().omega.sum())
