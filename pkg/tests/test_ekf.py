import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2itrack.channel import (
    ChannelRealization,
    RadioParams,
    SoundingSample,
    array_response,
    lift_channel,
    sound,
)
from v2itrack.ekf import (
    ConjugateBeam,
    MonopulseDither,
    MotionModel,
    StateEstimate,
    VehicleState,
    design_combiner,
    draw_transition_noise,
    gain,
    jacobian,
    kalman_gain,
    make_strategy,
    predict,
    predicted_channel,
    step_true_state,
    transition,
    update,
)
from v2itrack.geometry import NetworkGeometry, spatial_frequency, spatial_frequency_gradient

GEOM = NetworkGeometry(75.0, 31.0, 7.5, 3.25)
MM = MotionModel(Ts=0.01, sigma_alpha=0.05 * 60 / 3.6, sigma_omega=10**-1.5)


def _pred(x=-20.0, v=16.0, Q=None):
    Q = np.diag([1e-3, 1e-2]) if Q is None else Q
    return StateEstimate(np.array([x, v]), np.asarray(Q, dtype=float))


def test_motion_matrices():
    mm = MotionModel(Ts=0.01, sigma_alpha=2.0, sigma_omega=0.5)
    np.testing.assert_allclose(mm.A, [[1, 0.01], [0, 1]])
    np.testing.assert_allclose(mm.b, [5e-5, 0.01])
    np.testing.assert_allclose(mm.Q_alpha, 4 * np.outer(mm.b, mm.b))
    np.testing.assert_allclose(mm.Q_omega, 0.25 * np.diag([1e-4, 1.0]))
    for Q in (mm.Q_alpha, mm.Q_omega, mm.Q_e):
        assert np.linalg.eigvalsh(Q).min() >= -1e-18
    with pytest.raises(ValueError):
        MotionModel(Ts=-1)


def test_transition_examples():
    mm = MotionModel(Ts=0.01)
    np.testing.assert_allclose(transition([0, 10], 0.0, 0.0, mm), [0.1, 10])
    np.testing.assert_allclose(transition([0, 0], 1.0, 0.0, mm), [5e-5, 0.01])


def test_transition_noise_calibration():
    rng = np.random.default_rng(0)
    n = 100_000
    t = np.tile([3.0, 12.0], (n, 1))
    out = step_true_state(VehicleState.from_array(t), 0.7, MM, rng).as_array()
    resid = out - (t @ MM.A.T + 0.7 * MM.b)
    cov = np.cov(resid.T)
    np.testing.assert_allclose(np.diag(cov), np.diag(MM.Q_omega), rtol=0.02)
    assert abs(cov[0, 1]) < 0.02 * np.sqrt(cov[0, 0] * cov[1, 1])
    assert draw_transition_noise(rng, MM, (4, 3)).shape == (4, 3, 2)


def test_predict_examples():
    est = StateEstimate(np.array([2.0, 5.0]), np.zeros((2, 2)))
    p = predict(est, MM)
    np.testing.assert_allclose(p.t_hat, [2.05, 5.0])
    np.testing.assert_allclose(p.Q_hat, MM.Q_e)
    mm0 = MotionModel(Ts=0.0, sigma_alpha=1.0, sigma_omega=1.0)
    Q = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_allclose(predict(StateEstimate(np.zeros(2), Q), mm0).Q_hat, Q + mm0.Q_e)


def test_chained_predict_trace_grows():
    est = StateEstimate(np.array([-60.0, 60 / 3.6]), np.zeros((2, 2)))
    traces = []
    for _ in range(10):
        est = predict(est, MM)
        traces.append(np.trace(est.Q_hat))
    assert np.all(np.diff(traces) > 0)
    # closed form: sum_k tr(A^k Q_e A^kT)
    for n, tr in enumerate(traces, start=1):
        want = sum(np.trace(np.linalg.matrix_power(MM.A, k) @ MM.Q_e
                            @ np.linalg.matrix_power(MM.A, k).T) for k in range(n))
        assert tr == pytest.approx(want, rel=1e-12)
    # regression anchors
    assert traces[0] == pytest.approx(1.0695461805555553e-3, rel=1e-12)
    assert traces[-1] == pytest.approx(1.072625347222222e-2, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-2, 2), st.integers(2, 64), st.integers(0, 7))
def test_combiner_unit_norm(psi, M, step):
    radio = RadioParams(M=M)
    for strat in (ConjugateBeam(), MonopulseDither(), MonopulseDither(0.01)):
        z = design_combiner(1, _pred(x=psi * 10), GEOM, radio, strat, step).z_complex
        assert np.linalg.norm(z) == pytest.approx(1.0, abs=1e-12)


def test_combiner_strategies(geom):
    radio = RadioParams(M=16)
    pred = _pred(x=12.0)
    psi = spatial_frequency(1, 12.0, geom)
    z = design_combiner(1, pred, geom, radio, ConjugateBeam()).z_complex
    np.testing.assert_allclose(z, np.conj(array_response(16, psi)) / 4)
    md = MonopulseDither()
    assert md.offset(16) == pytest.approx(2 * np.pi / 64)
    ze = design_combiner(1, pred, geom, radio, md, step=4).z_complex
    zo = design_combiner(1, pred, geom, radio, md, step=5).z_complex
    np.testing.assert_allclose(ze, np.conj(array_response(16, psi + md.offset(16))) / 4)
    np.testing.assert_allclose(zo, np.conj(array_response(16, psi - md.offset(16))) / 4)
    assert isinstance(make_strategy(None), MonopulseDither)
    assert isinstance(make_strategy("conjugate"), ConjugateBeam)
    assert make_strategy({"strategy": "monopulse", "delta": 0.02}).delta == 0.02
    with pytest.raises(ValueError):
        make_strategy("nope")


def test_jacobian_structure_and_fd(geom):
    M, beta = 8, np.exp(0.4j)
    pred = _pred(x=-30.0)
    for u in (1, 2, 3):
        D = jacobian(u, pred, beta, geom, MM, M)
        assert D.shape == (2 * M, 2)
        np.testing.assert_allclose(D[:, 1], MM.Ts * D[:, 0])
        psi = spatial_frequency(u, -30.0, geom)
        eps = 1e-7
        dh = (lift_channel(beta * array_response(M, psi + eps))
              - lift_channel(beta * array_response(M, psi - eps))) / (2 * eps)
        g = spatial_frequency_gradient(u, -30.0, MM.Ts, geom)
        np.testing.assert_allclose(D, np.outer(dh, g), rtol=1e-6, atol=1e-6 * np.abs(D).max())
    assert np.all(jacobian(1, pred, 0.0, geom, MM, M) == 0)


def test_gain_degenerate(geom):
    radio = RadioParams(M=8)
    pred = _pred()
    comb = design_combiner(1, pred, geom, radio)
    D = jacobian(1, pred, 1.0, geom, MM, 8)
    assert np.all(kalman_gain(pred, comb, D, 0.0) == 0)
    assert np.all(kalman_gain(_pred(Q=np.zeros((2, 2))), comb, D, 1e3) == 0)


def test_gain_saturates_at_high_snr(geom):
    radio = RadioParams(M=8)
    pred = _pred()
    comb = design_combiner(1, pred, geom, radio, ConjugateBeam())
    D = jacobian(1, pred, 1.0, geom, MM, 8)
    H = comb.z_real @ D
    # observed direction: rows of H are proportional to [1, Ts]
    w = np.array([1.0, MM.Ts]) / np.hypot(1.0, MM.Ts)
    vs = []
    for rho in (1e2, 1e6, 1e12):
        Hs = np.sqrt(rho) * H
        K = gain(pred.Q_hat, Hs)
        Q = (np.eye(2) - K @ Hs) @ pred.Q_hat
        vs.append(w @ Q @ w)
    assert vs[0] > vs[1] > vs[2]
    # variance along the observed direction falls as 1/rho
    assert vs[2] / vs[1] == pytest.approx(1e-6, rel=0.05)
    assert vs[2] < 1e-8 * (w @ pred.Q_hat @ w)


def _sample_for(pred, u, geom, radio, rho, beta, noise, strategy=None):
    comb = design_combiner(u, pred, geom, radio, strategy)
    psi = spatial_frequency(u, pred.x_hat, geom)
    h = beta * array_response(radio.M, psi)
    ch = ChannelRealization(u, psi, beta, h)
    return sound(ch, comb, rho, noise=noise), comb


def test_zero_innovation_fixed_point(geom):
    radio = RadioParams(M=16)
    pred = _pred()
    s, comb = _sample_for(pred, 2, geom, radio, 40.0, np.exp(1j), 0.0)
    post = update(pred, s, comb, geom, MM, np.exp(1j))
    np.testing.assert_allclose(post.t_hat, pred.t_hat, rtol=0, atol=1e-12)
    assert np.trace(post.Q_hat) < np.trace(pred.Q_hat)


def test_zero_snr_is_identity(geom):
    radio = RadioParams(M=16)
    pred = _pred()
    s, comb = _sample_for(pred, 1, geom, radio, 0.0, 1.0, np.array([0.3, -0.2]))
    post = update(pred, s, comb, geom, MM, 1.0)
    np.testing.assert_allclose(post.t_hat, pred.t_hat)
    np.testing.assert_allclose(post.Q_hat, pred.Q_hat)


def test_scalar_kalman_oracle(geom):
    # M=2: build H from explicit complex arithmetic, update in information form
    radio = RadioParams(M=2)
    pred = _pred(x=5.0, Q=[[2e-3, 4e-3], [4e-3, 3e-2]])
    rho, beta, u = 25.0, np.exp(0.8j), 1
    noise = np.array([0.11, -0.07])
    comb = design_combiner(u, pred, geom, radio, ConjugateBeam())
    z = comb.z_complex
    psi = spatial_frequency(u, 5.0, geom)
    g = spatial_frequency_gradient(u, 5.0, MM.Ts, geom)
    dzh = z[0] * 0 + z[1] * 1j * beta * np.exp(1j * psi)  # d(z.h)/dpsi
    H = np.sqrt(rho) * np.outer([dzh.real, dzh.imag], g)
    zh = z[0] * beta + z[1] * beta * np.exp(1j * psi)
    pred_sample = np.sqrt(rho) * np.array([zh.real, zh.imag])
    r = pred_sample + noise
    Qp = np.linalg.inv(np.linalg.inv(pred.Q_hat) + 2 * H.T @ H)
    t_want = pred.t_hat + Qp @ H.T @ (2 * (r - pred_sample))
    s = SoundingSample(u, r, np.asarray(rho))
    post = update(pred, s, comb, geom, MM, beta)
    np.testing.assert_allclose(post.Q_hat, Qp, rtol=1e-8, atol=1e-14)
    np.testing.assert_allclose(post.t_hat, t_want, rtol=1e-12)


def test_nonfinite_sample_rejected(geom):
    radio = RadioParams(M=8)
    pred = StateEstimate(np.array([[1.0, 10.0], [2.0, 10.0]]), np.tile(np.diag([1e-3, 1e-2]), (2, 1, 1)))
    comb = design_combiner(1, pred, geom, radio)
    r = np.array([[np.nan, 0.0], [0.1, 0.2]])
    post = update(pred, SoundingSample(1, r, np.array([30.0, 30.0])), comb, geom, MM, np.ones(2))
    np.testing.assert_array_equal(post.rejected, [True, False])
    np.testing.assert_array_equal(post.t_hat[0], pred.t_hat[0])
    np.testing.assert_array_equal(post.Q_hat[0], pred.Q_hat[0])
    assert np.all(np.isfinite(post.t_hat))


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]), st.floats(-120, 120),
    st.floats(-8, 6), st.sampled_from([2, 8, 32]),
)
def test_contraction_and_psd(seed, u, x, log_rho, M):
    geom = GEOM
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((2, 2)) * np.array([1e-2, 1e-1])
    Q = L @ L.T + 1e-12 * np.eye(2)
    pred = _pred(x=x, Q=Q)
    beta = np.exp(1j * rng.uniform(0, 2 * np.pi))
    s, comb = _sample_for(pred, u, geom, RadioParams(M=M), 10**log_rho, beta, rng.standard_normal(2) * 0.7)
    post = update(pred, s, comb, geom, MM, beta)
    assert np.trace(post.Q_hat) <= np.trace(Q) * (1 + 1e-12)
    assert np.linalg.eigvalsh(post.Q_hat).min() >= -1e-10
    np.testing.assert_array_equal(post.Q_hat, post.Q_hat.T)


def test_noiseless_tracking_stays_exact(geom):
    mm = MotionModel(Ts=0.01)
    radio = RadioParams(M=32, rician_k_db=200)
    truth = np.array([-40.0, 15.0])
    est = StateEstimate(truth.copy(), np.diag([1e-4, 1e-3]))
    for step in range(200):
        truth = transition(truth, 0.0, 0.0, mm)
        pred = predict(est, mm)
        comb = design_combiner(1, pred, geom, radio, None, step)
        psi = spatial_frequency(1, truth[0], geom)
        s = sound(ChannelRealization(1, psi, 1.0, array_response(32, psi)), comb, 1e6, noise=0.0)
        est = update(pred, s, comb, geom, mm, 1.0)
        assert abs(est.t_hat[0] - truth[0]) <= 1e-9


def test_predicted_channel_layout(geom):
    pred = _pred(x=3.0)
    h = predicted_channel(1, pred, 1j, geom, 4)
    psi = spatial_frequency(1, 3.0, geom)
    want = 1j * array_response(4, psi)
    np.testing.assert_allclose(h, np.concatenate([want.real, want.imag]))
