import math

import numpy as np
import pytest

from qcluster import pqc, qsim
from qcluster.qsim import Gate


@pytest.mark.parametrize(
    "n, layers, entangle, n_rot, n_cnot",
    [(2, 1, "ring", 4, 2), (1, 1, "ring", 2, 0), (3, 2, "line", 12, 4), (4, 3, "ring", 24, 12)],
)
def test_build_ansatz_counts(n, layers, entangle, n_rot, n_cnot):
    c = pqc.build_ansatz(n, layers, entangle)
    assert c.n_rotations == n_rot
    assert c.n_cnots == n_cnot
    assert c.n_params == 2 * n * layers


def test_ansatz_gate_order():
    c = pqc.build_ansatz(2, 1, "ring")
    assert [(g.kind, g.targets) for g in c.gates] == [
        ("RY", (0,)), ("RZ", (0,)), ("RY", (1,)), ("RZ", (1,)), ("CNOT", (0, 1)), ("CNOT", (1, 0)),
    ]


def test_circuit_rejects_bad_slots():
    with pytest.raises(qsim.ContractError):
        pqc.Circuit(1, 1, (Gate("RY", (0,), 0), Gate("RZ", (0,), 0)), 2)
    with pytest.raises(qsim.ContractError):
        pqc.Circuit(1, 1, (Gate("H", (1,)),), 0)


def test_identity_circuit_expectation():
    c = pqc.build_ansatz(1, 0)
    np.testing.assert_array_equal(pqc.expectation(c, [], qsim.zero_state(1), "Z"), [1.0])


def single_ry():
    return pqc.Circuit(1, 1, (Gate("RY", (0,), 0),), 1)


def test_single_ry_expectation():
    out = pqc.expectation(single_ry(), [math.pi / 3], qsim.zero_state(1), "Z")
    assert out[0] == pytest.approx(0.5, abs=1e-15)


def test_expectation_dimension_mismatch():
    c = pqc.build_ansatz(2, 1)
    with pytest.raises(qsim.ContractError):
        pqc.expectation(c, np.zeros(4), qsim.zero_state(3), "Z")
    with pytest.raises(qsim.ContractError):
        pqc.expectation(c, np.zeros(3), qsim.zero_state(2), "Z")


def test_expectation_matches_dense_oracle_3q():
    rng = np.random.default_rng(11)
    c = pqc.build_ansatz(3, 2, "ring")
    for _ in range(10):
        theta = rng.uniform(-np.pi, np.pi, c.n_params)
        state = qsim.amplitude_encode(rng.normal(size=8))
        for axis in "XYZ":
            np.testing.assert_allclose(
                pqc.expectation(c, theta, state, axis),
                pqc.dense_expectation(c, theta, state.amplitudes, axis),
                atol=1e-10,
            )


def test_parameter_shift_single_ry():
    c = single_ry()
    g = pqc.grad_parameter_shift(c, [math.pi / 3], qsim.zero_state(1), "Z", 0)
    assert g[0] == pytest.approx(-math.sin(math.pi / 3), abs=1e-15)
    assert pqc.grad_parameter_shift(c, [0.0], qsim.zero_state(1), "Z", 0)[0] == pytest.approx(0.0, abs=1e-15)


def test_parameter_shift_vs_finite_differences_2q():
    rng = np.random.default_rng(5)
    c = pqc.build_ansatz(2, 2, "ring")
    for _ in range(10):
        theta = pqc.init_theta(c, rng)
        x = rng.normal(size=4)
        state = qsim.QuantumState(2, qsim.amplitude_encode_batch(x[None])[0])
        for q in range(2):
            w = np.eye(2)[q]
            shift = pqc.grad_parameter_shift(c, theta, state, "Z", q)
            fd = pqc.grad_finite_diff(c, theta, x, "amplitude", "Z", 1e-4, w)
            np.testing.assert_allclose(shift, fd.d_theta, atol=1e-6)


def test_zero_depth_angle_gradient():
    c = pqc.build_ansatz(1, 0)
    for t in (0.3, 1.1, -2.0):
        rep = pqc.grad_adjoint(c, [], [t], "angle", "Z")
        assert rep.d_input[0] == pytest.approx(-math.sin(t), abs=1e-14)
        assert rep.d_theta.shape == (0,)


def test_adjoint_matches_parameter_shift_and_fd():
    rng = np.random.default_rng(9)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 4))
        c = pqc.build_ansatz(n, int(rng.integers(1, 3)), "ring")
        theta = pqc.init_theta(c, rng)
        enc = "angle" if seed % 2 else "amplitude"
        x = rng.normal(size=n if enc == "angle" else 2**n)
        axis = "XYZ"[seed % 3]
        adj = pqc.grad_adjoint(c, theta, x, enc, axis)
        state = qsim.QuantumState(n, pqc.encode(x, enc, n)[0])
        np.testing.assert_allclose(adj.d_theta, pqc.grad_parameter_shift(c, theta, state, axis), atol=1e-8)
        fd = pqc.grad_finite_diff(c, theta, x, enc, axis, 1e-5)
        np.testing.assert_allclose(adj.d_theta, fd.d_theta, atol=1e-5)
        np.testing.assert_allclose(adj.d_input, fd.d_input, rtol=1e-5, atol=1e-7)


def test_amplitude_input_gradient_on_sphere():
    # directional derivatives along tangent directions of the unit sphere
    rng = np.random.default_rng(2)
    c = pqc.build_ansatz(2, 2)
    theta = pqc.init_theta(c, rng)
    x = rng.normal(size=4)
    x /= np.linalg.norm(x)
    adj = pqc.grad_adjoint(c, theta, x, "amplitude", "X")
    for _ in range(5):
        t = rng.normal(size=4)
        t -= (t @ x) * x
        t /= np.linalg.norm(t)
        h = 1e-5

        def f(a):
            v = math.cos(a) * x + math.sin(a) * t
            return pqc.weighted_expectation(c, theta, v, "amplitude", "X")

        num = (f(h) - f(-h)) / (2 * h)
        assert adj.d_input @ t == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_finite_diff_symmetric_point():
    # <Z> = cos(theta) is even around 0
    rep = pqc.grad_finite_diff(single_ry(), [0.0], [0.0, 1.0], "amplitude", "Z", 1e-3)
    assert rep.d_theta[0] == pytest.approx(0.0, abs=1e-12)


def test_finite_diff_step_contract():
    with pytest.raises(qsim.ContractError):
        pqc.grad_finite_diff(single_ry(), [0.0], [1.0, 0.0], "amplitude", "Z", 0.1)


def test_periodicity():
    rng = np.random.default_rng(4)
    c = pqc.build_ansatz(3, 2)
    theta = pqc.init_theta(c, rng)
    state = qsim.amplitude_encode(rng.normal(size=8))
    base = pqc.expectation(c, theta, state, "Y")
    for j in range(c.n_params):
        t = theta.copy()
        t[j] += 2 * np.pi
        np.testing.assert_allclose(pqc.expectation(c, t, state, "Y"), base, atol=1e-12)


def test_expectations_bounded():
    rng = np.random.default_rng(8)
    c = pqc.build_ansatz(4, 3)
    for _ in range(20):
        theta = rng.uniform(-10, 10, c.n_params)
        state = qsim.amplitude_encode(rng.normal(size=16))
        for axis in "XYZ":
            e = pqc.expectation(c, theta, state, axis)
            assert np.all(np.abs(e) <= 1 + 1e-12)
