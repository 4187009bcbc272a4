"""Parameterized circuits: ansatz construction, expectation values and gradients.

Three gradient routes are provided. ``vjp_batch``/``grad_adjoint`` is the
training path (one reverse sweep over the gates); ``grad_parameter_shift`` and
``grad_finite_diff`` exist to check it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import qsim
from .qsim import ContractError, Gate, QuantumState

SHIFT = np.pi / 2
INIT_SCALE = np.pi / 4


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    layers: int
    gates: tuple
    n_params: int

    def __post_init__(self):
        slots = []
        for g in self.gates:
            if any(t >= self.n_qubits for t in g.targets):
                raise ContractError(f"gate {g} targets a qubit outside [0, {self.n_qubits})")
            if g.param_slot is not None:
                slots.append(g.param_slot)
        if sorted(slots) != list(range(self.n_params)):
            raise ContractError("every parameter slot must be used by exactly one gate")

    @property
    def n_cnots(self) -> int:
        return sum(g.kind == "CNOT" for g in self.gates)

    @property
    def n_rotations(self) -> int:
        return sum(g.param_slot is not None for g in self.gates)


@dataclass
class GradientReport:
    d_theta: np.ndarray
    d_input: np.ndarray = field(default_factory=lambda: np.zeros(0))


def build_ansatz(n_qubits: int, layers: int, entangle: str = "ring") -> Circuit:
    """Hardware-efficient ansatz: per layer RY, RZ on each qubit, then a CNOT chain.

    ``entangle="ring"`` closes the chain with ``CNOT(n-1 -> 0)``; ``"line"`` does not.
    ``layers=0`` yields the empty (identity) circuit.
    """
    if n_qubits < 1 or layers < 0:
        raise qsim.ConfigurationError("n_qubits must be >= 1 and layers >= 0")
    if entangle not in ("ring", "line"):
        raise qsim.ConfigurationError(f"entangle must be 'ring' or 'line', got {entangle!r}")
    gates = []
    slot = 0
    for _ in range(layers):
        for q in range(n_qubits):
            gates.append(Gate("RY", (q,), slot))
            gates.append(Gate("RZ", (q,), slot + 1))
            slot += 2
        if n_qubits > 1:
            n_links = n_qubits if entangle == "ring" else n_qubits - 1
            for j in range(n_links):
                gates.append(Gate("CNOT", (j, (j + 1) % n_qubits)))
    return Circuit(n_qubits, layers, tuple(gates), slot)


def init_theta(circuit: Circuit, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=circuit.n_params)


def _check_theta(circuit: Circuit, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (circuit.n_params,):
        raise ContractError(f"theta must have shape ({circuit.n_params},), got {theta.shape}")
    return theta


def run_batch(circuit: Circuit, theta: np.ndarray, psi: np.ndarray) -> np.ndarray:
    n = circuit.n_qubits
    for g in circuit.gates:
        psi = qsim.apply_gate_batch(psi, g, theta, n)
    return psi


def vjp_batch(circuit: Circuit, theta: np.ndarray, psi_out: np.ndarray, weights: dict):
    """Adjoint reverse sweep.

    ``weights`` maps an axis to a (B, n) cotangent on the per-qubit expectations
    of ``psi_out``. Returns ``(d_theta, d_psi_in)`` where ``d_theta`` is summed over
    the batch and ``d_psi_in`` is the real gradient w.r.t. each (real) input state.
    """
    n = circuit.n_qubits
    lam = qsim.observable_apply_batch(psi_out, weights, n)
    phi = psi_out
    d_theta = np.zeros(circuit.n_params, dtype=np.float64)
    for g in reversed(circuit.gates):
        phi = qsim.apply_gate_batch(phi, g, theta, n, dagger=True)
        if g.param_slot is not None:
            dmat = qsim.rotation_derivative(g.kind, theta[g.param_slot])
            mu = qsim.apply_1q_batch(phi, dmat, g.targets[0], n)
            d_theta[g.param_slot] += 2.0 * float(np.sum(np.conj(lam) * mu).real)
        lam = qsim.apply_gate_batch(lam, g, theta, n, dagger=True)
    return d_theta, 2.0 * lam.real


def expectations_batch(circuit: Circuit, theta: np.ndarray, psi: np.ndarray, axes=("Z",)):
    out = run_batch(circuit, theta, psi)
    return out, {ax: qsim.expectation_all_batch(out, ax, circuit.n_qubits) for ax in axes}


def expectation(circuit: Circuit, theta, input_state: QuantumState, axis: str = "Z") -> np.ndarray:
    """Per-qubit <sigma_axis> of V(theta)|input_state>."""
    theta = _check_theta(circuit, theta)
    if input_state.n_qubits != circuit.n_qubits:
        raise ContractError(
            f"state has {input_state.n_qubits} qubits, circuit has {circuit.n_qubits}"
        )
    qsim._check_axis(axis)
    _, exps = expectations_batch(circuit, theta, input_state.amplitudes[None, :], (axis,))
    return exps[axis][0]


def encode(input_vector, encoding: str, n_qubits: int) -> np.ndarray:
    x = np.asarray(input_vector, dtype=np.float64)[None, :]
    if encoding == "amplitude":
        return qsim.amplitude_encode_batch(x, n_qubits)
    if encoding == "angle":
        if x.shape[1] != n_qubits:
            raise ContractError(f"angle encoding needs {n_qubits} values, got {x.shape[1]}")
        return qsim.angle_encode_batch(x)
    raise ContractError(f"unknown encoding {encoding!r}")


def encode_vjp(input_vector, encoding: str, grad_amp: np.ndarray) -> np.ndarray:
    x = np.asarray(input_vector, dtype=np.float64)[None, :]
    if encoding == "amplitude":
        return qsim.amplitude_encode_vjp(x, grad_amp)[0]
    return qsim.angle_encode_vjp(x, grad_amp)[0]


def _weights(circuit: Circuit, weights) -> np.ndarray:
    if weights is None:
        return np.ones(circuit.n_qubits)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (circuit.n_qubits,):
        raise ContractError(f"weights must have shape ({circuit.n_qubits},)")
    return w


def weighted_expectation(circuit, theta, input_vector, encoding, axis, weights=None) -> float:
    w = _weights(circuit, weights)
    psi = encode(input_vector, encoding, circuit.n_qubits)
    _, exps = expectations_batch(circuit, np.asarray(theta, dtype=np.float64), psi, (axis,))
    return float(exps[axis][0] @ w)


def grad_adjoint(circuit, theta, input_vector, encoding: str, axis: str = "Z", weights=None) -> GradientReport:
    """Gradient of ``sum_q w_q <sigma_axis^(q)>`` w.r.t. theta and the classical input."""
    theta = _check_theta(circuit, theta)
    w = _weights(circuit, weights)
    psi = encode(input_vector, encoding, circuit.n_qubits)
    out = run_batch(circuit, theta, psi)
    d_theta, d_psi = vjp_batch(circuit, theta, out, {axis: w[None, :]})
    return GradientReport(d_theta, encode_vjp(input_vector, encoding, d_psi))


def grad_parameter_shift(circuit, theta, input_state: QuantumState, axis: str = "Z",
                         qubit: Optional[int] = None) -> np.ndarray:
    """Two-term shift rule on every parameter; ``qubit=None`` sums over all qubits."""
    theta = _check_theta(circuit, theta)
    for g in circuit.gates:
        if g.param_slot is not None and g.kind not in qsim.ROTATIONS:
            raise NotImplementedError(f"no shift rule for {g.kind}")

    def value(t):
        e = expectation(circuit, t, input_state, axis)
        return float(e.sum()) if qubit is None else float(e[qubit])

    grad = np.empty(circuit.n_params)
    for j in range(circuit.n_params):
        step = np.zeros(circuit.n_params)
        step[j] = SHIFT
        grad[j] = 0.5 * (value(theta + step) - value(theta - step))
    return grad


def grad_finite_diff(circuit, theta, input_vector, encoding: str, axis: str = "Z",
                     h: float = 1e-5, weights=None) -> GradientReport:
    if not 0 < h <= 1e-2:
        raise ContractError(f"step h must be in (0, 1e-2], got {h}")
    theta = _check_theta(circuit, theta)
    x = np.asarray(input_vector, dtype=np.float64)

    def f(t, v):
        return weighted_expectation(circuit, t, v, encoding, axis, weights)

    d_theta = np.empty(circuit.n_params)
    for j in range(circuit.n_params):
        e = np.zeros(circuit.n_params)
        e[j] = h
        d_theta[j] = (f(theta + e, x) - f(theta - e, x)) / (2 * h)
    d_input = np.empty(x.shape[0])
    for j in range(x.shape[0]):
        e = np.zeros(x.shape[0])
        e[j] = h
        d_input[j] = (f(theta, x + e) - f(theta, x - e)) / (2 * h)
    return GradientReport(d_theta, d_input)


def dense_expectation(circuit: Circuit, theta, input_amplitudes, axis: str) -> np.ndarray:
    """Per-qubit expectations via explicit 2**n x 2**n matrices (test oracle)."""
    n = circuit.n_qubits
    u = np.eye(2**n, dtype=np.complex128)
    for g in circuit.gates:
        u = qsim.dense_gate_operator(g, theta, n) @ u
    psi = u @ np.asarray(input_amplitudes, dtype=np.complex128)
    return np.array(
        [np.vdot(psi, qsim.dense_pauli_operator(axis, q, n) @ psi).real for q in range(n)]
    )
