"""Dense statevector simulator.

Qubit 0 is the most significant bit of the amplitude index, so the amplitude of
``|q0 q1 ... q_{n-1}>`` sits at ``int("q0q1...", 2)``.

The public single-state API (``QuantumState``, ``apply_gate``, ...) is thin; the
work happens in the ``*_batch`` helpers, which operate on ``(B, 2**n)`` complex
arrays so a whole batch of tokens goes through one circuit in a single sweep.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

MAX_QUBITS = 12
NORM_ATOL = 1e-10

GATE_KINDS = ("RX", "RY", "RZ", "H", "CNOT")
ROTATIONS = ("RX", "RY", "RZ")
AXES = ("X", "Y", "Z")

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
IDENTITY = np.eye(2, dtype=np.complex128)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=np.complex128) / math.sqrt(2)
CNOT_MATRIX = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
)
PAULI = {"X": SIGMA_X, "Y": SIGMA_Y, "Z": SIGMA_Z}


class ConfigurationError(ValueError):
    pass


class ContractError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class QuantumState:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.ndim != 1 or amps.shape[0] != 2**self.n_qubits:
            raise ContractError(
                f"state of {self.n_qubits} qubits needs {2**self.n_qubits} amplitudes, got {amps.shape}"
            )
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_ATOL:
            raise ContractError(f"state is not normalized (|psi|^2 = {norm!r})")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple
    param_slot: Optional[int] = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ConfigurationError(f"unknown gate kind {self.kind!r}")
        targets = tuple(int(t) for t in self.targets)
        object.__setattr__(self, "targets", targets)
        arity = 2 if self.kind == "CNOT" else 1
        if len(targets) != arity:
            raise ContractError(f"{self.kind} acts on {arity} qubit(s), got targets {targets}")
        if len(set(targets)) != len(targets):
            raise ContractError(f"{self.kind} targets must be distinct, got {targets}")
        if self.kind in ROTATIONS and self.param_slot is None:
            raise ContractError(f"{self.kind} needs a param_slot")
        if self.kind not in ROTATIONS and self.param_slot is not None:
            raise ContractError(f"{self.kind} takes no parameter")


def _check_axis(axis: str) -> str:
    if axis not in PAULI:
        raise ContractError(f"unknown Pauli axis {axis!r}")
    return axis


def _check_qubits(n_qubits: int) -> None:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")


def rotation_matrix(kind: str, angle) -> np.ndarray:
    """2x2 matrix of RX/RY/RZ; ``angle`` may be an array, giving shape (..., 2, 2)."""
    a = np.asarray(angle, dtype=np.float64)
    c = np.cos(a / 2)
    s = np.sin(a / 2)
    m = np.empty(a.shape + (2, 2), dtype=np.complex128)
    if kind == "RX":
        m[..., 0, 0] = c
        m[..., 0, 1] = -1j * s
        m[..., 1, 0] = -1j * s
        m[..., 1, 1] = c
    elif kind == "RY":
        m[..., 0, 0] = c
        m[..., 0, 1] = -s
        m[..., 1, 0] = s
        m[..., 1, 1] = c
    elif kind == "RZ":
        m[..., 0, 0] = np.exp(-0.5j * a)
        m[..., 0, 1] = 0
        m[..., 1, 0] = 0
        m[..., 1, 1] = np.exp(0.5j * a)
    else:
        raise ConfigurationError(f"{kind} is not a rotation")
    return m


def rotation_derivative(kind: str, angle: float) -> np.ndarray:
    # R(t) = exp(-i t P / 2)  =>  dR/dt = -i/2 P R(t)
    return -0.5j * PAULI[kind[1]] @ rotation_matrix(kind, angle)


def gate_matrix(gate: Gate, params: Sequence[float] = ()) -> np.ndarray:
    if gate.kind == "H":
        return HADAMARD
    if gate.kind == "CNOT":
        return CNOT_MATRIX
    return rotation_matrix(gate.kind, params[gate.param_slot])


# -- batched kernels -------------------------------------------------------


def apply_1q_batch(psi: np.ndarray, mat: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """Apply a 2x2 matrix (shared, or one per batch row as (B, 2, 2)) to ``qubit``."""
    b = psi.shape[0]
    view = psi.reshape(b, 2**qubit, 2, 2 ** (n - qubit - 1))
    if mat.ndim == 2:
        out = np.einsum("ij,bajc->baic", mat, view)
    else:
        out = np.einsum("bij,bajc->baic", mat, view)
    return out.reshape(b, 2**n)


def apply_cnot_batch(psi: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    b = psi.shape[0]
    out = psi.reshape((b,) + (2,) * n).copy()
    src = psi.reshape((b,) + (2,) * n)
    idx1 = [slice(None)] * (n + 1)
    idx1[1 + control] = 1
    idx1[1 + target] = 1
    idx0 = list(idx1)
    idx0[1 + target] = 0
    out[tuple(idx1)] = src[tuple(idx0)]
    out[tuple(idx0)] = src[tuple(idx1)]
    return out.reshape(b, 2**n)


def apply_gate_batch(psi: np.ndarray, gate: Gate, params, n: int, dagger: bool = False) -> np.ndarray:
    if gate.kind == "CNOT":
        return apply_cnot_batch(psi, gate.targets[0], gate.targets[1], n)
    if gate.kind == "H":
        return apply_1q_batch(psi, HADAMARD, gate.targets[0], n)
    angle = params[gate.param_slot]
    return apply_1q_batch(psi, rotation_matrix(gate.kind, -angle if dagger else angle), gate.targets[0], n)


def expectation_all_batch(psi: np.ndarray, axis: str, n: int) -> np.ndarray:
    """Per-qubit <sigma_axis> for each row; returns (B, n) reals."""
    b = psi.shape[0]
    out = np.empty((b, n), dtype=np.float64)
    for q in range(n):
        view = psi.reshape(b, 2**q, 2, 2 ** (n - q - 1))
        a0 = view[:, :, 0, :]
        a1 = view[:, :, 1, :]
        if axis == "Z":
            val = (np.abs(a0) ** 2 - np.abs(a1) ** 2).sum(axis=(1, 2))
        else:
            cross = (np.conj(a0) * a1).sum(axis=(1, 2))
            # <X> = 2 Re(a0* a1), <Y> = 2 Im(a0* a1)
            val = 2 * (cross.real if axis == "X" else cross.imag)
        out[:, q] = val
    return out


def apply_pauli_batch(psi: np.ndarray, axis: str, qubit: int, n: int) -> np.ndarray:
    return apply_1q_batch(psi, PAULI[axis], qubit, n)


def observable_apply_batch(psi: np.ndarray, weights: dict, n: int) -> np.ndarray:
    """H|psi> for H_b = sum_axis sum_q w[axis][b, q] sigma_axis^(q), row by row."""
    out = np.zeros_like(psi)
    for axis, w in weights.items():
        w = np.asarray(w, dtype=np.float64)
        for q in range(n):
            col = w[:, q]
            if not np.any(col):
                continue
            out += col[:, None] * apply_pauli_batch(psi, axis, q, n)
    return out


def amplitude_encode_batch(s: np.ndarray, n_qubits: Optional[int] = None) -> np.ndarray:
    """Rows of ``s`` (B, D) -> normalized, zero-padded (B, 2**n) complex states."""
    s = np.asarray(s, dtype=np.float64)
    b, d = s.shape
    n = qubits_for_dim(d) if n_qubits is None else n_qubits
    if 2**n < d:
        raise ContractError(f"{n} qubits cannot hold a {d}-dimensional vector")
    norms = np.linalg.norm(s, axis=1)
    if not np.all(np.isfinite(norms)):
        raise NumericError("non-finite value in amplitude-encoding input")
    if np.any(norms == 0):
        raise DegenerateInputError("cannot amplitude-encode an all-zero vector")
    psi = np.zeros((b, 2**n), dtype=np.complex128)
    psi[:, :d] = s / norms[:, None]
    return psi


def amplitude_encode_vjp(s: np.ndarray, grad_amp: np.ndarray) -> np.ndarray:
    """Pull a real gradient on the encoded amplitudes back through the L2 normalization."""
    s = np.asarray(s, dtype=np.float64)
    d = s.shape[1]
    norms = np.linalg.norm(s, axis=1, keepdims=True)
    a = s / norms
    g = grad_amp[:, :d]
    return (g - a * np.sum(g * a, axis=1, keepdims=True)) / norms


def angle_encode_batch(z: np.ndarray) -> np.ndarray:
    """Product state ⊗_j RY(z_j)|0> for every row of ``z`` (B, n)."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite value in angle-encoding input")
    b, n = z.shape
    _check_qubits(n)
    psi = np.ones((b, 1), dtype=np.float64)
    for j in range(n):
        u = np.stack([np.cos(z[:, j] / 2), np.sin(z[:, j] / 2)], axis=1)
        psi = (psi[:, :, None] * u[:, None, :]).reshape(b, -1)
    return psi.astype(np.complex128)


def angle_encode_vjp(z: np.ndarray, grad_amp: np.ndarray) -> np.ndarray:
    """d/dz of sum(grad_amp * psi(z)) for the product state built by ``angle_encode_batch``."""
    z = np.asarray(z, dtype=np.float64)
    b, n = z.shape
    u = np.stack([np.cos(z / 2), np.sin(z / 2)], axis=2)  # (B, n, 2)
    du = 0.5 * np.stack([-np.sin(z / 2), np.cos(z / 2)], axis=2)
    g = np.asarray(grad_amp, dtype=np.float64).reshape((b,) + (2,) * n)
    out = np.empty((b, n), dtype=np.float64)
    for j in range(n):
        t = g
        # contract qubits from last to first so remaining axes keep their positions
        for q in range(n - 1, -1, -1):
            vec = du[:, q, :] if q == j else u[:, q, :]
            t = np.einsum("b...i,bi->b...", t, vec)
        out[:, j] = t
    return out


def qubits_for_dim(dim: int) -> int:
    if dim < 2:
        raise ContractError(f"dimension must be >= 2, got {dim}")
    return max(1, math.ceil(math.log2(dim)))


# -- single-state API ------------------------------------------------------


def zero_state(n_qubits: int) -> QuantumState:
    _check_qubits(n_qubits)
    amps = np.zeros(2**n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return QuantumState(n_qubits, amps)


def apply_gate(state: QuantumState, gate: Gate, params: Sequence[float] = ()) -> QuantumState:
    n = state.n_qubits
    for t in gate.targets:
        if not 0 <= t < n:
            raise IndexError(f"gate target {t} out of range for {n} qubits")
    if gate.param_slot is not None and not 0 <= gate.param_slot < len(params):
        raise IndexError(f"param_slot {gate.param_slot} outside parameter vector of length {len(params)}")
    psi = apply_gate_batch(state.amplitudes[None, :], gate, params, n)
    return QuantumState(n, psi[0])


def amplitude_encode(s: Sequence[float], n_qubits: Optional[int] = None) -> QuantumState:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1:
        raise ContractError("amplitude_encode expects a vector")
    n = qubits_for_dim(s.shape[0]) if n_qubits is None else n_qubits
    _check_qubits(n)
    norm = np.linalg.norm(s)
    if not np.isfinite(norm):
        raise NumericError("non-finite value in amplitude-encoding input")
    if norm == 0:
        raise DegenerateInputError("cannot amplitude-encode an all-zero vector")
    amps = np.zeros(2**n, dtype=np.complex128)
    # skip the division on unit vectors so already-normalized data is stored verbatim
    amps[: s.shape[0]] = s if abs(norm - 1.0) <= 1e-12 else s / norm
    return QuantumState(n, amps)


def angle_encode(z: Sequence[float]) -> QuantumState:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ContractError("angle_encode expects a vector")
    return QuantumState(z.shape[0], angle_encode_batch(z[None, :])[0])


def pauli_expectation(state: QuantumState, axis: str, qubit: int) -> float:
    _check_axis(axis)
    if not 0 <= qubit < state.n_qubits:
        raise IndexError(f"qubit {qubit} out of range for {state.n_qubits} qubits")
    return float(expectation_all_batch(state.amplitudes[None, :], axis, state.n_qubits)[0, qubit])


def pauli_expectation_all(state: QuantumState, axis: str) -> np.ndarray:
    _check_axis(axis)
    return expectation_all_batch(state.amplitudes[None, :], axis, state.n_qubits)[0]


def bloch_vector(state: QuantumState) -> tuple:
    if state.n_qubits != 1:
        raise ContractError(f"bloch_vector needs a single-qubit state, got {state.n_qubits} qubits")
    psi = state.amplitudes[None, :]
    return tuple(float(expectation_all_batch(psi, ax, 1)[0, 0]) for ax in AXES)


def dense_gate_operator(gate: Gate, params: Sequence[float], n: int) -> np.ndarray:
    """Full 2**n x 2**n matrix of ``gate`` built from Kronecker products (test oracle)."""
    if gate.kind == "CNOT":
        c, t = gate.targets
        proj0 = np.diag([1, 0]).astype(np.complex128)
        proj1 = np.diag([0, 1]).astype(np.complex128)
        a = [IDENTITY] * n
        a[c] = proj0
        bb = [IDENTITY] * n
        bb[c] = proj1
        bb[t] = SIGMA_X
        return _kron_all(a) + _kron_all(bb)
    ops = [IDENTITY] * n
    ops[gate.targets[0]] = gate_matrix(gate, params)
    return _kron_all(ops)


def dense_pauli_operator(axis: str, qubit: int, n: int) -> np.ndarray:
    ops = [IDENTITY] * n
    ops[qubit] = PAULI[axis]
    return _kron_all(ops)


def _kron_all(mats) -> np.ndarray:
    out = np.ones((1, 1), dtype=np.complex128)
    for m in mats:
        out = np.kron(out, m)
    return out
