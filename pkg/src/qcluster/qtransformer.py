"""Quantum transformer encoder: self-attention from Pauli readouts, a circuit
feed-forward layer, layer norm, and a per-token sigmoid head.

Every layer has a forward that accepts ``(B, k, d)`` arrays (a plain ``(k, d)``
sequence also works) and a matching ``*_vjp`` used by the trainer. Tokens of
all instances in a batch are pushed through each circuit together.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import pqc, qsim
from .qsim import ContractError

SHARING_MODES = ("1Q-1K-1V", "1QK-1V", "1QKV")
FUSION_MODES = ("per-position", "shared")
LN_EPS = 1e-5

# (circuit index, axis) feeding Q, K and V
_READOUT = {
    "1QKV": {"Q": (0, "X"), "K": (0, "Y"), "V": (0, "Z")},
    "1QK-1V": {"Q": (0, "X"), "K": (0, "Y"), "V": (1, "Z")},
    "1Q-1K-1V": {"Q": (0, "Z"), "K": (1, "Z"), "V": (2, "Z")},
}


@dataclass(frozen=True)
class AttentionConfig:
    sharing_mode: str = "1QKV"
    n_qubits: int = 2
    depth: int = 2
    input_dim: int = 2
    entangle: str = "ring"

    def __post_init__(self):
        if self.sharing_mode not in SHARING_MODES:
            raise qsim.ConfigurationError(f"sharing_mode must be one of {SHARING_MODES}")

    @property
    def encoding(self) -> str:
        # a row of width n goes on n qubits as angles, anything wider is amplitude-encoded
        return "angle" if self.input_dim == self.n_qubits else "amplitude"

    @property
    def n_circuits(self) -> int:
        return circuit_evals_per_token(self)

    def circuit(self) -> pqc.Circuit:
        return pqc.build_ansatz(self.n_qubits, self.depth, self.entangle)


def circuit_evals_per_token(cfg: AttentionConfig) -> int:
    return {"1Q-1K-1V": 3, "1QK-1V": 2, "1QKV": 1}[cfg.sharing_mode]


@dataclass(frozen=True)
class EncoderConfig:
    k: int
    input_dim: int
    n_qubits: int
    depth: int = 2
    blocks: int = 1
    sharing_mode: str = "1QKV"
    fusion_mode: str = "per-position"
    entangle: str = "ring"

    def __post_init__(self):
        if min(self.k, self.blocks, self.n_qubits) < 1 or self.depth < 0:
            raise qsim.ConfigurationError("k, blocks and n_qubits must be >= 1, depth >= 0")
        if self.sharing_mode not in SHARING_MODES:
            raise qsim.ConfigurationError(f"sharing_mode must be one of {SHARING_MODES}")
        if self.fusion_mode not in FUSION_MODES:
            raise qsim.ConfigurationError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.n_qubits != qsim.qubits_for_dim(self.input_dim):
            raise ContractError(
                f"{self.input_dim}-dim features need {qsim.qubits_for_dim(self.input_dim)} qubits, "
                f"config has {self.n_qubits}"
            )

    def attention(self, block: int) -> AttentionConfig:
        d = self.input_dim if block == 0 else self.n_qubits
        return AttentionConfig(self.sharing_mode, self.n_qubits, self.depth, d, self.entangle)

    def circuit(self) -> pqc.Circuit:
        return pqc.build_ansatz(self.n_qubits, self.depth, self.entangle)


@dataclass
class EncoderParams:
    """Named trainable tensors; insertion order is the canonical order."""

    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def names(self):
        return list(self.tensors)

    def copy(self) -> "EncoderParams":
        return EncoderParams({k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams({k: np.zeros_like(v) for k, v in self.tensors.items()})

    def size(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def with_flat(self, vec: np.ndarray) -> "EncoderParams":
        out, i = {}, 0
        for k, v in self.tensors.items():
            out[k] = np.asarray(vec[i : i + v.size], dtype=np.float64).reshape(v.shape)
            i += v.size
        return EncoderParams(out)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def init_params(cfg: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    circ = cfg.circuit()
    p = EncoderParams()
    p["fusion.W_e"] = rng.normal(0.0, 0.1, size=(cfg.k, cfg.input_dim))
    for t in range(cfg.blocks):
        d = cfg.input_dim if t == 0 else cfg.n_qubits
        n_circ = cfg.attention(t).n_circuits
        p[f"block{t}.ln1.gain"] = np.ones(d)
        p[f"block{t}.ln1.bias"] = np.zeros(d)
        p[f"block{t}.qsa.theta"] = np.stack([pqc.init_theta(circ, rng) for _ in range(n_circ)])
        p[f"block{t}.ln2.gain"] = np.ones(cfg.n_qubits)
        p[f"block{t}.ln2.bias"] = np.zeros(cfg.n_qubits)
        p[f"block{t}.pql.theta"] = pqc.init_theta(circ, rng)
    p["head.w"] = rng.normal(0.0, 0.1, size=cfg.n_qubits)
    p["head.b"] = np.zeros(1)
    return p


class CircuitCounter:
    """Counts per-token circuit evaluations, split by sublayer."""

    def __init__(self):
        self.qsa = 0
        self.pql = 0

    def reset(self):
        self.qsa = self.pql = 0


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ContractError(f"expected a (k, d) or (B, k, d) array, got shape {x.shape}")
    return x, False


# -- layer norm ------------------------------------------------------------


def layer_norm(x, gain, bias, eps: float = LN_EPS):
    out, _ = _layer_norm_fwd(np.asarray(x, dtype=np.float64), gain, bias, eps)
    return out


def _layer_norm_fwd(x, gain, bias, eps=LN_EPS):
    if x.shape[-1] < 2:
        raise ContractError("layer norm needs rows of length >= 2")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def _layer_norm_vjp(g, cache, gain):
    xhat, inv = cache
    red = tuple(range(g.ndim - 1))
    dgain = np.sum(g * xhat, axis=red)
    dbias = np.sum(g, axis=red)
    gx = g * gain
    dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * np.mean(gx * xhat, axis=-1, keepdims=True))
    return dx, dgain, dbias


# -- attention -------------------------------------------------------------


def _softmax(scores):
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(q, k):
    """Row-wise softmax(Q K^T / sqrt(n)) over the last two axes."""
    n = q.shape[-1]
    return _softmax(np.einsum("...id,...jd->...ij", q, k) / math.sqrt(n))


def _encode_tokens(x2d, cfg: AttentionConfig):
    if cfg.encoding == "amplitude":
        return qsim.amplitude_encode_batch(x2d, cfg.n_qubits)
    return qsim.angle_encode_batch(x2d)


def _encode_tokens_vjp(x2d, grad_amp, cfg: AttentionConfig):
    if cfg.encoding == "amplitude":
        return qsim.amplitude_encode_vjp(x2d, grad_amp)
    return qsim.angle_encode_vjp(x2d, grad_amp)


def _qsa_fwd(x, cfg: AttentionConfig, theta, counter=None):
    b, k, d = x.shape
    if d != cfg.input_dim:
        raise ContractError(f"token width {d} does not match attention input_dim {cfg.input_dim}")
    theta = np.asarray(theta, dtype=np.float64).reshape(cfg.n_circuits, -1)
    circ = cfg.circuit()
    flat = x.reshape(b * k, d)
    psi = _encode_tokens(flat, cfg)
    readout = _READOUT[cfg.sharing_mode]
    outs, vals = [], {}
    for c in range(cfg.n_circuits):
        axes = [ax for role, (ci, ax) in readout.items() if ci == c]
        out, exps = pqc.expectations_batch(circ, theta[c], psi, axes)
        outs.append(out)
        for role, (ci, ax) in readout.items():
            if ci == c:
                vals[role] = exps[ax].reshape(b, k, cfg.n_qubits)
    if counter is not None:
        counter.qsa += cfg.n_circuits * b * k
    a = attention_weights(vals["Q"], vals["K"])
    z = a @ vals["V"]
    return z, dict(x=x, outs=outs, a=a, theta=theta, **vals)


def _qsa_vjp(g, cache, cfg: AttentionConfig):
    a, q, kk, v, x = cache["a"], cache["Q"], cache["K"], cache["V"], cache["x"]
    b, k, d = x.shape
    n = cfg.n_qubits
    dv = np.swapaxes(a, -1, -2) @ g
    da = g @ np.swapaxes(v, -1, -2)
    ds = a * (da - np.sum(da * a, axis=-1, keepdims=True)) / math.sqrt(n)
    dq = ds @ kk
    dk = np.swapaxes(ds, -1, -2) @ q
    cot = {"Q": dq, "K": dk, "V": dv}
    circ = cfg.circuit()
    theta = cache["theta"]
    dtheta = np.zeros_like(theta)
    dpsi = np.zeros((b * k, 2**n))
    for c in range(cfg.n_circuits):
        weights = {}
        for role, (ci, ax) in _READOUT[cfg.sharing_mode].items():
            if ci == c:
                weights[ax] = weights.get(ax, 0) + cot[role].reshape(b * k, n)
        dt, dp = pqc.vjp_batch(circ, theta[c], cache["outs"][c], weights)
        dtheta[c] = dt
        dpsi += dp
    dx = _encode_tokens_vjp(x.reshape(b * k, d), dpsi, cfg).reshape(b, k, d)
    return dx, dtheta


def quantum_self_attention(S, cfg: AttentionConfig, theta, counter: Optional[CircuitCounter] = None):
    """softmax(Q K^T / sqrt(n)) V with Q, K, V read from circuit Pauli expectations."""
    x, squeeze = _batched(S)
    z, _ = _qsa_fwd(x, cfg, theta, counter)
    return z[0] if squeeze else z


# -- parameterized quantum layer --------------------------------------------


def _pql_fwd(x, circ: pqc.Circuit, theta, counter=None):
    b, k, n = x.shape
    if n != circ.n_qubits:
        raise ContractError(f"PQL expects rows of width {circ.n_qubits}, got {n}")
    z = x.reshape(b * k, n)
    out, exps = pqc.expectations_batch(circ, theta, qsim.angle_encode_batch(z), ("Z",))
    if counter is not None:
        counter.pql += b * k
    return exps["Z"].reshape(b, k, n), dict(z=z, out=out)


def _pql_vjp(g, cache, circ: pqc.Circuit, theta):
    b, k, n = g.shape
    dt, dpsi = pqc.vjp_batch(circ, theta, cache["out"], {"Z": g.reshape(b * k, n)})
    return qsim.angle_encode_vjp(cache["z"], dpsi).reshape(b, k, n), dt


def parameterized_quantum_layer(Z, circ: pqc.Circuit, theta, counter: Optional[CircuitCounter] = None):
    """Per token: angle-encode, apply the circuit, read per-qubit <Z>."""
    x, squeeze = _batched(Z)
    out, _ = _pql_fwd(x, circ, np.asarray(theta, dtype=np.float64), counter)
    return out[0] if squeeze else out


# -- encoder stack -----------------------------------------------------------


def encoder_forward(S, params: EncoderParams, cfg: EncoderConfig,
                    counter: Optional[CircuitCounter] = None, return_cache: bool = False):
    """Stack of ``cfg.blocks`` blocks; block 0 has no attention residual (D -> n)."""
    x, squeeze = _batched(S)
    if x.shape[1:] != (cfg.k, cfg.input_dim):
        raise ContractError(f"expected sequences of shape ({cfg.k}, {cfg.input_dim}), got {x.shape[1:]}")
    circ = cfg.circuit()
    caches = []
    z = x
    for t in range(cfg.blocks):
        att = cfg.attention(t)
        h1, ln1 = _layer_norm_fwd(z, params[f"block{t}.ln1.gain"], params[f"block{t}.ln1.bias"])
        a, qsa = _qsa_fwd(h1, att, params[f"block{t}.qsa.theta"], counter)
        zp = a if t == 0 else z + a
        h2, ln2 = _layer_norm_fwd(zp, params[f"block{t}.ln2.gain"], params[f"block{t}.ln2.bias"])
        f, pql = _pql_fwd(h2, circ, params[f"block{t}.pql.theta"], counter)
        z = zp + f
        caches.append((att, ln1, qsa, ln2, pql))
    out = z[0] if squeeze else z
    if return_cache:
        return out, caches
    return out


def encoder_backward(g, caches, params: EncoderParams, cfg: EncoderConfig):
    """Returns (dS, grads) for a cotangent ``g`` on the (B, k, n) encoder output."""
    circ = cfg.circuit()
    grads = {}
    for t in reversed(range(cfg.blocks)):
        att, ln1, qsa, ln2, pql = caches[t]
        dh2, dt = _pql_vjp(g, pql, circ, params[f"block{t}.pql.theta"])
        grads[f"block{t}.pql.theta"] = dt
        dzp, dgain, dbias = _layer_norm_vjp(dh2, ln2, params[f"block{t}.ln2.gain"])
        dzp = dzp + g
        grads[f"block{t}.ln2.gain"], grads[f"block{t}.ln2.bias"] = dgain, dbias
        dh1, dtheta = _qsa_vjp(dzp, qsa, att)
        grads[f"block{t}.qsa.theta"] = dtheta
        dz, dgain, dbias = _layer_norm_vjp(dh1, ln1, params[f"block{t}.ln1.gain"])
        grads[f"block{t}.ln1.gain"], grads[f"block{t}.ln1.bias"] = dgain, dbias
        g = dz if t == 0 else dz + dzp
    return g, grads


# -- head ----------------------------------------------------------------------


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def head_logits(Z, w, b):
    return np.asarray(Z, dtype=np.float64) @ np.asarray(w, dtype=np.float64) + float(np.asarray(b).reshape(-1)[0])


def head_forward(Z, w, b):
    """Per-token membership probability sigmoid(Z w + b)."""
    return sigmoid(head_logits(Z, w, b))


# -- classical baseline ----------------------------------------------------


def classical_self_attention(S, Wq, Wk, Wv, return_weights: bool = False):
    """Unscaled dot-product attention with q_i = Wq s_i, k_i = Wk s_i, v_i = Wv s_i."""
    s = np.asarray(S, dtype=np.float64)
    d = s.shape[-1]
    for name, w in (("Wq", Wq), ("Wk", Wk), ("Wv", Wv)):
        if np.shape(w) != (d, d):
            raise ContractError(f"{name} must be ({d}, {d}), got {np.shape(w)}")
    q = s @ np.asarray(Wq).T
    k = s @ np.asarray(Wk).T
    v = s @ np.asarray(Wv).T
    a = _softmax(q @ k.T)
    y = a @ v
    return (y, a) if return_weights else y
