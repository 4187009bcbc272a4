"""Loss, reverse pass through fusion/encoder/head, Adam, the training loop,
evaluation, and a k-means reference baseline."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import clusterset, metrics, qtransformer
from .clusterset import ClusterInstance, FeatureSet
from .config import TrainConfig
from .fileio import Checkpoint, write_checkpoint
from .qsim import ContractError, NumericError
from .qtransformer import EncoderConfig, EncoderParams

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
EVAL_CHUNK = 64


# -- loss --------------------------------------------------------------------


def bce_loss(y, y_hat, pos_weight: float = 1.0) -> float:
    """-sum_h [w * t log y + (1 - t) log(1 - y)] for one sequence (or summed over a batch)."""
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(y_hat, dtype=np.float64)
    return float(-np.sum(pos_weight * t * np.log(y) + (1 - t) * np.log1p(-y)))


def bce_grad(y, y_hat, pos_weight: float = 1.0) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(y_hat, dtype=np.float64)
    return -pos_weight * t / y + (1 - t) / (1 - y)


def _softplus(x):
    return np.logaddexp(0.0, x)


def bce_from_logits(logits, y_hat, pos_weight: float = 1.0):
    """Per-instance loss (B,) and d loss / d logits, evaluated stably."""
    t = np.asarray(y_hat, dtype=np.float64)
    loss = np.sum(pos_weight * t * _softplus(-logits) + (1 - t) * _softplus(logits), axis=-1)
    s = qtransformer.sigmoid(logits)
    dlogits = pos_weight * t * (s - 1) + (1 - t) * s
    return loss, dlogits


# -- model -------------------------------------------------------------------


def model_forward(feats, sims, params: EncoderParams, cfg: EncoderConfig, counter=None, return_cache=False):
    """Fusion -> encoder -> head logits for a (B, k, D) batch of member features."""
    s = clusterset.fuse_batch(feats, sims, params["fusion.W_e"], cfg.fusion_mode)
    z, caches = qtransformer.encoder_forward(s, params, cfg, counter, return_cache=True)
    logits = qtransformer.head_logits(z, params["head.w"], params["head.b"])
    if return_cache:
        return logits, (sims, z, caches)
    return logits


def predict(clusters: Sequence[ClusterInstance], features, params: EncoderParams, cfg: EncoderConfig,
            counter=None, chunk: int = EVAL_CHUNK) -> np.ndarray:
    out = []
    for i in range(0, len(clusters), chunk):
        feats, sims, _ = clusterset.gather(clusters[i : i + chunk], features)
        out.append(qtransformer.sigmoid(model_forward(feats, sims, params, cfg, counter)))
    return np.concatenate(out)


def backward(clusters: Sequence[ClusterInstance], features, params: EncoderParams, cfg: EncoderConfig,
             pos_weight: float = 1.0, counter=None):
    """Mean per-instance BCE over the batch and its gradient for every trainable tensor."""
    feats, sims, masks = clusterset.gather(clusters, features)
    if masks is None:
        raise ContractError("training needs ground-truth masks on every cluster instance")
    b = len(clusters)
    logits, (sims, z, caches) = model_forward(feats, sims, params, cfg, counter, return_cache=True)
    losses, dlogits = bce_from_logits(logits, masks, pos_weight)
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        raise NumericError(f"non-finite loss for cluster centered at sample {clusters[bad[0]].center}")
    dlogits = dlogits / b
    grads = {
        "head.w": np.einsum("bk,bkn->n", dlogits, z),
        "head.b": np.array([dlogits.sum()]),
    }
    dz = dlogits[:, :, None] * params["head.w"]
    ds, enc_grads = qtransformer.encoder_backward(dz, caches, params, cfg)
    grads.update(enc_grads)
    grads["fusion.W_e"] = clusterset.fuse_batch_vjp(ds, sims, cfg.fusion_mode)
    ordered = EncoderParams({name: np.asarray(grads[name], dtype=np.float64).reshape(params[name].shape)
                             for name in params.names()})
    return float(losses.mean()), ordered


def batch_loss(clusters, features, params, cfg, pos_weight: float = 1.0) -> float:
    feats, sims, masks = clusterset.gather(clusters, features)
    losses, _ = bce_from_logits(model_forward(feats, sims, params, cfg), masks, pos_weight)
    return float(losses.mean())


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    m: EncoderParams
    v: EncoderParams
    step: int = 0

    @classmethod
    def zeros(cls, params: EncoderParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_step(params: EncoderParams, grads: EncoderParams, state: AdamState, lr: float) -> EncoderParams:
    """One bias-corrected Adam update; mutates ``state`` and returns new parameters."""
    state.step += 1
    c1 = 1 - ADAM_BETA1**state.step
    c2 = 1 - ADAM_BETA2**state.step
    out = EncoderParams()
    for name in params.names():
        g = grads[name]
        m = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return out


def cosine_lr(base: float, step: int, total: int) -> float:
    return 0.5 * base * (1 + math.cos(math.pi * step / total))


# -- checkpoints ---------------------------------------------------------------


def make_checkpoint(cfg: TrainConfig, params: EncoderParams, opt: AdamState, epoch: int,
                    rng: np.random.Generator, losses: Sequence[float]) -> Checkpoint:
    tensors = {name: params[name].copy() for name in params.names()}
    for name in params.names():
        tensors[f"adam.m.{name}"] = opt.m[name].copy()
        tensors[f"adam.v.{name}"] = opt.v[name].copy()
    extra = {"loss_history": ",".join(repr(float(x)) for x in losses)}
    return Checkpoint(cfg.to_dict(), tensors, epoch, opt.step, rng.bit_generator.state, extra)


def unpack_checkpoint(ckpt: Checkpoint):
    """Returns (TrainConfig, EncoderParams, AdamState, loss history)."""
    cfg = TrainConfig.from_strings({k: str(v) for k, v in ckpt.config.items()})
    names = [n for n in ckpt.tensors if not n.startswith("adam.")]
    params = EncoderParams({n: np.array(ckpt.tensors[n]) for n in names})
    if all(f"adam.m.{n}" in ckpt.tensors for n in names):
        opt = AdamState(
            EncoderParams({n: np.array(ckpt.tensors[f"adam.m.{n}"]) for n in names}),
            EncoderParams({n: np.array(ckpt.tensors[f"adam.v.{n}"]) for n in names}),
            ckpt.step,
        )
    else:
        opt = AdamState.zeros(params)
    hist = ckpt.extra.get("loss_history", "")
    losses = [float(x) for x in hist.split(",") if x]
    return cfg, params, opt, losses


# -- training loop ---------------------------------------------------------------


def train(cfg: TrainConfig, features: FeatureSet, clusters: Sequence[ClusterInstance],
          checkpoint_path=None, resume: Optional[Checkpoint] = None,
          log_fn: Optional[Callable[[str], None]] = None, stop_after: Optional[int] = None) -> Checkpoint:
    """Adam with per-step cosine decay to zero; one checkpoint per epoch.

    Every center is visited once per epoch in a freshly shuffled order.
    ``stop_after`` ends the run early after that many epochs (the schedule still
    spans ``cfg.epochs``), which is how resumption is exercised.
    """
    if not clusters:
        raise ContractError("empty cluster dataset")
    if any(c.mask is None for c in clusters):
        raise ContractError("training needs labels (every cluster instance must carry a mask)")
    if clusters[0].k != cfg.k:
        raise ContractError(f"dataset was built with k={clusters[0].k}, config has k={cfg.k}")
    cfg = cfg.replace(input_dim=features.dim)
    enc = cfg.encoder()

    if resume is None:
        rng = np.random.default_rng(cfg.seed)
        params = qtransformer.init_params(enc, rng)
        opt = AdamState.zeros(params)
        start, losses = 0, []
    else:
        rcfg, params, opt, losses = unpack_checkpoint(resume)
        if rcfg != cfg:
            raise ContractError("resume checkpoint was written with a different configuration")
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        start = resume.epoch

    n = len(clusters)
    n_batches = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * n_batches
    last_good = make_checkpoint(cfg, params, opt, start, rng, losses)
    end = cfg.epochs if stop_after is None else min(cfg.epochs, start + stop_after)
    for epoch in range(start, end):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for bi in range(n_batches):
            idx = order[bi * cfg.batch_size : (bi + 1) * cfg.batch_size]
            batch = [clusters[i] for i in idx]
            lr = cosine_lr(cfg.lr, opt.step, total)
            try:
                loss, grads = backward(batch, features.features, params, enc, cfg.pos_weight)
            except NumericError:
                if checkpoint_path is not None:
                    write_checkpoint(checkpoint_path, last_good)
                raise
            params = adam_step(params, grads, opt, lr)
            epoch_loss += loss * len(batch)
            if log_fn is not None:
                log_fn(f"epoch={epoch} batch={bi} loss={loss!r} lr={lr!r}")
        losses.append(epoch_loss / n)
        log.info("epoch %d mean loss %.6f", epoch, losses[-1])
        last_good = make_checkpoint(cfg, params, opt, epoch + 1, rng, losses)
        if checkpoint_path is not None:
            write_checkpoint(checkpoint_path, last_good)
    return last_good


# -- evaluation ------------------------------------------------------------------


def evaluate(ckpt: Checkpoint, features: FeatureSet, clusters: Sequence[ClusterInstance],
             tau: Optional[float] = None, counter=None):
    """Returns (MetricReport or None, predictions (N, k), predicted labels)."""
    cfg, params, _, _ = unpack_checkpoint(ckpt)
    if cfg.input_dim != features.dim:
        raise ContractError(f"checkpoint expects {cfg.input_dim}-dim features, data has {features.dim}")
    if clusters[0].k != cfg.k:
        raise ContractError(f"checkpoint expects k={cfg.k}, dataset has k={clusters[0].k}")
    enc = cfg.encoder()
    preds = predict(clusters, features.features, params, enc, counter)
    labels = clusterset.prune_and_link(clusters, preds, cfg.tau if tau is None else tau, features.n)
    report = metrics.evaluate_labels(features.labels, labels) if features.labels is not None else None
    return report, preds, labels


def link_with_constant(clusters, n_samples: int, value: float, tau: float = 0.5) -> np.ndarray:
    """Prune-and-link with every non-center score fixed to ``value`` (all-keep / all-drop stubs)."""
    preds = [np.full(c.k, value, dtype=np.float64) for c in clusters]
    return clusterset.prune_and_link(clusters, preds, tau, n_samples)


def link_with_masks(clusters, n_samples: int, tau: float = 0.5) -> np.ndarray:
    return clusterset.prune_and_link(clusters, [c.mask.astype(np.float64) for c in clusters], tau, n_samples)


# -- k-means baseline ---------------------------------------------------------------


def kmeans(x: np.ndarray, n_clusters: int, seed: int, max_iter: int = 300, tol: float = 1e-6):
    """Lloyd iterations from k-means++ seeds. Returns (labels, centers, inertia per iteration)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= n_clusters <= n:
        raise ContractError(f"n_clusters must be in [1, {n}], got {n_clusters}")
    rng = np.random.default_rng(seed)
    centers = np.empty((n_clusters, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, n_clusters):
        total = d2.sum()
        if total > 0:
            pick = rng.choice(n, p=d2 / total)
        else:
            pick = rng.integers(n)
        centers[c] = x[pick]
        d2 = np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1))

    history = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = np.sum(x**2, axis=1)[:, None] - 2 * x @ centers.T + np.sum(centers**2, axis=1)[None, :]
        labels = np.argmin(dist, axis=1)
        for c in range(n_clusters):
            members = x[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
        inertia = float(np.sum((x - centers[labels]) ** 2))
        history.append(inertia)
        if len(history) > 1:
            prev = history[-2]
            if prev == 0 or abs(prev - inertia) / prev < tol:
                break
    return labels, centers, history


def kmeans_baseline(fs: FeatureSet, n_clusters: int, seed: int) -> np.ndarray:
    labels, _, _ = kmeans(fs.features, n_clusters, seed)
    # renumber by first appearance so equal partitions give equal label files
    _, first = np.unique(labels, return_index=True)
    remap = {lab: i for i, lab in enumerate(labels[np.sort(first)])}
    return np.array([remap[lab] for lab in labels], dtype=np.int64)
