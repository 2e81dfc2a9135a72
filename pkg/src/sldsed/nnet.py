"""CRNN tagger trained with CTC: GLU conv blocks, frequency-only max pooling,
a bidirectional GRU and an (N+1)-way softmax output, all in plain numpy.

Activations are laid out channel-last, ``(batch, time, freq, channels)``.
Convolution kernels keep the conventional ``(out, in, kh, kw)`` shape.
"""

from __future__ import annotations

import csv
import io
import logging
import struct
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import ctc
from .dsp import LogMelSpectrogram
from .errors import DataError, InvalidArgument, NumericFailure, StateError

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SLDCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    n_classes: int = 5
    n_mels: int = 64
    channels: tuple = (16, 32, 32)
    pools: tuple = (2, 2, 2)
    kernel: tuple = (3, 3)
    hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "pools", tuple(int(p) for p in self.pools))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if len(self.channels) != len(self.pools) or not self.channels:
            raise InvalidArgument("channels and pools must be non-empty and equally long")
        if self.n_mels % int(np.prod(self.pools)):
            raise InvalidArgument(
                f"n_mels={self.n_mels} not divisible by total pooling {int(np.prod(self.pools))}"
            )
        if self.n_classes < 1 or self.hidden < 1:
            raise InvalidArgument("n_classes and hidden must be positive")

    @property
    def bottleneck_bins(self) -> int:
        return self.n_mels // int(np.prod(self.pools))

    @property
    def bottleneck_dim(self) -> int:
        return self.bottleneck_bins * self.channels[-1]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Architecture":
        kv = dict(line.split("=", 1) for line in text.strip().splitlines() if "=" in line)
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name].strip()
            kwargs[f.name] = tuple(int(x) for x in raw.split(",")) if f.type == "tuple" else int(raw)
        return cls(**kwargs)


@dataclass
class GluConvLayer:
    W: np.ndarray
    V: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.W.shape != self.V.shape or self.W.ndim != 4:
            raise InvalidArgument(f"W {self.W.shape} and V {self.V.shape} must be equal 4-D kernels")
        if self.b.shape != self.c.shape or self.b.shape != (self.W.shape[0],):
            raise InvalidArgument("biases b and c must both have shape (out_ch,)")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 60
    patience: int = 8
    dropout: float = 0.2
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgument("learning_rate must be positive")
        if self.patience < 1:
            raise InvalidArgument("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidArgument("batch_size and max_epochs must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument("dropout must be in [0, 1)")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "wall_seconds"])
        for r in self.rows:
            writer.writerow([r["epoch"], f"{r['train_loss']:.6f}", f"{r['val_loss']:.6f}",
                             f"{r['wall_seconds']:.3f}"])
        return buf.getvalue()


# --- primitive layers --------------------------------------------------------


sigmoid = expit


def _im2col(X, kh, kw):
    B, T, F, C = X.shape
    ph, pw = kh // 2, kw // 2
    Xp = np.pad(X, ((0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw), (0, 0)))
    cols = np.concatenate(
        [Xp[:, i:i + T, j:j + F, :] for i in range(kh) for j in range(kw)], axis=-1
    )
    return cols.reshape(B * T * F, kh * kw * C)


def _col2im(dcols, shape, kh, kw):
    B, T, F, C = shape
    ph, pw = kh // 2, kw // 2
    dcols = dcols.reshape(B, T, F, kh * kw, C)
    dXp = np.zeros((B, T + kh - 1, F + kw - 1, C), dtype=dcols.dtype)
    for idx in range(kh * kw):
        i, j = divmod(idx, kw)
        dXp[:, i:i + T, j:j + F, :] += dcols[:, :, :, idx, :]
    return dXp[:, ph:ph + T, pw:pw + F, :]


def _kernel_matrix(K):
    O, C, kh, kw = K.shape
    return K.transpose(2, 3, 1, 0).reshape(kh * kw * C, O)


def _kernel_from_matrix(M, shape):
    O, C, kh, kw = shape
    return M.reshape(kh, kw, C, O).transpose(3, 2, 0, 1)


def _glu_forward(X, W, V, b, c):
    B, T, F, C = X.shape
    O, Cw, kh, kw = W.shape
    if Cw != C:
        raise InvalidArgument(f"kernel expects {Cw} input channels, feature map has {C}")
    cols = _im2col(X, kh, kw)
    Wcat = np.concatenate([_kernel_matrix(W), _kernel_matrix(V)], axis=1)
    Z = cols @ Wcat + np.concatenate([b, c])
    lin, gate = Z[:, :O], sigmoid(Z[:, O:])
    Y = (lin * gate).reshape(B, T, F, O)
    return Y, (cols, Wcat, lin, gate, X.shape, W.shape)


def _glu_backward(dY, cache, need_dx=True):
    cols, Wcat, lin, gate, xshape, wshape = cache
    O = wshape[0]
    dY = dY.reshape(-1, O)
    dZ = np.concatenate([dY * gate, dY * lin * gate * (1.0 - gate)], axis=1)
    dWcat = cols.T @ dZ
    dbias = dZ.sum(axis=0)
    grads = {
        "W": _kernel_from_matrix(dWcat[:, :O], wshape),
        "V": _kernel_from_matrix(dWcat[:, O:], wshape),
        "b": dbias[:O],
        "c": dbias[O:],
    }
    dX = _col2im(dZ @ Wcat.T, xshape, wshape[2], wshape[3]) if need_dx else None
    return dX, grads


def glu_forward(X, layer: GluConvLayer):
    """``(W * X + b) * sigmoid(V * X + c)`` with same padding.

    ``X`` is ``(T, F, C)`` or batched ``(B, T, F, C)``; the output keeps T and F.
    """
    X = np.asarray(X)
    single = X.ndim == 3
    if single:
        X = X[None]
    if X.ndim != 4:
        raise InvalidArgument(f"expected a (B,) T x F x C feature map, got shape {X.shape}")
    Y, _ = _glu_forward(X, layer.W, layer.V, layer.b, layer.c)
    return Y[0] if single else Y


def _pool_forward(X, p):
    """Max over non-overlapping groups of ``p`` frequency bins; first maximum wins ties."""
    B, T, F, C = X.shape
    blocks = X.reshape(B, T, F // p, p, C)
    out = blocks[:, :, :, 0, :].copy()
    idx = np.zeros(out.shape, dtype=np.int8)
    for k in range(1, p):
        cand = blocks[:, :, :, k, :]
        better = cand > out
        np.copyto(out, cand, where=better)
        idx[better] = k
    return out, (idx, X.shape, p)


def _pool_backward(dY, cache):
    idx, shape, p = cache
    B, T, F, C = shape
    dblocks = np.empty((B, T, F // p, p, C), dtype=dY.dtype)
    for k in range(p):
        dblocks[:, :, :, k, :] = np.where(idx == k, dY, 0)
    return dblocks.reshape(shape)


def _gru_forward(X, Wx, Wh, b):
    """Single-direction GRU over ``X`` of shape (B, T, D), zero initial state."""
    B, T, _ = X.shape
    H = Wh.shape[0]
    A = X @ Wx + b
    Wzr, Wn = Wh[:, :2 * H], Wh[:, 2 * H:]
    h = np.zeros((B, H), dtype=X.dtype)
    hs = np.empty((B, T, H), dtype=X.dtype)
    hprev = np.empty_like(hs)
    zs, rs, ns = np.empty_like(hs), np.empty_like(hs), np.empty_like(hs)
    for t in range(T):
        hprev[:, t] = h
        zr = sigmoid(A[:, t, :2 * H] + h @ Wzr)
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(A[:, t, 2 * H:] + (r * h) @ Wn)
        h = z * h + (1.0 - z) * n
        hs[:, t], zs[:, t], rs[:, t], ns[:, t] = h, z, r, n
    return hs, (X, Wx, Wh, hprev, zs, rs, ns)


def _gru_backward(dH, cache):
    X, Wx, Wh, hprev, zs, rs, ns = cache
    B, T, H = dH.shape
    Wzr, Wn = Wh[:, :2 * H], Wh[:, 2 * H:]
    dA = np.empty((B, T, 3 * H), dtype=dH.dtype)
    dWh = np.zeros_like(Wh)
    dh = np.zeros((B, H), dtype=dH.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh + dH[:, t]
        h, z, r, n = hprev[:, t], zs[:, t], rs[:, t], ns[:, t]
        dn = dh * (1.0 - z) * (1.0 - n * n)
        dz = dh * (h - n) * z * (1.0 - z)
        drh = dn @ Wn.T
        dr = drh * h * r * (1.0 - r)
        dzr = np.concatenate([dz, dr], axis=1)
        dWh[:, :2 * H] += h.T @ dzr
        dWh[:, 2 * H:] += (r * h).T @ dn
        dh = dh * z + drh * r + dzr @ Wzr.T
        dA[:, t, :2 * H] = dzr
        dA[:, t, 2 * H:] = dn
    D = X.shape[2]
    dWx = X.reshape(-1, D).T @ dA.reshape(-1, 3 * H)
    db = dA.sum(axis=(0, 1))
    dX = dA @ Wx.T
    return dX, dWx, dWh, db


def _dropout_mask(rng, shape, p, dtype):
    if p <= 0.0 or rng is None:
        return None
    return ((rng.random(shape) >= p) / (1.0 - p)).astype(dtype)


# --- model -------------------------------------------------------------------


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(arch: Architecture, seed: int = 0, dtype=np.float32) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    kh, kw = arch.kernel
    in_ch = 1
    for i, out_ch in enumerate(arch.channels):
        shape = (out_ch, in_ch, kh, kw)
        fan_in, fan_out = in_ch * kh * kw, out_ch * kh * kw
        params[f"conv{i}.W"] = _glorot(rng, shape, fan_in, fan_out, dtype)
        params[f"conv{i}.V"] = _glorot(rng, shape, fan_in, fan_out, dtype)
        params[f"conv{i}.b"] = np.zeros(out_ch, dtype=dtype)
        params[f"conv{i}.c"] = np.zeros(out_ch, dtype=dtype)
        in_ch = out_ch
    D, H = arch.bottleneck_dim, arch.hidden
    for d in ("fwd", "bwd"):
        params[f"gru.{d}.Wx"] = np.concatenate(
            [_glorot(rng, (D, H), D, H, dtype) for _ in range(3)], axis=1)
        params[f"gru.{d}.Wh"] = np.concatenate(
            [_glorot(rng, (H, H), H, H, dtype) for _ in range(3)], axis=1)
        params[f"gru.{d}.b"] = np.zeros(3 * H, dtype=dtype)
    K = arch.n_classes + 1
    params["out.W"] = _glorot(rng, (2 * H, K), 2 * H, K, dtype)
    params["out.b"] = np.zeros(K, dtype=dtype)
    return params


def _check_finite(x, layer, what):
    if not np.all(np.isfinite(x)):
        raise NumericFailure(f"non-finite {what}", layer=layer)


class CrnnModel:
    """CRNN-CTC tagger.

    ``feature_mean``/``feature_std`` standardize each mel band before the first
    convolution; they are fitted on the training set and stored with the weights.
    """

    def __init__(self, arch: Architecture, params: dict | None = None, seed: int = 0,
                 dtype=np.float32):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        self.params = params if params is not None else init_params(arch, seed, self.dtype)
        self.feature_mean = np.zeros(arch.n_mels, dtype=self.dtype)
        self.feature_std = np.ones(arch.n_mels, dtype=self.dtype)
        self._cache = None

    @property
    def blank(self) -> int:
        return self.arch.n_classes

    def conv_layer(self, i: int) -> GluConvLayer:
        p = self.params
        return GluConvLayer(p[f"conv{i}.W"], p[f"conv{i}.V"], p[f"conv{i}.b"], p[f"conv{i}.c"])

    def copy(self) -> "CrnnModel":
        other = CrnnModel(self.arch, {k: v.copy() for k, v in self.params.items()}, dtype=self.dtype)
        other.feature_mean = self.feature_mean.copy()
        other.feature_std = self.feature_std.copy()
        return other

    def _as_batch(self, x):
        if isinstance(x, LogMelSpectrogram):
            x = x.frames
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.arch.n_mels:
            raise InvalidArgument(
                f"expected (B,) T x {self.arch.n_mels} features, got shape {x.shape}")
        return ((x - self.feature_mean) / self.feature_std).astype(self.dtype)

    def forward_batch(self, x, dropout: float = 0.0, rng=None, keep_cache: bool = False):
        """Logits ``(B, T, N+1)`` and bottleneck features ``(B, T, b*c)``.

        With ``keep_cache`` the intermediate activations are stored for
        :meth:`backward`; inference without it leaves the model untouched.
        """
        arch, p = self.arch, self.params
        h = self._as_batch(x)[..., None]
        B, T = h.shape[:2]
        caches = []
        for i, pool in enumerate(arch.pools):
            h, gc = _glu_forward(h, p[f"conv{i}.W"], p[f"conv{i}.V"], p[f"conv{i}.b"], p[f"conv{i}.c"])
            h, pc = _pool_forward(h, pool)
            _check_finite(h, i, "conv activation")
            caches.append((gc, pc))
        bottleneck = h.reshape(B, T, -1)
        mask_in = _dropout_mask(rng, bottleneck.shape, dropout, self.dtype)
        g_in = bottleneck * mask_in if mask_in is not None else bottleneck
        layer = len(arch.pools)
        hf, cf = _gru_forward(g_in, p["gru.fwd.Wx"], p["gru.fwd.Wh"], p["gru.fwd.b"])
        hb, cb = _gru_forward(g_in[:, ::-1], p["gru.bwd.Wx"], p["gru.bwd.Wh"], p["gru.bwd.b"])
        rnn = np.concatenate([hf, hb[:, ::-1]], axis=2)
        _check_finite(rnn, layer, "recurrent activation")
        mask_out = _dropout_mask(rng, rnn.shape, dropout, self.dtype)
        o_in = rnn * mask_out if mask_out is not None else rnn
        logits = o_in @ p["out.W"] + p["out.b"]
        _check_finite(logits, layer + 1, "logits")
        if keep_cache:
            self._cache = (caches, bottleneck.shape, mask_in, cf, cb, mask_out, o_in)
        return logits, bottleneck

    def backward(self, dlogits) -> dict:
        """Parameter gradients given d(loss)/d(logits) from the last cached forward."""
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        caches, bshape, mask_in, cf, cb, mask_out, o_in = self._cache
        arch, p = self.arch, self.params
        dlogits = np.asarray(dlogits, dtype=self.dtype)
        K = dlogits.shape[-1]
        grads = {
            "out.W": o_in.reshape(-1, o_in.shape[-1]).T @ dlogits.reshape(-1, K),
            "out.b": dlogits.sum(axis=(0, 1)),
        }
        drnn = dlogits @ p["out.W"].T
        if mask_out is not None:
            drnn = drnn * mask_out
        H = arch.hidden
        dxf, grads["gru.fwd.Wx"], grads["gru.fwd.Wh"], grads["gru.fwd.b"] = _gru_backward(
            drnn[:, :, :H], cf)
        dxb, grads["gru.bwd.Wx"], grads["gru.bwd.Wh"], grads["gru.bwd.b"] = _gru_backward(
            np.ascontiguousarray(drnn[:, ::-1, H:]), cb)
        dh = dxf + dxb[:, ::-1]
        if mask_in is not None:
            dh = dh * mask_in
        B, T, _ = bshape
        dh = dh.reshape(B, T, arch.bottleneck_bins, arch.channels[-1])
        for i in range(len(arch.pools) - 1, -1, -1):
            gc, pc = caches[i]
            dh = _pool_backward(dh, pc)
            dh, g = _glu_backward(dh, gc, need_dx=i > 0)
            for k, v in g.items():
                grads[f"conv{i}.{k}"] = v
        return {k: grads[k] for k in p}

    def clear_cache(self):
        self._cache = None


def forward(model: CrnnModel, spec) -> tuple[np.ndarray, np.ndarray]:
    """Posteriorgram ``(T, N+1)`` and bottleneck features ``(T, b*c)`` for one clip."""
    logits, bottleneck = model.forward_batch(spec)
    probs = np.exp(ctc.log_softmax(logits[0].astype(np.float64)))
    return probs, bottleneck[0].astype(np.float64)


def backward(model: CrnnModel, dlogits) -> dict:
    return model.backward(dlogits)


def extract_bottleneck(model: CrnnModel, spec) -> np.ndarray:
    return forward(model, spec)[1]


# --- training ----------------------------------------------------------------


def batch_ctc(logits, labels):
    """Mean CTC loss over a batch and its gradient wrt the logits."""
    B = logits.shape[0]
    total = 0.0
    dlogits = np.empty(logits.shape, dtype=np.float64)
    for i in range(B):
        loss, g = ctc.ctc_loss_and_grad(logits[i], labels[i])
        total += loss
        dlogits[i] = g
    return total / B, dlogits / B


def global_norm_clip(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] *= scale
    return norm


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


def _frames(x):
    return x.frames if isinstance(x, LogMelSpectrogram) else np.asarray(x)


def fit_normalization(model: CrnnModel, features) -> None:
    stacked = np.concatenate([_frames(x) for x in features], axis=0)
    model.feature_mean = stacked.mean(axis=0).astype(model.dtype)
    model.feature_std = np.maximum(stacked.std(axis=0), 1e-3).astype(model.dtype)


def validate_labels(dataset, ids=None) -> None:
    for i, (x, label) in enumerate(dataset):
        ctc.check_feasible(_frames(x).shape[0], label, clip_id=ids[i] if ids else f"item {i}")


def _batches(dataset, order, batch_size):
    """Group indices by frame count so each batch stacks into one array."""
    by_len = {}
    for i in order:
        by_len.setdefault(_frames(dataset[i][0]).shape[0], []).append(i)
    out = []
    for T in sorted(by_len):
        idx = by_len[T]
        out.extend(idx[s:s + batch_size] for s in range(0, len(idx), batch_size))
    return out


def evaluate_loss(model: CrnnModel, dataset, batch_size: int = 16) -> float:
    if not dataset:
        return float("nan")
    total = 0.0
    for idx in _batches(dataset, range(len(dataset)), batch_size):
        x = np.stack([_frames(dataset[i][0]) for i in idx])
        logits, _ = model.forward_batch(x)
        loss, _ = batch_ctc(logits.astype(np.float64), [dataset[i][1] for i in idx])
        total += loss * len(idx)
    return total / len(dataset)


def train(model: CrnnModel, train_set, val_set, cfg: TrainConfig, ids=None, val_ids=None,
          fit_norm: bool = True, progress=None):
    """Train with Adam on the mean CTC loss; keep the parameters with the best validation loss.

    ``train_set``/``val_set`` are sequences of ``(features, label)`` pairs. With an
    empty validation set the training loss drives checkpoint selection and early
    stopping.
    """
    validate_labels(train_set, ids)
    validate_labels(val_set, val_ids)
    if fit_norm:
        fit_normalization(model, [x for x, _ in train_set])
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    history = TrainLog()
    best = {k: v.copy() for k, v in model.params.items()}
    stale = 0
    start = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        batches = _batches(train_set, order, cfg.batch_size)
        order_of_batches = rng.permutation(len(batches))
        epoch_loss, seen = 0.0, 0
        for bi in order_of_batches:
            idx = batches[bi]
            x = np.stack([_frames(train_set[i][0]) for i in idx])
            logits, _ = model.forward_batch(x, dropout=cfg.dropout, rng=rng, keep_cache=True)
            loss, dlogits = batch_ctc(logits.astype(np.float64), [train_set[i][1] for i in idx])
            grads = model.backward(dlogits)
            model.clear_cache()
            for k, g in grads.items():
                _check_finite(g, k, "gradient")
            global_norm_clip(grads, cfg.clip_norm)
            opt.step(model.params, grads)
            epoch_loss += loss * len(idx)
            seen += len(idx)
        train_loss = epoch_loss / seen
        val_loss = evaluate_loss(model, val_set) if val_set else train_loss
        history.rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                             "wall_seconds": time.perf_counter() - start})
        if progress is not None:
            progress(history.rows[-1])
        log.info("epoch %d train %.4f val %.4f", epoch, train_loss, val_loss)
        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best = {k: v.copy() for k, v in model.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params = best
    return model, history


# --- checkpoint I/O ----------------------------------------------------------


def checkpoint_bytes(model: CrnnModel) -> bytes:
    tensors = dict(model.params)
    tensors["norm.mean"] = model.feature_mean
    tensors["norm.std"] = model.feature_std
    desc = model.arch.to_text().encode("utf-8")
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(desc)), desc,
           struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_checkpoint(path, model: CrnnModel) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model))
    tmp.replace(path)


def load_checkpoint(path) -> CrnnModel:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc})") from exc
    try:
        return _parse_checkpoint(raw)
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from exc


def _parse_checkpoint(raw: bytes) -> CrnnModel:
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError("bad magic")
    pos = 8
    version, dlen = struct.unpack_from("<II", raw, pos)
    pos += 8
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported version {version}")
    arch = Architecture.from_text(raw[pos:pos + dlen].decode("utf-8"))
    pos += dlen
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) * 4
        if pos + size > len(raw):
            raise ValueError(f"tensor {name} truncated")
        tensors[name] = np.frombuffer(raw[pos:pos + size], dtype="<f4").reshape(shape).astype(np.float32)
        pos += size
    if pos != len(raw):
        raise ValueError("trailing bytes")
    expected = init_params(arch, 0)
    params = {}
    for k, ref in expected.items():
        if tensors[k].shape != ref.shape:
            raise ValueError(f"tensor {k} has shape {tensors[k].shape}, expected {ref.shape}")
        params[k] = tensors[k]
    model = CrnnModel(arch, params)
    model.feature_mean = tensors["norm.mean"]
    model.feature_std = tensors["norm.std"]
    return model


def write_train_log(path, history: TrainLog) -> None:
    Path(path).write_text(history.to_csv())
