"""Connectionist temporal classification: loss, gradient, greedy decoding, spikes.

The blank symbol is the last column of every posterior matrix, so event classes
keep the contiguous indices ``0 .. N-1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleLabel, InvalidArgument

NEG_INF = -np.inf


@dataclass(frozen=True)
class Spike:
    cls: int
    frame: int


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _logsumexp(*terms):
    stacked = np.stack(terms)
    m = stacked.max(axis=0)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(stacked - safe).sum(axis=0))


def min_frames(label) -> int:
    """Shortest input that can emit ``label``: one frame per symbol plus a blank per repeat."""
    label = list(label)
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def check_feasible(n_frames: int, label, clip_id=None) -> None:
    need = min_frames(label)
    if n_frames < need:
        raise InfeasibleLabel(
            f"label of length {len(label)} needs at least {need} frames, got {n_frames}",
            clip_id=clip_id,
        )


def _extended(label, blank: int) -> np.ndarray:
    ext = np.full(2 * len(label) + 1, blank, dtype=np.int64)
    ext[1::2] = label
    return ext


def _validate(log_probs, label):
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2 or log_probs.shape[1] < 2:
        raise InvalidArgument(f"expected a T x (N+1) matrix, got shape {log_probs.shape}")
    label = [int(c) for c in label]
    blank = log_probs.shape[1] - 1
    if any(c < 0 or c >= blank for c in label):
        raise InvalidArgument(f"label classes must lie in [0, {blank}), got {label}")
    check_feasible(log_probs.shape[0], label)
    return log_probs, label, blank


def _transitions(ext: np.ndarray, blank: int) -> np.ndarray:
    """Mask of extended positions reachable by skipping the preceding blank."""
    skip = np.zeros(ext.size, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return skip


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    """Shift right by k (k > 0) or left by -k, filling with -inf."""
    out = np.full_like(x, NEG_INF)
    if k > 0:
        out[k:] = x[:-k]
    else:
        out[:k] = x[-k:]
    return out


def _forward(lp_ext: np.ndarray, skip: np.ndarray) -> np.ndarray:
    T, S = lp_ext.shape
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp_ext[0, 0]
    if S > 1:
        alpha[0, 1] = lp_ext[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        jump = np.where(skip, _shift(prev, 2), NEG_INF)
        alpha[t] = _logsumexp(prev, _shift(prev, 1), jump) + lp_ext[t]
    return alpha


def _backward(lp_ext: np.ndarray, skip: np.ndarray) -> np.ndarray:
    """beta[t, s]: log-probability of the remaining frames t+1.. given state s at t."""
    T, S = lp_ext.shape
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    skip_from = np.zeros_like(skip)
    skip_from[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + lp_ext[t + 1]
        jump = np.where(skip_from, _shift(nxt, -2), NEG_INF)
        beta[t] = _logsumexp(nxt, _shift(nxt, -1), jump)
    return beta


def _final_logprob(alpha: np.ndarray) -> float:
    last = alpha[-1, -2:] if alpha.shape[1] > 1 else alpha[-1, -1:]
    return float(_logsumexp(*last))


def ctc_loss(log_probs, label) -> float:
    """Negative log-likelihood (nats) of ``label`` under framewise log-posteriors."""
    log_probs, label, blank = _validate(log_probs, label)
    ext = _extended(label, blank)
    alpha = _forward(log_probs[:, ext], _transitions(ext, blank))
    return -_final_logprob(alpha)


def ctc_loss_and_grad(logits, label) -> tuple[float, np.ndarray]:
    """CTC loss on ``softmax(logits)`` and its gradient with respect to the logits.

    The gradient is ``softmax(logits) - gamma`` where ``gamma[t, k]`` is the
    posterior probability that frame t emits symbol k under the label.
    """
    logits = np.asarray(logits, dtype=np.float64)
    log_probs = log_softmax(logits)
    log_probs, label, blank = _validate(log_probs, label)
    ext = _extended(label, blank)
    skip = _transitions(ext, blank)
    lp_ext = log_probs[:, ext]
    alpha = _forward(lp_ext, skip)
    beta = _backward(lp_ext, skip)
    log_p = _final_logprob(alpha)
    occupancy = np.exp(alpha + beta - log_p)  # (T, S)
    gamma = np.zeros_like(log_probs)
    for s, k in enumerate(ext):
        gamma[:, k] += occupancy[:, s]
    return -log_p, np.exp(log_probs) - gamma


def ctc_grad(logits, label) -> np.ndarray:
    return ctc_loss_and_grad(logits, label)[1]


def framewise_argmax(probs: np.ndarray) -> np.ndarray:
    """Per-frame argmax; ties go to the lowest index, so blank (last) loses every tie."""
    return np.argmax(np.asarray(probs), axis=1)


def best_path_decode(probs) -> list[int]:
    probs = np.asarray(probs)
    blank = probs.shape[1] - 1
    path = framewise_argmax(probs)
    out = []
    prev = None
    for sym in path.tolist():
        if sym != prev and sym != blank:
            out.append(sym)
        prev = sym
    return out


def extract_spikes(probs) -> list[Spike]:
    """One spike per maximal run of a non-blank argmax symbol, at that symbol's peak frame."""
    probs = np.asarray(probs)
    blank = probs.shape[1] - 1
    path = framewise_argmax(probs)
    spikes = []
    start = 0
    T = path.size
    while start < T:
        sym = int(path[start])
        end = start
        while end + 1 < T and path[end + 1] == sym:
            end += 1
        if sym != blank:
            peak = start + int(np.argmax(probs[start:end + 1, sym]))
            spikes.append(Spike(sym, peak))
        start = end + 1
    return spikes


def spikes_to_json(spikes, hop_seconds: float) -> str:
    return json.dumps(
        [{"class": s.cls, "frame": s.frame, "time_s": round(s.frame * hop_seconds, 3)} for s in spikes]
    )


def spikes_from_json(text: str) -> list[Spike]:
    return [Spike(int(d["class"]), int(d["frame"])) for d in json.loads(text)]
