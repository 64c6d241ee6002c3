"""Image-text alignment network: frozen word embeddings, an LSTM text
encoder, a two-layer scorer, both contrastive losses, exact reverse-mode
gradients, and per-subnetwork Adam.

Everything is plain float64 numpy; training is single-threaded and
bit-reproducible under a fixed seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyResultError, NumericError, SchemaError
from .vo_extract import tokenize

ENCODER_PARAMS = ("enc.W", "enc.b")
ALIGN_PARAMS = ("alg.W1", "alg.b1", "alg.W2", "alg.b2")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _glorot(rng, shape):
    fan_in, fan_out = shape[1], shape[0]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class AsaModel:
    params: dict[str, np.ndarray]
    dims: dict[str, int]

    @classmethod
    def init(cls, config, rng=None) -> "AsaModel":
        if rng is None:
            rng = np.random.default_rng(config.seed)
        H, E = config.d_text, config.d_w2v
        d_vs = config.d_text + config.d_img
        params = {
            "enc.W": _glorot(rng, (4 * H, E + H)),
            "enc.b": np.zeros(4 * H),
            "alg.W1": _glorot(rng, (config.d_alg, d_vs)),
            "alg.b1": np.zeros(config.d_alg),
            "alg.W2": _glorot(rng, (1, config.d_alg))[0],
            "alg.b2": np.zeros(()),
        }
        params["enc.b"][H:2 * H] = 1.0  # forget-gate bias
        dims = {"d_img": config.d_img, "d_w2v": config.d_w2v,
                "d_text": config.d_text, "d_alg": config.d_alg,
                "max_seq_len": config.max_seq_len}
        return cls(params=params, dims=dims)


class AdamState:
    """Bias-corrected Adam with one learning rate per subnetwork."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             names) -> None:
        self.t += 1
        for name in names:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** self.t)
            v_hat = self.v[name] / (1 - self.beta2 ** self.t)
            params[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizers(config) -> dict[str, AdamState]:
    return {"encoder": AdamState(lr=config.lr_encoder),
            "align": AdamState(lr=config.lr_align)}


# --- text encoder -------------------------------------------------------------

def _embed(tokens, embeddings, max_seq_len: int) -> list[np.ndarray]:
    if not tokens:
        raise SchemaError("cannot encode an empty token sequence")
    return [np.asarray(embeddings.vector(t), dtype=np.float64)
            for t in tokens[:max_seq_len]]


def _lstm_forward(params, xs):
    W, b = params["enc.W"], params["enc.b"]
    H = W.shape[0] // 4
    h = np.zeros(H)
    c = np.zeros(H)
    cache = []
    for x in xs:
        xh = np.concatenate([x, h])
        z = W @ xh + b
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        o = _sigmoid(z[2 * H:3 * H])
        g = np.tanh(z[3 * H:])
        c_prev = c
        c = f * c_prev + i * g
        hc = np.tanh(c)
        h = o * hc
        cache.append((xh, i, f, o, g, c_prev, hc))
    return h, cache


def _lstm_backward(params, cache, dh, dW, db):
    W = params["enc.W"]
    H = W.shape[0] // 4
    dc = np.zeros(H)
    for xh, i, f, o, g, c_prev, hc in reversed(cache):
        do = dh * hc
        dc = dc + dh * o * (1.0 - hc * hc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                             do * o * (1 - o), dg * (1 - g * g)])
        dW += np.outer(dz, xh)
        db += dz
        dxh = W.T @ dz
        dh = dxh[-H:]
        dc = dc * f
    # gradient w.r.t. the (frozen) embeddings is dropped


def encode_text(tokens, model: AsaModel, embeddings) -> np.ndarray:
    """Final LSTM hidden state over the (truncated) token sequence."""
    xs = _embed(tokens, embeddings, model.dims["max_seq_len"])
    h, _ = _lstm_forward(model.params, xs)
    return h


# --- alignment scorer ---------------------------------------------------------

def align_score(v: np.ndarray, s: np.ndarray, model: AsaModel) -> float:
    """Scalar confidence that image feature v and text encoding s align."""
    cs, _ = _align_forward(model.params, v[None, :], s[None, :])
    return float(cs[0, 0])


def _align_forward(params, V, S):
    d_img = V.shape[1]
    W1, b1, W2, b2 = (params["alg.W1"], params["alg.b1"],
                      params["alg.W2"], params["alg.b2"])
    W1v, W1s = W1[:, :d_img], W1[:, d_img:]
    A = V @ W1v.T
    B = S @ W1s.T
    pre = A[:, None, :] + B[None, :, :] + b1
    hidden = np.maximum(pre, 0.0)
    cs = hidden @ W2 + b2
    return cs, (V, S, pre, hidden)


def _align_backward(params, cache, dcs):
    V, S, pre, hidden = cache
    d_img = V.shape[1]
    W1 = params["alg.W1"]
    W1v, W1s = W1[:, :d_img], W1[:, d_img:]
    W2 = params["alg.W2"]
    dpre = (dcs[:, :, None] * W2) * (pre > 0.0)
    dA = dpre.sum(axis=1)
    dB = dpre.sum(axis=0)
    grads = {
        "alg.W2": np.einsum("nkd,nk->d", hidden, dcs),
        "alg.b2": np.asarray(dcs.sum()),
        "alg.b1": dpre.sum(axis=(0, 1)),
        "alg.W1": np.hstack([dA.T @ V, dB.T @ S]),
    }
    dS = dB @ W1s
    return grads, dS


# --- losses -------------------------------------------------------------------

def stage1_loss(cs: np.ndarray, alpha_c: float, alpha_w: float) -> float:
    """Within-batch contrastive loss over an N x N score matrix."""
    n = cs.shape[0]
    if cs.shape != (n, n):
        raise SchemaError("stage1_loss expects a square score matrix")
    diag = np.diag(cs)
    correct = alpha_c * _softplus(-diag).sum()
    wrong = alpha_w * (_softplus(cs).sum() - _softplus(diag).sum())
    return float(correct + wrong)


def _stage1_dcs(cs, alpha_c, alpha_w):
    dcs = alpha_w * _sigmoid(cs)
    idx = np.arange(cs.shape[0])
    dcs[idx, idx] = -alpha_c * _sigmoid(-np.diag(cs))
    return dcs


def stage2_loss(cs: np.ndarray, labels, alpha_c: float, alpha_w: float) -> float:
    """Per-image loss against all M category descriptions."""
    n, m = cs.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise SchemaError("stage2_loss: one label per row required")
    if np.any(labels < 0) or np.any(labels >= m):
        raise SchemaError("stage2_loss: label out of range")
    idx = np.arange(n)
    own = cs[idx, labels]
    correct = alpha_c * _softplus(-own).sum()
    wrong = alpha_w * (_softplus(cs).sum() - _softplus(own).sum())
    return float(correct + wrong)


def _stage2_dcs(cs, labels, alpha_c, alpha_w):
    dcs = alpha_w * _sigmoid(cs)
    idx = np.arange(cs.shape[0])
    dcs[idx, labels] = -alpha_c * _sigmoid(-cs[idx, labels])
    return dcs


# --- combined forward/backward ------------------------------------------------

def loss_and_grads(model: AsaModel, V: np.ndarray, text_seqs, embeddings,
                   loss_kind: str, labels=None, alpha_c: float = 1.0,
                   alpha_w: float = 0.01):
    """Exact gradients of the selected loss for every trainable parameter.

    For stage 1 `text_seqs` are the batch's own descriptions (square score
    matrix); for stage 2 they are the M category descriptions.
    """
    params = model.params
    max_len = model.dims["max_seq_len"]
    encodings = []
    caches = []
    for tokens in text_seqs:
        h, cache = _lstm_forward(params, _embed(tokens, embeddings, max_len))
        encodings.append(h)
        caches.append(cache)
    S = np.array(encodings)
    cs, align_cache = _align_forward(params, V, S)

    if loss_kind == "stage1":
        loss = stage1_loss(cs, alpha_c, alpha_w)
        dcs = _stage1_dcs(cs, alpha_c, alpha_w)
    elif loss_kind == "stage2":
        loss = stage2_loss(cs, labels, alpha_c, alpha_w)
        dcs = _stage2_dcs(cs, np.asarray(labels), alpha_c, alpha_w)
    else:
        raise SchemaError(f"unknown loss kind {loss_kind!r}")

    grads, dS = _align_backward(params, align_cache, dcs)
    grads["enc.W"] = np.zeros_like(params["enc.W"])
    grads["enc.b"] = np.zeros_like(params["enc.b"])
    for j, cache in enumerate(caches):
        _lstm_backward(params, cache, dS[j].copy(),
                       grads["enc.W"], grads["enc.b"])
    return loss, grads, cs


def batch_scores(model: AsaModel, V: np.ndarray, text_seqs, embeddings) -> np.ndarray:
    """Forward-only score matrix, rows = images, columns = texts."""
    S = np.array([encode_text(t, model, embeddings) for t in text_seqs])
    cs, _ = _align_forward(model.params, V, S)
    return cs


# --- stage-1 training ---------------------------------------------------------

@dataclass
class TraceEntry:
    step: int
    loss: float
    batch_size: int

    @property
    def flagged(self) -> bool:
        return self.batch_size == 1


def _batch_schedule(n_items: int, batch_size: int, n_steps: int, seed: int):
    """Deterministic sequence of index batches; reshuffles every epoch."""
    rng = np.random.default_rng(seed)
    batches = []
    while len(batches) < n_steps:
        perm = rng.permutation(n_items)
        for start in range(0, n_items, batch_size):
            batches.append(perm[start:start + batch_size])
            if len(batches) == n_steps:
                break
    return batches


def train_stage1(corpus, features, embeddings, model: AsaModel, config,
                 opt_states: dict[str, AdamState] | None = None,
                 start_step: int = 0, n_steps: int | None = None):
    """Mini-batch contrastive training on train-split image-description pairs.

    Resuming from `start_step` with restored optimizer state reproduces the
    uninterrupted run exactly (the batch schedule is replayed from the seed).
    """
    items = [(r.image_id, tokenize(r.description))
             for r in corpus if r.split == "train"]
    items = [(i, t) for i, t in items if t]
    if len(items) < 2:
        raise EmptyResultError("stage-1 training needs at least 2 items")
    if opt_states is None:
        opt_states = make_optimizers(config)
    total = config.stage1_steps if n_steps is None else start_step + n_steps
    schedule = _batch_schedule(len(items), config.batch_size, total, config.seed)

    trace: list[TraceEntry] = []
    for step in range(start_step, total):
        batch = schedule[step]
        ids = [items[i][0] for i in batch]
        seqs = [items[i][1] for i in batch]
        V = np.array([features.entries[i] for i in ids])
        loss, grads, _ = loss_and_grads(
            model, V, seqs, embeddings, "stage1",
            alpha_c=config.alpha_c, alpha_w=config.alpha_w)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite stage-1 loss at step {step}")
        opt_states["encoder"].step(model.params, grads, ENCODER_PARAMS)
        opt_states["align"].step(model.params, grads, ALIGN_PARAMS)
        trace.append(TraceEntry(step=step, loss=loss, batch_size=len(batch)))
    return model, opt_states, trace


def within_batch_retrieval_accuracy(model: AsaModel, embeddings, items,
                                    batch_size: int, seed: int,
                                    features=None) -> float:
    """Fraction of items whose own description attains the row maximum.

    `items` are (image_id, tokens) pairs when `features` is given, else
    (feature_vector, tokens). Exact score ties (duplicate descriptions)
    count as hits.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(items))
    hits = 0
    total = 0
    for start in range(0, len(items), batch_size):
        batch = order[start:start + batch_size]
        if len(batch) < 2:
            continue
        if features is not None:
            V = np.array([features.entries[items[i][0]] for i in batch])
        else:
            V = np.array([items[i][0] for i in batch])
        seqs = [items[i][1] for i in batch]
        cs = batch_scores(model, V, seqs, embeddings)
        row_max = cs.max(axis=1)
        hits += int(np.sum(np.diag(cs) >= row_max))
        total += len(batch)
    if total == 0:
        raise EmptyResultError("no complete batches to evaluate")
    return hits / total
