"""Minimal neural engine: dense and LSTM autoencoders with analytic gradients.

Everything runs in float64 on numpy. Gradients are hand-derived backprop
(dense) and backpropagation through time (LSTM); ``gradcheck`` compares them
against central finite differences. Training uses Adam with per-epoch seeded
shuffling, so runs are exactly reproducible from (seed, data, config).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit as sigmoid

from .errors import InvalidParameter, ShapeError

GATES = ("i", "f", "o", "g")


def reconstruction_loss(x, xhat) -> float:
    """Mean over feature dimensions of squared differences."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ShapeError(f"length mismatch: {x.shape} vs {xhat.shape}")
    return float(np.mean((x - xhat) ** 2))


class DenseAutoencoder:
    """Single-hidden-layer autoencoder: z = act(A1 x + b1), xhat = A2 z + b2.

    Output activation is the identity; hidden activation is tanh by default
    (identity supported for exactly-linear configurations).
    """

    kind = "dense"

    def __init__(self, input_dim: int, hidden_dim: int,
                 hidden_activation: str = "tanh", params: dict | None = None):
        if hidden_activation not in ("tanh", "identity"):
            raise InvalidParameter(f"unknown hidden activation {hidden_activation!r}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.hidden_activation = hidden_activation
        if params is None:
            params = {
                "A1": np.zeros((hidden_dim, input_dim)),
                "b1": np.zeros(hidden_dim),
                "A2": np.zeros((input_dim, hidden_dim)),
                "b2": np.zeros(input_dim),
            }
        self._check_shapes(params)
        self.params = params

    def _check_shapes(self, params):
        expected = {
            "A1": (self.hidden_dim, self.input_dim),
            "b1": (self.hidden_dim,),
            "A2": (self.input_dim, self.hidden_dim),
            "b2": (self.input_dim,),
        }
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {params[name].shape}")

    @classmethod
    def initialized(cls, input_dim, hidden_dim, rng, hidden_activation="tanh",
                    init_scale=1.0):
        """Weights uniform in [-s, s] with s = init_scale / sqrt(fan-in); zero biases."""
        s1 = init_scale / np.sqrt(input_dim)
        s2 = init_scale / np.sqrt(hidden_dim)
        params = {
            "A1": rng.uniform(-s1, s1, (hidden_dim, input_dim)),
            "b1": np.zeros(hidden_dim),
            "A2": rng.uniform(-s2, s2, (input_dim, hidden_dim)),
            "b2": np.zeros(input_dim),
        }
        return cls(input_dim, hidden_dim, hidden_activation, params)

    def forward(self, x):
        """Return (hidden, reconstruction); x is (K,) or (N, K)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"input dim {x.shape[-1]}, model expects {self.input_dim}")
        p = self.params
        z_pre = x @ p["A1"].T + p["b1"]
        z = np.tanh(z_pre) if self.hidden_activation == "tanh" else z_pre
        xhat = z @ p["A2"].T + p["b2"]
        return z, xhat

    def loss(self, batch) -> float:
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        _, xhat = self.forward(batch)
        return float(np.mean((batch - xhat) ** 2))

    def loss_and_grads(self, batch):
        """Mean loss over the minibatch and its analytic parameter gradients."""
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        n, k = batch.shape
        if n == 0:
            raise InvalidParameter("empty minibatch")
        if k != self.input_dim:
            raise ShapeError(f"input dim {k}, model expects {self.input_dim}")
        p = self.params
        z_pre = batch @ p["A1"].T + p["b1"]
        z = np.tanh(z_pre) if self.hidden_activation == "tanh" else z_pre
        xhat = z @ p["A2"].T + p["b2"]
        diff = xhat - batch
        loss = float(np.mean(diff ** 2))

        d_xhat = 2.0 * diff / (n * k)
        d_z = d_xhat @ p["A2"]
        d_zpre = d_z * (1.0 - z ** 2) if self.hidden_activation == "tanh" else d_z
        grads = {
            "A1": d_zpre.T @ batch,
            "b1": d_zpre.sum(axis=0),
            "A2": d_xhat.T @ z,
            "b2": d_xhat.sum(axis=0),
        }
        return loss, grads


class LstmAutoencoder:
    """LSTM encoder (input -> hidden state) plus affine decoder back to input.

    Gate and state updates per step, from zero initial state per sequence:
        i = sig(W_i x + U_i h + b_i)      f = sig(W_f x + U_f h + b_f)
        o = sig(W_o x + U_o h + b_o)      g = tanh(W_g x + U_g h + b_g)
        c' = f*c + i*g                    h' = o * tanh(c')
    Decoder: xhat = V h' + c_dec. Sequence loss is the mean over steps of the
    per-step reconstruction loss.
    """

    kind = "recurrent"

    def __init__(self, input_dim: int, hidden_dim: int, unroll: int = 25,
                 params: dict | None = None):
        if unroll < 1:
            raise InvalidParameter(f"unroll length must be >= 1, got {unroll}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.unroll = unroll
        if params is None:
            params = {}
            for gate in GATES:
                params[f"W_{gate}"] = np.zeros((hidden_dim, input_dim))
                params[f"U_{gate}"] = np.zeros((hidden_dim, hidden_dim))
                params[f"b_{gate}"] = np.zeros(hidden_dim)
            params["V"] = np.zeros((input_dim, hidden_dim))
            params["c_dec"] = np.zeros(input_dim)
        self._check_shapes(params)
        self.params = params

    def _check_shapes(self, params):
        expected = {}
        for gate in GATES:
            expected[f"W_{gate}"] = (self.hidden_dim, self.input_dim)
            expected[f"U_{gate}"] = (self.hidden_dim, self.hidden_dim)
            expected[f"b_{gate}"] = (self.hidden_dim,)
        expected["V"] = (self.input_dim, self.hidden_dim)
        expected["c_dec"] = (self.input_dim,)
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {params[name].shape}")

    @classmethod
    def initialized(cls, input_dim, hidden_dim, rng, unroll=25, init_scale=1.0):
        """Uniform [-s, s] weights, zero biases, forget-gate bias at 1.0."""
        sw = init_scale / np.sqrt(input_dim)
        su = init_scale / np.sqrt(hidden_dim)
        params = {}
        for gate in GATES:
            params[f"W_{gate}"] = rng.uniform(-sw, sw, (hidden_dim, input_dim))
            params[f"U_{gate}"] = rng.uniform(-su, su, (hidden_dim, hidden_dim))
            params[f"b_{gate}"] = np.zeros(hidden_dim)
        params["b_f"] = np.ones(hidden_dim)
        params["V"] = rng.uniform(-su, su, (input_dim, hidden_dim))
        params["c_dec"] = np.zeros(input_dim)
        return cls(input_dim, hidden_dim, unroll, params)

    def step(self, x, h, c):
        """One cell update; x (B, K) or (K,), state (h, c) of matching rank."""
        x = np.asarray(x, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        if x.shape[-1] != self.input_dim or h.shape[-1] != self.hidden_dim:
            raise ShapeError(
                f"step shapes x{x.shape} h{h.shape}, model is "
                f"K={self.input_dim} H={self.hidden_dim}"
            )
        p = self.params
        gates = {}
        for gate in GATES:
            pre = x @ p[f"W_{gate}"].T + h @ p[f"U_{gate}"].T + p[f"b_{gate}"]
            gates[gate] = np.tanh(pre) if gate == "g" else sigmoid(pre)
        c_new = gates["f"] * c + gates["i"] * gates["g"]
        h_new = gates["o"] * np.tanh(c_new)
        return h_new, c_new, gates

    def decode(self, h):
        return h @ self.params["V"].T + self.params["c_dec"]

    def forward(self, seqs):
        """Reconstruct a batch of sequences (B, T, K) from zero initial state.

        Returns (reconstructions (B, T, K), final (h, c)).
        """
        seqs = np.asarray(seqs, dtype=np.float64)
        if seqs.ndim == 2:
            seqs = seqs[None]
        b, t, k = seqs.shape
        if t < 1:
            raise InvalidParameter("empty sequence")
        if k != self.input_dim:
            raise ShapeError(f"input dim {k}, model expects {self.input_dim}")
        h = np.zeros((b, self.hidden_dim))
        c = np.zeros((b, self.hidden_dim))
        xhat = np.empty_like(seqs)
        for step in range(t):
            h, c, _ = self.step(seqs[:, step], h, c)
            xhat[:, step] = self.decode(h)
        return xhat, (h, c)

    def loss(self, seqs) -> float:
        seqs = np.asarray(seqs, dtype=np.float64)
        if seqs.ndim == 2:
            seqs = seqs[None]
        xhat, _ = self.forward(seqs)
        return float(np.mean((seqs - xhat) ** 2))

    def loss_and_grads(self, seqs):
        """Mean sequence loss over the batch and BPTT gradients."""
        seqs = np.asarray(seqs, dtype=np.float64)
        if seqs.ndim == 2:
            seqs = seqs[None]
        b, t, k = seqs.shape
        if b == 0 or t == 0:
            raise InvalidParameter("empty minibatch")
        if k != self.input_dim:
            raise ShapeError(f"input dim {k}, model expects {self.input_dim}")
        p = self.params
        hd = self.hidden_dim

        h = np.zeros((b, hd))
        c = np.zeros((b, hd))
        cache = []
        xhat = np.empty_like(seqs)
        for step in range(t):
            h_prev, c_prev = h, c
            h, c, gates = self.step(seqs[:, step], h_prev, c_prev)
            xhat[:, step] = self.decode(h)
            cache.append((h_prev, c_prev, gates, c, h))
        diff = xhat - seqs
        loss = float(np.mean(diff ** 2))

        grads = {name: np.zeros_like(arr) for name, arr in p.items()}
        dh_next = np.zeros((b, hd))
        dc_next = np.zeros((b, hd))
        scale = 2.0 / (b * t * k)
        for step in range(t - 1, -1, -1):
            h_prev, c_prev, gates, c_t, h_t = cache[step]
            x_t = seqs[:, step]
            d_xhat = scale * diff[:, step]
            grads["V"] += d_xhat.T @ h_t
            grads["c_dec"] += d_xhat.sum(axis=0)
            dh = d_xhat @ p["V"] + dh_next

            tc = np.tanh(c_t)
            i, f, o, g = (gates[name] for name in GATES)
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc ** 2)
            df = dc * c_prev
            di = dc * g
            dg = dc * i
            pre = {
                "i": di * i * (1.0 - i),
                "f": df * f * (1.0 - f),
                "o": do * o * (1.0 - o),
                "g": dg * (1.0 - g ** 2),
            }
            dh_next = np.zeros((b, hd))
            for gate in GATES:
                da = pre[gate]
                grads[f"W_{gate}"] += da.T @ x_t
                grads[f"U_{gate}"] += da.T @ h_prev
                grads[f"b_{gate}"] += da.sum(axis=0)
                dh_next += da @ p[f"U_{gate}"]
            dc_next = dc * f
        return loss, grads


class Adam:
    """Adam with bias correction: update = -lr * mhat / (sqrt(vhat) + eps)."""

    def __init__(self, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: dict, grads: dict) -> None:
        if self.m is None:
            self.m = {k: np.zeros_like(v) for k, v in params.items()}
            self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key, g in grads.items():
            if g.shape != params[key].shape:
                raise ShapeError(f"{key}: gradient shape {g.shape} vs param {params[key].shape}")
            self.m[key] = b1 * self.m[key] + (1.0 - b1) * g
            self.v[key] = b2 * self.v[key] + (1.0 - b2) * g * g
            mhat = self.m[key] / (1.0 - b1 ** self.t)
            vhat = self.v[key] / (1.0 - b2 ** self.t)
            params[key] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _make_check_model(model_kind, input_dim, hidden_dim, rng, seq_len,
                      hidden_activation):
    if model_kind == "dense":
        model = DenseAutoencoder.initialized(input_dim, hidden_dim, rng,
                                             hidden_activation=hidden_activation)
        data = rng.normal(size=(3, input_dim))
    elif model_kind == "recurrent":
        model = LstmAutoencoder.initialized(input_dim, hidden_dim, rng,
                                            unroll=seq_len)
        data = rng.normal(size=(3, seq_len, input_dim))
    else:
        raise InvalidParameter(f"unknown model kind {model_kind!r}")
    return model, data


def gradcheck(model_kind: str, input_dim: int = 10, hidden_dim: int = 4,
              seed: int = 0, eps: float = 1e-4, seq_len: int = 5,
              hidden_activation: str = "tanh") -> float:
    """Max relative deviation of analytic gradients from central differences.

    Relative error per coordinate uses max(|analytic|, |numeric|, 1e-8) as
    denominator; near-zero gradients make that denominator tiny, so the
    default step balances truncation against cancellation noise for losses
    of order 1. Deterministic in ``seed``.
    """
    if eps <= 0:
        raise InvalidParameter(f"finite-difference eps must be positive, got {eps}")
    rng = np.random.default_rng(seed)
    model, data = _make_check_model(model_kind, input_dim, hidden_dim, rng,
                                    seq_len, hidden_activation)
    _, grads = model.loss_and_grads(data)
    worst = 0.0
    for name, arr in model.params.items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = model.loss(data)
            flat[idx] = orig - eps
            down = model.loss(data)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(gflat[idx]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[idx] - numeric) / denom)
    return float(worst)


@dataclass
class TrainConfig:
    """Knobs not fixed by the optimizer hyperparameters."""

    epochs: int = 30
    batch_size: int = 128
    seed: int = 0
    unroll: int = 25
    init_scale: float = 1.0

    def validate(self):
        if self.epochs < 0:
            raise InvalidParameter(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidParameter(f"batch size must be >= 1, got {self.batch_size}")
        if self.unroll < 1:
            raise InvalidParameter(f"unroll length must be >= 1, got {self.unroll}")
        if self.init_scale <= 0:
            raise InvalidParameter(f"init scale must be positive, got {self.init_scale}")


@dataclass
class AdamConfig:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def make(self) -> Adam:
        return Adam(self.lr, self.beta1, self.beta2, self.eps)


def _train(model, data, config: TrainConfig, adam: AdamConfig):
    """Minibatch Adam over ``data`` (first axis = examples), seeded shuffling.

    Per-epoch loss is the sample-weighted mean of minibatch losses.
    """
    config.validate()
    opt = adam.make()
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    n = data.shape[0]
    losses = []
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = model.loss_and_grads(data[idx])
            opt.step(model.params, grads)
            total += loss * len(idx)
        losses.append(total / n)
    return model, losses


def train_dense(vectors, hidden_dim: int, config: TrainConfig,
                adam: AdamConfig | None = None, hidden_activation: str = "tanh"):
    """Train a dense autoencoder on feature vectors (N, K)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise InvalidParameter(f"expected non-empty (N, K) training set, got {vectors.shape}")
    init_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    model = DenseAutoencoder.initialized(vectors.shape[1], hidden_dim, init_rng,
                                         hidden_activation=hidden_activation,
                                         init_scale=config.init_scale)
    return _train(model, vectors, config, adam or AdamConfig())


def train_recurrent(sequences, hidden_dim: int, config: TrainConfig,
                    adam: AdamConfig | None = None):
    """Train an LSTM autoencoder on sequences (N, T, K) by BPTT."""
    sequences = np.asarray(sequences, dtype=np.float64)
    if sequences.ndim != 3 or sequences.shape[0] == 0:
        raise InvalidParameter(
            f"expected non-empty (N, T, K) training set, got {sequences.shape}"
        )
    init_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    model = LstmAutoencoder.initialized(sequences.shape[2], hidden_dim, init_rng,
                                        unroll=config.unroll,
                                        init_scale=config.init_scale)
    return _train(model, sequences, config, adam or AdamConfig())


def build_training_sequences(features: np.ndarray, unroll: int) -> np.ndarray:
    """Slice per-location time series into fixed-length training windows.

    ``features`` is (T, rows, cols, D). Windows are consecutive, disjoint
    chunks of ``unroll`` frames; a trailing partial chunk is dropped. If the
    series is shorter than ``unroll``, the single full-length series is used.
    """
    t, rows, cols, dim = features.shape
    series = np.transpose(features, (1, 2, 0, 3)).reshape(rows * cols, t, dim)
    if t < unroll:
        return np.ascontiguousarray(series, dtype=np.float64)
    n_win = t // unroll
    clipped = series[:, : n_win * unroll].reshape(rows * cols * n_win, unroll, dim)
    return np.ascontiguousarray(clipped, dtype=np.float64)


CHECKPOINT_FORMAT = "splicemap-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(model, path, feature_provenance: dict | None = None) -> None:
    """Write a versioned JSON checkpoint: dims, provenance, row-major params."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.kind,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "features": feature_provenance or {},
        "params": {k: v.tolist() for k, v in model.params.items()},
    }
    if model.kind == "dense":
        doc["hidden_activation"] = model.hidden_activation
    else:
        doc["unroll"] = model.unroll
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_checkpoint(path):
    """Load a checkpoint, validating parameter shapes against the header.

    Returns (model, feature_provenance).
    """
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidParameter(f"{path}: not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidParameter(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
    if doc["model"] == "dense":
        model = DenseAutoencoder(doc["input_dim"], doc["hidden_dim"],
                                 doc.get("hidden_activation", "tanh"), params)
    elif doc["model"] == "recurrent":
        model = LstmAutoencoder(doc["input_dim"], doc["hidden_dim"],
                                doc.get("unroll", 25), params)
    else:
        raise InvalidParameter(f"{path}: unknown model kind {doc['model']!r}")
    return model, doc.get("features", {})
