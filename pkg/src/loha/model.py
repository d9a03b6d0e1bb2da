"""Local-region features and a small from-scratch residual regressor.

Features for a state are two flattened (2K+1)^2 patches centered on the
state's cell -- raw occupancy (out-of-bounds reads as blocked) and the
heuristic field relative to the state (h_g at each cell center minus
h_g(state), scaled by 1/K) -- plus heading/velocity one-hots for the car
domain and a constant bias term.

The regressor is a fully connected network with rectifier hidden layers
and a rectified output (predictions are always >= 0), trained by
mini-batch SGD on the weighted squared loss mean_i alpha_i * (pred_i -
target_i)^2. Everything is plain numpy with hand-written backprop so the
gradients can be verified against finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from loha.collector import Sample
from loha.gridmap import OccupancyGrid
from loha.statespace import CarState, SearchState

_MAGIC = b"LOHA1"

DEFAULT_HYPERPARAMS = {
    "hidden": [64, 64],
    "lr": 1e-3,
    "batch_size": 64,
    "epochs": 30,
    "momentum": 0.9,
    "alpha_weighting": True,
}


def feature_length(domain_name: str, K: int) -> int:
    base = 2 * (2 * K + 1) ** 2 + 1
    return base + 12 + 5 if domain_name == "car4d" else base


class FeatureExtractor:
    """Precomputes padded rasters for one (grid, goal, K) so per-state
    feature extraction is a pair of window gathers."""

    def __init__(self, grid: OccupancyGrid, goal: SearchState, K: int):
        self.K = K
        self.goal = goal
        self.car = isinstance(goal, CarState)
        self.domain_name = "car4d" if self.car else "grid2d"
        h, w = grid.height, grid.width
        size = 2 * K + 1
        occ = np.ones((h + 2 * K, w + 2 * K))
        occ[K:K + h, K:K + w] = grid.cells
        # heuristic at every (padded) cell center; out-of-bounds cells get
        # their true extrapolated value, the occupancy channel already
        # marks them blocked
        cxs = np.arange(-K, w + K, dtype=float)
        cys = np.arange(-K, h + K, dtype=float)
        if self.car:
            gx, gy = 0.5 * goal.xi, 0.5 * goal.yi
            hg = np.hypot((cxs + 0.5)[None, :] - gx, (cys + 0.5)[:, None] - gy) / 3.0
        else:
            hg = (np.abs(cxs[None, :] - goal.cx)
                  + np.abs(cys[:, None] - goal.cy)).astype(float)
        win = np.lib.stride_tricks.sliding_window_view
        self._occ_windows = win(occ, (size, size))   # [cy, cx] -> patch
        self._hg_windows = win(hg, (size, size))
        self._scale = 1.0 / K
        self._patch = size * size
        self.length = feature_length(self.domain_name, K)

    def features_batch(self, states: list[SearchState]) -> np.ndarray:
        b = len(states)
        n = self._patch
        out = np.zeros((b, self.length))
        if self.car:
            xi = np.fromiter((s.xi for s in states), dtype=np.int64, count=b)
            yi = np.fromiter((s.yi for s in states), dtype=np.int64, count=b)
            cx, cy = xi >> 1, yi >> 1
            h_s = np.hypot(0.5 * (xi - self.goal.xi), 0.5 * (yi - self.goal.yi)) / 3.0
        else:
            cx = np.fromiter((s.cx for s in states), dtype=np.int64, count=b)
            cy = np.fromiter((s.cy for s in states), dtype=np.int64, count=b)
            h_s = (np.abs(cx - self.goal.cx) + np.abs(cy - self.goal.cy)).astype(float)
        out[:, :n] = self._occ_windows[cy, cx].reshape(b, n)
        out[:, n:2 * n] = (self._hg_windows[cy, cx].reshape(b, n) - h_s[:, None]) * self._scale
        if self.car:
            rows = np.arange(b)
            theta = np.fromiter((s.theta for s in states), dtype=np.int64, count=b)
            v = np.fromiter((s.v for s in states), dtype=np.int64, count=b)
            out[rows, 2 * n + theta] = 1.0
            out[rows, 2 * n + 12 + (v + 1)] = 1.0
        out[:, -1] = 1.0
        return out

    def features(self, s: SearchState) -> np.ndarray:
        return self.features_batch([s])[0]


def featurize(grid: OccupancyGrid, s: SearchState, goal: SearchState, K: int) -> np.ndarray:
    """One-off feature vector; use FeatureExtractor when extracting many."""
    return FeatureExtractor(grid, goal, K).features(s)


@dataclass
class ResidualModel:
    """Dense rectifier network mapping feature vectors to a residual >= 0.

    ``layer_sizes`` is [input, hidden..., 1]; weights[i] has shape
    (layer_sizes[i], layer_sizes[i+1]).
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    domain: str = ""
    K: int = 0
    hyperparams: dict = dc_field(default_factory=dict)
    loss_history: list[float] = dc_field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def forward(self, X: np.ndarray) -> np.ndarray:
        A = X
        for W, b in zip(self.weights, self.biases):
            A = np.maximum(A @ W + b, 0.0)
        return A[:, 0]

    def predict(self, x: np.ndarray) -> float:
        return float(self.forward(x[None, :])[0])

    def _forward_cached(self, X: np.ndarray):
        acts = [X]
        pres = []
        A = X
        for W, b in zip(self.weights, self.biases):
            Z = A @ W + b
            A = np.maximum(Z, 0.0)
            pres.append(Z)
            acts.append(A)
        return pres, acts

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray, alpha: np.ndarray):
        """Weighted squared loss mean_i alpha_i (pred_i - y_i)^2 plus its
        gradients with respect to every weight and bias."""
        n = X.shape[0]
        pres, acts = self._forward_cached(X)
        pred = acts[-1][:, 0]
        err = pred - y
        loss = float(np.mean(alpha * err * err))
        d = (2.0 / n) * alpha * err
        dZ = (d[:, None]) * (pres[-1] > 0.0)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = acts[i].T @ dZ
            grads_b[i] = dZ.sum(axis=0)
            if i > 0:
                dZ = (dZ @ self.weights[i].T) * (pres[i - 1] > 0.0)
        return loss, grads_w, grads_b

    def dataset_loss(self, X: np.ndarray, y: np.ndarray, alpha: np.ndarray) -> float:
        err = self.forward(X) - y
        return float(np.mean(alpha * err * err))


_BIAS_INIT = 0.1  # keeps rectifier units (the output one especially) alive at start


def init_model(
    input_dim: int,
    hidden: list[int],
    seed: int,
    domain: str = "",
    K: int = 0,
    hyperparams: Optional[dict] = None,
) -> ResidualModel:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, biases 0.1."""
    sizes = [input_dim, *hidden, 1]
    rng = np.random.default_rng(np.uint64(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.full(fan_out, _BIAS_INIT))
    return ResidualModel(sizes, weights, biases, domain=domain, K=K,
                         hyperparams=dict(hyperparams or {}))


def _domain_of_state(state: SearchState) -> str:
    return "car4d" if isinstance(state, CarState) else "grid2d"


def build_training_arrays(samples: list[Sample]):
    """Stack attached feature vectors into (X, y, alpha). Validates that
    the dataset is non-empty and shares one K and one domain."""
    if not samples:
        raise ValueError("empty dataset")
    k_values = {s.K for s in samples}
    if len(k_values) != 1:
        raise ValueError(f"mixed K values in dataset: {sorted(k_values)}")
    domains = {_domain_of_state(s.state) for s in samples}
    if len(domains) != 1:
        raise ValueError(f"mixed domains in dataset: {sorted(domains)}")
    missing = sum(1 for s in samples if s.features is None)
    if missing:
        raise ValueError(f"{missing} samples have no feature vector attached")
    X = np.stack([s.features for s in samples])
    y = np.array([s.target for s in samples])
    alpha = np.array([s.alpha for s in samples])
    return X, y, alpha


def train(samples: list[Sample], hyperparams: Optional[dict] = None, seed: int = 0) -> ResidualModel:
    """Mini-batch SGD on the alpha-weighted squared loss.

    Bit-reproducible for a fixed (dataset, hyperparams, seed): the same
    generator drives initialization and epoch shuffling. The returned
    model records the full-dataset loss after init and after every epoch.
    """
    hp = dict(DEFAULT_HYPERPARAMS)
    hp.update(hyperparams or {})
    X, y, alpha = build_training_arrays(samples)
    if not hp.get("alpha_weighting", True):
        alpha = np.ones_like(alpha)
    n, dim = X.shape

    rng = np.random.default_rng(np.uint64(seed))
    sizes = [dim, *hp["hidden"], 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.full(fan_out, _BIAS_INIT))
    model = ResidualModel(sizes, weights, biases,
                          domain=_domain_of_state(samples[0].state),
                          K=samples[0].K,
                          hyperparams={**hp, "seed": seed})

    # a rectified output that starts negative on every sample would never
    # receive gradient; shift its bias so the strongest sample sits just
    # above the kink (deterministic, data-dependent)
    pres, _ = model._forward_cached(X)
    max_pre = float(pres[-1].max())
    if max_pre <= 0.0:
        model.biases[-1] += _BIAS_INIT - max_pre

    _sgd_epochs(model, X, y, alpha, hp, rng, record_initial=True)
    return model


def _sgd_epochs(model: ResidualModel, X, y, alpha, hp: dict,
                rng: np.random.Generator, record_initial: bool = False) -> None:
    """Momentum SGD epochs on the weighted loss (plus optional L2 weight
    decay); appends the full-dataset loss to the model's history after
    each epoch."""
    lr = float(hp["lr"])
    batch = int(hp["batch_size"])
    momentum = float(hp.get("momentum", 0.0))
    decay = float(hp.get("weight_decay", 0.0))
    n = X.shape[0]
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    if record_initial:
        model.loss_history.append(model.dataset_loss(X, y, alpha))
    for _ in range(int(hp["epochs"])):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            idx = order[lo:lo + batch]
            _, gw, gb = model.loss_and_grads(X[idx], y[idx], alpha[idx])
            for i in range(len(model.weights)):
                step_w = gw[i] if decay == 0.0 else gw[i] + decay * model.weights[i]
                vel_w[i] = momentum * vel_w[i] - lr * step_w
                vel_b[i] = momentum * vel_b[i] - lr * gb[i]
                model.weights[i] += vel_w[i]
                model.biases[i] += vel_b[i]
        model.loss_history.append(model.dataset_loss(X, y, alpha))


def gradient_check(model: ResidualModel, sample: Sample, step: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central finite
    differences of the weighted loss for one sample. The caller should keep
    pre-activations away from rectifier kinks (|z| >> step)."""
    x = np.asarray(sample.features, dtype=float)
    y = np.array([sample.target], dtype=float)
    a = np.array([sample.alpha], dtype=float)
    X = x[None, :]
    _, gw, gb = model.loss_and_grads(X, y, a)

    def loss_now() -> float:
        return model.dataset_loss(X, y, a)

    max_rel = 0.0
    params = [(model.weights, gw), (model.biases, gb)]
    for arrays, grads in params:
        for arr, grad in zip(arrays, grads):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                up = loss_now()
                flat[j] = orig - step
                down = loss_now()
                flat[j] = orig
                numeric = (up - down) / (2.0 * step)
                denom = max(abs(gflat[j]) + abs(numeric), 1e-8)
                rel = abs(gflat[j] - numeric) / denom
                if rel > max_rel:
                    max_rel = rel
    return max_rel


def predict_residual(model: ResidualModel, grid: OccupancyGrid, s: SearchState,
                     goal: SearchState, K: int) -> float:
    """Featurize then forward. Raises on a model/K mismatch."""
    if model.K and model.K != K:
        raise ValueError(f"model was trained for K={model.K}, got K={K}")
    x = featurize(grid, s, goal, K)
    if x.shape[0] != model.input_dim:
        raise ValueError(
            f"feature length {x.shape[0]} does not match model input {model.input_dim}"
        )
    return model.predict(x)


def save_model(model: ResidualModel, path, dataset_hash: str = "",
               extra_meta: Optional[dict] = None) -> None:
    """Binary layout: magic ``LOHA1``, uint32 layer count, uint32 layer
    sizes, then per layer the row-major float64 weight matrix followed by
    the bias vector (all little-endian). A JSON sidecar at ``path + .json``
    records hyperparameters, K, domain, and the training-set hash."""
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(model.layer_sizes)))
        fh.write(struct.pack(f"<{len(model.layer_sizes)}I", *model.layer_sizes))
        for W, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    meta = {
        "domain": model.domain,
        "K": model.K,
        "layer_sizes": model.layer_sizes,
        "hyperparams": model.hyperparams,
        "dataset_hash": dataset_hash,
        "loss_history": model.loss_history,
    }
    meta.update(extra_meta or {})
    with open(path + ".json", "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def load_model(path) -> ResidualModel:
    path = str(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != _MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    off = 5
    (n_sizes,) = struct.unpack_from("<I", blob, off)
    off += 4
    sizes = list(struct.unpack_from(f"<{n_sizes}I", blob, off))
    off += 4 * n_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(fan_in, fan_out)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(W.copy())
        biases.append(b.copy())
    if off != len(blob):
        raise ValueError(f"{path}: trailing bytes in model file")
    model = ResidualModel(sizes, weights, biases)
    try:
        with open(path + ".json") as fh:
            meta = json.load(fh)
        model.domain = meta.get("domain", "")
        model.K = int(meta.get("K", 0))
        model.hyperparams = meta.get("hyperparams", {})
        model.loss_history = list(meta.get("loss_history", []))
    except FileNotFoundError:
        pass
    return model
