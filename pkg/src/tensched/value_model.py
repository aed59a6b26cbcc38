"""Learned cost predictor over partial schedules.

A single gated recurrent cell (LSTM) consumes the normalized per-stage
feature sequence; a shared affine readout produces one scalar per timestep
and the timestep outputs are summed.  The sum lives in log-cost space and
is exponentiated, so predictions are strictly positive and the training
loss is squared error between log prediction and log target.  All math is
plain numpy (plus an optional compiled forward kernel); gradients are
exact analytic BPTT, verified against finite differences in the tests.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .featurizer import (
    FEATURE_WIDTH,
    Normalizer,
    featurize_state,
    fit_normalizer,
    normalize,
)
from .pipeline_ir import PipelineError

INPUT_DIM = FEATURE_WIDTH
EVAL_CHUNK = 256  # fixed batch chunk so results are independent of --jobs


@dataclass
class ValueModelParams:
    hidden: int
    Wx: np.ndarray  # [INPUT_DIM, 4H]
    Wh: np.ndarray  # [H, 4H]
    b: np.ndarray  # [4H]
    w: np.ndarray  # [H]
    b_out: float
    target_scale: float
    normalizer: Normalizer

    def copy(self) -> "ValueModelParams":
        return ValueModelParams(
            self.hidden,
            self.Wx.copy(),
            self.Wh.copy(),
            self.b.copy(),
            self.w.copy(),
            self.b_out,
            self.target_scale,
            self.normalizer,
        )

    def __eq__(self, other):
        return (
            isinstance(other, ValueModelParams)
            and self.hidden == other.hidden
            and np.array_equal(self.Wx, other.Wx)
            and np.array_equal(self.Wh, other.Wh)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.w, other.w)
            and self.b_out == other.b_out
            and self.target_scale == other.target_scale
            and self.normalizer == other.normalizer
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    clip_norm: float = 5.0
    holdout_fraction: float = 0.2
    patience: int = 20

    def __post_init__(self):
        if not 0 < self.holdout_fraction < 1:
            raise PipelineError("holdout fraction must be in (0, 1)")
        if min(self.learning_rate, self.epochs, self.batch_size, self.clip_norm,
               self.patience) <= 0:
            raise PipelineError("train config values must be positive")


def init_params(seed: int, hidden: int = 32) -> ValueModelParams:
    if hidden < 1:
        raise PipelineError("hidden size must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    s = 1.0 / math.sqrt(hidden)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # open the forget gate initially
    return ValueModelParams(
        hidden,
        rng.uniform(-s, s, (INPUT_DIM, 4 * hidden)),
        rng.uniform(-s, s, (hidden, 4 * hidden)),
        b,
        rng.uniform(-s, s, hidden),
        0.0,
        0.0,
        Normalizer(np.zeros(FEATURE_WIDTH), np.ones(FEATURE_WIDTH)),
    )


def _input_matrix(params: ValueModelParams, state) -> np.ndarray:
    return normalize(params.normalizer, featurize_state(state))


def raw_scores(params: ValueModelParams, X: np.ndarray) -> np.ndarray:
    """Summed per-timestep readouts for a [B, T, 16] batch."""
    return backend.lstm_forward(
        np.ascontiguousarray(X), params.Wx, params.Wh, params.b, params.w,
        params.b_out,
    )


def predict(params: ValueModelParams, state) -> float:
    """Predicted cost of the best completion, in linear cost units."""
    X = _input_matrix(params, state)[None, :, :]
    raw = raw_scores(params, X)[0]
    return math.exp(raw + params.target_scale)


def predict_states(params: ValueModelParams, states, jobs: int = 1) -> np.ndarray:
    """Batch predict; result is independent of `jobs` (fixed chunking)."""
    n = len(states)
    out = np.empty(n)
    # Group positions by sequence length, then evaluate fixed-size chunks.
    by_len: dict[int, list[int]] = {}
    mats = [_input_matrix(params, s) for s in states]
    for idx, m in enumerate(mats):
        by_len.setdefault(m.shape[0], []).append(idx)
    tasks = []
    for _, idxs in sorted(by_len.items()):
        for start in range(0, len(idxs), EVAL_CHUNK):
            tasks.append(idxs[start : start + EVAL_CHUNK])

    def run(idxs):
        X = np.stack([mats[i] for i in idxs])
        return idxs, raw_scores(params, X)

    if jobs > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    for idxs, raw in results:
        for i, r in zip(idxs, raw):
            out[i] = math.exp(r + params.target_scale)
    return out


def _grouped(batch):
    """Group (state, target) pairs by sequence length, preserving order."""
    groups: dict[int, list[tuple[np.ndarray, float]]] = {}
    for state, target in batch:
        if target <= 0:
            raise PipelineError(f"non-positive training target {target}")
        m = featurize_state(state)
        groups.setdefault(m.shape[0], []).append((m, target))
    return groups


def loss(params: ValueModelParams, batch) -> float:
    """Mean squared error between log prediction and log target."""
    total, n = 0.0, 0
    for _, items in sorted(_grouped(batch).items()):
        X = normalize(params.normalizer, np.stack([m for m, _ in items]))
        raw = raw_scores(params, X)
        logt = np.log([t for _, t in items])
        err = raw + params.target_scale - logt
        total += float(err @ err)
        n += len(items)
    return total / n


def gradients(params: ValueModelParams, batch) -> dict:
    """Exact analytic gradient of `loss` over the batch."""
    if not batch:
        raise PipelineError("empty batch")
    grads = {
        "Wx": np.zeros_like(params.Wx),
        "Wh": np.zeros_like(params.Wh),
        "b": np.zeros_like(params.b),
        "w": np.zeros_like(params.w),
        "b_out": 0.0,
    }
    n = len(batch)
    for _, items in sorted(_grouped(batch).items()):
        X = normalize(params.normalizer, np.stack([m for m, _ in items]))
        X = np.ascontiguousarray(X)
        raw, cache = backend.lstm_forward_cached(
            X, params.Wx, params.Wh, params.b, params.w, params.b_out
        )
        logt = np.log([t for _, t in items])
        d_raw = 2.0 * (raw + params.target_scale - logt) / n
        dWx, dWh, db, dw, db_out = backend.lstm_backward(
            X, params.Wx, params.Wh, params.w, cache, d_raw
        )
        grads["Wx"] += dWx
        grads["Wh"] += dWh
        grads["b"] += db
        grads["w"] += dw
        grads["b_out"] += db_out
    return grads


def _clip(grads: dict, max_norm: float) -> dict:
    sq = sum(float(np.sum(g * g)) for g in (grads["Wx"], grads["Wh"], grads["b"], grads["w"]))
    sq += grads["b_out"] ** 2
    norm = math.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: v * scale for k, v in grads.items()}
    return grads


def _eval_split(params, entries) -> tuple[float, float, float]:
    """(mse, r2, median relative error) on a list of (state, target)."""
    logs, raws = [], []
    for _, items in sorted(_grouped(entries).items()):
        X = normalize(params.normalizer, np.stack([m for m, _ in items]))
        raws.append(raw_scores(params, X))
        logs.append(np.log([t for _, t in items]))
    raw = np.concatenate(raws)
    logt = np.concatenate(logs)
    pred_log = raw + params.target_scale
    err = pred_log - logt
    mse = float(np.mean(err**2))
    ss_tot = float(np.sum((logt - logt.mean()) ** 2))
    r2 = 1.0 - float(np.sum(err**2)) / ss_tot if ss_tot > 0 else float(mse == 0.0)
    rel = np.abs(np.exp(pred_log) - np.exp(logt)) / np.exp(logt)
    return mse, r2, float(np.median(rel))


def train(params: ValueModelParams, dataset, cfg: TrainConfig):
    """Gradient descent with clipping and early stopping on a holdout split.

    Returns (trained params, metrics).  Deterministic given cfg.seed.
    """
    if len(dataset) < 10:
        raise PipelineError(f"dataset too small ({len(dataset)} < 10 entries)")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    perm = rng.permutation(len(dataset))
    n_hold = max(1, int(round(len(dataset) * cfg.holdout_fraction)))
    hold = [dataset[i] for i in perm[:n_hold]]
    tr = [dataset[i] for i in perm[n_hold:]]

    params = params.copy()
    params.normalizer = fit_normalizer([featurize_state(s) for s, _ in tr])
    params.target_scale = float(np.mean(np.log([t for _, t in tr])))

    best = params.copy()
    best_hold = _eval_split(params, hold)[0]
    stale = 0
    lr = cfg.learning_rate
    for _ in range(cfg.epochs):
        order = rng.permutation(len(tr))
        for start in range(0, len(tr), cfg.batch_size):
            batch = [tr[i] for i in order[start : start + cfg.batch_size]]
            g = _clip(gradients(params, batch), cfg.clip_norm)
            params.Wx -= lr * g["Wx"]
            params.Wh -= lr * g["Wh"]
            params.b -= lr * g["b"]
            params.w -= lr * g["w"]
            params.b_out -= lr * g["b_out"]
        hold_mse = _eval_split(params, hold)[0]
        if hold_mse < best_hold:
            best_hold = hold_mse
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale % (cfg.patience // 2 or 1) == 0:
                # plateau: halve the step size and restart from the best
                lr *= 0.5
                params = best.copy()
            if stale >= cfg.patience:
                break
    train_mse = _eval_split(best, tr)[0]
    hold_mse, r2, med_rel = _eval_split(best, hold)
    metrics = {
        "train_mse": train_mse,
        "holdout_mse": hold_mse,
        "holdout_r2": r2,
        "holdout_median_rel_err": med_rel,
    }
    return best, metrics


# --- checkpoint format -----------------------------------------------------
# magic "TSVM", u32 version, u32 header length, JSON header, then the
# arrays Wx, Wh, b, w, normalizer mean, normalizer std as raw
# little-endian float64 in row-major order.

MAGIC = b"TSVM"
VERSION = 1


class CheckpointError(PipelineError):
    pass


def save(params: ValueModelParams, path):
    header = json.dumps(
        {
            "hidden": params.hidden,
            "b_out": params.b_out.hex(),
            "target_scale": params.target_scale.hex(),
        }
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for arr in (
            params.Wx,
            params.Wh,
            params.b,
            params.w,
            params.normalizer.mean,
            params.normalizer.std,
        ):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load(path) -> ValueModelParams:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {e}") from None
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("not a value-model checkpoint")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} != {VERSION}")
    try:
        header = json.loads(data[12 : 12 + hlen].decode())
        hidden = header["hidden"]
        shapes = [
            (INPUT_DIM, 4 * hidden),
            (hidden, 4 * hidden),
            (4 * hidden,),
            (hidden,),
            (FEATURE_WIDTH,),
            (FEATURE_WIDTH,),
        ]
        arrays = []
        off = 12 + hlen
        for shape in shapes:
            count = math.prod(shape)
            chunk = data[off : off + 8 * count]
            if len(chunk) != 8 * count:
                raise CheckpointError("truncated checkpoint")
            arrays.append(np.frombuffer(chunk, dtype="<f8").reshape(shape).copy())
            off += 8 * count
        return ValueModelParams(
            hidden,
            arrays[0],
            arrays[1],
            arrays[2],
            arrays[3],
            float.fromhex(header["b_out"]),
            float.fromhex(header["target_scale"]),
            Normalizer(arrays[4], arrays[5]),
        )
    except CheckpointError:
        raise
    except Exception as e:
        raise CheckpointError(f"corrupt checkpoint: {e}") from None
