"""A compact convolutional network written directly in numpy.

The network splits into a feature extractor (standardize -> 2x2 mean-pool
stem -> stages of conv3x3/batch-norm/SiLU/2x2 mean-pool) that maps a
224x224 spectrogram to a 7x7xd feature map, and a head that mean-pools the
cells and applies one linear layer. Layout is NHWC throughout.

Every layer is infinitely differentiable (SiLU, mean pooling) so
finite-difference gradient checks are not spoiled by kinks.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.special

MODEL_MAGIC = b"EEGCFMDL"
MODEL_VERSION = 1
REGIMES = ("underfit", "well_trained", "overfit")


class ModelError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch


# --------------------------------------------------------------------------
# feature maps and the classifier head


@dataclass(frozen=True, eq=False)
class FeatureMap:
    values: np.ndarray  # (h, w, d)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ModelError(f"feature map must be (h, w, d), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ModelError("feature map has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def d(self) -> int:
        return self.values.shape[2]

    @property
    def hw(self) -> int:
        return self.h * self.w

    @property
    def cells(self) -> np.ndarray:
        """(hw, d) view, row-major cell order."""
        return self.values.reshape(self.hw, self.d)


@dataclass(frozen=True, eq=False)
class ClassifierHead:
    weight: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)
    pooling: str = "mean"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ModelError(f"head shapes inconsistent: weight {w.shape}, bias {b.shape}")
        if w.shape[0] < 2:
            raise ModelError("head needs at least 2 classes")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ModelError("head parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def class_count(self) -> int:
        return self.weight.shape[0]

    @property
    def d(self) -> int:
        return self.weight.shape[1]


def classify(head: ClassifierHead, fm: FeatureMap) -> np.ndarray:
    """Logits ``weight @ mean_cells(fm) + bias``."""
    if fm.d != head.d:
        raise ModelError(f"feature depth {fm.d} does not match head depth {head.d}")
    pooled = fm.cells.sum(axis=0) / fm.hw
    return head.weight @ pooled + head.bias


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(logits, soft_labels):
    """Mean soft-label cross-entropy and its gradient w.r.t. the logits."""
    logp = log_softmax(logits)
    n = logits.shape[0]
    loss = -(soft_labels * logp).sum() / n
    grad = (np.exp(logp) - soft_labels) / n
    return float(loss), grad


# --------------------------------------------------------------------------
# layers (forward returns output + cache; backward consumes the cache)


def _standardize_fwd(x, eps):
    mu = x.mean(axis=(1, 2, 3), keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=(1, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    return y, (y, inv)


def _standardize_bwd(dy, cache):
    y, inv = cache
    m = dy[0].size
    axes = (1, 2, 3)
    return inv * (dy - dy.mean(axis=axes, keepdims=True) - y * (dy * y).sum(axis=axes, keepdims=True) / m)


def _pool_fwd(x, k):
    n, h, w, c = x.shape
    return x.reshape(n, h // k, k, w // k, k, c).mean(axis=(2, 4))


def _pool_bwd(dy, k):
    dx = np.repeat(np.repeat(dy, k, axis=1), k, axis=2)
    return dx / (k * k)


def _im2col3(x):
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    return np.concatenate([xp[:, i:i + h, j:j + w, :] for i in range(3) for j in range(3)], axis=-1)


def _conv_fwd(x, weight):
    n, h, w, c = x.shape
    cols = _im2col3(x).reshape(n * h * w, 9 * c)
    out = cols @ weight.reshape(9 * c, -1)
    return out.reshape(n, h, w, -1), (cols, x.shape)


def _conv_bwd(dy, weight, cache):
    cols, (n, h, w, c) = cache
    dy2 = dy.reshape(n * h * w, -1)
    dw = (cols.T @ dy2).reshape(weight.shape)
    dcols = (dy2 @ weight.reshape(9 * c, -1).T).reshape(n, h, w, 9, c)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dy.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, k, :]
    return dxp[:, 1:-1, 1:-1, :], dw


def _bn_train_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=(0, 1, 2))
    xc = x - mu
    var = (xc * xc).mean(axis=(0, 1, 2))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma), mu, var


def _bn_train_bwd(dy, cache):
    xhat, inv, gamma = cache
    m = dy.shape[0] * dy.shape[1] * dy.shape[2]
    axes = (0, 1, 2)
    dbeta = dy.sum(axis=axes)
    dgamma = (dy * xhat).sum(axis=axes)
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.sum(axis=axes) / m - xhat * (dxhat * xhat).sum(axis=axes) / m)
    return dx, dgamma, dbeta


def _silu_fwd(x):
    sig = scipy.special.expit(x)
    return x * sig, (x, sig)


def _silu_bwd(dy, cache):
    x, sig = cache
    return dy * (sig * (1 + x * (1 - sig)))


# --------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class Architecture:
    in_size: int = 224
    in_channels: int = 1
    widths: tuple = (8, 16, 32, 64)
    stem_pool: int = 2
    class_count: int = 2
    standardize: bool = True
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    std_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.in_size % (self.stem_pool * 2 ** len(self.widths)):
            raise ModelError(f"input size {self.in_size} not divisible by the pooling pyramid")
        if self.class_count < 2:
            raise ModelError("class_count must be >= 2")

    @property
    def grid_size(self) -> int:
        return self.in_size // (self.stem_pool * 2 ** len(self.widths))

    @property
    def feature_dim(self) -> int:
        return self.widths[-1] if self.widths else self.in_channels


class Model:
    """Parameters + BN running statistics + metadata."""

    def __init__(self, arch: Architecture, params: dict, buffers: dict, metadata: dict | None = None):
        self.arch = arch
        self.params = params
        self.buffers = buffers
        self.metadata = dict(metadata or {})

    @classmethod
    def init(cls, arch: Architecture, seed: int = 0, dtype=np.float32) -> "Model":
        rng = np.random.default_rng(seed)
        params, buffers = {}, {}
        cin = arch.in_channels
        for i, cout in enumerate(arch.widths):
            std = np.sqrt(2.0 / (9 * cin))
            params[f"conv{i}.weight"] = (rng.standard_normal((3, 3, cin, cout)) * std).astype(dtype)
            params[f"bn{i}.gamma"] = np.ones(cout, dtype=dtype)
            params[f"bn{i}.beta"] = np.zeros(cout, dtype=dtype)
            buffers[f"bn{i}.running_mean"] = np.zeros(cout, dtype=dtype)
            buffers[f"bn{i}.running_var"] = np.ones(cout, dtype=dtype)
            cin = cout
        d = arch.feature_dim
        params["head.weight"] = (rng.standard_normal((arch.class_count, d)) * np.sqrt(1.0 / d)).astype(dtype)
        params["head.bias"] = np.zeros(arch.class_count, dtype=dtype)
        return cls(arch, params, buffers, {"class_count": arch.class_count, "rng_seed": seed, "epoch_count": 0})

    def astype(self, dtype) -> "Model":
        return Model(
            self.arch,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
            self.metadata,
        )

    def copy(self) -> "Model":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        return self.params["head.weight"].dtype

    @property
    def head(self) -> ClassifierHead:
        return ClassifierHead(self.params["head.weight"], self.params["head.bias"])

    # -- forward / backward ------------------------------------------------

    def _prepare(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None, :, :, None]
        elif x.ndim == 3:
            # (N, H, W) batch for single-plane inputs, otherwise one (H, W, C) sample
            x = x[..., None] if self.arch.in_channels == 1 else x[None]
        a = self.arch
        if x.shape[1:] != (a.in_size, a.in_size, a.in_channels):
            raise ModelError(f"input shape {x.shape[1:]} != ({a.in_size}, {a.in_size}, {a.in_channels})")
        return x

    def features(self, x, train: bool = False, update_stats: bool = False, caches: list | None = None):
        """Batched feature extraction, (N, H, W, C) -> (N, h, w, d)."""
        a = self.arch
        x = self._prepare(x)
        if a.standardize:
            x, c = _standardize_fwd(x, a.std_eps)
            if caches is not None:
                caches.append(("std", c))
        if a.stem_pool > 1:
            x = _pool_fwd(x, a.stem_pool)
            if caches is not None:
                caches.append(("pool", a.stem_pool))
        for i in range(len(a.widths)):
            w = self.params[f"conv{i}.weight"]
            x, c = _conv_fwd(x, w)
            if caches is not None:
                caches.append(("conv", i, c))
            gamma, beta = self.params[f"bn{i}.gamma"], self.params[f"bn{i}.beta"]
            if train:
                x, c, mu, var = _bn_train_fwd(x, gamma, beta, a.bn_eps)
                if caches is not None:
                    caches.append(("bn", i, c))
                if update_stats:
                    m = a.bn_momentum
                    rm, rv = self.buffers[f"bn{i}.running_mean"], self.buffers[f"bn{i}.running_var"]
                    rm *= 1 - m
                    rm += m * mu
                    rv *= 1 - m
                    rv += m * var
            else:
                rm, rv = self.buffers[f"bn{i}.running_mean"], self.buffers[f"bn{i}.running_var"]
                inv = 1.0 / np.sqrt(rv + a.bn_eps)
                xn = (x - rm) * inv
                x = xn * gamma + beta
                if caches is not None:
                    caches.append(("bn_eval", i, gamma * inv, xn))
            x, c = _silu_fwd(x)
            if caches is not None:
                caches.append(("act", c))
            x = _pool_fwd(x, 2)
            if caches is not None:
                caches.append(("pool", 2))
        return x

    def logits(self, x, train: bool = False) -> np.ndarray:
        f = self.features(x, train=train)
        pooled = f.mean(axis=(1, 2))
        return pooled @ self.params["head.weight"].T + self.params["head.bias"]

    def loss_and_grads(self, x, soft_labels, train: bool = True, update_stats: bool = False, input_grad: bool = False):
        """Soft-label cross-entropy and gradients for every parameter."""
        caches = []
        f = self.features(x, train=train, update_stats=update_stats, caches=caches)
        n, h, w, d = f.shape
        pooled = f.mean(axis=(1, 2))
        logits = pooled @ self.params["head.weight"].T + self.params["head.bias"]
        loss, dlogits = cross_entropy(logits.astype(np.float64), np.asarray(soft_labels, dtype=np.float64))
        dlogits = dlogits.astype(self.dtype)
        grads = {
            "head.weight": dlogits.T @ pooled,
            "head.bias": dlogits.sum(axis=0),
        }
        dpooled = dlogits @ self.params["head.weight"]
        dx = np.broadcast_to(dpooled[:, None, None, :] / (h * w), f.shape).astype(self.dtype)
        for entry in reversed(caches):
            kind = entry[0]
            if kind == "pool":
                dx = _pool_bwd(dx, entry[1])
            elif kind == "act":
                dx = _silu_bwd(dx, entry[1])
            elif kind == "bn":
                i = entry[1]
                dx, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = _bn_train_bwd(dx, entry[2])
            elif kind == "bn_eval":
                i, scale, xn = entry[1], entry[2], entry[3]
                grads[f"bn{i}.beta"] = dx.sum(axis=(0, 1, 2))
                grads[f"bn{i}.gamma"] = (dx * xn).sum(axis=(0, 1, 2))
                dx = dx * scale
            elif kind == "conv":
                i = entry[1]
                dx, grads[f"conv{i}.weight"] = _conv_bwd(dx, self.params[f"conv{i}.weight"], entry[2])
            elif kind == "std":
                if input_grad:
                    dx = _standardize_bwd(dx, entry[1])
        out = {k: grads[k] for k in self.params}
        if input_grad:
            return loss, out, dx
        return loss, out

    # -- convenience -------------------------------------------------------

    def predict(self, x, batch_size: int = 32) -> np.ndarray:
        x = np.asarray(x)
        out = [self.logits(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.arch.class_count))

    def forward_features(self, s) -> FeatureMap:
        return forward_features(self, s)


def forward_features(m: Model, s) -> FeatureMap:
    """Inference-mode feature map of a single spectrogram."""
    values = getattr(s, "values", s)
    values = np.asarray(values)
    if values.shape[:2] != (m.arch.in_size, m.arch.in_size):
        raise ModelError(f"spectrogram shape {values.shape} != {m.arch.in_size}x{m.arch.in_size}")
    batch = values[None, :, :, None] if values.ndim == 2 else values[None]
    return FeatureMap(m.features(batch, train=False)[0])


# --------------------------------------------------------------------------
# MixUp


def mixup(inputs, labels, alpha: float, rng):
    """Convex combination of each sample with a permuted partner.

    ``labels`` are one-hot (or already soft) rows. One mixing weight
    ``lam ~ Beta(alpha, alpha)`` is drawn per batch; ``alpha == 0`` returns
    the batch unchanged.
    """
    inputs = np.asarray(inputs)
    labels = np.asarray(labels)
    if len(inputs) == 0:
        raise ModelError("mixup needs a non-empty batch")
    if alpha < 0:
        raise ModelError("mixup alpha must be >= 0")
    if alpha == 0:
        return inputs, labels
    lam = float(rng.beta(alpha, alpha))
    perm = np.asarray(rng.permutation(len(inputs)))
    if lam == 1.0:
        return inputs, labels
    mixed_x = (lam * inputs + (1.0 - lam) * inputs[perm]).astype(inputs.dtype)
    mixed_y = lam * labels + (1.0 - lam) * labels[perm]
    return mixed_x, mixed_y


def one_hot(labels, class_count: int) -> np.ndarray:
    out = np.zeros((len(labels), class_count))
    out[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return out


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    mixup_alpha: float = 0.2
    seed: int = 0
    regime: str = "well_trained"
    patience: int = 5

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ModelError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0 or self.patience < 1:
            raise ModelError("epochs, batch_size, learning_rate and patience must be positive")
        if self.weight_decay < 0 or self.mixup_alpha < 0 or not 0 <= self.momentum < 1:
            raise ModelError("weight_decay, mixup_alpha must be >= 0 and momentum in [0, 1)")

    def effective(self) -> "TrainConfig":
        """Apply the regime preset."""
        if self.regime == "underfit":
            return replace(self, epochs=1)
        if self.regime == "overfit":
            return replace(self, epochs=10 * self.epochs, mixup_alpha=0.0, weight_decay=0.0)
        return self

    def as_dict(self):
        return asdict(self)


@dataclass
class History:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_top1: list = field(default_factory=list)
    val_top1: list = field(default_factory=list)
    best_epoch: int = 0

    def append(self, epoch, tl, vl, ta, va):
        self.epoch.append(epoch)
        self.train_loss.append(tl)
        self.val_loss.append(vl)
        self.train_top1.append(ta)
        self.val_top1.append(va)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,train_top1,val_top1"]
        for row in zip(self.epoch, self.train_loss, self.val_loss, self.train_top1, self.val_top1):
            lines.append("{},{:.6f},{},{:.4f},{}".format(
                row[0], row[1],
                "" if row[2] is None else f"{row[2]:.6f}",
                row[3],
                "" if row[4] is None else f"{row[4]:.4f}",
            ))
        return "\n".join(lines) + "\n"


def evaluate(model: Model, x, y, batch_size: int = 32):
    """(mean cross-entropy, top-1 accuracy in %) in inference mode."""
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        return None, None
    logits = model.predict(x, batch_size).astype(np.float64)
    loss, _ = cross_entropy(logits, one_hot(y, model.arch.class_count))
    return loss, 100.0 * float(np.mean(logits.argmax(axis=1) == y))


def train(train_x, train_y, val_x, val_y, cfg: TrainConfig, arch: Architecture | None = None, log=None):
    """Mini-batch SGD with momentum on soft-label cross-entropy.

    Returns ``(model, history)``. ``well_trained`` stops early once the
    validation score has not improved for ``patience`` epochs and
    restores the best epoch's weights (equal accuracies are ranked by
    validation loss).
    """
    train_x = np.asarray(train_x, dtype=np.float32)
    train_y = np.asarray(train_y, dtype=np.int64)
    if len(np.unique(train_y)) < 2:
        raise ModelError("training set must contain at least 2 classes")
    if arch is None:
        arch = Architecture(in_size=train_x.shape[1], class_count=int(train_y.max()) + 1)
    eff = cfg.effective()
    model = Model.init(arch, seed=cfg.seed)
    model.metadata["train_config"] = eff.as_dict()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    labels = one_hot(train_y, arch.class_count)
    history = History()
    has_val = val_x is not None and len(val_y) > 0
    best = (-1.0, None, 0, np.inf)
    stale = 0

    for epoch in range(1, eff.epochs + 1):
        order = rng.permutation(len(train_x))
        losses = []
        for start in range(0, len(order), eff.batch_size):
            idx = order[start:start + eff.batch_size]
            xb, yb = train_x[idx], labels[idx]
            if len(idx) >= 2:
                xb, yb = mixup(xb, yb, eff.mixup_alpha, rng)
            loss, grads = model.loss_and_grads(xb, yb, train=True, update_stats=True)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            losses.append(loss * len(idx))
            for k, p in model.params.items():
                g = grads[k]
                if eff.weight_decay and k.endswith("weight"):
                    g = g + eff.weight_decay * p
                v = velocity[k]
                v *= eff.momentum
                v += g
                p -= eff.learning_rate * v
        train_loss = float(np.sum(losses) / len(order))
        _, train_acc = evaluate(model, train_x, train_y)
        val_loss, val_acc = evaluate(model, val_x, val_y) if has_val else (None, None)
        history.append(epoch, train_loss, val_loss, train_acc, val_acc)
        model.metadata["epoch_count"] = epoch
        if log is not None:
            log(f"epoch {epoch}: train_loss={train_loss:.4f} train_top1={train_acc:.2f}"
                + (f" val_loss={val_loss:.4f} val_top1={val_acc:.2f}" if has_val else ""))

        if eff.regime == "well_trained" and has_val:
            # ties on accuracy (common once it saturates) go to the lower validation loss
            if val_acc > best[0] or (val_acc == best[0] and val_loss < best[3]):
                best = (val_acc, model.copy(), epoch, val_loss)
                stale = 0
            else:
                stale += 1
                if stale >= eff.patience:
                    break

    if eff.regime == "well_trained" and best[1] is not None:
        model = best[1]
        history.best_epoch = best[2]
    else:
        history.best_epoch = history.epoch[-1]
    model.metadata["epoch_count"] = history.best_epoch
    return model, history


# --------------------------------------------------------------------------
# gradient check


def grad_check(model: Model, x, label, step: float = 1e-3, train: bool = True, floor: float = 1e-6) -> float:
    """Max relative error between analytic and finite-difference gradients
    over every parameter entry, computed in float64.

    The numeric gradient is the Richardson combination of central
    differences at ``step`` and ``step / 2``, which cancels the O(step^2)
    truncation term. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    m = model.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :, None]
    elif x.ndim == 3:
        x = x[None]
    labels = np.atleast_1d(label)
    soft = labels if labels.ndim == 2 else one_hot(labels, m.arch.class_count)
    _, grads = m.loss_and_grads(x, soft, train=train)
    worst = 0.0
    for name, p in m.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            central = []
            for h in (step, step / 2):
                flat[i] = orig + h
                lp, _ = m.loss_and_grads(x, soft, train=train)
                flat[i] = orig - h
                lm, _ = m.loss_and_grads(x, soft, train=train)
                central.append((lp - lm) / (2 * h))
            flat[i] = orig
            num = (4 * central[1] - central[0]) / 3
            denom = max(abs(num), abs(g[i]), floor)
            worst = max(worst, abs(num - g[i]) / denom)
    return worst


# --------------------------------------------------------------------------
# persistence


def model_bytes(model: Model) -> bytes:
    names = list(model.params) + list(model.buffers)
    arrays = [model.params.get(n, model.buffers.get(n)) for n in names]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    header = {
        "version": MODEL_VERSION,
        "architecture": asdict(model.arch),
        "params": [[n, list(model.params[n].shape)] for n in model.params],
        "buffers": [[n, list(model.buffers[n].shape)] for n in model.buffers],
        "metadata": model.metadata,
        "blob_nbytes": len(blob),
        "blob_crc32": zlib.crc32(blob),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    return MODEL_MAGIC + struct.pack("<II", MODEL_VERSION, len(hb)) + hb + blob


def save_model(model: Model, path) -> None:
    data = model_bytes(model.astype(np.float32))
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise ModelError(f"cannot write model to {path}: {exc}") from exc


def load_model(path) -> Model:
    data = Path(path).read_bytes()
    prefix = len(MODEL_MAGIC) + 8
    if len(data) < prefix or not data.startswith(MODEL_MAGIC):
        raise ModelError(f"{path}: not a model file (corrupt or truncated)")
    version, hlen = struct.unpack("<II", data[len(MODEL_MAGIC):prefix])
    if version != MODEL_VERSION:
        raise ModelError(f"{path}: model format version {version} != {MODEL_VERSION}")
    if len(data) < prefix + hlen:
        raise ModelError(f"{path}: truncated header")
    try:
        header = json.loads(data[prefix:prefix + hlen])
    except ValueError as exc:
        raise ModelError(f"{path}: corrupt header") from exc
    blob = data[prefix + hlen:]
    if len(blob) != header["blob_nbytes"] or zlib.crc32(blob) != header["blob_crc32"]:
        raise ModelError(f"{path}: parameter blob truncated or corrupt")
    arch_d = dict(header["architecture"])
    arch_d["widths"] = tuple(arch_d["widths"])
    arch = Architecture(**arch_d)
    flat = np.frombuffer(blob, dtype="<f4")
    offset = 0
    out = {}
    for group in ("params", "buffers"):
        out[group] = {}
        for name, shape in header[group]:
            size = int(np.prod(shape))
            out[group][name] = flat[offset:offset + size].reshape(shape).astype(np.float32)
            offset += size
    return Model(arch, out["params"], out["buffers"], header["metadata"])
