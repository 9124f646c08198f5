"""Losses, gradients and training for the per-point embedding head.

The head is a small fully connected network mapping per-point features
to an embedding, a diagonal log-variance and an objectness logit. It is
trained with a combination of:

* an objectness regression loss (sum of squared errors),
* an instance association loss comparing Gaussian association
  probabilities against binary instance membership,
* a variance smoothness loss penalizing per-instance variance spread,
* a supervised contrastive loss on max-pooled per-cluster features,
* an L2 parameter penalty.

All gradients are analytic (plain backpropagation; the max pool uses
the lowest-index-argmax subgradient) and are verified against central
finite differences in the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import BACKGROUND_ID, PointHeadOutput
from .embedding import assoc_prob_many
from .volumes import MovingVolume

__all__ = [
    "SupConParams",
    "LossWeights",
    "FeatureSpec",
    "ToyHead",
    "TrainingWindow",
    "TrainResult",
    "objectness_target",
    "loss_objectness",
    "loss_instance",
    "pool_cluster_feature",
    "loss_supcon",
    "loss_variance_smooth",
    "total_loss",
    "window_loss_and_gradient",
    "gradients",
    "train_toy_head",
    "point_features",
    "make_training_window",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1

ALL_COMPONENTS = ("sc", "ins", "var", "obj", "reg")


@dataclass(frozen=True)
class SupConParams:
    temperature: float = 0.1  # contrastive temperature, not the window size
    normalize_features: bool = True

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class LossWeights:
    lambda_ins: float = 0.01
    lambda_var: float = 0.01
    lambda_reg: float = 1e-4
    mean_reduce: bool = False  # off by default: the losses are plain sums

    def __post_init__(self) -> None:
        if min(self.lambda_ins, self.lambda_var, self.lambda_reg) < 0:
            raise ValueError("loss weights must be non-negative")


# ---------------------------------------------------------------------------
# Features


@dataclass(frozen=True)
class FeatureSpec:
    """Per-point input features for the head.

    Base features are the compensated position (scaled) and, when
    ``include_velocity`` is set, the raw Doppler value (scaled).
    Neighborhood statistics over the volume (offset from the local
    centroid, neighbor count, Doppler mean/std) give each point a view
    of its surroundings.
    """

    include_velocity: bool = True
    neighbor_radius: float = 1.0
    pos_scale: float = 40.0
    v_scale: float = 15.0

    @property
    def dim(self) -> int:
        return 10 if self.include_velocity else 7

    def to_dict(self) -> dict:
        return {
            "include_velocity": self.include_velocity,
            "neighbor_radius": self.neighbor_radius,
            "pos_scale": self.pos_scale,
            "v_scale": self.v_scale,
        }


def point_features(positions: np.ndarray, velocities: np.ndarray, spec: FeatureSpec) -> np.ndarray:
    """Feature matrix (N, spec.dim) for one volume's points.

    Neighborhood statistics are accumulated over the symmetric pair list
    (plus each point itself), which keeps the whole computation in
    vectorized numpy.
    """
    n = len(positions)
    if n == 0:
        return np.empty((0, spec.dim))
    tree = cKDTree(positions)
    pairs = tree.query_pairs(spec.neighbor_radius, output_type="ndarray")
    counts = np.ones(n)
    pos_sum = positions.copy()
    v_sum = velocities.copy()
    v2_sum = velocities**2
    if pairs.size:
        both = np.concatenate([pairs[:, 0], pairs[:, 1]])
        other = np.concatenate([pairs[:, 1], pairs[:, 0]])
        counts += np.bincount(both, minlength=n)
        for col in range(3):
            pos_sum[:, col] += np.bincount(both, weights=positions[other, col], minlength=n)
        v_other = velocities[other]
        v_sum += np.bincount(both, weights=v_other, minlength=n)
        v2_sum += np.bincount(both, weights=v_other**2, minlength=n)
    offsets = positions - pos_sum / counts[:, None]
    mean_v = v_sum / counts
    std_v = np.sqrt(np.maximum(v2_sum / counts - mean_v**2, 0.0))
    cols = [positions / spec.pos_scale]
    if spec.include_velocity:
        cols.append(velocities[:, None] / spec.v_scale)
    cols.append(offsets)
    # Relative local density: robust to the absolute sampling rate, so
    # heads trained on thinned volumes transfer to full-density ones.
    rel_density = np.log1p(counts) - np.log1p(np.median(counts))
    cols.append(rel_density[:, None] / 2.0)
    if spec.include_velocity:
        cols.append(mean_v[:, None] / spec.v_scale)
        cols.append(std_v[:, None] / spec.v_scale)
    return np.concatenate(cols, axis=1)


# ---------------------------------------------------------------------------
# Head


@dataclass
class ToyHead:
    """Fully connected per-point head with a flat parameter vector.

    Layers: feature_dim -> hidden... -> 2 * embed_dim + 1, tanh on the
    hidden layers. The output row splits into the embedding, a
    log-variance (exponentiated so variances stay positive) and an
    objectness logit (sigmoid keeps objectness in (0, 1)).
    """

    feature_dim: int
    hidden: tuple[int, ...]
    embed_dim: int
    params: np.ndarray  # flat float64 vector
    feature_spec: FeatureSpec = field(default_factory=FeatureSpec)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.feature_dim, *self.hidden, 2 * self.embed_dim + 1]

    @classmethod
    def init(
        cls,
        feature_spec: FeatureSpec,
        hidden: tuple[int, ...] = (32, 32),
        embed_dim: int = 8,
        seed: int = 0,
        init_logvar: float = -math.log(2.0 * math.pi),
    ) -> "ToyHead":
        # The default log-variance makes the association-probability peak
        # (2 pi var)^(-D/2) equal 1.0 for any D, so an untrained head merges
        # rather than fragments under the 0.4 threshold.
        rng = np.random.default_rng(seed)
        sizes = [feature_spec.dim, *hidden, 2 * embed_dim + 1]
        chunks = []
        for i in range(len(sizes) - 1):
            w = rng.normal(0.0, 1.0 / math.sqrt(sizes[i]), (sizes[i], sizes[i + 1]))
            b = np.zeros(sizes[i + 1])
            if i == len(sizes) - 2:
                b[embed_dim : 2 * embed_dim] = init_logvar
            chunks.extend([w.reshape(-1), b])
        return cls(feature_spec.dim, tuple(hidden), embed_dim, np.concatenate(chunks), feature_spec)

    def unpack(self) -> list[tuple[np.ndarray, np.ndarray]]:
        sizes = self.layer_sizes
        layers = []
        ofs = 0
        for i in range(len(sizes) - 1):
            w = self.params[ofs : ofs + sizes[i] * sizes[i + 1]].reshape(sizes[i], sizes[i + 1])
            ofs += sizes[i] * sizes[i + 1]
            b = self.params[ofs : ofs + sizes[i + 1]]
            ofs += sizes[i + 1]
            layers.append((w, b))
        return layers

    def forward(self, features: np.ndarray) -> tuple[PointHeadOutput, dict]:
        layers = self.unpack()
        h = np.asarray(features, dtype=float)
        hs = [h]
        for w, b in layers[:-1]:
            h = np.tanh(h @ w + b)
            hs.append(h)
        w, b = layers[-1]
        out = h @ w + b
        d = self.embed_dim
        e = out[:, :d]
        var = np.exp(out[:, d : 2 * d])
        obj = 1.0 / (1.0 + np.exp(-out[:, 2 * d]))
        cache = {"hs": hs, "layers": layers, "var": var, "obj": obj}
        return PointHeadOutput(e, var, obj), cache

    def backward(self, cache: dict, d_e: np.ndarray, d_var: np.ndarray, d_obj: np.ndarray) -> np.ndarray:
        """Parameter gradient of a scalar loss, given output gradients."""
        hs, layers = cache["hs"], cache["layers"]
        d_logvar = d_var * cache["var"]
        obj = cache["obj"]
        d_logit = d_obj * obj * (1.0 - obj)
        delta = np.concatenate([d_e, d_logvar, d_logit[:, None]], axis=1)

        grads: list[np.ndarray] = []
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            grads.append(delta.sum(axis=0))  # bias
            grads.append((hs[i].T @ delta).reshape(-1))  # weights
            if i > 0:
                delta = (delta @ w.T) * (1.0 - hs[i] ** 2)
        grads.reverse()
        return np.concatenate(grads)

    def apply(self, features: np.ndarray) -> PointHeadOutput:
        out, _ = self.forward(features)
        return out


# ---------------------------------------------------------------------------
# Loss functions (contract surface)


def objectness_target(positions: np.ndarray, instance_ids: np.ndarray) -> np.ndarray:
    """Ground-truth objectness from instance geometry.

    For a point x of instance I with centroid c and RMS radius r the
    target is exp(-|x - c|^2 / (2 r^2)); background points get 0 and a
    zero-radius (singleton or coincident) instance gets 1 at its points.
    """
    positions = np.asarray(positions, dtype=float)
    o = np.zeros(len(positions))
    for iid in np.unique(instance_ids):
        if iid == BACKGROUND_ID:
            continue
        idx = np.flatnonzero(instance_ids == iid)
        pts = positions[idx]
        d2 = ((pts - pts.mean(axis=0)) ** 2).sum(axis=1)
        r2 = d2.mean()
        o[idx] = 1.0 if r2 < 1e-18 else np.exp(-d2 / (2.0 * r2))
    return o


def loss_objectness(o_hat: np.ndarray, o: np.ndarray) -> float:
    """Sum of squared objectness errors."""
    o_hat = np.asarray(o_hat, dtype=float)
    o = np.asarray(o, dtype=float)
    if o_hat.shape != o.shape:
        raise ValueError("objectness arrays differ in length")
    return float(((o_hat - o) ** 2).sum())


def loss_instance(p_hat: np.ndarray, membership: np.ndarray) -> float:
    """Sum of squared association-probability errors against membership."""
    p_hat = np.asarray(p_hat, dtype=float)
    membership = np.asarray(membership, dtype=float)
    if p_hat.shape != membership.shape:
        raise ValueError("p_hat and membership must share a shape")
    return float(((p_hat - membership) ** 2).sum())


def pool_cluster_feature(embeddings: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Elementwise max over member embeddings, L2-normalized when asked."""
    embeddings = np.asarray(embeddings, dtype=float)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ValueError("empty cluster: pooling needs at least one member")
    z = embeddings.max(axis=0)
    if normalize:
        norm = np.linalg.norm(z)
        if norm > 1e-12:
            z = z / norm
    return z


def loss_supcon(z: np.ndarray, instance_ids: np.ndarray, params: SupConParams) -> float:
    """Supervised contrastive loss over per-cluster features.

    Every cluster anchors once; positives are the other clusters of the
    same instance, the denominator runs over all other clusters.
    Anchors without positives are skipped. Raises when fewer than two
    clusters are given.
    """
    loss, _ = _supcon_with_grad(np.asarray(z, dtype=float), np.asarray(instance_ids), params)
    return loss


def _supcon_with_grad(z: np.ndarray, instance_ids: np.ndarray, params: SupConParams) -> tuple[float, np.ndarray]:
    k = z.shape[0]
    if k < 2:
        raise ValueError("supervised contrastive loss needs at least 2 clusters")
    tau = params.temperature
    sims = (z @ z.T) / tau
    loss = 0.0
    dz = np.zeros_like(z)
    for i in range(k):  # ascending anchor order keeps summation deterministic
        pos = np.flatnonzero((instance_ids == instance_ids[i]) & (np.arange(k) != i))
        if pos.size == 0:
            continue
        others = np.flatnonzero(np.arange(k) != i)
        row = sims[i, others]
        m = row.max()
        exp_row = np.exp(row - m)
        denom = exp_row.sum()
        loss += (m + math.log(denom)) - sims[i, pos].mean()

        d_sim = np.zeros(k)
        d_sim[others] = exp_row / denom
        d_sim[pos] -= 1.0 / pos.size
        dz[i] += (d_sim[:, None] * z).sum(axis=0) / tau
        dz += np.outer(d_sim, z[i]) / tau
    return float(loss), dz


def loss_variance_smooth(variances: np.ndarray, instance_ids: np.ndarray) -> float:
    """Squared deviation of each moving point's variance from its instance mean."""
    variances = np.asarray(variances, dtype=float)
    total = 0.0
    for iid in np.unique(instance_ids):
        if iid == BACKGROUND_ID:
            continue
        rows = variances[np.asarray(instance_ids) == iid]
        total += float(((rows - rows.mean(axis=0)) ** 2).sum())
    return total


def total_loss(sc: float, ins: float, var: float, obj: float, reg: float, weights: LossWeights) -> float:
    """Weighted combination of the loss components."""
    parts = np.array([sc, ins, var, obj, reg], dtype=float)
    if not np.isfinite(parts).all():
        raise ValueError("loss components must be finite")
    return float(sc + weights.lambda_ins * ins + weights.lambda_var * var + obj + reg)


# ---------------------------------------------------------------------------
# Training windows


@dataclass(frozen=True)
class TrainingWindow:
    """Everything the losses need for one volume."""

    features: np.ndarray  # (N, F)
    instance_ids: np.ndarray  # (N,) ground-truth labels, 0 = background
    objectness: np.ndarray  # (N,) targets
    clusters: list[np.ndarray]  # member index arrays (ascending) per cluster
    cluster_instances: np.ndarray  # (C,) instance id per cluster

    def __len__(self) -> int:
        return self.features.shape[0]


def _majority_label(labels: np.ndarray) -> int:
    vals, counts = np.unique(labels, return_counts=True)
    return int(vals[np.argmax(counts)])


def make_training_window(
    volume: MovingVolume,
    gt_per_frame: list[np.ndarray],
    kept_masks,
    spec: FeatureSpec,
) -> TrainingWindow:
    """Attach ground truth and features to a compensated volume.

    ``gt_per_frame`` holds the original per-frame label arrays and
    ``kept_masks`` the outlier-filter keep masks, so the volume's
    frame_point_index (which refers to kept frames) can be traced back
    to ground-truth labels.
    """
    gt = np.empty(len(volume), dtype=np.uint32)
    for fi in np.unique(volume.frame_index):
        sel = volume.frame_index == fi
        kept_labels = np.asarray(gt_per_frame[fi])[kept_masks[fi]]
        gt[sel] = kept_labels[volume.frame_point_index[sel]]
    features = point_features(volume.positions, volume.velocities, spec)
    clusters = [np.flatnonzero(volume.cluster_index == c) for c in np.unique(volume.cluster_index)]
    cluster_instances = np.array([_majority_label(gt[idx]) for idx in clusters], dtype=np.int64)
    return TrainingWindow(
        features=features,
        instance_ids=gt,
        objectness=objectness_target(volume.positions, gt),
        clusters=clusters,
        cluster_instances=cluster_instances,
    )


# ---------------------------------------------------------------------------
# Differentiable window loss


def _instance_centers(window: TrainingWindow) -> tuple[np.ndarray, np.ndarray]:
    """(instance ids, center point index per instance).

    The center is the member with the highest objectness target, ties
    to the lowest point index.
    """
    ids = np.unique(window.instance_ids)
    ids = ids[ids != BACKGROUND_ID]
    centers = []
    for iid in ids:
        idx = np.flatnonzero(window.instance_ids == iid)
        centers.append(idx[int(np.argmax(window.objectness[idx]))])
    return ids, np.array(centers, dtype=np.int64)


def window_loss_and_gradient(
    head: ToyHead,
    window: TrainingWindow,
    weights: LossWeights,
    supcon: SupConParams,
    components: tuple[str, ...] = ALL_COMPONENTS,
) -> tuple[float, np.ndarray, dict[str, float]]:
    """Loss and analytic parameter gradient for one window.

    The returned scalar is the weighted sum of the requested components
    (lambda weights applied as in the total loss) and the gradient
    always differentiates exactly that scalar. ``parts`` reports the
    unweighted component values.
    """
    out, cache = head.forward(window.features)
    n, d = out.embeddings.shape
    d_e = np.zeros((n, d))
    d_var = np.zeros((n, d))
    d_obj = np.zeros(n)
    parts = dict.fromkeys(ALL_COMPONENTS, 0.0)
    total = 0.0

    if "obj" in components and n:
        s = 1.0 / n if weights.mean_reduce else 1.0
        diff = out.objectness - window.objectness
        parts["obj"] = s * float((diff**2).sum())
        total += parts["obj"]
        d_obj += s * 2.0 * diff

    ids, centers = _instance_centers(window)
    k = len(ids)

    if "ins" in components and k and n:
        s = 1.0 / (n * k) if weights.mean_reduce else 1.0
        coef = weights.lambda_ins * s
        raw = 0.0
        for iid, c in zip(ids, centers):
            e_c = out.embeddings[c]
            var_c = out.variances[c]
            probs = assoc_prob_many(e_c, var_c, out.embeddings)
            target = (window.instance_ids == iid).astype(float)
            diff = probs - target
            raw += float((diff**2).sum())
            g = coef * 2.0 * diff * probs  # (N,)
            delta = e_c[None, :] - out.embeddings  # (N, D)
            inv_var = 1.0 / var_c
            contrib = g[:, None] * delta * inv_var[None, :]
            d_e += contrib
            d_e[c] -= contrib.sum(axis=0)
            d_var[c] += (
                g[:, None] * (delta**2 * (0.5 * inv_var**2)[None, :] - 0.5 * inv_var[None, :])
            ).sum(axis=0)
        parts["ins"] = s * raw
        total += weights.lambda_ins * parts["ins"]

    if "var" in components and k:
        moving = int((window.instance_ids != BACKGROUND_ID).sum())
        s = 1.0 / moving if (weights.mean_reduce and moving) else 1.0
        coef = weights.lambda_var * s
        raw = 0.0
        for iid in ids:
            rows = np.flatnonzero(window.instance_ids == iid)
            v = out.variances[rows]
            dev = v - v.mean(axis=0)
            raw += float((dev**2).sum())
            d_var[rows] += coef * 2.0 * dev
        parts["var"] = s * raw
        total += weights.lambda_var * parts["var"]

    if "sc" in components and len(window.clusters) >= 2:
        s = 1.0 / len(window.clusters) if weights.mean_reduce else 1.0
        cols = np.arange(d)
        z = np.empty((len(window.clusters), d))
        argmax_rows = []
        raw_pools = []
        norms = []
        for ci, members in enumerate(window.clusters):
            emb = out.embeddings[members]
            am = members[np.argmax(emb, axis=0)]  # ties: lowest member index
            m = out.embeddings[am, cols]
            argmax_rows.append(am)
            raw_pools.append(m)
            if supcon.normalize_features:
                norm = float(np.linalg.norm(m))
                norms.append(norm)
                z[ci] = m / norm if norm > 1e-12 else m
            else:
                norms.append(0.0)
                z[ci] = m
        sc_loss, dz = _supcon_with_grad(z, window.cluster_instances, supcon)
        parts["sc"] = s * sc_loss
        total += parts["sc"]
        dz = dz * s
        for ci, members in enumerate(window.clusters):
            g = dz[ci]
            if supcon.normalize_features and norms[ci] > 1e-12:
                m, r = raw_pools[ci], norms[ci]
                g = g / r - m * float(m @ g) / r**3
            d_e[argmax_rows[ci], cols] += g

    grad = head.backward(cache, d_e, d_var, d_obj)

    if "reg" in components:
        parts["reg"] = weights.lambda_reg * float((head.params**2).sum())
        total += parts["reg"]
        grad = grad + weights.lambda_reg * 2.0 * head.params

    return float(total), grad, parts


def gradients(
    head: ToyHead,
    batch: list[TrainingWindow],
    weights: LossWeights,
    supcon: SupConParams,
    components: tuple[str, ...] = ALL_COMPONENTS,
) -> tuple[float, np.ndarray]:
    """Summed loss and parameter gradient over a batch of windows."""
    loss = 0.0
    grad = np.zeros_like(head.params)
    for window in batch:
        l, g, _ = window_loss_and_gradient(head, window, weights, supcon, components)
        loss += l
        grad += g
    return loss, grad


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    head: ToyHead
    loss_curve: list[float]  # mean total loss per epoch
    part_curves: dict[str, list[float]]
    initial_loss: float = 0.0  # mean loss before the first update
    initial_parts: dict[str, float] | None = None


def train_toy_head(
    dataset: list[TrainingWindow],
    epochs: int = 200,
    learning_rate: float = 1e-3,
    seed: int = 0,
    head: ToyHead | None = None,
    weights: LossWeights | None = None,
    supcon: SupConParams | None = None,
    batch_size: int = 4,
    feature_spec: FeatureSpec | None = None,
    hidden: tuple[int, ...] = (32, 32),
    embed_dim: int = 8,
) -> TrainResult:
    """Mini-batch gradient descent over windows. Deterministic given seed."""
    if not dataset:
        raise ValueError("empty training dataset")
    if not any(len(np.unique(w.cluster_instances)) >= 2 or len(w.clusters) >= 2 for w in dataset):
        raise ValueError("dataset has no window with an instance pair to contrast")
    weights = weights or LossWeights()
    supcon = supcon or SupConParams()
    spec = feature_spec or FeatureSpec()
    if head is None:
        head = ToyHead.init(spec, hidden=hidden, embed_dim=embed_dim, seed=seed)
    rng = np.random.default_rng(seed)

    # Baseline before any update, so callers can compare against the
    # true initial losses.
    initial_loss = 0.0
    initial_parts = dict.fromkeys(ALL_COMPONENTS, 0.0)
    for window in dataset:
        l, _, parts = window_loss_and_gradient(head, window, weights, supcon)
        initial_loss += l
        for name in ALL_COMPONENTS:
            initial_parts[name] += parts[name]
    initial_loss /= len(dataset)
    for name in ALL_COMPONENTS:
        initial_parts[name] /= len(dataset)

    curve: list[float] = []
    part_curves: dict[str, list[float]] = {name: [] for name in ALL_COMPONENTS}
    n = len(dataset)
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_parts = dict.fromkeys(ALL_COMPONENTS, 0.0)
        for start in range(0, n, batch_size):
            batch_idx = order[start : start + batch_size]
            grad = np.zeros_like(head.params)
            for wi in batch_idx:
                l, g, parts = window_loss_and_gradient(head, dataset[wi], weights, supcon)
                epoch_loss += l
                for name in ALL_COMPONENTS:
                    epoch_parts[name] += parts[name]
                grad += g
            head.params = head.params - learning_rate * (grad / len(batch_idx))
        curve.append(epoch_loss / n)
        for name in ALL_COMPONENTS:
            part_curves[name].append(epoch_parts[name] / n)
    return TrainResult(head, curve, part_curves, initial_loss, initial_parts)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path: str | Path, head: ToyHead, supcon: SupConParams, extra: dict | None = None) -> None:
    """Versioned JSON checkpoint: architecture, features, parameters."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "feature_spec": head.feature_spec.to_dict(),
        "hidden": list(head.hidden),
        "embed_dim": head.embed_dim,
        "params": head.params.tolist(),
        "supcon": {
            "temperature": supcon.temperature,
            "normalize_features": supcon.normalize_features,
        },
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path) -> tuple[ToyHead, SupConParams, dict]:
    data = json.loads(Path(path).read_text())
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
    spec = FeatureSpec(**data["feature_spec"])
    head = ToyHead(
        feature_dim=spec.dim,
        hidden=tuple(data["hidden"]),
        embed_dim=int(data["embed_dim"]),
        params=np.array(data["params"], dtype=float),
        feature_spec=spec,
    )
    supcon = SupConParams(**data["supcon"])
    return head, supcon, data.get("extra", {})
