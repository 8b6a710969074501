"""The two trainable heads and their training / inference machinery.

The temporal-convolution head slides a single kernel of length T over stacked
per-frame pose feature vectors and reads the result as per-clip class logits.
The graph-convolution head applies one normalized-adjacency spatial layer and
one temporal layer to explicit (x, y, s) or (X, Y, Z) joint sequences.

Input features are constants (the upstream pose backbone is frozen); only the
head parameters train.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .errors import InputError
from .pose_data import Skeleton
from .tensor import SequenceTooShortError, SgdConfig, Tape, Tensor

PROB_SOFTMAX_MEAN = "softmax_mean"  # softmax per clip, then average probs
PROB_LOGIT_MEAN = "logit_mean"      # average logits, one softmax


@dataclass
class SipNetHead:
    """Single temporal convolution over stacked pose features."""
    kernel: Tensor  # [T, D, C]
    bias: Tensor    # [C]

    @property
    def clip_len(self) -> int:
        return self.kernel.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.kernel.shape[1]

    @property
    def num_classes(self) -> int:
        return self.kernel.shape[2]

    @classmethod
    def create(cls, clip_len: int, feature_dim: int, num_classes: int,
               rng: np.random.Generator | None = None) -> "SipNetHead":
        if clip_len < 1:
            raise InputError(f"clip length {clip_len} < 1")
        if rng is None:
            kernel = np.zeros((clip_len, feature_dim, num_classes))
        else:
            bound = np.sqrt(1.0 / (clip_len * feature_dim))
            kernel = rng.uniform(-bound, bound,
                                 (clip_len, feature_dim, num_classes))
        return cls(kernel=Tensor(kernel), bias=Tensor(np.zeros(num_classes)))

    def params(self) -> dict[str, Tensor]:
        return {"kernel": self.kernel, "bias": self.bias}

    def logits(self, window: np.ndarray, tape: Tape | None = None) -> Tensor:
        """Class logits for one clip of exactly clip_len frames."""
        scores = sipnet_scores(window, self, tape)
        if scores.shape[0] != 1:
            raise ValueError(f"expected one clip, got length {window.shape[0]}")
        return _squeeze_row(scores, tape)


def _squeeze_row(x: Tensor, tape: Tape | None) -> Tensor:
    out = Tensor(x.data[0])
    if tape is not None:
        def backward():
            x.accumulate_grad(out.grad[None, :])
        tape.record(backward)
    return out


def sipnet_scores(tube_features: np.ndarray, head: SipNetHead,
                  tape: Tape | None = None) -> Tensor:
    """Fully-convolutional logits: one row per valid clip position.

    tube_features: [L, D] -> [L - T + 1, C]
    """
    feats = np.asarray(tube_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != head.feature_dim:
        raise ValueError(
            f"features shape {feats.shape} incompatible with D={head.feature_dim}")
    return tc.conv1d_temporal(Tensor(feats), head.kernel, head.bias, tape)


def sipnet_video_probs(clip_logits: np.ndarray,
                       mode: str = PROB_SOFTMAX_MEAN) -> np.ndarray:
    """Aggregate per-clip logits into one probability vector."""
    logits = np.asarray(clip_logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ValueError(f"expected [N_clips, C] logits, got {logits.shape}")
    if mode == PROB_SOFTMAX_MEAN:
        return tc.softmax(logits).mean(axis=0)
    if mode == PROB_LOGIT_MEAN:
        return tc.softmax(logits.mean(axis=0))
    raise InputError(f"unknown probability aggregation mode {mode!r}")


# ---------------------------------------------------------------------------
# graph-convolution head
# ---------------------------------------------------------------------------

def normalized_adjacency(skeleton: Skeleton) -> np.ndarray:
    """Symmetrically normalized adjacency with self-loops over the skeleton."""
    j = skeleton.joint_count
    a = np.eye(j)
    for p, c in skeleton.edges:
        a[p, c] = 1.0
        a[c, p] = 1.0
    d_inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


@dataclass
class MiniSTGCN:
    """One spatial graph layer + one temporal layer + linear classifier."""
    adjacency: np.ndarray       # [J, J], constant
    spatial_weight: Tensor      # [C_in, H]
    temporal_kernel: Tensor     # [K_t, H, H]
    classifier_weight: Tensor   # [H, C]
    classifier_bias: Tensor     # [C]
    clip_len: int = 32          # training/inference window; must be >= K_t

    @property
    def num_classes(self) -> int:
        return self.classifier_weight.shape[1]

    @classmethod
    def create(cls, skeleton: Skeleton, num_classes: int,
               hidden: int = 64, temporal_kernel_size: int = 9,
               in_channels: int = 3, clip_len: int = 32,
               rng: np.random.Generator | None = None) -> "MiniSTGCN":
        if clip_len < temporal_kernel_size:
            raise InputError(
                f"clip_len {clip_len} < temporal kernel {temporal_kernel_size}")

        def init(shape, fan_in):
            if rng is None:
                return np.zeros(shape)
            bound = np.sqrt(1.0 / fan_in)
            return rng.uniform(-bound, bound, shape)

        return cls(
            clip_len=clip_len,
            adjacency=normalized_adjacency(skeleton),
            spatial_weight=Tensor(init((in_channels, hidden), in_channels)),
            temporal_kernel=Tensor(init(
                (temporal_kernel_size, hidden, hidden),
                temporal_kernel_size * hidden)),
            classifier_weight=Tensor(init((hidden, num_classes), hidden)),
            classifier_bias=Tensor(np.zeros(num_classes)),
        )

    def params(self) -> dict[str, Tensor]:
        return {
            "spatial_weight": self.spatial_weight,
            "temporal_kernel": self.temporal_kernel,
            "classifier_weight": self.classifier_weight,
            "classifier_bias": self.classifier_bias,
        }

    def logits(self, window: np.ndarray, tape: Tape | None = None) -> Tensor:
        return stgcn_block(window, self, tape)


def stgcn_block(joints: np.ndarray, model: MiniSTGCN,
                tape: Tape | None = None) -> Tensor:
    """Logits for one joint-coordinate clip.

    joints: [T, J, C_in] -> [C]. Spatial step, ReLU, valid temporal
    convolution, ReLU, global average pool, linear classifier.
    """
    x = np.asarray(joints, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected [T, J, C_in] input, got {x.shape}")
    if x.shape[0] < model.temporal_kernel.shape[0]:
        raise SequenceTooShortError(
            f"sequence length {x.shape[0]} < temporal kernel "
            f"{model.temporal_kernel.shape[0]}")
    h = tc.relu(tc.graph_conv(Tensor(x), model.adjacency,
                              model.spatial_weight, tape), tape)
    h = tc.relu(tc.temporal_conv_joints(h, model.temporal_kernel, tape), tape)
    pooled = tc.global_mean_pool(h, tape)
    return tc.linear(pooled, model.classifier_weight,
                     model.classifier_bias, tape)


def center_on_root(joints3d: np.ndarray, root_index: int) -> np.ndarray:
    """Subtract the root joint per frame before feeding 3D sequences."""
    return joints3d - joints3d[:, root_index:root_index + 1, :]


# ---------------------------------------------------------------------------
# clip sampling and padding policy
# ---------------------------------------------------------------------------

POLICY_RANDOM_TRAIN = "random_train"
POLICY_ALL_VALID_TEST = "all_valid_test"

TRAIN = "train"
TEST = "test"

ACCEPT = "accept"
SKIP = "skip"
PAD = "pad"


def pad_or_reject(length: int, clip_len: int, phase: str) -> str:
    """Short-sequence policy: skip at train time, replicate-pad at test."""
    if length >= clip_len:
        return ACCEPT
    if phase == TRAIN:
        return SKIP
    if phase == TEST:
        return PAD
    raise InputError(f"unknown phase {phase!r}")


def pad_to_length(sequence: np.ndarray, clip_len: int) -> np.ndarray:
    """Replicate the last frame until the sequence reaches clip_len."""
    if len(sequence) >= clip_len:
        return sequence
    tail = np.repeat(sequence[-1:], clip_len - len(sequence), axis=0)
    return np.concatenate([sequence, tail], axis=0)


@dataclass
class ClipSampler:
    clip_len: int
    seed: int = 0
    policy: str = POLICY_RANDOM_TRAIN

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def sample_start(self, length: int) -> int:
        """One uniform valid start position (training policy)."""
        if length < self.clip_len:
            raise SequenceTooShortError(f"{length} < {self.clip_len}")
        return int(self._rng.integers(0, length - self.clip_len + 1))

    def all_starts(self, length: int) -> list[int]:
        """Every valid window (fully-convolutional test policy)."""
        if length < self.clip_len:
            raise SequenceTooShortError(f"{length} < {self.clip_len}")
        return list(range(length - self.clip_len + 1))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    loss_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)


def train(model, samples: list[tuple[np.ndarray, int]], sgd: SgdConfig,
          epochs: int, batch_size: int = 16,
          eval_fn=None) -> TrainResult:
    """Train a head on labeled sequences by sampling one random clip of
    clip_len consecutive frames per sequence per epoch, cross-entropy loss.

    samples: (sequence, label) pairs; sequences shorter than clip_len are
    skipped (training-phase padding policy). Deterministic under sgd.seed.
    eval_fn(model), when given, is called after each epoch and its value
    recorded (e.g. held-out accuracy).
    """
    usable = [(seq, label) for seq, label in samples
              if pad_or_reject(len(seq), model.clip_len, TRAIN) == ACCEPT]
    if not usable:
        raise InputError("no training sequences of sufficient length")
    rng = np.random.default_rng(sgd.seed)
    optimizer = tc.SgdOptimizer(model.params(), sgd)
    result = TrainResult()
    for _ in range(epochs):
        order = rng.permutation(len(usable))
        epoch_losses = []
        for batch_start in range(0, len(order), batch_size):
            batch = order[batch_start:batch_start + batch_size]
            tape = Tape()
            losses = []
            for i in batch:
                seq, label = usable[i]
                start = int(rng.integers(0, len(seq) - model.clip_len + 1))
                window = seq[start:start + model.clip_len]
                logits = model.logits(window, tape)
                losses.append(tc.cross_entropy(logits, label, tape))
            loss = tc.mean_scalars(losses, tape)
            tape.backward(loss)
            optimizer.step()
            epoch_losses.append(float(loss.data))
        result.loss_curve.append(float(np.mean(epoch_losses)))
        if eval_fn is not None:
            result.val_curve.append(float(eval_fn(model)))
    return result


def predict_video(model, sequences: list[np.ndarray],
                  prob_mode: str = PROB_SOFTMAX_MEAN) -> np.ndarray | None:
    """Probability vector for one video given its tubes' sequences.

    Each sequence is evaluated fully-convolutionally (every valid window,
    replicate-padded when shorter than the clip length); clip probabilities
    are aggregated per tube and the per-class maximum is taken over tubes.
    Returns None when there are no tubes.
    """
    if not sequences:
        return None
    per_tube = []
    for seq in sequences:
        if pad_or_reject(len(seq), model.clip_len, TEST) == PAD:
            seq = pad_to_length(np.asarray(seq, dtype=np.float64),
                                model.clip_len)
        logits = _all_clip_logits(model, seq)
        per_tube.append(sipnet_video_probs(logits, prob_mode))
    return np.stack(per_tube).max(axis=0)


def _all_clip_logits(model, seq: np.ndarray) -> np.ndarray:
    if isinstance(model, SipNetHead):
        return sipnet_scores(seq, model).data
    rows = []
    for start in range(len(seq) - model.clip_len + 1):
        rows.append(stgcn_block(seq[start:start + model.clip_len], model).data)
    return np.stack(rows)


# ---------------------------------------------------------------------------
# analysis utilities
# ---------------------------------------------------------------------------

def feature_distance_matrix(tube_features: np.ndarray) -> np.ndarray:
    """Symmetric matrix of Euclidean distances between per-frame features."""
    feats = np.asarray(tube_features, dtype=np.float64)
    diff = feats[:, None, :] - feats[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def t_sweep(train_samples: list[tuple[np.ndarray, int]],
            test_videos: list[tuple[str, list[np.ndarray], int]],
            feature_dim: int, num_classes: int, clip_lens: list[int],
            sgd: SgdConfig, epochs: int, batch_size: int = 16,
            csv_path=None) -> dict[int, float]:
    """Train + evaluate one temporal-convolution head per clip length.

    Returns mean class accuracy per clip length; optionally writes a CSV of
    (clip_len, mean_class_accuracy) rows for plotting.
    """
    from .eval_harness import mean_class_accuracy_from_indices

    results = {}
    for clip_len in clip_lens:
        rng = np.random.default_rng(sgd.seed)
        head = SipNetHead.create(clip_len, feature_dim, num_classes, rng)
        train(head, train_samples, sgd, epochs, batch_size)
        predictions = []
        for _, sequences, label in test_videos:
            probs = predict_video(head, sequences)
            predictions.append((probs, label))
        results[clip_len] = mean_class_accuracy_from_indices(
            predictions, num_classes)
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["clip_len", "mean_class_accuracy"])
            for clip_len in clip_lens:
                writer.writerow([clip_len, results[clip_len]])
    return results


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_model(path, model, classes: list[str],
               skeleton: Skeleton | None = None):
    meta = {"classes": list(classes)}
    if isinstance(model, SipNetHead):
        meta["head"] = "sipnet"
        meta["T"] = model.clip_len
        meta["D"] = model.feature_dim
        meta["C"] = model.num_classes
    else:
        meta["head"] = "ministgcn"
        meta["T"] = model.clip_len
        meta["C"] = model.num_classes
        if skeleton is not None:
            meta["skeleton"] = {"joint_names": list(skeleton.joint_names),
                                "edges": [list(e) for e in skeleton.edges]}
    tc.save_params(path, model.params(), meta)


def load_model(path):
    tensors, meta = tc.load_params(path)
    if meta.get("head") == "sipnet":
        model = SipNetHead(kernel=tensors["kernel"], bias=tensors["bias"])
    elif meta.get("head") == "ministgcn":
        sk = meta["skeleton"]
        skeleton = Skeleton(tuple(sk["joint_names"]),
                            tuple(tuple(e) for e in sk["edges"]))
        model = MiniSTGCN(
            adjacency=normalized_adjacency(skeleton),
            clip_len=meta["T"],
            spatial_weight=tensors["spatial_weight"],
            temporal_kernel=tensors["temporal_kernel"],
            classifier_weight=tensors["classifier_weight"],
            classifier_bias=tensors["classifier_bias"],
        )
    else:
        raise InputError(f"{path}: unknown head kind {meta.get('head')!r}")
    return model, meta
