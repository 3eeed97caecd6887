"""Siamese training: squared hinge between fused video features, one
identity softmax per branch, and plain SGD with batch size one.

Both branches run the same :class:`~videoreid.model.EmbeddingModel`
parameters (one physical store, not synchronized copies). Each epoch
draws one positive and one negative pair and applies two SGD steps,
positive first. After training the loss heads are dropped: the saved
checkpoint carries only the embedding path and preprocessing statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .autograd import ParamStore, Tensor, backward, he_normal, linear, mul, relu, sgd_step
from .autograd import softmax_xent, sqrt, sub, tensor_sum
from .autograd.gradcheck import gradient_error
from .data import Dataset, DatasetError
from .featnet import FEATURE_DIM
from .model import EmbeddingModel, TRAIN_MAX_FRAMES
from . import preproc

CONFIG_KEYS = ("margin", "lr", "epochs", "T", "hops", "seed", "fusion", "fc_activation", "precision")


@dataclass
class TrainConfig:
    """Training hyperparameters. Defaults follow the reference protocol:
    margin 2, learning rate 1e-4, 1100 epochs, 16-frame subsequences,
    3 spatial hops."""

    margin: float = 2.0
    lr: float = 1e-4
    epochs: int = 1100
    subseq_len: int = 16
    hops: int = 3
    seed: int = 0
    fusion: str = "literal"
    fc_activation: str = "tanh"
    precision: str = "float32"

    def validate(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 0:
            raise ValueError("epoch count must be non-negative")
        if self.subseq_len < 1:
            raise ValueError("subsequence length must be at least 1")
        if self.hops < 0:
            raise ValueError("hop count must be non-negative")
        if self.fusion not in ("literal", "single_ft"):
            raise ValueError(f"unknown fusion mode {self.fusion!r}")
        if self.fc_activation not in ("tanh", "none"):
            raise ValueError(f"unknown fc activation {self.fc_activation!r}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


def config_to_text(cfg: TrainConfig) -> str:
    return (
        f"margin={cfg.margin}\nlr={cfg.lr}\nepochs={cfg.epochs}\nT={cfg.subseq_len}\n"
        f"hops={cfg.hops}\nseed={cfg.seed}\nfusion={cfg.fusion}\n"
        f"fc_activation={cfg.fc_activation}\nprecision={cfg.precision}\n"
    )


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse flat key=value lines; '#' starts a comment, unknown keys fail."""
    cfg = base or TrainConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        cfg = apply_config_override(cfg, key, value)
    cfg.validate()
    return cfg


def apply_config_override(cfg: TrainConfig, key: str, value: str) -> TrainConfig:
    if key == "margin":
        return replace(cfg, margin=float(value))
    if key == "lr":
        return replace(cfg, lr=float(value))
    if key == "epochs":
        return replace(cfg, epochs=int(value))
    if key == "T":
        return replace(cfg, subseq_len=int(value))
    if key == "hops":
        return replace(cfg, hops=int(value))
    if key == "seed":
        return replace(cfg, seed=int(value))
    if key == "fusion":
        return replace(cfg, fusion=value)
    if key == "fc_activation":
        return replace(cfg, fc_activation=value)
    if key == "precision":
        return replace(cfg, precision=value)
    raise ValueError(f"unknown config key {key!r} (known: {', '.join(CONFIG_KEYS)})")


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(), base)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def hinge_loss(f1: Tensor, f2: Tensor, same: bool, margin: float) -> Tensor:
    """Squared hinge on the embedding distance d = ||f1 - f2||.

    Same identity: d^2 / 2. Different: max(0, margin - d)^2 / 2, which is
    exactly zero (gradient included) once d >= margin. The coincident
    d = 0 case for a negative pair returns the constant margin^2 / 2 with
    a zero subgradient, avoiding the sqrt singularity.
    """
    diff = sub(f1, f2)
    d2 = tensor_sum(mul(diff, diff))
    if same:
        return 0.5 * d2
    if float(d2.data) == 0.0:
        return Tensor(np.asarray(0.5 * margin * margin, dtype=f1.data.dtype))
    slack = relu(sub(Tensor(np.asarray(margin, dtype=f1.data.dtype)), sqrt(d2)))
    return 0.5 * mul(slack, slack)


def identity_loss(f: Tensor, label: int, params: ParamStore) -> Tensor:
    """Softmax cross-entropy of the linear identity classifier on `f`."""
    logits = linear(f, params["clf.w"], params["clf.b"])
    return softmax_xent(logits, label)


def init_classifier(store: ParamStore, rng: np.random.Generator, n_identities: int) -> None:
    if n_identities < 1:
        raise ValueError("classifier needs at least one identity")
    store.add("clf.w", he_normal(rng, (n_identities, FEATURE_DIM), FEATURE_DIM, store.dtype))
    store.add("clf.b", np.zeros(n_identities))


@dataclass
class PairSample:
    """Two subsequences with identity labels; polarity follows the labels."""

    stacks1: np.ndarray
    stacks2: np.ndarray
    identity1: str
    identity2: str

    @property
    def same(self) -> bool:
        return self.identity1 == self.identity2


@dataclass
class LossBreakdown:
    total: Tensor
    hinge: Tensor
    id1: Tensor
    id2: Tensor
    f1: Tensor
    f2: Tensor


def total_loss(
    model: EmbeddingModel,
    pair: PairSample,
    labels: dict[str, int],
    margin: float,
    max_frames: int | None = TRAIN_MAX_FRAMES,
) -> LossBreakdown:
    """Combined objective L = L_id1 + L_hinge + L_id2 over prepared stacks.

    Stacks must already be normalized (5, 56, 40) frame tensors; both
    branches share `model.params`, classifier included.
    """
    for identity in (pair.identity1, pair.identity2):
        if identity not in labels:
            raise ValueError(f"identity {identity!r} not among training identities")
    f1, _ = model.forward_sequence(pair.stacks1, max_frames=max_frames)
    f2, _ = model.forward_sequence(pair.stacks2, max_frames=max_frames)
    hinge = hinge_loss(f1, f2, pair.same, margin)
    id1 = identity_loss(f1, labels[pair.identity1], model.params)
    id2 = identity_loss(f2, labels[pair.identity2], model.params)
    total = (id1 + hinge) + id2
    return LossBreakdown(total=total, hinge=hinge, id1=id1, id2=id2, f1=f1, f2=f2)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

class TrackCache:
    """Preprocessed (T, 5, 72, 56) raw stacks per (identity, camera) track.

    Stacks are raw (un-normalized) so one cache can back many training
    runs with differently scoped statistics.
    """

    def __init__(
        self,
        dataset: Dataset | None,
        identities,
        rows: int = preproc.AUG_ROWS,
        cols: int = preproc.AUG_COLS,
        _stacks: dict[tuple[str, int], np.ndarray] | None = None,
    ):
        self.identities = sorted(identities)
        if _stacks is not None:
            self.stacks = _stacks
            return
        self.stacks = {}
        for identity in self.identities:
            for camera, track in sorted(dataset.tracks[identity].items()):
                frames = [preproc.load_frame(p) for p in track.frames]
                self.stacks[(identity, camera)] = preproc.preprocess_track(frames, rows, cols)

    def subset(self, identities) -> "TrackCache":
        """Restrict to some identities, sharing the underlying arrays."""
        wanted = set(identities)
        missing = wanted - set(self.identities)
        if missing:
            raise KeyError(f"identities not in cache: {sorted(missing)}")
        stacks = {key: arr for key, arr in self.stacks.items() if key[0] in wanted}
        return TrackCache(None, sorted(wanted), _stacks=stacks)

    def cameras(self, identity: str) -> list[int]:
        return sorted(cam for (ident, cam) in self.stacks if ident == identity)

    def stack(self, identity: str, camera: int) -> np.ndarray:
        return self.stacks[(identity, camera)]


def _subsequence(stack: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Random run of `length` consecutive frames; shorter tracks are used whole."""
    n = stack.shape[0]
    if n <= length:
        return stack
    start = int(rng.integers(0, n - length + 1))
    return stack[start : start + length]


def sample_epoch(cache: TrackCache, rng: np.random.Generator, subseq_len: int) -> tuple[PairSample, PairSample]:
    """Draw one positive pair (same identity, the two cameras) and one
    negative pair (two identities) of consecutive-frame subsequences."""
    eligible = [i for i in cache.identities if len(cache.cameras(i)) >= 2]
    if len(eligible) < 2:
        raise DatasetError("need at least 2 identities with two cameras to sample pairs")

    pos_identity = eligible[int(rng.integers(0, len(eligible)))]
    cam_a, cam_b = cache.cameras(pos_identity)[:2]
    pos = PairSample(
        stacks1=_subsequence(cache.stack(pos_identity, cam_a), subseq_len, rng),
        stacks2=_subsequence(cache.stack(pos_identity, cam_b), subseq_len, rng),
        identity1=pos_identity,
        identity2=pos_identity,
    )

    i1, i2 = rng.choice(len(cache.identities), size=2, replace=False)
    neg_id1, neg_id2 = cache.identities[int(i1)], cache.identities[int(i2)]
    cams1 = cache.cameras(neg_id1)
    cams2 = cache.cameras(neg_id2)
    neg = PairSample(
        stacks1=_subsequence(cache.stack(neg_id1, cams1[int(rng.integers(0, len(cams1)))]), subseq_len, rng),
        stacks2=_subsequence(cache.stack(neg_id2, cams2[int(rng.integers(0, len(cams2)))]), subseq_len, rng),
        identity1=neg_id1,
        identity2=neg_id2,
    )
    return pos, neg


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: EmbeddingModel
    loss_rows: list[dict]
    checkpoint_path: Path | None


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    out_dir=None,
    identities=None,
    augment: bool = True,
    cache: TrackCache | None = None,
) -> TrainResult:
    """Train on the given identities (default: all two-camera identities).

    Channel statistics come from center crops of the training tracks only;
    a wider `cache` may be passed to share preprocessing across runs, the
    statistics are still restricted to the training identities. Each epoch
    runs two SGD steps (positive pair, then negative). A non-finite loss
    aborts immediately after writing a diagnostic checkpoint; silent
    clamping would hide gradient bugs.
    """
    cfg.validate()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    if identities is None:
        identities = dataset.eligible_identities()
    identities = sorted(identities)
    cache = TrackCache(dataset, identities) if cache is None else cache.subset(identities)

    stats = preproc.compute_channel_stats(
        [preproc.center_crop(s) for s in cache.stacks.values()]
    )

    rng = np.random.default_rng(cfg.seed)
    model = EmbeddingModel.fresh(
        seed=cfg.seed,
        hops=cfg.hops,
        fusion=cfg.fusion,
        fc_activation=cfg.fc_activation,
        dtype=cfg.dtype,
    )
    model.stats = stats
    labels = {identity: i for i, identity in enumerate(identities)}
    init_classifier(model.params, np.random.default_rng(cfg.seed + 1), len(identities))

    def prepare(stacks: np.ndarray) -> np.ndarray:
        picked = preproc.augment(stacks, rng) if augment else preproc.center_crop(stacks)
        return preproc.apply_channel_stats(picked, stats).astype(cfg.dtype)

    loss_rows: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        pos, neg = sample_epoch(cache, rng, cfg.subseq_len)
        row = {"epoch": epoch}
        for tag, pair in (("pos", pos), ("neg", neg)):
            prepared = PairSample(
                stacks1=prepare(pair.stacks1),
                stacks2=prepare(pair.stacks2),
                identity1=pair.identity1,
                identity2=pair.identity2,
            )
            breakdown = total_loss(model, prepared, labels, cfg.margin, max_frames=cfg.subseq_len)
            value = breakdown.total.item()
            if not np.isfinite(value):
                if out_dir is not None:
                    model.save(out_dir / "diagnostic.ckpt")
                raise RuntimeError(
                    f"training diverged: non-finite loss {value} at epoch {epoch} ({tag} pair)"
                )
            backward(breakdown.total)
            sgd_step(model.params, cfg.lr)
            row[f"{tag}_loss"] = value
            if tag == "pos":
                row["id_loss_1"] = breakdown.id1.item()
                row["id_loss_2"] = breakdown.id2.item()
        loss_rows.append(row)

    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = out_dir / "checkpoint.ckpt"
        model.save(checkpoint_path)
        with open(out_dir / "training_log.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "pos_loss", "neg_loss", "id_loss_1", "id_loss_2"])
            writer.writeheader()
            writer.writerows(loss_rows)
    return TrainResult(model=model, loss_rows=loss_rows, checkpoint_path=checkpoint_path)


# ---------------------------------------------------------------------------
# Composed-network gradient audit
# ---------------------------------------------------------------------------

def full_network_gradient_check(seed: int = 0, samples_per_param: int = 4, hops: int = 2) -> dict[str, float]:
    """Finite-difference audit of the full combined objective.

    Builds a float64 model plus classifier, runs the two-branch loss on a
    synthetic 2-frame pair, and compares backward() against central
    differences at randomly sampled elements of every parameter tensor.
    Returns {parameter name: gradient error}.
    """
    rng = np.random.default_rng(seed)
    model = EmbeddingModel.fresh(seed=seed, hops=hops, dtype=np.float64)
    init_classifier(model.params, rng, 2)
    labels = {"a": 0, "b": 1}
    pair = PairSample(
        stacks1=rng.standard_normal((2, 5, 56, 40)) * 0.5,
        stacks2=rng.standard_normal((2, 5, 56, 40)) * 0.5,
        identity1="a",
        identity2="b",
    )

    def loss_value() -> float:
        return total_loss(model, pair, labels, margin=2.0).total.item()

    model.params.zero_grads()
    breakdown = total_loss(model, pair, labels, margin=2.0)
    backward(breakdown.total)

    report: dict[str, float] = {}
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        count = min(samples_per_param, flat.size)
        picks = rng.choice(flat.size, size=count, replace=False)
        analytic = p.grad.reshape(-1)
        worst = 0.0
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + 1e-5
            up = loss_value()
            flat[idx] = orig - 1e-5
            down = loss_value()
            flat[idx] = orig
            numeric = (up - down) / 2e-5
            worst = max(worst, gradient_error(analytic[idx], numeric))
        report[name] = worst
    return report
