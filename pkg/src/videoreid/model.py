"""Embedding model facade: CNN + attention parameters, preprocessing
statistics, and checkpoint round-tripping.

A checkpoint holds only the embedding path (no loss heads): CNN and
attention parameters, the training-set channel statistics, and a few
meta records describing the configuration the parameters were trained
under.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attention, featnet
from .autograd import ParamStore, Tensor, load_checkpoint, no_grad, save_checkpoint
from .attention import VideoEmbedding, sequence_embedding
from .featnet import extract_sequence
from .preproc import ChannelStats

TRAIN_MAX_FRAMES = 16
TEST_MAX_FRAMES = 128

_META_FUSION = {"literal": 0.0, "single_ft": 1.0}
_META_FC_ACT = {"none": 0.0, "tanh": 1.0}


@dataclass
class EmbeddingModel:
    """Shared-parameter embedding network plus its preprocessing stats."""

    params: ParamStore
    hops: int
    fusion: str = "literal"
    fc_activation: str = "tanh"
    temporal_bias: bool = False
    stats: ChannelStats | None = None

    @classmethod
    def fresh(
        cls,
        seed: int,
        hops: int = 3,
        fusion: str = "literal",
        fc_activation: str = "tanh",
        temporal_bias: bool = False,
        dtype=np.float32,
    ) -> "EmbeddingModel":
        rng = np.random.default_rng(seed)
        store = ParamStore(dtype=dtype)
        featnet.init_feature_net(store, rng)
        attention.init_attention(store, rng, hops, temporal_bias)
        return cls(params=store, hops=hops, fusion=fusion, fc_activation=fc_activation, temporal_bias=temporal_bias)

    def forward_sequence(self, stacks, max_frames: int | None = None, workers: int = 1) -> tuple[Tensor, VideoEmbedding]:
        """Graph-recording forward pass over normalized (T, 5, 56, 40) stacks."""
        bundles = extract_sequence(stacks, self.params, self.fc_activation, max_frames, workers)
        return sequence_embedding(bundles, self.params, self.hops, self.fusion)

    def embed(self, stacks, max_frames: int | None = TEST_MAX_FRAMES, workers: int = 1) -> VideoEmbedding:
        """Inference-only embedding; sequences beyond `max_frames` are truncated."""
        arr = np.asarray(stacks)
        if max_frames is not None and arr.shape[0] > max_frames:
            arr = arr[:max_frames]
        with no_grad():
            _, diag = self.forward_sequence(arr, workers=workers)
        return diag

    # -- persistence --------------------------------------------------------

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.params.state_arrays())
        out["meta.hops"] = np.array([float(self.hops)])
        out["meta.fusion"] = np.array([_META_FUSION[self.fusion]])
        out["meta.fc_activation"] = np.array([_META_FC_ACT[self.fc_activation]])
        out["meta.temporal_bias"] = np.array([1.0 if self.temporal_bias else 0.0])
        if self.stats is not None:
            mean, std = self.stats.as_arrays()
            out["preproc.mean"] = mean
            out["preproc.std"] = std
        return out

    def save(self, path) -> None:
        save_checkpoint(path, self.checkpoint_arrays())

    @classmethod
    def load(cls, path, dtype=np.float32, expect_hops: int | None = None) -> "EmbeddingModel":
        records = load_checkpoint(path)
        try:
            hops = int(records.pop("meta.hops")[0])
            fusion = "single_ft" if records.pop("meta.fusion")[0] else "literal"
            fc_activation = "tanh" if records.pop("meta.fc_activation")[0] else "none"
            temporal_bias = bool(records.pop("meta.temporal_bias")[0])
        except KeyError as exc:
            raise ValueError(f"{path}: missing checkpoint meta record {exc}") from exc
        if expect_hops is not None and expect_hops != hops:
            raise ValueError(f"{path}: checkpoint trained with {hops} hops, configuration asks for {expect_hops}")

        stats = None
        if "preproc.mean" in records:
            stats = ChannelStats(
                mean=records.pop("preproc.mean").astype(np.float64),
                std=records.pop("preproc.std").astype(np.float64),
            )

        store = ParamStore(dtype=dtype)
        featnet.init_feature_net(store, np.random.default_rng(0))
        attention.init_attention(store, np.random.default_rng(0), hops, temporal_bias)
        expected = set(store.names())
        given = set(records)
        if expected != given:
            missing = sorted(expected - given)
            extra = sorted(given - expected)
            raise ValueError(f"{path}: parameter records mismatch (missing {missing}, unexpected {extra})")
        store.load_arrays(records)
        return cls(
            params=store,
            hops=hops,
            fusion=fusion,
            fc_activation=fc_activation,
            temporal_bias=temporal_bias,
            stats=stats,
        )
