"""Temporal and multi-hop spatial attention over per-frame CNN outputs.

Temporal branch: each frame's 128-d feature x_i gets a scalar score
sigmoid(theta . x_i); the video-level temporal feature is the weighted
sum f_t = sum_i alpha_i x_i (no score normalization across frames).

Spatial branch: each of J independent hops convolves the frame's final
conv map with its own 5x5 filter (stride 1, padding 2) and squashes with
a sigmoid, giving a one-channel score map per frame. The map reweights
the conv map, which is then flattened and projected to 128-d through the
CNN's shared fully connected layer (affine, no activation) and summed
over frames.

Fusion: the per-hop vectors combine as F = sum_j (f_sj + f_t), so the
temporal feature enters once per hop; with zero hops F = f_t. The
alternative single-count fusion F = sum_j f_sj + f_t is kept behind the
`fusion` flag for comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import ParamStore, Tensor, add, conv2d, he_normal, linear, mul, reshape, sigmoid, tensor_sum
from .featnet import FEATURE_DIM, FLAT_DIM, FeatureBundle

SPATIAL_KERNEL = 5
SPATIAL_PADDING = 2
FUSION_MODES = ("literal", "single_ft")


def init_attention(store: ParamStore, rng: np.random.Generator, hops: int, temporal_bias: bool = False) -> None:
    """Register attention parameters: theta plus one conv filter per hop."""
    if hops < 0:
        raise ValueError("hop count must be non-negative")
    store.add("attn.temporal.theta", he_normal(rng, (FEATURE_DIM,), FEATURE_DIM, store.dtype))
    if temporal_bias:
        store.add("attn.temporal.bias", np.zeros(1))
    c_in = 32
    fan_in = c_in * SPATIAL_KERNEL * SPATIAL_KERNEL
    for j in range(1, hops + 1):
        store.add(f"attn.spatial.hop{j}.w", he_normal(rng, (1, c_in, SPATIAL_KERNEL, SPATIAL_KERNEL), fan_in, store.dtype))
        store.add(f"attn.spatial.hop{j}.b", np.zeros(1))


def hop_count(params: ParamStore) -> int:
    j = 0
    while f"attn.spatial.hop{j + 1}.w" in params:
        j += 1
    return j


def temporal_scores(features: list[Tensor], params: ParamStore) -> list[Tensor]:
    """Per-frame scalar scores sigmoid(theta . x_i), each in (0, 1).

    Scores are computed frame by frame from that frame's feature alone,
    so the map is order-free and trivially parallel.
    """
    if not features:
        raise ValueError("no frame features given")
    theta = params["attn.temporal.theta"]
    bias = params["attn.temporal.bias"] if "attn.temporal.bias" in params else None
    scores = []
    for x in features:
        if x.shape != (FEATURE_DIM,):
            raise ValueError(f"frame feature must be {FEATURE_DIM}-d, got shape {x.shape}")
        s = tensor_sum(mul(theta, x))
        if bias is not None:
            s = add(s, reshape(bias, ()))
        scores.append(sigmoid(s))
    return scores


def temporal_feature(features: list[Tensor], scores: list[Tensor]) -> Tensor:
    """Weighted sum f_t = sum_i alpha_i x_i (a plain sum, not a mean)."""
    if len(features) != len(scores):
        raise ValueError(f"{len(features)} features vs {len(scores)} scores")
    if not features:
        raise ValueError("no frame features given")
    acc = mul(scores[0], features[0])
    for x, a in zip(features[1:], scores[1:]):
        acc = add(acc, mul(a, x))
    return acc


def spatial_scores(conv_maps: list[Tensor], params: ParamStore, hop: int) -> list[Tensor]:
    """One-channel sigmoid score map per frame for the given hop (1-based).

    The 5x5 / stride 1 / padding 2 convolution preserves the 10x8 spatial
    extents, so scores align with conv map cells one-to-one.
    """
    wname = f"attn.spatial.hop{hop}.w"
    if wname not in params:
        raise ValueError(f"hop {hop} out of range: no parameter {wname!r}")
    w = params[wname]
    b = params[f"attn.spatial.hop{hop}.b"]
    out = []
    for cm in conv_maps:
        raw = conv2d(cm, w, b, (1, 1), (SPATIAL_PADDING, SPATIAL_PADDING))
        out.append(sigmoid(raw))
    return out


def spatial_feature(conv_maps: list[Tensor], score_maps: list[Tensor], params: ParamStore) -> Tensor:
    """Score-weighted conv maps, projected through the shared fc and summed.

    The one-channel map broadcasts across all 32 channels; the projection
    is the CNN's fc affine map (no activation), keeping the result
    dimension-compatible with the temporal feature.
    """
    if len(conv_maps) != len(score_maps):
        raise ValueError(f"{len(conv_maps)} conv maps vs {len(score_maps)} score maps")
    if not conv_maps:
        raise ValueError("no conv maps given")
    w, b = params["featnet.fc.w"], params["featnet.fc.b"]
    acc = None
    for cm, sm in zip(conv_maps, score_maps):
        weighted = mul(cm, sm)
        proj = linear(reshape(weighted, (FLAT_DIM,)), w, b)
        acc = proj if acc is None else add(acc, proj)
    return acc


def fuse(f_t: Tensor, f_s: list[Tensor], fusion: str = "literal") -> Tensor:
    """Combine temporal and per-hop spatial features into the video vector."""
    if fusion not in FUSION_MODES:
        raise ValueError(f"fusion must be one of {FUSION_MODES}, got {fusion!r}")
    if not f_s:
        return f_t
    if fusion == "literal":
        acc = add(f_s[0], f_t)
        for fs in f_s[1:]:
            acc = add(acc, add(fs, f_t))
        return acc
    acc = f_s[0]
    for fs in f_s[1:]:
        acc = add(acc, fs)
    return add(acc, f_t)


@dataclass
class AttentionSet:
    """Plain-value attention diagnostics: temporal scores per frame and a
    10x8 score map per (hop, frame)."""

    temporal: list[float]
    spatial: dict[int, list[np.ndarray]] = field(default_factory=dict)


@dataclass
class VideoEmbedding:
    """Fused sequence-level feature with its per-branch components."""

    vector: np.ndarray
    f_t: np.ndarray
    f_s: dict[int, np.ndarray]
    attention: AttentionSet

    def fusion_residual(self, fusion: str = "literal") -> float:
        """Relative gap between `vector` and its recombined components."""
        hops = sorted(self.f_s)
        if not hops:
            expected = self.f_t
        elif fusion == "literal":
            expected = sum(self.f_s[j] + self.f_t for j in hops)
        else:
            expected = sum(self.f_s[j] for j in hops) + self.f_t
        denom = max(float(np.linalg.norm(self.vector)), 1e-12)
        return float(np.linalg.norm(self.vector - expected)) / denom


def sequence_embedding(
    bundles: list[FeatureBundle],
    params: ParamStore,
    hops: int,
    fusion: str = "literal",
) -> tuple[Tensor, VideoEmbedding]:
    """Full attention pipeline over a sequence of frame bundles.

    Returns the fused feature as a graph tensor (for training) together
    with a detached :class:`VideoEmbedding` carrying the diagnostics.
    """
    features = [bd.feature_vec for bd in bundles]
    conv_maps = [bd.conv_map for bd in bundles]

    t_scores = temporal_scores(features, params)
    f_t = temporal_feature(features, t_scores)

    f_s: list[Tensor] = []
    spatial_diag: dict[int, list[np.ndarray]] = {}
    for j in range(1, hops + 1):
        maps = spatial_scores(conv_maps, params, j)
        f_s.append(spatial_feature(conv_maps, maps, params))
        spatial_diag[j] = [m.data[0].copy() for m in maps]

    fused = fuse(f_t, f_s, fusion)
    diag = VideoEmbedding(
        vector=fused.data.copy(),
        f_t=f_t.data.copy(),
        f_s={j + 1: t.data.copy() for j, t in enumerate(f_s)},
        attention=AttentionSet(temporal=[s.item() for s in t_scores], spatial=spatial_diag),
    )
    return fused, diag
