"""Probe/gallery ranking, CMC curves, the repeated-split protocol, and
the spatial-hop ablation harness.

Protocol: camera 1 provides one probe sequence per identity, camera 2
one gallery sequence per identity. Sequences are capped at the first 128
frames (shorter ones are used whole). Gallery candidates are ordered by
ascending Euclidean distance between fused video features, with ties
broken toward the lower identity index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import preproc
from .attention import VideoEmbedding
from .data import Dataset, Split, split_dataset
from .model import EmbeddingModel, TEST_MAX_FRAMES
from .trainer import TrackCache

PROBE_CAMERA = 1
GALLERY_CAMERA = 2
REPORT_RANKS = (1, 5, 10, 20)


@dataclass
class RankList:
    """Gallery identities sorted by ascending distance to one probe."""

    probe_identity: str
    gallery_identities: list[str]
    distances: list[float]

    def rank_of_match(self) -> int:
        """1-based rank of the probe's own identity in the gallery."""
        try:
            return self.gallery_identities.index(self.probe_identity) + 1
        except ValueError:
            raise ValueError(f"probe identity {self.probe_identity!r} absent from gallery") from None


@dataclass
class CmcCurve:
    """Rank-k match probabilities for k = 1..len(values)."""

    values: np.ndarray
    runs: int = 1

    def at(self, k: int) -> float:
        """CMC(k); ranks beyond the gallery size saturate at 1."""
        if k < 1:
            raise ValueError("rank must be at least 1")
        return float(self.values[min(k, len(self.values)) - 1])


def embed_track(model: EmbeddingModel, raw_stack: np.ndarray, max_frames: int = TEST_MAX_FRAMES) -> VideoEmbedding:
    """Center-crop, normalize with the stored training statistics, embed."""
    if model.stats is None:
        raise ValueError("model carries no preprocessing statistics; train or load a full checkpoint")
    arr = np.asarray(raw_stack)
    if max_frames is not None and arr.shape[0] > max_frames:
        arr = arr[:max_frames]
    cropped = preproc.center_crop(arr)
    normalized = preproc.apply_channel_stats(cropped, model.stats).astype(model.params.dtype)
    return model.embed(normalized, max_frames=None)


def rank_gallery(
    probe: np.ndarray | VideoEmbedding,
    gallery: Sequence[tuple[str, np.ndarray | VideoEmbedding]],
    probe_identity: str = "",
) -> RankList:
    """Order gallery entries by ascending Euclidean distance to the probe.

    Equidistant entries keep their gallery order, so with galleries built
    in ascending identity order ties resolve toward the lower identity.
    """
    if not gallery:
        raise ValueError("gallery is empty")
    pvec = probe.vector if isinstance(probe, VideoEmbedding) else np.asarray(probe, dtype=np.float64)
    identities = []
    dists = []
    for identity, emb in gallery:
        gvec = emb.vector if isinstance(emb, VideoEmbedding) else np.asarray(emb, dtype=np.float64)
        identities.append(identity)
        dists.append(float(np.linalg.norm(pvec - gvec)))
    order = sorted(range(len(gallery)), key=lambda i: (dists[i], i))
    return RankList(
        probe_identity=probe_identity,
        gallery_identities=[identities[i] for i in order],
        distances=[dists[i] for i in order],
    )


def cmc_curve(rank_lists: Sequence[RankList], k_max: int | None = None) -> CmcCurve:
    """CMC(k) = fraction of probes whose match appears at rank <= k."""
    if not rank_lists:
        raise ValueError("no rank lists given")
    sizes = {len(rl.gallery_identities) for rl in rank_lists}
    gallery_size = max(sizes)
    k_max = gallery_size if k_max is None else min(k_max, gallery_size)
    ranks = np.array([rl.rank_of_match() for rl in rank_lists])
    ks = np.arange(1, k_max + 1)
    values = (ranks[None, :] <= ks[:, None]).mean(axis=1)
    return CmcCurve(values=values)


def evaluate_split(
    dataset: Dataset,
    model: EmbeddingModel,
    identities: Sequence[str],
    cache: TrackCache | None = None,
    max_frames: int = TEST_MAX_FRAMES,
) -> tuple[CmcCurve, list[RankList]]:
    """Probe camera-1 tracks against the camera-2 gallery for `identities`."""
    identities = sorted(identities)
    if cache is None:
        cache = TrackCache(dataset, identities)
    gallery = [
        (identity, embed_track(model, cache.stack(identity, GALLERY_CAMERA), max_frames))
        for identity in identities
    ]
    rank_lists = []
    for identity in identities:
        probe = embed_track(model, cache.stack(identity, PROBE_CAMERA), max_frames)
        rank_lists.append(rank_gallery(probe.vector, gallery, probe_identity=identity))
    return cmc_curve(rank_lists), rank_lists


@dataclass
class ProtocolResult:
    """Split-averaged CMC with per-run detail."""

    mean: CmcCurve
    std: np.ndarray
    per_run: list[CmcCurve]
    splits: list[Split] = field(default_factory=list)


def evaluate_protocol(
    dataset: Dataset,
    train_fn: Callable[[Split, int], EmbeddingModel],
    runs: int = 10,
    seed: int = 0,
    cache: TrackCache | None = None,
) -> ProtocolResult:
    """Repeat (fresh equal split, train, probe-vs-gallery) and average.

    `train_fn(split, run_seed)` must return a model fitted on the split's
    training identities; evaluation uses the held-out test identities. A
    shared preprocessing cache avoids redoing optical flow per run.
    """
    if runs < 1:
        raise ValueError("need at least one run")
    per_run: list[CmcCurve] = []
    splits: list[Split] = []
    for run in range(runs):
        split = split_dataset(dataset, seed + run)
        model = train_fn(split, seed + run)
        eval_cache = cache.subset(split.test) if cache is not None else None
        curve, _ = evaluate_split(dataset, model, split.test, cache=eval_cache)
        per_run.append(curve)
        splits.append(split)
    stacked = np.stack([c.values for c in per_run])
    return ProtocolResult(
        mean=CmcCurve(values=stacked.mean(axis=0), runs=runs),
        std=stacked.std(axis=0),
        per_run=per_run,
        splits=splits,
    )


def ablate_hops(
    dataset: Dataset,
    train_fn: Callable[[Split, int, int], EmbeddingModel],
    hop_values: Sequence[int] = (3, 2, 1, 0),
    runs: int = 1,
    seed: int = 0,
    cache: TrackCache | None = None,
) -> dict[int, ProtocolResult]:
    """Retrain per hop count over identical splits and seeds.

    `train_fn(split, run_seed, hops)` controls the spatial branch width;
    rows are directly comparable because every hop value sees the same
    split/seed schedule.
    """
    results: dict[int, ProtocolResult] = {}
    for hops in hop_values:
        if hops < 0:
            raise ValueError("hop counts must be non-negative")
        results[hops] = evaluate_protocol(
            dataset,
            lambda split, run_seed, j=hops: train_fn(split, run_seed, j),
            runs=runs,
            seed=seed,
            cache=cache,
        )
    return results


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def write_cmc_csv(path, curves: Sequence[CmcCurve]) -> None:
    """Long-format CSV: one (run, k, cmc) row per rank per run."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "k", "cmc"])
        for run, curve in enumerate(curves, start=1):
            for k, value in enumerate(curve.values, start=1):
                writer.writerow([run, k, f"{value:.6f}"])


def summary_rows(results: dict, ranks: Sequence[int] = REPORT_RANKS) -> list[dict]:
    rows = []
    for label, res in results.items():
        curve = res.mean if isinstance(res, ProtocolResult) else res
        row = {"label": str(label)}
        for k in ranks:
            row[f"rank{k}"] = curve.at(k)
        rows.append(row)
    return rows


def format_summary_table(results: dict, ranks: Sequence[int] = REPORT_RANKS, label_header: str = "Config") -> str:
    """Aligned text table with rank-1/5/10/20 columns (CMC given in %)."""
    rows = summary_rows(results, ranks)
    headers = [label_header] + [f"Rank-{k}" for k in ranks]
    cells = [[r["label"]] + [f"{100 * r[f'rank{k}']:.1f}" for k in ranks] for r in rows]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for c in cells:
        lines.append("  ".join(c[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines) + "\n"


def write_summary_csv(path, results: dict, ranks: Sequence[int] = REPORT_RANKS, label_header: str = "config") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([label_header] + [f"rank{k}" for k in ranks])
        for row in summary_rows(results, ranks):
            writer.writerow([row["label"]] + [f"{row[f'rank{k}']:.6f}" for k in ranks])


def dump_attention(embedding: VideoEmbedding, path) -> None:
    """Long-format CSV of temporal scores and spatial score maps."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "hop", "frame", "row", "col", "value"])
        for i, alpha in enumerate(embedding.attention.temporal):
            writer.writerow(["temporal", "", i, "", "", f"{alpha:.8f}"])
        for hop, maps in sorted(embedding.attention.spatial.items()):
            for i, score_map in enumerate(maps):
                for r in range(score_map.shape[0]):
                    for c in range(score_map.shape[1]):
                        writer.writerow(["spatial", hop, i, r, c, f"{score_map[r, c]:.8f}"])
