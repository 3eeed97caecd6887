"""Dataset indexing, random equal splits, and synthetic sequence generation.

Supported directory layouts:

    ilids-vid      root/cam1/person<ID>/<name><NNNN>.png  (and cam2)
    prid2011       root/multi_shot/cam_a/person_<ID>/<NNNN>.png  (and cam_b)
    synthetic-dir  manifest.csv written by :func:`generate_synthetic`

Frames are ordered by the numeric suffix of the file stem; names without
one are rejected, since silent lexicographic ordering would scramble the
optical flow between "frame9" and "frame10".
"""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

FRAME_SUFFIXES = (".png", ".ppm")
_TRAILING_DIGITS = re.compile(r"(\d+)$")


class DatasetError(ValueError):
    """Raised with an itemized report when a directory tree cannot be indexed."""


@dataclass
class Track:
    """One camera's contiguous frame sequence for one identity."""

    identity: str
    camera: int
    frames: list[Path]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class Dataset:
    """Indexed identities, each with up to two camera tracks."""

    root: Path
    tracks: dict[str, dict[int, Track]] = field(default_factory=dict)

    @property
    def identities(self) -> list[str]:
        return sorted(self.tracks)

    def eligible_identities(self) -> list[str]:
        """Identities with frames in both cameras; only these can form
        positive pairs or enter the probe/gallery protocol."""
        return [i for i in self.identities if len(self.tracks[i]) == 2]

    def track(self, identity: str, camera: int) -> Track:
        return self.tracks[identity][camera]

    def add_track(self, track: Track) -> None:
        self.tracks.setdefault(track.identity, {})[track.camera] = track


@dataclass
class Split:
    """Disjoint equal train/test identity sets drawn from one seed."""

    train: list[str]
    test: list[str]
    seed: int


def _frame_sort_key(path: Path) -> int:
    m = _TRAILING_DIGITS.search(path.stem)
    if m is None:
        raise DatasetError(f"frame name {path.name!r} has no numeric suffix; ordering would be ambiguous")
    return int(m.group(1))


def _collect_frames(track_dir: Path, problems: list[str]) -> list[Path]:
    frames = [p for p in track_dir.iterdir() if p.suffix.lower() in FRAME_SUFFIXES]
    if not frames:
        problems.append(f"empty track directory: {track_dir}")
        return []
    try:
        frames.sort(key=_frame_sort_key)
    except DatasetError as exc:
        problems.append(str(exc))
        return []
    return frames


def _index_camera_dirs(root: Path, camera_dirs: dict[int, Path], person_pattern: str) -> Dataset:
    problems: list[str] = []
    ds = Dataset(root=root)
    matcher = re.compile(person_pattern)
    found_any = False
    for camera, cam_dir in camera_dirs.items():
        if not cam_dir.is_dir():
            problems.append(f"missing camera directory: {cam_dir}")
            continue
        for person_dir in sorted(p for p in cam_dir.iterdir() if p.is_dir()):
            m = matcher.fullmatch(person_dir.name)
            if m is None:
                continue
            found_any = True
            frames = _collect_frames(person_dir, problems)
            if frames:
                ds.add_track(Track(identity=m.group(1), camera=camera, frames=frames))
    if problems:
        raise DatasetError("dataset index failed:\n  " + "\n  ".join(problems))
    if not found_any:
        raise DatasetError(f"no person directories found under {root}")
    return ds


def load_dataset(root, fmt: str) -> Dataset:
    """Index a dataset tree. `fmt` is 'ilids-vid', 'prid2011', or 'synthetic-dir'.

    Single-camera identities stay in the index (usable as negatives) but
    are excluded from positive-pair and gallery eligibility.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root does not exist: {root}")
    if fmt == "ilids-vid":
        return _index_camera_dirs(root, {1: root / "cam1", 2: root / "cam2"}, r"person(\w+)")
    if fmt == "prid2011":
        shots = root / "multi_shot"
        return _index_camera_dirs(shots, {1: shots / "cam_a", 2: shots / "cam_b"}, r"person_(\w+)")
    if fmt == "synthetic-dir":
        return _load_manifest(root)
    raise DatasetError(f"unknown dataset format {fmt!r}")


def split_dataset(ds: Dataset, seed: int) -> Split:
    """Uniformly random equal partition of the two-camera identities."""
    eligible = ds.eligible_identities()
    if len(eligible) < 2:
        raise DatasetError(f"need at least 2 two-camera identities to split, found {len(eligible)}")
    order = list(eligible)
    np.random.default_rng(seed).shuffle(order)
    half = len(order) // 2
    return Split(train=sorted(order[:half]), test=sorted(order[half:]), seed=seed)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Knobs for the procedural desk-scale dataset.

    Each identity is a distinct textured patch translating over a static
    background; camera 2 applies an appearance shift, and gray occluder
    rectangles are pasted per frame with the given probability.
    """

    identity_count: int = 8
    frames_per_track: int = 20
    image_width: int = 64
    image_height: int = 128
    texture_seed: int = 0
    occlusion_prob: float = 0.3
    occluder_size: tuple[int, int] = (40, 28)
    camera_brightness_shift: float = 0.06
    camera_channel_gain: tuple[float, float, float] = (1.05, 1.0, 0.95)
    motion_speed_range: tuple[float, float] = (0.8, 2.0)

    def validate(self) -> None:
        if self.identity_count < 1 or self.frames_per_track < 1:
            raise ValueError("identity and frame counts must be positive")
        if self.image_width < 8 or self.image_height < 8:
            raise ValueError("image extents must be at least 8 pixels")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ValueError("occlusion probability must lie in [0, 1]")

    def digest(self) -> str:
        payload = repr(sorted(self.__dict__.items())).encode()
        return hashlib.sha256(payload).hexdigest()[:12]


def _identity_texture(spec: SyntheticSpec, identity_idx: int, rng: np.random.Generator) -> np.ndarray:
    """Per-identity patch: a saturated base hue plus a unique stripe pattern."""
    ph, pw = spec.image_height // 2, spec.image_width // 2
    hue = identity_idx / max(spec.identity_count, 1)
    base = np.array(
        [
            0.5 + 0.45 * np.cos(2 * np.pi * hue),
            0.5 + 0.45 * np.cos(2 * np.pi * (hue + 1.0 / 3.0)),
            0.5 + 0.45 * np.cos(2 * np.pi * (hue + 2.0 / 3.0)),
        ]
    )
    rows = np.arange(ph)[:, None, None]
    cols = np.arange(pw)[None, :, None]
    freq_r = 2 * np.pi * (1 + identity_idx % 4) / ph
    freq_c = 2 * np.pi * (1 + identity_idx % 3) / pw
    stripes = 0.18 * np.sin(freq_r * rows + freq_c * cols + identity_idx)
    noise = 0.08 * rng.standard_normal((ph, pw, 3))
    return np.clip(base[None, None, :] + stripes + noise, 0.0, 1.0)


def _render_track(spec: SyntheticSpec, texture: np.ndarray, camera: int, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.image_height, spec.image_width
    ph, pw = texture.shape[:2]
    bg_col = np.linspace(0.25, 0.45, w)[None, :, None]
    bg_row = np.linspace(0.0, 0.12, h)[:, None, None]
    background = np.broadcast_to(bg_col + bg_row, (h, w, 3)).copy()

    speed = rng.uniform(*spec.motion_speed_range)
    phase = rng.uniform(0, 2 * np.pi)
    row_start = rng.integers(0, max(h - ph, 1))

    frames = np.empty((spec.frames_per_track, h, w, 3))
    for t in range(spec.frames_per_track):
        frame = background + 0.01 * rng.standard_normal((h, w, 3))
        row = int(row_start + 0.6 * speed * t) % max(h - ph, 1)
        col = int((w - pw) / 2 * (1 + np.sin(phase + 0.25 * speed * t)))
        col = min(max(col, 0), w - pw)
        frame[row : row + ph, col : col + pw] = texture
        if rng.random() < spec.occlusion_prob:
            oh = min(spec.occluder_size[0], h - 1)
            ow = min(spec.occluder_size[1], w - 1)
            orow = int(rng.integers(0, h - oh))
            ocol = int(rng.integers(0, w - ow))
            frame[orow : orow + oh, ocol : ocol + ow] = 0.5
        if camera == 2:
            frame = frame * np.asarray(spec.camera_channel_gain)[None, None, :]
            frame = frame + spec.camera_brightness_shift
        frames[t] = np.clip(frame, 0.0, 1.0)
    return (frames * 255.0).round().astype(np.uint8)


def generate_synthetic(spec: SyntheticSpec, seed: int, out_dir) -> Dataset:
    """Write a labeled synthetic dataset tree plus manifest.csv, then load it."""
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, spec.texture_seed])

    manifest_rows = []
    for idx in range(spec.identity_count):
        identity = f"{idx + 1:03d}"
        texture = _identity_texture(spec, idx, rng)
        for camera in (1, 2):
            track_dir = out_dir / f"cam{camera}" / f"person{identity}"
            track_dir.mkdir(parents=True, exist_ok=True)
            frames = _render_track(spec, texture, camera, rng)
            for t in range(frames.shape[0]):
                Image.fromarray(frames[t]).save(track_dir / f"frame{t + 1:04d}.png")
            manifest_rows.append(
                {
                    "identity": identity,
                    "camera": camera,
                    "track_path": str(track_dir.relative_to(out_dir)),
                    "frame_count": frames.shape[0],
                    "spec_hash": spec.digest(),
                }
            )

    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["identity", "camera", "track_path", "frame_count", "spec_hash"])
        writer.writeheader()
        writer.writerows(manifest_rows)
    return load_dataset(out_dir, "synthetic-dir")


def _load_manifest(root: Path) -> Dataset:
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise DatasetError(f"no manifest.csv under {root}")
    problems: list[str] = []
    ds = Dataset(root=root)
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            track_dir = root / row["track_path"]
            if not track_dir.is_dir():
                problems.append(f"manifest names missing track directory: {track_dir}")
                continue
            frames = _collect_frames(track_dir, problems)
            if not frames:
                continue
            if len(frames) != int(row["frame_count"]):
                problems.append(
                    f"{track_dir}: manifest says {row['frame_count']} frames, found {len(frames)}"
                )
                continue
            ds.add_track(Track(identity=row["identity"], camera=int(row["camera"]), frames=frames))
    if problems:
        raise DatasetError("dataset index failed:\n  " + "\n  ".join(problems))
    if not ds.tracks:
        raise DatasetError(f"manifest {manifest} lists no tracks")
    return ds
