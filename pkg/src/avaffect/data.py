"""Corpus I/O, sequence windowing, audio clip alignment, and the synthetic
multimodal corpus used for desk-scale verification.

File formats (all little-endian):
  feature/label files  magic "AVFS", u32 format version (currently 1),
                       u32 frame count, u32 width, then row-major float32.
                       Label files use width 3: valence, arousal, valid.
  manifest             plain text, one video per line, tab-separated:
                       id, fps, visual-path, audio-path, label-path, split.
                       Paths are relative to the manifest's directory.
  audio                16 kHz mono 16-bit PCM WAV, or an AVFS feature file
                       (sniffed by magic) holding per-frame audio features.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"AVFS"
FORMAT_VERSION = 1
SAMPLE_RATE = 16_000
CLIP_SECONDS = 0.5
CLIP_SAMPLES = int(SAMPLE_RATE * CLIP_SECONDS)  # 8000
DEFAULT_FPS = 30.0
SPLITS = ("train", "validation", "test")


class CorpusError(ValueError):
    """Raised for malformed manifests, feature files or label values."""


# -- binary feature/label files ------------------------------------------------


def write_feature_file(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 2:
        raise CorpusError(f"feature array must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_feature_file(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise CorpusError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        header = fh.read(12)
        if len(header) != 12:
            raise CorpusError(f"{path}: truncated header")
        version, count, width = struct.unpack("<III", header)
        if version != FORMAT_VERSION:
            raise CorpusError(f"{path}: unsupported format version {version}")
        payload = fh.read(4 * count * width)
        if len(payload) != 4 * count * width:
            raise CorpusError(f"{path}: truncated payload")
        return np.frombuffer(payload, dtype="<f4").reshape(count, width).copy()


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = (pcm * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> np.ndarray:
    """Read 16 kHz mono 16-bit PCM into float32 in [-1, 1]."""
    with wave.open(str(path), "rb") as fh:
        if fh.getframerate() != SAMPLE_RATE:
            raise CorpusError(f"{path}: sample rate {fh.getframerate()} != {SAMPLE_RATE}")
        if fh.getnchannels() != 1:
            raise CorpusError(f"{path}: expected mono audio")
        if fh.getsampwidth() != 2:
            raise CorpusError(f"{path}: expected 16-bit samples")
        raw = fh.readframes(fh.getnframes())
    return (np.frombuffer(raw, dtype="<i2").astype(np.float32)) / 32768.0


# -- corpus structures ------------------------------------------------------------


@dataclass
class VideoRecord:
    """One video's aligned per-frame streams."""

    video_id: str
    fps: float
    visual: np.ndarray          # (F, D_v) float32
    labels: np.ndarray          # (F, 2) float32: valence, arousal
    valid: np.ndarray           # (F,) bool
    split: str
    audio_features: np.ndarray | None = None  # (F, D_a) float32
    waveform: np.ndarray | None = None        # (S,) float32 at 16 kHz

    @property
    def n_frames(self) -> int:
        return self.visual.shape[0]

    def timestamps(self) -> np.ndarray:
        return np.arange(self.n_frames, dtype=np.float64) / self.fps


@dataclass
class MultimodalWindow:
    """T aligned valid frames from a single video, strictly increasing in time."""

    video_id: str
    frame_indices: np.ndarray   # (T,) indices into the video streams
    visual: np.ndarray          # (T, D_v)
    labels: np.ndarray          # (T, 2)
    timestamps: np.ndarray      # (T,) seconds
    audio_features: np.ndarray | None = None  # (T, D_a)
    waveform: np.ndarray | None = None        # full-video waveform reference

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass
class Corpus:
    videos: list[VideoRecord] = field(default_factory=list)
    latents: dict[str, np.ndarray] | None = None  # synthetic ground truth, in-memory only

    def split(self, name: str) -> list[VideoRecord]:
        if name not in SPLITS:
            raise CorpusError(f"unknown split {name!r}, expected one of {SPLITS}")
        return [v for v in self.videos if v.split == name]

    def has_split(self, name: str) -> bool:
        return any(v.split == name for v in self.videos)


# -- manifest I/O -----------------------------------------------------------------


def write_manifest(path, rows: list[tuple[str, float, str, str, str, str]]) -> None:
    lines = ["\t".join((vid, repr(float(fps)), vis, aud, lab, split))
             for vid, fps, vis, aud, lab, split in rows]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_corpus(manifest_path) -> Corpus:
    """Load every video named by the manifest, marking invalid frames.

    Errors name the offending file: missing file, frame-count mismatch
    between streams, labels outside [-1, 1], or a bad magic/version.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise CorpusError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    corpus = Corpus()
    seen: set[str] = set()
    for lineno, line in enumerate(manifest_path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise CorpusError(f"{manifest_path}:{lineno}: expected 6 tab-separated fields, got {len(parts)}")
        vid, fps_s, vis_p, aud_p, lab_p, split = parts
        if vid in seen:
            raise CorpusError(f"{manifest_path}:{lineno}: duplicate video id {vid!r}")
        seen.add(vid)
        if split not in SPLITS:
            raise CorpusError(f"{manifest_path}:{lineno}: unknown split {split!r}")
        try:
            fps = float(fps_s)
        except ValueError:
            raise CorpusError(f"{manifest_path}:{lineno}: bad fps {fps_s!r}") from None

        vis_file, aud_file, lab_file = base / vis_p, base / aud_p, base / lab_p
        for f in (vis_file, aud_file, lab_file):
            if not f.exists():
                raise CorpusError(f"missing file for video {vid!r}: {f}")

        visual = read_feature_file(vis_file)
        lab_arr = read_feature_file(lab_file)
        if lab_arr.shape[1] != 3:
            raise CorpusError(f"{lab_file}: label width must be 3, got {lab_arr.shape[1]}")
        if lab_arr.shape[0] != visual.shape[0]:
            raise CorpusError(
                f"video {vid!r}: frame counts disagree (visual {visual.shape[0]}, labels {lab_arr.shape[0]})"
            )
        valid = lab_arr[:, 2] > 0.5
        labels = lab_arr[:, :2]
        if valid.any() and np.abs(labels[valid]).max() > 1.0:
            raise CorpusError(f"{lab_file}: labels outside [-1, 1]")

        audio_features = None
        waveform = None
        with open(aud_file, "rb") as fh:
            magic = fh.read(4)
        if magic == FEATURE_MAGIC:
            audio_features = read_feature_file(aud_file)
            if audio_features.shape[0] != visual.shape[0]:
                raise CorpusError(
                    f"video {vid!r}: frame counts disagree (visual {visual.shape[0]}, "
                    f"audio {audio_features.shape[0]})"
                )
        elif magic == b"RIFF":
            waveform = read_wav(aud_file)
        else:
            raise CorpusError(f"{aud_file}: bad magic {magic!r} (expected AVFS features or RIFF wav)")

        corpus.videos.append(VideoRecord(
            video_id=vid, fps=fps, visual=visual, labels=labels, valid=valid,
            split=split, audio_features=audio_features, waveform=waveform,
        ))
    return corpus


# -- windowing -------------------------------------------------------------------


def window_sequences(video: VideoRecord, length: int, dilation: int, split: str) -> list[MultimodalWindow]:
    """Cut one video's valid frames into fixed-length windows.

    Training: for each offset o in 0..dilation-1 take the valid-frame
    subsequence o, o+dilation, ... and cut it into consecutive
    non-overlapping windows of ``length`` (interleaved dilated sampling, so
    the offsets partition the valid frames). Validation and test force
    dilation 1. Trailing remainders shorter than ``length`` are dropped.
    """
    if length < 1 or dilation < 1:
        raise ValueError("length and dilation must be >= 1")
    if split not in SPLITS:
        raise CorpusError(f"unknown split {split!r}")
    if split != "train":
        dilation = 1
    valid_idx = np.flatnonzero(video.valid)
    ts = video.timestamps()
    windows: list[MultimodalWindow] = []
    for offset in range(dilation):
        stream = valid_idx[offset::dilation]
        n_full = len(stream) // length
        for w in range(n_full):
            idx = stream[w * length : (w + 1) * length]
            windows.append(MultimodalWindow(
                video_id=video.video_id,
                frame_indices=idx,
                visual=video.visual[idx],
                labels=video.labels[idx],
                timestamps=ts[idx],
                audio_features=None if video.audio_features is None else video.audio_features[idx],
                waveform=video.waveform,
            ))
    return windows


def corpus_windows(corpus: Corpus, split: str, length: int, dilation: int) -> list[MultimodalWindow]:
    out: list[MultimodalWindow] = []
    for video in corpus.split(split):
        out.extend(window_sequences(video, length, dilation, split))
    return out


def temporal_context(dilation: int, length: int) -> float:
    """Seconds of context spanned by a dilated window at the 30 fps rate."""
    if dilation < 1 or length < 1:
        raise ValueError("dilation and length must be >= 1")
    return (dilation / 30.0) * length


# -- audio clips ------------------------------------------------------------------


def extract_audio_clip(waveform: np.ndarray, timestamp: float) -> np.ndarray:
    """0.5 s of 16 kHz audio centered on the timestamp (8000 samples).

    Windows that extend past either end of the recording are zero-padded on
    that side.
    """
    waveform = np.asarray(waveform, dtype=np.float32)
    n = waveform.shape[0]
    if timestamp < 0 or timestamp * SAMPLE_RATE > n:
        raise ValueError(f"timestamp {timestamp:.3f}s outside recording of {n} samples")
    center = int(round(timestamp * SAMPLE_RATE))
    start = center - CLIP_SAMPLES // 2
    clip = np.zeros(CLIP_SAMPLES, dtype=np.float32)
    lo = max(start, 0)
    hi = min(start + CLIP_SAMPLES, n)
    if hi > lo:
        clip[lo - start : hi - start] = waveform[lo:hi]
    return clip


def window_clips(window: MultimodalWindow) -> np.ndarray:
    """(T, 8000) audio clips for one window of a waveform-backed video."""
    if window.waveform is None:
        raise CorpusError(f"video {window.video_id!r} carries no waveform audio")
    return np.stack([extract_audio_clip(window.waveform, t) for t in window.timestamps])


def augment_audio(clip: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Additive elementwise gaussian noise (training splits only)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return clip
    return clip + rng.normal(0.0, sigma, size=clip.shape).astype(clip.dtype)


# -- synthetic corpus -------------------------------------------------------------

N_DISTRACTORS = 8
TRAIN_FRACTION = 0.8


def _smooth_signal(rng: np.random.Generator, n: int, smoothness: int) -> np.ndarray:
    """White noise smoothed by a moving average, rescaled to [-1, 1]."""
    raw = rng.normal(size=n + smoothness - 1)
    kernel = np.ones(smoothness) / smoothness
    sig = np.convolve(raw, kernel, mode="valid")
    lo, hi = sig.min(), sig.max()
    if hi == lo:
        return np.zeros(n)
    return 2.0 * (sig - lo) / (hi - lo) - 1.0


def synth_generate(seed: int, n_videos: int = 50, frames_per_video: int = 480,
                   d_visual: int = 512, d_audio: int = 128, smoothness: int = 24,
                   noise: float = 0.05) -> Corpus:
    """Deterministic synthetic corpus whose fusion benefit is known by construction.

    Per video, two independent smoothed latent signals z1, z2 drive the
    corpus: visual features observe only z1 (through a fixed random linear
    map plus distractor signals), audio features only z2, and the labels are
    valence = (z1+z2)/2, arousal = (z1-z2)/2. Each single modality therefore
    explains half the label variance, capping unimodal CCC near 1/sqrt(2),
    while fusing both modalities can approach 1. Observation noise is added
    to features only. The latent signals are kept on the returned corpus
    (in-memory only) so oracle checks can regress on them directly.
    """
    if n_videos < 0 or frames_per_video <= 0 or d_visual <= 0 or d_audio <= 0 or smoothness <= 0:
        raise ValueError("synthetic corpus parameters must be positive")
    rng = np.random.default_rng(seed)
    # Fixed observation maps shared across the corpus, with O(1) per-dim
    # magnitudes like real embedding features.
    map_v = rng.normal(size=d_visual)
    map_a = rng.normal(size=d_audio)
    distract_v = 0.5 * rng.normal(size=(N_DISTRACTORS, d_visual))
    distract_a = 0.5 * rng.normal(size=(N_DISTRACTORS, d_audio))

    corpus = Corpus(latents={})
    n_train = int(round(n_videos * TRAIN_FRACTION))
    for v in range(n_videos):
        z1 = _smooth_signal(rng, frames_per_video, smoothness)
        z2 = _smooth_signal(rng, frames_per_video, smoothness)
        distr1 = np.stack([_smooth_signal(rng, frames_per_video, smoothness)
                           for _ in range(N_DISTRACTORS)], axis=1)
        distr2 = np.stack([_smooth_signal(rng, frames_per_video, smoothness)
                           for _ in range(N_DISTRACTORS)], axis=1)
        visual = np.outer(z1, map_v) + distr1 @ distract_v
        visual += noise * rng.normal(size=visual.shape)
        audio = np.outer(z2, map_a) + distr2 @ distract_a
        audio += noise * rng.normal(size=audio.shape)
        labels = np.stack([(z1 + z2) / 2.0, (z1 - z2) / 2.0], axis=1)
        vid = f"synth{v:04d}"
        corpus.videos.append(VideoRecord(
            video_id=vid,
            fps=DEFAULT_FPS,
            visual=visual.astype(np.float32),
            labels=labels.astype(np.float32),
            valid=np.ones(frames_per_video, dtype=bool),
            split="train" if v < n_train else "validation",
            audio_features=audio.astype(np.float32),
        ))
        corpus.latents[vid] = np.stack([z1, z2], axis=1)
    return corpus


def write_corpus(corpus: Corpus, out_dir) -> Path:
    """Persist a feature-based corpus; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for video in corpus.videos:
        vis_p = f"{video.video_id}.visual.avfs"
        lab_p = f"{video.video_id}.labels.avfs"
        write_feature_file(out_dir / vis_p, video.visual)
        lab = np.concatenate([video.labels, video.valid[:, None].astype(np.float32)], axis=1)
        write_feature_file(out_dir / lab_p, lab)
        if video.audio_features is not None:
            aud_p = f"{video.video_id}.audio.avfs"
            write_feature_file(out_dir / aud_p, video.audio_features)
        elif video.waveform is not None:
            aud_p = f"{video.video_id}.wav"
            write_wav(out_dir / aud_p, video.waveform)
        else:
            raise CorpusError(f"video {video.video_id!r} has no audio stream")
        rows.append((video.video_id, video.fps, vis_p, aud_p, lab_p, video.split))
    manifest = out_dir / "manifest.tsv"
    write_manifest(manifest, rows)
    return manifest
