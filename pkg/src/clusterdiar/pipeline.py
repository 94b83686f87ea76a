"""Session-level diarization: windowing, encoding, fusion, clustering, turns."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustergan import ClusterGanModel, encode
from .clustering import eigengap_analysis, binarized_affinity, kmeans
from .scoring import RttmRecord

_EPS = 1e-9


class FormatError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Subsegment:
    start: float
    end: float
    parent: int  # index of the SAD segment it was cut from


@dataclass
class SegmentTimeline:
    session_id: str
    segments: list[tuple[float, float]]
    subsegments: list[Subsegment]

    def __len__(self) -> int:
        return len(self.subsegments)

    @property
    def speech_time(self) -> float:
        return sum(e - s for s, e in self.segments)


def _validate_sad(segments) -> list[tuple[float, float]]:
    out = []
    prev_end = -math.inf
    for s, e in segments:
        s, e = float(s), float(e)
        if not (math.isfinite(s) and math.isfinite(e)) or s < 0 or e <= s:
            raise FormatError(f"invalid speech segment [{s}, {e}]")
        if s < prev_end - _EPS:
            raise FormatError(f"speech segment [{s}, {e}] overlaps or is out of order")
        out.append((s, e))
        prev_end = e
    return out


def window_segment(
    start: float, end: float, window: float = 1.5, hop: float = 0.5, min_tail: float = 0.5
) -> list[tuple[float, float]]:
    """Sliding windows over one speech segment.

    Segments no longer than ``window`` give a single window. Otherwise full
    windows start every ``hop`` seconds; leftover speech gets one tail window
    starting at the next hop, kept if it is at least ``min_tail`` long and
    otherwise absorbed by extending the last full window.
    """
    if end - start <= window + _EPS:
        return [(start, end)]
    out = []
    i = 0
    while True:
        s = round(start + i * hop, 9)
        e = round(s + window, 9)
        if e > end + _EPS:
            break
        out.append((s, min(e, end)))
        i += 1
    if end - out[-1][1] > _EPS:
        s = round(start + i * hop, 9)
        if end - s >= min_tail - _EPS:
            out.append((s, end))
        else:
            out[-1] = (out[-1][0], end)
    return out


def build_timeline(
    sad_segments,
    session_id: str = "session",
    window: float = 1.5,
    hop: float = 0.5,
    min_tail: float = 0.5,
) -> SegmentTimeline:
    segments = _validate_sad(sad_segments)
    subs = [
        Subsegment(s, e, i)
        for i, (start, end) in enumerate(segments)
        for s, e in window_segment(start, end, window, hop, min_tail)
    ]
    return SegmentTimeline(session_id, segments, subs)


@dataclass
class EmbeddingSet:
    session_id: str
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix)
        if self.matrix.ndim != 2:
            raise FormatError("embedding matrix must be 2-D")
        if not np.all(np.isfinite(self.matrix)):
            raise FormatError(f"non-finite embedding values in session {self.session_id}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]


# ----------------------------------------------------------------- files


def format_embeddings(emb: EmbeddingSet) -> str:
    lines = [f"dim={emb.dim} count={len(emb)} session={emb.session_id}"]
    for row in np.asarray(emb.matrix, dtype=np.float64):
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_embeddings(text: str, source: str = "<embeddings>") -> EmbeddingSet:
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{source}: empty embedding file")
    try:
        header = dict(item.split("=", 1) for item in lines[0].split())
        dim, count, session = int(header["dim"]), int(header["count"]), header["session"]
    except (KeyError, ValueError):
        raise FormatError(f"{source}:1: bad header {lines[0]!r}") from None
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != count:
        raise FormatError(f"{source}: header says {count} rows, found {len(rows)}")
    matrix = np.empty((count, dim))
    for i, ln in enumerate(rows):
        vals = ln.split()
        if len(vals) != dim:
            raise FormatError(f"{source}:{i + 2}: expected {dim} values, got {len(vals)}")
        try:
            matrix[i] = [float(v) for v in vals]
        except ValueError:
            raise FormatError(f"{source}:{i + 2}: non-numeric value") from None
    return EmbeddingSet(session, matrix)


def write_embeddings(path, emb: EmbeddingSet) -> None:
    Path(path).write_text(format_embeddings(emb))


def read_embeddings(path) -> EmbeddingSet:
    path = Path(path)
    return parse_embeddings(path.read_text(), str(path))


def format_segments(timeline: SegmentTimeline) -> str:
    return "".join(f"{s.start!r} {s.end!r}\n" for s in timeline.subsegments)


def write_segments(path, timeline: SegmentTimeline) -> None:
    Path(path).write_text(format_segments(timeline))


def read_segments(path) -> list[tuple[float, float]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'start end'")
        out.append((float(parts[0]), float(parts[1])))
    return out


def timeline_from_subsegments(
    session_id: str, subsegments: list[tuple[float, float]], sad_segments=None
) -> SegmentTimeline:
    """Rebuild a timeline from explicit window times (e.g. a segments sidecar).

    Without SAD segments, overlapping or touching windows are merged into
    speech regions.
    """
    if sad_segments is None:
        merged: list[list[float]] = []
        for s, e in sorted(subsegments):
            if merged and s <= merged[-1][1] + _EPS:
                merged[-1][1] = max(merged[-1][1], e)
            else:
                merged.append([s, e])
        sad_segments = [tuple(m) for m in merged]
    segments = _validate_sad(sad_segments)
    subs = []
    for s, e in subsegments:
        parent = next(
            (i for i, (a, b) in enumerate(segments) if a - _EPS <= s and e <= b + _EPS), None
        )
        if parent is None:
            raise AlignmentError(f"window [{s}, {e}] lies outside every speech segment")
        subs.append(Subsegment(s, e, parent))
    return SegmentTimeline(session_id, segments, subs)


def read_sad(path) -> dict[str, list[tuple[float, float]]]:
    """``session start end`` lines -> per-session sorted segment lists."""
    out: dict[str, list[tuple[float, float]]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'session start end'")
        try:
            s, e = float(parts[1]), float(parts[2])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad time") from None
        out.setdefault(parts[0], []).append((s, e))
    return {k: _validate_sad(sorted(v)) for k, v in out.items()}


def write_sad(path, sessions: dict[str, list[tuple[float, float]]]) -> None:
    lines = [f"{sid} {s:.3f} {e:.3f}" for sid, segs in sessions.items() for s, e in segs]
    Path(path).write_text("".join(ln + "\n" for ln in lines))


# ---------------------------------------------------------------- fusion


def l2_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def fuse(base, latent: np.ndarray, mode: str = "concat") -> np.ndarray:
    base_m = base.matrix if isinstance(base, EmbeddingSet) else np.asarray(base)
    latent = np.asarray(latent)
    if base_m.shape[0] != latent.shape[0]:
        raise AlignmentError(f"{base_m.shape[0]} base rows vs {latent.shape[0]} latent rows")
    if mode != "concat":
        raise ValueError(f"unknown fusion mode {mode!r}")
    return np.concatenate([l2_normalize(base_m), l2_normalize(latent)], axis=1)


# -------------------------------------------------------------- labeling


@dataclass
class DiarizationLabeling:
    session_id: str
    labels: list[str]  # one per subsegment
    turns: list[tuple[float, float, str]]
    num_speakers: int
    estimated: bool = False
    eigengap: dict = field(default_factory=dict)

    def to_rttm(self) -> list[RttmRecord]:
        return [
            RttmRecord(self.session_id, round(s, 3), round(e - s, 3), lab)
            for s, e, lab in self.turns
            if round(e - s, 3) > 0
        ]


def collapse_turns(timeline: SegmentTimeline, labels: list[str]) -> list[tuple[float, float, str]]:
    """Turn per-window labels into non-overlapping speaker turns.

    Inside a speech segment every instant goes to the window with the
    nearest midpoint; runs of equal labels are then merged.
    """
    if len(labels) != len(timeline.subsegments):
        raise AlignmentError("one label per subsegment required")
    by_parent: dict[int, list[tuple[Subsegment, str]]] = {}
    for sub, lab in zip(timeline.subsegments, labels):
        by_parent.setdefault(sub.parent, []).append((sub, lab))
    pieces: list[tuple[float, float, str]] = []
    for idx, (seg_start, seg_end) in enumerate(timeline.segments):
        wins = sorted(by_parent.get(idx, []), key=lambda w: (w[0].start + w[0].end, w[0].start))
        if not wins:
            continue
        mids = [0.5 * (w.start + w.end) for w, _ in wins]
        bounds = [seg_start] + [0.5 * (a + b) for a, b in zip(mids[:-1], mids[1:])] + [seg_end]
        for (w, lab), s, e in zip(wins, bounds[:-1], bounds[1:]):
            if e > s:
                pieces.append((s, e, lab))
    turns: list[tuple[float, float, str]] = []
    for s, e, lab in pieces:
        if turns and turns[-1][2] == lab and abs(turns[-1][1] - s) <= _EPS:
            turns[-1] = (turns[-1][0], e, lab)
        else:
            turns.append((s, e, lab))
    return turns


def _canonical_names(raw: np.ndarray) -> list[str]:
    """Name clusters spk0, spk1, ... in order of first appearance."""
    names: dict[int, str] = {}
    for r in raw.tolist():
        if r not in names:
            names[r] = f"spk{len(names)}"
    return [names[r] for r in raw.tolist()]


@dataclass
class DiarizeConfig:
    fuse: bool = False
    fusion_mode: str = "concat"
    max_speakers: int = 10
    p_binarize: float = 0.2
    restarts: int = 10
    max_iter: int = 300
    tol: float = 1e-6
    seed: int = 0


def cluster_features(
    model: ClusterGanModel | None, embeddings: EmbeddingSet, config: DiarizeConfig
) -> np.ndarray:
    """Features handed to k-means: latent codes, fused codes, or raw embeddings."""
    if model is None:
        return np.asarray(embeddings.matrix, dtype=np.float64)
    latent = encode(model, embeddings.matrix)
    if config.fuse:
        return fuse(embeddings, latent, config.fusion_mode)
    return latent


def diarize(
    model: ClusterGanModel | None,
    timeline: SegmentTimeline,
    embeddings: EmbeddingSet,
    num_speakers: int | None = None,
    config: DiarizeConfig | None = None,
) -> DiarizationLabeling:
    """Label every window of a session and collapse the labels into turns.

    With ``model=None`` the raw embeddings are clustered (k-means baseline).
    The speaker count, when not given, is estimated from the raw embeddings.
    """
    config = config or DiarizeConfig()
    n = len(embeddings)
    if n != len(timeline.subsegments):
        raise AlignmentError(f"{n} embeddings for {len(timeline.subsegments)} subsegments")
    if n == 0:
        raise AlignmentError("session has no subsegments")
    estimated = num_speakers is None
    info: dict = {}
    if estimated:
        if n < 2:
            num_speakers = 1
        else:
            aff = binarized_affinity(embeddings.matrix, config.p_binarize)
            res = eigengap_analysis(aff.values, min(config.max_speakers, n))
            num_speakers = res.num_speakers
            info = {
                "num_speakers": num_speakers,
                "eigenvalues": res.eigenvalues[: min(config.max_speakers, n) + 1].tolist(),
                "components_exceed_max": res.components_exceed_max,
            }
    if num_speakers < 1:
        raise ValueError("num_speakers must be at least 1")
    if n < num_speakers:
        raise AlignmentError(f"{n} subsegments cannot hold {num_speakers} speakers")

    feats = cluster_features(model, embeddings, config)
    assign = kmeans(feats, num_speakers, config.restarts, config.max_iter, config.tol, config.seed)
    labels = _canonical_names(assign.labels)
    turns = collapse_turns(timeline, labels)
    return DiarizationLabeling(timeline.session_id, labels, turns, num_speakers, estimated, info)


def purity(true_labels, pred_labels) -> float:
    """Fraction of points whose cluster's majority true label matches theirs."""
    true_labels = np.asarray(true_labels)
    pred_labels = np.asarray(pred_labels)
    total = 0
    for c in np.unique(pred_labels):
        _, counts = np.unique(true_labels[pred_labels == c], return_counts=True)
        total += counts.max()
    return total / len(true_labels)


# ------------------------------------------------------------- synthetic


@dataclass
class SyntheticCorpus:
    embeddings: EmbeddingSet
    timeline: SegmentTimeline
    reference: list[RttmRecord]
    labels: np.ndarray  # speaker index per subsegment
    speakers: list[str]
    centroids: np.ndarray


def speaker_centroids(num_speakers: int, dim: int, separation: float, rng) -> np.ndarray:
    """Orthogonal random directions scaled so every pair is ``separation`` apart."""
    if num_speakers > dim:
        raise ValueError("cannot place more orthogonal centroids than dimensions")
    q, _ = np.linalg.qr(rng.standard_normal((dim, num_speakers)))
    return (separation / math.sqrt(2.0)) * q.T


def generate_synthetic_corpus(
    num_speakers: int,
    segments_per_speaker: int,
    dim: int = 512,
    separation: float = 8.0,
    noise_sigma: float = 1.0,
    seed: int = 0,
    session_id: str = "synth",
    centroids: np.ndarray | None = None,
    speaker_permutation=None,
    max_turn_windows: int = 6,
) -> SyntheticCorpus:
    """Gaussian speaker clusters laid out as a single-session conversation.

    ``noise_sigma`` is the expected norm of the per-segment noise (per
    coordinate ``noise_sigma / sqrt(dim)``), so ``separation / noise_sigma``
    compares centroid spacing to cluster spread in the same units.
    Every turn is one speech segment whose length yields a whole number of
    1.5 s / 0.5 s-hop windows; turns are separated by short pauses.
    """
    if separation <= 0:
        raise ValueError("separation must be positive")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    if centroids is None:
        centroids = speaker_centroids(num_speakers, dim, separation, rng)
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.shape != (num_speakers, dim):
        raise ValueError(f"centroids must be {(num_speakers, dim)}")
    # renames speakers without touching the embedding geometry
    perm = np.arange(num_speakers) if speaker_permutation is None else np.asarray(speaker_permutation)
    speakers = [f"S{i:02d}" for i in range(num_speakers)]

    remaining = np.full(num_speakers, segments_per_speaker)
    turns = []  # (speaker, n_windows)
    last = -1
    while remaining.sum() > 0:
        choices = [s for s in range(num_speakers) if remaining[s] > 0 and s != last]
        if not choices:
            choices = [s for s in range(num_speakers) if remaining[s] > 0]
        spk = int(rng.choice(choices))
        w = int(min(remaining[spk], rng.integers(1, max_turn_windows + 1)))
        turns.append((spk, w))
        remaining[spk] -= w
        last = spk

    # integer milliseconds keep every boundary exactly representable in RTTM
    t_ms = int(rng.integers(0, 500))
    segments, seg_spk = [], []
    for spk, w in turns:
        length = 1500 + 500 * (w - 1)
        segments.append((t_ms / 1000, (t_ms + length) / 1000))
        seg_spk.append(spk)
        t_ms += length + int(rng.integers(200, 1001))
    timeline = build_timeline(segments, session_id)
    drawn = np.array([seg_spk[sub.parent] for sub in timeline.subsegments])
    noise = rng.standard_normal((len(drawn), dim)) * (noise_sigma / math.sqrt(dim))
    matrix = centroids[drawn] + noise
    labels = perm[drawn]
    reference = [
        RttmRecord(session_id, s, round(e - s, 3), speakers[perm[spk]])
        for (s, e), spk in zip(segments, seg_spk)
    ]
    return SyntheticCorpus(
        EmbeddingSet(session_id, matrix), timeline, reference, labels, speakers, centroids
    )
