"""Synthetic multi-subject ECG-like cohorts, record I/O and positive-pair samplers.

Each subject has static factors (heart rate, beat morphology, baseline
wander, noise level) fixed for its whole recording, and a dynamic event
schedule: contiguous runs of segments in which an AFib-like state raises
inter-beat irregularity, drops the P wave and adds fibrillatory ripple.
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .config import DataSpec
from .errors import (
    BadMagicError,
    ChecksumError,
    ConfigError,
    DataError,
    TruncatedFileError,
    VersionMismatchError,
)

NORMAL, EVENT = 0, 1
MAGIC = b"DEBS"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Segment:
    subject_id: int
    segment_index: int
    samples: np.ndarray
    event_label: int


@dataclass
class SubjectRecord:
    subject_id: int
    samples: np.ndarray  # [n_segments, segment_len] float32
    labels: np.ndarray  # [n_segments] uint8
    factors: dict[str, Any] = field(default_factory=dict)
    beat_times: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def n_segments(self) -> int:
        return len(self.labels)

    @property
    def segments(self) -> Iterator[Segment]:
        for k in range(self.n_segments):
            yield Segment(self.subject_id, k, self.samples[k], int(self.labels[k]))

    def __eq__(self, other):
        if not isinstance(other, SubjectRecord):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and np.array_equal(self.samples, other.samples)
            and np.array_equal(self.labels, other.labels)
            and self.factors == other.factors
        )


@dataclass
class Dataset:
    subjects: list[SubjectRecord]
    sampling_rate: int = 125
    segment_len: int = 1000

    def __post_init__(self):
        self._normalized: list[np.ndarray] | None = None

    @property
    def segment_seconds(self) -> float:
        return self.segment_len / self.sampling_rate

    @property
    def n_segments(self) -> int:
        return sum(s.n_segments for s in self.subjects)

    def normalized(self) -> list[np.ndarray]:
        """Per-segment z-scored samples, one array per subject (cached)."""
        if self._normalized is None:
            self._normalized = [normalize_segments(s.samples) for s in self.subjects]
        return self._normalized

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(normalized samples, subject ids, segment indices, labels)`` in iteration order."""
        if not self.subjects:
            return (np.zeros((0, self.segment_len), np.float32), *(np.zeros(0, np.int64) for _ in range(3)))
        x = np.concatenate(self.normalized())
        sid = np.concatenate([np.full(s.n_segments, s.subject_id) for s in self.subjects])
        idx = np.concatenate([np.arange(s.n_segments) for s in self.subjects])
        lab = np.concatenate([s.labels.astype(np.int64) for s in self.subjects])
        return x, sid, idx, lab

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.sampling_rate == other.sampling_rate
            and self.segment_len == other.segment_len
            and self.subjects == other.subjects
        )


def normalize_segments(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    return ((x - mean) / np.maximum(std, 1e-6)).astype(np.float32)


# ---------------------------------------------------------------------------
# generation


def _event_schedule(rng: np.random.Generator, n_segments: int, min_block: int, max_block: int) -> list[list[int]]:
    events = []
    pos = 0
    in_event = bool(rng.random() < 0.5)
    while pos < n_segments:
        length = int(rng.integers(min_block, max_block + 1))
        end = min(pos + length, n_segments)
        if in_event:
            events.append([pos, end])
        pos = end
        in_event = not in_event
    return events


def draw_factors(rng: np.random.Generator, spec: DataSpec) -> dict[str, Any]:
    static = {
        "heart_rate": float(rng.uniform(55, 95)),
        "rr_cv": float(rng.uniform(0.02, 0.04)),
        "amp_p": float(rng.uniform(0.12, 0.25)),
        "amp_q": float(-rng.uniform(0.05, 0.2)),
        "amp_r": float(rng.uniform(0.8, 1.6)),
        "amp_s": float(-rng.uniform(0.1, 0.45)),
        "amp_t": float(rng.uniform(0.15, 0.45) * (-1.0 if rng.random() < 0.25 else 1.0)),
        "width_p": float(rng.uniform(0.02, 0.035)),
        "width_qrs": float(rng.uniform(0.008, 0.016)),
        "width_t": float(rng.uniform(0.04, 0.07)),
        "offset_p": float(rng.uniform(0.14, 0.2)),
        "offset_t": float(rng.uniform(0.22, 0.32)),
        "wander_amp": float(rng.uniform(0.05, 0.3) * spec.wander_scale),
        "wander_freq": float(rng.uniform(0.15, 0.35)),
        "noise": float(rng.uniform(0.02, 0.05)),
    }
    has_events = spec.event_prob > 0 and rng.random() < spec.event_prob
    dynamic = {
        "events": _event_schedule(rng, spec.segments_per_subject, spec.min_block, spec.max_block) if has_events else [],
        "event_rr_cv": float(rng.uniform(0.12, 0.22) * spec.event_strength),
        "event_rate_gain": float(1.0 + rng.uniform(0.05, 0.25) * spec.event_strength),
        "event_p_scale": float(max(0.0, 1.0 - spec.event_strength)),
        "fib_amp": float(rng.uniform(0.05, 0.12) * spec.event_strength),
        "fib_freq": float(rng.uniform(5.0, 7.0)),
    }
    return {"static": static, "dynamic": dynamic}


def _segment_state(n_segments: int, events: list[list[int]]) -> np.ndarray:
    labels = np.zeros(n_segments, dtype=np.uint8)
    for start, end in events:
        labels[start:end] = EVENT
    return labels


def synthesize(rng: np.random.Generator, factors: dict[str, Any], n_segments: int, fs: int, seg_len: int):
    """Render a continuous signal from factors. Returns ``(samples [n, seg_len], labels, beat_times)``."""
    st, dy = factors["static"], factors["dynamic"]
    labels = _segment_state(n_segments, dy["events"])
    seg_sec = seg_len / fs
    duration = n_segments * seg_sec
    n = n_segments * seg_len
    t = np.arange(n) / fs

    rr0 = 60.0 / st["heart_rate"]
    beats, event_beat = [], []
    tb = float(rng.uniform(0, rr0))
    while tb < duration + 1.0:
        seg = min(int(tb // seg_sec), n_segments - 1)
        in_event = labels[seg] == EVENT
        if in_event:
            rr = rr0 / dy["event_rate_gain"] * (1.0 + dy["event_rr_cv"] * rng.standard_normal())
        else:
            rsa = 1.0 + 0.02 * np.sin(2 * np.pi * 0.25 * tb)
            rr = rr0 * rsa * (1.0 + st["rr_cv"] * rng.standard_normal())
        beats.append(tb)
        event_beat.append(in_event)
        tb += float(np.clip(rr, 0.3, 2.0))
    beats = np.asarray(beats)
    event_beat = np.asarray(event_beat)

    x = np.zeros(n)
    waves = [
        ("amp_q", -0.03, "width_qrs"),
        ("amp_r", 0.0, "width_qrs"),
        ("amp_s", 0.03, "width_qrs"),
        ("amp_t", st["offset_t"], "width_t"),
    ]
    for b, ev in zip(beats, event_beat):
        comps = list(waves)
        p_amp = st["amp_p"] * (dy["event_p_scale"] if ev else 1.0)
        for amp_key, off, w_key in comps:
            _add_gaussian(x, fs, b + off, st[amp_key], st[w_key])
        if p_amp:
            _add_gaussian(x, fs, b - st["offset_p"], p_amp, st["width_p"])

    x += st["wander_amp"] * np.sin(2 * np.pi * st["wander_freq"] * t + rng.uniform(0, 2 * np.pi))
    if dy["events"] and dy["fib_amp"]:
        ev_mask = np.repeat(labels, seg_len).astype(float)
        x += ev_mask * dy["fib_amp"] * np.sin(2 * np.pi * dy["fib_freq"] * t + rng.uniform(0, 2 * np.pi))
    x += st["noise"] * rng.standard_normal(n)
    return x.reshape(n_segments, seg_len).astype(np.float32), labels, beats


def _add_gaussian(x: np.ndarray, fs: int, center: float, amp: float, width: float) -> None:
    lo = max(int((center - 4 * width) * fs), 0)
    hi = min(int((center + 4 * width) * fs) + 2, len(x))
    if hi <= lo:
        return
    tt = np.arange(lo, hi) / fs
    x[lo:hi] += amp * np.exp(-0.5 * ((tt - center) / width) ** 2)


def generate_subject(seed, spec: DataSpec, subject_id: int = 0) -> SubjectRecord:
    """Deterministic in ``(seed, spec, subject_id)``."""
    rng = np.random.default_rng(seed)
    factors = draw_factors(rng, spec)
    samples, labels, beats = synthesize(rng, factors, spec.segments_per_subject, spec.sampling_rate, spec.segment_len)
    return SubjectRecord(subject_id, samples, labels, factors, beat_times=beats)


def generate_dataset(spec: DataSpec, first_subject_id: int = 0) -> Dataset:
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_subjects)
    subjects = [generate_subject(s, spec, first_subject_id + k) for k, s in enumerate(seeds)]
    return Dataset(subjects, spec.sampling_rate, spec.segment_len)


def segment_rr_cv(record: SubjectRecord, sampling_rate: int) -> np.ndarray:
    """Coefficient of variation of inter-beat intervals per segment, from ground-truth beat times."""
    if record.beat_times is None:
        raise DataError("record carries no ground-truth beat times")
    seg_sec = record.samples.shape[1] / sampling_rate
    beats = record.beat_times
    rr = np.diff(beats)
    seg_of = np.minimum((beats[1:] // seg_sec).astype(int), record.n_segments - 1)
    out = np.zeros(record.n_segments)
    for k in range(record.n_segments):
        r = rr[seg_of == k]
        out[k] = r.std() / r.mean() if len(r) > 1 else 0.0
    return out


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class PairBatch:
    x1: np.ndarray
    x2: np.ndarray
    subject1: np.ndarray
    subject2: np.ndarray
    index1: np.ndarray
    index2: np.ndarray


@dataclass(frozen=True)
class TripletBatch:
    x_prev: np.ndarray
    x_mid: np.ndarray
    x_next: np.ndarray
    i: np.ndarray
    j: np.ndarray
    subject: np.ndarray
    t: np.ndarray


def sample_pair(dataset: Dataset, rng: np.random.Generator, window_segments: int | None = None):
    """Two distinct segments of one uniformly chosen subject.

    Returns ``(subject position, index1, index2)``. Subjects with fewer than
    two segments are skipped by resampling. ``window_segments`` optionally
    caps the separation.
    """
    eligible = [k for k, s in enumerate(dataset.subjects) if s.n_segments >= 2]
    if not eligible:
        raise ConfigError("no subject has two or more segments")
    while True:
        k = int(rng.integers(len(dataset.subjects)))
        n = dataset.subjects[k].n_segments
        if n < 2:
            continue
        a, b = (int(v) for v in rng.choice(n, size=2, replace=False))
        if window_segments is not None and abs(a - b) > window_segments:
            continue
        return k, a, b


def _simplex_pairs(window: int) -> np.ndarray:
    return np.array([(i, j) for i in range(1, window) for j in range(1, window - i + 1)])


def sample_triplet(dataset: Dataset, window_segments: int, rng: np.random.Generator, _eligible=None, _simplex=None):
    """``(subject position, t, i, j)`` with ``1 <= i, j`` and ``i + j <= window_segments``.

    ``(i, j)`` is uniform over the constraint simplex and ``t`` uniform over
    positions where the whole triplet fits; draws that do not fit are
    rejected.
    """
    eligible = _eligible if _eligible is not None else triplet_eligible(dataset, window_segments)
    simplex = _simplex if _simplex is not None else _simplex_pairs(window_segments)
    while True:
        k = eligible[int(rng.integers(len(eligible)))]
        n = dataset.subjects[k].n_segments
        i, j = simplex[int(rng.integers(len(simplex)))]
        t = int(rng.integers(1, n - 1))
        if t - i >= 0 and t + j < n:
            return k, t, int(i), int(j)


def triplet_eligible(dataset: Dataset, window_segments: int) -> list[int]:
    eligible = [k for k, s in enumerate(dataset.subjects) if s.n_segments >= window_segments + 1]
    if not eligible:
        raise ConfigError(
            f"no subject has a run of {window_segments + 1} segments; triplet sampling impossible"
        )
    return eligible


class Sampler:
    """Batch sampler over a dataset with its own RNG stream."""

    def __init__(self, dataset: Dataset, window_segments: int, seed: int = 0, constrain_pairs: bool = False):
        self.dataset = dataset
        self.window = window_segments
        self.constrain_pairs = constrain_pairs
        self.rng = np.random.default_rng(seed)
        self._norm = dataset.normalized()
        self._ids = np.array([s.subject_id for s in dataset.subjects])
        self._simplex = _simplex_pairs(window_segments)
        self._eligible: list[int] | None = None

    def check_triplets(self) -> None:
        self._eligible = triplet_eligible(self.dataset, self.window)

    def pairs(self, batch: int) -> PairBatch:
        w = self.window if self.constrain_pairs else None
        draws = [sample_pair(self.dataset, self.rng, w) for _ in range(batch)]
        k, a, b = (np.array(v) for v in zip(*draws))
        x1 = np.stack([self._norm[s][i] for s, i in zip(k, a)])
        x2 = np.stack([self._norm[s][i] for s, i in zip(k, b)])
        return PairBatch(x1, x2, self._ids[k], self._ids[k], a, b)

    def triplets(self, batch: int) -> TripletBatch:
        if self._eligible is None:
            self.check_triplets()
        draws = [sample_triplet(self.dataset, self.window, self.rng, self._eligible, self._simplex) for _ in range(batch)]
        k, t, i, j = (np.array(v) for v in zip(*draws))
        pick = lambda off: np.stack([self._norm[s][p] for s, p in zip(k, off)])
        return TripletBatch(pick(t - i), pick(t), pick(t + j), i, j, self._ids[k], t)

    def get_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state


# ---------------------------------------------------------------------------
# record file format

_HEADER = struct.Struct("<4sHIII")
_SUBJECT = struct.Struct("<III")
_SEGMENT_HEAD = struct.Struct("<IB")


def encode_records(dataset: Dataset) -> bytes:
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, dataset.sampling_rate, dataset.segment_len, len(dataset.subjects))]
    for s in dataset.subjects:
        if s.samples.shape[1:] != (dataset.segment_len,):
            raise DataError(f"subject {s.subject_id}: segment length {s.samples.shape[1:]} != {dataset.segment_len}")
        block = json.dumps(s.factors, sort_keys=True).encode()
        parts.append(struct.pack("<II", s.subject_id, s.n_segments))
        parts.append(struct.pack("<I", len(block)) + block)
        samples = np.ascontiguousarray(s.samples, dtype="<f4")
        for k in range(s.n_segments):
            parts.append(_SEGMENT_HEAD.pack(k, int(s.labels[k])))
            parts.append(samples[k].tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode_records(blob: bytes) -> Dataset:
    if len(blob) < 4:
        raise TruncatedFileError("file shorter than the magic number")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}")
    if len(blob) < _HEADER.size:
        raise TruncatedFileError("header truncated")
    _, version, fs, seg_len, n_subjects = _HEADER.unpack_from(blob, 0)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"record format version {version}, expected {FORMAT_VERSION}")

    end = len(blob) - 4

    def need(pos: int, size: int) -> None:
        if pos + size > end:
            raise TruncatedFileError(f"record truncated at byte {pos}")

    # walk the layout first so truncation is reported as such, then verify the checksum
    pos = _HEADER.size
    layout = []
    for _ in range(n_subjects):
        need(pos, 12)
        sid, n_seg, block_len = _SUBJECT.unpack_from(blob, pos)
        pos += 12
        need(pos, block_len)
        block_at = pos
        pos += block_len
        seg_bytes = _SEGMENT_HEAD.size + 4 * seg_len
        need(pos, n_seg * seg_bytes)
        layout.append((sid, n_seg, block_at, block_len, pos))
        pos += n_seg * seg_bytes
    if end < pos or len(blob) < 4 + _HEADER.size:
        raise TruncatedFileError("checksum missing")
    if pos != end:
        raise DataError(f"{end - pos} unexpected trailing bytes")
    (stored,) = struct.unpack_from("<I", blob, end)
    if zlib.crc32(blob[:end]) != stored:
        raise ChecksumError("CRC32 mismatch")

    subjects = []
    seg_dtype = np.dtype([("index", "<u4"), ("label", "u1"), ("samples", "<f4", (seg_len,))])
    for sid, n_seg, block_at, block_len, seg_at in layout:
        factors = json.loads(blob[block_at : block_at + block_len].decode())
        rows = np.frombuffer(blob, dtype=seg_dtype, count=n_seg, offset=seg_at)
        if not np.array_equal(rows["index"], np.arange(n_seg)):
            raise DataError(f"subject {sid}: segment indices not contiguous from 0")
        subjects.append(SubjectRecord(sid, rows["samples"].astype(np.float32), rows["label"].astype(np.uint8), factors))
    return Dataset(subjects, fs, seg_len)


def write_records(dataset: Dataset, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_records(dataset))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def load_records(path) -> Dataset:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return decode_records(blob)


def read_csv(path, sampling_rate: int = 125) -> Dataset:
    """Import rows of ``subject_id, segment_index, label, s0..sN``."""
    rows: dict[int, list[tuple[int, int, list[float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["subject_id", "segment_index", "label"]:
            raise DataError("CSV must start with subject_id,segment_index,label,s0,...")
        seg_len = len(header) - 3
        for line in reader:
            if len(line) != seg_len + 3:
                raise DataError(f"CSV row has {len(line)} fields, expected {seg_len + 3}")
            label = line[2].strip()
            label = {"normal": NORMAL, "event": EVENT}.get(label, None) if not label.isdigit() else int(label)
            if label not in (NORMAL, EVENT):
                raise DataError(f"bad label {line[2]!r}")
            rows.setdefault(int(line[0]), []).append((int(line[1]), label, [float(v) for v in line[3:]]))
    subjects = []
    for sid in sorted(rows):
        segs = sorted(rows[sid])
        if [s[0] for s in segs] != list(range(len(segs))):
            raise DataError(f"subject {sid}: segment indices not contiguous from 0")
        samples = np.array([s[2] for s in segs], dtype=np.float32)
        labels = np.array([s[1] for s in segs], dtype=np.uint8)
        subjects.append(SubjectRecord(sid, samples, labels))
    return Dataset(subjects, sampling_rate, seg_len if subjects else 1000)


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "segment_index", "label"] + [f"s{k}" for k in range(dataset.segment_len)])
        for s in dataset.subjects:
            for k in range(s.n_segments):
                w.writerow([s.subject_id, k, int(s.labels[k])] + [repr(float(v)) for v in s.samples[k]])
