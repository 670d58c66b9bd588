"""On-disk window datasets shared by ``synth`` and ``ingest``.

Layout::

    <root>/<split>/<CLASS>.csv        concatenated 720-sample windows, one value per line
    <root>/<split>/<CLASS>.ann.csv    index,label at each window center (i * 720 + 360)
    <root>/<split>/<CLASS>.truth.csv  window_id,start,end (synthetic data only)

Window ``i`` of class ``C`` has id ``C_iiii``. Reading a split goes through
the regular CSV record reader and window extractor, so a stored dataset is
consumed exactly like any other annotated 360 Hz record.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .signal_io import (
    WINDOW_FS,
    WINDOW_HALF,
    WINDOW_LENGTH,
    BeatAnnotation,
    RhythmClass,
    SignalIOError,
    Window,
    extract_windows,
    read_record,
    write_csv_annotations,
    write_csv_signal,
)
from .synth import GroundTruth

SPLITS = ("train", "test")


@dataclass
class Split:
    windows: list[Window] = field(default_factory=list)
    ids: list[str] = field(default_factory=list)
    truths: dict[str, GroundTruth] = field(default_factory=dict)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.windows:
            return np.zeros((0, WINDOW_LENGTH)), np.zeros(0, dtype=np.int64)
        return np.stack([w.samples for w in self.windows]), np.array([int(w.label) for w in self.windows])


def window_id(label: RhythmClass, i: int) -> str:
    return f"{label.name}_{i:04d}"


def write_split(
    directory: str | Path,
    label: RhythmClass,
    segments: Sequence[np.ndarray],
    truths: Sequence[GroundTruth] | None = None,
) -> list[Path]:
    """Write one class of a split; returns the files written."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    base = d / label.name
    sig = np.concatenate([np.asarray(s, dtype=np.float64) for s in segments]) if segments else np.zeros(0)
    if sig.size != len(segments) * WINDOW_LENGTH:
        raise ValueError(f"every segment must have {WINDOW_LENGTH} samples")
    write_csv_signal(base.with_suffix(".csv"), sig)
    beats = [BeatAnnotation(i * WINDOW_LENGTH + WINDOW_HALF, label) for i in range(len(segments))]
    ann = d / f"{label.name}.ann.csv"
    write_csv_annotations(ann, beats)
    written = [base.with_suffix(".csv"), ann]
    if truths is not None:
        tp = d / f"{label.name}.truth.csv"
        with open(tp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window_id", "start", "end"])
            for i, t in enumerate(truths):
                for a, b in t.intervals:
                    w.writerow([window_id(label, i), a, b])
        written.append(tp)
    return written


def read_truths(path: Path) -> dict[str, GroundTruth]:
    out: dict[str, GroundTruth] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["window_id"], GroundTruth()).intervals.append((int(row["start"]), int(row["end"])))
    return out


def read_split(directory: str | Path) -> Split:
    """Load every class file in a split directory, in class-index order."""
    d = Path(directory)
    if not d.is_dir():
        raise SignalIOError(f"dataset split {d} not found")
    split = Split()
    for label in RhythmClass:
        base = d / label.name
        if not base.with_suffix(".csv").exists():
            continue
        record = read_record(base, fs=WINDOW_FS)
        ext = extract_windows(record)
        if ext.skipped:
            raise SignalIOError(f"{base}: {ext.skipped} annotations do not describe whole windows")
        for i, w in enumerate(ext.windows):
            if w.label is not label:
                raise SignalIOError(f"{base}: window {i} is labeled {w.label.name}")
            split.windows.append(w)
            split.ids.append(window_id(label, i))
        truth_path = d / f"{label.name}.truth.csv"
        if truth_path.exists():
            split.truths.update(read_truths(truth_path))
    return split
