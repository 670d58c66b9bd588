"""PhysioNet-style record ingestion and windowing.

Supports text headers, format 212 and 16 signal files, MIT annotation
streams, and a plain CSV path (one mV value per line plus ``index,label``
annotations). Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

WINDOW_FS = 360
WINDOW_HALF = 360
WINDOW_LENGTH = 2 * WINDOW_HALF


class RhythmClass(enum.IntEnum):
    N = 0
    PVC = 1
    PAC = 2
    AFIB = 3
    SVTA = 4
    SBR = 5
    LBBB = 6
    RBBB = 7

    @classmethod
    def parse(cls, text: str | int) -> "RhythmClass":
        if isinstance(text, (int, np.integer)):
            return cls(int(text))
        key = str(text).strip().upper()
        if key.isdigit():
            return cls(int(key))
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown rhythm class {text!r}") from None


N_CLASSES = len(RhythmClass)

# Rhythm counts per source database (MITDB, LTAFDB, LTDB); None = not present.
CLASS_INVENTORY: dict[RhythmClass, tuple[int | None, int | None, int | None]] = {
    RhythmClass.N: (75013, 10756, 517402),
    RhythmClass.PVC: (7121, 1318, 5137),
    RhythmClass.PAC: (2542, 14914, None),
    RhythmClass.AFIB: (102, 7241, None),
    RhythmClass.SVTA: (22, 3265, None),
    RhythmClass.SBR: (None, 11323, None),
    RhythmClass.LBBB: (6580, None, None),
    RhythmClass.RBBB: (5400, None, None),
}


class SignalIOError(ValueError):
    pass


class HeaderParseError(SignalIOError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"header line {line_no}: {message}")
        self.line_no = line_no


class UnsupportedFormatError(SignalIOError):
    pass


class TruncatedInputError(SignalIOError):
    pass


class UnexpectedEOFError(SignalIOError):
    pass


class InsufficientDataError(SignalIOError):
    def __init__(self, label: RhythmClass, available: int, required: int):
        super().__init__(f"class {label.name}: {available} windows available, {required} required")
        self.label = label


SUPPORTED_FORMATS = ("212", "16", "csv")


@dataclass
class RecordHeader:
    record_name: str
    n_signals: int
    fs: float
    n_samples: int
    gain: list[float]
    baseline: list[int]
    format_code: str
    file_names: list[str] = field(default_factory=list)
    signal_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.n_signals < 1:
            raise SignalIOError("n_signals must be >= 1")
        if self.fs <= 0:
            raise SignalIOError(f"sampling frequency must be positive, got {self.fs}")
        if any(g <= 0 for g in self.gain):
            raise SignalIOError(f"gains must be positive, got {self.gain}")


@dataclass(frozen=True)
class BeatAnnotation:
    sample_index: int
    label: RhythmClass


@dataclass
class EcgRecord:
    header: RecordHeader
    samples: np.ndarray  # [n_signals, n_samples], mV
    annotations: list[BeatAnnotation] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        h = self.header
        if self.samples.shape != (h.n_signals, h.n_samples):
            raise SignalIOError(
                f"samples shape {self.samples.shape} != ({h.n_signals}, {h.n_samples}) declared in header"
            )
        idx = [a.sample_index for a in self.annotations]
        if any(b < a for a, b in zip(idx, idx[1:])):
            raise SignalIOError("annotations must be sorted by sample index")
        if idx and (idx[0] < 0 or idx[-1] >= h.n_samples):
            raise SignalIOError("annotation index outside the record")


@dataclass
class Window:
    samples: np.ndarray
    label: RhythmClass
    record_name: str
    center: int

    def __post_init__(self):
        if self.samples.shape != (WINDOW_LENGTH,):
            raise SignalIOError(f"window must have {WINDOW_LENGTH} samples, got {self.samples.shape}")


# ---------------------------------------------------------------------------
# header


def _field(parts: list[str], i: int, line_no: int, what: str) -> str:
    if i >= len(parts):
        raise HeaderParseError(line_no, f"missing {what}")
    return parts[i]


def _number(text: str, line_no: int, what: str, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise HeaderParseError(line_no, f"bad {what} {text!r}") from None


def parse_header(data: bytes | str) -> RecordHeader:
    text = data.decode("ascii", errors="replace") if isinstance(data, (bytes, bytearray)) else data
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise HeaderParseError(1, "empty header")

    line_no, record_line = lines[0]
    parts = record_line.split()
    name = _field(parts, 0, line_no, "record name").split("/")[0]
    n_signals = _number(_field(parts, 1, line_no, "signal count"), line_no, "signal count", int)
    fs_text = parts[2] if len(parts) > 2 else "250"  # WFDB default frequency
    fs = _number(fs_text.split("/")[0].split("(")[0], line_no, "sampling frequency")
    n_samples = _number(parts[3], line_no, "sample count", int) if len(parts) > 3 else 0
    if n_signals < 1:
        raise HeaderParseError(line_no, f"signal count must be >= 1, got {n_signals}")
    if fs <= 0:
        raise HeaderParseError(line_no, f"sampling frequency must be positive, got {fs_text}")

    sig_lines = lines[1:1 + n_signals]
    if len(sig_lines) < n_signals:
        raise HeaderParseError(lines[-1][0], f"expected {n_signals} signal lines, found {len(sig_lines)}")

    gains, baselines, formats, files, names = [], [], [], [], []
    for ln_no, line in sig_lines:
        sp = line.split()
        files.append(_field(sp, 0, ln_no, "file name"))
        fmt = _field(sp, 1, ln_no, "format").split("x")[0].split(":")[0].split("+")[0]
        if fmt not in SUPPORTED_FORMATS:
            raise UnsupportedFormatError(f"header line {ln_no}: unsupported signal format {fmt!r}")
        formats.append(fmt)
        gain_text = sp[2] if len(sp) > 2 else "200"
        base_in_gain = None
        g = gain_text.split("/")[0]
        if "(" in g:
            g, rest = g.split("(", 1)
            base_in_gain = _number(rest.rstrip(")"), ln_no, "baseline", int)
        gain = _number(g, ln_no, "gain")
        if gain == 0:
            gain = 200.0  # WFDB: 0 means uncalibrated, use the default
        if gain < 0:
            raise HeaderParseError(ln_no, f"gain must be positive, got {g}")
        adc_zero = _number(sp[4], ln_no, "ADC zero", int) if len(sp) > 4 else 0
        gains.append(gain)
        baselines.append(base_in_gain if base_in_gain is not None else adc_zero)
        names.append(" ".join(sp[8:]) if len(sp) > 8 else f"sig{len(names)}")

    if len(set(formats)) != 1:
        raise UnsupportedFormatError("mixed signal formats within one record are not supported")
    return RecordHeader(name, n_signals, fs, n_samples, gains, baselines, formats[0], files, names)


# ---------------------------------------------------------------------------
# signal formats


def _to_mv(raw: np.ndarray, n_signals: int, gain: Sequence[float], baseline: Sequence[int]) -> np.ndarray:
    frames = raw.reshape(-1, n_signals).T.astype(np.float64)
    g = np.asarray(gain, dtype=np.float64)[:, None]
    b = np.asarray(baseline, dtype=np.float64)[:, None]
    return (frames - b) / g


def unpack_format212(data: bytes) -> np.ndarray:
    """Raw sign-extended 12-bit samples in file order."""
    if len(data) % 3:
        raise TruncatedInputError(f"format 212 needs whole 3-byte groups, got {len(data)} bytes")
    b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
    s1 = ((b[:, 1] & 0x0F) << 8) | b[:, 0]
    s2 = ((b[:, 1] >> 4) << 8) | b[:, 2]
    raw = np.stack([s1, s2], axis=1).reshape(-1)
    raw[raw >= 2048] -= 4096
    return raw


def pack_format212(raw: np.ndarray) -> bytes:
    """Inverse of :func:`unpack_format212`; an odd count is zero-padded."""
    v = np.asarray(raw, dtype=np.int64).reshape(-1)
    if v.size and (v.min() < -2048 or v.max() > 2047):
        raise ValueError("format 212 holds 12-bit values in [-2048, 2047]")
    if v.size % 2:
        v = np.append(v, 0)
    u = (v & 0xFFF).reshape(-1, 2)
    out = np.empty((u.shape[0], 3), dtype=np.uint8)
    out[:, 0] = u[:, 0] & 0xFF
    out[:, 1] = ((u[:, 0] >> 8) & 0x0F) | ((u[:, 1] >> 8) << 4)
    out[:, 2] = u[:, 1] & 0xFF
    return out.tobytes()


def decode_format212(
    data: bytes,
    n_signals: int,
    gain: Sequence[float],
    baseline: Sequence[int],
    n_samples: int | None = None,
) -> np.ndarray:
    """Decode interleaved format-212 frames into ``[n_signals, n]`` mV.

    When the total sample count is odd the writer pads the last 3-byte group
    with a zero sample, which is dropped here.
    """
    raw = unpack_format212(data)
    if n_samples is not None:
        need = n_samples * n_signals
        if raw.size < need:
            raise TruncatedInputError(f"format 212: {raw.size} samples decoded, {need} declared")
        raw = raw[:need]
    elif raw.size % n_signals:
        raw = raw[: raw.size - raw.size % n_signals]
    return _to_mv(raw, n_signals, gain, baseline)


def encode_format212(digital: np.ndarray) -> bytes:
    """Interleave ``[n_signals, n]`` raw ADC values and pack them."""
    d = np.atleast_2d(np.asarray(digital))
    return pack_format212(d.T.reshape(-1))


def decode_format16(
    data: bytes,
    n_signals: int,
    gain: Sequence[float],
    baseline: Sequence[int],
    n_samples: int | None = None,
) -> np.ndarray:
    if len(data) % 2:
        raise TruncatedInputError(f"format 16 needs an even byte count, got {len(data)}")
    raw = np.frombuffer(data, dtype="<i2").astype(np.int64)
    if n_samples is not None:
        need = n_samples * n_signals
        if raw.size < need:
            raise TruncatedInputError(f"format 16: {raw.size} samples decoded, {need} declared")
        raw = raw[:need]
    return _to_mv(raw, n_signals, gain, baseline)


# ---------------------------------------------------------------------------
# annotations

# MIT annotation codes
NORMAL, LBBB_BEAT, RBBB_BEAT, PVC_BEAT, APC_BEAT = 1, 2, 3, 5, 8
RHYTHM = 28
SKIP, NUM, SUB, CHAN, AUX = 59, 60, 61, 62, 63

BEAT_CODES = {
    NORMAL: RhythmClass.N,
    LBBB_BEAT: RhythmClass.LBBB,
    RBBB_BEAT: RhythmClass.RBBB,
    PVC_BEAT: RhythmClass.PVC,
    APC_BEAT: RhythmClass.PAC,
}
# rhythm annotations relabel normal beats inside the episode
RHYTHM_LABELS = {"(N": RhythmClass.N, "(AFIB": RhythmClass.AFIB, "(SVTA": RhythmClass.SVTA, "(SBR": RhythmClass.SBR}


class ParsedAnnotations(NamedTuple):
    beats: list[BeatAnnotation]
    dropped: int
    final_index: int


def parse_annotations(data: bytes) -> ParsedAnnotations:
    """Decode an MIT-format annotation stream.

    Each 16-bit little-endian word holds a code in the top 6 bits and a
    10-bit sample interval; intervals accumulate into sample indices and a
    zero word ends the stream. Normal beats take the label of the enclosing
    rhythm episode (AFIB, SVTA, SBR) when one is active.
    """
    if len(data) % 2:
        raise UnexpectedEOFError("annotation stream has an odd byte count")
    words = np.frombuffer(data, dtype="<u2")
    n = len(words)
    beats: list[BeatAnnotation] = []
    dropped = 0
    t = 0
    rhythm = RhythmClass.N
    pending: tuple[int, int] | None = None  # (code, index) of the last annotation, awaiting AUX

    def flush():
        nonlocal dropped
        if pending is None:
            return
        code, idx = pending
        label = BEAT_CODES.get(code)
        if label is None:
            dropped += 1
            return
        if label is RhythmClass.N:
            label = rhythm
        beats.append(BeatAnnotation(idx, label))

    i = 0
    while True:
        if i >= n:
            raise UnexpectedEOFError("annotation stream ended without a terminator")
        w = int(words[i])
        i += 1
        if w == 0:
            break
        code, interval = w >> 10, w & 0x3FF
        if code == SKIP:
            if i + 2 > n:
                raise UnexpectedEOFError("SKIP without its 32-bit interval")
            hi, lo = int(words[i]), int(words[i + 1])
            i += 2
            skip = (hi << 16) | lo
            if skip >= 1 << 31:
                skip -= 1 << 32
            t += skip
        elif code == AUX:
            nwords = (interval + 1) // 2
            if i + nwords > n:
                raise UnexpectedEOFError("AUX string runs past the end of the stream")
            text = words[i:i + nwords].tobytes()[:interval].decode("ascii", errors="replace").rstrip("\x00")
            i += nwords
            if pending is not None and pending[0] == RHYTHM:
                rhythm = RHYTHM_LABELS.get(text.strip(), rhythm)
        elif code in (NUM, SUB, CHAN):
            pass
        else:
            flush()
            t += interval
            pending = (code, t)
    flush()
    return ParsedAnnotations(beats, dropped, t)


_REVERSE_CODES = {RhythmClass.N: NORMAL, RhythmClass.LBBB: LBBB_BEAT, RhythmClass.RBBB: RBBB_BEAT,
                  RhythmClass.PVC: PVC_BEAT, RhythmClass.PAC: APC_BEAT}


def encode_annotations(entries: Sequence[tuple[int, int]]) -> bytes:
    """Write ``(sample_index, code)`` pairs as an MIT annotation stream.

    Intervals wider than 10 bits go through a SKIP word.
    """
    words: list[int] = []
    last = 0
    for idx, code in entries:
        delta = idx - last
        if delta < 0:
            raise ValueError("annotation indices must be non-decreasing")
        words.extend(_encode_delta(delta, code))
        last = idx
    words.append(0)
    return np.asarray(words, dtype="<u2").tobytes()


def encode_beat_annotations(beats: Sequence[BeatAnnotation]) -> bytes:
    """Encode beats with MIT codes.

    AFIB, SVTA and SBR have no beat code; they are written as normal beats
    inside a rhythm episode, which :func:`parse_annotations` maps back.
    """
    words: list[int] = []
    last = 0
    rhythm = RhythmClass.N
    for beat in beats:
        if beat.label in _REVERSE_CODES:
            code = _REVERSE_CODES[beat.label]
            episode = RhythmClass.N if beat.label is RhythmClass.N else rhythm
        else:
            code, episode = NORMAL, beat.label
        delta = beat.sample_index - last
        if delta < 0:
            raise ValueError("annotation indices must be non-decreasing")
        if episode is not rhythm:
            tag = f"({episode.name}".encode()
            words.extend(_encode_delta(delta, RHYTHM))
            words.append((AUX << 10) | len(tag))
            words.extend(np.frombuffer(tag + b"\x00" * (len(tag) % 2), dtype="<u2").tolist())
            delta = 0
            rhythm = episode
        words.extend(_encode_delta(delta, code))
        last = beat.sample_index
    words.append(0)
    return np.asarray(words, dtype="<u2").tobytes()


def _encode_delta(delta: int, code: int) -> list[int]:
    if delta > 0x3FF:
        return [SKIP << 10, (delta >> 16) & 0xFFFF, delta & 0xFFFF, code << 10]
    return [(code << 10) | delta]


# ---------------------------------------------------------------------------
# CSV path


def read_csv_signal(path: str | os.PathLike) -> np.ndarray:
    values = []
    with open(path, newline="") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise SignalIOError(f"{path}:{line_no}: not a number: {line!r}") from None
    return np.asarray(values, dtype=np.float64)


def write_csv_signal(path: str | os.PathLike, samples: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{float(v)!r}\n" for v in np.asarray(samples).reshape(-1))


def read_csv_annotations(path: str | os.PathLike) -> list[BeatAnnotation]:
    beats = []
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].strip().lower() == "index":
                continue
            if len(row) < 2:
                raise SignalIOError(f"{path}:{line_no}: expected index,label")
            beats.append(BeatAnnotation(int(row[0]), RhythmClass.parse(row[1])))
    return beats


def write_csv_annotations(path: str | os.PathLike, beats: Sequence[BeatAnnotation]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label"])
        for b in beats:
            w.writerow([b.sample_index, b.label.name])


def csv_record(name: str, samples: np.ndarray, fs: float, beats: Sequence[BeatAnnotation] = ()) -> EcgRecord:
    s = np.asarray(samples, dtype=np.float64).reshape(1, -1)
    header = RecordHeader(name, 1, fs, s.shape[1], [1.0], [0], "csv", [f"{name}.csv"], ["ECG"])
    return EcgRecord(header, s, sorted(beats, key=lambda b: b.sample_index))


def read_record(path: str | os.PathLike, fs: float | None = None) -> EcgRecord:
    """Load ``<path>.hea`` (+ signal file, + ``.atr``) or ``<path>.csv`` (+ ``.ann.csv``).

    A CSV record without a header needs ``fs``.
    """
    base = Path(path)
    hea = base.with_name(base.name + ".hea")
    if hea.exists():
        header = parse_header(hea.read_bytes())
        if header.format_code == "csv":
            sig = read_csv_signal(base.parent / header.file_names[0]).reshape(1, -1)
            samples = (sig - header.baseline[0]) / header.gain[0]
        else:
            data = (base.parent / header.file_names[0]).read_bytes()
            decode = decode_format212 if header.format_code == "212" else decode_format16
            samples = decode(data, header.n_signals, header.gain, header.baseline, header.n_samples or None)
        if not header.n_samples:
            header.n_samples = samples.shape[1]
        atr = base.with_name(base.name + ".atr")
        beats = parse_annotations(atr.read_bytes()).beats if atr.exists() else []
        beats = [b for b in beats if b.sample_index < header.n_samples]
        return EcgRecord(header, samples, beats)

    sig_path = base.with_name(base.name + ".csv")
    if not sig_path.exists():
        raise FileNotFoundError(f"no header or CSV signal for record {base}")
    if fs is None:
        raise SignalIOError(f"CSV record {base} needs an explicit sampling frequency")
    ann_path = base.with_name(base.name + ".ann.csv")
    beats = read_csv_annotations(ann_path) if ann_path.exists() else []
    return csv_record(base.name, read_csv_signal(sig_path), fs, beats)


def select_lead(record: EcgRecord, lead: str | int = 0) -> EcgRecord:
    """Keep a single channel, by index or by signal description (e.g. ``"MLII"``)."""
    h = record.header
    if isinstance(lead, str):
        if lead not in h.signal_names:
            raise SignalIOError(f"record {h.record_name} has no lead {lead!r} (has {h.signal_names})")
        lead = h.signal_names.index(lead)
    header = RecordHeader(
        h.record_name, 1, h.fs, h.n_samples, [h.gain[lead]], [h.baseline[lead]], h.format_code,
        h.file_names[lead:lead + 1], h.signal_names[lead:lead + 1],
    )
    return EcgRecord(header, record.samples[lead:lead + 1], list(record.annotations))


# ---------------------------------------------------------------------------
# resampling, windowing, splitting


def resample_linear(record: EcgRecord, target_fs: float) -> EcgRecord:
    """Linear resampling with the first and last samples aligned.

    Annotation indices are rescaled by the same map and rounded.
    """
    if target_fs <= 0:
        raise ValueError("target_fs must be positive")
    h = record.header
    if target_fs == h.fs:
        return record
    n = h.n_samples
    n_out = max(int(round(n * target_fs / h.fs)), 1)
    scale = (n - 1) / (n_out - 1) if n_out > 1 and n > 1 else 0.0
    pos = np.arange(n_out) * scale
    src = np.arange(n)
    samples = np.stack([np.interp(pos, src, ch) for ch in record.samples])
    inv = (n_out - 1) / (n - 1) if n > 1 else 0.0
    beats = [BeatAnnotation(min(int(round(a.sample_index * inv)), n_out - 1), a.label) for a in record.annotations]
    header = RecordHeader(
        h.record_name, h.n_signals, float(target_fs), n_out, list(h.gain), list(h.baseline), h.format_code,
        list(h.file_names), list(h.signal_names),
    )
    return EcgRecord(header, samples, beats)


def znormalize(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit (population) standard deviation; constant input maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if sd < 1e-12:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


class Extraction(NamedTuple):
    windows: list[Window]
    skipped: int


def extract_windows(record: EcgRecord, channel: int = 0) -> Extraction:
    """One z-normalized 720-sample window per annotation, centered on it.

    The record must already be at 360 Hz. Annotations closer than one
    second to either end are skipped and counted.
    """
    if record.header.fs != WINDOW_FS:
        raise SignalIOError(f"extract_windows needs a {WINDOW_FS} Hz record, got {record.header.fs}")
    sig = record.samples[channel]
    n = sig.size
    out, skipped = [], 0
    for a in record.annotations:
        c = a.sample_index
        if c - WINDOW_HALF < 0 or c + WINDOW_HALF > n:
            skipped += 1
            continue
        out.append(Window(znormalize(sig[c - WINDOW_HALF:c + WINDOW_HALF]), a.label, record.header.record_name, c))
    return Extraction(out, skipped)


def balance_classes(
    windows: Sequence[Window],
    per_class: int,
    seed: int,
    classes: Sequence[RhythmClass] = tuple(RhythmClass),
) -> tuple[list[Window], list[Window]]:
    """Draw ``per_class`` windows of each class for training; the rest is the test set.

    Windows of classes not listed in ``classes`` are ignored.
    """
    rng = np.random.default_rng(seed)
    by_class: dict[RhythmClass, list[int]] = {c: [] for c in classes}
    for i, w in enumerate(windows):
        if w.label in by_class:
            by_class[w.label].append(i)
    train_idx: list[int] = []
    for c in classes:
        pool = by_class[c]
        if len(pool) < per_class:
            raise InsufficientDataError(c, len(pool), per_class)
        picked = rng.choice(len(pool), size=per_class, replace=False)
        train_idx.extend(pool[j] for j in picked)
    chosen = set(train_idx)
    keep = set().union(*by_class.values())
    train = [windows[i] for i in train_idx]
    test = [windows[i] for i in range(len(windows)) if i in keep and i not in chosen]
    return train, test


def stack_windows(windows: Sequence[Window]) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        return np.zeros((0, WINDOW_LENGTH)), np.zeros(0, dtype=np.int64)
    X = np.stack([w.samples for w in windows])
    y = np.array([int(w.label) for w in windows], dtype=np.int64)
    return X, y
