"""Parametric sum-of-Gaussians ECG with per-class rhythm rules.

Each beat is a handful of Gaussian bumps (P, Q, R, S, T, plus extra R
components for notched or split complexes) placed relative to its R peak.
Records come with ground-truth intervals marking the segment that defines
the rhythm class, so saliency maps can be scored against them.

The class table ``CLASS_SPECS`` is versioned by ``SYNTH_VERSION``; change
the version whenever a parameter changes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .signal_io import (
    WINDOW_FS,
    WINDOW_HALF,
    WINDOW_LENGTH,
    BeatAnnotation,
    EcgRecord,
    RhythmClass,
    Window,
    csv_record,
    znormalize,
)

SYNTH_VERSION = 1
WAVES = ("P", "Q", "R", "S", "T")


@dataclass(frozen=True)
class Wave:
    name: str
    amplitude: float  # mV
    center: float  # s relative to the R peak
    width: float  # s, Gaussian sigma

    def __post_init__(self):
        if self.name not in WAVES:
            raise ValueError(f"unknown wave {self.name!r}")
        if self.width <= 0:
            raise ValueError("wave width must be positive")


@dataclass(frozen=True)
class BeatTemplate:
    components: tuple[Wave, ...]

    def __post_init__(self):
        r = [w for w in self.components if w.name == "R"]
        if r and not any(w.amplitude > 0 for w in r):
            raise ValueError("R amplitude must be positive")

    def support(self, n_sigma: float = 3.0) -> tuple[float, float]:
        lo = min(w.center - n_sigma * w.width for w in self.components)
        hi = max(w.center + n_sigma * w.width for w in self.components)
        return lo, hi

    def qrs_span(self, n_sigma: float = 2.5) -> tuple[float, float]:
        qrs = [w for w in self.components if w.name in ("Q", "R", "S") and w.amplitude != 0]
        return (min(w.center - n_sigma * w.width for w in qrs), max(w.center + n_sigma * w.width for w in qrs))

    def beat_span(self, n_sigma: float = 2.0) -> tuple[float, float]:
        live = [w for w in self.components if w.amplitude != 0]
        return (min(w.center - n_sigma * w.width for w in live), max(w.center + n_sigma * w.width for w in live))


def _bumps(t: np.ndarray, r_times: np.ndarray, template: BeatTemplate, scale: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    for r, s in zip(r_times, scale):
        for w in template.components:
            if w.amplitude == 0:
                continue
            mu = r + w.center
            lo, hi = np.searchsorted(t, [mu - 5 * w.width, mu + 5 * w.width])
            seg = t[lo:hi]
            out[lo:hi] += s * w.amplitude * np.exp(-0.5 * ((seg - mu) / w.width) ** 2)
    return out


R_POSITION = 0.4  # fraction of the RR interval before the R peak in synth_beat


def synth_beat(template: BeatTemplate, fs: float, rr: float) -> np.ndarray:
    """One beat sampled over an RR interval, R peak at ``round(0.4 * rr * fs)``."""
    lo, hi = template.support()
    if hi - lo >= rr or lo < -R_POSITION * rr or hi > (1 - R_POSITION) * rr:
        raise ValueError(f"template support [{lo:.3f}, {hi:.3f}] s does not fit an RR of {rr} s")
    n = int(round(rr * fs))
    r_idx = int(round(R_POSITION * n))
    t = (np.arange(n) - r_idx) / fs
    return _bumps(t, np.zeros(1), template, np.ones(1))


def _tpl(*waves: tuple[str, float, float, float]) -> BeatTemplate:
    return BeatTemplate(tuple(Wave(*w) for w in waves))


NORMAL_BEAT = _tpl(
    ("P", 0.15, -0.20, 0.025),
    ("Q", -0.12, -0.030, 0.010),
    ("R", 1.20, 0.0, 0.012),
    ("S", -0.25, 0.030, 0.010),
    ("T", 0.30, 0.28, 0.050),
)
PVC_BEAT = _tpl(
    ("R", 1.60, 0.0, 0.035),
    ("S", -0.55, 0.085, 0.030),
    ("T", -0.50, 0.33, 0.070),
)
PAC_BEAT = _tpl(
    ("P", -0.14, -0.16, 0.020),
    ("Q", -0.12, -0.030, 0.010),
    ("R", 1.20, 0.0, 0.012),
    ("S", -0.25, 0.030, 0.010),
    ("T", 0.30, 0.26, 0.050),
)
AFIB_BEAT = _tpl(
    ("Q", -0.12, -0.030, 0.010),
    ("R", 1.20, 0.0, 0.012),
    ("S", -0.25, 0.030, 0.010),
    ("T", 0.25, 0.26, 0.050),
)
SVTA_BEAT = _tpl(
    ("P", 0.05, -0.12, 0.020),
    ("Q", -0.10, -0.025, 0.009),
    ("R", 1.10, 0.0, 0.011),
    ("S", -0.25, 0.025, 0.009),
    ("T", 0.22, 0.17, 0.035),
)
LBBB_BEAT = _tpl(
    ("P", 0.15, -0.24, 0.025),
    ("R", 0.85, -0.025, 0.022),
    ("R", 0.80, 0.035, 0.022),
    ("S", -0.10, 0.080, 0.015),
    ("T", -0.35, 0.34, 0.060),
)
RBBB_BEAT = _tpl(
    ("P", 0.15, -0.22, 0.025),
    ("Q", -0.10, -0.030, 0.010),
    ("R", 0.75, 0.0, 0.012),
    ("S", -0.45, 0.035, 0.014),
    ("R", 0.60, 0.075, 0.016),
    ("T", 0.20, 0.32, 0.055),
)


@dataclass(frozen=True)
class RhythmSpec:
    """How to synthesize one rhythm class.

    The heart rate of a record is drawn once from ``N(rate_bpm, rate_spread)``;
    each RR interval then varies by ``rr_jitter`` (fraction of the mean RR).
    Ectopic beats are inserted with ``ectopic_prob`` at ``coupling`` times the
    running RR; ``compensatory`` makes the following pause complete the
    two-beat interval.
    """

    label: RhythmClass
    template: BeatTemplate
    rate_bpm: float
    rate_spread: float = 0.0
    rr_jitter: float = 0.02
    ectopic_template: BeatTemplate | None = None
    ectopic_prob: float = 0.0
    coupling: float = 0.6
    compensatory: bool = True
    fib_amplitude: float = 0.0
    noise_sigma: float = 0.03
    wander_amplitude: float = 0.08
    amplitude_spread: float = 0.15

    def __post_init__(self):
        if not 20 <= self.rate_bpm <= 250:
            raise ValueError(f"rate {self.rate_bpm} bpm outside [20, 250]")
        if self.rate_spread < 0 or self.rr_jitter < 0:
            raise ValueError("rate jitter must be non-negative")


CLASS_SPECS: dict[RhythmClass, RhythmSpec] = {
    RhythmClass.N: RhythmSpec(RhythmClass.N, NORMAL_BEAT, 78, rate_spread=7, rr_jitter=0.02),
    RhythmClass.PVC: RhythmSpec(
        RhythmClass.PVC, NORMAL_BEAT, 75, rate_spread=6, ectopic_template=PVC_BEAT, ectopic_prob=0.1, coupling=0.62
    ),
    RhythmClass.PAC: RhythmSpec(
        RhythmClass.PAC, NORMAL_BEAT, 75, rate_spread=6, ectopic_template=PAC_BEAT, ectopic_prob=0.1,
        coupling=0.62, compensatory=False,
    ),
    RhythmClass.AFIB: RhythmSpec(RhythmClass.AFIB, AFIB_BEAT, 100, rate_spread=10, rr_jitter=0.22, fib_amplitude=0.08),
    RhythmClass.SVTA: RhythmSpec(RhythmClass.SVTA, SVTA_BEAT, 175, rate_spread=10, rr_jitter=0.015),
    RhythmClass.SBR: RhythmSpec(RhythmClass.SBR, NORMAL_BEAT, 45, rate_spread=3, rr_jitter=0.02),
    RhythmClass.LBBB: RhythmSpec(RhythmClass.LBBB, LBBB_BEAT, 75, rate_spread=6),
    RhythmClass.RBBB: RhythmSpec(RhythmClass.RBBB, RBBB_BEAT, 75, rate_spread=6),
}


@dataclass
class GroundTruth:
    """Class-defining segments as half-open ``(start, end)`` sample intervals."""

    intervals: list[tuple[int, int]] = field(default_factory=list)

    def clip(self, start: int, length: int) -> "GroundTruth":
        """Intervals intersected with ``[start, start + length)``, re-based to 0."""
        out = []
        for a, b in self.intervals:
            lo, hi = max(a, start), min(b, start + length)
            if hi > lo:
                out.append((lo - start, hi - start))
        return GroundTruth(out)

    def mask(self, length: int) -> np.ndarray:
        m = np.zeros(length, dtype=bool)
        for a, b in self.intervals:
            m[max(a, 0):max(min(b, length), 0)] = True
        return m


def _merge(intervals: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _beat_times(spec: RhythmSpec, duration: float, rng: np.random.Generator, forced_ectopic: int | None):
    rate = float(np.clip(rng.normal(spec.rate_bpm, spec.rate_spread) if spec.rate_spread else spec.rate_bpm, 20, 250))
    rr = 60.0 / rate
    times, ectopic = [], []
    t = rng.uniform(0.25, 0.75) * rr
    pending_pause = 0.0
    i = 0
    while t < duration:
        times.append(t)
        is_ect = False
        if spec.ectopic_template is not None and 0 < i:
            if forced_ectopic is not None:
                is_ect = i == forced_ectopic
            else:
                is_ect = bool(rng.random() < spec.ectopic_prob) and not (ectopic and ectopic[-1])
        if is_ect:
            times[-1] = times[-2] + spec.coupling * rr
            pending_pause = (2.0 - spec.coupling) * rr if spec.compensatory else rr
        ectopic.append(is_ect)
        step = pending_pause if is_ect else rr * (1.0 + spec.rr_jitter * rng.standard_normal())
        if spec.rr_jitter > 0.1:
            step = rr * rng.uniform(1.0 - 1.6 * spec.rr_jitter, 1.0 + 1.6 * spec.rr_jitter)
        t = times[-1] + max(step, 0.25)
        i += 1
    return np.asarray(times), np.asarray(ectopic, dtype=bool), rr


def generate_record(
    spec: RhythmSpec,
    duration: float,
    seed: int,
    fs: float = WINDOW_FS,
    forced_ectopic: int | None = None,
    name: str | None = None,
) -> tuple[EcgRecord, GroundTruth]:
    """Synthesize a single-lead record in mV with one annotation per R peak.

    ``forced_ectopic`` makes beat ``i`` the only ectopic beat (classes with an
    ectopic template). Identical arguments give bit-identical output.
    """
    if duration < 4:
        raise ValueError("duration must be at least 4 s")
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    r_times, ectopic, _ = _beat_times(spec, duration, rng, forced_ectopic)

    scale = rng.uniform(1 - spec.amplitude_spread, 1 + spec.amplitude_spread, size=r_times.size)
    sig = _bumps(t, r_times[~ectopic], spec.template, scale[~ectopic])
    if ectopic.any():
        sig += _bumps(t, r_times[ectopic], spec.ectopic_template, scale[ectopic])

    if spec.fib_amplitude > 0:
        # f-waves: a few incommensurate 4-8 Hz components with drifting amplitude
        for _ in range(3):
            f = rng.uniform(4.0, 8.0)
            env = 1.0 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi))
            sig += spec.fib_amplitude / 1.5 * env * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    if spec.wander_amplitude > 0:
        sig += spec.wander_amplitude * np.sin(2 * np.pi * rng.uniform(0.15, 0.4) * t + rng.uniform(0, 2 * np.pi))
    if spec.noise_sigma > 0:
        sig += rng.normal(0.0, spec.noise_sigma, size=n)

    idx = np.round(r_times * fs).astype(int)
    keep = idx < n
    beats = []
    for k, is_ect in zip(idx[keep], ectopic[keep]):
        if spec.ectopic_template is not None:
            label = spec.label if is_ect else RhythmClass.N
        else:
            label = spec.label
        beats.append(BeatAnnotation(int(k), label))

    truth = _ground_truth(spec, r_times, ectopic, fs, n)
    record = csv_record(name or f"syn_{spec.label.name}_{seed}", sig, fs, beats)
    return record, truth


def _ground_truth(spec: RhythmSpec, r_times, ectopic, fs: float, n: int) -> GroundTruth:
    def span(r, lo, hi):
        return (max(int(np.floor((r + lo) * fs)), 0), min(int(np.ceil((r + hi) * fs)), n))

    label = spec.label
    if label is RhythmClass.N:
        return GroundTruth([])
    if label in (RhythmClass.SVTA, RhythmClass.SBR):
        return GroundTruth([(0, n)])
    if label in (RhythmClass.PVC, RhythmClass.PAC):
        lo, hi = spec.ectopic_template.beat_span()
        return GroundTruth(_merge([span(r, lo, hi) for r in r_times[ectopic]]))
    if label in (RhythmClass.LBBB, RhythmClass.RBBB):
        lo, hi = spec.template.qrs_span()
        return GroundTruth(_merge([span(r, lo, hi) for r in r_times]))
    # AFIB: the fibrillatory baseline between QRS complexes
    lo, hi = spec.template.qrs_span()
    edges = [0] + [x for r in r_times for x in span(r, lo, hi)] + [n]
    gaps = [(a, b) for a, b in zip(edges[::2], edges[1::2]) if b > a]
    return GroundTruth(gaps)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class SynthWindow:
    window: Window
    raw: np.ndarray  # mV, before normalization
    truth: GroundTruth  # window coordinates


def _seed_for(seed: int, label: RhythmClass, i: int) -> int:
    h = hashlib.sha256(f"{SYNTH_VERSION}:{seed}:{label.name}:{i}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def synth_window(label: RhythmClass, seed: int, spec: RhythmSpec | None = None) -> SynthWindow:
    """Generate a record and cut the 2 s window around its middle class-labeled beat."""
    spec = spec or CLASS_SPECS[label]
    duration = 6.0 if label is not RhythmClass.SBR else 7.0
    forced = None
    if spec.ectopic_template is not None:
        rr = 60.0 / spec.rate_bpm
        forced = max(int(round(duration / 2 / rr)), 1)
    record, truth = generate_record(spec, duration, seed, forced_ectopic=forced, name=f"syn_{label.name}_{seed}")
    n = record.header.n_samples
    mid = n / 2
    candidates = [
        b.sample_index for b in record.annotations
        if b.label is label and WINDOW_HALF <= b.sample_index <= n - WINDOW_HALF
    ]
    if not candidates:
        # rate/jitter pushed the forced beat out of range; retry deterministically
        return synth_window(label, seed + 1, spec)
    c = min(candidates, key=lambda k: (abs(k - mid), k))
    raw = record.samples[0, c - WINDOW_HALF:c + WINDOW_HALF].copy()
    win = Window(znormalize(raw), label, record.header.record_name, c)
    return SynthWindow(win, raw, truth.clip(c - WINDOW_HALF, WINDOW_LENGTH))


def synth_dataset(
    per_class: int,
    seed: int,
    classes: Sequence[RhythmClass] = tuple(RhythmClass),
    specs: dict[RhythmClass, RhythmSpec] | None = None,
) -> list[SynthWindow]:
    """``per_class`` windows for each class, class-major order."""
    specs = specs or CLASS_SPECS
    return [synth_window(c, _seed_for(seed, c, i), specs[c]) for c in classes for i in range(per_class)]

