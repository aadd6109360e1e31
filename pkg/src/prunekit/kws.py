"""Keyword spotting over frame posteriors.

A keyword is a left-to-right chain of word units. The acceptor consumes one
symbol per qualified evidence run (same argmax class, posterior >= threshold,
sustained for a minimum duration) and emits 1 exactly when the final unit
completes. ROC evaluation sweeps the confidence threshold and reports true
alarms against labelled keyword ends and false alarms per hour on
keyword-free environment data.

Class convention: 0 is filler/silence, classes 1..n are the keyword units in
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass
class KeywordFst:
    """Chain acceptor with unit_count + 1 states.

    State s means "first s units matched". The transition table is total:
    every (state, class) pair is defined, so the machine can never get stuck.
    Exactly one transition emits 1: the advance into the final state.
    """

    unit_count: int
    states: list[int]
    start: int
    transitions: dict[tuple[int, int], tuple[int, int]]  # (state, cls) -> (next, out)

    @property
    def num_classes(self) -> int:
        return self.unit_count + 1

    def step(self, state: int, cls: int) -> tuple[int, int]:
        return self.transitions[(state, cls)]


def build_keyword_fst(unit_count: int) -> KeywordFst:
    """Build the chain acceptor for a unit_count-unit keyword.

    From state s: the next unit advances (emitting 1 on final completion),
    filler resets to the start, the just-matched unit self-loops, unit 1
    restarts a fresh attempt, and any other out-of-order unit resets.
    """
    if unit_count < 1:
        raise ValueError("unit_count must be >= 1")
    n = unit_count
    transitions = {}
    for s in range(n + 1):
        for c in range(n + 1):
            if c == 0:
                transitions[(s, c)] = (0, 0)
            elif c == s + 1:
                transitions[(s, c)] = (s + 1, 1 if s + 1 == n else 0)
            elif c == s:
                transitions[(s, c)] = (s, 0)
            elif c == 1:
                transitions[(s, c)] = (1, 0)
            else:
                transitions[(s, c)] = (0, 0)
    return KeywordFst(n, list(range(n + 1)), 0, transitions)


@dataclass
class PosteriorStream:
    """Frame posteriors over {filler, unit_1, ..., unit_n} plus the frame
    period in seconds."""

    probs: np.ndarray
    frame_period: float

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ValueError("posteriors must be N x num_classes")
        if self.frame_period <= 0:
            raise ValueError("frame_period must be positive")
        if len(self.probs):
            if (self.probs < -1e-12).any():
                raise ValueError("posteriors must be nonnegative")
            sums = self.probs.sum(axis=1)
            if np.abs(sums - 1.0).max() > 1e-6:
                raise ValueError("posterior rows must sum to 1 within 1e-6")

    @property
    def num_frames(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    @property
    def duration_hours(self) -> float:
        return self.num_frames * self.frame_period / 3600.0


@dataclass
class DecodeConfig:
    """Posterior handling knobs.

    threshold is normally in (0, 1); values >= 1 are accepted so boundary
    sweeps (an unreachable threshold must yield zero detections) work.
    """

    smoothing_window: int = 10
    threshold: float = 0.5
    min_duration: int = 3
    lockout: int = 50

    def __post_init__(self):
        if self.smoothing_window < 1 or self.min_duration < 1 or self.lockout < 0:
            raise ValueError("windows must be positive")
        if self.threshold <= 0:
            raise ValueError("threshold must be > 0")


@dataclass
class Detection:
    frame: int
    confidence: float


def smooth_posteriors(stream: PosteriorStream, window: int) -> PosteriorStream:
    """Trailing moving average over `window` frames, truncated at the stream
    start. Rows remain proper distributions."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if window == 1 or stream.num_frames == 0:
        return PosteriorStream(stream.probs.copy(), stream.frame_period)
    csum = np.cumsum(stream.probs, axis=0)
    n = stream.num_frames
    out = np.empty_like(stream.probs)
    out[:window] = csum[:window] / np.arange(1, min(window, n) + 1)[:, None]
    if n > window:
        out[window:] = (csum[window:] - csum[:-window]) / window
    return PosteriorStream(out, stream.frame_period)


def _evidence_runs(probs: np.ndarray, threshold: float):
    """Maximal runs of frames sharing an argmax class with posterior >=
    threshold. Yields (cls, start, length, peak)."""
    n = probs.shape[0]
    if n == 0:
        return []
    cls = np.argmax(probs, axis=1)
    strong = probs[np.arange(n), cls] >= threshold
    # run key: argmax class where strong, -1 where weak
    key = np.where(strong, cls, -1)
    boundaries = np.flatnonzero(np.diff(key)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    runs = []
    for s, e in zip(starts, ends):
        if key[s] >= 0:
            peak = float(probs[s:e, key[s]].max())
            runs.append((int(key[s]), int(s), int(e - s), peak))
    return runs


def decode(fst: KeywordFst, stream: PosteriorStream, cfg: DecodeConfig) -> list[Detection]:
    """Step the acceptor over qualified evidence runs of the smoothed stream.

    A run qualifies once it has lasted min_duration frames; its symbol is
    consumed at that frame. A detection fires when the acceptor emits 1, with
    confidence = the weakest unit peak along the accepted path; detections
    within the lockout window of the previous one are suppressed.
    """
    if stream.num_classes != fst.num_classes:
        raise ValueError(
            f"stream has {stream.num_classes} classes, acceptor expects {fst.num_classes}"
        )
    smoothed = smooth_posteriors(stream, cfg.smoothing_window)
    detections: list[Detection] = []
    state = fst.start
    unit_conf: dict[int, float] = {}
    last_fire: int | None = None
    for cls, start, length, peak in _evidence_runs(smoothed.probs, cfg.threshold):
        if length < cfg.min_duration:
            continue
        frame = start + cfg.min_duration - 1
        next_state, out = fst.step(state, cls)
        if next_state != state and next_state != 0:
            unit_conf[next_state] = peak
        state = next_state
        if out == 1:
            confidence = min(unit_conf[k] for k in range(1, fst.unit_count + 1))
            if last_fire is None or frame - last_fire >= cfg.lockout:
                detections.append(Detection(frame, confidence))
                last_fire = frame
    return detections


@dataclass
class RocPoint:
    threshold: float
    ta_rate: float
    fa_per_hour: float


@dataclass
class RocCurve:
    points: list[RocPoint] = field(default_factory=list)

    def is_monotone(self) -> bool:
        """Lower thresholds must not lose alarms: with points sorted by
        ascending threshold, TA and FA are non-increasing."""
        pts = sorted(self.points, key=lambda p: p.threshold)
        for a, b in zip(pts, pts[1:]):
            if b.ta_rate > a.ta_rate + 1e-12 or b.fa_per_hour > a.fa_per_hour + 1e-9:
                return False
        return True


def match_detections(detections: list[Detection], label_frames, tolerance: int) -> int:
    """Greedy one-to-one matching of detections to labelled keyword ends.
    A detection within +-tolerance frames of a label consumes it."""
    matched = 0
    used = [False] * len(detections)
    for end in sorted(label_frames):
        for i, det in enumerate(detections):
            if not used[i] and abs(det.frame - end) <= tolerance:
                used[i] = True
                matched += 1
                break
    return matched


def evaluate_roc(
    fst: KeywordFst,
    test_streams: list[tuple[str, PosteriorStream]],
    labels: list[tuple[str, int]],
    environment: PosteriorStream,
    cfg: DecodeConfig,
    thresholds,
    match_tolerance_seconds: float = 0.5,
) -> RocCurve:
    """Sweep thresholds; TA rate over the labelled test streams, FA per hour
    over the keyword-free environment stream."""
    labels_by_stream: dict[str, list[int]] = {}
    for sid, end in labels:
        labels_by_stream.setdefault(sid, []).append(end)
    total_labels = len(labels)
    curve = RocCurve()
    for thr in sorted(float(t) for t in thresholds):
        cfg_t = replace(cfg, threshold=thr)
        matched = 0
        for sid, stream in test_streams:
            dets = decode(fst, stream, cfg_t)
            tol = int(round(match_tolerance_seconds / stream.frame_period))
            matched += match_detections(dets, labels_by_stream.get(sid, []), tol)
        ta = matched / total_labels if total_labels else 0.0
        fa = len(decode(fst, environment, cfg_t)) / environment.duration_hours
        curve.points.append(RocPoint(thr, ta, fa))
    return curve
