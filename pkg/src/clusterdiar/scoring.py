"""Diarization error rate with a forgiveness collar and optimal speaker mapping."""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment


class RttmParseError(ValueError):
    pass


class UndefinedDerError(ValueError):
    pass


@dataclass(frozen=True)
class RttmRecord:
    session_id: str
    start: float
    duration: float
    speaker: str
    channel: str = "1"
    type: str = "SPEAKER"

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"turn duration must be positive, got {self.duration}")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def to_line(self) -> str:
        return (
            f"{self.type} {self.session_id} {self.channel} {self.start:.3f} "
            f"{self.duration:.3f} <NA> <NA> {self.speaker} <NA> <NA>"
        )


def parse_rttm(text: str, source: str = "<rttm>") -> list[RttmRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith(";;"):
            continue
        fields = line.split()
        if len(fields) != 10:
            raise RttmParseError(f"{source}:{lineno}: expected 10 fields, got {len(fields)}")
        if fields[0] != "SPEAKER":
            continue
        try:
            start, dur = float(fields[3]), float(fields[4])
        except ValueError:
            raise RttmParseError(f"{source}:{lineno}: bad time value") from None
        if not (np.isfinite(start) and np.isfinite(dur)) or dur <= 0 or start < 0:
            raise RttmParseError(f"{source}:{lineno}: invalid turn {start} +{dur}")
        records.append(RttmRecord(fields[1], start, dur, fields[7], channel=fields[2]))
    return records


def read_rttm(path) -> list[RttmRecord]:
    path = Path(path)
    return parse_rttm(path.read_text(), str(path))


def format_rttm(records: list[RttmRecord]) -> str:
    return "".join(r.to_line() + "\n" for r in records)


def write_rttm(path, records: list[RttmRecord]) -> None:
    Path(path).write_text(format_rttm(records))


def group_by_session(records: list[RttmRecord]) -> dict[str, list[RttmRecord]]:
    out: dict[str, list[RttmRecord]] = defaultdict(list)
    for r in records:
        out[r.session_id].append(r)
    return dict(out)


# --------------------------------------------------------------- mapping


def optimal_speaker_map(overlap: np.ndarray) -> dict[int, int]:
    """Row -> column injection maximising total overlap (Hungarian method).

    Pairs with zero overlap are dropped; they contribute nothing.
    """
    overlap = np.asarray(overlap, dtype=np.float64)
    if overlap.size == 0:
        return {}
    if (overlap < 0).any():
        raise ValueError("overlap durations must be non-negative")
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    return {int(r): int(c) for r, c in zip(rows, cols) if overlap[r, c] > 0}


def exhaustive_speaker_map(overlap: np.ndarray) -> tuple[dict[int, int], float]:
    """Brute-force reference for :func:`optimal_speaker_map` on small inputs."""
    overlap = np.asarray(overlap, dtype=np.float64)
    r, h = overlap.shape
    best, best_map = -1.0, {}
    if r <= h:
        for cols in itertools.permutations(range(h), r):
            total = sum(overlap[i, c] for i, c in enumerate(cols))
            if total > best:
                best, best_map = total, dict(enumerate(cols))
    else:
        for rows in itertools.permutations(range(r), h):
            total = sum(overlap[rw, j] for j, rw in enumerate(rows))
            if total > best:
                best, best_map = total, {rw: j for j, rw in enumerate(rows)}
    return best_map, max(best, 0.0)


# ------------------------------------------------------------------ DER


@dataclass
class DerReport:
    confusion_time: float
    missed_time: float
    false_alarm_time: float
    scored_time: float
    der: float  # percent
    speaker_map: dict[str, str] = field(default_factory=dict)

    @property
    def error_time(self) -> float:
        return self.confusion_time + self.missed_time + self.false_alarm_time

    def as_dict(self) -> dict:
        return {
            "der": self.der,
            "confusion_time": self.confusion_time,
            "missed_time": self.missed_time,
            "false_alarm_time": self.false_alarm_time,
            "scored_time": self.scored_time,
            "speaker_map": self.speaker_map,
        }


def _merge(intervals):
    out = []
    for s, e in sorted(intervals):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return out


def _activity(turns, speakers, mids):
    """Boolean (len(mids), len(speakers)) activity matrix."""
    index = {s: i for i, s in enumerate(speakers)}
    act = np.zeros((len(mids), len(speakers)), dtype=bool)
    for t in turns:
        lo = np.searchsorted(mids, t.start, side="left")
        hi = np.searchsorted(mids, t.end, side="left")
        act[lo:hi, index[t.speaker]] = True
    return act


def score(
    reference: list[RttmRecord], hypothesis: list[RttmRecord], collar: float = 0.25
) -> DerReport:
    """Interval-sweep DER for one session.

    ``collar`` seconds on each side of every reference turn boundary are
    left unscored. The speaker mapping maximises correctly attributed
    scored time.
    """
    if not reference:
        raise UndefinedDerError("reference is empty")
    if collar < 0:
        raise ValueError("collar must be non-negative")
    sessions = {r.session_id for r in reference} | {h.session_id for h in hypothesis}
    if len(sessions) > 1:
        raise ValueError(f"score() handles one session at a time, got {sorted(sessions)}")

    ref_spk = sorted({r.speaker for r in reference})
    hyp_spk = sorted({h.speaker for h in hypothesis})

    no_score = _merge(
        [(b - collar, b + collar) for r in reference for b in (r.start, r.end)]
    ) if collar > 0 else []
    points = {r.start for r in reference} | {r.end for r in reference}
    points |= {h.start for h in hypothesis} | {h.end for h in hypothesis}
    for s, e in no_score:
        points.update((s, e))
    pts = np.array(sorted(points))
    lo, hi = pts[:-1], pts[1:]
    mids = 0.5 * (lo + hi)
    dur = hi - lo
    if no_score:
        ns = np.array(no_score)
        k = np.searchsorted(ns[:, 0], mids, side="right") - 1
        inside = (k >= 0) & (mids < ns[np.maximum(k, 0), 1])
        keep = ~inside
        mids, dur = mids[keep], dur[keep]

    ref_act = _activity(reference, ref_spk, mids)
    hyp_act = _activity(hypothesis, hyp_spk, mids)
    overlap = (ref_act * dur[:, None]).T.astype(np.float64) @ hyp_act.astype(np.float64)
    mapping = optimal_speaker_map(overlap) if hyp_spk else {}

    n_ref = ref_act.sum(axis=1)
    n_hyp = hyp_act.sum(axis=1)
    correct = np.zeros(len(mids), dtype=np.int64)
    for r, h in mapping.items():
        correct += ref_act[:, r] & hyp_act[:, h]
    missed = float((np.maximum(n_ref - n_hyp, 0) * dur).sum())
    fa = float((np.maximum(n_hyp - n_ref, 0) * dur).sum())
    conf = float(((np.minimum(n_ref, n_hyp) - correct) * dur).sum())
    scored = float((n_ref * dur).sum())
    if scored <= 0:
        raise UndefinedDerError("no reference speech left to score outside the collar")
    der = 100.0 * (conf + missed + fa) / scored
    names = {ref_spk[r]: hyp_spk[h] for r, h in mapping.items()}
    return DerReport(conf, missed, fa, scored, der, names)


def score_sessions(
    reference: list[RttmRecord], hypothesis: list[RttmRecord], collar: float = 0.25
) -> tuple[DerReport, dict[str, DerReport]]:
    """Per-session reports plus a time-weighted total."""
    refs = group_by_session(reference)
    hyps = group_by_session(hypothesis)
    if not refs:
        raise UndefinedDerError("reference is empty")
    per = {sid: score(refs[sid], hyps.get(sid, []), collar) for sid in sorted(refs)}
    conf = sum(r.confusion_time for r in per.values())
    miss = sum(r.missed_time for r in per.values())
    fa = sum(r.false_alarm_time for r in per.values())
    scored = sum(r.scored_time for r in per.values())
    total = DerReport(conf, miss, fa, scored, 100.0 * (conf + miss + fa) / scored)
    return total, per
