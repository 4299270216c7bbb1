"""Cascaded clip curation over precomputed metadata records.

Stages run in order and stop at the first rejection:

1. heuristic quality filter (resolution, frame rate, duration, camera
   stability, camera motion, clarity; long clips are cut to ``t_max``)
2. dyadic identification (dual body / dual face detection ratios, body type)
3. dynamic-aware motion filter (peak hand/head velocity)

Inequalities follow the source criteria literally: clips are rejected when
``s_jitter < tau_s``, ``v_opt > tau_v`` or ``clarity < tau_c``, and kept only
when ``v_motion > tau_m`` (strict).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Iterator, Mapping

log = logging.getLogger(__name__)

ACCEPT = "accept"
REJECT = "reject"
ACCEPT_TRUNCATED = "accept_truncated"
BODY_TYPES = frozenset({"upper-body", "full-body"})
STAGES = ("heuristic", "dyadic", "motion")


@dataclass(frozen=True)
class CurationThresholds:
    tau_s: float = 3.66
    tau_v: float = 6.0
    tau_c: float = 0.95
    r_body: float = 0.80
    r_face: float = 0.30
    tau_m: float = 0.12
    min_res: int = 720
    min_fps: float = 25
    t_min: float = 3.0
    t_max: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"threshold {f.name} must be positive")


@dataclass
class ClipRecord:
    """Precomputed clip metadata; ``None`` marks a field the record lacks."""

    clip_id: str
    resolution: tuple[int, int] | None = None
    fps: float | None = None
    duration: float | None = None
    s_jitter: float | None = None
    v_opt: float | None = None
    clarity: float | None = None
    frame_count: int | None = None
    dual_body_ratio: float | None = None
    dual_face_ratio: float | None = None
    body_type: str | None = None
    v_motion: float | None = None

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ClipRecord":
        """Build from a JSON object; raises KeyError/TypeError/ValueError on bad input."""
        if not isinstance(obj, Mapping):
            raise TypeError(f"record must be a JSON object, got {type(obj).__name__}")
        kw: dict = {"clip_id": str(obj["clip_id"])}
        for f in fields(cls)[1:]:
            v = obj.get(f.name)
            if v is None:
                continue
            if f.name == "resolution":
                v = (int(v[0]), int(v[1]))
            elif f.name == "frame_count":
                v = int(v)
            elif f.name == "body_type":
                v = str(v)
            else:
                v = float(v)
            kw[f.name] = v
        return cls(**kw)

    def missing(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name) is None]

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.resolution is not None:
            d["resolution"] = list(self.resolution)
        return d


@dataclass
class CurationDecision:
    verdict: str
    failed_rules: list[str] = field(default_factory=list)
    effective_duration: float | None = None
    stage: str | None = None  # stage that rejected, if any

    @property
    def accepted(self) -> bool:
        return self.verdict != REJECT


def heuristic_filter(rec: ClipRecord, th: CurationThresholds = CurationThresholds()) -> CurationDecision:
    if rec.missing():
        return CurationDecision(REJECT, ["incomplete"], None, "heuristic")
    failed = []
    if min(rec.resolution) < th.min_res:
        failed.append("resolution")
    if rec.fps < th.min_fps:
        failed.append("frame-rate")
    if rec.duration < th.t_min:
        failed.append("duration")
    if rec.s_jitter < th.tau_s:
        failed.append("camera-stability")
    if rec.v_opt > th.tau_v:
        failed.append("camera-motion")
    if rec.clarity < th.tau_c:
        failed.append("clarity")
    if failed:
        return CurationDecision(REJECT, failed, None, "heuristic")
    if rec.duration > th.t_max:
        return CurationDecision(ACCEPT_TRUNCATED, [], th.t_max)
    return CurationDecision(ACCEPT, [], rec.duration)


def dyadic_identify(rec: ClipRecord, th: CurationThresholds = CurationThresholds()) -> CurationDecision:
    if None in (rec.dual_body_ratio, rec.dual_face_ratio, rec.body_type):
        return CurationDecision(REJECT, ["incomplete"], None, "dyadic")
    failed = []
    if rec.dual_body_ratio < th.r_body:
        failed.append("dual-body")
    if rec.dual_face_ratio < th.r_face:
        failed.append("dual-face")
    if rec.body_type not in BODY_TYPES:
        failed.append("body-type")
    if failed:
        return CurationDecision(REJECT, failed, None, "dyadic")
    return CurationDecision(ACCEPT, [], rec.duration)


def motion_filter(rec: ClipRecord, th: CurationThresholds = CurationThresholds()) -> CurationDecision:
    if rec.v_motion is None:
        return CurationDecision(REJECT, ["incomplete"], None, "motion")
    if rec.v_motion > th.tau_m:
        return CurationDecision(ACCEPT, [], rec.duration)
    return CurationDecision(REJECT, ["motion"], None, "motion")


def curate(rec: ClipRecord, th: CurationThresholds = CurationThresholds()) -> tuple[CurationDecision, int]:
    """Run the cascade on one record; returns the decision and the number of stages passed."""
    first = heuristic_filter(rec, th)
    if not first.accepted:
        return first, 0
    for n, stage in enumerate((dyadic_identify, motion_filter), start=1):
        d = stage(rec, th)
        if not d.accepted:
            return d, n
    return first, 3


@dataclass
class PipelineReport:
    decisions: list[dict]
    summary: dict


def _parse(line: str) -> ClipRecord:
    return ClipRecord.from_dict(json.loads(line))


def run_pipeline(
    lines: Iterable[str], th: CurationThresholds = CurationThresholds(), jobs: int = 1
) -> PipelineReport:
    """Curate JSONL records. Malformed lines are counted and skipped."""
    entries = [(n, ln) for n, ln in enumerate(lines, start=1) if ln.strip()]

    def work(item):
        n, ln = item
        try:
            rec = _parse(ln)
        except (ValueError, KeyError, TypeError, IndexError) as exc:
            log.warning("line %d: malformed record skipped (%s)", n, exc)
            return None
        return rec, curate(rec, th)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, entries))
    else:
        results = [work(e) for e in entries]

    counts = {"input": 0, "pass_stage1": 0, "pass_stage2": 0, "pass_stage3": 0, "malformed": 0}
    decisions = []
    for res in results:
        if res is None:
            counts["malformed"] += 1
            continue
        rec, (dec, passed) = res
        counts["input"] += 1
        for k in range(1, passed + 1):
            counts[f"pass_stage{k}"] += 1
        decisions.append(
            {
                "clip_id": rec.clip_id,
                "verdict": dec.verdict,
                "failed_rules": dec.failed_rules,
                "effective_duration": dec.effective_duration,
                "stage": dec.stage,
            }
        )
    return PipelineReport(decisions, counts)


def iter_jsonl(path) -> Iterator[str]:
    with open(path) as fh:
        yield from fh
