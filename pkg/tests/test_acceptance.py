"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even without ``-s``.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from interdyad import io
from interdyad.alignment import alignment_loss, gradcheck, linear_task, train_connector
from interdyad.attention import RotaryConfig, build_injection_inputs, lrope_rotate, masked_interaction_attention
from interdyad.curation import ClipRecord, CurationThresholds, curate
from interdyad.flow import euler_sample, flow_matching_loss, interpolate_latent
from interdyad.guidance import GuidanceConfig, scene_fields
from interdyad.metrics import DEFAULT_DELTA, LandmarkTrack, SegmentSet, di_sali, di_sync
from interdyad.scene import SceneConfig, generate_scene

from oracles import grid_tiou, oracle_verdict, random_segment_pairs, synthetic_records

GRID = 1e-3


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def test_criterion_1_flow_matching(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    z0, z1 = rng.normal(size=(2, 4, 9, 5, 6))
    ok = np.array_equal(interpolate_latent(z0, z1, 1.0), z0) and np.array_equal(interpolate_latent(z0, z1, 0.0), z1)
    ok &= flow_matching_loss(z0 - z1, z0, z1) == 0.0
    ok &= flow_matching_loss(z0 - z1 + 1e-6, z0, z1) > 0.0
    errs = {s: float(np.max(np.abs(euler_sample(lambda z, t, c: z0 - z1, z1, s) - z0))) for s in (1, 4, 64)}
    ok &= max(errs.values()) <= 1e-9
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1.0
    verdict(1, bool(ok), f"euler errors {errs}, runtime {elapsed:.3f}s (< 1 s)")


def test_criterion_2_lrope(verdict):
    rng = np.random.default_rng(2)
    norm_err = 0.0
    for _ in range(200):
        v = rng.normal(size=16)
        out = lrope_rotate(v, int(rng.integers(-500, 500)), int(rng.integers(-2000, 2000)))
        norm_err = max(norm_err, abs(np.linalg.norm(out) - np.linalg.norm(v)) / np.linalg.norm(v))
    phase_err = 0.0
    cfg = RotaryConfig()
    for _ in range(1000):
        q, k = rng.normal(size=(2, 16))
        lm, ln, pm, pn = (int(x) for x in rng.integers(-100, 100, size=4))
        dl, dp = (int(x) for x in rng.integers(-300, 300, size=2))
        a = lrope_rotate(q, lm, pm, cfg) @ lrope_rotate(k, ln, pn, cfg)
        b = lrope_rotate(q, lm + dl, pm + dp, cfg) @ lrope_rotate(k, ln + dl, pn + dp, cfg)
        phase_err = max(phase_err, abs(a - b))
    hand = lrope_rotate(np.array([1.0, 0.0]), label=1, position=0)
    hand_err = float(np.max(np.abs(hand - [np.cos(1.0), np.sin(1.0)])))
    ok = norm_err <= 1e-12 and phase_err <= 1e-9 and hand_err <= 1e-12
    verdict(2, ok, f"norm rel err {norm_err:.1e}, phase err {phase_err:.1e}, d=2 err {hand_err:.1e}")


def test_criterion_3_masked_injection(verdict):
    rng = np.random.default_rng(3)
    leaks = 0
    background = 0
    for i in range(500):
        n, m, d, dm = int(rng.integers(4, 30)), int(rng.integers(1, 10)), 8, 6
        tags = rng.integers(0, 3, size=n)
        z = rng.normal(size=(n, d))
        w_q, w_k, w_v = rng.normal(size=(d, d)), rng.normal(size=(dm, d)), rng.normal(size=(dm, d))
        m_s, m_l = rng.normal(size=(2, m, dm))
        speaker = 1 + i % 2
        base = masked_interaction_attention(build_injection_inputs(z, tags, speaker, m_s, m_l, w_q, w_k, w_v))
        new_l = masked_interaction_attention(
            build_injection_inputs(z, tags, speaker, m_s, rng.normal(size=(m, dm)), w_q, w_k, w_v)
        )
        new_s = masked_interaction_attention(
            build_injection_inputs(z, tags, speaker, rng.normal(size=(m, dm)), m_l, w_q, w_k, w_v)
        )
        ms, ml = tags == speaker, tags == 3 - speaker
        leaks += not np.array_equal(base[ms], new_l[ms])
        leaks += not np.array_equal(base[ml], new_s[ml])
        background += int(np.count_nonzero(base[tags == 0]))
    verdict(3, leaks == 0 and background == 0, f"{leaks} leaking instances, {background} nonzero background entries")


def test_criterion_4_alignment(verdict):
    t0 = time.perf_counter()
    m = np.random.default_rng(4).normal(size=(6, 3))
    examples = [
        abs(alignment_loss(m, m) - 0.0),
        abs(alignment_loss(m, m + 0.7) - 0.49),
        abs(alignment_loss(np.zeros((2, 1)), np.array([[0.0], [1.0]])) - 1.5),
    ]
    grad_err = gradcheck(100, seed=0, max_n=8, max_d=16)
    result = train_connector(linear_task(0), steps=2000, lr=1e-2, seed=0)
    ratio = result.losses[-1] / result.losses[0]
    elapsed = time.perf_counter() - t0
    ok = max(examples) <= 1e-12 and grad_err < 1e-5 and ratio < 0.01 and elapsed < 60
    verdict(
        4,
        ok,
        f"loss example err {max(examples):.1e}, grad rel err {grad_err:.2e}, "
        f"final/initial loss {ratio:.2%}, runtime {elapsed:.1f}s",
    )


def test_criterion_5_rodg(verdict):
    scene = generate_scene(5, SceneConfig(frames=200))
    cfg = GuidanceConfig()
    timeline, fields = scene_fields(scene, cfg)
    h, w = fields.shape[1:]
    sigma = cfg.sigma_for(h, w)
    lo, hi = float(fields.min()), float(fields.max())
    bounds_ok = lo >= cfg.w_base and hi <= cfg.w_base + cfg.alpha_max
    listener_bad = 0
    sigma_err, checked = 0.0, 0
    for t in range(scene.frames):
        lis = timeline.listener(t)
        if lis:
            listener_bad += fields[t][scene.person(lis).region_mask].max() != cfg.w_base
        s = int(timeline.speaker_id[t])
        if not s:
            continue
        cx, cy = np.floor(scene.lip_center_grid(s)[t]).astype(int)
        mask = scene.person(s).region_mask
        for dx, dy in ((sigma, 0), (-sigma, 0), (0, sigma), (0, -sigma)):
            x, y = int(cx + dx), int(cy + dy)
            if 0 <= x < w and 0 <= y < h and mask[y, x]:
                expect = cfg.w_base + timeline.alpha[t] * np.exp(-0.5)
                sigma_err = max(sigma_err, abs(fields[t, y, x] - expect))
                checked += 1
    ok = bounds_ok and listener_bad == 0 and checked > 0 and sigma_err <= 1e-9
    verdict(
        5,
        ok,
        f"field range [{lo}, {hi}], listener violations {listener_bad}, "
        f"value-at-sigma err {sigma_err:.1e} over {checked} cells",
    )


def test_criterion_6_di_sync(verdict):
    hand = [(([(1, 3)], [(1.5, 3.5)]), 1.0), (([(0, 2)], [(1, 2)]), 0.5)]
    hand_err, hand_grid_ok = 0.0, True
    for (a, v), expect in hand:
        got = di_sync(SegmentSet.of(a), SegmentSet.of(v), 0.5)
        hand_err = max(hand_err, abs(got - expect))
        ref, union = grid_tiou(a, v, 0.5)
        hand_grid_ok &= abs(got - ref) <= 2 * GRID / union
    rng = np.random.default_rng(6)
    bad = 0
    for _ in range(1000):
        a, v = random_segment_pairs(rng), random_segment_pairs(rng)
        got = di_sync(SegmentSet.of(a), SegmentSet.of(v), DEFAULT_DELTA)
        ref, union = grid_tiou(a, v, DEFAULT_DELTA)
        bad += (abs(got - ref) > 2 * GRID / union) if union else got != ref
    default_ok = DEFAULT_DELTA == 0.5 and di_sync(SegmentSet.of([(1, 3)]), SegmentSet.of([(1.5, 3.5)])) == 1.0
    ok = hand_err <= 1e-12 and hand_grid_ok and bad == 0 and default_ok
    verdict(6, ok, f"hand err {hand_err:.1e}, fuzz disagreements {bad}/1000, default delta {DEFAULT_DELTA}")


def test_criterion_7_di_sali(verdict):
    rng = np.random.default_rng(7)
    e0 = rng.normal(size=(4, 2))
    static = np.broadcast_to(e0, (5, 4, 2))
    static_ok = di_sali(LandmarkTrack(static), LandmarkTrack(static)) == 0.0
    moved = np.stack([e0, e0 + [3.0, 4.0]])
    value = di_sali(LandmarkTrack(moved), LandmarkTrack(moved))
    fails = 0
    for _ in range(200):
        t = int(rng.integers(2, 40))
        s, l = rng.normal(0, 20, size=(2, t, 6, 2))
        base = di_sali(LandmarkTrack(s), LandmarkTrack(l))
        off = rng.normal(0, 200, size=2)
        k = rng.uniform(0.1, 10)
        fails += not np.isclose(di_sali(LandmarkTrack(s + off), LandmarkTrack(l + off)), base, rtol=1e-9, atol=0)
        fails += not np.isclose(di_sali(LandmarkTrack(k * s), LandmarkTrack(k * l)), k * base, rtol=1e-12, atol=0)
    ok = static_ok and value == 10.0 and fails == 0
    verdict(7, ok, f"static zero {static_ok}, (3,4) motion gives {value}, property failures {fails}/400")


def test_criterion_8_curation(verdict):
    th = CurationThresholds()
    table = (th.tau_s, th.tau_v, th.tau_c, th.r_body, th.r_face, th.tau_m)
    recs = synthetic_records(8, 1000)
    disagree = 0
    for r in recs:
        d, passed = curate(ClipRecord.from_dict(r), th)
        disagree += (d.verdict, passed) != oracle_verdict(r)
    rng = np.random.default_rng(8)
    sample = [ClipRecord.from_dict(r) for r in recs[:200]]
    base_ids = {c.clip_id for c in sample if curate(c, th)[0].accepted}
    shrinks = 0
    for _ in range(500):
        kw = {}
        for name in ("tau_s", "tau_c", "r_body", "r_face", "tau_m", "min_fps", "t_min"):
            if rng.random() < 0.5:
                kw[name] = getattr(th, name) * rng.uniform(0.5, 1.0)
        if rng.random() < 0.5:
            kw["tau_v"] = th.tau_v * rng.uniform(1.0, 2.0)
        if rng.random() < 0.5:
            kw["min_res"] = max(1, int(th.min_res * rng.uniform(0.5, 1.0)))
        loose = CurationThresholds(**{**vars(th), **kw})
        shrinks += not base_ids <= {c.clip_id for c in sample if curate(c, loose)[0].accepted}
    ok = table == (3.66, 6.0, 0.95, 0.80, 0.30, 0.12) and disagree == 0 and shrinks == 0
    verdict(8, ok, f"thresholds {table}, oracle disagreements {disagree}/1000, monotonicity violations {shrinks}/500")


def _single_core():
    if hasattr(os, "sched_setaffinity"):
        os.sched_setaffinity(0, {min(os.sched_getaffinity(0))})


def test_criterion_9_demo(verdict, tmp_path):
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
    out = tmp_path / "demo"
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "interdyad.cli", "demo", "--seed", "7", "--frames", "153", "--out", str(out)],
        env=env,
        preexec_fn=_single_core,
        capture_output=True,
        text=True,
    )
    elapsed = time.perf_counter() - t0
    summary = io.read_json(out / "summary.json") if proc.returncode == 0 else {}
    boundaries = summary.get("boundaries", [])
    bit_equal = bool(boundaries) and all(b["context_bit_equal"] for b in boundaries)
    sample = io.read_latent(out / "sample.idlt") if proc.returncode == 0 else None
    report_ok = False
    if proc.returncode == 0:
        lines = (out / "report.csv").read_text().splitlines()
        agg = json.loads((out / "report_aggregate.json").read_text())
        row = dict(zip(lines[0].split(","), lines[1].split(",")))
        report_ok = (
            lines[0] == "clip_id,di_sync,di_sali"
            and len(lines) == 2
            and 0.0 <= float(row["di_sync"]) <= 1.0
            and float(row["di_sali"]) >= 0.0
            and agg["count"] == 1
        )
    ok = proc.returncode == 0 and elapsed < 30 and bit_equal and report_ok and sample.shape[1] == 153
    verdict(
        9,
        ok,
        f"exit {proc.returncode}, {elapsed:.2f}s on one core, {len(boundaries)} boundaries bit-equal={bit_equal}, "
        f"report well-formed={report_ok}",
    )
