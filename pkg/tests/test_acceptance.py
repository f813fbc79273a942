"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with the measured figure of merit (run with -s to see them)."""
import math
import time

import numpy as np
import pytest
from conftest import random_message
from scipy.optimize import brentq

from sononav.errors import CodecError
from sononav.experiments import (
    OperatorStudyConfig,
    RepeatabilityConfig,
    quantify_session_messages,
    run_operator_study,
    run_repeatability,
)
from sononav.geometry import RigidTransform, hand_eye_calibrate, quat_from_axis_angle
from sononav.metrics import classify_agreement, histogram_features, icc_pairs
from sononav.motion import MotionModel, MotionTrajectory, TrackerNoise
from sononav.phantom import Kinetics, build_phantom, log_compress, render_frame
from sononav.quant import (
    VOI,
    TimeIntensityCurve,
    detect_steady_state,
    extract_tic,
    fit_replenishment,
    linearize,
)
from sononav.realign import realign_frame, realign_sequence
from sononav.session import SessionConfig, build_session_messages, session_header
from sononav.stream.codec import decode_message, encode_message
from sononav.stream.sessionlog import read_session_log, write_session_log


def report(criterion: str, detail: str) -> None:
    print(f"PASS: {criterion} ({detail})")


def make_tic(times, values):
    times = np.asarray(times, float)
    return TimeIntensityCurve(times, np.asarray(values, float), np.ones(times.size, dtype=int))


# --------------------------------------------------------------------------


def test_acceptance_hand_eye_calibration():
    rng = np.random.default_rng(2024)
    x0 = RigidTransform.random(rng, max_angle_rad=2.0, max_translation=80.0)
    x0_inv = x0.invert()

    def synth(n, rot_deg, trans_mm):
        pairs = []
        for _ in range(n):
            b = RigidTransform.random(rng, max_angle_rad=1.0, max_translation=30.0)
            a = x0.compose(b).compose(x0_inv)
            if rot_deg or trans_mm:
                for _which in ("a", "b"):
                    pass
                noise_a = RigidTransform(
                    quat_from_axis_angle(rng.standard_normal(3), math.radians(rot_deg) * rng.standard_normal()),
                    rng.normal(0.0, trans_mm, 3),
                )
                noise_b = RigidTransform(
                    quat_from_axis_angle(rng.standard_normal(3), math.radians(rot_deg) * rng.standard_normal()),
                    rng.normal(0.0, trans_mm, 3),
                )
                a = noise_a.compose(a)
                b = noise_b.compose(b)
            pairs.append((a, b))
        return pairs

    t0 = time.perf_counter()
    clean = hand_eye_calibrate(synth(10, 0.0, 0.0))
    rot_err, _ = clean.transform.delta(x0)
    trans_err = float(np.linalg.norm(clean.transform.translation - x0.translation))
    assert rot_err <= 1e-6
    assert trans_err <= 1e-6

    noisy = hand_eye_calibrate(synth(50, 0.05, 0.1))
    noisy_trans_err = float(np.linalg.norm(noisy.transform.translation - x0.translation))
    assert noisy_trans_err < 1.5
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    report(
        "hand-eye calibration",
        f"noise-free {trans_err:.2e} mm / {rot_err:.2e} rad, "
        f"noisy {noisy_trans_err:.3f} mm < 1.5 mm, runtime {elapsed:.2f} s < 1 s",
    )


# --------------------------------------------------------------------------


def test_acceptance_codec_identity_and_fuzz():
    rng = np.random.default_rng(31337)
    for _ in range(10_000):
        msg = random_message(rng)
        assert decode_message(encode_message(msg)) == msg

    # 10^6 random buffers: typed codec errors only, never a crash
    n_cases = 1_000_000
    blob = rng.integers(0, 256, size=4_000_000, dtype=np.uint8).tobytes()
    lengths = rng.integers(0, 80, size=n_cases)
    offsets = rng.integers(0, len(blob) - 100, size=n_cases)
    decoded = 0
    for i in range(n_cases):
        piece = blob[offsets[i] : offsets[i] + lengths[i]]
        try:
            decode_message(piece)
            decoded += 1
        except CodecError:
            pass
    # mutation fuzz on valid messages exercises the deeper payload paths
    for _ in range(20_000):
        data = bytearray(encode_message(random_message(rng)))
        for _ in range(int(rng.integers(1, 5))):
            data[int(rng.integers(0, len(data)))] = int(rng.integers(0, 256))
        try:
            decode_message(bytes(data))
        except CodecError:
            pass
    report("codec identity + fuzz", f"10^4 round trips, 1.02e6 fuzz cases, {decoded} spurious decodes")


def test_acceptance_record_replay_quantify(tmp_path):
    cfg = SessionConfig(
        seed=77,
        duration_s=170.0,
        frame_rate_hz=1.0,
        noise_sd=0.02,
        flash_times_s=(80.0,),
        phantom_spec={
            "dims": [20, 20, 20],
            "lesion_center": [0, 0, 0],
            "lesion_radii": [7, 7, 7],
            "margin_mm": 1.0,
        },
        motion=MotionModel(kind="breathing", breathing_amplitude=1.0, seed=77),
        tracker=TrackerNoise(trans_sd=0.05, rate=10.0),
        voi=VOI.ellipsoid((0, 0, 0), (7, 7, 7)),
    )
    messages = build_session_messages(cfg)
    mem_rows, _ = quantify_session_messages(messages, cfg.voi, realign=True)

    path = tmp_path / "acceptance.snavlog"
    write_session_log(path, session_header(cfg), messages)
    log = read_session_log(path)
    assert log.messages == messages
    file_rows, _ = quantify_session_messages(log.messages, cfg.voi, realign=True)

    a_mem = mem_rows[0]["rBV"]
    a_file = file_rows[0]["rBV"]
    code = log_compress(max(a_mem, 1e-6))
    step = linearize(min(code + 1, 255)) - linearize(code)
    assert abs(a_file - a_mem) <= step
    report(
        "record -> replay -> quantify",
        f"|dA| = {abs(a_file - a_mem):.2e} <= one-code step {step:.2e}",
    )


# --------------------------------------------------------------------------


def test_acceptance_fit_correctness():
    times = np.arange(0.0, 60.0, 1.0)
    values = 2.0 * (1.0 - np.exp(-0.5 * times))
    fit = fit_replenishment(make_tic(times, values), min_span=50.0)
    assert abs(fit.A - 2.0) / 2.0 <= 1e-6
    assert abs(fit.beta - 0.5) / 0.5 <= 1e-6

    times = np.arange(0.0, 90.0, 1.0)
    clean = 1.5 * (1.0 - np.exp(-0.3 * times))
    err_a, err_b = [], []
    for seed in range(100):
        noisy = clean * (1.0 + 0.05 * np.random.default_rng(seed).standard_normal(times.size))
        f = fit_replenishment(make_tic(times, np.maximum(noisy, 0.0)))
        err_a.append(abs(f.A - 1.5) / 1.5)
        err_b.append(abs(f.beta - 0.3) / 0.3)
    med_a, med_b = float(np.median(err_a)), float(np.median(err_b))
    assert med_a < 0.05
    assert med_b < 0.05

    # exactness: power-of-two scale and shift keep every float op exact
    rng = np.random.default_rng(12)
    noisy = np.maximum(clean * (1.0 + 0.03 * rng.standard_normal(times.size)), 0.0)
    base = fit_replenishment(make_tic(times, noisy))
    scaled = fit_replenishment(make_tic(times, 4.0 * noisy))
    shifted = fit_replenishment(make_tic(times + 1024.0, noisy))
    assert scaled.beta == base.beta and scaled.A == 4.0 * base.A
    assert shifted.beta == base.beta and shifted.A == base.A
    report(
        "replenishment fit",
        f"noise-free 1e-6 ok, MC medians A {med_a:.3%} / beta {med_b:.3%} < 5%, invariances exact",
    )


def test_acceptance_linearization_round_trip():
    codes = np.arange(256)
    assert np.array_equal(log_compress(linearize(codes, 60.0), 60.0), codes)
    intensities = linearize(codes, 60.0)
    step = float(np.abs(np.diff(intensities)).max())
    recovered = linearize(log_compress(intensities, 60.0), 60.0)
    worst = float(np.max(np.abs(recovered - intensities)))
    assert worst <= step
    report("linearization round trip", f"256 codes, worst error {worst:.2e} <= step {step:.2e}")


def test_acceptance_steady_state():
    tau, tol, window = 30.0, 0.005, 20.0
    times = np.arange(0.0, 181.0, 1.0)
    tic = make_tic(times, 1.0 - np.exp(-times / tau))
    t_star = brentq(
        lambda t: math.exp(-t / tau) / tau - tol * (1.0 - math.exp(-t / tau)), 1.0, 180.0
    )
    rep = detect_steady_state(tic, window=window, slope_tolerance=tol)
    assert rep.reached
    assert abs(rep.time_to_steady - t_star) <= window

    rng = np.random.default_rng(5)
    noisy = make_tic(times, 1.0 - np.exp(-times / 25.0) + 0.002 * rng.standard_normal(times.size))
    detections = []
    for tol_i in np.geomspace(1e-4, 0.05, 10):
        r = detect_steady_state(noisy, window=window, slope_tolerance=float(tol_i))
        detections.append(r.time_to_steady if r.reached else math.inf)
    assert all(a >= b for a, b in zip(detections, detections[1:]))
    report(
        "steady-state detection",
        f"analytic t*={t_star:.1f} s vs detected {rep.time_to_steady:.1f} s "
        f"(|d| <= {window:.0f} s), tolerance sweep monotone",
    )


# --------------------------------------------------------------------------


def test_acceptance_realignment():
    rng = np.random.default_rng(1)
    codes = rng.integers(0, 256, size=(16, 12, 10), dtype=np.uint8)
    from sononav.phantom import VolumeFrame

    src = VolumeFrame(
        timestamp=0.0,
        pose=RigidTransform(np.array([1.0, 0, 0, 0]), np.array([2.0, 0.0, 0.0])),
        dims=(16, 12, 10),
        voxel_size=1.0,
        voxels=codes,
    )
    out, mask = realign_frame(src, RigidTransform.identity())
    assert np.array_equal(out.voxels[2:, :, :], codes[:-2, :, :])
    assert mask[2:, :, :].all() and not mask[:2, :, :].any()

    phantom = build_phantom(dims=(48, 48, 48), lesion_center=(0.0, 0.0, 4.0))
    kin = Kinetics.default()
    voi = VOI.ellipsoid((0.0, 0.0, 4.0), (9.0, 8.0, 8.0))
    model = MotionModel(kind="breathing", breathing_amplitude=3.0, breathing_period=4.0, seed=3)
    traj = MotionTrajectory(model)
    times = np.arange(0.0, 60.0, 1.0)
    still, moving = [], []
    for t in times:
        still.append(render_frame(phantom, kin, t=float(t), noise_sd=0.0))
        moving.append(render_frame(phantom, kin, t=float(t), pose=traj.at(float(t)), noise_sd=0.0))
    oracle = extract_tic(still, voi)
    unaligned = extract_tic(moving, voi)
    seq = realign_sequence(moving, reference_index=0)
    aligned = extract_tic(list(seq.frames), voi, validity_masks=list(seq.validity_masks))
    scale = float(np.mean(oracle.values))
    rms_aligned = float(np.sqrt(np.mean((aligned.values - oracle.values) ** 2))) / scale
    rms_unaligned = float(np.sqrt(np.mean((unaligned.values - oracle.values) ** 2))) / scale
    assert rms_aligned < 0.05
    assert rms_unaligned > rms_aligned
    report(
        "re-alignment",
        f"integer shift bit-equal, TIC RMS aligned {rms_aligned:.3%} < 5% < "
        f"unaligned {rms_unaligned:.3%}",
    )


# --------------------------------------------------------------------------


def test_acceptance_repeatability_reproduction():
    t0 = time.perf_counter()
    report_main = run_repeatability(RepeatabilityConfig(n_patients=8, seed=0))
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    margins = {}
    for param in ("rBV", "rBF"):
        aligned = report_main.icc[(param, "aligned")].icc
        unaligned = report_main.icc[(param, "unaligned")].icc
        assert aligned > unaligned
        margins[param] = (unaligned, aligned)

    control = RepeatabilityConfig(
        n_patients=3,
        seed=1,
        dims=(32, 32, 32),
        breathing_amplitude_mm=0.0,
        drift_rate_mm_per_min=0.0,
        jitter_sd_mm=0.0,
        tracker_trans_sd=0.0,
        tracker_rot_sd=0.0,
    )
    rep_motionless = run_repeatability(control)
    for param in ("rBV", "rBF"):
        diff = abs(
            rep_motionless.icc[(param, "aligned")].icc
            - rep_motionless.icc[(param, "unaligned")].icc
        )
        assert diff <= 1e-6

    quiet = RepeatabilityConfig(
        n_patients=3,
        seed=1,
        dims=(32, 32, 32),
        noise_sd=0.0,
        breathing_amplitude_mm=0.0,
        drift_rate_mm_per_min=0.0,
        jitter_sd_mm=0.0,
        tracker_trans_sd=0.0,
        tracker_rot_sd=0.0,
        lesion_tau_range=(20.0, 30.0),
    )
    rep_quiet = run_repeatability(quiet)
    for param in ("rBV", "rBF"):
        assert abs(rep_quiet.icc[(param, "aligned")].icc - 1.0) <= 1e-9
    report(
        "repeatability reproduction",
        "ICC aligned > unaligned: "
        + ", ".join(
            f"{p} {o:.2f} -> {a:.2f}" for p, (o, a) in margins.items()
        )
        + f"; zero-motion equal, zero-noise ICC=1; runtime {elapsed:.0f} s < 120 s",
    )


def test_acceptance_operator_study():
    study = run_operator_study(OperatorStudyConfig(n_operators=20, seed=0))
    mean_tracked = study.method_mean("tracked", "mean")
    mean_blind = study.method_mean("blind", "mean")
    sd_tracked = study.method_mean("tracked", "sd")
    sd_bmode = study.method_mean("bmode", "sd")
    sd_blind = study.method_mean("blind", "sd")
    assert mean_blind > mean_tracked
    assert sd_tracked < sd_bmode < sd_blind

    # hand-computed oracles for the histogram-feature formulas
    feats = histogram_features(np.array([0.0, 0.0, 0.0, 10.0]))
    assert feats.mean == pytest.approx(2.5)
    assert feats.median == pytest.approx(0.0)
    assert feats.sd == pytest.approx(5.0)  # sqrt(75/3)
    assert feats.skewness == pytest.approx(2.0, rel=1e-12)
    sym = histogram_features(np.array([1.0, 2.0, 3.0]))
    assert sym.mean == 2.0 and sym.median == 2.0
    assert sym.skewness == pytest.approx(0.0, abs=1e-12)
    report(
        "operator study",
        f"mean blind {mean_blind:.2f} > tracked {mean_tracked:.2f} mm; "
        f"SD tracked {sd_tracked:.2f} < bmode {sd_bmode:.2f} < blind {sd_blind:.2f} mm; "
        "feature oracles exact",
    )


def test_acceptance_icc_estimator():
    rng = np.random.default_rng(42)
    sigma_b = sigma_w = 1.0
    rho = 0.5
    pairs = []
    for b in rng.normal(0.0, sigma_b, size=200):
        pairs.append(
            (math.exp(b + rng.normal(0.0, sigma_w)), math.exp(b + rng.normal(0.0, sigma_w)))
        )
    res = icc_pairs(pairs)
    assert abs(res.icc - rho) < 0.1

    identical = icc_pairs([(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)])
    assert identical.icc == 1.0

    assert classify_agreement(0.20) == "none"
    assert classify_agreement(0.21) == "poor"
    assert classify_agreement(0.40) == "poor"
    assert classify_agreement(0.41) == "moderate"
    assert classify_agreement(0.60) == "moderate"
    assert classify_agreement(0.61) == "good"
    assert classify_agreement(0.80) == "good"
    assert classify_agreement(0.81) == "excellent"
    report(
        "ICC estimator",
        f"rho 0.5 recovered as {res.icc:.3f} (|err| < 0.1), identical pairs -> 1, bands exact",
    )
