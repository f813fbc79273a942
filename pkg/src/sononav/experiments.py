"""Experiment orchestration: operator-performance study, repeatability study
(tracking vs no tracking), and batch quantification of session files.

Every experiment is a pure function of (config, seed): per-run seeds are
derived through SeedSequence so results do not depend on execution order, and
CSV output is byte-identical across reruns.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InsufficientDataError, SononavError
from .geometry import RigidTransform
from .metrics import (
    HistogramFeatures,
    RepeatabilityResult,
    RepositioningResult,
    displacement_trace,
    histogram_features,
    icc_pairs,
    repositioning_result,
)
from .motion import (
    FEEDBACK_DEFAULTS,
    MotionModel,
    MotionTrajectory,
    TrackerNoise,
    generate_session,
    measure_tracker,
)
from .phantom import Kinetics, Tissue, TissueKinetics, VolumeFrame, build_phantom, render_frame
from .quant import (
    VOI,
    FitResult,
    detect_steady_state,
    extract_tic,
    fit_replenishment,
    split_replenishment_segments,
)
from .realign import realign_sequence
from .session import frames_from_messages
from .stream.sessionlog import read_session_log

FEEDBACK_METHODS = ("bmode", "tracked", "blind")
_METHOD_TO_KIND = {"bmode": "hold_bmode", "tracked": "hold_tracked", "blind": "hold_blind"}


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".9g")
    return str(value)


def rows_to_csv(fieldnames: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fieldnames)
    for row in rows:
        writer.writerow([_fmt(row[k]) for k in fieldnames])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _derived_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


# --------------------------------------------------------------------------
# Operator study
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OperatorStudyConfig:
    n_operators: int = 5
    methods: tuple[str, ...] = FEEDBACK_METHODS
    duration_s: float = 240.0
    sample_rate_hz: float = 10.0
    tracker_trans_sd: float = 0.1
    tracker_rot_sd: float = 0.05
    center_voxel_offset: tuple[float, float, float] = (0.0, 0.0, 50.0)
    settle_threshold_mm: float = 2.0
    settle_hold_s: float = 2.0
    operator_spread: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_operators < 1:
            raise ConfigError("need at least one operator")
        for m in self.methods:
            if m not in FEEDBACK_METHODS:
                raise ConfigError(f"unknown feedback method {m!r}")


@dataclass(frozen=True)
class OperatorRun:
    operator: int
    method: str
    times: np.ndarray
    displacement: np.ndarray
    features: HistogramFeatures
    repositioning: RepositioningResult


@dataclass(frozen=True)
class OperatorStudyResult:
    runs: tuple[OperatorRun, ...]
    csv_text: str

    def method_mean(self, method: str, attr: str = "mean") -> float:
        vals = [getattr(r.features, attr) for r in self.runs if r.method == method]
        return float(np.mean(vals))


def _operator_model(method: str, operator: int, config: OperatorStudyConfig) -> MotionModel:
    kind = _METHOD_TO_KIND[method]
    base = FEEDBACK_DEFAULTS[kind]
    skill_rng = np.random.default_rng(np.random.SeedSequence((config.seed, operator, 97)))
    skill = math.exp(config.operator_spread * skill_rng.standard_normal())
    return MotionModel(
        kind=kind,
        jitter_sd=base["jitter_sd"] * skill,
        rot_jitter_sd=base["rot_jitter_sd"] * skill,
        seed=_derived_seed(config.seed, operator, FEEDBACK_METHODS.index(method)),
    )


def run_operator_study(config: OperatorStudyConfig, out_dir: str | Path | None = None) -> OperatorStudyResult:
    """Hold-task study: one 4-minute trace per operator x feedback method.

    Emits one feature row per run (displacement histogram features plus the
    repositioning settle metrics) and, when out_dir is given, the per-run
    traces alongside the summary CSV.
    """
    noise = TrackerNoise(
        trans_sd=config.tracker_trans_sd,
        rot_sd=config.tracker_rot_sd,
        rate=config.sample_rate_hz,
    )
    runs: list[OperatorRun] = []
    rows: list[dict] = []
    reference = RigidTransform.identity()
    for operator in range(config.n_operators):
        for method in config.methods:
            model = _operator_model(method, operator, config)
            session = generate_session(model, noise, duration=config.duration_s)
            timed_poses = [
                (s.timestamp, s.marker_pose) for s in session.samples if s is not None
            ]
            trace = displacement_trace(timed_poses, reference, config.center_voxel_offset)
            feats = histogram_features(trace)
            repo = repositioning_result(
                trace, settle_threshold=config.settle_threshold_mm, hold=config.settle_hold_s
            )
            runs.append(
                OperatorRun(
                    operator=operator,
                    method=method,
                    times=trace.times,
                    displacement=trace.displacement,
                    features=feats,
                    repositioning=repo,
                )
            )
            rows.append(
                {
                    "operator": operator,
                    "method": method,
                    "mean_mm": feats.mean,
                    "median_mm": feats.median,
                    "sd_mm": feats.sd,
                    "skewness": feats.skewness,
                    "repositioning_error_mm": repo.error,
                    "time_to_recovery_s": repo.time_to_recovery,
                    "settled": int(repo.settled),
                    "n_samples": len(trace),
                }
            )
    fields = [
        "operator",
        "method",
        "mean_mm",
        "median_mm",
        "sd_mm",
        "skewness",
        "repositioning_error_mm",
        "time_to_recovery_s",
        "settled",
        "n_samples",
    ]
    csv_text = rows_to_csv(fields, rows)
    if out_dir is not None:
        out = Path(out_dir)
        _write(out / "operator_study.csv", csv_text)
        for run in runs:
            trace_rows = [
                {"time_s": float(t), "displacement_mm": float(d)}
                for t, d in zip(run.times, run.displacement)
            ]
            _write(
                out / "traces" / f"operator{run.operator}_{run.method}.csv",
                rows_to_csv(["time_s", "displacement_mm"], trace_rows),
            )
    return OperatorStudyResult(runs=tuple(runs), csv_text=csv_text)


# --------------------------------------------------------------------------
# Repeatability study
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RepeatabilityConfig:
    n_patients: int = 8
    duration_s: float = 480.0
    flash_times_s: tuple[float, float] = (240.0, 390.0)
    fit_span_s: float = 80.0
    dense_rate_hz: float = 1.0
    sparse_rate_hz: float = 0.2
    dims: tuple[int, int, int] = (40, 40, 40)
    noise_sd: float = 0.05
    breathing_amplitude_mm: float = 2.0
    breathing_period_s: float = 4.0
    drift_rate_mm_per_min: float = 1.5
    jitter_sd_mm: float = 0.5
    tracker_trans_sd: float = 0.2
    tracker_rot_sd: float = 0.1
    lesion_steady_range: tuple[float, float] = (0.4, 0.8)
    lesion_beta_range: tuple[float, float] = (0.3, 0.8)
    lesion_tau_range: tuple[float, float] = (40.0, 120.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_patients < 3:
            raise ConfigError("repeatability needs >= 3 virtual patients")
        t1, t2 = self.flash_times_s
        if not 0 < t1 < t2 <= self.duration_s:
            raise ConfigError("flash times must be ordered within the session")
        if t2 - t1 < self.fit_span_s:
            raise ConfigError("flashes closer than one fit span")


@dataclass(frozen=True)
class PatientFits:
    patient: int
    condition: str
    run: str
    fit: FitResult | None
    time_to_steady: float
    error: str = ""


@dataclass(frozen=True)
class RepeatabilityReport:
    icc: dict[tuple[str, str], RepeatabilityResult]
    fits: tuple[PatientFits, ...]
    csv_text: str
    fits_csv_text: str


def _frame_schedule(config: RepeatabilityConfig) -> np.ndarray:
    """Dense sampling inside the replenishment windows, sparse elsewhere."""
    windows = [(t, min(t + config.fit_span_s, config.duration_s)) for t in config.flash_times_s]
    times: list[float] = []
    t = 0.0
    while t < config.duration_s:
        in_window = any(lo <= t <= hi for lo, hi in windows)
        times.append(round(t, 6))
        t += 1.0 / (config.dense_rate_hz if in_window else config.sparse_rate_hz)
        # snap to the start of an upcoming window so dense sampling begins at the flash
        for lo, hi in windows:
            if times[-1] < lo < t:
                t = lo
    return np.asarray(times)


def _patient_kinetics(config: RepeatabilityConfig, rng: np.random.Generator) -> Kinetics:
    kin = Kinetics.default()
    lo, hi = config.lesion_steady_range
    steady = float(rng.uniform(lo, hi))
    beta = float(rng.uniform(*config.lesion_beta_range))
    tau = float(rng.uniform(*config.lesion_tau_range))
    return kin.with_tissue(
        Tissue.LESION,
        TissueKinetics(steady_level=steady, infusion_tau=tau, replenishment_beta=beta),
    )


def simulate_patient_frames(
    config: RepeatabilityConfig, patient: int
) -> tuple[list[VolumeFrame], Kinetics, VOI]:
    """Render one patient's session: frames stamped with measured poses."""
    kin_rng = np.random.default_rng(np.random.SeedSequence((config.seed, patient, 0)))
    kinetics = _patient_kinetics(config, kin_rng)
    lesion_center = (0.0, 0.0, 4.0)
    lesion_radii = (9.0, 8.0, 8.0)
    phantom = build_phantom(
        dims=config.dims, lesion_center=lesion_center, lesion_radii=lesion_radii
    )
    voi = VOI.ellipsoid(lesion_center, lesion_radii)

    model = MotionModel(
        kind="breathing",
        breathing_amplitude=config.breathing_amplitude_mm,
        breathing_period=config.breathing_period_s,
        drift_rate=config.drift_rate_mm_per_min,
        jitter_sd=config.jitter_sd_mm,
        seed=_derived_seed(config.seed, patient, 1),
    )
    tracker = TrackerNoise(
        trans_sd=config.tracker_trans_sd, rot_sd=config.tracker_rot_sd, rate=60.0
    )
    trajectory = MotionTrajectory(model)
    meas_rng = np.random.default_rng(np.random.SeedSequence((config.seed, patient, 2)))
    frame_seed = _derived_seed(config.seed, patient, 3)

    frames: list[VolumeFrame] = []
    for i, t in enumerate(_frame_schedule(config)):
        true_pose = trajectory.at(float(t))
        sample = measure_tracker(true_pose, tracker, meas_rng, timestamp=float(t))
        rendered = render_frame(
            phantom,
            kinetics,
            t=float(t),
            pose=true_pose,
            noise_sd=config.noise_sd,
            flash_times=config.flash_times_s,
            seed=frame_seed ^ i,
        )
        frames.append(
            VolumeFrame(
                timestamp=float(t),
                pose=None if sample is None else sample.marker_pose,
                dims=rendered.dims,
                voxel_size=rendered.voxel_size,
                voxels=rendered.voxels,
            )
        )
    return frames, kinetics, voi


def _fit_condition(
    frames: Sequence[VolumeFrame],
    voi: VOI,
    config: RepeatabilityConfig,
    aligned: bool,
) -> tuple[list[FitResult | None], float, str]:
    masks = None
    use_frames = list(frames)
    if aligned:
        seq = realign_sequence(use_frames, reference_index=0)
        use_frames = list(seq.frames)
        masks = list(seq.validity_masks)
    tic = extract_tic(use_frames, voi, validity_masks=masks)

    infusion = tic.slice_time(0.0, config.flash_times_s[0] - 1e-9)
    try:
        steady = detect_steady_state(infusion)
        t_steady = steady.time_to_steady if steady.reached else math.nan
    except SononavError:
        t_steady = math.nan

    fits: list[FitResult | None] = []
    err = ""
    for tf, segment in split_replenishment_segments(tic, config.flash_times_s):
        segment = segment.slice_time(tf, tf + config.fit_span_s)
        try:
            fits.append(fit_replenishment(segment, min_span=60.0, t0=tf))
        except SononavError as exc:
            fits.append(None)
            err = str(exc)
    return fits, t_steady, err


def run_repeatability(
    config: RepeatabilityConfig, out_dir: str | Path | None = None
) -> RepeatabilityReport:
    """Two-flash repeatability across virtual patients, with and without
    pose-based re-alignment; reports ICC with CI for rBV and rBF."""
    fits: list[PatientFits] = []
    values: dict[tuple[str, str], dict[int, tuple[float, float]]] = {}
    for patient in range(config.n_patients):
        frames, _, voi = simulate_patient_frames(config, patient)
        for condition, aligned in (("unaligned", False), ("aligned", True)):
            run_fits, t_steady, err = _fit_condition(frames, voi, config, aligned)
            for run_name, fit in zip(("R1", "R2"), run_fits):
                fits.append(
                    PatientFits(
                        patient=patient,
                        condition=condition,
                        run=run_name,
                        fit=fit,
                        time_to_steady=t_steady,
                        error=err if fit is None else "",
                    )
                )
            if all(f is not None for f in run_fits) and len(run_fits) == 2:
                r1, r2 = run_fits
                for param, pair in (
                    ("rBV", (r1.rBV, r2.rBV)),
                    ("rBF", (r1.rBF, r2.rBF)),
                ):
                    if min(pair) > 0:
                        values.setdefault((param, condition), {})[patient] = pair

    icc: dict[tuple[str, str], RepeatabilityResult] = {}
    rows = []
    for param in ("rBV", "rBF"):
        for condition in ("unaligned", "aligned"):
            pairs = list(values.get((param, condition), {}).values())
            result = icc_pairs(pairs)
            icc[(param, condition)] = result
            rows.append(
                {
                    "parameter": param,
                    "condition": condition,
                    "icc": result.icc,
                    "ci_lo": result.ci95[0],
                    "ci_hi": result.ci95[1],
                    "band": result.band,
                    "n_pairs": result.n_pairs,
                }
            )
    csv_text = rows_to_csv(
        ["parameter", "condition", "icc", "ci_lo", "ci_hi", "band", "n_pairs"], rows
    )

    fit_rows = []
    for pf in fits:
        fit_rows.append(
            {
                "patient": pf.patient,
                "session": 0,
                "run": pf.run,
                "condition": pf.condition,
                "rBV": pf.fit.rBV if pf.fit else math.nan,
                "rBF": pf.fit.rBF if pf.fit else math.nan,
                "beta": pf.fit.beta if pf.fit else math.nan,
                "r2": pf.fit.r_squared if pf.fit else math.nan,
                "time_to_steady_s": pf.time_to_steady,
                "error": pf.error,
            }
        )
    fits_csv_text = rows_to_csv(
        [
            "patient",
            "session",
            "run",
            "condition",
            "rBV",
            "rBF",
            "beta",
            "r2",
            "time_to_steady_s",
            "error",
        ],
        fit_rows,
    )
    if out_dir is not None:
        out = Path(out_dir)
        _write(out / "repeatability_icc.csv", csv_text)
        _write(out / "repeatability_fits.csv", fits_csv_text)
    return RepeatabilityReport(icc=icc, fits=tuple(fits), csv_text=csv_text, fits_csv_text=fits_csv_text)


# --------------------------------------------------------------------------
# Batch quantification of session files
# --------------------------------------------------------------------------


def quantify_session_messages(
    messages,
    voi: VOI,
    realign: bool = False,
    dynamic_range: float = 60.0,
    min_span: float = 60.0,
    fit_span: float | None = None,
) -> tuple[list[dict], object]:
    """Quantify an in-memory message stream; one result row per flash."""
    frames, flashes, _controls = frames_from_messages(messages)
    if not frames:
        raise InsufficientDataError("session contains no frames")
    masks = None
    if realign:
        posed = [i for i, f in enumerate(frames) if f.pose is not None]
        if not posed:
            raise InsufficientDataError("no posed frames to realign against")
        seq = realign_sequence(frames, reference_index=posed[0])
        frames = list(seq.frames)
        masks = list(seq.validity_masks)
    tic = extract_tic(frames, voi, dynamic_range=dynamic_range, validity_masks=masks)

    first_flash = min(flashes) if flashes else math.inf
    steady = None
    try:
        steady = detect_steady_state(tic.slice_time(-math.inf, first_flash - 1e-9))
    except SononavError:
        steady = None

    rows = []
    for tf, segment in split_replenishment_segments(tic, flashes, min_span=min_span):
        if fit_span is not None:
            segment = segment.slice_time(tf, tf + fit_span)
        row = {"flash_s": tf, "realigned": int(realign)}
        try:
            fit = fit_replenishment(segment, min_span=min_span, t0=tf)
            row.update(
                rBV=fit.rBV,
                rBF=fit.rBF,
                beta=fit.beta,
                r2=fit.r_squared,
                rms_residual=fit.rms_residual,
                error="",
            )
        except SononavError as exc:
            row.update(rBV=math.nan, rBF=math.nan, beta=math.nan, r2=math.nan,
                       rms_residual=math.nan, error=str(exc))
        rows.append(row)
    return rows, steady


QUANTIFY_FIELDS = [
    "file",
    "flash_s",
    "realigned",
    "rBV",
    "rBF",
    "beta",
    "r2",
    "rms_residual",
    "steady_reached",
    "time_to_steady_s",
    "error",
]


def quantify_batch(
    paths: Sequence[str | Path],
    voi: VOI | None = None,
    realign: bool = False,
    dynamic_range: float = 60.0,
    min_span: float = 60.0,
) -> str:
    """Quantify recorded session files into a CSV (one row per file x flash)."""
    rows: list[dict] = []
    for path in paths:
        path = Path(path)
        try:
            log = read_session_log(path)
            file_voi = voi
            if file_voi is None:
                voi_doc = log.header.get("config", {}).get("voi")
                if voi_doc is None:
                    raise ConfigError(f"{path.name}: no VOI given and none in the session header")
                file_voi = VOI.from_dict(voi_doc)
            file_rows, steady = quantify_session_messages(
                log.messages,
                file_voi,
                realign=realign,
                dynamic_range=dynamic_range,
                min_span=min_span,
            )
            for row in file_rows:
                row["file"] = path.name
                row["steady_reached"] = int(bool(steady and steady.reached))
                row["time_to_steady_s"] = steady.time_to_steady if steady else math.nan
                rows.append(row)
        except (SononavError, OSError) as exc:
            rows.append(
                {
                    "file": path.name,
                    "flash_s": math.nan,
                    "realigned": int(realign),
                    "rBV": math.nan,
                    "rBF": math.nan,
                    "beta": math.nan,
                    "r2": math.nan,
                    "rms_residual": math.nan,
                    "steady_reached": 0,
                    "time_to_steady_s": math.nan,
                    "error": str(exc),
                }
            )
    return rows_to_csv(QUANTIFY_FIELDS, rows)
