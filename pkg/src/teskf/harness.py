"""Monte-Carlo runs, RMSE/NEES metrics and report files."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng
from .config import RunConfig, dump_config
from .filters import Filter
from .lie import log_so3
from .model import VinsState, boxplus
from .propagation import efficient_propagate, integrate_imu, naive_propagate, samples_from_arrays
from .simulator import gen_frames, gen_imu
from .transform import build_transform

log = logging.getLogger(__name__)

COLUMNS = ("err_rot_deg", "err_yaw_deg", "err_pos_m", "nees_rot", "nees_yaw", "nees_pos", "nees_pose")


@dataclass
class MetricsRecord:
    run: int
    t: float
    filter: str
    err_rot_deg: float
    err_yaw_deg: float
    err_pos_m: float
    nees_rot: float
    nees_yaw: float
    nees_pos: float
    nees_pose: float


def nees(err, cov) -> float:
    """Normalized NEES ``e^T P^-1 e / dim``; NaN when ``P`` stays singular."""
    e = np.atleast_1d(np.asarray(err, dtype=float))
    P = np.atleast_2d(np.asarray(cov, dtype=float))
    if e.size == 0:
        raise ValueError("empty error vector")
    for reg in (0.0, 1e-12 * max(np.trace(P), 1e-300)):
        try:
            L = np.linalg.cholesky(P + reg * np.eye(e.size))
        except np.linalg.LinAlgError:
            continue
        z = np.linalg.solve(L, e)
        return float(z @ z) / e.size
    return float("nan")


def pose_errors(R, p, R_hat, p_hat, P6):
    """Metric row for one filter at one time: see ``COLUMNS``."""
    th = log_so3(R @ R_hat.T)
    dp = p - p_hat
    e = np.concatenate([th, dp])
    return (
        float(np.degrees(np.linalg.norm(th))),
        float(np.degrees(abs(th[2]))),
        float(np.linalg.norm(dp)),
        nees(th, P6[:3, :3]),
        nees(th[2:3], P6[2:3, 2:3]),
        nees(dp, P6[3:, 3:]),
        nees(e, P6),
    )


def initial_covariance(cfg: RunConfig) -> np.ndarray:
    d = np.concatenate([
        np.full(3, np.deg2rad(cfg.init_sigma_theta_deg)), np.full(3, cfg.init_sigma_p),
        np.full(3, cfg.init_sigma_v), np.full(3, cfg.init_sigma_bg), np.full(3, cfg.init_sigma_ba),
    ])
    return np.diag(d**2)


def stream_digest(imu, frames) -> str:
    h = hashlib.sha256()
    for a in (imu.t, imu.gyro, imu.accel):
        h.update(np.ascontiguousarray(a).tobytes())
    for fr in frames:
        h.update(np.float64(fr.t).tobytes())
        h.update(np.ascontiguousarray(fr.ids).tobytes())
        h.update(np.ascontiguousarray(fr.uv).tobytes())
    return h.hexdigest()


def run_single(cfg: RunConfig, run: int, updates: bool = False) -> dict:
    """One Monte-Carlo run of every configured filter on a shared world.

    Returns ``{"run", "t", "metrics": {kind: (T, 7) array}, "digest", "updates"}``.
    """
    world = cfg.world(run)
    imu = gen_imu(world)
    frames = gen_frames(world, imu)
    truth0 = VinsState(imu.truth_state(0), {})
    P0 = initial_covariance(cfg)
    e = rng.normals(rng.stream(cfg.seed, run, "init"), 15) * np.sqrt(np.diag(P0))
    est0 = boxplus(truth0, -e)
    step = world.imu_per_frame
    times = np.array([fr.t for fr in frames])
    out = {"run": run, "t": times, "metrics": {}, "digest": stream_digest(imu, frames), "updates": {}}
    for kind in cfg.filters:
        f = Filter(kind, est0, P0, world.noise, world.cam, cfg.filter_options())
        rows = np.zeros((len(frames), len(COLUMNS)))
        reps = []
        for k, fr in enumerate(frames):
            if k > 0:
                a, b = (k - 1) * step, k * step + 1
                f.propagate(imu.t[a:b], imu.gyro[a:b], imu.accel[a:b])
            rep = f.process_frame(fr)
            if updates:
                reps.append(rep.to_json())
            j = k * step
            rows[k] = pose_errors(imu.R[j], imu.p[j], f.state.imu.R, f.state.imu.p, f.pose_covariance())
        out["metrics"][kind] = rows
        if updates:
            out["updates"][kind] = reps
    return out


def _safe_run(args):
    cfg, run, updates = args
    try:
        return run_single(cfg, run, updates)
    except Exception as exc:  # a failed run is reported, the batch continues
        return {"run": run, "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()}


def run_monte_carlo(cfg: RunConfig, n_runs: int | None = None, jobs: int | None = None, updates: bool = False) -> list:
    n_runs = cfg.n_runs if n_runs is None else n_runs
    jobs = cfg.jobs if jobs is None else jobs
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    tasks = [(cfg, r, updates) for r in range(n_runs)]
    if jobs <= 1:
        results = [_safe_run(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_safe_run, tasks))
    for r in results:
        if "error" in r:
            log.error("run %d failed: %s", r["run"], r["error"])
    return results


def to_records(results) -> list:
    recs = []
    for res in results:
        if "error" in res:
            continue
        for kind, rows in res["metrics"].items():
            for t, row in zip(res["t"], rows):
                recs.append(MetricsRecord(res["run"], float(t), kind, *map(float, row)))
    return recs


def summarize(records, nees_window: float = 30.0, bins: int = 40, hist_max: float = 10.0) -> dict:
    """Per-filter aggregates: time-averaged RMSE, run-averaged NEES series, histogram."""
    if not records:
        raise ValueError("no records")
    kinds = list(dict.fromkeys(r.filter for r in records))
    t_end = max(r.t for r in records)
    rep = {}
    edges = np.linspace(0.0, hist_max, bins + 1)
    for kind in kinds:
        rs = [r for r in records if r.filter == kind]
        ts = np.array(sorted({r.t for r in rs}))
        idx = {t: i for i, t in enumerate(ts)}
        sq = {c: np.zeros(len(ts)) for c in COLUMNS}
        cnt = np.zeros(len(ts))
        for r in rs:
            i = idx[r.t]
            cnt[i] += 1
            for c in COLUMNS:
                v = getattr(r, c)
                sq[c][i] += v * v if c.startswith("err") else v
        rmse = {c: np.sqrt(sq[c] / cnt) for c in COLUMNS if c.startswith("err")}
        nees_t = {c: sq[c] / cnt for c in COLUMNS if c.startswith("nees")}
        late = ts >= t_end - nees_window
        pose = np.array([r.nees_pose for r in rs])
        finite = pose[np.isfinite(pose)]
        counts, _ = np.histogram(np.clip(finite, 0.0, hist_max), bins=edges)
        overflow = int(np.sum(finite >= hist_max))
        counts[-1] -= overflow
        rep[kind] = {
            "runs": len({r.run for r in rs}),
            "rmse_rot_deg": float(np.mean(rmse["err_rot_deg"])),
            "rmse_yaw_deg": float(np.mean(rmse["err_yaw_deg"])),
            "rmse_pos_m": float(np.mean(rmse["err_pos_m"])),
            "nees_mean": {c: float(np.nanmean(v)) for c, v in nees_t.items()},
            "nees_late_mean": {c: float(np.nanmean(v[late])) for c, v in nees_t.items()},
            "nees_window_s": nees_window,
            "nees_series": {"t": ts.tolist(), **{c: v.tolist() for c, v in nees_t.items()}},
            "nees_hist": {
                "edges": edges.tolist(), "counts": counts.tolist(), "overflow": overflow,
                "nan": int(pose.size - finite.size),
            },
        }
    return rep


def write_outputs(out: Path, cfg: RunConfig, results, summary: dict | None = None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "effective_config.json")
    recs = to_records(results)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("run", "t") + ("filter",) + COLUMNS)
        for r in recs:
            w.writerow([r.run, repr(r.t), r.filter] + [repr(getattr(r, c)) for c in COLUMNS])
    summary = summary if summary is not None else (
        summarize(recs, cfg.nees_window, cfg.nees_bins, cfg.nees_hist_max) if recs else {})
    failures = [{"run": r["run"], "error": r["error"]} for r in results if "error" in r]
    doc = {"filters": summary, "failures": failures, "n_runs": len(results),
           "stream_digests": [r.get("digest") for r in results]}
    (out / "summary.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    with open(out / "nees_hist.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("filter", "bin_lo", "bin_hi", "count"))
        for kind, s in summary.items():
            e, c = s["nees_hist"]["edges"], s["nees_hist"]["counts"]
            for i in range(len(c)):
                w.writerow([kind, repr(e[i]), repr(e[i + 1]), c[i]])
            w.writerow([kind, repr(e[-1]), "inf", s["nees_hist"]["overflow"]])
    for res in results:
        for kind, lines in res.get("updates", {}).items():
            with open(out / f"updates_run{res['run']}_{kind}.jsonl", "w") as fh:
                fh.write("\n".join(lines) + "\n")
    return doc


# -- propagation benchmark ------------------------------------------------------


def _bench_case(cfg: RunConfig, m: int):
    world = replace(cfg, duration=cfg.bench_interval + 0.1).world(0)
    n_samples = int(round(cfg.bench_interval * cfg.imu_hz)) + 1
    imu = gen_imu(world)
    sl = slice(0, n_samples)
    t, gyro, accel = imu.t[sl], imu.gyro[sl], imu.accel[sl]
    gen = rng.stream(cfg.seed, m, "init")
    lms = rng.normals(gen, (m, 3)) * 5.0
    st = VinsState(imu.truth_state(0), {i: lms[i] for i in range(m)})
    A = rng.normals(gen, (st.dim, st.dim))
    P = A @ A.T / st.dim + np.eye(st.dim)
    samples = samples_from_arrays(t, gyro, accel)

    def efficient():
        acc = integrate_imu(st.imu, t, gyro, accel, world.noise)
        post = VinsState(acc.end, st.landmarks)
        return efficient_propagate(P, acc, build_transform(st), build_transform(post))

    def naive():
        return naive_propagate(P, samples, st, world.noise)

    return efficient, naive


def bench_propagation(cfg: RunConfig, landmarks=None, trials: int | None = None) -> list:
    """Wall-clock of efficient vs naive transformed propagation over one interval.

    Returns rows ``(m, method, mean_ns, p95_ns, median_ns)``; timings are not
    reproducible across machines.
    """
    landmarks = cfg.bench_landmarks if landmarks is None else landmarks
    trials = cfg.bench_trials if trials is None else trials
    rows = []
    for m in landmarks:
        fns = dict(zip(("efficient", "naive"), _bench_case(cfg, int(m))))
        for name, fn in fns.items():
            fn()  # warm-up, including JIT compilation
            ns = np.empty(trials)
            for i in range(trials):
                t0 = time.perf_counter_ns()
                fn()
                ns[i] = time.perf_counter_ns() - t0
            rows.append((int(m), name, float(ns.mean()), float(np.percentile(ns, 95)), float(np.median(ns))))
    return rows
