"""Experiment orchestration: closed-loop runs, decoding, and artifacts.

Per engine step the harness advances the world, turns the depth reading and
odometry into spike injections, and steps the network. Heading decoding,
map decoding, the Gaussian posterior audit, and metrics run on the recorded
raster afterwards. All randomness flows from one seeded generator per
trial, so identical configs reproduce byte-identical artifacts.

Modes:
* ``full``          -- the complete loop.
* ``odometry_only`` -- likelihood input to the Bayesian neurons removed.
* ``vision_only``   -- speed-cell input silenced (no bump shifts).
* ``maze2d``        -- the robot visits the environment waypoints in turn,
  one place cell per waypoint; per-place maps superimpose into a 2D map.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import codec, engine as eng, network, world

__all__ = [
    "ExperimentConfig",
    "TrialResult",
    "RunArtifacts",
    "run_trial",
    "run_experiment",
    "run_posterior_audit",
    "replay",
]

MODES = ("full", "odometry_only", "vision_only", "maze2d")


@dataclass(frozen=True)
class ExperimentConfig:
    environment: str = "env2"
    duration: float = 120.0
    dt: float = 0.01
    mode: str = "full"
    seed: int = 0
    trials: int = 1
    out: str | None = None
    omega: float = 10.0                # commanded angular velocity, deg/s
    range_noise_sigma: float = 0.02
    dropout_prob: float = 0.0
    omega_noise_sigma: float = 1.0
    omega_bias: float = 0.3
    decode_window: int = 50            # steps
    decode_every: int = 10             # steps
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"invalid mode {self.mode!r}; one of {MODES}")
        steps = self.duration / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("duration/dt must be integral")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    def to_dict(self) -> dict:
        return {
            "environment": self.environment,
            "duration": self.duration,
            "dt": self.dt,
            "mode": self.mode,
            "seed": self.seed,
            "trials": self.trials,
            "out": self.out,
            "omega": self.omega,
            "range_noise_sigma": self.range_noise_sigma,
            "dropout_prob": self.dropout_prob,
            "omega_noise_sigma": self.omega_noise_sigma,
            "omega_bias": self.omega_bias,
            "decode_window": self.decode_window,
            "decode_every": self.decode_every,
            "overrides": dict(self.overrides),
        }

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        return ExperimentConfig(**doc)


@dataclass
class RunArtifacts:
    raster: Path
    heading: Path
    trajectory: Path
    map_pgm: Path
    map_json: Path
    metrics: Path
    config_snapshot: Path

    def all_paths(self) -> list[Path]:
        return [self.raster, self.heading, self.trajectory, self.map_pgm,
                self.map_json, self.metrics, self.config_snapshot]


@dataclass
class TrialResult:
    config: ExperimentConfig
    trial: int
    raster: eng.SpikeRaster
    true_heading: np.ndarray        # per step
    reported_omega: np.ndarray      # per step
    reading: np.ndarray             # per step (inf = no return)
    decode_steps: np.ndarray        # window-center step of each decode point
    decoded: np.ndarray             # decoded heading per decode point (nan ok)
    true_at_decode: np.ndarray
    error: np.ndarray               # circular |decoded - true|
    map_strengths: np.ndarray       # (n_place, n_bins, n_levels) in [0, 1]
    grid: codec.GridMap
    pops: network.SlamPopulations
    metrics: dict
    artifacts: RunArtifacts | None = None


def _speed_injections(reported_omega: float, dt: float, resolution: float,
                      acc: list[float]) -> tuple[bool, bool]:
    """Deterministic rate-to-spike conversion via phase accumulators.

    Accumulates |omega|*dt in degrees; each time a full bin's worth of
    rotation has been reported, the matching speed cell spikes once, which
    shifts the attractor one bin. ``acc`` is [cw_phase, ccw_phase].
    """
    omega_max = 60.0
    rate_max = omega_max / resolution  # one spike <=> one bin of rotation
    cw_rate, ccw_rate = codec.encode_speed(reported_omega,
                                           omega_max=omega_max,
                                           rate_max=rate_max)
    acc[0] += cw_rate * dt
    acc[1] += ccw_rate * dt
    cw = acc[0] >= 1.0
    ccw = acc[1] >= 1.0
    if cw:
        acc[0] -= 1.0
    if ccw:
        acc[1] -= 1.0
    return cw, ccw


def _build(config: ExperimentConfig) -> tuple[eng.Engine, network.SlamPopulations,
                                              network.SlamConfig]:
    overrides = dict(config.overrides)
    if config.mode == "maze2d":
        env = world.get_environment(config.environment)
        overrides.setdefault("n_place", max(len(env.waypoints), 1))
    slam_cfg = network.SlamConfig.from_overrides(overrides)
    spec, pops = network.assemble(
        slam_cfg, connect_ol_to_bi=(config.mode != "odometry_only"))
    return eng.compile(spec), pops, slam_cfg


def run_trial(config: ExperimentConfig, trial: int = 0) -> TrialResult:
    """Run one seeded closed-loop trial and decode everything."""
    rng = np.random.default_rng(config.seed + trial)
    env = world.get_environment(config.environment)
    engine, pops, slam_cfg = _build(config)
    ring = pops.ring
    n_bins = ring.n_bins
    levels = codec.DistanceLevels()
    sensor = world.SensorModel(
        max_range=levels.max_range,
        range_noise_sigma=config.range_noise_sigma,
        dropout_prob=config.dropout_prob,
    )
    odom = world.OdometryModel(
        omega_noise_sigma=config.omega_noise_sigma,
        omega_bias=config.omega_bias,
    )

    steps = config.steps
    waypoints = env.waypoints if config.mode == "maze2d" else ((0.0, 0.0),)
    if config.mode == "maze2d" and not waypoints:
        raise ValueError(f"environment {env.name} has no waypoints")
    seg_steps = steps // len(waypoints)

    state = world.RobotState(position=waypoints[0], heading=0.0,
                             omega=config.omega)
    seed_bin = ring.bin_of(state.heading)

    true_heading = np.zeros(steps)
    reported_omega = np.zeros(steps)
    reading_log = np.zeros(steps)
    hd_window = np.zeros((10, n_bins), dtype=np.int64)  # rolling estimate buffer
    hd_headings = pops.hd_headings
    acc = [0.0, 0.0]
    b_est = seed_bin

    raster_steps: list[np.ndarray] = []
    raster_ids: list[np.ndarray] = []

    for t in range(steps):
        place_idx = min(t // seg_steps, len(waypoints) - 1)
        if config.mode == "maze2d" and t % seg_steps == 0:
            state = replace(state, position=waypoints[place_idx])

        state, rep = world.step_world(state, config.dt, odom, rng)
        reading = world.raycast(env, state.position, state.heading, sensor, rng)
        true_heading[t] = state.heading
        reported_omega[t] = rep
        reading_log[t] = reading

        ext: list[tuple[int, float]] = [(pops.place[place_idx], 1.0)]
        if t < 5:
            for d in range(-2, 3):
                ext.append((pops.hd[(seed_bin + d) % n_bins], 2.0))

        if config.mode != "vision_only":
            cw, ccw = _speed_injections(rep, config.dt, ring.resolution, acc)
            if cw:
                ext.append((pops.speed_cw, 1.0))
            if ccw:
                ext.append((pops.speed_ccw, 1.0))

        sens, inv = codec.encode_distance(reading, b_est, levels, n_bins)
        for (b, l) in sens:
            ext.append((pops.sensory.at(b, l), 1.0))
        for (b, l) in inv:
            ext.append((pops.inverse_sensory.at(b, l), 1.0))

        spiked = engine.step(ext)
        if len(spiked):
            raster_ids.append(spiked)
            raster_steps.append(np.full(len(spiked), t, dtype=np.int64))

        # rolling head-direction estimate for egocentric input placement
        row = t % hd_window.shape[0]
        hd_window[row] = 0
        hd_spk = spiked[(spiked >= pops.hd.start) &
                        (spiked < pops.hd.start + n_bins)] - pops.hd.start
        hd_window[row, hd_spk] = 1
        est = codec.decode_heading(hd_window.sum(axis=0), hd_headings)
        if est is not None:
            b_est = ring.bin_of(est)

    raster = eng.SpikeRaster(
        steps=np.concatenate(raster_steps) if raster_steps else np.empty(0, np.int64),
        neuron_ids=np.concatenate(raster_ids) if raster_ids else np.empty(0, np.int64),
        step_count=steps,
        neuron_count=engine.n_neurons,
        populations=list(engine.populations),
    )

    # ---- decoding -------------------------------------------------------
    win = config.decode_window
    dec_steps, decoded, true_dec = [], [], []
    for t_hi in range(win, steps + 1, config.decode_every):
        counts = raster.counts(pops.hd.ids, t_hi - win, t_hi)
        center = t_hi - win // 2
        est = codec.decode_heading(counts, hd_headings)
        dec_steps.append(center)
        decoded.append(float("nan") if est is None else est)
        true_dec.append(true_heading[center - 1])
    dec_steps = np.asarray(dec_steps)
    decoded = np.asarray(decoded)
    true_dec = np.asarray(true_dec)
    error = np.array([
        float("nan") if math.isnan(d) else codec.circular_error(t, d)
        for t, d in zip(true_dec, decoded)
    ])

    map_strengths = _map_strengths(config, raster, pops, seg_steps)
    grid = _decode_grid(config, env, pops, levels, map_strengths, waypoints)

    hm = codec.heading_metrics(true_dec, decoded)
    f1 = codec.map_f1(grid, env.segments)
    metrics = {
        "heading": hm,
        "map": f1,
        "mode": config.mode,
        "environment": config.environment,
        "trial": trial,
        "seed": config.seed + trial,
    }
    if config.mode == "full":
        audit = posterior_audit_series(config, raster, pops)
        metrics["posterior_audit"] = audit["summary"]

    return TrialResult(
        config=config, trial=trial, raster=raster,
        true_heading=true_heading, reported_omega=reported_omega,
        reading=reading_log, decode_steps=dec_steps, decoded=decoded,
        true_at_decode=true_dec, error=error,
        map_strengths=map_strengths, grid=grid, pops=pops, metrics=metrics,
    )


def _map_strengths(config: ExperimentConfig, raster: eng.SpikeRaster,
                   pops: network.SlamPopulations, seg_steps: int) -> np.ndarray:
    """Per (place, bin, level) recall activity over each map's final window.

    A consistently learned map neuron recalls on nearly every step once its
    place synapse saturates, so the spike rate over the last revolution of
    its place segment separates learned from unlearned cleanly.
    """
    n_bins = pops.ring.n_bins
    n_levels = pops.n_levels
    steps_per_rev = int(round(360.0 / (abs(config.omega) * config.dt)))
    out = np.zeros((len(pops.map), n_bins, n_levels))
    for p, m in enumerate(pops.map):
        t_hi = min((p + 1) * seg_steps, raster.step_count)
        t_lo = max(t_hi - steps_per_rev, 0)
        span = max(t_hi - t_lo, 1)
        counts = raster.counts(m.ids, t_lo, t_hi).reshape(n_bins, n_levels)
        out[p] = counts / span
    return out


def _decode_grid(config: ExperimentConfig, env: world.Environment,
                 pops: network.SlamPopulations, levels: codec.DistanceLevels,
                 strengths: np.ndarray, waypoints) -> codec.GridMap:
    half = env.extent / 2.0
    n_cells = int(round(env.extent / 0.2))
    grid = codec.GridMap.empty(n=n_cells, origin=(-half, -half))
    for p, pos in enumerate(waypoints):
        codec.decode_map(strengths[p], levels, pos,
                         resolution_deg=pops.ring.resolution,
                         threshold=0.25, grid=grid)
    return grid


def posterior_audit_series(config: ExperimentConfig, raster: eng.SpikeRaster,
                           pops: network.SlamPopulations) -> dict:
    """Compare the decoded Bayesian posterior against the Gaussian product.

    At each decoding window, fits Gaussians to the head-direction,
    likelihood, and Bayesian populations; where the two cue fits are valid
    and fusable, reports |mu_decoded - mu_optimal| and
    |sigma_decoded - sigma_optimal|.
    """
    win = config.decode_window
    headings = pops.hd_headings
    rows = []
    skipped = {"ol_invalid": 0, "hd_invalid": 0, "bi_invalid": 0,
               "separation": 0}
    for t_hi in range(win, raster.step_count + 1, config.decode_every):
        t_lo = t_hi - win
        g_hd = codec.fit_gaussian(raster.counts(pops.hd.ids, t_lo, t_hi),
                                  headings)
        g_ol = codec.fit_gaussian(raster.counts(pops.likelihood.ids, t_lo, t_hi),
                                  headings)
        g_bi = codec.fit_gaussian(raster.counts(pops.bayes.ids, t_lo, t_hi),
                                  headings)
        if g_hd is None:
            skipped["hd_invalid"] += 1
            continue
        if g_ol is None:
            skipped["ol_invalid"] += 1
            continue
        if g_bi is None:
            skipped["bi_invalid"] += 1
            continue
        if codec.circular_error(g_hd.mu, g_ol.mu) >= 90.0:
            skipped["separation"] += 1
            continue
        opt = codec.optimal_posterior(g_hd, g_ol)
        rows.append({
            "step": t_hi - win // 2,
            "d_mu": codec.circular_error(g_bi.mu, opt.mu),
            "d_sigma": abs(g_bi.sigma - opt.sigma),
        })
    d_mu = np.array([r["d_mu"] for r in rows]) if rows else np.empty(0)
    d_sigma = np.array([r["d_sigma"] for r in rows]) if rows else np.empty(0)
    summary = {
        "n_windows": len(rows),
        "skipped": skipped,
        "max_d_mu": float(d_mu.max()) if len(d_mu) else float("nan"),
        "max_d_sigma": float(d_sigma.max()) if len(d_sigma) else float("nan"),
        "mean_d_mu": float(d_mu.mean()) if len(d_mu) else float("nan"),
        "mean_d_sigma": float(d_sigma.mean()) if len(d_sigma) else float("nan"),
    }
    return {"summary": summary, "rows": rows}


def run_posterior_audit(config: ExperimentConfig) -> dict:
    """Full-mode run plus the decoded-vs-optimal posterior comparison."""
    if config.mode != "full":
        raise ValueError("posterior audit requires full mode")
    result = run_trial(config)
    audit = posterior_audit_series(config, result.raster, result.pops)
    audit["heading"] = result.metrics["heading"]
    return audit


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_artifacts(result: TrialResult, out_dir: Path) -> RunArtifacts:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    art = RunArtifacts(
        raster=out_dir / "raster.csv",
        heading=out_dir / "heading.csv",
        trajectory=out_dir / "trajectory.csv",
        map_pgm=out_dir / "map.pgm",
        map_json=out_dir / "map.json",
        metrics=out_dir / "metrics.json",
        config_snapshot=out_dir / "config.json",
    )
    result.raster.to_csv(art.raster)
    with open(art.heading, "w") as fh:
        fh.write("step,true,decoded,error\n")
        for s, tr, de, er in zip(result.decode_steps, result.true_at_decode,
                                 result.decoded, result.error):
            fh.write(f"{s},{_fmt(tr)},{_fmt(de)},{_fmt(er)}\n")
    with open(art.trajectory, "w") as fh:
        fh.write("step,true_heading,reported_omega,depth_reading\n")
        for t in range(len(result.true_heading)):
            fh.write(f"{t},{_fmt(result.true_heading[t])},"
                     f"{_fmt(result.reported_omega[t])},"
                     f"{_fmt(result.reading[t])}\n")
    result.grid.to_pgm(art.map_pgm)
    with open(art.map_json, "w") as fh:
        fh.write(result.grid.sidecar_json() + "\n")
    with open(art.metrics, "w") as fh:
        json.dump(result.metrics, fh, indent=1, sort_keys=True)
        fh.write("\n")
    snapshot = result.config.to_dict()
    snapshot["trial"] = result.trial
    with open(art.config_snapshot, "w") as fh:
        json.dump(snapshot, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return art


def run_experiment(config: ExperimentConfig) -> list[TrialResult]:
    """Run all trials; writes per-trial artifacts and a summary if out set."""
    results = []
    for trial in range(config.trials):
        t0 = time.perf_counter()
        result = run_trial(config, trial)
        result.metrics["wall_seconds"] = round(time.perf_counter() - t0, 3)
        if config.out is not None:
            trial_dir = Path(config.out) / f"trial{trial:02d}"
            result.artifacts = write_artifacts(result, trial_dir)
        results.append(result)
    if config.out is not None:
        summary = {
            "config": config.to_dict(),
            "trials": [r.metrics for r in results],
            "mean_heading_error_deg": float(np.mean(
                [r.metrics["heading"]["mean_error_deg"] for r in results])),
        }
        with open(Path(config.out) / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return results


def replay(raster_path, config_path) -> dict:
    """Re-decode a saved raster; returns metrics identical to the run's.

    The world trajectory is regenerated deterministically from the config
    snapshot (rng draws do not depend on engine state).
    """
    with open(config_path) as fh:
        doc = json.load(fh)
    trial = doc.pop("trial", 0)
    config = ExperimentConfig.from_dict(doc)
    rng = np.random.default_rng(config.seed + trial)
    env = world.get_environment(config.environment)
    levels = codec.DistanceLevels()
    sensor = world.SensorModel(max_range=levels.max_range,
                               range_noise_sigma=config.range_noise_sigma,
                               dropout_prob=config.dropout_prob)
    odom = world.OdometryModel(omega_noise_sigma=config.omega_noise_sigma,
                               omega_bias=config.omega_bias)
    waypoints = env.waypoints if config.mode == "maze2d" else ((0.0, 0.0),)
    seg_steps = config.steps // len(waypoints)
    state = world.RobotState(position=waypoints[0], heading=0.0,
                             omega=config.omega)
    true_heading = np.zeros(config.steps)
    for t in range(config.steps):
        place_idx = min(t // seg_steps, len(waypoints) - 1)
        if config.mode == "maze2d" and t % seg_steps == 0:
            state = replace(state, position=waypoints[place_idx])
        state, _ = world.step_world(state, config.dt, odom, rng)
        world.raycast(env, state.position, state.heading, sensor, rng)
        true_heading[t] = state.heading

    raster = eng.SpikeRaster.from_csv(raster_path)
    slam_cfg = network.SlamConfig.from_overrides(
        dict(config.overrides) if config.mode != "maze2d" else
        {**config.overrides, "n_place": max(len(waypoints), 1)})
    _, pops = network.assemble(slam_cfg)
    needed = pops.bayes.start + pops.bayes.count
    if raster.neuron_count < needed:
        # silent tail populations do not appear in the CSV; pad
        raster.neuron_count = needed

    win = config.decode_window
    headings = pops.hd_headings
    dec, tru = [], []
    for t_hi in range(win, config.steps + 1, config.decode_every):
        counts = raster.counts(pops.hd.ids, t_hi - win, t_hi)
        est = codec.decode_heading(counts, headings)
        dec.append(float("nan") if est is None else est)
        tru.append(true_heading[t_hi - win // 2 - 1])
    hm = codec.heading_metrics(np.asarray(tru), np.asarray(dec))

    map_strengths = _map_strengths(config, raster, pops, seg_steps)
    grid = _decode_grid(config, env, pops, levels, map_strengths, waypoints)
    f1 = codec.map_f1(grid, env.segments)
    metrics = {
        "heading": hm,
        "map": f1,
        "mode": config.mode,
        "environment": config.environment,
        "trial": trial,
        "seed": config.seed + trial,
    }
    if config.mode == "full":
        audit = posterior_audit_series(config, raster, pops)
        metrics["posterior_audit"] = audit["summary"]
    return metrics
