"""Configuration, the particle reversal protocol and the phase-space verification suite."""

import csv
import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import constants

from . import analysis, wigner
from .kernels import CollapseParams, diffusion_constant, dp_jump_kernel
from .md import checkpoint
from .md.engine import BlowUpError, DynamicsSpec, ParticleSystem, equilibrate, join_systems, make_system, \
    quantize, reverse_momenta, run

__all__ = [
    "ConfigError",
    "ProtocolError",
    "RunConfig",
    "STAGES",
    "RERUN_MODES",
    "run_protocol",
    "profile_metrics",
    "WIGNER_CHECKS",
    "run_wigner_suite",
    "Species",
    "ARGON",
    "convert_units",
]

RERUN_MODES = ("deterministic", "grw_noise", "dissipative_grw")
STAGES = ("equilibrate_left", "equilibrate_right", "join", "forward", "reverse") + tuple(
    f"rerun_{m}" for m in RERUN_MODES)


class ConfigError(ValueError):
    """Invalid configuration value or unknown key."""


class ProtocolError(RuntimeError):
    """Stage dependency violated or dynamics blew up."""

    def __init__(self, message: str, stage: str | None = None, step: int | None = None):
        super().__init__(message)
        self.stage = stage
        self.step = step


@dataclass(frozen=True)
class RunConfig:
    """Parameters of the reversal protocol in reduced Lennard-Jones units.

    ``gamma`` defaults to ``noise_amplitude**2 / (2 noise_temp)``. The box is
    square with side ``sqrt(n / density)``; each half is half as wide.
    """

    density: float = 0.7
    n: int = 16384
    dt: float = 0.0025
    t_rev: float = 50.0
    sigma_left: float = 0.75
    sigma_right: float = 0.85
    noise_amplitude: float = 1e-4
    noise_temp: float = 0.5863
    gamma: float | None = None
    seed: int = 1
    output_dir: str = "run"
    threads: int = 0
    equilibration_steps: int = 6000
    jitter: float = 0.12
    sample_every: int = 100
    grid_size: int = 128
    profile_bins: int = 32
    modes: tuple = (1, 4, 14)
    checkpoints_per_forward: int = 10

    def __post_init__(self):
        if self.gamma is None:
            object.__setattr__(self, "gamma", self.noise_amplitude**2 / (2 * self.noise_temp))
        if self.n < 2 or self.n % 2:
            raise ConfigError("n must be an even particle count")
        for name in ("density", "dt", "t_rev", "sigma_left", "sigma_right", "noise_temp"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.noise_amplitude < 0 or self.gamma < 0:
            raise ConfigError("noise_amplitude and gamma must be nonnegative")
        if not math.isclose(self.noise_amplitude**2, 2 * self.gamma * self.noise_temp, rel_tol=1e-9):
            raise ConfigError("noise_amplitude**2 must equal 2 * gamma * noise_temp")
        if self.grid_size % self.profile_bins:
            raise ConfigError("profile_bins must divide grid_size")
        if self.sample_every < 1 or self.equilibration_steps < 0 or self.threads < 0:
            raise ConfigError("sample_every >= 1, equilibration_steps >= 0 and threads >= 0 required")
        if self.rev_steps % self.checkpoints_per_forward:
            raise ConfigError("forward steps must divide evenly into checkpoints_per_forward")

    @property
    def box_length(self) -> float:
        return float(quantize(math.sqrt(self.n / self.density)))

    @property
    def half_width(self) -> float:
        return float(quantize(self.box_length / 2))

    @property
    def rev_steps(self) -> int:
        return round(self.t_rev / self.dt)

    def dynamics(self, mode: str) -> DynamicsSpec:
        if mode == "deterministic":
            return DynamicsSpec(dt=self.dt)
        if mode == "grw_noise":
            return DynamicsSpec(mode=mode, noise_amplitude=self.noise_amplitude, dt=self.dt)
        if mode == "dissipative_grw":
            return DynamicsSpec(mode=mode, noise_amplitude=self.noise_amplitude, gamma=self.gamma,
                                noise_temp=self.noise_temp, dt=self.dt)
        raise ConfigError(f"unknown mode {mode!r}")

    def to_text(self) -> str:
        """Canonical ``key = value`` text; parsing it returns an equal config."""
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        """Hash of every setting except the output location."""
        text = "".join(line + "\n" for line in self.to_text().splitlines() if not line.startswith("output_dir "))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment and unknown keys are errors."""
        kinds = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**{k: cls._coerce(k, v) for k, v in values.items()})

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)

    @staticmethod
    def _coerce(key, value):
        if not isinstance(value, str):
            return value
        try:
            if key in ("n", "seed", "threads", "equilibration_steps", "sample_every", "grid_size",
                       "profile_bins", "checkpoints_per_forward"):
                return int(value)
            if key == "output_dir":
                return value
            if key == "modes":
                return tuple(int(v) for v in value.split(",") if v.strip())
            if key == "gamma" and value.lower() == "none":
                return None
            return float(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc


@dataclass
class _Recorder:
    """Profile and mode samples collected during one stage."""

    config: RunConfig
    profiles: list = field(default_factory=list)
    modes: list = field(default_factory=list)

    def sample(self, system: ParticleSystem):
        prof = analysis.y_averaged_profile(analysis.cic_deposit(system, self.config.grid_size))
        self.profiles.append((system.time, prof))
        for n_x in self.config.modes:
            self.modes.append((system.time, n_x, analysis.fourier_mode(system, n_x)))

    def write(self, out: Path, stem: str, comment: str) -> dict:
        prof_path = out / f"{stem}_profiles.csv"
        mode_path = out / f"{stem}_modes.csv"
        ng = self.config.grid_size
        x = np.arange(ng) * self.config.box_length / ng
        with open(prof_path, "w", newline="") as fh:
            fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "e_kin_y"])
            for t, prof in self.profiles:
                for xi, val in zip(x, prof):
                    writer.writerow([analysis.NUMBER_FORMAT.format(t), analysis.NUMBER_FORMAT.format(xi),
                                     analysis.NUMBER_FORMAT.format(val)])
        analysis.write_mode_csv(mode_path, self.modes, comment)
        return {p.name: checkpoint.file_hash(p) for p in (prof_path, mode_path)}


def _temperature_bins(profile, config: RunConfig) -> np.ndarray:
    bins = config.profile_bins
    return profile.reshape(bins, -1).mean(axis=1) / config.density


def profile_metrics(joined, relaxed, reruns: dict, gap: float) -> dict:
    """Summary numbers of the reversal experiment from block-averaged temperature profiles."""
    det = reruns["deterministic"]
    out = {
        "gradient_joined": analysis.seam_gradient(joined),
        "gradient_relaxed": analysis.seam_gradient(relaxed),
        "temperature_gap": gap,
        "restore_error_deterministic": float(np.max(np.abs(det - joined)) / gap),
        "relaxed_distance_deterministic": float(np.max(np.abs(det - relaxed))),
    }
    for mode, prof in reruns.items():
        out[f"gradient_rerun_{mode}"] = analysis.seam_gradient(prof)
        if mode != "deterministic":
            out[f"distance_to_deterministic_{mode}"] = float(np.max(np.abs(prof - det)))
    return out


def _mode_deviation(det_modes, other_modes, n_x, dt_sample):
    a = np.array([abs(v) for t, k, v in det_modes if k == n_x])
    b = np.array([abs(v) for t, k, v in other_modes if k == n_x])
    return float(np.sum(np.abs(a - b)) * dt_sample)


class _Protocol:
    def __init__(self, config: RunConfig, log=None):
        self.config = config
        self.out = Path(config.output_dir)
        self.comment = f"config_hash={config.config_hash}"
        self.log = log or (lambda msg: None)
        self.stage_records = {}
        self.timing = {}
        self.final_profiles = {}
        self.mode_series = {}

    def path(self, name) -> Path:
        return self.out / f"{name}.clmd"

    def load(self, name, stage) -> tuple[ParticleSystem, str]:
        p = self.path(name)
        if not p.exists():
            raise ProtocolError(f"stage {stage} needs missing checkpoint {p.name}", stage=stage)
        return checkpoint.load_particles(p), checkpoint.file_hash(p)

    def save(self, name, system) -> dict:
        return {self.path(name).name: checkpoint.save_particles(self.path(name), system)}

    def advance(self, system, steps, stage, recorder=None, checkpoint_every=None, checkpoint_stem=None):
        c = self.config
        outputs = {}
        done = 0
        if recorder is not None:
            recorder.sample(system)
        while done < steps:
            chunk = min(c.sample_every, steps - done)
            if checkpoint_every:
                chunk = min(chunk, checkpoint_every - done % checkpoint_every)
            try:
                run(system, chunk)
            except BlowUpError as exc:
                raise ProtocolError(f"non-finite force in stage {stage} at step {exc.step}", stage=stage,
                                    step=exc.step) from exc
            if not np.all(np.isfinite(system.velocities)):
                raise ProtocolError(f"NaN in stage {stage} at step {system.step}", stage=stage, step=system.step)
            done += chunk
            if recorder is not None and done % c.sample_every == 0:
                recorder.sample(system)
            if checkpoint_every and done % checkpoint_every == 0 and done < steps:
                outputs.update(self.save(f"{checkpoint_stem}_{done // checkpoint_every:02d}", system))
        return outputs

    def record(self, stage, inputs, outputs, **extra):
        self.stage_records[stage] = {"stage": stage, "inputs": inputs, "outputs": outputs, **extra}

    def stage_equilibrate(self, side):
        c = self.config
        stage = f"equilibrate_{side}"
        sigma = c.sigma_left if side == "left" else c.sigma_right
        seed = c.seed if side == "left" else c.seed + 1
        system = make_system(c.n // 2, c.half_width, c.box_length, sigma, seed=seed, jitter=c.jitter,
                             dynamics=c.dynamics("deterministic"))
        system, temp = equilibrate(system, None, c.equilibration_steps, c.sample_every)
        system.time, system.step, system.seed = 0.0, 0, c.seed
        self.record(stage, {}, self.save(stage, system), temperature=temp, sigma=sigma)

    def stage_join(self):
        left, h_left = self.load("equilibrate_left", "join")
        right, h_right = self.load("equilibrate_right", "join")
        joined = join_systems(left, right)
        joined.seed = self.config.seed
        rec = _Recorder(self.config)
        rec.sample(joined)
        self.final_profiles["joined"] = rec.profiles[-1][1]
        outputs = self.save("join", joined)
        outputs.update(rec.write(self.out, "join", self.comment))
        self.record("join", {"equilibrate_left.clmd": h_left, "equilibrate_right.clmd": h_right}, outputs,
                    temperature_left=analysis.kinetic_temperature(_half(joined, 0)),
                    temperature_right=analysis.kinetic_temperature(_half(joined, 1)))

    def stage_forward(self):
        c = self.config
        system, h = self.load("join", "forward")
        rec = _Recorder(c)
        every = c.rev_steps // c.checkpoints_per_forward
        outputs = self.advance(system, c.rev_steps, "forward", rec, every, "forward")
        outputs.update(self.save("forward", system))
        outputs.update(rec.write(self.out, "forward", self.comment))
        self.final_profiles["joined"] = rec.profiles[0][1]
        self.final_profiles["relaxed"] = rec.profiles[-1][1]
        self.record("forward", {"join.clmd": h}, outputs, temperature=system.kinetic_temperature())

    def stage_reverse(self):
        system, h = self.load("forward", "reverse")
        reverse_momenta(system)
        self.record("reverse", {"forward.clmd": h}, self.save("reversed", system))

    def stage_rerun(self, mode):
        c = self.config
        stage = f"rerun_{mode}"
        system, h = self.load("reversed", stage)
        system.dynamics = c.dynamics(mode)
        rec = _Recorder(c)
        outputs = self.advance(system, c.rev_steps, stage, rec)
        outputs.update(self.save(stage, system))
        outputs.update(rec.write(self.out, stage, self.comment))
        self.final_profiles[stage] = rec.profiles[-1][1]
        self.mode_series[mode] = rec.modes
        self.record(stage, {"reversed.clmd": h}, outputs, temperature=system.kinetic_temperature())

    def run_stage(self, stage):
        start = time.perf_counter()
        self.log(f"stage {stage}")
        if stage.startswith("equilibrate_"):
            self.stage_equilibrate(stage.split("_", 1)[1])
        elif stage.startswith("rerun_"):
            self.stage_rerun(stage.split("_", 1)[1])
        else:
            getattr(self, f"stage_{stage}")()
        self.timing[stage] = time.perf_counter() - start

    def summary(self) -> dict:
        c = self.config
        needed = ["joined", "relaxed"] + [f"rerun_{m}" for m in RERUN_MODES]
        if not all(k in self.final_profiles for k in needed):
            return {}
        temps = [self.stage_records.get(f"equilibrate_{s}", {}).get("temperature") for s in ("left", "right")]
        if None in temps:
            joined_t = self.stage_records.get("join", {})
            temps = [joined_t.get("temperature_left"), joined_t.get("temperature_right")]
        gap = (temps[1] - temps[0]) if None not in temps else float("nan")
        bins = {k: _temperature_bins(v, c) for k, v in self.final_profiles.items()}
        out = profile_metrics(bins["joined"], bins["relaxed"], {m: bins[f"rerun_{m}"] for m in RERUN_MODES}, gap)
        out["temperature_profiles"] = {k: v.tolist() for k, v in bins.items()}
        if "deterministic" in self.mode_series and "grw_noise" in self.mode_series:
            dt_sample = c.sample_every * c.dt
            out["mode_deviation_grw"] = {str(k): _mode_deviation(self.mode_series["deterministic"],
                                                                 self.mode_series["grw_noise"], k, dt_sample)
                                         for k in c.modes}
        return out


def _half(system, which):
    n = system.n // 2
    sl = slice(0, n) if which == 0 else slice(n, None)
    return ParticleSystem(system.positions[sl], system.velocities[sl], system.lx, system.ly)


def run_protocol(config: RunConfig, stages=STAGES, log=None) -> dict:
    """Run the requested protocol stages in order and write ``manifest.json``.

    Each stage reads its input checkpoint from ``config.output_dir``; a
    missing input raises :class:`ProtocolError`. Wall-clock times go to
    ``timing.json`` so that the manifest is reproducible bit for bit.
    """
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ProtocolError(f"unknown stages {unknown}")
    if config.threads:
        numba.set_num_threads(config.threads)
    proto = _Protocol(config, log)
    proto.out.mkdir(parents=True, exist_ok=True)
    (proto.out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    for stage in STAGES:
        if stage in stages:
            proto.run_stage(stage)
    manifest = {
        "config": config.to_text().splitlines(),
        "config_hash": config.config_hash,
        "stages": [proto.stage_records[s] for s in STAGES if s in proto.stage_records],
        "summary": proto.summary(),
    }
    (proto.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (proto.out / "timing.json").write_text(json.dumps(proto.timing, indent=2) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# phase-space verification suite


def _check_row(name, measured, analytic, tol):
    err = abs(measured / analytic - 1) if analytic != 0 else abs(measured)
    return {"check": name, "measured": measured, "analytic": analytic, "relative_error": err,
            "tolerance": tol, "passed": bool(err < tol)}


def _check_grw_var_growth(params):
    grid = wigner.gaussian_state(256, 256, (-8, 8), (-8, 8), std=(1.0, 1.0))
    spec = wigner.GeneratorSpec("grw_master", potential=wigner.Potential.free(), params=params)
    dt, steps = 0.005, 200
    times, p2 = [0.0], [wigner.observables(grid, params.mass)["mean_p2"]]
    for k in range(steps):
        grid = wigner.strang_step(grid, spec, dt)
        times.append((k + 1) * dt)
        p2.append(wigner.observables(grid, params.mass)["mean_p2"])
    slope = np.polyfit(times, p2, 1)[0]
    return _check_row("grw_var_growth", slope, 2 * diffusion_constant(params), 5e-3)


def _check_master_vs_fokker_planck(params):
    grid = wigner.gaussian_state(64, 128, (-5, 5), (-8, 8), std=(1.0, 1.0))
    var_p = wigner.observables(grid)["var_p"]
    if params.alpha * params.hbar**2 > 0.01 * var_p:
        params = params.with_(hbar=math.sqrt(0.01 * var_p / params.alpha))
    a = b = grid
    steps, dt = 100, 0.01
    for _ in range(steps):
        a = wigner.collapse_step_grw(a, params, dt)
        b = wigner.collapse_step_fokker_planck(b, params, dt)
    p0 = wigner.observables(grid)["mean_p2"]
    t = steps * dt
    master = (wigner.observables(a)["mean_p2"] - p0) / t
    fokker = (wigner.observables(b)["mean_p2"] - p0) / t
    return _check_row("master_vs_fokker_planck", master, fokker, 1e-2)


def _check_kramers_thermalization(params):
    gamma, temp = params.gamma or 1.0, params.noise_temp if math.isfinite(params.noise_temp) else 0.6
    bath = CollapseParams(gamma=gamma, noise_temp=temp, mass=params.mass)
    grid = wigner.gaussian_state(32, 128, (-5, 5), (-7, 7), std=(1.0, 1.5 * math.sqrt(temp * params.mass)))
    dt = 0.0025 / gamma
    for _ in range(math.ceil(6.0 / (gamma * dt))):
        grid = wigner.collapse_step_kramers(grid, bath, dt)
    measured = wigner.observables(grid, params.mass)["var_p"]
    return _check_row("kramers_thermalization", measured, params.mass * temp, 1e-2)


def _check_dp_total_rate(params):
    p = params.with_(dims=3, grav_const=params.grav_const or 1.0)
    expected = 8 * math.sqrt(math.pi) * p.grav_const * p.mass**2 / (p.hbar * p.smear_radius)
    return _check_row("dp_total_rate", dp_jump_kernel(p, "gaussian").total_rate, expected, 1e-6)


def _check_dp_norm(params):
    p = params.with_(grav_const=params.grav_const or 0.5, smear_radius=1.0, hbar=1.0)
    grid = wigner.gaussian_state(16, 256, (-5, 5), (-16, 16), std=(1.0, 1.0))
    worst = 0.0
    for _ in range(20):
        nxt = wigner.collapse_step_diosi_penrose(grid, p, 0.005)
        worst = max(worst, abs(nxt.norm() / grid.norm() - 1))
        grid = nxt
    return {"check": "dp_norm_per_step", "measured": worst, "analytic": 0.0, "relative_error": worst,
            "tolerance": 1e-9, "passed": bool(worst < 1e-9)}


WIGNER_CHECKS = {
    "grw_var_growth": _check_grw_var_growth,
    "master_vs_fokker_planck": _check_master_vs_fokker_planck,
    "kramers_thermalization": _check_kramers_thermalization,
    "dp_total_rate": _check_dp_total_rate,
    "dp_norm_per_step": _check_dp_norm,
}


def run_wigner_suite(params: CollapseParams | None = None, checks=None, csv_path=None, comment: str = "") -> list:
    """Run phase-space solver checks against analytic laws.

    Returns one row per check with keys ``check, measured, analytic,
    relative_error, tolerance, passed``; optionally also writes them as CSV.
    Solver errors propagate with the check name attached.
    """
    params = params or CollapseParams(lam=1.0, alpha=1.0, hbar=0.5)
    names = list(checks or WIGNER_CHECKS)
    rows = []
    for name in names:
        if name not in WIGNER_CHECKS:
            raise ValueError(f"unknown check {name!r}")
        try:
            rows.append(WIGNER_CHECKS[name](params))
        except wigner.SolverError as exc:
            raise type(exc)(f"{name}: {exc}") from exc
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["check", "measured", "analytic", "relative_error", "passed"])
            for r in rows:
                writer.writerow([r["check"], analysis.NUMBER_FORMAT.format(r["measured"]),
                                 analysis.NUMBER_FORMAT.format(r["analytic"]),
                                 analysis.NUMBER_FORMAT.format(r["relative_error"]), r["passed"]])
    return rows


# ---------------------------------------------------------------------------
# unit conversion


@dataclass(frozen=True)
class Species:
    """Lennard-Jones length, energy and particle mass in SI units."""

    sigma: float
    epsilon: float
    mass: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.epsilon > 0 and self.mass > 0):
            raise ValueError("species constants must be positive")


ARGON = Species(sigma=3.4e-10, epsilon=120.0 * constants.k, mass=39.948 * constants.atomic_mass)


def convert_units(config: RunConfig, species: Species = ARGON) -> dict:
    """SI values of the reduced time unit, momentum diffusion and temperatures."""
    tau = species.sigma * math.sqrt(species.mass / species.epsilon)
    d_p = config.noise_amplitude**2 * species.epsilon**2 * tau / (2 * species.sigma**2)
    kelvin = species.epsilon / constants.k
    return {
        "tau_s": tau,
        "momentum_diffusion_J2s_per_m2": d_p,
        "noise_temp_K": config.noise_temp * kelvin,
        "temperature_left_sigma_K": config.sigma_left**2 * kelvin,
        "temperature_right_sigma_K": config.sigma_right**2 * kelvin,
        "time_step_s": config.dt * tau,
        "t_rev_s": config.t_rev * tau,
        "gamma_per_s": config.gamma / tau,
    }
