"""
End-to-end reproduction pipeline

Stages run in the order simulate/ingest -> ident -> synth -> estimate -> sweep ->
report. Each stage reads its inputs from files recorded in ``manifest.json``, writes
its outputs under ``<out_dir>/<stage>/`` and records input hashes, parameters and
output hashes. A stage whose recorded inputs, parameters and outputs still match is
skipped.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from ..errors import (ConfigError, DataFileError, ManifestError, MechSqueezeError,
                      StageError)
from ..utils.helpers import (file_sha256, log_grid, parse_band, parse_grid,
                             rad_to_hz, relative_deviation, text_sha256)
from . import dsp, estimate, langevin, spring, wiener
from .exporter import DataExporter
from .loader import DataLoader
from .params import (PUBLISHED_RESULTS, SystemParams, displacement_to_quadrature,
                     volts_to_displacement)

logger = logging.getLogger(__name__)

STAGES = ("simulate", "ingest", "ident", "synth", "estimate", "sweep", "report")
DATA_STAGES = ("simulate", "ingest")
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class SimulateSpec:
    duration_s: float = 100.0
    sample_rate_hz: float = 20000.0
    optical_noise: str = "both"


@dataclass(frozen=True)
class ModulationSpec:
    enabled: bool = True
    duration_s: float = 60.0
    sample_rate_hz: float = 10000.0
    amplitude_m: float = 1.7e-12
    frequency_hz: float = 0.05


@dataclass(frozen=True)
class IdentSpec:
    band_hz: Tuple[float, float] = (170.0, 360.0)
    lowpass_hz: float = 8.2
    time_bins: int = 25
    detuning_bins: int = 3
    photon_map: str = "fixed"
    spring_data: Optional[str] = None
    spring_power_w: float = 0.0
    update_params: bool = True


@dataclass(frozen=True)
class SynthSpec:
    source: str = "analytic"
    display_grid: str = "0:5000:1"


@dataclass(frozen=True)
class EstimateSpec:
    band: str = "105:auto"
    resolution_hz: float = 10.0
    reference: str = "measured"
    notch: bool = False
    notch_f0_hz: float = 50.0
    notch_harmonics: int = 6
    notch_width_hz: float = 2.0

    def notch_spec(self) -> Optional[estimate.NotchSpec]:
        if not self.notch:
            return None
        return estimate.NotchSpec(self.notch_f0_hz, self.notch_harmonics,
                                  self.notch_width_hz)


@dataclass(frozen=True)
class SweepSpec:
    """
    Purity sweep settings

    ``band = "full"`` scores the full-band error against the true state; a band
    string such as "105:auto" integrates that band only. ``source`` falls back to
    synth.source when empty.
    """

    decades: float = 1.0
    points: int = 9
    mode: str = "cross"
    evaluator: str = "data"
    source: Optional[str] = "oracle"
    reference: str = "truth"
    band: str = "full"


SECTION_TYPES = {
    "simulate": SimulateSpec,
    "modulation": ModulationSpec,
    "ident": IdentSpec,
    "synth": SynthSpec,
    "estimate": EstimateSpec,
    "sweep": SweepSpec,
}


def _section(cls, mapping: Mapping[str, Any], name: str):
    known = set(cls.__dataclass_fields__)
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: {', '.join(sorted(unknown))}")
    values = dict(mapping)
    if "band_hz" in values:
        values["band_hz"] = tuple(float(v) for v in values["band_hz"])
    if values.get("spring_data") == "":
        values["spring_data"] = None
    if values.get("source") == "":
        values["source"] = None
    return cls(**values)


@dataclass
class RunConfig:
    """
    Everything a pipeline run needs

    ``data`` is either "simulate" or a path to a trajectory file (CSV or .bin).
    """

    params_path: Path
    out_dir: Path
    stages: Tuple[str, ...] = ("simulate", "synth", "estimate", "report")
    data: str = "simulate"
    seed: int = 0
    format: str = "csv"
    simulate: SimulateSpec = field(default_factory=SimulateSpec)
    modulation: ModulationSpec = field(default_factory=ModulationSpec)
    ident: IdentSpec = field(default_factory=IdentSpec)
    synth: SynthSpec = field(default_factory=SynthSpec)
    estimate: EstimateSpec = field(default_factory=EstimateSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def __post_init__(self) -> None:
        self.params_path = Path(self.params_path)
        self.out_dir = Path(self.out_dir)
        self.stages = tuple(self.stages)
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            ConfigError: On unknown stages, bad ordering or conflicting data sources
        """
        unknown = [stage for stage in self.stages if stage not in STAGES]
        if unknown:
            raise ConfigError(f"Unknown stages: {', '.join(unknown)}")
        if len(set(self.stages)) != len(self.stages):
            raise ConfigError("Stage list contains duplicates")
        positions = [STAGES.index(stage) for stage in self.stages]
        if positions != sorted(positions):
            raise ConfigError("Stages must follow simulate/ingest -> ident -> synth -> "
                              "estimate -> sweep -> report")
        if "simulate" in self.stages and "ingest" in self.stages:
            raise ConfigError("Use either simulate or ingest, not both")
        if "simulate" in self.stages and self.data != "simulate":
            raise ConfigError("simulate stage requested but data points to a file")
        if "ingest" in self.stages and self.data == "simulate":
            raise ConfigError("ingest stage needs a data file")
        if self.format not in ("csv", "bin"):
            raise ConfigError(f"Unsupported format: {self.format}")
        if self.synth.source not in wiener.FILTER_SOURCES:
            raise ConfigError(f"synth.source must be one of {wiener.FILTER_SOURCES}")
        if self.estimate.reference not in estimate.RESIDUAL_REFERENCES:
            raise ConfigError("estimate.reference must be 'measured' or 'truth'")
        if self.sweep.mode not in ("cross", "grid"):
            raise ConfigError("sweep.mode must be 'cross' or 'grid'")
        if self.sweep.evaluator not in ("data", "model"):
            raise ConfigError("sweep.evaluator must be 'data' or 'model'")
        if self.sweep.source is not None and self.sweep.source not in wiener.FILTER_SOURCES:
            raise ConfigError(f"sweep.source must be one of {wiener.FILTER_SOURCES}")
        if self.sweep.reference not in estimate.RESIDUAL_REFERENCES:
            raise ConfigError("sweep.reference must be 'measured' or 'truth'")
        if self.sweep.band != "full":
            parse_band(self.sweep.band)
        if self.sweep.reference == "measured":
            if self.sweep.band == "full":
                raise ConfigError("sweep.reference = 'measured' needs a finite sweep.band "
                                  "such as '105:auto'")
            logger.warning(
                "sweep.reference = 'measured' scores how closely the %s filter follows "
                "the record, not its estimation error; the maximum will not locate "
                "n_th or N_th", self.sweep.source or self.synth.source)
        parse_band(self.estimate.band)
        parse_grid(self.synth.display_grid)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any], base_dir: Path = Path("."),
                     **overrides: Any) -> "RunConfig":
        """
        Build from a run-file mapping; ``overrides`` (non-None) win over [run] keys

        Relative paths are resolved against ``base_dir``.
        """
        run = dict(mapping.get("run", {}))
        for key, value in overrides.items():
            if value is not None:
                run[key] = value
        if "params" not in run:
            raise ConfigError("[run] needs a 'params' entry")

        def resolve(value: str) -> Path:
            path = Path(value)
            return path if path.is_absolute() else base_dir / path

        data = run.get("data", "simulate")
        if data != "simulate":
            data = str(resolve(data))
        sections = {}
        for name, kind in SECTION_TYPES.items():
            sections[name] = _section(kind, mapping.get(name, {}), name)
        ident = sections["ident"]
        if ident.spring_data:
            sections["ident"] = IdentSpec(**{**asdict(ident),
                                             "spring_data": str(resolve(ident.spring_data))})
        default_stages = (("simulate",) if data == "simulate" else ("ingest",)) + (
            "synth", "estimate", "report")
        return cls(
            params_path=resolve(run["params"]),
            out_dir=resolve(run.get("out_dir", "outputs")),
            stages=tuple(run.get("stages", default_stages)),
            data=data,
            seed=int(run.get("seed", 0)),
            format=str(run.get("format", "csv")),
            **sections,
        )

    @classmethod
    def from_file(cls, path: Path, loader: Optional[DataLoader] = None,
                  **overrides: Any) -> "RunConfig":
        loader = loader or DataLoader()
        mapping = loader.load_toml(path)
        return cls.from_mapping(mapping, Path(path).parent, **overrides)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "params": str(self.params_path),
            "data": self.data,
            "stages": list(self.stages),
            "seed": self.seed,
            "format": self.format,
            **{name: asdict(getattr(self, name)) for name in SECTION_TYPES},
        }


def stage_seed(seed: int, stage: str, stream: int = 0) -> int:
    """Independent integer seed for a stage, split from the run seed"""
    sequence = np.random.SeedSequence(seed, spawn_key=(STAGES.index(stage), stream))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


class Pipeline:
    """
    Runs configured stages and keeps the manifest
    """

    def __init__(self, config: RunConfig, loader: Optional[DataLoader] = None,
                 exporter: Optional[DataExporter] = None):
        self.config = config
        self.loader = loader or DataLoader()
        self.exporter = exporter or DataExporter(config.out_dir)
        self.manifest_path = config.out_dir / MANIFEST_NAME
        self.manifest = self._load_manifest()
        self._params: Optional[SystemParams] = None

    # manifest bookkeeping

    def _load_manifest(self) -> Dict[str, Any]:
        if self.manifest_path.exists():
            manifest = self.loader.load_json(self.manifest_path)
            manifest.setdefault("stages", {})
            return manifest
        return {"stages": {}}

    def _write_manifest(self) -> None:
        self.manifest["config"] = self.config.to_dict()
        self.manifest["seed"] = self.config.seed
        self.manifest["order"] = [s for s in STAGES if s in self.manifest["stages"]]
        self.exporter.export_json(self.manifest, self.manifest_path)

    def _relative(self, path: Path) -> str:
        return path.relative_to(self.config.out_dir).as_posix()

    def _output(self, stage: str, name: str) -> Path:
        return self.exporter.stage_dir(stage) / name

    def stage_output(self, stage: str, name: str) -> Path:
        """
        Path of a recorded output of an earlier stage

        Raises:
            ManifestError: If the stage or output is missing
        """
        entry = self.manifest["stages"].get(stage)
        if entry is None:
            raise ManifestError(f"stage '{stage}' has not run in {self.config.out_dir}")
        for relative in entry["outputs"]:
            if Path(relative).name == name or Path(relative).stem == name:
                return self.config.out_dir / relative
        raise ManifestError(f"stage '{stage}' recorded no output '{name}'")

    def _data_stage(self) -> str:
        for stage in DATA_STAGES:
            if stage in self.manifest["stages"]:
                return stage
        raise ManifestError("no simulate or ingest stage recorded")

    def _is_current(self, stage: str, inputs: Dict[str, str],
                    parameters: Dict[str, Any]) -> bool:
        entry = self.manifest["stages"].get(stage)
        if not entry or entry.get("inputs") != inputs or entry.get("parameters") != parameters:
            return False
        for relative, digest in entry.get("outputs", {}).items():
            path = self.config.out_dir / relative
            if not path.exists() or file_sha256(path) != digest:
                return False
        return True

    # parameters

    @property
    def params(self) -> SystemParams:
        if self._params is None:
            self._params = self.loader.load_params(self.config.params_path)
        return self._params

    def identified_params(self) -> SystemParams:
        """Parameters after identification (the input set when ident did not run)"""
        entry = self.manifest["stages"].get("ident")
        if entry is None or not self.config.ident.update_params:
            return self.params
        detuning = entry.get("results", {}).get("mean_delta")
        if detuning is None:
            return self.params
        return self.params.with_updates(delta_over_kappa=detuning)

    # running

    def check_inputs(self) -> None:
        """
        Raises:
            DataFileError: Naming the first referenced file that does not exist
        """
        paths = [self.config.params_path]
        if "ingest" in self.config.stages:
            paths.append(Path(self.config.data))
        if "ident" in self.config.stages and self.config.ident.spring_data:
            paths.append(Path(self.config.ident.spring_data))
        for path in paths:
            if not path.exists():
                raise DataFileError(f"File not found: {path}")

    def run(self) -> Dict[str, Any]:
        """
        Execute the configured stages

        Raises:
            StageError: Naming the failed stage, with the manifest written so far
        """
        self.check_inputs()
        self.config.out_dir.mkdir(parents=True, exist_ok=True)
        for stage in self.config.stages:
            try:
                self._run_stage(stage)
            except StageError:
                raise
            except (MechSqueezeError, OSError, ValueError, ArithmeticError) as exc:
                self._write_manifest()
                logger.error("Stage %s failed: %s", stage, exc)
                raise StageError(stage, exc, dict(self.manifest)) from exc
        self._write_manifest()
        return self.manifest

    def _run_stage(self, stage: str) -> None:
        inputs = self._stage_inputs(stage)
        parameters = self._stage_parameters(stage)
        if self._is_current(stage, inputs, parameters):
            logger.info("Stage %s is up to date; skipping", stage)
            return
        logger.info("Running stage %s", stage)
        outputs, results = getattr(self, f"_stage_{stage}")()
        self.manifest["stages"][stage] = {
            "inputs": inputs,
            "parameters": parameters,
            "outputs": {self._relative(path): file_sha256(path) for path in outputs},
            "results": results,
        }
        self._write_manifest()

    def _stage_inputs(self, stage: str) -> Dict[str, str]:
        inputs = {"params": file_sha256(self.config.params_path)}
        if stage == "ingest":
            inputs["data"] = file_sha256(Path(self.config.data))
        if stage == "ident" and self.config.ident.spring_data:
            inputs["spring_data"] = file_sha256(Path(self.config.ident.spring_data))
        upstream = STAGES[:STAGES.index(stage)]
        for previous in upstream:
            entry = self.manifest["stages"].get(previous)
            if entry:
                inputs[previous] = text_sha256(repr(sorted(entry["outputs"].items())))
        return inputs

    def _stage_parameters(self, stage: str) -> Dict[str, Any]:
        parameters: Dict[str, Any] = {"seed": self.config.seed, "format": self.config.format}
        if stage == "simulate":
            parameters["simulate"] = asdict(self.config.simulate)
            parameters["modulation"] = asdict(self.config.modulation)
        elif stage in SECTION_TYPES:
            parameters[stage] = asdict(getattr(self.config, stage))
        if stage in ("sweep", "estimate"):
            parameters["synth"] = asdict(self.config.synth)
            parameters["estimate"] = asdict(self.config.estimate)
        if stage == "synth":
            parameters["ident_update"] = self.config.ident.update_params
        # same shape as after a manifest round trip (tuples become lists)
        return json.loads(json.dumps(parameters))

    # stages

    def _trajectory_path(self, stage: str, name: str) -> Path:
        suffix = ".bin" if self.config.format == "bin" else ".csv"
        return self._output(stage, name + suffix)

    def _trajectory_stats(self, trajectory: langevin.Trajectory,
                          params: SystemParams) -> Dict[str, Any]:
        stats: Dict[str, Any] = {
            "samples": len(trajectory),
            "sample_rate_hz": trajectory.sample_rate,
            "duration_s": trajectory.duration,
            "X_variance": float(np.var(trajectory["X"])),
        }
        if "q" in trajectory.channels and "p" in trajectory.channels:
            stats["sample_covariance"] = np.cov(trajectory["q"], trajectory["p"]).tolist()
            model = langevin.build_model(params, langevin.ModelOptions(
                self.config.simulate.optical_noise))
            stats["steady_state_covariance"] = langevin.steady_state_covariance(model).tolist()
        return stats

    def _stage_simulate(self) -> Tuple[List[Path], Dict[str, Any]]:
        spec = self.config.simulate
        params = self.params
        options = langevin.ModelOptions(spec.optical_noise)
        model = langevin.build_model(params, options)
        trajectory = langevin.simulate(model, spec.duration_s, spec.sample_rate_hz,
                                       seed=stage_seed(self.config.seed, "simulate", 0))
        outputs = [self.exporter.export_trajectory(
            trajectory, self._trajectory_path("simulate", "trajectory"), self.config.format)]
        stats = self._trajectory_stats(trajectory, params)

        modulation = self.config.modulation
        if modulation.enabled:
            count = int(round(modulation.duration_s * modulation.sample_rate_hz))
            t = np.arange(count) / modulation.sample_rate_hz
            drift = modulation.amplitude_m * np.sin(2.0 * math.pi * modulation.frequency_hz * t)
            modulated = langevin.simulate_modulated(
                params, drift, modulation.sample_rate_hz,
                seed=stage_seed(self.config.seed, "simulate", 1), options=options)
            outputs.append(self.exporter.export_trajectory(
                modulated, self._trajectory_path("simulate", "modulated"),
                self.config.format))
            stats["modulation_clamp_fraction"] = modulated.metadata["clamp_fraction"]
        outputs.append(self.exporter.export_json(stats, self._output("simulate", "stats.json")))
        return outputs, {"stats": stats}

    def _stage_ingest(self) -> Tuple[List[Path], Dict[str, Any]]:
        params = self.params
        trajectory = self.loader.load_trajectory(Path(self.config.data))
        channels = dict(trajectory.channels)
        if "displacement" not in channels and "volts" in channels:
            if params.calibration_m_per_v is None:
                raise ConfigError("volts data needs calibration_m_per_v in the parameter file")
            channels["displacement"] = volts_to_displacement(channels.pop("volts"),
                                                             params.calibration_m_per_v)
        if "X" not in channels:
            if "displacement" not in channels:
                raise DataFileError(f"{self.config.data} needs an X, displacement or "
                                    "volts column")
            gain = langevin.build_model(params).position_gain
            channels["X"] = gain * displacement_to_quadrature(channels["displacement"],
                                                              params)
        normalized = langevin.Trajectory(trajectory.sample_rate, channels)
        outputs = [self.exporter.export_trajectory(
            normalized, self._trajectory_path("ingest", "trajectory"), self.config.format)]
        stats = self._trajectory_stats(normalized, params)
        outputs.append(self.exporter.export_json(stats, self._output("ingest", "stats.json")))
        return outputs, {"stats": stats}

    def _displacement_record(self) -> Optional[langevin.Trajectory]:
        data_stage = self._data_stage()
        for name in ("modulated", "trajectory"):
            try:
                path = self.stage_output(data_stage, name)
            except ManifestError:
                continue
            record = self.loader.load_trajectory(path)
            if "displacement" in record.channels:
                return record
        return None

    def _stage_ident(self) -> Tuple[List[Path], Dict[str, Any]]:
        spec = self.config.ident
        params = self.params
        photon_map = spring.photon_map_from_name(spec.photon_map)
        outputs: List[Path] = []
        results: Dict[str, Any] = {}

        if spec.spring_data:
            measurement = self.loader.load_spring_measurement(Path(spec.spring_data),
                                                              spec.spring_power_w)
            fit = spring.fit_spring(measurement, params, photon_map=photon_map)
            outputs.append(self.exporter.export_json(fit.to_dict(),
                                                     self._output("ident", "fit.json")))
            results["spring_fit"] = fit.to_dict()
            results["mean_delta"] = fit.mean_delta

        record = self._displacement_record()
        if record is not None:
            counted = spring.count_resonance(record["displacement"], record.sample_rate,
                                             spec.band_hz, spec.lowpass_hz, spec.time_bins)
            estimate_ = spring.detuning_from_counts(counted.instantaneous_hz,
                                                    counted.slow_displacement, params,
                                                    photon_map, spec.detuning_bins)
            counted_frame = pd.DataFrame({
                "t": np.arange(counted.instantaneous_hz.size) / record.sample_rate,
                "f_hz": counted.instantaneous_hz,
                "displacement_m": counted.slow_displacement,
            })
            step = max(1, int(record.sample_rate // 100))
            outputs.append(self.exporter.export_frame(counted_frame.iloc[::step],
                                                      self._output("ident", "counted.csv")))
            binned = pd.DataFrame({"t_bin_s": counted.bin_times, "f_hz": counted.binned_hz})
            if "resonance_hz" in record.channels:
                binned["f_true_hz"] = dsp.bin_average(record["resonance_hz"], spec.time_bins)
            outputs.append(self.exporter.export_frame(binned,
                                                      self._output("ident", "binned.csv")))
            outputs.append(self.exporter.export_json(estimate_.to_dict(),
                                                     self._output("ident", "detuning.json")))
            results["detuning"] = estimate_.to_dict()
            results["mean_delta"] = estimate_.mean_delta
            if "f_true_hz" in binned:
                results["binned_rms_error_hz"] = float(
                    np.sqrt(np.mean((binned["f_hz"] - binned["f_true_hz"]) ** 2)))

        if not outputs:
            raise ConfigError("ident needs a displacement record or ident.spring_data")
        return outputs, results

    def _stage_synth(self) -> Tuple[List[Path], Dict[str, Any]]:
        params = self.identified_params()
        grid = parse_grid(self.config.synth.display_grid)
        filters = wiener.synthesize(params, grid, self.config.synth.source)
        outputs = [self.exporter.export_frame(filters.to_frame(),
                                              self._output("synth", "filters.csv"))]
        coefficients: Dict[str, Any] = {"source": self.config.synth.source,
                                        "delta_over_kappa": params.delta}
        try:
            analytic = wiener.analytic_filters(params, grid)
            coefficients["analytic"] = {
                "omega_prime_hz": analytic.susceptibility.omega_prime_hz,
                "gamma_prime_hz": analytic.susceptibility.gamma_prime_hz,
                "A": analytic.coefficients.A,
                "B_s": analytic.coefficients.B,
                "causal_leakage_q": wiener.causal_leakage(grid, analytic.H_q),
                "causal_leakage_p": wiener.causal_leakage(grid, analytic.H_p),
            }
        except MechSqueezeError as exc:
            logger.warning("Closed-form filter unavailable: %s", exc)
            coefficients["analytic"] = {"error": str(exc)}
        solution = wiener.kalman_solution(langevin.build_model(params))
        oracle = wiener.numerical_causal_wiener(langevin.build_model(params), grid, solution)
        coefficients["oracle"] = {
            **solution.to_dict(),
            "causal_leakage_q": wiener.causal_leakage(grid, oracle.H_q),
            "causal_leakage_p": wiener.causal_leakage(grid, oracle.H_p),
        }
        outputs.append(self.exporter.export_json(coefficients,
                                                 self._output("synth", "coefficients.json")))
        return outputs, coefficients

    def _measurement(self) -> langevin.Trajectory:
        return self.loader.load_trajectory(self.stage_output(self._data_stage(), "trajectory"))

    def _band(self, params: SystemParams, text: Optional[str] = None) -> Tuple[float, float]:
        f_lo, f_hi = parse_band(text or self.config.estimate.band)
        if f_hi is None:
            f_hi = estimate.default_band(params, f_lo=f_lo)[1]
        return f_lo, f_hi

    def _truth(self, trajectory: langevin.Trajectory, section: str = "estimate"):
        if getattr(self.config, section).reference != "truth":
            return None
        if "q" not in trajectory.channels or "p" not in trajectory.channels:
            raise ConfigError(f"{section}.reference = 'truth' needs q and p channels; "
                              f"set reference = 'measured' under [{section}] for "
                              f"recorded data")
        return trajectory["q"], trajectory["p"]

    def _stage_estimate(self) -> Tuple[List[Path], Dict[str, Any]]:
        spec = self.config.estimate
        params = self.identified_params()
        trajectory = self._measurement()
        fs = trajectory.sample_rate
        model = langevin.build_model(params)
        band = self._band(params)
        filters = wiener.synthesize(params, dsp.fft_grid(len(trajectory), fs),
                                    self.config.synth.source)
        residuals = estimate.condition(trajectory["X"], filters, fs, model.position_gain,
                                       params.omega_m, truth=self._truth(trajectory),
                                       notch=spec.notch_spec())
        analysis = estimate.residual_state(residuals, band, spec.resolution_hz)
        state = analysis.state

        dense = np.arange(band[0], band[1] + 0.5, 1.0)
        predicted = estimate.predicted_state(
            model, wiener.synthesize(params, dense, self.config.synth.source), band,
            residuals.reference)
        summary: Dict[str, Any] = {
            "state": state.to_dict(),
            "predicted": predicted.to_dict(),
            "reference": residuals.reference,
            "band_hz": list(band),
            "filter_source": self.config.synth.source,
        }
        if residuals.reference == "measured" and "q" in trajectory.channels:
            truth_residuals = estimate.condition(
                trajectory["X"], filters, fs, model.position_gain, params.omega_m,
                truth=(trajectory["q"], trajectory["p"]), notch=spec.notch_spec())
            summary["truth_state"] = estimate.residual_state(
                truth_residuals, band, spec.resolution_hz).state.to_dict()
            summary["truth_full_band_q_variance"] = float(np.var(truth_residuals.q))

        outputs = [
            self.exporter.export_json(summary, self._output("estimate", "state.json")),
            self.exporter.export_frame(analysis.spectra_frame(),
                                       self._output("estimate", "spectra.csv")),
            self.exporter.export_frame(estimate.ellipse_boundary(state),
                                       self._output("estimate", "ellipse.csv")),
            self.exporter.export_frame(estimate.ellipse_boundary(predicted),
                                       self._output("estimate", "ellipse_predicted.csv")),
            self.exporter.export_frame(
                estimate.band_sensitivity(analysis.S_qq, analysis.S_pp, analysis.S_qp,
                                          band[1]),
                self._output("estimate", "band_sensitivity.csv")),
        ]
        return outputs, summary

    def _stage_sweep(self) -> Tuple[List[Path], Dict[str, Any]]:
        spec = self.config.sweep
        params = self.identified_params()
        band = None if spec.band == "full" else self._band(params, spec.band)
        source = spec.source or self.config.synth.source
        model = langevin.build_model(params)
        if spec.evaluator == "model":
            evaluator = estimate.ModelEvaluator(model, band, source, spec.reference)
        else:
            trajectory = self._measurement()
            evaluator = estimate.DataEvaluator(
                trajectory["X"], trajectory.sample_rate, band, model.position_gain,
                params.omega_m, source, truth=self._truth(trajectory, "sweep"),
                resolution=self.config.estimate.resolution_hz,
                notch=self.config.estimate.notch_spec())
        n_grid = log_grid(params.n_th, spec.decades, spec.points)
        N_grid = log_grid(params.N_th, spec.decades, spec.points)
        result = estimate.purity_sweep(params, evaluator, n_grid, N_grid, spec.mode)
        summary = {**result.to_dict(), "filter_source": source, "reference": spec.reference,
                   "band_hz": "full" if band is None else list(band)}
        outputs = [
            self.exporter.export_frame(result.frame, self._output("sweep", "sweep.csv")),
            self.exporter.export_json(summary, self._output("sweep", "sweep.json")),
        ]
        return outputs, summary

    def _stage_report(self) -> Tuple[List[Path], Dict[str, Any]]:
        bundle = report(self.manifest, self.config.out_dir, self.exporter)
        return bundle["outputs"], bundle["summary"]


def run(config: RunConfig) -> Dict[str, Any]:
    """Run a configuration and return its manifest"""
    return Pipeline(config).run()


def verify_manifest(manifest: Mapping[str, Any], out_dir: Path) -> None:
    """
    Check that every recorded output exists and matches its hash

    Raises:
        ManifestError: On a missing file or hash mismatch
    """
    for stage, entry in manifest.get("stages", {}).items():
        if stage == "report":
            continue
        for relative, digest in entry.get("outputs", {}).items():
            path = Path(out_dir) / relative
            if not path.exists():
                raise ManifestError(f"{stage}: recorded output {relative} is missing")
            if file_sha256(path) != digest:
                raise ManifestError(f"{stage}: {relative} does not match its recorded hash")


def _headline(name: str, value: Optional[float], provenance: str) -> Dict[str, Any]:
    published = PUBLISHED_RESULTS.get(name)
    return {
        "value": value,
        "published": published,
        "relative_deviation": relative_deviation(value, published),
        "provenance": provenance,
    }


def report(manifest: Mapping[str, Any], out_dir: Path,
           exporter: Optional[DataExporter] = None) -> Dict[str, Any]:
    """
    Assemble the report bundle from a manifest

    Writes ``report/summary.json`` with headline numbers beside the published values,
    and ``report/report.xlsx`` with one sheet per figure table found.

    Raises:
        ManifestError: If no data stage ran or recorded files do not match
    """
    out_dir = Path(out_dir)
    exporter = exporter or DataExporter(out_dir)
    stages = manifest.get("stages", {})
    if not any(stage in stages for stage in DATA_STAGES):
        raise ManifestError("report needs at least a simulate or ingest stage")
    verify_manifest(manifest, out_dir)
    loader = DataLoader()
    config = manifest.get("config", {})
    params = loader.load_params(Path(config["params"])) if config.get("params") else None

    def output(stage: str, name: str) -> Optional[Path]:
        for relative in stages.get(stage, {}).get("outputs", {}):
            if Path(relative).name == name:
                return out_dir / relative
        return None

    summary: Dict[str, Any] = {"stages": [s for s in STAGES if s in stages and s != "report"]}
    headlines: Dict[str, Any] = {}
    data_stage = next(stage for stage in DATA_STAGES if stage in stages)
    summary["trajectory"] = stages[data_stage].get("results", {}).get("stats", {})

    if params is not None:
        headlines["omega_m_hz"] = _headline("omega_m_hz", rad_to_hz(params.omega_m),
                                            "parameter file")
        headlines["g_m_hz"] = _headline("g_m_hz", rad_to_hz(params.g_m), "derived")
        headlines["quantum_cooperativity"] = _headline(
            "quantum_cooperativity", params.derived.quantum_cooperativity, "derived")

    if "ident" in stages:
        results = stages["ident"].get("results", {})
        headlines["delta_over_kappa"] = _headline("delta_over_kappa",
                                                  results.get("mean_delta"), "ident")
        if "binned_rms_error_hz" in results:
            summary["counting_rms_error_hz"] = results["binned_rms_error_hz"]
    if "synth" in stages:
        synth = stages["synth"].get("results", {})
        analytic = synth.get("analytic", {})
        for key, name in (("omega_prime_hz", "omega_prime_hz"),
                          ("gamma_prime_hz", "gamma_prime_hz"), ("A", "A"), ("B_s", "B_s")):
            if key in analytic:
                headlines[name] = _headline(name, analytic[key], "synth (closed form)")
        summary["oracle"] = synth.get("oracle")
    if "estimate" in stages:
        state = stages["estimate"].get("results", {}).get("state", {})
        V = state.get("V")
        if V:
            headlines["V_qq"] = _headline("V_qq", V[0][0], "estimate")
            headlines["V_pp"] = _headline("V_pp", V[1][1], "estimate")
            headlines["V_qp"] = _headline("V_qp", V[0][1], "estimate")
        for name in ("squeeze_var", "antisqueeze_var", "purity"):
            if name in state:
                headlines[name] = _headline(name, state[name], "estimate")
        if "angle_deg" in state:
            headlines["angle_deg"] = _headline("angle_deg", state["angle_deg"], "estimate")
        summary["predicted_state"] = stages["estimate"]["results"].get("predicted")
    if "sweep" in stages:
        summary["sweep"] = stages["sweep"].get("results")
    summary["headlines"] = headlines

    sheets: Dict[str, pd.DataFrame] = {}
    for stage, name, sheet in (("estimate", "spectra.csv", "spectra"),
                               ("estimate", "ellipse.csv", "ellipse"),
                               ("estimate", "ellipse_predicted.csv", "ellipse_predicted"),
                               ("estimate", "band_sensitivity.csv", "band_sensitivity"),
                               ("sweep", "sweep.csv", "purity_sweep"),
                               ("ident", "counted.csv", "counted_frequency"),
                               ("ident", "binned.csv", "counted_binned")):
        path = output(stage, name)
        if path is not None:
            frame = pd.read_csv(path)
            if sheet == "spectra":
                sheets["spectra"] = frame[["f_hz", "S_qq", "S_pp"]]
                sheets["cospectrum"] = frame[["f_hz", "co_qp", "quad_qp"]]
            else:
                sheets[sheet] = frame
    headline_frame = pd.DataFrame([
        {"quantity": name, **entry}
        for name, entry in headlines.items()
    ])
    if not headline_frame.empty:
        sheets = {"summary": headline_frame, **sheets}

    report_dir = exporter.stage_dir("report")
    outputs = [exporter.export_json(summary, report_dir / "summary.json")]
    for sheet, frame in sheets.items():
        if sheet == "summary":
            continue
        check = exporter.validate_frame(frame, list(frame.columns[:1]))
        for warning in check["warnings"]:
            logger.warning("Report table %s: %s", sheet, warning)
        outputs.append(exporter.export_frame(frame, report_dir / f"{sheet}.csv"))
    if sheets:
        outputs.append(exporter.export_workbook(sheets, report_dir / "report.xlsx"))
    logger.info("Report written with %d headline values", len(headlines))
    return {"summary": summary, "outputs": outputs}
