"""
Command Line Interface for mechsqueeze
"""

import functools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import click
import pandas as pd

from .core import dsp, estimate, langevin, spring, wiener
from .core.exporter import DataExporter
from .core.loader import DataLoader
from .core.pipeline import Pipeline, RunConfig, report as build_report
from .errors import (ConfigError, DataFileError, MechSqueezeError, NumericalError,
                     StageError)
from .utils.helpers import format_quantity, log_grid, parse_band, parse_grid, rad_to_hz

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

logger = logging.getLogger("mechsqueeze")


def exit_code_for(error: BaseException) -> int:
    """Exit status for an exception (stage failures map through their cause)"""
    if isinstance(error, StageError):
        return exit_code_for(error.cause)
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(error, (DataFileError, OSError, MechSqueezeError)):
        return EXIT_IO
    return 1


def handle_errors(command: Callable) -> Callable:
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except click.ClickException:
            raise
        except (MechSqueezeError, OSError, ValueError, ArithmeticError) as e:
            click.echo(f"❌ Error: {e}", err=True)
            raise SystemExit(exit_code_for(e))
    return wrapper


@dataclass
class CliState:
    """Global flags, with the run file (if any) as fallback"""

    config_path: Optional[Path]
    out_dir: Optional[Path]
    seed: Optional[int]
    format: Optional[str]
    loader: DataLoader

    def run_file(self) -> Dict[str, Any]:
        if self.config_path is None:
            return {}
        return self.loader.load_toml(self.config_path)

    def params_path(self, explicit: Optional[Path]) -> Path:
        if explicit is not None:
            return explicit
        run = self.run_file().get("run", {})
        if "params" not in run:
            raise ConfigError("No parameter file: pass --params or a --config with [run].params")
        return self.config_path.parent / run["params"]

    def output_root(self) -> Path:
        if self.out_dir is not None:
            return self.out_dir
        run = self.run_file().get("run", {})
        if "out_dir" in run and self.config_path is not None:
            return self.config_path.parent / run["out_dir"]
        return Path("outputs")

    def output_format(self) -> str:
        if self.format:
            return self.format
        return self.run_file().get("run", {}).get("format", "csv")

    def run_seed(self) -> Optional[int]:
        if self.seed is not None:
            return self.seed
        return self.run_file().get("run", {}).get("seed")

    def exporter(self) -> DataExporter:
        return DataExporter(self.output_root())

    def destination(self, explicit: Optional[Path], stage: str, name: str) -> Path:
        if explicit is not None:
            return explicit
        return self.exporter().stage_dir(stage) / name


pass_state = click.make_pass_decorator(CliState)

params_option = click.option('--params', '-p', 'params_path',
                             type=click.Path(path_type=Path),
                             help='Parameter file (TOML). Defaults to [run].params of --config.')


@click.group()
@click.option('--config', '-c', 'config_path', type=click.Path(path_type=Path),
              help='Run file (TOML); its values are defaults for every subcommand')
@click.option('--out-dir', '-o', type=click.Path(path_type=Path),
              help='Output directory (overrides the run file)')
@click.option('--seed', type=int, help='Random seed (overrides the run file)')
@click.option('--format', '-f', 'format_', type=click.Choice(['csv', 'bin']),
              help='Trajectory format (overrides the run file)')
@click.option('--verbose', '-v', is_flag=True, help='Debug logging')
@click.version_option()
@click.pass_context
def main(ctx: click.Context, config_path: Optional[Path], out_dir: Optional[Path],
         seed: Optional[int], format_: Optional[str], verbose: bool):
    """
    Conditional mechanical squeezing: simulate, identify, filter and estimate.
    """
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = CliState(config_path, out_dir, seed, format_, DataLoader())


# params

@main.group()
def params():
    """Parameter files."""


@params.command('show')
@params_option
@pass_state
@handle_errors
def params_show(state: CliState, params_path: Optional[Path]):
    """Print the full derived parameter set as JSON."""
    system = state.loader.load_params(state.params_path(params_path))
    click.echo(json.dumps(system.to_dict(), indent=2, sort_keys=True))


# simulate

@main.command()
@params_option
@click.option('--duration', type=float, default=10.0, show_default=True, help='Seconds')
@click.option('--sample-rate', type=float, default=20000.0, show_default=True, help='Hz')
@click.option('--optical-noise', type=click.Choice(langevin.OPTICAL_NOISE_PLACEMENTS),
              default='both', show_default=True)
@click.option('--out', type=click.Path(path_type=Path), help='Trajectory file')
@pass_state
@handle_errors
def simulate(state: CliState, params_path: Optional[Path], duration: float,
             sample_rate: float, optical_noise: str, out: Optional[Path]):
    """Simulate a (q, p, X) trajectory."""
    system = state.loader.load_params(state.params_path(params_path))
    model = langevin.build_model(system, langevin.ModelOptions(optical_noise))
    click.echo(f"Simulating {duration:g} s at {sample_rate:g} Hz...")
    trajectory = langevin.simulate(model, duration, sample_rate, seed=state.run_seed())
    fmt = state.output_format()
    out = state.destination(out, "simulate", f"trajectory.{fmt}")
    state.exporter().export_trajectory(trajectory, out, fmt)
    click.echo(f"✅ Simulated {len(trajectory)} samples")
    click.echo(f"📄 Output saved to: {out}")


# dsp

@main.group('dsp')
def dsp_group():
    """Signal-processing kernels on trajectory files (file in, file out)."""


channel_options = [
    click.argument('data', type=click.Path(path_type=Path)),
    click.option('--channel', default='X', show_default=True, help='Input column'),
    click.option('--out', type=click.Path(path_type=Path), help='Output CSV'),
]


def with_channel(command: Callable) -> Callable:
    for option in reversed(channel_options):
        command = option(command)
    return command


def _channel(state: CliState, data: Path, channel: str) -> langevin.Trajectory:
    trajectory = state.loader.load_trajectory(data)
    if channel not in trajectory.channels:
        raise DataFileError(f"{data} has no column '{channel}'")
    return trajectory


def _save(state: CliState, frame: pd.DataFrame, out: Optional[Path], name: str) -> None:
    out = state.destination(out, "dsp", name)
    state.exporter().export_frame(frame, out)
    click.echo(f"📄 Output saved to: {out}")


@dsp_group.command('psd')
@with_channel
@click.option('--resolution', type=float, default=estimate.DEFAULT_RESOLUTION,
              show_default=True, help='Frequency resolution (Hz)')
@pass_state
@handle_errors
def dsp_psd(state: CliState, data: Path, channel: str, out: Optional[Path],
            resolution: float):
    """Welch power spectral density."""
    trajectory = _channel(state, data, channel)
    spectrum = dsp.psd_welch(trajectory[channel], trajectory.sample_rate,
                             resolution=resolution)
    _save(state, spectrum.to_frame(), out, f"psd_{channel}.csv")


@dsp_group.command('csd')
@with_channel
@click.option('--other', required=True, help='Second column')
@click.option('--resolution', type=float, default=estimate.DEFAULT_RESOLUTION,
              show_default=True)
@pass_state
@handle_errors
def dsp_csd(state: CliState, data: Path, channel: str, out: Optional[Path], other: str,
            resolution: float):
    """Welch cross spectral density of two columns."""
    trajectory = _channel(state, data, channel)
    if other not in trajectory.channels:
        raise DataFileError(f"{data} has no column '{other}'")
    spectrum = dsp.cross_spectrum(trajectory[channel], trajectory[other],
                                  trajectory.sample_rate, resolution=resolution)
    _save(state, spectrum.to_frame(), out, f"csd_{channel}_{other}.csv")


@dsp_group.command('bandpass')
@with_channel
@click.option('--band', default='170:360', show_default=True, help='f_lo:f_hi (Hz)')
@click.option('--order', type=int, default=4, show_default=True)
@pass_state
@handle_errors
def dsp_bandpass(state: CliState, data: Path, channel: str, out: Optional[Path],
                 band: str, order: int):
    """Zero-phase Butterworth bandpass."""
    f_lo, f_hi = parse_band(band)
    if f_hi is None:
        raise ConfigError("bandpass needs an explicit upper edge")
    trajectory = _channel(state, data, channel)
    filtered = dsp.bandpass(trajectory[channel], f_lo, f_hi, trajectory.sample_rate, order)
    _save(state, pd.DataFrame({"t": trajectory.time, channel: filtered}), out,
          f"bandpass_{channel}.csv")


@dsp_group.command('notch')
@with_channel
@click.option('--f0', type=float, default=50.0, show_default=True, help='Mains (Hz)')
@click.option('--harmonics', type=int, default=6, show_default=True)
@click.option('--width', type=float, default=2.0, show_default=True, help='Hz')
@pass_state
@handle_errors
def dsp_notch(state: CliState, data: Path, channel: str, out: Optional[Path], f0: float,
              harmonics: int, width: float):
    """Notch the mains frequency and its harmonics."""
    trajectory = _channel(state, data, channel)
    filtered = dsp.notch_harmonics(trajectory[channel], f0, harmonics, width,
                                   trajectory.sample_rate)
    _save(state, pd.DataFrame({"t": trajectory.time, channel: filtered}), out,
          f"notch_{channel}.csv")


@dsp_group.command('lowpass')
@with_channel
@click.option('--fc', type=float, required=True, help='Corner (Hz)')
@pass_state
@handle_errors
def dsp_lowpass(state: CliState, data: Path, channel: str, out: Optional[Path], fc: float):
    """Zero-phase maximally flat lowpass."""
    trajectory = _channel(state, data, channel)
    filtered = dsp.lowpass(trajectory[channel], fc, trajectory.sample_rate)
    _save(state, pd.DataFrame({"t": trajectory.time, channel: filtered}), out,
          f"lowpass_{channel}.csv")


@dsp_group.command('count')
@with_channel
@pass_state
@handle_errors
def dsp_count(state: CliState, data: Path, channel: str, out: Optional[Path]):
    """Instantaneous frequency from zero crossings."""
    trajectory = _channel(state, data, channel)
    frequency = dsp.count_zero_crossings(trajectory[channel], trajectory.sample_rate)
    _save(state, pd.DataFrame({"t": trajectory.time, "f_hz": frequency}), out,
          f"count_{channel}.csv")


@dsp_group.command('bin')
@with_channel
@click.option('--bins', type=int, default=25, show_default=True)
@pass_state
@handle_errors
def dsp_bin(state: CliState, data: Path, channel: str, out: Optional[Path], bins: int):
    """Average over equal-width time bins."""
    trajectory = _channel(state, data, channel)
    edges = dsp.bin_edges(len(trajectory), bins)
    frame = pd.DataFrame({
        "t_bin_s": (edges[:-1] + edges[1:]) / 2.0 / trajectory.sample_rate,
        channel: dsp.bin_average(trajectory[channel], bins),
    })
    _save(state, frame, out, f"bin_{channel}.csv")


# ident

@main.group()
def ident():
    """Detuning identification from the optical spring."""


@ident.command('fit')
@click.option('--data', type=click.Path(path_type=Path), required=True,
              help='CSV with delta, f_hz, sigma_hz')
@params_option
@click.option('--photon-map', type=click.Choice(sorted(spring.PHOTON_MAPS)),
              default='fixed', show_default=True)
@click.option('--power', type=float, default=0.0, help='Incident power (W) for the data')
@click.option('--out', type=click.Path(path_type=Path), help='Output JSON')
@pass_state
@handle_errors
def ident_fit(state: CliState, data: Path, params_path: Optional[Path], photon_map: str,
              power: float, out: Optional[Path]):
    """Fit the optical-spring curve to resonance measurements."""
    system = state.loader.load_params(state.params_path(params_path))
    measurement = state.loader.load_spring_measurement(data, power)
    click.echo(f"Fitting {len(measurement.detuning_samples)} resonance points...")
    fit = spring.fit_spring(measurement, system,
                            photon_map=spring.photon_map_from_name(photon_map))
    out = state.destination(out, "ident", "fit.json")
    state.exporter().export_json(fit.to_dict(), out)
    click.echo(f"✅ Mean detuning {fit.mean_delta:.4g} kappa, "
               f"G = {format_quantity(rad_to_hz(fit.G), 'Hz/m')}")
    click.echo(f"📄 Output saved to: {out}")


@ident.command('count')
@click.option('--data', type=click.Path(path_type=Path), required=True,
              help='Trajectory with a displacement column')
@params_option
@click.option('--photon-map', type=click.Choice(sorted(spring.PHOTON_MAPS)),
              default='fixed', show_default=True)
@click.option('--band', default='170:360', show_default=True, help='Bandpass (Hz)')
@click.option('--lowpass', 'lowpass_hz', type=float, default=8.2, show_default=True)
@click.option('--bins', type=int, default=3, show_default=True, help='Detuning bins')
@click.option('--out', type=click.Path(path_type=Path), help='Output JSON')
@pass_state
@handle_errors
def ident_count(state: CliState, data: Path, params_path: Optional[Path], photon_map: str,
                band: str, lowpass_hz: float, bins: int, out: Optional[Path]):
    """Mean detuning from the counted resonance of a modulated record."""
    system = state.loader.load_params(state.params_path(params_path))
    record = _channel(state, data, "displacement")
    f_lo, f_hi = parse_band(band)
    if f_hi is None:
        raise ConfigError("count needs an explicit upper band edge")
    counted = spring.count_resonance(record["displacement"], record.sample_rate,
                                     (f_lo, f_hi), lowpass_hz)
    result = spring.detuning_from_counts(counted.instantaneous_hz, counted.slow_displacement,
                                         system, spring.photon_map_from_name(photon_map),
                                         bins)
    out = state.destination(out, "ident", "detuning.json")
    state.exporter().export_json(result.to_dict(), out)
    click.echo(f"✅ Mean detuning {result.mean_delta:.4g} kappa ({result.branch} branch)")
    click.echo(f"📄 Output saved to: {out}")


# wiener

@main.group('wiener')
def wiener_group():
    """Causal Wiener filter synthesis."""


@wiener_group.command('synth')
@params_option
@click.option('--grid', default='0:5000:1', show_default=True, help='f0:f1:df (Hz)')
@click.option('--oracle', is_flag=True, help='Use the numerical causal estimator')
@click.option('--out', type=click.Path(path_type=Path), help='Output CSV')
@pass_state
@handle_errors
def wiener_synth(state: CliState, params_path: Optional[Path], grid: str, oracle: bool,
                 out: Optional[Path]):
    """Tabulate H_q and H_p on a frequency grid."""
    system = state.loader.load_params(state.params_path(params_path))
    source = "oracle" if oracle else "analytic"
    filters = wiener.synthesize(system, parse_grid(grid), source)
    out = state.destination(out, "synth", f"filters_{source}.csv")
    state.exporter().export_frame(filters.to_frame(), out)
    if filters.susceptibility is not None and filters.coefficients is not None:
        click.echo(f"omega' = {format_quantity(filters.susceptibility.omega_prime_hz, 'Hz')}, "
                   f"gamma' = {format_quantity(filters.susceptibility.gamma_prime_hz, 'Hz')}, "
                   f"A = {filters.coefficients.A:.4g}, B = {filters.coefficients.B:.4g} s")
    click.echo(f"✅ Synthesized {source} filters on {filters.frequencies.size} points")
    click.echo(f"📄 Output saved to: {out}")


# estimate

@main.group('estimate')
def estimate_group():
    """Conditional state estimation."""


def _filters_for(state: CliState, system, trajectory: langevin.Trajectory,
                 filter_path: Optional[Path], source: str) -> wiener.FilterResponse:
    grid = dsp.fft_grid(len(trajectory), trajectory.sample_rate)
    if filter_path is None:
        return wiener.synthesize(system, grid, source)
    filters = state.loader.load_filters(filter_path)
    dsp.check_grid(filters.frequencies, len(trajectory), trajectory.sample_rate)
    return filters


def _resolve_band(band: str, system) -> tuple:
    f_lo, f_hi = parse_band(band)
    if f_hi is None:
        f_hi = estimate.default_band(system, f_lo=f_lo)[1]
    return f_lo, f_hi


@estimate_group.command('run')
@click.option('--data', type=click.Path(path_type=Path), required=True,
              help='Trajectory with an X column')
@click.option('--filter', 'filter_path', type=click.Path(path_type=Path),
              help='Filter CSV on the data FFT grid (synthesized from --params if omitted)')
@params_option
@click.option('--band', default='105:auto', show_default=True, help='f_lo:f_hi or f_lo:auto')
@click.option('--reference', type=click.Choice(estimate.RESIDUAL_REFERENCES),
              default='measured', show_default=True)
@click.option('--source', type=click.Choice(wiener.FILTER_SOURCES), default='analytic',
              show_default=True)
@click.option('--resolution', type=float, default=estimate.DEFAULT_RESOLUTION,
              show_default=True)
@click.option('--notch/--no-notch', default=False, help='Notch 50 Hz and harmonics')
@click.option('--out', type=click.Path(path_type=Path), help='Output JSON')
@pass_state
@handle_errors
def estimate_run(state: CliState, data: Path, filter_path: Optional[Path],
                 params_path: Optional[Path], band: str, reference: str, source: str,
                 resolution: float, notch: bool, out: Optional[Path]):
    """Filter the record and integrate the residual spectra over the band."""
    system = state.loader.load_params(state.params_path(params_path))
    trajectory = _channel(state, data, "X")
    model = langevin.build_model(system)
    filters = _filters_for(state, system, trajectory, filter_path, source)
    if reference == "truth" and not {"q", "p"} <= set(trajectory.channels):
        raise ConfigError("--reference truth needs q and p columns")
    truth = (trajectory["q"], trajectory["p"]) if reference == "truth" else None
    f_band = _resolve_band(band, system)
    click.echo(f"Conditioning {len(trajectory)} samples over {f_band[0]:g}-{f_band[1]:g} Hz...")
    residuals = estimate.condition(trajectory["X"], filters, trajectory.sample_rate,
                                   model.position_gain, system.omega_m, truth=truth,
                                   notch=estimate.NotchSpec() if notch else None)
    analysis = estimate.residual_state(residuals, f_band, resolution)
    out = state.destination(out, "estimate", "state.json")
    exporter = state.exporter()
    exporter.export_json(analysis.state.to_dict(), out)
    exporter.export_frame(analysis.spectra_frame(), out.with_name(out.stem + "_spectra.csv"))
    exporter.export_frame(estimate.ellipse_boundary(analysis.state),
                          out.with_name(out.stem + "_ellipse.csv"))
    click.echo(f"✅ Purity {analysis.state.purity:.4g}, squeeze angle "
               f"{analysis.state.angle:.2f} deg")
    click.echo(f"📄 Output saved to: {out}")


@estimate_group.command('sweep')
@click.option('--data', type=click.Path(path_type=Path),
              help='Trajectory with an X column (model evaluation if omitted)')
@params_option
@click.option('--grid-decades', type=float, default=1.0, show_default=True)
@click.option('--points', type=int, default=9, show_default=True)
@click.option('--mode', type=click.Choice(['cross', 'grid']), default='cross',
              show_default=True)
@click.option('--band', default='full', show_default=True,
              help='"full" (truth reference only) or f_lo:f_hi such as 105:auto')
@click.option('--reference', type=click.Choice(estimate.RESIDUAL_REFERENCES),
              default='truth', show_default=True)
@click.option('--source', type=click.Choice(wiener.FILTER_SOURCES), default='oracle',
              show_default=True)
@click.option('--out', type=click.Path(path_type=Path), help='Output CSV')
@pass_state
@handle_errors
def estimate_sweep(state: CliState, data: Optional[Path], params_path: Optional[Path],
                   grid_decades: float, points: int, mode: str, band: str, reference: str,
                   source: str, out: Optional[Path]):
    """Purity over perturbed n_th and N_th."""
    system = state.loader.load_params(state.params_path(params_path))
    model = langevin.build_model(system)
    if band == 'full':
        if reference != 'truth':
            raise ConfigError("--band full needs --reference truth")
        f_band = None
    else:
        f_band = _resolve_band(band, system)
    if reference == 'measured':
        logger.warning("The measured reference rewards filters that follow the record; "
                       "the sweep maximum will not locate n_th or N_th")
    if data is None:
        evaluator = estimate.ModelEvaluator(model, f_band, source, reference)
    else:
        trajectory = _channel(state, data, "X")
        if reference == "truth" and not {"q", "p"} <= set(trajectory.channels):
            raise ConfigError("--reference truth needs q and p columns")
        truth = (trajectory["q"], trajectory["p"]) if reference == "truth" else None
        evaluator = estimate.DataEvaluator(trajectory["X"], trajectory.sample_rate, f_band,
                                           model.position_gain, system.omega_m, source,
                                           truth=truth)
    result = estimate.purity_sweep(system, evaluator,
                                   log_grid(system.n_th, grid_decades, points),
                                   log_grid(system.N_th, grid_decades, points), mode)
    out = state.destination(out, "sweep", "sweep.csv")
    state.exporter().export_frame(result.frame, out)
    click.echo(f"✅ Maximum purity at n_th = {result.argmax[0]:.4g}, "
               f"N_th = {result.argmax[1]:.4g}")
    click.echo(f"📄 Output saved to: {out}")


# pipeline

@main.command('run')
@click.option('--stages', help='Comma-separated stage list (overrides the run file)')
@pass_state
@handle_errors
def run_command(state: CliState, stages: Optional[str]):
    """Run the configured pipeline stages."""
    if state.config_path is None:
        raise ConfigError("run needs --config")
    overrides: Dict[str, Any] = {
        "seed": state.seed,
        "format": state.format,
        "out_dir": str(state.out_dir.resolve()) if state.out_dir else None,
        "stages": [s.strip() for s in stages.split(",")] if stages else None,
    }
    config = RunConfig.from_file(state.config_path, state.loader, **overrides)
    click.echo(f"Running {', '.join(config.stages)} into {config.out_dir}...")
    manifest = Pipeline(config, loader=state.loader).run()
    click.echo(f"✅ Completed {len(manifest['stages'])} stages")
    click.echo(f"📄 Manifest saved to: {config.out_dir / 'manifest.json'}")


@main.command('report')
@click.option('--manifest', 'manifest_path', type=click.Path(path_type=Path),
              help='Manifest file (defaults to <out-dir>/manifest.json)')
@pass_state
@handle_errors
def report_command(state: CliState, manifest_path: Optional[Path]):
    """Assemble summary.json, figure CSVs and report.xlsx from a manifest."""
    manifest_path = manifest_path or state.output_root() / "manifest.json"
    manifest = state.loader.load_json(manifest_path)
    bundle = build_report(manifest, manifest_path.parent,
                          DataExporter(manifest_path.parent))
    headlines = bundle["summary"].get("headlines", {})
    for name, entry in headlines.items():
        deviation = entry.get("relative_deviation")
        shown = "" if deviation is None else f" ({deviation:+.1%} vs published)"
        value = entry.get("value")
        click.echo(f"  {name}: {value if value is None else format(value, '.4g')}{shown}")
    click.echo(f"✅ Report written ({len(bundle['outputs'])} files)")
    click.echo(f"📄 Output saved to: {manifest_path.parent / 'report'}")


if __name__ == '__main__':
    main()
