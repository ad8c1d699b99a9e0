"""Config-driven command line for reproducible, file-emitting experiments.

One JSON config file describes an experiment; flags may override only seed,
n_gates and output_dir so provenance stays in the config.  Exit codes:
0 success, 2 config error, 3 runtime error; failures print a
machine-readable JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import acquisition, apd, characterize, network, presets, waveform

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    def __init__(self, paths):
        self.paths = list(paths)
        super().__init__("; ".join(self.paths))


def _dataclass_from(cfg: dict, cls, path: str, errors: list):
    try:
        return cls(**cfg)
    except TypeError as e:
        errors.append(f"{path}: {e}")
    except ValueError as e:
        errors.append(f"{path}: {e}")
    return None


def _require(cfg: dict, key: str, types, errors: list, default=None, required=True):
    if key not in cfg:
        if required:
            errors.append(f"{key}: missing required key")
        return default
    v = cfg[key]
    if not isinstance(v, types) or isinstance(v, bool) and bool not in (
        types if isinstance(types, tuple) else (types,)
    ):
        errors.append(f"{key}: expected {types}, got {type(v).__name__}")
        return default
    return v


def _load_config(path: str, args) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise ConfigError([f"config: cannot read {path}: {e}"]) from None
    except json.JSONDecodeError as e:
        raise ConfigError([f"config: invalid JSON in {path}: {e}"]) from None
    if not isinstance(cfg, dict):
        raise ConfigError(["config: top level must be a JSON object"])
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.n_gates is not None:
        cfg["n_gates"] = args.n_gates
    if args.output_dir is not None:
        cfg["output_dir"] = args.output_dir
    return cfg


def _common(cfg: dict, errors: list, need_gates: bool):
    seed = _require(cfg, "seed", int, errors)
    out_dir = _require(cfg, "output_dir", str, errors, default=".", required=False)
    emit = _require(cfg, "emit", list, errors, default=["csv", "json"], required=False)
    if emit is not None:
        bad = [e for e in emit if e not in ("csv", "json")]
        if bad:
            errors.append(f"emit: entries must be 'csv' or 'json', got {bad}")
    n_gates = None
    if need_gates:
        n_gates = _require(cfg, "n_gates", int, errors)
        if isinstance(n_gates, int) and n_gates < 1:
            errors.append("n_gates: must be >= 1")
    return seed, out_dir, emit or [], n_gates


def _network_section(cfg: dict, errors: list):
    net = _require(cfg, "network", dict, errors)
    if net is None:
        return None
    f_g = net.get("f_g", 1.25e9)
    if not isinstance(f_g, (int, float)) or isinstance(f_g, bool) or f_g <= 0:
        errors.append("network.f_g: must be a positive number")
        f_g = 1.25e9
    saw_cfg = net.get("saw")
    if not isinstance(saw_cfg, dict):
        errors.append("network.saw: missing required object")
        return None
    saw = _dataclass_from(saw_cfg, network.SawBpf, "network.saw", errors)
    band_stop = None
    if net.get("band_stop") is not None:
        if not isinstance(net["band_stop"], dict):
            errors.append("network.band_stop: must be an object or null")
        else:
            band_stop = _dataclass_from(net["band_stop"], network.Notch, "network.band_stop", errors)
    stages = net.get("stages", 2)
    if not isinstance(stages, int) or stages < 1:
        errors.append("network.stages: must be an integer >= 1")
        stages = 1
    tap = net.get("coupler_tap", 0.9)
    if not isinstance(tap, (int, float)) or not 0 < tap < 1:
        errors.append("network.coupler_tap: must lie in (0, 1)")
        tap = 0.9
    spectrum = net.get("spectrum", {})
    if not isinstance(spectrum, dict):
        errors.append("network.spectrum: must be an object")
        spectrum = {}
    return {
        "f_g": float(f_g),
        "saw": saw,
        "band_stop": band_stop,
        "stages": stages,
        "coupler_tap": float(tap),
        "spectrum": spectrum,
    }


def _detector_section(cfg: dict, errors: list):
    extra = None
    if "presets_file" in cfg:
        try:
            extra = presets.load_presets(cfg["presets_file"])
        except (OSError, ValueError, TypeError) as e:
            errors.append(f"presets_file: {e}")
    if "detector_preset" in cfg:
        try:
            return presets.get_preset(cfg["detector_preset"], extra)
        except KeyError as e:
            errors.append(f"detector_preset: {e.args[0]}")
            return None
    det_cfg = _require(cfg, "detector", dict, errors)
    if det_cfg is None:
        return None
    return _dataclass_from(det_cfg, apd.DetectorConfig, "detector", errors)


def _source_section(cfg: dict, errors: list):
    src_cfg = _require(cfg, "source", dict, errors)
    if src_cfg is None:
        return None
    return _dataclass_from(src_cfg, apd.SourceConfig, "source", errors)


def _acquisition_section(cfg: dict, errors: list):
    acq_cfg = cfg.get("acquisition", {})
    if not isinstance(acq_cfg, dict):
        errors.append("acquisition: must be an object")
        return None
    tdc = _dataclass_from(acq_cfg.get("tdc", {}), acquisition.TdcSpec, "acquisition.tdc", errors)
    disc_cfg = acq_cfg.get("discriminator", {"threshold": 5e-6})
    disc = _dataclass_from(disc_cfg, acquisition.DiscriminatorSpec, "acquisition.discriminator", errors)
    offset = acq_cfg.get("gate_offset", 0.0)
    if not isinstance(offset, (int, float)):
        errors.append("acquisition.gate_offset: must be a number")
        offset = 0.0
    if tdc is None or disc is None:
        return None
    return acquisition.AcquisitionConfig(tdc=tdc, discriminator=disc, gate_offset=float(offset))


def _raise_if(errors: list):
    if errors:
        raise ConfigError(errors)


def _build_design(net):
    design = network.solve_unic_delay(net["saw"].group_delay, net["f_g"], net["coupler_tap"])
    return network.balanced_design(design, net["saw"])


def _chain_responses(net, grid) -> network.TwoPortResponse:
    design = _build_design(net)
    unic = network.unic_response(design, net["saw"], grid)
    parts = [unic] * net["stages"]
    if net["band_stop"] is not None:
        parts.append(network.block_response(net["band_stop"], grid))
    return network.cascade(parts)


def _emit_path(out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_design(cfg) -> list[str]:
    errors: list[str] = []
    _, out_dir, emit, _ = _common(cfg, errors, need_gates=False)
    net = _network_section(cfg, errors)
    _raise_if(errors)
    design = _build_design(net)
    written = []
    if "json" in emit:
        path = _emit_path(out_dir, "design.json")
        network.write_design_report(path, design)
        written.append(path)
    print(
        f"design: n={design.n} delta_t_s={design.delta_t!r} "
        f"att_balance_db={design.att_balance_db!r} half_wave_warning={design.half_wave_warning}"
    )
    return written


def cmd_spectrum(cfg) -> list[str]:
    errors: list[str] = []
    _, out_dir, emit, _ = _common(cfg, errors, need_gates=False)
    net = _network_section(cfg, errors)
    _raise_if(errors)
    sp = net["spectrum"]
    f_g = net["f_g"]
    f_start = float(sp.get("f_start", 1e8))
    f_stop = float(sp.get("f_stop", 2.5e9))
    coarse_step = float(sp.get("coarse_step", 1e5))
    fine_step = float(sp.get("fine_step", 1e3))
    fine_span = float(sp.get("fine_span", 2e6))

    metrics_resp = _chain_responses(net, network.metrics_grid(step=min(fine_step, 1e3)))
    metrics = network.null_metrics(metrics_resp, f_g)

    written = []
    if "csv" in emit:
        n_fine = int(round(fine_span / fine_step)) + 1
        fine_grid = network.FrequencyGrid(f_g - fine_span / 2, f_g - fine_span / 2 + (n_fine - 1) * fine_step, n_fine)
        n_coarse = int(round((f_stop - f_start) / coarse_step)) + 1
        coarse_grid = network.FrequencyGrid(f_start, f_start + (n_coarse - 1) * coarse_step, n_coarse)
        path = _emit_path(out_dir, "spectrum.csv")
        network.write_spectrum_csv(path, [_chain_responses(net, fine_grid),
                                          _chain_responses(net, coarse_grid)])
        written.append(path)
    if "json" in emit:
        path = _emit_path(out_dir, "null_metrics.json")
        with open(path, "w") as fh:
            json.dump(
                {
                    "f_null_hz": metrics.f_null,
                    "depth_db": metrics.depth_db,
                    "width_30db_hz": metrics.width_30db,
                    "background_loss_db": metrics.background_loss_db,
                },
                fh,
                indent=2,
            )
            fh.write("\n")
        written.append(path)
    print(
        f"spectrum: depth_db={metrics.depth_db:.2f} width_30db_hz={metrics.width_30db:.6g} "
        f"background_loss_db={metrics.background_loss_db:.2f}"
    )
    return written


def cmd_waveform(cfg) -> list[str]:
    errors: list[str] = []
    seed, out_dir, emit, _ = _common(cfg, errors, need_gates=False)
    wf = _require(cfg, "waveform", dict, errors)
    net = _network_section(cfg, errors) if (wf or {}).get("filtered", True) else None
    _raise_if(errors)

    rate = float(wf.get("sample_rate", waveform.DEFAULT_SAMPLE_RATE))
    duration = float(wf.get("duration", 1e-6))
    f_g = float(wf.get("f_g", net["f_g"] if net else 1.25e9))
    harmonics = tuple(tuple(h) for h in wf.get("harmonics", []))
    gate_spec = waveform.GateWaveSpec(f_g, float(wf.get("fundamental_amp", 0.42)), harmonics)
    record = waveform.synth_capacitive(gate_spec, duration, rate)

    stride = int(wf.get("impulse_gate_stride", 0))
    if stride > 0:
        impulse = waveform.ImpulseSpec(fwhm=float(wf.get("impulse_fwhm", 1.5e-10)),
                                       peak=float(wf.get("impulse_peak", 1e-3)))
        period = 1.0 / f_g
        times = np.arange(stride, int(duration * f_g) - 1, stride) * period
        record = waveform.add_impulses(record, impulse, times)

    noise_rms = float(wf.get("noise_rms", 0.0))
    if noise_rms > 0:
        record = waveform.add_noise(record, noise_rms, seed)

    if net is not None:
        n_pts = waveform.DEFAULT_IR_LENGTH // 2 + 1
        grid = network.FrequencyGrid(0.0, rate / 2.0, n_pts)
        record = waveform.apply_response(record, _chain_responses(net, grid))

    written = []
    bin_path = _emit_path(out_dir, "waveform.bin")
    waveform.write_waveform_binary(bin_path, record)
    written.append(bin_path)
    if "csv" in emit:
        path = _emit_path(out_dir, "waveform.csv")
        waveform.write_waveform_csv(path, record)
        written.append(path)
    print(f"waveform: n_samples={len(record)} rms_v={record.rms()!r}")
    return written


def cmd_simulate(cfg) -> list[str]:
    errors: list[str] = []
    seed, out_dir, emit, n_gates = _common(cfg, errors, need_gates=True)
    det = _detector_section(cfg, errors)
    src = _source_section(cfg, errors)
    acq = _acquisition_section(cfg, errors)
    _raise_if(errors)

    stream = apd.simulate(det, src, n_gates, seed)
    ts = acquisition.tdc(stream.time, acq.tdc)
    written = []
    ts_path = _emit_path(out_dir, "timestamps.bin")
    acquisition.write_timestamps_binary(ts_path, ts)
    written.append(ts_path)
    if "csv" in emit:
        path = _emit_path(out_dir, "events.csv")
        apd.write_events_csv(path, stream)
        written.append(path)
    if "json" in emit:
        path = _emit_path(out_dir, "summary.json")
        summary = {"n_gates": n_gates, "n_events": len(stream), "counts": stream.counts(),
                   "n_timestamps": int(ts.size)}
        if src.mode == "pulsed":
            gc = acquisition.classify(ts, det.f_g, apd.pulse_ratio(det, src),
                                      src.illuminated_gate_phase, n_gates, offset=acq.gate_offset)
            summary["p_i"] = gc.p_i
            summary["p_ni"] = gc.p_ni
        with open(path, "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
        written.append(path)
    print(f"simulate: n_events={len(stream)} counts={stream.counts()}")
    return written


def cmd_characterize(cfg) -> list[str]:
    errors: list[str] = []
    seed, out_dir, emit, n_gates = _common(cfg, errors, need_gates=True)
    det = _detector_section(cfg, errors)
    src = _source_section(cfg, errors)
    acq = _acquisition_section(cfg, errors)
    _raise_if(errors)

    report, _, ts_on = characterize._characterize_streams(det, src, acq, n_gates, seed)
    written = []
    if "json" in emit:
        path = _emit_path(out_dir, "run_report.json")
        characterize.write_run_report(path, report)
        written.append(path)
        gc = acquisition.GateCounts(
            n_gates_illuminated=report.n_gates_illuminated,
            n_gates_non_illuminated=report.n_gates_non_illuminated,
            clicks_illuminated=report.clicks_illuminated,
            clicks_non_illuminated=report.clicks_non_illuminated,
            p_i=report.p_i,
            p_ni=report.p_ni,
        )
        path = _emit_path(out_dir, "gate_counts.json")
        acquisition.write_gate_counts_json(path, gc)
        written.append(path)
    if "csv" in emit:
        bin_s = float(cfg.get("histogram_bin", 1e-11))
        period = report.r / det.f_g
        hist = acquisition.histogram(ts_on, period, bin_s)
        path = _emit_path(out_dir, "histogram.csv")
        acquisition.write_histogram_csv(path, hist)
        written.append(path)
    print(
        f"characterize: eta_net={report.eta_net!r} p_a={report.p_a!r} p_d={report.p_d!r}"
    )
    return written


def _scenario_list(cfg, errors):
    sweep_cfg = _require(cfg, "sweep", dict, errors)
    if sweep_cfg is None:
        return None
    entries = sweep_cfg.get("scenarios")
    if not isinstance(entries, list) or len(entries) < 2:
        errors.append("sweep.scenarios: must be a list of at least 2 entries")
        return None
    extra = None
    if "presets_file" in cfg:
        try:
            extra = presets.load_presets(cfg["presets_file"])
        except (OSError, ValueError, TypeError) as e:
            errors.append(f"presets_file: {e}")
    out = []
    for i, entry in enumerate(entries):
        if isinstance(entry, str):
            try:
                out.append((entry, presets.get_preset(entry, extra)))
            except KeyError as e:
                errors.append(f"sweep.scenarios[{i}]: {e.args[0]}")
        elif isinstance(entry, dict) and "label" in entry and "detector" in entry:
            det = _dataclass_from(entry["detector"], apd.DetectorConfig,
                                  f"sweep.scenarios[{i}].detector", errors)
            if det is not None:
                out.append((str(entry["label"]), det))
        else:
            errors.append(f"sweep.scenarios[{i}]: must be a preset name or {{label, detector}}")
    return out


def cmd_sweep(cfg) -> list[str]:
    errors: list[str] = []
    seed, out_dir, emit, n_gates = _common(cfg, errors, need_gates=True)
    scenarios = _scenario_list(cfg, errors)
    src = _source_section(cfg, errors)
    acq = _acquisition_section(cfg, errors)
    _raise_if(errors)

    result = characterize.efficiency_sweep(scenarios, src, acq, n_gates, seed)
    written = []
    if "csv" in emit:
        path = _emit_path(out_dir, "sweep.csv")
        characterize.write_sweep_csv(path, result)
        written.append(path)
    if "json" in emit:
        path = _emit_path(out_dir, "sweep.json")
        with open(path, "w") as fh:
            json.dump({"reports": [r.to_dict() for r in result.reports]}, fh, indent=2)
            fh.write("\n")
        written.append(path)
    for p in result.points:
        print(f"sweep[{p.label}]: eta_net={p.eta_net!r} p_a={p.p_a!r} p_d={p.p_d!r}")
    return written


def cmd_maxrate(cfg) -> list[str]:
    errors: list[str] = []
    seed, out_dir, emit, n_gates = _common(cfg, errors, need_gates=True)
    det = _detector_section(cfg, errors)
    acq = _acquisition_section(cfg, errors)
    mr = _require(cfg, "maxrate", dict, errors)
    flux_list = None
    if mr is not None:
        flux_list = mr.get("flux_list")
        if not isinstance(flux_list, list) or not flux_list or not all(
            isinstance(x, (int, float)) for x in flux_list
        ):
            errors.append("maxrate.flux_list: must be a non-empty list of numbers")
    _raise_if(errors)

    result = characterize.count_rate_vs_flux(det, acq, [float(x) for x in flux_list], n_gates, seed)
    written = []
    if "csv" in emit:
        path = _emit_path(out_dir, "maxrate.csv")
        characterize.write_sweep_csv(path, result)
        written.append(path)
    if "json" in emit:
        path = _emit_path(out_dir, "maxrate.json")
        rows = [
            {"flux": p.flux, "rate_hz": p.rate_hz, "photocurrent_a": p.photocurrent_a,
             "charge_c": characterize.charge_from_photocurrent(p.photocurrent_a, p.rate_hz)
             if p.rate_hz > 0 else 0.0}
            for p in result.points
        ]
        with open(path, "w") as fh:
            json.dump({"points": rows}, fh, indent=2)
            fh.write("\n")
        written.append(path)
    for p in result.points:
        print(f"maxrate[{p.label}]: flux={p.flux!r} rate_hz={p.rate_hz!r}")
    return written


_COMMANDS = {
    "design": cmd_design,
    "spectrum": cmd_spectrum,
    "waveform": cmd_waveform,
    "simulate": cmd_simulate,
    "characterize": cmd_characterize,
    "sweep": cmd_sweep,
    "maxrate": cmd_maxrate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unicsim",
        description="Gated-detector readout chain simulator and characterization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--n-gates", type=int, default=None, help="override config n_gates")
        p.add_argument("--output-dir", default=None, help="override config output_dir")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config, args)
        written = _COMMANDS[args.command](cfg)
    except ConfigError as e:
        json.dump({"error": "config", "paths": e.paths}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_CONFIG
    except (ValueError, TypeError, KeyError, OSError) as e:
        json.dump({"error": "runtime", "message": f"{type(e).__name__}: {e}"}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_RUNTIME
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
