"""Batch front end.

Usage::

    emitterlab run EXPERIMENT [--config FILE] [--seed N] [--out DIR] [--threads N]
                              [--dump-config] [--KEY VALUE ...]
    emitterlab list

Configs are flat YAML mappings (``key: value``, values scalar or lists).
Every run writes ``result.json`` and, where relevant, CSV tables with a
``# units:`` header into ``--out``. Exit status: 0 success, 2 invalid input,
3 computation or fit failure.
"""

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import cce, crystalfield as cf, hom, impurity, lattice, rates
from .constants import FIELD_GAUSS, GAMMA_W183
from .errors import DomainError, EstimationError, FitError

EXIT_OK, EXIT_INVALID, EXIT_COMPUTE = 0, 2, 3


class ConfigError(ValueError):
    pass


# ---- parameter schemas: key -> (default, unit)

_BATH = {
    "a": (lattice.A_LATTICE, "angstrom"),
    "c": (lattice.C_LATTICE, "angstrom"),
    "abundance": (0.143, "1"),
    "radius": (11.0, "nm"),
    "excluded_nearest_sites": (10, "count"),
    "pinned": (True, "bool"),
    "pinned_position": ([2.6215, 0.0, 5.688], "angstrom"),
    "pinned_A_par": (25.2, "kHz"),
    "pinned_A_perp": (31.7, "kHz"),
    "g_perp": (8.6, "1"),
    "g_par": (1.4, "1"),
    "field_angle": (22.0, "deg"),
    "field": (FIELD_GAUSS, "G"),
    "gamma_n": (GAMMA_W183, "kHz/G"),
}
_CCE = {
    **_BATH,
    "n_baths": (10, "count"),
    "order": (1, "1"),
    "pair_cutoff": (1.5, "nm"),
}
_HOM_MODEL = {
    "A": (100.0, "counts/bin"),
    "R": (0.43, "1"),
    "P_dc": (0.5, "counts/bin"),
    "t_rep": (175.0, "us"),
    "T1": (9.1, "us"),
    "dephasing": ("lorentzian", "none|lorentzian|gaussian|modulation"),
    "T2": (15.3, "us"),
    "sigma": (0.039, "rad/us"),
    "A_m": (0.73 * np.pi, "rad"),
    "modulation_freq": (43.0, "kHz"),
    "n_side_peaks": (10, "count"),
    "bin_width": (0.5, "us"),
    "span": (1000.0, "us"),
    "poisson": (True, "bool"),
}
_CF = {
    "B20": (cf.SYNTHETIC_BASE.B20, "cm-1"),
    "B40": (cf.SYNTHETIC_BASE.B40, "cm-1"),
    "B60": (cf.SYNTHETIC_BASE.B60, "cm-1"),
    "B44": (cf.SYNTHETIC_BASE.B44, "cm-1"),
    "B64_re": (cf.SYNTHETIC_BASE.B64_re, "cm-1"),
    "B64_im": (cf.SYNTHETIC_BASE.B64_im, "cm-1"),
}

SCHEMAS = {
    "bath-generate": dict(_BATH),
    "cce-ramsey": {**_CCE, "t_max": (12.0, "us"), "n_times": (121, "count")},
    "cce-hahn": {**_CCE, "order": (2, "1"), "t_max": (60000.0, "us"), "n_times": (60, "count")},
    "cce-dd": {**_CCE, "n_pulses": (64, "count"), "t_max": (2000.0, "us"), "n_times": (200, "count")},
    "cce-fit-hyperfine": {
        **_BATH, "pinned": (False, "bool"), "radius": (4.0, "nm"), "n_baths": (1, "count"),
        "data": ("", "path to CSV time_us,value; synthesized when empty"),
        "true_A_par": (25.2, "kHz"), "true_A_perp": (31.7, "kHz"),
        "envelope_T2": (44.0, "us"), "envelope_n": (1.4, "1"),
        "t_max": (60.0, "us"), "n_times": (121, "count"),
    },
    "hom-simulate": dict(_HOM_MODEL),
    "hom-fit": {**_HOM_MODEL, "data": ("", "path to CSV bin_lo,bin_hi,counts; synthesized when empty"),
                "free": (["A", "P_dc", "T_dep"], "names")},
    "hom-visibility": {"V_int": (0.84, "1"), "T1": (9.1, "us"), "R": (0.43, "1"), "T1_voigt": (9.2, "us")},
    "cf-gtensor": dict(_CF),
    "cf-fit-perturbation": {
        **_CF, "target": ("synthetic", "synthetic|ion1|ion2"),
        "B20_bar": (9.3, "cm-1"), "alpha": (90.4, "deg"), "beta": (265.0, "deg"),
    },
    "rates-budget": {
        "eta_cav": (0.26, "1"), "eta_gc": (0.36, "1"), "eta_net": (0.61, "1"), "eta_det": (0.85, "1"),
        "gating_loss": (0.07, "1"), "input_split": (0.75, "1"), "spool_transmission": (0.2, "1"),
        "P1_measured": (0.035, "1"), "nbar_bright": (6.4, "counts"), "nbar_dark": (0.0, "counts"),
        "threshold": (1, "counts"),
    },
    "rates-t1fit": {
        "frequencies": ([7.0, 11.08], "GHz"), "temperatures": ([0.47, 0.47], "K"), "T1s": ([3.7, 0.393], "s"),
    },
    "impurity-estimate": {
        "geometry": ("3d", "3d|2d"), "t2star_obs": (0.247, "us"), "sigma_obs": (0.009, "us"),
        "n_instances": (2000, "count"), "grid_min": (None, "cm-3 or nm-2"), "grid_max": (None, "cm-3 or nm-2"),
        "grid_n": (40, "count"), "surface_depth": (10.0, "nm"), "min_distance": (1.0, "nm"),
        "sample_radius": (1.0e4, "nm"), "surface_normal": (list(impurity.SURFACE_NORMAL), "1"),
        "g_perp": (8.6, "1"), "g_par": (1.4, "1"), "field_angle": (22.0, "deg"),
    },
}


# ---- config handling

def _coerce(key, value, default):
    if default is None:
        if value is None:
            return None
        return _coerce(key, value, 0.0)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "yes", "no", "1", "0"):
            return value.lower() in ("true", "yes", "1")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
        if v != int(v):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(v)
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        proto = default[0] if default else 0.0
        return [_coerce(key, v, proto) for v in value]
    if isinstance(default, str):
        if isinstance(value, (dict, list)):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return str(value)
    raise ConfigError(f"{key}: unsupported type")


def build_config(experiment, file_values=None, overrides=None, seed=None):
    """Validated ``{experiment, seed, params}`` with defaults filled in."""
    if experiment not in SCHEMAS:
        raise ConfigError(f"experiment: unknown experiment {experiment!r}")
    schema = SCHEMAS[experiment]
    params = {k: (list(v[0]) if isinstance(v[0], list) else v[0]) for k, v in schema.items()}
    cfg_seed = 0
    for source in (file_values or {}, overrides or {}):
        for k, v in source.items():
            if k in ("experiment",):
                continue
            if k == "seed":
                cfg_seed = _coerce("seed", v, 0)
                continue
            if k not in schema:
                raise ConfigError(f"{k}: unknown key for experiment {experiment}")
            params[k] = _coerce(k, v, schema[k][0])
    if seed is not None:
        cfg_seed = seed
    if cfg_seed < 0:
        raise ConfigError("seed: must be a non-negative integer")
    return {"experiment": experiment, "seed": int(cfg_seed), "params": params}


def load_config_file(path):
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    for k, v in data.items():
        if isinstance(v, dict) or (isinstance(v, list) and any(isinstance(x, (dict, list)) for x in v)):
            raise ConfigError(f"{k}: nested values are not allowed in the flat config format")
    return data


def dump_config(config):
    flat = {"experiment": config["experiment"], "seed": config["seed"], **config["params"]}
    return yaml.safe_dump(flat, sort_keys=False, default_flow_style=False)


# ---- output helpers

def _round(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not np.isfinite(x):
            return None if np.isnan(x) else ("inf" if x > 0 else "-inf")
        return float(f"{x:.12g}")
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_round(v) for v in x]
    return x


def write_json(path, obj):
    Path(path).write_text(json.dumps(_round(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, columns, units):
    names = list(columns)
    buf = io.StringIO()
    buf.write("# units: " + ",".join(units) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in zip(*(np.asarray(columns[n]) for n in names)):
        w.writerow([f"{float(v):.12g}" for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path, ncols):
    rows = []
    for line in Path(path).read_text().splitlines():
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = [p.strip() for p in s.split(",")]
        try:
            rows.append([float(p) for p in parts[:ncols]])
        except ValueError:
            continue  # header row
    if not rows or any(len(r) < ncols for r in rows):
        raise ConfigError(f"data: {path} needs {ncols} numeric columns")
    return np.array(rows)


# ---- experiments

def _gtensor(p):
    return cf.GTensor.axial(p["g_perp"], p["g_par"])


def _bdir(p):
    phi = np.radians(p["field_angle"])
    return np.array([np.cos(phi), np.sin(phi), 0.0])


def _baths(p, seed):
    spec = lattice.LatticeSpec(a=p["a"], c=p["c"])
    pin = (lattice.BathSpin(p["pinned_position"], p["pinned_A_par"], p["pinned_A_perp"]) if p["pinned"] else None)
    n = p.get("n_baths", 1)
    out = []
    for k in range(n):
        conf = lattice.NuclearBathConfig(p["abundance"], p["radius"], p["excluded_nearest_sites"], pin, seed + k)
        out.append(lattice.sample_nuclear_bath(spec, conf, _bdir(p), _gtensor(p), p["field"], p["gamma_n"]))
    return out


def run_bath_generate(p, seed, out, workers):
    b = _baths(p, seed)[0]
    write_csv(out / "bath.csv", {"x": b.positions[:, 0], "y": b.positions[:, 1], "z": b.positions[:, 2],
                                 "A_par": b.A_par, "A_perp": b.A_perp, "phi": b.phi},
              ["angstrom", "angstrom", "angstrom", "kHz", "kHz", "rad"])
    return {"n_spins": len(b), "larmor_kHz": b.larmor, "config_seed": b.config_seed}


def _run_cce(p, seed, out, workers, seq, fit_envelope):
    t = np.linspace(0, p["t_max"], p["n_times"] + (0 if p["t_max"] > 1000 else 1))
    if p["t_max"] > 1000:
        t = np.linspace(p["t_max"] / p["n_times"], p["t_max"], p["n_times"])
    if p["order"] not in (1, 2):
        raise ConfigError("order: must be 1 or 2")
    cols, fits = {"time": t}, []
    for k, b in enumerate(_baths(p, seed)):
        if p["order"] == 1:
            curve = cce.cce1(b, seq, t, workers)
            target = curve
        else:
            curve = cce.cce2(b, seq, t, p["pair_cutoff"], workers)
            target = cce.CoherenceCurve(t, curve.meta["pair_envelope"]) if fit_envelope else curve
        cols[f"L_{k}"] = curve.values
        f = cce.fit_stretched_exp(target, n=2.0 if seq.kind == "ramsey" else None)
        fits.append({"T2_us": f.T2, "n": f.n, "residual": f.residual, "n_spins": len(b),
                     **({"n_pairs": curve.meta["n_pairs"], "max_imag": curve.meta["max_imag"]}
                        if p["order"] == 2 else {})})
    cols["L_mean"] = np.mean([cols[f"L_{k}"] for k in range(len(fits))], 0)
    write_csv(out / "coherence.csv", cols, ["us"] + ["1"] * (len(cols) - 1))
    T2 = np.array([f["T2_us"] for f in fits])
    n = np.array([f["n"] for f in fits])
    return {"sequence": seq.label, "order": p["order"], "per_bath": fits,
            "T2_mean_us": T2.mean(), "T2_std_us": T2.std(), "n_mean": n.mean(), "n_std": n.std()}


def run_cce_ramsey(p, seed, out, workers):
    return _run_cce(p, seed, out, workers, cce.PulseSequence.ramsey(), False)


def run_cce_hahn(p, seed, out, workers):
    return _run_cce(p, seed, out, workers, cce.PulseSequence.hahn(), p["order"] == 2)


def run_cce_dd(p, seed, out, workers):
    return _run_cce(p, seed, out, workers, cce.PulseSequence.xy(p["n_pulses"]), False)


def run_cce_fit_hyperfine(p, seed, out, workers):
    baths = _baths(p, seed)
    env = cce.StretchedExpFit(p["envelope_T2"], p["envelope_n"], 0.0)
    if p["data"]:
        d = read_csv(p["data"], 2)
        data = cce.CoherenceCurve(d[:, 0], d[:, 1])
    else:
        t = np.linspace(0, p["t_max"], p["n_times"])
        spin = lattice.BathSpin([1.0, 0.0, 0.0], p["true_A_par"], p["true_A_perp"])
        seq = cce.PulseSequence.hahn()
        S = cce.single_spin_signal(spin, baths[0].larmor, seq, t).values
        W = np.mean([cce.cce1(b, seq, t).values for b in baths], axis=0)
        data = cce.CoherenceCurve(t, env(t) * W * S)
    res = cce.fit_hyperfine(data, baths, env)
    return {"A_par_kHz": res.A_par, "A_perp_kHz": res.A_perp, "cost": res.cost, "n_baths": len(baths)}


def _hom_model(p):
    d = p["dephasing"]
    if d == "none":
        dep = hom.NoDephasing()
    elif d == "lorentzian":
        dep = hom.Lorentzian.from_T2(p["T2"], p["T1"]) if p["T2"] < 2 * p["T1"] else hom.NoDephasing()
    elif d == "gaussian":
        dep = hom.Gaussian(p["sigma"])
    elif d == "modulation":
        dep = hom.PhaseModulation(p["A_m"], 2 * np.pi * p["modulation_freq"])
    else:
        raise ConfigError(f"dephasing: unknown model {d!r}")
    return hom.HomModel(A=p["A"], R=p["R"], P_dc=p["P_dc"], t_rep=p["t_rep"], T1=p["T1"], dephasing=dep,
                        n_side_peaks=p["n_side_peaks"])


def _hom_hist(p, seed):
    edges = np.arange(-p["span"], p["span"] + p["bin_width"] / 2, p["bin_width"])
    return hom.simulate_histogram(_hom_model(p), edges, seed if p["poisson"] else None)


def _write_hist(out, h):
    write_csv(out / "histogram.csv", {"bin_lo": h.bin_edges[:-1], "bin_hi": h.bin_edges[1:], "counts": h.counts},
              ["us", "us", "counts"])


def run_hom_simulate(p, seed, out, workers):
    h = _hom_hist(p, seed)
    _write_hist(out, h)
    res = {}
    for w in (p["T1"], 3 * p["T1"], 6 * p["T1"]):
        v = hom.extract_visibility(h, p["t_rep"], p["n_side_peaks"], w)
        res[f"window_{w:g}us"] = {"V_raw": v.V_raw, "V_bg_subtracted": v.V_bg_subtracted,
                                   "acceptance_fraction": v.acceptance_fraction}
    return {"visibility": res, "total_counts": float(h.counts.sum())}


def run_hom_fit(p, seed, out, workers):
    if p["data"]:
        d = read_csv(p["data"], 3)
        h = hom.CoincidenceHistogram(np.append(d[:, 0], d[-1, 1]), d[:, 2])
    else:
        h = _hom_hist(p, seed)
    m = hom.fit_hom(h, _hom_model(p), tuple(p["free"]))
    dep = {k: v for k, v in vars(m.dephasing).items()}
    units = {"T_dep": "us", "sigma": "rad/us", "A_m": "rad", "omega_m": "rad/ms"}
    return {"A_counts_per_bin": m.A, "R": m.R, "P_dc_counts_per_bin": m.P_dc,
            "dephasing": type(m.dephasing).__name__,
            **{f"{k}_{units[k].replace('/', '_per_')}": v for k, v in dep.items()}}


def run_hom_visibility(p, seed, out, workers):
    V_int, T1, R = p["V_int"], p["T1"], p["R"]
    T2 = hom.t2_from_visibility(V_int, 0.5, 0.5, T1)
    sigma = hom.sigma_from_visibility(V_int, T1)
    nu_G = hom.gaussian_fwhm(sigma)
    return {
        "T2_us": T2, "nu_L_kHz": hom.lorentzian_linewidth(T2), "T_dep_us": hom.dephasing_time(T2, T1),
        "sigma_rad_per_us": sigma, "nu_G_kHz": nu_G, "voigt_kHz": hom.voigt_width(p["T1_voigt"], nu_G),
        "V_with_beamsplitter": hom.visibility_from_intrinsic(V_int, R, 1 - R),
    }


def _cf_params(p):
    return cf.CFParams(p["B20"], p["B40"], p["B60"], p["B44"], p["B64_re"], p["B64_im"])


def _gdict(g):
    return {"gx": g.gx, "gy": g.gy, "gz": g.gz, "axes": g.principal_axes.tolist()}


def run_cf_gtensor(p, seed, out, workers):
    base = _cf_params(p)
    res = {}
    for m in (cf.ER_4I15_2, cf.ER_4I13_2):
        H = cf.cf_hamiltonian(base, m)
        res[m.label] = {**_gdict(cf.ground_doublet_gtensor(H, m)), "doublets_cm-1": cf.doublet_energies(H).tolist()}
    return res


def run_cf_fit_perturbation(p, seed, out, workers):
    base = _cf_params(p)
    ms = (cf.ER_4I15_2, cf.ER_4I13_2)
    if p["target"] == "synthetic":
        pert = cf.AxialPerturbation(p["B20_bar"], (p["alpha"], p["beta"], 0.0))
        comps = cf.combine(base, cf.rotate_rank2_axial(pert))
        targets = [cf.ground_doublet_gtensor(cf.cf_hamiltonian(comps, m), m) for m in ms]
    elif p["target"] in ("ion1", "ion2"):
        table = cf.load_single_ion_gtensors()
        targets = [table[(p["target"], "ground")], table[(p["target"], "excited")]]
    else:
        raise ConfigError(f"target: unknown target {p['target']!r}")
    fit = cf.fit_axial_perturbation(base, targets, ms)
    tv = np.concatenate([np.sort(t.values) for t in targets])
    misfit = cf.perturbation_misfit([fit.B20_bar, fit.euler[0], fit.euler[1]], base, tv, ms)
    return {"B20_bar_cm-1": fit.B20_bar, "euler_deg": list(fit.euler),
            "orientation_class_deg": list(cf.orientation_class(fit.euler)), "misfit": misfit,
            "targets": [_gdict(t) for t in targets]}


def run_rates_budget(p, seed, out, workers):
    chain = rates.EfficiencyChain(p["eta_cav"], p["eta_gc"], p["eta_net"], p["eta_det"], p["gating_loss"])
    pre, P1 = rates.photon_budget(chain)
    phom = rates.hom_coincidence_prob(rates.HomBudget(p["input_split"], p["spool_transmission"], p["P1_measured"]))
    fb, fd, fa = rates.poisson_readout_fidelity(p["nbar_bright"], p["nbar_dark"], p["threshold"])
    return {"P1_pre_gating": pre, "P1": P1, "P_HOM": phom, "cavity_contrast": rates.cavity_contrast(p["eta_cav"]),
            "F_bright": fb, "F_dark": fd, "F_avg": fa}


def run_rates_t1fit(p, seed, out, workers):
    f, T, t1 = p["frequencies"], p["temperatures"], p["T1s"]
    if not len(f) == len(T) == len(t1):
        raise ConfigError("frequencies: frequencies, temperatures and T1s must have equal length")
    pts = [rates.DirectProcessPoint(*x) for x in zip(f, T, t1)]
    A_d = rates.t1_direct_fit(pts)
    return {"A_d_per_s_GHz5": A_d, "T1_model_s": [float(rates.t1_direct(A_d, x.spin_frequency, x.temperature))
                                                   for x in pts]}


def run_impurity_estimate(p, seed, out, workers):
    geo = lattice.ElectronBathConfig(geometry=p["geometry"], surface_depth=p["surface_depth"],
                                     sample_radius=p["sample_radius"], min_distance=p["min_distance"])
    grid = impurity.default_grid(geo.geometry, p["grid_n"])
    if p["grid_min"] is not None or p["grid_max"] is not None:
        lo = p["grid_min"] if p["grid_min"] is not None else grid[0]
        hi = p["grid_max"] if p["grid_max"] is not None else grid[-1]
        grid = np.logspace(np.log10(lo), np.log10(hi), p["grid_n"])
    post = impurity.estimate_concentration(
        p["t2star_obs"], geo, grid, p["n_instances"], seed, p["sigma_obs"],
        er_gtensor=cf.GTensor.axial(p["g_perp"], p["g_par"]), b_direction=_bdir(p),
        surface_normal=p["surface_normal"], workers=workers)
    unit = "cm-3" if geo.geometry is lattice.Geometry.BULK_3D else "nm-2"
    write_csv(out / "posterior.csv", {"concentration": post.grid, "density": post.density, "accepted": post.accepted},
              [unit, "1", "count"])
    return {"unit": unit, "mode": post.mode, "ci70": list(post.ci70), "n_instances": post.n_instances}


RUNNERS = {
    "bath-generate": run_bath_generate, "cce-ramsey": run_cce_ramsey, "cce-hahn": run_cce_hahn,
    "cce-dd": run_cce_dd, "cce-fit-hyperfine": run_cce_fit_hyperfine, "hom-simulate": run_hom_simulate,
    "hom-fit": run_hom_fit, "hom-visibility": run_hom_visibility, "cf-gtensor": run_cf_gtensor,
    "cf-fit-perturbation": run_cf_fit_perturbation, "rates-budget": run_rates_budget,
    "rates-t1fit": run_rates_t1fit, "impurity-estimate": run_impurity_estimate,
}


def run(config, out, workers=1):
    """Execute a validated config, writing ``result.json`` (and tables) into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result = RUNNERS[config["experiment"]](config["params"], config["seed"], out, workers)
    units = {k: u for k, (_, u) in SCHEMAS[config["experiment"]].items()}
    write_json(out / "result.json", {"experiment": config["experiment"], "seed": config["seed"],
                                     "parameters": config["params"], "parameter_units": units,
                                     "result": result})
    return result


def _parse_overrides(extra):
    over, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(f"{tok}: unexpected argument")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"{key}: missing value")
            val = extra[i + 1]
            i += 2
        over[key] = yaml.safe_load(val) if val else val
    return over


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("EMITTERLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("EMITTERLAB_THREADS: expected an integer") from None
    return 1


def main(argv=None):
    ap = argparse.ArgumentParser(prog="emitterlab", description="Run emitter-modelling experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("experiment", nargs="?", help="experiment name (or from --config)")
    r.add_argument("params", nargs="*", metavar="--KEY VALUE", help="parameter overrides")
    r.add_argument("--config", help="flat YAML config file")
    r.add_argument("--seed", type=int, help="master seed (u64)")
    r.add_argument("--out", default="emitterlab-out", help="output directory")
    r.add_argument("--threads", type=int, help="worker threads (fallback: EMITTERLAB_THREADS)")
    r.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    sub.add_parser("list", help="list experiments and their parameters")
    argv = list(sys.argv[1:] if argv is None else argv)
    # a bare positional after "run" is the experiment; everything unknown is an override
    known = {"--config", "--seed", "--out", "--threads"}
    head, extra, i = [], [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in known:
            head += argv[i:i + 2]
            i += 2
        elif tok.split("=", 1)[0] in known or tok in ("--dump-config", "-h", "--help"):
            head.append(tok)
            i += 1
        elif tok.startswith("--"):
            extra.append(tok)
            if "=" not in tok and i + 1 < len(argv):
                extra.append(argv[i + 1])
                i += 1
            i += 1
        else:
            head.append(tok)
            i += 1
    args = ap.parse_args(head)
    extra += list(getattr(args, "params", None) or [])

    if args.command == "list":
        for name, schema in SCHEMAS.items():
            print(name)
            for k, (v, unit) in schema.items():
                print(f"    {k} = {v!r} [{unit}]")
        return EXIT_OK
    try:
        file_values = load_config_file(args.config) if args.config else {}
        experiment = args.experiment or file_values.get("experiment")
        if not experiment:
            raise ConfigError("experiment: not given on the command line or in the config")
        if args.experiment and file_values.get("experiment") not in (None, args.experiment):
            raise ConfigError("experiment: command line and config disagree")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed: must be a non-negative integer")
        config = build_config(experiment, file_values, _parse_overrides(extra), args.seed)
        workers = _threads(args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.dump_config:
        sys.stdout.write(dump_config(config))
        return EXIT_OK
    try:
        result = run(config, args.out, workers)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FitError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    print(json.dumps(_round(result), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
