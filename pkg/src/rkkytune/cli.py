"""Command-line front-end.

Every subcommand reads a flat TOML config (``--config``), applies
``--set key=value`` overrides and writes CSV/JSON files into ``--out``.
Precedence is command line > file > defaults. Exit codes: 0 success,
2 invalid configuration or parameters, 3 numerical failure; errors are
printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from multiprocessing import get_context

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from threadpoolctl import threadpool_limits

from . import __version__
from . import kernel as kern
from . import lattice as lat
from . import manybody as mb
from . import spectra as spc
from ._io import ExistingOutputMismatch, ScanFile, fmt, write_csv, write_json
from .errors import NumericalError, ParameterError, RkkyError

THREADS_ENV = "RKKYTUNE_THREADS"
REQUIRED = object()


class ConfigError(ParameterError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


# --- configuration -----------------------------------------------------------

KERNEL1D = {
    "n_fermions": ("int", REQUIRED),
    "kp_xzp": ("opt_float", None),
    "n_virtual": ("opt_int", None),
    "points_per_wavelength": ("int", 12),
    "k_ref": ("str", "harmonic"),
    "closure": ("bool", True),
    "open_shell": ("str", "raise"),
    "kfr_max": ("float", 45.0),
    "offsets": ("floats", [1.0, 2.5, 5.0]),
    "placement": ("str", "anchored"),
}

SCHEMAS = {
    "spectrum": {
        "n_fermions": ("int", REQUIRED),
        "vp_ratio": ("float", 0.0),
        "kp_xzp": ("opt_float", None),
        "n_states": ("opt_int", None),
        "points_per_wavelength": ("int", 40),
        "half_width": ("opt_float", None),
        "n_points": ("opt_int", None),
        "write_wavefunctions": ("bool", False),
        "wavefunction_count": ("int", 5),
    },
    "kernel": {
        **KERNEL1D,
        "dim": ("int", 1),
        "vp_ratio": ("float", 0.0),
        "anisotropy": ("float", 1.0),
        "kfr_step": ("float", 0.02),
        "e_max_factor": ("float", 3.0),
        "fit_kfr_min": ("float", 2.0),
        "fit_kfr_max": ("opt_float", None),
    },
    "couplings": {
        **KERNEL1D,
        "vp_ratio": ("float", 0.0),
        "spacing_kf": ("float", REQUIRED),
        "width_ratio": ("float", 0.17),
        "max_range": ("int", 5),
        "v0": ("float", 4.0),
    },
    "scan-ratios": {
        **KERNEL1D,
        "vp_ratios": ("grid", REQUIRED),
        "kf_d": ("grid", REQUIRED),
        "width_ratio": ("float", 0.17),
    },
    "chain": {
        "length": ("int", REQUIRED),
        "n_bosons": ("opt_int", None),
        "couplings": ("floats", REQUIRED),
        "v0": ("opt_float", None),
        "hopping": ("float", 1.0),
        "boundary": ("str", "periodic"),
        "twist": ("float", 0.0),
        "berry_steps": ("int", 16),
    },
    "scan-phase": {
        **KERNEL1D,
        "vp_ratios": ("grid", REQUIRED),
        "kf_d": ("grid", REQUIRED),
        "width_ratio": ("float", 0.17),
        "length": ("int", 12),
        "n_bosons": ("opt_int", None),
        "boundary": ("str", "periodic"),
        "v0": ("float", 4.0),
        "berry_steps": ("int", 16),
    },
    "crossover": {
        "n_fermions": ("int", 250),
        "anis_over_n": ("grid", REQUIRED),
        "kfr_max": ("float", 40.0),
        "kfr_step": ("float", 0.02),
        "e_max_factor": ("float", 3.0),
        "open_shell": ("str", "raise"),
        "r_min": ("float", 1.0),
        "r_max": ("opt_float", None),
        "n_k": ("int", 301),
        "n_beats": ("int", 2),
        "placement": ("str", "anchored"),
    },
    "kagome": {
        "n_fermions": ("int", 250),
        "anis_over_n": ("grid", REQUIRED),
        "kf_d": ("grid", REQUIRED),
        "width_ratio": ("float", 0.17),
        "kfr_step": ("float", 0.05),
        "e_max_factor": ("float", 3.0),
        "open_shell": ("str", "raise"),
        "tol_v1": ("float", 0.1),
        "tol_23": ("float", 0.2),
        "placement": ("str", "anchored"),
    },
}

CHOICES = {
    "k_ref": ("harmonic", "fermi"),
    "open_shell": ("raise", "exclude"),
    "boundary": ("open", "periodic"),
    "dim": (1, 2),
    "placement": ("centered", "anchored"),
}


def _coerce(key, kind, value):
    def bad():
        return ConfigError(f"key '{key}' expects {kind}, got {value!r}", key)

    if kind in ("int", "opt_int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad()
        return value
    if kind in ("float", "opt_float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad()
        value = float(value)
        if not math.isfinite(value):
            raise bad()
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad()
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise bad()
        return value
    if kind == "floats":
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise bad()
        return [float(v) for v in value]
    if kind == "grid":
        if isinstance(value, list):
            return _coerce(key, "floats", value)
        if isinstance(value, dict) and set(value) == {"start", "stop", "count"}:
            try:
                start, stop = float(value["start"]), float(value["stop"])
                count = value["count"]
            except (TypeError, ValueError):
                raise bad() from None
            if isinstance(count, bool) or not isinstance(count, int) or count < 1:
                raise bad()
            return {"start": start, "stop": stop, "count": count}
        raise bad()
    raise AssertionError(kind)


def expand_grid(value) -> list:
    if isinstance(value, dict):
        return [float(x) for x in np.linspace(value["start"], value["stop"], value["count"])]
    return list(value)


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def resolve_config(command: str, path: str | None, overrides) -> dict:
    schema = SCHEMAS[command]
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    for text in overrides or []:
        k, v = parse_override(text)
        raw[k] = v
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}' for {command}", unknown[0])
    cfg = {}
    for key, (kind, default) in schema.items():
        if key in raw:
            cfg[key] = _coerce(key, kind, raw[key])
        elif default is REQUIRED:
            raise ConfigError(f"missing required key '{key}'", key)
        else:
            cfg[key] = default
        if key in CHOICES and cfg[key] not in CHOICES[key]:
            raise ConfigError(f"key '{key}' must be one of {CHOICES[key]}", key)
    for key, (kind, _) in schema.items():
        if kind == "grid" and not expand_grid(cfg[key]):
            raise ConfigError(f"grid '{key}' is empty", key)
    return cfg


# --- parallel helpers -----------------------------------------------------------

def _init_worker():
    threadpool_limits(1)
    warnings.simplefilter("ignore")


def _guarded(fn, arg):
    try:
        with threadpool_limits(1):
            return ("ok", fn(arg))
    except RkkyError as exc:
        return ("error", f"{type(exc).__name__}: {exc}")


def run_jobs(fn, args, threads: int):
    """Yield (index, status, value) for fn over args; order of completion varies."""
    if threads <= 1 or len(args) <= 1:
        for i, a in enumerate(args):
            status, value = _guarded(fn, a)
            yield i, status, value
        return
    ctx = get_context("spawn")
    with ProcessPoolExecutor(max_workers=threads, mp_context=ctx,
                             initializer=_init_worker) as pool:
        futs = {pool.submit(_guarded, fn, a): i for i, a in enumerate(args)}
        for fut in as_completed(futs):
            status, value = fut.result()
            yield futs[fut], status, value


# --- jobs (top level so worker processes can import them) ---------------------

def _trap1d(cfg, vp):
    return spc.TrapSpec1D(cfg["n_fermions"], vp, cfg["kp_xzp"])


def _kernel1d_kwargs(cfg):
    return dict(n_virtual=cfg["n_virtual"], kfr_max=cfg["kfr_max"],
                points_per_wavelength=cfg["points_per_wavelength"], k_ref=cfg["k_ref"],
                closure=cfg["closure"], open_shell=cfg["open_shell"],
                offsets=tuple(cfg["offsets"]), placement=cfg["placement"])


def job_kernel1d(arg):
    cfg, vp = arg
    radial, _ = kern.kernel_1d(_trap1d(cfg, vp), **_kernel1d_kwargs(cfg))
    return radial


def job_kernel2d(arg):
    cfg, ratio = arg
    n = cfg["n_fermions"]
    kfr = _kfr_axis(cfg["kfr_max"], cfg["kfr_step"])
    return kern.kernel_2d(spc.TrapSpec2D(n, ratio * n), kfr, cfg["e_max_factor"],
                          open_shell=cfg["open_shell"], placement=cfg["placement"])


def job_phase(arg):
    couplings, L, n, boundary, v0, steps = arg
    return mb.phase_cell(couplings, L, n, boundary, v0, steps)


def _kfr_axis(kfr_max, step):
    if not (step > 0 and kfr_max > step):
        raise ConfigError("kfr axis needs 0 < kfr_step < kfr_max", "kfr_step")
    m = int(math.floor(kfr_max / step + 1e-9))
    return step * np.arange(m + 1)


# --- commands -------------------------------------------------------------------

def cmd_spectrum(cfg, out, threads):
    N = cfg["n_fermions"]
    trap = spc.TrapSpec1D(N, cfg["vp_ratio"], cfg["kp_xzp"])
    n_states = cfg["n_states"] or N
    n_solve = max(n_states, N + 1)
    if cfg["half_width"] is not None and cfg["n_points"] is not None:
        grid = spc.GridSpec(cfg["half_width"], cfg["n_points"])
    else:
        grid = spc.GridSpec.default(trap, n_solve, cfg["points_per_wavelength"])
    basis = spc.solve_eigenbasis(spc.build_1d_hamiltonian(trap, grid), n_solve)
    lev = spc.fermi_level(basis, N)
    gap = float(basis.energies[N] - basis.energies[N - 1])
    if trap.vp_ratio > 0:
        ref = spc.solve_eigenbasis(
            spc.build_1d_hamiltonian(spc.TrapSpec1D(N, 0.0, trap.kp_xzp), grid), n_solve)
        gap0 = float(ref.energies[N] - ref.energies[N - 1])
    else:
        gap0 = gap
    write_csv(os.path.join(out, "energies.csv"), "spectrum", cfg, ["n", "energy"],
              [(i, float(e)) for i, e in enumerate(basis.energies[:n_states])])
    if cfg["write_wavefunctions"]:
        k = min(cfg["wavefunction_count"], n_states)
        cols = ["xi"] + [f"psi_{i}" for i in range(k)]
        rows = [(float(x),) + tuple(float(v) for v in basis.wavefunctions[:k, j])
                for j, x in enumerate(grid.points)]
        write_csv(os.path.join(out, "wavefunctions.csv"), "spectrum", cfg, cols, rows)
    ratio = gap / gap0 if gap0 > 0 else math.inf
    write_json(os.path.join(out, "summary.json"), "spectrum", cfg, {
        "e_fermi": lev.energy, "k_f": lev.k_f, "open_shell": lev.open_shell,
        "gap": gap, "gap_without_lattice": gap0, "gap_ratio": ratio,
        "gap_open": bool(ratio > 10.0), "grid_step": grid.step, "n_points": grid.n_points,
    })
    return 0


def cmd_kernel(cfg, out, threads):
    fit_hi = cfg["fit_kfr_max"] if cfg["fit_kfr_max"] is not None else cfg["kfr_max"]
    if not cfg["kfr_max"] > 0 or not fit_hi > cfg["fit_kfr_min"]:
        raise ConfigError("empty k_F r window", "fit_kfr_min")
    if cfg["dim"] == 1:
        radial = job_kernel1d((cfg, cfg["vp_ratio"]))
        window = (2.0, 10.0)
    else:
        radial = job_kernel2d((dict(cfg, n_fermions=cfg["n_fermions"]),
                               cfg["anisotropy"] / cfg["n_fermions"]))
        window = (2.0, 8.0)
    write_csv(os.path.join(out, "kernel.csv"), "kernel", cfg, ["kf_r", "F"],
              zip(radial.r_values.tolist(), radial.f_values.tolist()))
    maxima = [(x, v) for x, v in kern.extract_maxima(radial) if cfg["fit_kfr_min"] < x < fit_hi]
    write_csv(os.path.join(out, "maxima.csv"), "kernel", cfg, ["kf_r", "F"], maxima)
    payload = {"k_f": radial.k_f, "f_at_contact": float(radial.f_values[0]),
               "translation_residual": radial.residual,
               "n_maxima": len(maxima), "window": [cfg["fit_kfr_min"], fit_hi]}
    try:
        env, scale, n_ext = kern.envelope_error(radial, cfg["dim"], *window)
        payload.update(envelope_error=env, envelope_scale=scale, envelope_window=list(window))
    except RkkyError as exc:
        payload["envelope_error_message"] = str(exc)
    try:
        spec = kern.cosine_transform(radial, 1.0)
        payload["dominant_k_over_kf"] = spec.peaks(1)[0][0]
    except (RkkyError, IndexError):
        pass
    code = 0
    try:
        fit = kern.fit_yukawa(maxima, radial.k_f)
        payload.update(ell=fit.ell, decays=math.isfinite(fit.ell), amplitude=fit.amplitude,
                       residual=fit.residual)
    except RkkyError as exc:
        payload.update(ell=None, error=f"{type(exc).__name__}: {exc}")
        code = 3
    write_json(os.path.join(out, "yukawa.json"), "kernel", cfg, payload)
    if code:
        _emit_error("FitFailure", payload["error"])
    return code


def cmd_couplings(cfg, out, threads):
    radial = job_kernel1d((cfg, cfg["vp_ratio"]))
    w = lat.WannierSpec(cfg["width_ratio"], cfg["spacing_kf"])
    table = lat.coupling_table(radial, w, cfg["max_range"])
    scaled = mb.rescale_couplings(table.couplings, cfg["v0"])
    rows = [(s + 1, (s + 1) * cfg["spacing_kf"], float(v), float(sv))
            for s, (v, sv) in enumerate(zip(table.couplings, scaled))]
    write_csv(os.path.join(out, "couplings.csv"), "couplings", cfg,
              ["s", "kf_r", "v", "v_rescaled"], rows)
    return 0


def _kernels_by_vp(cfg, vps, threads):
    kernels, errors = {}, {}
    for i, status, value in run_jobs(job_kernel1d, [(cfg, vp) for vp in vps], threads):
        if status == "ok":
            kernels[vps[i]] = value
        else:
            errors[vps[i]] = value
    return kernels, errors


def cmd_scan_ratios(cfg, out, threads):
    vps = sorted(expand_grid(cfg["vp_ratios"]))
    ds = sorted(expand_grid(cfg["kf_d"]))
    cols = ["vp_ratio", "kf_d", "v2_over_v1", "v3_over_v1", "flags"]
    sf = ScanFile(os.path.join(out, "ratios.csv"), "scan-ratios", cfg, cols, 2)
    order = [(vp, d) for vp in vps for d in ds]
    todo_vp = sorted({vp for vp, d in order if not sf.done((vp, d))})
    kernels, errors = _kernels_by_vp(cfg, todo_vp, threads)
    w = lat.WannierSpec(cfg["width_ratio"], ds[0])
    for vp, d in order:
        if sf.done((vp, d)):
            continue
        if vp in errors:
            sf.add((vp, d, math.nan, math.nan, "error:" + errors[vp].split(":")[0]))
            continue
        try:
            c = lat.ratio_cell(kernels[vp], w.with_spacing(d))
            sf.add((vp, d, c["v2_over_v1"], c["v3_over_v1"], c["flags"]))
        except RkkyError as exc:
            sf.add((vp, d, math.nan, math.nan, "error:" + type(exc).__name__))
    sf.finish(order)
    cells = {}
    n_err = 0
    for parts in sf.value_rows():
        if parts[4].startswith("error"):
            n_err += 1
            continue
        cells[(float(parts[0]), float(parts[1]))] = {
            "v2_over_v1": float(parts[2]), "v3_over_v1": float(parts[3]), "flags": parts[4]}
    target = lat.bow_target(cells)
    write_json(os.path.join(out, "bow_target.json"), "scan-ratios", cfg, {
        "vp_ratio": target[0] if target else None, "kf_d": target[1] if target else None,
        "v2_over_v1": cells[target]["v2_over_v1"] if target else None,
        "v3_over_v1": cells[target]["v3_over_v1"] if target else None})
    return _scan_exit(n_err, len(order))


def cmd_chain(cfg, out, threads):
    L = cfg["length"]
    n = cfg["n_bosons"] if cfg["n_bosons"] is not None else L // 2
    v = np.array(cfg["couplings"])
    if cfg["v0"] is not None:
        v = mb.rescale_couplings(v, cfg["v0"])
    model = mb.ChainModel(L, n, v, cfg["hopping"], cfg["boundary"], cfg["twist"])
    basis = mb.build_basis(L, n)
    gs = mb.ground_state(mb.build_hamiltonian(model, basis))
    s, q0, smax = mb.structure_factor(gs.amplitudes, basis)
    B, C = mb.bond_observables(gs.amplitudes, basis, model)
    dens = mb.edge_profile(gs.amplitudes, basis)
    payload = {"energy": gs.energy, "residual": gs.residual, "basis_dim": gs.basis_dim,
               "degenerate": gs.degenerate, "q0": q0, "s_max": smax,
               "bond_order": B, "bond_correlator": C}
    if model.boundary == "periodic" and cfg["berry_steps"]:
        res = mb.berry_phase(model, cfg["berry_steps"])
        payload.update(berry_phase=res.gamma, berry_multiplet=res.multiplet,
                       berry_min_gap=res.min_gap)
    write_json(os.path.join(out, "observables.json"), "chain", cfg, payload)
    write_csv(os.path.join(out, "density.csv"), "chain", cfg, ["site", "density"],
              [(j, float(x)) for j, x in enumerate(dens)])
    write_csv(os.path.join(out, "sofq.csv"), "chain", cfg, ["q", "S"],
              [(2 * math.pi * m / L, float(x)) for m, x in enumerate(s)])
    return 0


def cmd_scan_phase(cfg, out, threads):
    vps = sorted(expand_grid(cfg["vp_ratios"]))
    ds = sorted(expand_grid(cfg["kf_d"]))
    L = cfg["length"]
    n = cfg["n_bosons"] if cfg["n_bosons"] is not None else L // 2
    cols = ["vp_ratio", "kf_d", "q0", "s_max", "bond", "gamma", "error"]
    sf = ScanFile(os.path.join(out, "phase.csv"), "scan-phase", cfg, cols, 2)
    order = [(vp, d) for vp in vps for d in ds]
    todo = [c for c in order if not sf.done(c)]
    kernels, errors = _kernels_by_vp(cfg, sorted({vp for vp, _ in todo}), threads)
    jobs, keys = [], []
    R = min(5, L // 2 - 1) + 3
    for vp, d in todo:
        if vp in errors:
            sf.add((vp, d, math.nan, math.nan, math.nan, math.nan, errors[vp].split(":")[0]))
            continue
        try:
            radial = kernels[vp]
            r_fit = max(1, min(R, int((radial.r_values[-1] - 4 * math.sqrt(2.0) * cfg["width_ratio"] * d) // d)))
            table = lat.coupling_table(radial, lat.WannierSpec(cfg["width_ratio"], d), r_fit)
        except RkkyError as exc:
            sf.add((vp, d, math.nan, math.nan, math.nan, math.nan, type(exc).__name__))
            continue
        jobs.append((table.couplings, L, n, cfg["boundary"], cfg["v0"], cfg["berry_steps"]))
        keys.append((vp, d))
    for i, status, value in run_jobs(job_phase, jobs, threads):
        vp, d = keys[i]
        if status == "ok":
            q0, smax, bond, gamma = value
            sf.add((vp, d, q0, smax, bond, gamma, ""))
        else:
            sf.add((vp, d, math.nan, math.nan, math.nan, math.nan, value.split(":")[0]))
    sf.finish(order)
    n_err = sum(1 for parts in sf.value_rows() if parts[6])
    return _scan_exit(n_err, len(order))


def cmd_crossover(cfg, out, threads):
    ratios = sorted(expand_grid(cfg["anis_over_n"]))
    N = cfg["n_fermions"]
    kernels = {}
    for i, status, value in run_jobs(job_kernel2d, [(cfg, a) for a in ratios], threads):
        if status != "ok":
            raise _job_error(value)
        kernels[ratios[i]] = value
    krows, srows, brows = [], [], []
    for a in ratios:
        radial = kernels[a]
        krows.extend((a, x, f) for x, f in zip(radial.r_values.tolist(), radial.f_values.tolist()))
        spec = kern.cosine_transform(radial, cfg["r_min"], cfg["r_max"], cfg["n_k"])
        srows.extend((a, k, v) for k, v in zip(spec.k_values.tolist(), spec.amplitudes.tolist()))
        pred = kern.predicted_beat_frequencies(1.0, a * N, N, cfg["n_beats"] - 1)
        for rank, (k, amp) in enumerate(spec.peaks(cfg["n_beats"])):
            brows.append((a, rank, k, amp, pred[rank] if rank < len(pred) else math.nan))
    write_csv(os.path.join(out, "crossover.csv"), "crossover", cfg,
              ["anis_over_n", "kf_r", "F"], krows)
    write_csv(os.path.join(out, "spectrum.csv"), "crossover", cfg,
              ["anis_over_n", "k_over_kf", "amplitude"], srows)
    write_csv(os.path.join(out, "beats.csv"), "crossover", cfg,
              ["anis_over_n", "rank", "k_peak", "amplitude", "k_predicted"], brows)
    return 0


def cmd_kagome(cfg, out, threads):
    ratios = sorted(expand_grid(cfg["anis_over_n"]))
    ds = sorted(expand_grid(cfg["kf_d"]))
    cols = ["anis_over_N", "kf_d", "v1", "v2", "v3", "flags"]
    sf = ScanFile(os.path.join(out, "kagome.csv"), "kagome", cfg, cols, 2)
    order = [(a, d) for a in ratios for d in ds]
    todo = sorted({a for a, d in order if not sf.done((a, d))})
    w = lat.WannierSpec(cfg["width_ratio"], ds[0])
    s_max = math.sqrt(2.0) * cfg["width_ratio"] * ds[-1]
    kcfg = dict(cfg, kfr_max=2 * ds[-1] + 4 * s_max + 2 * cfg["kfr_step"])
    for i, status, value in run_jobs(job_kernel2d, [(kcfg, a) for a in todo], threads):
        a = todo[i]
        for d in ds:
            if sf.done((a, d)):
                continue
            if status != "ok":
                sf.add((a, d, math.nan, math.nan, math.nan, "error:" + value.split(":")[0]))
                continue
            try:
                c = lat.kagome_couplings(value, d, w)
                sf.add((a, d, c.v1, c.v2, c.v3, ""))
            except RkkyError as exc:
                sf.add((a, d, math.nan, math.nan, math.nan, "error:" + type(exc).__name__))
    # flags depend on neighbours, so they are recomputed over the full grid
    vals = {(a, d): sf.rows[sf.key((a, d))] for a, d in order}
    v1 = np.array([[float(vals[(a, d)][2]) for d in ds] for a in ratios])
    change = lat.sign_change_cells(ratios, ds, np.nan_to_num(v1, nan=0.0))
    scan = {}
    for i, a in enumerate(ratios):
        for j, d in enumerate(ds):
            parts = vals[(a, d)]
            if parts[5].startswith("error"):
                continue
            scan[(a, d)] = lat.KagomeCouplings(float(parts[2]), float(parts[3]), float(parts[4]))
    cands = lat.frustration_search(scan, cfg["tol_v1"], cfg["tol_23"])
    cand_keys = {k for k, _, _ in cands}
    for i, a in enumerate(ratios):
        for j, d in enumerate(ds):
            parts = vals[(a, d)]
            if parts[5].startswith("error"):
                continue
            flags = [f for f, on in (("v1_sign_change", change[i, j]),
                                     ("candidate", (a, d) in cand_keys)) if on]
            parts[5] = "|".join(flags)
    sf.finish(order)
    write_csv(os.path.join(out, "candidates.csv"), "kagome", cfg,
              ["anis_over_N", "kf_d", "v1", "v2", "v3", "score"],
              [(k[0], k[1], c.v1, c.v2, c.v3, s) for k, c, s in cands])
    n_err = sum(1 for a, d in order if vals[(a, d)][5].startswith("error"))
    return _scan_exit(n_err, len(order))


def _scan_exit(n_err, n_total):
    if n_total and n_err == n_total:
        _emit_error("ScanFailure", f"all {n_total} cells failed")
        return 3
    return 0


def _job_error(text):
    name, _, msg = text.partition(": ")
    exc = NumericalError(msg)
    exc.name = name
    return exc


COMMANDS = {
    "spectrum": cmd_spectrum,
    "kernel": cmd_kernel,
    "couplings": cmd_couplings,
    "scan-ratios": cmd_scan_ratios,
    "chain": cmd_chain,
    "scan-phase": cmd_scan_phase,
    "crossover": cmd_crossover,
    "kagome": cmd_kagome,
}


def _emit_error(name, message, key=None):
    doc = {"error": name, "message": message}
    if key is not None:
        doc["key"] = key
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def build_parser():
    p = argparse.ArgumentParser(prog="rkkytune", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rkkytune {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="TOML file with flat key = value pairs")
        s.add_argument("--out", default=".", help="output directory")
        s.add_argument("--threads", type=int, default=None,
                       help=f"worker processes (default ${THREADS_ENV} or 1)")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        threads = args.threads
        if threads is None:
            env = os.environ.get(THREADS_ENV, "1")
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = resolve_config(args.command, args.config, args.set)
        os.makedirs(args.out, exist_ok=True)
        with threadpool_limits(1):
            return COMMANDS[args.command](cfg, args.out, threads)
    except ConfigError as exc:
        _emit_error("ConfigError", str(exc), exc.key)
        return 2
    except ExistingOutputMismatch as exc:
        _emit_error("ConfigError", f"{exc} exists with a different header; use another --out")
        return 2
    except ParameterError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 2
    except NumericalError as exc:
        _emit_error(getattr(exc, "name", type(exc).__name__), str(exc))
        return 3


if __name__ == "__main__":
    sys.exit(main())
