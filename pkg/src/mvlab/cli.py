"""Single entry point: parse a JSON run config, dispatch to the solvers,
manage seeds, and write CSV artifacts plus a manifest.

Exit codes: 0 success, 2 config error, 3 numeric error.  Outputs are
byte-reproducible given (config, seed): all floats are written with one
format and every random draw flows from keyed substreams of the master
seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
import numpy as np

from . import __version__
from .drifts import (
    ArctanDiffKernel,
    BoundedKernel,
    ConstantDrift,
    IdentityKernel,
    LinearGrowthPath,
    OtherFunctionKernel,
    SingularKernel,
    SingularPowerKernel,
    SinDiffKernel,
    StateDrift,
    DriftSpec,
)
from .errors import ConfigError, MvlabError
from .fbm import FbmSampler, rh_cov, sample_fbm_ensemble
from .chaos import chaos_sweep_sde, chaos_sweep_spde
from .paths import TimeGrid, write_ensemble_csv
from .sde import (
    GaussianLaw,
    NoiseSpec,
    PointMass,
    SampleFile,
    SolverConfig,
    euler_maruyama,
    particle_system,
    picard_solve,
    truncation_ladder,
)
from .spde import (
    DeterministicModes,
    FieldKernelOfOther,
    GaussianModes,
    GConstantModes,
    GMeasureMean,
    GSatDistToMean,
    GZero,
    SpdeConfig,
    SpdeDriftSpec,
    heat_mf_solve,
    wave_mf_solve,
)
from .verify import box_indicator, constant_function, khasminskii_check, krylov_check, power_indicator

_FMT = "%.12g"

KINDS = ("simulate", "picard", "ladder", "particles", "spde-heat", "spde-wave",
         "chaos", "verify", "fbm-ops")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return _FMT % float(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


# ---------------------------------------------------------------------------
# strict config validation

class _Schema:
    """Nested allowed/required key map; unknown keys are config errors."""

    def __init__(self, required: dict, optional: dict | None = None):
        self.required = required
        self.optional = optional or {}

    def check(self, cfg: dict, path: str = ""):
        if not isinstance(cfg, dict):
            raise ConfigError(f"expected an object at '{path or '<root>'}'")
        known = set(self.required) | set(self.optional)
        for key in cfg:
            if key not in known:
                raise ConfigError(f"unknown key '{path + key}'")
        for key, sub in self.required.items():
            if key not in cfg:
                raise ConfigError(f"missing field '{path + key}'")
            if isinstance(sub, _Schema):
                sub.check(cfg[key], path + key + ".")
        for key, sub in self.optional.items():
            if key in cfg and isinstance(sub, _Schema):
                sub.check(cfg[key], path + key + ".")


_GRID = _Schema({"t_end": None, "n_steps": None})
_NOISE = _Schema({"kind": None, "seed": None}, {"hurst": None})
_INITIAL = _Schema({"kind": None}, {"point": None, "mean": None, "std": None,
                                    "path": None, "scales": None})
_DRIFT = _Schema({"kind": None}, {"params": _Schema({}, {
    "value": None, "rate": None, "a": None, "radius": None, "clamp_radius": None,
    "p": None, "q": None, "sup": None, "strength": None, "coeffs": None})})

_SCHEMAS = {
    "simulate": _Schema({"kind": None, "grid": _GRID, "paths": None, "dim": None,
                         "initial": _INITIAL, "noise": _NOISE},
                        {"drift0": _DRIFT, "out": None}),
    "picard": _Schema({"kind": None, "grid": _GRID, "paths": None, "dim": None,
                       "initial": _INITIAL, "noise": _NOISE, "drift": _DRIFT,
                       "tol": None, "max_iter": None}, {"out": None}),
    "ladder": _Schema({"kind": None, "grid": _GRID, "paths": None, "dim": None,
                       "initial": _INITIAL, "noise": _NOISE, "drift": _DRIFT,
                       "tol": None, "max_iter": None, "levels": None}, {"out": None}),
    "particles": _Schema({"kind": None, "grid": _GRID, "n_particles": None, "dim": None,
                          "initial": _INITIAL, "noise": _NOISE, "drift": _DRIFT},
                         {"out": None}),
    "spde-heat": _Schema({"kind": None, "grid": _GRID, "replicas": None, "modes": None,
                          "initial": _INITIAL, "forcing": _DRIFT, "tol": None,
                          "max_iter": None, "noise": _Schema({"seed": None})},
                         {"out": None, "dump_replicas": None,
                          "snapshot_times": None, "snapshot_replicas": None}),
    "spde-wave": _Schema({"kind": None, "grid": _GRID, "replicas": None, "modes": None,
                          "initial": _INITIAL, "forcing": _DRIFT, "tol": None,
                          "max_iter": None, "noise": _Schema({"seed": None})},
                         {"out": None, "noisy": None, "dump_replicas": None,
                          "snapshot_times": None, "snapshot_replicas": None}),
    "chaos": _Schema({"kind": None, "grid": _GRID, "variant": None, "ns": None,
                      "repetitions": None, "drift": _DRIFT, "initial": _INITIAL,
                      "noise": _Schema({"seed": None}, {"kind": None, "hurst": None}),
                      "mf_size": None, "tol": None, "max_iter": None},
                     {"out": None, "modes": None}),
    "verify": _Schema({"kind": None, "check": None, "integrand": _Schema(
                          {"kind": None, "p": None, "q": None}, {"a": None, "c": None,
                           "radius": None}),
                       "paths": None, "n_steps": None, "t_end": None,
                       "noise": _Schema({"seed": None})},
                      {"out": None, "t_values": None, "lambda": None}),
    "fbm-ops": _Schema({"kind": None, "grid": _GRID, "hurst": None, "paths": None,
                        "noise": _Schema({"seed": None})},
                       {"out": None, "cov_nodes": None}),
}


def validate_config(cfg: dict) -> str:
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown or missing experiment kind {kind!r}")
    _SCHEMAS[kind].check(cfg)
    return kind


def _build_initial(cfg: dict, dim: int):
    kind = cfg["kind"]
    if kind == "point":
        return PointMass(np.asarray(cfg.get("point", [0.0] * dim), float))
    if kind == "gaussian":
        return GaussianLaw(cfg.get("mean", 0.0), cfg.get("std", 1.0))
    if kind == "sample-file":
        return SampleFile(cfg["path"])
    if kind == "gaussian-modes":
        return GaussianModes(np.asarray(cfg["scales"], float))
    if kind == "zero-modes":
        return DeterministicModes(np.zeros(dim))
    raise ConfigError(f"unknown initial-law kind '{kind}'")


def _build_drift_spec(cfg: dict, dim: int) -> DriftSpec:
    kind = cfg["kind"]
    params = cfg.get("params", {})
    if kind == "sin_diff":
        return BoundedKernel(dim, SinDiffKernel(dim), 1.0)
    if kind == "arctan_diff":
        return BoundedKernel(dim, ArctanDiffKernel(dim), math.pi / 2)
    if kind == "tanh_other":
        return BoundedKernel(dim, OtherFunctionKernel(np.tanh, dim, sup=1.0), 1.0)
    if kind == "mean_field_y":
        return LinearGrowthPath(dim, IdentityKernel(dim), params.get("sup", 1.0))
    if kind == "singular_power":
        kern = SingularPowerKernel(a=params["a"], radius=params.get("radius", 1.0),
                                   clamp_radius=params.get("clamp_radius", 1e-6))
        return SingularKernel(dim, kern, p=params.get("p", 2.0), q=params.get("q", 8.0))
    raise ConfigError(f"unknown drift kind '{kind}'")


def _build_b0(cfg: dict | None, dim: int):
    if cfg is None:
        return None
    kind = cfg["kind"]
    params = cfg.get("params", {})
    if kind == "zero":
        return None
    if kind == "constant":
        return ConstantDrift(np.full(dim, float(params.get("value", 0.0))))
    if kind == "ou":
        rate = float(params.get("rate", 1.0))
        return StateDrift(lambda t, x: -rate * x, dim)
    raise ConfigError(f"unknown drift0 kind '{kind}'")


def _build_forcing(cfg: dict) -> SpdeDriftSpec:
    kind = cfg["kind"]
    params = cfg.get("params", {})
    if kind == "zero":
        return SpdeDriftSpec(GZero(), 0.0)
    if kind == "constant-modes":
        coeffs = np.asarray(params["coeffs"], float)
        return SpdeDriftSpec(GConstantModes(coeffs), float(np.linalg.norm(coeffs)))
    if kind == "sat-mean":
        s = float(params.get("strength", 1.0))
        return SpdeDriftSpec(GSatDistToMean(s), s)
    if kind == "measure-mean":
        return SpdeDriftSpec(GMeasureMean(np.tanh, 1.0), 1.0)
    raise ConfigError(f"unknown forcing kind '{kind}'")


def _solver_config(cfg: dict) -> SolverConfig:
    grid = TimeGrid(float(cfg["grid"]["t_end"]), int(cfg["grid"]["n_steps"]))
    noise = cfg["noise"]
    spec = NoiseSpec(noise.get("kind", "bm"), float(noise.get("hurst", 0.5)))
    dim = int(cfg.get("dim", 1))
    return SolverConfig(grid, int(cfg.get("paths", cfg.get("n_particles", 2))), dim,
                        _build_initial(cfg["initial"], dim), int(noise["seed"]), spec)


def _picard_csvs(state, out):
    _write_csv(os.path.join(out, "picard_log.csv"),
               ["iter", "entropy_gap", "stderr", "tv_bound"],
               [[r["iter"], r["entropy_gap"], r["stderr"], r["tv_bound"]]
                for r in state.log_rows()])


def _clamp_summary(spec: DriftSpec):
    counters = spec.clamp_counters()
    return {
        "clamp_hits": int(sum(c.hits for c in counters)),
        "clamp_evals": int(sum(c.total for c in counters)),
    }


# ---------------------------------------------------------------------------
# experiment runners: each returns (artifact names, extra manifest fields)

def _run_simulate(cfg, out):
    config = _solver_config(cfg)
    drift = _build_b0(cfg.get("drift0"), config.dim)
    from .drifts import ZeroDrift
    ens = euler_maruyama(drift or ZeroDrift(config.dim), config, label="simulate")
    with open(os.path.join(out, "ensemble.csv"), "w", newline="") as fp:
        write_ensemble_csv(ens, fp)
    return ["ensemble.csv"], {}


def _run_picard(cfg, out):
    config = _solver_config(cfg)
    spec = _build_drift_spec(cfg["drift"], config.dim)
    state = picard_solve(spec, config, float(cfg["tol"]), int(cfg["max_iter"]))
    _picard_csvs(state, out)
    with open(os.path.join(out, "ensemble.csv"), "w", newline="") as fp:
        write_ensemble_csv(state.ensemble, fp)
    c0 = config.initial.subgaussian_c0()
    extra = {"converged": state.converged, "iterations": state.iterations,
             "non_contraction": state.non_contraction,
             "initial_subgaussian_c0": None if c0 is None else float(c0)}
    extra.update(_clamp_summary(spec))
    return ["picard_log.csv", "ensemble.csv"], extra


def _run_ladder(cfg, out):
    config = _solver_config(cfg)
    spec = _build_drift_spec(cfg["drift"], config.dim)
    rungs = truncation_ladder(spec, [float(v) for v in cfg["levels"]], config,
                              float(cfg["tol"]), int(cfg["max_iter"]))
    rows = [[r.level, r.state.iterations, r.state.converged, r.state.entropy_gap,
             "" if r.cross_entropy is None else _fmt(r.cross_entropy),
             "" if r.cross_stderr is None else _fmt(r.cross_stderr)]
            for r in rungs]
    _write_csv(os.path.join(out, "ladder_log.csv"),
               ["level", "iterations", "converged", "final_gap",
                "cross_entropy", "cross_stderr"], rows)
    return ["ladder_log.csv"], {"all_converged": all(r.state.converged for r in rungs)}


def _run_particles(cfg, out):
    config = _solver_config(cfg)
    spec = _build_drift_spec(cfg["drift"], config.dim)
    ens = particle_system(spec, int(cfg["n_particles"]), config)
    with open(os.path.join(out, "ensemble.csv"), "w", newline="") as fp:
        write_ensemble_csv(ens, fp)
    return ["ensemble.csv"], _clamp_summary(spec)


def _spde_config(cfg) -> SpdeConfig:
    grid = TimeGrid(float(cfg["grid"]["t_end"]), int(cfg["grid"]["n_steps"]))
    modes = int(cfg["modes"])
    return SpdeConfig(grid, int(cfg["replicas"]), modes,
                      _build_initial(cfg["initial"], modes if cfg["kind"] == "spde-heat"
                                     else 2 * modes),
                      int(cfg["noise"]["seed"]))


def _mode_variance_rows(ens, eig, t_end, wave=False):
    k_modes = len(eig)
    rows = []
    for k in range(k_modes):
        emp = float(np.var(ens.values[:, -1, k]))
        if wave:
            om = math.sqrt(eig[k])
            s = np.linspace(0.0, t_end, 4097)
            exact = float(np.trapezoid(np.sin(om * (t_end - s)) ** 2 / om**2, s))
        else:
            lam = eig[k]
            exact = t_end if lam == 0 else (1 - math.exp(-2 * lam * t_end)) / (2 * lam)
        rows.append([k if not wave else k + 1, emp, exact])
    return rows


def _dump_snapshots(ens, basis, out, times_req, n_dump, wave=False):
    """Spatial snapshots replica,t,sigma,value at the requested times."""
    rows = []
    k_modes = basis.n_modes
    for r in range(min(n_dump, ens.n_paths)):
        for t in times_req:
            node = ens.grid.node_of(float(t))
            coeffs = ens.values[r, node, :k_modes] if wave else ens.values[r, node, :]
            field = basis.synthesize(coeffs)
            for sigma, value in zip(basis.sigma, field):
                rows.append([r, ens.grid.times()[node], sigma, value])
    _write_csv(os.path.join(out, "spde_snapshots.csv"),
               ["replica", "t", "sigma", "value"], rows)


def _dump_fields(ens, out, n_dump):
    rows = []
    times = ens.grid.times()
    for r in range(min(n_dump, ens.n_paths)):
        for ki, t in enumerate(times):
            for mode in range(ens.dim):
                rows.append([r, t, mode, ens.values[r, ki, mode]])
    _write_csv(os.path.join(out, "spde_modes.csv"),
               ["replica", "t", "k", "coeff"], rows)


def _run_spde(cfg, out):
    wave = cfg["kind"] == "spde-wave"
    config = _spde_config(cfg)
    forcing = _build_forcing(cfg["forcing"])
    basis = config.basis("wave" if wave else "heat")
    if wave:
        state = wave_mf_solve(forcing, config, float(cfg["tol"]), int(cfg["max_iter"]),
                              noisy=bool(cfg.get("noisy", True)))
    else:
        state = heat_mf_solve(forcing, config, float(cfg["tol"]), int(cfg["max_iter"]))
    _picard_csvs(state, out)
    _write_csv(os.path.join(out, "mode_variance.csv"),
               ["k", "variance", "exact_free"],
               _mode_variance_rows(state.ensemble, basis.eigenvalues,
                                   config.grid.t_end, wave))
    artifacts = ["picard_log.csv", "mode_variance.csv"]
    n_dump = int(cfg.get("dump_replicas", 0))
    if n_dump > 0:
        _dump_fields(state.ensemble, out, n_dump)
        artifacts.append("spde_modes.csv")
    snap_times = cfg.get("snapshot_times", [])
    if snap_times:
        _dump_snapshots(state.ensemble, basis, out, snap_times,
                        int(cfg.get("snapshot_replicas", 4)), wave)
        artifacts.append("spde_snapshots.csv")
    return artifacts, {"converged": state.converged, "iterations": state.iterations}


def _run_chaos(cfg, out, threads):
    ns = [int(v) for v in cfg["ns"]]
    reps = int(cfg["repetitions"])
    grid = TimeGrid(float(cfg["grid"]["t_end"]), int(cfg["grid"]["n_steps"]))
    seed = int(cfg["noise"]["seed"])
    if cfg["variant"] == "sde":
        config = SolverConfig(grid, 2, 1, _build_initial(cfg["initial"], 1), seed,
                              NoiseSpec(cfg["noise"].get("kind", "bm"),
                                        float(cfg["noise"].get("hurst", 0.5))))
        spec = _build_drift_spec(cfg["drift"], 1)
        run = chaos_sweep_sde(spec, ns, reps, config, int(cfg["mf_size"]),
                              float(cfg["tol"]), int(cfg["max_iter"]), threads=threads)
    elif cfg["variant"] == "spde":
        modes = int(cfg.get("modes", 16))
        config = SpdeConfig(grid, 2, modes, _build_initial(cfg["initial"], modes), seed)
        run = chaos_sweep_spde(FieldKernelOfOther(), ns, reps, config,
                               int(cfg["mf_size"]), float(cfg["tol"]),
                               int(cfg["max_iter"]), threads=threads)
    else:
        raise ConfigError(f"unknown chaos variant '{cfg['variant']}'")
    _write_csv(os.path.join(out, "chaos_log.csv"), ["N", "stat", "value", "stderr"],
               [[r["N"], r["stat"], r["value"], r["stderr"]] for r in run.rows])
    _write_csv(os.path.join(out, "rate_fit.csv"), ["stat", "slope", "half_width"],
               [[stat, fit.slope, fit.half_width] for stat, fit in run.fits.items()])
    return ["chaos_log.csv", "rate_fit.csv"], {}


def _run_verify(cfg, out):
    integrand = cfg["integrand"]
    p, q = float(integrand["p"]), float(integrand["q"])
    t_end = float(cfg["t_end"])
    if integrand["kind"] == "power":
        f = power_indicator(float(integrand["a"]), p, q, t_end)
    elif integrand["kind"] == "box":
        f = box_indicator(p, q, t_end, radius=float(integrand.get("radius", 1.0)))
    elif integrand["kind"] == "const":
        f = constant_function(float(integrand.get("c", 1.0)), p, q)
    else:
        raise ConfigError(f"unknown integrand kind '{integrand['kind']}'")
    seed = int(cfg["noise"]["seed"])
    params = json.dumps({"integrand": integrand, "p": p, "q": q}, sort_keys=True)
    rows = []
    if cfg["check"] == "krylov":
        t_values = [float(v) for v in cfg.get("t_values", [t_end / 4, t_end / 2, t_end])]
        rep = krylov_check(f, t_values, int(cfg["paths"]), int(cfg["n_steps"]), seed)
        for r in rep.rows:
            rows.append(["krylov", params, r.t, r.estimate, r.stderr, r.flag])
        rows.append(["krylov_exponent", params, t_values[-1], rep.fitted_exponent,
                     rep.exponent_stderr,
                     bool(rep.fitted_exponent <= rep.bound_exponent + 0.1)])
        extra = {"fitted_exponent": rep.fitted_exponent,
                 "bound_exponent": rep.bound_exponent,
                 "clamp_hits": rep.clamp_hits, "clamp_evals": rep.clamp_total}
    elif cfg["check"] == "khasminskii":
        rep = khasminskii_check(f, float(cfg.get("lambda", 0.1)), int(cfg["paths"]),
                                int(cfg["n_steps"]), t_end, seed)
        rows.append(["khasminskii", params, t_end, rep.estimate, rep.stderr,
                     not rep.diverged])
        rows.append(["khasminskii_stability", params, t_end, rep.stability, 0.0,
                     rep.stability < 0.1])
        extra = {"diverged": rep.diverged, "stability": rep.stability,
                 "clamp_hits": rep.clamp_hits, "clamp_evals": rep.clamp_total}
    else:
        raise ConfigError(f"unknown verify check '{cfg['check']}'")
    _write_csv(os.path.join(out, "verify_log.csv"),
               ["check", "param_json", "t", "estimate", "stderr", "flag"], rows)
    return ["verify_log.csv"], extra


def _run_fbm_ops(cfg, out):
    grid = TimeGrid(float(cfg["grid"]["t_end"]), int(cfg["grid"]["n_steps"]))
    hurst = float(cfg["hurst"])
    sampler = FbmSampler(hurst, grid)
    ens = sample_fbm_ensemble(sampler, int(cfg["paths"]), int(cfg["noise"]["seed"]),
                              "fbm-ops")
    stride = max(1, grid.n_steps // int(cfg.get("cov_nodes", 32)))
    nodes = list(range(stride, grid.n_nodes, stride))
    x = ens.values[:, :, 0]
    times = grid.times()
    rows = []
    for i in nodes:
        for j in nodes:
            emp = float(np.mean(x[:, i] * x[:, j]))
            rows.append([i, j, times[i], times[j], emp,
                         rh_cov(times[i], times[j], hurst)])
    _write_csv(os.path.join(out, "fbm_cov.csv"),
               ["i", "j", "t_i", "t_j", "empirical", "exact"], rows)
    return ["fbm_cov.csv"], {"hurst": hurst}


# ---------------------------------------------------------------------------
# entry point

def run(config_path: str, out_dir: str | None = None, threads: int | None = None,
        seed_override: int | None = None) -> int:
    try:
        with open(config_path) as fp:
            cfg = json.load(fp)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        kind = validate_config(cfg)
        if seed_override is not None:
            cfg.setdefault("noise", {})["seed"] = int(seed_override)
        out = out_dir or cfg.get("out") or "."
        os.makedirs(out, exist_ok=True)
        threads = threads if threads else (os.cpu_count() or 1)
        started = time.time()
        if kind == "simulate":
            artifacts, extra = _run_simulate(cfg, out)
        elif kind == "picard":
            artifacts, extra = _run_picard(cfg, out)
        elif kind == "ladder":
            artifacts, extra = _run_ladder(cfg, out)
        elif kind == "particles":
            artifacts, extra = _run_particles(cfg, out)
        elif kind in ("spde-heat", "spde-wave"):
            artifacts, extra = _run_spde(cfg, out)
        elif kind == "chaos":
            artifacts, extra = _run_chaos(cfg, out, threads)
        elif kind == "verify":
            artifacts, extra = _run_verify(cfg, out)
        else:
            artifacts, extra = _run_fbm_ops(cfg, out)
        manifest = {
            "config": cfg,
            "kind": kind,
            "seed": cfg["noise"]["seed"],
            "versions": {"mvlab": __version__, "numpy": np.__version__,
                         "python": sys.version.split()[0]},
            "wall_time_s": round(time.time() - started, 3),
            "artifacts": artifacts,
        }
        manifest.update(extra)
        with open(os.path.join(out, "manifest.json"), "w") as fp:
            json.dump(manifest, fp, indent=2, sort_keys=True, default=str)
        for name in artifacts:
            full = os.path.join(out, name)
            if not (os.path.exists(full) and os.path.getsize(full) > 0):
                raise MvlabError(f"declared artifact {name} missing or empty")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MvlabError, ValueError, np.linalg.LinAlgError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(f"numeric error: {json.dumps(record)}", file=sys.stderr)
        return 3


def validate(config_path: str) -> int:
    try:
        with open(config_path) as fp:
            cfg = json.load(fp)
        validate_config(cfg)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print("ok")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mvlab",
                                     description="mean-field SDE/SPDE laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config master seed")
    p_val = sub.add_parser("validate", help="parse and schema-check a config")
    p_val.add_argument("config")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.out, args.threads, args.seed)
    return validate(args.config)


if __name__ == "__main__":
    sys.exit(main())
