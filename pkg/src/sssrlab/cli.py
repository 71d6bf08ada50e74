"""Command-line front end.

Commands: equilibrium, eigen, sssr, ismd, gmm, csi, simulate, pipeline.
Common flags: --config (path or preset name), --out, --seed, --jobs.
Exit codes: 0 success (an unstable verdict is a valid outcome), 1 numerical
failure, 2 configuration error.
"""

import argparse
import json
import math
import os
import sys
from dataclasses import fields
from importlib import resources

import numpy as np

from .csi import (
    CsiError,
    CsiWeights,
    csi_at_operating_point,
    csi_map,
    save_csi_map,
)
from .equilibrium import EquilibriumError, solve_equilibrium
from .gmm import GmmError, bic, fit_em, load_gmm, r_squared, save_gmm, select_k
from .model import (
    GflGains,
    GfmGains,
    ModelError,
    Setpoint,
    SystemParams,
    power_outputs,
)
from .region import (
    MAX_DIMENSION,
    RegionError,
    fit_sssr,
    load_ismd,
    load_region,
    parameter_plane,
    sample_ismd,
    save_ismd,
    save_region,
)
from .simulate import (
    GFL,
    GFM,
    CsiBased,
    Event,
    NoSwitch,
    Scenario,
    ScrThreshold,
    SimError,
    classify_trace,
    is_divergent,
    linear_response,
    load_scenario,
    rmse,
    save_trace,
    simulate,
    switch_times,
    trace_arrays,
)
from .smallsignal import linearize, stability_report

PRESETS = ("fig7", "fig8-gfl", "fig8-gfm", "fig9", "fig10", "fig11")

_NUMERIC_ERRORS = (EquilibriumError, ModelError, RegionError, GmmError,
                   CsiError, SimError, np.linalg.LinAlgError)


class ConfigError(Exception):
    """Bad or missing configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config plumbing


def _load_config(name_or_path: str) -> dict:
    if os.path.exists(name_or_path):
        text = open(name_or_path).read()
    else:
        ref = resources.files("sssrlab").joinpath("presets", f"{name_or_path}.cfg")
        if not ref.is_file():
            raise ConfigError(f"config {name_or_path!r} is neither a file nor a "
                              f"preset (presets: {', '.join(PRESETS)})")
        text = ref.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _apply(base, overrides, label: str):
    """Overlay a config section onto a frozen defaults object."""
    changes = {}
    for key, val in (overrides or {}).items():
        if not any(f.name == key for f in fields(base)):
            raise ConfigError(f"unknown {label} key {key!r}")
        try:
            changes[key] = float(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad {label} value for {key!r}: {exc}") from None
    if not changes:
        return base
    try:
        return base.replace(**changes)
    except ModelError as exc:
        raise ConfigError(f"bad {label} section: {exc}") from None


def _mode_of(cfg) -> str:
    mode = cfg.get("mode")
    if mode not in ("gfl", "gfm"):
        raise ConfigError("config key 'mode' must be 'gfl' or 'gfm'")
    return mode


def _params_of(cfg) -> SystemParams:
    return _apply(SystemParams(), cfg.get("params"), "params")


def _gains_of(cfg, mode: str):
    base = GflGains() if mode == "gfl" else GfmGains()
    return _apply(base, cfg.get("gains"), "gains")


def _setpoint_of(cfg) -> Setpoint:
    # configured references go straight to the solver; infeasible demand
    # should surface as a numerical failure, not a config rejection
    block = dict(cfg.get("setpoint") or {})
    block.setdefault("max_abs", math.inf)
    return _apply(Setpoint(), block, "setpoint")


def _axes_of(cfg):
    axes = cfg.get("axes")
    if not isinstance(axes, list) or not axes:
        raise ConfigError("config key 'axes' must be a non-empty list of "
                          "[name, lower, upper] triples")
    out = []
    for entry in axes:
        if not (isinstance(entry, list) and len(entry) == 3):
            raise ConfigError(f"bad axis entry {entry!r}")
        name, lo, hi = entry
        if not float(lo) < float(hi):
            raise ConfigError(f"axis {name!r} needs lower < upper")
        out.append((str(name), float(lo), float(hi)))
    if len(out) > MAX_DIMENSION:
        raise ConfigError(f"{len(out)} axes exceed the dimension limit "
                          f"{MAX_DIMENSION}")
    return out


def _origin_of(cfg, n_axes: int):
    origin = cfg.get("origin")
    if not (isinstance(origin, list) and len(origin) == n_axes):
        raise ConfigError(f"config key 'origin' must list {n_axes} coordinates")
    return [float(v) for v in origin]


def _weights_of(cfg) -> CsiWeights:
    w = cfg.get("weights")
    if w is None:
        return CsiWeights()
    if not (isinstance(w, list) and len(w) == 3):
        raise ConfigError("config key 'weights' must be [w_m, w_s, w_d]")
    try:
        return CsiWeights(*[float(v) for v in w])
    except CsiError as exc:
        raise ConfigError(str(exc)) from None


def _seed_of(block: dict, args) -> int:
    if args.seed is not None:
        return args.seed
    return int(block.get("seed", 0))


def _outpath(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


# ---------------------------------------------------------------------------
# shared stages


def _fit_region(cfg, args):
    mode = _mode_of(cfg)
    params = _params_of(cfg)
    gains = _gains_of(cfg, mode)
    sp = _setpoint_of(cfg)
    block = cfg.get("sssr")
    if not isinstance(block, dict):
        raise ConfigError("missing config section 'sssr'")
    axes = _axes_of(block)
    origin = _origin_of(block, len(axes))
    eps_r = float(block.get("epsilon_r", 1e-3))
    space = parameter_plane(mode, params, gains, sp, axes)
    return fit_sssr(space, origin=origin, epsilon_r=eps_r, jobs=args.jobs)


def _draw_samples(region, cfg, args):
    block = cfg.get("ismd")
    if not isinstance(block, dict):
        raise ConfigError("missing config section 'ismd'")
    n = int(block.get("n_samples", 3000))
    if n < 1:
        raise ConfigError("ismd n_samples must be >= 1")
    return sample_ismd(region, n, seed=_seed_of(block, args), jobs=args.jobs)


def _fit_model(dataset, cfg, args):
    block = cfg.get("gmm")
    if not isinstance(block, dict):
        raise ConfigError("missing config section 'gmm'")
    seed = _seed_of(block, args)
    n_init = int(block.get("n_init", 5))
    k_cfg = block.get("k", "auto")
    if k_cfg == "auto":
        k = select_k(dataset, k_max=int(block.get("k_max", 10)), seed=seed,
                     jobs=args.jobs)
    else:
        k = int(k_cfg)
    model = fit_em(dataset, k, seed=seed, n_init=n_init)
    return model, k


def _samples_xy(samples):
    x = np.array([s.coords for s in samples])
    y = np.array([s.margin for s in samples])
    return x, y


# ---------------------------------------------------------------------------
# commands


def cmd_equilibrium(cfg, args) -> int:
    mode = _mode_of(cfg)
    params = _params_of(cfg)
    gains = _gains_of(cfg, mode)
    sp = _setpoint_of(cfg)
    res = solve_equilibrium(mode, params, gains, sp)
    st = res.state
    p, q = power_outputs(st.v_d, st.v_q, st.i_d, st.i_q)
    path = _outpath(args, "equilibrium.txt")
    with open(path, "w") as fh:
        fh.write("# equilibrium report\n")
        fh.write(f"mode {mode}\n")
        fh.write(f"converged {int(res.converged)}\n")
        fh.write(f"residual {res.residual_norm:.17g}\n")
        fh.write(f"iterations {res.iterations}\n")
        fh.write(f"p {p:.17g}\n")
        fh.write(f"q {q:.17g}\n")
        for f in fields(st):
            fh.write(f"{f.name} {getattr(st, f.name):.17g}\n")
    print(f"equilibrium: mode={mode} residual={res.residual_norm:.3e} "
          f"p={p:.6f} q={q:.6f} -> {path}")
    return 0


def cmd_eigen(cfg, args) -> int:
    mode = _mode_of(cfg)
    params = _params_of(cfg)
    gains = _gains_of(cfg, mode)
    sp = _setpoint_of(cfg)
    lin = linearize(mode, params, gains, sp)
    rep = stability_report(lin)
    path = _outpath(args, "eigen.txt")
    with open(path, "w") as fh:
        fh.write("# eigen report\n")
        fh.write(f"mode {mode}\n")
        fh.write(f"margin {rep.margin:.17g}\n")
        fh.write(f"margin_mu {rep.margin_mu:.17g}\n")
        fh.write(f"classification {rep.classification}\n")
        fh.write(f"dominant_freq_hz {rep.dominant_freq_hz:.17g}\n")
        fh.write(f"dominant_damping {rep.dominant_damping:.17g}\n")
        fh.write("eigenvalues\n")
        for ev in rep.eigenvalues:
            fh.write(f"{ev.real:.17g},{ev.imag:.17g}\n")
    print(f"eigen: mode={mode} classification={rep.classification} "
          f"margin={rep.margin:.6g} -> {path}")
    return 0


def cmd_sssr(cfg, args) -> int:
    try:
        region = _fit_region(cfg, args)
    except RegionError as exc:
        print(f"sssr failed: {exc}; pick a strictly stable origin",
              file=sys.stderr)
        return 1
    path = _outpath(args, "region.txt")
    save_region(region, path)
    print(f"sssr: volume={region.volume:.17g} "
          f"boundary_points={len(region.points)} -> {path}")
    return 0


def cmd_ismd(cfg, args) -> int:
    region = _fit_region(cfg, args)
    samples = _draw_samples(region, cfg, args)
    save_region(region, _outpath(args, "region.txt"))
    path = _outpath(args, "ismd.csv")
    save_ismd(samples, path, axis_names=[a.name for a in region.space.axes])
    y = np.array([s.margin for s in samples])
    print(f"ismd: n={len(samples)} margin_min={y.min():.6g} "
          f"margin_max={y.max():.6g} -> {path}")
    return 0


def cmd_gmm(cfg, args) -> int:
    if "dataset" in cfg:
        samples = load_ismd(cfg["dataset"])
        if not samples:
            raise ConfigError(f"dataset {cfg['dataset']!r} holds no samples")
    else:
        region = _fit_region(cfg, args)
        samples = _draw_samples(region, cfg, args)
    dataset = _samples_xy(samples)
    model, k = _fit_model(dataset, cfg, args)
    r2 = r_squared(model, dataset)
    path = _outpath(args, "gmm.txt")
    save_gmm(model, path)
    print(f"gmm: k={k} r_squared={r2:.17g} bic={bic(model, dataset):.17g} "
          f"-> {path}")
    return 0


def cmd_csi(cfg, args) -> int:
    weights = _weights_of(cfg)
    if "region_file" in cfg and "gmm_file" in cfg:
        region = load_region(cfg["region_file"])
        model = load_gmm(cfg["gmm_file"])
    else:
        region = _fit_region(cfg, args)
        samples = _draw_samples(region, cfg, args)
        model, _ = _fit_model(_samples_xy(samples), cfg, args)
    block = cfg.get("csi", {})
    cmap = csi_map(region, model, grid_resolution=int(block.get("grid_resolution", 60)),
                   weights=weights)
    path = _outpath(args, "csi_map.csv")
    save_csi_map(cmap, path)
    print(f"csi: points={len(cmap.points)} j_max={cmap.j.max():.17g} "
          f"argmax_j={np.array2string(cmap.argmax_j, precision=6)} "
          f"argmax_margin={np.array2string(cmap.argmax_margin, precision=6)} "
          f"-> {path}")
    return 0


def _context_fns(policy_cfg, args):
    """Build per-mode CSI evaluators for the switching policy."""
    contexts = policy_cfg.get("contexts")
    if not isinstance(contexts, dict) or set(contexts) != {"gfl", "gfm"}:
        raise ConfigError("csi policy needs 'contexts' with 'gfl' and 'gfm' "
                          "sections")
    j_fns = {}
    for mode, sigma in (("gfl", GFL), ("gfm", GFM)):
        sub = dict(contexts[mode])
        sub["mode"] = mode
        names = [a[0] for a in _axes_of(sub.get("sssr", {}))]
        if names != ["scr", "x_over_r"]:
            raise ConfigError("csi policy contexts must use axes "
                              "[scr, x_over_r]")
        region = _fit_region(sub, args)
        samples = _draw_samples(region, sub, args)
        model, _ = _fit_model(_samples_xy(samples), sub, args)
        weights = _weights_of(sub)
        block = sub.get("csi", {})
        cmap = csi_map(region, model,
                       grid_resolution=int(block.get("grid_resolution", 40)),
                       weights=weights)

        def j_fn(scr, xr, region=region, model=model, ctx=cmap.context,
                 weights=weights):
            return csi_at_operating_point(np.array([scr, xr]), region, model,
                                          ctx, weights)

        j_fns[sigma] = j_fn
    return j_fns


def _policy_of(policy_cfg, args):
    if not isinstance(policy_cfg, dict):
        raise ConfigError("policy section must be an object with a 'type'")
    kind = policy_cfg.get("type")
    if kind == "none":
        return NoSwitch()
    if kind == "threshold":
        try:
            return ScrThreshold(float(policy_cfg.get("threshold", 3.5)))
        except SimError as exc:
            raise ConfigError(str(exc)) from None
    if kind == "csi":
        j_fns = _context_fns(policy_cfg, args)
        try:
            return CsiBased(j_fns=j_fns,
                            epsilon_h=float(policy_cfg.get("epsilon_h", 0.05)))
        except SimError as exc:
            raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown policy type {policy_cfg.get('type')!r}")


def _scenario_of(cfg) -> Scenario:
    block = cfg.get("scenario")
    if isinstance(block, str):
        return load_scenario(block)
    if not isinstance(block, dict):
        raise ConfigError("missing config section 'scenario'")
    try:
        events = tuple(Event(float(t), str(k), float(v))
                       for t, k, v in block.get("events", ()))
        return Scenario(duration=float(block["duration"]),
                        dt=float(block.get("dt", 2e-5)),
                        sigma0=int(block.get("sigma0", GFL)),
                        events=events)
    except KeyError as exc:
        raise ConfigError(f"scenario is missing key {exc}") from None
    except (SimError, ValueError) as exc:
        raise ConfigError(f"bad scenario: {exc}") from None


def _verdict(trace, scenario) -> str:
    if is_divergent(trace, scenario):
        return "unstable"
    label = classify_trace(trace, t_start=0.0, scenario=scenario)
    return "unstable" if label == "divergent" else label


def _rmse_vs_linear(cfg_rmse, mode, params, gains_gfl, gains_gfm, sp) -> float:
    """Nonlinear-vs-linear active power RMSE for a reference step."""
    key = cfg_rmse.get("step_key", "p_ref")
    step = float(cfg_rmse.get("step", 0.01))
    t_step = float(cfg_rmse.get("t_step", 0.01))
    duration = float(cfg_rmse.get("duration", 0.5))
    dt = float(cfg_rmse.get("dt", 2e-5))
    gains = gains_gfl if mode == "gfl" else gains_gfm
    lin = linearize(mode, params, gains, sp)
    if key not in lin.inputs:
        raise ConfigError(f"rmse step_key {key!r} not in inputs {lin.inputs}")
    sc = Scenario(duration=duration, dt=dt,
                  sigma0=GFL if mode == "gfl" else GFM,
                  events=(Event(t_step, f"step_{key}", step),))
    tr = simulate(sc, NoSwitch(), params, gains_gfl, gains_gfm, sp,
                  record_every=1)
    arr = trace_arrays(tr)
    x_eq = lin.x_eq
    n = len(x_eq)
    d_p = np.zeros(n)
    if mode == "gfl":
        iv, ii = (10, 11), (6, 7)
    else:
        iv, ii = (11, 12), (7, 8)
    d_p[ii[0]], d_p[ii[1]] = x_eq[iv[0]], x_eq[iv[1]]
    d_p[iv[0]], d_p[iv[1]] = x_eq[ii[0]], x_eq[ii[1]]
    p_eq = x_eq[iv[0]] * x_eq[ii[0]] + x_eq[iv[1]] * x_eq[ii[1]]
    du = np.zeros(len(lin.inputs))
    du[lin.inputs.index(key)] = step
    _, dx = linear_response(lin, du, duration - t_step, dt)
    n_pre = int(round(t_step / dt))
    p_lin = np.full(len(arr["p"]), p_eq)
    p_lin[n_pre:] = p_eq + dx @ d_p
    return rmse(arr["p"], p_lin)


def cmd_simulate(cfg, args) -> int:
    scenario = _scenario_of(cfg)
    params = _params_of(cfg)
    gains_gfl = _apply(GflGains(), cfg.get("gains_gfl"), "gains_gfl")
    gains_gfm = _apply(GfmGains(), cfg.get("gains_gfm"), "gains_gfm")
    sp = _setpoint_of(cfg)
    policy = _policy_of(cfg.get("policy", {"type": "none"}), args)
    record_every = int(cfg.get("record_every", 1))
    trace = simulate(scenario, policy, params, gains_gfl, gains_gfm, sp,
                     record_every=record_every)
    path = _outpath(args, "trace.csv")
    save_trace(trace, path)
    sw = switch_times(trace)
    print(f"simulate: verdict={_verdict(trace, scenario)} "
          f"switches={[(round(t, 5), a, b) for t, a, b in sw]} -> {path}")
    if "rmse" in cfg:
        mode = _mode_of(cfg)
        err = _rmse_vs_linear(cfg["rmse"], mode, params, gains_gfl, gains_gfm, sp)
        print(f"rmse_vs_linear {err:.17g}")
    if "baseline" in cfg:
        base_policy = _policy_of(cfg["baseline"], args)
        base = simulate(scenario, base_policy, params, gains_gfl, gains_gfm,
                        sp, record_every=record_every)
        bpath = _outpath(args, "trace_baseline.csv")
        save_trace(base, bpath)
        bsw = switch_times(base)
        print(f"baseline: verdict={_verdict(base, scenario)} "
              f"switches={[(round(t, 5), a, b) for t, a, b in bsw]} "
              f"halted_t={base[-1].t:.17g} -> {bpath}")
    return 0


def cmd_pipeline(cfg, args) -> int:
    stage = "sssr"
    try:
        region = _fit_region(cfg, args)
        save_region(region, _outpath(args, "region.txt"))
        stage = "ismd"
        samples = _draw_samples(region, cfg, args)
        save_ismd(samples, _outpath(args, "ismd.csv"),
                  axis_names=[a.name for a in region.space.axes])
        stage = "gmm"
        dataset = _samples_xy(samples)
        model, k = _fit_model(dataset, cfg, args)
        save_gmm(model, _outpath(args, "gmm.txt"))
        r2 = r_squared(model, dataset)
        stage = "csi"
        weights = _weights_of(cfg)
        block = cfg.get("csi", {})
        cmap = csi_map(region, model,
                       grid_resolution=int(block.get("grid_resolution", 60)),
                       weights=weights)
        save_csi_map(cmap, _outpath(args, "csi_map.csv"))
    except _NUMERIC_ERRORS as exc:
        print(f"pipeline stage {stage} failed: {exc}", file=sys.stderr)
        return 1
    path = _outpath(args, "summary.txt")
    with open(path, "w") as fh:
        fh.write("# pipeline summary\n")
        fh.write(f"mode {_mode_of(cfg)}\n")
        fh.write(f"volume {region.volume:.17g}\n")
        fh.write(f"n_samples {len(samples)}\n")
        fh.write(f"k {k}\n")
        fh.write(f"r_squared {r2:.17g}\n")
        fh.write(f"bic {bic(model, dataset):.17g}\n")
        fh.write("argmax_j " + " ".join(f"{v:.17g}" for v in cmap.argmax_j) + "\n")
        fh.write("argmax_margin "
                 + " ".join(f"{v:.17g}" for v in cmap.argmax_margin) + "\n")
        fh.write(f"j_max {cmap.j.max():.17g}\n")
        fh.write(f"weights {weights.w_m:.17g} {weights.w_s:.17g} "
                 f"{weights.w_d:.17g}\n")
    print(f"pipeline: k={k} r_squared={r2:.6f} "
          f"argmax_j={np.array2string(cmap.argmax_j, precision=6)} "
          f"argmax_margin={np.array2string(cmap.argmax_margin, precision=6)} "
          f"-> {path}")
    return 0


_COMMANDS = {
    "equilibrium": cmd_equilibrium,
    "eigen": cmd_eigen,
    "sssr": cmd_sssr,
    "ismd": cmd_ismd,
    "gmm": cmd_gmm,
    "csi": cmd_csi,
    "simulate": cmd_simulate,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sssrlab",
        description="Security-region, GMM, CSI, and switching analyses for "
                    "GFL/GFM inverter subsystems.")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True,
                        help="path to a JSON config, or a preset name "
                             f"({', '.join(PRESETS)})")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override every seed in the config")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
