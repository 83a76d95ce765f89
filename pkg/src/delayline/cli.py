"""Command-line interface: scenario runs, CSV emission, verification driver.

Configs are TOML documents with [grid], [time], [plant], [controller],
[scenario], [output] sections; keys are lowercase snake_case and unknown keys
are rejected by name. Outputs per run: ode.csv (state/control series),
pde.csv (profile snapshots), target.csv (target-state diagnostics),
gains.csv (boundary kernel trace), cert.txt (positivity certificate for the
production model).
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import plants
from .control import bang_bang, s_min, safety_check, solve_gains
from .core import Grid, HistoryBuffer, SpatialProfile
from .errors import ConfigError, DelaylineError
from .predictor import march_predictors
from .sim import RunLog, Scenario, SimConfig, run_closed_loop
from .verify import TargetDiagnostics, run_verification

_SCHEMA = {
    "grid": {"d", "n_cells"},
    "time": {"dt", "t_final"},
    "plant": {
        "model", "p", "tau", "a", "c", "alpha", "mu", "rho0_const", "h_const",
        "d", "x0", "u0_const",
    },
    "controller": {"q_star", "b_max", "q_max", "s_offset"},
    "scenario": {"scenario", "open_loop_input"},
    "output": {"snapshot_every", "probe_times"},
}

_MODELS = {"production_line", "section2", "section3"}


def _check_keys(doc: dict[str, Any], path: Path) -> None:
    for section, table in doc.items():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"{path}: section [{section}] must be a table")
        for key in table:
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"{path}: unknown key '{key}' in section [{section}]"
                )


def _require(table: dict, section: str, key: str, path: Path) -> Any:
    if key not in table:
        raise ConfigError(f"{path}: missing key '{key}' in section [{section}]")
    return table[key]


def _positive(name: str, value: float) -> float:
    value = float(value)
    if value <= 0:
        raise ConfigError(f"parameter '{name}' must be strictly positive, got {value}")
    return value


class LoadedConfig:
    """A parsed configuration plus the pieces the subcommands need."""

    def __init__(self, sim: SimConfig, model: str, params: dict[str, float]):
        self.sim = sim
        self.model = model
        self.params = params


def load_config(path: str | Path) -> LoadedConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: malformed config: {exc}")
    _check_keys(doc, path)

    grid_tbl = doc.get("grid", {})
    time_tbl = doc.get("time", {})
    plant_tbl = doc.get("plant", {})
    ctrl_tbl = doc.get("controller", {})
    scen_tbl = doc.get("scenario", {})
    out_tbl = doc.get("output", {})

    model = _require(plant_tbl, "plant", "model", path)
    if model not in _MODELS:
        raise ConfigError(f"{path}: unknown model '{model}'")
    scen_name = str(scen_tbl.get("scenario", "compensated"))
    try:
        scenario = Scenario(scen_name)
    except ValueError:
        raise ConfigError(f"{path}: unknown scenario '{scen_name}'")

    n_cells = int(_require(grid_tbl, "grid", "n_cells", path))
    dt = _positive("dt", _require(time_tbl, "time", "dt", path))
    t_final = _positive("t_final", _require(time_tbl, "time", "t_final", path))
    snapshot_every = int(out_tbl.get("snapshot_every", 100))
    probe_times = tuple(float(v) for v in out_tbl.get("probe_times", ()))

    if model == "production_line":
        d = _positive("d", grid_tbl.get("d", 2.0))
        params = dict(
            p=_positive("p", plant_tbl.get("p", 0.25)),
            tau=_positive("tau", plant_tbl.get("tau", 0.2)),
            a=_positive("a", plant_tbl.get("a", 0.1)),
            c=float(plant_tbl.get("c", 1.0)),
            alpha=_positive("alpha", plant_tbl.get("alpha", 0.5)),
            mu=_positive("mu", plant_tbl.get("mu", 0.8)),
            q_star=float(ctrl_tbl.get("q_star", 0.3)),
            b_max=_positive("b_max", ctrl_tbl.get("b_max", 1.2)),
            q_max=_positive("q_max", ctrl_tbl.get("q_max", 1.0)),
            s_offset=float(ctrl_tbl.get("s_offset", 20.0)),
            rho0_const=float(plant_tbl.get("rho0_const", 0.0)),
            h_const=float(plant_tbl.get("h_const", 0.0)),
            d=d,
        )
        if params["c"] < 0:
            raise ConfigError("friction coefficient 'c' must be nonnegative")
        sim = plants.production_config(
            scenario,
            n_cells=n_cells,
            dt=dt,
            t_final=t_final,
            q_star=params["q_star"],
            mu=params["mu"],
            P=params["p"],
            q_max=params["q_max"],
            b_max=params["b_max"],
            alpha=params["alpha"],
            tau=params["tau"],
            D=d,
            C0=params["c"],
            A=params["a"],
            s_offset=params["s_offset"],
            rho0_const=params["rho0_const"],
            h_const=params["h_const"],
            snapshot_every=snapshot_every,
            probe_times=probe_times,
        )
    else:
        d = _positive("d", grid_tbl.get("d", 1.0))
        params = dict(
            d=d,
            tau=_positive("tau", plant_tbl.get("tau", 0.2 if model == "section2" else 0.25)),
            x0=float(plant_tbl.get("x0", 0.8 if model == "section2" else 1.0)),
            u0_const=float(plant_tbl.get("u0_const", 0.0)),
        )
        builder = plants.section2_config if model == "section2" else plants.section3_config
        sim = builder(
            scenario,
            n_cells=n_cells,
            dt=dt,
            t_final=t_final,
            D=d,
            tau=params["tau"],
            x0=params["x0"],
            u0_const=params["u0_const"],
            snapshot_every=snapshot_every,
            probe_times=probe_times,
        )
    if "open_loop_input" in scen_tbl:
        sim.open_loop_input = float(scen_tbl["open_loop_input"])
    return LoadedConfig(sim, model, params)


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_outputs(loaded: LoadedConfig, log: RunLog, out_dir: Path) -> dict[str, float]:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out_dir / "ode.csv",
        ["t", "Q", "U", "nu_in", "nu_out", "q_flux", "u0"],
        zip(log.t, log.state, log.control, log.nu_in, log.nu_out, log.q_flux, log.u_at_0),
    )
    n = log.grid.N
    _write_csv(
        out_dir / "pde.csv",
        ["t"] + [f"x_{i}" for i in range(n + 1)],
        ([t] + list(profile) for t, profile in log.snapshots),
    )
    _write_csv(
        out_dir / "target.csv",
        ["t", "sup_w", "w_at_D"],
        zip(log.target_t, log.sup_w, log.w_at_d),
    )
    _write_csv(
        out_dir / "gains.csv",
        ["t", "K_DD"],
        zip(log.gains_t, log.kernel_dd),
    )
    diag = TargetDiagnostics.from_series(
        np.asarray(log.target_t), np.asarray(log.w_at_d), np.asarray(log.sup_w)
    )
    summary = {
        "final_state": float(log.state[-1]),
        "min_state": log.min_state,
        "min_profile": log.min_profile,
        "min_control": log.min_control,
        "vanish_time": diag.vanish_time_estimate if diag.vanish_time_estimate is not None else float("nan"),
    }
    cert_path = out_dir / "cert.txt"
    if loaded.model == "production_line":
        cert = production_certificate(loaded)
        with open(cert_path, "w") as fh:
            fh.write(
                "positivity certificate (initial data)\n"
                f"lhs = {_fmt(cert.lhs)}\n"
                f"rhs = {_fmt(cert.rhs)}\n"
                f"M = {_fmt(cert.M)}\n"
                f"rho_bar = {_fmt(cert.rho_bar)}\n"
                f"u_lower = {_fmt(cert.u_lower)}\n"
                f"satisfied = {str(cert.satisfied).lower()}\n"
            )
        summary["cert_satisfied"] = float(cert.satisfied)
    else:
        with open(cert_path, "w") as fh:
            fh.write(f"model {loaded.model}: no buffer safety certificate defined\n")
    return summary


def production_certificate(loaded: LoadedConfig):
    """Evaluate the positivity certificate on a production config's initial data."""
    if loaded.model != "production_line":
        raise ConfigError("the safety certificate applies to the production model only")
    p = loaded.params
    sim = loaded.sim
    from .control import BangBangGains

    gains = BangBangGains.synthesize(
        p["q_star"], p["alpha"], p["b_max"], p["q_max"], p["mu"], p["s_offset"]
    )
    plant = plants.production_line_plant(
        P=p["p"], tau=p["tau"], A=p["a"], C0=p["c"], alpha=p["alpha"], mu=p["mu"],
        D=p["d"], q_max=p["q_max"], gains=gains,
    )
    hist = HistoryBuffer.from_callable(lambda s: p["h_const"], p["tau"], sim.dt)
    u0 = SpatialProfile(sim.u0.copy(), sim.grid)
    bundle = march_predictors(plant, sim.grid, p["h_const"], hist, u0, 0.0)
    p1_end = float(bundle.p1.values[-1])
    u_nominal = [
        p["q_star"] / p["alpha"],
        bang_bang(p["h_const"], gains),
        bang_bang(p1_end, gains),
    ]
    return safety_check(
        A=p["a"], C_max=p["c"], P=p["p"], tau=p["tau"], Q_max=p["q_max"], D=p["d"],
        B_max=p["b_max"], rho0_max=float(np.max(sim.u0)), Q0=p["h_const"],
        u_nominal_values=u_nominal,
    )


def _run_one(config_path: str, out_dir: str) -> int:
    loaded = load_config(config_path)
    log = run_closed_loop(loaded.sim)
    summary = write_outputs(loaded, log, Path(out_dir))
    if loaded.model == "production_line":
        final_err = abs(summary["final_state"] - loaded.params["q_star"])
        print(f"{config_path}: final |Q - Q*| = {_fmt(final_err)}")
    else:
        print(f"{config_path}: final |X| = {_fmt(abs(summary['final_state']))}")
    print(
        f"{config_path}: vanish_time = {summary['vanish_time']}, "
        f"min state = {_fmt(summary['min_state'])}, "
        f"min profile = {_fmt(summary['min_profile'])}, "
        f"min control = {_fmt(summary['min_control'])}"
    )
    if log.warnings:
        print(f"{config_path}: {len(log.warnings)} warning(s); first: {log.warnings[0]}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    out_root = Path(args.out)
    configs = args.config
    if len(configs) == 1:
        return _run_one(configs[0], str(out_root))
    targets = [(c, str(out_root / Path(c).stem)) for c in configs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_one, c, o) for c, o in targets]
            rc = max(f.result() for f in futures)
        return rc
    rc = 0
    for c, o in targets:
        rc = max(rc, _run_one(c, o))
    return rc


def cmd_verify(args: argparse.Namespace) -> int:
    loaded = load_config(args.config)
    results = run_verification(loaded.sim, refinement=not args.no_refinement)
    print(f"verification of {args.config} ({loaded.model})")
    for res in results:
        print(res.row())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_gains(args: argparse.Namespace) -> int:
    smin = s_min(args.q_star, args.alpha, args.b_max, args.q_max)
    slope = smin + args.s_offset
    lam_l, lam_r = solve_gains(args.q_star, args.alpha, args.b_max, args.q_max, slope)
    print(f"S_min = {_fmt(smin)}")
    print(f"S = {_fmt(slope)}")
    print(f"Lambda_left = {_fmt(lam_l)}")
    print(f"Lambda_right = {_fmt(lam_r)}")
    return 0


def cmd_cert(args: argparse.Namespace) -> int:
    loaded = load_config(args.config)
    cert = production_certificate(loaded)
    print(f"lhs = {_fmt(cert.lhs)}")
    print(f"rhs = {_fmt(cert.rhs)}")
    print(f"M = {_fmt(cert.M)}")
    print(f"rho_bar = {_fmt(cert.rho_bar)}")
    print(f"u_lower = {_fmt(cert.u_lower)}")
    print(f"satisfied = {str(cert.satisfied).lower()}")
    return 0 if cert.satisfied else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delayline",
        description="Predictor-feedback boundary control simulations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run scenarios and write CSV logs")
    p_run.add_argument("config", nargs="+", help="config file(s)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p_run.set_defaults(func=cmd_run)

    p_ver = sub.add_parser("verify", help="run the structural verification suite")
    p_ver.add_argument("config")
    p_ver.add_argument("--no-refinement", action="store_true")
    p_ver.set_defaults(func=cmd_verify)

    p_g = sub.add_parser("gains", help="synthesize saturating-law branch gains")
    p_g.add_argument("--q-star", type=float, required=True, dest="q_star")
    p_g.add_argument("--alpha", type=float, required=True)
    p_g.add_argument("--b-max", type=float, required=True, dest="b_max")
    p_g.add_argument("--q-max", type=float, required=True, dest="q_max")
    p_g.add_argument("--s-offset", type=float, default=20.0, dest="s_offset")
    p_g.set_defaults(func=cmd_gains)

    p_c = sub.add_parser("cert", help="evaluate the positivity certificate")
    p_c.add_argument("config")
    p_c.set_defaults(func=cmd_cert)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DelaylineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
