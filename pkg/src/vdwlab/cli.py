"""Scenario runner: ``vdwlab list`` and ``vdwlab run <config.yaml>``.

Heavy numerical modules are imported lazily so that ``--threads`` can set the
BLAS/OpenMP thread variables before numpy loads.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import yaml

from . import __version__
from .errors import ConfigError

BASE_SYSTEM = {
    "grid": {"points": 201, "extent": [-30.0, 30.0]},
    "potential": {"softening": 1.0, "ee_softening": None, "nn_softening": None, "strength": 1.0},
    "charges": [1, 1],
    "separation": 14.0,
}

SCENARIOS = {
    "sweep": ("Interaction energy W(R) over a separation window, power-law fit and C6 comparison",
              {"separations": [12.0, 14.4, 16.8, 19.2, 21.6, 24.0], "window": [12.0, 24.0],
               "method": "direct", "exponent_tol": 0.2, "c6_tol": 0.02, "ratio_tol": 0.10}),
    "c6": ("C6 of two hydrogen atoms (radial l=0/l=1 channels) by resolvent and sum over states",
           {"radial_points": 799, "r_max": 40.0, "reference": 6.499, "tol": 0.01,
            "n_rotations": 5, "rotation_tol": 1e-8}),
    "feshbach_check": ("Fixed points of the Feshbach-Schur map on random matrices and on H-H",
                       {"n_matrices": 100, "max_dim": 50, "max_rank": 5, "energy_tol": 1e-10,
                        "vector_tol": 1e-8, "cross_check_tol": 1e-7}),
    "symmetry_check": ("Projector identities, factorization, branching and the norm formula",
                       {"n_electrons": 3, "n_points": 3, "tol": 1e-12, "norm_tol": 1e-8}),
    "ims_check": ("IMS localization identity and the 1/R^2 scaling of the gradient term",
                  {"separations": [10.0, 14.0, 20.0], "residual_tol": 1e-8, "slope": -2.0,
                   "slope_tol": 0.2}),
    "stability_check": ("Bottom of H on the complement of the cut-off ground states",
                        {"separations": [14.0, 3.0], "cutoff_fraction": 1.0 / 6.0, "sigma": [2]}),
    "property_e": ("Energetic condition: one-well two-electron energy and the ionization table",
                   {"max_extra": 1}),
    "necessity": ("Rigged system with a degenerate ionic split: W(R) decays like 1/R",
                  {"separations": [12.0, 14.4, 16.8, 19.2, 20.0, 21.6, 24.0], "ee_softening": 3.0,
                   "exponent": -1.0, "exponent_tol": 0.2, "tail_R": 20.0, "tail_tol": 0.05}),
    "bo_correction": ("First correction beyond clamped nuclei from nuclear-position derivatives",
                      {"masses": [1836.15267, 1836.15267], "step": 0.01, "sigma": [2],
                       "ratio_tol": 0.1}),
}


def default_config(name: str) -> dict:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}")
    return {"scenario": name, "seed": 0, "system": copy.deepcopy(BASE_SYSTEM),
            "params": copy.deepcopy(SCENARIOS[name][1]), "output": {"dir": f"results/{name}"}}


def list_scenarios() -> list:
    """Catalog entries in a fixed order: name, description, default config."""
    return [{"name": k, "description": v[0], "config": default_config(k)} for k, v in SCENARIOS.items()]


# ---------------------------------------------------------------------------
# validation

def _number(value, name, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{name} must be positive, got {value!r}")
    return value


def validate_config(raw: dict) -> dict:
    """Fill defaults and check every knob; raises ConfigError before any computation."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - {"scenario", "seed", "system", "params", "output"}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    name = raw.get("scenario")
    cfg = default_config(name)
    cfg["seed"] = int(_number(raw.get("seed", 0), "seed", integer=True))
    system = raw.get("system") or {}
    for key, value in system.items():
        if key not in cfg["system"]:
            raise ConfigError(f"unknown system key {key!r}")
        if isinstance(value, dict):
            extra = set(value) - set(cfg["system"][key])
            if extra:
                raise ConfigError(f"unknown keys {sorted(extra)} in system.{key}")
            cfg["system"][key].update(value)
        else:
            cfg["system"][key] = value
    g = cfg["system"]["grid"]
    _number(g["points"], "system.grid.points", positive=True, integer=True)
    if g["points"] < 2:
        raise ConfigError("system.grid.points must be at least 2")
    if len(g["extent"]) != 2 or not g["extent"][0] < g["extent"][1]:
        raise ConfigError(f"system.grid.extent must be increasing, got {g['extent']}")
    pot = cfg["system"]["potential"]
    _number(pot["softening"], "system.potential.softening", positive=True)
    _number(pot["strength"], "system.potential.strength")
    if pot["ee_softening"] is not None:
        _number(pot["ee_softening"], "system.potential.ee_softening", positive=True)
    if pot["nn_softening"] is not None and _number(pot["nn_softening"], "system.potential.nn_softening") < 0:
        raise ConfigError("system.potential.nn_softening must be non-negative")
    charges = cfg["system"]["charges"]
    if len(charges) != 2 or any(int(c) != c or c < 1 for c in charges):
        raise ConfigError("system.charges must be two positive integers")
    _number(cfg["system"]["separation"], "system.separation", positive=True)
    params = raw.get("params") or {}
    extra = set(params) - set(cfg["params"])
    if extra:
        raise ConfigError(f"unknown params {sorted(extra)} for scenario {name!r}")
    cfg["params"].update(params)
    for key in ("separations", "window"):
        if key in cfg["params"]:
            for v in cfg["params"][key]:
                _number(v, f"params.{key}", positive=True)
    out = raw.get("output") or {}
    cfg["output"].update(out)
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return validate_config(raw)


# ---------------------------------------------------------------------------
# scenario bodies

class Checks:
    """Collects pass/fail records, each with the measured value that decided it."""

    def __init__(self, strict: bool):
        self.strict = strict
        self.items = []

    def add(self, name, passed, measured, tolerance=None, **extra):
        rec = {"name": name, "passed": bool(passed), "measured": _plain(measured), "tolerance": _plain(tolerance)}
        rec.update({k: _plain(v) for k, v in extra.items()})
        self.items.append(rec)

    def guard(self, name, fn):
        """Run ``fn``; outside strict mode an exception becomes a failed check."""
        try:
            return fn()
        except Exception as exc:
            if self.strict:
                raise
            self.add(name, False, None, error=f"{type(exc).__name__}: {exc}")
            return None


def _plain(v):
    import numpy as np

    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _system(cfg, separation=None):
    from .lattice import PotentialSpec, build_grid
    from .manybody import two_atom_spec

    s = cfg["system"]
    grid = build_grid(s["grid"]["points"], s["grid"]["extent"])
    p = s["potential"]
    pot = PotentialSpec(softening=p["softening"], strength=p["strength"], ee_softening=p["ee_softening"],
                        nn_softening=p["nn_softening"])
    R = s["separation"] if separation is None else separation
    return two_atom_spec(R, grid, pot, charges=tuple(int(c) for c in s["charges"]))


def _sigma(diagram):
    from .symmetry import symmetry_type

    return None if diagram is None else symmetry_type(tuple(diagram))


def run_sweep(cfg, checks, out, ctx):
    import numpy as np

    from .vdw import c6_coefficient, fit_power_law, interaction_sweep

    p = cfg["params"]
    spec = _system(cfg)
    c6 = c6_coefficient(spec)
    rep = interaction_sweep(spec, p["separations"], method=p["method"], sigma=c6.value, seed=cfg["seed"])
    rep.to_csv(out / "sweep.csv")
    fit = checks.guard("fit", lambda: fit_power_law(rep, tuple(p["window"])))
    if fit is not None:
        checks.add("exponent", abs(fit.exponent + 6) <= p["exponent_tol"], fit.exponent, p["exponent_tol"],
                   coefficient=fit.coefficient)
    R, W = rep.separations, rep.w
    scaled = R[-1] ** 6 * abs(W[-1])
    checks.add("c6_match_at_Rmax", abs(scaled / c6.value - 1) <= p["c6_tol"], scaled / c6.value - 1,
               p["c6_tol"], sigma=c6.value, sigma_sum_over_states=c6.sum_over_states)
    ratio = W[-1] / W[0]
    target = (R[0] / R[-1]) ** 6
    checks.add("decay_ratio", abs(ratio / target - 1) <= p["ratio_tol"], ratio, p["ratio_tol"], expected=target)
    checks.add("attractive", bool(np.all(W < 0)), W.max())
    fo = rep.first_order
    ctx["first_order_times_R5"] = (fo * R**5).tolist()
    ctx["remainder_times_R6_over_sigma"] = ((W - fo) * R**6 / c6.value).tolist()


def run_c6(cfg, checks, out, ctx):
    from scipy.spatial.transform import Rotation

    from .lattice import build_radial_grid
    from .vdw import c6_angular_factor, c6_coefficient_3d

    p = cfg["params"]
    grid = build_radial_grid(p["radial_points"], p["r_max"])
    res = c6_coefficient_3d(grid)
    checks.add("resolvent_vs_sum_over_states", abs(res.value / res.sum_over_states - 1) <= p["tol"],
               res.value / res.sum_over_states - 1, p["tol"], c6=res.value, sum_over_states=res.sum_over_states)
    checks.add("reference_value", abs(res.value / p["reference"] - 1) <= p["tol"], res.value, p["tol"],
               reference=p["reference"])
    base = c6_angular_factor([0.0, 0.0, 1.0])
    worst = 0.0
    for rot in Rotation.random(p["n_rotations"], random_state=cfg["seed"]):
        worst = max(worst, abs(c6_angular_factor(rot.apply([0.0, 0.0, 1.0])) / base - 1))
    checks.add("rotation_invariance", worst <= p["rotation_tol"], worst, p["rotation_tol"])
    with open(out / "c6.csv", "w") as fh:
        fh.write("route,value\n")
        fh.write(f"resolvent,{res.value:.12g}\nsum_over_states,{res.sum_over_states:.12g}\n")


def run_feshbach_check(cfg, checks, out, ctx):
    import numpy as np

    from .feshbach import FeshbachProblem, build_P, fixed_points, solve_fixed_point
    from .manybody import assemble_full
    from .spectral import low_spectrum

    p = cfg["params"]
    rng = np.random.default_rng(cfg["seed"])
    worst_e, worst_v, missing = 0.0, 0.0, 0
    rows = []
    for k in range(p["n_matrices"]):
        n = int(rng.integers(p["max_rank"] + 1, p["max_dim"] + 1))
        r = int(rng.integers(1, p["max_rank"] + 1))
        X = rng.standard_normal((n, n))
        H = (X + X.T) / 2
        B = np.linalg.qr(rng.standard_normal((n, r)))[0]
        ev = np.linalg.eigvalsh(H)
        fps = fixed_points(FeshbachProblem(H, B))
        if not fps:
            missing += 1
        for lam, psi, res in fps:
            err = float(np.min(np.abs(ev - lam)))
            worst_e = max(worst_e, err)
            worst_v = max(worst_v, res)
            rows.append((k, n, r, lam, err, res))
    np.savetxt(out / "random_fixed_points.csv", np.array(rows), delimiter=",",
               header="matrix,dim,rank,energy,eigen_error,vector_residual", comments="", fmt="%.15g")
    checks.add("fixed_point_energies", worst_e <= p["energy_tol"], worst_e, p["energy_tol"])
    checks.add("reconstruction", worst_v <= p["vector_tol"], worst_v, p["vector_tol"])
    checks.add("every_matrix_has_a_fixed_point", missing == 0, missing)
    spec = _system(cfg)
    H = assemble_full(spec)
    P = build_P(spec)
    fp = solve_fixed_point(FeshbachProblem(H, P, seed=cfg["seed"]), P.e_infinity)
    direct = low_spectrum(H, k=1, seed=cfg["seed"]).ground_energy
    checks.add("direct_vs_feshbach", abs(fp.energy - direct) <= p["cross_check_tol"], abs(fp.energy - direct),
               p["cross_check_tol"], feshbach=fp.energy, direct=direct, iterations=len(fp.trace))


def run_symmetry_check(cfg, checks, out, ctx):
    from .symmetry import algebra_report, write_character_table

    p = cfg["params"]
    rep = algebra_report(p["n_electrons"], p["n_points"], cfg["seed"])
    for key, value in rep.items():
        tol = p["norm_tol"] if key == "norm_formula" else p["tol"]
        checks.add(key, value <= tol, value, tol)
    write_character_table(p["n_electrons"], out / "characters.csv")


def run_ims_check(cfg, checks, out, ctx):
    import numpy as np

    from .localization import build_partition, ims_residual
    from .manybody import assemble_full

    p = cfg["params"]
    grads = []
    rows = []
    for R in p["separations"]:
        spec = _system(cfg, R)
        part = build_partition(spec)
        res = ims_residual(assemble_full(spec), part, seed=cfg["seed"])
        checks.add(f"ims_residual_R{R:g}", res.relative <= p["residual_tol"], res.relative, p["residual_tol"])
        grads.append(res.gradient_sup)
        rows.append((R, res.residual, res.operator_norm, res.gradient_sup, part.gradient_constant))
    slope = float(np.polyfit(np.log(p["separations"]), np.log(grads), 1)[0])
    checks.add("gradient_slope", abs(slope - p["slope"]) <= p["slope_tol"], slope, p["slope_tol"])
    np.savetxt(out / "ims.csv", np.array(rows), delimiter=",",
               header="R,residual,norm,gradient_sup,derivative_constant", comments="", fmt="%.15g")


def run_stability_check(cfg, checks, out, ctx):
    from .feshbach import build_P
    from .localization import gap_constants, stability_bound
    from .manybody import assemble_full

    p = cfg["params"]
    gaps = gap_constants(_system(cfg), cfg["seed"])
    ctx["gamma1"], ctx["gamma2"], ctx["e_infinity"] = gaps.gamma1, gaps.gamma2, gaps.e_infinity
    sigma = _sigma(p["sigma"])
    for R in p["separations"]:
        spec = _system(cfg, R)
        H = assemble_full(spec)
        P = build_P(spec, p["cutoff_fraction"])
        st = stability_bound(H, P, spec=spec, gaps=gaps, seed=cfg["seed"])
        checks.add(f"stability_R{R:g}", st.passed, st.measured, threshold=st.threshold, leakage=st.leakage)
        if sigma is not None:
            Ps = build_P(spec, p["cutoff_fraction"], sigma=sigma)
            ss = stability_bound(H, Ps, spec=spec, gaps=gaps, sigma=sigma, seed=cfg["seed"])
            checks.add(f"stability_sigma_R{R:g}", ss.passed, ss.measured, threshold=ss.threshold)


def run_property_e(cfg, checks, out, ctx):
    import warnings

    from .vdw import load_ion_table, property_E_check

    p = cfg["params"]
    spec = _system(cfg)
    num = property_E_check(spec.grid, potential=spec.potential, max_extra=p["max_extra"], seed=cfg["seed"])
    for c in num.checks:
        checks.add(f"E{c['m']}_above_{c['m'] + 1}E0", c["passed"], c["margin"], mean_repulsion=c["mean_repulsion"])
    gap = property_E_check(spec)
    checks.add("ionic_gap_positive", gap.passed, gap.checks[0]["gamma2"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table = property_E_check(load_ion_table(ctx.get("ion_table")))
    worst = min(c["margin"] for c in table.checks)
    checks.add("table_pairs", table.passed, worst, n_pairs=len(table.checks), skipped=table.skipped)
    ctx["notices"] = [str(w.message) for w in caught]
    with open(out / "table_pairs.csv", "w") as fh:
        fh.write("element_a,element_b,margin_kcal,passed\n")
        for c in table.checks:
            fh.write(f"{c['pair'][0]},{c['pair'][1]},{c['margin']:.6g},{int(c['passed'])}\n")


def run_necessity(cfg, checks, out, ctx):
    import numpy as np

    from .vdw import necessity_experiment, rig_degenerate_ion

    p = cfg["params"]
    grid = _system(cfg).grid
    rig = rig_degenerate_ion(grid, ee_softening=p["ee_softening"])
    ctx["tuned_softening"], ctx["rig_gap"] = rig.tuned_softening, rig.gap
    res = necessity_experiment(rig.spec, p["separations"])
    res.report.to_csv(out / "necessity.csv")
    checks.add("exponent", abs(res.fit.exponent - p["exponent"]) <= p["exponent_tol"], res.fit.exponent,
               p["exponent_tol"])
    R = np.asarray(p["separations"])
    k = int(np.argmin(np.abs(R - p["tail_R"])))
    rel = res.ionic_diagonal[k] / res.coulomb_tail[k] - 1
    checks.add("coulomb_tail", abs(rel) <= p["tail_tol"], rel, p["tail_tol"], R=float(R[k]),
               diagonal=res.ionic_diagonal[k], tail=res.coulomb_tail[k])


def run_bo_correction(cfg, checks, out, ctx):
    from .manybody import assemble_full
    from .spectral import low_spectrum
    from .vdw import bo_correction, fragment_energy

    p = cfg["params"]
    spec = _system(cfg)
    sigma = _sigma(p["sigma"])
    res = bo_correction(spec, p["masses"], p["step"], cfg["seed"], sigma=sigma)
    heavy = bo_correction(spec, [m * 1e3 for m in p["masses"]], p["step"], cfg["seed"], sigma=sigma)
    # the same displacement derivative for each atom alone: the separation-independent part
    atoms = 0.0
    for j, m in enumerate(p["masses"]):
        single = dataclasses.replace(spec, nuclei=(spec.nuclei[j],), n_electrons=spec.nuclei[j].charge)
        atoms += bo_correction(single, [m], p["step"], cfg["seed"]).correction
    W = low_spectrum(assemble_full(spec), k=1, seed=cfg["seed"]).ground_energy - fragment_energy(spec)
    checks.add("nonnegative", res.correction >= 0, res.correction)
    checks.add("mass_scaling", abs(heavy.correction / res.correction - 1e-3) <= 1e-9,
               heavy.correction / res.correction, 1e-9)
    ratio = abs(res.correction - atoms) / abs(W)
    checks.add("interaction_part_small", ratio <= p["ratio_tol"], ratio, p["ratio_tol"],
               correction=res.correction, isolated_atoms=atoms, interaction_energy=W,
               total_ratio=res.correction / abs(W))


RUNNERS = {
    "sweep": run_sweep, "c6": run_c6, "feshbach_check": run_feshbach_check,
    "symmetry_check": run_symmetry_check, "ims_check": run_ims_check,
    "stability_check": run_stability_check, "property_e": run_property_e,
    "necessity": run_necessity, "bo_correction": run_bo_correction,
}


def run(cfg: dict, out_dir=None, strict: bool = False, ion_table=None) -> dict:
    """Run a validated config; writes report.json plus CSVs and returns the report."""
    out = Path(out_dir or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    checks = Checks(strict)
    ctx = {"ion_table": ion_table}
    start = time.perf_counter()
    checks.guard(cfg["scenario"], lambda: RUNNERS[cfg["scenario"]](cfg, checks, out, ctx))
    elapsed = time.perf_counter() - start
    ctx.pop("ion_table", None)
    canon = json.dumps(cfg, sort_keys=True)
    report = {
        "scenario": cfg["scenario"],
        "config": cfg,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "code_version": __version__,
        "checks": checks.items,
        "diagnostics": {k: _plain(v) for k, v in ctx.items()},
        "passed": bool(checks.items) and all(c["passed"] for c in checks.items),
        "seconds": elapsed,
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    return report


def _set_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vdwlab", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP threads")
    sub = parser.add_subparsers(dest="command", required=True)
    ls = sub.add_parser("list", help="list scenarios")
    ls.add_argument("--configs", action="store_true", help="also print default configs as YAML")
    rn = sub.add_parser("run", help="run a scenario config (YAML)")
    rn.add_argument("config", help="path to a YAML config, or a scenario name for its defaults")
    rn.add_argument("--strict", action="store_true", help="abort on the first exception")
    rn.add_argument("--out", default=None, help="output directory")
    rn.add_argument("--seed", type=int, default=None)
    rn.add_argument("--ion-table", default=None, help="CSV with ionization energies and affinities")
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be positive")
        _set_threads(args.threads)

    if args.command == "list":
        for entry in list_scenarios():
            print(f"{entry['name']:<16} {entry['description']}")
            if args.configs:
                print(yaml.safe_dump(entry["config"], sort_keys=False))
        return 0

    try:
        if args.config in SCENARIOS and not Path(args.config).exists():
            cfg = default_config(args.config)
        else:
            cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    report = run(cfg, args.out, args.strict, args.ion_table)
    for c in report["checks"]:
        tag = "PASS" if c["passed"] else "FAIL"
        print(f"{tag} {report['scenario']}.{c['name']}: measured={c['measured']} tolerance={c['tolerance']}")
    print(f"{'PASS' if report['passed'] else 'FAIL'} {report['scenario']} ({report['seconds']:.1f} s)")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
