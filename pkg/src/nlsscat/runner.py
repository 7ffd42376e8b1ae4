"""Experiment configs, pipelines and the ``nlsscat`` command line.

A config is a JSON object. Every default is filled in by ``validate_config``
and echoed into the run manifest. See ``DEFAULTS`` for the schema.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import entropy as en
from . import nls
from . import oscillation as osc
from . import scattering as sc
from .errors import NlsScatError
from .potentials import _ALLOWED, FAMILIES, apply_symmetry, make_potential, save_potential_csv

log = logging.getLogger(__name__)

KINDS = ("scattering", "entropy", "equivalence", "evolution", "symmetry-suite")
OUTPUT_ENV = "NLSSCAT_OUTPUT_DIR"

DEFAULTS = {
    "grid": {"dx": 0.01, "xi0": -20.0, "n": 4001},
    "lambda_grid": {"lmax": 40.0, "step": 0.02},
    "s_list": [-1.0, -0.5, 0.0],
    "time": {"t_final": 1.0, "dt": 5e-4, "log_times": [0.0, 0.25, 0.5, 1.0], "snapshot_times": []},
    "tolerances": {"unitarity": 1e-6, "route_agreement": 0.01},
    "kappa": [1.0, 1.0],
    "seed": 0,
    "output_dir": "nlsscat-out",
    "sweep": None,
    "symmetries": [
        ["translate", 3.0], ["conjugate", None], ["rotate", [0.0, 1.0]], ["modulate", 2.0], ["dilate", 2.0],
    ],
}
TOP_KEYS = {"kind", "potentials"} | set(DEFAULTS)


class ConfigError(NlsScatError, ValueError):
    """Config validation failed; ``errors`` lists every violation."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class StageError(NlsScatError, RuntimeError):
    def __init__(self, stage, error):
        self.stage = stage
        self.error = error
        super().__init__(f"stage {stage!r} failed: {type(error).__name__}: {error}")


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict

    @property
    def kind(self) -> str:
        return self.data["kind"]

    def normalized_text(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.normalized_text().encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = copy.deepcopy(self.data)
        d.update({k: v for k, v in kw.items() if v is not None})
        return validate_config(json.dumps(d))


@dataclass
class RunManifest:
    config_hash: str
    version: str
    wall_clock: float
    diagnostics: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    resolved_config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


# ---------------------------------------------------------------- validation


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _merge(defaults, given):
    if isinstance(defaults, dict) and isinstance(given, dict):
        out = dict(defaults)
        out.update(given)
        return out
    return copy.deepcopy(defaults) if given is None else given


def validate_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON config, filling defaults.

    Raises ConfigError listing every violation found.
    """
    if not text.strip():
        raise ConfigError(["missing experiment kind (empty config)"])
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    errors = []
    for key in sorted(set(raw) - TOP_KEYS):
        errors.append(f"unknown key {key!r}")
    kind = raw.get("kind")
    if kind is None:
        errors.append("missing experiment kind")
    elif kind not in KINDS:
        errors.append(f"kind: {kind!r} is not one of {list(KINDS)}")
    cfg = {"kind": kind}
    for key, default in DEFAULTS.items():
        cfg[key] = _merge(default, raw.get(key))

    grid = cfg["grid"]
    if not isinstance(grid, dict):
        errors.append("grid: must be an object with dx, xi0, n")
    else:
        for k in sorted(set(grid) - {"dx", "xi0", "n"}):
            errors.append(f"grid.{k}: unknown key")
        if not (_num(grid.get("dx")) and grid["dx"] > 0):
            errors.append("grid.dx: must be a positive number")
        if not _num(grid.get("xi0")):
            errors.append("grid.xi0: must be a number")
        if not (isinstance(grid.get("n"), int) and grid["n"] >= 2):
            errors.append("grid.n: must be an integer >= 2")
        elif _num(grid.get("dx")) and grid["dx"] > 0 and _num(grid.get("xi0")):
            j = -grid["xi0"] / grid["dx"]
            if abs(j - round(j)) > 1e-9 or not 0 <= round(j) < grid["n"]:
                errors.append("grid: the origin must be a grid node (xi0/dx integer, 0 inside the grid)")
            m = 1 / grid["dx"]
            if kind in ("entropy", "equivalence") and abs(m - round(m)) > 1e-9:
                errors.append("grid.dx: 1/dx must be an integer for window quadrature")

    pots = raw.get("potentials")
    if pots is None:
        errors.append("potentials: at least one potential is required")
        pots = []
    elif not isinstance(pots, list) or not pots:
        errors.append("potentials: must be a non-empty list")
        pots = []
    resolved = []
    names = set()
    for i, p in enumerate(pots):
        where = f"potentials[{i}]"
        if not isinstance(p, dict):
            errors.append(f"{where}: must be an object")
            continue
        fam = p.get("family")
        if fam not in FAMILIES:
            errors.append(f"{where}.family: {fam!r} is not one of {list(FAMILIES)}")
            continue
        params = p.get("params", {})
        if not isinstance(params, dict):
            errors.append(f"{where}.params: must be an object")
            continue
        for k in sorted(set(params) - _ALLOWED[fam]):
            errors.append(f"{where}.params.{k}: not a parameter of {fam!r}")
        for k, v in sorted(params.items()):
            ok = _num(v) or (isinstance(v, list) and len(v) == 2 and all(_num(x) for x in v))
            if not ok:
                errors.append(f"{where}.params.{k}: must be a number or a [re, im] pair")
            elif k in ("width", "cutoff") and not (_num(v) and v > 0):
                errors.append(f"{where}.params.{k}: must be positive")
        name = str(p.get("name", f"{fam}{i}"))
        if name in names:
            errors.append(f"{where}.name: duplicate name {name!r}")
        names.add(name)
        resolved.append({"family": fam, "params": dict(params), "name": name})
    cfg["potentials"] = resolved

    lg = cfg["lambda_grid"]
    if not (isinstance(lg, dict) and _num(lg.get("lmax")) and lg["lmax"] > 0
            and _num(lg.get("step")) and lg["step"] > 0 and set(lg) <= {"lmax", "step"}):
        errors.append("lambda_grid: needs positive lmax and step (and nothing else)")

    s_list = cfg["s_list"]
    if not isinstance(s_list, list):
        errors.append("s_list: must be a list of numbers")
    else:
        for j, s in enumerate(s_list):
            if not _num(s) or not -1 <= s < 0.5:
                errors.append(f"s_list[{j}]: {s!r} outside the supported range [-1, 1/2)")

    tm = cfg["time"]
    if not isinstance(tm, dict):
        errors.append("time: must be an object")
    else:
        for k in sorted(set(tm) - {"t_final", "dt", "log_times", "snapshot_times"}):
            errors.append(f"time.{k}: unknown key")
        if not (_num(tm.get("dt")) and tm["dt"] > 0):
            errors.append("time.dt: must be positive")
        if not _num(tm.get("t_final")):
            errors.append("time.t_final: must be a number")
        for key in ("log_times", "snapshot_times"):
            v = tm.get(key)
            if not (isinstance(v, list) and all(_num(t) for t in v)):
                errors.append(f"time.{key}: must be a list of numbers")
        if kind == "evolution" and not errors:
            try:
                nls._step_schedule(tm["t_final"], tm["dt"], list(tm["log_times"]) + list(tm["snapshot_times"]))
            except NlsScatError as exc:
                errors.append(f"time: {exc}")
            if 0.0 not in [float(t) for t in tm["log_times"]]:
                errors.append("time.log_times: must contain 0")

    tol = cfg["tolerances"]
    if not isinstance(tol, dict):
        errors.append("tolerances: must be an object")
    else:
        for k, v in sorted(tol.items()):
            if k not in DEFAULTS["tolerances"]:
                errors.append(f"tolerances.{k}: unknown tolerance")
            elif not (_num(v) and v > 0):
                errors.append(f"tolerances.{k}: must be positive")

    kap = cfg["kappa"]
    if not (isinstance(kap, list) and len(kap) == 2 and all(_num(k) and k > 0 for k in kap)):
        errors.append("kappa: must be two positive numbers [kappa1, kappa2]")

    seed = cfg["seed"]
    if not (isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2**64):
        errors.append("seed: must be an integer in [0, 2^64)")
    if not isinstance(cfg["output_dir"], str) or not cfg["output_dir"]:
        errors.append("output_dir: must be a non-empty string")

    sweep = cfg["sweep"]
    if sweep is not None:
        if not (isinstance(sweep, dict) and isinstance(sweep.get("param"), str)
                and isinstance(sweep.get("values"), list) and sweep["values"]
                and all(_num(v) for v in sweep["values"]) and set(sweep) <= {"param", "values"}):
            errors.append("sweep: needs 'param' (string) and a non-empty numeric 'values' list")
        else:
            for p in resolved:
                if sweep["param"] not in _ALLOWED[p["family"]]:
                    errors.append(f"sweep.param: {sweep['param']!r} is not a parameter of {p['family']!r}")

    syms = cfg["symmetries"]
    if kind == "symmetry-suite":
        if not isinstance(syms, list) or not syms:
            errors.append("symmetries: must be a non-empty list of [op, value] pairs")
        else:
            for j, item in enumerate(syms):
                if not (isinstance(item, list) and len(item) == 2):
                    errors.append(f"symmetries[{j}]: must be an [op, value] pair")
                    continue
                op, val = item
                if op not in ("dilate", "conjugate", "translate", "modulate", "rotate"):
                    errors.append(f"symmetries[{j}]: unknown op {op!r}")
                elif op == "rotate":
                    if not (isinstance(val, list) and len(val) == 2 and all(_num(x) for x in val)
                            and abs(math.hypot(*val) - 1) < 1e-12):
                        errors.append(f"symmetries[{j}]: rotate needs a unimodular [re, im] value")
                elif op == "dilate" and not (_num(val) and val > 0):
                    errors.append(f"symmetries[{j}]: dilate needs a positive factor")
                elif op in ("translate", "modulate") and not _num(val):
                    errors.append(f"symmetries[{j}]: {op} needs a number")

    if not errors:
        # family parameters against the configured grid (cheap, no scattering work)
        for name, fam, params, _ in _members(cfg):
            try:
                make_potential(fam, params, _grid(cfg))
            except NlsScatError as exc:
                errors.append(f"potential {name!r}: {exc}")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(cfg)


# ---------------------------------------------------------------- pipelines


def _grid(cfg):
    g = cfg["grid"]
    return g["dx"], g["xi0"], g["n"]


def _lambda(cfg):
    lg = cfg["lambda_grid"]
    return sc.default_lambda_grid(lg["lmax"], lg["step"])


def _members(cfg):
    """(name, family, params) for every potential and sweep value, in config order."""
    out = []
    for i, p in enumerate(cfg["potentials"]):
        params = dict(p["params"])
        if p["family"] == "random_bandlimited" and "seed" not in params:
            params["seed"] = (cfg["seed"] + i) % 2**64
        if cfg["sweep"] is None:
            out.append((p["name"], p["family"], params, None))
        else:
            key = cfg["sweep"]["param"]
            for v in cfg["sweep"]["values"]:
                member = dict(params)
                member[key] = v
                out.append((f"{p['name']}_{key}={v!r}", p["family"], member, v))
    return out


def _fmt(v):
    return f"{v:.17g}"


class _Writer:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.outputs = []

    def path(self, name):
        self.outputs.append(name)
        return self.out_dir / name

    def text(self, name, text):
        with open(self.path(name), "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")

    def rows(self, name, header, rows, comment=None):
        with open(self.path(name), "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except NlsScatError as exc:
        raise StageError(name, exc) from exc


def _run_scattering(cfg, w, threads, diag):
    lam = _lambda(cfg)

    def work(m):
        name, fam, params, _ = m
        q = make_potential(fam, params, _grid(cfg))
        return name, sc.transition_coefficients(q, lam)

    for name, tab in _stage("scattering", _map, work, _members(cfg), threads):
        if tab.unitarity_defect > cfg["tolerances"]["unitarity"]:
            raise StageError("scattering", NlsScatError(f"{name}: unitarity defect {tab.unitarity_defect:.2e}"))
        tab.to_csv(w.path(f"scattering_{name}.csv"))
        diag[name] = {"unitarity_defect": tab.unitarity_defect, "a_at_i": tab.a_at_i}


def _run_entropy(cfg, w, threads, diag):
    lam = _lambda(cfg)

    def work(m):
        name, fam, params, _ = m
        q = make_potential(fam, params, _grid(cfg))
        tab = sc.transition_coefficients(q, lam)
        return name, en.entropy_report(q, table=tab)

    for name, rep in _stage("entropy", _map, work, _members(cfg), threads):
        rel = rep.diagnostics.get("route_rel_diff", 0.0)
        if rel > cfg["tolerances"]["route_agreement"]:
            raise StageError("entropy", NlsScatError(f"{name}: a(i) routes differ by {rel:.2e}"))
        w.text(f"entropy_{name}.json", rep.to_json())
        diag[name] = {"K_full": rep.K_full, "K_tilde": rep.K_tilde, "route_rel_diff": rel}


def _run_equivalence(cfg, w, threads, diag):
    def work(m):
        name, fam, params, v = m
        return name, v, osc.equivalence_report(make_potential(fam, params, _grid(cfg)))

    results = _stage("equivalence", _map, work, _members(cfg), threads)
    rows = []
    for name, v, rep in results:
        w.text(f"equivalence_{name}.json", rep.to_json())
        rows.append([name, float("nan") if v is None else float(v), rep.l2_norm, rep.h_fourier, rep.h_smoothing,
                     rep.h_oscillation, rep.k_tilde, rep.ratio_ktilde, rep.ratio_oscillation])
    w.rows("equivalence_summary.csv",
           ["name", "sweep_value", "R", "h_fourier", "h_smoothing", "h_oscillation", "k_tilde",
            "ratio_ktilde", "ratio_oscillation"], rows)
    good = [(r[2], r[7]) for r in rows if r[2] > 0 and r[7] > 0 and math.isfinite(r[7])]
    if len(good) >= 2:
        c1, c2, rho0 = osc.fit_envelope(*zip(*good))
        diag["envelope"] = {"C1": c1, "C2": c2, "rho0": rho0}
    osc_ratios = [r[8] for r in rows if math.isfinite(r[8])]
    if osc_ratios:
        diag["oscillation_ratio_window"] = [min(osc_ratios), max(osc_ratios)]


def _run_evolution(cfg, w, threads, diag):
    tm = cfg["time"]
    lam = _lambda(cfg)
    times = sorted(set(float(t) for t in tm["log_times"]) | set(float(t) for t in tm["snapshot_times"]))

    def work(m):
        name, fam, params, _ = m
        q0 = nls.periodic_box(make_potential(fam, params, _grid(cfg)))
        snaps = {}
        ev = nls.conservation_report(q0, times, tm["dt"], cfg["s_list"], lam, tuple(cfg["kappa"]), True, snaps)
        return name, ev, snaps

    for name, ev, snaps in _stage("evolution", _map, work, _members(cfg), threads):
        ev.to_csv(w.path(f"evolution_{name}.csv"))
        w.text(f"evolution_{name}.json", ev.to_json())
        for t in tm["snapshot_times"]:
            save_potential_csv(snaps[float(t)], w.path(f"snapshot_{name}_t={float(t)!r}.csv"))
        diag[name] = {"l2_drift": ev.l2_drift(), "log_a_drift": ev.log_a_drift(),
                      "r_mismatch": float(np.nanmax(ev.r_mismatch)), "leaked_mass": ev.leaked_mass,
                      "discarded_mass": float(np.max(ev.discarded_mass))}


def _transform_r(op, value, q, lam):
    """Reference reflection coefficient predicted by the symmetry table."""
    if op == "translate":
        return sc.transition_coefficients(q, lam).r * np.exp(-1j * lam * value)
    if op == "conjugate":
        return np.conj(sc.transition_coefficients(q, -lam).r)
    if op == "rotate":
        return value * sc.transition_coefficients(q, lam).r
    if op == "modulate":
        return sc.transition_coefficients(q, lam + value).r
    return sc.transition_coefficients(q, lam / value).r


def symmetry_errors(q, lam, symmetries):
    """``(op, value, sup |r(op q) - predicted|)`` for each symmetry."""
    out = []
    for op, value in symmetries:
        if op == "rotate":
            value = complex(*value)
        direct = sc.transition_coefficients(apply_symmetry(q, op, value), lam).r
        out.append((op, value, float(np.max(np.abs(direct - _transform_r(op, value, q, lam))))))
    return out


def _run_symmetry(cfg, w, threads, diag):
    lam = _lambda(cfg)

    def work(m):
        name, fam, params, _ = m
        q = make_potential(fam, params, _grid(cfg))
        return name, symmetry_errors(q, lam, cfg["symmetries"])

    for name, errs in _stage("symmetry", _map, work, _members(cfg), threads):
        rows = [[op, "" if v is None else repr(v), e] for op, v, e in errs]
        w.rows(f"symmetry_{name}.csv", ["op", "value", "max_abs_error"], rows)
        diag[name] = {op: e for op, _, e in errs}


PIPELINES = {
    "scattering": _run_scattering,
    "entropy": _run_entropy,
    "equivalence": _run_equivalence,
    "evolution": _run_evolution,
    "symmetry-suite": _run_symmetry,
}


def run_experiment(config: ExperimentConfig, out_dir=None, threads: int | None = None) -> RunManifest:
    """Run the configured pipeline and write its reports plus ``manifest.json``.

    Output directory precedence: ``out_dir`` argument, then the
    ``NLSSCAT_OUTPUT_DIR`` environment variable, then the config.
    """
    target = Path(out_dir or os.environ.get(OUTPUT_ENV) or config.data["output_dir"])
    target.mkdir(parents=True, exist_ok=True)
    writer = _Writer(target)
    diag = {}
    start = time.perf_counter()
    PIPELINES[config.kind](config.data, writer, threads, diag)
    manifest = RunManifest(config.digest, __version__, time.perf_counter() - start, diag,
                           list(writer.outputs), config.data)
    with open(target / "manifest.json", "w") as fh:
        fh.write(manifest.to_json() + "\n")
    return manifest


# ---------------------------------------------------------------- CLI


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nlsscat", description="Scattering and NLS diagnostics experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="validate and run a config")
    run.add_argument("config")
    run.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    run.add_argument("--threads", type=int, default=None, help="worker threads for independent legs")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    val = sub.add_parser("validate", help="validate a config and print the resolved form")
    val.add_argument("config")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    try:
        text = Path(args.config).read_text()
        config = validate_config(text)
        if args.command == "run" and args.seed is not None:
            config = config.with_overrides(seed=args.seed)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(json.dumps(config.data, indent=2, sort_keys=True))
        return 0
    try:
        manifest = run_experiment(config, args.out, args.threads)
    except NlsScatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    for name in manifest.outputs:
        print(name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
