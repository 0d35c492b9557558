"""Command-line front end: ``pln <task> --config file.json``.

Exit status is 0 when every checked condition holds, 1 when some condition
fails (a result), and 2 when the run itself could not be carried out.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import continuation as cont
from . import frequency as fq
from .dynsys import STRUCTURE_TOL, check_commutation, check_independence
from .errors import ConfigError, PLNError
from .models import ModelBundle, classes_from_spec, load_model, parse_number
from .oscillators import floquet_and_condition_n, solve_winding, solve_winding_shifted
from .pnmap import (TOL_N, basepoint_conjugacy_check, build_metric_section, build_section,
                    class_dependence_report, closure_residual,
                    linearize_pn_map, match_spectra, metric_variant_discrepancy,
                    unit_multiplicity)

log = logging.getLogger("pln")

FORMAT_VERSION = 1
TASKS = ("check-hypotheses", "condition-n", "spectrum", "continue", "oscillator-criterion",
         "appendix-variant")
EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


@dataclass
class RunConfig:
    """Everything one run needs; built from the JSON config plus CLI overrides."""

    task: str
    model: object = None
    classes: list | None = None
    tol_n: float = TOL_N
    grid: int | None = None
    out_dir: Path = Path("pln-out")
    structure_tol: float = STRUCTURE_TOL
    independence_tol: float = 1e-3
    base_points: int = 8
    continuation: dict = field(default_factory=dict)
    frequency: dict | None = None
    batch: Path | None = None
    raw: dict = field(default_factory=dict)

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if not self.tol_n > 0 or not self.structure_tol > 0:
            raise ConfigError("tolerances must be positive")
        if self.grid is not None and self.grid < 8:
            raise ConfigError("grid must have at least 8 points per angle")
        if self.batch is not None and not Path(self.batch).is_file():
            raise ConfigError(f"batch file not found: {self.batch}")
        if self.task != "oscillator-criterion" and self.model is None:
            raise ConfigError("this task needs a model")
        return self


def parse_classes(text: str):
    """``"1,0;0,1"`` -> ``[[1, 0], [0, 1]]``."""
    try:
        return [[int(v) for v in part.split(",")] for part in text.split(";") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse classes {text!r}") from exc


def load_config(path, task: str, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    here = path.parent
    model = raw.get("model")
    if isinstance(model, str) and model.endswith(".json"):
        model = str((here / model).resolve())
    elif isinstance(model, str):
        # builtin id; the whole config doubles as the model description
        model = {k: v for k, v in raw.items() if k not in ("task", "out", "continuation",
                                                           "frequency", "batch")}
    batch = raw.get("batch")
    cfg = RunConfig(
        task=task,
        model=model,
        classes=raw.get("classes"),
        tol_n=float(raw.get("tol_n", TOL_N)),
        grid=raw.get("grid"),
        out_dir=Path(raw.get("out", "pln-out")),
        structure_tol=float(raw.get("structure_tol", STRUCTURE_TOL)),
        independence_tol=float(raw.get("independence_tol", 1e-3)),
        base_points=int(raw.get("base_points", 8)),
        continuation=dict(raw.get("continuation", {})),
        frequency=raw.get("frequency"),
        batch=None if batch is None else (here / batch).resolve(),
        raw=raw,
    )
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg = replace(cfg, **{key: val})
    return cfg.validate()


def _bundle(cfg: RunConfig) -> ModelBundle:
    spec = cfg.model
    if isinstance(spec, dict) and cfg.classes is not None:
        spec = dict(spec, classes=cfg.classes)
    bundle = load_model(spec, grid=cfg.grid)
    if cfg.classes is not None and isinstance(cfg.model, str):
        bundle.classes = classes_from_spec(bundle.torus, bundle.system, cfg.classes)
    if bundle.kind == "hamiltonian" and not bundle.classes and cfg.task in (
            "condition-n", "spectrum", "continue", "appendix-variant"):
        raise ConfigError("no homotopy class given (use 'classes' or --classes)")
    return bundle


def _c(z):
    return [float(np.real(z)), float(np.imag(z))]


def _f(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _lin_report(lin):
    return {"method": lin.method, "spectrum": [_c(z) for z in lin.spectrum],
            "moduli": [_f(abs(z)) for z in lin.spectrum],
            "margin": _f(lin.min_distance_to_one), "verdict": lin.verdict, "tol_n": lin.tol_N}


# ---------------------------------------------------------------------------
# tasks

def _task_check_hypotheses(cfg, bundle):
    pts = bundle.torus.flat_points()
    comm = check_commutation(bundle.system, pts)
    out = {"commutation": comm, "commutation_ok": comm < cfg.structure_tol}
    verdict = out["commutation_ok"]
    if bundle.kind == "hamiltonian":
        ind = check_independence(bundle.system, pts)
        lvl = cont.level_residual(bundle.system, bundle.torus, bundle.torus.beta0)
        out.update(independence=ind, independence_ok=ind > cfg.independence_tol,
                   level_residual=lvl, level_ok=lvl < 1e-9)
        verdict = verdict and out["independence_ok"] and out["level_ok"]
    closures = {}
    for c in bundle.classes:
        res = closure_residual(bundle.system, bundle.torus, c.coefficients,
                               bundle.torus.sample(16))
        closures[c.label()] = {"residual": res, "ok": res < 1e-8}
        verdict = verdict and res < 1e-8
    out["closure"] = closures
    return out, verdict


def _task_condition_n(cfg, bundle):
    rep = class_dependence_report(bundle.system, bundle.torus, bundle.classes, tol_N=cfg.tol_n)
    per = {e.cls.label(): dict(_lin_report(e.linearization),
                               coefficients=[float(v) for v in e.cls.coefficients])
           for e in rep.entries}
    out = {"classes": per, "any_pass": rep.any_pass,
           "all_pass": all(e.verdict for e in rep.entries)}
    if bundle.oscillator is not None:
        out["closed_form"] = _closed_form(bundle)
    return out, out["all_pass"]


def _closed_form(bundle):
    model = bundle.oscillator
    res = {}
    for c in bundle.classes:
        try:
            if model.G is not None and model.epsilon:
                alpha, beta = solve_winding_shifted(model, c.winding, model.actions)
                form = "shifted"
            else:
                alpha, beta = solve_winding(model, c.winding)
                form = "unperturbed"
            fl = floquet_and_condition_n(model, beta, form)
            res[c.label()] = {"alpha": [str(a) for a in alpha], "beta": str(beta),
                              "rotation_numbers": [str(x) for x in fl.rotation_numbers],
                              "verdict": fl.verdict, "form": form}
        except PLNError as exc:
            res[c.label()] = {"error": str(exc), "verdict": False}
    return res


def _task_spectrum(cfg, bundle):
    out = {}
    verdict = True
    base = (0,) * bundle.torus.k
    sec = build_section(bundle.system, bundle.torus, base)
    bases = bundle.torus.sample(cfg.base_points)
    for c in bundle.classes:
        var = linearize_pn_map(bundle.system, sec, c, "variational", cfg.tol_n)
        fd = linearize_pn_map(bundle.system, sec, c, "finite-difference", cfg.tol_n)
        gap = match_spectra(var.spectrum, fd.spectrum)
        conj = basepoint_conjugacy_check(bundle.system, bundle.torus, c, bases, tol_N=cfg.tol_n)
        mult = unit_multiplicity(var.full_block)
        entry = {"variational": _lin_report(var), "finite_difference": _lin_report(fd),
                 "method_gap": gap, "methods_agree": gap < 1e-6,
                 "conjugacy_discrepancy": conj, "conjugacy_ok": conj < 1e-7,
                 "unit_multiplicity": mult, "block_ok": mult >= 2 * bundle.torus.k,
                 "base_points": [list(b) for b in bases]}
        out[c.label()] = entry
        verdict = verdict and var.verdict and entry["methods_agree"] and entry["conjugacy_ok"] \
            and entry["block_ok"]
    return {"classes": out}, verdict


def _step_policy(spec):
    allowed = {"initial", "grow", "shrink", "floor", "max_step", "easy_iterations", "easy_count"}
    bad = set(spec) - allowed
    if bad:
        raise ConfigError(f"unknown step-policy keys: {sorted(bad)}")
    return cont.StepPolicy(**spec)


def _task_continue(cfg, bundle):
    cspec = cfg.continuation
    direction = cspec.get("direction", None)
    direction = bundle.direction if direction is None else np.asarray(direction, dtype=float)
    if direction is None:
        raise ConfigError("continuation needs a direction")
    max_range = float(cspec.get("max_range", 0.1))
    policy = _step_policy(cspec.get("step", {}))
    fam = cont.continue_family(bundle.system, bundle.torus, bundle.classes, direction, max_range,
                               policy, tol_N=cfg.tol_n)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    fam.write_json(cfg.out_dir / "family.json")
    fam.write_csv(cfg.out_dir / "family.csv")
    emit_plot_data(fam, cfg.out_dir)
    checks = []
    for a, t in zip(fam.alphas, fam.tori):
        lvl = cont.level_residual(bundle.system, t, bundle.torus.beta0 + a)
        iso = cont.verify_isotropy(bundle.system, t)
        checks.append({"alpha": [float(v) for v in a], "level_residual": lvl, "isotropy": iso})
    reached = fam.stop_reason == "range exhausted"
    out = {"family": fam.to_report(), "checks": checks, "reached_max_range": reached,
           "files": ["family.json", "family.csv", "margins.csv", "eigenvalues.csv",
                     "sections.csv"]}
    return out, reached


def _frequency_checks(spec):
    try:
        s, n = int(spec["s"]), int(spec["n"])
        lam = [[parse_number(v) for v in row] for row in spec["lambda"]]
        windings = spec["windings"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"frequency block needs s, n, lambda and windings: {exc}") from exc
    freq = fq.FrequencyMatrix(s, n, lam)
    return [(freq, w) for w in windings]


def _task_oscillator_criterion(cfg, bundle):
    rows = []
    if cfg.frequency is not None:
        rows += _frequency_checks(cfg.frequency)
    if cfg.batch is not None:
        with open(cfg.batch, newline="") as fh:
            rows += fq.read_batch(fh)
    out = {}
    verdict = True
    if rows:
        results = fq.run_batch(rows)
        out["criterion"] = results
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        with open(cfg.out_dir / "criterion.csv", "w", newline="") as fh:
            fq.write_batch_results(results, fh)
        for r in results:
            if r["verdict"] is None:
                raise ConfigError(f"singular Omega in row with winding {r['winding']}")
            verdict = verdict and r["verdict"] and r["agree"]
    if bundle is not None and bundle.oscillator is not None:
        cf = _closed_form(bundle)
        out["closed_form"] = cf
        verdict = verdict and all(v["verdict"] for v in cf.values())
    if not out:
        raise ConfigError("oscillator-criterion needs 'frequency', 'batch' or an oscillator model")
    return out, verdict


def _task_appendix_variant(cfg, bundle):
    out = {}
    verdict = True
    base = (0,) * bundle.torus.k
    for c in bundle.classes:
        sec = build_metric_section(bundle.system, bundle.torus, base)
        lin = linearize_pn_map(bundle.system, sec, c, "variational", cfg.tol_n)
        fd = linearize_pn_map(bundle.system, sec, c, "finite-difference", cfg.tol_n)
        entry = {"metric_variational": _lin_report(lin), "metric_finite_difference": _lin_report(fd),
                 "method_gap": match_spectra(lin.spectrum, fd.spectrum)}
        entry["methods_agree"] = entry["method_gap"] < 1e-6
        verdict = verdict and entry["methods_agree"]
        if bundle.kind == "hamiltonian":
            gap = metric_variant_discrepancy(bundle.system, bundle.torus, c)
            entry.update(map_discrepancy=gap, maps_agree=gap < 1e-8)
            verdict = verdict and gap < 1e-8
        out[c.label()] = entry
    return {"classes": out}, verdict


_TASKS = {
    "check-hypotheses": _task_check_hypotheses,
    "condition-n": _task_condition_n,
    "spectrum": _task_spectrum,
    "continue": _task_continue,
    "oscillator-criterion": _task_oscillator_criterion,
    "appendix-variant": _task_appendix_variant,
}


# ---------------------------------------------------------------------------
# output

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _f(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, complex):
        return _c(obj)
    return obj


def write_report(path, report):
    with open(path, "w") as fh:
        json.dump(_clean(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_plot_data(family: cont.ContinuationFamily, path):
    """Write ``margins.csv``, ``eigenvalues.csv`` and ``sections.csv`` into ``path``.

    margins.csv
        level_index, t (distance along the direction), alpha_*, class, margin,
        event. Class switches appear as extra rows with ``event`` set to
        ``class-switch <from> -> <to>`` and the margin of the new class.
    eigenvalues.csv
        level_index, t, eig_index, re, im, modulus, argument.
    sections.csv
        level_index, t, phi_*, s_*, f_*: coordinates of each lifted point in
        the slice frame of the seed point with the same angle index.
    """
    if not family.tori:
        raise ValueError("empty family")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    k_alpha = len(family.beta0)
    ts = [float(np.linalg.norm(a)) for a in family.alphas]
    with open(path / "margins.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level_index", "t"] + [f"alpha_{i}" for i in range(k_alpha)]
                   + ["class", "margin", "event"])
        for i, (a, st) in enumerate(zip(family.alphas, family.status)):
            w.writerow([i, repr(ts[i])] + [repr(float(v)) for v in a]
                       + [st["class"], repr(float(st["condition_n_margin"])), ""])
            for ann in family.annotations:
                if np.allclose(ann["alpha"], a, atol=1e-15, rtol=0) and \
                        ann.get("event") == "class-switch":
                    w.writerow([i, repr(ts[i])] + [repr(float(v)) for v in a]
                               + [ann["to"], repr(float(ann["margin_after"])),
                                  f"class-switch {ann['from']} -> {ann['to']}"])
    with open(path / "eigenvalues.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level_index", "t", "eig_index", "re", "im", "modulus", "argument"])
        for i, lin in enumerate(family.spectra):
            for j, z in enumerate(lin.spectrum):
                w.writerow([i, repr(ts[i]), j, repr(float(z.real)), repr(float(z.imag)),
                            repr(float(abs(z))), repr(float(np.angle(z)))])
    seed = family.tori[0]
    frames = family.seed_frames()
    with open(path / "sections.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        ns = next(iter(frames.values())).n_s
        nf = next(iter(frames.values())).n_f
        w.writerow(["level_index", "t"] + [f"phi_{a}" for a in range(seed.k)]
                   + [f"s_{j}" for j in range(ns)] + [f"f_{j}" for j in range(nf)])
        for i, t in enumerate(family.tori):
            for index in t.indices():
                _, s, f = frames[index].coordinates(t.point(index))
                w.writerow([i, repr(ts[i])] + list(index) + [repr(float(v)) for v in s]
                           + [repr(float(v)) for v in f])


def run(cfg: RunConfig) -> int:
    """Execute ``cfg``; writes ``report.json`` and ``timing.json``; returns the exit status."""
    start = time.perf_counter()
    out_dir = Path(cfg.out_dir)
    report = {"format_version": FORMAT_VERSION, "task": cfg.task,
              "inputs": {"config": cfg.raw, "tol_n": cfg.tol_n, "grid": cfg.grid,
                         "classes": cfg.classes}}
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        bundle = _bundle(cfg) if cfg.model is not None else None
        if bundle is not None:
            report["model"] = {"name": bundle.name, "kind": bundle.kind,
                               "grid_shape": list(bundle.torus.grid_shape),
                               "classes": {c.label(): [float(v) for v in c.coefficients]
                                           for c in bundle.classes}}
        results, verdict = _TASKS[cfg.task](cfg, bundle)
        report["results"] = results
        report["verdict"] = bool(verdict)
        status = EXIT_PASS if verdict else EXIT_FAIL
    except (PLNError, ValueError, OSError, KeyError) as exc:
        report["error"] = f"{type(exc).__name__}: {exc}"
        report["verdict"] = None
        status = EXIT_ERROR
        print(f"pln: error: {exc}", file=sys.stderr)
    report["exit_status"] = status
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report(out_dir / "report.json", report)
        write_report(out_dir / "timing.json",
                     {"format_version": FORMAT_VERSION,
                      "elapsed_seconds": time.perf_counter() - start})
    except OSError as exc:
        print(f"pln: error: cannot write report: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pln", description=__doc__.splitlines()[0])
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (default from config, else pln-out)")
    ap.add_argument("--tol-n", type=float, help="threshold on min |lambda - 1|")
    ap.add_argument("--grid", type=int, help="grid points per torus angle")
    ap.add_argument("--classes", help='winding vectors, e.g. "1,0;0,1"')
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.task, {
            "out_dir": None if args.out is None else Path(args.out),
            "tol_n": args.tol_n,
            "grid": args.grid,
            "classes": None if args.classes is None else parse_classes(args.classes),
        })
    except (ConfigError, ValueError) as exc:
        print(f"pln: error: {exc}", file=sys.stderr)
        out = Path(args.out) if args.out else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            write_report(out / "report.json", {"format_version": FORMAT_VERSION,
                                               "task": args.task, "error": str(exc),
                                               "verdict": None, "exit_status": EXIT_ERROR})
        return EXIT_ERROR
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
