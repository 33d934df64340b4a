"""Command line front end: ``foldylax --config run.json --verb scatter --out results``.

A run is described by one JSON document::

    {
      "cluster": {"grid": {"spacing": 0.5, "counts": [3, 3, 3], "radius_a": 0.05}},
      "material": {"kind": "penetrable", "eps_r": 3.0},
      "wave": {"k": 1.0, "direction": [0, 0, 1], "polarization": [1, 0, 0]},
      "variant": "aniso_symmetric",
      "grid": {"n_theta": 16, "n_phi": 32},
      "study": {"parameter": "a", "values": [0.04, 0.02, 0.01], "c_r": 10}
    }

``cluster`` is inline (``centers``, ``radius_a``, ``shapes``), a ``file``
reference, a ``grid`` or a ``random`` block.  Reports are pretty JSON with
sorted keys; wall-clock timings live under the ``timing`` key only.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .farfield import (
    foldy_far_field,
    pattern_distance,
    sphere_grid,
    volume_far_field,
    write_pattern_csv,
)
from .foldy import PEC_FORMS, VARIANTS, DilutionWarning, FoldyProblem, assemble, solve, solution_norm_check
from .geometry import Ball, Cluster, build_grid_cluster, metrics, random_cluster
from .kernels import PlaneWave
from .oracle import ls_solve, voxel_tensor_set
from .tensors import Material, tensor_set_for_cluster

__all__ = ["ConfigError", "StageError", "RunConfig", "load_config", "run_scatter",
           "run_convergence_study", "run_tensors", "run_check", "main"]

SWEEPS = ("a", "c_r", "h")


class ConfigError(ValueError):
    """Invalid run configuration."""


class StageError(RuntimeError):
    """A module error, tagged with the pipeline stage that raised it."""

    def __init__(self, stage: str, err: Exception):
        super().__init__(f"stage '{stage}' failed: {type(err).__name__}: {err}")
        self.stage = stage


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as err:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, err) from err


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _complex(v) -> complex:
    if isinstance(v, dict):
        return complex(v.get("re", 0.0), v.get("im", 0.0))
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def _cvec(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape == (3, 2):
        return arr[:, 0] + 1j * arr[:, 1]
    return arr.astype(complex)


@dataclass(frozen=True, eq=False)
class RunConfig:
    raw: dict
    base: Path
    seed: int = 0
    variant: str = "aniso_symmetric"
    pec_form: str = "consistent"
    magnetic: str = "consistent"
    n_theta: int = 16
    n_phi: int = 32
    study: dict | None = None
    tensor_opts: dict = field(default_factory=dict)

    def cluster(self) -> Cluster:
        spec = self.raw.get("cluster")
        if spec is None:
            raise ConfigError("config has no 'cluster'")
        if "file" in spec:
            return Cluster.from_json(str(self.base / spec["file"]))
        if "grid" in spec:
            g = spec["grid"]
            return build_grid_cluster(float(g["spacing"]), g["counts"], float(g["radius_a"]),
                                      g.get("origin", (0.0, 0.0, 0.0)))
        if "random" in spec:
            r = spec["random"]
            return random_cluster(int(r["n"]), float(r["radius_a"]), float(r["box"]),
                                  float(r.get("min_gap", 0.0)), seed=self.seed)
        return Cluster.from_dict(spec, self.base)

    def materials(self, n: int):
        if "materials" in self.raw:
            mats = [Material.from_dict(m) for m in self.raw["materials"]]
            if len(mats) != n:
                raise ConfigError(f"{len(mats)} materials for {n} particles")
            return mats
        return Material.from_dict(self.raw.get("material", {"kind": "penetrable", "eps_r": 1.0}))

    def wave(self, polarization_scale: complex = 1.0) -> PlaneWave:
        w = self.raw.get("wave", {})
        return PlaneWave(np.asarray(w.get("direction", [0, 0, 1]), dtype=float),
                         polarization_scale * _cvec(w.get("polarization", [1, 0, 0])),
                         _complex(w.get("k", 1.0)))

    def grid(self):
        return sphere_grid(self.n_theta, self.n_phi)


def _validate_study(study: dict):
    param = study.get("parameter")
    if param not in SWEEPS:
        raise ConfigError(f"study parameter must be one of {SWEEPS}, got {param!r}")
    vals = [float(v) for v in study.get("values", [])]
    if len(vals) < 3:
        raise ConfigError(f"a study needs at least 3 sweep values to fit a slope, got {len(vals)}")
    if any(v <= 0 for v in vals):
        raise ConfigError("sweep values must be positive")
    diffs = np.diff(vals)
    if not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ConfigError("sweep values must be strictly monotone")


def config_from_dict(raw: dict, base: Path | str = ".", seed: int | None = None) -> RunConfig:
    base = Path(base)
    variant = raw.get("variant", "aniso_symmetric")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    pec_form = raw.get("pec_form", "consistent")
    if pec_form not in PEC_FORMS:
        raise ConfigError(f"unknown pec_form {pec_form!r}")
    cl = raw.get("cluster", {})
    if "file" in cl and not (base / cl["file"]).exists():
        raise ConfigError(f"cluster file {cl['file']!r} not found")
    mats = raw.get("materials", [raw.get("material", {})])
    kinds = {m.get("kind", "penetrable") for m in mats}
    if (variant == "pec") != (kinds == {"pec"}):
        raise ConfigError(f"variant {variant!r} is incompatible with material kinds {sorted(kinds)}")
    study = raw.get("study")
    if study is not None:
        _validate_study(study)
    g = raw.get("grid", {})
    s = int(raw.get("seed", 0) if seed is None else seed)
    if not 0 <= s < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return RunConfig(
        raw=raw, base=base, seed=s, variant=variant, pec_form=pec_form,
        magnetic=raw.get("magnetic", "consistent"),
        n_theta=int(g.get("n_theta", 16)), n_phi=int(g.get("n_phi", 32)),
        study=study, tensor_opts=dict(raw.get("tensors", {})),
    )


def load_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return config_from_dict(json.loads(path.read_text()), path.parent, seed)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, (complex, np.complexfloating)):
        return [_jsonable(obj.real), _jsonable(obj.imag)]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _tensors(cfg: RunConfig, cluster: Cluster, materials):
    opts = cfg.tensor_opts
    return tensor_set_for_cluster(
        cluster, materials, h=opts.get("h"), method=opts.get("method", "auto"),
        mesh_level=int(opts.get("mesh_level", 3)),
        variant="nonsymmetric" if cfg.variant == "aniso_nonsymmetric" else "symmetric",
    )


def _problem(cfg, cluster, tensors, wave):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DilutionWarning)
        return FoldyProblem(cluster, tensors, wave, cfg.variant, cfg.pec_form)


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def run_scatter(cfg: RunConfig, out) -> dict:
    """Solve, synthesise the far field and write ``solution.json``, ``pattern.csv``, ``report.json``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    timing = {}
    t0 = time.perf_counter()
    with _stage("geometry"):
        cluster = cfg.cluster()
        met = metrics(cluster)
    with _stage("tensors"):
        t = time.perf_counter()
        materials = cfg.materials(cluster.count)
        ts = _tensors(cfg, cluster, materials)
        timing["tensors"] = time.perf_counter() - t
    with _stage("foldy"):
        t = time.perf_counter()
        wave = cfg.wave()
        problem = _problem(cfg, cluster, ts, wave)
        sol = solve(problem)
        norm = solution_norm_check(problem, sol)
        timing["solve"] = time.perf_counter() - t
    with _stage("farfield"):
        t = time.perf_counter()
        pattern = foldy_far_field(sol, cluster, wave.k, cfg.grid(), cfg.magnetic)
        timing["farfield"] = time.perf_counter() - t
    with _stage("output"):
        sol.to_json(out / "solution.json")
        write_pattern_csv(out / "pattern.csv", pattern)
        cond = problem.condition()
        report = {
            "cluster": {"count": cluster.count, "radius_a": cluster.radius_a, "d_min": met.d_min, "c_r": met.c_r},
            "invertibility": {
                "c_r": cond["c_r"], "mu_plus": cond["mu_plus"], "mu_minus": cond["mu_minus"],
                "threshold_3k_mu_plus": cond["threshold"], "satisfied": cond["satisfied"],
            },
            "solve": {"method": sol.method, "residual": sol.residual,
                      "condition_estimate": sol.condition_estimate, "form": sol.form},
            "norm_check": {k: v for k, v in norm.items() if k not in ("c_r", "mu_plus", "mu_minus", "threshold", "satisfied")},
            "tensors": {"kind": ts.kind, "provenance": ts.provenance},
            "wave": {"k": wave.k, "direction": wave.direction, "polarization": wave.polarization},
            "variant": cfg.variant, "pec_form": cfg.pec_form, "magnetic": cfg.magnetic,
            "pattern": {"rows": len(pattern), "n_theta": cfg.n_theta, "n_phi": cfg.n_phi,
                        "l2_norm": pattern.norm(), "transversality_error": pattern.transversality_error()},
            "seed": cfg.seed,
        }
        timing["total"] = time.perf_counter() - t0
        report["timing"] = timing
        write_json(out / "report.json", report)
    return report


def _study_cluster(a: float, c_r: float, count: int, axis) -> Cluster:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    centers = np.arange(count)[:, None] * (c_r + 1) * a * axis[None, :]
    return Cluster(centers, a, (Ball(),) * count)


def study_point(cfg: RunConfig, a: float, c_r: float, h_rel: float, count: int = 2, axis=(1, 0, 0)) -> dict:
    """Foldy and volume-oracle far fields of one sweep point and their distance.

    The Foldy tensors are the static tensors of the same cells the oracle
    uses, so the measured gap isolates the point-interaction model.
    """
    cluster = _study_cluster(a, c_r, count, axis)
    materials = cfg.materials(cluster.count)
    wave = cfg.wave()
    grid = cfg.grid()
    t = time.perf_counter()
    with _stage("oracle"):
        fields = ls_solve(cluster, materials, wave, h_rel * a)
        ref = volume_far_field(fields, None, cluster, wave.k, grid, cfg.magnetic)
    with _stage("tensors"):
        if cfg.tensor_opts.get("study_tensors", "voxel") == "voxel":
            ts = voxel_tensor_set(fields.discretization)
        else:
            ts = _tensors(cfg, cluster, materials)
    with _stage("foldy"):
        problem = _problem(cfg, cluster, ts, wave)
        sol = solve(problem)
        ff = foldy_far_field(sol, cluster, wave.k, grid, cfg.magnetic)
    rel, mx = pattern_distance(ff, ref)
    cond = problem.condition()
    return {
        "a": a, "c_r": c_r, "h": h_rel * a, "cells": fields.voxels.count,
        "rel_l2": rel, "max_abs": mx, "oracle_residual": fields.residual,
        "oracle_iterations": fields.iterations, "foldy_residual": sol.residual,
        "invertibility_satisfied": cond["satisfied"], "threshold_3k_mu_plus": cond["threshold"],
        "seconds": time.perf_counter() - t,
    }


def fit_loglog(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 3:
        raise ConfigError("slope needs at least 3 points")
    if np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def run_convergence_study(cfg: RunConfig, out=None) -> dict:
    """Sweep ``a`` (fixed ``c_r``), ``c_r`` (fixed ``a``) or ``h`` and fit the error decay."""
    if cfg.study is None:
        raise ConfigError("config has no 'study' section")
    _validate_study(cfg.study)
    st = cfg.study
    param = st["parameter"]
    vals = [float(v) for v in st["values"]]
    a0 = float(st.get("a", 0.02))
    c0 = float(st.get("c_r", 10.0))
    h0 = float(st.get("h_rel", 1 / 8))
    count = int(st.get("count", 2))
    axis = st.get("axis", (1, 0, 0))
    points = []
    for v in vals:
        a, c, h = (v, c0, h0) if param == "a" else (a0, v, h0) if param == "c_r" else (a0, c0, v)
        p = study_point(cfg, a, c, h, count, axis)
        points.append(p)
    errs = [p["rel_l2"] for p in points]
    slope = fit_loglog(vals, errs)
    # order of decay in the direction of refinement
    order = -slope if param == "c_r" else slope
    refine = np.argsort(vals)[::-1] if param != "c_r" else np.argsort(vals)
    ordered = [errs[i] for i in refine]
    decreasing = bool(all(b < a for a, b in zip(ordered, ordered[1:])))
    report = {
        "parameter": param,
        "values": vals,
        "fixed": {"a": a0, "c_r": c0, "h_rel": h0, "count": count},
        "points": [{k: v for k, v in p.items() if k != "seconds"} for p in points],
        "loglog_slope": slope,
        "decay_order": order,
        "strictly_decreasing": decreasing,
        "timing": {"per_point": [p["seconds"] for p in points]},
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "study.json", report)
        lines = [f"sweep over {param}: " + ", ".join(f"{v:g}" for v in vals)]
        lines += [f"  {param}={v:<10g} rel_l2={e:.4e}" for v, e in zip(vals, errs)]
        lines.append(f"log-log slope {slope:.4f}; decay order {order:.4f}; strictly decreasing: {decreasing}")
        (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return report


def run_tensors(cfg: RunConfig, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()
    with _stage("geometry"):
        cluster = cfg.cluster()
    with _stage("tensors"):
        ts = _tensors(cfg, cluster, cfg.materials(cluster.count))
        ts.to_json(out / "tensors.json")
    return {"count": len(ts), "kind": ts.kind, "provenance": ts.provenance,
            "timing": {"total": time.perf_counter() - t}}


def run_check(cfg: RunConfig, out) -> dict:
    """Invariant suite on the configured problem: linearity, transversality,
    translation covariance, assembled residual and the norm bound."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    checks = {}
    with _stage("geometry"):
        cluster = cfg.cluster()
    with _stage("tensors"):
        ts = _tensors(cfg, cluster, cfg.materials(cluster.count))
    with _stage("check"):
        wave = cfg.wave()
        grid = cfg.grid()
        p1 = _problem(cfg, cluster, ts, wave)
        s1 = solve(p1)
        s2 = solve(_problem(cfg, cluster, ts, cfg.wave(2.0)))
        lin = float(np.abs(np.concatenate([s2.R - 2 * s1.R, s2.Q - 2 * s1.Q])).max()
                    / max(np.abs(np.concatenate([s1.R, s1.Q])).max(), 1e-300))
        checks["linearity"] = {"value": lin, "tolerance": 1e-12, "passed": lin <= 1e-12}
        ff = foldy_far_field(s1, cluster, wave.k, grid, cfg.magnetic)
        tr = ff.transversality_error()
        checks["transversality"] = {"value": tr, "tolerance": 1e-10, "passed": tr <= 1e-10}
        shift = np.array([0.3, -0.2, 0.7])
        moved = cluster.translated(shift)
        s3 = solve(_problem(cfg, moved, ts, wave))
        ff3 = foldy_far_field(s3, moved, wave.k, grid, cfg.magnetic)
        # the incident phase at the shifted cluster multiplies every moment
        expected = ff.values * np.exp(-1j * wave.k * (ff.directions @ shift))[:, None] \
            * np.exp(1j * wave.k * (wave.direction @ shift))
        tc = float(np.abs(ff3.values - expected).max() / max(np.abs(expected).max(), 1e-300))
        checks["translation_covariance"] = {"value": tc, "tolerance": 1e-10, "passed": tc <= 1e-10}
        try:
            M, b = assemble(p1)
            X = np.concatenate([s1.Q, s1.R], axis=1).ravel()
            res = float(np.linalg.norm(M @ X - b) / max(np.linalg.norm(b), 1e-300))
            checks["assembled_residual"] = {"value": res, "tolerance": 1e-10, "passed": res <= 1e-10}
        except ValueError as err:
            checks["assembled_residual"] = {"skipped": str(err), "passed": True}
        nc = solution_norm_check(p1, s1)
        if nc["checked"]:
            checks["norm_bound"] = {"Q": [nc["Q_lhs"], nc["Q_rhs"]], "R": [nc["R_lhs"], nc["R_rhs"]],
                                    "passed": nc["holds"]}
        else:
            checks["norm_bound"] = {"skipped": nc["reason"], "passed": True}
    report = {"checks": checks, "passed": all(c["passed"] for c in checks.values())}
    write_json(out / "check.json", report)
    return report


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="foldylax", description="Point-interaction scattering by small-particle clusters.")
    p.add_argument("--config", required=True, help="run configuration (JSON)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--verb", default="scatter", choices=["scatter", "study", "tensors", "check"])
    p.add_argument("--seed", type=_seed, default=None, help="seed for randomized clusters (overrides the config)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _stage("config"):
            cfg = load_config(args.config, args.seed)
        verb = {"scatter": run_scatter, "study": run_convergence_study,
                "tensors": run_tensors, "check": run_check}[args.verb]
        report = verb(cfg, args.out)
    except StageError as err:
        print(f"foldylax: {err}", file=sys.stderr)
        return 2
    if args.verb == "check" and not report["passed"]:
        failed = [k for k, v in report["checks"].items() if not v["passed"]]
        print(f"foldylax: checks failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"foldylax {args.verb}: results in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
