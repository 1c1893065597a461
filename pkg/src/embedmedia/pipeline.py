"""End-to-end runs: design, simulate, continuum reference, convergence study, validation."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .capacitance import capacitance_mesh, icosphere
from .config import ScenarioConfig
from .continuum import (
    BackgroundField,
    FarFieldPattern,
    born_far_field_box,
    exterior_field,
    far_field_total,
    solve_ls,
    solve_ls_two_stage,
    solve_u0,
)
from .design import (
    ParticleRecipe,
    capacitance_ball,
    predicted_p,
    radius_for_count,
    recipe_general,
    recipe_soft,
)
from .errors import ConfigError, EmbedError, ResolutionError
from .greens import plane_wave
from .manybody import (
    ParticleSet,
    check_smallness,
    evaluate_field,
    far_field_discrete,
    place_particles,
    relative_volume,
    smallness_report,
    solve_system,
)
from .medium import (
    BoxDomain,
    ComplexGridField,
    MediumSpec,
    potential_from_refraction,
    refraction_from_potential,
    resample,
    validate_passivity,
)

logger = logging.getLogger(__name__)


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(type(obj).__name__)


def make_recipe(p: ComplexGridField, a: float, kind: str = "auto") -> ParticleRecipe:
    vals = p.values
    if kind == "auto":
        kind = "soft" if np.all(np.imag(vals) == 0) and np.all(np.real(vals) >= 0) else "general"
    return recipe_soft(p, a) if kind == "soft" else recipe_general(p, a)


def _recipe_kind(cfg: ScenarioConfig) -> str:
    return "general" if cfg.recipe == "general" else "soft" if cfg.recipe == "soft" else "auto"


def schedule(cfg: ScenarioConfig) -> list[tuple[int, float]]:
    """(target M, radius) pairs; the radius makes int N dx equal to M."""
    if cfg.p.is_zero():
        return [(M, math.nan) for M in cfg.schedule_M] or [(0, a) for a in cfg.schedule_a]
    if cfg.schedule_M:
        return [(M, radius_for_count(cfg.p, M)) for M in cfg.schedule_M]
    if cfg.schedule_a:
        out = []
        for a in cfg.schedule_a:
            M = make_recipe(cfg.p, a, _recipe_kind(cfg)).expected_count
            out.append((int(round(M)), a))
        return out
    raise ConfigError("config has an empty schedule")


def _check_passive(p: ComplexGridField):
    validate_passivity(p).raise_if_failed()


def run_design(cfg: ScenarioConfig, out: Path | None = None, M: int | None = None) -> dict:
    """Recipe for the largest scheduled M (or ``M``), written as JSON plus a summary."""
    out = Path(out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _check_passive(cfg.p)
    cfg.p.to_csv(out / "p.csv")
    if cfg.target_n is not None:
        cfg.target_n.to_csv(out / "target_n.csv")
    summary = {"k": cfg.medium.k, "p_integral": cfg.p.integral()}
    if cfg.p.is_zero():
        summary.update({"M_expected": 0, "empty": True})
        (out / "recipe.json").write_text(json.dumps({"empty": True}) + "\n")
        _dump(out / "summary.json", summary)
        (out / "summary.txt").write_text("target equals background: no particles to embed\n")
        return summary
    if M is None:
        sched = schedule(cfg)
        M, a = sched[-1]
    else:
        a = radius_for_count(cfg.p, M)
    recipe = make_recipe(cfg.p, a, _recipe_kind(cfg))
    recipe.save(out / "recipe.json")
    N = np.real(recipe.N.values)
    spacing = float(N.max() ** (-1 / 3))
    n0max = float(np.abs(cfg.medium.n0.values).max())
    small = smallness_report(a, spacing - 2 * a, cfg.medium.k, n0max)
    q = potential_from_refraction(cfg.medium.n0, cfg.medium.k) + predicted_p(recipe)
    n_rec = refraction_from_potential(q, cfg.medium.k)
    summary.update({
        "a": a,
        "C0": recipe.C0,
        "M_expected": recipe.expected_count,
        "recipe_kind": "soft" if not recipe.h.values.any() else "general",
        "min_spacing": spacing,
        "smallness": small.to_dict(),
        "n_reconstructed": _stats(n_rec.values),
    })
    if cfg.target_n is not None:
        summary["n_reconstruction_error"] = float(np.abs(n_rec.values - cfg.target_n.values).max())
    _dump(out / "summary.json", summary)
    lines = [
        f"particle radius a      : {a:.6g}",
        f"capacitance C0 = 4 pi a: {recipe.C0:.6g}",
        f"expected particles M   : {recipe.expected_count:.1f}",
        f"min lattice spacing    : {spacing:.4g} (d/a = {small.d_over_a:.3g})",
        f"n0 k a                 : {small.n0ka:.3g}",
        f"reconstructed n        : {summary['n_reconstructed']}",
    ] + [f"WARNING: {w}" for w in small.warnings]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return summary


def _stats(values) -> dict:
    v = np.asarray(values).reshape(-1)
    return {"min_re": float(v.real.min()), "max_re": float(v.real.max()),
            "min_im": float(v.imag.min()), "max_im": float(v.imag.max())}


@dataclass
class ContinuumSolution:
    medium: MediumSpec
    q: ComplexGridField
    U: ComplexGridField
    far: FarFieldPattern
    A0: FarFieldPattern
    info: dict = field(default_factory=dict)

    def field_at(self, points) -> np.ndarray:
        return exterior_field(self.U, self.q, self.medium, points)


def run_continuum(cfg: ScenarioConfig, out: Path | None = None, mode: str | None = None,
                  write: bool = True) -> ContinuumSolution:
    """Limiting-medium solve with q = q0 + p on the continuum grid."""
    mode = mode or cfg.mode
    med = cfg.continuum_medium()
    p = resample(cfg.p, med.domain)
    q0 = med.q0
    q = q0 + p
    betas = cfg.far_directions()
    t = time.perf_counter()
    if mode == "background-green":
        U, _ = solve_ls_two_stage(q0, p, med)
        info = {"method": "two-stage"}
    else:
        U, sinfo = solve_ls(q, med, return_info=True)
        info = sinfo.to_dict()
    far = far_field_total(U, q, med, betas)
    _, A0 = solve_u0(q0, med, betas)
    info["seconds"] = time.perf_counter() - t
    sol = ContinuumSolution(med, q, U, far, A0, info)
    if write:
        out = Path(out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        U.to_csv(out / "continuum_U.csv")
        far.to_csv(out / "continuum_far.csv")
    return sol


def _rel(num, den):
    num, den = float(num), float(den)
    if den > 0:
        return num / den
    return 0.0 if num == 0 else math.inf


def _field_errors(u_disc, u_cont, u_inc):
    scat = np.abs(u_cont - u_inc)
    diff = np.abs(u_disc - u_cont)
    per_point = [_rel(d, s) for d, s in zip(diff, scat)]
    return max(per_point), _rel(np.linalg.norm(diff), np.linalg.norm(scat))


@dataclass
class SimulationResult:
    M: int
    a: float
    particles: ParticleSet
    far: FarFieldPattern | None
    probe_field: np.ndarray
    d_min: float
    relative_volume: float
    smallness: dict
    seconds: float


def run_simulation(cfg: ScenarioConfig, M: int, a: float, out: Path | None = None,
                   mode: str | None = None, tag: str | None = None,
                   recipe: ParticleRecipe | None = None) -> SimulationResult:
    """Recipe -> placement -> particle solve for one schedule entry.

    A precomputed ``recipe`` overrides the one derived from ``cfg.p`` and ``a``.
    """
    mode = mode or cfg.mode
    probes = cfg.probe_points()
    betas = cfg.far_directions()
    med = cfg.medium
    t = time.perf_counter()
    u_inc_probes = BackgroundField(med)(probes, med.alpha)
    if recipe is not None:
        a = recipe.a
        particles = place_particles(recipe, cfg.domain, seed=cfg.seed)
    elif math.isnan(a):
        particles = ParticleSet(np.zeros((0, 3)), 1.0, np.zeros(0, complex))
    else:
        recipe = make_recipe(cfg.p, a, _recipe_kind(cfg))
        particles = place_particles(recipe, cfg.domain, seed=cfg.seed)
    if len(particles):
        result = solve_system(particles, med, mode="auto" if mode == "free-kernel" else mode)
        field_vals = evaluate_field(particles, result, probes)
        far = far_field_discrete(particles, result, betas)
        small = check_smallness(particles, med).to_dict()
    else:
        result = None
        field_vals = u_inc_probes
        far = FarFieldPattern(med.alpha, betas, np.zeros(len(betas), dtype=complex))
        small = {}
    sim = SimulationResult(
        M=len(particles), a=a, particles=particles, far=far, probe_field=field_vals,
        d_min=particles.min_distance(), relative_volume=relative_volume(particles, cfg.domain)
        if len(particles) else 0.0, smallness=small, seconds=time.perf_counter() - t,
    )
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        tag = tag or f"M{len(particles)}"
        particles.to_csv(out / f"particles_{tag}.csv")
        if result is not None:
            result.to_csv(out / f"solution_{tag}.csv", particles)
        far.to_csv(out / f"far_{tag}.csv")
    return sim


REPORT_COLUMNS = ["M_target", "M", "a", "d_min", "relative_volume", "field_err_max",
                  "field_err_l2", "far_err_l2"]


def _slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def run_converge(cfg: ScenarioConfig, out: Path | None = None, mode: str | None = None) -> dict:
    """Discrete vs continuum comparison over the M schedule."""
    out = Path(out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sched = schedule(cfg)
    if len(sched) < 3:
        raise ConfigError("a convergence study needs at least 3 schedule entries")
    _check_passive(cfg.p)
    timings = {}
    stage = "continuum"
    try:
        cont = run_continuum(cfg, out, mode=mode)
        timings["continuum"] = cont.info["seconds"]
        probes = cfg.probe_points()
        u_inc = BackgroundField(cfg.medium)(probes, cfg.medium.alpha)
        u_cont = cont.field_at(probes)
        # discrete amplitudes exclude A0; compare totals
        far_cont = cont.far
        rows = []
        for M_target, a in sched:
            stage = f"simulate M={M_target}"
            sim = run_simulation(cfg, M_target, a, out, mode=mode, tag=f"M{M_target}")
            timings[f"M{M_target}"] = sim.seconds
            emax, el2 = _field_errors(sim.probe_field, u_cont, u_inc)
            far_err = (sim.far + cont.A0).relative_l2(far_cont) if far_cont.amplitudes.any() \
                else float(np.linalg.norm(sim.far.amplitudes))
            rows.append({
                "M_target": M_target, "M": sim.M, "a": a, "d_min": sim.d_min,
                "relative_volume": sim.relative_volume, "field_err_max": emax,
                "field_err_l2": el2, "far_err_l2": far_err,
            })
    except EmbedError as exc:
        exc.args = (f"[stage {stage}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise
    rows.sort(key=lambda r: r["M"])
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({c: repr(float(r[c])) if isinstance(r[c], float) else r[c]
                        for c in REPORT_COLUMNS})
    Ms = [r["M"] for r in rows]
    q_total = potential_from_refraction(cfg.medium.n0, cfg.medium.k) + cfg.p
    n_rec = refraction_from_potential(q_total, cfg.medium.k)
    summary = {
        "rows": rows,
        "slope_relative_volume": _slope(Ms, [r["relative_volume"] for r in rows]),
        "slope_field_err": _slope(Ms, [r["field_err_max"] for r in rows]),
        "slope_far_err": _slope(Ms, [r["far_err_l2"] for r in rows]),
        "n_reconstructed": _stats(n_rec.values),
        "continuum": {k: v for k, v in cont.info.items() if k != "seconds"},
        "continuum_grid": list(cont.medium.domain.grid_shape),
        "timings": timings,
    }
    if cfg.target_n is not None:
        summary["n_reconstruction_error"] = float(np.abs(n_rec.values - cfg.target_n.values).max())
    _dump(out / "summary.json", summary)
    return summary


@dataclass
class Check:
    name: str
    ok: bool
    detail: dict = field(default_factory=dict)


def _check(name, fn) -> Check:
    try:
        ok, detail = fn()
        return Check(name, bool(ok), detail)
    except EmbedError as exc:
        detail = {"error": type(exc).__name__, "message": str(exc)}
        cells = getattr(exc, "cells", None)
        if cells:
            detail["cells"] = cells[:50]
        return Check(name, False, detail)


def run_validate(cfg: ScenarioConfig, out: Path | None = None) -> tuple[bool, list[Check]]:
    """Run the module invariant checks on a scenario; returns (all passed, checks)."""
    med = cfg.medium
    checks = []

    def resolution():
        for m in (med, cfg.continuum_medium()):
            kh = med.k * float(m.domain.cell_size.max())
            if not kh < 1:
                raise ResolutionError(
                    f"grid {m.domain.grid_shape} too coarse: k*cell_size = {kh:.3g} >= 1")
        return True, {"k_cell_size": med.k * float(cfg.continuum_medium().domain.cell_size.max())}

    checks.append(_check("resolution", resolution))

    def passivity():
        rep = validate_passivity(cfg.p)
        return rep.ok, {"cells": rep.cells[:50], "max_imag": rep.max_imag}

    checks.append(_check("passivity", passivity))

    def capacitance():
        c = capacitance_mesh(icosphere(3))
        err = abs(c / capacitance_ball(1.0) - 1)
        return err <= 0.02, {"capacitance": c, "relative_error": err}

    checks.append(_check("capacitance_oracle", capacitance))

    def round_trip():
        if cfg.p.is_zero():
            return True, {"skipped": "p = 0"}
        a = schedule(cfg)[-1][1]
        rec = make_recipe(cfg.p, a, _recipe_kind(cfg))
        back = predicted_p(rec).values
        err = float(np.max(np.abs(back - cfg.p.values)) / max(np.abs(cfg.p.values).max(), 1e-300))
        return err <= 1e-12, {"max_relative_error": err}

    checks.append(_check("recipe_round_trip", round_trip))

    if cfg.recipe_file is not None:
        def recipe_file():
            rec = ParticleRecipe.load(cfg.recipe_file)
            predicted_p(rec)
            return True, {"path": str(cfg.recipe_file)}

        checks.append(_check("recipe_file", recipe_file))

    def born():
        dom = BoxDomain(med.domain.lo, med.domain.hi, (10, 10, 10))
        m = MediumSpec(dom, med.k, med.alpha)
        qw = 0.05 * med.k**2
        q = ComplexGridField.constant(dom, qw)
        U = solve_ls(q, m)
        far = far_field_total(U, q, m)
        ref = born_far_field_box(qw, dom, med.k, med.alpha, far.betas)
        err = far.relative_l2(FarFieldPattern(med.alpha, far.betas, ref))
        return err <= 0.05, {"far_field_relative_l2": err}

    checks.append(_check("born_far_field", born))

    def far_consistency():
        m = cfg.continuum_medium()
        if m.domain.num_cells > 16**3:
            m = med.with_grid((12, 12, 12))
        p = resample(cfg.p, m.domain)
        q = m.q0 + p
        U = solve_ls(q, m)
        far = far_field_total(U, q, m)
        r = 1e3 * m.domain.diameter
        pts = r * far.betas
        scat = exterior_field(U, q, m, pts) - plane_wave(pts, m.alpha, m.k)
        est = r * np.exp(-1j * m.k * r) * scat
        err = FarFieldPattern(m.alpha, far.betas, est).relative_l2(far) if far.amplitudes.any() else 0.0
        return err <= 1e-3, {"relative_difference": err, "radius": r}

    checks.append(_check("far_field_consistency", far_consistency))

    def single_scatterer():
        a = 0.01 / med.k
        ps = ParticleSet(np.zeros((1, 3)), a, np.array([complex(np.inf)]))
        vac = MediumSpec(BoxDomain((-1, -1, -1), (1, 1, 1), (2, 2, 2)), med.k, med.alpha)
        res = solve_system(ps, vac)
        amp = far_field_discrete(ps, res, medium=vac).amplitudes
        err = float(np.max(np.abs(amp / (-a) - 1)))
        return err <= 0.02, {"max_relative_error": err}

    checks.append(_check("single_soft_scatterer", single_scatterer))

    passed = all(c.ok for c in checks)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "validate.json", {"passed": passed, "checks": [asdict(c) for c in checks]})
    return passed, checks
