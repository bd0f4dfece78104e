"""Experiment drivers, initial profiles, and run artifacts.

Each driver reads a validated ExperimentSpec, runs its study, and
writes CSV data plus a JSON manifest into one output directory.  CSV
bodies are byte-identical across reruns of the same spec and seed
(floats are written with repr, which round-trips); the manifest also
records a checksum per file, versions, and wall-clock time, so only the
manifest itself varies between identical runs.

Randomness layout: a master source is derived from the spec seed; each
lattice size gets substream split(i) and trajectory j inside it uses
split(i).split(j), so results are independent of ensemble chunking and
process count.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import time
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .config import ExperimentSpec, SpecError
from .errors import NumericalError
from .exact import ExactVectorSum
from .grid import ContinuumField
from .kmc import (GeneratorEstimate, ModelParams, generator_estimate, run)
from .pde import EvolveResult, PdeConfig, evolve, rhs_rough, rhs_smooth
from .potential import Potential
from .rng import RandomSource
from .scaling import ScalingKind, compare, project
from .surface import HeightField, LatticeShape
from .tension import TensionSpec, TensionTable, sigma_c, sigma_d, tabulate


def initial_profile(name: str, params: dict) -> ContinuumField:
    """Named starting profiles on the unit torus.

    params: M (cells per axis, required), amplitude (default 1),
    d (bump only, default 1), center (bump only; default is the origin
    in 1-d and (0.25, 0.25) in 2-d so the ring sits inside one
    quadrant).
    """
    M = int(params["M"])
    amp = float(params.get("amplitude", 1.0))
    x = np.arange(M) / M
    if name == "sine":
        return ContinuumField(1, M, amp * np.sin(2 * np.pi * x))
    if name == "sine2d":
        v = np.sin(2 * np.pi * x)
        return ContinuumField(2, M, amp * np.outer(v, v))
    if name == "bump":
        d = int(params.get("d", 1))
        center = params.get("center")
        if center is None:
            center = [0.0] if d == 1 else [0.25, 0.25]
        center = [float(c) for c in center]
        if len(center) != d:
            raise ValueError(f"bump center needs {d} coordinates")
        if d == 1:
            delta = np.abs(x - center[0])
            r = np.minimum(delta, 1.0 - delta)
        else:
            dx = np.abs(x - center[0])
            dx = np.minimum(dx, 1.0 - dx)
            dy = np.abs(x - center[1])
            dy = np.minimum(dy, 1.0 - dy)
            r = np.sqrt(dx[:, None] ** 2 + dy[None, :] ** 2)
        vals = np.zeros_like(r)
        inside = (r > 0.0) & (r < 0.5)
        ri = r[inside]
        vals[inside] = np.exp(8.0 - 1.0 / ri - 1.0 / (0.5 - ri))
        return ContinuumField(d, M, amp * vals)
    raise ValueError(f"unknown profile {name!r}")


def _profile_params(spec: ExperimentSpec, M: int) -> dict:
    p = dict(spec.profile)
    p["M"] = M
    p["d"] = spec.d
    return p


def lattice_initial(spec: ExperimentSpec, N: int,
                    kind: ScalingKind) -> HeightField:
    """Integer initial state: the profile evaluated on the N-grid,
    scaled up by N^a and rounded to the nearest integer."""
    prof = initial_profile(spec.profile["name"], _profile_params(spec, N))
    shape = LatticeShape(spec.d, N)
    heights = np.rint(prof.values * float(N) ** kind.a).astype(np.int64)
    return HeightField.flat(shape, heights.ravel())


def _profile_grad_range(prof: ContinuumField) -> float:
    gm = 0.0
    for ax in range(prof.d):
        g = (np.roll(prof.values, -1, axis=ax) - prof.values) * prof.M
        gm = max(gm, float(np.max(np.abs(g))))
    return gm


def build_tension(spec: ExperimentSpec, grad_range: float):
    """The tension object the PDE should use, per spec.pde.tension."""
    p = spec.p
    if spec.pde["tension"] == "bare":
        return Potential(p)
    tsp = TensionSpec(spec.K, Potential(p))
    fn = sigma_d if spec.pde["tension"] == "discrete" else sigma_c
    half = spec.pde["table_range"]
    if half is None:
        half = max(1.0, 3.0 * grad_range)
    return tabulate(lambda u: fn(u, tsp), -half, half,
                    spec.pde["table_points"],
                    meta={"tension": spec.pde["tension"], "K": spec.K,
                          "p": p, "half_range": half})


def _pde_config(spec: ExperimentSpec, tension, t_end,
                snapshot_times) -> PdeConfig:
    kind = "rough" if spec.scaling == "rough" else "smooth"
    return PdeConfig(kind=kind, K=spec.K, tension=tension,
                     t_end=t_end, snapshot_times=snapshot_times,
                     coefficient=spec.pde["coefficient"],
                     rough_include_K=spec.pde["rough_include_K"],
                     error_tol=spec.pde["error_tol"],
                     dt_safety=spec.pde["dt_safety"])


# ---------------------------------------------------------------- output

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class _Writer:
    """Collects the files a driver writes and checksums them."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.files: dict[str, str] = {}
        os.makedirs(out_dir, exist_ok=True)

    def rows(self, name: str, header: list[str], rows) -> str:
        path = os.path.join(self.out_dir, name)
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(x) for x in row) + "\n")
        self._register(name, path)
        return path

    def field(self, name: str, field: ContinuumField,
              t: float | None = None) -> str:
        path = os.path.join(self.out_dir, name)
        rows = []
        if field.d == 1:
            header = ["x", "value"]
            for i in range(field.M):
                rows.append((i / field.M, float(field.values[i])))
        else:
            header = ["x", "y", "value"]
            for i in range(field.M):
                for j in range(field.M):
                    rows.append((i / field.M, j / field.M,
                                 float(field.values[i, j])))
        if t is not None:
            header = ["t"] + header
            rows = [(t,) + r for r in rows]
        return self.rows(name, header, rows)

    def table(self, name: str, table: TensionTable) -> str:
        path = os.path.join(self.out_dir, name)
        table.write_csv(path)
        self._register(name, path)
        return path

    def _register(self, name: str, path: str) -> None:
        h = hashlib.sha256()
        with open(path, "rb") as fh:
            h.update(fh.read())
        self.files[name] = h.hexdigest()


@dataclass
class RunArtifact:
    out_dir: str
    manifest: dict

    @property
    def failures(self) -> list:
        return self.manifest.get("failures", [])


# ---------------------------------------------------------------- drivers

def _ensemble_micro(spec: ExperimentSpec, N: int, n_idx: int,
                    kind: ScalingKind, macro_times: list[float],
                    master: RandomSource, writer: _Writer):
    """Ensemble of lattice runs at one size: projected snapshot mean and
    stderr per requested macro time, plus the mass trace."""
    shape = LatticeShape(spec.d, N)
    params = ModelParams(shape, Potential(spec.p), spec.K)
    h0 = lattice_initial(spec, N, kind)
    b = kind.b
    micro_times = [t * float(N) ** b for t in macro_times]
    t_end = micro_times[-1]
    n = shape.n_sites
    sums = [ExactVectorSum(n) for _ in macro_times]
    sqs = [ExactVectorSum(n) for _ in macro_times]
    mass_rows = []
    events = 0
    src_n = master.split(n_idx)
    for j in range(spec.ensemble):
        traj = run(h0, params, t_end, micro_times, src_n.split(j))
        events += traj.event_count
        for ti, f in enumerate(traj.fields):
            _, proj = project(f, kind, micro_times[ti])
            flat = proj.values.ravel()
            sums[ti].add(flat)
            sqs[ti].add(flat * flat)
            mass_rows.append((N, j, macro_times[ti], f.mass))
    mean_fields = []
    stderr_fields = []
    for ti, t in enumerate(macro_times):
        m = sums[ti].sum_array() / spec.ensemble
        mean_fields.append(ContinuumField(spec.d, N,
                                          m.reshape((N,) * spec.d)))
        if spec.ensemble > 1:
            ss = sqs[ti].sum_array()
            var = np.maximum(ss / spec.ensemble - m * m, 0.0)
            var *= spec.ensemble / (spec.ensemble - 1)
            se = np.sqrt(var / spec.ensemble)
        else:
            se = np.full(n, np.nan)
        stderr_fields.append(ContinuumField(spec.d, N,
                                            se.reshape((N,) * spec.d)))
        writer.field(f"micro_mean_N{N}_t{t:g}.csv", mean_fields[-1], t)
        writer.field(f"micro_stderr_N{N}_t{t:g}.csv", stderr_fields[-1], t)
    return mean_fields, stderr_fields, mass_rows, events


def _drv_micro_vs_pde(spec: ExperimentSpec, writer: _Writer,
                      master: RandomSource, failures: list) -> dict:
    kind = ScalingKind(spec.scaling,
                       spec.p if spec.scaling == "rough" else None)
    macro_times = spec.times()
    prof = initial_profile(spec.profile["name"],
                           _profile_params(spec, spec.pde["M"]))
    tension = build_tension(spec, _profile_grad_range(prof))
    if isinstance(tension, TensionTable):
        writer.table("tension_table.csv", tension)
    cfg = _pde_config(spec, tension, macro_times[-1], macro_times)
    res = evolve(prof, cfg)
    if res.blowup is not None:
        failures.append({"stage": "pde", "error": "BlowUpError",
                         "time": res.blowup[0],
                         "cell": list(res.blowup[1])})
    pde_by_time = {}
    pde_mass = []
    for t, f in res:
        writer.field(f"pde_t{t:g}.csv", f, t)
        pde_by_time[t] = f
        pde_mass.append((t, f.mean()))
    writer.rows("pde_mass.csv", ["t", "mean"], pde_mass)

    metrics = []
    mass_rows = []
    total_events = 0
    for i, N in enumerate(spec.N):
        means, stderrs, masses, events = _ensemble_micro(
            spec, N, i, kind, macro_times, master, writer)
        mass_rows.extend(masses)
        total_events += events
        for ti, t in enumerate(macro_times):
            if t in pde_by_time:
                cr = compare(means[ti], pde_by_time[t])
                xs = ";".join(repr(float(x)) for x in cr.argmax_x)
                metrics.append((N, t, cr.l_inf, cr.l2, xs,
                                float(np.max(stderrs[ti].values))
                                if spec.ensemble > 1 else float("nan")))
    writer.rows("metrics.csv",
                ["N", "t", "l_inf", "l2", "argmax_x", "max_stderr"],
                metrics)
    writer.rows("mass_trace.csv", ["N", "trajectory", "t", "mass"],
                mass_rows)
    return {"events": total_events,
            "pde_steps": res.stats.get("accepted")}


def _drv_sigma_compare(spec: ExperimentSpec, writer: _Writer,
                       master: RandomSource, failures: list) -> dict:
    macro_times = spec.times()
    prof = initial_profile(spec.profile["name"],
                           _profile_params(spec, spec.pde["M"]))
    gr = _profile_grad_range(prof)
    out = {}
    fields = {}
    for label in ("discrete", "continuous"):
        sp = replace(spec)
        sp.pde = {**spec.pde, "tension": label}
        tension = build_tension(sp, gr)
        writer.table(f"tension_{label}.csv", tension)
        cfg = _pde_config(sp, tension, macro_times[-1], macro_times)
        res = evolve(prof, cfg)
        if res.blowup is not None:
            failures.append({"stage": f"pde_{label}",
                             "error": "BlowUpError",
                             "time": res.blowup[0]})
        mass = []
        for t, f in res:
            writer.field(f"pde_{label}_t{t:g}.csv", f, t)
            fields.setdefault(t, {})[label] = f
            mass.append((t, f.mean()))
        writer.rows(f"mass_{label}.csv", ["t", "mean"], mass)
        out[label] = res.stats
    metrics = []
    for t, pair in sorted(fields.items()):
        if len(pair) == 2:
            cr = compare(pair["discrete"], pair["continuous"])
            metrics.append((t, cr.l_inf, cr.l2))
    writer.rows("metrics.csv", ["t", "l_inf", "l2"], metrics)
    writer.rows("mass_trace.csv", ["t", "mean_discrete", "mean_continuous"],
                [(t, pair["discrete"].mean(), pair["continuous"].mean())
                 for t, pair in sorted(fields.items()) if len(pair) == 2])
    return out


def _drv_generator_test(spec: ExperimentSpec, writer: _Writer,
                        master: RandomSource, failures: list) -> dict:
    N = spec.N[0]
    kind = ScalingKind("smooth")
    shape = LatticeShape(spec.d, N)
    params = ModelParams(shape, Potential(spec.p), spec.K)
    h0 = lattice_initial(spec, N, kind)
    samples = spec.generator["samples"]
    est = generator_estimate(h0, params, spec.T, samples,
                             master.split(0), keep_samples=True)
    mean_f = est.mean_field()
    se_f = est.stderr_field()
    writer.field("estimate_mean.csv", mean_f)
    writer.field("estimate_stderr.csv", se_f)

    # the drift comparison target: the smooth equation's right side on
    # the analytic profile (rounding the lattice state would feed
    # amplified integer noise through a fourth-order operator)
    prof = initial_profile(spec.profile["name"], _profile_params(spec, N))
    gr = _profile_grad_range(prof)
    rhs = {}
    for label in ("discrete", "continuous"):
        sp = replace(spec)
        sp.pde = {**spec.pde, "tension": label}
        tension = build_tension(sp, gr)
        cfg = _pde_config(sp, tension, spec.T, [spec.T])
        rhs[label] = rhs_smooth(prof, cfg)
        writer.field(f"rhs_{label}.csv", rhs[label])

    dd = compare(mean_f, rhs["discrete"])
    dc = compare(mean_f, rhs["continuous"])
    boot = spec.generator["bootstrap"]
    gen = master.split(1).generator
    per = est.per_sample.astype(np.float64)
    rd = rhs["discrete"].values.ravel()
    rc = rhs["continuous"].values.ravel()
    gaps = np.zeros(boot)
    l2d = np.zeros(boot)
    l2c = np.zeros(boot)
    for b in range(boot):
        idx = gen.integers(0, samples, samples)
        m = per[idx].mean(axis=0)
        l2d[b] = np.sqrt(np.mean((m - rd) ** 2))
        l2c[b] = np.sqrt(np.mean((m - rc) ** 2))
        gaps[b] = l2c[b] - l2d[b]
    gap = dc.l2 - dd.l2
    gap_se = float(np.std(gaps, ddof=1))
    metrics = [("l2_discrete", dd.l2), ("l2_continuous", dc.l2),
               ("linf_discrete", dd.l_inf), ("linf_continuous", dc.l_inf),
               ("gap_l2", gap), ("gap_stderr", gap_se),
               ("gap_z", gap / gap_se if gap_se > 0 else float("inf")),
               ("l2_discrete_stderr", float(np.std(l2d, ddof=1))),
               ("l2_continuous_stderr", float(np.std(l2c, ddof=1))),
               ("samples", samples), ("events", est.total_events)]
    writer.rows("metrics.csv", ["name", "value"], metrics)
    writer.rows("mass_trace.csv", ["samples", "mass"],
                [(samples, h0.mass)])
    return {"gap_l2": gap, "gap_z": metrics[6][1],
            "events": est.total_events}


def _drv_barsigma_scaling(spec: ExperimentSpec, writer: _Writer,
                          master: RandomSource, failures: list) -> dict:
    tsp = TensionSpec(spec.K, Potential(spec.p))
    V = Potential(spec.p)
    u = np.linspace(spec.u_min, spec.u_max, spec.u_points)
    bar = V.grad(u)
    metrics = []
    for kappa in spec.kappas:
        scaled = np.array([kappa ** (1.0 - spec.p)
                           * sigma_d(kappa * float(x), tsp) for x in u])
        dev = scaled - bar
        writer.rows(f"table_kappa{kappa:g}.csv",
                    ["u", "sigma_scaled", "bar_sigma", "deviation"],
                    zip(u, scaled, bar, dev))
        metrics.append((kappa, float(np.max(np.abs(dev))),
                        float(np.sqrt(np.mean(dev * dev)))))
    writer.rows("metrics.csv", ["kappa", "sup_deviation", "l2_deviation"],
                metrics)
    writer.rows("mass_trace.csv", ["note"],
                [("static study; no dynamics",)])
    return {"sup_deviation_last": metrics[-1][1]}


def self_similar_iterate(cfg: PdeConfig, interval_T: float, tol: float,
                         max_iter: int, h0: ContinuumField,
                         history: list | None = None):
    """Fixed-point iteration toward a self-similar shape.

    Evolve for interval_T, renormalize to unit amplitude, repeat until
    the normalized profile moves by less than tol in L-infinity.
    Returns (g, iterations, converged).
    """
    if not (interval_T > 0):
        raise ValueError("interval_T must be positive")
    amp0 = float(np.max(np.abs(h0.values)))
    if amp0 < 1e-14:
        raise NumericalError("initial profile amplitude below 1e-14")
    g = ContinuumField(h0.d, h0.M, h0.values / amp0)
    it_cfg = replace(cfg, t_end=interval_T, snapshot_times=[interval_T])
    for it in range(1, max_iter + 1):
        res = evolve(g, it_cfg)
        if res.blowup is not None:
            raise NumericalError(f"blow-up during iteration {it} at "
                                 f"t={res.blowup[0]:g}")
        h = res[-1][1]
        amp = float(np.max(np.abs(h.values)))
        if amp < 1e-14:
            raise NumericalError(
                f"profile amplitude collapsed to {amp:g} at iteration "
                f"{it}; no nondegenerate shape to converge to")
        g_new = ContinuumField(h.d, h.M, h.values / amp)
        delta = float(np.max(np.abs(g_new.values - g.values)))
        if history is not None:
            history.append((it, delta, amp))
        g = g_new
        if delta < tol:
            return g, it, True
    return g, max_iter, False


def _drv_self_similar(spec: ExperimentSpec, writer: _Writer,
                      master: RandomSource, failures: list) -> dict:
    prof = initial_profile(spec.profile["name"],
                           _profile_params(spec, spec.pde["M"]))
    tension = build_tension(spec, _profile_grad_range(prof))
    if isinstance(tension, TensionTable):
        writer.table("tension_table.csv", tension)
    ss = spec.self_similar
    cfg = _pde_config(spec, tension, ss["interval_T"], None)
    history: list = []
    g, iters, converged = self_similar_iterate(
        cfg, ss["interval_T"], ss["tol"], ss["max_iter"], prof, history)
    if not converged:
        failures.append({"stage": "self_similar",
                         "error": "ConvergenceError",
                         "message": f"not converged in {iters} iterations"})
    writer.field("g.csv", g)
    writer.rows("convergence.csv", ["iteration", "delta_linf", "amplitude"],
                history)
    writer.rows("mass_trace.csv", ["iteration", "mean"],
                [(iters, g.mean())])
    return {"iterations": iters, "converged": converged,
            "final_delta": history[-1][1] if history else float("nan")}


@dataclass
class WettingReport:
    rows: list[dict]
    blowup: tuple | None
    snapshots: EvolveResult


def wetting_report(h0: ContinuumField, cfg: PdeConfig, threshold: float,
                   times: list[float],
                   center=None) -> WettingReport:
    """Support boundary of |h| > threshold at each requested time.

    The boundary is the outermost torus distance from the bump center
    at which the field exceeds the threshold, along each axis
    cross-section (2-d cross-sections are taken at coordinate 0.25, the
    line through the ring).  full_support flags a cross-section that
    exceeds the threshold everywhere.
    """
    if not (threshold > 0):
        raise ValueError("threshold must be positive")
    times = [float(t) for t in times]
    run_cfg = replace(cfg, t_end=max(times), snapshot_times=times)
    res = evolve(h0, run_cfg)
    if center is None:
        center = [0.0] if h0.d == 1 else [0.25, 0.25]
    rows = []
    for t, f in res:
        for ax in range(f.d):
            if f.d == 1:
                line = f.values
                c = center[0]
            else:
                fixed = int(round(0.25 * f.M)) % f.M
                line = f.values[fixed, :] if ax == 1 else f.values[:, fixed]
                c = center[ax]
            x = np.arange(f.M) / f.M
            delta = np.abs(x - c)
            dist = np.minimum(delta, 1.0 - delta)
            mask = np.abs(line) > threshold
            full = bool(np.all(mask))
            boundary = float(np.max(dist[mask])) if np.any(mask) else 0.0
            rows.append({"t": t, "axis": ax, "boundary": boundary,
                         "full_support": full})
    return WettingReport(rows, res.blowup, res)


def _drv_wetting(spec: ExperimentSpec, writer: _Writer,
                 master: RandomSource, failures: list) -> dict:
    prof = initial_profile(spec.profile["name"],
                           _profile_params(spec, spec.pde["M"]))
    tension = build_tension(spec, _profile_grad_range(prof))
    if isinstance(tension, TensionTable):
        writer.table("tension_table.csv", tension)
    times = [float(t) for t in spec.wetting["times"]]
    cfg = _pde_config(spec, tension, max(times), times)
    center = spec.profile.get("center")
    if center is None:
        center = [0.0] if spec.d == 1 else [0.25, 0.25]
    rep = wetting_report(prof, cfg, spec.wetting["threshold"], times,
                         center)
    if rep.blowup is not None:
        failures.append({"stage": "pde", "error": "BlowUpError",
                         "time": rep.blowup[0],
                         "cell": list(rep.blowup[1])})
    mass = []
    for t, f in rep.snapshots:
        writer.field(f"field_t{t:g}.csv", f, t)
        mass.append((t, f.mean()))
    writer.rows("boundary.csv", ["t", "axis", "boundary", "full_support"],
                [(r["t"], r["axis"], r["boundary"], r["full_support"])
                 for r in rep.rows])
    writer.rows("mass_trace.csv", ["t", "mean"], mass)
    return {"snapshots": len(rep.snapshots),
            "blowup": list(rep.blowup) if rep.blowup else None}


_DRIVERS = {
    "micro_vs_pde": _drv_micro_vs_pde,
    "sigma_compare": _drv_sigma_compare,
    "generator_test": _drv_generator_test,
    "barsigma_scaling": _drv_barsigma_scaling,
    "self_similar": _drv_self_similar,
    "wetting": _drv_wetting,
}


def run_experiment(spec: ExperimentSpec) -> RunArtifact:
    """Dispatch to the named driver and assemble the artifact.

    Numerical failures inside a driver are recorded in the manifest
    with partial outputs retained; config problems raise SpecError
    before anything is written.
    """
    if spec.experiment not in _DRIVERS:
        raise SpecError(f"experiment: unknown driver {spec.experiment!r}")
    out_dir = os.environ.get("SURFKMC_OUT") or spec.out \
        or os.path.join("runs", spec.experiment)
    writer = _Writer(out_dir)
    master = RandomSource(spec.seed)
    failures: list = []
    t0 = time.monotonic()
    summary: dict = {}
    try:
        summary = _DRIVERS[spec.experiment](spec, writer, master, failures)
    except NumericalError as e:
        failures.append({"stage": spec.experiment,
                         "error": type(e).__name__, "message": str(e)})
    manifest = {
        "spec": spec.raw,
        "experiment": spec.experiment,
        "seed": spec.seed,
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "wall_clock_s": time.monotonic() - t0,
        "files": dict(sorted(writer.files.items())),
        "failures": failures,
        "summary": summary,
    }
    try:
        import scipy
        manifest["versions"]["scipy"] = scipy.__version__
    except ImportError:
        pass
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return RunArtifact(out_dir, manifest)
