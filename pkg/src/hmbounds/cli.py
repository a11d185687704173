"""Batch verification runs: scenario execution, convergence studies, report emission.

Usage::

    python -m hmbounds list-scenarios
    python -m hmbounds run config.json --format markdown --out report.md
    python -m hmbounds converge disk-steklov --quantity sigma_1

The exit code of ``run`` is 0 iff no cell is violated and no cell failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .bounds import VIOLATED, bound_ext_closed, bound_ext_steklov, bound_genus_neumann, \
    bound_neumann_conformal, bound_reilly, bound_steklov_genus, bound_steklov_relconf
from .conformal import OptimizerConfig, conformal_volume_sup
from .errors import ParameterError
from .extrinsic import identity_tensor, mean_curvature_field, newton_tensor
from .mesh import build_surface, mesh_size, refine
from .scenarios import REGISTRY, Scenario, ball_map, get_scenario, scenario_from_dict, sphere_map
from .spectral import assemble_fem, neumann_spectrum, steklov_spectrum, variational_chain_report

CONFIG_FORMAT = "hmbounds.config"
MANIFEST_FORMAT = "hmbounds.manifest"
THREADS_ENV = "HMBOUNDS_THREADS"
FAILED = "failed"
MANIFEST_CSV_HEADER = "scenario,level,theorem_id,h,lhs,rhs,gap,verdict"


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def thread_count() -> int:
    """BLAS threads per scenario; ``HMBOUNDS_THREADS`` overrides the default of 1."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ParameterError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def environment_fingerprint() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "machine": platform.machine(),
            "system": platform.system()}


@dataclass
class RunManifest:
    """Everything a run produced. ``rows`` has one entry per (scenario, theorem, level)."""

    version: str
    scenarios: list
    rows: list
    levels: list = field(default_factory=list)
    chains: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)
    timings: dict | None = None

    def to_dict(self) -> dict:
        return {"format": MANIFEST_FORMAT, "version": self.version, "scenarios": self.scenarios,
                "rows": self.rows, "levels": self.levels, "chains": self.chains,
                "environment": self.environment, "timings": self.timings}

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        if d.get("format") != MANIFEST_FORMAT:
            raise ParameterError("not a run manifest")
        return cls(d["version"], d["scenarios"], d["rows"], d.get("levels", []),
                   d.get("chains", []), d.get("environment", {}), d.get("timings"))

    @property
    def violations(self) -> list:
        return [r for r in self.rows if r["verdict"] == VIOLATED]

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r["verdict"] == FAILED] + \
            [c for c in self.chains if c.get("error") or not c.get("all_nonnegative")]

    @property
    def ok(self) -> bool:
        return not self.violations and not self.failures


def _failure_row(scenario, theorem, level, exc) -> dict:
    return {"scenario": scenario, "theorem_id": theorem, "level": level, "verdict": FAILED,
            "error": f"{type(exc).__name__}: {exc}", "report": None}


class _Level:
    """Lazily computed per-level quantities shared by the theorems of one scenario."""

    def __init__(self, scenario: Scenario, mesh, clock):
        self.s, self.mesh, self._clock = scenario, mesh, clock
        self._cache = {}

    def _get(self, key, stage, fn):
        if key not in self._cache:
            with self._clock(stage):
                self._cache[key] = fn()
        return self._cache[key]

    @property
    def fem(self):
        return self._get("fem", "assembly", lambda: assemble_fem(self.mesh))

    @property
    def spectrum(self):
        if self.s.closed:
            fn = lambda: neumann_spectrum(self.fem, self.s.eigen_count, seed=self.s.seed)
        else:
            fn = lambda: steklov_spectrum(self.fem, self.s.eigen_count)
        return self._get("spectrum", "spectrum", fn)

    @property
    def curvature(self):
        return self._get("curv", "curvature", lambda: mean_curvature_field(self.mesh))

    @property
    def sphere_image(self):
        return self._get("sphere", "maps", lambda: sphere_map(self.mesh, self.s.sphere_map))

    @property
    def ball_image(self):
        return self._get("ball", "maps", lambda: ball_map(self.mesh, self.s.ball_map))

    def conformal_volume(self):
        opts = self.s.optimizer or OptimizerConfig(seed=self.s.seed)
        return self._get("vc", "conformal_volume",
                         lambda: conformal_volume_sup(self.mesh, self.sphere_image, opts))

    def steklov_pair(self):
        return self._get("stek", "bounds",
                         lambda: bound_steklov_genus(self.mesh, self.spectrum, self.fem))

    def evaluate(self, theorem: str):
        m, sp = self.mesh, self.spectrum
        if theorem == "neumann_conformal":
            vc = self.conformal_volume()
            return bound_neumann_conformal(m, vc, sp, self.fem)
        if theorem == "neumann_genus":
            return bound_genus_neumann(m, sp, self.fem)
        if theorem == "reilly":
            return bound_reilly(m, self.s.c, sp, self.fem)
        if theorem == "ext_closed":
            return bound_ext_closed(m, identity_tensor(self.curvature), "euclidean", sp,
                                    self.curvature)
        if theorem == "ext_closed_newton":
            T = newton_tensor(self.curvature, 1, m)
            return bound_ext_closed(m, T, "euclidean", sp, self.curvature)
        if theorem == "ext_closed_sphere":
            return bound_ext_closed(m, identity_tensor(self.curvature), "sphere", sp,
                                    self.curvature)
        if theorem == "steklov_genus":
            return self.steklov_pair()[0]
        if theorem == "steklov_genus_strict":
            return self.steklov_pair()[1]
        if theorem == "steklov_relconf":
            return bound_steklov_relconf(m, self.ball_image, sp, self.fem)
        if theorem == "ext_steklov":
            return bound_ext_steklov(m, sp, self.fem)
        raise ParameterError(f"unknown theorem {theorem!r}")

    def chain(self):
        if self.s.closed:
            return variational_chain_report(self.mesh, self.sphere_image, self.spectrum,
                                            "neumann", self.fem)
        return variational_chain_report(self.mesh, self.ball_image, self.spectrum,
                                        "steklov", self.fem)


def run_scenario(s: Scenario, include_timings: bool = True) -> dict:
    """Evaluate every requested theorem at every level of ``s``.

    Returns a manifest fragment with keys ``scenario``, ``rows``, ``levels``,
    ``chains`` and ``timings``. Errors are recorded per cell and the run
    continues; a mesh that cannot be built yields a single failure row.
    """
    timings: dict[str, float] = {}

    @contextmanager
    def clock(stage):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            timings[stage] = timings.get(stage, 0.0) + time.perf_counter() - t0

    frag = {"scenario": s.to_dict(), "rows": [], "levels": [], "chains": []}
    with threadpool_limits(limits=thread_count()):
        try:
            with clock("mesh"):
                mesh = build_surface(s.surface)
        except Exception as exc:
            frag["rows"].append(_failure_row(s.name, "*", None, exc))
            frag["timings"] = timings if include_timings else None
            return _clean(frag)
        for level in range(s.refinement_levels):
            if level:
                try:
                    with clock("mesh"):
                        mesh = refine(mesh)
                except Exception as exc:
                    for lv in range(level, s.refinement_levels):
                        frag["rows"].extend(_failure_row(s.name, t, lv, exc) for t in s.theorems)
                    break
            ctx = _Level(s, mesh, clock)
            info = {"scenario": s.name, "level": level, "h": mesh_size(mesh),
                    "vertices": mesh.n_vertices, "triangles": len(mesh.triangles)}
            try:
                info["eigenvalues"] = ctx.spectrum.eigenvalues.tolist()
            except Exception as exc:
                info["error"] = f"{type(exc).__name__}: {exc}"
            frag["levels"].append(info)
            for theorem in s.theorems:
                try:
                    with clock("bounds"):
                        rep = ctx.evaluate(theorem)
                    frag["rows"].append({"scenario": s.name, "theorem_id": theorem,
                                         "level": level, "verdict": rep.verdict,
                                         "error": None, "report": rep.to_dict()})
                except Exception as exc:
                    frag["rows"].append(_failure_row(s.name, theorem, level, exc))
            try:
                with clock("chain"):
                    ch = ctx.chain()
                frag["chains"].append({
                    "scenario": s.name, "level": level, "mode": ch.mode, "error": None,
                    "tolerance": ch.tolerance, "min_relative_slack": ch.min_relative_slack(),
                    "all_nonnegative": ch.all_nonnegative(), "all_tight": ch.all_tight(),
                    "report": ch.to_dict()})
            except Exception as exc:
                frag["chains"].append({"scenario": s.name, "level": level, "mode": None,
                                       "error": f"{type(exc).__name__}: {exc}"})
    frag["timings"] = {k: round(v, 6) for k, v in timings.items()} if include_timings else None
    return _clean(frag)


def _resolve(entry) -> Scenario:
    if isinstance(entry, Scenario):
        return entry
    if isinstance(entry, str):
        return get_scenario(entry)
    if isinstance(entry, dict):
        return scenario_from_dict(entry)
    raise ParameterError(f"cannot interpret scenario entry {entry!r}")


def _entry_name(entry) -> str:
    if isinstance(entry, Scenario):
        return entry.name
    if isinstance(entry, str):
        return entry
    if isinstance(entry, dict):
        return str(entry.get("name", "<unnamed>"))
    return "<invalid>"


def _run_entry(args) -> dict:
    entry, levels, seed, include_timings = args
    try:
        s = _resolve(entry).with_overrides(levels=levels, seed=seed)
    except Exception as exc:
        return {"scenario": {"name": _entry_name(entry), "invalid": True},
                "rows": [_failure_row(_entry_name(entry), "*", None, exc)],
                "levels": [], "chains": [], "timings": None}
    return run_scenario(s, include_timings)


def run(entries, levels: int | None = None, seed: int | None = None, jobs: int = 1,
        include_timings: bool = True) -> RunManifest:
    """Run scenarios (names, dicts or :class:`Scenario`) and reduce in input order."""
    tasks = [(e, levels, seed, include_timings) for e in entries]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            frags = list(pool.map(_run_entry, tasks))
    else:
        frags = [_run_entry(t) for t in tasks]
    manifest = RunManifest(
        version=__version__, scenarios=[f["scenario"] for f in frags],
        rows=[r for f in frags for r in f["rows"]],
        levels=[lv for f in frags for lv in f["levels"]],
        chains=[c for f in frags for c in f["chains"]],
        environment=environment_fingerprint(),
        timings={f["scenario"]["name"]: f["timings"] for f in frags} if include_timings else None)
    return manifest


# ----------------------------------------------------------------------------
# convergence

_EIG_QUANTITY = re.compile(r"^(lambda|sigma)_(\d+)$")


@dataclass
class ConvergenceTable:
    """Per-level values of one tracked quantity plus first-order Richardson extrapolation.

    ``tracked`` is ``gap`` for a theorem and ``lhs`` (the eigenvalue) for
    ``lambda_j`` / ``sigma_j`` quantities. ``extrapolated`` uses the last two
    levels, ``(r g_fine - g_coarse) / (r - 1)`` with ``r`` the ratio of mesh
    sizes. ``observed_order`` comes from the last three levels; ``slope`` is the
    least-squares slope of ``log |g - g_inf|`` against ``log h`` over the levels
    before the last.
    """

    scenario: str
    quantity: str
    tracked: str
    rows: list
    extrapolated: float
    observed_order: float | None
    slope: float | None

    def to_dict(self) -> dict:
        return _clean({"scenario": self.scenario, "quantity": self.quantity,
                       "tracked": self.tracked, "rows": self.rows,
                       "extrapolated": self.extrapolated, "observed_order": self.observed_order,
                       "slope": self.slope})


def richardson(h, g):
    """First-order extrapolation and observed order from a refinement sequence."""
    h, g = np.asarray(h, float), np.asarray(g, float)
    r = h[-2] / h[-1]
    g_inf = (r * g[-1] - g[-2]) / (r - 1.0)
    order = None
    if len(g) >= 3:
        d1, d2 = abs(g[-3] - g[-2]), abs(g[-2] - g[-1])
        if d1 > 0 and d2 > 0:
            order = math.log(d1 / d2) / math.log(h[-3] / h[-2])
    slope = None
    err = np.abs(g[:-1] - g_inf)
    keep = err > 0
    if keep.sum() >= 2:
        slope = float(np.polyfit(np.log(h[:-1][keep]), np.log(err[keep]), 1)[0])
    return float(g_inf), order, slope


def convergence_study(s: Scenario, quantity: str | None = None) -> ConvergenceTable:
    """Track a theorem gap or an eigenvalue across the refinement levels of ``s``."""
    if s.refinement_levels < 3:
        raise ParameterError("a convergence study needs at least 3 refinement levels")
    quantity = quantity or s.theorems[0]
    eig = _EIG_QUANTITY.match(quantity)
    if eig is None and quantity not in s.theorems:
        raise ParameterError(f"{quantity!r} is neither a theorem of {s.name} nor lambda_j/sigma_j")
    if eig is not None:
        kind = eig.group(1)
        if (kind == "lambda") != s.closed:
            raise ParameterError(f"{quantity} does not match the spectrum kind of {s.name}")
        j = int(eig.group(2))
        if not 1 <= j < s.eigen_count:
            raise ParameterError(f"{quantity} needs eigen_count > {j}")
    mesh = build_surface(s.surface)
    rows = []
    for level in range(s.refinement_levels):
        if level:
            mesh = refine(mesh)
        ctx = _Level(s, mesh, _null_clock)
        h = mesh_size(mesh)
        if eig is not None:
            val = float(ctx.spectrum.eigenvalues[j])
            rows.append({"level": level, "h": h, "lhs": val, "rhs": None, "gap": None})
        else:
            rep = ctx.evaluate(quantity)
            rows.append({"level": level, "h": h, "lhs": rep.lhs, "rhs": rep.rhs,
                         "gap": rep.relative_gap})
    tracked = "lhs" if eig is not None else "gap"
    g_inf, order, slope = richardson([r["h"] for r in rows], [r[tracked] for r in rows])
    return ConvergenceTable(s.name, quantity, tracked, _clean(rows), g_inf, order, slope)


@contextmanager
def _null_clock(stage):
    yield


# ----------------------------------------------------------------------------
# emission

def _fmt(x) -> str:
    return "" if x is None else repr(x)


def manifest_csv(manifest: RunManifest) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_CSV_HEADER.split(","))
    for row in manifest.rows:
        rep = row["report"] or {}
        h = (rep.get("mesh_meta") or {}).get("h")
        level = "" if row["level"] is None else row["level"]
        w.writerow([row["scenario"], level, row["theorem_id"], _fmt(h), _fmt(rep.get("lhs")),
                    _fmt(rep.get("rhs")), _fmt(rep.get("relative_gap")), row["verdict"]])
    return buf.getvalue()


def _cell_verdict(rows) -> str:
    verdicts = [r["verdict"] for r in rows]
    if FAILED in verdicts:
        return FAILED
    if VIOLATED in verdicts:
        return VIOLATED
    return max(rows, key=lambda r: r["level"])["verdict"]


def manifest_markdown(manifest: RunManifest) -> str:
    from .bounds import THEOREMS

    names = [s["name"] for s in manifest.scenarios]
    used = [t for t in THEOREMS if any(r["theorem_id"] == t for r in manifest.rows)]
    lines = [f"# hmbounds run (version {manifest.version})", "",
             f"Status: {'ok' if manifest.ok else 'FAILED'}; "
             f"{len(manifest.violations)} violated, {len(manifest.failures)} failed.", "",
             "## Verdict matrix", "",
             "Finest-level verdict; `failed` or `violated-beyond-tolerance` if any level was.", "",
             "| scenario | " + " | ".join(used) + " |",
             "|---|" + "---|" * len(used)]
    for name in names:
        cells = []
        rows_s = [r for r in manifest.rows if r["scenario"] == name]
        if any(r["theorem_id"] == "*" for r in rows_s):
            cells = [FAILED] * len(used)
        else:
            for t in used:
                rs = [r for r in rows_s if r["theorem_id"] == t]
                cells.append(_cell_verdict(rs) if rs else "")
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    lines += ["", "## Rows", "", "| scenario | level | theorem | h | lhs | rhs | gap | verdict |",
              "|---|---|---|---|---|---|---|---|"]
    for r in manifest.rows:
        rep = r["report"] or {}
        h = (rep.get("mesh_meta") or {}).get("h")
        vals = [_num(h), _num(rep.get("lhs")), _num(rep.get("rhs")), _num(rep.get("relative_gap"))]
        lines.append(f"| {r['scenario']} | {'' if r['level'] is None else r['level']} | "
                     f"{r['theorem_id']} | " + " | ".join(vals) + f" | {r['verdict']} |")
    if manifest.chains:
        lines += ["", "## Test-function chains", "",
                  "| scenario | level | mode | min relative slack | tolerance | nonnegative | tight |",
                  "|---|---|---|---|---|---|---|"]
        for c in manifest.chains:
            if c.get("error"):
                lines.append(f"| {c['scenario']} | {c['level']} | error | {c['error']} | | | |")
                continue
            lines.append(f"| {c['scenario']} | {c['level']} | {c['mode']} | "
                         f"{_num(c['min_relative_slack'])} | {_num(c['tolerance'])} | "
                         f"{c['all_nonnegative']} | {c['all_tight']} |")
    errors = [r for r in manifest.rows if r["error"]]
    if errors:
        lines += ["", "## Failures", ""]
        lines += [f"- {r['scenario']} / {r['theorem_id']} / level {r['level']}: {r['error']}"
                  for r in errors]
    return "\n".join(lines) + "\n"


def _num(x) -> str:
    return "" if x is None else f"{x:.6g}"


def emit_report(manifest: RunManifest, fmt: str = "json", out=None) -> str:
    """Serialize ``manifest``; also write it to ``out`` when given. Output is bit-stable."""
    if fmt == "json":
        text = json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n"
    elif fmt == "csv":
        text = manifest_csv(manifest)
    elif fmt == "markdown":
        text = manifest_markdown(manifest)
    else:
        raise ParameterError(f"unknown format {fmt!r}")
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def manifest_from_json(text: str) -> RunManifest:
    return RunManifest.from_dict(json.loads(text))


def convergence_text(table: ConvergenceTable, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(table.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "h", "lhs", "rhs", "gap"])
        for r in table.rows:
            w.writerow([r["level"], _fmt(r["h"]), _fmt(r["lhs"]), _fmt(r["rhs"]), _fmt(r["gap"])])
        return buf.getvalue()
    if fmt == "markdown":
        lines = [f"# Convergence: {table.scenario} / {table.quantity}", "",
                 "| level | h | lhs | rhs | gap |", "|---|---|---|---|---|"]
        lines += [f"| {r['level']} | {_num(r['h'])} | {_num(r['lhs'])} | {_num(r['rhs'])} | "
                  f"{_num(r['gap'])} |" for r in table.rows]
        lines += ["", f"- extrapolated {table.tracked}: {_num(table.extrapolated)}",
                  f"- observed order: {_num(table.observed_order)}",
                  f"- slope of log|g - g_inf| vs log h: {_num(table.slope)}"]
        return "\n".join(lines) + "\n"
    raise ParameterError(f"unknown format {fmt!r}")


# ----------------------------------------------------------------------------
# command line

def load_config(path) -> dict:
    """Read a run configuration (JSON, ``{"format": "hmbounds.config", "version": 1, ...}``)."""
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict) or cfg.get("format") != CONFIG_FORMAT:
        raise ParameterError(f"{path}: expected a {CONFIG_FORMAT!r} document")
    if cfg.get("version") != 1:
        raise ParameterError(f"{path}: unsupported config version {cfg.get('version')!r}")
    scen = cfg.get("scenarios", "all")
    if scen == "all":
        scen = list(REGISTRY)
    if not isinstance(scen, list) or not scen:
        raise ParameterError(f"{path}: 'scenarios' must be 'all' or a nonempty list")
    cfg["scenarios"] = scen
    return cfg


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmbounds", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--levels", type=int, default=None, help="override refinement levels")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--format", choices=("json", "csv", "markdown"), default="json")
        sp.add_argument("--out", default=None, help="output path (default: stdout)")

    r = sub.add_parser("run", help="run the scenarios of a configuration file")
    r.add_argument("config")
    common(r)
    r.add_argument("--jobs", type=int, default=None, help="parallel scenario workers")
    r.add_argument("--no-timings", action="store_true",
                   help="omit wall-clock timings so reruns are byte-identical")
    sub.add_parser("list-scenarios", help="list the built-in scenarios")
    c = sub.add_parser("converge", help="convergence study of one scenario")
    c.add_argument("scenario")
    c.add_argument("--quantity", default=None,
                   help="theorem id, lambda_j or sigma_j (default: first theorem)")
    common(c)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "list-scenarios":
            for s in REGISTRY.values():
                print(f"{s.name:20s} {s.surface.kind:24s} levels={s.refinement_levels} "
                      f"{','.join(s.theorems)}")
            return 0
        if args.command == "converge":
            s = get_scenario(args.scenario).with_overrides(levels=args.levels, seed=args.seed)
            with threadpool_limits(limits=thread_count()):
                table = convergence_study(s, args.quantity)
            text = convergence_text(table, args.format)
            _write(text, args.out)
            return 0
        cfg = load_config(args.config)
        levels = args.levels if args.levels is not None else cfg.get("levels")
        seed = args.seed if args.seed is not None else cfg.get("seed")
        jobs = args.jobs if args.jobs is not None else int(cfg.get("jobs", 1))
        manifest = run(cfg["scenarios"], levels=levels, seed=seed, jobs=jobs,
                       include_timings=not args.no_timings)
        text = emit_report(manifest, args.format)
        _write(text, args.out)
        return 0 if manifest.ok else 1
    except (ParameterError, OSError, json.JSONDecodeError) as exc:
        print(f"hmbounds: error: {exc}", file=sys.stderr)
        return 2


def _write(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
