"""Parameter sweeps with resumable on-disk persistence and plot-data export.

Layout: a SweepConfig (JSON-round-trippable) names a model, a grid, sizes
and observables.  Each run_* entry point expands the grid into independent
tasks (whole h-chains, so ground-state fidelity between neighboring h points
stays well defined), executes them sequentially or on a process pool, sorts
the collected rows canonically, and writes CSV plus a JSON manifest with
per-file SHA-256 checksums.  Reruns with the same config hash resume from
the checkpoint or return the finished output without recomputing.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .lattice import (
    GeometryError,
    ImpuritySpec,
    PotentialProfile,
    build_aah_chain,
    build_four_site,
    build_haldane_cylinder,
    build_two_chain,
    add_boundary_potential,
    add_domain_wall,
    add_impurities,
    default_impurity_anchor,
    fibonacci_approximant,
)
from . import eigen, observables, theory

SCHEMA_VERSION = 1

_MODELS = ("haldane-cylinder", "aah-chain", "two-chain", "four-site")
_AXES = ("V", "h", "gamma")


class ConfigError(ValueError):
    """Sweep configuration is structurally invalid."""


class CoverageError(LookupError):
    """Requested figure is not covered by the given records."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SweepConfig:
    """Declarative description of one sweep.

    grid maps axis name (V, h, gamma) to {start, stop, step}; an absent axis
    collapses to the scalar in params (V defaults to 1, h and gamma to 0).
    sizes is a list of [L_x, L_y] pairs; chain models read only L_x.
    """

    model: str
    grid: dict = field(default_factory=dict)
    sizes: list = field(default_factory=lambda: [[20, 20]])
    params: dict = field(default_factory=dict)
    selector: dict | None = None
    observables: list = field(default_factory=lambda: ["spectral", "ipr", "imag"])
    output_dir: str = "data"
    workers: int = 1
    tag: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version {self.schema_version} != {SCHEMA_VERSION}")
        if self.model not in _MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"workers must be a positive int, got {self.workers}")
        for name, axis in self.grid.items():
            if name not in _AXES:
                raise ConfigError(f"unknown grid axis {name!r}")
            missing = {"start", "stop", "step"} - set(axis)
            if missing:
                raise ConfigError(f"axis {name}: missing {sorted(missing)}")
            if axis["step"] <= 0:
                raise ConfigError(f"axis {name}: step must be > 0")
            if axis["stop"] < axis["start"]:
                raise ConfigError(f"axis {name}: stop < start")
        if self.model != "four-site":
            if not self.sizes:
                raise ConfigError("sizes must be non-empty")
            for pair in self.sizes:
                if len(pair) != 2 or any(int(v) < 1 for v in pair):
                    raise ConfigError(f"bad size entry {pair!r}")
        sel = self.selector
        if sel is not None and sel.get("rule") not in (None,) + eigen.StateSelector._RULES:
            raise ConfigError(f"unknown selector rule {sel.get('rule')!r}")
        p, q = self.params.get("alpha_p"), self.params.get("alpha_q")
        if (p is None) != (q is None):
            raise ConfigError("alpha_p and alpha_q must be given together")
        if p is not None:
            if q < 1 or not 0 <= p <= q:
                raise ConfigError(f"bad approximant {p}/{q}")
            # a period shorter than the ring would tile periodically and
            # defeat the quasiperiodic construction
            for pair in self.sizes:
                if self.model != "four-site" and q < int(pair[0]):
                    raise ConfigError(
                        f"alpha_q {q} shorter than ring L_x {pair[0]}")
        elif self.model != "four-site":
            for pair in self.sizes:
                try:
                    fibonacci_approximant(int(pair[0]))
                except GeometryError as err:
                    raise ConfigError(f"size {pair}: {err}") from err

    def canonical(self) -> dict:
        d = asdict(self)
        # identity excludes where results land and how many workers ran
        d.pop("output_dir")
        d.pop("workers")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text_or_path) -> "SweepConfig":
        text = text_or_path
        if isinstance(text_or_path, (str, os.PathLike)) and os.path.exists(text_or_path):
            with open(text_or_path, encoding="utf-8") as fh:
                text = fh.read()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**raw)


def axis_values(cfg: SweepConfig, name: str) -> np.ndarray:
    """Inclusive uniform grid for one axis, or the scalar fallback."""
    axis = cfg.grid.get(name)
    if axis is None:
        default = {"V": 1.0, "h": 0.0, "gamma": 0.0}[name]
        return np.array([float(cfg.params.get(name, default))])
    n = int(math.floor((axis["stop"] - axis["start"]) / axis["step"] + 0.5)) + 1
    return np.round(axis["start"] + axis["step"] * np.arange(n), 10)


# ---------------------------------------------------------------------------
# row formatting, canonical ordering, persistence

_COLUMN_ORDER = [
    "model", "kind", "L_x", "L_y", "separation", "t", "t1", "t2", "phi",
    "lambda", "V", "h", "gamma", "alpha_p", "alpha_q", "idx", "x",
    "e_g_re", "e_g_im", "e_f_re", "e_f_im", "gap",
    "ipr_g_full", "ipr_g_chain", "ipr_g_x", "edge_density_g", "n_family",
    "fidelity", "max_im_all", "max_im_ingap", "max_im_window", "n_window",
    "re", "im", "d2", "re1", "im1", "re2", "im2", "re3", "im3", "re4", "im4",
    "dre_12", "dre_34", "dim_12", "dim_34", "n_boundary", "n_split_pairs",
    "density_num", "density_chiral", "phase", "residual_max", "error",
]

_SORT_COLUMNS = ("model", "kind", "separation", "L_x", "L_y", "V", "h",
                 "gamma", "idx", "x")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _canon_key(row: dict):
    key = []
    for c in _SORT_COLUMNS:
        v = row.get(c)
        if v is None:
            key.append((0, 0.0, ""))
        elif isinstance(v, str):
            key.append((2, 0.0, v))
        else:
            key.append((1, float(v), ""))
    return tuple(key)


def sort_records(rows: list) -> list:
    return sorted(rows, key=_canon_key)


def _columns_for(rows: list) -> list:
    seen = set()
    for r in rows:
        seen.update(r)
    cols = [c for c in _COLUMN_ORDER if c in seen]
    cols += sorted(seen - set(cols))
    return cols


def write_records_csv(path: str, rows: list, columns: list | None = None) -> int:
    cols = columns or _columns_for(rows)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r.get(c)) for c in cols) + "\n")
    return len(rows)


def load_records_csv(path: str) -> list:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        for line in fh:
            vals = line.rstrip("\n").split(",")
            row = {}
            for k, raw in zip(header, vals):
                if raw == "":
                    continue
                try:
                    row[k] = int(raw)
                except ValueError:
                    try:
                        row[k] = float(raw)
                    except ValueError:
                        row[k] = raw
            rows.append(row)
    return rows


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: str, stem: str, cfg: SweepConfig, command: str,
                   files: list, failures: list, extras: dict | None = None) -> str:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": asdict(cfg),
        "config_hash": cfg.config_hash(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "status": "partial" if failures else "complete",
        "failures": failures,
        "files": [
            {"path": os.path.basename(p), "sha256": sha256_file(p), "rows": n}
            for p, n in files
        ],
    }
    if extras:
        manifest.update(extras)
    path = os.path.join(out_dir, stem + ".manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_if_complete(out_dir: str, stem: str, cfg: SweepConfig):
    """Finished run with matching hash and intact checksums, or None."""
    mpath = os.path.join(out_dir, stem + ".manifest.json")
    if not os.path.exists(mpath):
        return None
    try:
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    if manifest.get("config_hash") != cfg.config_hash():
        return None
    if manifest.get("status") != "complete":
        return None
    for entry in manifest.get("files", []):
        path = os.path.join(out_dir, entry["path"])
        if not os.path.exists(path) or sha256_file(path) != entry["sha256"]:
            return None
    return manifest


class _Checkpoint:
    """Append-only point log so an interrupted sweep restarts mid-chain."""

    def __init__(self, path: str, columns: list):
        self.path = path
        self.columns = columns
        self._fh = None

    def load(self) -> list:
        if not os.path.exists(self.path):
            return []
        return load_records_csv(self.path)

    def append(self, row: dict):
        if self._fh is None:
            fresh = not os.path.exists(self.path) or os.path.getsize(self.path) == 0
            self._fh = open(self.path, "a", encoding="utf-8", newline="\n")
            if fresh:
                self._fh.write(",".join(self.columns) + "\n")
        self._fh.write(",".join(_fmt(row.get(c)) for c in self.columns) + "\n")
        self._fh.flush()

    def close(self, remove: bool = False):
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        if remove and os.path.exists(self.path):
            os.remove(self.path)


# ---------------------------------------------------------------------------
# per-point physics


def classify_phase(ipr_value: float, n_support: int,
                   max_im: float | None = None, im_tol: float = 1e-8) -> str:
    """Map an IPR (and optionally max|Im E|) to a phase label.

    Thresholds: extended below 2/N, localized above 0.5, critical between.
    """
    if ipr_value < 2.0 / n_support:
        label = "extended"
    elif ipr_value > 0.5:
        label = "localized"
    else:
        label = "critical"
    if max_im is not None:
        label += "-complex" if max_im > im_tol else "-real"
    return label


def threshold_crossings(grid, curve, level: float) -> list:
    """Grid values where the curve steps from <= level to > level."""
    g = np.asarray(grid, dtype=float)
    f = np.asarray(curve, dtype=float)
    out = []
    for i in range(1, len(f)):
        if f[i - 1] <= level < f[i]:
            out.append(float(g[i]))
    if len(f) and f[0] > level:
        out.insert(0, float(g[0]))
    return out


def _profile_for(L_x: int, V: float, h: float, params: dict) -> PotentialProfile:
    p, q = params.get("alpha_p"), params.get("alpha_q")
    if p is None:
        return PotentialProfile.golden(V=V, h=h, length=L_x)
    return PotentialProfile(V=V, h=h, alpha_p=int(p), alpha_q=int(q), length=L_x)


def _selector_from(sel: dict | None) -> eigen.StateSelector:
    sel = sel or {}
    return eigen.StateSelector(
        rule=sel.get("rule", "edge-min-real"),
        gap_edge=sel.get("gap_edge", 1.0),
        edge_threshold=sel.get("edge_threshold", 0.5),
    )


def _nan_row() -> dict:
    keys = ("e_g_re", "e_g_im", "e_f_re", "e_f_im", "gap", "ipr_g_full",
            "ipr_g_chain", "ipr_g_x", "edge_density_g", "fidelity")
    return {k: float("nan") for k in keys}


def _cylinder_point(H, lattice, selector, gap_edge: float,
                    prev_vec: np.ndarray | None):
    """Observables of one cylinder operator; returns (row, ground vector)."""
    spec = eigen.decompose(H)
    w, vr = spec.eigenvalues, spec.right_vectors
    p2 = np.abs(vr) ** 2
    weight = p2.sum(axis=0)
    sites2 = lattice.boundary_sites(2)
    dens2 = p2[sites2, :].sum(axis=0) / weight
    chain = lattice.boundary_chain()

    row = {
        "max_im_all": float(np.abs(w.imag).max()),
        "residual_max": float(spec.residuals.max()),
    }
    ingap = np.abs(w.real) < gap_edge
    row["max_im_ingap"] = float(np.abs(w.imag[ingap]).max()) if ingap.any() else 0.0
    ipr_all = (p2**2).sum(axis=0) / weight**2
    window = ingap & (ipr_all < 0.3)
    row["n_window"] = int(window.sum())
    row["max_im_window"] = float(np.abs(w.imag[window]).max()) if window.any() else 0.0

    g = eigen.select_state(spec, selector, edge_density=dens2)
    family = np.flatnonzero(dens2 > selector.edge_threshold)
    row["n_family"] = int(len(family))
    order = family[np.lexsort((family, w.imag[family], w.real[family]))]
    e_g = w[g]
    row["e_g_re"], row["e_g_im"] = float(e_g.real), float(e_g.imag)
    if len(order) > 1:
        nxt = order[1] if order[0] == g else order[0]
        e_f = w[nxt]
        row["e_f_re"], row["e_f_im"] = float(e_f.real), float(e_f.imag)
        row["gap"] = float(abs(e_f - e_g))
    else:
        row["e_f_re"] = row["e_f_im"] = row["gap"] = float("nan")

    psi_g = vr[:, g]
    pg = p2[:, g] / weight[g]
    row["ipr_g_full"] = float((pg**2).sum())
    chain_w = pg[chain].sum()
    row["ipr_g_chain"] = float((pg[chain] ** 2).sum() / chain_w**2)
    marg = pg.reshape(lattice.L_y, lattice.L_x, 2).sum(axis=(0, 2))
    row["ipr_g_x"] = float((marg**2).sum() / marg.sum() ** 2)
    row["edge_density_g"] = float(dens2[g])
    row["phase"] = classify_phase(row["ipr_g_chain"], len(chain),
                                  row["max_im_window"])
    if prev_vec is not None:
        try:
            row["fidelity"] = observables.edge_fidelity(prev_vec, psi_g, chain)
        except observables.UndefinedObservableError:
            row["fidelity"] = float("nan")
    else:
        row["fidelity"] = 1.0
    return row, psi_g


def _chain_task_rows(task: dict, on_row=None):
    """Execute one h-chain; returns (rows, failures).

    on_row, when given, is called with each finished row (sequential
    checkpointing); the pool path cannot use it across processes.
    """
    model = task["model"]
    params = task["params"]
    L_x, L_y = int(task["L_x"]), int(task["L_y"])
    V = float(task["V"])
    h_values = np.asarray(task["h_values"], dtype=float)
    selector = _selector_from(task.get("selector"))
    gap_edge = float(params.get("gap_edge", 1.0))
    rows_done = task.get("rows_done") or []

    rows, failures = [], []
    prev_vec = None
    start = len(rows_done)
    base = None
    lattice = None
    if model == "haldane-cylinder":
        base = build_haldane_cylinder(
            L_x, L_y, params.get("t1", 1.0), params.get("t2", 0.2),
            params.get("phi", math.pi / 2))
        lattice = base.lattice

    def _one(h: float):
        profile = _profile_for(L_x, V, h, params)
        ident = {"model": model, "L_x": L_x, "L_y": L_y, "V": V, "h": float(h),
                 "alpha_p": profile.alpha_p, "alpha_q": profile.alpha_q}
        if model == "haldane-cylinder":
            H = add_boundary_potential(base, lattice, profile,
                                       rows=int(params.get("rows", 1)))
            row, vec = _cylinder_point(H, lattice, selector, gap_edge, prev_vec)
        elif model == "aah-chain":
            H = build_aah_chain(L_x, params.get("t1", 1.0), profile,
                                boundary=params.get("boundary", "periodic"))
            row, vec = _flat_chain_point(H, prev_vec)
        else:  # two-chain
            H = build_two_chain(L_x, params.get("t1", 1.0),
                                params.get("lambda", 1.0), profile)
            row, vec = _flat_chain_point(H, prev_vec)
        ident.update(row)
        return ident, vec

    if start:  # reseed the fidelity chain without re-recording done points
        old = prev_vec
        try:
            _, prev_vec = _one(float(h_values[start - 1]))
        except Exception:
            prev_vec = old

    for h in h_values[start:]:
        try:
            row, prev_vec = _one(float(h))
        except (eigen.SelectionError, eigen.ConvergenceError,
                observables.UndefinedObservableError, GeometryError) as err:
            row = {"model": model, "L_x": L_x, "L_y": L_y, "V": V,
                   "h": float(h), "error": type(err).__name__}
            row.update(_nan_row())
            failures.append({"task": f"{model} L_x={L_x} L_y={L_y} V={V}",
                             "h": float(h), "error": str(err)})
            prev_vec = None
        rows.append(row)
        if on_row is not None:
            on_row(row)
    return rows, failures


def _flat_chain_point(H, prev_vec):
    """min-real ground-state observables for the 1D chain models."""
    spec = eigen.decompose(H)
    w, vr = spec.eigenvalues, spec.right_vectors
    sel = eigen.StateSelector(rule="min-real")
    g = eigen.select_state(spec, sel)
    p2 = np.abs(vr) ** 2
    weight = p2.sum(axis=0)
    pg = p2[:, g] / weight[g]
    n = len(pg)
    row = {
        "e_g_re": float(w[g].real), "e_g_im": float(w[g].imag),
        "ipr_g_full": float((pg**2).sum()),
        "max_im_all": float(np.abs(w.imag).max()),
        "residual_max": float(spec.residuals.max()),
    }
    if spec.n > g + 1:
        e_f = w[g + 1]
        row["e_f_re"], row["e_f_im"] = float(e_f.real), float(e_f.imag)
        row["gap"] = float(abs(e_f - w[g]))
    row["phase"] = classify_phase(row["ipr_g_full"], n, row["max_im_all"])
    psi_g = vr[:, g]
    if prev_vec is not None:
        row["fidelity"] = observables.edge_fidelity(prev_vec, psi_g,
                                                    np.arange(n))
    else:
        row["fidelity"] = 1.0
    return row, psi_g


# ---------------------------------------------------------------------------
# runners


@dataclass
class SweepResult:
    records: list
    failures: list
    extras: dict
    manifest_path: str

    @property
    def ok(self) -> bool:
        return not self.failures


def _chain_keys_of(rows: list):
    keys = {}
    for r in rows:
        k = (r.get("model"), r.get("L_x"), r.get("L_y"), _fmt(r.get("V")))
        keys.setdefault(k, []).append(r)
    return keys


def _run_chains(cfg: SweepConfig, command: str, tasks: list, stem: str):
    """Common execution path: checkpoint, workers, sort, CSV + manifest."""
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    columns = None
    rows, failures = [], []

    ckpt = _Checkpoint(os.path.join(out_dir, stem + ".partial.csv"),
                       _COLUMN_ORDER)
    done_rows = ckpt.load()
    done_by_key = _chain_keys_of(done_rows)

    pending = []
    for task in tasks:
        key = (task["model"], task["L_x"], task["L_y"], _fmt(task["V"]))
        prior = done_by_key.get(key, [])
        # keep only the contiguous prefix matching this chain's h order
        h_done = [r.get("h") for r in sorted(prior, key=lambda r: r.get("h", 0.0))]
        prefix = 0
        for h in task["h_values"]:
            if prefix < len(h_done) and abs(h_done[prefix] - h) < 1e-9:
                prefix += 1
            else:
                break
        kept = sorted(prior, key=lambda r: r.get("h", 0.0))[:prefix]
        rows.extend(kept)
        if prefix == len(task["h_values"]):
            continue
        task = dict(task)
        task["rows_done"] = [{"h": r["h"]} for r in kept]
        pending.append(task)

    if pending and cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for new_rows, errs in pool.map(_chain_task_rows, pending):
                for r in new_rows:
                    ckpt.append(r)
                rows.extend(new_rows)
                failures.extend(errs)
    else:
        for task in pending:
            # per-point checkpoint: a multi-hour chain restarts mid-way
            new_rows, errs = _chain_task_rows(task, on_row=ckpt.append)
            rows.extend(new_rows)
            failures.extend(errs)

    rows = sort_records(rows)
    csv_path = os.path.join(out_dir, stem + ".csv")
    n = write_records_csv(csv_path, rows, columns)
    ckpt.close(remove=not failures)
    return rows, failures, [(csv_path, n)]


def run_phase_diagram(cfg: SweepConfig) -> SweepResult:
    """Grid over (V, h) for every configured size.

    A 1x1 grid is exactly one build + decompose + observable evaluation,
    so it can be cross-checked against a direct call.
    """
    if cfg.model not in ("haldane-cylinder", "aah-chain", "two-chain"):
        raise ConfigError(f"phase-diagram does not run model {cfg.model!r}")
    stem = f"phase-diagram-{cfg.config_hash()}"
    manifest = _load_if_complete(cfg.output_dir, stem, cfg)
    if manifest is not None:
        rows = load_records_csv(os.path.join(cfg.output_dir,
                                             manifest["files"][0]["path"]))
        return SweepResult(rows, [], {"resumed": True},
                           os.path.join(cfg.output_dir, stem + ".manifest.json"))

    h_values = axis_values(cfg, "h")
    v_values = axis_values(cfg, "V")
    tasks = []
    for L_x, L_y in cfg.sizes:
        for V in v_values:
            tasks.append({"model": cfg.model, "L_x": int(L_x), "L_y": int(L_y),
                          "V": float(V), "h_values": list(map(float, h_values)),
                          "params": cfg.params, "selector": cfg.selector})
    rows, failures, files = _run_chains(cfg, "phase-diagram", tasks, stem)
    mpath = write_manifest(cfg.output_dir, stem, cfg, "phase-diagram",
                           files, failures)
    return SweepResult(rows, failures, {}, mpath)


def _size_summary(cfg: SweepConfig, rows: list, L_x: int, L_y: int,
                  V: float) -> dict:
    """Transition locations and counts for one size's h-chain."""
    mine = [r for r in rows
            if r.get("L_x") == L_x and r.get("L_y") == L_y
            and abs(r.get("V", V) - V) < 1e-12 and "error" not in r]
    mine = sorted(mine, key=lambda r: r["h"])
    grid = np.array([r["h"] for r in mine])
    summary = {"L_x": L_x, "L_y": L_y, "V": V, "n_points": len(mine)}
    if not mine:
        return summary

    chain_sites = 2 * L_x
    ipr = np.array([r.get("ipr_g_chain", r.get("ipr_g_full", np.nan))
                    for r in mine])
    low = 2.0 / chain_sites
    up_low = threshold_crossings(grid, ipr, low)
    up_high = threshold_crossings(grid, ipr, 0.5)
    summary["h2"] = up_high[-1] if up_high else float("nan")
    # the extended state's IPR can drift over the low threshold and retreat
    # at a branch switch well before the localization jump; take the first
    # crossing that holds until the h2 crossing (or the end of the grid)
    stop = int(grid.searchsorted(summary["h2"])) if up_high else len(grid)
    summary["h1"] = float("nan")
    for hc in up_low:
        i = int(grid.searchsorted(hc))
        if np.all(ipr[i:max(stop, i + 1)] > low):
            summary["h1"] = hc
            break

    fid = np.array([r.get("fidelity", np.nan) for r in mine])
    summary["npt"] = observables.count_npt(np.nan_to_num(fid, nan=1.0))
    # zero count depends only on alpha and length, not on V or h sign
    zc = observables.count_imag_zeros(_profile_for(L_x, V, 1.0, cfg.params))
    summary["n_im_zeros"] = int(zc)
    summary["zeros_degenerate"] = bool(zc.degenerate)

    im_curve = np.array([r.get("max_im_window", np.nan) for r in mine])
    marks = observables.detect_transitions(grid, np.nan_to_num(im_curve),
                                           "onset-of-max-im")
    if len(marks) == 2:
        summary["h1_im"], summary["h2_im"] = marks
    return summary


def run_size_scan(cfg: SweepConfig) -> SweepResult:
    """Per-size h-chains plus transition/NPT summaries and scaling fits."""
    if cfg.model != "haldane-cylinder":
        raise ConfigError("size-scan runs the cylinder model only")
    stem = f"size-scan-{cfg.config_hash()}"
    manifest = _load_if_complete(cfg.output_dir, stem, cfg)
    if manifest is not None:
        rows = load_records_csv(os.path.join(cfg.output_dir,
                                             manifest["files"][0]["path"]))
        extras = {k: manifest[k] for k in ("summary", "fits") if k in manifest}
        extras["resumed"] = True
        return SweepResult(rows, [], extras,
                           os.path.join(cfg.output_dir, stem + ".manifest.json"))

    V = float(axis_values(cfg, "V")[0])
    sizes = sorted(cfg.sizes, key=lambda p: (int(p[0]), int(p[1])))
    overrides = cfg.params.get("h_step_overrides", {})

    def _h_grid(L_x: int) -> np.ndarray:
        step = overrides.get(str(L_x))
        axis = cfg.grid.get("h")
        if step is None or axis is None:
            return axis_values(cfg, "h")
        n = int(math.floor((axis["stop"] - axis["start"]) / step + 0.5)) + 1
        return np.round(axis["start"] + step * np.arange(n), 10)

    tasks = [{"model": cfg.model, "L_x": int(L_x), "L_y": int(L_y),
              "V": V, "h_values": list(map(float, _h_grid(int(L_x)))),
              "params": cfg.params, "selector": cfg.selector}
             for L_x, L_y in sizes]
    rows, failures, files = _run_chains(cfg, "size-scan", tasks, stem)

    summary = [_size_summary(cfg, rows, int(L_x), int(L_y), V)
               for L_x, L_y in sizes]
    fits = {}
    by_Lx = {}
    for s in summary:
        if not math.isnan(s.get("h2", float("nan"))):
            by_Lx.setdefault(s["L_x"], s)
    if len(by_Lx) >= 2:
        lx = np.array(sorted(by_Lx))
        h2 = np.array([by_Lx[l]["h2"] for l in lx])
        if len(set(h2.tolist())) > 1:
            k, c = np.polyfit(h2, np.log(lx), 1)
            fits["log_Lx_vs_h2"] = {"k": float(k), "c": float(c)}
        npt = np.array([by_Lx[l]["npt"] for l in lx], dtype=float)
        slope, intercept = np.polyfit(lx, npt, 1)
        fits["npt_vs_Lx"] = {"slope": float(slope), "intercept": float(intercept)}

    out_dir = cfg.output_dir
    sum_path = os.path.join(out_dir, stem + "-summary.csv")
    sum_cols = ["L_x", "L_y", "V", "n_points", "h1", "h2", "h1_im", "h2_im",
                "npt", "n_im_zeros", "zeros_degenerate"]
    with open(sum_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(sum_cols) + "\n")
        for s in summary:
            fh.write(",".join(_fmt(s.get(c)) for c in sum_cols) + "\n")
    files.append((sum_path, len(summary)))
    mpath = write_manifest(out_dir, stem, cfg, "size-scan", files, failures,
                           extras={"summary": summary, "fits": fits})
    return SweepResult(rows, failures, {"summary": summary, "fits": fits}, mpath)


# ---------------------------------------------------------------------------
# impurity scan


def _split_pairs(w, boundary, im_floor: float = 0.15,
                 re_tol: float = 0.05, im_split: float = 0.1) -> int:
    """Count Re-degenerate, Im-split pairs among amplified boundary states.

    A collision leaves two states sharing a real part while their imaginary
    parts diverge; counting such pairs (greedily, strongest first) flags the
    transition without tracking individual levels through rank reshuffles.
    The `im_floor` keeps near-real edge states out of the candidate set.
    """
    cand = [int(i) for i in boundary if abs(w[i].imag) > im_floor]
    cand.sort(key=lambda i: -abs(w[i].imag))
    used: set = set()
    n = 0
    for a in cand:
        if a in used:
            continue
        for b in cand:
            if b == a or b in used:
                continue
            if (abs(w[a].real - w[b].real) < re_tol
                    and abs(w[a].imag - w[b].imag) > im_split):
                used.update((a, b))
                n += 1
                break
    return n


def _impurity_row(base, lattice, anchor: int, separation: int, gamma: float,
                  n_track: int = 4, im_threshold: float = 0.05):
    spec = eigen.decompose(
        add_impurities(base, lattice, ImpuritySpec(anchor, separation, gamma)))
    w, vr = spec.eigenvalues, spec.right_vectors
    p2 = np.abs(vr) ** 2
    dens2 = p2[lattice.boundary_sites(2), :].sum(axis=0) / p2.sum(axis=0)
    boundary = np.flatnonzero(dens2 > 0.5)
    row = {"gamma": float(gamma), "separation": separation,
           "n_boundary": int(len(boundary)),
           "n_complex": int(np.sum(np.abs(w[boundary].imag) > im_threshold)),
           "n_split_pairs": _split_pairs(w, boundary),
           "max_im_all": float(np.abs(w.imag).max()),
           "residual_max": float(spec.residuals.max())}
    if len(boundary) < n_track:
        row["error"] = "too-few-boundary-states"
        return row, w, dens2
    wb = w[boundary]
    top = boundary[np.lexsort((boundary, wb.real, -np.abs(wb.imag)))][:n_track]
    for i, idx in enumerate(top, start=1):
        row[f"re{i}"] = float(w[idx].real)
        row[f"im{i}"] = float(w[idx].imag)
    row["dre_12"] = abs(row["re1"] - row["re2"])
    row["dim_12"] = abs(row["im1"] - row["im2"])
    row["dre_34"] = abs(row["re3"] - row["re4"])
    row["dim_34"] = abs(row["im3"] - row["im4"])
    return row, w, dens2


def _count_rises(gammas, counts):
    """(gamma, level_before, level_after) wherever the count increases.

    Only rises count: a pair can later drop out of the candidate set when
    its attenuated partner decays back toward the real axis, and that decay
    is not a transition.
    """
    out = []
    for i in range(1, len(counts)):
        if counts[i] > counts[i - 1]:
            out.append((gammas[i], counts[i - 1], counts[i]))
    return out


def run_impurity_scan(cfg: SweepConfig) -> SweepResult:
    """Two-pass gamma scan of the boundary impurity pair.

    A collision event is the appearance of a Re-degenerate pair whose
    imaginary parts have split: before the collision the two amplified
    states differ in Re and share Im, after it the roles swap.  The coarse
    pass watches the split-pair count for rises, a fine pass (step
    `refine_step`) pins the first gamma at the new level.  Counting pairs
    rather than chasing ranked degeneracies keeps the detection stable
    after earlier collisions reshuffle the |Im| ranking.
    """
    if cfg.model != "haldane-cylinder":
        raise ConfigError("impurity-scan runs the cylinder model only")
    stem = f"impurity-scan-{cfg.config_hash()}"
    manifest = _load_if_complete(cfg.output_dir, stem, cfg)
    if manifest is not None:
        rows = load_records_csv(os.path.join(cfg.output_dir,
                                             manifest["files"][0]["path"]))
        extras = {"events": manifest.get("events", []), "resumed": True}
        return SweepResult(rows, [], extras,
                           os.path.join(cfg.output_dir, stem + ".manifest.json"))

    params = cfg.params
    L_x, L_y = map(int, cfg.sizes[0])
    base = build_haldane_cylinder(L_x, L_y, params.get("t1", 1.0),
                                  params.get("t2", 0.2),
                                  params.get("phi", math.pi / 2))
    lattice = base.lattice
    V = float(axis_values(cfg, "V")[0])
    if V != 0.0:
        h = float(axis_values(cfg, "h")[0])
        base = add_boundary_potential(base, lattice,
                                      _profile_for(L_x, V, h, params),
                                      rows=int(params.get("rows", 1)))
    anchor = int(params.get("anchor", default_impurity_anchor(lattice)))
    separations = [int(s) for s in params.get("separations", [1, 2])]
    refine_step = float(params.get("refine_step", 0.002))
    im_threshold = float(params.get("im_threshold", 0.05))
    snapshots = [float(s) for s in params.get("spectrum_snapshots", [])]

    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    gammas = axis_values(cfg, "gamma")
    coarse_step = float(cfg.grid["gamma"]["step"]) if "gamma" in cfg.grid else 0.05

    rows, spectra_rows, failures, events = [], [], [], []
    for sep in separations:
        table = {}
        for g in gammas:
            try:
                row, w, dens2 = _impurity_row(base, lattice, anchor, sep,
                                              float(g), im_threshold=im_threshold)
            except (eigen.ConvergenceError, GeometryError) as err:
                failures.append({"separation": sep, "gamma": float(g),
                                 "error": str(err)})
                continue
            row.update({"model": cfg.model, "L_x": L_x, "L_y": L_y, "V": V})
            row["pass"] = "coarse"
            table[round(float(g), 9)] = row
            if any(abs(g - s) < 1e-9 for s in snapshots):
                for idx, (e, d) in enumerate(zip(w, dens2)):
                    spectra_rows.append(
                        {"model": cfg.model, "separation": sep,
                         "gamma": float(g), "idx": idx, "re": float(e.real),
                         "im": float(e.imag), "d2": float(d)})

        coarse = sorted(table.values(), key=lambda r: r["gamma"])
        steps = _count_rises([r["gamma"] for r in coarse],
                             [r["n_split_pairs"] for r in coarse])
        for cand, before, after in steps:
            lo = max(cand - coarse_step, float(gammas[0]))
            fine = np.round(np.arange(lo, cand + refine_step / 2, refine_step), 9)
            hit, min_dre = float(cand), float("inf")
            level = before
            for g in fine:
                key = round(float(g), 9)
                if key not in table:
                    try:
                        row, w, dens2 = _impurity_row(base, lattice, anchor, sep,
                                                      float(g),
                                                      im_threshold=im_threshold)
                    except (eigen.ConvergenceError, GeometryError) as err:
                        failures.append({"separation": sep,
                                         "gamma": float(g), "error": str(err)})
                        continue
                    row.update({"model": cfg.model, "L_x": L_x, "L_y": L_y,
                                "V": V})
                    row["pass"] = "fine"
                    table[key] = row
                row = table[key]
                min_dre = min(min_dre, row.get("dre_12", float("inf")),
                              row.get("dre_34", float("inf")))
                if row["n_split_pairs"] >= level + 1:
                    hit = float(g)
                    break
            events.append({"separation": sep, "gamma": hit,
                           "n_pairs_before": int(before),
                           "n_pairs_after": int(after),
                           "min_dre_near": min_dre})
        rows.extend(sorted(table.values(), key=lambda r: r["gamma"]))

    events.sort(key=lambda e: (e["separation"], e["gamma"]))
    rows = sort_records(rows)
    csv_path = os.path.join(out_dir, stem + ".csv")
    files = [(csv_path, write_records_csv(csv_path, rows))]
    if spectra_rows:
        spath = os.path.join(out_dir, stem + "-spectra.csv")
        files.append((spath, write_records_csv(spath, sort_records(spectra_rows))))
    mpath = write_manifest(out_dir, stem, cfg, "impurity-scan", files, failures,
                           extras={"events": events,
                                   "anchor": anchor,
                                   "im_threshold": im_threshold})
    return SweepResult(rows, failures, {"events": events,
                                        "spectra": spectra_rows}, mpath)


# ---------------------------------------------------------------------------
# domain wall and four-site


def run_domain_wall(cfg: SweepConfig) -> SweepResult:
    """Gain/loss wall on the boundary: amplified-state profile vs theory.

    For each (h, gamma) the most-amplified boundary state's x-resolved
    density is compared with the chiral prediction carrying the +/- gamma
    domain term; rows hold the Pearson correlation, a companion file holds
    the two profiles site by site.  The mode velocity is fitted once per h
    from the wall-free spectrum.
    """
    if cfg.model != "haldane-cylinder":
        raise ConfigError("domain-wall runs the cylinder model only")
    stem = f"domain-wall-{cfg.config_hash()}"
    manifest = _load_if_complete(cfg.output_dir, stem, cfg)
    if manifest is not None:
        rows = load_records_csv(os.path.join(cfg.output_dir,
                                             manifest["files"][0]["path"]))
        return SweepResult(rows, [], {"resumed": True},
                           os.path.join(cfg.output_dir, stem + ".manifest.json"))

    params = cfg.params
    L_x, L_y = map(int, cfg.sizes[0])
    if L_x % 2:
        raise ConfigError("domain wall needs even L_x")
    base = build_haldane_cylinder(L_x, L_y, params.get("t1", 1.0),
                                  params.get("t2", 0.2),
                                  params.get("phi", math.pi / 2))
    lattice = base.lattice
    V = float(axis_values(cfg, "V")[0])
    h_values = axis_values(cfg, "h")
    gammas = axis_values(cfg, "gamma")
    v_f = params.get("v_f")

    rows, profile_rows, failures = [], [], []
    for h in h_values:
        profile = _profile_for(L_x, V, float(h), params)
        withV = add_boundary_potential(base, lattice, profile,
                                       rows=int(params.get("rows", 1)))
        vf_h = v_f
        if vf_h is None:
            # anchor the mode velocity on the wall-free operator; the wall
            # pairs up the in-gap levels and spoils a per-gamma refit
            try:
                spec0 = eigen.decompose(withV)
                w0 = spec0.eigenvalues
                p20 = np.abs(spec0.right_vectors) ** 2
                d20 = (p20[lattice.boundary_sites(2), :].sum(axis=0)
                       / p20.sum(axis=0))
                ingap = w0.real[(np.abs(w0.real) < 0.5) & (d20 > 0.5)]
                vf_h = theory.fit_v_f(ingap, L_x)
            except (eigen.ConvergenceError, theory.TheoryInputError) as err:
                failures.append({"h": float(h), "gamma": None,
                                 "error": f"velocity fit: {err}"})
                continue
        for gamma in gammas:
            try:
                H = add_domain_wall(withV, lattice, float(gamma))
                spec = eigen.decompose(H)
                w, vr = spec.eigenvalues, spec.right_vectors
                p2 = np.abs(vr) ** 2
                dens2 = p2[lattice.boundary_sites(2), :].sum(axis=0) / p2.sum(axis=0)
                edge = np.flatnonzero(dens2 > 0.5)
                if not len(edge):
                    raise eigen.SelectionError("no boundary-supported state")
                # most-amplified state of the boundary family; the global
                # max-imag state sits in the bulk once the dissipative
                # potential is on and never sees the wall
                a = int(edge[np.argmax(w[edge].imag)])
                pa = p2[:, a] / p2[:, a].sum()
                marg = pa.reshape(L_y, L_x, 2).sum(axis=(0, 2))
                marg = marg / marg.sum()
                half = L_x // 2
                wall = lambda x: float(gamma) * (1.0 if (x % L_x) < half else -1.0)
                dens_th, closure = theory.chiral_wavefunction(
                    profile, vf_h, domain_term=wall)
                r = float(np.corrcoef(marg, dens_th)[0, 1])
                rows.append({"model": cfg.model, "L_x": L_x, "L_y": L_y,
                             "V": V, "h": float(h), "gamma": float(gamma),
                             "e_g_re": float(w[a].real),
                             "e_g_im": float(w[a].imag),
                             "max_im_all": float(np.abs(w.imag).max()),
                             "corr": r, "v_f": float(vf_h),
                             "closure": float(closure),
                             "residual_max": float(spec.residuals.max())})
                for x in range(L_x):
                    profile_rows.append({"model": cfg.model, "h": float(h),
                                         "gamma": float(gamma), "x": x,
                                         "density_num": float(marg[x]),
                                         "density_chiral": float(dens_th[x])})
            except (eigen.SelectionError, eigen.ConvergenceError,
                    theory.TheoryInputError) as err:
                failures.append({"h": float(h), "gamma": float(gamma),
                                 "error": str(err)})
    rows = sort_records(rows)
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, stem + ".csv")
    files = [(csv_path, write_records_csv(csv_path, rows))]
    ppath = os.path.join(out_dir, stem + "-profiles.csv")
    files.append((ppath, write_records_csv(ppath, sort_records(profile_rows))))
    mpath = write_manifest(out_dir, stem, cfg, "domain-wall", files, failures)
    return SweepResult(rows, failures, {"profiles": profile_rows}, mpath)


def run_four_site(cfg: SweepConfig) -> SweepResult:
    """Dense and closed-form spectra of the 4-site chains over gamma."""
    if cfg.model != "four-site":
        raise ConfigError("four-site runs the four-site model only")
    stem = f"four-site-{cfg.config_hash()}"
    params = cfg.params
    t = float(params.get("t", 1.0))
    kinds = params.get("kinds", ["non-adjacent", "adjacent"])
    gammas = axis_values(cfg, "gamma")
    rows, failures = [], []
    eps = {}
    for kind in kinds:
        eps[kind] = [float(g) for g in theory.exceptional_points(kind, t)]
        for gamma in gammas:
            H = build_four_site(kind, t, float(gamma))
            w = eigen.decompose(H).eigenvalues
            closed = theory.four_site_eigs_closed(kind, t, float(gamma))
            order = np.lexsort((w.imag, w.real.round(10)))
            w = w[order]
            row = {"model": "four-site", "kind": kind, "t": t,
                   "gamma": float(gamma),
                   "max_im_all": float(np.abs(w.imag).max()),
                   "closed_gap": float(np.max(np.abs(np.sort_complex(np.round(w, 8))
                                                     - np.sort_complex(np.round(closed, 8)))))}
            for i, e in enumerate(w, start=1):
                row[f"re{i}"], row[f"im{i}"] = float(e.real), float(e.imag)
            rows.append(row)
    rows = sort_records(rows)
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, stem + ".csv")
    files = [(csv_path, write_records_csv(csv_path, rows))]
    mpath = write_manifest(out_dir, stem, cfg, "four-site", files, failures,
                           extras={"exceptional_points": eps})
    return SweepResult(rows, failures, {"exceptional_points": eps}, mpath)


# ---------------------------------------------------------------------------
# figure export

_FIGURES = {
    "fig1b": {"columns": ("V", "h", "ipr_g_chain", "phase"),
              "where": lambda r: r.get("model") == "haldane-cylinder"},
    "fig2a": {"columns": ("L_x", "h1", "h2"),
              "where": lambda r: "h1" in r},
    "fig2b": {"columns": ("L_x", "npt", "n_im_zeros"),
              "where": lambda r: "npt" in r},
    "fig2c": {"columns": ("L_x", "h", "fidelity"),
              "where": lambda r: r.get("model") == "haldane-cylinder"},
    "fig3a": {"columns": ("gamma", "idx", "re", "im"),
              "where": lambda r: r.get("separation") == 1},
    "fig3b": {"columns": ("gamma", "idx", "re", "im"),
              "where": lambda r: r.get("separation") == 2},
    "fig4d": {"columns": ("h", "max_im_window", "max_im_all"),
              "where": lambda r: r.get("model") == "haldane-cylinder"
              and abs(r.get("V", 0.0) - 1.0) < 1e-12},
    "fig4f": {"columns": ("V", "h", "ipr_g_full", "phase"),
              "where": lambda r: r.get("model") == "two-chain"},
    "fig5a": {"columns": ("h", "gamma", "x", "density_num", "density_chiral"),
              "where": lambda r: "density_num" in r},
    "fig5b": {"columns": ("h", "gamma", "corr", "max_im_all"),
              "where": lambda r: "corr" in r},
}


def emit_plot_data(records: list, figure_id: str, out_dir: str = "data") -> str:
    """Write <figure_id>.csv with exactly the columns that figure needs.

    Raises CoverageError when the figure is unknown or the records do not
    carry the needed columns.
    """
    spec_ = _FIGURES.get(figure_id)
    if spec_ is None:
        raise CoverageError(f"unknown figure {figure_id!r}; "
                            f"known: {sorted(_FIGURES)}")
    picked = [r for r in records if spec_["where"](r)]
    cols = list(spec_["columns"])
    picked = [r for r in picked if all(c in r for c in cols)]
    if not picked:
        raise CoverageError(
            f"records do not cover {figure_id} (need columns {cols})")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, figure_id + ".csv")
    write_records_csv(path, sort_records(picked), cols)
    return path
