"""Experiment runner: simulate a cabin, design filters with every method,
evaluate them at every listening position and summarise.

Output layout under ``config.out``::

    config.ini
    irs/<position>/ls00.wav .. manifest.json
    filters/<method>/az000.wav + az000.json
    logs/<method>_az000.csv           training / solver breakdown logs
    design.csv                        per-job losses, status, iterations
    timings.csv                       per-job wall time (not deterministic)
    metrics.csv                       one row per (method, source, position)
    sspm/<method>_<position>.csv/.pgm/.png
    dominance.csv                     diag dominance per (method, position)
    failures.csv
    report.md, figures/*.png
"""
from __future__ import annotations

import configparser
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import beamforming as bfm
from . import dsp, io, metrics, plotting
from . import objective as obj
from . import optimize as opt
from . import room as rm

log = logging.getLogger(__name__)

METHODS = ("ori", "fd", "cvx", "nn", "spmnet", "spmnet3")
LEARNED = ("cvx", "nn", "spmnet", "spmnet3")
ALL_POSITIONS = tuple(rm.POSITIONS)
METRIC_HEADER = (
    ["method", "source_azimuth", "position", "nprq_pre", "nprq_post"]
    + [f"sd_band{i}" for i in range(1, 7)]
    + ["sd_avg5", "sd_avg6"]
)
TERM_HEADER = [f"term{i}" for i in range(1, 6)]


@dataclass
class ExperimentConfig:
    """Everything a campaign needs; defaults are the desk-scale setting."""

    seed: int = 0
    sources: tuple = tuple(float(a) for a in range(0, 360, 30))
    source_distance: float = 1.0
    methods: tuple = METHODS
    positions: tuple = ALL_POSITIONS
    design_position: str = "O"
    multi_positions: tuple = ("LL", "O", "RR")
    out: str = "campaign"
    jobs: int = 1
    # room and array
    n_mics: int = 16
    mic_radius: float = 0.03
    absorption_lo: float = 0.3
    absorption_hi: float = 0.6
    ir_len: int = 1024
    max_order: int = 20
    filter_len: int = 512
    # objective
    weights: tuple = (1.0, 1.0, 0.1, 0.1, 1e4)
    p: float = 30.0
    spm_normalize: bool = True
    pool_std: bool = False
    grid_azimuths: int = 72
    grid_freqs: int = 64
    grid_f_lo: float = 300.0
    grid_f_hi: float = 4000.0
    # solvers
    lr: float = 1e-3
    deep_iter: int = 2000
    patience: int = 500
    hidden: tuple = (32, 32)
    cvx_iter: int = 5000
    cvx_tol: float = 1e-6
    fd_beta_rel: float = 0.01
    # evaluation
    dominance_tolerance: float = 15.0

    def __post_init__(self):
        self.sources = tuple(float(a) % 360.0 for a in self.sources)
        self.methods = tuple(self.methods)
        self.positions = tuple(self.positions)
        self.multi_positions = tuple(self.multi_positions)
        self.weights = tuple(float(w) for w in self.weights)
        self.hidden = tuple(int(x) for x in self.hidden)
        self.validate()

    def validate(self):
        if not self.methods or not self.sources or not self.positions:
            raise ValueError("methods, sources and positions must be non-empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        bad = [p for p in self.positions + self.multi_positions if p not in rm.POSITIONS]
        if bad:
            raise ValueError(f"unknown positions {bad}")
        if len(set(self.sources)) != len(self.sources):
            raise ValueError("duplicate source azimuths")
        if self.design_position not in self.positions:
            raise ValueError(f"design position {self.design_position} is not simulated")
        if "spmnet3" in self.methods and not set(self.multi_positions) <= set(self.positions):
            raise ValueError(f"spmnet3 needs positions {sorted(self.multi_positions)} in the campaign")
        if "spmnet3" in self.methods and len(self.multi_positions) < 2:
            raise ValueError("spmnet3 needs at least two design positions")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    # derived ------------------------------------------------------------
    @property
    def grid(self):
        return bfm.default_grid(self.grid_azimuths, self.grid_freqs, self.grid_f_lo, self.grid_f_hi)

    def loss_config(self):
        return obj.LossConfig(weights=self.weights, p=self.p, spm_normalize=self.spm_normalize,
                              pool_std=self.pool_std, grid=self.grid)

    @property
    def resp_len(self):
        return self.ir_len + self.filter_len - 1


# ------------------------------------------------------------ config files

_SECTIONS = {
    "experiment": ("seed", "sources", "source_distance", "methods", "positions", "design_position",
                   "multi_positions", "out", "jobs"),
    "room": ("n_mics", "mic_radius", "absorption_lo", "absorption_hi", "ir_len", "max_order", "filter_len"),
    "loss": ("weights", "p", "spm_normalize", "pool_std", "grid_azimuths", "grid_freqs", "grid_f_lo",
             "grid_f_hi"),
    "solver": ("lr", "deep_iter", "patience", "hidden", "cvx_iter", "cvx_tol", "fd_beta_rel"),
    "evaluate": ("dominance_tolerance",),
}


def _to_text(v):
    if isinstance(v, tuple):
        return ", ".join(_to_text(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(text, default):
    if isinstance(default, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        items = [s.strip() for s in text.split(",") if s.strip()]
        kind = type(default[0]) if default else str
        return tuple(kind(s) for s in items)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def config_to_ini(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        cp[section] = {k: _to_text(getattr(cfg, k)) for k in keys}
    lines = []
    for section in cp.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in cp[section].items()]
        lines.append("")
    return "\n".join(lines)


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a ``key = value`` INI file; unknown keys are rejected."""
    defaults = {f.name: f.default for f in fields(ExperimentConfig)}
    values = dict(defaults)
    if path is not None:
        cp = configparser.ConfigParser()
        if not cp.read(path, encoding="utf-8"):
            raise FileNotFoundError(f"cannot read config {path}")
        for section in cp.sections():
            if section not in _SECTIONS:
                raise ValueError(f"{path}: unknown section [{section}]")
            for key, text in cp[section].items():
                if key not in _SECTIONS[section]:
                    raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
                values[key] = _parse(text, defaults[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


# ------------------------------------------------------------ simulate


def positions_needed(cfg):
    return tuple(p for p in ALL_POSITIONS if p in set(cfg.positions))


def cmd_simulate(cfg: ExperimentConfig):
    """Write one IR dataset per listening position; returns the output paths."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(config_to_ini(cfg), encoding="utf-8")
    room, geometry = rm.synthetic_cabin(cfg.seed, cfg.n_mics, cfg.mic_radius,
                                        (cfg.absorption_lo, cfg.absorption_hi))
    paths = {}
    for pos in positions_needed(cfg):
        irs = rm.simulate_channels(room, geometry, pos, cfg.ir_len, cfg.max_order)
        paths[pos] = io.save_ir_set(out / "irs" / pos, irs, {
            "seed": cfg.seed,
            "nominal_center": geometry.center,
            "dft_length": dsp.next_pow2(cfg.resp_len),
            "grid": {"azimuths": cfg.grid.azimuths, "freqs": cfg.grid.freqs},
        })
    return paths


def load_dataset(cfg: ExperimentConfig, positions=None):
    """Load IR sets from disk, itemizing whatever is missing."""
    positions = positions or positions_needed(cfg)
    missing = [p for p in positions if not (Path(cfg.out) / "irs" / p / "manifest.json").exists()]
    if missing:
        raise FileNotFoundError(f"no simulated dataset for positions {missing} under {cfg.out}/irs; "
                                "run 'simulate' first")
    data = {p: io.load_ir_set(Path(cfg.out) / "irs" / p) for p in positions}
    return data


def make_target(cfg, irs, azimuth, center):
    """Free-field response of a virtual source fixed relative to the nominal
    head position, observed by the (possibly shifted) array in ``irs``."""
    src = rm.VirtualSource(azimuth, 0.0, cfg.source_distance)
    return rm.free_field_target(src, irs.geometry, cfg.filter_len // 2, cfg.resp_len, reference=center)


# ------------------------------------------------------------ design

_WORKER_DATA = {}


def _worker_init(cfg, data):
    _WORKER_DATA["cfg"] = cfg
    _WORKER_DATA["data"] = data


def _manifest_center(cfg):
    """Nominal head position (array centre at position O) recorded at simulation."""
    m = io.read_json(Path(cfg.out) / "irs" / cfg.design_position / "manifest.json")
    return np.asarray(m["nominal_center"], dtype=float)


def _problem(cfg, irs, azimuth, center):
    d = make_target(cfg, irs, azimuth, center)
    return obj.DesignProblem(irs.ir, d, irs.geometry, cfg.filter_len, cfg.loss_config(), irs.sample_rate)


def design_job(cfg: ExperimentConfig, data, center, method, azimuth):
    """Run one (method, source) design. Returns a dict; never raises."""
    t0 = time.perf_counter()
    log_rows = []
    try:
        irs = data[cfg.design_position]
        if method == "ori":
            res = opt.ori_filters(irs.geometry, rm.VirtualSource(azimuth, 0.0, cfg.source_distance),
                                  cfg.filter_len)
        elif method == "fd":
            d = make_target(cfg, irs, azimuth, center)
            res = opt.design_fd(irs.ir, d, cfg.filter_len, beta_rel=cfg.fd_beta_rel)
        elif method == "cvx":
            pr = _problem(cfg, irs, azimuth, center)

            def cb(it, bds):
                log_rows.append([it, cfg.design_position] + list(bds[0].terms) + [bds[0].total])

            res = opt.design_cvx(pr, max_iter=cfg.cvx_iter, tol=cfg.cvx_tol, seed=cfg.seed, callback=cb)
        elif method in ("nn", "spmnet"):
            pr = _problem(cfg, irs, azimuth, center)

            def cb(it, bds):
                log_rows.append([it, cfg.design_position] + list(bds[0].terms) + [bds[0].total])

            res = opt.design_deep(pr, method, seed=cfg.seed, lr=cfg.lr, max_iter=cfg.deep_iter,
                                  patience=cfg.patience, callback=cb, net_kwargs={"hidden": cfg.hidden})
        elif method == "spmnet3":
            probs = [_problem(cfg, data[p], azimuth, center) for p in cfg.multi_positions]

            def cb(it, bds):
                for p, b in zip(cfg.multi_positions, bds):
                    log_rows.append([it, p] + list(b.terms) + [b.total])

            res = opt.design_multi_position(probs, cfg.multi_positions, "spmnet", seed=cfg.seed, lr=cfg.lr,
                                            max_iter=cfg.deep_iter, patience=cfg.patience, callback=cb,
                                            net_kwargs={"hidden": cfg.hidden})
        else:
            raise ValueError(f"unknown method {method}")
        pr_o = _problem(cfg, irs, azimuth, center)
        eq4 = pr_o.evaluate(res.filters, "cvx")
        eq8 = pr_o.evaluate(res.filters, "spmnet")
        return {
            "method": method, "azimuth": azimuth, "ok": True, "filters": res.filters,
            "status": res.status, "iterations": res.iterations, "best_iteration": res.best_iteration,
            "eq4": eq4.total, "eq8": eq8.total, "terms": list(eq8.terms), "log": log_rows,
            "seconds": time.perf_counter() - t0,
        }
    except Exception as exc:  # noqa: BLE001 - every job failure is reported, not raised
        log.exception("design job %s @ %g deg failed", method, azimuth)
        return {"method": method, "azimuth": azimuth, "ok": False, "error": f"{type(exc).__name__}: {exc}",
                "seconds": time.perf_counter() - t0}


def _pool_design(args):
    cfg, data = _WORKER_DATA["cfg"], _WORKER_DATA["data"]
    return design_job(cfg, data, _manifest_center(cfg), *args)


def source_tag(azimuth):
    return f"az{int(round(azimuth)) % 360:03d}"


def cmd_design(cfg: ExperimentConfig):
    """Design one filter bank per (method, source); returns the job records."""
    out = Path(cfg.out)
    need = set([cfg.design_position] + (list(cfg.multi_positions) if "spmnet3" in cfg.methods else []))
    data = load_dataset(cfg, tuple(p for p in ALL_POSITIONS if p in need))
    center = _manifest_center(cfg)
    jobs = [(m, az) for m in cfg.methods for az in cfg.sources]
    (out / "logs").mkdir(parents=True, exist_ok=True)
    design_rows, timing_rows, failures, results = [], [], [], []

    def record(r):
        # the calling process is the only writer of every output file
        results.append(r)
        tag = source_tag(r["azimuth"])
        timing_rows.append(["design", r["method"], f"{r['azimuth']:g}", "", f"{r['seconds']:.3f}"])
        log.info("design %s %s: %s in %.1f s", r["method"], tag, r.get("status", "failed"), r["seconds"])
        if not r["ok"]:
            failures.append(["design", r["method"], f"{r['azimuth']:g}", "", r["error"]])
            return
        io.save_filter_bank(out / "filters" / r["method"] / tag, r["filters"], dsp.FS, {
            "method": r["method"], "source_azimuth": r["azimuth"], "seed": cfg.seed,
            "config_digest": io.digest(config_to_ini(cfg).encode()), "status": r["status"],
            "loss_terms": r["terms"], "eq4_loss": r["eq4"], "eq8_loss": r["eq8"],
        })
        if r["log"]:
            io.write_csv(out / "logs" / f"{r['method']}_{tag}.csv",
                         ["iteration", "position"] + TERM_HEADER + ["total"], r["log"])
        design_rows.append([r["method"], f"{r['azimuth']:g}", r["status"], r["iterations"],
                            r["best_iteration"], float(r["eq4"]), float(r["eq8"])])

    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs, initializer=_worker_init, initargs=(cfg, data)) as ex:
            for r in ex.map(_pool_design, jobs):
                record(r)
    else:
        for m, az in jobs:
            record(design_job(cfg, data, center, m, az))
    io.write_csv(out / "design.csv", ["method", "source_azimuth", "status", "iterations", "best_iteration",
                                      "eq4_loss", "eq8_loss"], design_rows)
    _append_rows(out / "timings.csv", ["stage", "method", "source_azimuth", "position", "seconds"], timing_rows)
    _write_failures(out, failures, stage="design")
    return results


def _append_rows(path, header, rows):
    old = io.read_csv(path)[1] if path.exists() else []
    io.write_csv(path, header, old + rows)


def _write_failures(out, failures, stage):
    path = Path(out) / "failures.csv"
    header = ["stage", "method", "source_azimuth", "position", "error"]
    old = [r for r in (io.read_csv(path)[1] if path.exists() else []) if r[0] != stage]
    io.write_csv(path, header, old + failures)


# ------------------------------------------------------------ evaluate


@dataclass
class RunReport:
    metrics: list = field(default_factory=list)
    dominance: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    design: list = field(default_factory=list)
    manifest_digest: str = ""
    seconds: float = 0.0

    @property
    def ok(self):
        return not self.failures


def level_align(g, d):
    """Scale a response set to the target's peak level (one gain for all mics)."""
    peak = np.max(np.abs(g))
    return g * (np.max(np.abs(d)) / peak) if peak > 0 else g


def evaluate_responses(g, d, cfg, bands):
    """nPRQ and octave SD for one level-aligned (Q, N) response set."""
    g = level_align(g, d)
    w = obj.make_windows(d, dsp.FS)
    pr = metrics.nprq_multichannel(g, w)
    sd = metrics.octave_sd_multichannel(g, bands)
    return pr, sd, g


def cmd_evaluate(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    out = Path(cfg.out)
    data = load_dataset(cfg)
    center = _manifest_center(cfg)
    bands = metrics.octave_bands(dsp.next_pow2(cfg.resp_len), dsp.FS)
    grid = cfg.grid
    missing = [(m, a) for m in cfg.methods for a in cfg.sources
               if not (out / "filters" / m / f"{source_tag(a)}.wav").exists()]
    failures = [["evaluate", m, f"{a:g}", "", "missing filter bank"] for m, a in missing]
    if missing:
        log.error("missing filter banks: %s", ", ".join(f"{m}/{source_tag(a)}" for m, a in missing))
    (out / "sspm").mkdir(parents=True, exist_ok=True)
    rows, dom_rows, timing_rows = [], [], []
    dominance = {}
    sspm_maps = {}
    targets = {pos: {a: make_target(cfg, data[pos], a, center) for a in cfg.sources} for pos in cfg.positions}
    for pos in cfg.positions:
        st = bfm.sspm([targets[pos][a] for a in cfg.sources], cfg.sources, data[pos].geometry, grid)
        sspm_maps[("target", pos)] = st
        dominance[("target", pos)] = bfm.diag_dominance(st, cfg.dominance_tolerance)
    for m in cfg.methods:
        banks = {}
        for a in cfg.sources:
            p = out / "filters" / m / f"{source_tag(a)}.wav"
            if p.exists():
                banks[a] = io.load_filter_bank(p.with_suffix(""))[0]
        for pos in cfg.positions:
            ts = time.perf_counter()
            resp, srcs = [], []
            for a, h in banks.items():
                if not np.any(h):
                    failures.append(["evaluate", m, f"{a:g}", pos, "all-zero filter bank"])
                    continue
                try:
                    g = opt.reproduce(h, data[pos].ir)
                    d = targets[pos][a]
                    pr, sd, g_al = evaluate_responses(g, d, cfg, bands)
                except Exception as exc:  # noqa: BLE001
                    failures.append(["evaluate", m, f"{a:g}", pos, f"{type(exc).__name__}: {exc}"])
                    continue
                rows.append([m, f"{a:g}", pos, pr.pre, pr.post] + list(sd.bands) + [sd.avg5, sd.avg6])
                resp.append(g_al)
                srcs.append(a)
            if resp:
                st = bfm.sspm(resp, srcs, data[pos].geometry, grid)
                sspm_maps[(m, pos)] = st
                dominance[(m, pos)] = bfm.diag_dominance(st, cfg.dominance_tolerance)
            timing_rows.append(["evaluate", m, "", pos, f"{time.perf_counter() - ts:.3f}"])
    for (m, pos), st in sspm_maps.items():
        io.write_sspm_csv(out / "sspm" / f"{m}_{pos}.csv", st)
        io.write_pgm(out / "sspm" / f"{m}_{pos}.pgm", st.db, vmin=-plotting.DB_RANGE, vmax=0.0)
    for (m, pos), v in dominance.items():
        dom_rows.append([m, pos, float(v)])
    io.write_csv(out / "metrics.csv", METRIC_HEADER, rows)
    io.write_csv(out / "dominance.csv", ["method", "position", f"diag_dominance_{cfg.dominance_tolerance:g}deg"],
                 dom_rows)
    _append_rows(out / "timings.csv", ["stage", "method", "source_azimuth", "position", "seconds"], timing_rows)
    _write_failures(out, failures, stage="evaluate")
    design = io.read_csv(out / "design.csv")[1] if (out / "design.csv").exists() else []
    manifest_digest = io.digest(b"".join(io.digest(out / "irs" / p / "manifest.json").encode()
                                         for p in cfg.positions))
    all_failures = io.read_csv(out / "failures.csv")[1]
    _figures(cfg, sspm_maps)
    return RunReport(rows, dominance, all_failures, design, manifest_digest, time.perf_counter() - t0)


def _figures(cfg, sspm_maps):
    fig_dir = Path(cfg.out) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    for (m, pos), st in sspm_maps.items():
        plotting.sspm_heatmap(st, Path(cfg.out) / "sspm" / f"{m}_{pos}.png", title=f"{m} @ {pos}")
    for pos in cfg.positions:
        maps = [(m, sspm_maps[(m, pos)]) for m in ("target",) + cfg.methods if (m, pos) in sspm_maps]
        plotting.sspm_grid(maps, fig_dir / f"sspm_{pos}.png")
    logs = Path(cfg.out) / "logs"
    for m in cfg.methods:
        curves = {}
        for path in sorted(logs.glob(f"{m}_az*.csv")):
            _, rows = io.read_csv(path)
            tot = {}
            for r in rows:
                tot.setdefault(int(r[0]), []).append(float(r[-1]))
            curves[path.stem.split("_")[-1]] = [np.mean(tot[k]) for k in sorted(tot)]
        if curves:
            plotting.loss_curves(curves, fig_dir / f"loss_{m}.png", title=m)


# ------------------------------------------------------------ report


def _mean(rows, method, col, positions):
    vals = [float(r[col]) for r in rows if r[0] == method and r[2] in positions]
    return float(np.mean(vals)) if vals else float("nan")


def cmd_report(cfg: ExperimentConfig, report: RunReport | None = None, methods=None) -> str:
    """Markdown summary; also written to ``report.md``.

    ``methods`` restricts the tables (defaults to the configured methods).
    """
    out = Path(cfg.out)
    if report is None:
        rows = io.read_csv(out / "metrics.csv")[1] if (out / "metrics.csv").exists() else []
        dom = {}
        if (out / "dominance.csv").exists():
            for m, pos, v in io.read_csv(out / "dominance.csv")[1]:
                dom[(m, pos)] = float(v)
        fails = io.read_csv(out / "failures.csv")[1] if (out / "failures.csv").exists() else []
        design = io.read_csv(out / "design.csv")[1] if (out / "design.csv").exists() else []
        report = RunReport(rows, dom, fails, design)
    rows = report.metrics
    col = {name: i for i, name in enumerate(METRIC_HEADER)}
    methods = list(cfg.methods if methods is None else methods)
    o = (cfg.design_position,)
    allpos = tuple(cfg.positions)
    spec = [
        ("nPRQ pre, pos O", "nprq_pre", o), ("nPRQ pre, avg", "nprq_pre", allpos),
        ("nPRQ post, pos O", "nprq_post", o), ("nPRQ post, avg", "nprq_post", allpos),
        ("SD 11.3 kHz, pos O", "sd_avg6", o), ("SD 11.3 kHz, avg", "sd_avg6", allpos),
        ("SD 5.65 kHz, pos O", "sd_avg5", o), ("SD 5.65 kHz, avg", "sd_avg5", allpos),
    ]
    table = {m: [_mean(rows, m, col[c], pos) for _, c, pos in spec] for m in methods}
    best = []
    for j in range(len(spec)):
        vals = [table[m][j] for m in methods if not np.isnan(table[m][j])]
        best.append(min(vals) if vals else np.nan)
    lines = ["# Campaign report", "",
             f"Seed {cfg.seed}; {len(cfg.sources)} sources; positions {', '.join(cfg.positions)}; "
             f"L_h = {cfg.filter_len}, L_c = {cfg.ir_len}. Lower is better; best value per column in bold.", "",
             "| Method | " + " | ".join(s[0] for s in spec) + " |",
             "|---" * (len(spec) + 1) + "|"]
    for m in methods:
        cells = []
        for j, v in enumerate(table[m]):
            txt = "n/a" if np.isnan(v) else f"{v:.2f}"
            cells.append(f"**{txt}**" if not np.isnan(v) and np.isclose(v, best[j]) else txt)
        lines.append(f"| {m.upper()} | " + " | ".join(cells) + " |")
    lines += ["", f"## Diagonal dominance (tolerance {cfg.dominance_tolerance:g} deg)", "",
              "| Method | " + " | ".join(cfg.positions) + " |", "|---" * (len(cfg.positions) + 1) + "|"]
    for m in ("target",) + tuple(methods):
        vals = [report.dominance.get((m, p)) for p in cfg.positions]
        if all(v is None for v in vals):
            continue
        lines.append(f"| {m.upper()} | " + " | ".join("n/a" if v is None else f"{v:.2f}" for v in vals) + " |")
    if report.design:
        lines += ["", "## Design losses at the design position (mean over sources)", "",
                  "| Method | objective without spatial term | objective with spatial term |", "|---|---|---|"]
        for m in methods:
            e4 = [float(r[5]) for r in report.design if r[0] == m]
            e8 = [float(r[6]) for r in report.design if r[0] == m]
            if e4:
                lines.append(f"| {m.upper()} | {np.mean(e4):.4f} | {np.mean(e8):.4f} |")
    lines += ["", "## Failures", ""]
    lines += [f"- {r[0]} {r[1]} source {r[2]} {r[3]}: {r[4]}" for r in report.failures] or ["none"]
    figs = sorted((out / "figures").glob("*.png")) if (out / "figures").exists() else []
    if figs:
        lines += ["", "## Figures", ""] + [f"![{f.stem}](figures/{f.name})" for f in figs]
    text = "\n".join(lines) + "\n"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text(text, encoding="utf-8")
    return text


def run_campaign(cfg: ExperimentConfig):
    """simulate, design, evaluate and report in one go."""
    cmd_simulate(cfg)
    cmd_design(cfg)
    rep = cmd_evaluate(cfg)
    cmd_report(cfg, rep)
    return rep


def with_overrides(cfg: ExperimentConfig, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
