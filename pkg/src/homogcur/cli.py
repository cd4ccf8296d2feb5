"""Batch driver: config-file commands with cached, worker-count-independent artifacts.

Commands
    cell      solve cell problems on a (b, t, T) grid -> results.csv
    table     same solves assembled into table.txt + psi_vs_T data and figures
    recover   tile a polyhedral target with stored minimizers across epsilons
    verify    run the seeded invariant suites -> verify.txt
    flatnorm  canonical dipole flat norms (and optionally a chain file's boundary)
    probe     local energy density of staircase chains around a point

All artifacts are plain text with 17-significant-digit floats; reruns with the
same config are byte-identical and served from the cache keyed by the
canonicalized solver-relevant parameters.  Wall times go to a timing.csv
sidecar so they never break byte identity.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import shutil
import sys
import time
from fractions import Fraction
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from .cellsolver import CellProblem, CellSolution, solve_heuristic
from .chains import Chain, ZeroChain, flat_norm
from .energy import EnergyError, load_density, make_density, parse_density_config
from .geometry import Cube, GeometryError, build_lattice, staircase_line
from .homogenize import (HomogError, HomogTable, PolyhedralTarget,
                         clamp_stretch, f_hom, fit_entry, local_density_probe,
                         recovery_sequence, validate_T_list)
from .verify import run_suites
from . import plotting

COMMANDS = ("cell", "table", "recover", "verify", "flatnorm", "probe")
CONFIG_KEYS = {
    "command", "density", "n", "h", "r", "theta_max", "b", "b_list", "t", "t_grid",
    "T_list", "eps_list", "target", "rho_list", "x0", "seed", "workers", "out",
    "T", "chain",
}


class ConfigError(ValueError):
    pass


def _parse_fraction(text: str) -> float:
    return float(Fraction(text.strip()))


def _parse_vector(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _parse_ints(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(",", " ").split())


def parse_config(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    raw = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in body.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        raw[key] = value
    return raw


class RunConfig:
    """Validated run parameters; file references resolved against the config dir."""

    def __init__(self, command: str, raw: dict, base: Path, out=None, workers=None):
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        self.command = command
        self.base = base
        self.raw = dict(raw)
        self.out = Path(out or raw.get("out", "out"))
        if not self.out.is_absolute():
            self.out = (base / self.out).resolve()
        self.workers = int(workers or raw.get("workers", 1))
        self.seed = int(raw.get("seed", 0))
        self.n = int(raw.get("n", 2))
        self.h = raw.get("h", "1/2")
        self.r = int(raw.get("r", 2))
        self.theta_max = int(raw["theta_max"]) if "theta_max" in raw else None
        self.density_text = None
        self.density = None
        if "density" in raw:
            dpath = base / raw["density"]
            if not dpath.exists():
                raise ConfigError(f"density config {dpath} does not exist")
            self.density_text = dpath.read_text()
            try:
                self.density = make_density(parse_density_config(self.density_text))
            except EnergyError as exc:
                raise ConfigError(f"bad density config {dpath}: {exc}") from None
        self.b_list = []
        if "b_list" in raw:
            self.b_list = [_parse_ints(part) for part in raw["b_list"].split("|")]
        elif "b" in raw:
            self.b_list = [_parse_ints(raw["b"])]
        self.t_list = []
        if "t_grid" in raw:
            spec = raw["t_grid"].strip()
            if spec.startswith("fan"):
                count = int(spec[3:] or 8)
                self.t_list = [
                    (math.cos(k * math.pi / count), math.sin(k * math.pi / count))
                    for k in range(count)
                ]
            else:
                self.t_list = [_parse_vector(part) for part in spec.split("|")]
        elif "t" in raw:
            self.t_list = [_parse_vector(raw["t"])]
        self.T_list = [float(Fraction(x)) for x in raw.get("T_list", "").replace(",", " ").split()] \
            if "T_list" in raw else []
        if "T" in raw:
            self.T_list = self.T_list or [float(Fraction(raw["T"]))]
        self.eps_list = [_parse_fraction(x) for x in raw.get("eps_list", "").replace(",", " ").split()] \
            if "eps_list" in raw else []
        self.rho_list = [float(Fraction(x)) for x in raw.get("rho_list", "").replace(",", " ").split()] \
            if "rho_list" in raw else []
        self.x0 = _parse_vector(raw["x0"]) if "x0" in raw else (0.0,) * self.n
        self.target_path = (base / raw["target"]) if "target" in raw else None
        if self.target_path is not None and not self.target_path.exists():
            raise ConfigError(f"target file {self.target_path} does not exist")
        self.chain_path = (base / raw["chain"]) if "chain" in raw else None
        if self.chain_path is not None and not self.chain_path.exists():
            raise ConfigError(f"chain file {self.chain_path} does not exist")

    def normalized_t(self):
        out = []
        for t in self.t_list:
            arr = np.asarray(t, dtype=float)
            out.append(arr / np.linalg.norm(arr))
        return out

    def cache_fragment(self) -> dict:
        frag = {
            "command": self.command,
            "n": self.n,
            "h": self.h,
            "r": self.r,
            "seed": self.seed,
        }
        if self.theta_max is not None:
            frag["theta_max"] = self.theta_max
        if self.density_text is not None:
            frag["density"] = canonical_density_text(self.density_text)
        if self.b_list:
            frag["b_list"] = "|".join(",".join(str(x) for x in b) for b in self.b_list)
        if self.t_list:
            frag["t_list"] = "|".join(
                ",".join(f"{x:.17g}" for x in t) for t in self.normalized_t()
            )
        if self.T_list:
            frag["T_list"] = ",".join(f"{T:.17g}" for T in self.T_list)
        if self.eps_list:
            frag["eps_list"] = ",".join(f"{e:.17g}" for e in self.eps_list)
        if self.rho_list:
            frag["rho_list"] = ",".join(f"{x:.17g}" for x in self.rho_list)
        if self.x0:
            frag["x0"] = ",".join(f"{x:.17g}" for x in self.x0)
        if self.target_path is not None:
            frag["target"] = self.target_path.read_text()
        return frag


def canonical_density_text(text: str) -> str:
    config = parse_density_config(text)
    return ",".join(f"{k}={config[k]}" for k in sorted(config))


def cache_key(fragment: dict) -> str:
    blob = "\n".join(f"{k}={fragment[k]}" for k in sorted(fragment))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _bstr(b) -> str:
    return ",".join(str(int(x)) for x in b)


def _tstr(t) -> str:
    return ",".join(f"{float(x):.17g}" for x in t)


def _tag(b, t) -> str:
    bt = "b" + "_".join(str(int(x)) for x in b)
    tt = "t" + "_".join(f"{float(x):+.3f}".replace("+", "p").replace("-", "m").replace(".", "")
                        for x in t)
    return f"{bt}_{tt}"


def _solve_one(args):
    (b, t, T, density_cfg, h, r, theta_max) = args
    density = make_density(density_cfg)
    prob = CellProblem(b, t, T, density, h, r, theta_max=theta_max)
    start = time.perf_counter()
    sol = solve_heuristic(prob)
    wall = time.perf_counter() - start
    return {
        "hash": prob.problem_hash(),
        "b": tuple(int(x) for x in b),
        "t": tuple(float(x) for x in t),
        "T": float(T),
        "value": sol.value,
        "solver": sol.solver,
        "chain_text": sol.chain.dumps(),
        "stretch": clamp_stretch(prob),
        "wall": wall,
    }


def _run_solves(cfg: RunConfig):
    if not (cfg.b_list and cfg.t_list and cfg.T_list and cfg.density):
        raise ConfigError("cell/table runs need density, b, t and T_list")
    jobs = [
        (b, tuple(t), T, cfg.density.config, cfg.h, cfg.r, cfg.theta_max)
        for b in cfg.b_list
        for t in cfg.normalized_t()
        for T in cfg.T_list
    ]
    if cfg.workers > 1:
        with Pool(cfg.workers) as pool:
            rows = pool.map(_solve_one, jobs)
    else:
        rows = [_solve_one(job) for job in jobs]
    return sorted(rows, key=lambda row: row["hash"])


def _results_csv(rows) -> str:
    lines = ["hash,b,t,T,value,value_per_T,solver"]
    for row in rows:
        lines.append(
            f"{row['hash']},\"{_bstr(row['b'])}\",\"{_tstr(row['t'])}\","
            f"{_fmt(row['T'])},{_fmt(row['value'])},{_fmt(row['value'] / row['T'])},{row['solver']}"
        )
    return "\n".join(lines) + "\n"


def _timing_csv(rows) -> str:
    lines = ["hash,wall_time"]
    for row in rows:
        lines.append(f"{row['hash']},{row['wall']:.6f}")
    return "\n".join(lines) + "\n"


def _assemble_table(cfg: RunConfig, rows) -> tuple:
    table = HomogTable(cfg.density, cfg.h, cfg.r, cfg.theta_max
                       if cfg.theta_max is not None else
                       max(max(abs(x) for x in b) for b in cfg.b_list) + 1)
    groups = {}
    for row in rows:
        groups.setdefault((row["b"], row["t"]), []).append(row)
    tsvs = {}
    for (b, t), grp in sorted(groups.items()):
        grp.sort(key=lambda rr: rr["T"])
        series = [(rr["T"], rr["value"]) for rr in grp]
        stretch = grp[-1]["stretch"]
        entry = fit_entry(b, t, cfg.density, series, stretch, cfg.h, cfg.r)
        table.add(entry)
        tsv = ["T\tvalue_per_T"]
        for T, value in series:
            tsv.append(f"{_fmt(T)}\t{_fmt(value / T)}")
        tsvs[_tag(b, t)] = ("\n".join(tsv) + "\n", entry)
    return table, tsvs


def cmd_cell_or_table(cfg: RunConfig):
    if cfg.command == "table":
        validate_T_list(cfg.T_list)
    rows = _run_solves(cfg)
    artifacts = {"results.csv": _results_csv(rows)}
    for row in rows:
        artifacts[f"chains/{row['hash']}.chain"] = row["chain_text"]
    figures = {}
    if cfg.command == "table":
        table, tsvs = _assemble_table(cfg, rows)
        artifacts["table.txt"] = table.dumps()
        plotdata = []
        for tag, (tsv, entry) in sorted(tsvs.items()):
            artifacts[f"psi_vs_T_{tag}.tsv"] = tsv
            T_values = [T for T, _ in entry.series]
            ratios = [v / T for T, v in entry.series]
            figures[f"psi_vs_T_{tag}.png"] = ("series", T_values, ratios,
                                              entry.psi_hom, tag)
            plotdata.append((tag, T_values, ratios, entry.psi_hom))
        figures["table.png"] = ("table", plotdata)
    return artifacts, {"timing.csv": _timing_csv(rows)}, figures


def _load_table_with_chains(cfg: RunConfig, rows) -> HomogTable:
    table, _ = _assemble_table(cfg, rows)
    from .homogenize import _t_key

    for (bk, tk), entry in table.entries.items():
        sols = {}
        for T, value in entry.series:
            prob = CellProblem(bk, tk, T, cfg.density, cfg.h, cfg.r,
                               theta_max=cfg.theta_max)
            match = [row for row in rows
                     if row["b"] == bk and _t_key(row["t"]) == tk and row["T"] == T]
            chain = Chain.loads(prob.context().graph, match[0]["chain_text"])
            sols[T] = CellSolution(prob, chain, value, "heuristic", 0)
        entry.solutions = sols
    return table


def read_target(path: Path) -> PolyhedralTarget:
    lines = [ln.split("#", 1)[0].strip() for ln in path.read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    head = lines[0].split()
    if head[0] != "target" or len(head) != 3:
        raise ConfigError(f"{path}: first line must be 'target <n> <m>'")
    n, m = int(head[1]), int(head[2])
    segments = []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] != "seg" or len(parts) != 1 + 2 * n + m:
            raise ConfigError(f"{path}: expected 'seg <p...> <q...> <b...>', got {ln!r}")
        vals = [float(x) for x in parts[1:]]
        p = vals[:n]
        q = vals[n:2 * n]
        b = [int(x) for x in vals[2 * n:]]
        segments.append((p, q, b))
    try:
        return PolyhedralTarget(segments)
    except HomogError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_recover(cfg: RunConfig):
    if cfg.target_path is None or not cfg.eps_list:
        raise ConfigError("recover needs target and eps_list")
    target = read_target(cfg.target_path)
    rows = _run_solves(cfg)
    table = _load_table_with_chains(cfg, rows)
    steps = recovery_sequence(target, cfg.density, cfg.eps_list, table)
    reference = f_hom(target, table)
    lines = ["eps,F_eps,flat_distance,f_hom,rel_err"]
    for st in steps:
        rel = abs(st.energy - reference.value) / reference.value if reference.value else 0.0
        lines.append(f"{_fmt(st.eps)},{_fmt(st.energy)},{_fmt(st.flat_dist)},"
                     f"{_fmt(reference.value)},{_fmt(rel)}")
    artifacts = {
        "results.csv": _results_csv(rows),
        "recover.csv": "\n".join(lines) + "\n",
        "table.txt": table.dumps(),
    }
    figures = {"recovery.png": ("recovery", [st.eps for st in steps],
                                [st.energy for st in steps], reference.value)}
    return artifacts, {"timing.csv": _timing_csv(rows)}, figures


def cmd_verify(cfg: RunConfig):
    results = run_suites(seed=cfg.seed)
    lines = []
    for name, ok, detail in results:
        word = "PASS" if ok else "FAIL"
        lines.append(f"{word} {name}: {detail}" if detail else f"{word} {name}")
    return {"verify.txt": "\n".join(lines) + "\n"}, {}, {}


def cmd_flatnorm(cfg: RunConfig):
    side = cfg.T_list[0] if cfg.T_list else 10.0
    cube = Cube([1.0] + [0.0] * (cfg.n - 1), side)
    g = build_lattice(cube, cfg.h, cfg.r)
    k = g.k
    lines = []
    origin = (0,) * cfg.n
    far = (5 * k,) + (0,) * (cfg.n - 1)
    for label, other in (("distance_1", (1,) + (0,) * (cfg.n - 1)), ("distance_5", far)):
        S = ZeroChain(g, {g.node_id(origin): [1], g.node_id(other): [-1]})
        fw = flat_norm(S, W=cube, g=g)
        lines.append(f"dipole_{label} value {_fmt(fw.value)} "
                     f"filling_edges {len(fw.filling.data)} residual_points {len(fw.residual.data)}")
    if cfg.chain_path is not None:
        chain = Chain.load(g, cfg.chain_path)
        from .chains import boundary

        fw = flat_norm(boundary(chain), W=cube, g=g)
        lines.append(f"chain_boundary value {_fmt(fw.value)}")
    return {"flatnorm.txt": "\n".join(lines) + "\n"}, {}, {}


def cmd_probe(cfg: RunConfig):
    if not (cfg.density and cfg.b_list and cfg.t_list and cfg.eps_list and cfg.rho_list):
        raise ConfigError("probe needs density, b, t, eps_list and rho_list")
    b = cfg.b_list[0]
    t = cfg.normalized_t()[0]
    span = max(cfg.rho_list) * 2.0 + 2.0
    pairs = []
    for eps in cfg.eps_list:
        q = round(1.0 / eps)
        if abs(eps * q - 1.0) > 1e-12:
            raise ConfigError(f"epsilon must be 1/integer, got {eps}")
        k_f = int(round(1.0 / float(Fraction(cfg.h)))) * q
        cube = Cube(t, span, np.asarray(cfg.x0))
        graph = build_lattice(cube, f"1/{k_f}", cfg.r)
        pairs.append((staircase_line(b, t, cube, graph), eps))
    report = local_density_probe(pairs, cfg.x0, b, t, cfg.rho_list, cfg.density)
    lines = ["eps\trho\tdensity"]
    for (chain, eps), row in zip(pairs, report.values):
        for rho, val in zip(cfg.rho_list, row):
            lines.append(f"{_fmt(eps)}\t{_fmt(rho)}\t{_fmt(val)}")
    figures = {"probe.png": ("probe", list(cfg.rho_list), report.values,
                             [f"eps={eps:g}" for eps in cfg.eps_list], report.reference)}
    return {"probe.tsv": "\n".join(lines) + "\n"}, {}, figures


def _render_figure(path: Path, spec) -> None:
    kind = spec[0]
    if kind == "series":
        plotting.save_series_plot(path, spec[1], spec[2], spec[3], spec[4])
    elif kind == "table":
        plotting.save_table_plot(path, spec[1])
    elif kind == "recovery":
        plotting.save_recovery_plot(path, spec[1], spec[2], spec[3])
    elif kind == "probe":
        plotting.save_probe_plot(path, spec[1], spec[2], spec[3], spec[4])


def _write_artifacts(out: Path, artifacts: dict, partial: bool = False) -> None:
    for name, text in artifacts.items():
        path = out / (name + (".partial" if partial else ""))
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


CACHEABLE = ("cell", "table", "recover")


def run(cfg: RunConfig) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    handlers = {
        "cell": cmd_cell_or_table,
        "table": cmd_cell_or_table,
        "recover": cmd_recover,
        "verify": cmd_verify,
        "flatnorm": cmd_flatnorm,
        "probe": cmd_probe,
    }
    key = cache_key(cfg.cache_fragment()) if cfg.command in CACHEABLE else None
    cache_dir = cfg.out / "cache" / key if key else None
    artifacts = {}
    try:
        if cache_dir is not None and (cache_dir / "MANIFEST").exists():
            names = (cache_dir / "MANIFEST").read_text().splitlines()
            for name in names:
                src = cache_dir / name
                dst = cfg.out / name
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src, dst)
            print(f"cache hit {key}: {len(names)} artifacts restored")
            return 0
        artifacts, sidecars, figures = handlers[cfg.command](cfg)
        _write_artifacts(cfg.out, artifacts)
        _write_artifacts(cfg.out, sidecars)
        fig_names = []
        for name, spec in figures.items():
            _render_figure(cfg.out / name, spec)
            fig_names.append(name)
        if cache_dir is not None:
            cache_dir.mkdir(parents=True, exist_ok=True)
            stored = []
            for name, text in artifacts.items():
                path = cache_dir / name
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(text)
                stored.append(name)
            for name in fig_names:
                shutil.copyfile(cfg.out / name, cache_dir / name)
                stored.append(name)
            (cache_dir / "MANIFEST").write_text("\n".join(stored))
        print(f"wrote {len(artifacts)} artifacts to {cfg.out}")
        return 0
    except (ConfigError, EnergyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors: keep partial artifacts visible
        _write_artifacts(cfg.out, artifacts, partial=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="homogcur", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="key = value run config")
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    try:
        path = Path(args.config).resolve()
        raw = parse_config(path)
        cfg = RunConfig(args.command, raw, path.parent, out=args.out, workers=args.workers)
    except (ConfigError, EnergyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
