"""Periodic line-energy densities and the scaled functionals they induce.

A density evaluates psi(y, theta, tau) pointwise, is 1-periodic in y, and
declares growth constants c0, c1 with c0*|theta| <= psi <= c1*|theta| in the
Euclidean multiplicity norm.  Cellwise-constant densities are integrated
exactly along edges via segment/cell intersection lengths; everything else
falls back to fixed-order midpoint quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

QUADRATURE_POINTS = 8
KNOWN_KEYS = ("kind", "a", "kappa", "c0", "c1", "m", "n")


class EnergyError(ValueError):
    pass


class EnergyDensity:
    """Pointwise energy density with declared periodic cell structure."""

    def __init__(self, name, psi, kind, c0, c1, m, n, subcells=None, config=None,
                 theta_symmetric=False):
        self.name = str(name)
        self._psi = psi
        if kind not in ("cellwise-constant", "smooth", "tabulated"):
            raise EnergyError(f"unknown density kind tag {kind!r}")
        self.kind = kind
        if c0 <= 0 or c1 <= 0:
            raise EnergyError("growth constants must be positive")
        self.c0 = float(c0)
        self.c1 = float(c1)
        self.m = int(m)
        self.n = int(n)
        self.subcells = tuple(int(s) for s in (subcells or (1,) * self.n))
        if len(self.subcells) != self.n:
            raise EnergyError("subcell resolution must give one divisor per axis")
        self.config = dict(config or {})
        # psi(y, -theta, tau) == psi(y, theta, tau); lets tables cover b and -b at once
        self.theta_symmetric = bool(theta_symmetric)

    def psi(self, y, theta, tau) -> float:
        theta = np.asarray(theta)
        if not np.any(theta):
            return 0.0
        return float(self._psi(np.asarray(y, dtype=float), theta, np.asarray(tau, dtype=float)))

    def config_id(self) -> str:
        items = sorted(self.config.items())
        return ",".join(f"{k}={v}" for k, v in items) if items else self.name


@dataclass
class GrowthReport:
    ok: bool
    worst_lower: float
    worst_upper: float
    witness_lower: Optional[tuple]
    witness_upper: Optional[tuple]
    samples: int

    def summary(self) -> str:
        tag = "pass" if self.ok else "FAIL"
        return (
            f"growth {tag}: min psi/(c0|theta|) = {self.worst_lower:.6g}, "
            f"max psi/(c1|theta|) = {self.worst_upper:.6g} over {self.samples} samples"
        )


@dataclass
class EnergyQuery:
    chain: object
    density: EnergyDensity
    epsilon: float
    region: object = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise EnergyError(f"epsilon must be positive, got {self.epsilon}")


def _parse_number(value: str):
    try:
        return int(value)
    except ValueError:
        return float(value)


def parse_density_config(text: str) -> dict:
    config = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise EnergyError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise EnergyError(f"line {lineno}: unknown density key {key!r}")
        if key == "kind":
            config[key] = value
        else:
            config[key] = _parse_number(value)
    if "kind" not in config:
        raise EnergyError("density config is missing 'kind'")
    return config


def load_density(path) -> EnergyDensity:
    with open(path) as fh:
        return make_density(parse_density_config(fh.read()))


def make_density(config: dict) -> EnergyDensity:
    """Build one of the built-in densities from a validated key-value config."""
    config = dict(config)
    unknown = set(config) - set(KNOWN_KEYS)
    if unknown:
        raise EnergyError(f"unknown density keys {sorted(unknown)}")
    kind = config.get("kind")
    n = int(config.get("n", 2))
    m = int(config.get("m", 2 if kind == "split2" else 1))
    a = float(config.get("a", 3.0))
    kappa = float(config.get("kappa", 1.0))

    if kind == "unit":
        psi = lambda y, th, tau: np.linalg.norm(th)
        c0, c1 = 1.0, 1.0
        subcells = (1,) * n
        tag = "cellwise-constant"
    elif kind == "checker":
        # parity coloring of half-cells keeps the declared period exactly 1
        def psi(y, th, tau, a=a):
            w = 1.0 if int(np.sum(np.floor(2.0 * np.asarray(y)))) % 2 == 0 else a
            return w * np.linalg.norm(th)
        c0, c1 = min(1.0, a), max(1.0, a)
        subcells = (2,) * n
        tag = "cellwise-constant"
    elif kind == "channels":
        def psi(y, th, tau, a=a):
            frac = y[1] - np.floor(y[1])
            w = 1.0 if frac < 0.5 else a
            return w * np.linalg.norm(th)
        c0, c1 = min(1.0, a), max(1.0, a)
        subcells = tuple(2 if i == 1 else 1 for i in range(n))
        tag = "cellwise-constant"
    elif kind == "split2":
        if m != 2:
            raise EnergyError("split2 requires m = 2")
        # half-height rows alternate which component travels cheaply (period 1)
        def psi(y, th, tau, a=a):
            even = int(np.floor(2.0 * y[1])) % 2 == 0
            w1, w2 = (1.0, a) if even else (a, 1.0)
            return w1 * abs(float(th[0])) + w2 * abs(float(th[1]))
        c0 = min(1.0, a)
        c1 = max(1.0, a) * np.sqrt(2.0)
        subcells = tuple(2 if i == 1 else 1 for i in range(n))
        tag = "cellwise-constant"
    elif kind == "aniso":
        def psi(y, th, tau, kappa=kappa):
            align = float(tau[0]) ** 2
            return np.linalg.norm(th) * (1.0 + kappa * (1.0 - align))
        c0 = min(1.0, 1.0 + kappa)
        c1 = max(1.0, 1.0 + kappa)
        subcells = (1,) * n
        tag = "cellwise-constant"
    else:
        raise EnergyError(f"unknown density kind {config.get('kind')!r}")

    c0 = float(config.get("c0", c0))
    c1 = float(config.get("c1", c1))
    name = kind if kind == "unit" else (f"{kind}({a:g})" if kind != "aniso" else f"aniso({kappa:g})")
    stored = {"kind": kind, "m": m, "n": n}
    if kind in ("checker", "channels", "split2"):
        stored["a"] = a
    if kind == "aniso":
        stored["kappa"] = kappa
    stored["c0"], stored["c1"] = c0, c1
    return EnergyDensity(name, psi, tag, c0, c1, m, n, subcells=subcells, config=stored,
                         theta_symmetric=True)


def validate_growth(density: EnergyDensity, samples: int = 200, seed: int = 0) -> GrowthReport:
    """Sample (y, theta, tau) triples and check the declared growth sandwich."""
    if samples < 1:
        raise EnergyError("need at least one sample")
    rng = np.random.default_rng(seed)
    worst_low, worst_high = np.inf, -np.inf
    wit_low = wit_high = None
    for _ in range(samples):
        y = rng.uniform(0.0, 3.0, size=density.n)
        theta = rng.integers(-4, 5, size=density.m)
        if not np.any(theta):
            theta[0] = 1
        tau = rng.normal(size=density.n)
        tau /= np.linalg.norm(tau)
        val = density.psi(y, theta, tau)
        nrm = float(np.linalg.norm(theta))
        low = val / (density.c0 * nrm)
        high = val / (density.c1 * nrm)
        if low < worst_low:
            worst_low, wit_low = low, (tuple(y), tuple(int(t) for t in theta), tuple(tau))
        if high > worst_high:
            worst_high, wit_high = high, (tuple(y), tuple(int(t) for t in theta), tuple(tau))
    ok = worst_low >= 1.0 - 1e-12 and worst_high <= 1.0 + 1e-12
    return GrowthReport(ok, float(worst_low), float(worst_high), wit_low, wit_high, samples)


def segment_pieces(density: EnergyDensity, a, b, eps: float):
    """Split a segment at the eps-scaled cell walls of the density.

    Returns a list of (representative scaled point y, physical length) pairs;
    for cellwise-constant densities the representative determines the cell
    exactly, so summing psi * length is an exact integral.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    delta = b - a
    length = float(np.linalg.norm(delta))
    if length == 0.0:
        return []
    cuts = {0.0, 1.0}
    for i in range(density.n):
        res = density.subcells[i]
        di = delta[i]
        if abs(di) < 1e-15:
            continue
        step = eps / res
        j0 = np.floor(min(a[i], b[i]) / step) - 1
        j1 = np.ceil(max(a[i], b[i]) / step) + 1
        for j in np.arange(j0, j1 + 1):
            s = (j * step - a[i]) / di
            if 1e-12 < s < 1.0 - 1e-12:
                cuts.add(round(float(s), 14))
        # round to merge near-coincident wall crossings from different axes
    svals = sorted(cuts)
    pieces = []
    for s0, s1 in zip(svals[:-1], svals[1:]):
        if s1 - s0 < 1e-14:
            continue
        mid = a + 0.5 * (s0 + s1) * delta
        pieces.append((mid / eps, (s1 - s0) * length))
    return pieces


def clip_segment(region, a, b):
    """Parameter range of the sub-segment of [a, b] inside a rotated cube."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ya = region.frame_coords(a)[0]
    yb = region.frame_coords(b)[0]
    half = region.side / 2.0 + 1e-12
    s0, s1 = 0.0, 1.0
    for i in range(len(ya)):
        d = yb[i] - ya[i]
        if abs(d) < 1e-15:
            if abs(ya[i]) > half:
                return None
            continue
        lo = (-half - ya[i]) / d
        hi = (half - ya[i]) / d
        if lo > hi:
            lo, hi = hi, lo
        s0 = max(s0, lo)
        s1 = min(s1, hi)
    if s1 <= s0 + 1e-15:
        return None
    return s0, s1


def segment_cost(density: EnergyDensity, a, b, theta, eps: float, region=None) -> float:
    """Line integral of psi(y/eps, theta, tau) along the segment from a to b.

    With a region, only the exactly clipped sub-segment inside it contributes,
    so region totals are free of edge-inclusion jitter at the boundary.
    """
    theta = np.asarray(theta, dtype=np.int64)
    if not np.any(theta):
        raise EnergyError("edge cost needs a nonzero multiplicity")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if region is not None:
        clip = clip_segment(region, a, b)
        if clip is None:
            return 0.0
        s0, s1 = clip
        a, b = a + s0 * (b - a), a + s1 * (b - a)
    delta = b - a
    length = float(np.linalg.norm(delta))
    if length == 0.0:
        return 0.0
    tau = delta / length
    if density.kind == "cellwise-constant":
        return float(
            sum(density.psi(y, theta, tau) * seg for y, seg in segment_pieces(density, a, b, eps))
        )
    total = 0.0
    for i in range(QUADRATURE_POINTS):
        s = (i + 0.5) / QUADRATURE_POINTS
        total += density.psi((a + s * delta) / eps, theta, tau)
    return total * length / QUADRATURE_POINTS


def edge_cost(density: EnergyDensity, graph, eid: int, theta, eps: float, region=None) -> float:
    return segment_cost(
        density,
        graph.points[int(graph.edge_u[eid])],
        graph.points[int(graph.edge_v[eid])],
        theta,
        eps,
        region=region,
    )


def energy(query: EnergyQuery) -> float:
    """Total scaled energy of a chain, exactly clipped at the region boundary."""
    chain = query.chain
    g = chain.graph
    eids = chain.edges()
    if not eids:
        return 0.0
    return float(
        sum(
            edge_cost(query.density, g, e, chain.data[e], query.epsilon, region=query.region)
            for e in eids
        )
    )


def chain_energy(chain, density, eps: float = 1.0, region=None) -> float:
    return energy(EnergyQuery(chain, density, eps, region))
