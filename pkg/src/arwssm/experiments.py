"""Monte Carlo campaigns on Z: density scans, critical-density estimates and bound checks.

All randomness is keyed by replica index only, so the same replica sees the
same instruction field and the same Poisson(ceiling) particle field at every
volume and every density.  Smaller densities are obtained by thinning, which
makes odometers exactly monotone along the density grid.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from multiprocessing import Pool

import numpy as np

from . import __version__, fast, kernels, rng
from .certifier import WALK_CAP, build_certificate
from .lattice import Box, InstructionField, JumpKernel, Model, sample_poisson_config

OBSERVABLES = ("origin_odometer", "fixation_fraction", "exit_mass", "certifier_success")
DEFAULT_CAP = 10**11
BOOTSTRAP_LABEL = 0xB00757A9


class InsufficientResolution(RuntimeError):
    """The survival curves do not cross inside the density grid."""


def replica_seeds(seed: int, r: int) -> tuple:
    """Particle-field seed and instruction-field seed of replica ``r``."""
    return rng.derive_seed(seed, r, 0), rng.derive_seed(seed, r, 1)


def make_kernel(name: str) -> JumpKernel:
    if name in ("nn", "nearest"):
        return JumpKernel.nearest_neighbor(1)
    if name.startswith("biased:"):
        return JumpKernel.biased_1d(float(name.split(":", 1)[1]))
    raise ValueError(f"unknown kernel {name!r}")


def _floats(v) -> tuple:
    if isinstance(v, str):
        v = [x for x in v.replace(",", " ").split()]
    return tuple(float(x) for x in v)


def _ints(v) -> tuple:
    if isinstance(v, str):
        v = [x for x in v.replace(",", " ").split()]
    return tuple(int(float(x)) for x in v)


@dataclass
class ScanSpec:
    model: str = "ssm"
    lam: str = "1"
    kernel: str = "nn"
    mus: tuple = (0.5,)
    Ls: tuple = (100,)
    replicas: int = 100
    cap: int = DEFAULT_CAP
    seed: int = 0
    observables: tuple = ("origin_odometer", "fixation_fraction", "exit_mass")
    certifier_n: int = 10
    workers: int = 1

    def __post_init__(self):
        self.mus = _floats(self.mus)
        self.Ls = _ints(self.Ls)
        if isinstance(self.observables, str):
            self.observables = tuple(x for x in self.observables.replace(",", " ").split())
        self.observables = tuple(self.observables)
        self.replicas, self.cap, self.seed = int(self.replicas), int(self.cap), int(self.seed)
        self.certifier_n, self.workers = int(self.certifier_n), int(self.workers)
        self.lam = str(self.lam)
        if self.model not in ("arw", "ssm"):
            raise ValueError(f"unknown model {self.model!r}")
        if not self.mus or any(b <= a for a, b in zip(self.mus, self.mus[1:])) or self.mus[0] < 0:
            raise ValueError("mu grid must be non-negative and strictly increasing")
        if not self.Ls or any(b <= a for a, b in zip(self.Ls, self.Ls[1:])) or self.Ls[0] < 1:
            raise ValueError("L grid must be positive and strictly increasing")
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")
        bad = set(self.observables) - set(OBSERVABLES)
        if bad:
            raise ValueError(f"unknown observables {sorted(bad)}")
        self.build_model()
        make_kernel(self.kernel)

    def build_model(self) -> Model:
        return Model.ssm() if self.model == "ssm" else Model("arw", self.lam)

    @classmethod
    def from_text(cls, text: str, **overrides) -> ScanSpec:
        """Read ``key = value`` lines; lists are comma or space separated, ``#`` starts a comment."""
        known = {f.name for f in fields(cls)}
        values = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = {"lambda": "lam", "L": "Ls", "mu": "mus"}.get(key, key)
            if key not in known:
                raise ValueError(f"line {n}: unknown key {key!r}")
            values[key] = val
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> ScanSpec:
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), **overrides)

    def to_text(self) -> str:
        out = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            out.append(f"{k} = {v}")
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------- growth runs

def _growth(model: Model, kernel: JumpKernel, L: int, seeds: tuple, ceiling: float, ratios, cap: int,
            limit: int = -1):
    """Add the particles of ``[-L, L]`` in thinning order and relax inside ``[-L, L]``.

    Returns ``(trigger, snapshots)`` where ``trigger`` is the thinning value
    of the particle that pushed the origin past ``limit`` (``inf`` if none)
    and ``snapshots`` holds origin half-counts, exit mass, total
    half-topplings and status before each ratio in ``ratios``.
    """
    pseed, fseed = seeds
    fld = InstructionField(fseed, model, kernel)
    strip = fast.Strip(fld, -L, L)
    sites, us = fast.particles(pseed, -L, L, ceiling)
    codes = np.zeros(strip.size, np.int64)
    half = np.zeros(strip.size, np.int64)
    ratios = np.asarray(ratios, np.float64)
    g = len(ratios)
    snaps = (np.zeros(g, np.int64), np.zeros(g, np.int64), np.zeros(g, np.int64), np.zeros(g, np.int64))
    trigger, _ = kernels.grow(codes, half, strip.keys, strip.lo, strip.hi, strip.offs, strip.cuts,
                              model.is_ssm, model.instant_sleep, kernels.is_binary(strip.cuts, strip.offs),
                              sites - strip.first, us, ratios, cap, strip.index(0), limit, *snaps)
    return float(trigger), snaps


def _scan_task(args):
    spec, L, r = args
    model = spec.build_model()
    kernel = make_kernel(spec.kernel)
    ceiling = spec.mus[-1]
    seeds = replica_seeds(spec.seed, r)
    ratios = [mu / ceiling if ceiling > 0 else 0.0 for mu in spec.mus]
    if ceiling > 0:
        _, (origin, exit_mass, total, status) = _growth(model, kernel, L, seeds, ceiling, ratios, spec.cap)
    else:
        origin = exit_mass = total = status = np.zeros(len(ratios), np.int64)
    cert = np.zeros(len(ratios), np.int64)
    if "certifier_success" in spec.observables:
        fld = InstructionField(seeds[1], model, kernel)
        box = Box.centered(L)
        for g, mu in enumerate(spec.mus):
            eta = sample_poisson_config(seeds[0], mu, box, ceiling=ceiling if ceiling > 0 else None)
            cert[g] = build_certificate(model, eta, fld, spec.certifier_n, cap=WALK_CAP, keep_traces=False).success
    return origin, exit_mass, total, status, cert


def _map(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with Pool(workers) as pool:
        return pool.map(fn, tasks, chunksize=max(1, len(tasks) // (8 * workers)))


def _stats(values: np.ndarray) -> dict:
    values = np.asarray(values, dtype=float)
    n = len(values)
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return {"mean": float(values.mean()), "median": float(np.median(values)), "se": se}


@dataclass
class ScanResult:
    spec: ScanSpec
    origin_half: dict
    exit_mass: dict
    total_half: dict
    truncated: dict
    certified: dict
    cells: list = field(default_factory=list)

    def provenance(self) -> dict:
        s = self.spec
        return {"model": s.model, "lambda": s.lam if s.model == "arw" else "", "kernel": s.kernel,
                "seed": s.seed, "cap": s.cap, "replicas": s.replicas, "mus": list(s.mus), "Ls": list(s.Ls),
                "version": __version__}

    def column(self, L: int, mu: float, name: str) -> np.ndarray:
        """Per-replica values of an observable at one cell."""
        g = self.spec.mus.index(mu)
        if name == "origin_odometer":
            return self.origin_half[L][:, g] / 2.0
        if name == "fixation_fraction":
            return (self.origin_half[L][:, g] == 0).astype(float)
        if name == "fixation_log":
            return (self.origin_half[L][:, g] / 2.0 <= math.log(L)).astype(float)
        if name == "exit_mass":
            return self.exit_mass[L][:, g].astype(float)
        if name == "certifier_success":
            return self.certified[L][:, g].astype(float)
        raise KeyError(name)

    def fixation_fraction(self, L: int, mu: float) -> float:
        return float(self.column(L, mu, "fixation_fraction").mean())

    def median_odometer(self, L: int, mu: float) -> float:
        return float(np.median(self.column(L, mu, "origin_odometer")))

    def to_csv(self) -> str:
        prov = self.provenance()
        head = ["model", "lambda", "kernel", "seed", "cap", "version", "L", "mu", "replicas", "truncated",
                "flagged"]
        obs = self._observable_names()
        for o in obs:
            head += [f"{o}_mean", f"{o}_median", f"{o}_se"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        for c in self.cells:
            row = [prov["model"], prov["lambda"], prov["kernel"], prov["seed"], prov["cap"], prov["version"],
                   c["L"], repr(c["mu"]), c["replicas"], c["truncated"], int(c["flagged"])]
            for o in obs:
                row += [repr(c[o]["mean"]), repr(c[o]["median"]), repr(c[o]["se"])]
            w.writerow(row)
        return buf.getvalue()

    def to_records(self) -> str:
        lines = [json.dumps({"record": "provenance", **self.provenance()}, sort_keys=True)]
        for c in self.cells:
            lines.append(json.dumps({"record": "cell", **c}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def _observable_names(self) -> list:
        names = list(self.spec.observables)
        if "fixation_fraction" in names:
            names.insert(names.index("fixation_fraction") + 1, "fixation_log")
        return names


def scan(spec: ScanSpec, workers: int | None = None) -> ScanResult:
    """Stabilize Poisson configurations on ``[-L, L]`` for every cell of the grid.

    One growth run per (L, replica) produces all densities of the grid.
    Results do not depend on ``workers``.
    """
    workers = spec.workers if workers is None else workers
    tasks = [(spec, L, r) for L in spec.Ls for r in range(spec.replicas)]
    out = _map(_scan_task, tasks, workers)
    R = spec.replicas
    res = ScanResult(spec, {}, {}, {}, {}, {})
    for i, L in enumerate(spec.Ls):
        rows = out[i * R:(i + 1) * R]
        res.origin_half[L] = np.array([r[0] for r in rows])
        res.exit_mass[L] = np.array([r[1] for r in rows])
        res.total_half[L] = np.array([r[2] for r in rows])
        res.truncated[L] = np.array([r[3] for r in rows]) == kernels.CAPPED
        res.certified[L] = np.array([r[4] for r in rows])
    names = res._observable_names()
    for L in spec.Ls:
        for g, mu in enumerate(spec.mus):
            trunc = int(res.truncated[L][:, g].sum())
            cell = {"L": L, "mu": mu, "replicas": R, "truncated": trunc, "flagged": trunc > 0.01 * R}
            for o in names:
                cell[o] = _stats(res.column(L, mu, o))
            res.cells.append(cell)
    return res


def fixation_monotone(result: ScanResult) -> bool:
    """Per replica: origin odometers non-decreasing along the density grid."""
    return all(bool((np.diff(a, axis=1) >= 0).all()) for a in result.origin_half.values())


# ---------------------------------------------------------------- critical density

def _threshold_task(args):
    model, kernel_name, L, r, seed, ceiling, limit, cap = args
    trig, snaps = _growth(model, make_kernel(kernel_name), L, replica_seeds(seed, r), ceiling, [np.inf], cap,
                          limit)
    capped = snaps[3][0] == kernels.CAPPED
    return (np.nan if capped else trig * ceiling), int(snaps[2][0])


def threshold_densities(model: Model, Ls, replicas: int, seed: int, ceiling: float = 1.2,
                        exponent: float = 1.0, cap: int = DEFAULT_CAP, workers: int = 1,
                        kernel: str = "nn") -> dict:
    """Per replica, the density at which the origin odometer first exceeds ``L**exponent``.

    Returns ``{L: array}``; ``inf`` means the level was not reached below
    ``ceiling`` and ``nan`` marks a truncated run.
    """
    tasks = []
    for L in Ls:
        limit = int(math.floor(2 * L**exponent))
        tasks += [(model, kernel, L, r, seed, ceiling, limit, cap) for r in range(replicas)]
    out = _map(_threshold_task, tasks, workers)
    return {L: np.array([v for v, _ in out[i * replicas:(i + 1) * replicas]]) for i, L in enumerate(Ls)}


def survival(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Fraction of replicas whose threshold density is at least each grid point."""
    v = np.sort(values[~np.isnan(values)])
    return 1.0 - np.searchsorted(v, grid, side="left") / len(v)


def crossings(small: np.ndarray, large: np.ndarray, grid: np.ndarray) -> list:
    """Sign changes of ``large - small`` as ``(mu, level)`` by linear interpolation."""
    d = large - small
    nz = np.flatnonzero(d)
    out = []
    for i, k in zip(nz, nz[1:]):
        if d[i] * d[k] < 0:
            w = d[i] / (d[i] - d[k])
            mu = grid[i] + w * (grid[k] - grid[i])
            level = 0.5 * ((small[i] + w * (small[k] - small[i])) + (large[i] + w * (large[k] - large[i])))
            out.append((float(mu), float(level)))
    return out


def _pick(cands: list):
    return min(cands, key=lambda c: abs(c[1] - 0.5)) if cands else None


def _half_point(curve: np.ndarray, grid: np.ndarray):
    below = np.flatnonzero(curve < 0.5)
    if len(below) == 0 or below[0] == 0:
        return None
    i = below[0]
    w = (curve[i - 1] - 0.5) / (curve[i - 1] - curve[i])
    return float(grid[i - 1] + w * (grid[i] - grid[i - 1]))


@dataclass
class MuCEstimate:
    value: float
    stderr: float
    interval: tuple
    method: str
    level: float
    Ls: tuple
    crossings: dict
    medians: dict
    diagnostics: dict
    bootstrap_failures: int

    def records(self) -> list:
        rec = {"record": "estimate", "value": self.value, "stderr": self.stderr, "interval": list(self.interval),
               "method": self.method, "level": self.level, "Ls": list(self.Ls),
               "bootstrap_failures": self.bootstrap_failures, **self.diagnostics}
        out = [rec]
        for (a, b), cs in self.crossings.items():
            for mu, lev in cs:
                out.append({"record": "crossing", "L_small": a, "L_large": b, "mu": mu, "level": lev})
        for L, m in self.medians.items():
            out.append({"record": "median", "L": L, "mu": m})
        return out


def estimate_from_thresholds(thresholds: dict, method: str = "crossing", step: float = 5e-4,
                             lo: float = 0.0, hi: float | None = None, bootstrap: int = 1000,
                             seed: int = 0) -> MuCEstimate:
    """Critical-density estimate from per-replica threshold densities.

    ``crossing``: where the survival curves of the two largest volumes
    intersect (the crossing nearest level 1/2 if there are several).
    ``odometer``: where the largest-volume survival curve drops through 1/2,
    i.e. the density beyond which the origin odometer typically exceeds the
    volume-dependent level.
    """
    if method not in ("crossing", "odometer"):
        raise ValueError("method is 'crossing' or 'odometer'")
    Ls = tuple(sorted(thresholds))
    if method == "crossing" and len(Ls) < 2:
        raise ValueError("crossing needs at least two volumes")
    finite = np.concatenate([v[np.isfinite(v)] for v in thresholds.values()])
    hi = (float(finite.max()) if len(finite) else 1.0) if hi is None else hi
    grid = np.arange(lo, hi + step / 2, step)

    def evaluate(th):
        curves = {L: survival(th[L], grid) for L in Ls}
        if method == "crossing":
            c = _pick(crossings(curves[Ls[-2]], curves[Ls[-1]], grid))
            return c, curves
        m = _half_point(curves[Ls[-1]], grid)
        return (None if m is None else (m, 0.5)), curves

    best, curves = evaluate(thresholds)
    if best is None:
        raise InsufficientResolution(f"no {method} point in [{lo}, {hi}]")
    pairs = {(a, b): crossings(curves[a], curves[b], grid) for a, b in zip(Ls, Ls[1:])}
    medians = {L: float(np.nanmedian(thresholds[L])) for L in Ls}
    gen = np.random.default_rng(rng.derive_seed(seed, BOOTSTRAP_LABEL))
    n = min(len(v) for v in thresholds.values())
    boots, failures = [], 0
    for _ in range(bootstrap):
        idx = gen.integers(0, n, n)
        b, _ = evaluate({L: thresholds[L][idx] for L in Ls})
        if b is None:
            failures += 1
        else:
            boots.append(b[0])
    boots = np.array(boots)
    se = float(boots.std(ddof=1)) if len(boots) > 1 else float("nan")
    interval = tuple(float(x) for x in np.percentile(boots, [2.5, 97.5])) if len(boots) else (math.nan,) * 2
    diag = {
        "medians_increasing": bool(all(medians[a] <= medians[b] for a, b in zip(Ls, Ls[1:]))),
        "curves_nonincreasing": bool(all((np.diff(c) <= 0).all() for c in curves.values())),
        "truncated": int(sum(np.isnan(v).sum() for v in thresholds.values())),
        "unreached": int(sum(np.isinf(v).sum() for v in thresholds.values())),
        "pairs_crossing": int(sum(bool(c) for c in pairs.values())),
    }
    return MuCEstimate(best[0], se, interval, method, best[1], Ls, pairs, medians, diag, failures)


def estimate_mu_c(model: Model, Ls, replicas: int, seed: int, method: str = "crossing", ceiling: float = 1.2,
                  exponent: float = 1.0, bootstrap: int = 1000, cap: int = DEFAULT_CAP, workers: int = 1,
                  step: float = 5e-4) -> MuCEstimate:
    """Critical density from origin-odometer survival curves ``P[m_V(0) <= L**exponent]``."""
    th = threshold_densities(model, Ls, replicas, seed, ceiling, exponent, cap, workers)
    est = estimate_from_thresholds(th, method, step, 0.0, ceiling, bootstrap, seed)
    est.diagnostics["exponent"] = exponent
    est.diagnostics["ceiling"] = ceiling
    return est


# ---------------------------------------------------------------- bounds and curves

@dataclass
class ActivityReport:
    mu: float
    Ms: tuple
    thresholds: tuple
    estimates: tuple
    lower_bounds: tuple
    replicas: int
    skipped: bool = False

    @property
    def ok(self) -> bool:
        return self.skipped or min(self.lower_bounds) > 0

    @property
    def delta(self) -> float:
        """Smallest estimated event probability over the grid, halved."""
        return min(self.estimates) / 2 if self.estimates else math.nan


def _wilson_lower(k: int, n: int, z: float = 1.959964) -> float:
    if n == 0:
        return 0.0
    p = k / n
    centre = p + z * z / (2 * n)
    spread = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, (centre - spread) / (1 + z * z / n))


def activity_bound_check(model: Model, mu: float, Ms, replicas: int, seed: int) -> ActivityReport:
    """Estimate ``P[m_V(0) >= (mu-1)M/2 or m_V(-M) >= (mu-1)M/2]`` for ``V = [-M, 0]``."""
    Ms = tuple(int(m) for m in Ms)
    if mu <= 1:
        return ActivityReport(mu, Ms, (), (), (), replicas, skipped=True)
    thr, est, low = [], [], []
    for M in Ms:
        level = (mu - 1) * M / 2
        V = Box.interval(-M, 0)
        hits = 0
        for r in range(replicas):
            pseed, fseed = replica_seeds(seed, r)
            eta = sample_poisson_config(pseed, mu, V)
            odo = fast.stabilize_fast(model, eta, V, InstructionField(fseed, model)).odometer
            hits += odo.topplings((0,)) >= level or odo.topplings((-M,)) >= level
        thr.append(level)
        est.append(hits / replicas)
        low.append(_wilson_lower(hits, replicas))
    return ActivityReport(mu, Ms, tuple(thr), tuple(est), tuple(low), replicas)


@dataclass
class SuccessCurve:
    mus: tuple
    n: int
    successes: tuple
    replicas: int
    L: int

    @property
    def frequencies(self) -> tuple:
        return tuple(s / self.replicas for s in self.successes)

    @property
    def monotone(self) -> bool:
        return all(b <= a for a, b in zip(self.successes, self.successes[1:]))


def certifier_success_curve(model: Model, mus, n: int, replicas: int, seed: int, L: int | None = None,
                            cap: int = WALK_CAP) -> SuccessCurve:
    """Certificate success frequency along a density grid, with coupled particle fields.

    ``cap`` bounds each exploration walk; walks that hit it count as failures.
    """
    mus = _floats(mus)
    ceiling = max(mus)
    lowest = min((m for m in mus if m > 0), default=1.0)
    L = L or int(math.ceil(3 * n / lowest)) + 100
    box = Box.centered(L)
    wins = [0] * len(mus)
    for r in range(replicas):
        pseed, fseed = replica_seeds(seed, r)
        fld = InstructionField(fseed, model)
        for g, mu in enumerate(mus):
            eta = sample_poisson_config(pseed, mu, box, ceiling=ceiling)
            wins[g] += build_certificate(model, eta, fld, n, cap=cap, keep_traces=False).success
    return SuccessCurve(mus, n, tuple(wins), replicas, L)
