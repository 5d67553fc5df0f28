"""Replicated steady-state runs and the statistical battery for the
equilibrium invariant measure.

At equal baths the stationary law has a Poisson particle count with mean
``lambda`` and, given the count, Gaussian velocities, uniform positions in
the playground and uniform disk angles.  ``run_replica`` produces snapshot
samples; the ``*_test`` functions turn them into :class:`TestReport` rows.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import integrate, stats

from .baths import BathSpec, bath_streams, equilibrium_bath
from .dynamics import PhysicalParams, Simulator, SystemState
from .exceptions import DynamicsHalted, InsufficientSamples
from .geometry import DomainSpec

MIN_SAMPLES = 1000
DEFAULT_LEVEL = 1e-3


def equilibrium_mean_count(dom: DomainSpec, rho: float, m: float, T: float,
                           rho_right: Optional[float] = None, T_right: Optional[float] = None) -> float:
    """Mean particle number ``2 sqrt(pi) |Gamma| / |gamma| * rho sqrt(m / T)``.

    Only defined for equal baths; pass the right-bath values to have that
    checked.
    """
    if (rho_right is not None and rho_right != rho) or (T_right is not None and T_right != T):
        raise ValueError("the mean count formula only holds for identical baths")
    if T <= 0 or m <= 0 or rho < 0:
        raise ValueError("need T > 0, m > 0, rho >= 0")
    return 2.0 * math.sqrt(math.pi) * dom.area / dom.opening_length * rho * math.sqrt(m) / math.sqrt(T)


def default_burn_in(lam: float, total_rate: float, n_residence: float = 20.0) -> float:
    """``n_residence`` mean residence times, residence ~ lambda / (rho_L + rho_R)."""
    if total_rate <= 0:
        return 0.0
    return n_residence * lam / total_rate


# ---------------------------------------------------------------- running

@dataclass
class RunConfig:
    dom: DomainSpec
    params: PhysicalParams
    baths: Sequence[BathSpec]
    seed: int = 0
    t_end: float = 1000.0
    burn_in: float = 100.0
    sample_interval: float = 1.0
    initial: Optional[SystemState] = None

    def __post_init__(self):
        if not self.burn_in < self.t_end:
            raise ValueError("burn_in must be smaller than t_end")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")

    @classmethod
    def equilibrium(cls, n_disks=1, radius=0.3, eta=1.0, mass=1.0, T=1.0, rho=0.5, **kw) -> "RunConfig":
        dom = DomainSpec(n_disks, radius)
        baths = [equilibrium_bath("left", T, rho, mass), equilibrium_bath("right", T, rho, mass)]
        if "burn_in" not in kw:
            lam = equilibrium_mean_count(dom, rho, mass, T)
            kw["burn_in"] = default_burn_in(lam, 2 * rho)
        return cls(dom, PhysicalParams(eta, mass), baths, **kw)


@dataclass
class SteadyStateSample:
    time: float
    k: int
    q: np.ndarray      # (k, 2)
    v: np.ndarray      # (k, 2)
    phi: np.ndarray    # (N,)
    omega: np.ndarray  # (N,)


@dataclass
class ReplicaResult:
    """Snapshot series of one replica, stored column-wise."""

    replica: int
    times: np.ndarray
    counts: np.ndarray                 # (n,)
    phi: np.ndarray                    # (n, N)
    omega: np.ndarray                  # (n, N)
    q: np.ndarray                      # (sum k, 2)
    v: np.ndarray                      # (sum k, 2)
    injections: int = 0
    exits: int = 0
    events: int = 0
    halted: Optional[str] = None
    flags: Dict[str, int] = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.halted is None

    def samples(self):
        """Iterate over :class:`SteadyStateSample` objects."""
        off = np.concatenate([[0], np.cumsum(self.counts)])
        for i, t in enumerate(self.times):
            a, b = off[i], off[i + 1]
            yield SteadyStateSample(float(t), int(self.counts[i]), self.q[a:b], self.v[a:b],
                                    self.phi[i], self.omega[i])


def run_replica(cfg: RunConfig, replica: int = 0) -> ReplicaResult:
    """Run one replica and snapshot it every ``sample_interval`` after burn-in.

    A replica whose dynamics halts is returned with ``halted`` set and should
    be excluded from statistics.
    """
    dom = cfg.dom
    state = cfg.initial.copy() if cfg.initial is not None else SystemState.empty(dom)
    sim = Simulator(dom, cfg.params, state, sources=bath_streams(cfg.baths, cfg.seed, replica, state.time),
                    record=False)
    times = np.arange(cfg.burn_in, cfg.t_end + 0.5 * cfg.sample_interval, cfg.sample_interval)
    times = times[times <= cfg.t_end]
    counts = np.zeros(len(times), dtype=np.int64)
    phi = np.zeros((len(times), dom.n_disks))
    omega = np.zeros((len(times), dom.n_disks))
    qs, vs = [], []
    halted = None
    n_done = 0
    try:
        for i, t in enumerate(times):
            sim.run(float(t))
            st = sim.state()
            counts[i] = st.k
            for p in st.particles:
                qs.append(p.q)
                vs.append(p.v)
            phi[i] = [d.phi for d in st.disks]
            omega[i] = [d.omega for d in st.disks]
            n_done = i + 1
    except DynamicsHalted as exc:
        halted = exc.reason
    c = sim.counts
    return ReplicaResult(
        replica, times[:n_done], counts[:n_done], phi[:n_done], omega[:n_done],
        np.array(qs, dtype=float).reshape(-1, 2), np.array(vs, dtype=float).reshape(-1, 2),
        injections=c["inject_left"] + c["inject_right"], exits=c["exit_left"] + c["exit_right"],
        events=sum(c.values()), halted=halted,
        flags={"tangential_stop": len(sim.tangential_stops), "trapped": len(sim.trapped)})


def _run_one(args):
    cfg, r = args
    return run_replica(cfg, r)


def run_ensemble(cfg: RunConfig, replicas: int = 1, n_jobs: int = 1) -> List[ReplicaResult]:
    """Run independent replicas, optionally in worker processes.

    The result is sorted by replica id, so it does not depend on scheduling.
    """
    jobs = [(cfg, r) for r in range(replicas)]
    if n_jobs == 1 or replicas == 1:
        out = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            out = list(ex.map(_run_one, jobs))
    return sorted(out, key=lambda r: r.replica)


# ---------------------------------------------------------------- decorrelation

def integrated_autocorr_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        return 1.0
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var == 0:
        return 1.0
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:n] / (var * n)
    taus = 2.0 * np.cumsum(acf) - 1.0
    for M in range(1, n):
        if M >= c * taus[M]:
            return max(float(taus[M]), 1.0)
    return max(float(taus[-1]), 1.0)


def thinning_stride(results: Sequence[ReplicaResult]) -> int:
    """Common stride making snapshots approximately independent.

    Uses the largest integrated autocorrelation time over the count series
    and every disk's angular velocity series.
    """
    tau = 1.0
    for r in results:
        if len(r.counts) < 10:
            continue
        tau = max(tau, integrated_autocorr_time(r.counts))
        for j in range(r.omega.shape[1]):
            tau = max(tau, integrated_autocorr_time(r.omega[:, j]))
    return max(1, int(math.ceil(2.0 * tau)))


@dataclass
class PooledSamples:
    counts: np.ndarray
    phi: np.ndarray
    omega: np.ndarray
    q: np.ndarray
    v: np.ndarray
    raw_size: int
    stride: int
    n_halted: int = 0

    @property
    def n(self) -> int:
        return len(self.counts)


def pool(results: Sequence[ReplicaResult], stride: Optional[int] = None) -> PooledSamples:
    """Merge valid replicas after thinning; halted replicas are only counted."""
    valid = sorted((r for r in results if r.valid), key=lambda r: r.replica)
    n_halted = sum(1 for r in results if not r.valid)
    if stride is None:
        stride = thinning_stride(valid)
    cs, ph, om, qs, vs = [], [], [], [], []
    raw = 0
    for r in valid:
        raw += len(r.counts)
        off = np.concatenate([[0], np.cumsum(r.counts)])
        idx = np.arange(0, len(r.counts), stride)
        cs.append(r.counts[idx])
        ph.append(r.phi[idx])
        om.append(r.omega[idx])
        sel = np.concatenate([np.arange(off[i], off[i + 1]) for i in idx]) if len(idx) else np.array([], int)
        qs.append(r.q[sel.astype(int)])
        vs.append(r.v[sel.astype(int)])
    nd = valid[0].phi.shape[1] if valid else 0
    cat = lambda xs, shape: np.concatenate(xs) if xs else np.zeros(shape)
    return PooledSamples(cat(cs, (0,)).astype(np.int64), cat(ph, (0, nd)), cat(om, (0, nd)),
                         cat(qs, (0, 2)), cat(vs, (0, 2)), raw, stride, n_halted)


# ---------------------------------------------------------------- tests

@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    name: str
    statistic: float
    null: str
    p_value: float
    level: float
    n: int
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.p_value >= self.level

    def to_dict(self) -> dict:
        return {"name": self.name, "statistic": self.statistic, "null": self.null,
                "p_value": self.p_value, "level": self.level, "n": self.n,
                "passed": self.passed, **self.extra}


def poisson_count_test(counts, lam: float, level: float = DEFAULT_LEVEL,
                       min_samples: int = MIN_SAMPLES, name: str = "count_poisson") -> TestReport:
    """Chi-square goodness of fit of counts against Poisson(lam).

    Bins are single values of k; both tails are pooled until every bin has
    an expected count of at least 5.
    """
    counts = np.asarray(counts, dtype=np.int64)
    n = len(counts)
    if n < min_samples:
        raise InsufficientSamples(f"{n} samples, need {min_samples}")
    kmax = max(int(counts.max()), int(lam + 10 * math.sqrt(lam) + 10))
    ks = np.arange(kmax + 1)
    probs = stats.poisson.pmf(ks, lam)
    probs[-1] += stats.poisson.sf(kmax, lam)
    obs = np.bincount(counts, minlength=kmax + 1).astype(float)
    exp = probs * n
    edges = _pool_bins(exp)
    o = np.array([obs[a:b].sum() for a, b in edges])
    e = np.array([exp[a:b].sum() for a, b in edges])
    if len(o) < 2:
        raise InsufficientSamples("fewer than two bins with expected count >= 5")
    chi2 = float(((o - e) ** 2 / e).sum())
    p = float(stats.chi2.sf(chi2, len(o) - 1))
    return TestReport(name, chi2, f"Poisson({lam:.6g})", p, level, n,
                      {"bins": len(o), "mean": float(counts.mean()), "var": float(counts.var())})


def _pool_bins(exp, min_expected: float = 5.0):
    """Contiguous index ranges over ``exp`` whose sums are all >= min_expected.

    Bins are grown greedily from the left; a short remainder on the right is
    merged into the last bin.  For unimodal pmfs this pools only the tails.
    """
    out = []
    start, acc = 0, 0.0
    for i, e in enumerate(exp):
        acc += e
        if acc >= min_expected:
            out.append((start, i + 1))
            start, acc = i + 1, 0.0
    if start < len(exp):
        if out:
            out[-1] = (out[-1][0], len(exp))
        else:
            out.append((0, len(exp)))
    return out


def ks_normal_test(x, var: float, level: float, name: str) -> TestReport:
    x = np.asarray(x, dtype=float)
    res = stats.kstest(x, "norm", args=(0.0, math.sqrt(var)))
    return TestReport(name, float(res.statistic), f"Normal(0, {var:.6g})", float(res.pvalue), level, len(x),
                      {"sample_var": float(x.var()) if len(x) else float("nan")})


def ks_uniform_angle_test(phi, level: float, name: str) -> TestReport:
    phi = np.asarray(phi, dtype=float)
    res = stats.kstest(phi, "uniform", args=(0.0, 2.0 * math.pi))
    return TestReport(name, float(res.statistic), "Uniform[0, 2pi)", float(res.pvalue), level, len(phi))


def cell_areas(dom: DomainSpec, nx: int, ny: int):
    """Area of each grid cell intersected with the playground, shape (nx, ny)."""
    xe = np.linspace(0.0, dom.width, nx + 1)
    ye = np.linspace(-1.0, 1.0, ny + 1)
    R = dom.disk_radius
    areas = np.empty((nx, ny))
    for i in range(nx):
        for jy in range(ny):
            y0, y1 = ye[jy], ye[jy + 1]
            full = (xe[i + 1] - xe[i]) * (y1 - y0)
            cut = 0.0
            for cx, _ in dom.centers:
                a, b = max(xe[i], cx - R), min(xe[i + 1], cx + R)
                if b <= a:
                    continue

                def chord(x, cx=cx):
                    h = math.sqrt(max(R * R - (x - cx) ** 2, 0.0))
                    return max(0.0, min(y1, h) - max(y0, -h))

                cut += integrate.quad(chord, a, b, epsabs=1e-12, limit=200)[0]
            areas[i, jy] = full - cut
    return areas, xe, ye


def position_grid_test(q, dom: DomainSpec, level: float, nx: Optional[int] = None, ny: int = 8,
                       name: str = "position_uniform") -> TestReport:
    """Chi-square test of positions against the uniform law on the playground."""
    q = np.asarray(q, dtype=float).reshape(-1, 2)
    nx = nx or 4 * dom.n_disks * 2
    areas, xe, ye = cell_areas(dom, nx, ny)
    obs, _, _ = np.histogram2d(q[:, 0], q[:, 1], bins=[xe, ye])
    exp = areas / dom.area * len(q)
    o, e = obs.ravel(), exp.ravel()
    big = e >= 5.0
    o_b, e_b = list(o[big]), list(e[big])
    if (~big).any():
        o_b.append(o[~big].sum())
        e_b.append(e[~big].sum())
    o_b, e_b = np.array(o_b), np.array(e_b)
    keep = e_b > 0
    o_b, e_b = o_b[keep], e_b[keep]
    if len(o_b) < 2:
        raise InsufficientSamples("too few positions for the grid test")
    chi2 = float(((o_b - e_b) ** 2 / e_b).sum())
    p = float(stats.chi2.sf(chi2, len(o_b) - 1))
    return TestReport(name, chi2, "Uniform(Gamma)", p, level, len(q), {"bins": len(o_b)})


def marginal_tests(pooled: PooledSamples, T: float, m: float, theta: float, dom: DomainSpec,
                   level: float = DEFAULT_LEVEL, min_samples: int = MIN_SAMPLES) -> List[TestReport]:
    """KS tests of disk and particle velocity marginals, uniformity of positions and angles.

    ``level`` is the per-test level; Bonferroni correction is the caller's job.
    """
    if pooled.n < min_samples:
        raise InsufficientSamples(f"{pooled.n} snapshots, need {min_samples}")
    out = []
    for j in range(pooled.omega.shape[1]):
        out.append(ks_normal_test(pooled.omega[:, j], T / theta, level, f"omega_{j + 1}"))
    out.append(ks_normal_test(pooled.v[:, 0], T / m, level, "v_x"))
    out.append(ks_normal_test(pooled.v[:, 1], T / m, level, "v_y"))
    out.append(position_grid_test(pooled.q, dom, level))
    for j in range(pooled.phi.shape[1]):
        out.append(ks_uniform_angle_test(pooled.phi[:, j], level, f"phi_{j + 1}"))
    return out


def equilibrium_battery(pooled: PooledSamples, dom: DomainSpec, params: PhysicalParams, rho: float,
                        T: float, level: float = DEFAULT_LEVEL, lam: Optional[float] = None,
                        T_null: Optional[float] = None) -> List[TestReport]:
    """Count test at ``level`` plus marginals at Bonferroni-corrected ``level``.

    ``lam`` and ``T_null`` override the null hypotheses (negative controls).
    """
    lam = equilibrium_mean_count(dom, rho, params.mass, T) if lam is None else lam
    Tn = T if T_null is None else T_null
    theta = params.inertia(dom.disk_radius)
    n_marg = 2 * dom.n_disks + 3
    reports = [poisson_count_test(pooled.counts, lam, level)]
    reports += marginal_tests(pooled, Tn, params.mass, theta, dom, level / n_marg)
    return reports


def flux_balance(results: Sequence[ReplicaResult]) -> dict:
    inj = sum(r.injections for r in results if r.valid)
    ext = sum(r.exits for r in results if r.valid)
    return {"injections": inj, "exits": ext,
            "relative_imbalance": abs(inj - ext) / inj if inj else 0.0}


# ---------------------------------------------------------------- negative controls

def count_test_power(lam_true: float, lam_null: float, n: int, level: float = DEFAULT_LEVEL,
                     reps: int = 200, seed: int = 0) -> float:
    """Fraction of synthetic Poisson(lam_true) samples of size ``n`` rejected against lam_null."""
    rng = np.random.default_rng(seed)
    rej = 0
    for _ in range(reps):
        rep = poisson_count_test(rng.poisson(lam_true, n), lam_null, level, min_samples=1)
        rej += not rep.passed
    return rej / reps


def ks_normal_power(var_true: float, var_null: float, n: int, level: float,
                    reps: int = 200, seed: int = 0) -> float:
    """Fraction of synthetic Normal(0, var_true) samples rejected against Normal(0, var_null)."""
    rng = np.random.default_rng(seed)
    sd_t, sd_n = math.sqrt(var_true), math.sqrt(var_null)
    rej = 0
    for _ in range(reps):
        p = stats.kstest(rng.normal(0.0, sd_t, n), "norm", args=(0.0, sd_n)).pvalue
        rej += p < level
    return rej / reps
