"""Path simulation: the single SDE and the coupled pair.

Euler-Maruyama on a fixed grid with thinned jumps above a cutoff eps.  Small
jumps are dropped together with their compensator (they form a martingale, so
the mean is untouched); optionally a Gaussian term with the matching variance
is added instead.  The coupled scheme drives the Brownian parts by reflection
(refined-basic) or synchronously, and assigns each accepted jump to one of the
four displacement rows of the refined basic coupling by a uniform mark thinned
against the overlap ratio rho.

Randomness is counter-based: every (step, draw-slot) pair owns a Philox stream
keyed by the master seed, from which a full cross-section of N variates is
generated at once.  Results are therefore bit-reproducible and independent of
how the work is scheduled.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .model import CoefficientSet, LevyMeasure

_MAGIC = b"NLBE"
_VERSION = 1
_MAX_SUBSTEPS = 16
_STATE_CAP = 1e12   # beyond this a path is flagged as blown up

_SLOT_BROWNIAN = 0
_SLOT_JUMP_OCCUR = 1
_SLOT_JUMP_SIZE = 2
_SLOT_MARK = 3
_SLOT_GAUSS_COMP = 4


@dataclass(frozen=True)
class SimConfig:
    """Discretization and coupling parameters."""

    h: float = 1e-3
    eps: float = 0.05
    t_end: float = 1.0
    n_paths: int = 1000
    seed: int = 0
    small_jump_policy: str = "drop-with-compensator"
    boundary: str = "clamp-to-zero"
    delta_c: Optional[float] = None   # default 1e-6 * (1 + x0) at run time
    kappa: float = 0.5
    coupling: str = "refined-basic"
    record_times: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.h <= 0 or self.eps <= 0 or self.t_end <= 0:
            raise DomainError("h, eps and t_end must be positive")
        if self.n_paths < 1:
            raise DomainError("need at least one path")
        if self.kappa <= 0:
            raise DomainError("kappa must be positive")
        if self.delta_c is not None and self.delta_c <= 0:
            raise DomainError("coalescence threshold must be positive")
        if self.small_jump_policy not in ("drop-with-compensator",
                                          "gaussian-compensation"):
            raise DomainError(f"unknown small-jump policy {self.small_jump_policy!r}")
        if self.boundary != "clamp-to-zero":
            raise DomainError(f"unknown boundary policy {self.boundary!r}")
        if self.coupling not in ("refined-basic", "synchronous"):
            raise DomainError(f"unknown coupling kind {self.coupling!r}")

    def resolved_delta_c(self, x0):
        return self.delta_c if self.delta_c is not None else 1e-6 * (1.0 + x0)

    def resolved_record_times(self):
        if self.record_times is not None:
            ts = np.asarray(sorted(set(float(t) for t in self.record_times)))
            if np.any(ts < 0) or ts[-1] > self.t_end * (1 + 1e-9):
                raise DomainError("record times must lie in [0, t_end]")
            return ts
        return np.linspace(0.0, self.t_end, 11)

    def echo(self):
        d = asdict(self)
        d["record_times"] = list(self.resolved_record_times())
        return d


def _draws(seed, slot, counter, n, normal=False):
    """A cross-section of n variates from the (seed, slot, counter) stream."""
    # the step index lives in the high counter word: generation increments the
    # counter from the low word, so streams of successive steps stay disjoint
    bits = np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, slot],
                                         dtype=np.uint64),
                            counter=np.array([0, 0, 0, counter], dtype=np.uint64))
    gen = np.random.Generator(bits)
    return gen.standard_normal(n) if normal else gen.random(n)


@dataclass
class SingleEnsemble:
    """N marginal paths sampled at the record times."""

    times: np.ndarray           # (K,)
    X: np.ndarray               # (K, N)
    x0: float
    flagged: np.ndarray         # (N,) bool, blown-up paths (excluded downstream)
    config: dict
    max_jump_prob: float = 0.0  # worst per-substep thinning probability seen

    @property
    def n_paths(self):
        return self.X.shape[1]

    def at(self, t):
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * (1.0 + abs(t)):
            raise DomainError(f"t = {t} is not a recorded checkpoint")
        return self.X[idx]


@dataclass
class CoupledEnsemble:
    """N coupled pairs with coalescence bookkeeping."""

    times: np.ndarray
    X: np.ndarray               # (K, N)
    Y: np.ndarray               # (K, N)
    x0: float
    y0: float
    coalescence: np.ndarray     # (N,) time T, inf if never
    order_violations: int       # steps with Y - X > delta_c (true violations)
    order_repairs: int          # steps with 0 < Y - X <= delta_c (projected)
    flagged: np.ndarray
    config: dict
    max_jump_prob: float = 0.0

    @property
    def n_paths(self):
        return self.X.shape[1]

    def _index(self, t):
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * (1.0 + abs(t)):
            raise DomainError(f"t = {t} is not a recorded checkpoint")
        return idx

    def gap_at(self, t):
        i = self._index(t)
        return self.X[i] - self.Y[i]

    def marginal_at(self, t, which="X"):
        i = self._index(t)
        return (self.X if which == "X" else self.Y)[i]


def _milstein_coef(coeffs, X):
    """(1/2) sigma sigma' = (1/4) gamma1', by central difference of gamma1.

    The correction (1/4) gamma1'(X) (xi^2 - 1) h keeps square-root diffusions
    nonnegative at the reflecting boundary and removes the O(sqrt(h)) clamping
    bias there; its increment has zero mean, so coupled gap means are exact.
    """
    d = 1e-5 * (1.0 + np.abs(X))
    lo = np.maximum(X - d, 0.0)
    return 0.25 * (coeffs.gamma1(X + d) - coeffs.gamma1(lo)) / (X + d - lo)


def _jump_setup(nu, coeffs, cfg):
    nu_eps = nu.tail_mass(cfg.eps)
    mean_eps = nu.mean_above(cfg.eps) if nu_eps > 0 else 0.0
    small_var = nu.trunc_second_moment(cfg.eps) if \
        cfg.small_jump_policy == "gaussian-compensation" else 0.0
    return nu_eps, mean_eps, small_var


def _record_plan(cfg):
    """Map each record time to a step index on the grid."""
    n_steps = int(round(cfg.t_end / cfg.h))
    if abs(n_steps * cfg.h - cfg.t_end) > 1e-9 * cfg.t_end:
        n_steps = int(math.ceil(cfg.t_end / cfg.h))
    times = cfg.resolved_record_times()
    steps = np.minimum(np.round(times / cfg.h).astype(int), n_steps)
    return n_steps, times, steps


def simulate_single(coeffs: CoefficientSet, nu: Optional[LevyMeasure],
                    x0: float, cfg: SimConfig) -> SingleEnsemble:
    """Euler-Maruyama ensemble of the marginal SDE started at x0 >= 0."""
    if x0 < 0:
        raise DomainError("x0 must be nonnegative")
    n = cfg.n_paths
    nu_eps, mean_eps, small_var = _jump_setup(nu, coeffs, cfg) if nu is not None \
        else (0.0, 0.0, 0.0)
    n_steps, rec_times, rec_steps = _record_plan(cfg)

    X = np.full(n, float(x0))
    flagged = np.zeros(n, dtype=bool)
    snapshots = np.empty((rec_times.size, n))
    for k in np.flatnonzero(rec_steps == 0):
        snapshots[k] = X

    counter = 0
    max_p = 0.0
    h = cfg.h
    sqh = math.sqrt(h)
    for step in range(1, n_steps + 1):
        live = ~flagged
        g0 = coeffs.gamma0(X)
        g2 = coeffs.gamma2(X)
        sig = coeffs.sigma(X)
        xi = _draws(cfg.seed, _SLOT_BROWNIAN, counter, n, normal=True)
        dX = g0 * h + sig * sqh * xi \
            + _milstein_coef(coeffs, X) * (xi * xi - 1.0) * h
        if nu_eps > 0:
            dX -= g2 * mean_eps * h
            if small_var > 0.0:
                xi2 = _draws(cfg.seed, _SLOT_GAUSS_COMP, counter, n, normal=True)
                dX = dX + np.sqrt(np.maximum(g2 * small_var * h, 0.0)) * xi2
        Xn = np.maximum(X + dX, 0.0)
        if nu_eps > 0:
            # jump thinning in rounds of acceptance probability <= ~0.1; the
            # drift map above never depends on the round count, so the law of
            # a no-jump path is identical across ensembles
            pmax = float(np.max(g2[live], initial=0.0)) * nu_eps * h
            m = min(max(1, int(math.ceil(pmax / 0.1))), _MAX_SUBSTEPS)
            for _ in range(m):
                p = coeffs.gamma2(Xn) * nu_eps * (h / m)
                max_p = max(max_p, float(np.max(p[live], initial=0.0)))
                u = _draws(cfg.seed, _SLOT_JUMP_OCCUR, counter, n)
                jumps = u < np.minimum(p, 1.0)
                if np.any(jumps):
                    us = _draws(cfg.seed, _SLOT_JUMP_SIZE, counter, n)
                    z = np.asarray(nu.quantile_above(cfg.eps, us))
                    Xn = np.where(jumps, Xn + z, Xn)
                counter += 1
        X = np.where(live, Xn, X)
        bad = live & (~np.isfinite(X) | (X > _STATE_CAP))
        if np.any(bad):
            flagged |= bad
            X = np.where(bad, np.nan, X)
        counter += 1
        for k in np.flatnonzero(rec_steps == step):
            snapshots[k] = X
    return SingleEnsemble(times=rec_times, X=snapshots, x0=float(x0),
                          flagged=flagged, config=cfg.echo(), max_jump_prob=max_p)


def simulate_coupled(coeffs: CoefficientSet, nu: Optional[LevyMeasure],
                     x0: float, y0: float, cfg: SimConfig) -> CoupledEnsemble:
    """Coupled ensemble from x0 > y0 >= 0 (x0 = y0 starts coalesced).

    Per step, before coalescence: Brownian increments are reflected
    (refined-basic) or shared (synchronous); jump proposals are thinned at the
    dominating rate gamma2(X) nu((eps, oo)) and assigned to a displacement row
    by a uniform mark on [0, gamma2(X)) using the overlap ratio rho evaluated
    at the current gap.  After the gap first falls within delta_c the pair is
    merged and evolves as a single path.
    """
    if y0 < 0 or x0 < y0:
        raise DomainError("need x0 >= y0 >= 0")
    n = cfg.n_paths
    refined = cfg.coupling == "refined-basic"
    delta_c = cfg.resolved_delta_c(x0)
    nu_eps, mean_eps, small_var = _jump_setup(nu, coeffs, cfg) if nu is not None \
        else (0.0, 0.0, 0.0)
    n_steps, rec_times, rec_steps = _record_plan(cfg)

    X = np.full(n, float(x0))
    Y = np.full(n, float(y0))
    coal = np.full(n, math.inf)
    if x0 - y0 <= delta_c:
        Y[:] = X
        coal[:] = 0.0
    flagged = np.zeros(n, dtype=bool)
    violations = 0
    repairs = 0
    snapX = np.empty((rec_times.size, n))
    snapY = np.empty((rec_times.size, n))
    for k in np.flatnonzero(rec_steps == 0):
        snapX[k], snapY[k] = X, Y

    counter = 0
    max_p = 0.0
    h = cfg.h
    sqh = math.sqrt(h)
    for step in range(1, n_steps + 1):
        live = ~flagged
        alive = live & (coal == math.inf)
        g0x, g0y = coeffs.gamma0(X), coeffs.gamma0(Y)
        g2x, g2y = coeffs.gamma2(X), coeffs.gamma2(Y)
        sigx, sigy = coeffs.sigma(X), coeffs.sigma(Y)
        xi = _draws(cfg.seed, _SLOT_BROWNIAN, counter, n, normal=True)
        # reflection until coalescence; shared noise afterwards
        ysign = np.where(alive & refined, -1.0, 1.0)
        mil = (xi * xi - 1.0) * h
        dX = g0x * h + sigx * sqh * xi + _milstein_coef(coeffs, X) * mil
        dY = g0y * h + sigy * sqh * ysign * xi + _milstein_coef(coeffs, Y) * mil
        if nu_eps > 0:
            dX -= g2x * mean_eps * h
            dY -= g2y * mean_eps * h
            if small_var > 0.0:
                xi2 = _draws(cfg.seed, _SLOT_GAUSS_COMP, counter, n, normal=True)
                dX = dX + np.sqrt(np.maximum(g2x * small_var * h, 0.0)) * xi2
                dY = dY + np.sqrt(np.maximum(g2y * small_var * h, 0.0)) \
                    * ysign * xi2
        Xn = np.maximum(X + dX, 0.0)
        Yn = np.maximum(Y + dY, 0.0)
        # jumps act on the post-drift state in thinning rounds of acceptance
        # probability <= ~0.1 each: the row geometry (gap, rho) is evaluated
        # where the jump lands, so an exact-meeting row really produces gap 0
        # instead of gap minus one drift increment; and the drift map above
        # never depends on the round count, so the marginal law matches the
        # single-path scheme exactly
        if nu_eps > 0:
            pmax = float(np.max(g2x[live], initial=0.0)) * nu_eps * h
            m = min(max(1, int(math.ceil(pmax / 0.1))), _MAX_SUBSTEPS)
            for _ in range(m):
                g2xr, g2yr = coeffs.gamma2(Xn), coeffs.gamma2(Yn)
                p = g2xr * nu_eps * (h / m)
                max_p = max(max_p, float(np.max(p[live], initial=0.0)))
                u = _draws(cfg.seed, _SLOT_JUMP_OCCUR, counter, n)
                events = live & (u < np.minimum(p, 1.0))
                if np.any(events):
                    us = _draws(cfg.seed, _SLOT_JUMP_SIZE, counter, n)
                    um = _draws(cfg.seed, _SLOT_MARK, counter, n)
                    idx = np.flatnonzero(events)
                    z = np.asarray(nu.quantile_above(cfg.eps, us[idx]))
                    mark = um[idx] * g2xr[idx]
                    U = np.maximum(Xn[idx] - Yn[idx], 0.0)
                    Uk = np.minimum(U, cfg.kappa)
                    if refined:
                        rho_minus = np.asarray(nu.rho(-Uk, z))
                        rho_plus = np.asarray(nu.rho(Uk, z))
                        a1 = 0.5 * g2yr[idx] * rho_minus
                        a2 = a1 + 0.5 * g2yr[idx] * rho_plus
                        a3 = g2yr[idx]
                        row1 = mark < a1
                        row2 = ~row1 & (mark < a2)
                        row3 = ~row1 & ~row2 & (mark < a3)
                        y_disp = np.where(row1, z + Uk,
                                          np.where(row2, z - Uk,
                                                   np.where(row3, z, 0.0)))
                    else:
                        common = mark < g2yr[idx]
                        y_disp = np.where(common, z, 0.0)
                    add_x = np.zeros(n)
                    add_y = np.zeros(n)
                    add_x[idx] = z
                    add_y[idx] = y_disp
                    Xn = Xn + add_x
                    Yn = Yn + add_y
                counter += 1
        X = np.where(live, Xn, X)
        Y = np.where(live, Yn, Y)

        gap = X - Y
        # order bookkeeping (only meaningful pre-coalescence).  With an
        # active diffusion part a sign change means the two paths crossed
        # inside the step, i.e. they met: project to the midpoint and let
        # the coalescence test pick the pair up.  On pure-jump paths the
        # scheme preserves order exactly, so a negative gap beyond the
        # rounding threshold is a genuine violation and is counted.
        neg = alive & (gap < 0)
        crossed = neg & (sigx + sigy > 0)
        small_neg = (neg & ~crossed & (gap >= -delta_c)) | crossed
        if np.any(small_neg):
            repairs += int(np.count_nonzero(small_neg & ~crossed))
            mid = 0.5 * (X + Y)
            X = np.where(small_neg, mid, X)
            Y = np.where(small_neg, mid, Y)
            gap = X - Y
        big_neg = neg & ~crossed & (gap < -delta_c)
        violations += int(np.count_nonzero(big_neg))

        # coalescence detection and permanence (time at step resolution)
        t_now = step * cfg.h
        hit = alive & ((np.abs(gap) <= delta_c) | crossed)
        if np.any(hit):
            coal = np.where(hit, t_now, coal)
        merged = live & (coal <= t_now)
        Y = np.where(merged, X, Y)

        bad = live & (~np.isfinite(X) | ~np.isfinite(Y)
                      | (X > _STATE_CAP) | (Y > _STATE_CAP))
        if np.any(bad):
            flagged |= bad
            X = np.where(bad, np.nan, X)
            Y = np.where(bad, np.nan, Y)
        counter += 1
        for k in np.flatnonzero(rec_steps == step):
            snapX[k], snapY[k] = X, Y
    return CoupledEnsemble(times=rec_times, X=snapX, Y=snapY, x0=float(x0),
                           y0=float(y0), coalescence=coal,
                           order_violations=violations, order_repairs=repairs,
                           flagged=flagged, config=cfg.echo(), max_jump_prob=max_p)


def marginal_consistency(coeffs, nu, x0, y0, cfg: SimConfig, checkpoints=None):
    """Compare the law of the coupled X-coordinate against an independent
    marginal run: means, second moments and the two-sample KS statistic.

    The coupling must preserve marginals; a large KS statistic is a verdict
    against the jump-row bookkeeping, not an exception.
    """
    from scipy import stats

    single = simulate_single(coeffs, nu, x0, cfg)
    from dataclasses import replace as _dc_replace
    coupled = simulate_coupled(coeffs, nu, x0, y0,
                               _dc_replace(cfg, seed=cfg.seed + 0x5D1F))
    if checkpoints is None:
        checkpoints = [t for t in single.times if t > 0]
    rows = []
    worst = 0.0
    for t in checkpoints:
        a = single.at(t)[~single.flagged]
        b = coupled.marginal_at(t, "X")[~coupled.flagged]
        ks = float(stats.ks_2samp(a, b).statistic)
        worst = max(worst, ks)
        rows.append({"t": float(t), "ks": ks,
                     "mean_single": float(np.mean(a)),
                     "mean_coupled": float(np.mean(b)),
                     "m2_single": float(np.mean(a ** 2)),
                     "m2_coupled": float(np.mean(b ** 2))})
    return {"max_ks": worst, "checkpoints": rows}


# ---------------------------------------------------------------------------
# serialization


def write_ensemble(path, ens: CoupledEnsemble):
    """Binary record file: magic, version, JSON header, then per path
    (id u64, seed u64, coalescence f64, K x (t, X, Y) f64), little-endian."""
    header = json.dumps({"config": ens.config, "x0": ens.x0, "y0": ens.y0,
                         "n_paths": int(ens.n_paths),
                         "times": [float(t) for t in ens.times]},
                        sort_keys=True).encode()
    seed = int(ens.config.get("seed", 0))
    K = ens.times.size
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(header)))
        fh.write(header)
        for p in range(ens.n_paths):
            fh.write(struct.pack("<QQd", p, seed, float(ens.coalescence[p])))
            triples = np.empty((K, 3))
            triples[:, 0] = ens.times
            triples[:, 1] = ens.X[:, p]
            triples[:, 2] = ens.Y[:, p]
            fh.write(triples.astype("<f8").tobytes())


def read_ensemble(path) -> CoupledEnsemble:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValidationError("not an ensemble file (bad magic)")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValidationError(f"unsupported ensemble version {version}")
        header = json.loads(fh.read(hlen).decode())
        times = np.asarray(header["times"])
        K, N = times.size, header["n_paths"]
        X = np.empty((K, N))
        Y = np.empty((K, N))
        coal = np.empty(N)
        for p in range(N):
            _pid, _seed, c = struct.unpack("<QQd", fh.read(24))
            coal[p] = c
            triples = np.frombuffer(fh.read(K * 3 * 8), dtype="<f8").reshape(K, 3)
            X[:, p] = triples[:, 1]
            Y[:, p] = triples[:, 2]
    flagged = ~np.isfinite(X[-1]) | ~np.isfinite(Y[-1])
    return CoupledEnsemble(times=times, X=X, Y=Y, x0=header["x0"], y0=header["y0"],
                           coalescence=coal, order_violations=0, order_repairs=0,
                           flagged=flagged, config=header["config"])


def write_ensemble_csv(path, ens: CoupledEnsemble, max_paths=1000):
    """CSV export for small ensembles: one row per (path, time)."""
    n = min(ens.n_paths, max_paths)
    with open(path, "w") as fh:
        fh.write("path,t,X,Y,coalescence\n")
        for p in range(n):
            for i, t in enumerate(ens.times):
                fh.write(f"{p},{t},{ens.X[i, p]!r},{ens.Y[i, p]!r},"
                         f"{ens.coalescence[p]!r}\n")
