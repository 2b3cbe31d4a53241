"""Event-driven sampler for the stirred voter chain on the torus.

Two engines share one observation contract. The tree engine keeps every
exchange bond and every flip site in a prefix-sum tree and re-evaluates the
local rates touched by each event; it accepts arbitrary speed-change families
and, by default, treats an exchange across an equal-occupancy bond as a null
event that burns clock without touching the state. The bond-list engine
applies to constant rate families only: it tracks the discordant bonds in a
dense list, draws uniformly from them, and never schedules a null event. Both
realize the same law; the property suite compares them against the exact
semigroup on small tori.

All randomness comes from one counter-based splitmix64 stream, so a
trajectory is a pure function of (seed, replica, parameters). Observers read
the piecewise-constant path at exact sample times, and the optional integral
channels (time integrals of the field, of the instantaneous drift, and of the
quadratic-variation density) are accumulated event-exactly as sums of value
times holding time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .cylinder import CylinderFunction, RateFamily
from .fields import FieldParams, TestFunction
from .lattice import Configuration, Torus, neighbor_tables, offset_table

_NO_BUDGET = np.int64(2**62)
_U_GOLD = np.uint64(0x9E3779B97F4A7C15)
_U_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_U_MIX2 = np.uint64(0x94D049BB133111EB)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_TWO_NEG53 = 1.1102230246251565e-16


def default_a_n(n: int) -> float:
    """Slowly growing flip acceleration sqrt(log n), floored at 1."""
    if n < 2:
        raise ValueError(f"need at least two sites per axis, got n={n}")
    return max(1.0, math.sqrt(math.log(n)))


@njit(cache=True, inline="always")
def _u01(state):
    """Advance the splitmix64 counter; return (state, uniform on (0, 1])."""
    state = state + _U_GOLD
    z = state
    z = (z ^ (z >> _U30)) * _U_MIX1
    z = (z ^ (z >> _U27)) * _U_MIX2
    z = z ^ (z >> _U31)
    return state, (np.float64(z >> _U11) + 1.0) * _TWO_NEG53


@njit(cache=True)
def _fill_bernoulli(occ, rho, state):
    for x in range(occ.shape[0]):
        state, u = _u01(state)
        occ[x] = 1 if u <= rho else 0
    return state


@dataclass(frozen=True)
class SimParams:
    """Static description of one chain: lattice, density, rates, speeds.

    ``a_n`` is the numeric flip acceleration (resolve the default with
    :func:`default_a_n`); ``a_n = 0`` disables flips entirely, a diagnostic
    mode in which observers drop the flip factor from their normalization.
    ``engine`` is "auto" (bond list when the rates are constant, tree
    otherwise), "tree", or "bondlist". ``effective_rates`` makes the tree
    engine skip null exchange events by zeroing equal-occupancy bonds; the
    bond-list engine always works that way. Every ``resync_every`` applied
    events the observable accumulators are recomputed from the configuration
    to stop float drift; the refresh never touches the event selection state,
    so the trajectory does not depend on the period.
    """

    torus: Torus
    rho: float
    rates: RateFamily
    a_n: float
    effective_rates: bool = False
    engine: str = "auto"
    resync_every: int = 1 << 20

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"density must sit strictly inside (0, 1), got {self.rho}")
        if self.a_n < 0.0 or not math.isfinite(self.a_n):
            raise ValueError(f"flip acceleration must be finite and >= 0, got {self.a_n}")
        if self.rates.d != self.torus.d:
            raise ValueError(
                f"rate family is {self.rates.d}-dimensional, torus is {self.torus.d}"
            )
        if self.engine not in ("auto", "tree", "bondlist"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.resync_every < 1:
            raise ValueError("resync period must be positive")
        span = _support_span(self.rates)
        if self.torus.n <= span:
            raise ValueError(
                f"torus side n={self.torus.n} does not exceed the rate support span {span}"
            )

    def resolved_engine(self) -> str:
        if self.engine == "bondlist" and not _constant_rate(self.rates):
            raise ValueError("bond-list engine needs one constant rate shared by all axes")
        if self.engine == "auto":
            return "bondlist" if _constant_rate(self.rates) else "tree"
        return self.engine

    def field_params(self) -> FieldParams:
        """Normalization parameters for observers attached to this chain."""
        return FieldParams(self.rho, self.a_n if self.a_n > 0.0 else 1.0)


def _support_span(rates: RateFamily) -> int:
    span = 1
    for axis, cj in enumerate(rates.c):
        sites = set(cj.support())
        sites.add((0,) * rates.d)
        ej = tuple(1 if k == axis else 0 for k in range(rates.d))
        sites.add(ej)
        for k in range(rates.d):
            lo = min(z[k] for z in sites)
            hi = max(z[k] for z in sites)
            span = max(span, hi - lo)
    return span


def _constant_rate(rates: RateFamily) -> bool:
    if not rates.is_constant():
        return False
    values = {cj.terms.get((), 0.0) for cj in rates.c}
    return len(values) == 1


@dataclass
class FieldObserver:
    """Sample density-field modes at fixed times, optionally with integrals.

    With ``integrals`` on, each mode also carries the event-exact running
    integrals of the field itself, of the instantaneous drift of the field
    (computed as the rate-weighted sum of jump increments), and of the
    quadratic-variation density.
    """

    sample_times: tuple
    modes: tuple
    integrals: bool = False


@dataclass
class CylinderObserver:
    """Sample a weighted lattice sum of one translated local function.

    Reports sum_x G(x/n) (tau_x f)(eta) under the field normalization, plus
    its event-exact time integral. One such channel per run.
    """

    sample_times: tuple
    f: CylinderFunction
    weight: TestFunction


@dataclass
class SnapshotObserver:
    """Record full occupancy snapshots at fixed times."""

    sample_times: tuple


@dataclass
class SimState:
    """One trajectory: occupancy, clock, stream position, event tallies."""

    params: SimParams
    occ: np.ndarray
    clock: float
    rng_state: int
    seed: int
    replica: int
    engine: str
    exclusion_events: int = 0
    voter_events: int = 0
    null_events: int = 0
    absorbed: bool = False

    def config(self) -> Configuration:
        return Configuration(self.params.torus, self.occ.copy())

    def particle_count(self) -> int:
        return int(self.occ.sum())

    def copy(self) -> "SimState":
        return SimState(
            self.params,
            self.occ.copy(),
            self.clock,
            self.rng_state,
            self.seed,
            self.replica,
            self.engine,
            self.exclusion_events,
            self.voter_events,
            self.null_events,
            self.absorbed,
        )


def init(params: SimParams, seed: int, replica: int = 0, start="bernoulli") -> SimState:
    """Fresh trajectory at clock 0.

    ``start`` is "bernoulli" (product measure at the configured density,
    drawn from the replica's own stream), a Configuration, or a bit string.
    Replica streams are decorrelated by folding the replica index into the
    seed before the counter sequence begins.
    """
    torus = params.torus
    state0 = np.uint64((int(seed) ^ int(replica)) & 0xFFFFFFFFFFFFFFFF)
    occ = np.zeros(torus.size, dtype=np.uint8)
    if isinstance(start, Configuration):
        if start.torus != torus:
            raise ValueError("starting configuration lives on a different torus")
        occ[:] = start.occ
    elif isinstance(start, str) and start != "bernoulli":
        occ[:] = Configuration.from_bits(torus, start).occ
    elif start == "bernoulli":
        state0 = _fill_bernoulli(occ, params.rho, state0)
    else:
        raise ValueError(f"unknown start {start!r}")
    return SimState(
        params=params,
        occ=occ,
        clock=0.0,
        rng_state=int(state0),
        seed=int(seed),
        replica=int(replica),
        engine=params.resolved_engine(),
    )


# ---------------------------------------------------------------------------
# shared numba helpers


@njit(cache=True, inline="always")
def _accum(acc, vals, seg):
    for m in range(vals.shape[0]):
        acc[m] += vals[m] * seg


@njit(cache=True, inline="always")
def _local_value(occ, ct_coeff, ct_ns, ct_sites, x):
    v = 0.0
    for t in range(ct_coeff.shape[0]):
        p = ct_coeff[t]
        for s in range(ct_ns[t]):
            p *= occ[ct_sites[t, s, x]]
        v += p
    return v


@njit(cache=True)
def _rebuild_local(occ, ct_coeff, ct_ns, ct_sites, Gw, locval):
    W = 0.0
    for x in range(occ.shape[0]):
        v = _local_value(occ, ct_coeff, ct_ns, ct_sites, x)
        locval[x] = v
        W += Gw[x] * v
    return W


@njit(cache=True, inline="always")
def _update_local(occ, u, aff, ct_coeff, ct_ns, ct_sites, Gw, locval, W):
    for a in range(aff.shape[0]):
        x = aff[a, u]
        v = _local_value(occ, ct_coeff, ct_ns, ct_sites, x)
        W += Gw[x] * (v - locval[x])
        locval[x] = v
    return W


@njit(cache=True)
def _rebuild_field(occ, rho, Fn, X):
    defect = 0.0
    for m in range(Fn.shape[0]):
        fresh = 0.0
        for x in range(occ.shape[0]):
            fresh += Fn[m, x] * (occ[x] - rho)
        defect = max(defect, abs(X[m] - fresh))
        X[m] = fresh
    return defect


# ---------------------------------------------------------------------------
# bond-list engine (constant rate families; no null events)


@njit(cache=True)
def _rebuild_bond(occ, bx, by, wD, wG, contribD, contribG, D, G, dlist, dpos, dstate, reorder):
    """Recompute per-bond drift/variation contributions from the configuration.

    Returns the largest absolute float drift found. With reorder the
    discordant list is also rebuilt in canonical bond order; without it the
    incrementally maintained list is left alone (its membership is exact by
    construction), so a mid-run refresh cannot perturb which bond a given
    uniform draw selects.
    """
    nb = bx.shape[0]
    nm = wD.shape[0]
    defect = 0.0
    count = 0
    freshD = np.zeros(nm)
    freshG = np.zeros(nm)
    for b in range(nb):
        s = occ[bx[b]] * 1.0 - occ[by[b]] * 1.0
        if reorder:
            if s != 0.0:
                dlist[count] = b
                dpos[b] = count
                count += 1
            else:
                dpos[b] = -1
        for m in range(nm):
            dval = s * wD[m, b]
            gval = wG[m, b] if s != 0.0 else 0.0
            defect = max(defect, abs(contribD[m, b] - dval), abs(contribG[m, b] - gval))
            contribD[m, b] = dval
            contribG[m, b] = gval
            freshD[m] += dval
            freshG[m] += gval
    for m in range(nm):
        defect = max(defect, abs(D[m] - freshD[m]), abs(G[m] - freshG[m]))
        D[m] = freshD[m]
        G[m] = freshG[m]
    if reorder:
        dstate[0] = count
    return defect


@njit(cache=True, inline="always")
def _refresh_bond(occ, b, bx, by, wD, wG, contribD, contribG, D, G, dlist, dpos, dstate):
    s = occ[bx[b]] * 1.0 - occ[by[b]] * 1.0
    if s != 0.0 and dpos[b] < 0:
        dpos[b] = dstate[0]
        dlist[dstate[0]] = b
        dstate[0] += 1
    elif s == 0.0 and dpos[b] >= 0:
        last = dlist[dstate[0] - 1]
        dlist[dpos[b]] = last
        dpos[last] = dpos[b]
        dpos[b] = -1
        dstate[0] -= 1
    for m in range(wD.shape[0]):
        dval = s * wD[m, b]
        D[m] += dval - contribD[m, b]
        contribD[m, b] = dval
        gval = wG[m, b] if s != 0.0 else 0.0
        G[m] += gval - contribG[m, b]
        contribG[m, b] = gval


@njit(cache=True)
def _run_bondlist(
    occ,
    rho,
    bx,
    by,
    minusT,
    dlist,
    dpos,
    dstate,
    exch_rate,
    flip_rate,
    Fn,
    wD,
    wG,
    contribD,
    contribG,
    X,
    D,
    G,
    cyl_on,
    ct_coeff,
    ct_ns,
    ct_sites,
    aff,
    Gw,
    locval,
    T,
    sample_times,
    out_field,
    out_intX,
    out_intD,
    out_intG,
    out_W,
    out_intW,
    snap_on,
    out_snaps,
    clock_box,
    rng_box,
    counts,
    max_events,
    resync_every,
):
    size = occ.shape[0]
    d = minusT.shape[0]
    nm = Fn.shape[0]
    ns = sample_times.shape[0]
    rng = rng_box[0]
    clock = clock_box[0]
    last = clock
    applied = np.int64(0)
    absorbed = np.int64(0)
    last_kind = np.int64(0)
    k = 0

    _rebuild_field(occ, rho, Fn, X)
    _rebuild_bond(occ, bx, by, wD, wG, contribD, contribG, D, G, dlist, dpos, dstate, True)
    intX = np.zeros(nm)
    intD = np.zeros(nm)
    intG = np.zeros(nm)
    W = 0.0
    intW = 0.0
    if cyl_on:
        W = _rebuild_local(occ, ct_coeff, ct_ns, ct_sites, Gw, locval)

    pair_rate = exch_rate + 2.0 * flip_rate

    while True:
        if applied >= max_events:
            break
        if dstate[0] == 0:
            absorbed = 1
            last_kind = 4
            if np.isfinite(T):
                while k < ns:
                    seg = sample_times[k] - last
                    _accum(intX, X, seg)
                    _accum(intD, D, seg)
                    _accum(intG, G, seg)
                    intW += W * seg
                    last = sample_times[k]
                    for m in range(nm):
                        out_field[k, m] = X[m]
                        out_intX[k, m] = intX[m]
                        out_intD[k, m] = intD[m]
                        out_intG[k, m] = intG[m]
                    out_W[k] = W
                    out_intW[k] = intW
                    if snap_on:
                        out_snaps[k, :] = occ
                    k += 1
                clock = T
            break
        total = dstate[0] * pair_rate
        rng, u = _u01(rng)
        t_event = clock - math.log(u) / total
        while k < ns and sample_times[k] <= t_event and sample_times[k] <= T:
            seg = sample_times[k] - last
            _accum(intX, X, seg)
            _accum(intD, D, seg)
            _accum(intG, G, seg)
            intW += W * seg
            last = sample_times[k]
            for m in range(nm):
                out_field[k, m] = X[m]
                out_intX[k, m] = intX[m]
                out_intD[k, m] = intD[m]
                out_intG[k, m] = intG[m]
            out_W[k] = W
            out_intW[k] = intW
            if snap_on:
                out_snaps[k, :] = occ
            k += 1
        if t_event > T:
            seg = T - last
            _accum(intX, X, seg)
            _accum(intD, D, seg)
            _accum(intG, G, seg)
            intW += W * seg
            last = T
            clock = T
            break
        seg = t_event - last
        _accum(intX, X, seg)
        _accum(intD, D, seg)
        _accum(intG, G, seg)
        intW += W * seg
        last = t_event
        clock = t_event

        rng, u2 = _u01(rng)
        rng, u3 = _u01(rng)
        idx = np.int64(u3 * dstate[0])
        if idx >= dstate[0]:
            idx = dstate[0] - 1
        b = dlist[idx]
        x = bx[b]
        y = by[b]
        if u2 * pair_rate < exch_rate:
            s = occ[x] * 1.0 - occ[y] * 1.0
            occ[x] = 1 - occ[x]
            occ[y] = 1 - occ[y]
            for m in range(nm):
                X[m] += s * (Fn[m, y] - Fn[m, x])
            counts[0] += 1
            last_kind = 1
            if cyl_on:
                W = _update_local(occ, x, aff, ct_coeff, ct_ns, ct_sites, Gw, locval, W)
                W = _update_local(occ, y, aff, ct_coeff, ct_ns, ct_sites, Gw, locval, W)
            for j in range(d):
                base = j * size
                _refresh_bond(occ, base + x, bx, by, wD, wG, contribD, contribG, D, G, dlist, dpos, dstate)
                _refresh_bond(occ, base + minusT[j, x], bx, by, wD, wG, contribD, contribG, D, G, dlist, dpos, dstate)
                _refresh_bond(occ, base + y, bx, by, wD, wG, contribD, contribG, D, G, dlist, dpos, dstate)
                if minusT[j, y] != x:
                    _refresh_bond(occ, base + minusT[j, y], bx, by, wD, wG, contribD, contribG, D, G, dlist, dpos, dstate)
        else:
            rng, u4 = _u01(rng)
            site = x if u4 <= 0.5 else y
            occ[site] = 1 - occ[site]
            delta = 2.0 * occ[site] - 1.0
            for m in range(nm):
                X[m] += delta * Fn[m, site]
            counts[1] += 1
            last_kind = 2
            if cyl_on:
                W = _update_local(occ, site, aff, ct_coeff, ct_ns, ct_sites, Gw, locval, W)
            for j in range(d):
                base = j * size
                _refresh_bond(occ, base + site, bx, by, wD, wG, contribD, contribG, D, G, dlist, dpos, dstate)
                _refresh_bond(occ, base + minusT[j, site], bx, by, wD, wG, contribD, contribG, D, G, dlist, dpos, dstate)
        applied += 1
        if applied % resync_every == 0:
            _rebuild_field(occ, rho, Fn, X)
            _rebuild_bond(occ, bx, by, wD, wG, contribD, contribG, D, G, dlist, dpos, dstate, False)
            if cyl_on:
                W = _rebuild_local(occ, ct_coeff, ct_ns, ct_sites, Gw, locval)

    defect = _rebuild_field(occ, rho, Fn, X)
    defect = max(
        defect,
        _rebuild_bond(occ, bx, by, wD, wG, contribD, contribG, D, G, dlist, dpos, dstate, True),
    )
    if cyl_on:
        fresh = _rebuild_local(occ, ct_coeff, ct_ns, ct_sites, Gw, locval)
        defect = max(defect, abs(fresh - W))
    clock_box[0] = clock
    rng_box[0] = rng
    return absorbed, applied, last_kind, defect


# ---------------------------------------------------------------------------
# prefix-sum tree engine (general rate families; null events by default)


@njit(cache=True, inline="always")
def _tree_set(tree, P, slot, value):
    i = P + slot
    delta = value - tree[i]
    while i >= 1:
        tree[i] += delta
        i >>= 1


@njit(cache=True, inline="always")
def _tree_pick(tree, P, r):
    i = 1
    while i < P:
        i <<= 1
        if r > tree[i]:
            r -= tree[i]
            i += 1
    return i - P


@njit(cache=True, inline="always")
def _cj_at(occ, term_coeff, term_ns, term_tab, t0, t1, y):
    c = 0.0
    for t in range(t0, t1):
        p = term_coeff[t]
        for s in range(term_ns[t]):
            p *= occ[term_tab[t, s, y]]
        c += p
    return c


@njit(cache=True, inline="always")
def _flip_count(occ, plusT, minusT, x):
    count = 0.0
    for j in range(plusT.shape[0]):
        if occ[x] != occ[plusT[j, x]]:
            count += 1.0
        if occ[x] != occ[minusT[j, x]]:
            count += 1.0
    return count


@njit(cache=True, inline="always")
def _tree_refresh_bond(
    occ, b, j, y, bx, by, n2, effective,
    term_coeff, term_ns, term_tab, axis_start,
    dFn, g1, g2, an_dyn, contribD, contribG, D, G, dflag, nstate,
    tree, P,
):
    cval = _cj_at(occ, term_coeff, term_ns, term_tab, axis_start[j], axis_start[j + 1], y)
    s = occ[bx[b]] * 1.0 - occ[by[b]] * 1.0
    disc = s != 0.0
    leaf = n2 * cval
    if effective and not disc:
        leaf = 0.0
    _tree_set(tree, P, b, leaf)
    if dflag[b] == 0 and disc:
        dflag[b] = 1
        nstate[0] += 1
    elif dflag[b] == 1 and not disc:
        dflag[b] = 0
        nstate[0] -= 1
    for m in range(dFn.shape[0]):
        dval = (n2 * cval + an_dyn) * s * dFn[m, b]
        D[m] += dval - contribD[m, b]
        contribD[m, b] = dval
        gval = (cval * g1[m, b] + g2[m, b]) if disc else 0.0
        G[m] += gval - contribG[m, b]
        contribG[m, b] = gval


@njit(cache=True)
def _tree_rebuild(
    occ, bx, by, plusT, minusT, n2, an_dyn, effective,
    term_coeff, term_ns, term_tab, axis_start,
    dFn, g1, g2, contribD, contribG, D, G, dflag, nstate,
    tree, P, nslots, touch_tree,
):
    """Recompute maintained floats from the configuration; return the max drift.

    With touch_tree the rate tree, discordance flags, and count are rewritten
    too; without it only the observable accumulators are refreshed, so a
    mid-run refresh cannot nudge a rate sum across a selection boundary and
    change the path.
    """
    size = occ.shape[0]
    d = plusT.shape[0]
    nb = d * size
    nm = dFn.shape[0]
    defect = 0.0
    freshD = np.zeros(nm)
    freshG = np.zeros(nm)
    ndisc = 0
    for b in range(nb):
        j = b // size
        y = b - j * size
        cval = _cj_at(occ, term_coeff, term_ns, term_tab, axis_start[j], axis_start[j + 1], y)
        s = occ[bx[b]] * 1.0 - occ[by[b]] * 1.0
        disc = s != 0.0
        if disc:
            ndisc += 1
        leaf = n2 * cval
        if effective and not disc:
            leaf = 0.0
        if touch_tree:
            dflag[b] = 1 if disc else 0
            defect = max(defect, abs(tree[P + b] - leaf))
            tree[P + b] = leaf
        for m in range(nm):
            dval = (n2 * cval + an_dyn) * s * dFn[m, b]
            gval = (cval * g1[m, b] + g2[m, b]) if disc else 0.0
            defect = max(defect, abs(contribD[m, b] - dval), abs(contribG[m, b] - gval))
            contribD[m, b] = dval
            contribG[m, b] = gval
            freshD[m] += dval
            freshG[m] += gval
    if touch_tree:
        for x in range(size):
            leaf = an_dyn * _flip_count(occ, plusT, minusT, x)
            defect = max(defect, abs(tree[P + nb + x] - leaf))
            tree[P + nb + x] = leaf
        for slot in range(nslots, P):
            tree[P + slot] = 0.0
        for i in range(P - 1, 0, -1):
            tree[i] = tree[2 * i] + tree[2 * i + 1]
        nstate[0] = ndisc
    for m in range(nm):
        defect = max(defect, abs(D[m] - freshD[m]), abs(G[m] - freshG[m]))
        D[m] = freshD[m]
        G[m] = freshG[m]
    return defect


@njit(cache=True)
def _run_tree(
    occ,
    rho,
    bx,
    by,
    plusT,
    minusT,
    n2,
    an_dyn,
    effective,
    term_coeff,
    term_ns,
    term_tab,
    axis_start,
    dep_tab,
    dep_start,
    tree,
    P,
    nslots,
    dflag,
    nstate,
    Fn,
    dFn,
    g1,
    g2,
    contribD,
    contribG,
    X,
    D,
    G,
    cyl_on,
    ct_coeff,
    ct_ns,
    ct_sites,
    aff,
    Gw,
    locval,
    T,
    sample_times,
    out_field,
    out_intX,
    out_intD,
    out_intG,
    out_W,
    out_intW,
    snap_on,
    out_snaps,
    clock_box,
    rng_box,
    counts,
    max_events,
    resync_every,
):
    size = occ.shape[0]
    d = plusT.shape[0]
    nb = d * size
    nm = Fn.shape[0]
    ns = sample_times.shape[0]
    rng = rng_box[0]
    clock = clock_box[0]
    last = clock
    applied = np.int64(0)
    absorbed = np.int64(0)
    last_kind = np.int64(0)
    k = 0

    _rebuild_field(occ, rho, Fn, X)
    _tree_rebuild(
        occ, bx, by, plusT, minusT, n2, an_dyn, effective,
        term_coeff, term_ns, term_tab, axis_start,
        dFn, g1, g2, contribD, contribG, D, G, dflag, nstate,
        tree, P, nslots, True,
    )
    intX = np.zeros(nm)
    intD = np.zeros(nm)
    intG = np.zeros(nm)
    W = 0.0
    intW = 0.0
    if cyl_on:
        W = _rebuild_local(occ, ct_coeff, ct_ns, ct_sites, Gw, locval)

    changed = np.empty(2, dtype=np.int64)

    while True:
        if applied >= max_events:
            break
        if nstate[0] == 0:
            absorbed = 1
            last_kind = 4
            if np.isfinite(T):
                while k < ns:
                    seg = sample_times[k] - last
                    _accum(intX, X, seg)
                    _accum(intD, D, seg)
                    _accum(intG, G, seg)
                    intW += W * seg
                    last = sample_times[k]
                    for m in range(nm):
                        out_field[k, m] = X[m]
                        out_intX[k, m] = intX[m]
                        out_intD[k, m] = intD[m]
                        out_intG[k, m] = intG[m]
                    out_W[k] = W
                    out_intW[k] = intW
                    if snap_on:
                        out_snaps[k, :] = occ
                    k += 1
                clock = T
            break
        total = tree[1]
        rng, u = _u01(rng)
        t_event = clock - math.log(u) / total
        while k < ns and sample_times[k] <= t_event and sample_times[k] <= T:
            seg = sample_times[k] - last
            _accum(intX, X, seg)
            _accum(intD, D, seg)
            _accum(intG, G, seg)
            intW += W * seg
            last = sample_times[k]
            for m in range(nm):
                out_field[k, m] = X[m]
                out_intX[k, m] = intX[m]
                out_intD[k, m] = intD[m]
                out_intG[k, m] = intG[m]
            out_W[k] = W
            out_intW[k] = intW
            if snap_on:
                out_snaps[k, :] = occ
            k += 1
        if t_event > T:
            seg = T - last
            _accum(intX, X, seg)
            _accum(intD, D, seg)
            _accum(intG, G, seg)
            intW += W * seg
            last = T
            clock = T
            break
        seg = t_event - last
        _accum(intX, X, seg)
        _accum(intD, D, seg)
        _accum(intG, G, seg)
        intW += W * seg
        last = t_event
        clock = t_event

        rng, u2 = _u01(rng)
        slot = _tree_pick(tree, P, u2 * total)
        if slot >= nslots:
            slot = nslots - 1
        nchanged = 0
        if slot < nb:
            x = bx[slot]
            y = by[slot]
            if occ[x] != occ[y]:
                s = occ[x] * 1.0 - occ[y] * 1.0
                occ[x] = 1 - occ[x]
                occ[y] = 1 - occ[y]
                for m in range(nm):
                    X[m] += s * (Fn[m, y] - Fn[m, x])
                counts[0] += 1
                last_kind = 1
                changed[0] = x
                changed[1] = y
                nchanged = 2
            else:
                counts[2] += 1
                last_kind = 3
        else:
            site = slot - nb
            if tree[P + slot] <= 0.0:
                counts[2] += 1
                last_kind = 3
            else:
                occ[site] = 1 - occ[site]
                delta = 2.0 * occ[site] - 1.0
                for m in range(nm):
                    X[m] += delta * Fn[m, site]
                counts[1] += 1
                last_kind = 2
                changed[0] = site
                nchanged = 1
        if nchanged > 0:
            if cyl_on:
                for c in range(nchanged):
                    W = _update_local(
                        occ, changed[c], aff, ct_coeff, ct_ns, ct_sites, Gw, locval, W
                    )
            for c in range(nchanged):
                u = changed[c]
                for j in range(d):
                    base = j * size
                    for r in range(dep_start[j], dep_start[j + 1]):
                        y2 = dep_tab[r, u]
                        _tree_refresh_bond(
                            occ, base + y2, j, y2, bx, by, n2, effective,
                            term_coeff, term_ns, term_tab, axis_start,
                            dFn, g1, g2, an_dyn, contribD, contribG, D, G, dflag, nstate,
                            tree, P,
                        )
                    _tree_set(
                        tree, P, nb + plusT[j, u],
                        an_dyn * _flip_count(occ, plusT, minusT, plusT[j, u]),
                    )
                    _tree_set(
                        tree, P, nb + minusT[j, u],
                        an_dyn * _flip_count(occ, plusT, minusT, minusT[j, u]),
                    )
                _tree_set(tree, P, nb + u, an_dyn * _flip_count(occ, plusT, minusT, u))
        applied += 1
        if applied % resync_every == 0:
            _rebuild_field(occ, rho, Fn, X)
            _tree_rebuild(
                occ, bx, by, plusT, minusT, n2, an_dyn, effective,
                term_coeff, term_ns, term_tab, axis_start,
                dFn, g1, g2, contribD, contribG, D, G, dflag, nstate,
                tree, P, nslots, False,
            )
            if cyl_on:
                W = _rebuild_local(occ, ct_coeff, ct_ns, ct_sites, Gw, locval)

    defect = _rebuild_field(occ, rho, Fn, X)
    defect = max(
        defect,
        _tree_rebuild(
            occ, bx, by, plusT, minusT, n2, an_dyn, effective,
            term_coeff, term_ns, term_tab, axis_start,
            dFn, g1, g2, contribD, contribG, D, G, dflag, nstate,
            tree, P, nslots, True,
        ),
    )
    if cyl_on:
        fresh = _rebuild_local(occ, ct_coeff, ct_ns, ct_sites, Gw, locval)
        defect = max(defect, abs(fresh - W))
    clock_box[0] = clock
    rng_box[0] = rng
    return absorbed, applied, last_kind, defect


# ---------------------------------------------------------------------------
# observation plumbing


@dataclass
class EventLog:
    """Outcome of one run: tallies, final clock, per-observer readings."""

    replica: int
    seed: int
    engine: str
    started_at: float
    final_time: float
    exclusion_events: int
    voter_events: int
    null_events: int
    absorbed: bool
    resync_defect: float
    observations: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "replica": self.replica,
            "seed": self.seed,
            "engine": self.engine,
            "started_at": self.started_at,
            "final_time": self.final_time,
            "exclusion_events": self.exclusion_events,
            "voter_events": self.voter_events,
            "null_events": self.null_events,
            "absorbed": self.absorbed,
            "resync_defect": self.resync_defect,
        }

    def field_trace(self, index: int = 0):
        """Convert one FieldObserver reading into a FieldTrace."""
        from .fields import FieldTrace

        obs = self.observations[index]
        if "field" not in obs:
            raise ValueError(f"observer {index} recorded no field channels")
        integrated = None
        metadata = {"engine": self.engine, "seed": self.seed}
        if obs.get("integrated") is not None:
            integrated = {key: obs["integrated"][i] for i, key in enumerate(obs["keys"])}
            metadata["integration"] = "event_exact"
            metadata["origin"] = self.started_at
        values = {key: obs["field"][i] for i, key in enumerate(obs["keys"])}
        return FieldTrace(self.replica, obs["times"], values, integrated, metadata)


def _mode_key(F: TestFunction):
    return (F.kind, F.m if F.m is not None else ())


def _merge_plan(observers, clock):
    times = []
    for o in observers:
        own = np.atleast_1d(np.asarray(o.sample_times, dtype=float))
        if own.size and np.any(np.diff(own) <= 0):
            raise ValueError("observer sample times must be strictly increasing")
        times.append(own)
    grid = np.unique(np.concatenate(times)) if times else np.zeros(0)
    if grid.size and grid[0] < clock:
        raise ValueError(
            f"sample time {grid[0]} precedes the current clock {clock}"
        )
    modes = []
    keys = []
    integrals = False
    cylinder = None
    snapshots = False
    for o in observers:
        if isinstance(o, FieldObserver):
            integrals = integrals or o.integrals
            for F in o.modes:
                key = _mode_key(F)
                if key not in keys:
                    keys.append(key)
                    modes.append(F)
        elif isinstance(o, CylinderObserver):
            if cylinder is not None:
                raise ValueError("only one local-function channel per run")
            cylinder = o
        elif isinstance(o, SnapshotObserver):
            snapshots = True
        else:
            raise TypeError(f"unknown observer {type(o).__name__}")
    return grid, modes, keys, integrals, cylinder, snapshots


def _family_tables(rates: RateFamily, torus: Torus):
    terms = []
    axis_start = [0]
    for cj in rates.c:
        for sites, coeff in sorted(cj.terms.items()):
            terms.append((float(coeff), sites))
        axis_start.append(len(terms))
    smax = max((len(s) for _, s in terms), default=0)
    smax = max(smax, 1)
    tcount = max(len(terms), 1)
    term_coeff = np.zeros(tcount)
    term_ns = np.zeros(tcount, dtype=np.int64)
    term_tab = np.zeros((tcount, smax, torus.size), dtype=np.int64)
    for t, (coeff, sites) in enumerate(terms):
        term_coeff[t] = coeff
        term_ns[t] = len(sites)
        for s, z in enumerate(sites):
            term_tab[t, s] = offset_table(torus, z)
    dep_rows = []
    dep_start = [0]
    origin = (0,) * torus.d
    for axis, cj in enumerate(rates.c):
        ej = tuple(1 if k == axis else 0 for k in range(torus.d))
        offsets = sorted(set(cj.support()) | {origin, ej})
        for z in offsets:
            dep_rows.append(offset_table(torus, tuple(-c for c in z)))
        dep_start.append(len(dep_rows))
    dep_tab = np.vstack(dep_rows)
    return (
        term_coeff,
        term_ns,
        term_tab,
        np.asarray(axis_start, dtype=np.int64),
        dep_tab,
        np.asarray(dep_start, dtype=np.int64),
    )


def _bond_geometry(torus: Torus):
    plusT, minusT = neighbor_tables(torus)
    size = torus.size
    idx = np.arange(size, dtype=np.int64)
    bx = np.concatenate([idx for _ in range(torus.d)])
    by = np.concatenate([plusT[j] for j in range(torus.d)])
    return plusT.astype(np.int64), minusT.astype(np.int64), bx, by


def _mode_arrays(modes, torus, params: SimParams):
    fp = params.field_params()
    norm = math.sqrt(torus.size * fp.a_n)
    nm = len(modes)
    Fn = np.zeros((nm, torus.size))
    for i, F in enumerate(modes):
        Fn[i] = F.values_on_grid(torus) / norm
    return Fn, norm, fp


def _bond_mode_weights(modes, torus, params: SimParams, bx, by):
    """Per-bond drift and variation coefficients shared by both engines.

    dFn is the plain field increment of one exchange; g1 and g2 are the two
    quadratic-variation weights (exchange part awaiting its rate value, flip
    part) so that a bond with rate value c contributes c*g1 + g2 while it is
    discordant.
    """
    fp = params.field_params()
    size = torus.size
    n2 = float(torus.n) ** 2
    norm = math.sqrt(size * fp.a_n)
    nm = len(modes)
    nb = bx.shape[0]
    dFn = np.zeros((nm, nb))
    g1 = np.zeros((nm, nb))
    g2 = np.zeros((nm, nb))
    for i, F in enumerate(modes):
        vals = F.values_on_grid(torus)
        diff = vals[by] - vals[bx]
        dFn[i] = diff / norm
        g1[i] = n2 * diff**2 / (fp.a_n * size)
        g2[i] = (vals[bx] ** 2 + vals[by] ** 2) / size
    if params.a_n == 0.0:
        g2[:] = 0.0
    return dFn, g1, g2


def _cylinder_tables(obs: CylinderObserver, torus: Torus, params: SimParams):
    fp = params.field_params()
    norm = math.sqrt(torus.size * fp.a_n)
    terms = sorted(obs.f.terms.items())
    tcount = max(len(terms), 1)
    smax = max((len(sites) for sites, _ in terms), default=0)
    smax = max(smax, 1)
    ct_coeff = np.zeros(tcount)
    ct_ns = np.zeros(tcount, dtype=np.int64)
    ct_sites = np.zeros((tcount, smax, torus.size), dtype=np.int64)
    support = set()
    for t, (sites, coeff) in enumerate(terms):
        ct_coeff[t] = coeff
        ct_ns[t] = len(sites)
        for s, z in enumerate(sites):
            ct_sites[t, s] = offset_table(torus, z)
            support.add(z)
    if support:
        aff = np.vstack([offset_table(torus, tuple(-c for c in z)) for z in sorted(support)])
    else:
        aff = np.zeros((0, torus.size), dtype=np.int64)
    Gw = obs.weight.values_on_grid(torus) / norm
    return ct_coeff, ct_ns, ct_sites, aff, Gw


def _empty_cylinder(size):
    return (
        np.zeros(1),
        np.zeros(1, dtype=np.int64),
        np.zeros((1, 1, size), dtype=np.int64),
        np.zeros((0, size), dtype=np.int64),
        np.zeros(size),
    )


def _drive(state: SimState, T: float, grid, modes, cylinder, snapshots, max_events):
    """Marshal arrays, run the compiled engine, return raw channel arrays."""
    params = state.params
    torus = params.torus
    size = torus.size
    plusT, minusT, bx, by = _bond_geometry(torus)
    Fn, _, fp = _mode_arrays(modes, torus, params)
    dFn, g1, g2 = _bond_mode_weights(modes, torus, params, bx, by)
    nm = len(modes)
    nb = bx.shape[0]
    ns = grid.shape[0]

    out_field = np.zeros((ns, nm))
    out_intX = np.zeros((ns, nm))
    out_intD = np.zeros((ns, nm))
    out_intG = np.zeros((ns, nm))
    out_W = np.zeros(ns)
    out_intW = np.zeros(ns)
    out_snaps = np.zeros((ns if snapshots else 0, size), dtype=np.uint8)

    if cylinder is not None:
        ct_coeff, ct_ns, ct_sites, aff, Gw = _cylinder_tables(cylinder, torus, params)
        cyl_on = True
    else:
        ct_coeff, ct_ns, ct_sites, aff, Gw = _empty_cylinder(size)
        cyl_on = False
    locval = np.zeros(size)

    contribD = np.zeros((nm, nb))
    contribG = np.zeros((nm, nb))
    X = np.zeros(nm)
    D = np.zeros(nm)
    G = np.zeros(nm)
    clock_box = np.array([state.clock])
    rng_box = np.array([state.rng_state], dtype=np.uint64)
    counts = np.zeros(3, dtype=np.int64)
    n2 = float(torus.n) ** 2

    if state.engine == "bondlist":
        value = state.params.rates.c[0].terms.get((), 0.0)
        dlist = np.zeros(nb, dtype=np.int64)
        dpos = np.full(nb, -1, dtype=np.int64)
        dstate = np.zeros(1, dtype=np.int64)
        wD = (n2 * value + params.a_n) * dFn
        wG = value * g1 + g2
        absorbed, applied, last_kind, defect = _run_bondlist(
            state.occ, params.rho, bx, by, minusT, dlist, dpos, dstate,
            n2 * value, params.a_n,
            Fn, wD, wG, contribD, contribG, X, D, G,
            cyl_on, ct_coeff, ct_ns, ct_sites, aff, Gw, locval,
            T, grid, out_field, out_intX, out_intD, out_intG, out_W, out_intW,
            snapshots, out_snaps,
            clock_box, rng_box, counts, max_events, np.int64(params.resync_every),
        )
    else:
        term_coeff, term_ns, term_tab, axis_start, dep_tab, dep_start = _family_tables(
            params.rates, torus
        )
        nslots = nb + size
        P = 1
        while P < nslots:
            P <<= 1
        tree = np.zeros(2 * P)
        dflag = np.zeros(nb, dtype=np.int8)
        nstate = np.zeros(1, dtype=np.int64)
        absorbed, applied, last_kind, defect = _run_tree(
            state.occ, params.rho, bx, by, plusT, minusT, n2, params.a_n,
            params.effective_rates,
            term_coeff, term_ns, term_tab, axis_start, dep_tab, dep_start,
            tree, np.int64(P), np.int64(nslots), dflag, nstate,
            Fn, dFn, g1, g2, contribD, contribG, X, D, G,
            cyl_on, ct_coeff, ct_ns, ct_sites, aff, Gw, locval,
            T, grid, out_field, out_intX, out_intD, out_intG, out_W, out_intW,
            snapshots, out_snaps,
            clock_box, rng_box, counts, max_events, np.int64(params.resync_every),
        )

    state.clock = float(clock_box[0])
    state.rng_state = int(rng_box[0])
    state.exclusion_events += int(counts[0])
    state.voter_events += int(counts[1])
    state.null_events += int(counts[2])
    state.absorbed = bool(absorbed)
    channels = {
        "field": out_field,
        "intX": out_intX,
        "intD": out_intD,
        "intG": out_intG,
        "W": out_W,
        "intW": out_intW,
        "snaps": out_snaps,
        "counts": counts,
        "defect": float(defect),
        "last_kind": int(last_kind),
        "applied": int(applied),
    }
    return channels


_KIND_NAMES = {0: "none", 1: "exclusion", 2: "voter", 3: "null", 4: "absorbed"}


def step(state: SimState):
    """Apply exactly one event; return (kind, waiting time).

    Null events count: in the tree engine's default mode an exchange across
    an equal bond advances the clock and changes nothing. On an absorbed
    state returns ("absorbed", inf) and leaves the clock alone.
    """
    before = state.clock
    grid = np.zeros(0)
    channels = _drive(state, np.inf, grid, [], None, False, np.int64(1))
    kind = _KIND_NAMES[channels["last_kind"]]
    if kind in ("none", "absorbed"):
        return "absorbed", math.inf
    return kind, state.clock - before


def run_until(state: SimState, T: float, observers=()) -> EventLog:
    """Advance the chain to clock T, reading the path at observer times.

    Sample times must lie in [current clock, T]; integral channels restart
    from zero at the call's starting clock. An absorbed chain freezes: the
    remaining samples repeat the absorbing values and the clock jumps to T.
    """
    if not math.isfinite(T) or T < state.clock:
        raise ValueError(f"final time {T} must be finite and >= the clock {state.clock}")
    started = state.clock
    grid, modes, keys, integrals, cylinder, snapshots = _merge_plan(observers, state.clock)
    if grid.size and grid[-1] > T:
        raise ValueError(f"sample time {grid[-1]} exceeds the final time {T}")
    excl0, vote0, null0 = state.exclusion_events, state.voter_events, state.null_events
    channels = _drive(state, float(T), grid, modes, cylinder, snapshots, _NO_BUDGET)

    observations = []
    for o in observers:
        times = np.atleast_1d(np.asarray(o.sample_times, dtype=float))
        rows = np.searchsorted(grid, times)
        if isinstance(o, FieldObserver):
            cols = [keys.index(_mode_key(F)) for F in o.modes]
            entry = {
                "times": times,
                "keys": [keys[c] for c in cols],
                "field": channels["field"][np.ix_(rows, cols)].T,
            }
            if o.integrals:
                entry["integrated"] = channels["intX"][np.ix_(rows, cols)].T
                entry["drift_integral"] = channels["intD"][np.ix_(rows, cols)].T
                entry["gamma_integral"] = channels["intG"][np.ix_(rows, cols)].T
            else:
                entry["integrated"] = None
            observations.append(entry)
        elif isinstance(o, CylinderObserver):
            observations.append(
                {
                    "times": times,
                    "value": channels["W"][rows],
                    "integrated": channels["intW"][rows],
                }
            )
        else:
            observations.append({"times": times, "configs": channels["snaps"][rows]})

    return EventLog(
        replica=state.replica,
        seed=state.seed,
        engine=state.engine,
        started_at=started,
        final_time=state.clock,
        exclusion_events=state.exclusion_events - excl0,
        voter_events=state.voter_events - vote0,
        null_events=state.null_events - null0,
        absorbed=state.absorbed,
        resync_defect=channels["defect"],
        observations=observations,
    )
