"""Admissible wealth domains built from brackets, overview totals and tax status.

A domain is a box intersected with constraints ``g(w) >= theta`` or
``g(w) <= theta`` where ``g`` is a sum of nondecreasing terms
``c_l * min(w_l, cap_l)``. Because every term is monotone, the set of
admissible values of one component given the others is an interval with
closed-form endpoints.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .data_model import HouseholdRecord

DEFAULT_CAP = 1e8
TAX_THRESHOLD = 720_000.0
RESIDENCE_REBATE = 0.8
# membership tolerance, relative to the constraint's scale
REL_TOL = 1e-9

AT_LEAST, AT_MOST = 1, -1


class InfeasibleDomainError(ValueError):
    """Evidence admits no wealth vector."""


class ConditionalInfeasibilityError(RuntimeError):
    """No admissible value for a component given the others."""


@dataclass(frozen=True)
class MonotoneConstraint:
    """``sum_l coef_l * min(w_l, cap_l) + offset`` compared with ``threshold``.

    ``cap_l = inf`` gives a linear term. ``sense`` is ``AT_LEAST`` or
    ``AT_MOST``.
    """

    coef: np.ndarray
    cap: np.ndarray
    offset: float
    sense: int
    threshold: float
    name: str = ""

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        cap = np.broadcast_to(np.asarray(self.cap, dtype=float), coef.shape).copy()
        if np.any(coef < 0):
            raise ValueError("constraint coefficients must be nonnegative")
        if np.any(cap <= 0):
            raise ValueError("caps must be positive")
        if self.sense not in (AT_LEAST, AT_MOST):
            raise ValueError("sense must be AT_LEAST or AT_MOST")
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "cap", cap)

    def evaluate(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(np.dot(self.coef, np.minimum(w, self.cap)) + self.offset)

    def range_over(self, lo, hi):
        """Exact range of ``g`` over the box ``[lo, hi]`` (g is monotone)."""
        return self.evaluate(lo), self.evaluate(hi)

    def scale(self, w) -> float:
        return max(abs(self.threshold), float(np.dot(self.coef, np.minimum(np.abs(w), self.cap))), 1.0)


@dataclass(frozen=True)
class CensoringDomain:
    """Box ``[lo, hi]`` (held components) cut by monotone constraints."""

    lo: np.ndarray
    hi: np.ndarray
    held: np.ndarray
    constraints: tuple = ()

    @property
    def n_components(self):
        return len(self.lo)

    @property
    def is_rectangular(self):
        return len(self.constraints) == 0


def _check_feasible(dom: CensoringDomain, who=""):
    if np.any(dom.lo > dom.hi):
        l = int(np.argmax(dom.lo > dom.hi))
        raise InfeasibleDomainError(
            f"{who}inconsistent evidence: empty box for component {l + 1} "
            f"[{dom.lo[l]:g}, {dom.hi[l]:g}]"
        )
    for c in dom.constraints:
        gmin, gmax = c.range_over(dom.lo, dom.hi)
        tol = REL_TOL * max(abs(c.threshold), abs(gmax), 1.0)
        if c.sense == AT_LEAST and gmax < c.threshold - tol:
            raise InfeasibleDomainError(
                f"{who}inconsistent evidence: constraint {c.name!r} needs >= {c.threshold:g} "
                f"but its maximum over the box is {gmax:g}"
            )
        if c.sense == AT_MOST and gmin > c.threshold + tol:
            raise InfeasibleDomainError(
                f"{who}inconsistent evidence: constraint {c.name!r} needs <= {c.threshold:g} "
                f"but its minimum over the box is {gmin:g}"
            )


def make_domain(lo, hi, held=None, constraints=()) -> CensoringDomain:
    """Construct and feasibility-check a domain from raw arrays."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    held = np.ones(lo.shape, dtype=bool) if held is None else np.asarray(held, dtype=bool)
    dom = CensoringDomain(lo, hi, held, tuple(constraints))
    _check_feasible(dom)
    return dom


def tax_constraint(record: HouseholdRecord, threshold: float = TAX_THRESHOLD) -> Optional[MonotoneConstraint]:
    """Taxable-wealth bound implied by wealth-tax liability.

    Liable households satisfy the upper-bound expression ``>= threshold``;
    others satisfy the lower-bound expression ``<= threshold``. With four
    components the real-estate block carries coefficient 1 in the upper
    bound and the 0.8 rebate in the lower bound.
    """
    isf = record.evidence.isf
    if isf is None:
        return None
    L = record.n_components
    d = np.array(record.holdings.flags, dtype=float)
    s = np.array(record.shares)
    coef = np.zeros(L)
    cap = np.full(L, np.inf)
    if L == 5:
        coef[0], coef[1], coef[2] = 1.0, RESIDENCE_REBATE * s[1], 1.0
        if isf.pays_tax:
            coef[4] = 1.0
            if isf.i_flag and isf.nd_max > 0:
                coef[3], cap[3] = 1.0, isf.nd_max
            offset = -isf.debt
        else:
            offset = (isf.nd_min if d[3] else 0.0) - isf.debt
    else:
        coef[0] = 1.0
        if isf.pays_tax:
            coef[1], coef[3] = 1.0, 1.0
            if isf.i_flag and isf.nd_max > 0:
                coef[2], cap[2] = 1.0, isf.nd_max
            offset = -isf.debt
        else:
            coef[1] = RESIDENCE_REBATE
            offset = (isf.nd_min if d[2] else 0.0) - isf.debt
    coef = coef * d
    sense = AT_LEAST if isf.pays_tax else AT_MOST
    name = "tax liable (upper bound)" if isf.pays_tax else "not tax liable (lower bound)"
    return MonotoneConstraint(coef, cap, float(offset), sense, float(threshold), name)


def build_domain(record: HouseholdRecord, wealth_tax_threshold: float = TAX_THRESHOLD,
                 cap: float = DEFAULT_CAP) -> CensoringDomain:
    """Build the admissible domain of one household's wealth vector.

    Unbounded brackets are capped at ``cap``; held components get a lower
    bound of at least one currency unit.
    """
    L = record.n_components
    held = np.array(record.holdings.flags, dtype=bool)
    lo = np.zeros(L)
    hi = np.zeros(L)
    for l, b in enumerate(record.evidence.component_bounds):
        if b is None:
            continue
        lo[l] = max(b[0], 1.0)
        hi[l] = min(b[1], cap)
        if b[0] == b[1]:
            hi[l] = lo[l]
        if lo[l] > cap:
            raise InfeasibleDomainError(
                f"household {record.id}: lower bound {b[0]:g} of component {l + 1} exceeds the cap {cap:g}"
            )
    constraints = []
    s = np.array(record.shares) * held
    tb = record.evidence.total_bracket
    if tb is not None:
        if tb[0] > 0:
            constraints.append(MonotoneConstraint(s, np.inf, 0.0, AT_LEAST, tb[0], "total bracket (lower)"))
        if np.isfinite(tb[1]):
            constraints.append(MonotoneConstraint(s, np.inf, 0.0, AT_MOST, tb[1], "total bracket (upper)"))
    tc = tax_constraint(record, wealth_tax_threshold)
    if tc is not None:
        constraints.append(tc)
    dom = CensoringDomain(lo, hi, held, tuple(constraints))
    _check_feasible(dom, f"household {record.id}: ")
    return dom


def contains(dom: CensoringDomain, w, rel_tol: float = REL_TOL) -> bool:
    """Membership test, relative tolerance ``rel_tol``."""
    w = np.asarray(w, dtype=float)
    if w.shape != dom.lo.shape:
        raise ValueError("dimension mismatch")
    slack = rel_tol * np.maximum(np.abs(dom.hi), 1.0)
    if np.any(w < dom.lo - slack) or np.any(w > dom.hi + slack):
        return False
    for c in dom.constraints:
        g = c.evaluate(w)
        tol = rel_tol * c.scale(w)
        if c.sense == AT_LEAST and g < c.threshold - tol:
            return False
        if c.sense == AT_MOST and g > c.threshold + tol:
            return False
    return True


@dataclass
class PackedDomains:
    """Domains of many households stored as padded arrays.

    ``coef, cap`` have shape ``(m, C, L)``; ``offset, threshold, sense,
    active`` have shape ``(m, C)``.
    """

    lo: np.ndarray
    hi: np.ndarray
    held: np.ndarray
    coef: np.ndarray
    cap: np.ndarray
    offset: np.ndarray
    threshold: np.ndarray
    sense: np.ndarray
    active: np.ndarray

    @property
    def m(self):
        return self.lo.shape[0]

    def take(self, idx):
        return PackedDomains(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


def pack_domains(domains) -> PackedDomains:
    domains = list(domains)
    m = len(domains)
    L = domains[0].n_components
    C = max(1, max(len(d.constraints) for d in domains))
    coef = np.zeros((m, C, L))
    cap = np.full((m, C, L), np.inf)
    offset = np.zeros((m, C))
    thr = np.zeros((m, C))
    sense = np.ones((m, C), dtype=int)
    active = np.zeros((m, C), dtype=bool)
    for k, d in enumerate(domains):
        for c, con in enumerate(d.constraints):
            coef[k, c] = con.coef
            cap[k, c] = con.cap
            offset[k, c] = con.offset
            thr[k, c] = con.threshold
            sense[k, c] = con.sense
            active[k, c] = True
    return PackedDomains(
        np.array([d.lo for d in domains]),
        np.array([d.hi for d in domains]),
        np.array([d.held for d in domains]),
        coef, cap, offset, thr, sense, active,
    )


class BoundsEngine:
    """Conditional intervals of packed domains with per-component structure precomputed.

    ``totals(W)`` gives every constraint's current value ``g``; ``bounds``
    uses it to get the admissible interval of one component, and ``update``
    keeps the totals current after that component changes.
    """

    def __init__(self, pd: PackedDomains):
        self.pd = pd
        self._per = []
        for l in range(pd.lo.shape[1]):
            a = pd.coef[:, :, l]
            involved = pd.active & (a > 0)
            self._per.append(dict(
                a=a,
                kap=pd.cap[:, :, l],
                safe_a=np.where(a > 0, a, 1.0),
                atleast=involved & (pd.sense == AT_LEAST),
                atmost=involved & (pd.sense == AT_MOST),
                idle_least=pd.active & ~(a > 0) & (pd.sense == AT_LEAST),
                idle_most=pd.active & ~(a > 0) & (pd.sense == AT_MOST),
                any_constraint=bool(pd.active.any()),
            ))

    def totals(self, W):
        pd = self.pd
        return (pd.coef * np.minimum(W[:, None, :], pd.cap)).sum(axis=2) + pd.offset

    def update(self, G, l, old, new):
        """Add the change of component ``l`` from ``old`` to ``new`` to the totals ``G`` in place."""
        c = self._per[l]
        G += c["a"] * (np.minimum(new[:, None], c["kap"]) - np.minimum(old[:, None], c["kap"]))

    def bounds(self, l, W, G):
        """``(lo, hi, empty)`` for component ``l`` given the others (see :func:`conditional_bounds`)."""
        pd = self.pd
        lo = pd.lo[:, l]
        hi = pd.hi[:, l]
        c = self._per[l]
        if not c["any_constraint"]:
            return lo.copy(), hi.copy(), lo > hi
        kap = c["kap"]
        rest = G - c["a"] * np.minimum(W[:, l][:, None], kap)
        thr = pd.threshold
        tol = REL_TOL * np.maximum(np.maximum(np.abs(thr), np.abs(rest)), 1.0)
        safe_a = c["safe_a"]
        bound = (thr - rest) / safe_a
        atleast, atmost = c["atleast"], c["atmost"]
        # a capped term that saturates below the requirement can never satisfy it
        unreachable = atleast & (bound > kap + tol / safe_a)
        lower = np.where(atleast, np.minimum(bound, kap), -np.inf).max(axis=1)
        upper = np.where(atmost & (bound < kap), bound, np.inf).min(axis=1)
        # constraints not involving l must already hold
        violated = (c["idle_least"] & (rest < thr - tol)) | (c["idle_most"] & (rest > thr + tol))
        lo = np.maximum(lo, lower)
        hi = np.minimum(hi, upper)
        gap = lo - hi
        slack = REL_TOL * np.maximum(np.abs(hi), 1.0)
        # rounding can cross the endpoints by a few ulps; collapse to a point
        lo = np.where((gap > 0) & (gap <= slack), hi, lo)
        empty = unreachable.any(axis=1) | violated.any(axis=1) | (lo > hi)
        return lo, hi, empty


def conditional_bounds(pd: PackedDomains, l: int, W: np.ndarray):
    """Vectorized admissible interval of component ``l`` given the rest.

    Parameters
    ----------
    pd : PackedDomains
    l : int
        0-based component index.
    W : ndarray (m, L)
        Current wealth vectors; column ``l`` is ignored.

    Returns
    -------
    lo, hi : ndarray (m,)
    empty : ndarray of bool (m,)
        True where no admissible value exists.
    """
    W = np.asarray(W, dtype=float)
    eng = BoundsEngine(pd)
    return eng.bounds(l, W, eng.totals(W))


def conditional_interval(dom: CensoringDomain, l: int, fixed) -> tuple:
    """Admissible interval ``[lo, hi]`` of component ``l`` (0-based) given the others.

    ``fixed`` is a full wealth vector; its entry ``l`` is ignored.

    Raises
    ------
    ConditionalInfeasibilityError
        If no value of component ``l`` is admissible.
    """
    pd = pack_domains([dom])
    W = np.asarray(fixed, dtype=float)[None, :]
    lo, hi, empty = conditional_bounds(pd, l, W)
    if empty[0]:
        raise ConditionalInfeasibilityError(
            f"no admissible value for component {l + 1} given the other components"
        )
    return float(lo[0]), float(hi[0])


def contains_packed(pd: PackedDomains, W, rel_tol: float = REL_TOL) -> np.ndarray:
    """Vectorized :func:`contains` over packed domains; returns a boolean per row."""
    W = np.asarray(W, dtype=float)
    slack = rel_tol * np.maximum(np.abs(pd.hi), 1.0)
    in_box = np.all((W >= pd.lo - slack) & (W <= pd.hi + slack), axis=1)
    terms = pd.coef * np.minimum(np.abs(W)[:, None, :], pd.cap)
    g = (pd.coef * np.minimum(W[:, None, :], pd.cap)).sum(axis=2) + pd.offset
    tol = rel_tol * np.maximum(np.maximum(np.abs(pd.threshold), terms.sum(axis=2)), 1.0)
    bad = pd.active & (
        ((pd.sense == AT_LEAST) & (g < pd.threshold - tol))
        | ((pd.sense == AT_MOST) & (g > pd.threshold + tol))
    )
    return in_box & ~bad.any(axis=1)


# Upper limit on the number of linear pieces examined by feasible_point.
_MAX_PIECES = 256


def _pieces(dom: CensoringDomain):
    """Split the box at every cap inside it; each min() term is linear on a piece."""
    held = np.flatnonzero(dom.held)
    cuts = []
    for l in held:
        caps = sorted({float(c.cap[l]) for c in dom.constraints
                       if c.coef[l] > 0 and dom.lo[l] < c.cap[l] < dom.hi[l]})
        edges = [dom.lo[l]] + caps + [dom.hi[l]]
        cuts.append(list(zip(edges[:-1], edges[1:])))
    total = int(np.prod([len(c) for c in cuts])) if cuts else 1
    if total > _MAX_PIECES:
        raise InfeasibleDomainError(f"too many capped terms to search ({total} pieces)")
    for combo in itertools.product(*cuts):
        lo, hi = dom.lo.copy(), dom.hi.copy()
        for l, (a, b) in zip(held, combo):
            lo[l], hi[l] = a, b
        yield lo, hi


def _piece_lp(dom: CensoringDomain, lo, hi):
    """Maximize a common relative margin on one piece; returns ``(margin, w)`` or None."""
    L = dom.n_components
    held = np.flatnonzero(dom.held)
    n_w = len(held)
    nv = n_w + 1
    A, rhs = [], []
    half = (hi[held] - lo[held]) / 2.0
    for j, l in enumerate(held):
        r = np.zeros(nv)
        r[j], r[-1] = -1.0, half[j]  # w - s r >= lo
        A.append(r)
        rhs.append(-lo[l])
        r = np.zeros(nv)
        r[j], r[-1] = 1.0, half[j]  # w + s r <= hi
        A.append(r)
        rhs.append(hi[l])
    pos = {l: j for j, l in enumerate(held)}
    for c in dom.constraints:
        r = np.zeros(nv)
        const = c.offset
        for l in range(L):
            if c.coef[l] <= 0:
                continue
            if lo[l] >= c.cap[l]:
                const += c.coef[l] * c.cap[l]  # saturated on this piece
            else:
                r[pos[l]] = c.coef[l]
        margin = 0.05 * max(abs(c.threshold), 1.0)
        if c.sense == AT_LEAST:
            r = -r  # g >= theta + s margin
            rhs.append(const - c.threshold)
        else:
            rhs.append(c.threshold - const)
        r[-1] = margin
        A.append(r)
    cost = np.zeros(nv)
    cost[-1] = -1.0
    bounds = [(lo[l], hi[l]) for l in held] + [(0.0, 1.0)]
    res = linprog(cost, A_ub=np.array(A), b_ub=np.array(rhs), bounds=bounds, method="highs")
    if res.status != 0:
        return None
    w = np.zeros(L)
    w[held] = np.clip(res.x[:n_w], lo[held], hi[held])
    return res.x[-1], w


def feasible_point(dom: CensoringDomain, who: str = "") -> np.ndarray:
    """A point well inside the domain, found by linear programming.

    The box is cut at the caps of capped terms; on each piece every
    constraint is linear, and a common relative margin to the box faces
    and constraint thresholds is maximized. The piece with the largest
    margin wins.

    Raises
    ------
    InfeasibleDomainError
        If no piece admits a point.
    """
    best = None
    for lo, hi in _pieces(dom):
        found = _piece_lp(dom, lo, hi)
        if found is not None and contains(dom, found[1], rel_tol=1e-7) and (best is None or found[0] > best[0]):
            best = found
    if best is None:
        raise InfeasibleDomainError(f"{who}inconsistent evidence: constraints admit no common wealth vector")
    return best[1]


def _log_mid(lo, hi):
    return np.exp(0.5 * (np.log(lo) + np.log(hi)))


def interior_points(pd: PackedDomains, domains, ids=None):
    """An admissible wealth matrix for many domains at once.

    Components start at the geometric midpoint of their box; one pass
    moves each component to the geometric midpoint of its conditional
    interval given the others. Rows still outside their domain are placed
    by :func:`feasible_point`.

    Returns
    -------
    W : ndarray (m, L)
    fallback : ndarray of int
        Rows that needed the linear program.

    Raises
    ------
    InfeasibleDomainError
        Naming the first household whose evidence is jointly inconsistent.
    """
    held = pd.held.astype(bool)
    W = np.where(held, _log_mid(np.maximum(pd.lo, 1.0), np.maximum(pd.hi, 1.0)), 0.0)
    eng = BoundsEngine(pd)
    G = eng.totals(W)
    for l in range(W.shape[1]):
        lo, hi, empty = eng.bounds(l, W, G)
        ok = held[:, l] & ~empty
        old = W[:, l].copy()
        W[ok, l] = _log_mid(np.maximum(lo[ok], 1.0), np.maximum(hi[ok], 1.0))
        W[ok, l] = np.clip(W[ok, l], lo[ok], hi[ok])
        eng.update(G, l, old, W[:, l])
    bad = np.flatnonzero(~contains_packed(pd, W))
    for k in bad:
        who = f"household {ids[k]}: " if ids is not None else f"row {k}: "
        W[k] = feasible_point(domains[k], who)
    return W, bad
