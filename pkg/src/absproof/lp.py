"""Exact rational linear feasibility and optimization with Farkas certificates.

The solver is a dense-tableau, bounded-variable primal simplex with Bland's
rule and a two-phase start.  Every constraint row ``a·x (<=|>=|=) b`` gets a
slack ``s = b - a·x`` whose bounds encode the relation, so variable bounds
never become rows.  When phase one stalls with positive infeasibility, the
reduced costs of the structural and slack columns are exactly the multipliers
of a Farkas certificate over the normalized (``<=``) rows.

Arithmetic runs on ``gmpy2.mpq`` when available (same values, much faster
than :class:`fractions.Fraction`); results are handed back as Fractions.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .numerics import Interval, to_rational

try:
    from gmpy2 import mpq as _Q
except ImportError:  # pragma: no cover - exercised only without gmpy2
    _Q = Fraction

LE, GE, EQ = "le", "ge", "eq"
MIN, MAX = "min", "max"

_MAX_PIVOTS = 200_000


@dataclass(frozen=True)
class Constraint:
    coeffs: tuple
    rel: str
    rhs: Fraction

    def __post_init__(self):
        if self.rel not in (LE, GE, EQ):
            raise ValueError(f"unknown relation {self.rel!r}")
        object.__setattr__(self, "coeffs", tuple(to_rational(c) for c in self.coeffs))
        object.__setattr__(self, "rhs", to_rational(self.rhs))


@dataclass(frozen=True)
class LinearSystem:
    constraints: tuple
    num_vars: int
    var_bounds: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        bounds = tuple(self.var_bounds) or (None,) * self.num_vars
        if len(bounds) != self.num_vars:
            raise ValueError(f"{len(bounds)} variable bounds for {self.num_vars} variables")
        for b in bounds:
            if b is not None and not isinstance(b, Interval):
                raise ValueError("variable bounds must be Interval or None")
        object.__setattr__(self, "var_bounds", bounds)
        for i, c in enumerate(self.constraints):
            if len(c.coeffs) != self.num_vars:
                raise ValueError(f"constraint {i} has {len(c.coeffs)} coefficients, expected {self.num_vars}")

    def normalized(self) -> list:
        """Rows ``(coeffs, rhs)`` meaning ``coeffs·x <= rhs``.

        Order: each constraint in turn (``EQ`` yields its ``<=`` half then its
        ``>=`` half negated), then for every bounded variable its lower bound
        row ``-x_j <= -lo`` followed by its upper bound row ``x_j <= hi``.
        """
        rows = []
        for c in self.constraints:
            neg = tuple(-v for v in c.coeffs)
            if c.rel == LE:
                rows.append((c.coeffs, c.rhs))
            elif c.rel == GE:
                rows.append((neg, -c.rhs))
            else:
                rows.append((c.coeffs, c.rhs))
                rows.append((neg, -c.rhs))
        n = self.num_vars
        for j, b in enumerate(self.var_bounds):
            if b is None:
                continue
            unit = tuple(Fraction(1) if i == j else Fraction(0) for i in range(n))
            rows.append((tuple(-v for v in unit), -b.lo))
            rows.append((unit, b.hi))
        return rows

    def satisfied_by(self, point: Sequence) -> bool:
        x = [to_rational(v) for v in point]
        for coeffs, rhs in self.normalized():
            if sum((a * v for a, v in zip(coeffs, x)), Fraction(0)) > rhs:
                return False
        return True


@dataclass(frozen=True)
class FarkasCertificate:
    multipliers: tuple


@dataclass(frozen=True)
class Feasible:
    point: tuple


@dataclass(frozen=True)
class Infeasible:
    certificate: FarkasCertificate


@dataclass(frozen=True)
class Optimal:
    value: Fraction
    point: tuple


@dataclass(frozen=True)
class Unbounded:
    pass


def check_certificate(sys: LinearSystem, cert: FarkasCertificate) -> bool:
    rows = sys.normalized()
    if len(cert.multipliers) != len(rows):
        raise ValueError(f"certificate has {len(cert.multipliers)} multipliers for {len(rows)} rows")
    lam = [to_rational(v) for v in cert.multipliers]
    if any(v < 0 for v in lam):
        return False
    total = [Fraction(0)] * sys.num_vars
    rhs = Fraction(0)
    for mult, (coeffs, b) in zip(lam, rows):
        if mult == 0:
            continue
        for j, a in enumerate(coeffs):
            if a:
                total[j] += mult * a
        rhs += mult * b
    return all(v == 0 for v in total) and rhs < 0


class _Simplex:
    def __init__(self, sys: LinearSystem):
        n, m = sys.num_vars, len(sys.constraints)
        self.n, self.m = n, m
        lo = []
        up = []
        for b in sys.var_bounds:
            lo.append(None if b is None else _Q(b.lo))
            up.append(None if b is None else _Q(b.hi))
        zero = _Q(0)
        for c in sys.constraints:
            lo.append(zero if c.rel in (LE, EQ) else None)
            up.append(zero if c.rel in (GE, EQ) else None)

        val = []
        for j in range(n):
            val.append(lo[j] if lo[j] is not None else up[j] if up[j] is not None else zero)
        val.extend([zero] * m)

        rows = []
        basis = []
        art_rows = []
        for i, c in enumerate(sys.constraints):
            coeffs = [_Q(a) for a in c.coeffs]
            resid = _Q(c.rhs) - sum((a * v for a, v in zip(coeffs, val) if a), zero)
            row = coeffs + [zero] * m
            row[n + i] = _Q(1)
            s_lo, s_up = lo[n + i], up[n + i]
            if (s_lo is None or resid >= s_lo) and (s_up is None or resid <= s_up):
                basis.append(n + i)
                val[n + i] = resid
                rows.append(row)
            else:
                sign = 1 if resid > 0 else -1
                if sign < 0:
                    row = [-a for a in row]
                art_rows.append((i, abs(resid)))
                basis.append(None)
                rows.append(row)
        self.num_art = len(art_rows)
        ncols = n + m + self.num_art
        for row in rows:
            row.extend([zero] * self.num_art)
        for a, (i, value) in enumerate(art_rows):
            col = n + m + a
            rows[i][col] = _Q(1)
            basis[i] = col
            lo.append(zero)
            up.append(None)
            val.append(value)
        self.ncols = ncols
        self.T = rows
        self.basis = basis
        self.lo, self.up, self.val = lo, up, val
        self.is_basic = [False] * ncols
        for b in basis:
            self.is_basic[b] = True
        self.d = None

    def _reduced_costs(self, cost):
        d = list(cost)
        for i, row in enumerate(self.T):
            cb = cost[self.basis[i]]
            if cb:
                for j, a in enumerate(row):
                    if a:
                        d[j] -= cb * a
        return d

    def _pivot(self, r, q):
        pr = self.T[r]
        piv = pr[q]
        if piv != 1:
            pr = [a / piv for a in pr]
            self.T[r] = pr
        nz = [j for j, a in enumerate(pr) if a]
        for i, row in enumerate(self.T):
            if i == r:
                continue
            f = row[q]
            if f:
                for j in nz:
                    row[j] -= f * pr[j]
        f = self.d[q]
        if f:
            d = self.d
            for j in nz:
                d[j] -= f * pr[j]
        self.is_basic[self.basis[r]] = False
        self.is_basic[q] = True
        self.basis[r] = q

    def run(self, cost) -> bool:
        """Minimize ``cost·x``; return False if unbounded."""
        self.d = self._reduced_costs(cost)
        lo, up, val = self.lo, self.up, self.val
        for _ in range(_MAX_PIVOTS):
            d = self.d
            q = None
            for j in range(self.ncols):
                if self.is_basic[j]:
                    continue
                dj = d[j]
                if dj < 0 and (up[j] is None or val[j] < up[j]):
                    q = j
                    break
                if dj > 0 and (lo[j] is None or val[j] > lo[j]):
                    q = j
                    break
            if q is None:
                return True
            delta = 1 if d[q] < 0 else -1

            best_t = None
            best_var = None
            best_row = None
            if lo[q] is not None and up[q] is not None:
                best_t, best_var = up[q] - lo[q], q
            for i, row in enumerate(self.T):
                a = row[q]
                if not a:
                    continue
                b = self.basis[i]
                rate = -a if delta > 0 else a
                if rate < 0:
                    if lo[b] is None:
                        continue
                    t = (val[b] - lo[b]) / -rate
                else:
                    if up[b] is None:
                        continue
                    t = (up[b] - val[b]) / rate
                if best_t is None or t < best_t or (t == best_t and b < best_var):
                    best_t, best_var, best_row = t, b, i
            if best_t is None:
                return False

            if best_t:
                step = best_t if delta > 0 else -best_t
                val[q] += step
                for i, row in enumerate(self.T):
                    a = row[q]
                    if a:
                        val[self.basis[i]] -= step * a
            if best_var == q:
                val[q] = up[q] if delta > 0 else lo[q]
                continue
            leaving = best_var
            hit_upper = (-self.T[best_row][q] if delta > 0 else self.T[best_row][q]) > 0
            self._pivot(best_row, q)
            val[leaving] = up[leaving] if hit_upper else lo[leaving]
        raise RuntimeError("simplex pivot limit exceeded")

    def phase_one(self) -> bool:
        if not self.num_art:
            return True
        zero, one = _Q(0), _Q(1)
        cost = [zero] * (self.n + self.m) + [one] * self.num_art
        self.run(cost)
        infeas = sum(self.val[self.n + self.m:], zero)
        if infeas > 0:
            return False
        for j in range(self.n + self.m, self.ncols):
            self.lo[j] = self.up[j] = zero
        return True

    def certificate(self, sys: LinearSystem) -> FarkasCertificate:
        n = self.n
        d = self.d
        mult = []
        for i, c in enumerate(sys.constraints):
            ds = d[n + i]
            if c.rel == LE:
                mult.append(ds if ds > 0 else _Q(0))
            elif c.rel == GE:
                mult.append(-ds if ds < 0 else _Q(0))
            else:
                mult.append(ds if ds > 0 else _Q(0))
                mult.append(-ds if ds < 0 else _Q(0))
        for j, b in enumerate(sys.var_bounds):
            if b is None:
                continue
            dj = d[j]
            mult.append(dj if dj > 0 else _Q(0))
            mult.append(-dj if dj < 0 else _Q(0))
        return FarkasCertificate(tuple(to_rational(v) for v in mult))

    def point(self) -> tuple:
        return tuple(to_rational(v) for v in self.val[: self.n])


def solve_feasibility(sys: LinearSystem):
    """Return :class:`Feasible` with an exact point or :class:`Infeasible`."""
    spx = _Simplex(sys)
    if spx.phase_one():
        return Feasible(spx.point())
    return Infeasible(spx.certificate(sys))


def optimize(sys: LinearSystem, objective: Sequence, sense: str = MIN):
    """Exact LP optimum of ``objective·x``: :class:`Optimal`, :class:`Unbounded` or :class:`Infeasible`."""
    if sense not in (MIN, MAX):
        raise ValueError(f"unknown sense {sense!r}")
    if len(objective) != sys.num_vars:
        raise ValueError("objective dimension mismatch")
    obj = [to_rational(c) for c in objective]
    spx = _Simplex(sys)
    if not spx.phase_one():
        return Infeasible(spx.certificate(sys))
    zero = _Q(0)
    sign = 1 if sense == MIN else -1
    cost = [_Q(sign * c) for c in obj] + [zero] * (spx.ncols - spx.n)
    if not spx.run(cost):
        return Unbounded()
    point = spx.point()
    value = sum((c * v for c, v in zip(obj, point)), Fraction(0))
    return Optimal(value, point)
