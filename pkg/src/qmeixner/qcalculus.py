"""Jackson q-integrals on geometric lattices, q-derivative, boundary limits.

The q-integral forms implemented here (alpha, beta nonzero, 0 < q < 1):

* ``int_0^alpha f = (1-q) sum_{k>=0} f(alpha q^k) alpha q^k``
* ``int_alpha^beta  = int_0^beta - int_0^alpha``
* ``int_0^{inf(alpha)} = (1-q) sum_{k in Z} f(alpha q^k) alpha q^k``
  (q-periodic in alpha)
* ``int_beta^{inf(alpha)} = int_0^{inf(alpha)} - int_0^beta``
* ``int_{inf(beta)}^{inf(alpha)} = int_0^{inf(alpha)} - int_0^{inf(beta)}``

and the finite-sum convention ``int_{beta q^l}^beta = (1-q)
sum_{k=0}^{l-1} f(beta q^k) beta q^k`` (exact, no tail).

Integrands receive :class:`LatticePoint` objects, never floating abscissae:
a point is (anchor, k) and its value anchor * q^k is recomputed from the
exact exponent on demand, so Pochhammer arguments built from lattice points
carry no accumulated grid drift.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from mpmath import mp, mpc, mpf

from .errors import ConvergenceError, DomainError
from .numeric import QContext, ScaledValue, to_mpc

#: branch tags for the mixed lattices used by the function families
BRANCH_NEG = "neg"            # -q^N, anchor -1, k >= 0
BRANCH_POS = "pos_plus"       # t_+ q^Z
BRANCH_MINUS = "pos_minus"    # t_- q^Z


@dataclass(frozen=True)
class LatticePoint:
    """Exact point anchor * q^k of a geometric lattice.

    ``branch`` is a bookkeeping tag (one of the module constants above, or
    "ray" for a generic integration ray).  Value and scaled sub-expressions
    are always derived from the exact integer exponent.
    """

    ctx: QContext
    anchor: object            # mpf/mpc, nonzero
    k: int
    branch: str = "ray"

    def value(self) -> mpc:
        with self.ctx.workdps():
            return to_mpc(self.anchor) * self.ctx.qpow(self.k)

    def scale_by(self, c) -> mpc:
        """c * anchor * q^k computed from the exact exponent."""
        with self.ctx.workdps():
            return to_mpc(c) * to_mpc(self.anchor) * self.ctx.qpow(self.k)

    def shifted(self, dk: int) -> "LatticePoint":
        return LatticePoint(self.ctx, self.anchor, self.k + dk, self.branch)

    def real_value(self) -> mpf:
        v = self.value()
        return mp.re(v)

    def __repr__(self):
        return f"LatticePoint({self.branch}, anchor={self.anchor}, k={self.k})"


@dataclass
class QIntegralResult:
    """Value of a q-integral plus its truncation certificate."""

    value: ScaledValue
    tail_error: mpf
    terms_used: int
    cancellation: mpf

    @property
    def scale(self) -> mpf:
        """Largest intermediate magnitude seen while summing."""
        mag = self.value.magnitude()
        if mp.isinf(self.cancellation):
            return self.tail_error if mag == 0 else mag
        return self.cancellation * mag if mag > 0 else mpf(0)


Integrand = Callable[[LatticePoint], object]


def _as_point(ctx: QContext, x, branch="ray") -> LatticePoint:
    if isinstance(x, LatticePoint):
        return x
    return LatticePoint(ctx, to_mpc(x), 0, branch)


class _Accumulator:
    """Deterministic summation with scale, streak and tail tracking."""

    def __init__(self, ctx: QContext, tol):
        self.ctx = ctx
        self.tol = tol
        self.total = mpc(0)
        self.peak = mpf(0)
        self.max_term = mpf(0)
        self.terms = 0
        self.small_run = 0
        self.zero_run = 0
        self.prev_mag = None
        self.last_ratio = mpf(0)

    def add(self, term: mpc) -> None:
        self.total += term
        self.terms += 1
        mag = abs(term)
        self.max_term = max(self.max_term, mag)
        self.peak = max(self.peak, abs(self.total))
        if term == 0:
            self.zero_run += 1
        else:
            self.zero_run = 0
        scale = max(abs(self.total), self.max_term * self.ctx.eps)
        if mag <= self.tol * scale:
            self.small_run += 1
        else:
            self.small_run = 0
        if self.prev_mag and self.prev_mag > 0 and mag > 0:
            self.last_ratio = mag / self.prev_mag
        if mag > 0:
            self.prev_mag = mag

    @property
    def scale(self) -> mpf:
        return max(abs(self.total), self.max_term * self.ctx.eps)

    def certified(self) -> Optional[mpf]:
        """Tail bound if this side may stop now, else None.

        Lattice-persistent exact zeros (a vanished Pochhammer factor stays
        vanished further out on the ray) close a side with tail exactly 0.
        """
        if self.zero_run >= 8:
            return mpf(0)
        if self.small_run >= 5 and self.prev_mag is not None and self.last_ratio < mpf("0.9"):
            rho = self.last_ratio
            return self.prev_mag * rho / (1 - rho)
        return None

    def cancellation(self) -> mpf:
        if abs(self.total) > 0:
            return self.peak / abs(self.total)
        return mpf("+inf") if self.peak > 0 else mpf(1)


def _sum_ray(ctx: QContext, f: Integrand, anchor, k_start: int, step: int,
             tol, acc: _Accumulator, max_terms: int, k_stop=None) -> mpf:
    """Accumulate (1-q) f(x) x over k = k_start, k_start+step, ... on one ray.

    Returns the certified tail bound for this direction.  ``k_stop``
    (exclusive, used by fixed windows) disables adaptive stopping.
    """
    one_minus_q = 1 - ctx.q
    k = k_start
    count = 0
    base = _as_point(ctx, anchor)
    while True:
        if k_stop is not None and (k - k_stop) * step >= 0:
            # fixed window exhausted; certify from the local decay
            t = acc.certified()
            if t is not None:
                return t
            if acc.prev_mag is None:
                return mpf(0)
            rho = acc.last_ratio
            if 0 < rho < mpf("0.9"):
                return acc.prev_mag * rho / (1 - rho)
            raise ConvergenceError(
                "fixed integration window ended before the tail was certified")
        pt = LatticePoint(ctx, base.anchor, base.k + k, base.branch)
        fx = to_mpc(f(pt))
        acc.add(one_minus_q * fx * pt.value())
        count += 1
        if k_stop is None and count >= 8:
            t = acc.certified()
            if t is not None:
                return t
        if count > max_terms:
            raise ConvergenceError(
                f"q-integral ray did not decay within {max_terms} terms")
        k += step


def qint_zero_to(ctx: QContext, f: Integrand, alpha, tol=None,
                 max_terms: int = 4000) -> QIntegralResult:
    """int_0^alpha f(x) dq x over the single ray alpha q^N."""
    if to_mpc(alpha) == 0:
        raise DomainError("integration anchor must be nonzero")
    tol = _default_tol(ctx) if tol is None else mpf(tol)
    with ctx.workdps():
        acc = _Accumulator(ctx, tol)
        tail = _sum_ray(ctx, f, alpha, 0, +1, tol, acc, max_terms)
        return QIntegralResult(ScaledValue(ctx, acc.total), tail, acc.terms,
                               acc.cancellation())


def qint_bilateral(ctx: QContext, f: Integrand, alpha, tol=None,
                   max_terms: int = 4000, window=None) -> QIntegralResult:
    """int_0^{inf(alpha)} f(x) dq x, the bilateral sum over alpha q^Z.

    The positive-k tail decays geometrically; the negative-k tail must
    decay as well (for the weight-type integrands used here it decays as
    q^{k^2/2}).  ``window=(k_min, k_max)`` sums that fixed range instead of
    growing adaptively; tails are still certified from the edge behaviour.
    """
    if to_mpc(alpha) == 0:
        raise DomainError("integration anchor must be nonzero")
    tol = _default_tol(ctx) if tol is None else mpf(tol)
    with ctx.workdps():
        acc = _Accumulator(ctx, tol)
        if window is None:
            tail_pos = _sum_ray(ctx, f, alpha, 0, +1, tol, acc, max_terms)
            acc.small_run = acc.zero_run = 0
            acc.prev_mag = None
            tail_neg = _sum_ray(ctx, f, alpha, -1, -1, tol, acc, max_terms)
        else:
            k_min, k_max = window
            tail_pos = _sum_ray(ctx, f, alpha, 0, +1, tol, acc, max_terms,
                                k_stop=k_max + 1)
            acc.small_run = acc.zero_run = 0
            acc.prev_mag = None
            tail_neg = _sum_ray(ctx, f, alpha, -1, -1, tol, acc, max_terms,
                                k_stop=k_min - 1)
        return QIntegralResult(ScaledValue(ctx, acc.total), tail_pos + tail_neg,
                               acc.terms, acc.cancellation())


def qint_between(ctx: QContext, f: Integrand, start, end, tol=None,
                 max_terms: int = 4000) -> QIntegralResult:
    """int_start^end f dq x = int_0^end - int_0^start.

    If both endpoints sit on one ray (end = anchor q^j, start = anchor q^l
    with l >= j) the finite-sum convention applies and the result is the
    exact finite sum over k = j .. l-1.
    """
    p0 = _as_point(ctx, start)
    p1 = _as_point(ctx, end)
    with ctx.workdps():
        ratio_idx = None
        if to_mpc(p0.anchor) != 0 and to_mpc(p1.anchor) != 0:
            ratio_idx = ctx.q_ray_index(to_mpc(p0.value()) / to_mpc(p1.value()))
        if ratio_idx is not None and ratio_idx >= 0:
            # start = end * q^l on a shared ray: exact finite sum
            l = ratio_idx
            one_minus_q = 1 - ctx.q
            total = mpc(0)
            peak = mpf(0)
            for k in range(l):
                pt = p1.shifted(k)
                total += one_minus_q * to_mpc(f(pt)) * pt.value()
                peak = max(peak, abs(total))
            if abs(total) > 0:
                cancel = peak / abs(total)
            else:
                cancel = mpf(1) if peak == 0 else mpf("+inf")
            return QIntegralResult(ScaledValue(ctx, total), mpf(0), l, cancel)
        r_end = qint_zero_to(ctx, f, p1, tol, max_terms)
        r_start = qint_zero_to(ctx, f, p0, tol, max_terms)
        return _combine(ctx, r_end, r_start)


def qint_to_inf(ctx: QContext, f: Integrand, beta, alpha, tol=None,
                max_terms: int = 4000, window=None) -> QIntegralResult:
    """int_beta^{inf(alpha)} f dq x = int_0^{inf(alpha)} - int_0^beta."""
    r_inf = qint_bilateral(ctx, f, alpha, tol, max_terms, window=window)
    r_beta = qint_zero_to(ctx, f, beta, tol, max_terms)
    return _combine(ctx, r_inf, r_beta)


def qint_inf_to_inf(ctx: QContext, f: Integrand, beta, alpha, tol=None,
                    max_terms: int = 4000, window=None) -> QIntegralResult:
    """int_{inf(beta)}^{inf(alpha)} f dq x over both full rays."""
    r_a = qint_bilateral(ctx, f, alpha, tol, max_terms, window=window)
    r_b = qint_bilateral(ctx, f, beta, tol, max_terms, window=window)
    return _combine(ctx, r_a, r_b)


def _combine(ctx: QContext, plus: QIntegralResult, minus: QIntegralResult) -> QIntegralResult:
    with ctx.workdps():
        total = plus.value.value - minus.value.value
        peak = max(plus.scale, minus.scale, abs(total))
        if abs(total) > 0:
            cancel = peak / abs(total)
        else:
            cancel = mpf("+inf") if peak > 0 else mpf(1)
        return QIntegralResult(ScaledValue(ctx, total),
                               plus.tail_error + minus.tail_error,
                               plus.terms_used + minus.terms_used, cancel)


def _default_tol(ctx: QContext) -> mpf:
    return ctx.eps


# ---------------------------------------------------------------------------
# q-derivative and boundary limits
# ---------------------------------------------------------------------------

def qderiv(ctx: QContext, f: Callable, x) -> ScaledValue:
    """D_q f(x) = (f(x) - f(qx)) / ((1-q) x), exact two-point formula.

    ``f`` takes a plain value; pass lattice-aware callables through
    :func:`qderiv_on_lattice` instead when exact exponents matter.
    """
    with ctx.workdps():
        xv = to_mpc(x)
        if xv == 0:
            raise DomainError("q-derivative is undefined at x = 0")
        return ScaledValue(ctx, (to_mpc(f(xv)) - to_mpc(f(ctx.q * xv))) / ((1 - ctx.q) * xv))


def qderiv_on_lattice(ctx: QContext, f: Integrand, pt: LatticePoint) -> ScaledValue:
    with ctx.workdps():
        num = to_mpc(f(pt)) - to_mpc(f(pt.shifted(1)))
        return ScaledValue(ctx, num / ((1 - ctx.q) * pt.value()))


@dataclass
class BoundaryLimits:
    """Limits of f and D_q f along both lattice branches toward 0."""

    f0_plus: mpc
    f0_minus: mpc
    fprime0_plus: mpc
    fprime0_minus: mpc
    converged: bool


def boundary_limits(ctx: QContext, f: Integrand, t_plus, k_max: int = 80,
                    neg_anchor=-1) -> BoundaryLimits:
    """Limits f(0^+), f(0^-), f'(0^+), f'(0^-) from lattice sequences.

    Evaluates f on t_+ q^k and (neg_anchor) q^k for k up to k_max and
    returns the last iterates together with a geometric-convergence
    certificate: converged means the final three successive differences of
    every sequence each shrank by at least a factor 2.
    """
    with ctx.workdps():
        results = []
        ok = True
        for anchor, branch in ((t_plus, BRANCH_POS), (neg_anchor, BRANCH_NEG)):
            vals = []
            for k in range(k_max - 2, k_max + 2):
                pt = LatticePoint(ctx, to_mpc(anchor), k, branch)
                vals.append(to_mpc(f(pt)))
            derivs = []
            for k in range(k_max - 2, k_max + 2):
                pt = LatticePoint(ctx, to_mpc(anchor), k, branch)
                derivs.append((to_mpc(f(pt)) - to_mpc(f(pt.shifted(1))))
                              / ((1 - ctx.q) * pt.value()))
            for seq in (vals, derivs):
                diffs = [abs(seq[i + 1] - seq[i]) for i in range(len(seq) - 1)]
                for i in range(len(diffs) - 1):
                    if diffs[i] == 0:
                        continue
                    if diffs[i + 1] > diffs[i] / 2:
                        ok = False
            results.append((vals[-1], derivs[-1]))
        (fp, dp), (fm, dm) = results
        return BoundaryLimits(fp, fm, dp, dm, ok)
