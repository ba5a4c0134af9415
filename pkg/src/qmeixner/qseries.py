"""q-shifted factorials, theta functions and basic hypergeometric series.

Conventions (0 < q < 1 throughout):

* ``(x;q)_n = prod_{k=0}^{n-1} (1 - x q^k)``, with ``n = None`` meaning the
  convergent infinite product.
* ``theta(x) = (x; q)_inf (q/x; q)_inf`` (normalized Jacobi theta), with the
  shift rule ``theta(x q^k) = (-x)^{-k} q^{-k(k-1)/2} theta(x)``.
* ``rphis`` sums ``sum_k (x_1..x_r;q)_k / ((q,y_1..y_s;q)_k) *
  ((-1)^k q^{k(k-1)/2})^{1+s-r} z^k`` with a certified geometric tail bound.

Zero detection is symbolic (lattice membership within rounding), never a
magnitude threshold, so exact zeros of products stay exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from mpmath import mp, mpc, mpf

from .errors import ConvergenceError, DomainError
from .numeric import QContext, ScaledValue, to_mpc

_MAX_TERMS = 100_000


# ---------------------------------------------------------------------------
# q-shifted factorials
# ---------------------------------------------------------------------------

def qpoch_finite(ctx: QContext, x, n: int) -> ScaledValue:
    """(x;q)_n for integer n >= 0 (empty product = 1)."""
    if n < 0:
        raise DomainError("qpoch_finite requires n >= 0")
    with ctx.workdps():
        xv = to_mpc(x)
        j = ctx.neg_q_power_index(xv)
        if j is not None and j <= n - 1:
            return ScaledValue.zero(ctx)
        p = mpc(1)
        for k in range(n):
            p *= 1 - xv * ctx.qpow(k)
        return ScaledValue(ctx, p)


def qpoch_infinite(ctx: QContext, x) -> ScaledValue:
    """(x;q)_inf; exact zero iff x in q^(-N).

    The product is truncated once |x q^k| drops below 10^-(dps+6) and a
    first-order tail factor (1 - x q^K / (1-q)) is applied, which leaves the
    relative truncation error far below one ulp.
    """
    with ctx.workdps():
        xv = to_mpc(x)
        if xv == 0:
            return ScaledValue(ctx, 1)
        if ctx.neg_q_power_index(xv) is not None:
            return ScaledValue.zero(ctx)
        key = ("qpi", xv, ctx.dps)
        cached = ctx._cache.get(key)
        if cached is not None:
            return cached
        cutoff = mpf(10) ** (-(ctx.dps + 6))
        p = mpc(1)
        k = 0
        f = xv
        while abs(f) >= cutoff:
            p *= 1 - f
            f *= ctx.q
            k += 1
            if k > _MAX_TERMS:  # unreachable for 0<q<1; guards bad contexts
                raise ConvergenceError("qpoch_infinite failed to decay")
        p *= 1 - f / (1 - ctx.q)
        out = ScaledValue(ctx, p)
        if len(ctx._cache) > 400_000:
            ctx._cache.clear()
        ctx._cache[key] = out
        return out


def qpoch(ctx: QContext, x, n: Optional[int] = None) -> ScaledValue:
    """(x;q)_n, with n = None meaning the infinite product."""
    return qpoch_infinite(ctx, x) if n is None else qpoch_finite(ctx, x, n)


def qpoch_product(ctx: QContext, xs: Sequence, n: Optional[int] = None) -> ScaledValue:
    """(x_1, ..., x_k; q)_n as a product of individual factors."""
    out = ScaledValue(ctx, 1)
    for x in xs:
        out = out * qpoch(ctx, x, n)
    return out


# ---------------------------------------------------------------------------
# theta functions
# ---------------------------------------------------------------------------

def theta(ctx: QContext, x, reduce: bool = True) -> ScaledValue:
    """Normalized Jacobi theta (x, q/x; q)_inf; exact zero iff x in q^Z.

    With reduce=True (default) the argument is first shifted into the
    annulus around |x| ~ 1 via the theta shift rule, which keeps the two
    infinite products short and well-scaled for arguments like q^(-40).
    ``reduce=False`` evaluates both products directly and exists so shift
    identities can be tested against an independent evaluation path.
    """
    with ctx.workdps():
        xv = to_mpc(x)
        if xv == 0:
            raise DomainError("theta(0) is undefined")
        if ctx.in_q_integer_lattice(xv):
            return ScaledValue.zero(ctx)
        if not reduce:
            return qpoch_infinite(ctx, xv) * qpoch_infinite(ctx, ctx.q / xv)
        m = int(mp.nint(mp.log(abs(xv)) / mp.log(ctx.q)))
        x0 = xv * ctx.qpow(-m)
        base = qpoch_infinite(ctx, x0) * qpoch_infinite(ctx, ctx.q / x0)
        if m == 0:
            return base
        # theta(x0 q^m) = (-x0)^(-m) q^(-m(m-1)/2) theta(x0)
        pref = ScaledValue(ctx, mp.power(-x0, -m), -(m * (m - 1)) // 2)
        return pref * base


def theta_product(ctx: QContext, xs: Sequence, reduce: bool = True) -> ScaledValue:
    """theta(x_1) * ... * theta(x_k)."""
    out = ScaledValue(ctx, 1)
    for x in xs:
        out = out * theta(ctx, x, reduce=reduce)
    return out


# ---------------------------------------------------------------------------
# basic hypergeometric series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeriesSpec:
    """Parameters of an r-phi-s series: upper list, lower list, argument z."""

    upper: tuple
    lower: tuple
    z: object

    @classmethod
    def make(cls, upper, lower, z) -> "SeriesSpec":
        return cls(tuple(upper), tuple(lower), z)


@dataclass
class ErrorEstimate:
    """Certificate attached to a truncated series evaluation."""

    tail_bound: mpf          # absolute bound on the dropped tail
    terms_used: int
    cancellation: mpf        # max |partial sum| / |sum|
    terminated: bool         # True if the series terminated exactly

    def rel_tail(self, value_mag) -> mpf:
        if value_mag == 0:
            return mpf("+inf") if self.tail_bound > 0 else mpf(0)
        return self.tail_bound / value_mag


def _termination_index(ctx: QContext, upper) -> Optional[int]:
    idx = None
    for u in upper:
        n = ctx.neg_q_power_index(u)
        if n is not None:
            idx = n if idx is None else min(idx, n)
    return idx


def rphis(ctx: QContext, spec: SeriesSpec, tol=None) -> tuple[ScaledValue, ErrorEstimate]:
    """Evaluate an r-phi-s basic hypergeometric series with a certified tail.

    Terminating series (any upper parameter in q^(-N)) are summed exactly to
    the terminating index regardless of tol.  Non-terminating series require
    1+s-r > 0 (entire) or 1+s-r = 0 with |z| < 1; otherwise ConvergenceError.
    A lower parameter in q^(-N) raises DomainError unless the series
    terminates before the offending denominator factor vanishes.
    """
    with ctx.workdps():
        upper = [to_mpc(u) for u in spec.upper]
        lower = [to_mpc(l) for l in spec.lower]
        z = to_mpc(spec.z)
        sf = 1 + len(lower) - len(upper)
        n_term = _termination_index(ctx, upper)
        for l in lower:
            j = ctx.neg_q_power_index(l)
            if j is not None and (n_term is None or n_term > j):
                raise DomainError(f"lower parameter {l} lies in q^(-N)")
        if n_term is None:
            if z == 0:
                est = ErrorEstimate(mpf(0), 1, mpf(1), True)
                return ScaledValue(ctx, 1), est
            if sf < 0:
                raise ConvergenceError("series with r > s+1 diverges unless terminating")
            if sf == 0 and not abs(z) < 1:
                raise ConvergenceError(f"r = s+1 series needs |z| < 1, got |z| = {abs(z)}")
        tol = ctx.eps if tol is None else mpf(tol)

        term = mpc(1)
        total = term
        peak = abs(total)
        max_term = abs(term)
        small_run = 0
        prev_mag = abs(term)
        k = 0
        tail = mpf(0)
        while True:
            if n_term is not None and k >= n_term:
                tail = mpf(0)
                break
            ratio = mpc(1)
            for u in upper:
                ratio *= 1 - u * ctx.qpow(k)
            den = 1 - ctx.qpow(k + 1)
            for l in lower:
                den *= 1 - l * ctx.qpow(k)
            ratio = ratio / den * z
            if sf:
                ratio *= mp.power(-ctx.qpow(k), sf)
            term *= ratio
            total += term
            k += 1
            mag = abs(term)
            max_term = max(max_term, mag)
            peak = max(peak, abs(total))
            if n_term is None:
                scale = max(abs(total), max_term * ctx.eps)
                if mag <= tol * scale:
                    small_run += 1
                else:
                    small_run = 0
                rho = mag / prev_mag if prev_mag > 0 else mpf(0)
                if small_run >= 5 and rho < mpf("0.9"):
                    tail = mag * rho / (1 - rho)
                    if tail <= tol * scale:
                        break
                prev_mag = mag if mag > 0 else prev_mag
            if k > _MAX_TERMS:
                raise ConvergenceError("series did not meet its tolerance within the term budget")
        cancel = (peak / abs(total)) if abs(total) > 0 else (mpf("+inf") if peak > 0 else mpf(1))
        est = ErrorEstimate(tail, k + 1, cancel, n_term is not None)
        return ScaledValue(ctx, total), est


def rphi(ctx: QContext, upper, lower, z, tol=None) -> ScaledValue:
    """Convenience wrapper around :func:`rphis` returning just the value."""
    return rphis(ctx, SeriesSpec.make(upper, lower, z), tol=tol)[0]


def rphis_fused(ctx: QContext, upper, lower_other, fused_lower, z,
                tol=None) -> tuple[ScaledValue, ErrorEstimate]:
    """(c;q)_inf * rphis(upper; lower_other + [c]; q, z), analytic in c.

    Computed termwise as sum_k coeff_k * (c q^k; q)_inf so values with the
    fused lower parameter c in (or near) q^(-N) are admissible; this is the
    regularization needed around the lattice poles of the asymptotic
    solution families.  The superfactor power is 1 + (s_other+1) - r.
    """
    with ctx.workdps():
        upper = [to_mpc(u) for u in upper]
        lower = [to_mpc(l) for l in lower_other]
        c = to_mpc(fused_lower)
        z = to_mpc(z)
        sf = 1 + (len(lower) + 1) - len(upper)
        n_term = _termination_index(ctx, upper)
        for l in lower:
            j = ctx.neg_q_power_index(l)
            if j is not None and (n_term is None or n_term > j):
                raise DomainError(f"non-fused lower parameter {l} lies in q^(-N)")
        if n_term is None and sf < 0:
            raise ConvergenceError("fused series with r > s+1 diverges unless terminating")
        if n_term is None and sf == 0 and not abs(z) < 1:
            raise ConvergenceError("fused r = s+1 series needs |z| < 1")
        tol = ctx.eps if tol is None else mpf(tol)

        u_coeff = mpc(1)                      # everything except the fused product
        w = qpoch_infinite(ctx, c).value      # (c q^k; q)_inf, tracked incrementally
        total = mpc(0)
        peak = mpf(0)
        max_term = mpf(0)
        small_run = 0
        prev_mag = None
        k = 0
        tail = mpf(0)
        while True:
            term = u_coeff * w
            total += term
            mag = abs(term)
            max_term = max(max_term, mag)
            peak = max(peak, abs(total))
            if n_term is not None and k >= n_term:
                tail = mpf(0)
                break
            if n_term is None and k > 4:
                scale = max(abs(total), max_term * ctx.eps)
                if mag <= tol * scale:
                    small_run += 1
                else:
                    small_run = 0
                rho = (mag / prev_mag) if (prev_mag and prev_mag > 0) else mpf(0)
                if small_run >= 5 and rho < mpf("0.9"):
                    tail = mag * rho / (1 - rho)
                    if tail <= tol * scale:
                        break
            # advance coefficient and fused product to index k+1
            ratio = mpc(1)
            for u in upper:
                ratio *= 1 - u * ctx.qpow(k)
            den = 1 - ctx.qpow(k + 1)
            for l in lower:
                den *= 1 - l * ctx.qpow(k)
            ratio = ratio / den * z
            if sf:
                ratio *= mp.power(-ctx.qpow(k), sf)
            u_coeff *= ratio
            fac = 1 - c * ctx.qpow(k)
            if w == 0 or abs(fac) < mpf("0.25"):
                w = qpoch_infinite(ctx, c * ctx.qpow(k + 1)).value
            else:
                w /= fac
            prev_mag = mag if mag > 0 else prev_mag
            k += 1
            if k > _MAX_TERMS:
                raise ConvergenceError("fused series did not meet its tolerance")
        if abs(total) > 0:
            cancel = peak / abs(total)
        else:
            cancel = mpf("+inf") if peak > 0 else mpf(1)
        est = ErrorEstimate(tail, k + 1, cancel, n_term is not None)
        return ScaledValue(ctx, total), est
