"""Scalar kernel: precision contexts and q-scaled complex arithmetic.

Every quantity in this package is a complex number carried as
``mantissa * q**qexp`` with ``|mantissa| in [1, 1/q)`` (or exact zero).
The explicit integer q-exponent keeps magnitudes like q**(k*(k-1)/2),
which span hundreds of orders of magnitude across a bilateral lattice,
readable and exactly composable.  mpmath supplies the arbitrary-precision
mantissa arithmetic underneath.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import mpmath
from mpmath import mp, mpc, mpf

from .errors import DomainError, RangeError

Number = Union[int, float, complex, mpf, mpc, "ScaledValue"]

#: q-exponents beyond this bound raise RangeError instead of wrapping.
MAX_QEXP = 10**6


@dataclass(frozen=True)
class Precision:
    """Working precision in significant decimal digits (>= 15), fixed per context."""

    significant_decimal_digits: int = 40

    def __post_init__(self):
        if self.significant_decimal_digits < 15:
            raise ValueError("precision must be at least 15 significant decimal digits")


@dataclass(frozen=True, eq=False)
class QContext:
    """Immutable computation context: the base q in (0,1) plus a Precision.

    All operations taking a QContext run at its precision; nothing reads
    ambient global state except through :meth:`workdps`.  The value cache is
    keyed on exact mpmath values and is shared by the q-Pochhammer/theta
    evaluators.
    """

    q: mpf
    precision: Precision
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, q, digits: int = 40) -> "QContext":
        prec = Precision(digits)
        with mp.workdps(digits + 10):
            qv = mpmath.mpmathify(q if not isinstance(q, float) else repr(q))
            qv = mpf(qv.real) if isinstance(qv, mpc) else mpf(qv)
            if not (0 < qv < 1):
                raise DomainError(f"q must lie strictly inside (0,1), got {qv}")
        return cls(q=qv, precision=prec)

    @property
    def dps(self) -> int:
        return self.precision.significant_decimal_digits

    def workdps(self):
        return mp.workdps(self.dps)

    def qpow(self, k: int) -> mpf:
        """q**k for integer k of either sign."""
        if abs(k) > MAX_QEXP:
            raise RangeError(f"q-exponent {k} exceeds supported range {MAX_QEXP}")
        return mp.power(self.q, k)

    @property
    def eps(self) -> mpf:
        """One unit of relative rounding at this precision."""
        return mpf(10) ** (-self.dps)

    # -- exact membership tests on the q-lattice -------------------------------
    def q_ray_index(self, x, tol_digits: int = 6):
        """Return integer m with x = q**m if x sits on the positive q-ray.

        Membership is decided symbolically-within-rounding: the candidate
        exponent is the rounded base-q logarithm and the match must hold to
        relative 10**-(dps - tol_digits).  Returns None otherwise.
        """
        xv = to_mpc(x)
        if xv == 0:
            return None
        if abs(mp.im(xv)) > abs(xv) * self.eps * mpf(10) ** tol_digits:
            return None
        xr = mp.re(xv)
        if xr <= 0:
            return None
        m = int(mp.nint(mp.log(xr) / mp.log(self.q)))
        if abs(m) > MAX_QEXP:
            return None
        if abs(xr - self.qpow(m)) <= self.qpow(m) * self.eps * mpf(10) ** tol_digits:
            return m
        return None

    def neg_q_power_index(self, x):
        """Return n >= 0 if x = q**(-n) (i.e. x in q**(-N)), else None."""
        m = self.q_ray_index(x)
        if m is not None and m <= 0:
            return -m
        return None

    def in_q_integer_lattice(self, x) -> bool:
        """True iff x = q**m for some integer m (the zero set of theta)."""
        return self.q_ray_index(x) is not None


def to_mpc(x) -> mpc:
    """Coerce any supported numeric type (incl. ScaledValue) to mpc."""
    if isinstance(x, ScaledValue):
        return x.value
    if isinstance(x, (mpf, mpc)):
        return mpc(x)
    if isinstance(x, complex):
        return mpc(x.real, x.imag)
    return mpc(x)


class ScaledValue:
    """Complex scalar stored as ``mantissa * q**qexp``.

    Normalization invariant: mantissa == 0 exactly for the zero value,
    otherwise ``1 <= |mantissa| < 1/q``.  Arithmetic renormalizes and is
    deterministic for identical inputs and precision.
    """

    __slots__ = ("ctx", "mantissa", "qexp")

    def __init__(self, ctx: QContext, value: Number = 0, qexp: int = 0, *, _raw=False):
        self.ctx = ctx
        if _raw:
            self.mantissa = value
            self.qexp = qexp
            return
        with ctx.workdps():
            v = to_mpc(value)
            if v == 0:
                self.mantissa = mpc(0)
                self.qexp = 0
                return
            q = ctx.q
            # e = ceil(log_q |v|) puts |mantissa| in [1, 1/q)
            e = int(mp.ceil(mp.log(abs(v)) / mp.log(q))) + qexp
            m = v * mp.power(q, qexp - e)
            # one-step fixups against log rounding at the bin boundary
            while abs(m) < 1:
                m /= q
                e += 1
            while abs(m) >= 1 / q:
                m *= q
                e -= 1
            if abs(e) > MAX_QEXP:
                raise RangeError(f"q-exponent {e} exceeds supported range {MAX_QEXP}")
            self.mantissa = m
            self.qexp = e

    # -- constructors -----------------------------------------------------------
    @classmethod
    def zero(cls, ctx: QContext) -> "ScaledValue":
        return cls(ctx, 0)

    # -- views ------------------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return self.mantissa == 0

    @property
    def value(self) -> mpc:
        """Denormalized plain mpc value."""
        with self.ctx.workdps():
            if self.is_zero:
                return mpc(0)
            return self.mantissa * self.ctx.qpow(self.qexp)

    def magnitude(self) -> mpf:
        with self.ctx.workdps():
            if self.is_zero:
                return mpf(0)
            return abs(self.mantissa) * self.ctx.qpow(self.qexp)

    def is_real(self, tol_digits: int = 8) -> bool:
        if self.is_zero:
            return True
        return abs(mp.im(self.mantissa)) <= abs(self.mantissa) * self.ctx.eps * mpf(10) ** tol_digits

    def __complex__(self) -> complex:
        return complex(self.value)

    def __repr__(self) -> str:
        if self.is_zero:
            return "ScaledValue(0)"
        with mp.workdps(8):
            return f"ScaledValue({mp.nstr(self.mantissa, 8)} * q^{self.qexp})"

    # -- arithmetic ---------------------------------------------------------------
    def _coerce(self, other: Number) -> "ScaledValue":
        if isinstance(other, ScaledValue):
            return other
        return ScaledValue(self.ctx, other)

    def __mul__(self, other: Number) -> "ScaledValue":
        o = self._coerce(other)
        with self.ctx.workdps():
            if self.is_zero or o.is_zero:
                return ScaledValue.zero(self.ctx)
            return ScaledValue(self.ctx, self.mantissa * o.mantissa, self.qexp + o.qexp)

    __rmul__ = __mul__

    def __truediv__(self, other: Number) -> "ScaledValue":
        o = self._coerce(other)
        if o.is_zero:
            raise DomainError("division by exact zero")
        with self.ctx.workdps():
            if self.is_zero:
                return ScaledValue.zero(self.ctx)
            return ScaledValue(self.ctx, self.mantissa / o.mantissa, self.qexp - o.qexp)

    def __rtruediv__(self, other: Number) -> "ScaledValue":
        return self._coerce(other) / self

    def __add__(self, other: Number) -> "ScaledValue":
        o = self._coerce(other)
        with self.ctx.workdps():
            if self.is_zero:
                return o
            if o.is_zero:
                return self
            hi, lo = (self, o) if self.qexp <= o.qexp else (o, self)
            shift = lo.qexp - hi.qexp  # >= 0, lo carries the smaller magnitude scale
            # beyond the precision horizon the small operand rounds away entirely
            horizon = int(self.ctx.dps * mp.log(10) / -mp.log(self.ctx.q)) + 30
            if shift > horizon:
                return hi
            m = hi.mantissa + lo.mantissa * self.ctx.qpow(shift)
            return ScaledValue(self.ctx, m, hi.qexp)

    __radd__ = __add__

    def __neg__(self) -> "ScaledValue":
        return ScaledValue(self.ctx, -self.mantissa, self.qexp, _raw=True)

    def __sub__(self, other: Number) -> "ScaledValue":
        return self + (-self._coerce(other))

    def __rsub__(self, other: Number) -> "ScaledValue":
        return self._coerce(other) + (-self)

    def __abs__(self) -> "ScaledValue":
        return ScaledValue(self.ctx, abs(self.mantissa), self.qexp, _raw=True)

    def conjugate(self) -> "ScaledValue":
        return ScaledValue(self.ctx, mp.conj(self.mantissa), self.qexp, _raw=True)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScaledValue):
            try:
                other = self._coerce(other)
            except Exception:
                return NotImplemented
        return self.qexp == other.qexp and self.mantissa == other.mantissa

    def __hash__(self):
        return hash((self.mantissa, self.qexp))


def sv_arith(a: ScaledValue, b: ScaledValue, op: str) -> ScaledValue:
    """Named-dispatch arithmetic on scaled values: add / sub / mul / div."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    raise ValueError(f"unknown op {op!r}")


def cancellation_metric(partial_sums: Sequence[Number], ctx: QContext = None) -> mpf:
    """max |partial| / |final| over a sequence of partial sums.

    The metric estimates how many leading digits were lost to cancellation;
    callers escalate precision when ``metric * 10**-digits`` exceeds their
    tolerance.  A final sum of exact zero with nonzero partials reports +inf
    (a signal, not an error).
    """
    partials = list(partial_sums)
    if not partials:
        raise DomainError("cancellation metric needs at least one partial sum")
    if ctx is not None:
        cm = ctx.workdps()
    else:
        cm = mp.workdps(mp.dps)
    with cm:
        mags = [abs(to_mpc(p)) for p in partials]
        final = mags[-1]
        peak = max(mags)
        if final == 0:
            return mpf("+inf") if peak > 0 else mpf(1)
        return peak / final
