"""Weight, polynomial families and eigenfunction families on the q-lattice.

Families implemented (all with multiple independent series routes):

* ``weight_w``: w(x) = (-qx;q)_inf / ((-ax,-bx;q)_inf)
* ``poly_m``:   m_n(x;a,b;q), terminating 2phi1, orthogonal family
* ``poly_p``:   finite family P_n(x;a,b,c;q), terminating 3phi2
* ``qmeixner_M``: classical relabeled polynomial M_n(x;b,c;q)
* ``phi``:      entire eigenfunction, four series routes
* ``psi``:      second eigensolution, regularized 2phi2 plus a 2phi1 route
* ``phi_asym``: asymptotically small solution Phi (combo of phi and psi,
  plus two lattice series routes and a terminating route)
* ``phi_dagger``: the a<->b partner of phi_asym

Parameter positivity follows the four mutually exclusive cases (complex
conjugate pair / both in (0,1) / both in one (q^{k0}, q^{k0-1}) window above
1 / both negative with -at, -bt in one window).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from mpmath import mp, mpc, mpf

from .errors import ConditioningWarning, ConvergenceError, DomainError, PoleError, WindowError
from .numeric import QContext, ScaledValue, to_mpc
from .qcalculus import BRANCH_MINUS, BRANCH_NEG, BRANCH_POS, LatticePoint
from .qseries import (ErrorEstimate, SeriesSpec, qpoch, qpoch_infinite,
                      qpoch_product, rphi, rphis, rphis_fused, theta,
                      theta_product)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Params:
    """Validated parameter bundle (q, a, b [, c], t_plus, t_minus).

    Construction rejects parameter choices that put weight poles on the
    lattice (-a, -b, -a t_pm, -b t_pm in q^Z).  ``positivity_case`` is one
    of "i".."iv" or "none"; ``genericity`` records which of the spectral
    lemma assumptions (a, b, b/a, ab t_- t_+, a t_- t_+, b t_- t_+ not in
    q^Z) hold for this bundle.
    """

    ctx: QContext
    a: mpc
    b: mpc
    c: Optional[mpc] = None
    t_plus: mpf = None
    t_minus: mpf = None
    positivity_case: str = field(default="", init=False)
    k0_witness: Optional[int] = field(default=None, init=False)
    genericity: Dict[str, bool] = field(default_factory=dict, init=False)

    @classmethod
    def create(cls, ctx: QContext, a, b, c=None, t_plus=1, t_minus=-1) -> "Params":
        with ctx.workdps():
            av, bv = to_mpc(a), to_mpc(b)
            cv = None if c is None else to_mpc(c)
            tp = mpf(mp.re(to_mpc(t_plus)))
            tm = mpf(mp.re(to_mpc(t_minus)))
            if not tp > 0:
                raise DomainError("t_plus must be positive")
            if not tm < 0:
                raise DomainError("t_minus must be negative")
            if av == 0 or bv == 0:
                raise DomainError("a and b must be nonzero")
            for label, val in (("-a", -av), ("-b", -bv), ("-a*t_plus", -av * tp),
                               ("-b*t_plus", -bv * tp), ("-a*t_minus", -av * tm),
                               ("-b*t_minus", -bv * tm)):
                if ctx.in_q_integer_lattice(val):
                    raise DomainError(
                        f"weight pole on the lattice: {label} lies in q^Z")
            p = cls(ctx=ctx, a=av, b=bv, c=cv, t_plus=tp, t_minus=tm)
            case, k0 = _classify(ctx, av, bv, tp, tm)
            object.__setattr__(p, "positivity_case", case)
            object.__setattr__(p, "k0_witness", k0)
            gen = {}
            for label, val in (("a", av), ("b", bv), ("b/a", bv / av),
                               ("ab*t_minus*t_plus", av * bv * tm * tp),
                               ("a*t_minus*t_plus", av * tm * tp),
                               ("b*t_minus*t_plus", bv * tm * tp)):
                gen[label] = not ctx.in_q_integer_lattice(val)
            object.__setattr__(p, "genericity", gen)
            return p

    # -- lattice constructors ----------------------------------------------------
    def neg(self, k: int) -> LatticePoint:
        """Point -q^k of the negative branch (k >= 0)."""
        if k < 0:
            raise DomainError("negative branch has k >= 0")
        return LatticePoint(self.ctx, mpf(-1), k, BRANCH_NEG)

    def pos(self, k: int) -> LatticePoint:
        """Point t_plus q^k."""
        return LatticePoint(self.ctx, self.t_plus, k, BRANCH_POS)

    def minus(self, k: int) -> LatticePoint:
        """Point t_minus q^k (indefinite-lattice branch)."""
        return LatticePoint(self.ctx, self.t_minus, k, BRANCH_MINUS)

    def with_swapped_ab(self) -> "Params":
        return Params.create(self.ctx, self.b, self.a, self.c, self.t_plus, self.t_minus)

    def label(self) -> str:
        with mp.workdps(8):
            bits = [f"q={mp.nstr(self.ctx.q, 6)}", f"a={mp.nstr(self.a, 6)}",
                    f"b={mp.nstr(self.b, 6)}"]
            if self.c is not None:
                bits.append(f"c={mp.nstr(self.c, 6)}")
            bits.append(f"t+={mp.nstr(self.t_plus, 6)}")
            bits.append(f"t-={mp.nstr(self.t_minus, 6)}")
        return ", ".join(bits)


def _window_index(ctx: QContext, v: mpf) -> Optional[int]:
    """k with q^k < v < q^(k-1), or None if v is not strictly inside one."""
    if not v > 0:
        return None
    with ctx.workdps():
        u = mp.log(v) / mp.log(ctx.q)
        k = int(mp.ceil(u))
        if ctx.qpow(k) < v < ctx.qpow(k - 1):
            return k
        return None


def _classify(ctx: QContext, a: mpc, b: mpc, tp: mpf, tm: mpf) -> Tuple[str, Optional[int]]:
    eps_gate = ctx.eps * mpf(10) ** 6
    a_real = abs(mp.im(a)) <= abs(a) * eps_gate
    b_real = abs(mp.im(b)) <= abs(b) * eps_gate
    if tm != -1:
        return "none", None
    if not a_real and abs(a - mp.conj(b)) <= abs(a) * eps_gate:
        return "i", None
    if not (a_real and b_real):
        return "none", None
    ar, br = mp.re(a), mp.re(b)
    if 0 < ar < 1 and 0 < br < 1:
        return "ii", None
    if ar > 0 and br > 0:
        ka, kb = _window_index(ctx, ar), _window_index(ctx, br)
        if ka is not None and ka == kb and ka <= 0:
            return "iii", ka
    if ar < 0 and br < 0:
        ka, kb = _window_index(ctx, -ar * tp), _window_index(ctx, -br * tp)
        if ka is not None and ka == kb:
            return "iv", ka
    return "none", None


def classify_positivity(p: Params) -> Tuple[str, Optional[int]]:
    """Positivity case of the t_minus = -1 measure, with the window witness."""
    return p.positivity_case, p.k0_witness


# ---------------------------------------------------------------------------
# weight
# ---------------------------------------------------------------------------

def _xval(p: Params, x) -> mpc:
    return x.value() if isinstance(x, LatticePoint) else to_mpc(x)


def weight_w(p: Params, x) -> ScaledValue:
    """w(x) = (-qx;q)_inf / ((-ax;q)_inf (-bx;q)_inf)."""
    ctx = p.ctx
    with ctx.workdps():
        xv = _xval(p, x)
        for arg, label in ((-p.a * xv, "-ax"), (-p.b * xv, "-bx")):
            if ctx.neg_q_power_index(arg) is not None:
                raise DomainError(f"weight pole: {label} in q^(-N) at x = {xv}")
        num = qpoch_infinite(ctx, -ctx.q * xv)
        den = qpoch_infinite(ctx, -p.a * xv) * qpoch_infinite(ctx, -p.b * xv)
        return num / den


def weight_w_extra(p: Params, x) -> ScaledValue:
    """Finite-moment weight (-qx,-cx;q)_inf / ((-ax,-bx;q)_inf); needs c."""
    if p.c is None:
        raise DomainError("finite-moment weight needs the c parameter")
    ctx = p.ctx
    with ctx.workdps():
        xv = _xval(p, x)
        return weight_w(p, xv) * qpoch_infinite(ctx, -p.c * xv)


# ---------------------------------------------------------------------------
# polynomial families
# ---------------------------------------------------------------------------

def poly_m(p: Params, n: int, x) -> ScaledValue:
    """m_n(x;a,b;q) = 2phi1(q^-n, -bx; b; q, a q^n) / (a;q)_n (terminating)."""
    ctx = p.ctx
    if n < 0:
        raise DomainError("polynomial degree must be >= 0")
    with ctx.workdps():
        xv = _xval(p, x)
        an = qpoch(ctx, p.a, n)
        if an.is_zero:
            raise DomainError("(a;q)_n vanishes: a in q^(-{0..n-1})")
        s = rphi(ctx, [ctx.qpow(-n), -p.b * xv], [p.b], p.a * ctx.qpow(n))
        return s / an


def poly_p(p: Params, n: int, x) -> ScaledValue:
    """P_n(x;a,b,c;q) = b^-n (b, qb/c;q)_n 3phi2(q^-n, a b q^n / c, -bx; b, qb/c; q, q).

    Symmetric in a and b; orthogonal for the finite-moment weight while
    |c/ab| < q^(n+m).
    """
    ctx = p.ctx
    if p.c is None:
        raise DomainError("finite family needs the c parameter")
    if n < 0:
        raise DomainError("polynomial degree must be >= 0")
    with ctx.workdps():
        xv = _xval(p, x)
        pre = qpoch(ctx, p.b, n) * qpoch(ctx, ctx.q * p.b / p.c, n)
        if pre.is_zero:
            raise DomainError("degenerate normalization: (b, qb/c;q)_n = 0")
        s = rphi(ctx, [ctx.qpow(-n), p.a * p.b * ctx.qpow(n) / p.c, -p.b * xv],
                 [p.b, ctx.q * p.b / p.c], ctx.q)
        return ScaledValue(ctx, mp.power(p.b, -n)) * pre * s


def poly_p_norm(p: Params, n: int) -> ScaledValue:
    """Squared-norm factor H_n(a,b,c) of the finite family.

    H_n = (-c)^-n q^{n(n+1)/2} (abq^n/c;q)_n (q,a,b,aq/c,bq/c;q)_n / (abq/c;q)_{2n}.
    """
    ctx = p.ctx
    if p.c is None:
        raise DomainError("finite family needs the c parameter")
    with ctx.workdps():
        a, b, c, q = p.a, p.b, p.c, ctx.q
        num = qpoch(ctx, a * b * ctx.qpow(n) / c, n) * qpoch_product(
            ctx, [q, a, b, a * q / c, b * q / c], n)
        den = qpoch(ctx, a * b * q / c, 2 * n)
        pre = ScaledValue(ctx, mp.power(-c, -n), (n * (n + 1)) // 2)
        return pre * num / den


def qmeixner_M(ctx: QContext, n: int, x, b, c) -> ScaledValue:
    """Relabeled classical polynomial M_n(x;b,c;q) = 2phi1(q^-n, x; bq; q, -q^{n+1}/c)."""
    if n < 0:
        raise DomainError("polynomial degree must be >= 0")
    with ctx.workdps():
        return rphi(ctx, [ctx.qpow(-n), to_mpc(x)], [to_mpc(b) * ctx.q],
                    -ctx.qpow(n + 1) / to_mpc(c))


def poly_m_norm(p: Params, n: int) -> ScaledValue:
    """h_n(a,b) = q^-n (q;q)_n / ((a;q)_n (b;q)_n)."""
    ctx = p.ctx
    with ctx.workdps():
        num = qpoch(ctx, ctx.q, n)
        den = qpoch(ctx, p.a, n) * qpoch(ctx, p.b, n)
        return ScaledValue(ctx, num.value, -n) / den


# ---------------------------------------------------------------------------
# closed-form q-integral constants
# ---------------------------------------------------------------------------

def moment_integral(p: Params, with_c: bool = False, t_minus_is_neg1: bool = None) -> ScaledValue:
    """Closed form of the total-mass q-integral of the weight.

    with_c=False gives I(a,b;t_-,t_+) (all moments finite); with_c=True
    gives I(a,b,c;t_-,t_+) (finitely many moments, needs |c/ab| < 1).  When
    t_minus == -1 the equivalent reduced expression is used.
    """
    ctx = p.ctx
    with ctx.workdps():
        a, b, q, tp, tm = p.a, p.b, ctx.q, p.t_plus, p.t_minus
        if with_c:
            if p.c is None:
                raise DomainError("I(a,b,c;..) needs the c parameter")
            c = p.c
            if not abs(c / (a * b)) < 1:
                raise DomainError("closed form needs |c/ab| < 1")
            head = qpoch_product(ctx, [q, c / a, c / b]) / qpoch_product(ctx, [a, b, c / (a * b)])
        else:
            head = qpoch(ctx, q) / (qpoch(ctx, a) * qpoch(ctx, b))
        reduced = (tm == -1) if t_minus_is_neg1 is None else t_minus_is_neg1
        if reduced:
            th = theta_product(ctx, [-a * b * tp, -1 / tp]) / theta_product(ctx, [-a * tp, -b * tp])
            return ScaledValue(ctx, (1 - q) * tp) * head * th
        th_num = theta_product(ctx, [a * b * tm * tp, tm / tp, a, b])
        th_den = theta_product(ctx, [-a * tp, -a * tm, -b * tp, -b * tm])
        return ScaledValue(ctx, (1 - q) * tp) * head * th_num / th_den


# ---------------------------------------------------------------------------
# q-Meixner functions: phi
# ---------------------------------------------------------------------------

PHI_ROUTES = ("def_2phi2", "heine_2phi1", "heine_2phi1_gamma", "jackson_2phi2A", "auto")


def mu(p: Params, gamma) -> mpc:
    """Eigenvalue map mu(gamma) = -ab (1 + gamma)."""
    with p.ctx.workdps():
        return -p.a * p.b * (1 + to_mpc(gamma))


def gamma_of_mu(p: Params, mu_value) -> mpc:
    """Inverse map gamma = -(mu/ab + 1), so mu(gamma_of_mu(m)) = m."""
    with p.ctx.workdps():
        return -(to_mpc(mu_value) / (p.a * p.b) + 1)


def phi(p: Params, gamma, x, route: str = "auto", tol=None,
        _crosscheck: bool = True) -> ScaledValue:
    """Eigenfunction phi_gamma(x), entire in both x and gamma.

    Routes:
      def_2phi2          2phi2(-1/x,-1/gamma; a,b; q, ab gamma x)     (always valid)
      heine_2phi1        needs |ax| < 1 or x in -q^N (terminating)
      heine_2phi1_gamma  needs |gamma| > 1
      jackson_2phi2A     regularized, always valid
      auto               terminating route if available, else the
                         defining series, cross-checked against the
                         regularized route
    """
    ctx = p.ctx
    with ctx.workdps():
        g = to_mpc(gamma)
        xv = _xval(p, x)
        if route == "auto":
            n = ctx.neg_q_power_index(-xv)
            if n is not None:
                return _phi_heine(p, g, xv, tol)
            ng = ctx.neg_q_power_index(-g)
            if ng is not None:
                return _phi_heine(p, xv, g, tol)  # self-duality, terminating in gamma
            val, est = _phi_def(p, g, xv, tol)
            if _crosscheck:
                chk, _ = _phi_jackson(p, g, xv, tol)
                _route_guard(ctx, val, chk, "phi(def_2phi2 vs jackson_2phi2A)")
            return val
        if route == "def_2phi2":
            return _phi_def(p, g, xv, tol)[0]
        if route == "heine_2phi1":
            return _phi_heine(p, g, xv, tol)
        if route == "heine_2phi1_gamma":
            if not abs(g) > 1:
                raise DomainError("route heine_2phi1_gamma needs |gamma| > 1")
            return _phi_heine_gamma(p, g, xv, tol)
        if route == "jackson_2phi2A":
            return _phi_jackson(p, g, xv, tol)[0]
        raise DomainError(f"unknown phi route {route!r}")


def _route_guard(ctx, val: ScaledValue, chk: ScaledValue, what: str) -> None:
    with ctx.workdps():
        ref = max(val.magnitude(), chk.magnitude())
        if ref == 0:
            return
        gap = (val - chk).magnitude() / ref
        if gap > ctx.eps * mpf(10) ** 8:
            warnings.warn(f"{what} cross-check gap {mp.nstr(gap, 3)}",
                          ConditioningWarning, stacklevel=3)


def _phi_def(p: Params, g, xv, tol) -> tuple[ScaledValue, ErrorEstimate]:
    ctx = p.ctx
    if xv == 0 or g == 0:
        raise DomainError("defining series needs x != 0 and gamma != 0; use phi_limit0")
    spec = SeriesSpec.make([-1 / xv, -1 / g], [p.a, p.b], p.a * p.b * g * xv)
    return rphis(ctx, spec, tol=tol)


def _phi_heine(p: Params, g, xv, tol) -> ScaledValue:
    ctx = p.ctx
    terminating = ctx.neg_q_power_index(-xv) is not None
    if not terminating and not abs(p.a * xv) < 1:
        raise DomainError("route heine_2phi1 needs |ax| < 1 or x in -q^N")
    pre = qpoch_infinite(ctx, -p.a * xv) / qpoch_infinite(ctx, p.a)
    return pre * rphi(ctx, [-1 / xv, -p.b * g], [p.b], -p.a * xv, tol=tol)


def _phi_heine_gamma(p: Params, g, xv, tol) -> ScaledValue:
    ctx = p.ctx
    pre = qpoch_infinite(ctx, -1 / g) / (qpoch_infinite(ctx, p.a) * qpoch_infinite(ctx, p.b))
    s, _ = rphis_fused(ctx, [-p.a * g, -p.b * g], [], p.a * p.b * g * xv, -1 / g, tol=tol)
    return pre * s


def _phi_jackson(p: Params, g, xv, tol) -> tuple[ScaledValue, ErrorEstimate]:
    ctx = p.ctx
    s, est = rphis_fused(ctx, [-p.b * g, -p.b * xv], [p.b], p.a * p.b * g * xv, p.a, tol=tol)
    return s / qpoch_infinite(ctx, p.a), est


def phi_limit0(p: Params, gamma) -> ScaledValue:
    """lim_{x->0} phi_gamma(x) = 1phi1(-b gamma; b; q, a) / (a;q)_inf."""
    ctx = p.ctx
    with ctx.workdps():
        g = to_mpc(gamma)
        return rphi(ctx, [-p.b * g], [p.b], p.a) / qpoch_infinite(ctx, p.a)


# ---------------------------------------------------------------------------
# second solution: psi
# ---------------------------------------------------------------------------

def psi(p: Params, gamma, x, route: str = "auto", tol=None) -> ScaledValue:
    """Second eigensolution psi_gamma(x).

    Primary route: (qa/b, -bx;q)_inf / ((-qx, -q/(b gamma), -q gamma;q)_inf)
    times the regularized series sum_k (-a gamma, -ax;q)_k / ((q, aq/b;q)_k)
    (a q^{1+k} gamma x;q)_inf (-1)^k q^{k(k-1)/2} (q^2/b)^k.  Cross route
    (valid |b gamma| > q): 2phi1(-a gamma, -q gamma; aq gamma x; q, -q/(b gamma))
    with prefactor (aq gamma x, -bx;q)_inf/((-qx,-q gamma;q)_inf), fused the
    same way over its lattice-sensitive lower parameter.

    Simple poles: x in -q^(-N-1); gamma in -q^(-N-1) and -q^(N+1)/b.
    """
    ctx = p.ctx
    with ctx.workdps():
        g = to_mpc(gamma)
        xv = _xval(p, x)
        for val, fam in ((-ctx.q * xv, "x:-q^(-N-1)"),
                         (-ctx.q * g, "gamma:-q^(-N-1)"),
                         (-ctx.q / (p.b * g), "gamma:-q^(N+1)/b")):
            if ctx.neg_q_power_index(val) is not None:
                raise PoleError(f"psi pole hit ({fam})", family=fam)
        if ctx.neg_q_power_index(ctx.q * p.a / p.b) is not None:
            raise DomainError("degenerate parameters: qa/b in q^(-N)")
        if route in ("auto", "reg_2phi2"):
            pre = (qpoch_infinite(ctx, ctx.q * p.a / p.b) * qpoch_infinite(ctx, -p.b * xv)
                   / (qpoch_infinite(ctx, -ctx.q * xv)
                      * qpoch_infinite(ctx, -ctx.q / (p.b * g))
                      * qpoch_infinite(ctx, -ctx.q * g)))
            s, _ = rphis_fused(ctx, [-p.a * g, -p.a * xv], [p.a * ctx.q / p.b],
                               p.a * ctx.q * g * xv, ctx.qpow(2) / p.b, tol=tol)
            return pre * s
        if route == "heine_2phi1":
            if not abs(p.b * g) > ctx.q:
                raise DomainError("psi 2phi1 route needs |b gamma| > q")
            pre = (qpoch_infinite(ctx, -p.b * xv)
                   / (qpoch_infinite(ctx, -ctx.q * xv) * qpoch_infinite(ctx, -ctx.q * g)))
            s, _ = rphis_fused(ctx, [-p.a * g, -ctx.q * g], [],
                               p.a * ctx.q * g * xv, -ctx.q / (p.b * g), tol=tol)
            return pre * s
        raise DomainError(f"unknown psi route {route!r}")


# ---------------------------------------------------------------------------
# asymptotic solutions: Phi (plus/minus), terminating case, dagger partner
# ---------------------------------------------------------------------------

PHI_ASYM_ROUTES = ("combo", "series_2phi1", "series_2phi2", "terminating", "auto")


def connection_c(p: Params, gamma, side: str = "plus") -> ScaledValue:
    """Connection coefficient c_pm(gamma) = theta(-qt, -q gamma, ab t gamma)
    / theta(aq t gamma, -bt) with t = t_plus or t_minus."""
    ctx = p.ctx
    t = p.t_plus if side == "plus" else p.t_minus
    with ctx.workdps():
        g = to_mpc(gamma)
        den = theta_product(ctx, [p.a * ctx.q * t * g, -p.b * t])
        if den.is_zero:
            raise DomainError("connection coefficient has a vanishing theta denominator")
        num = theta_product(ctx, [-ctx.q * t, -ctx.q * g, p.a * p.b * t * g])
        return num / den


def _lattice_side(p: Params, x) -> Optional[str]:
    """Which t-branch (if any) the point x lies on."""
    if isinstance(x, LatticePoint):
        if x.branch == BRANCH_POS:
            return "plus"
        if x.branch == BRANCH_MINUS:
            return "minus"
        if x.branch == BRANCH_NEG:
            return None
    ctx = p.ctx
    xv = _xval(p, x)
    if ctx.q_ray_index(xv / p.t_plus) is not None:
        return "plus"
    if ctx.q_ray_index(xv / p.t_minus) is not None:
        return "minus"
    return None


def phi_asym(p: Params, gamma, x, side: str = "plus", route: str = "auto",
             tol=None) -> ScaledValue:
    """Asymptotically small solution Phi_gamma^{side}(x).

    combo:         (a,b;q)_inf phi_gamma(x) - c_side(gamma) psi_gamma(x)
                   (any x off -q^(-N-1); forbidden within one window of the
                   gamma poles that c(gamma) cancels analytically)
    series_2phi1:  lattice route, needs |gamma| > 1 and x on the side branch
    series_2phi2:  lattice route, regularized, x on the side branch
    terminating:   gamma = -q^(1+n)/a, valid on the whole real lattice
    auto:          terminating if detected, else a lattice series when x is
                   on the side branch (2phi2 form), else combo
    """
    ctx = p.ctx
    with ctx.workdps():
        g = to_mpc(gamma)
        xv = _xval(p, x)
        nterm = ctx.neg_q_power_index(-p.a * g / ctx.q)   # gamma = -q^(1+n)/a
        if route == "auto":
            if nterm is not None:
                return phi_asym_terminating(p, nterm, xv, tol=tol)
            on_side = _lattice_side(p, x)
            if on_side == side:
                return _phi_asym_2phi2(p, g, xv, side, tol)
            return _phi_asym_combo(p, g, xv, side, tol)
        if route == "combo":
            return _phi_asym_combo(p, g, xv, side, tol)
        if route == "series_2phi1":
            if not abs(g) > 1:
                raise DomainError("Phi series_2phi1 route needs |gamma| > 1")
            return _phi_asym_2phi1(p, g, xv, side, tol)
        if route == "series_2phi2":
            return _phi_asym_2phi2(p, g, xv, side, tol)
        if route == "terminating":
            if nterm is None:
                raise DomainError("terminating route needs gamma in -(q/a) q^N")
            return phi_asym_terminating(p, nterm, xv, tol=tol)
        raise DomainError(f"unknown Phi route {route!r}")


def _phi_asym_combo(p: Params, g, xv, side, tol) -> ScaledValue:
    ctx = p.ctx
    # near the gamma lattice poles of psi the 0*inf cancellation against
    # c(gamma) is analytic, not numeric: the series routes are mandatory
    if ctx.neg_q_power_index(-ctx.q * g) is not None:
        raise PoleError("combo route at a cancelled psi pole; use a series route",
                        family="gamma:-q^(-N-1)")
    ab_inf = qpoch_infinite(ctx, p.a) * qpoch_infinite(ctx, p.b)
    return ab_inf * phi(p, g, xv, route="def_2phi2", tol=tol) \
        - connection_c(p, g, side) * psi(p, g, xv, tol=tol)


def _phi_asym_prefchecks(p: Params, g, xv) -> None:
    ctx = p.ctx
    for val, label in ((-ctx.q / (p.b * xv), "-q/bx"), (-ctx.q / (p.b * g), "-q/b*gamma")):
        if ctx.neg_q_power_index(val) is not None:
            raise DomainError(f"Phi series route: vanishing factor ({label};q)_inf")


def _phi_asym_2phi1(p: Params, g, xv, side, tol) -> ScaledValue:
    ctx = p.ctx
    _phi_asym_prefchecks(p, g, xv)
    th = theta(ctx, p.a * g * xv)
    if th.is_zero:
        raise DomainError("Phi series route: theta(a gamma x) = 0")
    pre = (qpoch_product(ctx, [-p.a * xv, -p.a * g, -1 / g]) * theta(ctx, p.b)
           / (qpoch_product(ctx, [-ctx.q / (p.b * xv), -ctx.q / (p.b * g)]) * th))
    s, _ = rphis_fused(ctx, [-ctx.q / (p.a * xv), -ctx.q / (p.b * xv)], [],
                       ctx.qpow(2) / (p.a * p.b * g * xv), -1 / g, tol=tol)
    return pre * s


def _phi_asym_2phi2(p: Params, g, xv, side, tol) -> ScaledValue:
    ctx = p.ctx
    _phi_asym_prefchecks(p, g, xv)
    if ctx.neg_q_power_index(p.a * g * xv) is not None:
        raise DomainError("Phi series route: (a gamma x;q)_inf vanishes")
    pre = (qpoch_product(ctx, [-p.a * xv, -p.a * g]) * theta(ctx, p.b)
           / (qpoch_product(ctx, [-ctx.q / (p.b * xv), -ctx.q / (p.b * g), p.a * g * xv])))
    s, _ = rphis_fused(ctx, [-ctx.q / (p.a * xv), -ctx.q / (p.a * g)],
                       [ctx.q / (p.a * g * xv)],
                       ctx.qpow(2) / (p.a * p.b * g * xv),
                       ctx.q / (p.b * g * xv), tol=tol)
    return pre * s


def phi_asym_terminating(p: Params, n: int, x, tol=None) -> ScaledValue:
    """Phi at gamma = -q^(1+n)/a as a terminating series, valid on the
    whole mixed lattice:

    (-ax, q^{n+1};q)_inf theta(b) / ((-qx, a/b;q)_inf)
        * 2phi1(q^-n, -bx; qb/a; q, q^{n+2}/a).
    """
    ctx = p.ctx
    with ctx.workdps():
        xv = _xval(p, x)
        if ctx.neg_q_power_index(p.a / p.b) is not None:
            raise DomainError("terminating route needs a/b outside q^(-N)")
        if ctx.neg_q_power_index(-ctx.q * xv) is not None:
            raise PoleError("terminating route pole at x in -q^(-N-1)", family="x:-q^(-N-1)")
        pre = (qpoch_infinite(ctx, -p.a * xv) * qpoch_infinite(ctx, ctx.qpow(n + 1))
               * theta(ctx, p.b)
               / (qpoch_infinite(ctx, -ctx.q * xv) * qpoch_infinite(ctx, p.a / p.b)))
        s = rphi(ctx, [ctx.qpow(-n), -p.b * xv], [ctx.q * p.b / p.a],
                 ctx.qpow(n + 2) / p.a, tol=tol)
        return pre * s


def phi_dagger(p: Params, gamma, x, route: str = "swap", tol=None) -> ScaledValue:
    """Phi^dagger_gamma(x;a,b;q) = Phi_gamma(x;b,a;q).

    route="swap" evaluates through the a<->b swapped parameter bundle;
    route="kfactor" uses the q-periodic multiplier K(x) =
    theta(-bx,-b gamma,a,a gamma x)/theta(-ax,-a gamma,b,b gamma x) applied
    to Phi_gamma(x;a,b;q) (both agree on the t_pm lattices).
    """
    ctx = p.ctx
    with ctx.workdps():
        g = to_mpc(gamma)
        xv = _xval(p, x)
        if route == "swap":
            side = _lattice_side(p, x) or "plus"
            return phi_asym(p.with_swapped_ab(), g,
                            x if isinstance(x, LatticePoint) else xv,
                            side=side, route="auto", tol=tol)
        if route == "kfactor":
            K = phi_dagger_ratio(p, g, xv)
            side = _lattice_side(p, x) or "plus"
            return K * phi_asym(p, g, x if isinstance(x, LatticePoint) else xv,
                                side=side, route="auto", tol=tol)
        raise DomainError(f"unknown phi_dagger route {route!r}")


def phi_dagger_ratio(p: Params, gamma, x) -> ScaledValue:
    """q-periodic multiplier K(x) relating Phi^dagger to Phi; constant on
    each t_pm lattice, exposed for the cross-checks that use K(t_pm)."""
    ctx = p.ctx
    with ctx.workdps():
        g = to_mpc(gamma)
        xv = _xval(p, x)
        den = theta_product(ctx, [-p.a * xv, -p.a * g, p.b, p.b * g * xv])
        if den.is_zero:
            raise DomainError("K(x) has a vanishing theta denominator")
        num = theta_product(ctx, [-p.b * xv, -p.b * g, p.a, p.a * g * xv])
        return num / den


def _e_qperiodic(p: Params, gamma, x) -> ScaledValue:
    # internal: q-periodic connection function whose lattice restriction is c(gamma)
    ctx = p.ctx
    with ctx.workdps():
        g = to_mpc(gamma)
        xv = _xval(p, x)
        num = theta_product(ctx, [-ctx.q * g, -ctx.q * xv, p.a * p.b * g * xv])
        den = theta_product(ctx, [p.a * ctx.q * g * xv, -p.b * xv])
        return num / den


# ---------------------------------------------------------------------------
# spectral points and grid functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralPoint:
    """Point of the discrete spectrum parameter set.

    kind "neg":  gamma = -q^n               (polynomial family)
    kind "pos":  gamma = q^k / (ab t_plus)  (doubly infinite family)
    kind "pos5": gamma = -q^n / (ab t_- t_+) (indefinite-lattice family)
    """

    gamma: mpc
    kind: str
    index: int

    @classmethod
    def neg(cls, p: Params, n: int) -> "SpectralPoint":
        if n < 0:
            raise DomainError("spectral index n must be >= 0 on the -q^N ray")
        with p.ctx.workdps():
            return cls(mpc(-p.ctx.qpow(n)), "neg", n)

    @classmethod
    def pos(cls, p: Params, k: int) -> "SpectralPoint":
        with p.ctx.workdps():
            return cls(p.ctx.qpow(k) / (p.a * p.b * p.t_plus), "pos", k)

    @classmethod
    def pos5(cls, p: Params, n: int) -> "SpectralPoint":
        with p.ctx.workdps():
            return cls(-p.ctx.qpow(n) / (p.a * p.b * p.t_minus * p.t_plus), "pos5", n)


@dataclass
class GridFunction:
    """Values of one family over a window of the mixed lattice.

    Windows are inclusive (k_lo, k_hi) ranges per branch; every stored point
    lies inside its declared window.  Look-ups outside raise WindowError.
    """

    p: Params
    family: str
    gamma: Optional[mpc]
    windows: Dict[str, Tuple[int, int]]
    values: Dict[Tuple[str, int], mpc] = field(default_factory=dict)
    point_error: Dict[Tuple[str, int], float] = field(default_factory=dict)

    def __call__(self, pt: LatticePoint) -> mpc:
        key = (pt.branch, pt.k)
        try:
            return self.values[key]
        except KeyError:
            raise WindowError(
                f"{self.family}: point {key} outside evaluated window {self.windows}")

    def has(self, pt: LatticePoint) -> bool:
        return (pt.branch, pt.k) in self.values

    def conjugated(self) -> "GridFunction":
        out = GridFunction(self.p, self.family + "~", self.gamma, dict(self.windows))
        with self.p.ctx.workdps():
            out.values = {k: mp.conj(v) for k, v in self.values.items()}
        return out

    def points(self):
        for (branch, k) in sorted(self.values):
            if branch == BRANCH_NEG:
                yield self.p.neg(k)
            elif branch == BRANCH_POS:
                yield self.p.pos(k)
            else:
                yield self.p.minus(k)


def build_grid(p: Params, evaluator, windows: Dict[str, Tuple[int, int]],
               family: str = "custom", gamma=None) -> GridFunction:
    """Evaluate ``evaluator(pt) -> value`` over the requested windows."""
    gf = GridFunction(p, family, None if gamma is None else to_mpc(gamma), dict(windows))
    with p.ctx.workdps():
        for branch, (k_lo, k_hi) in windows.items():
            maker = {BRANCH_NEG: p.neg, BRANCH_POS: p.pos, BRANCH_MINUS: p.minus}[branch]
            for k in range(k_lo, k_hi + 1):
                gf.values[(branch, k)] = to_mpc(evaluator(maker(k)))
    return gf


def phi_grid(p: Params, gamma, windows: Dict[str, Tuple[int, int]],
             far_switch: int = -5, tol=None) -> GridFunction:
    """phi_gamma over a lattice window, spectral-aware.

    At spectral gamma (where the connection coefficient vanishes exactly)
    the defining series cancels catastrophically for t q^k with k << 0, so
    those points are evaluated through Phi/(a,b;q)_inf instead; the two
    routes are cross-checked at the switch boundary.
    """
    ctx = p.ctx
    with ctx.workdps():
        g = to_mpc(gamma)
        is_poly = ctx.neg_q_power_index(-g) is not None
        spectral_pos = (not is_poly) and connection_c(p, g, "plus").is_zero
        ab_inf = qpoch_infinite(ctx, p.a) * qpoch_infinite(ctx, p.b)

        def evaluator(pt: LatticePoint):
            if is_poly:
                return _phi_heine(p, pt.value(), g, tol).value  # dual terminating
            if spectral_pos and pt.branch in (BRANCH_POS, BRANCH_MINUS) and pt.k < far_switch:
                side = "plus" if pt.branch == BRANCH_POS else "minus"
                return (_phi_asym_2phi2(p, g, pt.value(), side, tol) / ab_inf).value
            return _phi_def(p, g, pt.value(), tol)[0].value

        gf = build_grid(p, evaluator, windows, family="phi", gamma=g)
        if spectral_pos and BRANCH_POS in windows:
            k_lo, k_hi = windows[BRANCH_POS]
            k_chk = far_switch  # first point still on the defining route
            if k_lo <= k_chk <= k_hi:
                via_def = gf.values[(BRANCH_POS, k_chk)]
                via_asym = (_phi_asym_2phi2(p, g, p.pos(k_chk).value(), "plus", tol)
                            / ab_inf).value
                _route_guard(ctx, ScaledValue(ctx, via_def), ScaledValue(ctx, via_asym),
                             "phi spectral grid switch")
        return gf


def weight_grid(p: Params, windows: Dict[str, Tuple[int, int]]) -> GridFunction:
    return build_grid(p, lambda pt: weight_w(p, pt).value, windows, family="w")
