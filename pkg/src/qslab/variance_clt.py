"""Asymptotic variance, explicit constant sequences, and exact conditional
moment / characteristic-function oracles for additive functionals.

sigma2_poisson solves L_Q g = -f_centered with beta(g) = 0 (one bordered
linear solve) and returns sigma^2 = 2 beta(f_centered * g); the independent
cross-check integrates the stationary autocovariance by composite Simpson
with a spectral tail bound.  exact_conditional_moments reads the moments
m_k(t) = E_mu[(int_0^t f)^k 1_{survival}] off a single matrix exponential of
a block upper-bidiagonal augmented generator, and the characteristic-function
oracles do the same with a complex diagonal perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from math import factorial
from typing import Optional, Union

import numpy as np
from scipy.linalg import expm

from .chain_model import AbsorbedChain
from .errors import OverflowGuard, SingularSolve, ValidationError
from .qprocess import QProcessChain
from .spectral import ErgodicityCertificate

K_MAX = 8
_SUP_ENUM_LIMIT = 12  # exact vertex enumeration of the |g| <= psi polytope


@dataclass(frozen=True)
class AdditiveObservable:
    """Bounded-by-one observable with its centered version under beta."""

    f: np.ndarray
    f_centered: np.ndarray
    beta_f: float

    def __post_init__(self):
        self.f.setflags(write=False)
        self.f_centered.setflags(write=False)


def make_observable(qproc: QProcessChain, f) -> AdditiveObservable:
    f = np.asarray(f, dtype=float)
    if f.shape != (qproc.n,):
        raise ValidationError(f"observable must have length {qproc.n}")
    if np.max(np.abs(f)) > 1.0 + 1e-12:
        raise ValidationError("observable must satisfy max|f| <= 1")
    bf = float(qproc.beta @ f)
    return AdditiveObservable(f=f, f_centered=f - bf, beta_f=bf)


# ---------------------------------------------------------------------------
# sigma^2

@dataclass(frozen=True)
class VarianceResult:
    sigma2: float
    g: np.ndarray                # Poisson solution, beta(g) = 0
    quadrature_value: float
    horizon: float
    step: float
    error_bound: float           # spectral tail + a-priori Simpson term


def sigma2_poisson(qproc: QProcessChain, f, horizon: Optional[float] = None,
                   step: Optional[float] = None,
                   with_quadrature: bool = True) -> VarianceResult:
    """Green-function route: solve the Poisson equation and fold with beta."""
    obs = f if isinstance(f, AdditiveObservable) else make_observable(qproc, f)
    n = qproc.n
    ft = obs.f_centered
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = qproc.q_generator
    A[:n, n] = 1.0
    A[n, :n] = qproc.beta
    rhs = np.concatenate([-ft, [0.0]])
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSolve(f"bordered Poisson system is singular: {exc}") from exc
    resid = np.abs(A @ sol - rhs).max()
    if resid > 1e-8 * max(1.0, np.abs(rhs).max()):
        raise SingularSolve(f"Poisson solve residual {resid} too large")
    g = sol[:n]
    sigma2 = float(2.0 * (qproc.beta * ft) @ g)
    if sigma2 < -1e-12:
        raise SingularSolve(f"negative variance {sigma2} from Poisson solve")
    sigma2 = max(sigma2, 0.0)
    if with_quadrature:
        quad, h, H, bound = _quadrature(qproc, ft, horizon, step)
    else:
        quad, h, H, bound = float("nan"), float("nan"), float("nan"), float("nan")
    return VarianceResult(sigma2=sigma2, g=g, quadrature_value=quad,
                          horizon=H, step=h, error_bound=bound)


def sigma2_quadrature(qproc: QProcessChain, f, horizon: Optional[float] = None,
                      step: Optional[float] = None):
    """Composite-Simpson value of 2 * int_0^H Cov_beta(f(X_0), f(X_s)) ds
    plus its recorded error bound (truncated tail + quadrature-rule term)."""
    obs = f if isinstance(f, AdditiveObservable) else make_observable(qproc, f)
    value, _, _, bound = _quadrature(qproc, obs.f_centered, horizon, step)
    return value, bound


def _quadrature(qproc, ft, horizon, step):
    gamma = qproc.gamma
    H = 20.0 / gamma if horizon is None else float(horizon)
    if H < 10.0 / gamma:
        raise ValidationError(f"horizon must be at least 10/gamma = {10.0 / gamma:.3g}")
    h_user = 0.005 / gamma if step is None else float(step)
    if h_user > 0.01 / gamma:
        raise ValidationError(f"step must be at most 0.01/gamma = {0.01 / gamma:.3g}")
    LQ = qproc.q_generator
    bft = qproc.beta * ft
    # spectral amplitudes of the autocovariance: Cov(s) = sum_j c_j e^{w_j s}
    w, V = np.linalg.eig(LQ)
    amps = []
    try:
        Vi = np.linalg.inv(V)
        for j in range(len(w)):
            if abs(w[j].real) < 1e-12:
                continue  # zero mode carries beta(ft)^2 = 0
            c = (bft @ V[:, j]) * (Vi[j] @ ft)
            amps.append((abs(c), w[j]))
    except np.linalg.LinAlgError:
        amps = []
    if amps:
        tail = 2.0 * sum(c * np.exp(wj.real * H) / abs(wj.real) for c, wj in amps)
        s4 = sum(c * abs(wj) ** 4 / abs(wj.real) for c, wj in amps)
        # refine the step until the a-priori Simpson error sits well under the tail
        h = min(h_user, (180.0 * 0.1 * max(tail, 1e-14) / max(s4, 1e-14)) ** 0.25)
    else:
        # non-diagonalizable corner: fall back to the coarse geometric bound
        cov0 = abs(float(bft @ ft))
        tail = 2.0 * cov0 * np.exp(-gamma * H) / gamma
        h = h_user
    M = int(np.ceil(H / h / 2.0) * 2)
    h = H / M
    Eh = expm(h * LQ)
    weights = np.ones(M + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    v = ft.copy()
    acc = 0.0
    for j in range(M + 1):
        acc += weights[j] * float(bft @ v)
        if j < M:
            v = Eh @ v
    value = 2.0 * acc * h / 3.0
    bound = float(tail)
    if amps:
        bound += (h ** 4 / 180.0) * float(s4)  # worst-case phase alignment
    return float(value), float(h), float(H), bound


# ---------------------------------------------------------------------------
# explicit constant sequences

@dataclass(frozen=True)
class ConstantsTable:
    C: float
    gamma: float
    c: float
    beta_psi: float
    C1: float
    D: np.ndarray    # D[k-1] = D_k, k = 1..K
    Ck: np.ndarray   # Ck[k-1] = C_k, k = 1..K

    def even_moment_bound(self, k: int, mu_psi: float, t: float) -> float:
        """(2k)! D_k C_1 k/(k-1)! * mu(psi)/t."""
        return (factorial(2 * k) * self.D[k - 1] * self.C1 * k
                / factorial(k - 1) * mu_psi / t)

    def odd_moment_coefficient(self, k: int) -> float:
        """Prefactor scale for m_{2k+1}/t^{k+1/2} <= coeff * mu(psi)/sqrt(t);
        the k = 0 case uses C/(c gamma) since (k-1)! is undefined there."""
        if k == 0:
            return self.C / (self.c * self.gamma)
        return factorial(2 * k + 1) * self.D[k - 1] * self.C1 * k / factorial(k - 1)


def constants_table(cert: ErgodicityCertificate, qproc: QProcessChain,
                    K: int = K_MAX) -> ConstantsTable:
    """Evaluate the explicit sequences in exact rational arithmetic.

    D_1 = max(C^2/c, C beta(psi)/(c^2 gamma)),
    D_k = (r^{k-1} or 1, whichever is larger) * D_1 with r = (C/gamma)(1 + beta(psi)/c),
    C_1 = 1/gamma + 1/gamma^2,  C_k = C_1/(k-1)! + C_1/(k-2)!  (k >= 2).

    The closed forms are checked against their recursions exactly (Fraction
    arithmetic on the binary float inputs) before the floats are returned.
    """
    if K < 1:
        raise ValidationError("need K >= 1")
    C = Fraction(float(cert.C))
    g = Fraction(float(cert.gamma))
    c = Fraction(float(qproc.c))
    bp = Fraction(float(qproc.beta @ qproc.psi))
    D1 = max(C * C / c, C * bp / (c * c * g))
    r = (C / g) * (1 + bp / c)
    D_closed = [max(r ** (k - 1), Fraction(1)) * D1 for k in range(1, K + 1)]
    D_rec = [D1]
    for k in range(2, K + 1):
        D_rec.append(max(D_rec[-1] * r, D1))
    C1 = 1 / g + 1 / (g * g)
    Ck_closed = [C1] + [C1 / factorial(k - 1) + C1 / factorial(k - 2) for k in range(2, K + 1)]
    Ck_rec = [C1]
    for k in range(2, K + 1):
        Ck_rec.append(Ck_rec[-1] / (k - 1) + C1 / factorial(k - 1))
    for k in range(K):
        if D_closed[k] != D_rec[k]:
            raise SingularSolve(f"D_{k + 1} closed form disagrees with recursion")
        if Ck_closed[k] != Ck_rec[k]:
            raise SingularSolve(f"C_{k + 1} closed form disagrees with recursion")
        if Ck_closed[k] != C1 * (k + 1) / factorial(k):
            raise SingularSolve(f"C_{k + 1} identity C_1 k/(k-1)! fails")
    return ConstantsTable(
        C=float(C), gamma=float(g), c=float(c), beta_psi=float(bp), C1=float(C1),
        D=np.array([float(d) for d in D_closed]),
        Ck=np.array([float(v) for v in Ck_closed]),
    )


# ---------------------------------------------------------------------------
# exact conditional moments and characteristic functions

GeneratorLike = Union[AbsorbedChain, QProcessChain, np.ndarray]


def _generator_of(obj: GeneratorLike) -> np.ndarray:
    if isinstance(obj, AbsorbedChain):
        return obj.sub_generator
    if isinstance(obj, QProcessChain):
        return obj.q_generator
    return np.asarray(obj, dtype=float)


@dataclass(frozen=True)
class MomentValues:
    t: float
    m: np.ndarray           # m[k] = E_mu[(int_0^t f)^k 1_{survival}]
    survival: float
    conditional: np.ndarray  # m[k] / survival


def exact_conditional_moments(gen: GeneratorLike, mu, f, k_max: int,
                              t: float) -> MomentValues:
    """All moments up to k_max from one exponential of the augmented
    generator with diagonal blocks L and superdiagonal blocks k diag(f).

    Passing the absorbed chain gives conditioned-chain moments (divide by
    the survival mass m_0); passing the Q-process gives its plain moments.
    """
    L = _generator_of(gen)
    n = L.shape[0]
    mu = np.asarray(mu, dtype=float)
    f = np.asarray(f, dtype=float)
    if not 0 <= k_max <= K_MAX:
        raise ValidationError(f"k_max must lie in [0, {K_MAX}]")
    fmax = max(1.0, float(np.abs(f).max()))
    if t > 0 and k_max * (np.log(t) + np.log(fmax)) > 700.0:
        raise OverflowGuard(
            f"t^k ||f||^k overflows double precision for k={k_max}, t={t}")
    K = k_max
    A = np.zeros(((K + 1) * n, (K + 1) * n))
    for j in range(K + 1):
        k = K - j
        A[j * n:(j + 1) * n, j * n:(j + 1) * n] = L
        if k >= 1:
            A[j * n:(j + 1) * n, (j + 1) * n:(j + 2) * n] = k * np.diag(f)
    w0 = np.zeros((K + 1) * n)
    w0[K * n:] = 1.0
    w = expm(t * A) @ w0
    m = np.array([mu @ w[(K - k) * n:(K - k + 1) * n] for k in range(K + 1)])
    p = float(m[0])
    if p <= 0:
        raise OverflowGuard(f"survival mass underflowed at t={t}")
    return MomentValues(t=float(t), m=m, survival=p, conditional=m / p)


@dataclass(frozen=True)
class MomentReport:
    k: int
    t_grid: np.ndarray
    values: np.ndarray       # m_{2k}/t^k resp. m_{2k+1}/t^{k+1/2}
    limit: float
    errors: np.ndarray
    fitted_rate: float
    bounds: Optional[np.ndarray] = None
    bounds_ok: bool = True
    prefactor_hat: float = float("nan")


def _fit_rate(ts, errs):
    pos = errs > 0
    if pos.sum() >= 2:
        return float(np.polyfit(np.log(ts[pos]), np.log(errs[pos]), 1)[0])
    return float("nan")


def check_even_moment_limit(gen: GeneratorLike, mu, f, k: int, t_grid,
                            sigma2: float,
                            constants: Optional[ConstantsTable] = None,
                            mu_psi: Optional[float] = None) -> MomentReport:
    """Compare m_{2k}(t)/t^k against (2k)! sigma^{2k} / (k! 2^k) on a grid.

    f must already be centered (the theorems are stated for beta(f) = 0).
    When a constants table and mu(psi) are supplied, each error is also
    checked against the explicit bound.
    """
    if k < 1:
        raise ValidationError("even-moment check needs k >= 1")
    t_grid = np.asarray(t_grid, dtype=float)
    limit = factorial(2 * k) * sigma2 ** k / (factorial(k) * 2 ** k)
    vals, errs = [], []
    for t in t_grid:
        mv = exact_conditional_moments(gen, mu, f, 2 * k, t)
        vals.append(mv.m[2 * k] / t ** k)
        errs.append(abs(vals[-1] - limit))
    vals = np.array(vals)
    errs = np.array(errs)
    bounds = None
    ok = True
    if constants is not None and mu_psi is not None:
        bounds = np.array([constants.even_moment_bound(k, mu_psi, t) for t in t_grid])
        ok = bool(np.all(errs <= bounds))
    return MomentReport(k=k, t_grid=t_grid, values=vals, limit=float(limit),
                        errors=errs, fitted_rate=_fit_rate(t_grid, errs),
                        bounds=bounds, bounds_ok=ok)


def check_odd_moment_decay(qproc: QProcessChain, mu, f, k: int, t_grid) -> MomentReport:
    """Report m_{2k+1}(t)/t^{k+1/2} on the grid with its fitted decay rate
    and the empirical prefactor max_t |value| sqrt(t)/mu(psi) (the theorem
    fixes only the 1/sqrt(t) speed, not the constant)."""
    t_grid = np.asarray(t_grid, dtype=float)
    mu = np.asarray(mu, dtype=float)
    vals = []
    for t in t_grid:
        mv = exact_conditional_moments(qproc, mu, f, 2 * k + 1, t)
        vals.append(mv.m[2 * k + 1] / t ** (k + 0.5))
    vals = np.array(vals)
    errs = np.abs(vals)
    mu_psi = float(mu @ qproc.psi)
    pref = float(np.max(errs * np.sqrt(t_grid)) / mu_psi) if mu_psi > 0 else float("nan")
    return MomentReport(k=k, t_grid=t_grid, values=vals, limit=0.0, errors=errs,
                        fitted_rate=_fit_rate(t_grid, errs), prefactor_hat=pref)


def exact_conditional_charfun(gen: GeneratorLike, mu, f,
                              omega_over_sqrt_t: float, t: float) -> complex:
    """E_mu[e^{i w' int_0^t f(X_s) ds} | survival] with w' = omega/sqrt(t)
    held fixed, via one complex matrix exponential.  For a conservative
    generator the conditioning divisor is 1."""
    if t <= 0:
        raise ValidationError("charfun needs t > 0")
    L = _generator_of(gen)
    mu = np.asarray(mu, dtype=float)
    f = np.asarray(f, dtype=float)
    M = L.T + 1j * omega_over_sqrt_t * np.diag(f)
    u = expm(t * M) @ mu.astype(complex)
    p = float((mu @ expm(t * L)).sum())
    if p <= 0:
        raise OverflowGuard(f"survival mass underflowed at t={t}")
    return complex(u.sum() / p)


def charfun_taylor_moments(gen: GeneratorLike, mu, f, t: float, k_max: int = 4,
                           radius: float = 0.4, n_points: int = 32) -> np.ndarray:
    """Moments m_k recovered by numerically differentiating the raw
    characteristic function in w' at 0 (trapezoidal rule on a complex
    circle; exact for entire functions up to roundoff).  Cross-check for
    exact_conditional_moments."""
    L = _generator_of(gen)
    mu = np.asarray(mu, dtype=float)
    f = np.asarray(f, dtype=float)
    zs = radius * np.exp(2j * np.pi * np.arange(n_points) / n_points)
    vals = np.empty(n_points, dtype=complex)
    for i, z in enumerate(zs):
        u = expm(t * (L.T + 1j * z * np.diag(f))) @ mu.astype(complex)
        vals[i] = u.sum()
    coef = np.fft.fft(vals) / n_points / radius ** np.arange(n_points)
    ks = np.arange(k_max + 1)
    return np.real(coef[: k_max + 1] * np.array([factorial(k) for k in ks]) / 1j ** ks)


# ---------------------------------------------------------------------------
# uniform characteristic-function bound

def sup_over_weight_ball(d: np.ndarray, psi: np.ndarray,
                         extra_g: Optional[list] = None) -> float:
    """sup over real |g| <= psi of |sum_x g(x) d(x)| for complex d.

    The objective is convex in g, so on a finite space the supremum sits at
    a vertex of the box [-psi, psi]^n: exact enumeration up to n = 12, then
    a fine phase sweep over the optimizers g_theta = psi * sign(Re(e^{-i
    theta} d)) (exact in the theta-continuum limit), plus any supplied g's.
    """
    n = len(psi)
    best = 0.0
    if extra_g:
        for g in extra_g:
            best = max(best, abs(np.asarray(g) @ d))
    if n <= _SUP_ENUM_LIMIT:
        for signs in product((1.0, -1.0), repeat=n - 1):
            g = psi * np.array((1.0,) + signs)
            best = max(best, abs(g @ d))
        return float(best)
    thetas = np.linspace(0.0, np.pi, 3600, endpoint=False)
    rot = np.exp(-1j * thetas)[:, None] * d[None, :]
    best = max(best, float(np.max(np.abs(rot.real) @ psi)))
    return float(best)


@dataclass(frozen=True)
class CharfunBoundReport:
    omega: float
    rows: list            # (t, sup_gap, bound, conv_gap)
    all_bounded: bool
    sigma2: float


def check_uniform_charfun_bound(qproc: QProcessChain, cert: ErgodicityCertificate,
                                mu, f, omega: float, t_grid,
                                g_ball: Optional[list] = None) -> CharfunBoundReport:
    """For each t: the exact sup over ||g||_{L^inf(psi)} <= 1 of

        | E_mu^Q[e^{i omega S_t/sqrt(t)} g(X_t)] - beta(g) E_mu^Q[e^{i omega S_t/sqrt(t)}] |

    (f centered internally, S_t its running integral), checked against
    C mu(psi) e^{-gamma t} + (C |omega|/sqrt(t)) (beta(psi) + C mu(psi)) / gamma
    with the certified constants, plus the distance of the weighted law to
    its Gaussian-limit target beta(g) e^{-sigma^2 omega^2 / 2}."""
    obs = f if isinstance(f, AdditiveObservable) else make_observable(qproc, f)
    ft = obs.f_centered
    mu = np.asarray(mu, dtype=float)
    sigma2 = sigma2_poisson(qproc, obs, with_quadrature=False).sigma2
    C, gamma = cert.C, cert.gamma
    psi = qproc.psi
    mu_psi = float(mu @ psi)
    beta_psi = float(qproc.beta @ psi)
    LQ = qproc.q_generator
    rows = []
    ok = True
    for t in np.asarray(t_grid, dtype=float):
        wp = omega / np.sqrt(t)
        m = expm(t * (LQ.T + 1j * wp * np.diag(ft))) @ mu.astype(complex)
        z = m.sum()
        sup_gap = sup_over_weight_ball(m - qproc.beta * z, psi, g_ball)
        bound = C * mu_psi * np.exp(-gamma * t) \
            + (C * abs(omega) / np.sqrt(t)) * (beta_psi + C * mu_psi) / gamma
        conv_gap = sup_over_weight_ball(
            m - qproc.beta * np.exp(-sigma2 * omega ** 2 / 2.0), psi, g_ball)
        ok = ok and sup_gap <= bound
        rows.append((float(t), float(sup_gap), float(bound), float(conv_gap)))
    return CharfunBoundReport(omega=float(omega), rows=rows, all_bounded=bool(ok),
                              sigma2=float(sigma2))
