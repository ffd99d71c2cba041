"""Exact event-driven simulation and empirical checks of the conditioned CLT.

Reproducibility contract: replica i of a run with master seed s draws from
the counter-based Philox4x64 stream keyed by (s, i) — first one uniform for
the initial state, then one (holding, jump) pair per step.  Batch size,
thread count, and rerun length never change the values a replica sees, so
sample lists are bit-identical however the work is scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .chain_model import AbsorbedChain
from .errors import BudgetExceeded, DegenerateVariance, ValidationError
from .qprocess import QProcessChain, h_transform
from .spectral import SpectralTriple, certify_ergodicity, default_time_grid
from . import variance_clt

DEFAULT_BATCH = 4096
REJECTION_BUDGET = 1e9
_STRAGGLER_CAP = 64


def philox_stream(seed: int, replica: int) -> np.random.Generator:
    """The per-replica RNG stream; key = (master seed, replica index)."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(replica)]))


@dataclass(frozen=True)
class Trajectory:
    """A path observed on [0, end] with end = min(absorption, t_max).

    jump_times are the state-change instants; visited_states is one longer.
    absorption_time is +inf when the path survives the horizon.
    """

    jump_times: np.ndarray
    visited_states: np.ndarray
    absorption_time: float
    t_max: float

    @property
    def survived(self) -> bool:
        return not np.isfinite(self.absorption_time)

    def additive_integral(self, f) -> float:
        """Exact piecewise-constant integral of f along the path.

        Accumulated segment by segment in path order — the same floating-point
        sequence as the batch kernel, so the two agree bit for bit."""
        f = np.asarray(f, dtype=float)
        end = min(self.absorption_time, self.t_max)
        edges = np.concatenate([[0.0], self.jump_times, [end]])
        total = np.float64(0.0)
        for state, seg in zip(self.visited_states, np.diff(edges)):
            total += f[state] * seg
        return float(total)


def _jump_tables(generator: np.ndarray, killing: Optional[np.ndarray]):
    # rows of cumulative jump probabilities; killing, when present, occupies
    # a final virtual column (target index n = cemetery)
    rates = -np.diag(generator).copy()
    off = generator.copy()
    np.fill_diagonal(off, 0.0)
    if killing is not None:
        off = np.hstack([off, killing[:, None]])
    probs = np.where(rates[:, None] > 0, off / np.where(rates > 0, rates, 1.0)[:, None], 0.0)
    cum = np.cumsum(probs, axis=1)
    # pin the cumulative row to exactly 1 from its last positive-probability
    # column on, so a uniform draw can never fall off the end by roundoff
    for x in range(cum.shape[0]):
        nz = np.flatnonzero(probs[x] > 0)
        if nz.size:
            cum[x, nz[-1]:] = 1.0
    return rates, cum


def _simulate_one(rates, cumJ, cum0, n, t_max, gen):
    u0 = gen.random()
    state = min(int(np.searchsorted(cum0, u0, side="right")), n - 1)
    t = 0.0
    times, states = [], [state]
    absorption = np.inf
    while True:
        u_h = gen.random()
        u_j = gen.random()
        rate = rates[state]
        if rate <= 0:
            break  # single absorbing-free state: sits forever
        t_next = t + (-np.log1p(-u_h) / rate)
        if t_next >= t_max:
            break
        nxt = int((u_j > cumJ[state]).sum())
        if nxt >= n:
            absorption = t_next
            break
        t = t_next
        state = nxt
        times.append(t)
        states.append(state)
    return Trajectory(
        jump_times=np.array(times),
        visited_states=np.array(states, dtype=int),
        absorption_time=absorption,
        t_max=float(t_max),
    )


def simulate_absorbed(chain: AbsorbedChain, mu, t_max: float, rng_stream) -> Trajectory:
    """One exact path of the killed chain.  rng_stream is either a Generator
    or a (seed, replica) pair."""
    gen = rng_stream if isinstance(rng_stream, np.random.Generator) \
        else philox_stream(*rng_stream)
    mu = np.asarray(mu, dtype=float)
    rates, cumJ = _jump_tables(chain.sub_generator, chain.killing)
    return _simulate_one(rates, cumJ, np.cumsum(mu), chain.n, t_max, gen)


def simulate_qprocess(qproc: QProcessChain, initial, t_max: float, rng_stream) -> Trajectory:
    gen = rng_stream if isinstance(rng_stream, np.random.Generator) \
        else philox_stream(*rng_stream)
    initial = np.asarray(initial, dtype=float)
    rates, cumJ = _jump_tables(qproc.q_generator, None)
    return _simulate_one(rates, cumJ, np.cumsum(initial), qproc.n, t_max, gen)


# ---------------------------------------------------------------------------
# vectorized batch kernel (same draw discipline as _simulate_one)

def _draw_block(seed, replicas, m):
    U = np.empty((len(replicas), 2 * m + 1))
    for i, r in enumerate(replicas):
        U[i] = philox_stream(seed, r).random(2 * m + 1)
    return U


def _run_batch(rates, cumJ, cum0, n, f, t_max, replicas, seed, m, m0=None,
               count_jumps=None):
    B = len(replicas)
    U = _draw_block(seed, replicas, m)
    state = np.minimum(np.searchsorted(cum0, U[:, 0], side="right"), n - 1)
    tcur = np.zeros(B)
    S = np.zeros(B)
    absorbed = np.zeros(B, dtype=bool)
    active = np.ones(B, dtype=bool)
    local_counts = None if count_jumps is None else np.zeros_like(count_jumps)
    for j in range(m):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        st = state[idx]
        r = rates[st]
        with np.errstate(divide="ignore"):
            hold = np.where(r > 0, -np.log1p(-U[idx, 1 + 2 * j]) / np.where(r > 0, r, 1.0), np.inf)
        t_next = tcur[idx] + hold
        seg = np.minimum(t_next, t_max) - tcur[idx]
        S[idx] += f[st] * seg
        done = t_next >= t_max
        nxt = (U[idx, 2 + 2 * j][:, None] > cumJ[st]).sum(axis=1)
        jumping = ~done
        if local_counts is not None and jumping.any():
            np.add.at(local_counts, (st[jumping], nxt[jumping]), 1)
        died = jumping & (nxt >= n)  # absorbed strictly before the horizon
        absorbed[idx[died]] = True
        move = jumping & (nxt < n)
        state[idx[move]] = nxt[move]
        tcur[idx] = t_next
        active[idx[done | died]] = False
    if active.any():
        # some replica needs more than m steps: replay the whole batch from
        # scratch with a longer draw block (streams are prefix-stable, so
        # every finished replica reproduces its result bit for bit)
        if m0 is None:
            m0 = m
        if m > _STRAGGLER_CAP * m0:
            raise BudgetExceeded("replica exceeded the straggler rerun cap")
        return _run_batch(rates, cumJ, cum0, n, f, t_max, replicas, seed,
                          4 * m, m0, count_jumps)
    if count_jumps is not None:
        count_jumps += local_counts
    return S, state, absorbed


def _plan_steps(rates, t_max):
    rmax = float(np.max(rates))
    lam = max(rmax * t_max, 1.0)
    return int(np.ceil(lam + 8.0 * np.sqrt(lam) + 16))


def _batch_statistics(generator, killing, initial, f, t_max, n_replicas, seed,
                      threads=1, batch=DEFAULT_BATCH, count_jumps=False):
    """(S_i, terminal state_i, absorbed_i) for replicas 0..n-1, plus optional
    pooled jump counts; identical output for any batch size or thread count."""
    n = generator.shape[0]
    rates, cumJ = _jump_tables(generator, killing)
    cum0 = np.cumsum(np.asarray(initial, dtype=float))
    m = _plan_steps(rates, t_max)
    S = np.empty(n_replicas)
    term = np.empty(n_replicas, dtype=int)
    absorbed = np.empty(n_replicas, dtype=bool)
    spans = [(lo, min(lo + batch, n_replicas)) for lo in range(0, n_replicas, batch)]
    counts = [np.zeros((n, cumJ.shape[1] + 1), dtype=np.int64) if count_jumps else None
              for _ in spans]

    def work(i):
        lo, hi = spans[i]
        res = _run_batch(rates, cumJ, cum0, n, f, t_max,
                         np.arange(lo, hi), seed, m, count_jumps=counts[i])
        S[lo:hi], term[lo:hi], absorbed[lo:hi] = res

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(len(spans))))
    else:
        for i in range(len(spans)):
            work(i)
    pooled = sum(counts) if count_jumps else None
    return S, term, absorbed, pooled


# ---------------------------------------------------------------------------
# conditioned-CLT sampling

@dataclass(frozen=True)
class EmpiricalDistribution:
    samples: np.ndarray       # sorted values of sqrt(t) (S_t/t - beta(f))
    n_effective: int
    n_requested: int
    seed: int
    t: float
    method: str
    sigma2: float
    beta_f: float
    gap_bound_factor: float   # C mu(psi1)/mu(eta); nan for rejection sampling

    def __post_init__(self):
        self.samples.setflags(write=False)


def default_method(lambda0: float, t: float) -> str:
    """Rejection is exact but costs e^{lambda0 t} per kept path."""
    return "qprocess" if t > 3.0 / lambda0 else "rejection"


def conditional_clt_sample(chain: AbsorbedChain, triple: SpectralTriple, mu, f,
                           t: float, n_replicas: int, method: Optional[str] = None,
                           seed: int = 0, psi1: Optional[np.ndarray] = None,
                           threads: int = 1, batch: int = DEFAULT_BATCH,
                           budget: float = REJECTION_BUDGET) -> EmpiricalDistribution:
    """Sample the statistic sqrt(t)(S_t/t - beta(f)) under conditioning.

    'rejection' keeps absorbed-chain paths that survive past t (unbiased);
    'qprocess' simulates the surrogate conservative dynamics from the
    eta-reweighted initial law, with the exponential coupling gap bounded by
    gap_bound_factor * e^{-gamma (T - t)} for events observed up to time t
    under conditioning on survival to T.
    """
    mu = np.asarray(mu, dtype=float)
    if psi1 is None:
        psi1 = np.ones(chain.n)
    qproc = h_transform(chain, triple, psi1)
    obs = variance_clt.make_observable(qproc, f)
    if method is None:
        method = default_method(triple.lambda0, t)
    if method not in ("rejection", "qprocess"):
        raise ValidationError(f"unknown conditioning method {method!r}")
    if np.max(np.abs(obs.f_centered)) <= 1e-14:
        # constant observable: the statistic collapses to exactly zero
        samples = np.zeros(n_replicas)
        return EmpiricalDistribution(samples=samples, n_effective=n_replicas,
                                     n_requested=n_replicas, seed=seed, t=float(t),
                                     method=method, sigma2=0.0, beta_f=obs.beta_f,
                                     gap_bound_factor=float("nan"))
    sigma2 = variance_clt.sigma2_poisson(qproc, obs, with_quadrature=False).sigma2
    if sigma2 <= 1e-12:
        raise DegenerateVariance(
            f"sigma^2 = {sigma2} for a nonconstant observable; no CLT asserted")
    mu_eta = float(mu @ triple.eta)
    if mu_eta <= 0:
        raise ValidationError("mu(eta) must be positive")
    if method == "rejection":
        if n_replicas * np.exp(triple.lambda0 * t) > budget:
            raise BudgetExceeded(
                f"rejection cost n e^(lambda0 t) = {n_replicas * np.exp(triple.lambda0 * t):.3g} "
                f"exceeds budget {budget:.3g}")
        S, _, absorbed, _ = _batch_statistics(
            chain.sub_generator, chain.killing, mu, obs.f_centered, t,
            n_replicas, seed, threads, batch)
        kept = S[~absorbed]
        gap_factor = float("nan")
    else:
        h_mu = mu * triple.eta / mu_eta
        S, _, _, _ = _batch_statistics(
            qproc.q_generator, None, h_mu, obs.f_centered, t,
            n_replicas, seed, threads, batch)
        kept = S
        cert = certify_ergodicity(chain, triple, psi1, default_time_grid(triple.gamma))
        gap_factor = float(cert.C * (mu @ psi1) / mu_eta)
    samples = np.sort(np.sqrt(t) * kept / t)
    return EmpiricalDistribution(samples=samples, n_effective=len(samples),
                                 n_requested=n_replicas, seed=seed, t=float(t),
                                 method=method, sigma2=float(sigma2),
                                 beta_f=obs.beta_f, gap_bound_factor=gap_factor)


def kolmogorov_distance(empirical: EmpiricalDistribution, sigma2: float) -> float:
    """Exact sup over the empirical CDF jumps of |F_n - Phi(./sigma)|.

    The Gaussian CDF comes from the complementary error function (rational
    minimax approximation under the hood; absolute error far below the 1e-7
    contract)."""
    if sigma2 <= 0:
        raise DegenerateVariance("kolmogorov_distance needs sigma^2 > 0")
    s = empirical.samples
    nn = len(s)
    if nn == 0:
        raise ValidationError("empty sample")
    F = ndtr(s / np.sqrt(sigma2))
    i = np.arange(nn)
    return float(max((F - i / nn).max(), ((i + 1) / nn - F).max()))


@dataclass(frozen=True)
class QuasiErgodicReport:
    rows: list            # (t, mc_value, mc_stderr, exact_value or nan)
    fitted_rate: float
    method: str


def quasi_ergodic_check(chain: AbsorbedChain, triple: SpectralTriple, mu, f,
                        t_grid, n_replicas: int, seed: int = 0,
                        method: Optional[str] = None,
                        psi1: Optional[np.ndarray] = None,
                        threads: int = 1) -> QuasiErgodicReport:
    """Monte Carlo conditional mean-square deviation of S_t/t from beta(f)
    on a time grid, with the exact augmented-oracle value alongside when the
    state space is small (n <= 50)."""
    mu = np.asarray(mu, dtype=float)
    if psi1 is None:
        psi1 = np.ones(chain.n)
    qproc = h_transform(chain, triple, psi1)
    obs = variance_clt.make_observable(qproc, f)
    rows = []
    used = None
    for t in np.asarray(t_grid, dtype=float):
        mth = method or default_method(triple.lambda0, t)
        used = mth if used in (None, mth) else "mixed"
        emp = conditional_clt_sample(chain, triple, mu, f, t, n_replicas,
                                     method=mth, seed=seed, psi1=psi1, threads=threads)
        dev2 = (emp.samples / np.sqrt(t)) ** 2
        mc = float(dev2.mean())
        stderr = float(dev2.std(ddof=1) / np.sqrt(len(dev2))) if len(dev2) > 1 else float("nan")
        exact = float("nan")
        if chain.n <= 50 and np.max(np.abs(obs.f_centered)) > 1e-14:
            mv = variance_clt.exact_conditional_moments(chain, mu, obs.f_centered, 2, t)
            exact = float(mv.conditional[2] / t ** 2)
        rows.append((float(t), mc, stderr, exact))
    ts = np.array([r[0] for r in rows])
    vals = np.array([r[1] for r in rows])
    pos = vals > 0
    rate = float(np.polyfit(np.log(ts[pos]), np.log(vals[pos]), 1)[0]) if pos.sum() >= 2 \
        else float("nan")
    return QuasiErgodicReport(rows=rows, fitted_rate=rate, method=used or "auto")


def jump_frequency_counts(chain: AbsorbedChain, mu, t_max: float, n_replicas: int,
                          seed: int = 0, threads: int = 1):
    """Pooled one-step transition counts (cemetery in the last column) for
    goodness-of-fit tests against the embedded jump probabilities."""
    _, _, _, counts = _batch_statistics(
        chain.sub_generator, chain.killing, mu, np.zeros(chain.n), t_max,
        n_replicas, seed, threads, count_jumps=True)
    return counts[:, : chain.n + 1]
