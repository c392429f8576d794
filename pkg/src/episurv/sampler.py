"""MCMC over unconstrained parameters.

Three kernels are available. ``nuts`` (the default) and ``hmc`` share
dual-averaging step size adaptation and a windowed diagonal or dense metric;
``nuts`` picks the trajectory length per iteration with the generalised
no-U-turn rule and multinomial sampling, ``hmc`` uses a fixed number of
leapfrog steps with a jittered step size. ``rwm`` is random-walk Metropolis
with a diagonal proposal adapted during warmup. A target needs ``dim``,
``value_and_grad(x)``, ``transform(x)``, ``param_names`` and
``initial_point(rng)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as diag

logger = logging.getLogger(__name__)


class InitializationError(RuntimeError):
    pass


class DivergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    algorithm: str = "nuts"
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    seed: int = 1
    n_leapfrog: int = 24
    max_depth: int = 10
    metric: str = "diag"
    target_accept: float = 0.8
    init_step_size: float = 0.1
    step_jitter: float = 0.2
    max_energy_error: float = 1000.0
    divergence_warn_rate: float = 0.01
    init_tries: int = 100

    def __post_init__(self):
        if self.algorithm not in ("nuts", "hmc", "rwm"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.metric not in ("diag", "dense"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.chains < 1 or self.draws < 1 or self.warmup < 0:
            raise ValueError("need chains >= 1, draws >= 1, warmup >= 0")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass
class PosteriorDraws:
    """Draws on the constrained scale, stacked chain after chain."""

    draws: np.ndarray
    lp: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray
    names: list
    stats: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return int(self.chain.max()) + 1 if self.chain.size else 0

    def by_chain(self, j: int) -> np.ndarray:
        """``(chains, draws)`` array for column ``j``."""
        return np.stack([self.draws[self.chain == c, j] for c in range(self.n_chains)])

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def hazards(self) -> np.ndarray:
        cols = [i for i, n in enumerate(self.names) if n.startswith("lambda_")]
        return self.draws[:, cols]


class _DualAveraging:
    def __init__(self, step: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * step)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.h_bar = 0.0
        self.log_bar = 0.0
        self.t = 0
        self.log_step = np.log(step)

    def update(self, accept: float) -> float:
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept)
        self.log_step = self.mu - np.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_bar = w * self.log_step + (1 - w) * self.log_bar
        return float(np.exp(self.log_step))

    @property
    def final(self) -> float:
        return float(np.exp(self.log_bar))


class _Metric:
    """Inverse mass matrix, diagonal or dense."""

    def __init__(self, inv, dense: bool):
        self.dense = dense
        self.inv = inv
        if dense:
            self._chol = np.linalg.cholesky(inv)

    @classmethod
    def identity(cls, dim: int, dense: bool) -> "_Metric":
        return cls(np.eye(dim) if dense else np.ones(dim), dense)

    @classmethod
    def estimate(cls, samples: np.ndarray, dense: bool) -> "_Metric":
        n, dim = samples.shape
        if dense:
            cov = np.cov(samples, rowvar=False) if n > 1 else np.eye(dim)
            reg = (n / (n + 5.0)) * cov + 1e-3 * (5.0 / (n + 5.0)) * np.eye(dim)
            return cls(reg, True)
        var = samples.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
        return cls((n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0)), False)

    def velocity(self, p):
        return self.inv @ p if self.dense else self.inv * p

    def kinetic(self, p) -> float:
        return 0.5 * float(p @ self.velocity(p))

    def momentum(self, rng, dim):
        z = rng.standard_normal(dim)
        if self.dense:
            # p = L^{-T} z has covariance inv^{-1}
            return np.linalg.solve(self._chol.T, z)
        return z / np.sqrt(self.inv)


def _adaptation_windows(warmup: int):
    """Start of metric adaptation and the ends of its doubling windows."""
    if warmup < 20:
        return warmup, []
    init_buf, term_buf, base = 75, 50, 25
    if init_buf + term_buf + base > warmup:
        init_buf, term_buf = int(0.15 * warmup), int(0.1 * warmup)
        base = warmup - init_buf - term_buf
    ends = []
    start, size = init_buf, base
    last = warmup - term_buf
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start, size = end, 2 * size
    return init_buf, ends


def _leapfrog(target, x, p, grad, step, metric, n_steps):
    p = p + 0.5 * step * grad
    for i in range(n_steps):
        x = x + step * metric.velocity(p)
        lp, grad = target.value_and_grad(x)
        if not np.isfinite(lp):
            return x, p, lp, grad
        if i < n_steps - 1:
            p = p + step * grad
    p = p + 0.5 * step * grad
    return x, p, lp, grad


def _find_step(target, x, lp, grad, metric, rng, step):
    """Double or halve the step until a one-step acceptance crosses 0.5."""
    def accept(eps):
        p = metric.momentum(rng, x.size)
        h0 = lp - metric.kinetic(p)
        _, p1, lp1, _ = _leapfrog(target, x, p, grad, eps, metric, 1)
        if not np.isfinite(lp1):
            return 0.0
        h1 = lp1 - metric.kinetic(p1)
        return np.exp(min(0.0, h1 - h0))

    direction = 1 if accept(step) > 0.5 else -1
    for _ in range(50):
        new = step * 2.0**direction
        a = accept(new)
        if (direction == 1 and a < 0.5) or (direction == -1 and a > 0.5):
            return new if direction == -1 else step
        step = new
    return step


def _static_transition(target, x, lp, grad, eps, metric, config, rng):
    p = metric.momentum(rng, x.size)
    h0 = lp - metric.kinetic(p)
    x1, p1, lp1, grad1 = _leapfrog(target, x, p, grad, eps, metric, config.n_leapfrog)
    h1 = lp1 - metric.kinetic(p1) if np.isfinite(lp1) else -np.inf
    delta = h1 - h0 if np.isfinite(h1) else -np.inf
    divergent = not np.isfinite(delta) or -delta > config.max_energy_error
    accept = 0.0 if divergent else float(np.exp(min(0.0, delta)))
    if rng.random() < accept:
        x, lp, grad = x1, lp1, grad1
    return x, lp, grad, accept, divergent, config.n_leapfrog


@dataclass
class _Subtree:
    """A stretch of trajectory stored in forward-time order."""

    first: tuple  # (x, p, grad, lp) at each end
    last: tuple
    sharp_first: np.ndarray
    sharp_last: np.ndarray
    rho: np.ndarray
    log_w: float
    proposal: tuple  # (x, lp, grad)
    n_steps: int
    sum_accept: float
    valid: bool
    divergent: bool = False


def _no_u_turn(sharp_minus, sharp_plus, rho) -> bool:
    return float(sharp_plus @ rho) > 0 and float(sharp_minus @ rho) > 0


def _merge_ok(left: _Subtree, right: _Subtree) -> bool:
    """No-U-turn checks across the whole span and across the join."""
    ok = _no_u_turn(left.sharp_first, right.sharp_last, left.rho + right.rho)
    ok = ok and _no_u_turn(left.sharp_first, right.sharp_first, left.rho + right.first[1])
    return ok and _no_u_turn(left.sharp_last, right.sharp_last, right.rho + left.last[1])


def _build_tree(target, state, depth, direction, eps, metric, h0, config, rng) -> _Subtree:
    if depth == 0:
        x, p, grad, _ = state
        x1, p1, lp1, grad1 = _leapfrog(target, x, p, grad, direction * eps, metric, 1)
        h = lp1 - metric.kinetic(p1) if np.isfinite(lp1) else -np.inf
        h = h if np.isfinite(h) else -np.inf
        divergent = h0 - h > config.max_energy_error
        leaf = (x1, p1, grad1, lp1)
        sharp = metric.velocity(p1)
        return _Subtree(
            first=leaf, last=leaf, sharp_first=sharp, sharp_last=sharp, rho=p1.copy(),
            log_w=h - h0, proposal=(x1, lp1, grad1), n_steps=1,
            sum_accept=float(np.exp(min(0.0, h - h0))), valid=not divergent,
            divergent=divergent,
        )
    inner = _build_tree(target, state, depth - 1, direction, eps, metric, h0, config, rng)
    if not inner.valid:
        return inner
    frontier = inner.last if direction > 0 else inner.first
    outer = _build_tree(target, frontier, depth - 1, direction, eps, metric, h0, config, rng)
    n_steps = inner.n_steps + outer.n_steps
    sum_accept = inner.sum_accept + outer.sum_accept
    if not outer.valid:
        outer.n_steps, outer.sum_accept = n_steps, sum_accept
        return outer
    log_w = np.logaddexp(inner.log_w, outer.log_w)
    take_outer = rng.random() < np.exp(outer.log_w - log_w)
    left, right = (inner, outer) if direction > 0 else (outer, inner)
    return _Subtree(
        first=left.first, last=right.last,
        sharp_first=left.sharp_first, sharp_last=right.sharp_last,
        rho=left.rho + right.rho, log_w=float(log_w),
        proposal=outer.proposal if take_outer else inner.proposal,
        n_steps=n_steps, sum_accept=sum_accept, valid=_merge_ok(left, right),
    )


def _nuts_transition(target, x, lp, grad, eps, metric, config, rng):
    """One multinomial NUTS transition with the generalised no-U-turn rule."""
    p = metric.momentum(rng, x.size)
    h0 = lp - metric.kinetic(p)
    start = (x, p, grad, lp)
    sharp = metric.velocity(p)
    traj = _Subtree(
        first=start, last=start, sharp_first=sharp, sharp_last=sharp, rho=p.copy(),
        log_w=0.0, proposal=(x, lp, grad), n_steps=0, sum_accept=0.0, valid=True,
    )
    sample = traj.proposal
    n_steps, sum_accept, divergent = 0, 0.0, False
    for depth in range(config.max_depth):
        direction = 1 if rng.random() < 0.5 else -1
        frontier = traj.last if direction > 0 else traj.first
        new = _build_tree(target, frontier, depth, direction, eps, metric, h0, config, rng)
        n_steps += new.n_steps
        sum_accept += new.sum_accept
        if not new.valid:
            divergent = new.divergent
            break
        # biased progressive sampling favours the newer subtree
        if rng.random() < np.exp(min(0.0, new.log_w - traj.log_w)):
            sample = new.proposal
        left, right = (traj, new) if direction > 0 else (new, traj)
        ok = _merge_ok(left, right)
        traj = _Subtree(
            first=left.first, last=right.last,
            sharp_first=left.sharp_first, sharp_last=right.sharp_last,
            rho=left.rho + right.rho, log_w=float(np.logaddexp(traj.log_w, new.log_w)),
            proposal=sample, n_steps=n_steps, sum_accept=sum_accept, valid=ok,
        )
        if not ok:
            break
    x1, lp1, grad1 = sample
    accept = sum_accept / n_steps if n_steps else 0.0
    return x1, lp1, grad1, accept, divergent, n_steps


def _hmc_chain(target, x0, config: SamplerConfig, rng):
    """Gradient-based chain with step size and metric adapted during warmup."""
    transition = _nuts_transition if config.algorithm == "nuts" else _static_transition
    dim = target.dim
    x = np.array(x0, dtype=float)
    lp, grad = target.value_and_grad(x)
    dense = config.metric == "dense"
    metric = _Metric.identity(dim, dense)
    step = _find_step(target, x, lp, grad, metric, rng, config.init_step_size)
    da = _DualAveraging(step, config.target_accept)
    slow_start, windows = _adaptation_windows(config.warmup)
    buf = []
    total = config.warmup + config.draws
    out_x = np.empty((config.draws, dim))
    out_lp = np.empty(config.draws)
    n_div = 0
    acc_sum = 0.0
    grad_evals = 0
    for it in range(total):
        warm = it < config.warmup
        eps = step
        if not warm and config.step_jitter:
            eps = step * (1.0 + config.step_jitter * (2.0 * rng.random() - 1.0))
        x, lp, grad, accept, divergent, n_steps = transition(
            target, x, lp, grad, eps, metric, config, rng
        )
        grad_evals += n_steps
        if warm:
            step = da.update(accept)
            if slow_start <= it and windows:
                buf.append(x.copy())
                if it + 1 == windows[0]:
                    metric = _Metric.estimate(np.array(buf), dense)
                    buf = []
                    windows = windows[1:]
                    step = _find_step(target, x, lp, grad, metric, rng, step)
                    da = _DualAveraging(step, config.target_accept)
            if it + 1 == config.warmup:
                step = da.final
        else:
            k = it - config.warmup
            out_x[k] = x
            out_lp[k] = lp
            n_div += divergent
            acc_sum += accept
    stats = {
        "step_size": step,
        "divergences": n_div,
        "accept_rate": acc_sum / config.draws,
        "grad_evals": grad_evals,
        "inv_metric": metric.inv,
    }
    return out_x, out_lp, stats


def _rwm_chain(target, x0, config: SamplerConfig, rng):
    dim = target.dim
    x = np.array(x0, dtype=float)
    lp = target(x)
    scale = np.full(dim, 0.1)
    log_global = np.log(2.38 / np.sqrt(dim))
    mean = x.copy()
    m2 = np.zeros(dim)
    n_seen = 0
    out_x = np.empty((config.draws, dim))
    out_lp = np.empty(config.draws)
    acc_sum = 0.0
    for it in range(config.warmup + config.draws):
        prop = x + np.exp(log_global) * scale * rng.standard_normal(dim)
        lp1 = target(prop)
        # symmetric proposal: the Hastings ratio is the target ratio
        accept = float(np.exp(min(0.0, lp1 - lp))) if np.isfinite(lp1) else 0.0
        if rng.random() < accept:
            x, lp = prop, lp1
        if it < config.warmup:
            log_global += (accept - 0.234) / (it + 1) ** 0.6
            n_seen += 1
            d = x - mean
            mean += d / n_seen
            m2 += d * (x - mean)
            if n_seen > 2 * dim and it % 10 == 0:
                scale = np.sqrt(m2 / (n_seen - 1) + 1e-8)
        else:
            k = it - config.warmup
            out_x[k] = x
            out_lp[k] = lp
            acc_sum += accept
    stats = {"accept_rate": acc_sum / config.draws, "divergences": 0, "scale": scale}
    return out_x, out_lp, stats


def _initial_point(target, rng, tries: int):
    for _ in range(tries):
        x0 = target.initial_point(rng)
        if np.isfinite(target(x0)):
            return x0
    raise InitializationError(f"no finite log density after {tries} initialisation attempts")


def sample(target, config: SamplerConfig = SamplerConfig()) -> PosteriorDraws:
    """Run ``config.chains`` independent chains, each with its own RNG substream."""
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    kernel = _rwm_chain if config.algorithm == "rwm" else _hmc_chain
    xs, lps, chain_stats = [], [], []
    for c, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        x0 = _initial_point(target, rng, config.init_tries)
        xc, lpc, st = kernel(target, x0, config, rng)
        xs.append(np.array([target.transform(v) for v in xc]))
        lps.append(lpc)
        chain_stats.append(st)
        logger.info("chain %d: accept %.3f, divergences %d", c, st["accept_rate"], st["divergences"])
    draws = PosteriorDraws(
        draws=np.concatenate(xs),
        lp=np.concatenate(lps),
        chain=np.repeat(np.arange(config.chains), config.draws),
        iteration=np.tile(np.arange(config.draws), config.chains),
        names=list(target.param_names),
        stats={"chains": chain_stats},
    )
    n_div = sum(s["divergences"] for s in chain_stats)
    rate = n_div / (config.chains * config.draws)
    draws.stats["divergence_rate"] = rate
    if config.algorithm != "rwm" and rate > config.divergence_warn_rate:
        warnings.warn(f"{n_div} divergent transitions ({rate:.1%})", DivergenceWarning)
    return draws


def diagnostics(draws: PosteriorDraws) -> dict:
    """Per-parameter split R-hat and bulk ESS; R-hat is NaN for one chain."""
    out = {}
    for j, name in enumerate(draws.names):
        x = draws.by_chain(j)
        rhat = diag.split_rhat(x) if x.shape[0] > 1 else np.nan
        out[name] = {"rhat": rhat, "ess_bulk": diag.ess_bulk(x)}
    return out


@dataclass(frozen=True)
class SurvivalSummary:
    t: np.ndarray
    median: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    mean_duration: np.ndarray  # per draw

    def mean_duration_summary(self) -> dict:
        md = self.mean_duration
        return {
            "mean": float(md.mean()),
            "median": float(np.median(md)),
            "lo95": float(np.quantile(md, 0.025)),
            "hi95": float(np.quantile(md, 0.975)),
        }


def survival_draws(hazards: np.ndarray) -> np.ndarray:
    """``S(1) .. S(d_max)`` for every row of hazards."""
    hazards = np.atleast_2d(hazards)
    ones = np.ones((hazards.shape[0], 1))
    return np.concatenate((ones, np.cumprod(1.0 - hazards, axis=1)), axis=1)


def summarize_survival(draws) -> SurvivalSummary:
    """Pointwise median and central 95% band of ``S(t)``, and mean durations.

    ``draws`` is a ``PosteriorDraws`` or a plain ``(n, d_max - 1)`` hazard array.
    """
    hazards = draws.hazards() if isinstance(draws, PosteriorDraws) else np.asarray(draws)
    if hazards.size == 0:
        raise ValueError("no draws to summarise")
    s = survival_draws(hazards)
    lo, med, hi = np.quantile(s, [0.025, 0.5, 0.975], axis=0)
    return SurvivalSummary(
        t=np.arange(1, s.shape[1] + 1),
        median=med,
        lo95=lo,
        hi95=hi,
        mean_duration=s.sum(axis=1),
    )


class StandardNormalTarget:
    """Independent standard normals; a test target with known moments."""

    def __init__(self, dim: int):
        self.dim = dim
        self.param_names = [f"x_{i}" for i in range(1, dim + 1)]

    def value_and_grad(self, x):
        return -0.5 * float(x @ x), -x

    def __call__(self, x):
        return -0.5 * float(x @ x)

    def transform(self, x):
        return x

    def initial_point(self, rng):
        return rng.uniform(-2, 2, self.dim)
