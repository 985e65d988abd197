"""Gaussian-process surrogate and expected-improvement proposals for the
outer loop.

Exact GP regression with a squared-exponential kernel on inputs normalised to
the unit box.  Acquisition is maximised derivative-free over a seeded
quasi-random candidate set plus local coordinate refinement, so proposals are
a pure function of (data, hyperparameters, seed).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
VARIANCE_FLOOR = 1e-12


class SurrogateNumericsError(RuntimeError):
    """Kernel matrix factorisation failed even after jitter escalation."""


@dataclass
class DesignerDataset:
    """History of evaluated parameter vectors and observed payoffs."""

    bounds: np.ndarray  # (dim, 2)
    entries: list = field(default_factory=list)  # of (w, J)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, w, J: float) -> None:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise ValueError(f"expected parameter vector of length {self.dim}")
        if np.any(w < self.bounds[:, 0] - 1e-9) or np.any(w > self.bounds[:, 1] + 1e-9):
            raise ValueError("parameter vector outside the search box")
        self.entries.append((w.copy(), float(J)))

    @property
    def best_index(self) -> int:
        if not self.entries:
            raise ValueError("empty dataset has no best entry")
        return int(np.argmax([J for _, J in self.entries]))

    @property
    def best(self) -> tuple:
        return self.entries[self.best_index]

    def inputs(self) -> np.ndarray:
        return np.array([w for w, _ in self.entries]).reshape(len(self), self.dim)

    def targets(self) -> np.ndarray:
        return np.array([J for _, J in self.entries])

    def normalise(self, w) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return (np.asarray(w, dtype=float) - lo) / np.where(hi > lo, hi - lo, 1.0)


@dataclass
class GPSurrogate:
    """Exact GP posterior over the normalised search box."""

    x: np.ndarray  # (n, dim), normalised inputs
    y_mean: float
    y_centered: np.ndarray
    signal_var: float
    lengthscale: np.ndarray  # (dim,) or scalar-per-dim broadcast
    noise_var: float
    cho: tuple  # cho_factor of K + noise*I
    alpha: np.ndarray  # (K + noise I)^-1 y_centered

    def kernel(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d = (a[:, None, :] - b[None, :, :]) / self.lengthscale
        return self.signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))


def _sq_exp(x1, x2, signal_var, lengthscale):
    d = (x1[:, None, :] - x2[None, :, :]) / lengthscale
    return signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))


def _factorise(K: np.ndarray, noise_var: float):
    n = K.shape[0]
    for jitter in (0.0,) + JITTER_LADDER:
        try:
            return cho_factor(K + (noise_var + jitter) * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise SurrogateNumericsError("kernel factorisation failed after jitter escalation")


def gp_fit(data: DesignerDataset, hyper="auto") -> GPSurrogate:
    """Fit the exact GP posterior machinery to the dataset.

    ``hyper`` is either the string "auto" (marginal-likelihood grid selection)
    or a dict with keys signal_var, lengthscale, noise_var.
    """
    if len(data) < 1:
        raise ValueError("gp_fit needs at least one observation")
    x = np.vstack([data.normalise(w) for w, _ in data.entries])
    y = data.targets()
    y_mean = float(y.mean())
    yc = y - y_mean
    if hyper == "auto":
        signal_var, lengthscale, noise_var = _select_hyper(x, yc)
    else:
        signal_var = float(hyper["signal_var"])
        lengthscale = np.broadcast_to(
            np.asarray(hyper["lengthscale"], dtype=float), (x.shape[1],)
        ).copy()
        noise_var = float(hyper["noise_var"])
    if signal_var <= 0 or noise_var <= 0 or np.any(lengthscale <= 0):
        raise ValueError("kernel hyperparameters must be positive")
    K = _sq_exp(x, x, signal_var, lengthscale)
    cho = _factorise(K, noise_var)
    alpha = cho_solve(cho, yc)
    return GPSurrogate(
        x=x,
        y_mean=y_mean,
        y_centered=yc,
        signal_var=signal_var,
        lengthscale=lengthscale,
        noise_var=noise_var,
        cho=cho,
        alpha=alpha,
    )


def _log_marginal(x, yc, signal_var, lengthscale, noise_var) -> float:
    K = _sq_exp(x, x, signal_var, np.broadcast_to(lengthscale, (x.shape[1],)))
    try:
        cho = _factorise(K, noise_var)
    except SurrogateNumericsError:
        return -np.inf
    alpha = cho_solve(cho, yc)
    logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
    n = len(yc)
    return float(-0.5 * yc @ alpha - 0.5 * logdet - 0.5 * n * np.log(2 * np.pi))


# fixed log-grids for "auto" hyperparameter selection
_LENGTHSCALES = np.geomspace(0.05, 2.0, 8)
_SIGNAL_SCALES = np.geomspace(0.25, 4.0, 5)  # relative to var(y)
_NOISE_SCALES = (1e-6, 1e-4, 1e-2)  # relative to signal variance


def _select_hyper(x, yc):
    base_var = float(np.var(yc)) or 1.0
    best = (-np.inf, None)
    for ls in _LENGTHSCALES:
        for sv_scale in _SIGNAL_SCALES:
            sv = sv_scale * base_var
            for nv_scale in _NOISE_SCALES:
                nv = max(nv_scale * sv, 1e-10)
                lml = _log_marginal(x, yc, sv, ls, nv)
                if lml > best[0]:
                    best = (lml, (sv, np.full(x.shape[1], ls), nv))
    if best[1] is None:
        raise SurrogateNumericsError("no hyperparameter setting factorised")
    return best[1]


def gp_posterior(gp: GPSurrogate, w_normalised) -> tuple[float, float]:
    """Predictive mean and variance at one normalised input point."""
    xq = np.asarray(w_normalised, dtype=float).reshape(1, -1)
    k = _sq_exp(xq, gp.x, gp.signal_var, gp.lengthscale)  # (1, n)
    mu = gp.y_mean + float(k @ gp.alpha)
    v = cho_solve(gp.cho, k.T)
    var = gp.signal_var - float(k @ v)
    return mu, max(var, 0.0)


def gp_posterior_batch(gp: GPSurrogate, w_normalised: np.ndarray):
    xq = np.atleast_2d(np.asarray(w_normalised, dtype=float))
    k = _sq_exp(xq, gp.x, gp.signal_var, gp.lengthscale)  # (m, n)
    mu = gp.y_mean + k @ gp.alpha
    v = cho_solve(gp.cho, k.T)  # (n, m)
    var = gp.signal_var - np.sum(k * v.T, axis=1)
    return mu, np.clip(var, 0.0, None)


def expected_improvement(mu: float, var: float, j_best: float, xi: float = 0.0) -> float:
    """Closed-form expected improvement of N(mu, var) over j_best + xi."""
    if var < 0:
        raise ValueError("variance must be nonnegative")
    gain = mu - j_best - xi
    sigma = np.sqrt(var)
    if sigma == 0.0:
        return max(gain, 0.0)
    z = gain / sigma
    return float(max(gain * norm.cdf(z) + sigma * norm.pdf(z), 0.0))


def _ei_batch(mu: np.ndarray, var: np.ndarray, j_best: float, xi: float) -> np.ndarray:
    gain = mu - j_best - xi
    sigma = np.sqrt(np.clip(var, 0.0, None))
    out = np.maximum(gain, 0.0)
    pos = sigma > 0
    z = np.zeros_like(gain)
    z[pos] = gain[pos] / sigma[pos]
    out = np.where(pos, gain * norm.cdf(z) + sigma * norm.pdf(z), out)
    return np.maximum(out, 0.0)


N_CANDIDATES = 2048
N_REFINEMENTS = 16
DEFAULT_XI = 0.01


def propose_next(
    gp: Optional[GPSurrogate],
    bounds: np.ndarray,
    n_candidates: int = N_CANDIDATES,
    j_best: float = -np.inf,
    seed: int = 0,
    xi: float = DEFAULT_XI,
    incumbent: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Candidate with the highest expected improvement.

    Candidates are a seeded Sobol set over the box plus local coordinate
    refinements around the best candidate found; ties break to the lowest
    index.  With no surrogate (empty history) the proposal is a uniform
    random point in the box.
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    dim = bounds.shape[0]
    lo, hi = bounds[:, 0], bounds[:, 1]
    rng = np.random.default_rng([seed, 0xB0])
    if gp is None:
        return lo + (hi - lo) * rng.random(dim)

    sampler = qmc.Sobol(d=dim, scramble=True, seed=int(rng.integers(2**31 - 1)))
    unit = sampler.random(n_candidates)
    cands = lo + (hi - lo) * unit
    if incumbent is not None:
        cands = np.vstack([cands, np.asarray(incumbent, dtype=float)[None, :]])

    def ei_of(points):
        span = np.where(hi > lo, hi - lo, 1.0)
        normalised = (points - lo) / span
        mu, var = gp_posterior_batch(gp, normalised)
        return _ei_batch(mu, var, j_best, xi)

    scores = ei_of(cands)
    best_i = int(np.argmax(scores))  # argmax takes the lowest index on ties
    best_x, best_s = cands[best_i].copy(), scores[best_i]

    # local coordinate refinement around the incumbent candidate
    step = 0.1 * (hi - lo)
    for _ in range(N_REFINEMENTS):
        trial = np.repeat(best_x[None, :], 2 * dim, axis=0)
        for d in range(dim):
            trial[2 * d, d] = np.clip(best_x[d] + step[d], lo[d], hi[d])
            trial[2 * d + 1, d] = np.clip(best_x[d] - step[d], lo[d], hi[d])
        s = ei_of(trial)
        i = int(np.argmax(s))
        if s[i] > best_s:
            best_x, best_s = trial[i].copy(), s[i]
        else:
            step *= 0.5
    return best_x
