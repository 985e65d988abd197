"""Additive reward modifiers: truncated power series over scalar features.

A modifier maps scalar features of a game step (edge flows, local densities,
action frequencies) through per-feature polynomials and sums the results.
The coefficient vector is the search space of the outer optimisation loop.
Also provides the cumulative-incentive ledger, the weak-budget-balance
predicate and the equilibrium-preserving shaping transform.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ModifierConfigError(ValueError):
    """Raised when a modifier configuration is inconsistent."""


class FeatureRangeError(ValueError):
    """Raised when a feature value falls outside its declared range."""


DEFAULT_COEFF_BOUND = 10.0  # features are normalised to [0, 1] by the envs


@dataclass(frozen=True)
class ModifierParams:
    """Coefficients of one polynomial per named feature.

    ``coefficients[f, k]`` multiplies ``feature_f ** k``; the flattened
    coefficient matrix is the vector searched by the outer loop.
    """

    feature_names: tuple[str, ...]
    order: int
    coefficients: np.ndarray  # shape (n_features, order + 1)
    bounds: np.ndarray = field(default=None)  # shape (dim, 2)

    def __post_init__(self):
        if self.order < 0:
            raise ModifierConfigError(f"order must be >= 0, got {self.order}")
        coeffs = np.asarray(self.coefficients, dtype=float)
        expected = (len(self.feature_names), self.order + 1)
        if coeffs.shape != expected:
            raise ModifierConfigError(
                f"coefficient shape {coeffs.shape} != {expected} "
                f"for {len(self.feature_names)} features at order {self.order}"
            )
        object.__setattr__(self, "coefficients", coeffs)
        bounds = self.bounds
        if bounds is None:
            bounds = np.tile([-DEFAULT_COEFF_BOUND, DEFAULT_COEFF_BOUND], (self.dim, 1))
        bounds = np.asarray(bounds, dtype=float).reshape(self.dim, 2)
        object.__setattr__(self, "bounds", bounds)
        flat = coeffs.ravel()
        if np.any(flat < bounds[:, 0] - 1e-12) or np.any(flat > bounds[:, 1] + 1e-12):
            raise ModifierConfigError("coefficients outside declared bounds")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def dim(self) -> int:
        """Dimension of the flattened coefficient vector."""
        return len(self.feature_names) * (self.order + 1)

    def as_vector(self) -> np.ndarray:
        return self.coefficients.ravel().copy()

    def with_vector(self, w) -> "ModifierParams":
        """Same feature map and bounds, coefficients replaced by ``w``."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise ModifierConfigError(f"expected vector of length {self.dim}, got {w.shape}")
        return ModifierParams(
            feature_names=self.feature_names,
            order=self.order,
            coefficients=w.reshape(self.n_features, self.order + 1),
            bounds=self.bounds,
        )

    @classmethod
    def zeros(cls, feature_names, order, bounds=None) -> "ModifierParams":
        names = tuple(feature_names)
        return cls(names, order, np.zeros((len(names), order + 1)), bounds)

    def evaluate(self, features) -> float | np.ndarray:
        """Sum of per-feature polynomials.

        ``features`` has shape (n_features,) for a common modifier (identical
        value for every agent) or (n_agents, n_features) for per-agent
        evaluation; returns a scalar or an (n_agents,) array accordingly.
        """
        phi = np.asarray(features, dtype=float)
        if phi.shape[-1] != self.n_features:
            raise FeatureRangeError(
                f"feature vector has {phi.shape[-1]} entries, "
                f"modifier declares {self.feature_names}"
            )
        if not np.all(np.isfinite(phi)):
            bad = [n for n, v in zip(self.feature_names, np.atleast_2d(phi).T) if not np.all(np.isfinite(v))]
            raise FeatureRangeError(f"non-finite feature value for {bad}")
        # powers[..., f, k] = phi_f ** k, with phi**0 == 1 by convention
        powers = np.power(phi[..., None], np.arange(self.order + 1))
        return float(np.sum(powers * self.coefficients)) if phi.ndim == 1 else np.sum(
            powers * self.coefficients, axis=(-2, -1)
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "features": list(self.feature_names),
                "order": self.order,
                "bounds": self.bounds.tolist(),
                "coefficients": self.coefficients.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ModifierParams":
        data = json.loads(text)
        return cls(
            feature_names=tuple(data["features"]),
            order=int(data["order"]),
            coefficients=np.asarray(data["coefficients"], dtype=float),
            bounds=np.asarray(data["bounds"], dtype=float),
        )


@dataclass
class IncentiveLedger:
    """Per-step incentive payments summed over agents, plus the episode total."""

    per_step_payments: list[float]
    total: float

    @classmethod
    def from_payments(cls, payments) -> "IncentiveLedger":
        payments = [float(p) for p in payments]
        return cls(per_step_payments=payments, total=float(sum(payments)))


def is_weakly_budget_balanced(ledger: IncentiveLedger) -> bool:
    """True iff there is no net transfer of wealth to the agents (total <= 0)."""
    return ledger.total <= 0.0


def shaping_term(w: ModifierParams, gamma: float, prev, curr, feature_fn):
    """Equilibrium-preserving shaping increment gamma*Theta(curr) - Theta(prev).

    ``prev`` and ``curr`` are (state, joint_action) pairs; ``prev`` may be None
    only for the first step of an episode, in which case Theta(prev) is taken
    as 0 so the discounted episode total telescopes to a pure boundary term
    (gamma**T * Theta at the final step).
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    theta_curr = w.evaluate(feature_fn(*curr))
    theta_prev = 0.0 if prev is None else w.evaluate(feature_fn(*prev))
    return gamma * theta_curr - theta_prev
