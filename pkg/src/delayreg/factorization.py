"""Stable, proper coprime factorizations and the augmented controller.

A plant ``G = N_G / D_G`` and a stabilizing controller ``C_p = N_p / D_p``
are both written as ratios of stable, proper delay-rational functions.  An
FIR-delay parameter ``Q_M(s) = sum_k a_k exp(-s k spacing)`` then augments
the controller to

    C = (N_p + D_G Q_M) / (D_p - N_G Q_M)

and the sensitivity becomes affine in ``Q_M``:

    S = U_p^{-1} D_G (D_p - N_G Q_M),    U_p = D_G D_p + N_G N_p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .quasipoly import DelayRational, Polynomial, Quasipolynomial

__all__ = [
    "FactorizationError",
    "InvalidPole",
    "InvalidMu",
    "ImproperPlant",
    "UnstableFactor",
    "STABILITY_WINDOW",
    "CoprimeFactorization",
    "FirDelayParameter",
    "factorize_pi",
    "factorize_static",
    "factorize_delayed_first_order",
    "factorize_by_shift",
    "compute_up",
    "assemble_controller",
    "assemble_sensitivity",
    "check_factor_stability",
]

# (re_min, re_max, im_min, im_max) searched for delayed factor denominators
STABILITY_WINDOW = (-1.0, 10.0, 0.0, 200.0)


class FactorizationError(ValueError):
    pass


class InvalidPole(FactorizationError):
    pass


class InvalidMu(FactorizationError):
    pass


class ImproperPlant(FactorizationError):
    pass


class UnstableFactor(FactorizationError):
    def __init__(self, which: str, root: complex):
        self.which = which
        self.root = root
        super().__init__(f"factor {which} has a denominator root at {root:.6g} (Re >= 0)")


def _shift(pole: float, power: int = 1) -> Quasipolynomial:
    return Quasipolynomial([(0.0, Polynomial([pole, 1.0]) ** power)])


@dataclass(frozen=True)
class CoprimeFactorization:
    """``original = n / d`` with ``n`` and ``d`` stable and proper."""

    n: DelayRational
    d: DelayRational
    original: DelayRational

    def __post_init__(self):
        for name in ("n", "d"):
            if not getattr(self, name).is_proper:
                raise ImproperPlant(f"factor {name} is not proper")

    def ratio(self, s):
        """``n(s) / d(s)``; agrees with ``original(s)`` wherever both are defined."""
        return self.n(s) / self.d(s)


@dataclass(frozen=True)
class FirDelayParameter:
    """Weighted lumped delays ``Q_M(s) = sum_k gains[k] * exp(-s * k * spacing)``."""

    spacing: float
    gains: tuple = field(default=(0.0,))

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "gains", tuple(float(a) for a in self.gains))
        if not self.gains:
            raise ValueError("at least one gain (a_0) is required")

    @classmethod
    def zeros(cls, spacing: float, count: int) -> "FirDelayParameter":
        return cls(spacing, (0.0,) * (count + 1))

    @property
    def count(self) -> int:
        return len(self.gains) - 1

    @property
    def span(self) -> float:
        return self.spacing * self.count

    @property
    def delays(self) -> np.ndarray:
        return self.spacing * np.arange(self.count + 1)

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        out = sum(a * np.exp(-s * tau) for a, tau in zip(self.gains, self.delays))
        return out if np.ndim(out) else complex(out)

    def as_rational(self) -> DelayRational:
        num = Quasipolynomial((k * self.spacing, Polynomial([a])) for k, a in enumerate(self.gains))
        return DelayRational(num, Quasipolynomial.constant(1.0))

    def combine(self, alpha: float, other: "FirDelayParameter", beta: float) -> "FirDelayParameter":
        """Gainwise ``alpha * self + beta * other`` (same spacing and count)."""
        if other.spacing != self.spacing or other.count != self.count:
            raise ValueError("parameters must share spacing and count")
        return FirDelayParameter(
            self.spacing, tuple(alpha * a + beta * b for a, b in zip(self.gains, other.gains))
        )


def factorize_pi(kp: float, ki: float, pole: float = 1.0) -> CoprimeFactorization:
    """PI controller ``(kp s + ki)/s`` as ``n = (kp s + ki)/(s + pole)``, ``d = s/(s + pole)``."""
    if not pole > 0:
        raise InvalidPole(f"factorization pole must be positive, got {pole}")
    if kp == 0 and ki == 0:
        raise FactorizationError("kp and ki cannot both be zero; use factorize_static")
    den = _shift(pole)
    num_c = Quasipolynomial.poly([ki, kp])
    s = Quasipolynomial.poly([0.0, 1.0])
    return CoprimeFactorization(
        n=DelayRational(num_c, den),
        d=DelayRational(s, den),
        original=DelayRational(num_c, s),
    )


def factorize_static(gain: float) -> CoprimeFactorization:
    """Static gain controller (possibly zero): ``n = gain``, ``d = 1``."""
    return CoprimeFactorization(
        n=DelayRational.constant(gain),
        d=DelayRational.constant(1.0),
        original=DelayRational.constant(gain),
    )


def factorize_delayed_first_order(
    a: float, tau: float, mu: float, gain: float = 1.0
) -> CoprimeFactorization:
    """Factor ``gain * exp(-s tau)/(s - a)`` over ``s^2 + 2 sqrt(mu) s + mu``.

    The delay is carried by the numerator factor so that both factors stay
    stable and causal.
    """
    if not mu > 0:
        raise InvalidMu(f"mu must be positive, got {mu}")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    den = Quasipolynomial.poly([mu, 2.0 * math.sqrt(mu), 1.0])
    plant_num = Quasipolynomial.constant(gain, delay=tau)
    plant_den = Quasipolynomial.poly([-a, 1.0])
    return CoprimeFactorization(
        n=DelayRational(plant_num * mu, den),
        d=DelayRational(plant_den * mu, den),
        original=DelayRational(plant_num, plant_den),
    )


def factorize_by_shift(plant: DelayRational, shift_pole: float = 1.0) -> CoprimeFactorization:
    """Divide numerator and denominator by ``(s + shift_pole)^m``.

    ``m`` is the largest polynomial degree occurring in the plant, which
    makes both factors proper.  Stability of ``D_G`` is not implied for
    every plant; see :func:`check_factor_stability`.
    """
    if not shift_pole > 0:
        raise InvalidPole(f"shift pole must be positive, got {shift_pole}")
    if not plant.is_proper:
        raise ImproperPlant("plant is not proper")
    m = max(plant.num.degree, plant.den.degree)
    den = _shift(shift_pole, m)
    return CoprimeFactorization(
        n=DelayRational(plant.num, den),
        d=DelayRational(plant.den, den),
        original=plant,
    )


def compute_up(plant_f: CoprimeFactorization, ctrl_f: CoprimeFactorization) -> DelayRational:
    """``U_p = D_G D_p + N_G N_p``, uncancelled."""
    return plant_f.d * ctrl_f.d + plant_f.n * ctrl_f.n


def assemble_controller(
    plant_f: CoprimeFactorization, ctrl_f: CoprimeFactorization, qm: FirDelayParameter
) -> DelayRational:
    q = qm.as_rational()
    return (ctrl_f.n + plant_f.d * q) * (ctrl_f.d - plant_f.n * q).inv()


def assemble_sensitivity(
    plant_f: CoprimeFactorization, ctrl_f: CoprimeFactorization, qm: FirDelayParameter
) -> DelayRational:
    q = qm.as_rational()
    return compute_up(plant_f, ctrl_f).inv() * plant_f.d * (ctrl_f.d - plant_f.n * q)


def check_factor_stability(
    factorization: CoprimeFactorization, name: str = "", window: Sequence[float] = STABILITY_WINDOW
) -> None:
    """Raise :class:`UnstableFactor` if a factor denominator has a root with Re >= 0.

    Polynomial denominators are checked exactly; delayed ones only inside
    ``window``.
    """
    from .spectrum import RegionSpec, find_roots

    for label, factor in (("n", factorization.n), ("d", factorization.d)):
        den = factor.den
        if den.is_polynomial():
            coeffs = den.principal().coeffs
            roots = np.roots(coeffs[::-1]) if len(coeffs) > 1 else []
        else:
            roots = [r.s for r in find_roots(den, RegionSpec(*window)).roots]
        for root in roots:
            if root.real >= -1e-9:
                raise UnstableFactor(f"{name}{label}", complex(root))
