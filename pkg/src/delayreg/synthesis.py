"""Gains of the FIR-delay parameter from harmonic regulation constraints.

Asymptotic rejection of a periodic signal with fundamental ``2*pi/T`` and
``M_d`` harmonics needs ``S(0) = S(j w_l) = 0``.  Through the affine
sensitivity this is the interpolation problem

    sum_k a_k exp(-j w_l k spacing) = D_p(j w_l) / N_G(j w_l),

which is linear in the gains once split into real and imaginary parts.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .factorization import (
    CoprimeFactorization,
    FirDelayParameter,
    assemble_sensitivity,
)
from .quasipoly import DelayRational, frequency_response

__all__ = [
    "RANK_RTOL",
    "REGULATION_TOL",
    "PlantZeroAtHarmonic",
    "RankDeficient",
    "HarmonicTarget",
    "RegulationSystem",
    "GainSolution",
    "DesignResult",
    "harmonic_frequencies",
    "rhs_targets",
    "build_linear_system",
    "aliased_harmonics",
    "solve_gains",
    "design_qm",
    "verify_regulation",
]

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10
REGULATION_TOL = 1e-8


class PlantZeroAtHarmonic(ValueError):
    """The plant numerator factor vanishes at a target frequency."""

    def __init__(self, omega: float):
        self.omega = omega
        super().__init__(
            f"N_G vanishes at omega={omega:.6g} rad/s; regulation at a plant zero is impossible"
        )


class RankDeficient(UserWarning):
    """The regulation system does not have full row rank."""


@dataclass(frozen=True)
class HarmonicTarget:
    period: float
    harmonic_count: int
    include_dc: bool = True

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be positive")
        if self.harmonic_count < 0:
            raise ValueError("harmonic_count must be nonnegative")

    @classmethod
    def from_frequency(cls, f_hz: float, harmonic_count: int, include_dc: bool = True):
        return cls(1.0 / f_hz, harmonic_count, include_dc)

    @property
    def n_rows(self) -> int:
        return 2 * self.harmonic_count + int(self.include_dc)


def harmonic_frequencies(target: HarmonicTarget) -> np.ndarray:
    """``[w_1, ..., w_Md]`` with ``w_l = 2 pi l / T``."""
    l = np.arange(1, target.harmonic_count + 1)
    return 2.0 * np.pi * l / target.period


def _numerator_zero(factor: DelayRational, s: complex) -> bool:
    scale = factor.num.magnitude_scale(s)
    return scale == 0 or abs(factor.num(s)) <= 1e-12 * scale


def rhs_targets(
    plant_f: CoprimeFactorization,
    ctrl_f: CoprimeFactorization,
    omegas: Sequence[float],
    include_dc: bool = True,
) -> np.ndarray:
    """``D_p(j w) / N_G(j w)`` at each target, DC first when included."""
    pts = ([0.0] if include_dc else []) + [float(w) for w in omegas]
    out = []
    for w in pts:
        s = 1j * w
        if _numerator_zero(plant_f.n, s):
            raise PlantZeroAtHarmonic(w)
        out.append(complex(ctrl_f.d(s)) / complex(plant_f.n(s)))
    return np.array(out, dtype=complex)


@dataclass(frozen=True)
class RegulationSystem:
    A: np.ndarray
    B: np.ndarray
    omegas: np.ndarray
    rhs_values: np.ndarray
    spacing: float
    include_dc: bool = True

    @property
    def shape(self) -> tuple:
        return self.A.shape


def build_linear_system(
    targets: Sequence[complex],
    omegas: Sequence[float],
    spacing: float,
    count: int,
    include_dc: bool = True,
) -> RegulationSystem:
    """Stack the DC row, the cosine rows and the sine rows of ``A x = B``.

    ``targets`` holds the DC value first when ``include_dc``.  The sine rows
    carry ``-Im(target)`` because ``exp(-j w tau)`` has imaginary part
    ``-sin(w tau)``.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    targets = np.asarray(targets, dtype=complex)
    omegas = np.asarray(omegas, dtype=float)
    harm = targets[1:] if include_dc else targets
    if len(harm) != len(omegas):
        raise ValueError("one target per harmonic frequency expected")

    tau = spacing * np.arange(count + 1)
    phase = np.outer(omegas, tau)
    rows = []
    rhs = []
    if include_dc:
        rows.append(np.ones((1, count + 1)))
        rhs.append([targets[0].real])
    rows += [np.cos(phase), np.sin(phase)]
    rhs += [harm.real, -harm.imag]
    A = np.vstack(rows)
    B = np.concatenate([np.asarray(r, dtype=float) for r in rhs])
    return RegulationSystem(A, B, omegas, targets, float(spacing), include_dc)


def aliased_harmonics(omegas: Sequence[float], spacing: float, atol: float = 1e-9) -> list:
    """Harmonics whose phase step ``w * spacing`` makes their rows degenerate.

    A harmonic is reported when ``w * spacing`` is a multiple of ``pi`` (its
    sine row vanishes) or when it coincides, modulo ``2 pi`` and up to sign,
    with the phase step of another harmonic or of DC.
    """
    out = []
    steps = [math.remainder(w * spacing, 2 * math.pi) for w in omegas]
    for i, (w, p) in enumerate(zip(omegas, steps)):
        if abs(math.remainder(p, math.pi)) <= atol:
            out.append(float(w))
            continue
        for q in steps[:i]:
            if abs(math.remainder(p - q, 2 * math.pi)) <= atol or abs(
                math.remainder(p + q, 2 * math.pi)
            ) <= atol:
                out.append(float(w))
                break
    return out


@dataclass(frozen=True)
class GainSolution:
    gains: np.ndarray
    residual_inf: float
    rank: int
    condition: float


Solver = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _min_norm_lstsq(A: np.ndarray, B: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    U, sig, Vt = np.linalg.svd(A, full_matrices=False)
    if sig.size == 0 or sig[0] == 0:
        return np.zeros(A.shape[1])
    keep = sig > rtol * sig[0]
    coef = (U[:, keep].T @ B) / sig[keep]
    return Vt[keep].T @ coef


def solve_gains(system: RegulationSystem, solver: Optional[Solver] = None) -> GainSolution:
    """Minimum-norm least-squares gains via the SVD.

    ``solver`` may replace the default with any routine returning ``x`` for
    ``(A, B)``, e.g. a constrained optimizer.  Rank and conditioning are
    always reported for ``A`` itself.
    """
    A, B = system.A, system.B
    sig = np.linalg.svd(A, compute_uv=False)
    smax = sig[0] if sig.size else 0.0
    rank = int(np.sum(sig > RANK_RTOL * smax)) if smax > 0 else 0
    smin = sig[min(A.shape) - 1] if sig.size else 0.0
    condition = float(smax / smin) if smin > 0 else math.inf

    x = np.asarray(_min_norm_lstsq(A, B) if solver is None else solver(A, B), dtype=float)
    residual = float(np.max(np.abs(A @ x - B))) if B.size else 0.0

    if rank < A.shape[0]:
        msg = f"regulation system has rank {rank} < {A.shape[0]} rows; residual {residual:.3g}"
        alias = aliased_harmonics(system.omegas, system.spacing)
        if alias:
            msg += "; aliased harmonic(s) at omega = " + ", ".join(f"{w:.6g}" for w in alias)
            msg += " rad/s (omega * spacing hits a multiple of pi)"
        warnings.warn(msg, RankDeficient, stacklevel=2)
    return GainSolution(x, residual, rank, condition)


@dataclass(frozen=True)
class DesignResult:
    qm: FirDelayParameter
    residual_inf: float
    rank: int
    condition: float
    sensitivity_at_harmonics: np.ndarray
    system: RegulationSystem = field(repr=False)
    omegas: np.ndarray = field(repr=False)
    tol: float = REGULATION_TOL

    @property
    def full_rank(self) -> bool:
        return self.rank == self.system.A.shape[0]

    @property
    def passed(self) -> bool:
        return bool(np.all(self.sensitivity_at_harmonics <= self.tol))


def verify_regulation(
    sensitivity: DelayRational,
    omegas: Sequence[float],
    include_dc: bool = True,
    tol: float = REGULATION_TOL,
) -> np.ndarray:
    """``|S(0)|`` (when ``include_dc``) followed by ``|S(j w_l)|``.

    Regulation holds when every entry is ``<= tol``.
    """
    pts = ([0.0] if include_dc else []) + [float(w) for w in omegas]
    mags = np.abs(frequency_response(sensitivity, pts))
    if np.any(mags > tol):
        log.debug("regulation check failed: max |S| = %.3g > %.3g", mags.max(), tol)
    return mags


def design_qm(
    plant_f: CoprimeFactorization,
    ctrl_f: CoprimeFactorization,
    target: HarmonicTarget,
    spacing: float,
    count: int,
    tol: float = REGULATION_TOL,
    solver: Optional[Solver] = None,
) -> DesignResult:
    """Targets, linear system, gains, then the sensitivity check at the harmonics."""
    omegas = harmonic_frequencies(target)
    if count + 1 < target.n_rows:
        warnings.warn(
            f"{count + 1} gains for {target.n_rows} constraints; full row rank is impossible",
            RankDeficient,
            stacklevel=2,
        )
    targets = rhs_targets(plant_f, ctrl_f, omegas, target.include_dc)
    system = build_linear_system(targets, omegas, spacing, count, target.include_dc)
    sol = solve_gains(system, solver)
    qm = FirDelayParameter(spacing, tuple(sol.gains))
    sens = assemble_sensitivity(plant_f, ctrl_f, qm)
    check = verify_regulation(sens, omegas, target.include_dc, tol)
    return DesignResult(
        qm=qm,
        residual_inf=sol.residual_inf,
        rank=sol.rank,
        condition=sol.condition,
        sensitivity_at_harmonics=check,
        system=system,
        omegas=omegas,
        tol=tol,
    )
