"""Quasipolynomials and their ratios.

A quasipolynomial is a finite sum ``sum_i p_i(s) * exp(-s * theta_i)`` with
real polynomials ``p_i`` and nonnegative delays ``theta_i``.  Ratios of two
quasipolynomials (:class:`DelayRational`) model plants, controllers, coprime
factors and sensitivities of linear time-delay systems.

All objects are immutable.  Arithmetic never cancels common factors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DELAY_MERGE_RTOL",
    "COEFF_TRIM_RTOL",
    "PoleProximity",
    "Polynomial",
    "Quasipolynomial",
    "DelayRational",
    "qp_eval",
    "qp_add",
    "qp_mul",
    "qp_derivative",
    "dr_eval",
    "dr_add",
    "dr_sub",
    "dr_mul",
    "frequency_response",
]

DELAY_MERGE_RTOL = 1e-12
COEFF_TRIM_RTOL = 1e-14
POLE_FLOOR = 1e-300


class PoleProximity(ZeroDivisionError):
    """Raised when a ratio is evaluated on (or numerically at) a zero of its denominator."""

    def __init__(self, s, magnitude):
        self.s = s
        self.magnitude = magnitude
        super().__init__(f"denominator vanishes at s={s!r} (|den|={magnitude:.3g})")


class Polynomial:
    """Real polynomial with coefficients in ascending degree.

    ``Polynomial([c0, c1, c2])`` is ``c0 + c1*s + c2*s**2``.  Coefficients
    that are tiny relative to the largest one are dropped, and the trailing
    (highest degree) coefficient is nonzero unless the polynomial is zero.
    """

    __slots__ = ("_coeffs",)

    def __init__(self, coeffs: Iterable[float] = ()):
        c = np.asarray(list(coeffs), dtype=float).ravel()
        if c.size:
            big = np.max(np.abs(c))
            c = np.where(np.abs(c) <= COEFF_TRIM_RTOL * big, 0.0, c)
            nz = np.flatnonzero(c)
            c = c[: nz[-1] + 1] if nz.size else c[:0]
        c.setflags(write=False)
        self._coeffs = c

    @classmethod
    def from_roots(cls, roots: Sequence[float], gain: float = 1.0) -> "Polynomial":
        # np.poly gives descending order
        return cls(gain * np.real(np.poly(np.asarray(roots, dtype=float)))[::-1])

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def degree(self) -> int:
        """Degree, with -1 for the zero polynomial."""
        return len(self._coeffs) - 1

    def is_zero(self) -> bool:
        return len(self._coeffs) == 0

    def __call__(self, s):
        # Horner, in complex arithmetic
        s = np.asarray(s, dtype=complex)
        acc = np.zeros_like(s)
        for c in self._coeffs[::-1]:
            acc = acc * s + c
        return acc if acc.ndim else complex(acc)

    def derivative(self) -> "Polynomial":
        c = self._coeffs
        return Polynomial(c[1:] * np.arange(1, len(c)))

    def __add__(self, other: "Polynomial") -> "Polynomial":
        a, b = self._coeffs, other._coeffs
        n = max(len(a), len(b))
        out = np.zeros(n)
        out[: len(a)] += a
        out[: len(b)] += b
        return Polynomial(out)

    def __neg__(self) -> "Polynomial":
        return Polynomial(-self._coeffs)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            if self.is_zero() or other.is_zero():
                return Polynomial()
            return Polynomial(np.convolve(self._coeffs, other._coeffs))
        return Polynomial(self._coeffs * float(other))

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "Polynomial":
        out = Polynomial([1.0])
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return np.array_equal(self._coeffs, other._coeffs)

    def __hash__(self):
        return hash(self._coeffs.tobytes())

    def __repr__(self):
        return f"Polynomial({self._coeffs.tolist()})"


def _canonical_terms(pairs) -> tuple:
    pairs = [(float(d), p) for d, p in pairs if not p.is_zero()]
    if not pairs:
        return ()
    for d, _ in pairs:
        if d < 0 or not np.isfinite(d):
            raise ValueError(f"delay must be finite and nonnegative, got {d}")
    pairs.sort(key=lambda t: t[0])
    tol = DELAY_MERGE_RTOL * max(1.0, pairs[-1][0])
    merged = [list(pairs[0])]
    for d, p in pairs[1:]:
        if d - merged[-1][0] <= tol:
            merged[-1][1] = merged[-1][1] + p
        else:
            merged.append([d, p])
    return tuple((d, p) for d, p in merged if not p.is_zero())


class Quasipolynomial:
    """Finite sum of ``(delay, Polynomial)`` terms, kept in canonical form.

    Delays are strictly increasing, no two of them closer than the merge
    tolerance, and no term carries a zero polynomial.  The empty term list
    is the zero quasipolynomial.

    >>> q = Quasipolynomial.from_terms([(0, [-2, 1]), (1, [-1])])  # s - 2 - e^{-s}
    >>> q(0)
    (-3+0j)
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Iterable[tuple[float, Polynomial]] = ()):
        self._terms = _canonical_terms(terms)

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[float, Sequence[float]]]) -> "Quasipolynomial":
        return cls((d, Polynomial(c)) for d, c in terms)

    @classmethod
    def constant(cls, c: float, delay: float = 0.0) -> "Quasipolynomial":
        return cls([(delay, Polynomial([c]))])

    @classmethod
    def poly(cls, coeffs: Sequence[float], delay: float = 0.0) -> "Quasipolynomial":
        return cls([(delay, Polynomial(coeffs))])

    @property
    def terms(self) -> tuple:
        return self._terms

    @property
    def delays(self) -> tuple:
        return tuple(d for d, _ in self._terms)

    @property
    def max_delay(self) -> float:
        return self._terms[-1][0] if self._terms else 0.0

    @property
    def degree(self) -> int:
        """Largest polynomial degree over all terms (-1 when zero)."""
        return max((p.degree for _, p in self._terms), default=-1)

    def is_zero(self) -> bool:
        return not self._terms

    def is_polynomial(self) -> bool:
        return all(d == 0.0 for d, _ in self._terms)

    def principal(self) -> Polynomial:
        """The zero-delay polynomial (zero if there is no zero-delay term)."""
        if self._terms and self._terms[0][0] == 0.0:
            return self._terms[0][1]
        return Polynomial()

    def __call__(self, s):
        return qp_eval(self, s)

    def magnitude_scale(self, s):
        """Sum of term magnitudes at ``s``; the roundoff scale of :meth:`__call__`."""
        s = np.asarray(s, dtype=complex)
        acc = np.zeros(s.shape)
        for d, p in self._terms:
            mags = Polynomial(np.abs(p.coeffs))(np.abs(s)).real
            acc = acc + mags * np.exp(-s.real * d)
        return acc if acc.ndim else float(acc)

    def derivative(self) -> "Quasipolynomial":
        return qp_derivative(self)

    def __add__(self, other):
        return qp_add(self, _as_qp(other))

    __radd__ = __add__

    def __neg__(self):
        return Quasipolynomial((d, -p) for d, p in self._terms)

    def __sub__(self, other):
        return qp_add(self, -_as_qp(other))

    def __rsub__(self, other):
        return qp_add(_as_qp(other), -self)

    def __mul__(self, other):
        return qp_mul(self, _as_qp(other))

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = Quasipolynomial.constant(1.0)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, Quasipolynomial):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(self._terms)

    def to_list(self) -> list[dict]:
        return [{"delay": d, "coeffs": p.coeffs.tolist()} for d, p in self._terms]

    def __repr__(self):
        body = ", ".join(f"({d:g}, {p.coeffs.tolist()})" for d, p in self._terms)
        return f"Quasipolynomial([{body}])"


def _as_qp(x) -> Quasipolynomial:
    if isinstance(x, Quasipolynomial):
        return x
    if isinstance(x, Polynomial):
        return Quasipolynomial([(0.0, x)])
    return Quasipolynomial.constant(float(x))


def qp_eval(qp: Quasipolynomial, s):
    """Evaluate ``qp`` at a complex point or an array of points."""
    s_arr = np.asarray(s, dtype=complex)
    acc = np.zeros_like(s_arr)
    for d, p in qp.terms:
        val = p(s_arr)
        acc = acc + (val * np.exp(-s_arr * d) if d else val)
    return acc if acc.ndim else complex(acc)


def qp_add(a: Quasipolynomial, b: Quasipolynomial) -> Quasipolynomial:
    return Quasipolynomial(a.terms + b.terms)


def qp_mul(a: Quasipolynomial, b: Quasipolynomial) -> Quasipolynomial:
    return Quasipolynomial((da + db, pa * pb) for da, pa in a.terms for db, pb in b.terms)


def qp_derivative(qp: Quasipolynomial) -> Quasipolynomial:
    """Termwise ``(p'(s) - theta * p(s)) * exp(-s * theta)``."""
    return Quasipolynomial((d, p.derivative() - p * d) for d, p in qp.terms)


@dataclass(frozen=True)
class DelayRational:
    """Ratio ``num / den`` of two quasipolynomials."""

    num: Quasipolynomial
    den: Quasipolynomial

    def __post_init__(self):
        if self.den.is_zero():
            raise ValueError("denominator is identically zero")

    @classmethod
    def from_terms(cls, num, den=((0.0, (1.0,)),)) -> "DelayRational":
        return cls(Quasipolynomial.from_terms(num), Quasipolynomial.from_terms(den))

    @classmethod
    def constant(cls, c: float) -> "DelayRational":
        return cls(Quasipolynomial.constant(c), Quasipolynomial.constant(1.0))

    @property
    def is_proper(self) -> bool:
        """Numerator degrees bounded by the zero-delay denominator degree."""
        lead = self.den.principal()
        if lead.is_zero():
            return False
        return self.num.degree <= lead.degree

    @property
    def is_strictly_proper(self) -> bool:
        lead = self.den.principal()
        if lead.is_zero():
            return False
        return self.num.degree < lead.degree

    def __call__(self, s):
        return dr_eval(self, s)

    def inv(self) -> "DelayRational":
        return DelayRational(self.den, self.num)

    def __add__(self, other):
        return dr_add(self, _as_dr(other))

    __radd__ = __add__

    def __sub__(self, other):
        return dr_sub(self, _as_dr(other))

    def __rsub__(self, other):
        return dr_sub(_as_dr(other), self)

    def __neg__(self):
        return DelayRational(-self.num, self.den)

    def __mul__(self, other):
        return dr_mul(self, _as_dr(other))

    __rmul__ = __mul__

    def __repr__(self):
        return f"DelayRational(num={self.num!r}, den={self.den!r})"


def _as_dr(x) -> DelayRational:
    if isinstance(x, DelayRational):
        return x
    return DelayRational(_as_qp(x), Quasipolynomial.constant(1.0))


def dr_eval(f: DelayRational, s, floor: float = POLE_FLOOR):
    """Evaluate ``f`` at ``s``; raises :class:`PoleProximity` on a denominator zero."""
    den = qp_eval(f.den, s)
    scale = np.maximum(1.0, f.den.magnitude_scale(s))
    bad = np.abs(den) <= floor * scale
    if np.any(bad):
        s_arr = np.atleast_1d(np.asarray(s, dtype=complex))
        i = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise PoleProximity(complex(s_arr[i]), float(np.abs(np.atleast_1d(den)[i])))
    return qp_eval(f.num, s) / den


def dr_mul(a: DelayRational, b: DelayRational) -> DelayRational:
    return DelayRational(a.num * b.num, a.den * b.den)


def dr_add(a: DelayRational, b: DelayRational) -> DelayRational:
    # a shared denominator is kept as is; this is not a cancellation
    if a.den == b.den:
        return DelayRational(a.num + b.num, a.den)
    return DelayRational(a.num * b.den + b.num * a.den, a.den * b.den)


def dr_sub(a: DelayRational, b: DelayRational) -> DelayRational:
    return dr_add(a, -b)


def frequency_response(f: DelayRational, omegas) -> np.ndarray:
    """``f(j*omega)`` for each omega, in order."""
    omegas = np.asarray(omegas, dtype=float)
    try:
        vals = dr_eval(f, 1j * omegas)
    except PoleProximity as exc:
        exc.omega = exc.s.imag
        raise
    return np.asarray(vals, dtype=complex).reshape(omegas.shape)
