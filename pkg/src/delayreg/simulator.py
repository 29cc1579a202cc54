"""Fixed-step simulation of delay-rational blocks and the augmented loop.

Each proper block ``den(s) y = num(s) u`` is realized without derivatives
of its input or output.  Writing both sides as polynomials in ``s`` whose
coefficients are delay operators and dividing by ``s^n`` gives

    y      = beta_n u - (alpha_n - 1) y + x_1
    x_k'   = beta_{n-k} u - alpha_{n-k} y + x_{k+1},     k = 1..n

(with ``alpha_n`` normalized to 1 at zero delay and ``x_{n+1} = 0``).
Neutral terms appear as delayed output samples in the output equation.

Time stepping is explicit Heun.  All delays are whole multiples of the
step, so every delayed sample needed by either stage is already stored.
"""

from __future__ import annotations

import csv
import graphlib
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .factorization import CoprimeFactorization, FirDelayParameter
from .quasipoly import DelayRational

__all__ = [
    "NotRealizable",
    "AlgebraicLoop",
    "StepMismatch",
    "FourierSignal",
    "DdeRealization",
    "SimScenario",
    "TimeSeries",
    "fourier_value",
    "realize_dde",
    "simulate_block",
    "simulate_closed_loop",
    "steady_state_residual",
]


class NotRealizable(ValueError):
    pass


class AlgebraicLoop(ValueError):
    pass


class StepMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FourierSignal:
    """``c0/2 + sum_l c_l cos(2 pi l t / T - phi_l)``."""

    c0: float = 0.0
    harmonics: tuple = ()
    period: float = 1.0

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be positive")
        object.__setattr__(
            self, "harmonics", tuple((float(c), float(p)) for c, p in self.harmonics)
        )

    @classmethod
    def zero(cls) -> "FourierSignal":
        return cls()

    @property
    def peak(self) -> float:
        """Upper bound ``|c0|/2 + sum |c_l|``; attained when all phases are zero."""
        return abs(self.c0) / 2 + sum(abs(c) for c, _ in self.harmonics)

    def scaled(self, k: float) -> "FourierSignal":
        return FourierSignal(k * self.c0, tuple((k * c, p) for c, p in self.harmonics), self.period)

    def __call__(self, t):
        return fourier_value(self, t)


def fourier_value(sig: FourierSignal, t):
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, sig.c0 / 2.0)
    for l, (c, phi) in enumerate(sig.harmonics, start=1):
        out = out + c * np.cos(2 * np.pi * l * t / sig.period - phi)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DdeRealization:
    """Derivative-free realization of one proper block.

    ``out_u`` and ``out_y`` are the ``(delay, coeff)`` terms of the output
    equation (``out_y`` delays are all positive); ``state_u[k]`` and
    ``state_y[k]`` feed ``x_{k+1}'``.  ``feedthrough`` is the zero-delay
    coefficient of ``u`` in the output equation.
    """

    order: int
    out_u: tuple
    out_y: tuple
    state_u: tuple
    state_y: tuple

    @property
    def feedthrough(self) -> float:
        return sum(c for d, c in self.out_u if d == 0.0)

    @property
    def delays(self) -> list:
        ds = [d for d, _ in self.out_u + self.out_y]
        for terms in self.state_u + self.state_y:
            ds += [d for d, _ in terms]
        return ds


def _operator_coeffs(qp, k: int, scale: float) -> tuple:
    out = []
    for d, p in qp.terms:
        if k < len(p.coeffs) and p.coeffs[k] != 0:
            out.append((d, float(p.coeffs[k]) / scale))
    return tuple(out)


def realize_dde(block: DelayRational) -> DdeRealization:
    lead = block.den.principal()
    if lead.is_zero():
        raise NotRealizable("denominator has no zero-delay term")
    n = lead.degree
    if block.den.degree > n or block.num.degree > n:
        raise NotRealizable(
            "a delayed denominator term or a numerator term exceeds the degree of the "
            "zero-delay denominator polynomial"
        )
    L = float(lead.coeffs[n])
    alpha = [_operator_coeffs(block.den, k, L) for k in range(n + 1)]
    beta = [_operator_coeffs(block.num, k, L) for k in range(n + 1)]
    out_y = tuple((d, -c) for d, c in alpha[n] if d != 0.0)
    state_u = tuple(beta[n - k] for k in range(1, n + 1))
    state_y = tuple(tuple((d, -c) for d, c in alpha[n - k]) for k in range(1, n + 1))
    return DdeRealization(n, beta[n], out_y, state_u, state_y)


class _Runner:
    """History buffers and state of one realized block on a fixed grid."""

    def __init__(self, real: DdeRealization, h: float, n_steps: int, y_init=0.0):
        self.real = real
        self.n = real.order
        self.x = np.zeros(self.n)

        def steps(d):
            k = d / h
            r = round(k)
            if abs(k - r) > 1e-9 * max(1.0, k):
                raise StepMismatch(f"delay {d} is not an integer multiple of h={h}")
            return int(r)

        all_steps = [steps(d) for d in real.delays] or [0]
        self.off = max(all_steps)
        size = n_steps + 1 + self.off
        self.u = [0.0] * size
        self.y = [float(y_init)] * self.off + [0.0] * (n_steps + 1)
        self.ft = real.feedthrough
        self.out_u = [(steps(d), c) for d, c in real.out_u if d != 0.0]
        self.out_y = [(steps(d), c) for d, c in real.out_y]
        self.st_u0 = [sum(c for d, c in t if d == 0.0) for t in real.state_u]
        self.st_y0 = [sum(c for d, c in t if d == 0.0) for t in real.state_y]
        self.st_u = [[(steps(d), c) for d, c in t if d != 0.0] for t in real.state_u]
        self.st_y = [[(steps(d), c) for d, c in t if d != 0.0] for t in real.state_y]

    def free_output(self, i: int, x) -> float:
        """Output at grid index ``i`` minus the instantaneous input contribution."""
        j = i + self.off
        u, y = self.u, self.y
        acc = x[0] if self.n else 0.0
        for k, c in self.out_u:
            acc += c * u[j - k]
        for k, c in self.out_y:
            acc += c * y[j - k]
        return acc

    def output(self, i: int, x, u_now: float) -> float:
        return self.free_output(i, x) + self.ft * u_now

    def deriv(self, i: int, x, u_now: float, y_now: float) -> np.ndarray:
        j = i + self.off
        u, y = self.u, self.y
        dx = np.empty(self.n)
        for k in range(self.n):
            acc = self.st_u0[k] * u_now + self.st_y0[k] * y_now
            for m, c in self.st_u[k]:
                acc += c * u[j - m]
            for m, c in self.st_y[k]:
                acc += c * y[j - m]
            if k + 1 < self.n:
                acc += x[k + 1]
            dx[k] = acc
        return dx

    def store(self, i: int, u_now: float, y_now: float):
        j = i + self.off
        self.u[j] = u_now
        self.y[j] = y_now


def simulate_block(
    block: DelayRational,
    u: Callable[[float], float],
    t_end: float,
    h: float,
    initial_output: float = 0.0,
) -> tuple:
    """Drive one block with ``u(t)`` from constant output history ``initial_output``.

    Returns ``(t, y)``.
    """
    real = realize_dde(block)
    n_steps = int(math.floor(t_end / h + 1e-9))
    r = _Runner(real, h, n_steps, y_init=initial_output)
    t = h * np.arange(n_steps + 1)
    uu = [float(u(ti)) for ti in t]
    if r.n:
        # match the output history at t = 0
        r.x[0] = initial_output - r.free_output(0, np.zeros(r.n)) - r.ft * uu[0]
    y = np.empty(n_steps + 1)
    y[0] = r.output(0, r.x, uu[0])
    r.store(0, uu[0], y[0])
    for i in range(n_steps):
        k1 = r.deriv(i, r.x, uu[i], y[i])
        xp = r.x + h * k1
        yp = r.output(i + 1, xp, uu[i + 1])
        r.store(i + 1, uu[i + 1], yp)
        k2 = r.deriv(i + 1, xp, uu[i + 1], yp)
        r.x = r.x + 0.5 * h * (k1 + k2)
        y[i + 1] = r.output(i + 1, r.x, uu[i + 1])
        r.store(i + 1, uu[i + 1], y[i + 1])
    return t, y


@dataclass(frozen=True)
class SimScenario:
    plant_f: CoprimeFactorization
    ctrl_f: CoprimeFactorization
    qm: FirDelayParameter
    disturbance: FourierSignal
    t_disturbance_on: float
    t_augmentation_on: float
    t_end: float
    h: float = 1e-3
    reference: FourierSignal = field(default_factory=FourierSignal.zero)
    initial_output: float = 0.0
    ramp: float = 0.0

    def __post_init__(self):
        if not (0 <= self.t_disturbance_on and 0 <= self.t_augmentation_on):
            raise ValueError("switching times must be nonnegative")
        if self.t_end <= 0 or not self.h > 0:
            raise ValueError("t_end and h must be positive")
        if self.ramp < 0:
            raise ValueError("ramp must be nonnegative")

    def gate(self, t: float) -> float:
        if t < self.t_augmentation_on:
            return 0.0
        if self.ramp == 0:
            return 1.0
        return min(1.0, (t - self.t_augmentation_on) / self.ramp)


@dataclass(frozen=True)
class TimeSeries:
    t: np.ndarray
    y: np.ndarray
    u: np.ndarray
    d: np.ndarray
    e: np.ndarray
    z: np.ndarray = field(default=None, repr=False)  # Q_M input, for diagnostics

    def window(self, t0: float, t1: float) -> np.ndarray:
        return (self.t >= t0 - 1e-9) & (self.t <= t1 + 1e-9)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "y", "u", "d", "e"])
        for row in zip(self.t, self.y, self.u, self.d, self.e):
            w.writerow([format(float(v), ".17g") for v in row])
        return buf.getvalue()


def _evaluation_order(sources: dict, feedthrough: dict) -> list:
    """Blocks ordered so every instantaneous dependency is evaluated first."""
    graph = {}
    for name, srcs in sources.items():
        deps = {s for _, s in srcs if s in sources} if feedthrough[name] != 0 else set()
        graph[name] = deps
    try:
        return list(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError as exc:
        cycle = " -> ".join(exc.args[1])
        raise AlgebraicLoop(f"feedback cycle without a strictly proper block: {cycle}") from None


def simulate_closed_loop(scenario: SimScenario) -> TimeSeries:
    """Simulate the loop of plant ``G`` and the augmented controller.

    Controller wiring: ``z = D_p^{-1}(e + N_G w)``, ``w = gate * Q_M z``,
    ``u = N_p z + D_G w``.  The disturbance adds to the plant output.
    """
    sc = scenario
    h = sc.h
    n_steps = int(math.floor(sc.t_end / h + 1e-9))
    blocks = {
        "G": sc.plant_f.original,
        "Dp_inv": sc.ctrl_f.d.inv(),
        "Np": sc.ctrl_f.n,
        "Qm": sc.qm.as_rational(),
        "Ng": sc.plant_f.n,
        "Dg": sc.plant_f.d,
    }
    # input of each block as a signed sum of block outputs and external signals
    sources = {
        "G": [(1.0, "Np"), (1.0, "Dg")],
        "Dp_inv": [(1.0, "r"), (-1.0, "G"), (-1.0, "d"), (1.0, "Ng")],
        "Np": [(1.0, "Dp_inv")],
        "Qm": [(1.0, "Dp_inv")],
        "Ng": [(1.0, "Qm")],
        "Dg": [(1.0, "Qm")],
    }
    reals = {k: realize_dde(b) for k, b in blocks.items()}
    order = _evaluation_order(sources, {k: r.feedthrough for k, r in reals.items()})
    runners = {
        k: _Runner(r, h, n_steps, y_init=sc.initial_output if k == "G" else 0.0)
        for k, r in reals.items()
    }
    g = runners["G"]
    if g.n:
        g.x[0] = sc.initial_output - g.free_output(0, np.zeros(g.n))

    t = h * np.arange(n_steps + 1)
    d_sig = np.where(t >= sc.t_disturbance_on - 1e-12, sc.disturbance(t), 0.0)
    r_sig = np.asarray(sc.reference(t), dtype=float) * np.ones_like(t)
    gate = np.array([sc.gate(ti) for ti in t])

    def evaluate(i, states):
        sig = {"r": r_sig[i], "d": d_sig[i]}
        for name in order:
            run = runners[name]
            val = run.free_output(i, states[name])
            if run.ft != 0:
                # instantaneous sources precede this block in `order`
                val += run.ft * sum(c * sig[s] for c, s in sources[name])
            if name == "Qm":
                val *= gate[i]
            sig[name] = val
        inputs = {name: sum(c * sig[s] for c, s in sources[name]) for name in order}
        return sig, inputs

    names = list(blocks)
    y_out = np.empty(n_steps + 1)
    u_out = np.empty(n_steps + 1)
    z_out = np.empty(n_steps + 1)

    def record(i, sig, inputs):
        for k in names:
            runners[k].store(i, inputs[k], sig[k])
        y_out[i] = sig["G"] + d_sig[i]
        u_out[i] = inputs["G"]
        z_out[i] = sig["Dp_inv"]

    states = {k: runners[k].x for k in names}
    sig, inputs = evaluate(0, states)
    record(0, sig, inputs)
    for i in range(n_steps):
        k1 = {k: runners[k].deriv(i, states[k], inputs[k], sig[k]) for k in names}
        pred = {k: states[k] + h * k1[k] for k in names}
        sig_p, in_p = evaluate(i + 1, pred)
        record(i + 1, sig_p, in_p)
        k2 = {k: runners[k].deriv(i + 1, pred[k], in_p[k], sig_p[k]) for k in names}
        states = {k: states[k] + 0.5 * h * (k1[k] + k2[k]) for k in names}
        sig, inputs = evaluate(i + 1, states)
        record(i + 1, sig, inputs)

    e_out = r_sig - y_out
    return TimeSeries(t, y_out, u_out, d_sig, e_out, z_out)


def steady_state_residual(ts: TimeSeries, window: float, t_stop: Optional[float] = None) -> float:
    """``max |e|`` over the last ``window`` seconds before ``t_stop`` (default: end)."""
    t1 = ts.t[-1] if t_stop is None else t_stop
    mask = ts.window(t1 - window, t1)
    if not mask.any():
        raise ValueError("empty window")
    return float(np.max(np.abs(ts.e[mask])))
