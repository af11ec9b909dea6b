"""Periodic probing signals and frequency-plan validation.

Signals are unit-amplitude, zero-mean and ``2*pi``-periodic. Frequencies are
``omega_i = 2*pi*kappa_i/eps_omega`` with ``kappa_i`` held as exact fractions,
so common periods and harmonic collisions are decided in rational arithmetic.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SignalKind",
    "ProbingPlan",
    "OrthogonalityReport",
    "signal_value",
    "wave",
    "probe_vector",
    "common_period",
    "validate_orthogonality",
    "signal_moments",
    "parse_kappa",
    "aligned_step",
    "sampled_mean_bias",
]

MAX_DENOMINATOR = 10**6
CROSS_TOL = 1e-8


class SignalKind(str, enum.Enum):
    SINUSOID = "sinusoid"
    SQUARE = "square"
    TRIANGLE = "triangle"

    @property
    def eta_d(self) -> float:
        return _ETA[self]

    @property
    def odd_harmonics_only(self) -> bool:
        return self is not SignalKind.SINUSOID


_ETA = {SignalKind.SINUSOID: 0.5, SignalKind.SQUARE: 1.0, SignalKind.TRIANGLE: 1.0 / 3.0}


def wave(kind: SignalKind, cycles):
    """Signal value as a function of phase measured in cycles (period 1)."""
    c = np.asarray(cycles, dtype=float)
    frac = c - np.floor(c)
    if kind is SignalKind.SINUSOID:
        return np.sin(2.0 * np.pi * c)
    if kind is SignalKind.SQUARE:
        return np.where(frac < 0.5, 1.0, -1.0)
    if kind is SignalKind.TRIANGLE:
        return np.where(frac < 0.25, 4.0 * frac, np.where(frac < 0.75, 2.0 - 4.0 * frac, 4.0 * frac - 4.0))
    raise ValueError(f"unknown signal kind {kind!r}")


def signal_value(kind: SignalKind, t):
    """``d(t)`` for the given kind; period ``2*pi``, maximum 1.

    The square wave is ``+1`` on ``[2k*pi, (2k+1)*pi)`` and ``-1`` on
    ``[(2k+1)*pi, (2k+2)*pi)``.
    """
    kind = SignalKind(kind)
    out = wave(kind, np.asarray(t, dtype=float) / (2.0 * np.pi))
    return float(out) if np.ndim(out) == 0 else out


def parse_kappa(value) -> Fraction:
    """Read a frequency multiplier given as ``"p/q"``, an int, or a decimal.

    Decimals become fractions with denominator at most 10**6; a warning shows
    the fraction actually used when it is not an exact transcription.
    """
    if isinstance(value, Fraction):
        k = value
    elif isinstance(value, int):
        k = Fraction(value)
    elif isinstance(value, str):
        k = Fraction(value.strip())
        if k.denominator > MAX_DENOMINATOR:
            k = k.limit_denominator(MAX_DENOMINATOR)
    else:
        x = float(value)
        k = Fraction(repr(x)).limit_denominator(MAX_DENOMINATOR)
        if float(k) != x:
            warnings.warn(f"kappa {x!r} rationalized to {k} = {float(k)!r}", stacklevel=2)
    if k <= 0:
        raise ValueError(f"kappa must be positive, got {value!r}")
    return k


@dataclass(frozen=True)
class ProbingPlan:
    kind: SignalKind
    eps_a: float
    eps_omega: float
    kappa: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "kind", SignalKind(self.kind))
        object.__setattr__(self, "kappa", tuple(parse_kappa(k) for k in self.kappa))
        if not self.eps_a > 0 or not self.eps_omega > 0:
            raise ValueError("eps_a and eps_omega must be positive")
        if not self.kappa:
            raise ValueError("at least one frequency multiplier is required")
        object.__setattr__(self, "_kappa_f", np.array([float(k) for k in self.kappa]))

    @property
    def eta_d(self) -> float:
        return self.kind.eta_d

    @property
    def n(self) -> int:
        return len(self.kappa)

    @property
    def omega(self) -> np.ndarray:
        return 2.0 * np.pi * self._kappa_f / self.eps_omega

    @property
    def kappa_float(self) -> np.ndarray:
        return self._kappa_f

    def cycles(self, t: float) -> np.ndarray:
        return self._kappa_f * (t / self.eps_omega)

    def max_step(self, steps_per_period: int = 40) -> float:
        return self.eps_omega / (steps_per_period * float(max(self.kappa)))

    def subplan(self, index) -> "ProbingPlan":
        kap = self.kappa[index] if isinstance(index, slice) else tuple(self.kappa[i] for i in index)
        return ProbingPlan(self.kind, self.eps_a, self.eps_omega, kap)

    @classmethod
    def published_plan(cls, kind=SignalKind.SQUARE, n: int = 7, eps: float = 0.025) -> "ProbingPlan":
        """The ``kappa_i = 1.2 + 1.5 i`` plan used in the 69-node feeder study."""
        kap = tuple(Fraction(6, 5) + Fraction(3, 2) * i for i in range(1, n + 1))
        return cls(kind, eps, eps, kap)


def _steps_per_period(plan: ProbingPlan, h: float) -> Fraction | None:
    M = Fraction(plan.eps_omega / h).limit_denominator(10**6)
    if abs(float(M) - plan.eps_omega / h) > 1e-9 * float(M):
        return None
    return M


def sampled_mean_bias(plan: ProbingPlan, h: float) -> float:
    """Largest mean of a probe component sampled at ``t0 + k h`` over its sampling cycle.

    Sampling a component at ``r`` equally spaced phases per cycle gives mean
    zero for sinusoids and triangles; for the square wave the point at phase 0
    is unpaired when ``r`` is odd and the sampled mean is ``1/r``. That mean is
    amplified by ``1/eps_a`` in the demodulator and biases the estimate.
    """
    if plan.kind is not SignalKind.SQUARE:
        return 0.0
    M = _steps_per_period(plan, h)
    if M is None:
        return 0.0
    worst = 0.0
    for k in plan.kappa:
        r = (M / k).numerator
        if r % 2:
            worst = max(worst, 1.0 / r)
    return worst


def aligned_step(plan: ProbingPlan, steps_per_period: int = 64, max_search: int = 100_000) -> float:
    """Step ``eps_omega / M`` with at least ``steps_per_period`` steps per fastest period.

    For square probing, ``M`` is the smallest admissible integer for which every
    component is sampled at an even number of phases per cycle, so the sampled
    probes have exactly zero mean.
    """
    M0 = math.ceil(steps_per_period * max(plan.kappa))
    if plan.kind is not SignalKind.SQUARE:
        return plan.eps_omega / M0
    for M in range(M0, M0 + max_search):
        if all((Fraction(M) / k).numerator % 2 == 0 for k in plan.kappa):
            return plan.eps_omega / M
    raise ValueError("no balanced sampling step found for this plan")


def probe_vector(plan: ProbingPlan, t: float) -> np.ndarray:
    """Component ``i`` is ``d(omega_i t)``."""
    return wave(plan.kind, plan.cycles(t))


def _period_units(kappas: Iterable[Fraction]) -> Fraction:
    """LCM of the periods ``1/kappa`` (in units of eps_omega)."""
    num, den = 1, 0
    for k in kappas:
        p = 1 / Fraction(k)
        num = math.lcm(num, p.numerator)
        den = math.gcd(den, p.denominator)
    return Fraction(num, den)


def common_period(plan: ProbingPlan, indices=None) -> float:
    """Common period of the probe components in ``indices`` (all if None).

    Computed as ``eps_omega * lcm(1/kappa_i, ...)`` in exact arithmetic, so for a
    pair it is a period of the product ``d(omega_i t) d(omega_j t)``.
    """
    if indices is None:
        idx = range(plan.n)
    elif isinstance(indices, int):
        idx = (indices,)
    else:
        idx = tuple(indices)
    return plan.eps_omega * float(_period_units(plan.kappa[i] for i in idx))


def _breakpoints(kappas: Sequence[Fraction], T: Fraction, pieces_per_cycle: int) -> list[Fraction]:
    pts = {Fraction(0), T}
    for k in kappas:
        step = 1 / (Fraction(k) * pieces_per_cycle)
        count = int(T / step)
        pts.update(step * m for m in range(count + 1))
    return sorted(p for p in pts if p <= T)


def _pieces(kind: SignalKind) -> int:
    return 2 if kind is SignalKind.SQUARE else 4


def periodic_average(kind: SignalKind, kappas: Sequence[Fraction], func, T_units: Fraction | None = None) -> np.ndarray:
    """Average of ``func(s)`` over one common period of the given components.

    ``s`` is time measured in units of ``eps_omega`` and ``func`` maps an array
    of such times (shape ``(q,)``) to an array ``(q, ...)``. Square and
    triangle signals are integrated piecewise between their breakpoints
    (midpoint and 8-point Gauss-Legendre respectively, exact for the
    piecewise-constant / piecewise-polynomial integrands met here); sinusoids
    use the trapezoidal rule, exact for trigonometric polynomials.
    """
    T = _period_units(kappas) if T_units is None else Fraction(T_units)
    Tf = float(T)
    if kind is SignalKind.SINUSOID:
        cycles = float(sum(Fraction(k) for k in kappas) * T)
        q = max(256, int(64 * cycles) + 1)
        s = np.arange(q) * (Tf / q)
        vals = np.asarray(func(s))
        return vals.mean(axis=0)
    bp = np.array([float(p) for p in _breakpoints(kappas, T, _pieces(kind))])
    a, b = bp[:-1], bp[1:]
    w_len = b - a
    if kind is SignalKind.SQUARE:
        s = 0.5 * (a + b)
        vals = np.asarray(func(s))
        return np.tensordot(w_len, vals, axes=(0, 0)) / Tf
    nodes, weights = np.polynomial.legendre.leggauss(8)
    s = (0.5 * (a + b))[:, None] + 0.5 * w_len[:, None] * nodes[None, :]
    vals = np.asarray(func(s.reshape(-1)))
    vals = vals.reshape((len(a), len(nodes)) + vals.shape[1:])
    w = 0.5 * w_len[:, None] * weights[None, :]
    return np.tensordot(w, vals, axes=([0, 1], [0, 1])) / Tf


def signal_moments(kind: SignalKind) -> dict:
    """Mean, mean square and maximum of ``d`` over one period, by quadrature."""
    kind = SignalKind(kind)
    one = (Fraction(1),)
    mean = float(periodic_average(kind, one, lambda s: wave(kind, s)))
    ms = float(periodic_average(kind, one, lambda s: wave(kind, s) ** 2))
    peak_phase = 0.0 if kind is SignalKind.SQUARE else 0.25
    return {"mean": mean, "mean_square": ms, "max": float(wave(kind, peak_phase))}


@dataclass
class OrthogonalityReport:
    ok: bool
    violations: list = field(default_factory=list)
    cross_integrals: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"orthogonality: {'ok' if self.ok else 'VIOLATED'}"]
        out += [f"  violation: {v}" for v in self.violations]
        for (i, j), (val, T) in sorted(self.cross_integrals.items()):
            out.append(f"  pair ({i + 1},{j + 1}): integral={val:.6e} period={T:.6e}")
        return out


def _odd_ratio(a: Fraction, b: Fraction) -> bool:
    r = Fraction(a) / Fraction(b)
    return r.numerator % 2 == 1 and r.denominator % 2 == 1


def validate_orthogonality(plan: ProbingPlan) -> OrthogonalityReport:
    """Check that every pair of probe components is orthogonal over its common period.

    Algebraic rules: multipliers must be distinct; for square and triangle waves
    (odd harmonics only) two components share a harmonic exactly when
    ``kappa_i / kappa_j`` in lowest terms has an odd numerator and an odd
    denominator, which includes ``kappa_i = (2k+1) kappa_j``. Independently,
    each cross-integral is computed by exact piecewise quadrature and flagged if
    it exceeds ``1e-8`` times the period. Violations are reported, not raised.
    """
    report = OrthogonalityReport(ok=True)
    kap = plan.kappa
    for i, j in combinations(range(plan.n), 2):
        if kap[i] == kap[j]:
            report.violations.append(f"kappa_{i + 1} == kappa_{j + 1} == {kap[i]}")
        elif plan.kind.odd_harmonics_only and _odd_ratio(kap[i], kap[j]):
            r = kap[i] / kap[j]
            report.violations.append(
                f"kappa_{i + 1}/kappa_{j + 1} = {r.numerator}/{r.denominator} (odd/odd): "
                f"{plan.kind.value} waves share harmonic {r.numerator * kap[j]}"
            )
        T_units = _period_units((kap[i], kap[j]))
        Tf = plan.eps_omega * float(T_units)
        if kap[i] == kap[j]:
            integral = 0.5 * Tf if plan.kind is SignalKind.SINUSOID else plan.eta_d * Tf
        else:
            avg = periodic_average(
                plan.kind,
                (kap[i], kap[j]),
                lambda s, a=float(kap[i]), b=float(kap[j]): wave(plan.kind, a * s) * wave(plan.kind, b * s),
                T_units,
            )
            integral = float(avg) * Tf
        report.cross_integrals[(i, j)] = (integral, Tf)
        if abs(integral) > CROSS_TOL * Tf:
            report.violations.append(
                f"pair ({i + 1},{j + 1}): cross-integral {integral:.3e} exceeds {CROSS_TOL:g} x period {Tf:.3e}"
            )
    report.ok = not report.violations
    return report
