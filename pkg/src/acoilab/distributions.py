"""Small one-dimensional laws used to build transition kernels.

Each law exposes ``pdf``, ``cdf``, an optional point mass (``atom``), its
support and a closed-form moment generating function.  ``difference`` builds
the law of ``eta - xi`` for independent ``eta``, ``xi``; closed forms are used
where they exist and a numerical convolution otherwise.  ``mgf_numeric`` is
the quadrature route, kept independent of the closed forms so the two can be
compared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special


class Law:
    atom: float | None = None  # location of a unit point mass, if any

    def pdf(self, z):
        raise NotImplementedError

    def cdf(self, z):
        raise NotImplementedError

    @property
    def support(self) -> tuple[float, float]:
        return (-math.inf, math.inf)

    def mean(self) -> float:
        raise NotImplementedError

    def mgf(self, kappa: float) -> float:
        raise NotImplementedError

    @property
    def density_bound(self) -> float:
        raise NotImplementedError

    def negated(self) -> "Law":
        raise NotImplementedError

    def shifted(self, c: float) -> "Law":
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Law):
    value: float

    @property
    def atom(self):
        return self.value

    def pdf(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def cdf(self, z):
        return np.where(np.asarray(z, dtype=float) >= self.value, 1.0, 0.0)

    @property
    def support(self):
        return (self.value, self.value)

    def mean(self):
        return self.value

    def mgf(self, kappa):
        return math.exp(kappa * self.value)

    @property
    def density_bound(self):
        return 0.0

    def negated(self):
        return Constant(-self.value)

    def shifted(self, c):
        return Constant(self.value + c)


@dataclass(frozen=True)
class Uniform(Law):
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("uniform law needs hi > lo")

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        return np.where((z >= self.lo) & (z <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def cdf(self, z):
        return np.clip((np.asarray(z, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    @property
    def support(self):
        return (self.lo, self.hi)

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def mgf(self, kappa):
        if kappa == 0:
            return 1.0
        return (math.exp(kappa * self.hi) - math.exp(kappa * self.lo)) / (kappa * (self.hi - self.lo))

    @property
    def density_bound(self):
        return 1.0 / (self.hi - self.lo)

    def negated(self):
        return Uniform(-self.hi, -self.lo)

    def shifted(self, c):
        return Uniform(self.lo + c, self.hi + c)


@dataclass(frozen=True)
class Normal(Law):
    mu: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("normal law needs sd > 0")

    def pdf(self, z):
        t = (np.asarray(z, dtype=float) - self.mu) / self.sd
        return np.exp(-0.5 * t * t) / (math.sqrt(2 * math.pi) * self.sd)

    def cdf(self, z):
        return special.ndtr((np.asarray(z, dtype=float) - self.mu) / self.sd)

    def mean(self):
        return self.mu

    def mgf(self, kappa):
        return math.exp(kappa * self.mu + 0.5 * (kappa * self.sd) ** 2)

    @property
    def density_bound(self):
        return 1.0 / (self.sd * math.sqrt(2 * math.pi))

    def negated(self):
        return Normal(-self.mu, self.sd)

    def shifted(self, c):
        return Normal(self.mu + c, self.sd)


@dataclass(frozen=True)
class Laplace(Law):
    """Two-sided exponential law; tails decay like ``exp(-|z|/scale)``."""

    loc: float
    scale: float

    def pdf(self, z):
        t = (np.asarray(z, dtype=float) - self.loc) / self.scale
        return 0.5 * np.exp(-np.abs(t)) / self.scale

    def cdf(self, z):
        t = (np.asarray(z, dtype=float) - self.loc) / self.scale
        return np.where(t < 0, 0.5 * np.exp(np.minimum(t, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(t, 0.0)))

    def mean(self):
        return self.loc

    def mgf(self, kappa):
        if abs(kappa) * self.scale >= 1:
            return math.inf
        return math.exp(kappa * self.loc) / (1 - (kappa * self.scale) ** 2)

    @property
    def density_bound(self):
        return 0.5 / self.scale

    def negated(self):
        return Laplace(-self.loc, self.scale)

    def shifted(self, c):
        return Laplace(self.loc + c, self.scale)


@dataclass(frozen=True)
class TruncatedNormal(Law):
    """Zero-mean Gaussian cut at ``+-cut*sd`` and renormalized (variance below sd**2)."""

    sd: float
    cut: float = 3.0

    @property
    def _norm(self) -> float:
        return float(special.ndtr(self.cut) - special.ndtr(-self.cut))

    def pdf(self, z):
        t = np.asarray(z, dtype=float) / self.sd
        dens = np.exp(-0.5 * t * t) / (math.sqrt(2 * math.pi) * self.sd * self._norm)
        return np.where(np.abs(t) <= self.cut, dens, 0.0)

    def cdf(self, z):
        t = np.clip(np.asarray(z, dtype=float) / self.sd, -self.cut, self.cut)
        return (special.ndtr(t) - special.ndtr(-self.cut)) / self._norm

    @property
    def support(self):
        return (-self.cut * self.sd, self.cut * self.sd)

    def mean(self):
        return 0.0

    def variance(self) -> float:
        c = self.cut
        phi = math.exp(-0.5 * c * c) / math.sqrt(2 * math.pi)
        return self.sd**2 * (1 - 2 * c * phi / self._norm)

    def mgf(self, kappa):
        a = self.cut
        s = kappa * self.sd
        num = special.ndtr(a - s) - special.ndtr(-a - s)
        den = special.ndtr(a) - special.ndtr(-a)
        return math.exp(0.5 * s * s) * num / den

    @property
    def density_bound(self):
        return float(self.pdf(0.0))


@dataclass(frozen=True)
class UniformDifference(Law):
    """Law of ``eta - xi`` for independent uniforms (a trapezoid)."""

    eta: Uniform
    xi: Uniform

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        # overlap length of [eta.lo, eta.hi] with [z + xi.lo, z + xi.hi]
        lo = np.maximum(self.eta.lo, z + self.xi.lo)
        hi = np.minimum(self.eta.hi, z + self.xi.hi)
        width = (self.eta.hi - self.eta.lo) * (self.xi.hi - self.xi.lo)
        return np.clip(hi - lo, 0.0, None) / width

    def cdf(self, z):
        # P(eta <= z + t) averaged over t ~ xi; H is an antiderivative of the eta cdf
        z = np.asarray(z, dtype=float)
        u = self.eta.hi - self.eta.lo

        def H(s):
            s = s - self.eta.lo
            return np.where(s <= 0, 0.0, np.where(s <= u, s * s / (2 * u), u / 2 + (s - u)))

        wx = self.xi.hi - self.xi.lo
        return np.clip((H(z + self.xi.hi) - H(z + self.xi.lo)) / wx, 0.0, 1.0)

    @property
    def support(self):
        return (self.eta.lo - self.xi.hi, self.eta.hi - self.xi.lo)

    def mean(self):
        return self.eta.mean() - self.xi.mean()

    def mgf(self, kappa):
        return self.eta.mgf(kappa) * self.xi.mgf(-kappa)

    @property
    def density_bound(self):
        return 1.0 / max(self.eta.hi - self.eta.lo, self.xi.hi - self.xi.lo)

    def negated(self):
        return UniformDifference(self.xi, self.eta)

    def shifted(self, c):
        return UniformDifference(self.eta.shifted(c), self.xi)


@dataclass(frozen=True)
class ConvolvedDifference(Law):
    """Fallback ``eta - xi`` by numerical convolution (slow, for odd pairings)."""

    eta: Law
    xi: Law

    def pdf(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.zeros_like(z)
        for i, zi in enumerate(z):
            lo, hi = self._window(zi)
            if lo < hi:
                out[i] = integrate.quad(lambda t: float(self.eta.pdf(zi + t)) * float(self.xi.pdf(t)),
                                        lo, hi, limit=200)[0]
        return out

    def _window(self, z):
        # t with z + t inside the support of eta and t inside the support of xi
        elo, ehi = self.eta.support
        xlo, xhi = self.xi.support
        return max(xlo, elo - z), min(xhi, ehi - z)

    def cdf(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.empty_like(z)
        for i, zi in enumerate(z):
            lo, hi = self._window(zi)
            # beyond the window eta.cdf(z + t) is 1, so that part is a tail of xi
            above = float(1.0 - self.xi.cdf(np.array([max(hi, lo)]))[0]) if math.isfinite(hi) else 0.0
            inner = 0.0
            if lo < hi:
                inner = integrate.quad(lambda t: float(self.eta.cdf(zi + t)) * float(self.xi.pdf(t)),
                                       lo, hi, limit=200)[0]
            out[i] = inner + above
        return out

    def mean(self):
        return self.eta.mean() - self.xi.mean()

    def mgf(self, kappa):
        return self.eta.mgf(kappa) * self.xi.mgf(-kappa)

    @property
    def density_bound(self):
        return min(self.eta.density_bound, self.xi.density_bound)


def difference(eta: Law, xi: Law) -> Law:
    """Law of ``eta - xi`` for independent ``eta`` and ``xi``."""
    if isinstance(xi, Constant):
        return eta.shifted(-xi.value)
    if isinstance(eta, Constant):
        return xi.negated().shifted(eta.value)
    if isinstance(eta, Normal) and isinstance(xi, Normal):
        return Normal(eta.mu - xi.mu, math.hypot(eta.sd, xi.sd))
    if isinstance(eta, Uniform) and isinstance(xi, Uniform):
        return UniformDifference(eta, xi)
    return ConvolvedDifference(eta, xi)


def mgf_numeric(law: Law, kappa: float, rel_tol: float = 1e-10, max_radius: float = 1e4) -> float:
    """``E exp(kappa Z)`` by quadrature of the density plus any point mass.

    Unbounded supports are integrated over windows that double in size until
    the increment is negligible.  If the integrand does not decay along the
    tail (heavy tail against ``kappa``) the result is ``inf``.
    """
    total = 0.0 if law.atom is None else math.exp(kappa * law.atom)
    if isinstance(law, Constant):
        return total

    def f(z):
        return float(np.exp(kappa * z) * law.pdf(np.array([z]))[0])

    lo, hi = law.support
    if math.isfinite(lo) and math.isfinite(hi):
        return total + integrate.quad(f, lo, hi, limit=200, epsabs=0.0, epsrel=rel_tol)[0]

    center = law.mean()
    radius = 8.0
    val = integrate.quad(f, center - radius, center + radius, limit=200, epsabs=0.0, epsrel=rel_tol)[0]
    while radius < max_radius:
        new = 2 * radius
        left = integrate.quad(f, center - new, center - radius, limit=200)[0]
        right = integrate.quad(f, center + radius, center + new, limit=200)[0]
        inc = left + right
        val += inc
        # integrand at the window edges must shrink once we are in the tail
        edge_now = max(f(center - new), f(center + new))
        edge_prev = max(f(center - radius), f(center + radius))
        radius = new
        if not math.isfinite(val) or (edge_now >= edge_prev > 0 and inc > rel_tol * val):
            return math.inf
        if inc <= rel_tol * abs(val):
            return total + val
    return math.inf
