"""Secret-key-rate accounting for Gaussian-modulated CV-QKD with reverse reconciliation.

Trusted-receiver model in shot-noise units (vacuum variance 1). ``v_a`` and
``xi`` are referred to the channel input, ``nu_el`` to the receiver. Eve's
information is the entangling-cloner Holevo bound; detector noise is trusted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np
from scipy.optimize import brentq
from scipy.special import xlogy

HOMODYNE = 1
HETERODYNE = 2

_EIG_TOL = 1e-9


class UnphysicalParameters(ValueError):
    pass


@dataclass(frozen=True)
class QkdSystemParams:
    """Physical-layer parameters; defaults describe an 80 km heterodyne link."""

    distance_km: float = 80.0
    loss_db_per_km: float = 0.2
    eta: float = 0.4
    nu_el: float = 0.01
    xi: float = 0.001
    v_a: float = 1.0
    mu: int = HETERODYNE
    n_privacy: float = 1e8
    eps_bar: float = 1e-10
    eps_pa: float = 1e-10
    f_rep: float | None = None

    def __post_init__(self):
        if self.distance_km < 0 or self.loss_db_per_km < 0:
            raise ValueError("distance and loss must be nonnegative")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.nu_el < 0 or self.xi < 0:
            raise ValueError("nu_el and xi must be nonnegative")
        if not self.v_a > 0:
            raise ValueError("v_a must be positive")
        if self.mu not in (HOMODYNE, HETERODYNE):
            raise ValueError("mu must be 1 (homodyne) or 2 (heterodyne)")
        if not 0 < self.transmittance <= 1:
            raise ValueError("transmittance underflowed to zero")

    @property
    def transmittance(self) -> float:
        return 10.0 ** (-self.loss_db_per_km * self.distance_km / 10.0)

    @property
    def chi_line(self) -> float:
        return 1.0 / self.transmittance - 1.0 + self.xi

    @property
    def chi_det(self) -> float:
        if self.mu == HETERODYNE:
            return (1.0 + (1.0 - self.eta) + 2.0 * self.nu_el) / self.eta
        return ((1.0 - self.eta) + self.nu_el) / self.eta

    @property
    def chi_tot(self) -> float:
        return self.chi_line + self.chi_det / self.transmittance

    def with_va(self, v_a: float) -> "QkdSystemParams":
        return replace(self, v_a=v_a)


@dataclass(frozen=True)
class SkrBreakdown:
    i_ab: float
    chi_be: float
    delta_n: float
    fer: float
    beta: float
    skr: float
    k_throughput: float = math.nan
    skr_dec: float = math.nan

    @property
    def negative(self) -> bool:
        return self.skr < 0


def entropy_g(x):
    """Von Neumann entropy of a thermal mode with symplectic eigenvalue ``x`` (bits)."""
    x = np.asarray(x, dtype=np.float64)
    a, b = (x + 1) / 2, (x - 1) / 2
    out = (xlogy(a, a) - xlogy(b, b)) / math.log(2.0)
    return float(out) if out.ndim == 0 else out


def mutual_information(p: QkdSystemParams) -> float:
    """Alice-Bob mutual information per pulse (bits)."""
    V = p.v_a + 1.0
    ratio = (V + p.chi_tot) / (1.0 + p.chi_tot)
    return math.log2(ratio) * (1.0 if p.mu == HETERODYNE else 0.5)


def solve_va_for_iab(target_iab: float, p: QkdSystemParams) -> float:
    """Modulation variance at which :func:`mutual_information` equals ``target_iab``."""
    if not target_iab > 0:
        raise ValueError("target mutual information must be positive")
    exponent = target_iab * (1.0 if p.mu == HETERODYNE else 2.0)
    if exponent > 1000:
        raise ValueError(f"no finite modulation variance reaches I_AB={target_iab}")
    v_a = (1.0 + p.chi_tot) * math.expm1(exponent * math.log(2.0))
    if math.isfinite(v_a) and v_a > 0:
        if abs(mutual_information(p.with_va(v_a)) - target_iab) <= 1e-10 * max(1.0, target_iab):
            return v_a

    def f(va):
        return mutual_information(p.with_va(va)) - target_iab

    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e300:
            raise ValueError(f"no finite modulation variance reaches I_AB={target_iab}")
    return brentq(f, 1e-300, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def symplectic_eigenvalues(p: QkdSystemParams) -> tuple[float, float, float, float]:
    """(nu1, nu2) of Alice-Bob's state and (nu3, nu4) of Alice's state conditioned on Bob.

    Raises
    ------
    UnphysicalParameters
        If any eigenvalue falls below 1 by more than 1e-9.
    """
    T = p.transmittance
    V = p.v_a + 1.0
    cl, cd, ct = p.chi_line, p.chi_det, p.chi_tot
    A = V * V * (1 - 2 * T) + 2 * T + T * T * (V + cl) ** 2
    B = T * T * (V * cl + 1) ** 2
    sB = math.sqrt(B)
    denom = T * (V + ct)
    if p.mu == HETERODYNE:
        C = (A * cd * cd + B + 1 + 2 * cd * (V * sB + T * (V + cl)) + 2 * T * (V * V - 1)) / denom ** 2
        D = ((V + sB * cd) / denom) ** 2
    else:
        C = (A * cd + V * sB + T * (V + cl)) / denom
        D = sB * (V + sB * cd) / denom
    nus = (*_pair(A, B), *_pair(C, D))
    if min(nus) < 1 - _EIG_TOL:
        raise UnphysicalParameters(f"symplectic eigenvalue {min(nus):.12g} < 1")
    return nus


def _pair(a: float, b: float) -> tuple[float, float]:
    disc = a * a - 4 * b
    # a degenerate pair leaves a discriminant of pure rounding noise, which the
    # square root would inflate to a sqrt(eps) split
    if disc <= 64 * np.finfo(float).eps * a * a:
        disc = 0.0
    root = math.sqrt(disc)
    hi = 0.5 * (a + root)
    # b / hi avoids cancellation in the smaller root
    lo = b / hi
    return math.sqrt(hi), math.sqrt(lo)


def holevo_bound(p: QkdSystemParams) -> float:
    """Eve's Holevo information on Bob's data per pulse (bits)."""
    n1, n2, n3, n4 = (max(v, 1.0) for v in symplectic_eigenvalues(p))
    return entropy_g(n1) + entropy_g(n2) - entropy_g(n3) - entropy_g(n4)


def finite_size_penalty(p: QkdSystemParams) -> float:
    """Privacy-amplification finite-size correction per pulse (bits)."""
    n = float(p.n_privacy)
    if n < 1e4:
        raise ValueError("n_privacy must be at least 1e4")
    return 7.0 * math.sqrt(math.log2(2.0 / p.eps_bar) / n) + 2.0 / n * math.log2(1.0 / p.eps_pa)


def secret_key_rate(beta: float, i_ab: float, chi_be: float, delta_n: float, fer: float) -> float:
    """Key rate per pulse; the bracket is not clipped, so it may be negative."""
    # + 0.0 turns the -0.0 of a failed frame into 0.0
    return (1.0 - fer) * (beta * i_ab - chi_be - delta_n) + 0.0


def decoder_throughput(n: float, d_bar: float, rate: float, fer: float) -> float:
    """Decoded information bits per iteration latency."""
    if d_bar < 1:
        raise ValueError("d_bar must be >= 1")
    return n / d_bar * rate * (1.0 - fer)


def decoded_key_rate(n: float, d_bar: float, mu: int, fer: float, beta: float,
                     i_ab: float, chi_be: float, delta_n: float) -> float:
    """Secret key produced per iteration latency of the decoder."""
    if d_bar < 1:
        raise ValueError("d_bar must be >= 1")
    return n / (d_bar * mu) * (1.0 - fer) * (beta * i_ab - chi_be - delta_n) + 0.0


def _check_point(beta, fer):
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    if not 0 <= fer <= 1:
        raise ValueError("fer must lie in [0, 1]")


def skr(p: QkdSystemParams, beta: float, fer: float) -> SkrBreakdown:
    _check_point(beta, fer)
    i_ab, chi, dn = mutual_information(p), holevo_bound(p), finite_size_penalty(p)
    return SkrBreakdown(i_ab, chi, dn, fer, beta, secret_key_rate(beta, i_ab, chi, dn, fer))


def skr_dec(p: QkdSystemParams, beta: float, fer: float, n: float, d_bar: float) -> float:
    _check_point(beta, fer)
    return decoded_key_rate(n, d_bar, p.mu, fer, beta, mutual_information(p),
                            holevo_bound(p), finite_size_penalty(p))


def breakdown(p: QkdSystemParams, beta: float, fer: float, n: float, d_bar: float,
              rate: float) -> SkrBreakdown:
    """All key-rate quantities of one operating point."""
    b = skr(p, beta, fer)
    k = decoder_throughput(n, d_bar, rate, fer)
    dec = decoded_key_rate(n, d_bar, p.mu, fer, beta, b.i_ab, b.chi_be, b.delta_n)
    return replace(b, k_throughput=k, skr_dec=dec)


def _field(rec, name):
    return rec[name] if isinstance(rec, dict) else getattr(rec, name)


def optimize_beta(records: Iterable) -> tuple[float, float]:
    """Grid argmax of SKR and of decoded SKR over ``beta``; ties go to the lower ``beta``.

    ``records`` are mappings or objects with ``beta``, ``skr`` and ``skr_dec``.
    """
    recs = sorted(records, key=lambda r: float(_field(r, "beta")))
    if not recs:
        raise ValueError("optimize_beta needs at least one record")

    def best(name):
        vals = [float(_field(r, name)) for r in recs]
        vals = [-math.inf if math.isnan(v) else v for v in vals]
        # max() keeps the first maximum, i.e. the lowest beta
        i = max(range(len(vals)), key=vals.__getitem__)
        return float(_field(recs[i], "beta"))

    return best("skr"), best("skr_dec")
