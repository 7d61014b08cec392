"""Smooth range-profile surrogate built from Dirichlet kernels.

The squared DFT magnitude of a rectangular-window beat tone is exactly
a Dirichlet kernel in the tone's fractional bin offset, so a range
profile assembled from per-tap kernels is an analytic, everywhere
differentiable stand-in for the FFT profile.  The phase-agnostic form
drops tap phases entirely, trading interference detail for a loss
landscape without carrier-period ripples; an annealing schedule blends
it back into the exact FFT profile as optimization converges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dual import Dual, d_conj_free_abs2, d_exp, d_sin, is_dual, value_of
from .field import CIR


def default_schedule(budget: int) -> tuple:
    """Warm up phase-agnostic, then ramp linearly to the exact profile.

    Flat at 0 for the first 20% of the budget, linear to 1 over the
    next 50%, then flat at 1."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    t_warm = 0.2 * budget
    t_full = 0.7 * budget
    return ((0.0, 0.0), (t_warm, 0.0), (t_full, 1.0), (float(budget), 1.0))


@dataclass(frozen=True)
class SurrogateConfig:
    """Kernel geometry plus the annealing schedule.

    The affine delay map tau(bin) = tau0 + bin * dtau_per_bin fixes
    which delay each profile bin represents.  sigma is the kernel's
    delay scale; the default n_bins * dtau_per_bin / 2 is the unique
    value making the kernel coincide with the squared-DFT point spread
    of a rectangular window.  f_c adds the carrier turn to tap phases
    when profiles are synthesized coherently.
    """

    n_bins: int
    dtau_per_bin: float
    tau0: float = 0.0
    sigma: float = 0.0                  # 0 selects the DFT-exact default
    schedule: tuple = None
    phase_mode: str = "agnostic"
    f_c: float = 0.0

    def __post_init__(self):
        n = self.n_bins
        if n < 2 or n & (n - 1):
            raise ValueError("n_bins must be a power of two >= 2")
        if self.dtau_per_bin <= 0:
            raise ValueError("dtau_per_bin must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be > 0 (or 0 for the default)")
        if self.phase_mode not in ("agnostic", "coherent"):
            raise ValueError("phase_mode must be 'agnostic' or 'coherent'")
        if self.schedule is None:
            object.__setattr__(self, "schedule", default_schedule(100))
        sched = tuple((float(t), float(l)) for t, l in self.schedule)
        object.__setattr__(self, "schedule", sched)
        if not sched:
            raise ValueError("schedule needs at least one knot")
        for (t0, l0), (t1, l1) in zip(sched, sched[1:]):
            if t1 < t0 or l1 < l0:
                raise ValueError("schedule must be monotone nondecreasing")
        for _, l in sched:
            if not 0.0 <= l <= 1.0:
                raise ValueError("schedule weights must lie in [0, 1]")
        if sched[-1][1] != 1.0:
            raise ValueError("schedule must end at weight 1")

    @property
    def sigma_eff(self) -> float:
        return self.sigma if self.sigma > 0 else self.n_bins * self.dtau_per_bin / 2

    def delay_of(self, f_bin: int) -> float:
        return self.tau0 + f_bin * self.dtau_per_bin


@dataclass
class RangeProfile:
    """Per-bin nonnegative response; entries may carry dual tangents."""

    bins: list

    def __post_init__(self):
        for b in self.bins:
            if not is_dual(b) and not math.isfinite(value_of(b)):
                raise ValueError("profile bins must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([float(value_of(b)) for b in self.bins])


def lambda_at(cfg: SurrogateConfig, t: float) -> float:
    """Piecewise-linear schedule weight at iteration t, clamped at the ends."""
    knots = cfg.schedule
    if t <= knots[0][0]:
        return knots[0][1]
    for (t0, l0), (t1, l1) in zip(knots, knots[1:]):
        if t <= t1:
            if t1 == t0:
                return l1
            return l0 + (l1 - l0) * (t - t0) / (t1 - t0)
    return knots[-1][1]


# -- kernels ---------------------------------------------------------------------

def _fold(r):
    """Reduce r into (-1, 1]; the kernel is exactly 2-periodic."""
    m = round(value_of(r) / 2.0)
    return r - 2.0 * m if m else r


def _kernel_amplitude(rr, n: int):
    """sin(N pi r / 2) / (N sin(pi r / 2)) at folded rr, series near 0."""
    if abs(value_of(rr)) < 1e-7:
        x = rr * (math.pi / 2.0)
        return 1.0 - (n * n - 1.0) / 6.0 * x * x
    num = d_sin(rr * (math.pi * n / 2.0))
    den = d_sin(rr * (math.pi / 2.0)) * n
    return num / den


def dirichlet_kernel(tau_i, f_bin: int, cfg: SurrogateConfig):
    """Squared Dirichlet response of a tap at delay tau_i in one bin.

    With r = (tau_i - tau(bin)) / sigma this is
    |sin(N pi r/2) / (N sin(pi r/2))|^2: 1 at r = 0, first null at
    r = 2/N, and periodic alias maxima at even r.  Accepts dual delays.
    """
    r = (tau_i - cfg.delay_of(f_bin)) / cfg.sigma_eff
    a = _kernel_amplitude(_fold(r), cfg.n_bins)
    return a * a


def complex_kernel(tau_i, f_bin: int, cfg: SurrogateConfig):
    """Un-squared complex kernel: the exact per-bin DFT response.

    K(r) = e^{j pi (N-1) r / 2} sin(N pi r/2) / (N sin(pi r/2)); its
    squared magnitude is dirichlet_kernel.  The linear phase factor is
    what makes coherent multi-tap sums agree with the FFT profile.
    """
    rr = _fold((tau_i - cfg.delay_of(f_bin)) / cfg.sigma_eff)
    amp = _kernel_amplitude(rr, cfg.n_bins)
    phase = d_exp(rr * (1j * math.pi * (cfg.n_bins - 1) / 2.0))
    return amp * phase


def dirichlet_derivative(tau_i: float, f_bin: int, cfg: SurrogateConfig) -> float:
    """Closed-form d(dirichlet_kernel)/d(tau_i) at a float delay.

    Product rule on the squared kernel: dG/dtau = 2 A dA/dr / sigma with
    A the amplitude ratio.  The even-kernel limit at r = 0 is 0.
    """
    n = cfg.n_bins
    sig = cfg.sigma_eff
    rr = _fold((float(tau_i) - cfg.delay_of(f_bin)) / sig)
    if abs(rr) < 1e-7:
        return -(n * n - 1.0) * math.pi * math.pi * rr / 6.0 / sig
    h = math.pi * rr / 2.0
    s, c = math.sin(h), math.cos(h)
    sn, cn = math.sin(n * h), math.cos(n * h)
    amp = sn / (n * s)
    damp = (math.pi / 2.0) * (n * cn * s - sn * c) / (n * s * s)
    return 2.0 * amp * damp / sig


# -- profiles --------------------------------------------------------------------

def _taps_of(cir):
    if isinstance(cir, CIR):
        return cir.taps
    return list(cir)


def surrogate_profile(cir, cfg: SurrogateConfig) -> RangeProfile:
    """Kernel-synthesized range profile.

    Agnostic mode adds amplitude-weighted squared kernels with phases
    omitted; coherent mode sums complex kernels with full tap phases
    (carrier turn included) and squares the magnitude, which reproduces
    the FFT profile identically.  Taps may carry dual tangents.
    """
    taps = _taps_of(cir)
    out = []
    for k in range(cfg.n_bins):
        if cfg.phase_mode == "agnostic":
            acc = 0.0
            for tp in taps:
                acc = acc + tp.alpha * dirichlet_kernel(tp.tau, k, cfg)
        else:
            z = 0j
            for tp in taps:
                psi = tp.phi + (2.0 * math.pi * cfg.f_c) * tp.tau
                z = z + tp.alpha * d_exp(1j * psi) * complex_kernel(tp.tau, k, cfg)
            acc = d_conj_free_abs2(z)
        out.append(acc)
    return RangeProfile(bins=out)


def fft_profile(cir, cfg: SurrogateConfig) -> RangeProfile:
    """Exact squared-magnitude DFT profile of the synthesized beat signal.

    Normalized by N^2 so a unit-amplitude tap aligned to a bin center
    peaks at exactly 1, commensurate with the surrogate.  Float taps go
    through a real FFT; dual-carrying taps fall back to the coherent
    kernel form, which is the same function evaluated analytically.
    """
    taps = _taps_of(cir)
    n = cfg.n_bins
    if any(is_dual(tp.tau) or is_dual(tp.alpha) or is_dual(tp.phi)
           for tp in taps):
        coh = SurrogateConfig(n_bins=n, dtau_per_bin=cfg.dtau_per_bin,
                              tau0=cfg.tau0, schedule=cfg.schedule,
                              phase_mode="coherent", f_c=cfg.f_c)
        return surrogate_profile(taps, coh)
    samples = np.zeros(n, dtype=complex)
    idx = np.arange(n)
    for tp in taps:
        psi = tp.phi + 2.0 * math.pi * cfg.f_c * tp.tau
        cycles_per_sample = (tp.tau - cfg.tau0) / (n * cfg.dtau_per_bin)
        samples += (tp.alpha * np.exp(1j * psi)
                    * np.exp(2j * np.pi * cycles_per_sample * idx))
    power = np.abs(np.fft.fft(samples)) ** 2 / float(n * n)
    return RangeProfile(bins=list(power))


def annealed_profile(cir, cfg: SurrogateConfig, t: float) -> RangeProfile:
    """Convex per-bin blend between the surrogate and the FFT profile.

    The schedule weight at iteration t mixes lam * exact + (1 - lam) *
    surrogate; the endpoints return each form verbatim.
    """
    lam = lambda_at(cfg, t)
    if lam <= 0.0:
        return surrogate_profile(cir, cfg)
    exact = fft_profile(cir, cfg)
    if lam >= 1.0:
        return exact
    smooth = surrogate_profile(cir, cfg)
    mixed = [e * lam + s * (1.0 - lam)
             for e, s in zip(exact.bins, smooth.bins)]
    return RangeProfile(bins=mixed)


# -- export ----------------------------------------------------------------------

def profile_to_json(profile: RangeProfile) -> dict:
    return {"n_bins": len(profile.bins),
            "bins": [float(value_of(b)) for b in profile.bins]}


def save_profile_json(path, profile: RangeProfile):
    with open(path, "w") as fh:
        json.dump(profile_to_json(profile), fh, indent=1)
        fh.write("\n")


def save_profile_csv(path, profile: RangeProfile):
    with open(path, "w") as fh:
        fh.write("bin,value\n")
        for i, b in enumerate(profile.bins):
            fh.write(f"{i},{value_of(b):.17g}\n")


def load_profile_json(path) -> RangeProfile:
    with open(path) as fh:
        doc = json.load(fh)
    return RangeProfile(bins=list(doc["bins"]))
