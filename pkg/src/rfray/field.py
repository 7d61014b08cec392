"""Field accumulation, channel impulse responses, grids, FMCW beat
signals, Doppler, and the binary/JSON/CSV export formats.

Field amplitudes are dimensionless relative to a unit transmitter at
1 m; every path contributes W * A * e^{-jkL} with A covering spreading
and per-hop coupling.  The CIR keeps one tap per path so the coherent
tap sum reproduces the accumulated field exactly at the carrier.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .dual import value_of
from .materials import C0
from .pathtracer import WeightMode, TracedPath
from .vec3 import vsub, vnormalize

__all__ = [
    "SimulationConfig", "ChirpConfig", "CirTap", "CIR", "FieldGrid", "GridSpec",
    "accumulate_field", "build_cir", "fmcw_signal", "doppler_shift",
    "range_profile_fft", "save_field_grid", "load_field_grid",
    "save_cir_json", "load_cir_json", "save_cir_csv", "save_grid_csv",
    "RFDT_MAGIC",
]

RFDT_MAGIC = b"RFDT"


@dataclass(frozen=True)
class SimulationConfig:
    frequency_hz: float
    max_depth: int = 2
    weight_mode: WeightMode = field(default_factory=WeightMode.transition)
    tx_power_amplitude: float = 1.0
    polarization: str = "parallel"      # "parallel" (hard) | "perpendicular" (soft)
    capture_band_lambdas: float = 10.0

    def __post_init__(self):
        if self.frequency_hz <= 0:
            raise ValueError("frequency_hz must be > 0")
        if self.polarization not in ("parallel", "perpendicular"):
            raise ValueError("polarization must be 'parallel' or 'perpendicular'")

    @property
    def wavelength(self) -> float:
        return C0 / self.frequency_hz

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength


@dataclass(frozen=True)
class ChirpConfig:
    f_c: float                          # carrier, Hz
    bandwidth: float                    # B, Hz
    duration: float                     # T, s
    n_samples: int

    def __post_init__(self):
        if self.bandwidth <= 0 or self.duration <= 0:
            raise ValueError("bandwidth and duration must be > 0")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")

    @property
    def chirp_rate(self) -> float:
        """mu = B/T, Hz/s."""
        return self.bandwidth / self.duration


@dataclass(frozen=True)
class CirTap:
    tau: float                          # delay, s
    alpha: float                        # linear amplitude |W A|
    phi: float                          # phase at the carrier, rad, in (-pi, pi]
    kind: str                           # "specular" | "diffracted"


@dataclass
class CIR:
    taps: list

    def coherent_sum(self) -> complex:
        return sum((t.alpha * np.exp(1j * t.phi) for t in self.taps), 0j)


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    u_axis: tuple                       # full span of the first grid axis
    v_axis: tuple                       # full span of the second grid axis
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("nx and ny must be >= 1")

    def cell_center(self, ix: int, iy: int) -> tuple:
        fu = (ix + 0.5) / self.nx
        fv = (iy + 0.5) / self.ny
        return tuple(self.origin[c] + fu * self.u_axis[c] + fv * self.v_axis[c]
                     for c in range(3))


@dataclass
class FieldGrid:
    origin: tuple
    u_axis: tuple                       # full span of the first grid axis
    v_axis: tuple                       # full span of the second grid axis
    nx: int
    ny: int
    samples: np.ndarray                 # complex, shape (ny, nx), row-major

    def cell_center(self, ix: int, iy: int) -> tuple:
        fu = (ix + 0.5) / self.nx
        fv = (iy + 0.5) / self.ny
        return tuple(self.origin[c] + fu * self.u_axis[c] + fv * self.v_axis[c]
                     for c in range(3))


def _wrap_phase(p):
    w = math.fmod(value_of(p) + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def accumulate_field(paths: list, cfg: SimulationConfig):
    """Coherent sum over weighted paths: E = sum W * A * e^{-jkL}."""
    from .parallel import pairwise_sum
    from .dual import d_exp
    k = cfg.wavenumber
    terms = []
    for p in paths:
        if p.weight is None or p.amplitude is None:
            raise ValueError("paths must carry weight and amplitude")
        terms.append(p.weight * p.amplitude * d_exp(-1j * k * p.length))
    return pairwise_sum(terms, 0j)


def build_cir(paths: list, cfg: SimulationConfig) -> CIR:
    """One tap per weighted path, sorted by delay.

    alpha = |W A|, phi = arg(W A) - k L wrapped to (-pi, pi], so the
    coherent tap sum equals accumulate_field at the carrier.
    """
    k = cfg.wavenumber
    taps = []
    for p in paths:
        wa = complex(value_of(p.weight)) * complex(value_of(p.amplitude))
        L = float(value_of(p.length))
        alpha = abs(wa)
        if alpha == 0.0:
            continue
        phi = _wrap_phase(np.angle(wa) - k * L)
        taps.append(CirTap(tau=L / C0, alpha=alpha, phi=phi, kind=p.kind))
    taps.sort(key=lambda t: (t.tau, -t.alpha))
    return CIR(taps=taps)


def fmcw_signal(cir: CIR, chirp: ChirpConfig, round_trip: bool = False) -> np.ndarray:
    """Dechirped (beat) samples of a sawtooth FMCW chirp.

    s[n] = sum_i alpha_i e^{j phi_i} e^{j 2 pi (mu tau_i t_n + f_c tau_i)},
    t_n = n T / N.  Delays from a monostatic trace are already round
    trip; round_trip=True doubles one-way delays instead.
    """
    n = chirp.n_samples
    t = np.arange(n) * (chirp.duration / n)
    out = np.zeros(n, dtype=complex)
    mu = chirp.chirp_rate
    scale = 2.0 if round_trip else 1.0
    for tap in cir.taps:
        tau = scale * tap.tau
        out += (tap.alpha * np.exp(1j * tap.phi)
                * np.exp(2j * np.pi * (mu * tau * t + chirp.f_c * tau)))
    return out


def doppler_shift(path: TracedPath, velocities: dict, wavelength: float) -> float:
    """Doppler frequency of a path with moving interaction points.

    velocities maps triangle index -> Vec3 m/s (wedge interactions use
    key ("wedge", index)).  The shift is the closing speed of the total
    path length over wavelength: each moving point contributes its
    velocity projected on (outgoing - incoming) unit directions.  A
    monostatic reflector approaching at v gives +2v/lambda.
    """
    if not velocities:
        return 0.0
    v_r = 0.0
    hop_idx = 0
    for i in range(1, len(path.points) - 1):
        if path.kind == "diffracted" and i - 1 == len(path.spec.pre):
            key = ("wedge", path.spec.wedge_index)
        else:
            key = path.per_hop[hop_idx].triangle
            hop_idx += 1
        vel = velocities.get(key)
        if vel is None:
            continue
        p = path.points[i]
        d_in = vnormalize(vsub(p, path.points[i - 1]))
        d_out = vnormalize(vsub(path.points[i + 1], p))
        for c in range(3):
            v_r += value_of(vel[c]) * (value_of(d_out[c]) - value_of(d_in[c]))
    return v_r / wavelength


def range_profile_fft(samples: np.ndarray) -> np.ndarray:
    """|FFT| magnitudes, zero-padded to the next power of two."""
    s = np.asarray(samples, dtype=complex)
    n = len(s)
    if n == 0:
        raise ValueError("empty sample vector")
    m = 1 << (n - 1).bit_length()
    if m != n:
        s = np.concatenate([s, np.zeros(m - n, dtype=complex)])
    return np.abs(np.fft.fft(s))


# -- file formats ---------------------------------------------------------------

def save_field_grid(path_bin, grid: FieldGrid, sidecar: dict | None = None,
                    path_json=None):
    """16-byte header (magic 'RFDT', u32 nx, u32 ny, u32 dtype=0) then
    row-major interleaved re/im float32, little endian.  A JSON sidecar
    with origin/axes/config goes next to it."""
    data = np.ascontiguousarray(grid.samples, dtype=np.complex64)
    if data.shape != (grid.ny, grid.nx):
        raise ValueError("samples shape does not match nx/ny")
    header = RFDT_MAGIC + struct.pack("<III", grid.nx, grid.ny, 0)
    inter = np.empty(grid.nx * grid.ny * 2, dtype="<f4")
    flat = data.reshape(-1)
    inter[0::2] = flat.real.astype("<f4")
    inter[1::2] = flat.imag.astype("<f4")
    with open(path_bin, "wb") as fh:
        fh.write(header)
        fh.write(inter.tobytes())
    meta = {
        "origin": [float(c) for c in grid.origin],
        "u_axis": [float(c) for c in grid.u_axis],
        "v_axis": [float(c) for c in grid.v_axis],
        "nx": grid.nx,
        "ny": grid.ny,
        "dtype": "complex64",
    }
    if sidecar:
        meta["config"] = sidecar
    pj = path_json if path_json is not None else str(path_bin) + ".json"
    with open(pj, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_field_grid(path_bin) -> FieldGrid:
    with open(path_bin, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != RFDT_MAGIC:
            raise ValueError(f"{path_bin}: not a field-grid file (bad magic)")
        nx, ny, dtype = struct.unpack("<III", header[4:])
        if dtype != 0:
            raise ValueError(f"{path_bin}: unsupported dtype code {dtype}")
        raw = np.frombuffer(fh.read(), dtype="<f4")
    if raw.size != nx * ny * 2:
        raise ValueError(f"{path_bin}: truncated payload")
    samples = (raw[0::2] + 1j * raw[1::2]).astype(np.complex64).reshape(ny, nx)
    meta_path = str(path_bin) + ".json"
    origin, u_axis, v_axis = (0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        origin = tuple(meta["origin"])
        u_axis = tuple(meta["u_axis"])
        v_axis = tuple(meta["v_axis"])
    except FileNotFoundError:
        pass
    return FieldGrid(origin=origin, u_axis=u_axis, v_axis=v_axis,
                     nx=nx, ny=ny, samples=samples)


def save_cir_json(path, cir: CIR):
    data = [{"tau": t.tau, "alpha": t.alpha, "phi": t.phi, "kind": t.kind}
            for t in cir.taps]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_cir_json(path) -> CIR:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return CIR(taps=[CirTap(tau=d["tau"], alpha=d["alpha"], phi=d["phi"],
                            kind=d["kind"]) for d in data])


def save_cir_csv(path, cir: CIR):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_s", "alpha", "phi_rad", "kind"])
        for t in cir.taps:
            w.writerow([repr(t.tau), repr(t.alpha), repr(t.phi), t.kind])


def save_grid_csv(path, grid: FieldGrid):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["ix", "iy", "x", "y", "z", "re", "im"])
        for iy in range(grid.ny):
            for ix in range(grid.nx):
                c = grid.cell_center(ix, iy)
                s = grid.samples[iy, ix]
                w.writerow([ix, iy, repr(float(c[0])), repr(float(c[1])),
                            repr(float(c[2])), repr(float(s.real)),
                            repr(float(s.imag))])
