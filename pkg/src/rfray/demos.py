"""Built-in demonstration scenes with plot-ready CSV output.

Three small, deterministic fixtures that exercise the parts of the
engine that are easy to see on a plot and awkward to appreciate in a
unit test:

* ``double-slit``: interference fringes behind a two-slit screen, with
  a fringe-spacing summary against the paraxial prediction lam*D/a.
* ``measure-zero``: naive Monte Carlo direction sampling against a
  mirror returns exactly zero received field, while the deterministic
  image-method trace does not.
* ``edge-sweep``: a specular reflection point swept across a plate
  edge under the three path-weight modes; only the binary curve jumps.

Each runner writes CSV files plus a README.md describing the expected
structure, and returns a summary dict so tests can assert on the same
numbers the files carry.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .dual import value_of
from .engine import Scene, field_at, render_field_grid
from .field import GridSpec, SimulationConfig
from .geometry import Mesh
from .materials import C0, Material
from .pathtracer import WeightMode

_METAL = Material(name="metal", eps_re=1.0, eps_im=0.0, sigma=1e9)


def _write_csv(path: Path, header: list, rows: list):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def _write_readme(path: Path, title: str, body: list):
    with open(path / "README.md", "w", encoding="utf-8") as fh:
        fh.write(f"# {title}\n\n")
        fh.write("\n".join(body) + "\n")


# -- double slit --------------------------------------------------------------------

DOUBLE_SLIT_FREQ = 5e9
DOUBLE_SLIT_TX = (-2.0, 0.0, 0.0)


def double_slit_mesh() -> Mesh:
    """Screen at x = 0 with two vertical slits (width lam, centers 6 lam
    apart), modeled as three metal panels spanning z in [-3, 3]."""
    lam = C0 / DOUBLE_SLIT_FREQ
    sw, sep = lam, 6.0 * lam
    verts: list = []
    tris: list = []

    def panel(y0, y1, z0=-3.0, z1=3.0):
        b = len(verts)
        verts.extend([[0.0, y0, z0], [0.0, y1, z0],
                      [0.0, y1, z1], [0.0, y0, z1]])
        tris.extend([[b, b + 1, b + 2], [b, b + 2, b + 3]])

    panel(-6.0, -sep / 2 - sw / 2)
    panel(-sep / 2 + sw / 2, sep / 2 - sw / 2)
    panel(sep / 2 + sw / 2, 6.0)
    return Mesh(vertices=np.asarray(verts, dtype=float),
                triangles=np.asarray(tris),
                material_ids=np.zeros(len(tris), dtype=np.int64),
                material_names=["metal"])


def double_slit_scene(polarization: str) -> Scene:
    cfg = SimulationConfig(frequency_hz=DOUBLE_SLIT_FREQ, max_depth=1,
                           polarization=polarization)
    return Scene(mesh=double_slit_mesh(), materials={"metal": _METAL},
                 tx=DOUBLE_SLIT_TX, cfg=cfg)


def double_slit_grid(nx: int = 64, ny: int = 64) -> GridSpec:
    return GridSpec(origin=(3.0, -2.5, -1.5), u_axis=(0.0, 5.0, 0.0),
                    v_axis=(0.0, 0.0, 3.0), nx=nx, ny=ny)


def measure_fringe_spacing(ys: np.ndarray, intensity: np.ndarray) -> float:
    """Dominant fringe period (m) from the central |y| < 1.6 band."""
    sel = np.abs(ys) < 1.6
    x = intensity[sel] / intensity[sel].max()
    x = x - x.mean()
    freqs = np.fft.rfftfreq(len(x), d=ys[1] - ys[0])
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    f_peak = freqs[int(np.argmax(spec[1:])) + 1]
    return 1.0 / f_peak


def run_double_slit(out_dir, nx: int = 64, ny: int = 64) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lam = C0 / DOUBLE_SLIT_FREQ
    grid = double_slit_grid(nx, ny)
    fields = []
    for pol in ("parallel", "perpendicular"):
        fg = render_field_grid(double_slit_scene(pol), grid)
        fields.append(fg.samples)
    avg = 0.5 * (fields[0] + fields[1])       # unpolarized screen intensity

    rows = []
    for iy in range(ny):
        for ix in range(nx):
            c = grid.cell_center(ix, iy)
            rows.append((ix, iy, float(c[1]), float(c[2]),
                         float(np.abs(avg[iy, ix]) ** 2)))
    _write_csv(out / "field.csv", ["ix", "iy", "y", "z", "intensity"], rows)

    mid = ny // 2
    ys = np.asarray([grid.cell_center(ix, mid)[1] for ix in range(nx)])
    intensity = np.abs(avg[mid, :]) ** 2
    _write_csv(out / "fringes.csv", ["y", "intensity"],
               [(float(y), float(i)) for y, i in zip(ys, intensity)])

    measured = measure_fringe_spacing(ys, intensity)
    expected = lam * 3.0 / (6.0 * lam)        # lam * D / a with D = 3 m
    rel = abs(measured - expected) / expected
    _write_csv(out / "summary.csv",
               ["measured_spacing_m", "paraxial_spacing_m", "rel_err"],
               [(float(measured), float(expected), float(rel))])
    _write_readme(out, "Double-slit interference", [
        "- `field.csv`: intensity over the 64x64 observation plane at",
        "  x = 3 m; plotting intensity(y, z) shows vertical fringe bands.",
        "- `fringes.csv`: the central z ~ 0 row; intensity(y) oscillates",
        "  with near-uniform spacing.",
        "- `summary.csv`: dominant fringe spacing from the central band",
        "  vs the paraxial prediction lam*D/a; expected within 5%.",
    ])
    return {"measured_spacing": measured, "expected_spacing": expected,
            "rel_err": rel}


# -- measure zero -------------------------------------------------------------------


def mirror_scene() -> Scene:
    """Square mirror in the z = 0 plane with both endpoints above it."""
    mesh = Mesh(vertices=np.asarray([[-2.0, -2.0, 0.0], [2.0, -2.0, 0.0],
                                     [2.0, 2.0, 0.0], [-2.0, 2.0, 0.0]]),
                triangles=np.asarray([[0, 1, 2], [0, 2, 3]]),
                material_ids=np.zeros(2, dtype=np.int64),
                material_names=["metal"])
    cfg = SimulationConfig(frequency_hz=5e9, max_depth=1)
    return Scene(mesh=mesh, materials={"metal": _METAL},
                 tx=(0.0, 0.0, 1.0), cfg=cfg)


MEASURE_ZERO_RX = (0.6, 0.0, 0.8)


def run_measure_zero(out_dir, seed: int = 0, samples: int = 1_000_000) -> dict:
    """Naive hemisphere sampling vs the deterministic image-method trace.

    A sampled direction contributes only if its mirror reflection passes
    exactly through the receiver point; that event has zero solid-angle
    measure, so the Monte Carlo sum is exactly 0 for any finite sample
    count.  The reparameterized trace finds the specular path directly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = mirror_scene()
    rx = MEASURE_ZERO_RX
    tx = np.asarray(scene.tx, dtype=float)

    rng = np.random.default_rng(seed)
    d = rng.normal(size=(samples, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    d[:, 2] = -np.abs(d[:, 2])                # aim at the mirror plane
    t = -tx[2] / d[:, 2]
    hit = tx[None, :] + t[:, None] * d
    on_plate = (np.abs(hit[:, 0]) <= 2.0) & (np.abs(hit[:, 1]) <= 2.0)
    refl = d.copy()
    refl[:, 2] = -refl[:, 2]                  # mirror the direction
    to_rx = np.asarray(rx)[None, :] - hit
    miss = np.linalg.norm(np.cross(refl, to_rx), axis=1)
    exact_hits = int(np.count_nonzero((miss == 0.0) & on_plate))
    mc_estimate = 0.0 if exact_hits == 0 else float(exact_hits) / samples
    min_miss = float(miss[on_plate].min())

    e = complex(value_of(field_at(scene, rx)))
    _write_csv(out / "mc.csv",
               ["samples", "exact_hits", "mc_estimate", "min_angular_miss"],
               [(samples, exact_hits, mc_estimate, min_miss)])
    _write_csv(out / "deterministic.csv", ["re", "im", "abs"],
               [(e.real, e.imag, abs(e))])
    _write_readme(out, "Measure-zero specular sampling", [
        f"- `mc.csv`: {samples} random hemisphere directions reflected off",
        "  the mirror; `exact_hits` and `mc_estimate` are exactly 0 because",
        "  valid specular directions form a measure-zero set.  The smallest",
        "  angular miss is small but never zero.",
        "- `deterministic.csv`: the image-method field at the same receiver",
        "  is nonzero (line of sight plus one mirror bounce).",
    ])
    return {"mc_estimate": mc_estimate, "exact_hits": exact_hits,
            "min_miss": min_miss, "field_abs": abs(e)}


# -- edge sweep ---------------------------------------------------------------------


def edge_sweep_scene(mode: WeightMode) -> Scene:
    """4 m x 4 m floor plate; the receiver sweep drags the floor-bounce
    specular point across the plate's far edge."""
    mesh = Mesh(vertices=np.asarray([[0.0, 0.0, 0.0], [4.0, 0.0, 0.0],
                                     [4.0, 4.0, 0.0], [0.0, 4.0, 0.0]]),
                triangles=np.asarray([[0, 1, 2], [0, 2, 3]]),
                material_ids=np.zeros(2, dtype=np.int64),
                material_names=["metal"])
    cfg = SimulationConfig(frequency_hz=5e9, max_depth=1, weight_mode=mode)
    return Scene(mesh=mesh, materials={"metal": _METAL},
                 tx=(1.0, 1.0, 1.0), cfg=cfg)


def edge_sweep_curve(mode: WeightMode, steps: int,
                     span=(5.0, 9.0)) -> np.ndarray:
    scene = edge_sweep_scene(mode)
    xs = np.linspace(span[0], span[1], steps)
    return xs, np.asarray([abs(complex(value_of(
        field_at(scene, (float(x), 1.2, 1.0))))) for x in xs])


def run_edge_sweep(out_dir, steps: int = 1000) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lam = C0 / 5e9
    modes = {
        "binary": WeightMode.binary(),
        "soft": WeightMode.soft(10.0 / lam),
        "transition": WeightMode.transition(),
    }
    curves = {}
    xs = None
    for name, mode in modes.items():
        xs, curves[name] = edge_sweep_curve(mode, steps)
    _write_csv(out / "sweep.csv", ["x", "binary", "soft", "transition"],
               [(float(x), float(curves["binary"][i]), float(curves["soft"][i]),
                 float(curves["transition"][i])) for i, x in enumerate(xs)])
    jumps = {name: float(np.max(np.abs(np.diff(c))))
             for name, c in curves.items()}
    _write_csv(out / "summary.csv",
               ["mode", "max_adjacent_jump", "curve_max"],
               [(name, jumps[name], float(curves[name].max()))
                for name in modes])
    _write_readme(out, "Edge-crossing sweep", [
        "- `sweep.csv`: |E| vs receiver x under the three path-weight",
        "  modes as the floor-bounce point crosses the plate edge.",
        "- The binary curve steps discontinuously where the bounce leaves",
        "  the plate; soft and transition descend continuously (the",
        "  transition curve also carries the physical edge-diffraction",
        "  ripple).",
        "- `summary.csv`: maximum adjacent-sample jump per mode; only the",
        "  binary value stays O(curve max) as the sweep is refined.",
    ])
    return {"jumps": jumps, "steps": steps}
