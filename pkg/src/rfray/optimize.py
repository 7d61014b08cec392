"""Inverse loop: measurement losses, regularized Adam, and bookkeeping.

The forward model is the plan-frozen engine; gradients arrive by dual
seeding through geometry, transition weights, and the annealed range
profile.  A combinatorial mesh Laplacian regularizes vertex motion the
way a Dirichlet energy would, and every iteration's loss, schedule
weight, and gradient norm land in a history table for export.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dual import (Dual, d_atan2, d_conj_free_abs2, d_imag, d_real,
                   d_sqrt, value_of)
from .engine import Scene, build_plan, evaluate_plan
from .field import C0, accumulate_field
from .geometry import Mesh
from .gradients import (GradientVector, ParamVector, apply_params,
                        _require_differentiable, _seeded_values)
from .surrogate import RangeProfile, SurrogateConfig, annealed_profile, lambda_at
from .vec3 import vfloat


@dataclass(frozen=True)
class LossConfig:
    """Which discrepancy drives the fit.

    kind: field_mse compares complex field samples; profile_mse compares
    range profiles bin-wise; multiscale_profile_mse adds average-pooled
    octaves so coarse structure steers early steps.
    """

    kind: str = "profile_mse"
    levels: int = 1

    def __post_init__(self):
        if self.kind not in ("field_mse", "profile_mse",
                             "multiscale_profile_mse"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    beta_reg: float = 0.0
    max_iters: int = 200
    convergence_tol: float = 1e-9

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.beta_reg < 0:
            raise ValueError("beta_reg must be >= 0")


@dataclass
class Observation:
    """One measurement: a receiver plus what was recorded there.

    Exactly one payload: a fixed range profile, a complex field sample,
    or CIR taps.  Tap targets are re-rendered through the same annealed
    blend as the simulation each iteration, so a correct parameter
    vector gives zero loss at every annealing stage, not only at the
    exact-profile endpoint.
    """

    rx: tuple
    profile: np.ndarray | None = None   # target range profile bins
    field: complex | None = None        # or a complex field sample
    taps: list | None = None            # or target CIR taps

    def __post_init__(self):
        n = sum(x is not None for x in (self.profile, self.field, self.taps))
        if n != 1:
            raise ValueError(
                "observation needs exactly one of profile/field/taps")
        if self.profile is not None:
            self.profile = np.asarray(self.profile, dtype=float)


@dataclass
class MeasurementBundle:
    observations: list

    def __post_init__(self):
        if not self.observations:
            raise ValueError("measurement bundle must be nonempty")


# -- Laplacian regularizer ----------------------------------------------------------

@dataclass
class LaplacianMatrix:
    """Combinatorial graph Laplacian over the active vertex set.

    Stored dense over active vertices (desk-scale meshes); apply()
    expands per-coordinate to the flat xyz parameter layout.
    """

    active: tuple
    matrix: np.ndarray

    def apply(self, theta_values: np.ndarray) -> np.ndarray:
        v = np.asarray(theta_values, dtype=float).reshape(len(self.active), 3)
        return (self.matrix @ v).reshape(-1)

    def quad(self, theta_values: np.ndarray) -> float:
        v = np.asarray(theta_values, dtype=float).reshape(len(self.active), 3)
        return float(np.sum(v * (self.matrix @ v)))


def build_laplacian(mesh: Mesh, active_vertices) -> LaplacianMatrix:
    """L = D - A over mesh edges restricted to the active vertices.

    Row sums are zero; an active vertex with no active neighbor
    contributes a zero row (warned: the regularizer cannot see it).
    """
    active = tuple(int(i) for i in active_vertices)
    if not active:
        raise ValueError("active vertex set must be nonempty")
    index = {v: i for i, v in enumerate(active)}
    n = len(active)
    lap = np.zeros((n, n))
    edges = set()
    for tri in mesh.triangles:
        a, b, c = (int(tri[0]), int(tri[1]), int(tri[2]))
        for u, w in ((a, b), (b, c), (c, a)):
            if u > w:
                u, w = w, u
            edges.add((u, w))
    for u, w in edges:
        iu, iw = index.get(u), index.get(w)
        if iu is None or iw is None:
            continue
        lap[iu, iu] += 1.0
        lap[iw, iw] += 1.0
        lap[iu, iw] -= 1.0
        lap[iw, iu] -= 1.0
    for slot, v in enumerate(active):
        if lap[slot, slot] == 0.0:
            warnings.warn(f"vertex {v} is isolated in the active set; "
                          "its Laplacian row is zero")
    return LaplacianMatrix(active=active, matrix=lap)


# -- losses ------------------------------------------------------------------------

def _pool2(bins):
    return [(bins[2 * i] + bins[2 * i + 1]) * 0.5
            for i in range(len(bins) // 2)]


def multiscale_profile_mse(sim, target, levels: int = 1):
    """Mean of per-level MSEs between average-pooled profile pyramids.

    Level 0 compares the raw bins; each further level halves the
    resolution by 2-bin averaging.  Level count must leave at least one
    bin; lengths must match and be powers of two.
    """
    sim_bins = list(sim.bins) if isinstance(sim, RangeProfile) else list(sim)
    tgt = [float(v) for v in (target.bins if isinstance(target, RangeProfile)
                              else target)]
    n = len(sim_bins)
    if n != len(tgt):
        raise ValueError("profile shapes do not match")
    if n & (n - 1) or n == 0:
        raise ValueError("profile length must be a power of two")
    if levels < 1 or (n >> (levels - 1)) < 1:
        raise ValueError("too many pyramid levels for this profile")
    total = 0.0
    for _ in range(levels):
        m = len(sim_bins)
        acc = 0.0
        for s, t in zip(sim_bins, tgt):
            d = s - t
            acc = acc + d * d
        total = total + acc / m
        sim_bins = _pool2(sim_bins)
        tgt = _pool2(tgt)
    return total / levels


# -- Adam --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros(n: int) -> "AdamState":
        return AdamState(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(state: AdamState, grad, laplacian: LaplacianMatrix | None,
              theta: ParamVector, cfg: OptimizerConfig):
    """One bias-corrected Adam update on grad + beta_reg * L theta.

    The regularizer enters the gradient before the moment updates, so
    the moments track the regularized objective.  Returns (new theta,
    state); state is mutated in place and returned for convenience.
    """
    g = grad.values if isinstance(grad, GradientVector) else np.asarray(grad, dtype=float)
    if g.shape != theta.values.shape:
        raise ValueError("gradient and parameter shapes differ")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise FloatingPointError(
            f"non-finite gradient component {theta.names[bad[0]]!r}")
    if laplacian is not None and cfg.beta_reg > 0:
        g = g + cfg.beta_reg * laplacian.apply(theta.values)
    state.t += 1
    state.m = cfg.beta1 * state.m + (1 - cfg.beta1) * g
    state.v = cfg.beta2 * state.v + (1 - cfg.beta2) * g * g
    m_hat = state.m / (1 - cfg.beta1 ** state.t)
    v_hat = state.v / (1 - cfg.beta2 ** state.t)
    new_vals = theta.values - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
    return theta.replace_values(new_vals), state


# -- forward + loss with dual parameters ---------------------------------------------

def _dual_taps(paths, k: float):
    """Dual-preserving taps (tau, alpha, phi) from weighted paths.

    Same convention as the float CIR: alpha = |W A|, phi = arg(W A) - kL
    (unwrapped; only phase differences matter downstream)."""
    taps = []
    for p in paths:
        wa = p.weight * p.amplitude
        a2 = d_conj_free_abs2(wa)
        if value_of(a2) <= 0.0:
            continue
        alpha = d_sqrt(a2)
        phi = d_atan2(d_imag(wa), d_real(wa)) - k * p.length
        taps.append(_Tap(tau=p.length / C0, alpha=alpha, phi=phi))
    return taps


@dataclass
class _Tap:
    tau: object
    alpha: object
    phi: object


def _forward_loss(scene, plans, theta, values, bundle, loss_cfg,
                  sur_cfg, iteration):
    """Scalar loss (possibly dual) across all observations."""
    total = 0.0
    for plan, obs in zip(plans, bundle.observations):
        over = apply_params(scene, theta, values=values, rx=obs.rx)
        paths = evaluate_plan(scene, plan, rx=over.pop("rx", obs.rx), **over)
        if loss_cfg.kind == "field_mse":
            e = accumulate_field(paths, scene.cfg)
            d = e - obs.field
            total = total + d_conj_free_abs2(d)
        else:
            taps = _dual_taps(paths, scene.cfg.wavenumber)
            prof = annealed_profile(taps, sur_cfg, iteration)
            if obs.taps is not None:
                target = annealed_profile(obs.taps, sur_cfg,
                                          iteration).as_array()
            else:
                target = obs.profile
            levels = (loss_cfg.levels
                      if loss_cfg.kind == "multiscale_profile_mse" else 1)
            total = total + multiscale_profile_mse(prof, target, levels)
    return total / len(bundle.observations)


def _loss_and_grad(scene, plans, theta, bundle, loss_cfg, sur_cfg, iteration):
    n = theta.values.size
    g = np.zeros(n)
    loss_val = None
    for start in range(0, n, 4):
        idxs = list(range(start, min(start + 4, n)))
        vals, width = _seeded_values(theta, idxs)
        loss = _forward_loss(scene, plans, theta, vals, bundle, loss_cfg,
                             sur_cfg, iteration)
        if isinstance(loss, Dual):
            g[idxs] = np.real(np.asarray(loss.tan).reshape(width))
            loss_val = float(value_of(loss))
        else:
            loss_val = float(loss)
    return loss_val, GradientVector(theta.names, g)


def _min_triangle_area(mesh: Mesh, vertices) -> float:
    verts = np.asarray([[float(value_of(c)) for c in v] for v in vertices])
    a = verts[mesh.triangles[:, 0]]
    b = verts[mesh.triangles[:, 1]]
    c = verts[mesh.triangles[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    return float(areas.min()) if len(areas) else math.inf


def _guard_degenerate(scene, theta):
    """Project offsets to zero when they would crush a triangle."""
    if theta.kind not in ("vertex_offsets", "rigid"):
        return theta
    over = apply_params(scene, theta)
    verts = over.get("vertices")
    if verts is None or _min_triangle_area(scene.mesh, verts) >= 1e-12:
        return theta
    if theta.kind == "rigid":
        return theta.replace_values([0, 0, 0, 0, 0, 0, 1.0])
    warnings.warn("degenerate triangle after update; offsets reset to zero")
    return theta.replace_values(np.zeros_like(theta.values))


@dataclass
class OptimizeResult:
    theta: ParamVector
    history: list                       # dicts: iter, loss, lambda, grad_norm
    snapshots: list                     # (iteration, vertices ndarray)
    converged: bool
    message: str

    def best_loss(self) -> float:
        return min(h["loss"] for h in self.history) if self.history else math.nan


def optimize(scene: Scene, theta0: ParamVector, bundle: MeasurementBundle,
             loss_cfg: LossConfig, opt_cfg: OptimizerConfig,
             sur_cfg: SurrogateConfig | None = None,
             laplacian: LaplacianMatrix | None = None,
             snapshot_every: int = 10) -> OptimizeResult:
    """Fit parameters to measurements with annealed-profile Adam.

    Plans are rebuilt from the current parameter point each iteration
    (topology may legitimately change between steps; gradients within a
    step use the frozen plan).  Stops at max_iters or when the best
    loss improves by less than convergence_tol over a 20-iteration
    window.  A mid-run forward failure aborts with the last good
    parameters checkpointed in the result.
    """
    _require_differentiable(scene)
    if sur_cfg is None and loss_cfg.kind != "field_mse":
        raise ValueError("profile losses need a surrogate config")
    if (laplacian is None and opt_cfg.beta_reg > 0
            and theta0.kind == "vertex_offsets"):
        laplacian = build_laplacian(scene.mesh, theta0.vertex_ids)

    theta = theta0
    state = AdamState.zeros(theta.values.size)
    history = []
    snapshots = []
    best = math.inf
    best_theta = theta
    window = []
    converged = False
    message = "max_iters reached"

    def snap(it, th):
        if th.kind not in ("vertex_offsets", "rigid"):
            return
        over = apply_params(scene, th)
        verts = over.get("vertices")
        if verts is not None:
            arr = np.asarray([[float(value_of(c)) for c in v] for v in verts])
            snapshots.append((it, arr))

    for it in range(opt_cfg.max_iters):
        try:
            plans = [build_plan_at(scene, theta, obs.rx)
                     for obs in bundle.observations]
            loss, grad = _loss_and_grad(scene, plans, theta, bundle,
                                        loss_cfg, sur_cfg, it)
        except FloatingPointError:
            raise
        except KeyboardInterrupt:
            message = f"interrupted at iteration {it}"
            return OptimizeResult(theta=best_theta, history=history,
                                  snapshots=snapshots, converged=False,
                                  message=message)
        except Exception as exc:
            message = f"forward failure at iteration {it}: {exc}"
            return OptimizeResult(theta=best_theta, history=history,
                                  snapshots=snapshots, converged=False,
                                  message=message)
        lam = lambda_at(sur_cfg, it) if sur_cfg is not None else 1.0
        gnorm = float(np.linalg.norm(grad.values))
        history.append({"iter": it, "loss": loss, "lambda": lam,
                        "grad_norm": gnorm})
        if loss < best:
            best = loss
            best_theta = theta
        # the loss target moves while the blend anneals; judge convergence
        # only once the schedule has settled at the exact profile
        if lam >= 1.0 or sur_cfg is None or loss_cfg.kind == "field_mse":
            window.append(best)
        if len(window) > 20:
            improvement = window[-21] - window[-1]
            if improvement < opt_cfg.convergence_tol:
                converged = True
                message = f"converged at iteration {it}"
                break
        theta, state = adam_step(state, grad, laplacian, theta, opt_cfg)
        theta = _guard_degenerate(scene, theta)
        if snapshot_every and it % snapshot_every == 0:
            snap(it, theta)

    snap(opt_cfg.max_iters, best_theta)
    return OptimizeResult(theta=best_theta, history=history,
                          snapshots=snapshots, converged=converged,
                          message=message)


def build_plan_at(scene: Scene, theta: ParamVector, rx):
    """Plan built against the geometry theta describes (floats only)."""
    over = apply_params(scene, theta, rx=rx)
    verts = over.get("vertices")
    tx = over.get("tx", scene.tx)
    rx_eff = over.get("rx", rx)
    if verts is None and tx is scene.tx:
        return build_plan(scene, vfloat(rx_eff))
    shadow = Scene(mesh=(scene.mesh if verts is None else
                         Mesh(vertices=np.asarray([[float(value_of(c)) for c in v]
                                                   for v in verts]),
                              triangles=scene.mesh.triangles,
                              material_ids=scene.mesh.material_ids,
                              material_names=scene.mesh.material_names)),
                   materials=scene.materials, tx=vfloat(tx), cfg=scene.cfg)
    return build_plan(shadow, vfloat(rx_eff))


# -- export ------------------------------------------------------------------------

def save_history_csv(path, result: OptimizeResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "loss", "lambda", "grad_norm"])
        for h in result.history:
            w.writerow([h["iter"], f"{h['loss']:.17g}", f"{h['lambda']:.17g}",
                        f"{h['grad_norm']:.17g}"])


def save_snapshot_obj(path, vertices: np.ndarray, mesh: Mesh):
    with open(path, "w") as fh:
        for v in vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for tri in mesh.triangles:
            fh.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")


def save_run_manifest(path, scene_desc: dict, theta: ParamVector,
                      loss_cfg: LossConfig, opt_cfg: OptimizerConfig,
                      sur_cfg: SurrogateConfig | None, result: OptimizeResult):
    doc = {
        "scene": scene_desc,
        "theta": {"kind": theta.kind,
                  "names": list(theta.names),
                  "values": [float(v) for v in theta.values]},
        "loss": {"kind": loss_cfg.kind, "levels": loss_cfg.levels},
        "optimizer": {"lr": opt_cfg.lr, "beta1": opt_cfg.beta1,
                      "beta2": opt_cfg.beta2, "eps_adam": opt_cfg.eps_adam,
                      "beta_reg": opt_cfg.beta_reg,
                      "max_iters": opt_cfg.max_iters,
                      "convergence_tol": opt_cfg.convergence_tol},
        "surrogate": (None if sur_cfg is None else
                      {"n_bins": sur_cfg.n_bins,
                       "dtau_per_bin": sur_cfg.dtau_per_bin,
                       "tau0": sur_cfg.tau0, "sigma": sur_cfg.sigma_eff,
                       "schedule": [list(k) for k in sur_cfg.schedule],
                       "phase_mode": sur_cfg.phase_mode, "f_c": sur_cfg.f_c}),
        "result": {"converged": result.converged, "message": result.message,
                   "iterations": len(result.history),
                   "best_loss": result.best_loss()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
