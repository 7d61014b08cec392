"""rfray: differentiable ray-traced radio propagation.

Deterministic image-method path tracing over triangle meshes with
uniform wedge diffraction, forward-mode derivatives through every
path quantity, and an annealed spectral surrogate for inverse problems.
"""

from .specfun import transition_function, transition_derivative, complex_erfc
from .dual import Dual, seed, value_of, tangent_of
from .geometry import Mesh, Wedge, load_obj, save_obj, extract_wedges
from .materials import (Material, builtin_materials, load_materials,
                        fresnel, intrinsic_impedance, propagation_constant,
                        penetration_factor, material_gradients)
from .diffraction import (WedgeFrame, DiffractionGeometry, wedge_frame,
                          diffraction_point, diffraction_geometry,
                          utd_coefficient, diffracted_field,
                          transition_factor)
from .pathtracer import WeightMode, PathSpec, TracedPath, image_trace
from .field import (SimulationConfig, ChirpConfig, CirTap, CIR, GridSpec,
                    FieldGrid, build_cir, fmcw_signal, doppler_shift,
                    range_profile_fft, save_field_grid, load_field_grid,
                    save_cir_json, load_cir_json)
from .engine import (Scene, Plan, build_plan, evaluate_plan, field_at,
                     cir_at, render_field_grid)
from .gradients import (ParamVector, GradientVector, apply_params,
                        field_gradient, fd_oracle, gradcheck,
                        render_field_gradient, path_output_gradient,
                        UnsupportedModeError, OracleFailureError)
from .surrogate import (SurrogateConfig, RangeProfile, default_schedule,
                        lambda_at, dirichlet_kernel, dirichlet_derivative,
                        surrogate_profile, fft_profile, annealed_profile,
                        save_profile_json, load_profile_json)
from .optimize import (LossConfig, OptimizerConfig, Observation,
                       MeasurementBundle, LaplacianMatrix, build_laplacian,
                       multiscale_profile_mse, AdamState, adam_step,
                       OptimizeResult, optimize, build_plan_at)
from .sceneio import (SceneValidationError, LoadedScene, load_scene,
                      load_schema, validate_document, merge_meshes)

__version__ = "0.1.0"

__all__ = [
    "transition_function", "transition_derivative", "complex_erfc",
    "Dual", "seed", "value_of", "tangent_of",
    "Mesh", "Wedge", "load_obj", "save_obj", "extract_wedges",
    "Material", "builtin_materials", "load_materials", "fresnel",
    "intrinsic_impedance", "propagation_constant", "penetration_factor",
    "material_gradients",
    "WedgeFrame", "DiffractionGeometry", "wedge_frame",
    "diffraction_point", "diffraction_geometry", "utd_coefficient",
    "diffracted_field", "transition_factor",
    "WeightMode", "PathSpec", "TracedPath", "image_trace",
    "SimulationConfig", "ChirpConfig", "CirTap", "CIR", "GridSpec",
    "FieldGrid", "build_cir", "fmcw_signal", "doppler_shift",
    "range_profile_fft", "save_field_grid", "load_field_grid",
    "save_cir_json", "load_cir_json",
    "Scene", "Plan", "build_plan", "evaluate_plan", "field_at",
    "cir_at", "render_field_grid",
    "ParamVector", "GradientVector", "apply_params", "field_gradient",
    "fd_oracle", "gradcheck", "render_field_gradient",
    "path_output_gradient", "UnsupportedModeError", "OracleFailureError",
    "SurrogateConfig", "RangeProfile", "default_schedule", "lambda_at",
    "dirichlet_kernel", "dirichlet_derivative", "surrogate_profile",
    "fft_profile", "annealed_profile", "save_profile_json",
    "load_profile_json",
    "LossConfig", "OptimizerConfig", "Observation", "MeasurementBundle",
    "LaplacianMatrix", "build_laplacian", "multiscale_profile_mse",
    "AdamState", "adam_step", "OptimizeResult", "optimize", "build_plan_at",
    "SceneValidationError", "LoadedScene", "load_scene", "load_schema",
    "validate_document", "merge_meshes",
    "__version__",
]
