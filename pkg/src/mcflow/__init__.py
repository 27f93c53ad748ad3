"""mcflow: pointwise Monte Carlo solver for incompressible flow.

Estimators evaluate velocities at arbitrary points; module layout:

* geometry   -- scenes, ray/line queries, boundary sampling, insidedness
* kernels    -- fundamental solutions and sampling primitives
* projection -- pressure-gradient estimation (free space + walk-on-boundary)
* diffusion  -- Gaussian-convolution and diffusion walk-on-boundary solvers
* transport  -- semi-Lagrangian advection, forces, buoyancy
* cache      -- velocity/scalar grids, particles, caching policies
* stepper    -- operator-splitting time steppers
* cli        -- batch front end (`mcflow run|project-convergence|...`)
"""

from .geometry import Scene, Solid, make_scene, circle_vertices, box_vertices
from .kernels import (
    green,
    grad_green,
    dgdn,
    hessian_s,
    heat_kernel,
    heat_kernel_dn_y,
    sample_gamma_half_d,
    sample_heat_initial,
    sample_radial_ball,
)
from .streams import StreamSpec

__all__ = [
    "Scene",
    "Solid",
    "make_scene",
    "circle_vertices",
    "box_vertices",
    "green",
    "grad_green",
    "dgdn",
    "hessian_s",
    "heat_kernel",
    "heat_kernel_dn_y",
    "sample_gamma_half_d",
    "sample_heat_initial",
    "sample_radial_ball",
    "StreamSpec",
]
