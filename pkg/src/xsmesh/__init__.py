"""xsmesh: macroscopic cross-section lookups on a 2D processing-element mesh.

A deterministic desk-scale simulator and kernel library for the
decomposed lookup pipeline: energy-band/nuclide data decomposition,
column particle sorting, diffusion load balancing, round-robin
accumulation, tiling, a calibrated cycle-cost model, and shared-memory
reference kernels used as oracles and baselines.
"""

__version__ = "0.1.0"

from .gridsim import CycleModel, GridConfig, SimReport, build_grid
from .kernel import Particle, lookup_all_nuclides
from .patterns import run_pipeline
from .reference import build_ueg, lookup_ueg, oracle_batch, sorted_batch
from .xsdata import Material, NuclideGrid, generate_material, load_material, save_material

__all__ = [
    "CycleModel",
    "GridConfig",
    "Material",
    "NuclideGrid",
    "Particle",
    "SimReport",
    "build_grid",
    "build_ueg",
    "generate_material",
    "load_material",
    "lookup_all_nuclides",
    "lookup_ueg",
    "oracle_batch",
    "run_pipeline",
    "save_material",
    "sorted_batch",
    "__version__",
]
