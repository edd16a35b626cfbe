"""Numerical experiments on L^4 norms, geodesic tubes and Kakeya-Nikodym norms
of Laplace eigenfunctions on the round sphere and the flat torus."""

from .models import (DomainError, SphereHarmonicSpec, TorusEigenfunction, SampledField,
                     eval_sphere_harmonic, eval_torus_eigenfunction, lattice_circle_points)
from .geometry import (GreatCircle, TorusLine, Tube, sphere_grid, torus_grid,
                       geodesic_grid_sphere, geodesic_grid_torus)
from .norms import lp_norm, restriction_norm, kn_norm, ratio_1_1pp, ratio_1_1ppp

__version__ = "0.1.0"
