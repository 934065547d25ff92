from .geometry import BoundaryMesh, Ellipsoid, Shape, Sphere, Star, make_boundary_mesh, make_shape
from .potentials import *  # noqa: F401,F403
from .quadrature import LayerQuadrature, QuadratureOptions
