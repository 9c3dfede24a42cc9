from .grids import TorusGrid, ChartGrid, cube
from .fields import (ScalarField, TensorField, constant_scalar, identity_tensor,
                     from_callback, field_to_csv, field_to_bytes,
                     field_values_from_bytes, MAGIC)
from .stencils import diff, diff_array, gradient_arrays, laplacian_array
from .cutoff import Cutoff, cutoff_eval
from .quadrature import SphereQuadrature, sphere_nodes, sphere_integral
from .interp import interp_eval, interp_tensor

__all__ = [
    "TorusGrid", "ChartGrid", "cube",
    "ScalarField", "TensorField", "constant_scalar", "identity_tensor",
    "from_callback", "field_to_csv", "field_to_bytes", "field_values_from_bytes",
    "MAGIC", "diff", "diff_array", "gradient_arrays", "laplacian_array",
    "Cutoff", "cutoff_eval",
    "SphereQuadrature", "sphere_nodes", "sphere_integral",
    "interp_eval", "interp_tensor",
]
