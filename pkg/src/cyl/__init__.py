"""cyl: conformal Laplacians of rough metrics at desk scale.

Library layout: core (grids/stencils/quadrature), metric, charts,
elliptic, yamabe, green, ae, funcspaces, cli.  Heavy imports stay inside
the submodules so the CLI can pin the thread environment first.
"""

__version__ = "0.1.0"
