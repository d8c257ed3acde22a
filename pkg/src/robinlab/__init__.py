"""Robin p-Laplacian laboratory for non-smooth planar domains."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    DIRICHLET,
    ROBIN,
    TRUNCATION,
    PolygonDomain,
    ProfileFunction,
    build_cusp_polygon,
    cusp_exterior_perimeter,
    cusp_interior_perimeter,
    cusp_volume,
    cusp_volume_convexity_bound,
    disk_domain,
    power_log_profile,
    power_profile,
    rectangle_domain,
    square_domain,
    tabulated_profile,
)
