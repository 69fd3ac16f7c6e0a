"""Object 6-DoF pose estimation for human-object interaction images,
milestone-to-dense motion interpolation, and tracking rewards/metrics."""

__version__ = "0.1.0"

from ._kernels import backend_name

__all__ = ["backend_name", "__version__"]
