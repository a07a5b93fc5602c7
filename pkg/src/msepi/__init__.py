"""msepi: reconstruction toolkit for highly accelerated multishot EPI.

Submodules are imported lazily by the code that needs them; the package
root only pins the version and re-exports the most used entry points.
"""

__version__ = "0.1.0"

from .fourier import fft2c, ifft2c, conj_mirror

__all__ = ["fft2c", "ifft2c", "conj_mirror", "__version__"]
