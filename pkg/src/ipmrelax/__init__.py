"""Relaxation of incompressible porous-media flow.

Modules: ``geometry`` (constitutive set, hull and wave-cone directions),
``waves`` (grids, fields and localized plane waves), ``subsolution``
(mixing profiles), ``cintegration`` (iterative convex integration),
``verify`` (weak residuals and coarse-graining), ``io`` and ``cli``.
"""

__version__ = "0.1.0"
