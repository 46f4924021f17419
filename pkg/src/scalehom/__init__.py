"""Scale-by-scale homogenization of a divergence-free Gaussian drift.

Modules: :mod:`~scalehom.ladder` (scale ladder), :mod:`~scalehom.field`
(spectral drift fields), :mod:`~scalehom.slbm` and :mod:`~scalehom.flow`
(Brownian motion and geometric flow on SL(n)), :mod:`~scalehom.scalar`
(n = 2 scalar reductions), :mod:`~scalehom.homogenize` (proxy ladder,
quadratic variation, coupling), :mod:`~scalehom.particle` (drift-diffusion
Monte Carlo), :mod:`~scalehom.aniso` (anisotropic diffusivity flow) and
:mod:`~scalehom.harness` (configuration, statistics, output and CLI).
"""
from __future__ import annotations

__version__ = "0.1.0"

__all__ = ["__version__"]
