"""Melting-rate toolkit for the radial one-phase exterior Stefan problem.

Modules, bottom-up:

* ``weighted_calculus``: grids, Gaussian-weighted quadrature and radial finite differences
* ``laguerre_basis``: the polynomial eigenbasis of ``-Delta + Lambda`` and its constants
* ``spectral_solver``: eigenpairs with a Dirichlet hole at ``sqrt(b)``
* ``modulation_dynamics``: the reduced ODEs for the stable and excited regimes
* ``stefan_pde``: the front-tracking PDE solver and its diagnostics
* ``rate_analysis``: extinction-time estimates and melting-rate fits
* ``cli``: the ``stefan-melt`` command
"""

__version__ = "0.1.0"
