"""Toolkit for the stochastically forced Lorenz-96 system with degenerate forcing.

Every third coordinate is forced; the span of the forced directions is an
almost-surely invariant subspace on which the dynamics reduce to independent
Ornstein-Uhlenbeck processes.  The package provides:

* exact definitions of the advection bilinear form, its Jacobian, and the
  transverse coupling matrices (``l96deg.model``),
* reproducible SDE integration and coupled-pair / confinement probes
  (``l96deg.sde``),
* transverse Lyapunov and moment-Lyapunov estimators over the projective
  cocycle, plus the exact 4x4 instability certificate (``l96deg.cocycle``),
* an exact-rational Lie-bracket closure engine with span tracking,
  shift-conjugation, and bracket-spanning rank checks (``l96deg.liecap``),
* experiment drivers, manifests, delimited reports and figures
  (``l96deg.experiments``, ``l96deg.cli``).
"""

__version__ = "0.1.0"

from .model import L96Config, SubspaceIndexing, BlowUpError

__all__ = ["L96Config", "SubspaceIndexing", "BlowUpError", "__version__"]
