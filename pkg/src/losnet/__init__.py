"""Multi-robot line-of-sight connectivity maintenance under position noise.

The package is organised bottom-up:

- :mod:`losnet.geometry` -- ellipsoids, obstacles, occlusion tests
- :mod:`losnet.certificates` -- linear barrier-certificate control constraints
- :mod:`losnet.qp` -- small strictly convex QP solver (active-set projection)
- :mod:`losnet.graph` -- LOS graph, edge weighting, spanning-tree selection
- :mod:`losnet.protocol` -- decentralized tree construction + consensus ADMM
- :mod:`losnet.sim` -- time-stepped simulator and metrics
- :mod:`losnet.cli` -- command-line entry point
"""

__version__ = "0.1.0"
