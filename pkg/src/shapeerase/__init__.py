"""Shape-erased feature learning on synthetic cross-modal identity data.

Subpackages follow the pipeline: :mod:`diffcore` (autodiff), :mod:`subspace`
(projector and decomposition), :mod:`losses`, :mod:`balance`, :mod:`model`,
:mod:`synthdata`, :mod:`trainer`, :mod:`evalkit`, :mod:`milab` (exact discrete
information measures) and :mod:`cli`.
"""

__version__ = "0.1.0"
