"""Lightweight local/global feature network for light-field super-resolution.

Self-contained stack: a differentiable tensor core (``autodiff``/``kernels``),
light-field data handling (``lightfield``), the network itself with parameter
and FLOPs accounting (``model``/``costing``), training losses and loop
(``losses``/``train``), quality metrics (``metrics``) and a CLI (``cli``).
"""

__version__ = "0.1.0"
