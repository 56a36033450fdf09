"""Quality-agnostic training toolkit.

A desk-scale stack for studying multi-quality robust training: kernel
dependence measures (HSIC, random Fourier features), a minimal reverse-mode
autodiff engine with a small conv net, block-DCT quality degradation,
one-step adversarial weight perturbation, the combined training loop, and
an error-bound harness.
"""

__version__ = "0.1.0"
