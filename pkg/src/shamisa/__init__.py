"""Self-supervised no-reference image quality representations.

Distortion synthesis, relation-graph weighted non-contrastive training
with optimal-transport guidance, and a frozen-encoder probe protocol,
all on a small reverse-mode autodiff core over dense float64 tensors.
"""

__version__ = "0.1.0"
