"""Video-based person re-identification with spatial-temporal attention.

Self-contained engine: per-frame CNN features over YUV + optical-flow
inputs, feed-forward temporal attention, multi-hop spatial attention,
squared-hinge + identity training of a shared-parameter Siamese pair,
and CMC probe/gallery evaluation. All numerics run on a built-in
reverse-mode autodiff layer over numpy arrays.
"""

__version__ = "0.1.0"
