"""AU-conditioned adversarial synthesis of 3D morphable-model expression
parameters, with a self-contained autodiff/NN stack, mesh decoding and a
regression-based evaluation harness."""

__version__ = "0.1.0"
