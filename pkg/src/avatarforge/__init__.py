"""Progressive text-guided avatar optimization toolkit.

A parametric body model is optimized in three stages (geometry,
appearance, animation refinement) by score-distillation gradients from a
pluggable epsilon-prediction oracle, rendered through a differentiable
software rasterizer, with adaptive variational parameters and
avatar-aware noise composition.
"""

__version__ = "0.1.0"
