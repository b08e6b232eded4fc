"""Multi-modal low-light image enhancement at desk scale.

A one-stage Retinex pipeline (illumination estimator + corruption restorer)
extended with auxiliary modalities fused through gated cross-attention,
built on a minimal finite-difference-audited autodiff substrate.
"""

from .estimator import LowLightEnhancer
from .mmcab import EnhancerModel, RestorerConfig, progressive_refine
from .modalities import ModalityDescriptor, ModalityRegistry, default_registry

__version__ = "0.1.0"

__all__ = [
    "LowLightEnhancer", "EnhancerModel", "RestorerConfig",
    "progressive_refine", "ModalityDescriptor", "ModalityRegistry",
    "default_registry", "__version__",
]
