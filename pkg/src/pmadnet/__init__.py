"""pmadnet: breast-ultrasound lesion segmentation and classification.

A from-scratch stack: reverse-mode autodiff tensors, numba-accelerated
convolution kernels with a pure-numpy fallback (PMADNET_KERNELS env flag),
an encoder-decoder segmentation network with precision-mapping attention, a
component-specific feature-enhancement classifier, deterministic SGD
training, and Grad-CAM introspection.
"""

from .errors import PmadnetError
from .tensor import Tensor, Tape, no_grad, tensor_from

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "no_grad", "tensor_from", "PmadnetError", "__version__"]
