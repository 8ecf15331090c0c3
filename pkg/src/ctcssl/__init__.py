"""CTC semi-supervised learning with teacher pseudo-labels and confidence-based data selection."""
from .ctc import INFEASIBLE, Alphabet, InfeasibleTargetError, collapse, ctc_log_likelihood, ctc_loss_and_grad
from .decoder import greedy_decode, prefix_beam_decode
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "Alphabet", "BACKEND", "INFEASIBLE", "InfeasibleTargetError", "collapse", "ctc_log_likelihood",
    "ctc_loss_and_grad", "greedy_decode", "prefix_beam_decode", "__version__",
]
