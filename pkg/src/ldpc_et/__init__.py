"""LDPC belief-propagation decoding with early termination, and CV-QKD key-rate accounting."""

from .code import (AlistFormatError, LiftingError, ParityCheckMatrix, PunctureMask, Puncturer,
                   active_var_set, apply_puncture, lift_protograph, load_alist, read_alist,
                   regular_code, save_alist, write_alist)
from .decoder import (BeliefPropagationDecoder, DecodeConfig, DecodeOutcome, decode,
                      syndrome_check, vnr_should_stop, vnr_statistic)

__version__ = "0.1.0"
