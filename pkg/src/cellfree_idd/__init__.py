"""Link-level Monte-Carlo simulator for uplink cell-free massive MIMO with
AP selection, MMSE soft interference cancellation, list detection and
LDPC-coded iterative detection and decoding."""

from .constellation import qpsk
from .harness import BerRecord, SimConfig, load_config, run_trial, sweep
from .idd import DETECTORS, idd_loop
from .ldpc import LdpcCode, box_plus, decode, load_code
from .list_detector import SacConfig, list_detect
from .selection import ALL_APS, APS_SEL, SelectionPolicy, build_selection

__all__ = [
    "ALL_APS", "APS_SEL", "BerRecord", "DETECTORS", "LdpcCode", "SacConfig", "SelectionPolicy", "SimConfig",
    "box_plus", "build_selection", "decode", "idd_loop", "list_detect", "load_code", "load_config", "qpsk",
    "run_trial", "sweep",
]
__version__ = "0.1.0"
