"""Tilted-phase CPM over 1-bit quantized, oversampled receivers."""

__version__ = "0.1.0"

from .cpm import (PhaseFrame, TiltedState, WaveformConfig, carson_bandwidth, ftn_assemble,  # noqa: E402
                  ftn_recode, modulate, phase_trajectory, relative_carson_ratio,
                  state_transition, tilted_phase_symbol)
from .detection import (AppTable, TrellisDescriptor, TrellisTooLarge,  # noqa: E402
                        auxiliary_channel_prob, bcjr_detect, build_trellis,
                        estimate_information_rate, simple_demodulate)
from .frontend import (QuantizedFrame, ReceiveChain, apply_chain, build_rx_filter,  # noqa: E402
                       quantize_1bit, simulate_link)
from .orthant import OrthantQuery, orthant_probability  # noqa: E402
from .spectrum import (BandwidthReport, PsdEstimate, bandwidth_report,  # noqa: E402
                       containment_bandwidth, estimate_psd)

__all__ = [
    "AppTable", "BandwidthReport", "OrthantQuery", "PhaseFrame", "PsdEstimate", "QuantizedFrame",
    "ReceiveChain", "TiltedState", "TrellisDescriptor", "TrellisTooLarge", "WaveformConfig",
    "apply_chain", "auxiliary_channel_prob", "bandwidth_report", "bcjr_detect", "build_rx_filter",
    "build_trellis", "carson_bandwidth", "containment_bandwidth", "estimate_information_rate",
    "estimate_psd", "ftn_assemble", "ftn_recode", "modulate", "orthant_probability",
    "phase_trajectory", "quantize_1bit", "relative_carson_ratio", "simple_demodulate",
    "simulate_link", "state_transition", "tilted_phase_symbol",
]
