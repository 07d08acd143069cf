"""Pilotless MIMO-OFDM link simulation with end-to-end learned constellations."""

from .coding import MCS_TABLE, McsEntry, build_code, ldpc_decode, ldpc_encode, mcs_lookup
from .constellation import Constellation, init_constellation_params, qam_reference
from .link import ChannelParams, Profile, SlotGeometry, generate_channel
from .neuralrx import init_rx_params, rx_forward
from .train import TrainConfig, train_e2e

__all__ = [
    "MCS_TABLE", "McsEntry", "build_code", "ldpc_decode", "ldpc_encode", "mcs_lookup",
    "Constellation", "init_constellation_params", "qam_reference",
    "ChannelParams", "Profile", "SlotGeometry", "generate_channel",
    "init_rx_params", "rx_forward", "TrainConfig", "train_e2e",
]
