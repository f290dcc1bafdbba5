"""The untrusted world: DRAM, adversary, trackers, statistics and cost model."""

from .adversary import (Adversary, FlipBit, Restore, ScanPlaintext, Snapshot, SpliceChunks,
                        apply_adversary, parse_action)
from .costmodel import CostModelParams, OverheadReport, model_cycles
from .dram import SimDram, dram_read, dram_write
from .stats import REGISTER_SET, ShieldStats
from .trackers import IvTracker, LeakProbe

__all__ = [
    "Adversary", "CostModelParams", "FlipBit", "IvTracker", "LeakProbe", "OverheadReport",
    "REGISTER_SET", "Restore", "ScanPlaintext", "ShieldStats", "SimDram", "Snapshot",
    "SpliceChunks", "apply_adversary", "dram_read", "dram_write", "model_cycles",
    "parse_action",
]
