"""Desk-scale simulator for a cloud-FPGA trusted execution workflow.

Subpackages: ``shield`` (memory/register protection engine), ``sim`` (untrusted
DRAM, adversary, trackers, cost model) and ``harness`` (traces, scenarios,
calibration, CLI). Top-level modules cover primitives (``crypto``), the boot
chain (``trust_chain``) and remote attestation (``attestation``).
"""

__version__ = "0.1.0"
