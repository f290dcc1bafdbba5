"""The Shield: authenticated memory engine and secured register interface."""

from .config import (EngineSetConfig, MacKind, MemoryRegion, Mode, RegisterMode, ShieldConfig,
                     format_config, parse_config)
from .engine import (BurstRequest, ChunkAccess, ShieldState, chunk_open, chunk_seal,
                     decode_burst, flush, new_shield, shield_read, shield_write)
from .registers import (RegisterClient, RegisterFile, reg_accel_read, reg_accel_write,
                        reg_host_read, reg_host_write)

__all__ = [
    "BurstRequest", "ChunkAccess", "EngineSetConfig", "MacKind", "MemoryRegion", "Mode",
    "RegisterClient", "RegisterFile", "RegisterMode", "ShieldConfig", "ShieldState",
    "chunk_open", "chunk_seal", "decode_burst", "flush", "format_config", "new_shield",
    "parse_config", "reg_accel_read", "reg_accel_write", "reg_host_read", "reg_host_write",
    "shield_read", "shield_write",
]
