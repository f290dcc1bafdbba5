import os
import random
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from fpga_tee.shield.config import parse_config

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
VECTORS = Path(__file__).resolve().parent / "vectors"

# filled by test_acceptance, printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def load_vectors(name):
    """Rows of ``<name> <hex>... <hex>``; '-' stands for the empty string."""
    rows = []
    for line in (VECTORS / name).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        label, *fields = line.split()
        rows.append((label, *[b"" if f == "-" else bytes.fromhex(f) for f in fields]))
    return rows


TWO_REGION_CFG = """
[shield]
registers = 8

[engine_set 0]
aes_engines = 2
sbox = 16
mac = hmac

[engine_set 1]
aes_engines = 1
sbox = 4
key_bits = 256
mac = pmac
mac_engines = 2

[region data]
id = 1
base = 0x1000
size = 0x2000
c_mem = 512
tag_base = 0x10000
mode = rw
counters = on
buffer_bytes = 1024
engine_set = 0

[region out]
id = 2
base = 0x4000
size = 0x1000
c_mem = 256
tag_base = 0x12000
mode = stream_write
buffer_bytes = 512
engine_set = 1

[region table]
id = 3
base = 0x6000
size = 0x800
c_mem = 64
tag_base = 0x14000
mode = ro
engine_set = 0
"""


@pytest.fixture
def cfg():
    return parse_config(TWO_REGION_CFG)


@pytest.fixture
def rng():
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
