"""Physical constants for the cesium D2 probe and the atomic ensemble.

All values are SI. Frequencies that are naturally quoted in Hz (hyperfine
splittings) are stored in Hz; decay rates are angular (rad/s).

The table can be overridden from a versioned key-value file (YAML or JSON)::

    version: 1
    constants:
      cs_d2_wavelength_m: 852.347e-9
      excited_hfs_35_hz: 452.24e6
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from types import MappingProxyType

import yaml

CONSTANTS_VERSION = 1

_DEFAULTS = {
    "cs_d2_wavelength_m": 852.34727582e-9,
    # natural linewidth, 2*pi*5.234 MHz
    "cs_d2_linewidth_rad_s": 2 * math.pi * 5.234e6,
    # excited-state offsets used by the F=4 Faraday coefficient
    "excited_hfs_35_hz": 452.24e6,
    "excited_hfs_45_hz": 251.00e6,
    # excited-state offsets used by the F=3 Faraday coefficient
    "excited_hfs_23_hz": 151.21e6,
    "excited_hfs_24_hz": 352.45e6,
    "ground_hfs_hz": 9.192631770e9,
    "cs_nuclear_spin": 3.5,
    # |g_F| mu_B / hbar for the F=4 ground state
    "cs_f4_gyromagnetic_rad_s_t": 2 * math.pi * 3.4986e9,
}

DEFAULT_CONSTANTS = MappingProxyType(dict(_DEFAULTS))


class ConstantsError(ValueError):
    pass


def load_constants(path: str | Path) -> MappingProxyType:
    """Read a constants file and merge it over the embedded defaults.

    Unknown keys and unsupported versions are rejected.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConstantsError(f"{path}: expected a mapping at top level")
    version = data.get("version")
    if version != CONSTANTS_VERSION:
        raise ConstantsError(f"{path}: unsupported constants version {version!r}")
    overrides = data.get("constants", {}) or {}
    unknown = set(overrides) - set(_DEFAULTS)
    if unknown:
        raise ConstantsError(f"{path}: unknown constants {sorted(unknown)}")
    merged = dict(_DEFAULTS)
    for key, value in overrides.items():
        merged[key] = float(value)
    return MappingProxyType(merged)
