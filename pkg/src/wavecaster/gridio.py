"""Gridded-field data model, WGF binary I/O, land masking and normalization.

A GridField is a single lat x lon field of float64 values with grid
geometry in degrees. Land cells of wave variables carry NaN. The WGF v1
format is little-endian:

    magic "WGF1" | u32 version=1 | u8 var_id | u8 units | u16 reserved
    | u32 lat_count | u32 lon_count | f64 lat0,dlat,lon0,dlon
    | i64 valid_time (unix seconds, -1 if static)
    | lat_count*lon_count f64 values, row-major (lat outer)

A dataset manifest is plain text, one `<iso-time> <variable> <relative-path>`
record per line.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FormatError, ShapeError

_MAGIC = b"WGF1"
_VERSION = 1
_HEADER = struct.Struct("<4sIBBHIIddddq")


class VarId(IntEnum):
    GENERIC = 0
    SWH = 1
    MWP = 2
    MWD = 3
    U10 = 4
    V10 = 5
    DEPTH = 6


_UNIT_CODES = {"": 0, "m": 1, "s": 2, "deg": 3, "m/s": 4}
_UNIT_NAMES = {v: k for k, v in _UNIT_CODES.items()}

DEFAULT_UNITS = {
    VarId.GENERIC: "",
    VarId.SWH: "m",
    VarId.MWP: "s",
    VarId.MWD: "deg",
    VarId.U10: "m/s",
    VarId.V10: "m/s",
    VarId.DEPTH: "m",
}


@dataclass(frozen=True)
class GridField:
    """One masked 2-D geophysical field on a regular lat/lon grid."""

    var_id: VarId
    values: np.ndarray  # (lat_count, lon_count), float64
    lat0: float
    dlat: float
    lon0: float
    dlon: float
    units: str = ""
    valid_time: int = -1  # unix seconds, -1 for static fields

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"GridField values must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def lat_count(self):
        return self.values.shape[0]

    @property
    def lon_count(self):
        return self.values.shape[1]

    @property
    def lats(self):
        return self.lat0 + self.dlat * np.arange(self.lat_count)

    @property
    def lons(self):
        return self.lon0 + self.dlon * np.arange(self.lon_count)

    def same_geometry(self, other: "GridField") -> bool:
        return (
            self.values.shape == other.values.shape
            and abs(self.lat0 - other.lat0) < 1e-9
            and abs(self.dlat - other.dlat) < 1e-9
            and abs(self.lon0 - other.lon0) < 1e-9
            and abs(self.dlon - other.dlon) < 1e-9
        )

    def with_values(self, values, var_id=None, units=None):
        return replace(
            self,
            values=np.asarray(values, dtype=np.float64),
            var_id=self.var_id if var_id is None else var_id,
            units=self.units if units is None else units,
        )


@dataclass(frozen=True)
class LandMask:
    """Boolean ocean mask (True = ocean) shared by all companion fields."""

    ocean: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ocean", np.asarray(self.ocean, dtype=bool))

    @property
    def ocean_count(self):
        return int(self.ocean.sum())

    @property
    def land(self):
        return ~self.ocean


@dataclass(frozen=True)
class WaveState:
    """The 3-component wave description, direction held as (sin, cos)."""

    swh: GridField
    mwp: GridField
    mwd_sin: GridField
    mwd_cos: GridField

    @classmethod
    def from_mwd_degrees(cls, swh: GridField, mwp: GridField, mwd: GridField) -> "WaveState":
        s, c = encode_direction(mwd)
        return cls(swh=swh, mwp=mwp, mwd_sin=s, mwd_cos=c)

    def mwd_degrees(self) -> GridField:
        return decode_direction(self.mwd_sin, self.mwd_cos)

    def channels(self) -> np.ndarray:
        """Stack as (4, H, W): swh, mwp, sin, cos."""
        return np.stack(
            [self.swh.values, self.mwp.values, self.mwd_sin.values, self.mwd_cos.values]
        )


# ---------------------------------------------------------------------------
# WGF file I/O


def write_wgf(fld: GridField, path) -> None:
    if fld.units not in _UNIT_CODES:
        raise ConfigError(f"unknown units {fld.units!r}")
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        int(fld.var_id),
        _UNIT_CODES[fld.units],
        0,
        fld.lat_count,
        fld.lon_count,
        fld.lat0,
        fld.dlat,
        fld.lon0,
        fld.dlon,
        fld.valid_time,
    )
    payload = np.ascontiguousarray(fld.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_wgf(path) -> GridField:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header, {len(raw)} bytes", offset=len(raw))
    (magic, version, var_code, units_code, _reserved, lat_count, lon_count,
     lat0, dlat, lon0, dlon, valid_time) = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    try:
        var_id = VarId(var_code)
    except ValueError:
        raise FormatError(f"{path}: unknown var_id {var_code}", offset=8) from None
    if units_code not in _UNIT_NAMES:
        raise FormatError(f"{path}: unknown units code {units_code}", offset=9)
    expected = _HEADER.size + 8 * lat_count * lon_count
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload length mismatch, header implies {expected} bytes, file has {len(raw)}",
            offset=min(len(raw), expected),
        )
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(lat_count, lon_count)
    return GridField(
        var_id=var_id,
        values=values.copy(),
        lat0=lat0,
        dlat=dlat,
        lon0=lon0,
        dlon=dlon,
        units=_UNIT_NAMES[units_code],
        valid_time=valid_time,
    )


def iso_time(unix_seconds: int) -> str:
    return datetime.fromtimestamp(unix_seconds, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_iso_time(text: str) -> int:
    return int(datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc).timestamp())


def write_manifest(records, path) -> None:
    """records: iterable of (unix_time, VarId, relative_path)."""
    lines = [f"{iso_time(t)} {VarId(v).name} {rel}" for t, v, rel in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected '<iso-time> <variable> <path>'")
        t = parse_iso_time(parts[0])
        try:
            var = VarId[parts[1]]
        except KeyError:
            raise FormatError(f"{path}:{lineno}: unknown variable {parts[1]!r}") from None
        records.append((t, var, parts[2]))
    return records


# ---------------------------------------------------------------------------
# masking and direction encoding


def derive_mask(depth: GridField) -> LandMask:
    """Ocean wherever elevation is strictly below sea level; 0 counts as land."""
    if depth.var_id != VarId.DEPTH:
        raise ConfigError(f"derive_mask needs a DEPTH field, got {depth.var_id.name}")
    ocean = depth.values < 0.0
    mask = LandMask(ocean)
    if mask.ocean_count == 0:
        raise DomainError("grid is all land; no usable ocean cells")
    return mask


def encode_direction(mwd: GridField):
    """Degrees clockwise from north (direction of travel) to (sin, cos) fields."""
    rad = np.deg2rad(mwd.values)
    s = mwd.with_values(np.sin(rad), var_id=VarId.GENERIC, units="")
    c = mwd.with_values(np.cos(rad), var_id=VarId.GENERIC, units="")
    return s, c


def decode_direction(sin_f: GridField, cos_f: GridField) -> GridField:
    """Back to degrees in [0, 360); renormalizes and NaNs out near-zero vectors."""
    s, c = sin_f.values, cos_f.values
    mag = np.sqrt(s * s + c * c)
    with np.errstate(invalid="ignore", divide="ignore"):
        deg = np.degrees(np.arctan2(s / mag, c / mag)) % 360.0
    deg = np.where(mag < 1e-6, np.nan, deg)
    return sin_f.with_values(deg, var_id=VarId.MWD, units="deg")


# ---------------------------------------------------------------------------
# normalization


@dataclass
class NormStats:
    """Per-variable mean/std over ocean cells of the training split.

    Direction sin/cos channels are exempt (already bounded).
    """

    stats: dict = field(default_factory=dict)  # var name -> (mean, std)

    def mean(self, name):
        return self.stats[name][0]

    def std(self, name):
        return self.stats[name][1]

    def to_json(self) -> str:
        return json.dumps({k: {"mean": m, "std": s} for k, (m, s) in self.stats.items()},
                          sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        raw = json.loads(text)
        return cls({k: (float(v["mean"]), float(v["std"])) for k, v in raw.items()})

    @classmethod
    def compute(cls, fields_by_var: dict, mask: LandMask) -> "NormStats":
        """fields_by_var: name -> list of 2-D arrays from the training split."""
        stats = {}
        for name, arrs in fields_by_var.items():
            vals = np.concatenate([a[mask.ocean] for a in arrs])
            mean = float(vals.mean())
            std = float(vals.std())
            if std <= 0.0:
                raise DomainError(f"variable {name} has zero variance over the training split")
            stats[name] = (mean, std)
        return cls(stats)


def normalize_wave(state: WaveState, stats: NormStats, mask: LandMask) -> np.ndarray:
    """(4, H, W) model-input stack: z-scored SWH/MWP, raw sin/cos, land zeroed."""
    swh = (state.swh.values - stats.mean("SWH")) / stats.std("SWH")
    mwp = (state.mwp.values - stats.mean("MWP")) / stats.std("MWP")
    out = np.stack([swh, mwp, state.mwd_sin.values, state.mwd_cos.values])
    out[:, mask.land] = 0.0
    return out


def denormalize_wave(channels: np.ndarray, stats: NormStats, mask: LandMask,
                     template: GridField) -> WaveState:
    """Inverse of normalize_wave; land cells become NaN again."""
    swh = channels[0] * stats.std("SWH") + stats.mean("SWH")
    mwp = channels[1] * stats.std("MWP") + stats.mean("MWP")
    s, c = channels[2].copy(), channels[3].copy()
    land = mask.land
    swh = swh.copy()
    mwp = mwp.copy()
    swh[land] = np.nan
    mwp[land] = np.nan
    s[land] = np.nan
    c[land] = np.nan
    return WaveState(
        swh=template.with_values(swh, var_id=VarId.SWH, units="m"),
        mwp=template.with_values(mwp, var_id=VarId.MWP, units="s"),
        mwd_sin=template.with_values(s, var_id=VarId.GENERIC, units=""),
        mwd_cos=template.with_values(c, var_id=VarId.GENERIC, units=""),
    )


def normalize_wind(u10: GridField, v10: GridField, stats: NormStats,
                   mask: LandMask) -> np.ndarray:
    """(2, H, W) stack of z-scored wind components, land zeroed like the waves."""
    u = (u10.values - stats.mean("U10")) / stats.std("U10")
    v = (v10.values - stats.mean("V10")) / stats.std("V10")
    out = np.stack([u, v])
    out[:, mask.land] = 0.0
    return out
