"""Load a generated WGF archive (fields + manifest + splits) into memory."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gridio
from .errors import ConfigError, DataError
from .gridio import GridField, LandMask, NormStats, VarId, WaveState


@dataclass
class WaveDataset:
    root: Path
    times: list            # sorted unix times with complete field sets
    fields: dict           # (unix_time, VarId) -> GridField
    depth: GridField
    mask: LandMask
    stats: NormStats
    splits: dict           # name -> list of init unix times
    template: GridField

    @classmethod
    def load(cls, root) -> "WaveDataset":
        root = Path(root)
        manifest = root / "manifest.txt"
        if not manifest.exists():
            raise DataError(f"no manifest.txt under {root}")
        fields = {}
        by_time = {}
        for t, var, rel in gridio.read_manifest(manifest):
            fld = gridio.read_wgf(root / rel)
            fields[(t, var)] = fld
            by_time.setdefault(t, set()).add(var)
        wanted = {VarId.U10, VarId.V10, VarId.SWH, VarId.MWP, VarId.MWD}
        times = sorted(t for t, vars_ in by_time.items() if wanted <= vars_)
        if not times:
            raise DataError(f"{root}: manifest holds no complete time steps")
        depth = gridio.read_wgf(root / "depth.wgf")
        mask = gridio.derive_mask(depth)
        stats = NormStats.from_json((root / "norm_stats.json").read_text())
        splits = {}
        for name in ("train", "val", "test"):
            path = root / f"samples_{name}.txt"
            if path.exists():
                splits[name] = [gridio.parse_iso_time(line)
                                for line in path.read_text().splitlines() if line.strip()]
        template = depth.with_values(np.zeros_like(depth.values))
        return cls(root=root, times=times, fields=fields, depth=depth, mask=mask,
                   stats=stats, splits=splits, template=template)

    @property
    def dt(self) -> int:
        if len(self.times) < 2:
            raise DataError("dataset has fewer than two time steps")
        return self.times[1] - self.times[0]

    def field(self, t: int, var: VarId) -> GridField:
        try:
            return self.fields[(t, var)]
        except KeyError:
            raise DataError(
                f"no {var.name} field at {gridio.iso_time(t)} in {self.root}") from None

    def wave_state(self, t: int) -> WaveState:
        return WaveState.from_mwd_degrees(
            self.field(t, VarId.SWH),
            self.field(t, VarId.MWP),
            self.field(t, VarId.MWD),
        )

    def wind(self, t: int):
        return self.field(t, VarId.U10), self.field(t, VarId.V10)

    def sample_times(self, split: str):
        if split not in self.splits:
            raise ConfigError(f"dataset has no split {split!r}")
        return self.splits[split]
