"""Convolutional-recurrent baseline sharing the transformer's I/O contract.

One ConvLSTM layer (3x3 gate convolutions, periodic-longitude padding)
unrolled over the wave history, then one wind-forced step, then a 3x3
output projection to the 4 normalized wave channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


@dataclass
class ConvLSTMConfig:
    hidden: int = 32
    t_in: int = 2
    t_force: int = 1

    def validate(self, lat_count: int, lon_count: int):
        pass


class ConvLSTMModel:
    """Gate kernels for x and h, per-gate bias, output projection conv."""

    kind = "convlstm"
    IN_CHANNELS = 6  # 4 wave + 2 wind

    def __init__(self, config: ConvLSTMConfig, lat_count: int, lon_count: int,
                 rng: np.random.Generator):
        self.config = config
        self.lat_count = lat_count
        self.lon_count = lon_count
        hid = config.hidden
        self.params: dict[str, Parameter] = {}

        def uni(fan_in, fan_out, shape):
            a = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-a, a, size=shape)

        self.params["cell.Wx"] = Parameter(
            uni(self.IN_CHANNELS * 9, hid * 9, (4 * hid, self.IN_CHANNELS, 3, 3)), "cell.Wx")
        self.params["cell.Wh"] = Parameter(
            uni(hid * 9, hid * 9, (4 * hid, hid, 3, 3)), "cell.Wh")
        self.params["cell.b"] = Parameter(np.zeros(4 * hid), "cell.b")
        self.params["proj.W"] = Parameter(uni(hid * 9, 4 * 9, (4, hid, 3, 3)), "proj.W")

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def init_state(self):
        hid = self.config.hidden
        zeros = np.zeros((hid, self.lat_count, self.lon_count))
        return Tensor(zeros), Tensor(zeros)

    def cell_step(self, x, hidden, cell):
        """Standard ConvLSTM gate update on one (C_in, H, W) input."""
        hid = self.config.hidden
        p = self.params
        pre = ad.add(
            ad.add(ad.conv2d(x, p["cell.Wx"]), ad.conv2d(hidden, p["cell.Wh"])),
            ad.reshape(p["cell.b"], (4 * hid, 1, 1)),
        )
        i = ad.sigmoid(ad.slice_axis0(pre, 0, hid))
        f = ad.sigmoid(ad.slice_axis0(pre, hid, 2 * hid))
        o = ad.sigmoid(ad.slice_axis0(pre, 2 * hid, 3 * hid))
        g = ad.tanh(ad.slice_axis0(pre, 3 * hid, 4 * hid))
        cell_next = ad.add(ad.mul(f, cell), ad.mul(i, g))
        hidden_next = ad.mul(o, ad.tanh(cell_next))
        return hidden_next, cell_next

    def forward(self, wave_hist: np.ndarray, wind: np.ndarray,
                terrain_feats: np.ndarray, ocean_float: np.ndarray):
        """Same contract as the transformer: normalized (4, H, W) prediction.

        terrain_feats is unused here; terrain reaches the baseline only
        through the land mask, matching a plain convolutional setup.
        """
        h, w = self.lat_count, self.lon_count
        hidden, cell = self.init_state()
        zeros_wind = np.zeros((2, h, w))
        for t in range(wave_hist.shape[0]):
            x = Tensor(np.concatenate([wave_hist[t], zeros_wind]))
            hidden, cell = self.cell_step(x, hidden, cell)
        zeros_wave = np.zeros((4, h, w))
        for t in range(wind.shape[0]):
            x = Tensor(np.concatenate([zeros_wave, wind[t]]))
            hidden, cell = self.cell_step(x, hidden, cell)
        out = ad.conv2d(hidden, self.params["proj.W"])
        return ad.mul(out, ocean_float)
