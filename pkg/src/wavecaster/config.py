"""Flat key=value run configuration with documented defaults.

Every key has a default; unknown keys are errors; CLI `--key value` pairs
override file values. `parse(render(cfg))` is the identity on the
canonical rendering (sorted `key = value` lines).
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

# key -> (default string, help)
DEFAULTS = {
    "grid.lat": ("32", "latitude cell count"),
    "grid.lon": ("64", "longitude cell count (grid is periodic in longitude)"),
    "synth.steps": ("200", "number of world steps to generate"),
    "synth.dt_hours": ("24", "hours per step"),
    "synth.seed": ("0", "world seed; everything generated flows from it"),
    "synth.alpha": ("0.025", "equilibrium coefficient: SWH_eq = alpha * speed^2"),
    "synth.lambda": ("0.3", "relaxation rate per step, in (0,1]"),
    "synth.beta": ("0.55", "period coefficient: MWP = max(0.5, beta * speed)"),
    "synth.storms": ("3", "number of translating storm jets"),
    "synth.land_fraction": ("0.15", "target fraction of land cells"),
    "synth.bg_wind": ("6.0", "background zonal wind amplitude (m/s)"),
    "synth.train_ratio": ("0.8", "chronological train split fraction"),
    "synth.val_ratio": ("0.1", "validation split fraction (test gets the rest)"),
    "model": ("vit", "model selector: vit | convlstm"),
    "vit.patch": ("4", "patch edge length; must divide both grid extents"),
    "vit.d_model": ("64", "token embedding width"),
    "vit.heads": ("4", "attention heads; must divide d_model"),
    "vit.enc_blocks": ("2", "encoder blocks"),
    "vit.dec_blocks": ("2", "decoder blocks"),
    "vit.t_in": ("2", "wave history length fed to the encoder"),
    "vit.t_force": ("1", "future wind steps consumed per model step"),
    "vit.conv_layers": ("2", "3x3 conv layers in the de-fragmentation head"),
    "vit.mlp_ratio": ("4", "MLP hidden width multiplier"),
    "vit.residual": ("false", "predict the increment over the last wave state"),
    "convlstm.hidden": ("32", "ConvLSTM hidden channel count"),
    "convlstm.t_in": ("2", "wave history length for the baseline"),
    "train.lr": ("0.001", "Adam learning rate"),
    "train.beta1": ("0.9", "Adam first-moment decay"),
    "train.beta2": ("0.999", "Adam second-moment decay"),
    "train.eps": ("1e-8", "Adam epsilon"),
    "train.epochs": ("3", "training epochs"),
    "train.batch": ("8", "samples per optimizer step"),
    "train.clip": ("1.0", "global gradient-norm clip (0 disables)"),
    "train.seed": ("0", "training seed (init + shuffling)"),
    "train.w_swh": ("1.0", "loss weight, SWH channel"),
    "train.w_mwp": ("1.0", "loss weight, MWP channel"),
    "train.w_sin": ("1.0", "loss weight, direction sine channel"),
    "train.w_cos": ("1.0", "loss weight, direction cosine channel"),
    "rollout.leads": ("7", "number of autoregressive lead steps"),
    "metrics.lat_weight": ("true", "cos-latitude weighting in global means"),
    "metrics.mre_threshold": ("1.0", "truth-SWH filter (m) for relative errors"),
}


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {k: v for k, (v, _) in DEFAULTS.items()}
        if values:
            for k, v in values.items():
                self.set(k, v)

    def set(self, key: str, value: str):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = str(value)

    def get(self, key: str) -> str:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def get_int(self, key: str) -> int:
        try:
            return int(self.get(key))
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.get(key)!r}") from None

    def get_float(self, key: str) -> float:
        try:
            return float(self.get(key))
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self.get(key)!r}") from None

    def get_bool(self, key: str) -> bool:
        v = self.get(key).lower()
        if v in ("true", "1", "yes"):
            return True
        if v in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {self.get(key)!r}")

    def render(self) -> str:
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values)) + "\n"

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in stripped.split("=", 1))
            cfg.set(key, value)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text())

    # -- typed views --------------------------------------------------------

    def synth_config(self):
        from .synthwave import SynthConfig
        return SynthConfig(
            lat_count=self.get_int("grid.lat"),
            lon_count=self.get_int("grid.lon"),
            n_steps=self.get_int("synth.steps"),
            dt_hours=self.get_float("synth.dt_hours"),
            seed=self.get_int("synth.seed"),
            alpha=self.get_float("synth.alpha"),
            lam=self.get_float("synth.lambda"),
            beta=self.get_float("synth.beta"),
            n_storms=self.get_int("synth.storms"),
            land_fraction=self.get_float("synth.land_fraction"),
            bg_wind_amp=self.get_float("synth.bg_wind"),
        )

    def split_ratios(self):
        tr = self.get_float("synth.train_ratio")
        va = self.get_float("synth.val_ratio")
        if tr <= 0 or va < 0 or tr + va >= 1:
            raise ConfigError(f"bad split ratios train={tr} val={va}")
        return (tr, va, 1.0 - tr - va)

    def model_kind(self) -> str:
        kind = self.get("model")
        if kind not in ("vit", "convlstm"):
            raise ConfigError(f"model must be vit or convlstm, got {kind!r}")
        return kind

    def model_config(self, kind: str | None = None) -> dict:
        kind = kind or self.model_kind()
        if kind == "vit":
            return dict(
                patch=self.get_int("vit.patch"),
                d_model=self.get_int("vit.d_model"),
                n_heads=self.get_int("vit.heads"),
                n_enc_blocks=self.get_int("vit.enc_blocks"),
                n_dec_blocks=self.get_int("vit.dec_blocks"),
                t_in=self.get_int("vit.t_in"),
                t_force=self.get_int("vit.t_force"),
                conv_layers=self.get_int("vit.conv_layers"),
                mlp_ratio=self.get_int("vit.mlp_ratio"),
                residual=self.get_bool("vit.residual"),
            )
        return dict(
            hidden=self.get_int("convlstm.hidden"),
            t_in=self.get_int("convlstm.t_in"),
        )

    def train_config(self):
        from .training import TrainConfig
        return TrainConfig(
            lr=self.get_float("train.lr"),
            beta1=self.get_float("train.beta1"),
            beta2=self.get_float("train.beta2"),
            eps=self.get_float("train.eps"),
            epochs=self.get_int("train.epochs"),
            batch_size=self.get_int("train.batch"),
            clip_norm=self.get_float("train.clip"),
            seed=self.get_int("train.seed"),
            model=self.model_kind(),
            weights=(
                self.get_float("train.w_swh"),
                self.get_float("train.w_mwp"),
                self.get_float("train.w_sin"),
                self.get_float("train.w_cos"),
            ),
        )
