"""Run configuration: one JSON file fully describes a reproducible run."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

from .data import DEFAULT_SPLIT, SYNTHETIC, Dataset, WindowSpec, load_csv, split_dataset
from .forecaster import ReferenceNetConfig, config_digest
from .sme import solve_optimal_ms
from .codec import CodecParams

PREDICTORS = ("reference", "persistence")


class ConfigError(ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class NetSettings:
    hidden: int = 128
    lr: float = 0.05
    epochs: int = 20
    batch_size: int = 32
    init_scale: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "synthetic:noisy_sine"
    synthetic: dict = field(default_factory=dict)
    timestamp_column: Optional[str] = "auto"
    h: int = 50
    ms: Union[float, str] = "auto"
    lookback: int = 96
    horizon: int = 24
    stride: int = 1
    eval_stride: int = 1
    split: tuple = DEFAULT_SPLIT
    channel_independent: bool = True
    global_zscore: bool = True
    predictor: str = "reference"
    net: NetSettings = field(default_factory=NetSettings)
    seed: int = 0
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in unknown])
        raw = dict(raw)
        if "net" in raw:
            net_known = {f.name for f in fields(NetSettings)}
            bad = sorted(set(raw["net"]) - net_known)
            if bad:
                raise ConfigError([f"unknown net key {k!r}" for k in bad])
            raw["net"] = NetSettings(**raw["net"])
        if "split" in raw:
            raw["split"] = tuple(raw["split"])
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def with_overrides(self, **kw) -> "RunConfig":
        """Apply non-``None`` overrides; keys prefixed ``net_`` go to the network block."""
        top, net = {}, {}
        for k, v in kw.items():
            if v is None:
                continue
            if k.startswith("net_"):
                net[k[4:]] = v
            else:
                top[k] = v
        cfg = replace(self, **top)
        if net:
            cfg = replace(cfg, net=replace(cfg.net, **net))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        """Collect every problem before raising, so one run reports them all."""
        p = []
        if not isinstance(self.h, int) or self.h < 2:
            p.append(f"h must be an integer >= 2, got {self.h!r}")
        if isinstance(self.ms, str):
            if self.ms != "auto":
                p.append(f"ms must be a positive number or 'auto', got {self.ms!r}")
        elif not self.ms > 0:
            p.append(f"ms must be positive, got {self.ms!r}")
        for name in ("lookback", "horizon", "stride", "eval_stride"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                p.append(f"{name} must be a positive integer, got {v!r}")
        if len(self.split) != 3 or any(r <= 0 for r in self.split) or sum(self.split) > 1 + 1e-12:
            p.append(f"split must be three positive ratios summing to <= 1, got {self.split!r}")
        if self.predictor not in PREDICTORS:
            p.append(f"predictor must be one of {PREDICTORS}, got {self.predictor!r}")
        n = self.net
        for name in ("hidden", "epochs", "batch_size"):
            if getattr(n, name) < 1:
                p.append(f"net.{name} must be positive")
        if n.lr < 0:
            p.append("net.lr must be >= 0")
        if n.init_scale <= 0:
            p.append("net.init_scale must be positive")
        if self.dataset.startswith("synthetic:"):
            kind = self.dataset.split(":", 1)[1]
            if kind not in SYNTHETIC:
                p.append(f"unknown synthetic dataset {kind!r}; choose from {sorted(SYNTHETIC)}")
        if p:
            raise ConfigError(p)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    def digest(self) -> bytes:
        # output_dir does not change results, so it is left out of the digest
        d = self.to_dict()
        d.pop("output_dir")
        return config_digest(d)

    def codec(self) -> CodecParams:
        ms = solve_optimal_ms(self.h) if self.ms == "auto" else float(self.ms)
        return CodecParams(self.h, ms)

    def window_spec(self, evaluation: bool = False) -> WindowSpec:
        return WindowSpec(self.lookback, self.horizon, self.eval_stride if evaluation else self.stride)

    def net_config(self) -> ReferenceNetConfig:
        n = self.net
        return ReferenceNetConfig(self.h, self.lookback, self.horizon, n.hidden, n.lr, n.epochs,
                                  n.batch_size, self.seed, n.init_scale)

    def load_dataset(self) -> Dataset:
        """Load the data and, with ``global_zscore``, fit the scaler on the training rows."""
        if self.dataset.startswith("synthetic:"):
            kind = self.dataset.split(":", 1)[1]
            opts = {"seed": self.seed, **self.synthetic}
            d = SYNTHETIC[kind](**opts)
        else:
            d = load_csv(self.dataset, self.timestamp_column)
        train, _, _ = split_dataset(d.rows, self.split, min_length=self.lookback + self.horizon)
        return d.refit_scaler(train) if self.global_zscore else d

    def resolve_output_dir(self, override: Optional[str] = None) -> Path:
        return Path(override or self.output_dir or os.environ.get("MVTS_OUTPUT_DIR") or "runs")
