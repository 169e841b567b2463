"""Run configuration: dataclasses, ``key = value`` files and variant presets."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .encoders import EncoderConfig
from .tcl import CsmConfig, FdmConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # optimisation
    lr: float = 0.0005
    batch_size: int = 120
    epochs: int = 100
    pretrain_epochs: int = 50
    patience: int = 5
    n_neg: int = 1
    sliding_window: bool = False
    max_grad_norm: float = 0.0
    seed: int = 0
    pretrain: bool = True
    mixed_init: str = "fresh"
    # architecture
    d: int = 64
    max_len: int = 200
    n_blocks: int = 2
    n_heads: int = 1
    dropout: float = 0.2
    encoder: str = "sasrec"
    residual_layernorm: bool = False
    dtype: str = "float64"
    # cross-domain components
    domains: str = "STM"
    use_tca: bool = True
    per_domain_tca: bool = False
    lambda_csm: float = 0.1
    lambda_fdm: float = 0.1
    lambdas: tuple[float, float, float] = (1.0, 1.0, 1.0)
    tau: float = 0.1
    gamma: float = 0.5
    leaky_slope: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("lr", "batch_size", "d", "max_len", "n_blocks", "n_heads", "tau", "n_neg"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("epochs", "pretrain_epochs", "patience", "lambda_csm", "lambda_fdm", "gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if any(l < 0 for l in self.lambdas) or len(self.lambdas) != 3:
            raise ConfigError(f"lambdas must be three non-negative weights, got {self.lambdas}")
        doms = set(self.domains)
        if not doms or not doms <= set("STM") or len(doms) != len(self.domains):
            raise ConfigError(f"domains must be a subset of 'STM', got {self.domains!r}")
        if self.use_tca and not {"T", "M"} <= doms:
            raise ConfigError("TCA needs both the target and the mixed sequence")
        if self.mixed_init not in ("fresh", "target"):
            raise ConfigError(f"mixed_init must be 'fresh' or 'target', got {self.mixed_init!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        try:
            self.encoder_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def domain_order(self) -> tuple[str, ...]:
        """Enabled domains in fusion order (mixed, source, target)."""
        return tuple(d for d in "MST" if d in self.domains)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(d=self.d, n_blocks=self.n_blocks, n_heads=self.n_heads,
                             max_len=self.max_len, dropout=self.dropout, variant=self.encoder,
                             residual_layernorm=self.residual_layernorm)

    def csm_config(self) -> CsmConfig:
        return CsmConfig(lambdas=tuple(self.lambdas), tau=self.tau)

    def fdm_config(self) -> FdmConfig:
        return FdmConfig(gamma=self.gamma)

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


# Domain-utilisation rows and ablations.  Concatenation baselines switch off
# TCA and both contrastive terms.
_BASELINE = dict(use_tca=False, lambda_csm=0.0, lambda_fdm=0.0)
VARIANTS: dict[str, dict] = {
    "T": dict(_BASELINE, domains="T"),
    "M": dict(_BASELINE, domains="M"),
    "S+T": dict(_BASELINE, domains="ST"),
    "M+T": dict(_BASELINE, domains="MT"),
    "S+T+M": dict(_BASELINE, domains="STM"),
    "full": {},
    "w/o TCA": dict(use_tca=False),
    "w/o FDM": dict(lambda_fdm=0.0),
    "w/o TCL": dict(lambda_csm=0.0, lambda_fdm=0.0),
}
ABLATION_ROWS = ("T", "M", "S+T", "M+T", "S+T+M", "full", "w/o TCA", "w/o FDM")


def variant(cfg: TrainConfig, name: str) -> TrainConfig:
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    return cfg.replace(**VARIANTS[name])


@dataclass
class RunConfig(TrainConfig):
    data_dir: str = "data"
    out_dir: str = "runs"
    checkpoint: str = ""
    pretrained: str = ""
    input: str = ""
    source_input: str = ""
    target_input: str = ""
    split: str = "test"
    n_eval_neg: int = 99
    min_target: int = 3
    min_source: int = 1
    variants: str = ",".join(ABLATION_ROWS)
    # synthetic generator
    n_users: int = 500
    n_source_items: int = 300
    n_target_items: int = 300
    latent_dim: int = 4
    rho: float = 0.8
    source_len: tuple[int, int] = (15, 40)
    target_len: tuple[int, int] = (4, 7)
    sharpness: float = 4.0
    drift: float = 0.0

    def validate(self) -> None:
        super().validate()
        if self.split not in ("valid", "test"):
            raise ConfigError(f"split must be 'valid' or 'test', got {self.split!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def synth_config(self):
        from .corpus import SynthConfig

        names = {f.name for f in fields(SynthConfig)}
        return SynthConfig(**{k: v for k, v in asdict(self).items() if k in names})


# ---------------------------------------------------------------------------
# parsing


def _coerce(key: str, raw: str, tp):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if origin is tuple:
            args = typing.get_args(tp)
            parts = [p for p in raw.replace(":", ",").split(",") if p.strip()]
            if len(parts) != len(args):
                raise ValueError
            return tuple(a(p.strip()) for a, p in zip(args, parts))
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"{key}: unsupported type {tp}")


def field_types(cls=RunConfig) -> dict[str, type]:
    return typing.get_type_hints(cls)


def parse_config_text(text: str, cls=RunConfig) -> dict:
    """``key = value`` lines with ``#`` comments -> typed dict (unvalidated)."""
    types = field_types(cls)
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, val, types[key])
    return out


def parse_config(path: str | Path | None = None, overrides: dict[str, str] | None = None,
                 cls=RunConfig):
    """Resolve a config: defaults < file < overrides (raw strings, e.g. CLI flags)."""
    values = {}
    if path:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8"), cls))
    types = field_types(cls)
    for key, raw in (overrides or {}).items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = raw if not isinstance(raw, str) else _coerce(key, raw, types[key])
    return cls(**values)


def dump_config(cfg) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
