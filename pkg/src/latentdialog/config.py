"""Run configuration: defaults, config file, environment, flag overrides.

Sources merge in fixed precedence (defaults < file < environment < flags).
Every consumer of randomness receives a sub-seed derived from the single
root seed, so one integer pins the whole run.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

ENV_PREFIX = "LATENTDIALOG_"


def derive_seed(root: int, *tags) -> int:
    """Deterministic sub-seed for one named consumer of randomness.

    Stateless by construction: the result depends only on (root, tags),
    never on how many draws other consumers made. Tags are typically a
    purpose string plus counters, e.g. ("epoch", 3).
    """
    text = str(int(root)) + "::" + "/".join(str(t) for t in tags)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


@dataclass
class DataSection:
    train_file: str = ""
    valid_file: str = ""
    test_file: str = ""
    vocab_file: str = ""
    min_freq: int = 2
    replace_prob: float = 0.15
    drop_last: bool = False


@dataclass
class ModelSection:
    k_correlated: int = 512
    k_uncorrelated: int = 10
    embedding_dim: int = 128
    attention_enabled: bool = False
    attention_bottleneck_dim: int = 10
    hidden_dim: int = 522  # comparison model only


@dataclass
class LossSection:
    mean_penalty: float = 3.9
    variance_penalty: float = 6.25
    decorrelation_penalty: float = 0.05
    cca_weight: float = 2.0
    reconstruction_weight: float = 2.0
    kl_weight: float = 0.1


@dataclass
class TrainSection:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 10
    max_steps: int = 0
    grad_clip: float = 5.0
    patience: int = 3
    no_uncorrelated: bool = False
    no_denoising: bool = False
    attention: bool = False


@dataclass
class GenerationSection:
    mode: str = "beam"
    beam_width: int = 5
    length_norm_alpha: float = 0.7
    nucleus_p: float = 0.9
    max_length: int = 30
    r_policy: str = "zeros"


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    generation: GenerationSection = field(default_factory=GenerationSection)
    seed: int = 0

    # ------------------------------------------------------------- mutation

    def set_path(self, path: str, raw: str) -> None:
        """Assign one dotted key, e.g. set_path("loss.cca_weight", "2")."""
        parts = path.strip().split(".")
        section_names = {f.name for f in fields(self)}
        if len(parts) == 1 and parts[0] == "seed":
            target, key = self, parts[0]
        elif len(parts) == 2 and parts[0] in section_names:
            target, key = getattr(self, parts[0]), parts[1]
        else:
            raise KeyError(f"unknown config key {path!r}")
        if key not in {f.name for f in fields(target)}:
            raise KeyError(f"unknown config key {path!r}")
        current = getattr(target, key)
        setattr(target, key, _coerce(raw, type(current), path))

    def apply_file(self, path: str | Path) -> None:
        """Plain-text config: one "dotted.key = value" per line, # comments."""
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = stripped.split("=", 1)
            self.set_path(key.strip(), raw.strip())

    def apply_env(self, environ: Mapping[str, str] | None = None) -> None:
        """LATENTDIALOG_SECTION__KEY=value; double underscore separates the
        section from the key so key names may contain underscores."""
        environ = os.environ if environ is None else environ
        for name, raw in sorted(environ.items()):
            if not name.startswith(ENV_PREFIX):
                continue
            tail = name[len(ENV_PREFIX):].lower()
            path = tail.replace("__", ".", 1) if "__" in tail else tail
            self.set_path(path, raw)

    def apply_overrides(self, pairs: list[str]) -> None:
        """Flag form: --set dotted.key=value (repeatable)."""
        for pair in pairs:
            if "=" not in pair:
                raise ValueError(f"override {pair!r} must look like key=value")
            key, raw = pair.split("=", 1)
            self.set_path(key.strip(), raw.strip())

    # ------------------------------------------------------------ exporting

    def flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "__dataclass_fields__"):
                for key, leaf in asdict(value).items():
                    out[f"{f.name}.{key}"] = leaf
            else:
                out[f.name] = value
        return dict(sorted(out.items()))

    def echo(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in self.flat().items())

    # ------------------------------------------------------- typed builders

    def model_config(self, vocab_size: int):
        from latentdialog.model import ModelConfig

        return ModelConfig(
            vocab_size=vocab_size,
            k_correlated=self.model.k_correlated,
            k_uncorrelated=0 if self.train.no_uncorrelated else self.model.k_uncorrelated,
            embedding_dim=self.model.embedding_dim,
            attention_enabled=self.model.attention_enabled or self.train.attention,
            attention_bottleneck_dim=self.model.attention_bottleneck_dim,
        )

    def baseline_config(self, vocab_size: int):
        from latentdialog.baseline import BaselineConfig

        return BaselineConfig(
            vocab_size=vocab_size,
            hidden_dim=self.model.hidden_dim,
            embedding_dim=self.model.embedding_dim,
        )

    def loss_config(self):
        from latentdialog.losses import LossConfig

        return LossConfig(
            mean_penalty=self.loss.mean_penalty,
            variance_penalty=self.loss.variance_penalty,
            decorrelation_penalty=self.loss.decorrelation_penalty,
            cca_weight=self.loss.cca_weight,
            reconstruction_weight=self.loss.reconstruction_weight,
            kl_weight=self.loss.kl_weight,
        )

    def train_config(self):
        from latentdialog.training import TrainConfig

        return TrainConfig(
            learning_rate=self.train.learning_rate,
            beta1=self.train.beta1,
            beta2=self.train.beta2,
            batch_size=self.train.batch_size,
            epochs=self.train.epochs,
            max_steps=self.train.max_steps,
            grad_clip=self.train.grad_clip,
            patience=self.train.patience,
            seed=self.seed,
            no_uncorrelated=self.train.no_uncorrelated,
            no_denoising=self.train.no_denoising,
            attention=self.train.attention,
            replace_prob=self.data.replace_prob,
            min_freq=self.data.min_freq,
            drop_last=self.data.drop_last,
        )

    def generation_options(self):
        from latentdialog.inference import GenerationOptions

        return GenerationOptions(
            mode=self.generation.mode,
            beam_width=self.generation.beam_width,
            length_norm_alpha=self.generation.length_norm_alpha,
            nucleus_p=self.generation.nucleus_p,
            max_length=self.generation.max_length,
            r_policy=self.generation.r_policy,
            rng_seed=self.seed,
        )


def _coerce(raw: str, target: type, path: str):
    raw = raw.strip()
    if target is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{path}: cannot parse {raw!r} as a flag")
    if target is int:
        return int(raw)
    if target is float:
        return float(raw)
    return raw


def resolve_config(
    config_file: str | Path | None = None,
    overrides: list[str] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge all sources at their documented precedence."""
    cfg = RunConfig()
    if config_file:
        cfg.apply_file(config_file)
    cfg.apply_env(environ)
    if overrides:
        cfg.apply_overrides(overrides)
    return cfg
