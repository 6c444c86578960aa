"""Flat key = value experiment configuration.

One key per line, `#` starts a comment, unknown keys are errors, and every
key has a default, so the empty file is a valid config. The full key table
lives in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .encoder import EncoderConfig
from .errors import ConfigError


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "synth"             # synth | idx
    classes: int = 10
    samples_per_class: int = 200
    cluster_spread: float = 1.2
    cluster_separation: float = 10.0
    data_seed: int = 7
    idx_images: str = ""
    idx_labels: str = ""
    test_fraction: float = 0.1
    # scenario
    tasks: int = 5
    disjoint_ratio: float = 0.5
    blurry_ratio: float = 0.1
    batch_size: int = 32
    # encoder
    depth: int = 4
    hidden_dim: int = 32
    heads: int = 4
    tokens: int = 9
    chunk_dim: int = 4
    mlp_ratio: float = 2.0
    encoder_seed: int = 1234
    weights_file: str = ""
    # adapter
    adapter: str = "prefix"            # prefix | input | pool
    prompt_len: int = 4
    prefix_blocks: int = 1
    pool_size: int = 10
    pool_shared_blocks: int = 1
    pool_pooled_blocks: int = 2
    selection: str = "similarity"      # similarity | random | fixed
    pull_weight: float = 0.5
    # head and loss
    head: str = "cosine"               # cosine | linear
    tau: float = 0.1
    masking: bool = True
    # replay
    buffer_capacity: int = 0
    # optimization and evaluation
    lr: float = 0.005
    eval_interval: int = 100
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    # probes
    log_norms: bool = False

    def validate(self) -> None:
        if self.dataset not in ("synth", "idx"):
            raise ConfigError(f"dataset must be synth or idx, got '{self.dataset}'")
        if self.dataset == "idx" and (not self.idx_images or not self.idx_labels):
            raise ConfigError("idx dataset needs idx_images and idx_labels paths")
        if self.classes < 1 or self.samples_per_class < 0:
            raise ConfigError("classes must be >= 1 and samples_per_class >= 0")
        if self.cluster_spread <= 0 or self.cluster_separation <= 0:
            raise ConfigError("cluster_spread and cluster_separation must be positive")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction {self.test_fraction} outside [0, 1)")
        if not 0.0 <= self.disjoint_ratio <= 1.0:
            raise ConfigError(f"disjoint_ratio {self.disjoint_ratio} outside [0, 1]")
        if not 0.0 <= self.blurry_ratio <= 1.0:
            raise ConfigError(f"blurry_ratio {self.blurry_ratio} outside [0, 1]")
        if self.tasks < 1 or self.batch_size < 1:
            raise ConfigError("tasks and batch_size must be >= 1")
        self.encoder_config()  # dimension invariants
        if self.adapter not in ("prefix", "input", "pool"):
            raise ConfigError(f"adapter must be prefix, input or pool, got '{self.adapter}'")
        if self.prompt_len < 0:
            raise ConfigError("prompt_len must be >= 0")
        if self.adapter == "prefix" and not 0 <= self.prefix_blocks <= self.depth:
            raise ConfigError(f"prefix_blocks {self.prefix_blocks} outside [0, depth]")
        if self.adapter == "pool":
            if self.pool_size < 1:
                raise ConfigError("pool_size must be >= 1")
            if self.pool_shared_blocks < 0 or self.pool_pooled_blocks < 0 \
                    or self.pool_shared_blocks + self.pool_pooled_blocks > self.depth:
                raise ConfigError("pool shared+pooled blocks must fit within depth")
        if self.selection not in ("similarity", "random", "fixed"):
            raise ConfigError(f"selection must be similarity, random or fixed, got '{self.selection}'")
        if self.pull_weight < 0:
            raise ConfigError("pull_weight must be >= 0")
        if self.head not in ("cosine", "linear"):
            raise ConfigError(f"head must be cosine or linear, got '{self.head}'")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.buffer_capacity < 0:
            raise ConfigError("buffer_capacity must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(depth=self.depth, hidden_dim=self.hidden_dim,
                             heads=self.heads, tokens=self.tokens,
                             chunk_dim=self.chunk_dim, mlp_ratio=self.mlp_ratio,
                             seed=self.encoder_seed)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _convert(key: str, raw: str, line_no: int):
    kind = _FIELDS[key].type
    try:
        if key == "seeds":
            return tuple(int(part.strip()) for part in raw.split(",") if part.strip())
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "false"):
                return low == "true"
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"line {line_no}: cannot parse '{raw}' as {kind} for key '{key}'") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse the flat format; raises ConfigError naming key and line."""
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {line_no}: expected 'key = value', got '{body}'")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {line_no}: unknown key '{key}'")
        values[key] = _convert(key, raw, line_no)
    cfg = ExperimentConfig(**values)
    try:
        cfg.validate()
    except ConfigError as err:
        raise ConfigError(str(err)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
