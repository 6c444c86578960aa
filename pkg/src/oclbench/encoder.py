"""Frozen transformer encoder with optional key/value prefix prompts.

A ViT-style stack: chunk embedding + class token + positional embeddings,
then pre-norm blocks (norm -> multi-head attention -> residual -> norm ->
MLP -> residual). The backbone is a deterministic random init standing in
for a pretrained model and is never learnable; adaptation happens only
through prompts. Prefix prompts are prepended per head to the key and
value sequences of the first blocks, so the query length (and the output
sequence length) never changes. An input-sequence prompt variant prepends
learnable tokens to the embedded sequence instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .rng import Xoshiro256


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 4
    hidden_dim: int = 32
    heads: int = 4
    tokens: int = 9          # patch tokens + 1 class token
    chunk_dim: int = 4       # raw features per patch token
    mlp_ratio: float = 2.0
    seed: int = 1234

    def __post_init__(self):
        if self.depth < 1 or self.hidden_dim < 1 or self.heads < 1 or self.chunk_dim < 1:
            raise ConfigError("encoder dims must be positive")
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.tokens < 2:
            raise ConfigError("need at least a class token and one patch token")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")

    @property
    def feature_dim(self) -> int:
        return (self.tokens - 1) * self.chunk_dim

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    @property
    def mlp_dim(self) -> int:
        return max(1, int(round(self.hidden_dim * self.mlp_ratio)))


@dataclass
class BlockParams:
    qkv: Tensor      # [D, 3D]
    proj: Tensor     # [D, D]
    mlp1: Tensor     # [D, mlp]
    mlp2: Tensor     # [mlp, D]
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class EncoderParams:
    embed: Tensor    # [chunk, D]
    cls: Tensor      # [1, D]
    pos: Tensor      # [N, D]
    blocks: list[BlockParams] = field(default_factory=list)

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Canonical name -> array mapping (the weight-file layout)."""
        out = {"embed": self.embed.data, "cls": self.cls.data, "pos": self.pos.data}
        for i, blk in enumerate(self.blocks):
            out[f"block{i}.qkv"] = blk.qkv.data
            out[f"block{i}.proj"] = blk.proj.data
            out[f"block{i}.mlp1"] = blk.mlp1.data
            out[f"block{i}.mlp2"] = blk.mlp2.data
            out[f"block{i}.ln1"] = np.stack([blk.ln1_g.data, blk.ln1_b.data])
            out[f"block{i}.ln2"] = np.stack([blk.ln2_g.data, blk.ln2_b.data])
        return out

    def all_tensors(self) -> list[Tensor]:
        out = [self.embed, self.cls, self.pos]
        for blk in self.blocks:
            out += [blk.qkv, blk.proj, blk.mlp1, blk.mlp2,
                    blk.ln1_g, blk.ln1_b, blk.ln2_g, blk.ln2_b]
        return out


def init_encoder(cfg: EncoderConfig) -> EncoderParams:
    """Deterministic random init, all frozen: Gaussian std 1/sqrt(D) for
    every projection/embedding weight, the standard gain-1/shift-0 for the
    layer-norm affines (random norm gains collapse all class-token outputs
    onto one direction, which defeats the backbone's purpose as a frozen
    feature extractor).

    The same config always yields the same bytes; the draw order below is
    part of the contract.
    """
    rng = Xoshiro256(cfg.seed)
    d = cfg.hidden_dim
    std = 1.0 / math.sqrt(d)

    def frozen(shape):
        return Tensor(rng.normal(shape, std))

    params = EncoderParams(
        embed=frozen((cfg.chunk_dim, d)),
        cls=frozen((1, d)),
        pos=frozen((cfg.tokens, d)),
    )
    for _ in range(cfg.depth):
        params.blocks.append(BlockParams(
            qkv=frozen((d, 3 * d)),
            proj=frozen((d, d)),
            mlp1=frozen((d, cfg.mlp_dim)),
            mlp2=frozen((cfg.mlp_dim, d)),
            ln1_g=Tensor(np.ones(d)), ln1_b=Tensor(np.zeros(d)),
            ln2_g=Tensor(np.ones(d)), ln2_b=Tensor(np.zeros(d)),
        ))
    return params


def params_from_arrays(cfg: EncoderConfig, arrays: dict[str, np.ndarray]) -> EncoderParams:
    """Build frozen params from a name -> array mapping (weight-file load)."""
    d, mlp = cfg.hidden_dim, cfg.mlp_dim
    expect = {"embed": (cfg.chunk_dim, d), "cls": (1, d), "pos": (cfg.tokens, d)}
    for i in range(cfg.depth):
        expect[f"block{i}.qkv"] = (d, 3 * d)
        expect[f"block{i}.proj"] = (d, d)
        expect[f"block{i}.mlp1"] = (d, mlp)
        expect[f"block{i}.mlp2"] = (mlp, d)
        expect[f"block{i}.ln1"] = (2, d)
        expect[f"block{i}.ln2"] = (2, d)
    for name, shape in expect.items():
        if name not in arrays:
            raise ConfigError(f"weight file missing tensor '{name}'")
        if arrays[name].shape != shape:
            raise ConfigError(
                f"tensor '{name}' has shape {list(arrays[name].shape)}, expected {list(shape)}")

    params = EncoderParams(
        embed=Tensor(arrays["embed"]),
        cls=Tensor(arrays["cls"]),
        pos=Tensor(arrays["pos"]),
    )
    for i in range(cfg.depth):
        ln1, ln2 = arrays[f"block{i}.ln1"], arrays[f"block{i}.ln2"]
        params.blocks.append(BlockParams(
            qkv=Tensor(arrays[f"block{i}.qkv"]),
            proj=Tensor(arrays[f"block{i}.proj"]),
            mlp1=Tensor(arrays[f"block{i}.mlp1"]),
            mlp2=Tensor(arrays[f"block{i}.mlp2"]),
            ln1_g=Tensor(ln1[0]), ln1_b=Tensor(ln1[1]),
            ln2_g=Tensor(ln2[0]), ln2_b=Tensor(ln2[1]),
        ))
    return params


@dataclass
class PromptSet:
    """Per-block key/value prefix prompts for the first `len(pairs)` blocks."""
    length: int                       # tokens per prompt (M)
    pairs: list[tuple[Tensor, Tensor]]  # [(p_k, p_v)] each [M, D], learnable

    @property
    def layers(self) -> int:
        return len(self.pairs)

    @classmethod
    def init(cls, cfg: EncoderConfig, layers: int, length: int, seed: int,
             std: float = 0.02) -> "PromptSet":
        if not (0 <= layers <= cfg.depth):
            raise ConfigError(f"prefix layers {layers} exceeds depth {cfg.depth}")
        rng = Xoshiro256(seed)
        pairs = [(Tensor(rng.normal((length, cfg.hidden_dim), std), requires_grad=True),
                  Tensor(rng.normal((length, cfg.hidden_dim), std), requires_grad=True))
                 for _ in range(layers)]
        return cls(length=length, pairs=pairs)

    def learnables(self) -> list[Tensor]:
        return [t for pair in self.pairs for t in pair]


@dataclass
class InputPrompt:
    """Learnable tokens prepended to the embedded input sequence."""
    tokens: Tensor  # [M, D]

    @classmethod
    def init(cls, cfg: EncoderConfig, length: int, seed: int,
             std: float = 0.02) -> "InputPrompt":
        rng = Xoshiro256(seed)
        return cls(tokens=Tensor(rng.normal((length, cfg.hidden_dim), std),
                                 requires_grad=True))

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    def learnables(self) -> list[Tensor]:
        return [self.tokens]


# block_prompts maps block index -> per-sample list of (p_k, p_v) pairs
BlockPrompts = dict[int, list[tuple[Tensor, Tensor]]]


class Encoder:
    """Frozen backbone plus the forward paths for every adapter mode."""

    def __init__(self, cfg: EncoderConfig, params: EncoderParams | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_encoder(cfg)

    # -- embedding ---------------------------------------------------------

    def embed(self, inputs: np.ndarray) -> Tensor:
        """[B, feature_dim] raw inputs -> [B*N, D] embedded token rows."""
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim == 1:
            inputs = inputs[None, :]
        b, feat = inputs.shape
        cfg = self.cfg
        if feat != cfg.feature_dim:
            raise ShapeError(
                f"input feature dim {feat} != (tokens-1)*chunk_dim = {cfg.feature_dim}")
        n_patch = cfg.tokens - 1
        patches = Tensor(inputs.reshape(b * n_patch, cfg.chunk_dim))
        projected = ad.matmul(patches, self.params.embed)
        pieces = []
        for s in range(b):
            pieces.append(self.params.cls)
            pieces.append(ad.slice_rows(projected, s * n_patch, (s + 1) * n_patch))
        tokens = ad.concat_rows(*pieces)
        pos = Tensor(np.tile(self.params.pos.data, (b, 1)))
        return ad.add(tokens, pos)

    # -- attention blocks --------------------------------------------------

    def _attention_indices(self, batch: int, seq: int):
        """Index tables mapping [batch*seq, 3D] qkv rows onto stacked
        per-(sample, head) slices of shape [batch*heads, seq, head_dim]."""
        cfg = self.cfg
        h, dh = cfg.heads, cfg.head_dim
        b_of = np.repeat(np.arange(batch), h)          # [G]
        h_of = np.tile(np.arange(h), batch)            # [G]
        rows = b_of[:, None] * seq + np.arange(seq)    # [G, seq]
        cols = h_of[:, None] * dh + np.arange(dh)      # [G, dh]
        return rows, cols, b_of

    def _block(self, h: Tensor, index: int, batch: int, seq: int,
               prompts: list[tuple[Tensor, Tensor]] | None,
               weight_sink: list | None = None) -> Tensor:
        """One pre-norm block over `batch` stacked sequences of length `seq`.

        `prompts`, when given, holds one (p_k, p_v) pair per sample; each
        [M, D] prompt is split per head and prepended to that head's key
        and value slices. Queries are left alone, so the output keeps
        batch*seq rows. All samples and heads run as one stacked [G, ., .]
        computation, G = batch*heads.
        """
        cfg = self.cfg
        blk = self.params.blocks[index]
        d, dh = cfg.hidden_dim, cfg.head_dim
        scale = 1.0 / math.sqrt(dh)

        normed = ad.layer_norm(h, blk.ln1_g, blk.ln1_b)
        qkv = ad.matmul(normed, blk.qkv)

        rows, cols, b_of = self._attention_indices(batch, seq)
        q3 = ad.gather3(qkv, rows, cols)
        k3 = ad.gather3(qkv, rows, d + cols)
        v3 = ad.gather3(qkv, rows, 2 * d + cols)

        if prompts is not None:
            m = prompts[0][0].shape[0]
            for pk, pv in prompts:
                if pk.shape != (m, d) or pv.shape != (m, d):
                    raise ShapeError(
                        f"prompt shapes {list(pk.shape)}/{list(pv.shape)} vs [{m}, {d}]")
            if m > 0:
                pk_stack = ad.concat_rows(*[pair[0] for pair in prompts])
                pv_stack = ad.concat_rows(*[pair[1] for pair in prompts])
                p_rows = b_of[:, None] * m + np.arange(m)
                k3 = ad.concat3_mid(ad.gather3(pk_stack, p_rows, cols), k3)
                v3 = ad.concat3_mid(ad.gather3(pv_stack, p_rows, cols), v3)

        attn = ad.softmax_last(ad.affine(ad.matmul3(q3, ad.transpose3(k3)), scale))
        if weight_sink is not None:
            weight_sink.extend(attn.data[g] for g in range(attn.shape[0]))
        out3 = ad.matmul3(attn, v3)
        merged = ad.scatter3(out3, rows, cols, (batch * seq, d))
        h = ad.add(h, ad.matmul(merged, blk.proj))

        normed2 = ad.layer_norm(h, blk.ln2_g, blk.ln2_b)
        mlp = ad.matmul(ad.gelu(ad.matmul(normed2, blk.mlp1)), blk.mlp2)
        return ad.add(h, mlp)

    def attention_block(self, h: Tensor, index: int,
                        prompts: tuple[Tensor, Tensor] | None = None,
                        weight_sink: list | None = None) -> Tensor:
        """Single-sequence block: h is [N', D]; same path as batched encode."""
        seq = h.shape[0]
        per_sample = [prompts] if prompts is not None else None
        return self._block(h, index, batch=1, seq=seq, prompts=per_sample,
                           weight_sink=weight_sink)

    # -- full forward ------------------------------------------------------

    def encode_with_block_prompts(self, inputs: np.ndarray,
                                  block_prompts: BlockPrompts | None = None,
                                  input_prompt: InputPrompt | None = None) -> Tensor:
        """General forward: per-block, per-sample prefix injection.

        Returns the class-token feature per sample, [B, D].
        """
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim == 1:
            inputs = inputs[None, :]
        b = inputs.shape[0]
        cfg = self.cfg
        h = self.embed(inputs)
        cls_row = 0
        seq = cfg.tokens
        if input_prompt is not None and input_prompt.length > 0:
            m = input_prompt.length
            pieces = []
            for s in range(b):
                pieces.append(input_prompt.tokens)
                pieces.append(ad.slice_rows(h, s * cfg.tokens, (s + 1) * cfg.tokens))
            h = ad.concat_rows(*pieces)
            seq = cfg.tokens + m
            cls_row = m
        for i in range(cfg.depth):
            per_sample = None
            if block_prompts is not None and i in block_prompts:
                per_sample = block_prompts[i]
                if len(per_sample) != b:
                    raise ShapeError(
                        f"block {i}: {len(per_sample)} prompt pairs for batch of {b}")
            h = self._block(h, i, batch=b, seq=seq, prompts=per_sample)
        feats = [ad.slice_rows(h, s * seq + cls_row, s * seq + cls_row + 1)
                 for s in range(b)]
        return feats[0] if b == 1 else ad.concat_rows(*feats)

    def encode(self, inputs: np.ndarray,
               prompt_set: PromptSet | None = None,
               input_prompt: InputPrompt | None = None) -> Tensor:
        """Class-token features [B, D]; at most one adapter may be active."""
        if prompt_set is not None and input_prompt is not None:
            raise ConfigError("prompt_set and input_prompt are mutually exclusive")
        block_prompts: BlockPrompts | None = None
        if prompt_set is not None and prompt_set.length > 0:
            inputs_arr = np.asarray(inputs, dtype=np.float64)
            b = 1 if inputs_arr.ndim == 1 else inputs_arr.shape[0]
            block_prompts = {i: [pair] * b for i, pair in enumerate(prompt_set.pairs)}
        return self.encode_with_block_prompts(inputs, block_prompts, input_prompt)
