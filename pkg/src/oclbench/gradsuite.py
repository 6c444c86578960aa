"""Finite-difference audit of every learnable parameter in a configured model.

Builds the run exactly as training would, fixes one small batch (and, in
pool mode, the discrete prompt selections, since finite differences only
make sense for the continuous part), then compares the autodiff gradient
of the full loss against central differences parameter by parameter.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import heads, pool as pool_mod
from .autodiff import Tensor
from .config import ExperimentConfig
from .rng import Xoshiro256, derive_seed
from .trainer import TrainRun, build_dataset, build_run


def named_learnables(run: TrainRun) -> list[tuple[str, Tensor]]:
    out: list[tuple[str, Tensor]] = []
    if run.prompt_set is not None:
        for i, (pk, pv) in enumerate(run.prompt_set.pairs):
            out += [(f"prefix{i}.key", pk), (f"prefix{i}.value", pv)]
    if run.input_prompt is not None:
        out.append(("input_prompt", run.input_prompt.tokens))
    if run.pool is not None:
        if run.pool.keys.requires_grad:
            out.append(("pool.keys", run.pool.keys))
        for i, (pk, pv) in run.pool.shared.items():
            out += [(f"shared{i}.key", pk), (f"shared{i}.value", pv)]
        for p, entry in enumerate(run.pool.entries):
            for i, (pk, pv) in entry.items():
                out += [(f"entry{p}.block{i}.key", pk),
                        (f"entry{p}.block{i}.value", pv)]
    if isinstance(run.head, heads.CosineHead):
        out.append(("prototypes", run.head.prototypes))
    else:
        out += [("weight", run.head.weight), ("bias", run.head.bias)]
    return out


def run_grad_suite(cfg: ExperimentConfig, seed: int | None = None,
                   batch_size: int = 4, step: float = 1e-3) -> list[tuple[str, float]]:
    """Per-parameter max relative error of autodiff vs central differences."""
    cfg.validate()
    if seed is None:
        seed = cfg.seeds[0]
    run = build_run(cfg, seed)
    dataset = build_dataset(cfg)
    picker = Xoshiro256(derive_seed(seed, "gradcheck"))
    idx = picker.sample_indices(len(dataset), min(batch_size, len(dataset)))
    inputs = dataset.inputs[np.array(idx)]
    labels = dataset.labels[np.array(idx)]
    mask = (heads.make_mask(labels, cfg.classes) if cfg.masking
            else heads.all_classes_mask(cfg.classes))

    if run.adapter_mode == "pool":
        queries = [pool_mod.query_of(run.encoder, x) for x in inputs]
        chosen = [pool_mod.select_prompt(q, run.pool, run.selection_rng)[0]
                  for q in queries]

        def f() -> Tensor:
            table = pool_mod.block_prompts_for(run.pool, chosen)
            g = run.encoder.encode_with_block_prompts(inputs, table)
            loss = heads.masked_ce_loss(heads.logits_for(g, run.head), mask, labels)
            if run.pool.mode == "similarity" and run.pool.pull_weight > 0:
                total = None
                for q, c in zip(queries, chosen):
                    part = pool_mod.key_pull_loss(q, run.pool, c)
                    total = part if total is None else ad.add(total, part)
                loss = ad.add(loss, ad.affine(total, run.pool.pull_weight / len(chosen)))
            return loss
    else:
        def f() -> Tensor:
            if run.adapter_mode == "prefix":
                g = run.encoder.encode(inputs, prompt_set=run.prompt_set)
            else:
                g = run.encoder.encode(inputs, input_prompt=run.input_prompt)
            return heads.masked_ce_loss(heads.logits_for(g, run.head), mask, labels)

    return [(name, ad.grad_check(f, [param], step))
            for name, param in named_learnables(run)]
