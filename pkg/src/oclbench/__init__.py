"""oclbench: a desk-scale lab for task-free online continual learning.

A frozen toy transformer encoder is adapted with learnable prefix prompts
(or an input-sequence prompt, or a prompt pool with query-key selection),
classified by cosine-similarity prototypes with minibatch logit masking,
and trained online over a Si-Blurry stream while anytime / final /
forgetting metrics are recorded. Everything is float64 numpy driven by a
fixed xoshiro256** PRNG, so runs reproduce bit for bit.
"""

from .autodiff import Tensor, grad_check, no_grad
from .config import ExperimentConfig, load_config, parse_config
from .encoder import Encoder, EncoderConfig, InputPrompt, PromptSet, init_encoder
from .heads import (CosineHead, LinearHead, LogitMask, cosine_logits,
                    linear_logits, make_mask, masked_ce_loss, masked_softmax,
                    predict, prototype_norms)
from .metrics import (AccuracyMatrix, AucRecorder, a_auc, a_last,
                      aggregate_seeds, f_last)
from .pool import (PromptPool, SelectionLog, key_pull_loss,
                   key_similarity_stats, query_of, select_prompt,
                   selection_histogram, task_id_accuracy)
from .rng import Xoshiro256, derive_seed
from .stream import (Dataset, MemoryBuffer, Minibatch, SiBlurryConfig,
                     idx_load, load_idx_dataset, si_blurry_split,
                     stream_batches, synth_dataset)
from .trainer import Adam, RunResult, TrainRun, build_run, evaluate, run_stream, train_on_batch
from .experiment import dump_scenario, run_experiment
from .weights import inspect_weights, load_weights, save_weights

__all__ = [
    "Tensor", "grad_check", "no_grad",
    "ExperimentConfig", "load_config", "parse_config",
    "Encoder", "EncoderConfig", "InputPrompt", "PromptSet", "init_encoder",
    "CosineHead", "LinearHead", "LogitMask", "cosine_logits", "linear_logits",
    "make_mask", "masked_ce_loss", "masked_softmax", "predict", "prototype_norms",
    "AccuracyMatrix", "AucRecorder", "a_auc", "a_last", "aggregate_seeds", "f_last",
    "PromptPool", "SelectionLog", "key_pull_loss", "key_similarity_stats",
    "query_of", "select_prompt", "selection_histogram", "task_id_accuracy",
    "Xoshiro256", "derive_seed",
    "Dataset", "MemoryBuffer", "Minibatch", "SiBlurryConfig", "idx_load",
    "load_idx_dataset", "si_blurry_split", "stream_batches", "synth_dataset",
    "Adam", "RunResult", "TrainRun", "build_run", "evaluate", "run_stream",
    "train_on_batch",
    "dump_scenario", "run_experiment",
    "inspect_weights", "load_weights", "save_weights",
]
