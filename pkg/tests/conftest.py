"""Shared builders for a tiny corpus/model pair used across test modules."""

from __future__ import annotations

import numpy as np
import pytest

from unitrans import corpus as cp
from unitrans import model as md


def tiny_spec(**kw) -> cp.CorpusSpec:
    base = dict(n_utterances=30, source_vocab_size=8, homograph_count=2,
                feature_dim=4, duration_range=(1, 2), noise_sigma=0.05,
                sentence_length_range=(2, 5), seed=5)
    base.update(kw)
    return cp.CorpusSpec(**base)


def tiny_config(vocab: cp.Vocabulary, **kw) -> md.ModelConfig:
    base = dict(d_model=16, n_heads=2, enc_layers=1, dec_layers=1, ffn_dim=24,
                feature_dim=4, vocab_size=vocab.size, max_src_frames=24,
                max_dec_len=24, dropout=0.0)
    base.update(kw)
    return md.ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_world():
    spec = tiny_spec()
    vocab = cp.build_vocabulary(spec)
    config = tiny_config(vocab)
    params = md.init_parameters(config, cp.vocab_hash(vocab), seed=1)
    corpus = cp.generate_corpus(spec)
    return spec, vocab, config, params, corpus


def sample_entries(arr: np.ndarray, rng: np.random.Generator, n: int = 3):
    """A few flat indices of arr, deterministic per rng."""
    flat = arr.size
    take = min(n, flat)
    return rng.choice(flat, size=take, replace=False)
