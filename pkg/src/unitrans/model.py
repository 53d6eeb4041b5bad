"""Encoder-decoder model with prompt assembly and cross-attention control.

The encoder reads speech feature frames (no temporal downsampling at this
scale). Text-only inputs bypass it entirely: a single learnable vector
occupies encoder slot 0, the remaining slots are zeros, and the decoder's
cross-attention is masked to slot 0 alone. The decoder is a standard
pre-norm causal transformer whose input carries an optional prompt region
ahead of the control tokens, realizing all six training objectives and
five decode modes with one parameter set.

Output projection is the transpose of the token embedding table at all
times (tied weights).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Vocabulary, vocab_hash
from .errors import ConfigurationError, DataError, InputError, UsageError
from .rng import derive_rng

MODES = ("ASR", "ST", "MMT", "MT", "SLM", "TLM")
TEXT_MODES = frozenset({"MT", "SLM", "TLM"})
PROMPT_MODES = frozenset({"MMT", "MT"})
TRANSCRIBE_MODES = frozenset({"ASR", "SLM"})

CHECKPOINT_MAGIC = b"WUT1"


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_dim: int = 128
    feature_dim: int = 8
    vocab_size: int = 160
    max_src_frames: int = 96
    max_dec_len: int = 48
    dropout: float = 0.1

    def __post_init__(self):
        for name in ("d_model", "n_heads", "enc_layers", "dec_layers",
                     "ffn_dim", "feature_dim", "vocab_size",
                     "max_src_frames", "max_dec_len"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} ({getattr(self, name)}) must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout ({self.dropout}) must be in [0, 1)")


@dataclass
class LoraConfig:
    rank: int = 8
    alpha: float = 16.0
    dropout: float = 0.1
    train_embeddings: bool = False

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigurationError(f"lora rank ({self.rank}) must be >= 1")


class LoraAdapter:
    """Low-rank factors for every attention projection matrix."""

    def __init__(self, config: LoraConfig, factors: dict[str, tuple[Tensor, Tensor]]):
        self.config = config
        self.factors = factors

    def scale(self) -> float:
        return self.config.alpha / self.config.rank

    def trainable(self):
        for name, (down, up) in self.factors.items():
            yield f"lora.{name}.down", down
            yield f"lora.{name}.up", up


def sinusoid_positions(n: int, d: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(n)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-np.log(10000.0) / d))
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)
    return pe.astype(dtype)


class ModelParameters:
    """Named parameter tensors plus the config they realize."""

    def __init__(self, config: ModelConfig, vocab_digest: str,
                 tensors: dict[str, Tensor], adapter: LoraAdapter | None = None):
        self.config = config
        self.vocab_digest = vocab_digest
        self.tensors = tensors
        self.adapter = adapter
        self.enc_pos = sinusoid_positions(
            config.max_src_frames, config.d_model,
            tensors["embed"].data.dtype)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def embed(self) -> Tensor:
        return self.tensors["embed"]

    @property
    def text_mode_vector(self) -> Tensor:
        return self.tensors["text_mode"]

    def named_trainable(self):
        for name, t in self.tensors.items():
            if t.requires_grad:
                yield name, t
        if self.adapter is not None:
            yield from self.adapter.trainable()

    def all_named(self):
        yield from self.tensors.items()
        if self.adapter is not None:
            yield from self.adapter.trainable()

    def zero_grad(self):
        for _, t in self.all_named():
            t.grad = None


def _attn_weight_names(config: ModelConfig):
    for i in range(config.enc_layers):
        for w in ("wq", "wk", "wv", "wo"):
            yield f"enc.{i}.attn.{w}"
    for i in range(config.dec_layers):
        for blk in ("self", "cross"):
            for w in ("wq", "wk", "wv", "wo"):
                yield f"dec.{i}.{blk}.{w}"


def init_parameters(config: ModelConfig, vocab_digest: str, seed: int,
                    dtype=np.float32) -> ModelParameters:
    """Fan-in scaled uniform init; biases and norm offsets start at zero."""
    rng = derive_rng(seed, "init")
    d, f = config.d_model, config.ffn_dim

    def mat(fan_in: int, shape) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return ad.parameter(rng.uniform(-bound, bound, shape).astype(dtype))

    def zeros(shape) -> Tensor:
        return ad.parameter(np.zeros(shape, dtype))

    def ones(shape) -> Tensor:
        return ad.parameter(np.ones(shape, dtype))

    t: dict[str, Tensor] = {}
    t["frontend.w"] = mat(config.feature_dim, (config.feature_dim, d))
    t["frontend.b"] = zeros((d,))

    def attn(prefix: str):
        for w in ("wq", "wk", "wv", "wo"):
            t[f"{prefix}.{w}"] = mat(d, (d, d))
        for b in ("bq", "bk", "bv", "bo"):
            t[f"{prefix}.{b}"] = zeros((d,))

    def norm(prefix: str):
        t[f"{prefix}.g"] = ones((d,))
        t[f"{prefix}.b"] = zeros((d,))

    def ffn(prefix: str):
        t[f"{prefix}.w1"] = mat(d, (d, f))
        t[f"{prefix}.b1"] = zeros((f,))
        t[f"{prefix}.w2"] = mat(f, (f, d))
        t[f"{prefix}.b2"] = zeros((d,))

    for i in range(config.enc_layers):
        norm(f"enc.{i}.ln1"); attn(f"enc.{i}.attn")
        norm(f"enc.{i}.ln2"); ffn(f"enc.{i}.ffn")
    norm("enc.ln_f")
    for i in range(config.dec_layers):
        norm(f"dec.{i}.ln1"); attn(f"dec.{i}.self")
        norm(f"dec.{i}.ln2"); attn(f"dec.{i}.cross")
        norm(f"dec.{i}.ln3"); ffn(f"dec.{i}.ffn")
    norm("dec.ln_f")
    t["dec_pos"] = mat(d, (config.max_dec_len, d))
    t["embed"] = mat(d, (config.vocab_size, d))
    t["text_mode"] = mat(d, (d,))
    return ModelParameters(config, vocab_digest, t)


# ----------------------------------------------------------------------
# forward passes
# ----------------------------------------------------------------------


@dataclass
class EncoderOutput:
    memory: Tensor            # (batch, slots, d_model)
    valid_mask: np.ndarray    # (batch, slots) bool
    is_text_mode: bool = False

    @property
    def n_slots(self) -> int:
        return self.memory.data.shape[1]


def _linear(params: ModelParameters, wname: str, bname: str | None, x: Tensor,
            train: bool, rng) -> Tensor:
    out = x @ params[wname]
    ad_ = params.adapter
    if ad_ is not None and wname in ad_.factors:
        down, up = ad_.factors[wname]
        h = ad.dropout(x, ad_.config.dropout, rng) if train else x
        out = out + (h @ down) @ up * ad_.scale()
    if bname is not None:
        out = out + params[bname]
    return out


def _attention(params: ModelParameters, prefix: str, x_q: Tensor, x_kv: Tensor,
               valid: np.ndarray, train: bool, rng,
               collect: dict | None = None, tag: str = "") -> Tensor:
    """Multi-head attention; `valid` broadcasts against (B, H, Lq, Lk)."""
    cfg = params.config
    h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads

    def split(t: Tensor) -> Tensor:
        b, l = t.data.shape[0], t.data.shape[1]
        return t.reshape(b, l, h, dh).swapaxes(1, 2)

    q = split(_linear(params, f"{prefix}.wq", f"{prefix}.bq", x_q, train, rng))
    k = split(_linear(params, f"{prefix}.wk", f"{prefix}.bk", x_kv, train, rng))
    v = split(_linear(params, f"{prefix}.wv", f"{prefix}.bv", x_kv, train, rng))
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    scores = ad.apply_mask(scores, valid)
    probs = ad.softmax(scores, axis=-1)
    if collect is not None:
        collect[tag] = probs.data
    out = (probs @ v).swapaxes(1, 2)
    b, l = out.data.shape[0], out.data.shape[1]
    out = out.reshape(b, l, cfg.d_model)
    return _linear(params, f"{prefix}.wo", f"{prefix}.bo", out, train, rng)


def _maybe_dropout(x: Tensor, p: float, train: bool, rng) -> Tensor:
    return ad.dropout(x, p, rng) if train and p > 0 else x


def encode_features(params: ModelParameters, features: Tensor,
                    frame_mask: np.ndarray, train: bool = False,
                    rng=None) -> EncoderOutput:
    """Batched speech encoder; features (B, T, feature_dim)."""
    cfg = params.config
    t_len = features.data.shape[1]
    if t_len > cfg.max_src_frames:
        raise InputError(
            f"speech has {t_len} frames, model accepts at most {cfg.max_src_frames}")
    x = features @ params["frontend.w"] + params["frontend.b"]
    x = x + Tensor(params.enc_pos[:t_len])
    x = _maybe_dropout(x, cfg.dropout, train, rng)
    key_valid = frame_mask[:, None, None, :]  # (B,1,1,T)
    for i in range(cfg.enc_layers):
        pre = ad.layer_norm(x, params[f"enc.{i}.ln1.g"], params[f"enc.{i}.ln1.b"])
        att = _attention(params, f"enc.{i}.attn", pre, pre, key_valid, train, rng)
        x = x + _maybe_dropout(att, cfg.dropout, train, rng)
        pre = ad.layer_norm(x, params[f"enc.{i}.ln2.g"], params[f"enc.{i}.ln2.b"])
        hid = (pre @ params[f"enc.{i}.ffn.w1"] + params[f"enc.{i}.ffn.b1"]).gelu()
        hid = hid @ params[f"enc.{i}.ffn.w2"] + params[f"enc.{i}.ffn.b2"]
        x = x + _maybe_dropout(hid, cfg.dropout, train, rng)
    x = ad.layer_norm(x, params["enc.ln_f.g"], params["enc.ln_f.b"])
    return EncoderOutput(memory=x, valid_mask=frame_mask, is_text_mode=False)


def encode_speech(params: ModelParameters, features: np.ndarray,
                  train: bool = False, rng=None) -> EncoderOutput:
    """Single-utterance encoder; memory batch dim is 1."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise InputError(f"features must be 2-D, got shape {features.shape}")
    if features.shape[0] == 0:
        raise InputError("zero-frame speech input")
    mask = np.ones((1, features.shape[0]), dtype=bool)
    return encode_features(params, Tensor(features[None, :, :]), mask, train, rng)


def encode_text_mode(params: ModelParameters) -> EncoderOutput:
    """Learnable vector at slot 0, zeros elsewhere, mask to slot 0 only."""
    cfg = params.config
    v = params.text_mode_vector.reshape(1, 1, cfg.d_model)
    pad = Tensor(np.zeros((1, cfg.max_src_frames - 1, cfg.d_model),
                          params.embed.data.dtype))
    memory = ad.concat([v, pad], axis=1)
    valid = np.zeros((1, cfg.max_src_frames), dtype=bool)
    valid[0, 0] = True
    return EncoderOutput(memory=memory, valid_mask=valid, is_text_mode=True)


def text_mode_memory(params: ModelParameters, batch: int) -> EncoderOutput:
    """Compact single-slot text-mode memory for batched training."""
    cfg = params.config
    ones = Tensor(np.ones((batch, 1, 1), params.embed.data.dtype))
    memory = ones * params.text_mode_vector.reshape(1, 1, cfg.d_model)
    return EncoderOutput(memory=memory,
                         valid_mask=np.ones((batch, 1), dtype=bool),
                         is_text_mode=True)


# ----------------------------------------------------------------------
# decoder sequences
# ----------------------------------------------------------------------


@dataclass
class DecoderSequence:
    tokens: np.ndarray          # (L,) int64
    loss_mask: np.ndarray       # (L,) bool; True where the token is predicted
    mode: str
    perturbed: bool = False
    cross_mask: np.ndarray | None = None  # (L, slots) bool when slots known

    def __len__(self) -> int:
        return len(self.tokens)


def cross_slot_mask(mode: str, length: int, n_slots: int) -> np.ndarray:
    """Text modes may only reach the text-mode slot; speech modes reach all."""
    mask = np.ones((length, n_slots), dtype=bool)
    if mode in TEXT_MODES:
        mask[:, 1:] = False
    return mask


def build_decoder_sequence(mode: str, prompt, target, vocab: Vocabulary,
                           perturbed: bool = False,
                           n_memory_slots: int | None = None,
                           prompt_loss: bool = True) -> DecoderSequence:
    """Assemble [BOS_PREV, (PERTURBED), prompt.., SOT, LANG, TASK, target.., EOS].

    The loss mask covers target positions and EOS; for the prompted modes
    it also covers the prompt region (next-token prediction over the
    prompt) unless `prompt_loss` is off.
    """
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}; expected one of {MODES}")
    has_prompt = prompt is not None and len(prompt) > 0
    if mode in PROMPT_MODES and not has_prompt:
        raise UsageError(f"{mode} mode requires a prompt")
    if mode not in PROMPT_MODES and has_prompt:
        raise UsageError(f"{mode} mode does not accept a prompt")
    if perturbed and mode not in PROMPT_MODES:
        raise UsageError("perturbed flag applies only to prompted modes")
    target = np.asarray(target, dtype=np.int64)
    if target.size == 0:
        raise UsageError("empty target sequence")

    sp = vocab.special
    lang = sp("LANG_SRC") if mode in TRANSCRIBE_MODES else sp("LANG_TGT")
    task = sp("TASK_TRANSCRIBE") if mode in TRANSCRIBE_MODES else sp("TASK_TRANSLATE")

    tokens = [sp("BOS_PREV")]
    mask = [False]
    if perturbed:
        tokens.append(sp("PERTURBED"))
        mask.append(False)
    if has_prompt:
        tokens.extend(int(t) for t in prompt)
        mask.extend([prompt_loss] * len(prompt))
    tokens.extend([sp("SOT"), lang, task])
    mask.extend([False, False, False])
    tokens.extend(int(t) for t in target)
    mask.extend([True] * len(target))
    tokens.append(sp("EOS"))
    mask.append(True)

    tokens_arr = np.asarray(tokens, dtype=np.int64)
    mask_arr = np.asarray(mask, dtype=bool)
    cm = None
    if n_memory_slots is not None:
        cm = cross_slot_mask(mode, len(tokens_arr), n_memory_slots)
    return DecoderSequence(tokens=tokens_arr, loss_mask=mask_arr, mode=mode,
                           perturbed=perturbed, cross_mask=cm)


def decode_prefix(mode: str, prompt, vocab: Vocabulary,
                  perturbed: bool = False) -> np.ndarray:
    """Control region up to and including the TASK token, for generation."""
    seq = build_decoder_sequence(mode, prompt, [vocab.special("EOS")], vocab,
                                 perturbed=perturbed)
    return seq.tokens[:-2]  # strip placeholder target and EOS


def decoder_forward_batch(params: ModelParameters, enc: EncoderOutput,
                          tokens: np.ndarray, key_mask: np.ndarray,
                          cross_valid: np.ndarray, train: bool = False,
                          rng=None, collect: dict | None = None) -> Tensor:
    """Causal decoder over (B, L) token ids; returns (B, L, vocab) logits.

    cross_valid is (B, Lq, S) or (B, 1, S) boolean; it is intersected with
    the encoder validity mask before the pre-softmax fill.
    """
    cfg = params.config
    b, l = tokens.shape
    if l > cfg.max_dec_len:
        raise InputError(
            f"decoder input is {l} tokens, model accepts at most {cfg.max_dec_len}")
    x = ad.embedding(params.embed, tokens)
    x = x + params["dec_pos"][:l]
    x = _maybe_dropout(x, cfg.dropout, train, rng)

    causal = np.tril(np.ones((l, l), dtype=bool))
    self_valid = causal[None, None, :, :] & key_mask[:, None, None, :]
    cross = (cross_valid & enc.valid_mask[:, None, :])[:, None, :, :]

    for i in range(cfg.dec_layers):
        pre = ad.layer_norm(x, params[f"dec.{i}.ln1.g"], params[f"dec.{i}.ln1.b"])
        att = _attention(params, f"dec.{i}.self", pre, pre, self_valid,
                         train, rng, collect, f"self.{i}")
        x = x + _maybe_dropout(att, cfg.dropout, train, rng)
        pre = ad.layer_norm(x, params[f"dec.{i}.ln2.g"], params[f"dec.{i}.ln2.b"])
        att = _attention(params, f"dec.{i}.cross", pre, enc.memory, cross,
                         train, rng, collect, f"cross.{i}")
        x = x + _maybe_dropout(att, cfg.dropout, train, rng)
        pre = ad.layer_norm(x, params[f"dec.{i}.ln3.g"], params[f"dec.{i}.ln3.b"])
        hid = (pre @ params[f"dec.{i}.ffn.w1"] + params[f"dec.{i}.ffn.b1"]).gelu()
        hid = hid @ params[f"dec.{i}.ffn.w2"] + params[f"dec.{i}.ffn.b2"]
        x = x + _maybe_dropout(hid, cfg.dropout, train, rng)
    x = ad.layer_norm(x, params["dec.ln_f.g"], params["dec.ln_f.b"])
    return x @ params.embed.swapaxes(0, 1)  # tied output projection


def decoder_forward(params: ModelParameters, enc: EncoderOutput,
                    seq: DecoderSequence, train_mode: bool = False,
                    rng=None, collect: dict | None = None) -> Tensor:
    """Single-sequence forward; returns (L, vocab) logits."""
    l = len(seq)
    cm = seq.cross_mask
    if cm is None:
        cm = cross_slot_mask(seq.mode, l, enc.n_slots)
    if cm.shape != (l, enc.n_slots):
        raise UsageError(
            f"cross_mask shape {cm.shape} does not match (len, slots) "
            f"({l}, {enc.n_slots})")
    logits = decoder_forward_batch(
        params, enc, seq.tokens[None, :], np.ones((1, l), dtype=bool),
        cm[None, :, :], train_mode, rng, collect)
    return logits.reshape(l, params.config.vocab_size)


def sequence_nll(logits: Tensor, tokens: np.ndarray,
                 loss_mask: np.ndarray) -> tuple[Tensor, int]:
    """Sum of next-token NLL over masked positions, plus the count.

    logits may be (L, V) or (B, L, V); tokens and loss_mask match the
    leading shape. Position p is scored with the logits at p-1.
    """
    v = logits.data.shape[-1]
    flat = logits.reshape(-1, v) if logits.data.ndim == 3 else logits
    if logits.data.ndim == 3:
        b, l = tokens.shape
        idx = (np.arange(b)[:, None] * l + np.arange(l - 1)[None, :]).reshape(-1)
        targets = tokens[:, 1:].reshape(-1)
        weights = loss_mask[:, 1:].reshape(-1).astype(flat.data.dtype)
        picked = flat[idx]
    else:
        targets = tokens[1:]
        weights = loss_mask[1:].astype(flat.data.dtype)
        picked = flat[:-1]
    count = int(weights.sum())
    return ad.masked_nll(picked, targets, weights), count


def cross_entropy_loss(logits: Tensor, seq: DecoderSequence) -> Tensor:
    """Mean NLL of next-token targets over the sequence's loss mask."""
    if not seq.loss_mask.any():
        raise UsageError("loss mask is all false; nothing to score")
    total, count = sequence_nll(logits, seq.tokens, seq.loss_mask)
    return total * (1.0 / count)


# ----------------------------------------------------------------------
# embedding neighborhood
# ----------------------------------------------------------------------


def nearest_neighbors(params: ModelParameters, token_id: int, k: int,
                      vocab: Vocabulary) -> np.ndarray:
    """k content tokens closest to token_id in embedding space.

    Euclidean distance; the query token and all specials are excluded;
    exact ties break toward the smaller id.
    """
    if k < 1:
        raise UsageError(f"k ({k}) must be >= 1")
    if vocab.is_special(token_id) or not 0 <= token_id < vocab.size:
        raise UsageError(f"token id {token_id} is not a content token")
    emb = params.embed.data
    cand = vocab.content_ids()
    cand = cand[cand != token_id]
    dist = np.sqrt(((emb[cand] - emb[token_id]) ** 2).sum(axis=1))
    order = np.lexsort((cand, dist))
    return cand[order[:min(k, len(cand))]]


# ----------------------------------------------------------------------
# low-rank adapters
# ----------------------------------------------------------------------


def init_lora(params: ModelParameters, config: LoraConfig, seed: int) -> LoraAdapter:
    """Zero-initialized up factors: the adapted model starts exactly at base."""
    rng = derive_rng(seed, "lora")
    dtype = params.embed.data.dtype
    factors = {}
    for name in _attn_weight_names(params.config):
        d_in, d_out = params[name].data.shape
        bound = 1.0 / np.sqrt(d_in)
        down = ad.parameter(rng.uniform(-bound, bound,
                                        (d_in, config.rank)).astype(dtype))
        up = ad.parameter(np.zeros((config.rank, d_out), dtype))
        factors[name] = (down, up)
    return LoraAdapter(config, factors)


def apply_lora(params: ModelParameters, adapter: LoraAdapter) -> ModelParameters:
    """Attach adapter; base weights are frozen (embeddings optionally not)."""
    _check_adapter_shapes(params, adapter)
    frozen = {}
    for name, t in params.tensors.items():
        keep = adapter.config.train_embeddings and name in ("embed", "text_mode")
        nt = Tensor(t.data, requires_grad=keep)
        frozen[name] = nt
    return ModelParameters(params.config, params.vocab_digest, frozen, adapter)


def merge_lora(params: ModelParameters, adapter: LoraAdapter) -> ModelParameters:
    """Fold adapter factors into plain weights: W + (alpha/r) * down @ up."""
    _check_adapter_shapes(params, adapter)
    merged = {}
    for name, t in params.tensors.items():
        if name in adapter.factors:
            down, up = adapter.factors[name]
            w = t.data + adapter.scale() * (down.data @ up.data)
            merged[name] = ad.parameter(w.astype(t.data.dtype))
        else:
            merged[name] = ad.parameter(t.data.copy())
    return ModelParameters(params.config, params.vocab_digest, merged)


def _check_adapter_shapes(params: ModelParameters, adapter: LoraAdapter) -> None:
    r = adapter.config.rank
    for name, (down, up) in adapter.factors.items():
        if name not in params.tensors:
            raise ConfigurationError(f"adapter targets unknown matrix {name!r}")
        d_in, d_out = params[name].data.shape
        if down.data.shape != (d_in, r) or up.data.shape != (r, d_out):
            raise ConfigurationError(
                f"adapter factors for {name} have shapes {down.data.shape}/"
                f"{up.data.shape}, expected ({d_in}, {r})/({r}, {d_out})")


# ----------------------------------------------------------------------
# checkpoint file: magic, length-prefixed config blob, named tensors
# ----------------------------------------------------------------------


def save_checkpoint(path, params: ModelParameters) -> None:
    header = {"model_config": asdict(params.config),
              "vocab_hash": params.vocab_digest}
    if params.adapter is not None:
        header["lora"] = asdict(params.adapter.config)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    named = list(params.all_named())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(named)))
        for name, t in named:
            nb = name.encode("utf-8")
            arr = np.ascontiguousarray(t.data, dtype="<f4")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path, vocab: Vocabulary) -> ModelParameters:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, not a checkpoint")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        digest = header["vocab_hash"]
        if digest != vocab_hash(vocab):
            raise DataError(
                f"{path}: checkpoint was built for a different vocabulary "
                f"(hash {digest[:12]}.. != {vocab_hash(vocab)[:12]}..)")
        (n_tensors,) = struct.unpack("<I", fh.read(4))
        flat: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(dims)
            flat[name] = arr.copy()
    config = ModelConfig(**header["model_config"])
    tensors = {name: ad.parameter(arr) for name, arr in flat.items()
               if not name.startswith("lora.")}
    params = ModelParameters(config, digest, tensors)
    if "lora" in header:
        lcfg = LoraConfig(**header["lora"])
        factors = {}
        for name in _attn_weight_names(config):
            down = flat.get(f"lora.{name}.down")
            up = flat.get(f"lora.{name}.up")
            if down is None or up is None:
                raise DataError(f"{path}: missing adapter factors for {name}")
            factors[name] = (ad.parameter(down), ad.parameter(up))
        adapter = LoraAdapter(lcfg, factors)
        params = apply_lora(params, adapter)
    return params
