"""Deterministic synthetic multi-modal corpus.

Each utterance is a triple (speech features X, source tokens Y, target
tokens Z). Translation is a fixed bijective token map composed with
reversal of consecutive 3-token blocks, so it is non-monotonic but brute
force checkable. A configurable subset of source tokens are homographs:
their translation is one of two variants decided solely by the sign of a
pitch value carried on a reserved feature dimension, so speech genuinely
contains information the transcript lacks.

Speech is codebook-plus-noise: every token owns a fixed feature vector,
each token emits a few noisy copies of it. Utterances carry synthetic
timestamps (fixed 100 frames/s) so conversational re-segmentation can be
exercised.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, UsageError
from .rng import derive_rng

FRAME_RATE = 100.0  # frames per second for synthetic timestamps
REVERSAL_BLOCK = 3

SPECIAL_TOKEN_NAMES = (
    "PAD", "BOS_PREV", "SOT", "EOS", "LANG_SRC", "LANG_TGT",
    "TASK_TRANSCRIBE", "TASK_TRANSLATE", "PERTURBED", "TEXT_MODE",
)


@dataclass(frozen=True)
class Vocabulary:
    """Token inventory: specials first, then source tokens, then targets.

    Ids are contiguous from 0. The last `n_homographs` source tokens are
    homographs; each maps to a pair of target variants.
    """

    special_tokens: dict[str, int]
    source_tokens: list[str]
    target_tokens: list[str]
    n_homographs: int

    def __post_init__(self):
        ids = list(self.special_tokens.values())
        n = len(ids) + len(self.source_tokens) + len(self.target_tokens)
        if sorted(ids) != list(range(len(ids))):
            raise ConfigurationError("special_tokens must occupy ids 0..n-1")
        if self.n_homographs > len(self.source_tokens):
            raise ConfigurationError(
                "n_homographs exceeds the source vocabulary size")
        expected_targets = len(self.source_tokens) + self.n_homographs
        if len(self.target_tokens) != expected_targets:
            raise ConfigurationError(
                f"target_tokens has {len(self.target_tokens)} entries, "
                f"expected {expected_targets}")
        object.__setattr__(self, "_size", n)

    @property
    def size(self) -> int:
        return self._size

    @property
    def n_special(self) -> int:
        return len(self.special_tokens)

    @property
    def first_source_id(self) -> int:
        return self.n_special

    @property
    def first_target_id(self) -> int:
        return self.n_special + len(self.source_tokens)

    @property
    def n_plain(self) -> int:
        return len(self.source_tokens) - self.n_homographs

    def special(self, name: str) -> int:
        return self.special_tokens[name]

    def is_special(self, token_id: int) -> bool:
        return 0 <= token_id < self.n_special

    def is_source(self, token_id: int) -> bool:
        return self.first_source_id <= token_id < self.first_target_id

    def is_homograph(self, token_id: int) -> bool:
        return (self.is_source(token_id)
                and token_id - self.first_source_id >= self.n_plain)

    def content_ids(self) -> np.ndarray:
        return np.arange(self.n_special, self.size)

    def token_string(self, token_id: int) -> str:
        if token_id < 0 or token_id >= self.size:
            raise DataError(f"token id {token_id} outside vocabulary")
        if token_id < self.n_special:
            inv = {v: k for k, v in self.special_tokens.items()}
            return f"<{inv[token_id].lower()}>"
        if token_id < self.first_target_id:
            return self.source_tokens[token_id - self.first_source_id]
        return self.target_tokens[token_id - self.first_target_id]

    def render(self, token_ids) -> str:
        """Space-joined content words; structural specials are dropped."""
        return " ".join(self.token_string(t) for t in token_ids
                        if not self.is_special(int(t)))


@dataclass(frozen=True)
class CorpusSpec:
    n_utterances: int
    source_vocab_size: int = 70
    homograph_count: int = 10
    feature_dim: int = 8
    duration_range: tuple[int, int] = (2, 4)
    noise_sigma: float = 0.1
    sentence_length_range: tuple[int, int] = (3, 9)
    seed: int = 0


def validate_spec(spec: CorpusSpec) -> None:
    if spec.n_utterances < 0:
        raise ConfigurationError(f"n_utterances ({spec.n_utterances}) must be >= 0")
    if spec.source_vocab_size < 1:
        raise ConfigurationError(
            f"source_vocab_size ({spec.source_vocab_size}) must be >= 1")
    if not 0 <= spec.homograph_count <= spec.source_vocab_size:
        raise ConfigurationError(
            f"homograph_count ({spec.homograph_count}) must be between 0 and "
            f"source_vocab_size ({spec.source_vocab_size})")
    if spec.feature_dim < 2:
        raise ConfigurationError(f"feature_dim ({spec.feature_dim}) must be >= 2")
    lo, hi = spec.duration_range
    if not 1 <= lo <= hi:
        raise ConfigurationError(f"duration_range ({lo}, {hi}) must satisfy 1 <= min <= max")
    if spec.noise_sigma < 0:
        raise ConfigurationError(f"noise_sigma ({spec.noise_sigma}) must be >= 0")
    lo, hi = spec.sentence_length_range
    if not 1 <= lo <= hi:
        raise ConfigurationError(
            f"sentence_length_range ({lo}, {hi}) must satisfy 1 <= min <= max")


@dataclass
class Utterance:
    id: str
    source: np.ndarray                    # token ids, int64
    target: np.ndarray | None             # token ids, int64
    pitch_flags: np.ndarray               # per-source-token floats
    speech: np.ndarray | None = None      # (frames, feature_dim) float32
    start_time: float = 0.0
    end_time: float = 0.0
    text_only: bool = False

    def has_speech(self) -> bool:
        return self.speech is not None

    def duration(self) -> float:
        return self.end_time - self.start_time


def build_vocabulary(spec: CorpusSpec) -> Vocabulary:
    validate_spec(spec)
    specials = {name: i for i, name in enumerate(SPECIAL_TOKEN_NAMES)}
    n_plain = spec.source_vocab_size - spec.homograph_count
    source = [f"s{i:02d}" for i in range(n_plain)]
    source += [f"h{j:02d}" for j in range(spec.homograph_count)]
    target = [f"t{i:02d}" for i in range(n_plain)]
    for j in range(spec.homograph_count):
        target += [f"v{j:02d}a", f"v{j:02d}b"]
    return Vocabulary(specials, source, target, spec.homograph_count)


def vocab_hash(vocab: Vocabulary) -> str:
    blob = json.dumps(
        {"special_tokens": vocab.special_tokens,
         "source_tokens": vocab.source_tokens,
         "target_tokens": vocab.target_tokens,
         "n_homographs": vocab.n_homographs},
        sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def reverse_blocks(seq: list, block: int = REVERSAL_BLOCK) -> list:
    out = []
    for i in range(0, len(seq), block):
        out.extend(reversed(seq[i:i + block]))
    return out


def translate_oracle(source, pitch_flags, vocab: Vocabulary) -> np.ndarray:
    """Ground-truth translation: 3-block reversal then per-token map.

    Homograph tokens resolve to variant A when their pitch is positive,
    variant B otherwise.
    """
    source = np.asarray(source, dtype=np.int64)
    pitch = np.asarray(pitch_flags, dtype=np.float64)
    if source.shape[0] != pitch.shape[0]:
        raise UsageError("source and pitch_flags lengths differ")
    pairs = reverse_blocks(list(zip(source.tolist(), pitch.tolist())))
    out = []
    for tok, p in pairs:
        if not vocab.is_source(tok):
            raise DataError(f"token id {tok} is not a source token")
        idx = tok - vocab.first_source_id
        if idx < vocab.n_plain:
            out.append(vocab.first_target_id + idx)
        else:
            j = idx - vocab.n_plain
            variant = 0 if p > 0 else 1
            out.append(vocab.first_target_id + vocab.n_plain + 2 * j + variant)
    return np.asarray(out, dtype=np.int64)


def token_codebook(spec: CorpusSpec) -> np.ndarray:
    """Fixed per-source-token feature vectors; last dim reserved for pitch."""
    rng = derive_rng(spec.seed, "codebook")
    book = rng.normal(0.0, 1.0, size=(spec.source_vocab_size, spec.feature_dim))
    book[:, -1] = 0.0
    return book.astype(np.float32)


def synthesize_speech(source, pitch_flags, spec: CorpusSpec,
                      rng: np.random.Generator,
                      codebook: np.ndarray | None = None) -> np.ndarray:
    """Each token emits 1+ noisy copies of its codebook vector.

    The reserved (last) feature dimension carries the token's pitch value
    on every frame it emits.
    """
    validate_spec(spec)
    if codebook is None:
        codebook = token_codebook(spec)
    source = np.asarray(source, dtype=np.int64)
    lo, hi = spec.duration_range
    chunks = []
    for tok, p in zip(source.tolist(), np.asarray(pitch_flags).tolist()):
        idx = tok - len(SPECIAL_TOKEN_NAMES)
        if not 0 <= idx < spec.source_vocab_size:
            raise DataError(f"token id {tok} is not a source token")
        r = int(rng.integers(lo, hi + 1))
        frames = np.repeat(codebook[idx][None, :], r, axis=0)
        if spec.noise_sigma > 0:
            frames = frames + rng.normal(
                0.0, spec.noise_sigma, size=frames.shape).astype(np.float32)
        frames = frames.copy()
        frames[:, -1] += np.float32(p)
        chunks.append(frames)
    return np.concatenate(chunks, axis=0).astype(np.float32)


def generate_corpus(spec: CorpusSpec) -> list[Utterance]:
    """Deterministic corpus; each utterance uses a (seed, index) child stream."""
    validate_spec(spec)
    vocab = build_vocabulary(spec)
    codebook = token_codebook(spec)
    lo, hi = spec.sentence_length_range
    utts = []
    clock = 0.0
    for i in range(spec.n_utterances):
        rng = derive_rng(spec.seed, "utt", i)
        length = int(rng.integers(lo, hi + 1))
        idx = rng.integers(0, spec.source_vocab_size, size=length)
        source = idx + len(SPECIAL_TOKEN_NAMES)
        # pitch drawn for every position before looking at identities, so
        # it is independent of them; non-homographs then carry 0
        signs = rng.integers(0, 2, size=length) * 2 - 1
        is_hom = idx >= spec.source_vocab_size - spec.homograph_count
        pitch = np.where(is_hom, signs, 0).astype(np.float32)
        target = translate_oracle(source, pitch, vocab)
        speech = synthesize_speech(source, pitch, spec, rng, codebook)
        dur = speech.shape[0] / FRAME_RATE
        utts.append(Utterance(
            id=f"utt-{i:06d}", source=source.astype(np.int64), target=target,
            pitch_flags=pitch, speech=speech,
            start_time=clock, end_time=clock + dur))
        clock += dur
    return utts


def resegment(utterances: list[Utterance], mean_s: float, std_s: float,
              rng: np.random.Generator) -> list[Utterance]:
    """Merge consecutive utterances until a Gaussian duration target is hit.

    Targets are drawn from N(mean_s, std_s^2); a segment always contains
    at least one utterance (the truncation rule), and a trailing partial
    segment is emitted as-is.
    """
    if mean_s <= 0:
        raise ConfigurationError(f"mean_s ({mean_s}) must be > 0")
    if not utterances:
        return []
    segments = []
    members: list[Utterance] = []
    acc = 0.0
    target = rng.normal(mean_s, std_s)
    for utt in utterances:
        members.append(utt)
        acc += utt.duration()
        if acc >= target:
            segments.append(_merge(members, len(segments)))
            members, acc = [], 0.0
            target = rng.normal(mean_s, std_s)
    if members:
        segments.append(_merge(members, len(segments)))
    return segments


def _merge(members: list[Utterance], index: int) -> Utterance:
    speech = None
    if all(m.has_speech() for m in members):
        speech = np.concatenate([m.speech for m in members], axis=0)
    return Utterance(
        id=f"seg-{index:04d}",
        source=np.concatenate([m.source for m in members]),
        target=np.concatenate([m.target for m in members]),
        pitch_flags=np.concatenate([m.pitch_flags for m in members]),
        speech=speech,
        start_time=members[0].start_time,
        end_time=members[-1].end_time)


def replicate_text_only(corpus: list[Utterance]) -> list[Utterance]:
    """Text-pair duplicates of a speech corpus; idempotent on text-only input."""
    out = []
    for u in corpus:
        if u.text_only:
            out.append(replace(u, source=u.source.copy(),
                               target=None if u.target is None else u.target.copy(),
                               pitch_flags=u.pitch_flags.copy()))
            continue
        out.append(Utterance(
            id=f"{u.id}-txt", source=u.source.copy(), target=u.target.copy(),
            pitch_flags=u.pitch_flags.copy(), speech=None,
            start_time=u.start_time, end_time=u.end_time, text_only=True))
    return out


def speed_perturb(speech: np.ndarray, factor: float) -> np.ndarray:
    """Resample the frame axis by 1/factor with floor index mapping."""
    if factor <= 0:
        raise ConfigurationError(f"speed factor ({factor}) must be > 0")
    if factor == 1.0:
        return speech
    n = speech.shape[0]
    n_new = max(1, int(np.floor(n / factor + 0.5)))
    idx = np.minimum((np.arange(n_new) * factor).astype(np.int64), n - 1)
    return speech[idx]


# ----------------------------------------------------------------------
# corpus and vocabulary files
# ----------------------------------------------------------------------


def _encode_speech(speech: np.ndarray | None):
    if speech is None:
        return None
    payload = speech.astype("<f4").tobytes()
    return {"shape": list(speech.shape),
            "data": base64.b64encode(payload).decode("ascii")}


def _decode_speech(blob) -> np.ndarray | None:
    if blob is None:
        return None
    raw = base64.b64decode(blob["data"])
    arr = np.frombuffer(raw, dtype="<f4")
    return arr.reshape(blob["shape"]).copy()


def save_corpus(path: str | Path, utterances: list[Utterance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in utterances:
            rec = {
                "id": u.id,
                "source": [int(t) for t in u.source],
                "target": None if u.target is None else [int(t) for t in u.target],
                "pitch": [float(p) for p in u.pitch_flags],
                "speech": _encode_speech(u.speech),
                "text_only": u.text_only,
                "start": u.start_time,
                "end": u.end_time,
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_corpus(path: str | Path) -> list[Utterance]:
    utts = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: invalid record: {e}") from e
            utts.append(Utterance(
                id=rec["id"],
                source=np.asarray(rec["source"], dtype=np.int64),
                target=(None if rec.get("target") is None
                        else np.asarray(rec["target"], dtype=np.int64)),
                pitch_flags=np.asarray(rec.get("pitch", []), dtype=np.float32),
                speech=_decode_speech(rec.get("speech")),
                start_time=rec.get("start", 0.0),
                end_time=rec.get("end", 0.0),
                text_only=rec.get("text_only", False)))
    return utts


def save_vocabulary(path: str | Path, vocab: Vocabulary) -> None:
    blob = {"special_tokens": vocab.special_tokens,
            "source_tokens": vocab.source_tokens,
            "target_tokens": vocab.target_tokens,
            "n_homographs": vocab.n_homographs}
    Path(path).write_text(json.dumps(blob, indent=1), encoding="utf-8")


def load_vocabulary(path: str | Path) -> Vocabulary:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return Vocabulary(blob["special_tokens"], blob["source_tokens"],
                          blob["target_tokens"], blob["n_homographs"])
    except KeyError as e:
        raise DataError(f"vocabulary file {path} is missing field {e}") from e
