"""Decoding: beam search with length normalization, plus greedy utilities.

Hypothesis scores are accumulated log-likelihoods of emitted tokens (EOS
included).  ``max_length`` caps the emitted token count including EOS; a
hypothesis that reaches the cap is force-terminated through the decoder's
real distribution so its score still equals the sum of its step log
probabilities.  Ties anywhere break toward the lexicographically smaller
token sequence, which makes decoding fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import BOS, EOS
from .model import DecoderState, EncoderStates, Seq2SeqModel

#: Probability floor applied before log purely to avoid -inf scores.
PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_likelihood: float
    finished: bool

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class BeamConfig:
    width: int = 10
    max_length: int | None = None     # defaults to 2 * source_length + 10
    length_normalize: bool = True
    length_exponent: float = 1.0

    def __post_init__(self) -> None:
        if self.width < 1:
            raise ValueError(f"beam width must be positive, got {self.width}")
        if self.max_length is not None and self.max_length < 1:
            raise ValueError(f"max_length must be positive, got {self.max_length}")
        if self.length_exponent < 0:
            raise ValueError(f"length_exponent must be non-negative, got {self.length_exponent}")


def normalized_score(
    hyp: Hypothesis, length_normalize: bool = True, length_exponent: float = 1.0
) -> float:
    if hyp.length == 0:
        raise ValueError("cannot score an empty hypothesis")
    if not length_normalize:
        return hyp.log_likelihood
    return hyp.log_likelihood / (hyp.length ** length_exponent)


@dataclass
class _BeamItem:
    tokens: tuple[int, ...]
    ll: float
    state: DecoderState | None


def _check_source(model: Seq2SeqModel, source: Sequence[int]) -> np.ndarray:
    src = np.asarray(list(source), dtype=np.int64)
    if src.ndim != 1 or src.size == 0:
        raise ValueError("source must be a non-empty token index sequence")
    if src.min() < 0 or src.max() >= model.config.src_vocab_size:
        raise ValueError(
            f"source index out of range for model vocabulary "
            f"({int(src.max())} vs {model.config.src_vocab_size})"
        )
    return src[None, :]


def _step_logprobs(model: Seq2SeqModel, prev: int, state, encoded) -> tuple[np.ndarray, DecoderState]:
    out = model.decode_step(np.array([prev], dtype=np.int64), state, encoded)
    logp = np.log(np.maximum(out.probs.value[0], PROB_FLOOR))
    return logp, out.state


def beam_search(
    model: Seq2SeqModel, source: Sequence[int], config: BeamConfig = BeamConfig()
) -> list[Hypothesis]:
    """Ranked finished hypotheses (best first) for one source sentence.

    Each step expands every live hypothesis over its top ``width`` tokens,
    keeps the global top ``width`` expansions by accumulated log-likelihood,
    and sets finished ones aside.  The search stops once ``width`` hypotheses
    have finished or nothing is live; the final ranking uses the normalized
    score.
    """
    src = _check_source(model, source)
    encoded = model.encode(src)
    max_length = config.max_length or 2 * src.shape[1] + 10
    live = [_BeamItem((), 0.0, model.initial_decoder_state(encoded))]
    finished: list[Hypothesis] = []

    while live and len(finished) < config.width:
        candidates: list[_BeamItem] = []
        for item in live:
            prev = item.tokens[-1] if item.tokens else BOS
            logp, state = _step_logprobs(model, prev, item.state, encoded)
            if len(item.tokens) == max_length - 1:
                candidates.append(_BeamItem(item.tokens + (EOS,), item.ll + logp[EOS], None))
                continue
            top = np.argsort(-logp, kind="stable")[: config.width]
            for tok in top:
                tok = int(tok)
                candidates.append(_BeamItem(item.tokens + (tok,), item.ll + logp[tok], state))
        candidates.sort(key=lambda c: (-c.ll, c.tokens))
        live = []
        for cand in candidates[: config.width]:
            if cand.tokens[-1] == EOS:
                finished.append(Hypothesis(cand.tokens, cand.ll, True))
            else:
                live.append(cand)

    finished.sort(
        key=lambda h: (
            -normalized_score(h, config.length_normalize, config.length_exponent),
            h.tokens,
        )
    )
    return finished[: config.width]


def greedy_decode(
    model: Seq2SeqModel, source: Sequence[int], max_length: int | None = None
) -> Hypothesis:
    """Step-wise argmax decoding; equivalent to beam search at width 1."""
    src = _check_source(model, source)
    encoded = model.encode(src)
    cap = max_length or 2 * src.shape[1] + 10
    state = model.initial_decoder_state(encoded)
    tokens: list[int] = []
    ll = 0.0
    while True:
        prev = tokens[-1] if tokens else BOS
        logp, state = _step_logprobs(model, prev, state, encoded)
        tok = EOS if len(tokens) == cap - 1 else int(np.argmax(logp))
        tokens.append(tok)
        ll += float(logp[tok])
        if tok == EOS:
            return Hypothesis(tuple(tokens), ll, True)


def greedy_decode_batch(
    model: Seq2SeqModel, sources: Sequence[Sequence[int]], max_length: int | None = None
) -> list[list[int]]:
    """Greedy-decode many sentences in one padded batch.

    Returns content tokens only (no EOS).  Each row stops at its own EOS or
    at 2 * its source length + 10; rows that finish early keep stepping as
    carriers but their outputs are ignored.
    """
    if not sources:
        return []
    from .data import PAD

    lengths = [len(s) for s in sources]
    width = max(lengths)
    batch = len(sources)
    src = np.full((batch, width), PAD, dtype=np.int64)
    mask = np.zeros((batch, width), dtype=np.float64)
    for i, s in enumerate(sources):
        src[i, : len(s)] = list(s)
        mask[i, : len(s)] = 1.0
    encoded = model.encode(src, mask)
    state = model.initial_decoder_state(encoded)

    caps = [max_length or 2 * n + 10 for n in lengths]
    done = [False] * batch
    outputs: list[list[int]] = [[] for _ in range(batch)]
    prev = np.full(batch, BOS, dtype=np.int64)
    for step in range(max(caps)):
        out = model.decode_step(prev, state, encoded)
        state = out.state
        picks = np.argmax(out.probs.value, axis=1)
        for i in range(batch):
            if done[i]:
                continue
            tok = int(picks[i])
            if tok == EOS or step + 1 >= caps[i]:
                done[i] = True
            elif tok != PAD:
                outputs[i].append(tok)
            prev[i] = tok
        if all(done):
            break
    return outputs


def score_sequence(model: Seq2SeqModel, source: Sequence[int], tokens: Sequence[int]) -> float:
    """Teacher-forced log-likelihood of an emitted token sequence."""
    src = _check_source(model, source)
    encoded = model.encode(src)
    state = model.initial_decoder_state(encoded)
    total = 0.0
    prev = BOS
    for tok in tokens:
        logp, state = _step_logprobs(model, prev, state, encoded)
        total += float(logp[tok])
        prev = tok
    return total
