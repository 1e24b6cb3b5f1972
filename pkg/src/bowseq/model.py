"""Bidirectional LSTM encoder-decoder with bilinear-tanh attention.

Per source position the encoder state is the elementwise sum of the forward
and backward LSTM outputs, so every layer keeps the same width and stacked
layers consume the summed outputs of the layer below.  The decoder attends
with its top-layer state q_t: scores tanh(q_t^T W h_i) are softmax-normalized
over real source positions, the context v_t is the weighted sum of encoder
states, and the generator maps v_t (or [q_t; v_t]) to pre-softmax scores s_t
over the target vocabulary.  The sentence-level bag-of-words probability is
sigmoid of the scores summed over the real target timesteps.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParameterStore
from .data import BOS, Batch

CHECKPOINT_MAGIC = b"BOWSEQCK"
CHECKPOINT_VERSION = 1

GENERATOR_INPUTS = ("context", "concat")


@dataclass(frozen=True)
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    emb_size: int = 64
    hidden_size: int = 64
    enc_layers: int = 1
    dec_layers: int = 1
    dropout: float = 0.2
    generator_input: str = "context"

    def __post_init__(self) -> None:
        if min(self.src_vocab_size, self.tgt_vocab_size) < 5:
            raise ValueError("vocabulary sizes must cover the 4 reserved indices plus content")
        if min(self.emb_size, self.hidden_size, self.enc_layers, self.dec_layers) < 1:
            raise ValueError("sizes and layer counts must be positive")
        if self.dec_layers > self.enc_layers:
            raise ValueError(
                f"dec_layers ({self.dec_layers}) must not exceed enc_layers ({self.enc_layers}):"
                " decoder states are seeded from the top encoder layers"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.generator_input not in GENERATOR_INPUTS:
            raise ValueError(f"generator_input must be one of {GENERATOR_INPUTS}")


@dataclass
class EncoderStates:
    """Per-position summed states, validity mask, and per-layer finals."""

    outputs: list[Node]             # L nodes of shape (B, H)
    mask: np.ndarray                # (B, L) float 0/1
    finals: list[tuple[tuple[Node, Node], tuple[Node, Node]]]  # [(fwd(h,c), bwd(h,c))] per layer

    @property
    def length(self) -> int:
        return len(self.outputs)


@dataclass
class AttentionResult:
    weights: Node                   # (B, L) rows on the simplex over real positions
    context: Node                   # (B, H)


@dataclass
class DecoderState:
    layers: list[tuple[Node, Node]]  # (h, c) per layer, bottom first


@dataclass
class StepOutput:
    scores: Node                    # (B, V) pre-softmax s_t
    probs: Node                     # (B, V) word distribution
    state: DecoderState
    attention: AttentionResult


@dataclass
class ForwardPass:
    step_scores: list[Node]
    step_probs: list[Node]
    bag_probs: Node                  # (B, V) sentence-level sigmoid probabilities


def ordered_sum(nodes: Sequence[Node], labels: Sequence[int] | None = None) -> Node:
    """Left-fold addition in ascending label order.

    Floating-point addition does not associate, so a canonical operand order
    is what makes the result invariant to how callers permute their inputs.
    Labels default to list positions.
    """
    nodes = list(nodes)
    if not nodes:
        raise ValueError("ordered_sum: empty input")
    if labels is None:
        labels = range(len(nodes))
    labels = list(labels)
    if len(labels) != len(nodes) or len(set(labels)) != len(labels):
        raise ValueError("ordered_sum: labels must be unique and match the inputs")
    ranked = [n for _, n in sorted(zip(labels, nodes), key=lambda kv: kv[0])]
    total = ranked[0]
    for n in ranked[1:]:
        total = ad.add(total, n)
    return total


def bow_probabilities(step_scores: Sequence[Node], timesteps: Sequence[int] | None = None) -> Node:
    """Sentence-level bag probabilities: sigmoid of scores summed over steps."""
    return ad.sigmoid(ordered_sum(step_scores, timesteps))


class LstmCell:
    """One LSTM layer; gates fused along columns as [input, forget, cell, output]."""

    def __init__(
        self,
        store: ParameterStore,
        prefix: str,
        input_size: int,
        hidden_size: int,
        init,
    ) -> None:
        self.hidden_size = hidden_size
        self.w_in = store.create(f"{prefix}.w_in", init((input_size, 4 * hidden_size)))
        self.w_rec = store.create(f"{prefix}.w_rec", init((hidden_size, 4 * hidden_size)))
        bias = init((1, 4 * hidden_size))
        bias[0, hidden_size : 2 * hidden_size] += 1.0  # forget-gate bias starts open
        self.bias = store.create(f"{prefix}.bias", bias)

    def step(
        self,
        x: Node,
        h: Node,
        c: Node,
        mask_col: Node | None = None,
        inv_mask_col: Node | None = None,
    ) -> tuple[Node, Node]:
        hs = self.hidden_size
        z = ad.add(ad.add(ad.matmul(x, self.w_in), ad.matmul(h, self.w_rec)), self.bias)
        i = ad.sigmoid(ad.slice_cols(z, 0, hs))
        f = ad.sigmoid(ad.slice_cols(z, hs, 2 * hs))
        g = ad.tanh(ad.slice_cols(z, 2 * hs, 3 * hs))
        o = ad.sigmoid(ad.slice_cols(z, 3 * hs, 4 * hs))
        c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
        h_new = ad.mul(o, ad.tanh(c_new))
        if mask_col is not None:
            # Padded rows keep their previous state so trailing PAD is inert.
            h_new = ad.add(ad.scale_rows(h_new, mask_col), ad.scale_rows(h, inv_mask_col))
            c_new = ad.add(ad.scale_rows(c_new, mask_col), ad.scale_rows(c, inv_mask_col))
        return h_new, c_new


class Seq2SeqModel:
    """Encoder, attention, decoder, and generator over a shared ParameterStore.

    Construction with an ``init_rng`` draws uniform(-0.1, 0.1) entries in
    registration order (embeddings, encoder layers fwd/bwd, decoder layers,
    attention, generator); without it all parameters start at zero, which is
    the hook checkpoint loading uses.
    """

    def __init__(self, config: ModelConfig, init_rng: np.random.Generator | None = None) -> None:
        self.config = config
        self.params = ParameterStore()
        if init_rng is None:
            init = lambda shape: np.zeros(shape)
        else:
            init = lambda shape: init_rng.uniform(-0.1, 0.1, shape)

        cfg = config
        self.src_embed = self.params.create("src_embed", init((cfg.src_vocab_size, cfg.emb_size)))
        self.tgt_embed = self.params.create("tgt_embed", init((cfg.tgt_vocab_size, cfg.emb_size)))
        self.enc_cells: list[tuple[LstmCell, LstmCell]] = []
        for layer in range(cfg.enc_layers):
            in_size = cfg.emb_size if layer == 0 else cfg.hidden_size
            fwd = LstmCell(self.params, f"enc.l{layer}.fwd", in_size, cfg.hidden_size, init)
            bwd = LstmCell(self.params, f"enc.l{layer}.bwd", in_size, cfg.hidden_size, init)
            self.enc_cells.append((fwd, bwd))
        self.dec_cells: list[LstmCell] = []
        for layer in range(cfg.dec_layers):
            in_size = cfg.emb_size if layer == 0 else cfg.hidden_size
            self.dec_cells.append(
                LstmCell(self.params, f"dec.l{layer}", in_size, cfg.hidden_size, init)
            )
        self.attn_bilinear = self.params.create(
            "attn.bilinear", init((cfg.hidden_size, cfg.hidden_size))
        )
        gen_in = cfg.hidden_size if cfg.generator_input == "context" else 2 * cfg.hidden_size
        self.gen_weight = self.params.create("gen.weight", init((gen_in, cfg.tgt_vocab_size)))
        self.gen_bias = self.params.create("gen.bias", init((1, cfg.tgt_vocab_size)))

    # -- helpers ------------------------------------------------------------

    def _maybe_dropout(self, x: Node, train: bool, rng: np.random.Generator | None) -> Node:
        rate = self.config.dropout
        if not train or rate == 0.0:
            return x
        if rng is None:
            raise ValueError("training-mode forward needs an RNG for dropout masks")
        return ad.dropout(x, ad.make_dropout_mask(rng, x.value.shape, rate))

    # -- encoder ------------------------------------------------------------

    def encode(
        self,
        source: np.ndarray,
        source_mask: np.ndarray | None = None,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> EncoderStates:
        source = np.asarray(source)
        if source.ndim != 2:
            raise ValueError(f"source batch must be 2-d, got shape {source.shape}")
        batch, length = source.shape
        if length < 1:
            raise ValueError("empty source")
        if source_mask is None:
            source_mask = np.ones((batch, length), dtype=np.float64)
        cfg = self.config

        mask_cols = [ad.constant(source_mask[:, t : t + 1]) for t in range(length)]
        inv_cols = [ad.constant(1.0 - source_mask[:, t : t + 1]) for t in range(length)]
        inputs = [
            self._maybe_dropout(ad.embedding_lookup(self.src_embed, source[:, t]), train, rng)
            for t in range(length)
        ]

        finals = []
        for layer, (fwd, bwd) in enumerate(self.enc_cells):
            if layer > 0:
                inputs = [self._maybe_dropout(x, train, rng) for x in inputs]
            zeros = ad.constant(np.zeros((batch, cfg.hidden_size)))
            h, c = zeros, zeros
            fwd_out: list[Node] = []
            for t in range(length):
                h, c = fwd.step(inputs[t], h, c, mask_cols[t], inv_cols[t])
                fwd_out.append(h)
            fwd_final = (h, c)
            h, c = zeros, zeros
            bwd_out: list[Node] = [None] * length  # type: ignore[list-item]
            for t in reversed(range(length)):
                h, c = bwd.step(inputs[t], h, c, mask_cols[t], inv_cols[t])
                bwd_out[t] = h
            bwd_final = (h, c)
            finals.append((fwd_final, bwd_final))
            inputs = [ad.add(f, b) for f, b in zip(fwd_out, bwd_out)]
        return EncoderStates(outputs=inputs, mask=source_mask, finals=finals)

    def initial_decoder_state(self, encoded: EncoderStates) -> DecoderState:
        """Seed decoder layer j from encoder layer (enc_layers - dec_layers + j)."""
        offset = self.config.enc_layers - self.config.dec_layers
        layers = []
        for j in range(self.config.dec_layers):
            (fh, fc), (bh, bc) = encoded.finals[offset + j]
            layers.append((ad.add(fh, bh), ad.add(fc, bc)))
        return DecoderState(layers)

    # -- attention ----------------------------------------------------------

    def attend(self, query: Node, encoded: EncoderStates) -> AttentionResult:
        projected = ad.matmul(query, self.attn_bilinear)
        energies = [ad.sum_rows(ad.mul(projected, h)) for h in encoded.outputs]
        scores = ad.tanh(ad.concat_cols(energies))
        weights = ad.softmax_rows(scores, mask=encoded.mask)
        pieces = [
            ad.scale_rows(h, ad.slice_cols(weights, i, i + 1))
            for i, h in enumerate(encoded.outputs)
        ]
        return AttentionResult(weights=weights, context=ordered_sum(pieces))

    # -- decoder ------------------------------------------------------------

    def decode_step(
        self,
        prev_tokens: np.ndarray,
        state: DecoderState,
        encoded: EncoderStates,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> StepOutput:
        x = self._maybe_dropout(ad.embedding_lookup(self.tgt_embed, prev_tokens), train, rng)
        new_layers = []
        for layer, cell in enumerate(self.dec_cells):
            if layer > 0:
                x = self._maybe_dropout(x, train, rng)
            h, c = cell.step(x, *state.layers[layer])
            new_layers.append((h, c))
            x = h
        attention = self.attend(x, encoded)
        if self.config.generator_input == "context":
            gen_in = attention.context
        else:
            gen_in = ad.concat_cols([x, attention.context])
        scores = ad.add(ad.matmul(gen_in, self.gen_weight), self.gen_bias)
        probs = ad.softmax_rows(scores)
        return StepOutput(scores, probs, DecoderState(new_layers), attention)

    # -- full teacher-forced pass -------------------------------------------

    def forward_teacher_forced(
        self,
        batch: Batch,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> ForwardPass:
        encoded = self.encode(batch.source, batch.source_mask, train, rng)
        state = self.initial_decoder_state(encoded)
        steps = batch.target.shape[1]
        bos = np.full(batch.size, BOS, dtype=np.int64)
        step_scores, step_probs, masked_scores = [], [], []
        for t in range(steps):
            prev = bos if t == 0 else batch.target[:, t - 1]
            out = self.decode_step(prev, state, encoded, train, rng)
            state = out.state
            step_scores.append(out.scores)
            step_probs.append(out.probs)
            masked_scores.append(
                ad.scale_rows(out.scores, ad.constant(batch.target_mask[:, t : t + 1]))
            )
        return ForwardPass(
            step_scores=step_scores,
            step_probs=step_probs,
            bag_probs=bow_probabilities(masked_scores),
        )

    # -- checkpoints ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        save_checkpoint(self, path)


def save_checkpoint(model: Seq2SeqModel, path: str | Path) -> None:
    """Binary layout: magic, version, config JSON, then each parameter as
    (name length, name bytes, rank, dims, little-endian float64 row-major).
    Parameters appear in registration order, making files bit-reproducible.
    """
    header = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    chunks.append(struct.pack("<I", len(header)))
    chunks.append(header)
    names = model.params.names()
    chunks.append(struct.pack("<I", len(names)))
    for name, node in model.params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(node.value, dtype="<f8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


class CheckpointError(ValueError):
    pass


def load_checkpoint(path: str | Path) -> Seq2SeqModel:
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint {path}")
        piece = view[pos : pos + n]
        pos += n
        return piece

    if bytes(take(len(CHECKPOINT_MAGIC))) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a model checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", take(4))
    config = ModelConfig(**json.loads(bytes(take(hlen)).decode("utf-8")))
    model = Seq2SeqModel(config)

    (count,) = struct.unpack("<I", take(4))
    seen = []
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        data = np.frombuffer(take(8 * int(np.prod(shape))), dtype="<f8").reshape(shape)
        if name not in model.params:
            raise CheckpointError(f"unexpected parameter {name!r} in {path}")
        node = model.params[name]
        if node.value.shape != shape:
            raise CheckpointError(
                f"parameter {name!r} shape {shape} does not match model {node.value.shape}"
            )
        node.value[...] = data
        seen.append(name)
    if pos != len(view):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    if seen != model.params.names():
        raise CheckpointError(f"checkpoint parameter set does not match model in {path}")
    return model
