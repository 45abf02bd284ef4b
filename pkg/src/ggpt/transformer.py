"""Decoder-only causal transformer over interleaved position/feature tokens.

Spatial structure enters through rotary embeddings whose four groups rotate by
the token's (x, y, z) latent coordinates and a token-type flag, so attention
logits depend on coordinate differences rather than sequence offsets. The
trunk follows the fast-GPT recipe: query-key RMS normalization, per-layer
learned residual scaling, a learned skip back to the input embedding, and no
biases. Two output heads score next-position tokens (cells + EOS) and
codebook indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor, TrainingAborted
from .optim import AdamW, Muon, cosine_decay
from .ordering import Ordering, n_cells
from .tokens import TokenSequence, TokenType


@dataclass(frozen=True)
class GptConfig:
    extent: tuple[int, int, int] = (8, 8, 8)
    ordering: Ordering = Ordering.XYZ
    n_layer: int = 4
    n_head: int = 4
    d_model: int = 128
    mlp_ratio: int = 4
    feat_vocab: int = 4096
    context: int | None = None  # defaults to 2*cells + 2 (full chunk)
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.d_model % self.n_head != 0:
            raise ValueError("d_model must be divisible by n_head")
        if self.head_dim % 8 != 0:
            raise ValueError("head dim must split into 4 even rotary groups")
        if self.context is not None and self.context < 2:
            raise ValueError("context must allow at least BOS and one prediction")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_head

    @property
    def pos_vocab(self) -> int:
        return n_cells(self.extent)

    @property
    def pos_head_size(self) -> int:
        return self.pos_vocab + 1  # EOS occupies the last column

    @property
    def eos_index(self) -> int:
        return self.pos_vocab

    @property
    def context_length(self) -> int:
        return self.context if self.context is not None else 2 * self.pos_vocab + 2

    def to_dict(self) -> dict:
        return {
            "extent": list(self.extent), "ordering": int(self.ordering),
            "n_layer": self.n_layer, "n_head": self.n_head, "d_model": self.d_model,
            "mlp_ratio": self.mlp_ratio, "feat_vocab": self.feat_vocab,
            "context": self.context, "rope_base": self.rope_base,
        }

    @staticmethod
    def from_dict(d: dict) -> "GptConfig":
        return GptConfig(
            extent=tuple(d["extent"]), ordering=Ordering(d["ordering"]),
            n_layer=d["n_layer"], n_head=d["n_head"], d_model=d["d_model"],
            mlp_ratio=d["mlp_ratio"], feat_vocab=d["feat_vocab"],
            context=d["context"], rope_base=d["rope_base"],
        )


# ---------------------------------------------------------------------------
# token array encoding


def sequence_arrays(seq: TokenSequence) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(values, types, rope_coords (T,4)) for a token sequence.

    The rope coordinate is (x, y, z, type_flag) with flag 1 for feature tokens
    and 0 otherwise; specials sit at the origin.
    """
    values = np.asarray(seq.tokens, dtype=np.int64)
    types = np.asarray([int(t) for t in seq.types], dtype=np.int64)
    coords = np.zeros((len(seq), 4), dtype=np.int64)
    for i, (t, c) in enumerate(zip(seq.types, seq.coords)):
        if t in (TokenType.POS, TokenType.FEAT):
            coords[i, :3] = c
            coords[i, 3] = 1 if t == TokenType.FEAT else 0
    return values, types, coords


# ---------------------------------------------------------------------------
# rotary embedding


def rope_frequencies(cfg: GptConfig) -> tuple[np.ndarray, np.ndarray]:
    """(group_of_pair, omega_of_pair) for the head_dim/2 rotation pairs."""
    gd = cfg.head_dim // 4
    pairs_per_group = gd // 2
    group = np.repeat(np.arange(4), pairs_per_group)
    j = np.tile(np.arange(pairs_per_group), 4)
    omega = cfg.rope_base ** (-2.0 * j / gd)
    return group, omega


def rope_angles(coords4: np.ndarray, cfg: GptConfig, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables of shape (T, head_dim/2) from per-token 4D coordinates."""
    group, omega = rope_frequencies(cfg)
    theta = coords4[:, group].astype(np.float64) * omega[None, :]
    return np.cos(theta).astype(dtype), np.sin(theta).astype(dtype)


def rope_rotate(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate consecutive pairs of (H, T, head_dim) by per-token angles."""
    h, t, hd = x.shape
    pairs = ad.reshape(x, (h, t, hd // 2, 2))
    x1 = ad.reshape(ad.narrow(pairs, 3, 0, 1), (h, t, hd // 2))
    x2 = ad.reshape(ad.narrow(pairs, 3, 1, 1), (h, t, hd // 2))
    c = ad.tensor(cos[None, :, :].astype(x.dtype.type))
    s = ad.tensor(sin[None, :, :].astype(x.dtype.type))
    y1 = ad.sub(ad.mul(x1, c), ad.mul(x2, s))
    y2 = ad.add(ad.mul(x1, s), ad.mul(x2, c))
    stacked = ad.concat([ad.reshape(y1, (h, t, hd // 2, 1)), ad.reshape(y2, (h, t, hd // 2, 1))], axis=3)
    return ad.reshape(stacked, (h, t, hd))


# ---------------------------------------------------------------------------
# parameters


def init_weights(cfg: GptConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    """Embeddings N(0,1); heads N(0,1e-3); attention/MLP inputs U(+-sqrt(3/d));
    output projections zero; residual weights 1.0; input skip weights 0.1."""
    d = cfg.d_model
    p: dict[str, Tensor] = {}
    p["emb.special"] = nn.param(rng, (2, d), "normal", 1.0, dtype=dtype)
    p["emb.position"] = nn.param(rng, (cfg.pos_vocab, d), "normal", 1.0, dtype=dtype)
    p["emb.feature"] = nn.param(rng, (cfg.feat_vocab, d), "normal", 1.0, dtype=dtype)
    bound = math.sqrt(3.0 / d)
    for l in range(cfg.n_layer):
        p[f"layer{l}.wq"] = nn.param(rng, (d, d), "uniform", bound, dtype=dtype)
        p[f"layer{l}.wk"] = nn.param(rng, (d, d), "uniform", bound, dtype=dtype)
        p[f"layer{l}.wv"] = nn.param(rng, (d, d), "uniform", bound, dtype=dtype)
        p[f"layer{l}.wo"] = nn.param(rng, (d, d), "zeros", dtype=dtype)
        p[f"layer{l}.mlp.w1"] = nn.param(rng, (d, cfg.mlp_ratio * d), "uniform", bound, dtype=dtype)
        p[f"layer{l}.mlp.w2"] = nn.param(rng, (cfg.mlp_ratio * d, d), "zeros", dtype=dtype)
        p[f"layer{l}.resid_w"] = nn.param(rng, (1,), "const", 1.0, dtype=dtype)
        p[f"layer{l}.skip_w"] = nn.param(rng, (1,), "const", 0.1, dtype=dtype)
    p["head.position"] = nn.param(rng, (d, cfg.pos_head_size), "normal", 1e-3, dtype=dtype)
    p["head.feature"] = nn.param(rng, (d, cfg.feat_vocab), "normal", 1e-3, dtype=dtype)
    return p


def _embed(p: dict[str, Tensor], values: np.ndarray, types: np.ndarray, t: int) -> Tensor:
    x0: Tensor | None = None
    for table, mask in (
        ("emb.special", (types == int(TokenType.BOS)) | (types == int(TokenType.EOS))),
        ("emb.position", types == int(TokenType.POS)),
        ("emb.feature", types == int(TokenType.FEAT)),
    ):
        sel = np.nonzero(mask)[0]
        if len(sel) == 0:
            continue
        ids = values[sel].copy()
        if table == "emb.special":
            ids = (types[sel] == int(TokenType.EOS)).astype(np.int64)  # BOS->0, EOS->1
        part = ad.scatter_add_rows(ad.gather_rows(p[table], ids), sel, t, unique=True)
        x0 = part if x0 is None else ad.add(x0, part)
    assert x0 is not None
    return x0


def gpt_forward(p: dict[str, Tensor], cfg: GptConfig, values: np.ndarray, types: np.ndarray,
                coords4: np.ndarray) -> tuple[Tensor, Tensor]:
    """Full-sequence forward: (position logits (T, cells+1), feature logits (T, Vf))."""
    t = len(values)
    if t > cfg.context_length:
        raise ValueError(f"sequence length {t} exceeds context {cfg.context_length}")
    d, h, hd = cfg.d_model, cfg.n_head, cfg.head_dim
    dtype = p["emb.special"].dtype.type
    cos, sin = rope_angles(coords4, cfg, dtype=dtype)
    causal = np.triu(np.full((t, t), -np.inf, dtype=dtype), k=1)[None, :, :]
    mask = ad.tensor(causal)
    x0 = _embed(p, values, types, t)
    x = x0
    scale = 1.0 / math.sqrt(hd)
    for l in range(cfg.n_layer):
        x = ad.add(ad.mul(x, p[f"layer{l}.resid_w"]), ad.mul(x0, p[f"layer{l}.skip_w"]))
        hin = ad.rms_norm(x)
        q = ad.transpose(ad.reshape(ad.matmul(hin, p[f"layer{l}.wq"]), (t, h, hd)), (1, 0, 2))
        k = ad.transpose(ad.reshape(ad.matmul(hin, p[f"layer{l}.wk"]), (t, h, hd)), (1, 0, 2))
        v = ad.transpose(ad.reshape(ad.matmul(hin, p[f"layer{l}.wv"]), (t, h, hd)), (1, 0, 2))
        q = rope_rotate(ad.rms_norm(q), cos, sin)
        k = rope_rotate(ad.rms_norm(k), cos, sin)
        att = ad.add(ad.mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))), scale), mask)
        probs = ad.softmax(att, axis=-1)
        o = ad.reshape(ad.transpose(ad.matmul(probs, v), (1, 0, 2)), (t, d))
        x = ad.add(x, ad.matmul(o, p[f"layer{l}.wo"]))
        hin2 = ad.rms_norm(x)
        x = ad.add(x, ad.matmul(ad.gelu(ad.matmul(hin2, p[f"layer{l}.mlp.w1"])), p[f"layer{l}.mlp.w2"]))
    x = ad.rms_norm(x)
    return ad.matmul(x, p["head.position"]), ad.matmul(x, p["head.feature"])


# ---------------------------------------------------------------------------
# training objective


def step_targets(cfg: GptConfig, values: np.ndarray, types: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(targets, is_position_step) for the T-1 next-token predictions.

    Targets live in the concatenated vocabulary [position cells, EOS, features].
    """
    nv = len(values)
    targets = np.zeros(nv - 1, dtype=np.int64)
    is_pos = np.zeros(nv - 1, dtype=bool)
    for i in range(nv - 1):
        nxt_t, nxt_v = types[i + 1], values[i + 1]
        if nxt_t == int(TokenType.POS):
            targets[i] = nxt_v
            is_pos[i] = True
        elif nxt_t == int(TokenType.EOS):
            targets[i] = cfg.eos_index
            is_pos[i] = True
        elif nxt_t == int(TokenType.FEAT):
            targets[i] = cfg.pos_head_size + nxt_v
        else:
            raise ValueError("BOS cannot be a prediction target")
    return targets, is_pos


def masked_ce(cfg: GptConfig, pos_logits: Tensor, feat_logits: Tensor, values: np.ndarray,
              types: np.ndarray, reduction: str = "mean") -> Tensor:
    """Cross-entropy over the step-legal vocabulary only; the illegal head gets
    an additive -inf mask so its softmax mass is exactly zero."""
    t = len(values)
    if t < 2:
        raise ValueError("need at least one prediction step")
    targets, is_pos = step_targets(cfg, values, types)
    full = ad.concat([ad.narrow(pos_logits, 0, 0, t - 1), ad.narrow(feat_logits, 0, 0, t - 1)], axis=1)
    mask = np.zeros((t - 1, cfg.pos_head_size + cfg.feat_vocab), dtype=full.data.dtype)
    mask[is_pos, cfg.pos_head_size:] = -np.inf
    mask[~is_pos, : cfg.pos_head_size] = -np.inf
    legal = (targets >= cfg.pos_head_size) != is_pos
    if not legal.all():
        raise ValueError("target lies in the illegal vocabulary for its step")
    return ad.cross_entropy(ad.add(full, ad.tensor(mask)), targets, reduction=reduction)


def sequence_ce(p: dict[str, Tensor], cfg: GptConfig, seq: TokenSequence,
                reduction: str = "mean") -> Tensor:
    values, types, coords4 = sequence_arrays(seq)
    pos_logits, feat_logits = gpt_forward(p, cfg, values[:-1], types[:-1], coords4[:-1])
    return masked_ce(cfg, pos_logits, feat_logits, values, types, reduction=reduction)


def uniform_baseline_ce(cfg: GptConfig, sequences: list[TokenSequence]) -> float:
    """Token-type-weighted mean of ln(position vocab) and ln(feature vocab)."""
    pos_steps = 0
    feat_steps = 0
    for seq in sequences:
        for ty in seq.types[1:]:
            if ty in (TokenType.POS, TokenType.EOS):
                pos_steps += 1
            elif ty == TokenType.FEAT:
                feat_steps += 1
    total = max(pos_steps + feat_steps, 1)
    return (pos_steps * math.log(cfg.pos_head_size) + feat_steps * math.log(cfg.feat_vocab)) / total


# ---------------------------------------------------------------------------
# per-module optimizer stack


@dataclass
class GptTrainConfig:
    epochs: int = 10
    batch_size: int = 4
    val_fraction: float = 0.1
    lr_heads: float = 0.004
    lr_embeddings: float = 0.2
    lr_resid: float = 0.005
    lr_skip: float = 0.5
    lr_muon: float = 0.02
    muon_weight_decay: float = 0.025
    lr_final_fraction: float = 0.1
    lr_reference_dim: int = 768  # head/embedding lrs are exact at this width
    log_every: int = 10


def _lr_dim_scale(cfg: GptConfig, tc: GptTrainConfig) -> float:
    return math.sqrt(tc.lr_reference_dim / cfg.d_model)


def build_optimizers(p: dict[str, Tensor], cfg: GptConfig, tc: GptTrainConfig,
                     total_steps: int) -> list[AdamW | Muon]:
    dim_scale = _lr_dim_scale(cfg, tc)
    heads = [p["head.position"], p["head.feature"]]
    embeds = [p["emb.special"], p["emb.position"], p["emb.feature"]]
    resid = [v for k, v in p.items() if k.endswith("resid_w")]
    skip = [v for k, v in p.items() if k.endswith("skip_w")]
    assigned = set(map(id, heads + embeds + resid + skip))
    matrices = [v for v in p.values() if id(v) not in assigned]
    return [
        AdamW(heads, lr=tc.lr_heads * dim_scale, betas=(0.8, 0.95), eps=1e-10),
        AdamW(embeds, lr=tc.lr_embeddings * dim_scale, betas=(0.8, 0.95), eps=1e-10),
        AdamW(resid, lr=tc.lr_resid, betas=(0.8, 0.95), eps=1e-10),
        AdamW(skip, lr=tc.lr_skip, betas=(0.96, 0.95), eps=1e-10),
        Muon(matrices, lr=tc.lr_muon, beta2=0.95, ns_iters=5,
             weight_decay=tc.muon_weight_decay, total_steps=total_steps),
    ]


@dataclass
class GptCheckpoint:
    cfg: GptConfig
    params: dict[str, Tensor]
    log: list[dict] = field(default_factory=list)
    train_indices: list[int] = field(default_factory=list)
    val_indices: list[int] = field(default_factory=list)


def train_gpt(sequences: list[TokenSequence], cfg: GptConfig, tc: GptTrainConfig,
              rng: np.random.Generator, params: dict[str, Tensor] | None = None,
              on_epoch=None) -> GptCheckpoint:
    """Teacher-forced training with the AdamW/Muon per-module stack."""
    if not sequences:
        raise ValueError("empty dataset")
    for seq in sequences:
        if len(seq) > cfg.context_length + 1:
            raise ValueError("sequence exceeds context window")
    params = params if params is not None else init_weights(cfg, rng)
    order = rng.permutation(len(sequences))
    n_val = int(len(sequences) * tc.val_fraction)
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    if len(train_idx) == 0:
        train_idx = order
    steps_per_epoch = max(1, math.ceil(len(train_idx) / tc.batch_size))
    total_steps = steps_per_epoch * tc.epochs
    opts = build_optimizers(params, cfg, tc, total_steps)
    log: list[dict] = []
    step = 0
    for epoch in range(tc.epochs):
        perm = rng.permutation(len(train_idx))
        for b in range(steps_per_epoch):
            batch = [sequences[train_idx[i]] for i in perm[b * tc.batch_size:(b + 1) * tc.batch_size]]
            if not batch:
                continue
            nn.zero_grads(params)
            total_tokens = sum(len(s) - 1 for s in batch)
            ce_value = 0.0
            for seq in batch:
                ce = sequence_ce(params, cfg, seq, reduction="sum")
                ce_value += float(ce.data)
                ad.backward(ad.mul(ce, 1.0 / total_tokens))
            if not np.isfinite(ce_value):
                raise TrainingAborted(f"non-finite loss at step {step}")
            lr_scale = cosine_decay(step, total_steps, tc.lr_final_fraction)
            for opt in opts:
                opt.step(lr_scale=lr_scale)
            if step % tc.log_every == 0:
                log.append({"step": step, "epoch": epoch, "split": "train",
                            "ce": ce_value / total_tokens, "lr_scale": lr_scale})
            step += 1
        val_ce = evaluate_ce(params, cfg, [sequences[i] for i in val_idx]) if len(val_idx) else float("nan")
        log.append({"step": step, "epoch": epoch, "split": "val", "ce": val_ce})
        if on_epoch is not None and on_epoch(epoch, val_ce):
            break
    return GptCheckpoint(cfg=cfg, params=params, log=log,
                         train_indices=[int(i) for i in train_idx],
                         val_indices=[int(i) for i in val_idx])


def evaluate_ce(p: dict[str, Tensor], cfg: GptConfig, sequences: list[TokenSequence]) -> float:
    """Token-weighted mean cross-entropy (no gradients needed)."""
    total = 0.0
    tokens = 0
    for seq in sequences:
        ce = sequence_ce(p, cfg, seq, reduction="sum")
        total += float(ce.data)
        tokens += len(seq) - 1
    return total / max(tokens, 1)


# ---------------------------------------------------------------------------
# incremental inference with a KV cache


class InferenceSession:
    """Single-sequence incremental forward pass over cached keys/values."""

    def __init__(self, params: dict[str, Tensor], cfg: GptConfig):
        self.cfg = cfg
        self.w = {k: v.data.astype(np.float32) for k, v in params.items()}
        l, h, ctx, hd = cfg.n_layer, cfg.n_head, cfg.context_length, cfg.head_dim
        self.k_cache = np.zeros((l, h, ctx, hd), dtype=np.float32)
        self.v_cache = np.zeros((l, h, ctx, hd), dtype=np.float32)
        self.length = 0
        self._group, self._omega = rope_frequencies(cfg)
        self._scale = 1.0 / math.sqrt(hd)

    @staticmethod
    def _rms(x: np.ndarray) -> np.ndarray:
        return x / np.sqrt((x * x).mean(axis=-1, keepdims=True) + 1e-6)

    def _rope_row(self, x: np.ndarray, coord4: np.ndarray) -> np.ndarray:
        theta = coord4[self._group].astype(np.float64) * self._omega
        c = np.cos(theta).astype(np.float32)
        s = np.sin(theta).astype(np.float32)
        pairs = x.reshape(x.shape[0], -1, 2)
        x1, x2 = pairs[..., 0], pairs[..., 1]
        out = np.empty_like(pairs)
        out[..., 0] = x1 * c - x2 * s
        out[..., 1] = x1 * s + x2 * c
        return out.reshape(x.shape)

    def append(self, value: int, ttype: TokenType, coord: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
        """Feed one token; returns (position logits, feature logits) for it."""
        cfg, w = self.cfg, self.w
        if self.length >= cfg.context_length:
            raise ValueError("context window exhausted")
        t = self.length
        if ttype == TokenType.BOS:
            x0 = w["emb.special"][0]
            coord4 = np.zeros(4, dtype=np.int64)
        elif ttype == TokenType.EOS:
            x0 = w["emb.special"][1]
            coord4 = np.zeros(4, dtype=np.int64)
        elif ttype == TokenType.POS:
            x0 = w["emb.position"][value]
            coord4 = np.array([*coord, 0], dtype=np.int64)
        else:
            x0 = w["emb.feature"][value]
            coord4 = np.array([*coord, 1], dtype=np.int64)
        x = x0.copy()
        h, hd = cfg.n_head, cfg.head_dim
        for l in range(cfg.n_layer):
            x = w[f"layer{l}.resid_w"][0] * x + w[f"layer{l}.skip_w"][0] * x0
            hin = self._rms(x)
            q = (hin @ w[f"layer{l}.wq"]).reshape(h, hd)
            k = (hin @ w[f"layer{l}.wk"]).reshape(h, hd)
            v = (hin @ w[f"layer{l}.wv"]).reshape(h, hd)
            q = self._rope_row(self._rms(q), coord4)
            k = self._rope_row(self._rms(k), coord4)
            self.k_cache[l, :, t, :] = k
            self.v_cache[l, :, t, :] = v
            keys = self.k_cache[l, :, : t + 1, :]
            vals = self.v_cache[l, :, : t + 1, :]
            att = np.einsum("hd,htd->ht", q, keys) * self._scale
            att -= att.max(axis=1, keepdims=True)
            probs = np.exp(att)
            probs /= probs.sum(axis=1, keepdims=True)
            o = np.einsum("ht,htd->hd", probs, vals).reshape(-1)
            x = x + o @ w[f"layer{l}.wo"]
            hin2 = self._rms(x)
            x = x + gelu_np(hin2 @ w[f"layer{l}.mlp.w1"]) @ w[f"layer{l}.mlp.w2"]
        x = self._rms(x)
        self.length = t + 1
        return x @ w["head.position"], x @ w["head.feature"]

    def truncate(self, length: int) -> None:
        """Roll the cache back to a shorter prefix (resampling support)."""
        if length < 0 or length > self.length:
            raise ValueError("invalid truncation length")
        self.length = length


def gelu_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))
