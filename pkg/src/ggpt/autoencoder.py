"""Quantized sparse-convolutional autoencoder over voxel attribute grids.

Per-attribute encoder heads lift Gaussian attributes into a 224-dim feature
per occupied voxel; a sparse 3D CNN downsamples to a compact latent grid that
is binarized sign-wise into codebook indices (lookup-free quantization); the
decoder predicts child occupancy at each upsampling stage and reconstructs
per-voxel attributes through separate decoding heads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import sparse
from .autodiff import Tensor, TrainingAborted
from .nn import linear, param, residual_mlp, zero_grads
from .optim import AdamW, cosine_decay
from .tokens import LatentChunk
from .voxels import RECORD_DIM, SparseFeatureGrid, VoxelRecord, sample_dict_chunk

ATTR_SPECS = (("scale", 3), ("opacity", 1), ("rotation", 4), ("color", 3), ("offset", 3))
HEAD_EXPANSION = 16
FEATURE_DIM = HEAD_EXPANSION * RECORD_DIM  # 224
DECODER_HEAD_WIDTH = 64

# bias of the softplus-parameterized normalized scale so that fresh heads emit
# a scale of about one voxel: softplus(x) = 1  =>  x = ln(e - 1)
_SOFTPLUS_UNIT_BIAS = math.log(math.e - 1.0)


@dataclass(frozen=True)
class AutoencoderConfig:
    voxel_size: float = 0.025
    stages: int = 2
    chunk_extent: tuple[int, int, int] = (32, 32, 32)
    widths: tuple[int, ...] = (32, 48, 64)
    latent_dim: int = 12
    lambda_attr: float = 1.0
    lambda_occ: float = 1.0
    lambda_lfq: float = 0.1
    occupancy_threshold: float = 0.2
    chunk_tries: int = 10
    lr: float = 1e-4
    lr_final_fraction: float = 0.1

    def __post_init__(self):
        if len(self.widths) != self.stages + 1:
            raise ValueError("widths must have stages+1 entries")
        for e in self.chunk_extent:
            if e % (1 << self.stages) != 0:
                raise ValueError("chunk extent must be divisible by 2**stages")

    @property
    def codebook_size(self) -> int:
        return 1 << self.latent_dim

    @property
    def latent_extent(self) -> tuple[int, int, int]:
        f = 1 << self.stages
        return tuple(e // f for e in self.chunk_extent)

    @property
    def latent_voxel_size(self) -> float:
        return self.voxel_size * (1 << self.stages)

    def attribute_scales(self) -> dict[str, float]:
        """Multipliers bringing each attribute to comparable unit magnitude."""
        return {
            "scale": 1.0 / self.voxel_size,
            "opacity": 0.1,
            "rotation": 1.0,
            "color": 1.0,
            "offset": 2.0 / self.voxel_size,
        }


@dataclass
class LfqOutput:
    """Sign-quantized latents: hard indices plus the differentiable pieces."""

    indices: np.ndarray  # (N,) codebook indices
    bits: np.ndarray  # (N, D) in {0,1}
    codes: Tensor  # (N, D) in {-1,+1}, straight-through gradient
    entropy_loss: Tensor  # scalar: E[sum_d H(p_d)] - sum_d H(E[p_d])
    per_sample_entropy: Tensor
    batch_entropy: Tensor


def lfq_quantize(z: Tensor) -> LfqOutput:
    """Binarize by sign; bit d of the index is 1 iff z_d > 0 (d=0 least significant)."""
    n, d = z.shape
    bits = (z.data > 0).astype(np.int64)
    weights = (1 << np.arange(d, dtype=np.int64))
    indices = (bits * weights).sum(axis=1)
    codes = ad.sign_ste(z)
    if n == 0:
        zero = ad.tensor(0.0, dtype=z.dtype)
        return LfqOutput(indices, bits, codes, zero, zero, zero)
    p = ad.sigmoid(z)
    # Bernoulli entropy in nats, stable form: H(sigmoid(z)) = softplus(z) - z*sigmoid(z)
    per_elem = ad.sub(ad.softplus(z), ad.mul(z, p))
    per_sample = ad.mean(ad.sum_(per_elem, axis=1))
    p_mean = ad.clamp(ad.mean(p, axis=0), 1e-7, 1.0 - 1e-7)
    batch = ad.sum_(
        ad.neg(ad.add(ad.mul(p_mean, ad.log(p_mean)),
                      ad.mul(1.0 - p_mean, ad.log(1.0 - p_mean))))
    )
    entropy = ad.sub(per_sample, batch)
    return LfqOutput(indices, bits, codes, entropy, per_sample, batch)


def lfq_dequantize(indices: np.ndarray, latent_dim: int = 12) -> np.ndarray:
    """Codebook indices -> {-1,+1} code vectors; exact inverse of the index map."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= (1 << latent_dim)):
        raise ValueError("codebook index out of range")
    bits = (indices[:, None] >> np.arange(latent_dim)) & 1
    return (2.0 * bits - 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# parameters


def init_autoencoder(cfg: AutoencoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}

    def uniform(shape, fan_in):
        return param(rng, shape, "uniform", math.sqrt(3.0 / fan_in), dtype=dtype)

    for name, k in ATTR_SPECS:
        w = HEAD_EXPANSION * k
        p[f"enc.head.{name}.w0"] = uniform((k, w), k)
        p[f"enc.head.{name}.b0"] = param(rng, (w,), "zeros", dtype=dtype)
        p[f"enc.head.{name}.w1"] = uniform((w, w), w)
        p[f"enc.head.{name}.b1"] = param(rng, (w,), "zeros", dtype=dtype)
        p[f"enc.head.{name}.w2"] = uniform((w, w), w)
        p[f"enc.head.{name}.b2"] = param(rng, (w,), "zeros", dtype=dtype)

    widths = cfg.widths
    p["enc.proj.w"] = uniform((FEATURE_DIM, widths[0]), FEATURE_DIM)
    p["enc.proj.b"] = param(rng, (widths[0],), "zeros", dtype=dtype)
    for s in range(cfg.stages):
        w_in, w_out = widths[s], widths[s + 1]
        for j in (1, 2):
            p[f"enc.res{s}.w{j}"] = uniform((27, w_in, w_in), 27 * w_in)
            p[f"enc.res{s}.b{j}"] = param(rng, (w_in,), "zeros", dtype=dtype)
        p[f"enc.down{s}.w"] = uniform((27, w_in, w_out), 27 * w_in)
        p[f"enc.down{s}.b"] = param(rng, (w_out,), "zeros", dtype=dtype)
    p["enc.latent.w"] = uniform((widths[-1], cfg.latent_dim), widths[-1])
    p["enc.latent.b"] = param(rng, (cfg.latent_dim,), "zeros", dtype=dtype)

    p["dec.proj.w"] = uniform((cfg.latent_dim, widths[-1]), cfg.latent_dim)
    p["dec.proj.b"] = param(rng, (widths[-1],), "zeros", dtype=dtype)
    for s in reversed(range(cfg.stages)):
        w_parent, w_child = widths[s + 1], widths[s]
        p[f"dec.occ{s}.w"] = uniform((w_parent, 8), w_parent)
        p[f"dec.occ{s}.b"] = param(rng, (8,), "zeros", dtype=dtype)
        p[f"dec.up{s}.w"] = uniform((8, w_parent, w_child), w_parent)
        p[f"dec.up{s}.b"] = param(rng, (w_child,), "zeros", dtype=dtype)
        for j in (1, 2):
            p[f"dec.res{s}.w{j}"] = uniform((27, w_child, w_child), 27 * w_child)
            p[f"dec.res{s}.b{j}"] = param(rng, (w_child,), "zeros", dtype=dtype)
    p["dec.out.w"] = uniform((widths[0], FEATURE_DIM), widths[0])
    p["dec.out.b"] = param(rng, (FEATURE_DIM,), "zeros", dtype=dtype)

    head_bias = {
        "scale": np.full(3, _SOFTPLUS_UNIT_BIAS),
        "opacity": np.full(1, 0.4),  # opacity logit +4 in normalized units
        "rotation": np.array([1.0, 0.0, 0.0, 0.0]),
        "color": np.full(3, 0.5),
        "offset": np.zeros(3),
    }
    hw = DECODER_HEAD_WIDTH
    for name, k in ATTR_SPECS:
        p[f"dec.head.{name}.w0"] = uniform((FEATURE_DIM, hw), FEATURE_DIM)
        p[f"dec.head.{name}.b0"] = param(rng, (hw,), "zeros", dtype=dtype)
        for j in (1, 2):
            p[f"dec.head.{name}.r{j}.w1"] = uniform((hw, hw), hw)
            p[f"dec.head.{name}.r{j}.b1"] = param(rng, (hw,), "zeros", dtype=dtype)
            p[f"dec.head.{name}.r{j}.w2"] = uniform((hw, hw), hw)
            p[f"dec.head.{name}.r{j}.b2"] = param(rng, (hw,), "zeros", dtype=dtype)
        # final projections start at zero weights with visibility-preserving biases
        p[f"dec.head.{name}.wf"] = param(rng, (hw, k), "zeros", dtype=dtype)
        p[f"dec.head.{name}.bf"] = ad.tensor(head_bias[name].astype(dtype), requires_grad=True, dtype=dtype)
    return p


# ---------------------------------------------------------------------------
# chunk preparation and kernel-map plans


@dataclass
class ChunkPlan:
    """Coordinate pyramid plus the kernel maps reused across training steps."""

    coords: np.ndarray  # (N,3) sorted, level 0
    attrs_norm: np.ndarray  # (N, 14) attributes in normalized units
    pyramid: list[np.ndarray] = field(default_factory=list)  # coords per level, 0..stages
    same_maps: list[sparse.KernelMap] = field(default_factory=list)
    down_maps: list[sparse.KernelMap] = field(default_factory=list)
    up_maps: list[sparse.KernelMap] = field(default_factory=list)  # indexed by stage s
    dec_same_maps: list[sparse.KernelMap] = field(default_factory=list)
    occ_bits: list[np.ndarray] = field(default_factory=list)  # (P,8) per stage s


def normalize_attributes(attrs_canonical: np.ndarray, cfg: AutoencoderConfig) -> np.ndarray:
    scales = cfg.attribute_scales()
    mul = np.concatenate([np.full(k, scales[name]) for name, k in ATTR_SPECS])
    return attrs_canonical * mul


def build_chunk_plan(chunk: SparseFeatureGrid, cfg: AutoencoderConfig) -> ChunkPlan:
    coords, attrs = chunk.records_matrix()
    coords = sparse.sort_coords(coords)
    plan = ChunkPlan(coords=coords, attrs_norm=normalize_attributes(attrs, cfg).astype(np.float32))
    level = coords
    plan.pyramid.append(level)
    for s in range(cfg.stages):
        plan.same_maps.append(sparse.build_same_map(level))
        down = sparse.build_down_map(level)
        plan.down_maps.append(down)
        level = down.out_coords
        plan.pyramid.append(level)
    for s in reversed(range(cfg.stages)):
        parents = plan.pyramid[s + 1]
        children = plan.pyramid[s]
        plan.up_maps.insert(0, sparse.build_up_map(parents, children))
        plan.dec_same_maps.insert(0, sparse.build_same_map(children))
        plan.occ_bits.insert(0, sparse.child_occupancy_bits(parents, children))
    return plan


def _res_conv(h: Tensor, p: dict, prefix: str, kmap: sparse.KernelMap) -> Tensor:
    inner = ad.gelu(sparse.apply_conv(ad.rms_norm(h), p[f"{prefix}.w1"], p[f"{prefix}.b1"], kmap))
    return ad.add(h, sparse.apply_conv(inner, p[f"{prefix}.w2"], p[f"{prefix}.b2"], kmap))


def encode_heads(p: dict[str, Tensor], attrs_norm: np.ndarray | Tensor) -> Tensor:
    """Per-attribute lift to 16x width plus one residual block, concatenated."""
    x = attrs_norm if isinstance(attrs_norm, Tensor) else ad.tensor(attrs_norm)
    outs = []
    offset = 0
    for name, k in ATTR_SPECS:
        piece = ad.narrow(x, 1, offset, k)
        offset += k
        h = linear(piece, p[f"enc.head.{name}.w0"], p[f"enc.head.{name}.b0"])
        h = residual_mlp(h, p[f"enc.head.{name}.w1"], p[f"enc.head.{name}.b1"],
                         p[f"enc.head.{name}.w2"], p[f"enc.head.{name}.b2"])
        outs.append(h)
    return ad.concat(outs, axis=1)


def encoder_forward(p: dict[str, Tensor], plan: ChunkPlan, cfg: AutoencoderConfig) -> Tensor:
    """Continuous latent (M, latent_dim) on the coarsest pyramid level."""
    h = encode_heads(p, plan.attrs_norm)
    h = linear(h, p["enc.proj.w"], p["enc.proj.b"])
    for s in range(cfg.stages):
        h = _res_conv(h, p, f"enc.res{s}", plan.same_maps[s])
        h = ad.gelu(sparse.apply_conv(ad.rms_norm(h), p[f"enc.down{s}.w"], p[f"enc.down{s}.b"],
                                      plan.down_maps[s]))
    return linear(ad.rms_norm(h), p["enc.latent.w"], p["enc.latent.b"])


def decoder_forward_teacher(p: dict[str, Tensor], codes: Tensor, plan: ChunkPlan,
                            cfg: AutoencoderConfig) -> tuple[Tensor, list[Tensor]]:
    """Teacher-forced decode: ground-truth occupancy gates every upsampling."""
    h = linear(codes, p["dec.proj.w"], p["dec.proj.b"])
    occ_logits: list[Tensor] = []
    for s in reversed(range(cfg.stages)):
        occ_logits.append(linear(h, p[f"dec.occ{s}.w"], p[f"dec.occ{s}.b"]))
        h = ad.gelu(sparse.apply_conv(ad.rms_norm(h), p[f"dec.up{s}.w"], p[f"dec.up{s}.b"], plan.up_maps[s]))
        h = _res_conv(h, p, f"dec.res{s}", plan.dec_same_maps[s])
    feats = linear(h, p["dec.out.w"], p["dec.out.b"])
    return feats, occ_logits


def decoder_forward_inference(p: dict[str, Tensor], codes: np.ndarray, latent_coords: np.ndarray,
                              cfg: AutoencoderConfig) -> tuple[Tensor, np.ndarray]:
    """Occupancy-pruned decode: children with sigmoid(logit) >= 0.5 survive."""
    h = linear(ad.tensor(codes.astype(np.float32)), p["dec.proj.w"], p["dec.proj.b"])
    coords = sparse.sort_coords(latent_coords)
    for s in reversed(range(cfg.stages)):
        occ = linear(h, p[f"dec.occ{s}.w"], p[f"dec.occ{s}.b"])
        keep = occ.data >= 0.0
        children = sparse.expand_children(coords, keep)
        up = sparse.build_up_map(coords, children)
        h = ad.gelu(sparse.apply_conv(ad.rms_norm(h), p[f"dec.up{s}.w"], p[f"dec.up{s}.b"], up))
        if len(children):
            h = _res_conv(h, p, f"dec.res{s}", sparse.build_same_map(children))
        coords = children
        if len(coords) == 0:
            break
    if len(coords) == 0:
        return ad.zeros((0, FEATURE_DIM)), coords
    feats = linear(h, p["dec.out.w"], p["dec.out.b"])
    return feats, coords


def decode_heads(p: dict[str, Tensor], feats: Tensor) -> dict[str, Tensor]:
    """Per-attribute predictions in normalized units with range activations."""
    out: dict[str, Tensor] = {}
    for name, _k in ATTR_SPECS:
        h = linear(feats, p[f"dec.head.{name}.w0"], p[f"dec.head.{name}.b0"])
        for j in (1, 2):
            h = residual_mlp(h, p[f"dec.head.{name}.r{j}.w1"], p[f"dec.head.{name}.r{j}.b1"],
                             p[f"dec.head.{name}.r{j}.w2"], p[f"dec.head.{name}.r{j}.b2"])
        raw = linear(h, p[f"dec.head.{name}.wf"], p[f"dec.head.{name}.bf"])
        if name == "scale":
            out[name] = ad.softplus(raw)
        elif name == "opacity":
            out[name] = ad.clamp(raw, -1.0, 1.0)
        elif name == "rotation":
            norm = ad.sqrt(ad.sum_(ad.mul(raw, raw), axis=1, keepdims=True) + 1e-12)
            out[name] = ad.div(raw, norm)
        elif name == "color":
            out[name] = ad.clamp(raw, 0.0, 1.0)
        else:
            out[name] = raw
    return out


def predictions_to_records(preds: dict[str, Tensor], cfg: AutoencoderConfig) -> list[VoxelRecord]:
    """Normalized predictions -> canonical VoxelRecords (with quat sign fix)."""
    scales = cfg.attribute_scales()
    n = preds["scale"].shape[0]
    records = []
    for i in range(n):
        q = preds["rotation"].data[i]
        if q[0] < 0:
            q = -q
        records.append(VoxelRecord(
            scale=tuple(preds["scale"].data[i] / scales["scale"]),
            opacity_logit=float(preds["opacity"].data[i][0] / scales["opacity"]),
            rotation=tuple(q / max(float(np.linalg.norm(q)), 1e-12)),
            color=tuple(preds["color"].data[i]),
            offset=tuple(preds["offset"].data[i] / scales["offset"]),
        ))
    return records


# ---------------------------------------------------------------------------
# losses


def _bce_mean(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Stable binary cross-entropy: mean(softplus(l) - l*y)."""
    y = ad.tensor(targets.astype(logits.data.dtype))
    return ad.mean(ad.sub(ad.softplus(logits), ad.mul(logits, y)))


def ae_loss(preds: dict[str, Tensor], attrs_norm: np.ndarray, occ_logits: list[Tensor],
            occ_targets: list[np.ndarray], lfq_entropy: Tensor,
            cfg: AutoencoderConfig) -> tuple[Tensor, dict[str, float]]:
    """Total = attr L1 + occupancy BCE + softplus-wrapped codebook entropy."""
    offset = 0
    attr_terms = []
    components: dict[str, float] = {}
    for name, k in ATTR_SPECS:
        gt = ad.tensor(attrs_norm[:, offset:offset + k].astype(np.float32))
        offset += k
        term = ad.mean(ad.absolute(ad.sub(preds[name], gt)))
        components[f"l1_{name}"] = float(term.data)
        attr_terms.append(term)
    attr_total = attr_terms[0]
    for t in attr_terms[1:]:
        attr_total = ad.add(attr_total, t)
    attr_total = ad.mul(attr_total, 1.0 / len(attr_terms))

    if occ_logits:
        flat_logits = ad.concat([ad.reshape(o, (-1, 1)) for o in occ_logits], axis=0)
        flat_targets = np.concatenate([t.reshape(-1, 1) for t in occ_targets], axis=0)
        occ = _bce_mean(flat_logits, flat_targets)
    else:
        occ = ad.tensor(0.0)
    lfq_wrapped = ad.softplus(lfq_entropy + 5.0)
    total = ad.add(ad.add(ad.mul(attr_total, cfg.lambda_attr), ad.mul(occ, cfg.lambda_occ)),
                   ad.mul(lfq_wrapped, cfg.lambda_lfq))
    components.update(
        attr=float(attr_total.data), occ=float(occ.data),
        lfq_entropy=float(lfq_entropy.data), lfq=float(lfq_wrapped.data),
        total=float(total.data),
    )
    return total, components


def autoencoder_step_loss(p: dict[str, Tensor], plan: ChunkPlan, cfg: AutoencoderConfig,
                          quantize: bool = True) -> tuple[Tensor, dict[str, float], np.ndarray]:
    """Teacher-forced forward pass and loss on one chunk.

    With ``quantize=False`` the decoder consumes the continuous latent, which
    makes the whole objective smooth (used by gradient verification).
    """
    z = encoder_forward(p, plan, cfg)
    lfq = lfq_quantize(z)
    entropy, indices = lfq.entropy_loss, lfq.indices
    codes = lfq.codes if quantize else z  # entropy is smooth in z either way
    feats, occ_logits = decoder_forward_teacher(p, codes, plan, cfg)
    preds = decode_heads(p, feats)
    # occ_logits come coarsest-first; occ_bits is indexed by stage (finest first)
    occ_targets = [plan.occ_bits[s] for s in reversed(range(cfg.stages))]
    total, components = ae_loss(preds, plan.attrs_norm, occ_logits, occ_targets, entropy, cfg)
    return total, components, indices


@dataclass
class AutoencoderCheckpoint:
    cfg: AutoencoderConfig
    params: dict[str, Tensor]
    log: list[dict] = field(default_factory=list)
    opt_state: dict[str, np.ndarray] = field(default_factory=dict)
    opt_step: int = 0


def train_autoencoder(grids: list[SparseFeatureGrid], cfg: AutoencoderConfig, rng: np.random.Generator,
                      steps: int, params: dict[str, Tensor] | None = None,
                      log_every: int = 50, on_step=None) -> AutoencoderCheckpoint:
    """Adam at lr 1e-4 with cosine decay to 10%, chunks resampled per step."""
    if not grids:
        raise ValueError("empty dataset")
    params = params if params is not None else init_autoencoder(cfg, rng)
    names = sorted(params)
    opt = AdamW(params=[params[n] for n in names], lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    plans: dict[tuple, ChunkPlan] = {}
    log: list[dict] = []
    for step in range(steps):
        gi = int(rng.integers(len(grids)))
        entries, chunk_origin = sample_dict_chunk(grids[gi].entries, cfg.chunk_extent,
                                                  cfg.occupancy_threshold, cfg.chunk_tries, rng)
        key = (gi, chunk_origin)
        if key not in plans:
            chunk = SparseFeatureGrid(voxel_size=cfg.voxel_size, entries=entries)
            plans[key] = build_chunk_plan(chunk, cfg)
        plan = plans[key]
        zero_grads(params)
        total, components, indices = autoencoder_step_loss(params, plan, cfg)
        if not np.isfinite(total.data):
            raise TrainingAborted(f"non-finite autoencoder loss at step {step}")
        ad.backward(total)
        opt.step(lr_scale=cosine_decay(step, steps, cfg.lr_final_fraction))
        if step % log_every == 0 or step == steps - 1:
            entry = {"step": step, **components}
            log.append(entry)
        if on_step is not None and on_step(step, components, indices):
            break
    return AutoencoderCheckpoint(cfg=cfg, params=params, log=log,
                                 opt_state=opt.state_arrays(), opt_step=opt._t)


# ---------------------------------------------------------------------------
# scene-level encode / decode helpers


def encode_grid(params: dict[str, Tensor], cfg: AutoencoderConfig,
                chunk: SparseFeatureGrid) -> tuple[np.ndarray, np.ndarray]:
    """(latent_coords (M,3), codebook indices (M,)) for a rebased chunk."""
    plan = build_chunk_plan(chunk, cfg)
    z = encoder_forward(params, plan, cfg)
    lfq = lfq_quantize(z)
    return plan.pyramid[-1], lfq.indices


def encode_chunk_to_latent(params: dict[str, Tensor], cfg: AutoencoderConfig,
                           chunk: SparseFeatureGrid) -> LatentChunk:
    coords, indices = encode_grid(params, cfg, chunk)
    out = LatentChunk(extent=cfg.latent_extent, codebook_size=cfg.codebook_size)
    for c, idx in zip(coords, indices):
        out.set(tuple(int(v) for v in c), int(idx))
    return out


def encode_scene_to_latent_grid(params: dict[str, Tensor], cfg: AutoencoderConfig,
                                grid: SparseFeatureGrid) -> LatentChunk:
    """Encode a whole (non-negative-coordinate) scene grid into a latent grid
    whose extent is the scene span padded to the downsampling factor."""
    coords = grid.coords_array()
    if len(coords) == 0:
        return LatentChunk(extent=cfg.latent_extent, codebook_size=cfg.codebook_size)
    if coords.min() < 0:
        raise ValueError("scene grid must be rebased to non-negative coordinates")
    f = 1 << cfg.stages
    span = coords.max(axis=0) + 1
    extent = tuple(int(-(-int(s) // f)) for s in span)  # ceil division, in latent cells
    latent_coords, indices = encode_grid(params, cfg, grid)
    out = LatentChunk(extent=extent, codebook_size=cfg.codebook_size)
    for c, idx in zip(latent_coords, indices):
        out.set(tuple(int(v) for v in c), int(idx))
    return out


def sample_latent_chunk(latent: LatentChunk, extent: tuple[int, int, int], threshold: float,
                        max_tries: int, rng: np.random.Generator) -> LatentChunk:
    """Occupancy-thresholded chunk sampling over a latent grid (GPT corpus)."""
    entries, _origin = sample_dict_chunk(latent.entries, extent, threshold, max_tries, rng)
    out = LatentChunk(extent=tuple(extent), codebook_size=latent.codebook_size)
    for c, v in entries.items():
        out.set(c, v)
    return out


def decode_latent_chunk(params: dict[str, Tensor], cfg: AutoencoderConfig,
                        chunk: LatentChunk) -> SparseFeatureGrid:
    """Latent codes -> occupancy-pruned voxel grid of reconstructed records."""
    if not chunk.entries:
        return SparseFeatureGrid(voxel_size=cfg.voxel_size)
    coords = sparse.sort_coords(np.array(sorted(chunk.entries), dtype=np.int64))
    codes = lfq_dequantize(np.array([chunk.entries[tuple(c)] for c in coords]), cfg.latent_dim)
    feats, out_coords = decoder_forward_inference(params, codes, coords, cfg)
    grid = SparseFeatureGrid(voxel_size=cfg.voxel_size)
    if len(out_coords) == 0:
        return grid
    records = predictions_to_records(decode_heads(params, feats), cfg)
    for c, rec in zip(out_coords, records):
        grid.entries[tuple(int(v) for v in c)] = rec
    return grid
