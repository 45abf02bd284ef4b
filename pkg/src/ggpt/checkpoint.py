"""Binary checkpoint container: magic, version, JSON config block, named f32
tensors (parameters plus optimizer state)."""

from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import Tensor, tensor

MAGIC_AUTOENCODER = b"GGAE"
MAGIC_TRANSFORMER = b"GGPT"
_VERSION = 1


class CheckpointError(ValueError):
    pass


def write_container(magic: bytes, config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    out = [struct.pack("<4sHI", magic, _VERSION, len(blob)), blob,
           struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{max(arr.ndim, 1)}I", *(arr.shape or (0,))))
        out.append(arr.tobytes())
    return b"".join(out)


def read_container(data: bytes, expect_magic: bytes | None = None) -> tuple[bytes, dict, dict[str, np.ndarray]]:
    off = struct.calcsize("<4sHI")
    if len(data) < off:
        raise CheckpointError("truncated header")
    magic, version, cfg_len = struct.unpack("<4sHI", data[:off])
    if expect_magic is not None and magic != expect_magic:
        raise CheckpointError(f"bad magic {magic!r}, expected {expect_magic!r}")
    if version != _VERSION:
        raise CheckpointError(f"unsupported version {version}")
    config = json.loads(data[off:off + cfg_len].decode("utf-8"))
    off += cfg_len
    (n_tensors,) = struct.unpack("<I", data[off:off + 4])
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", data[off:off + 2])
        off += 2
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack("<B", data[off:off + 1])
        off += 1
        k = max(ndim, 1)
        shape = struct.unpack(f"<{k}I", data[off:off + 4 * k])
        off += 4 * k
        shape = tuple(shape[:ndim]) if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data[off:off + 4 * count], dtype="<f4", count=count).reshape(shape)
        off += 4 * count
        tensors[name] = arr.copy()
    return magic, config, tensors


def params_to_arrays(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in params.items()}


def arrays_to_params(arrays: dict[str, np.ndarray], dtype=np.float32) -> dict[str, Tensor]:
    return {k: tensor(v.astype(dtype), requires_grad=True, dtype=dtype) for k, v in arrays.items()}


def save_autoencoder(ckpt) -> bytes:
    """Serialize an AutoencoderCheckpoint (params + config + log + opt state)."""
    from .autoencoder import AutoencoderConfig  # local import to avoid cycles

    assert isinstance(ckpt.cfg, AutoencoderConfig)
    config = {
        "voxel_size": ckpt.cfg.voxel_size, "stages": ckpt.cfg.stages,
        "chunk_extent": list(ckpt.cfg.chunk_extent), "widths": list(ckpt.cfg.widths),
        "latent_dim": ckpt.cfg.latent_dim, "lambda_attr": ckpt.cfg.lambda_attr,
        "lambda_occ": ckpt.cfg.lambda_occ, "lambda_lfq": ckpt.cfg.lambda_lfq,
        "occupancy_threshold": ckpt.cfg.occupancy_threshold, "chunk_tries": ckpt.cfg.chunk_tries,
        "lr": ckpt.cfg.lr, "lr_final_fraction": ckpt.cfg.lr_final_fraction,
        "log": ckpt.log, "opt_step": ckpt.opt_step,
    }
    tensors = dict(params_to_arrays(ckpt.params))
    for k, v in ckpt.opt_state.items():
        tensors[f"opt/{k}"] = v
    return write_container(MAGIC_AUTOENCODER, config, tensors)


def load_autoencoder(data: bytes):
    from .autoencoder import AutoencoderCheckpoint, AutoencoderConfig

    _, config, tensors = read_container(data, MAGIC_AUTOENCODER)
    cfg = AutoencoderConfig(
        voxel_size=config["voxel_size"], stages=config["stages"],
        chunk_extent=tuple(config["chunk_extent"]), widths=tuple(config["widths"]),
        latent_dim=config["latent_dim"], lambda_attr=config["lambda_attr"],
        lambda_occ=config["lambda_occ"], lambda_lfq=config["lambda_lfq"],
        occupancy_threshold=config["occupancy_threshold"], chunk_tries=config["chunk_tries"],
        lr=config["lr"], lr_final_fraction=config["lr_final_fraction"],
    )
    opt_state = {k[4:]: v for k, v in tensors.items() if k.startswith("opt/")}
    params = arrays_to_params({k: v for k, v in tensors.items() if not k.startswith("opt/")})
    return AutoencoderCheckpoint(cfg=cfg, params=params, log=config.get("log", []),
                                 opt_state=opt_state, opt_step=config.get("opt_step", 0))


def save_gpt(ckpt) -> bytes:
    """Serialize a GptCheckpoint; the config block makes sampling self-describing."""
    config = {"gpt": ckpt.cfg.to_dict(), "log": ckpt.log}
    return write_container(MAGIC_TRANSFORMER, config, params_to_arrays(ckpt.params))


def load_gpt(data: bytes):
    from .transformer import GptCheckpoint, GptConfig

    _, config, tensors = read_container(data, MAGIC_TRANSFORMER)
    cfg = GptConfig.from_dict(config["gpt"])
    return GptCheckpoint(cfg=cfg, params=arrays_to_params(tensors), log=config.get("log", []))


def sniff_kind(data: bytes) -> str:
    """'autoencoder', 'transformer', 'tokens', or 'unknown' based on layout."""
    if len(data) < 4:
        return "unknown"
    magic = data[:4]
    if magic == MAGIC_AUTOENCODER:
        return "autoencoder"
    if magic == MAGIC_TRANSFORMER:
        # checkpoint containers carry a JSON block right after the header
        try:
            read_container(data, MAGIC_TRANSFORMER)
            return "transformer"
        except (CheckpointError, ValueError, UnicodeDecodeError, json.JSONDecodeError):
            return "tokens"
    return "unknown"
