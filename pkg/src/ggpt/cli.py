"""Command-line entry point wiring the full pipeline.

Subcommands: synth, voxelize, train-ae, encode, train-gpt, sample, complete,
outpaint, ablate-orderings, inspect, gradcheck. Exit codes: 0 ok, 1 runtime
failure, 2 unknown command / bad usage, 3 config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time


def _cap_threads() -> None:
    n = os.environ.get("GGPT_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, n)


_cap_threads()

import numpy as np  # noqa: E402  (thread caps must precede numpy import)

from .ablation import ablate_orderings, format_table, rows_to_json  # noqa: E402
from .autoencoder import (AutoencoderCheckpoint, decode_latent_chunk,  # noqa: E402
                          init_autoencoder, train_autoencoder)
from .checkpoint import (load_autoencoder, load_gpt, read_container,  # noqa: E402
                         save_autoencoder, save_gpt, sniff_kind)
from .config import ConfigError, RunConfig, dump_config, load_config  # noqa: E402
from .ordering import Ordering  # noqa: E402
from .pipeline import build_latent_corpus, chunks_to_sequences, scenes_to_grids  # noqa: E402
from .sampling import OutpaintConfig, SampleConfig, complete, outpaint, sample_chunk  # noqa: E402
from .scene import parse_splat_file, write_splat_file  # noqa: E402
from .tokens import (TokenSequence, TokenType, deserialize_tokens,  # noqa: E402
                     read_token_stream, write_token_stream)
from .transformer import GptTrainConfig, train_gpt  # noqa: E402
from .voxels import dict_column_occupancy, devoxelize, voxelize  # noqa: E402


class MetricLog:
    """JSON-lines metric sink: {step, split, metric, value, wall_ms}."""

    def __init__(self, path: str | None):
        self.path = path
        self.t0 = time.monotonic()
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def write(self, step: int, split: str, metric: str, value: float) -> None:
        if self._fh is None:
            return
        rec = {"step": step, "split": split, "metric": metric, "value": value,
               "wall_ms": int((time.monotonic() - self.t0) * 1000)}
        self._fh.write(json.dumps(rec) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _scenes_from_dir(path: str):
    names = sorted(n for n in os.listdir(path) if n.endswith((".splat", ".ply")))
    if not names:
        raise RuntimeError(f"no .splat/.ply files in {path!r}")
    scenes = []
    for n in names:
        with open(os.path.join(path, n), "rb") as f:
            scenes.append(parse_splat_file(f.read()))
    return scenes


def _sequences_from_dir(path: str) -> tuple[list[TokenSequence], tuple, Ordering]:
    names = sorted(n for n in os.listdir(path) if n.endswith(".ggt"))
    if not names:
        raise RuntimeError(f"no .ggt token files in {path!r}")
    seqs, extent, ordering = [], None, None
    for n in names:
        with open(os.path.join(path, n), "rb") as f:
            seq, ext, order = read_token_stream(f.read())
        if extent is None:
            extent, ordering = ext, order
        elif (ext, order) != (extent, ordering):
            raise RuntimeError("token files disagree on extent/ordering")
        seqs.append(seq)
    return seqs, extent, ordering


def _load_gpt_checkpoint(path: str):
    with open(path, "rb") as f:
        return load_gpt(f.read())


def _write_sample_outputs(result_seq: TokenSequence, extent, ordering, args, ae_path: str | None) -> None:
    with open(args.out, "wb") as f:
        f.write(write_token_stream(result_seq, extent, ordering))
    print(f"wrote {args.out} ({len(result_seq)} tokens)")
    if ae_path and getattr(args, "splat_out", None):
        with open(ae_path, "rb") as f:
            ae = load_autoencoder(f.read())
        chunk = deserialize_tokens(result_seq, extent, ordering, ae.cfg.codebook_size)
        grid = decode_latent_chunk(ae.params, ae.cfg, chunk)
        scene = devoxelize(grid)
        with open(args.splat_out, "wb") as f:
            f.write(write_splat_file(scene))
        print(f"wrote {args.splat_out} ({len(scene)} splats)")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg: RunConfig, log: MetricLog) -> int:
    from .synth import generate_toy_scene

    os.makedirs(args.out, exist_ok=True)
    count = args.count or cfg.synth_count
    for i in range(count):
        scene = generate_toy_scene(cfg.synth, cfg.synth.seed + i)
        with open(os.path.join(args.out, f"scene_{i:04d}.splat"), "wb") as f:
            f.write(write_splat_file(scene))
        log.write(i, "synth", "splats", len(scene))
    print(f"wrote {count} scenes to {args.out}")
    return 0


def cmd_voxelize(args, cfg: RunConfig, log: MetricLog) -> int:
    with open(args.input, "rb") as f:
        scene = parse_splat_file(f.read())
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)
    grid = voxelize(scene, cfg.autoencoder.voxel_size, rng)
    lo, hi = grid.bounds_ijk()
    span = tuple(int(v) for v in (hi - lo + 1)) if len(grid) else (0, 0, 0)
    occ = dict_column_occupancy(grid.entries, (max(span[0], 1), max(span[1], 1), max(span[2], 1)))
    print(f"splats={len(scene)} voxels={len(grid)} span={span} column_occupancy={occ:.3f}")
    if args.out:
        with open(args.out, "wb") as f:
            f.write(write_splat_file(devoxelize(grid)))
        print(f"wrote {args.out}")
    return 0


def cmd_train_ae(args, cfg: RunConfig, log: MetricLog) -> int:
    scenes = _scenes_from_dir(args.scenes)
    grids = scenes_to_grids(scenes, cfg.autoencoder.voxel_size, cfg.seed)
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)
    steps = args.steps or cfg.ae_steps

    def on_step(step, components, indices):
        if step % 50 == 0:
            log.write(step, "train", "loss", components["total"])
            log.write(step, "train", "attr_l1", components["attr"])

    ckpt = train_autoencoder(grids, cfg.autoencoder, rng, steps, on_step=on_step)
    with open(args.out, "wb") as f:
        f.write(save_autoencoder(ckpt))
    print(f"trained {steps} steps; final loss {ckpt.log[-1]['total']:.4f}; wrote {args.out}")
    return 0


def cmd_encode(args, cfg: RunConfig, log: MetricLog) -> int:
    with open(args.ae, "rb") as f:
        ae = load_autoencoder(f.read())
    scenes = _scenes_from_dir(args.scenes)
    grids = scenes_to_grids(scenes, ae.cfg.voxel_size, cfg.seed)
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)
    chunks = build_latent_corpus(ae, grids, cfg.encode.chunks_per_scene,
                                 cfg.encode.occupancy_threshold, cfg.encode.chunk_tries, rng)
    os.makedirs(args.out, exist_ok=True)
    ordering = cfg.gpt.ordering
    for i, chunk in enumerate(chunks):
        seq = chunks_to_sequences([chunk], ordering)[0]
        with open(os.path.join(args.out, f"chunk_{i:05d}.ggt"), "wb") as f:
            f.write(write_token_stream(seq, chunk.extent, ordering))
        log.write(i, "encode", "tokens", len(seq))
    print(f"encoded {len(chunks)} chunks to {args.out}")
    return 0


def cmd_train_gpt(args, cfg: RunConfig, log: MetricLog) -> int:
    seqs, extent, ordering = _sequences_from_dir(args.tokens)
    gpt_cfg = cfg.gpt
    if tuple(gpt_cfg.extent) != tuple(extent) or gpt_cfg.ordering != ordering:
        from dataclasses import replace
        gpt_cfg = replace(gpt_cfg, extent=tuple(extent), ordering=ordering)
    tc = cfg.gpt_train if args.epochs is None else GptTrainConfig(
        **{**cfg.gpt_train.__dict__, "epochs": args.epochs})
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)

    def on_epoch(epoch, val_ce):
        log.write(epoch, "val", "ce", val_ce)
        return False

    ckpt = train_gpt(seqs, gpt_cfg, tc, rng, on_epoch=on_epoch)
    with open(args.out, "wb") as f:
        f.write(save_gpt(ckpt))
    vals = [e["ce"] for e in ckpt.log if e.get("split") == "val"]
    print(f"trained {tc.epochs} epochs; final val CE {vals[-1]:.4f}; wrote {args.out}")
    return 0


def cmd_sample(args, cfg: RunConfig, log: MetricLog) -> int:
    ckpt = _load_gpt_checkpoint(args.model)
    seed = args.seed if args.seed is not None else cfg.sample.seed
    scfg = SampleConfig(temperature=cfg.sample.temperature, nucleus_p=cfg.sample.nucleus_p,
                        max_tokens=cfg.sample.max_tokens, seed=seed)
    result = sample_chunk(ckpt, scfg)
    if result.truncated:
        print("warning: generation truncated before EOS", file=sys.stderr)
    _write_sample_outputs(result.sequence, ckpt.cfg.extent, ckpt.cfg.ordering, args, args.ae)
    return 0


def cmd_complete(args, cfg: RunConfig, log: MetricLog) -> int:
    ckpt = _load_gpt_checkpoint(args.model)
    with open(args.prefix, "rb") as f:
        seq, extent, ordering = read_token_stream(f.read())
    if tuple(extent) != tuple(ckpt.cfg.extent) or ordering != ckpt.cfg.ordering:
        raise RuntimeError("prefix extent/ordering does not match the checkpoint")
    pairs = seq.pairs()
    keep = max(0, int(len(pairs) * args.keep_fraction))
    prefix = TokenSequence()
    prefix.append(0, TokenType.BOS)
    for rank, code, coord in pairs[:keep]:
        prefix.append(rank, TokenType.POS, coord)
        prefix.append(code, TokenType.FEAT, coord)
    seed = args.seed if args.seed is not None else cfg.sample.seed
    scfg = SampleConfig(temperature=cfg.sample.temperature, nucleus_p=cfg.sample.nucleus_p,
                        max_tokens=cfg.sample.max_tokens, seed=seed)
    result = complete(ckpt, prefix, scfg)
    _write_sample_outputs(result.sequence, ckpt.cfg.extent, ckpt.cfg.ordering, args, args.ae)
    return 0


def cmd_outpaint(args, cfg: RunConfig, log: MetricLog) -> int:
    ckpt = _load_gpt_checkpoint(args.model)
    ocfg = cfg.outpaint
    if args.target:
        ocfg = OutpaintConfig(target_columns=tuple(args.target),
                              bootstrap_columns=ocfg.bootstrap_columns,
                              frontier_low=ocfg.frontier_low, frontier_high=ocfg.frontier_high,
                              frontier_x=ocfg.frontier_x, resample_tries=ocfg.resample_tries)
    seed = args.seed if args.seed is not None else cfg.sample.seed
    scfg = SampleConfig(temperature=cfg.sample.temperature, nucleus_p=cfg.sample.nucleus_p,
                        max_tokens=cfg.sample.max_tokens, seed=seed)
    result = outpaint(ckpt, ocfg, scfg)
    retried = sum(1 for v in result.attempts.values() if v > 1)
    print(f"outpainted {result.chunk.extent} columns; writes={result.writes} "
          f"rewrites={result.rewrites} retried_columns={retried}")
    from .tokens import serialize_chunk
    seq = serialize_chunk(result.chunk, Ordering.XYZ)
    _write_sample_outputs(seq, result.chunk.extent, Ordering.XYZ, args, args.ae)
    return 0


def cmd_ablate(args, cfg: RunConfig, log: MetricLog) -> int:
    seqs, extent, ordering = _sequences_from_dir(args.chunks)
    chunks = [deserialize_tokens(s, extent, ordering, cfg.gpt.feat_vocab) for s in seqs]
    from dataclasses import replace
    gpt_cfg = replace(cfg.gpt, extent=tuple(extent))
    tc = cfg.gpt_train if args.epochs is None else GptTrainConfig(
        **{**cfg.gpt_train.__dict__, "epochs": args.epochs})
    rows = []
    status = 0
    try:
        def on_row(row):
            rows.append(row)
            log.write(len(rows), "ablate", f"val_ce_{row.ordering.name.lower()}", row.val_ce)

        rows = ablate_orderings(chunks, gpt_cfg, tc, cfg.seed, on_row=on_row)
    except Exception as e:  # partial results still reported
        print(f"ablation aborted after {len(rows)} rows: {e}", file=sys.stderr)
        status = 1
    print(format_table(rows))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump({"rows": rows_to_json(rows), "partial": status != 0}, f, indent=2)
        print(f"wrote {args.out}")
    return status


def cmd_inspect(args, cfg: RunConfig | None, log: MetricLog) -> int:
    with open(args.input, "rb") as f:
        data = f.read()
    kind = sniff_kind(data)
    if kind == "tokens":
        seq, extent, ordering = read_token_stream(data)
        pairs = seq.pairs()
        columns = {(c[0], c[1]) for _r, _f, c in pairs}
        occ = len(columns) / float(max(extent[0] * extent[1], 1))
        print(f"token stream: extent={tuple(extent)} ordering={ordering.name.lower()} "
              f"tokens={len(seq)} cells={len(pairs)} column_occupancy={occ:.3f}")
    elif kind == "transformer":
        _, config, tensors = read_container(data)
        g = config["gpt"]
        print(f"transformer checkpoint: extent={tuple(g['extent'])} "
              f"ordering={Ordering(g['ordering']).name.lower()} layers={g['n_layer']} "
              f"d_model={g['d_model']} tensors={len(tensors)}")
    elif kind == "autoencoder":
        _, config, tensors = read_container(data)
        print(f"autoencoder checkpoint: voxel_size={config['voxel_size']} stages={config['stages']} "
              f"chunk_extent={tuple(config['chunk_extent'])} tensors={len(tensors)}")
    else:
        print("unknown file kind", file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args, cfg: RunConfig, log: MetricLog) -> int:
    from .verification import autoencoder_grad_check, transformer_grad_check

    t_err = transformer_grad_check(n_layer=2, d_model=32, seed=cfg.seed,
                                   max_coords=args.coords)
    a_err = autoencoder_grad_check(stages=1, seed=cfg.seed, max_coords=args.coords)
    print(f"transformer max rel error: {t_err:.3e}")
    print(f"autoencoder max rel error: {a_err:.3e}")
    log.write(0, "gradcheck", "transformer_max_rel_err", t_err)
    log.write(0, "gradcheck", "autoencoder_max_rel_err", a_err)
    return 0 if max(t_err, a_err) < 1e-4 else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ggpt", description=__doc__)
    ap.add_argument("--config", default=None, help="JSON run config")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--log", default=None, help="JSON-lines metric log path")
    ap.add_argument("--deterministic", action="store_true")
    sub = ap.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate toy scenes as .splat files")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None)

    p = sub.add_parser("voxelize", help="voxelize one splat file and report stats")
    p.add_argument("input")
    p.add_argument("--out", default=None, help="write devoxelized splat file")

    p = sub.add_parser("train-ae", help="train the autoencoder on a scene directory")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("encode", help="encode scenes into latent-chunk token files")
    p.add_argument("--ae", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-gpt", help="train the transformer on token files")
    p.add_argument("--tokens", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("sample", help="unconditional chunk generation")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ae", default=None)
    p.add_argument("--splat-out", default=None)

    p = sub.add_parser("complete", help="complete a partial chunk")
    p.add_argument("--model", required=True)
    p.add_argument("--prefix", required=True, help="token file; a fraction is kept as prompt")
    p.add_argument("--keep-fraction", type=float, default=0.25)
    p.add_argument("--out", required=True)
    p.add_argument("--ae", default=None)
    p.add_argument("--splat-out", default=None)

    p = sub.add_parser("outpaint", help="grow a scene beyond a single window")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=int, nargs=2, default=None, metavar=("TX", "TY"))
    p.add_argument("--ae", default=None)
    p.add_argument("--splat-out", default=None)

    p = sub.add_parser("ablate-orderings", help="train one model per traversal order")
    p.add_argument("--chunks", required=True, help="directory of .ggt chunk files")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", default=None, help="JSON table path")

    p = sub.add_parser("inspect", help="describe a token stream or checkpoint file")
    p.add_argument("input")

    p = sub.add_parser("gradcheck", help="finite-difference check of both models")
    p.add_argument("--coords", type=int, default=8, help="sampled coordinates per parameter")

    return ap


_COMMANDS = {
    "synth": cmd_synth, "voxelize": cmd_voxelize, "train-ae": cmd_train_ae,
    "encode": cmd_encode, "train-gpt": cmd_train_gpt, "sample": cmd_sample,
    "complete": cmd_complete, "outpaint": cmd_outpaint, "ablate-orderings": cmd_ablate,
    "inspect": cmd_inspect, "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    if not args.command:
        ap.print_help()
        return 2
    if args.deterministic:
        os.environ.setdefault("GGPT_THREADS", "1")
        _cap_threads()
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.config:
            dump_config(cfg)  # round-trip check: canonical form must serialize
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    log = MetricLog(args.log)
    try:
        return _COMMANDS[args.command](args, cfg, log)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    finally:
        log.close()


if __name__ == "__main__":
    sys.exit(main())
