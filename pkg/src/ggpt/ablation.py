"""Serialization-order ablation: train one model per traversal order on the
same latent chunks and compare train/val cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ordering import ALL_ORDERINGS, Ordering
from .pipeline import chunks_to_sequences
from .tokens import LatentChunk
from .transformer import (GptConfig, GptTrainConfig, evaluate_ce, train_gpt,
                          uniform_baseline_ce)

# cross-entropies of the corresponding full-scale training runs, shown next to
# toy results for orientation only (different data/scale; not targets)
FULL_SCALE_REFERENCE_CE: dict[Ordering, tuple[float, float]] = {
    Ordering.ZORDER: (2.379, 2.448),
    Ordering.ZORDER_TRANSPOSED: (2.379, 2.445),
    Ordering.HILBERT: (2.467, 2.497),
    Ordering.HILBERT_TRANSPOSED: (2.462, 2.493),
    Ordering.XYZ: (2.346, 2.444),
}

ORDERING_LABELS = {
    Ordering.XYZ: "xyz",
    Ordering.ZORDER: "z-order",
    Ordering.ZORDER_TRANSPOSED: "trans. z-order",
    Ordering.HILBERT: "hilbert",
    Ordering.HILBERT_TRANSPOSED: "trans. hilbert",
}


@dataclass
class AblationRow:
    ordering: Ordering
    train_ce: float
    val_ce: float
    baseline_ce: float
    reference_train_ce: float
    reference_val_ce: float


def ablate_orderings(chunks: list[LatentChunk], gpt_cfg: GptConfig, train_cfg: GptTrainConfig,
                     seed: int, orderings=ALL_ORDERINGS, on_row=None) -> list[AblationRow]:
    """One training run per ordering, identical model config and seed."""
    rows: list[AblationRow] = []
    for ordering in orderings:
        cfg = replace(gpt_cfg, ordering=Ordering(ordering))
        sequences = chunks_to_sequences(chunks, cfg.ordering)
        rng = np.random.default_rng(seed)
        ckpt = train_gpt(sequences, cfg, train_cfg, rng)
        train = [sequences[i] for i in ckpt.train_indices] or sequences
        val = [sequences[i] for i in ckpt.val_indices]
        ref = FULL_SCALE_REFERENCE_CE[cfg.ordering]
        row = AblationRow(
            ordering=cfg.ordering,
            train_ce=evaluate_ce(ckpt.params, cfg, train),
            val_ce=evaluate_ce(ckpt.params, cfg, val) if val else float("nan"),
            baseline_ce=uniform_baseline_ce(cfg, sequences),
            reference_train_ce=ref[0], reference_val_ce=ref[1],
        )
        rows.append(row)
        if on_row is not None:
            on_row(row)
    return rows


def format_table(rows: list[AblationRow]) -> str:
    header = f"{'ordering':<16} {'train CE':>9} {'val CE':>9} {'baseline':>9} {'ref train':>10} {'ref val':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{ORDERING_LABELS[r.ordering]:<16} {r.train_ce:>9.4f} {r.val_ce:>9.4f} "
            f"{r.baseline_ce:>9.4f} {r.reference_train_ce:>10.3f} {r.reference_val_ce:>9.3f}"
        )
    return "\n".join(lines)


def rows_to_json(rows: list[AblationRow]) -> list[dict]:
    return [
        {
            "ordering": ORDERING_LABELS[r.ordering], "train_ce": r.train_ce, "val_ce": r.val_ce,
            "baseline_ce": r.baseline_ce, "reference_train_ce": r.reference_train_ce,
            "reference_val_ce": r.reference_val_ce,
        }
        for r in rows
    ]
