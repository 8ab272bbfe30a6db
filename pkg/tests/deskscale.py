"""Desk-scale dataset and training recipe shared by the acceptance suite.

The acceptance runs train on 200 synthetic train segments and 50 static
validation pairs with a fixed seed; everything here is deterministic.
"""

import numpy as np

from edakit import augment
from edakit import signal_io as sio

DESK_SEED = 424242
TRAIN_SEGMENTS = 200
VAL_SEGMENTS = 50
EPOCHS = 50


def build_dataset(seed=DESK_SEED):
    """10 subjects x 900 s -> 25 segments each; subject-wise 80/20 split."""
    segments = []
    for si in range(10):
        cfg = sio.SynthConfig(
            duration_s=900.0,
            scr_rate_per_min=3.0,
            seed=int(np.random.SeedSequence([seed, si, 0xD5]).generate_state(1)[0]),
        )
        signal = sio.synthesize_eda(cfg, subject_id=f"subj{si:02d}")
        segments.extend(sio.window(signal))
    train, val_pool = sio.split_by_subject(segments, 0.8, seed=seed)
    train = train[:TRAIN_SEGMENTS]
    val_pool = val_pool[:VAL_SEGMENTS]
    bank = augment.synthesize_ma_bank(size=60, seed=seed)
    val_pairs, _ = augment.make_static_pairs(val_pool, bank, seed=seed + 1)
    return train, val_pairs, bank
