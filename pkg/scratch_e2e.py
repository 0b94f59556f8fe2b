"""Scratch experiment: toy pipeline end-to-end, API-level (not a deliverable)."""
import sys
import time
from pathlib import Path

import numpy as np

from histotile.dataset import TileRecord, stratified_split, resize_to_input
from histotile.network import NetworkConfig, VggNetwork
from histotile.reader import open_slide
from histotile.stain import (
    default_reference_profile,
    estimate_stain_matrix,
    normalize_tile,
    sample_tissue_pixels,
)
from histotile.synthetic import generate_toy_slides
from histotile.tiler import extract_tiles
from histotile.tissue import filter_tiles
from histotile.training import (
    LogisticHead,
    TrainSpec,
    fine_tune,
    predict_probabilities,
    standardize_features,
)
from histotile.metrics import confusion, compute_metrics

t0 = time.time()
root = Path(sys.argv[1] if len(sys.argv) > 1 else "/tmp/toy")
root.mkdir(parents=True, exist_ok=True)
slides_dir = root / "slides"
if not (slides_dir / "SCC").exists():
    generate_toy_slides(slides_dir, seed=7)
print(f"[{time.time()-t0:6.1f}s] slides ready")

# tile + filter
records, tiles = [], {}
for label in ("SCC", "AC"):
    for path in sorted((slides_dir / label).glob("*.ppm")):
        slide = open_slide(path, magnification_override=40)
        stream = extract_tiles(slide, 20, 64)
        for outcome in filter_tiles(stream):
            rec, px, st = outcome.record, outcome.pixels, outcome.stats
            r = TileRecord(
                slide_id=rec["slide_id"],
                tile_path=f"{rec['slide_id']}_{rec['origin_x']}_{rec['origin_y']}",
                class_label=label,
                origin_x=rec["origin_x"],
                origin_y=rec["origin_y"],
                tile_size_px=64,
                magnification=rec["magnification"],
                tissue_fraction=st.tissue_fraction,
                rejected_reason=outcome.rejected_reason,
            )
            records.append(r)
            if outcome.kept:
                tiles[r.tile_path] = px
kept = [r for r in records if r.kept]
from collections import Counter

print(f"[{time.time()-t0:6.1f}s] tiles: {Counter((r.class_label, r.kept) for r in records)}")

# normalize per slide
ref = default_reference_profile()
norm = {}
for sid in sorted({r.slide_id for r in kept}):
    slide_tiles = [tiles[r.tile_path] for r in kept if r.slide_id == sid]
    pool = sample_tissue_pixels(slide_tiles, max_pixels=100_000, seed=3)
    prof = estimate_stain_matrix(pool)
    for r in kept:
        if r.slide_id == sid:
            norm[r.tile_path] = normalize_tile(tiles[r.tile_path], prof, ref)
print(f"[{time.time()-t0:6.1f}s] normalized")

# split
records = stratified_split(records, {"train": 216, "validation": 24, "test": 60}, seed=11)


def arrays(split):
    rs = [r for r in records if r.split == split]
    x = np.stack([resize_to_input(norm[r.tile_path], 64) for r in rs]).astype(np.float32) / 255.0
    y = np.array([1.0 if r.class_label == "SCC" else 0.0 for r in rs])
    return x, y


x_train, y_train = arrays("train")
x_val, y_val = arrays("validation")
x_test, y_test = arrays("test")
print(f"[{time.time()-t0:6.1f}s] arrays {x_train.shape} {x_val.shape} {x_test.shape}")

config = NetworkConfig(input_size=64, width_scale=1 / 8, fc_sizes=(256, 64))
net = VggNetwork(config)
params = net.init_params(seed=100)

# stage 1: features + logistic head
feats = {}
for name, x in (("train", x_train), ("val", x_val), ("test", x_test)):
    parts = [net.extract_features(params, x[i : i + 64]) for i in range(0, len(x), 64)]
    feats[name] = np.concatenate(parts)
ftr, fva, fte = standardize_features(feats["train"], feats["val"], feats["test"])
head = LogisticHead(config.feature_size)
hp = head.init_params(seed=101)
head.train(hp, ftr, y_train, TrainSpec(learning_rate=0.01, momentum=0.9, epochs=30, seed=102))
for name, f, y in (("train", ftr, y_train), ("val", fva, y_val), ("test", fte, y_test)):
    acc = np.mean((head.predict(hp, f) >= 0.5) == (y == 1))
    print(f"[{time.time()-t0:6.1f}s] stage1 {name} acc = {acc:.4f}")

# stage 2: fine-tune
spec = TrainSpec(
    learning_rate=0.0001,
    momentum=float(sys.argv[2]) if len(sys.argv) > 2 else 0.0,
    epochs=30,
    batch_size=16,
    seed=103,
)
tuned, history = fine_tune(net, params, (x_train, y_train), (x_val, y_val), spec)
for h in history[::5] + [history[-1]]:
    print(f"  epoch {h.epoch:2d}: train {h.train_loss:.4f} val {h.val_loss:.4f} acc {h.val_accuracy:.4f}")
p_test = predict_probabilities(net, tuned, x_test)
m = compute_metrics(confusion(p_test, y_test))
print(f"[{time.time()-t0:6.1f}s] stage2 TEST: {m}")
