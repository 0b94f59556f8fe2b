"""Scratch: seed-robustness sweep of the toy stage-2 result."""
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, "src")
from histotile.dataset import TileRecord, resize_to_input, stratified_split
from histotile.metrics import compute_metrics, confusion
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
from histotile.training import TrainSpec, fine_tune, predict_probabilities

for data_seed, split_seed, net_seed in [(1, 2, 3), (42, 43, 44), (7, 11, 100)]:
    with tempfile.TemporaryDirectory() as tmp:
        slides_dir = Path(tmp) / "slides"
        generate_toy_slides(slides_dir, seed=data_seed)
        records, tiles = [], {}
        for label in ("SCC", "AC"):
            for path in sorted((slides_dir / label).glob("*.ppm")):
                slide = open_slide(path, magnification_override=40)
                for outcome in filter_tiles(extract_tiles(slide, 20, 64)):
                    rec = outcome.record
                    r = TileRecord(
                        slide_id=rec["slide_id"],
                        tile_path=f"{rec['slide_id']}_{rec['origin_x']}_{rec['origin_y']}",
                        class_label=label,
                        origin_x=rec["origin_x"],
                        origin_y=rec["origin_y"],
                        tile_size_px=64,
                        magnification=rec["magnification"],
                        tissue_fraction=outcome.stats.tissue_fraction,
                        rejected_reason=outcome.rejected_reason,
                    )
                    records.append(r)
                    if outcome.kept:
                        tiles[r.tile_path] = outcome.pixels
        kept = [r for r in records if r.kept]
        ref = default_reference_profile()
        norm = {}
        for sid in sorted({r.slide_id for r in kept}):
            st = [tiles[r.tile_path] for r in kept if r.slide_id == sid]
            prof = estimate_stain_matrix(sample_tissue_pixels(st, seed=3))
            for r in kept:
                if r.slide_id == sid:
                    norm[r.tile_path] = normalize_tile(tiles[r.tile_path], prof, ref)
        records = stratified_split(records, {"train": 216, "validation": 24, "test": 60}, seed=split_seed)

        def arrays(split):
            rs = [r for r in records if r.split == split]
            x = np.stack([resize_to_input(norm[r.tile_path], 64) for r in rs]).astype(np.float32) / 255.0
            y = np.array([1.0 if r.class_label == "SCC" else 0.0 for r in rs])
            return x, y

        x_train, y_train = arrays("train")
        x_val, y_val = arrays("validation")
        x_test, y_test = arrays("test")
        net = VggNetwork(NetworkConfig(input_size=64, width_scale=1 / 8, fc_sizes=(256, 64)))
        params = net.init_params(seed=net_seed)
        spec = TrainSpec(learning_rate=0.0001, momentum=0.9, epochs=30, batch_size=16, seed=net_seed + 1)
        tuned, history = fine_tune(net, params, (x_train, y_train), (x_val, y_val), spec)
        m = compute_metrics(confusion(predict_probabilities(net, tuned, x_test), y_test))
        print(f"seeds {data_seed}/{split_seed}/{net_seed}: test acc {m['accuracy']:.4f} f1 {m['f1']:.4f} (val {history[-1].val_accuracy:.4f})")
