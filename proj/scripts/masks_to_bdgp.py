#!/usr/bin/env python3
"""Convert segmentation masks into the BDGP-MASKS JSON file read by `bdgp refine`.

Input is either a .npy/.npz array of shape (n_masks, rows, cols), or a list of
single-band image files (one mask per file; any nonzero pixel is inside).
Masks may overlap; `bdgp refine` resolves the overlaps.

    masks_to_bdgp.py masks.npy -o masks.json --pixel-size-m 70
    masks_to_bdgp.py seg_*.png -o masks.json
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def encode_rle(mask):
    """Row-major runs alternating outside/inside, starting with an outside run."""
    flat = np.asarray(mask, dtype=bool).ravel()
    # Positions where the value flips, plus both ends.
    edges = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate(([0], edges, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def load_masks(paths):
    if len(paths) == 1 and paths[0].suffix in (".npy", ".npz"):
        data = np.load(paths[0])
        if isinstance(data, np.lib.npyio.NpzFile):
            data = data[data.files[0]]
        arr = np.asarray(data)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            sys.exit(f"{paths[0]}: expected shape (n_masks, rows, cols), got {arr.shape}")
        return arr != 0
    from PIL import Image

    layers = [np.asarray(Image.open(p).convert("L")) != 0 for p in paths]
    shapes = {m.shape for m in layers}
    if len(shapes) != 1:
        sys.exit(f"mask images differ in size: {sorted(shapes)}")
    return np.stack(layers)


def to_document(masks, pixel_size_m=None, origin=None):
    doc = {"magic": "BDGP-MASKS", "version": 1, "n_rows": int(masks.shape[1]), "n_cols": int(masks.shape[2])}
    if pixel_size_m is not None:
        doc["pixel_size_m"] = float(pixel_size_m)
    if origin is not None:
        doc["origin"] = [float(origin[0]), float(origin[1])]
    doc["masks"] = [{"rle": encode_rle(m)} for m in masks]
    return doc


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("inputs", nargs="+", type=Path)
    ap.add_argument("-o", "--output", type=Path, required=True)
    ap.add_argument("--pixel-size-m", type=float)
    ap.add_argument("--origin", type=float, nargs=2, metavar=("X_M", "Y_M"))
    args = ap.parse_args(argv)
    masks = load_masks(args.inputs)
    args.output.write_text(json.dumps(to_document(masks, args.pixel_size_m, args.origin)))
    print(f"wrote {len(masks)} masks of {masks.shape[1]}x{masks.shape[2]} px to {args.output}")


if __name__ == "__main__":
    main()
