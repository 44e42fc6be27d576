#!/usr/bin/env python3
"""Convert NumPy arrays into the eegraph dataset format.

    npy_to_manifest.py trials.npy labels.npy out/errp.json \
        --montage errp56 --rate 200 --classes 2

trials.npy holds a (trials, channels, samples) array in the montage's channel
order; labels.npy holds integer class labels. Writes out/errp.json plus the
.f32 payload and .labels files next to it.
"""
import argparse
import json
import pathlib

import numpy as np


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("trials")
    p.add_argument("labels")
    p.add_argument("manifest")
    p.add_argument("--montage", required=True, help="errp56, rsvp16 or a montage file")
    p.add_argument("--rate", type=float, required=True, help="sample rate in Hz")
    p.add_argument("--classes", type=int, help="defaults to max label + 1")
    p.add_argument("--name", help="dataset name; defaults to the manifest stem")
    a = p.parse_args()

    x = np.load(a.trials)
    y = np.load(a.labels).astype(np.int64).ravel()
    if x.ndim != 3:
        raise SystemExit(f"expected a 3-d trials array, got shape {x.shape}")
    if len(y) != x.shape[0]:
        raise SystemExit(f"{x.shape[0]} trials but {len(y)} labels")
    if not np.isfinite(x).all():
        raise SystemExit("trials contain non-finite values")
    classes = a.classes if a.classes is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= classes:
        raise SystemExit(f"labels must lie in [0, {classes})")

    out = pathlib.Path(a.manifest)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = out.with_suffix(".f32")
    labels = out.with_suffix(".labels")
    x.astype("<f4").tofile(payload)
    y.astype("<u2").tofile(labels)
    manifest = {
        "version": 1,
        "name": a.name or out.stem,
        "n_trials": int(x.shape[0]),
        "n_channels": int(x.shape[1]),
        "n_samples": int(x.shape[2]),
        "n_classes": classes,
        "sample_rate_hz": a.rate,
        "montage": a.montage,
        "payload": payload.name,
        "labels": labels.name,
    }
    out.write_text(json.dumps(manifest, indent=2))


if __name__ == "__main__":
    main()
