"""Converters from public archive layouts to the plain-text graph format."""
from __future__ import annotations

import gzip
import logging
import os

import numpy as np

log = logging.getLogger(__name__)

DATA_DIR = os.environ.get("SAUG_DATA", os.path.join(os.path.dirname(__file__), "..", "..", "data"))


def convert_linqs(content_file, cites_file, out_dir, compress_features: bool = True) -> dict:
    """Convert a LINQS ``.content``/``.cites`` pair (e.g. Cora).

    Nodes are numbered in ``.content`` order; classes are numbered by sorted
    class name.  Citations to papers missing from ``.content`` are skipped.
    """
    ids, rows, names = {}, [], []
    with open(content_file) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids[parts[0]] = len(rows)
            rows.append(parts[1:-1])
            names.append(parts[-1])
    classes = sorted(set(names))
    labels = np.array([classes.index(c) for c in names], dtype=np.int64)

    pairs, skipped = [], 0
    with open(cites_file) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) < 2:
                continue
            if parts[0] not in ids or parts[1] not in ids:
                skipped += 1
                continue
            pairs.append((ids[parts[0]], ids[parts[1]]))
    if skipped:
        log.warning("skipped %d citations to unknown papers", skipped)

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "edges.txt"), "w") as fh:
        fh.writelines(f"{u} {v}\n" for u, v in pairs)
    feat_path = os.path.join(out_dir, "features.txt" + (".gz" if compress_features else ""))
    opener = gzip.open if compress_features else open
    with opener(feat_path, "wt") as fh:
        fh.writelines(" ".join(r) + "\n" for r in rows)
    np.savetxt(os.path.join(out_dir, "labels.txt"), labels, fmt="%d")
    return {"nodes": len(rows), "edge_lines": len(pairs), "classes": classes}


def dataset_path(name: str) -> str:
    return os.path.abspath(os.path.join(DATA_DIR, name))
