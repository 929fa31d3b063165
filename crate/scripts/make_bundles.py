#!/usr/bin/env python3
"""Convert public Cora / Citeseer releases into fedgl text bundles.

Sources:
  * Cora: the raw LINQS release (cora.content / cora.cites).
  * Citeseer: the Planetoid release (ind.citeseer.{x,y,tx,ty,allx,ally,graph,test.index}),
    including its canonical split (first 120 nodes train, next 500 val, test.index test).

Both releases are shipped inside the `pgl` wheel on PyPI, which is the easiest way to
obtain them without direct network access to the original hosts:

    pip download --no-deps pgl==2.2.6 -d /tmp/pgl
    python3 scripts/make_bundles.py --wheel /tmp/pgl/pgl-*.whl --out data

Alternatively point --cora-dir / --citeseer-dir at directories holding the raw files.

Bundle layout (all files start with the header line `fedgl-format v1`):
  edges.txt     one undirected edge per line: `u v`
  features.txt  `sparse N d` line, then `node column value` triplets
  labels.txt    `classes C` line, then `node class` lines (unlabeled nodes omitted)
  split.txt     optional, `node train|val|test` lines
"""

import argparse
import glob
import os
import pickle
import sys
import tempfile
import zipfile

HEADER = "fedgl-format v1\n"


def write_bundle(out, n, d, edges, triplets, labels, num_classes, split=None):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "edges.txt"), "w") as f:
        f.write(HEADER)
        for u, v in edges:
            f.write(f"{u} {v}\n")
    with open(os.path.join(out, "features.txt"), "w") as f:
        f.write(HEADER)
        f.write(f"sparse {n} {d}\n")
        for node, col, val in triplets:
            f.write(f"{node} {col} {val:g}\n")
    with open(os.path.join(out, "labels.txt"), "w") as f:
        f.write(HEADER)
        f.write(f"classes {num_classes}\n")
        for node, cls in labels:
            f.write(f"{node} {cls}\n")
    if split is not None:
        with open(os.path.join(out, "split.txt"), "w") as f:
            f.write(HEADER)
            for node, part in split:
                f.write(f"{node} {part}\n")


def convert_cora(src, out):
    ids = {}
    triplets = []
    raw_labels = []
    with open(os.path.join(src, "cora.content")) as f:
        for line in f:
            parts = line.split()
            node = len(ids)
            ids[parts[0]] = node
            for col, v in enumerate(parts[1:-1]):
                if v != "0":
                    triplets.append((node, col, float(v)))
            raw_labels.append(parts[-1])
            d = len(parts) - 2
    classes = sorted(set(raw_labels))
    labels = [(i, classes.index(c)) for i, c in enumerate(raw_labels)]
    edges = []
    with open(os.path.join(src, "cora.cites")) as f:
        for line in f:
            a, b = line.split()
            edges.append((ids[a], ids[b]))
    write_bundle(out, len(ids), d, edges, triplets, labels, len(classes))
    print(f"cora: N={len(ids)} edge_lines={len(edges)} d={d} C={len(classes)}")


def convert_citeseer(src, out):
    import numpy as np
    import scipy.sparse as sp

    def load(name):
        with open(os.path.join(src, f"ind.citeseer.{name}"), "rb") as f:
            return pickle.load(f, encoding="latin1")

    x, y, tx, ty, allx, ally, graph = (load(n) for n in ["x", "y", "tx", "ty", "allx", "ally", "graph"])
    with open(os.path.join(src, "ind.citeseer.test.index")) as f:
        test_idx = [int(l) for l in f if l.strip()]
    test_sorted = np.sort(test_idx)
    full = np.arange(test_sorted.min(), test_sorted.max() + 1)
    tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
    tx_ext[test_sorted - full.min(), :] = tx
    ty_ext = np.zeros((len(full), ty.shape[1]))
    ty_ext[test_sorted - full.min(), :] = ty
    feats = sp.vstack((allx, tx_ext)).tolil()
    feats[test_idx, :] = feats[test_sorted, :]
    lab = np.vstack((ally, ty_ext))
    lab[test_idx, :] = lab[test_sorted, :]
    feats = feats.tocsr()
    feats.sort_indices()
    n, d = feats.shape

    coo = feats.tocoo()
    order = np.lexsort((coo.col, coo.row))
    triplets = [(int(coo.row[i]), int(coo.col[i]), float(coo.data[i])) for i in order]
    labels = [(i, int(np.argmax(lab[i]))) for i in range(n) if lab[i].sum() > 0]

    seen = set()
    edges = []
    for u in sorted(graph):
        for v in graph[u]:
            key = (min(u, v), max(u, v))
            if key not in seen:
                seen.add(key)
                edges.append(key)

    split = [(i, "train") for i in range(len(y))]
    split += [(i, "val") for i in range(len(y), len(y) + 500)]
    split += [(int(i), "test") for i in sorted(test_sorted)]
    write_bundle(out, n, d, edges, triplets, labels, lab.shape[1], split)
    print(f"citeseer: N={n} edge_lines={len(edges)} d={d} C={lab.shape[1]} labeled={len(labels)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--wheel", help="path to a pgl wheel containing pgl/data/{cora,citeseer}")
    ap.add_argument("--cora-dir")
    ap.add_argument("--citeseer-dir")
    ap.add_argument("--out", default="data")
    args = ap.parse_args()

    cora_dir, citeseer_dir = args.cora_dir, args.citeseer_dir
    if args.wheel:
        tmp = tempfile.mkdtemp()
        wheel = glob.glob(args.wheel)[0]
        with zipfile.ZipFile(wheel) as z:
            for name in z.namelist():
                if name.startswith("pgl/data/cora/") or name.startswith("pgl/data/citeseer/"):
                    z.extract(name, tmp)
        cora_dir = cora_dir or os.path.join(tmp, "pgl/data/cora")
        citeseer_dir = citeseer_dir or os.path.join(tmp, "pgl/data/citeseer")
    if not (cora_dir or citeseer_dir):
        ap.error("need --wheel or a source directory")
    if cora_dir:
        convert_cora(cora_dir, os.path.join(args.out, "cora"))
    if citeseer_dir:
        convert_citeseer(citeseer_dir, os.path.join(args.out, "citeseer"))


if __name__ == "__main__":
    sys.exit(main())
