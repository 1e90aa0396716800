"""Convert standard benchmark dataset distributions into the gyrognn file layout.

Two source formats are handled:

  * planetoid citation pickles (ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index})
    as distributed for cora/citeseer/pubmed -> edges.txt, features.csv,
    labels.csv, splits/{train,val,test}.txt (the canonical transductive split).
  * the OpenFlights-derived airport graph (<name>.p, a pickled networkx graph
    with a 5-component 'feat' vector per node; column 4 is the population
    figure that defines the 4 label bins).

Output layout per dataset (what gyrognn.graphdata.load_dataset_dir expects):

    <out>/<name>/edges.txt        "u v" integer pairs, one undirected edge per line
    <out>/<name>/features.csv     headerless CSV, row i = node i
    <out>/<name>/labels.csv       headerless CSV, one int label per line
    <out>/<name>/splits/*.txt     optional fixed node-index files

This script needs scipy and networkx (only to unpickle the sources); the
package itself does not. Usage:

    python tools/convert_datasets.py --source /path/to/data --out data
"""

import argparse
import os
import pickle
import sys

import numpy as np


def read_index_file(path):
    return [int(line.strip()) for line in open(path)]


def load_planetoid(src_dir, name):
    objs = {}
    for part in ["x", "y", "tx", "ty", "allx", "ally", "graph"]:
        with open(os.path.join(src_dir, "ind.%s.%s" % (name, part)), "rb") as f:
            objs[part] = pickle.load(f, encoding="latin1")
    test_idx = read_index_file(os.path.join(src_dir, "ind.%s.test.index" % name))
    test_range = np.sort(test_idx)

    import scipy.sparse as sp

    features = sp.vstack((objs["allx"], objs["tx"])).tolil()
    features[test_idx, :] = features[test_range, :]
    features = np.asarray(features.todense(), dtype=np.float64)

    labels_onehot = np.vstack((objs["ally"], objs["ty"]))
    labels_onehot[test_idx, :] = labels_onehot[test_range, :]
    labels = np.argmax(labels_onehot, axis=1)

    n = features.shape[0]
    edges = set()
    for u, nbrs in objs["graph"].items():
        for v in nbrs:
            if u == v:
                continue
            edges.add((min(u, v), max(u, v)))
    edges = sorted(edges)

    n_train = objs["y"].shape[0]
    splits = {
        "train": list(range(n_train)),
        "val": list(range(n_train, n_train + 500)),
        "test": test_range.tolist(),
    }
    return n, edges, features, labels, splits


def load_airport(src_dir, name):
    # pickled networkx graph; each node carries feat = [4 raw features, population]
    g = pickle.load(open(os.path.join(src_dir, "%s.p" % name), "rb"))
    nodes = list(g._node.keys())
    index = {u: i for i, u in enumerate(nodes)}
    feats = np.array([g._node[u]["feat"] for u in nodes], dtype=np.float64)

    edges = set()
    for u, nbrs in g._adj.items():
        for v in nbrs:
            if u == v:
                continue  # one self-loop in the source; normalization re-adds its own
            a, b = index[u], index[v]
            edges.add((min(a, b), max(a, b)))
    edges = sorted(edges)

    population = feats[:, 4]
    labels = np.digitize(population, [7.0 / 7, 8.0 / 7, 9.0 / 7])
    labels = labels - labels.min()

    # benchmark protocol: raw 4 features + one-hot of min(degree,5) + bias column
    deg = np.zeros(len(nodes), dtype=np.int64)
    for a, b in edges:
        deg[a] += 1
        deg[b] += 1
    deg = np.minimum(deg, 5)
    onehot = np.eye(6)[deg]
    const = np.ones((len(nodes), 1))
    features = np.concatenate([feats[:, :4], onehot, const], axis=1)
    return len(nodes), edges, features, labels, {}


def write_dataset(out_dir, n, edges, features, labels, splits):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "edges.txt"), "w") as f:
        for u, v in edges:
            f.write("%d %d\n" % (u, v))
    with open(os.path.join(out_dir, "features.csv"), "w") as f:
        for row in features:
            if np.all(row == np.round(row)):
                f.write(",".join("%d" % x for x in row) + "\n")
            else:
                f.write(",".join(repr(float(x)) for x in row) + "\n")
    with open(os.path.join(out_dir, "labels.csv"), "w") as f:
        for y in labels:
            f.write("%d\n" % y)
    if splits:
        os.makedirs(os.path.join(out_dir, "splits"), exist_ok=True)
        for part, idx in splits.items():
            with open(os.path.join(out_dir, "splits", "%s.txt" % part), "w") as f:
                for i in idx:
                    f.write("%d\n" % i)
    print(
        "%s: %d nodes, %d edges, %d features, %d classes"
        % (out_dir, n, len(edges), features.shape[1], len(np.unique(labels)))
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--source", required=True, help="directory holding <name>/ source dirs")
    ap.add_argument("--out", default="data", help="output root")
    ap.add_argument("--datasets", nargs="+", default=["cora", "airport"])
    args = ap.parse_args()

    for name in args.datasets:
        src = os.path.join(args.source, name)
        if os.path.exists(os.path.join(src, "ind.%s.graph" % name)):
            n, edges, feats, labels, splits = load_planetoid(src, name)
        elif os.path.exists(os.path.join(src, "%s.p" % name)):
            n, edges, feats, labels, splits = load_airport(src, name)
        else:
            print("no recognized source files under %s" % src, file=sys.stderr)
            return 1
        write_dataset(os.path.join(args.out, name), n, edges, feats, labels, splits)
    return 0


if __name__ == "__main__":
    sys.exit(main())
