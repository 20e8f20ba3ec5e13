#!/usr/bin/env python3
"""Convert a TU-format graph classification dataset into the ddm directory layout.

    tu_to_ddm.py <tu_dir> <name> <out_dir> [--folds 10] [--seed 0]

Reads <name>_A.txt, <name>_graph_indicator.txt, <name>_graph_labels.txt and,
when present, <name>_node_labels.txt. Node labels become labels.tsv and the
dataset is featurized with "node_label"; otherwise "degree" is used.
Folds are stratified by graph label.
"""
import argparse
import json
import os
import random
from collections import defaultdict


def read_ints(path):
    with open(path) as f:
        return [[int(v) for v in line.replace(",", " ").split()] for line in f if line.strip()]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("tu_dir")
    ap.add_argument("name")
    ap.add_argument("out_dir")
    ap.add_argument("--folds", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    def p(suffix):
        return os.path.join(args.tu_dir, f"{args.name}_{suffix}.txt")

    indicator = [r[0] - 1 for r in read_ints(p("graph_indicator"))]
    raw_labels = [r[0] for r in read_ints(p("graph_labels"))]
    label_map = {v: i for i, v in enumerate(sorted(set(raw_labels)))}
    graph_labels = [label_map[v] for v in raw_labels]

    num_graphs = len(graph_labels)
    offsets = [None] * num_graphs
    sizes = [0] * num_graphs
    for node, g in enumerate(indicator):
        if offsets[g] is None:
            offsets[g] = node
        sizes[g] += 1

    edges = defaultdict(set)
    for src, dst in read_ints(p("A")):
        s, d = src - 1, dst - 1
        g = indicator[s]
        a, b = s - offsets[g], d - offsets[g]
        if a != b:
            edges[g].add((min(a, b), max(a, b)))

    node_labels = None
    if os.path.exists(p("node_labels")):
        node_labels = [r[0] for r in read_ints(p("node_labels"))]
        nl_map = {v: i for i, v in enumerate(sorted(set(node_labels)))}
        node_labels = [nl_map[v] for v in node_labels]

    os.makedirs(args.out_dir, exist_ok=True)
    meta = {
        "task": "graph",
        "num_classes": len(label_map),
        "feature_dim": "node_label" if node_labels is not None else "degree",
    }
    with open(os.path.join(args.out_dir, "meta.json"), "w") as f:
        json.dump(meta, f)
        f.write("\n")
    with open(os.path.join(args.out_dir, "graphs.tsv"), "w") as f:
        for g in range(num_graphs):
            f.write(f"{g}\t{sizes[g]}\t{graph_labels[g]}\n")
    with open(os.path.join(args.out_dir, "edges.tsv"), "w") as f:
        for g in range(num_graphs):
            for a, b in sorted(edges[g]):
                f.write(f"{g}\t{a}\t{b}\n")
    if node_labels is not None:
        with open(os.path.join(args.out_dir, "labels.tsv"), "w") as f:
            for node, g in enumerate(indicator):
                f.write(f"{g}\t{node - offsets[g]}\t{node_labels[node]}\n")

    rng = random.Random(args.seed)
    by_class = defaultdict(list)
    for g, y in enumerate(graph_labels):
        by_class[y].append(g)
    fold = [0] * num_graphs
    cursor = 0
    for y in sorted(by_class):
        members = by_class[y]
        rng.shuffle(members)
        for g in members:
            fold[g] = cursor % args.folds
            cursor += 1
    with open(os.path.join(args.out_dir, "splits.tsv"), "w") as f:
        for g in range(num_graphs):
            f.write(f"{g}\t{fold[g]}\n")


if __name__ == "__main__":
    main()
