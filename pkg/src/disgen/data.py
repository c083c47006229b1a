"""Graph records, TU flat-file ingestion, size-based splits, batching.

TU format, as written by the serializer (parsers accept extra whitespace):

    <DS>_A.txt               "u, v" per line, 1-indexed node ids
    <DS>_graph_indicator.txt  one 1-indexed graph id per node line
    <DS>_graph_labels.txt     one integer per graph
    <DS>_node_labels.txt      optional, one integer per node
    <DS>_node_attributes.txt  optional, comma-separated reals per node

LF line endings, no trailing separators.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError, SplitError

log = logging.getLogger(__name__)


@dataclass
class GraphRecord:
    """One labeled graph: features X (N x d_f), undirected edges, class y."""

    id: int
    node_features: np.ndarray
    edges: list[tuple[int, int]]
    label: int

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        if self.node_features.ndim != 2 or self.num_nodes < 1:
            raise ContractError(f"graph {self.id}: bad feature matrix shape "
                                f"{self.node_features.shape}")
        canon = set()
        for u, v in self.edges:
            if u == v:
                raise ContractError(f"graph {self.id}: self-loop at node {u}")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise ContractError(f"graph {self.id}: edge ({u},{v}) out of range")
            key = (min(u, v), max(u, v))
            if key in canon:
                raise ContractError(f"graph {self.id}: duplicate edge {key}")
            canon.add(key)
        self.edges = sorted(canon)

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, v: int) -> list[int]:
        out = [b for a, b in self.edges if a == v] + [a for a, b in self.edges if b == v]
        return sorted(out)

    def __eq__(self, other):
        return (isinstance(other, GraphRecord)
                and self.id == other.id
                and self.label == other.label
                and self.edges == other.edges
                and self.node_features.shape == other.node_features.shape
                and np.array_equal(self.node_features, other.node_features))


@dataclass
class DatasetSplit:
    train: list[int]
    validation: list[int]
    small_test: list[int]
    large_test: list[int]

    def all_ids(self) -> list[int]:
        return self.train + self.validation + self.small_test + self.large_test


# ----------------------------------------------------------------------
# TU flat-file parsing


def _read_lines(path):
    with open(path, "r", encoding="ascii") as fh:
        return fh.read().split("\n")


def _strip_trailing_blank(lines, path):
    # a single trailing newline yields one empty final element
    while lines and lines[-1] == "":
        lines = lines[:-1]
    for i, ln in enumerate(lines):
        if ln.strip() == "":
            raise FormatError(path, i + 1, "blank line inside file")
    return lines


def parse_tu_dataset(directory: str, name: str) -> list[GraphRecord]:
    """Parse one TU-format dataset into 0-indexed GraphRecords.

    Node labels (when present) are one-hot encoded over the sorted label
    alphabet; attributes are appended after the one-hot block. Graph labels
    are remapped onto a dense 0..C-1 range in sorted order. Directed
    duplicate edges collapse to one undirected pair; self-loops are dropped.
    """
    def path(suffix):
        return os.path.join(directory, f"{name}_{suffix}.txt")

    ind_path = path("graph_indicator")
    indicator = _strip_trailing_blank(_read_lines(ind_path), ind_path)
    node_graph = []
    for i, ln in enumerate(indicator):
        try:
            node_graph.append(int(ln.strip()))
        except ValueError:
            raise FormatError(ind_path, i + 1, f"bad graph id {ln!r}") from None
    n_nodes = len(node_graph)
    graph_ids = sorted(set(node_graph))
    if graph_ids != list(range(1, len(graph_ids) + 1)):
        raise FormatError(ind_path, 1, "graph ids must be contiguous from 1")
    n_graphs = len(graph_ids)

    # per-graph local node indexing, preserving file order
    local_index = np.zeros(n_nodes, dtype=np.int64)
    counts = {g: 0 for g in graph_ids}
    for i, g in enumerate(node_graph):
        local_index[i] = counts[g]
        counts[g] += 1

    lab_path = path("graph_labels")
    label_lines = _strip_trailing_blank(_read_lines(lab_path), lab_path)
    if len(label_lines) != n_graphs:
        raise FormatError(lab_path, len(label_lines),
                          f"{len(label_lines)} labels for {n_graphs} graphs")
    raw_labels = []
    for i, ln in enumerate(label_lines):
        try:
            raw_labels.append(int(ln.strip()))
        except ValueError:
            raise FormatError(lab_path, i + 1, f"bad label {ln!r}") from None
    label_map = {lab: k for k, lab in enumerate(sorted(set(raw_labels)))}

    a_path = path("A")
    edge_lines = _strip_trailing_blank(_read_lines(a_path), a_path)
    edges_per_graph: dict[int, set[tuple[int, int]]] = {g: set() for g in graph_ids}
    for i, ln in enumerate(edge_lines):
        parts = ln.split(",")
        if len(parts) != 2:
            raise FormatError(a_path, i + 1, f"expected 'u, v', got {ln!r}")
        try:
            u, v = int(parts[0].strip()), int(parts[1].strip())
        except ValueError:
            raise FormatError(a_path, i + 1, f"bad node id in {ln!r}") from None
        if not (1 <= u <= n_nodes and 1 <= v <= n_nodes):
            raise FormatError(a_path, i + 1,
                              f"node {max(u, v)} missing from graph indicator")
        if node_graph[u - 1] != node_graph[v - 1]:
            raise FormatError(a_path, i + 1, f"edge ({u},{v}) crosses graphs")
        if u == v:
            continue
        g = node_graph[u - 1]
        lu, lv = int(local_index[u - 1]), int(local_index[v - 1])
        edges_per_graph[g].add((min(lu, lv), max(lu, lv)))

    # optional node features
    onehot = None
    nl_path = path("node_labels")
    if os.path.exists(nl_path):
        nl_lines = _strip_trailing_blank(_read_lines(nl_path), nl_path)
        if len(nl_lines) != n_nodes:
            raise FormatError(nl_path, len(nl_lines),
                              f"{len(nl_lines)} node labels for {n_nodes} nodes")
        raw = []
        for i, ln in enumerate(nl_lines):
            try:
                raw.append(int(ln.strip()))
            except ValueError:
                raise FormatError(nl_path, i + 1, f"bad node label {ln!r}") from None
        alphabet = {lab: k for k, lab in enumerate(sorted(set(raw)))}
        onehot = np.zeros((n_nodes, len(alphabet)))
        for i, lab in enumerate(raw):
            onehot[i, alphabet[lab]] = 1.0

    attrs = None
    na_path = path("node_attributes")
    if os.path.exists(na_path):
        na_lines = _strip_trailing_blank(_read_lines(na_path), na_path)
        if len(na_lines) != n_nodes:
            raise FormatError(na_path, len(na_lines),
                              f"{len(na_lines)} attribute rows for {n_nodes} nodes")
        rows = []
        width = None
        for i, ln in enumerate(na_lines):
            try:
                row = [float(x.strip()) for x in ln.split(",")]
            except ValueError:
                raise FormatError(na_path, i + 1, f"bad attribute row {ln!r}") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(na_path, i + 1,
                                  f"row width {len(row)} != {width}")
            rows.append(row)
        attrs = np.asarray(rows, dtype=np.float64)

    if onehot is not None and attrs is not None:
        features = np.hstack([onehot, attrs])
    elif onehot is not None:
        features = onehot
    elif attrs is not None:
        features = attrs
    else:
        features = np.ones((n_nodes, 1))

    records = []
    for g in graph_ids:
        rows = [i for i in range(n_nodes) if node_graph[i] == g]
        records.append(GraphRecord(
            id=g - 1,
            node_features=features[rows],
            edges=sorted(edges_per_graph[g]),
            label=label_map[raw_labels[g - 1]],
        ))
    return records


def serialize_tu_dataset(records: list[GraphRecord], directory: str, name: str,
                         feature_mode: str = "attributes"):
    """Write records back out in TU format, bit-compatibly re-parseable.

    feature_mode selects how node_features are emitted: "attributes"
    (default) writes a _node_attributes.txt, "labels" writes a
    _node_labels.txt from one-hot rows, "none" writes neither.
    """
    os.makedirs(directory, exist_ok=True)

    def path(suffix):
        return os.path.join(directory, f"{name}_{suffix}.txt")

    offsets = {}
    total = 0
    for rec in records:
        offsets[rec.id] = total
        total += rec.num_nodes

    with open(path("graph_indicator"), "w", encoding="ascii", newline="") as fh:
        for k, rec in enumerate(records, start=1):
            fh.write(f"{k}\n" * rec.num_nodes)

    with open(path("graph_labels"), "w", encoding="ascii", newline="") as fh:
        for rec in records:
            fh.write(f"{rec.label}\n")

    with open(path("A"), "w", encoding="ascii", newline="") as fh:
        for k, rec in enumerate(records):
            base = offsets[rec.id]
            for u, v in rec.edges:
                fh.write(f"{base + u + 1}, {base + v + 1}\n")
                fh.write(f"{base + v + 1}, {base + u + 1}\n")

    if feature_mode == "attributes":
        with open(path("node_attributes"), "w", encoding="ascii", newline="") as fh:
            for rec in records:
                for row in rec.node_features:
                    fh.write(", ".join(repr(float(x)) for x in row) + "\n")
    elif feature_mode == "labels":
        with open(path("node_labels"), "w", encoding="ascii", newline="") as fh:
            for rec in records:
                for row in rec.node_features:
                    nz = np.flatnonzero(row)
                    if nz.size != 1 or row[nz[0]] != 1.0:
                        raise ContractError(
                            "feature_mode='labels' requires one-hot rows")
                    fh.write(f"{int(nz[0])}\n")
    elif feature_mode != "none":
        raise ContractError(f"unknown feature_mode {feature_mode!r}")


# ----------------------------------------------------------------------
# splitting and upsampling


def split_by_size(records: list[GraphRecord], seed: int,
                  ratios=(0.70, 0.15, 0.15)) -> DatasetSplit:
    """Size-sorted split: 70:15:15 per class inside the smallest-50% pool,
    large test filled per class from the largest graph downward until its
    per-class counts match the small test set.

    Ties at the pool boundary resolve by stable original id order.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"ratios must sum to 1, got {ratios}")
    by_size = sorted(records, key=lambda r: (r.num_nodes, r.id))
    n_pool = len(records) // 2
    pool = by_size[:n_pool]
    tail = by_size[n_pool:]

    classes = sorted({r.label for r in records})
    rng = np.random.default_rng(seed)

    train, val, small = [], [], []
    small_counts = {}
    for cls in classes:
        members = [r.id for r in pool if r.label == cls]
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        m = len(shuffled)
        n_train = int(np.floor(ratios[0] * m))
        rest = m - n_train
        n_val = rest // 2
        train += shuffled[:n_train]
        val += shuffled[n_train:n_train + n_val]
        small += shuffled[n_train + n_val:]
        small_counts[cls] = rest - n_val

    large = []
    for cls in classes:
        want = small_counts[cls]
        candidates = [r.id for r in reversed(tail) if r.label == cls]
        if len(candidates) < want:
            raise SplitError(
                f"class {cls}: only {len(candidates)} graphs outside the "
                f"smallest-50% pool, need {want} to match the small test set")
        large += candidates[:want]

    return DatasetSplit(train=train, validation=val,
                        small_test=small, large_test=sorted(large))


def upsample_class(train_ids: list[int], records_by_id: dict[int, GraphRecord],
                   cls: int, ratio: int, seed: int = 0) -> list[int]:
    """Repeat every id of the target class `ratio` times, then reshuffle."""
    if ratio < 1 or int(ratio) != ratio:
        raise ContractError(f"upsample ratio must be an integer >= 1, got {ratio}")
    if not any(records_by_id[i].label == cls for i in train_ids):
        log.warning("upsample_class: class %d absent from the training ids; no-op", cls)
        return list(train_ids)
    out = []
    for i in train_ids:
        out.extend([i] * (ratio if records_by_id[i].label == cls else 1))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(out))
    return [out[k] for k in order]


# ----------------------------------------------------------------------
# propagation operator and batch assembly


def normalize_adjacency(record: GraphRecord) -> np.ndarray:
    """Symmetric GCN operator D~^{-1/2} (A + I) D~^{-1/2} as a dense matrix."""
    n = record.num_nodes
    a = np.eye(n)
    for u, v in record.edges:
        a[u, v] = 1.0
        a[v, u] = 1.0
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * dinv[:, None] * dinv[None, :]


@dataclass
class BatchAssembly:
    """Block-diagonal stacking of b (graph, view1, view2) triples.

    Row/block order is fixed as [g1, g1^(1), g1^(2), ..., gb, gb^(1), gb^(2)];
    downstream hidden-representation stacks must preserve it.
    """

    graphs: list[GraphRecord]
    node_offsets: list[int]
    node_to_graph: np.ndarray
    labels: list[int] = field(default_factory=list)

    @property
    def num_graphs(self) -> int:
        return len(self.graphs)

    @property
    def total_nodes(self) -> int:
        return int(self.node_offsets[-1])

    def features(self) -> np.ndarray:
        return np.vstack([g.node_features for g in self.graphs])

    def block_adjacency(self) -> np.ndarray:
        out = np.zeros((self.total_nodes, self.total_nodes))
        for g, off in zip(self.graphs, self.node_offsets):
            n = g.num_nodes
            out[off:off + n, off:off + n] = normalize_adjacency(g)
        return out

    def pooling_matrix(self) -> np.ndarray:
        """G x total_nodes matrix averaging each graph's node rows."""
        out = np.zeros((self.num_graphs, self.total_nodes))
        for k, (g, off) in enumerate(zip(self.graphs, self.node_offsets)):
            out[k, off:off + g.num_nodes] = 1.0 / g.num_nodes
        return out

    def global_edges(self) -> list[tuple[int, int]]:
        out = []
        for g, off in zip(self.graphs, self.node_offsets):
            out.extend((off + u, off + v) for u, v in g.edges)
        return out


def assemble_batch(triples) -> BatchAssembly:
    """Flatten ViewTriples into one block-diagonal assembly."""
    if not triples:
        raise ContractError("assemble_batch: empty triple list")
    graphs = []
    labels = []
    for t in triples:
        graphs.extend([t.original, t.size_invariant, t.task_invariant])
        labels.append(t.original.label)
    offsets = [0]
    for g in graphs:
        offsets.append(offsets[-1] + g.num_nodes)
    node_to_graph = np.concatenate(
        [np.full(g.num_nodes, k, dtype=np.int64) for k, g in enumerate(graphs)])
    return BatchAssembly(graphs=graphs, node_offsets=offsets,
                         node_to_graph=node_to_graph, labels=labels)


def assemble_plain(graphs: list[GraphRecord]) -> BatchAssembly:
    """Assembly over bare graphs (no views); used for pretraining and eval."""
    if not graphs:
        raise ContractError("assemble_plain: empty graph list")
    offsets = [0]
    for g in graphs:
        offsets.append(offsets[-1] + g.num_nodes)
    node_to_graph = np.concatenate(
        [np.full(g.num_nodes, k, dtype=np.int64) for k, g in enumerate(graphs)])
    return BatchAssembly(graphs=list(graphs), node_offsets=offsets,
                         node_to_graph=node_to_graph,
                         labels=[g.label for g in graphs])
