"""Typed-tree data model, cherry/pendant census, and annotated Newick IO.

Trees are stored as flat node arrays with parent ids; children lists are
derived on demand.  A node's arity determines its kind: 0 children = leaf,
1 = unary (type-change marker), 2 = binary branch-point.  Trees are
immutable after construction and all operations here are pure functions.

Unary node convention: a unary node carries the type the lineage had
*before* the change, so its type differs from its child's type at the
instant of the event.  Census topology ignores unary nodes entirely.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NewickParseError, TreeStructureError
from .orders import IndexOrder, generic_lex, get_order

__all__ = ["TypedTree", "Census", "census", "contract_unary",
           "serialize", "parse"]


class TypedTree:
    """Rooted tree with typed nodes and optional node times.

    Args:
        node_types: 1-based type per node, values in 1..k.
        parents: parent id per node, -1 for the root.
        k: number of types.
        times: per-node time coordinate (birth time of the node's lineage
            segment); omit for discrete trees.
    """

    __slots__ = ("k", "node_types", "parents", "times", "_children", "_canon")

    def __init__(self, node_types, parents, k, times=None):
        self.k = int(k)
        self.node_types = np.asarray(node_types, dtype=np.int32).copy()
        self.parents = np.asarray(parents, dtype=np.int64).copy()
        self.times = None if times is None else np.asarray(times, dtype=float).copy()
        self.node_types.setflags(write=False)
        self.parents.setflags(write=False)
        if self.times is not None:
            self.times.setflags(write=False)
        self._children = None
        self._canon = None
        self._validate()

    # -- structure ---------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.node_types)

    @property
    def is_discrete(self) -> bool:
        return self.times is None

    @property
    def root(self) -> int:
        return int(np.flatnonzero(self.parents == -1)[0])

    def children(self) -> list[list[int]]:
        if self._children is None:
            ch = [[] for _ in range(self.n_nodes)]
            for i, p in enumerate(self.parents):
                if p >= 0:
                    ch[p].append(i)
            self._children = ch
        return self._children

    def leaves(self) -> np.ndarray:
        ch = self.children()
        return np.array([i for i in range(self.n_nodes) if not ch[i]], dtype=int)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    def kind(self, i: int) -> str:
        n = len(self.children()[i])
        if self.parents[i] == -1:
            return "root"
        return {0: "leaf", 1: "unary", 2: "binary"}[n]

    def _validate(self):
        n = self.n_nodes
        if n == 0:
            raise TreeStructureError("empty tree")
        if len(self.parents) != n or (self.times is not None and len(self.times) != n):
            raise TreeStructureError("node array lengths disagree")
        roots = np.flatnonzero(self.parents == -1)
        if len(roots) != 1:
            raise TreeStructureError(f"expected exactly one root, found {len(roots)}")
        if np.any((self.parents < -1) | (self.parents >= n)):
            raise TreeStructureError("parent id out of range")
        if np.any((self.node_types < 1) | (self.node_types > self.k)):
            bad = int(np.flatnonzero((self.node_types < 1) | (self.node_types > self.k))[0])
            raise TreeStructureError(
                f"node {bad} has type {self.node_types[bad]} outside 1..{self.k}")
        # acyclicity: every node must reach the root
        depth = np.full(n, -1, dtype=np.int64)
        depth[roots[0]] = 0
        for i in range(n):
            trail = []
            j = i
            while depth[j] < 0:
                trail.append(j)
                j = self.parents[j]
                if len(trail) > n:
                    raise TreeStructureError("cycle in parent links")
            for step, node in enumerate(reversed(trail)):
                depth[node] = depth[j] + step + 1
        for i, c in enumerate(self.children()):
            if len(c) > 2:
                raise TreeStructureError(f"node {i} has {len(c)} children (max 2)")
        if self.times is not None:
            ok = self.parents < 0
            bad = ~ok & (self.times < self.times[np.maximum(self.parents, 0)] - 1e-12)
            if np.any(bad):
                raise TreeStructureError("child time precedes parent time")

    # -- equality (embedding-insensitive, times compared within 1e-9) -------

    def _canonical(self):
        """(shape+type string, node ids in canonical DFS order).  Sibling
        order is normalized by (encoded subtree, time), so isomorphic
        trees produce identical strings and comparable time vectors."""
        if self._canon is None:
            ch = self.children()

            def enc(i):
                t = int(self.node_types[i])
                tm = 0.0 if self.times is None else float(self.times[i])
                if not ch[i]:
                    return f"{t}", [i], tm
                kids = sorted((enc(c) for c in ch[i]), key=lambda e: (e[0], e[2]))
                inner = ",".join(e[0] for e in kids)
                order = [i]
                for e in kids:
                    order.extend(e[1])
                return f"({inner}){t}", order, tm

            s, order, _ = enc(self.root)
            self._canon = (s, order)
        return self._canon

    def __eq__(self, other):
        if not isinstance(other, TypedTree):
            return NotImplemented
        if (self.k != other.k or self.is_discrete != other.is_discrete
                or self._canonical()[0] != other._canonical()[0]):
            return False
        if self.is_discrete:
            return True
        ta = self.times[self._canonical()[1]]
        tb = other.times[other._canonical()[1]]
        return bool(np.allclose(ta, tb, rtol=1e-9, atol=1e-12))

    def __hash__(self):
        return hash((self.k, self.is_discrete, self._canonical()[0]))

    def __repr__(self):
        return (f"TypedTree(k={self.k}, nodes={self.n_nodes}, "
                f"leaves={self.n_leaves}, discrete={self.is_discrete})")


@dataclass(frozen=True)
class Census:
    """Leaf, cherry, and pendant counts of one tree, in a fixed index order."""

    k: int
    leaf_counts: np.ndarray
    cherry_counts: np.ndarray
    pendant_counts: np.ndarray
    order: IndexOrder = field(compare=False)

    def __post_init__(self):
        for name in ("leaf_counts", "cherry_counts", "pendant_counts"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=np.int64))
        if (len(self.leaf_counts) != self.k
                or len(self.cherry_counts) != self.order.n_cherries
                or len(self.pendant_counts) != self.order.n_pendants):
            raise ValueError("census vector lengths do not match k / order")
        if (np.any(self.leaf_counts < 0) or np.any(self.cherry_counts < 0)
                or np.any(self.pendant_counts < 0)):
            raise ValueError("census counts must be nonnegative")
        n = int(self.leaf_counts.sum())
        if n >= 2 and 2 * int(self.cherry_counts.sum()) + int(self.pendant_counts.sum()) != n:
            raise ValueError(
                "leaf partition identity violated: "
                f"2*{self.cherry_counts.sum()} + {self.pendant_counts.sum()} != {n}")

    @property
    def n_leaves(self) -> int:
        return int(self.leaf_counts.sum())

    def x_vector(self) -> np.ndarray:
        """Combined cherry+pendant count vector in this census's order."""
        return np.concatenate([self.cherry_counts, self.pendant_counts]).astype(float)

    def reordered(self, tag: str) -> "Census":
        new_order = get_order(self.k, tag)
        perm = self.order.permutation_to(new_order)
        x = np.concatenate([self.cherry_counts, self.pendant_counts])[perm]
        nc = new_order.n_cherries
        return Census(self.k, self.leaf_counts, x[:nc], x[nc:], new_order)

    # -- CSV ----------------------------------------------------------------

    def csv_header(self) -> str:
        cols = ["k"] + [f"N_{i}" for i in range(1, self.k + 1)]
        cols += [f"C_{e}_{j1}{j2}" for (e, j1, j2) in self.order.cherries]
        cols += [f"L_{e}_{m}" for (e, m) in self.order.pendants]
        return ",".join(cols)

    def csv_row(self) -> str:
        vals = [self.k, *self.leaf_counts, *self.cherry_counts, *self.pendant_counts]
        return ",".join(str(int(v)) for v in vals)

    def to_csv(self) -> str:
        return self.csv_header() + "\n" + self.csv_row() + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "Census":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if len(lines) < 2:
            raise ValueError("census CSV needs a header line and a data line")
        vals = [int(float(v)) for v in lines[1].split(",")]
        k = vals[0]
        order = generic_lex(k)
        nl, nc = k, order.n_cherries
        expected = 1 + nl + nc + order.n_pendants
        if len(vals) != expected:
            raise ValueError(f"census CSV row has {len(vals)} fields, expected {expected}")
        return cls(k, vals[1:1 + nl], vals[1 + nl:1 + nl + nc], vals[1 + nl + nc:], order)


def census(tree: TypedTree, order: str = "generic_lex") -> Census:
    """Count leaves by type, cherries by (branch type, leaf-type pair), and
    pendants by (branch type, leaf type).

    Topology is defined by binary branch-points only: unary nodes are
    contracted before classifying.  A cherry is a binary node whose two
    children are both leaves; a pendant is a leaf whose sibling is not a
    leaf, typed by its parent branch-point's type.
    """
    t = contract_unary(tree)
    idx = get_order(tree.k, order)
    leaf_counts = np.zeros(tree.k, dtype=np.int64)
    cherries = np.zeros(idx.n_cherries, dtype=np.int64)
    pendants = np.zeros(idx.n_pendants, dtype=np.int64)
    ch = t.children()
    for i in range(t.n_nodes):
        kids = ch[i]
        if not kids:
            leaf_counts[t.node_types[i] - 1] += 1
            continue
        if len(kids) != 2:
            raise TreeStructureError("unary node survived contraction")
        a, b = kids
        a_leaf, b_leaf = not ch[a], not ch[b]
        ell = int(t.node_types[i])
        if a_leaf and b_leaf:
            j1, j2 = sorted((int(t.node_types[a]), int(t.node_types[b])))
            cherries[idx.cherry_pos[(ell, j1, j2)]] += 1
        elif a_leaf or b_leaf:
            m = int(t.node_types[a if a_leaf else b])
            pendants[idx.pendant_pos[(ell, m)]] += 1
    return Census(tree.k, leaf_counts, cherries, pendants, idx)


def contract_unary(tree: TypedTree) -> TypedTree:
    """Drop every node with exactly one child, splicing its chains into
    single edges.  Binary-node and leaf types and times are preserved; a
    single-child root chain collapses onto its first kept descendant."""
    ch = tree.children()
    keep = [i for i in range(tree.n_nodes) if len(ch[i]) != 1]
    if len(keep) == tree.n_nodes:
        return tree
    remap = {old: new for new, old in enumerate(keep)}
    parents = np.empty(len(keep), dtype=np.int64)
    for new, old in enumerate(keep):
        p = tree.parents[old]
        while p != -1 and len(ch[p]) == 1:
            p = tree.parents[p]
        parents[new] = -1 if p == -1 else remap[p]
    times = None if tree.times is None else tree.times[keep]
    return TypedTree(tree.node_types[keep], parents, tree.k, times)


# ---------------------------------------------------------------------------
# Annotated Newick
# ---------------------------------------------------------------------------
#
# Grammar (BEAST-style annotations):
#   tree    := clade ";"
#   clade   := [ "(" clade ("," clade)* ")" ] [label] [annot] [":" number]
#   annot   := "[&" key "=" value ("," key "=" value)* "]"
#
# Every node must carry a `type` annotation, except a redundant outer
# wrapper: a root with exactly one child and no label/annotation/length is
# dropped on parsing (so `((A[&type=1],B[&type=1])[&type=1]);` is valid).


def serialize(tree: TypedTree) -> str:
    """Canonical annotated-Newick text. Deterministic: children appear in
    stored order and leaves are labelled t1, t2, ... in output order."""
    ann = [{"type": int(t)} for t in tree.node_types]
    return write_newick(tree.parents, ann, tree.times, tree.root)


def write_newick(parents, annotations, times, root) -> str:
    """Low-level Newick writer over raw arrays.

    ``annotations[i]`` is a dict of key -> int for node i; `type` first.
    """
    n = len(parents)
    ch = [[] for _ in range(n)]
    for i, p in enumerate(parents):
        if p >= 0:
            ch[p].append(i)
    out = io.StringIO()
    counter = [0]

    def annot(i):
        items = sorted(annotations[i].items(), key=lambda kv: (kv[0] != "type", kv[0]))
        return "[&" + ",".join(f"{k}={v}" for k, v in items) + "]"

    def blen(i):
        if times is None:
            return ""
        t0 = 0.0 if parents[i] < 0 else times[parents[i]]
        d = float(times[i] - t0)
        return "" if (parents[i] < 0 and d == 0.0) else f":{d!r}"

    def emit(i):
        if ch[i]:
            out.write("(")
            for j, c in enumerate(ch[i]):
                if j:
                    out.write(",")
                emit(c)
            out.write(")")
        else:
            counter[0] += 1
            out.write(f"t{counter[0]}")
        out.write(annot(i))
        out.write(blen(i))

    emit(root)
    out.write(";")
    return out.getvalue()


class _Cursor:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def peek(self):
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self):
        c = self.peek()
        self.pos += 1
        return c

    def skip_ws(self):
        while self.peek() and self.peek() in " \t\r\n":
            self.pos += 1

    def location(self):
        upto = self.text[:self.pos]
        line = upto.count("\n") + 1
        col = self.pos - (upto.rfind("\n") + 1)
        return line, col

    def error(self, msg):
        line, col = self.location()
        raise NewickParseError(msg, line, col)


def parse_newick(text: str):
    """Parse annotated Newick into raw arrays.

    Returns ``(parents, annotations, lengths, root)`` where ``lengths[i]``
    is the branch length above node i (NaN when absent) and
    ``annotations[i]`` maps annotation keys to ints.
    """
    cur = _Cursor(text)
    parents, annotations, lengths, labels = [], [], [], []

    def new_node(parent):
        parents.append(parent)
        annotations.append({})
        lengths.append(float("nan"))
        labels.append("")
        return len(parents) - 1

    def read_label():
        start = cur.pos
        while cur.peek() and cur.peek() not in "():,;[&]=":
            cur.take()
        return cur.text[start:cur.pos].strip()

    def read_number(what):
        start = cur.pos
        while cur.peek() and (cur.peek().isdigit() or cur.peek() in "+-.eE"):
            cur.take()
        tok = cur.text[start:cur.pos]
        try:
            return float(tok)
        except ValueError:
            cur.error(f"expected a number for {what}, got {tok!r}")

    def read_annotation(i):
        cur.take()  # [
        if cur.peek() != "&":
            cur.error("annotation must start with [&")
        cur.take()
        while True:
            key = read_label()
            if cur.peek() != "=":
                cur.error(f"annotation key {key!r} missing '='")
            cur.take()
            val = read_number(f"annotation {key!r}")
            if val != int(val):
                cur.error(f"annotation {key!r} must be an integer")
            annotations[i][key] = int(val)
            if cur.peek() == ",":
                cur.take()
                continue
            if cur.peek() == "]":
                cur.take()
                return
            cur.error("annotation not closed with ]")

    def read_clade(parent):
        cur.skip_ws()
        i = new_node(parent)
        if cur.peek() == "(":
            cur.take()
            read_clade(i)
            while True:
                cur.skip_ws()
                if cur.peek() == ",":
                    cur.take()
                    read_clade(i)
                elif cur.peek() == ")":
                    cur.take()
                    break
                else:
                    cur.error("expected ',' or ')' in clade")
        labels[i] = read_label()
        cur.skip_ws()
        if cur.peek() == "[":
            read_annotation(i)
        cur.skip_ws()
        if cur.peek() == ":":
            cur.take()
            lengths[i] = read_number("branch length")
        return i

    cur.skip_ws()
    if not cur.peek():
        cur.error("empty Newick input")
    root = read_clade(-1)
    cur.skip_ws()
    if cur.peek() != ";":
        cur.error("tree must end with ';'")
    cur.take()
    cur.skip_ws()
    if cur.peek():
        cur.error("trailing text after ';'")

    # drop a redundant unannotated single-child wrapper at the root
    kids = [i for i, p in enumerate(parents) if p == root]
    root_bare = (not annotations[root] and not labels[root]
                 and np.isnan(lengths[root]))
    if len(kids) == 1 and root_bare:
        keep = [i for i in range(len(parents)) if i != root]
        remap = {old: new for new, old in enumerate(keep)}
        parents = [(-1 if parents[i] == root else remap[parents[i]]) if parents[i] != -1 else -1
                   for i in keep]
        annotations = [annotations[i] for i in keep]
        lengths = [lengths[i] for i in keep]
        root = remap[kids[0]]

    return np.array(parents), annotations, np.array(lengths), root


def parse(text: str, k: int | None = None) -> TypedTree:
    """Parse annotated Newick into a TypedTree.

    Every node needs a ``[&type=<int>]`` annotation.  Branch lengths must
    be present on all non-root nodes or absent everywhere (discrete tree).
    ``k`` defaults to the largest type seen.
    """
    parents, annotations, lengths, root = parse_newick(text)
    n = len(parents)
    types = np.zeros(n, dtype=np.int32)
    for i in range(n):
        if "type" not in annotations[i]:
            raise NewickParseError(f"node without type (node index {i})")
        types[i] = annotations[i]["type"]
    if np.any(types < 1):
        raise NewickParseError("type out of range: types are 1-based")
    kk = int(types.max()) if k is None else int(k)
    if np.any(types > kk):
        raise NewickParseError(f"type out of range: found {types.max()} > k={kk}")

    non_root = np.array([i for i in range(n) if i != root], dtype=int)
    has_len = ~np.isnan(lengths[non_root]) if n > 1 else np.array([], dtype=bool)
    if n > 1 and has_len.any() and not has_len.all():
        raise NewickParseError("branch lengths must be on all edges or none")
    timed = bool(n == 1 and not np.isnan(lengths[root])) or bool(n > 1 and has_len.all())
    times = None
    if timed:
        times = np.zeros(n)
        times[root] = 0.0 if np.isnan(lengths[root]) else lengths[root]
        order = _topo_order(parents, root)
        for i in order:
            if i != root:
                times[i] = times[parents[i]] + lengths[i]
    return TypedTree(types, parents, kk, times)


def _topo_order(parents, root):
    n = len(parents)
    ch = [[] for _ in range(n)]
    for i, p in enumerate(parents):
        if p >= 0:
            ch[p].append(i)
    order, stack = [], [root]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(ch[i])
    return order
