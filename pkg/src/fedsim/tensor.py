"""Dense tensors, parameter trees and splittable deterministic randomness.

A *parameter tree* is either a leaf (a float64 ``numpy.ndarray``) or a branch
(a ``dict`` mapping names to subtrees). Branch iteration follows insertion
order, so every traversal below is deterministic. Arrays produced by the tree
operations are marked read-only and checked for NaN/Inf.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence, Union

import numpy as np

from .exceptions import EmptyTermList, IncongruentTrees, NonFiniteError

ParamTree = Union[np.ndarray, Mapping[str, "ParamTree"]]

__all__ = [
    "ParamTree",
    "Rng",
    "as_tensor",
    "check_finite",
    "is_congruent",
    "rng_split",
    "tree_add",
    "tree_equal",
    "tree_flatten",
    "tree_l2_norm",
    "tree_leaves",
    "tree_map",
    "tree_multimap",
    "tree_scale",
    "tree_sub",
    "tree_unflatten",
    "tree_weighted_sum",
    "tree_zeros_like",
    "tree_zip_map",
]


def as_tensor(data: Any) -> np.ndarray:
    """Copy ``data`` into a read-only, finite float64 array."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains NaN or Inf")
    arr.flags.writeable = False
    return arr


def check_finite(tree: ParamTree, what: str = "tree") -> None:
    for path, leaf in tree_flatten(tree):
        if not np.all(np.isfinite(leaf)):
            raise NonFiniteError(f"{what}: non-finite values at {path or '<root>'}")


def _is_branch(t: Any) -> bool:
    return isinstance(t, Mapping)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tree operation produced NaN or Inf")
    if arr.flags.writeable:
        arr.flags.writeable = False
    return arr


def tree_leaves(tree: ParamTree) -> list[np.ndarray]:
    return [leaf for _, leaf in tree_flatten(tree)]


def tree_flatten(tree: ParamTree, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    """Leaves in traversal order, keyed by ``/``-joined paths (root leaf -> ``""``)."""
    if _is_branch(tree):
        out: list[tuple[str, np.ndarray]] = []
        for key, sub in tree.items():
            out.extend(tree_flatten(sub, f"{prefix}/{key}" if prefix else str(key)))
        return out
    return [(prefix, np.asarray(tree))]


def tree_unflatten(items: Sequence[tuple[str, Any]]) -> ParamTree:
    """Inverse of :func:`tree_flatten`."""
    items = list(items)
    if len(items) == 1 and items[0][0] == "":
        return as_tensor(items[0][1])
    root: dict[str, Any] = {}
    for path, value in items:
        if not path:
            raise ValueError("root leaf mixed with branch entries")
        node = root
        *parents, last = path.split("/")
        for name in parents:
            node = node.setdefault(name, {})
            if not isinstance(node, dict):
                raise ValueError(f"path {path!r} passes through a leaf")
        if last in node:
            raise ValueError(f"duplicate path {path!r}")
        node[last] = as_tensor(value)
    return root


def _congruence_error(a: ParamTree, b: ParamTree, path: str) -> str | None:
    if _is_branch(a) != _is_branch(b):
        return f"leaf/branch mismatch at {path or '<root>'}"
    if _is_branch(a):
        if set(a.keys()) != set(b.keys()):
            return f"key mismatch at {path or '<root>'}: {list(a)} vs {list(b)}"
        for key in a:
            err = _congruence_error(a[key], b[key], f"{path}/{key}" if path else key)
            if err:
                return err
        return None
    sa, sb = np.shape(a), np.shape(b)
    if sa != sb:
        return f"shape mismatch at {path or '<root>'}: {sa} vs {sb}"
    return None


def is_congruent(a: ParamTree, b: ParamTree) -> bool:
    return _congruence_error(a, b, "") is None


def _require_congruent(a: ParamTree, b: ParamTree) -> None:
    err = _congruence_error(a, b, "")
    if err:
        raise IncongruentTrees(err)


def tree_map(f: Callable[[np.ndarray], Any], tree: ParamTree) -> ParamTree:
    """Apply the elementwise (vectorised) function ``f`` to every leaf."""
    if _is_branch(tree):
        return {k: tree_map(f, v) for k, v in tree.items()}
    leaf = np.asarray(tree, dtype=np.float64)
    out = np.asarray(f(leaf), dtype=np.float64)
    if out is leaf:
        out = out.copy()
    if out.shape != leaf.shape:
        out = np.broadcast_to(out, leaf.shape).copy()
    return _freeze(out)


def tree_multimap(f: Callable[..., Any], tree: ParamTree, *rest: ParamTree) -> ParamTree:
    """n-ary :func:`tree_map`; all trees must be congruent with the first."""
    for other in rest:
        _require_congruent(tree, other)
    return _multimap_unchecked(f, tree, *rest)


def _multimap_unchecked(f, tree, *rest):
    if _is_branch(tree):
        return {k: _multimap_unchecked(f, v, *(r[k] for r in rest)) for k, v in tree.items()}
    leaves = [np.asarray(t, dtype=np.float64) for t in (tree, *rest)]
    out = np.asarray(f(*leaves), dtype=np.float64)
    if any(out is leaf for leaf in leaves):
        out = out.copy()
    if out.shape != leaves[0].shape:
        out = np.broadcast_to(out, leaves[0].shape).copy()
    return _freeze(out)


def tree_zip_map(f: Callable[[np.ndarray, np.ndarray], Any], a: ParamTree, b: ParamTree) -> ParamTree:
    """Combine two congruent trees leaf by leaf.

    Raises:
        IncongruentTrees: if structure, keys or leaf shapes differ.
    """
    return tree_multimap(f, a, b)


def tree_add(a: ParamTree, b: ParamTree) -> ParamTree:
    return tree_multimap(np.add, a, b)


def tree_sub(a: ParamTree, b: ParamTree) -> ParamTree:
    return tree_multimap(np.subtract, a, b)


def tree_scale(tree: ParamTree, scale: float) -> ParamTree:
    return tree_map(lambda x: x * scale, tree)


def tree_zeros_like(tree: ParamTree) -> ParamTree:
    return tree_map(np.zeros_like, tree)


def tree_weighted_sum(terms: Sequence[tuple[ParamTree, float]]) -> ParamTree:
    """Return ``sum(weight * tree)``, accumulated strictly left to right.

    The fixed order makes the result bit-reproducible regardless of how the
    terms were produced (sequentially or by a worker pool).
    """
    terms = list(terms)
    if not terms:
        raise EmptyTermList("tree_weighted_sum needs at least one term")
    first = terms[0][0]
    for tree, _ in terms[1:]:
        _require_congruent(first, tree)
    return _weighted_sum_unchecked(terms)


def _weighted_sum_unchecked(terms):
    first = terms[0][0]
    if _is_branch(first):
        return {k: _weighted_sum_unchecked([(t[k], w) for t, w in terms]) for k in first}
    acc = np.asarray(first, dtype=np.float64) * float(terms[0][1])
    for tree, weight in terms[1:]:
        acc = acc + np.asarray(tree, dtype=np.float64) * float(weight)
    return _freeze(acc)


def tree_l2_norm(tree: ParamTree) -> float:
    """Global l2 norm over all leaves."""
    total = 0.0
    for leaf in tree_leaves(tree):
        total += float(np.sum(np.square(leaf)))
    return float(np.sqrt(total))


def tree_equal(a: ParamTree, b: ParamTree) -> bool:
    """Exact (bitwise on values) equality of two trees."""
    if not is_congruent(a, b):
        return False
    return all(np.array_equal(x, y) for x, y in zip(tree_leaves(a), tree_leaves(b)))


# ---------------------------------------------------------------------------
# randomness


_MASK64 = (1 << 64) - 1


def _encode_label(label: str | int) -> bytes:
    if isinstance(label, bool) or not isinstance(label, (str, int, np.integer)):
        raise TypeError(f"rng labels must be str or int, got {type(label).__name__}")
    if isinstance(label, str):
        return b"s:" + label.encode("utf-8")
    return b"i:" + str(int(label)).encode("ascii")


@dataclass(frozen=True)
class Rng:
    """Immutable 128-bit key for a counter-based (Philox) generator.

    Child keys are derived by hashing the parent key with a label, so the
    stream a component sees depends only on *which* labels led to it, never
    on how many draws other components made before it.
    """

    key: int
    path: tuple[str | int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not 0 <= self.key < (1 << 128):
            raise ValueError("rng key must be a 128-bit unsigned integer")

    @classmethod
    def from_seed(cls, seed: int) -> "Rng":
        digest = hashlib.blake2b(b"fedsim-root:" + str(int(seed)).encode(), digest_size=16).digest()
        return cls(int.from_bytes(digest, "little"))

    def split(self, label: str | int) -> "Rng":
        digest = hashlib.blake2b(
            self.key.to_bytes(16, "little") + _encode_label(label), digest_size=16
        ).digest()
        return Rng(int.from_bytes(digest, "little"), self.path + (label,))

    def generator(self) -> np.random.Generator:
        """A fresh numpy Generator positioned at the start of this key's stream."""
        key = np.array([self.key & _MASK64, self.key >> 64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size=None) -> np.ndarray:
        return self.generator().random(size)

    def normal(self, size=None) -> np.ndarray:
        return self.generator().standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator().permutation(n)


def rng_split(rng: Rng, label: str | int) -> Rng:
    """Derive a child generator; pure in ``(rng.key, label)``."""
    return rng.split(label)
