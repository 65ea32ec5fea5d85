"""Random regular graphs, ±J disorder and connected random regions."""

import json
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MAX_PAIRING_ATTEMPTS = 1000
MAX_CONNECTIVITY_RETRIES = 100


class InfeasibleDegreeSequence(ValueError):
    pass


class GenerationStalled(RuntimeError):
    pass


class EmptyBoundary(RuntimeError):
    pass


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RegularGraph:
    n_vertices: int
    degree: int
    adjacency: tuple  # tuple of sorted int tuples
    attempts: int = 1  # pairing restarts + connectivity rejections, for provenance

    def __post_init__(self):
        for i, nb in enumerate(self.adjacency):
            if len(nb) != self.degree or len(set(nb)) != self.degree or i in nb:
                raise ValueError(f"vertex {i} violates {self.degree}-regularity: {nb}")
            for j in nb:
                if i not in self.adjacency[j]:
                    raise ValueError(f"asymmetric adjacency at ({i}, {j})")

    @classmethod
    def from_edges(cls, n, degree, edges, attempts=1):
        adj = [[] for _ in range(n)]
        for i, j in edges:
            adj[i].append(int(j))
            adj[j].append(int(i))
        return cls(n, degree, tuple(tuple(sorted(a)) for a in adj), attempts)

    @property
    def edges(self):
        """Canonical (E, 2) array of (min, max) pairs in lexicographic order."""
        e = [(i, j) for i, nb in enumerate(self.adjacency) for j in nb if i < j]
        return np.array(sorted(e), dtype=np.int64).reshape(-1, 2)

    @property
    def n_edges(self):
        return self.n_vertices * self.degree // 2

    def neighbor_array(self):
        return np.array(self.adjacency, dtype=np.int64).reshape(self.n_vertices, self.degree)

    def is_connected(self):
        return bool(np.all(bfs_distances(self, 0, check=False) >= 0))

    def __eq__(self, other):
        return (isinstance(other, RegularGraph) and self.n_vertices == other.n_vertices
                and self.degree == other.degree and self.adjacency == other.adjacency)

    def __hash__(self):
        return hash((self.n_vertices, self.degree, self.adjacency))


@dataclass(frozen=True, eq=False)
class DisorderInstance:
    """A graph with one ±J coupling per canonical edge."""

    graph: RegularGraph
    couplings: np.ndarray  # aligned with graph.edges
    seed: int
    j: float = 1.0
    edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        edges = self.graph.edges
        object.__setattr__(self, "edges", _frozen(edges, np.int64))
        object.__setattr__(self, "couplings", _frozen(self.couplings, np.float64))
        if self.couplings.shape != (len(edges),):
            raise ValueError("need exactly one coupling per edge")
        if not np.all(np.abs(self.couplings) == self.j):
            raise ValueError("couplings must all have magnitude j")

    @property
    def n(self):
        return self.graph.n_vertices

    @property
    def coupling_map(self):
        return {(int(i), int(k)): float(c) for (i, k), c in zip(self.edges, self.couplings)}

    def coupling_table(self):
        """(N, degree) arrays of neighbor indices and couplings, row i matching adjacency[i]."""
        nbr = self.graph.neighbor_array()
        cmap = self.coupling_map
        cpl = np.array([[cmap[(min(i, k), max(i, k))] for k in row] for i, row in enumerate(nbr)],
                       dtype=np.float64).reshape(nbr.shape)
        return nbr, cpl

    def coupling_matrix(self):
        jm = np.zeros((self.n, self.n))
        i, k = self.edges.T
        jm[i, k] = self.couplings
        jm[k, i] = self.couplings
        return jm

    def with_couplings(self, couplings):
        return DisorderInstance(self.graph, couplings, self.seed, self.j)

    def to_dict(self):
        return {
            "n": self.n,
            "degree": self.graph.degree,
            "seed": int(self.seed),
            "edges": [[int(i), int(k), float(c)] for (i, k), c in zip(self.edges, self.couplings)],
        }

    @classmethod
    def from_dict(cls, d):
        edges = [(int(i), int(k)) for i, k, _ in d["edges"]]
        if any(i >= k for i, k in edges):
            raise ValueError("instance edges must satisfy i < j")
        graph = RegularGraph.from_edges(d["n"], d["degree"], edges)
        cmap = {(int(i), int(k)): float(c) for i, k, c in d["edges"]}
        couplings = [cmap[tuple(e)] for e in graph.edges.tolist()]
        j = abs(couplings[0]) if couplings else 1.0
        return cls(graph, np.array(couplings), int(d["seed"]), j)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class Region:
    vertices: tuple  # in order of addition
    target_size: int

    def __post_init__(self):
        if len(self.vertices) != self.target_size or len(set(self.vertices)) != self.target_size:
            raise ValueError("region size does not match target_size")

    def mask(self, n):
        m = np.zeros(n, dtype=bool)
        m[list(self.vertices)] = True
        return m

    def complement(self, n):
        rest = tuple(v for v in range(n) if v not in set(self.vertices))
        return Region(rest, len(rest))


def subseed(seed, *keys):
    """Deterministic 64-bit child seed of `seed` labelled by integer keys."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0])


def _suitable_pair_exists(edges, leftover):
    verts = sorted(leftover)
    for a in range(len(verts)):
        for b in range(a + 1, len(verts)):
            if (verts[a], verts[b]) not in edges:
                return True
    return False


def _pairing_attempt(n, degree, rng):
    # Steger-Wormald style: pair random points, keep suitable pairs, re-pair the rest.
    edges = set()
    stubs = np.repeat(np.arange(n), degree)
    while len(stubs):
        stubs = rng.permutation(stubs)
        leftover = {}
        for u, v in zip(stubs[0::2].tolist(), stubs[1::2].tolist()):
            if u > v:
                u, v = v, u
            if u != v and (u, v) not in edges:
                edges.add((u, v))
            else:
                leftover[u] = leftover.get(u, 0) + 1
                leftover[v] = leftover.get(v, 0) + 1
        if leftover and not _suitable_pair_exists(edges, leftover):
            return None
        stubs = np.array([u for u in sorted(leftover) for _ in range(leftover[u])], dtype=np.int64)
    return edges


def generate_rrg(n, degree, seed):
    """Simple connected `degree`-regular graph on `n` vertices, deterministic in `seed`."""
    if degree < 1 or n <= degree or (n * degree) % 2:
        raise InfeasibleDegreeSequence(f"no simple {degree}-regular graph on {n} vertices")
    attempts = 0
    for retry in range(MAX_CONNECTIVITY_RETRIES):
        rng = np.random.default_rng(subseed(seed, 0, retry))
        for _ in range(MAX_PAIRING_ATTEMPTS):
            attempts += 1
            edges = _pairing_attempt(n, degree, rng)
            if edges is not None:
                break
        else:
            raise GenerationStalled(f"pairing failed {MAX_PAIRING_ATTEMPTS} times (n={n}, d={degree})")
        g = RegularGraph.from_edges(n, degree, sorted(edges), attempts)
        if g.is_connected():
            return g
        log.info("disconnected RRG sample (n=%d, seed=%d, retry=%d); regenerating", n, seed, retry)
    raise GenerationStalled("no connected sample found")


def assign_couplings(graph, j=1.0, seed=0):
    rng = np.random.default_rng(subseed(seed, 1))
    signs = np.where(rng.random(graph.n_edges) < 0.5, 1.0, -1.0)
    return DisorderInstance(graph, j * signs, int(seed), float(j))


def make_instance(n, degree=3, seed=0, j=1.0):
    """Graph and couplings from a single instance seed."""
    return assign_couplings(generate_rrg(n, degree, seed), j, seed)


def grow_random_region(graph, size, seed):
    """Connected region grown from a uniform seed vertex by uniform boundary-vertex additions."""
    n = graph.n_vertices
    if not 1 <= size <= n:
        raise ValueError(f"region size {size} outside [1, {n}]")
    rng = np.random.default_rng(subseed(seed, 2))
    region = [int(rng.integers(n))]
    inside = {region[0]}
    boundary = set(graph.adjacency[region[0]])
    while len(region) < size:
        if not boundary:
            raise EmptyBoundary("region cannot grow: graph is disconnected")
        cand = sorted(boundary)
        u = cand[int(rng.integers(len(cand)))]
        region.append(u)
        inside.add(u)
        boundary.discard(u)
        boundary.update(v for v in graph.adjacency[u] if v not in inside)
    return Region(tuple(region), size)


def bfs_distances(graph, source, check=True):
    dist = np.full(graph.n_vertices, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in graph.adjacency[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    if check and np.any(dist < 0):
        raise ValueError("graph is not connected")
    return dist


def induced_connected(graph, vertices):
    vs = set(vertices)
    start = next(iter(vs))
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in graph.adjacency[u]:
            if v in vs and v not in seen:
                seen.add(v)
                stack.append(v)
    return seen == vs
