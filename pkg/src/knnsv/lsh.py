"""p-stable LSH for retrieving the K* nearest neighbors of a test point,
and the truncated soft-label valuation that only needs those neighbors.

Hash functions are h(x) = floor((w.x + b) / r) with w ~ N(0, I_d) and
b ~ U[0, r). A table concatenates M such functions; a training point
collides with the query in a table when all M values agree.
"""

from __future__ import annotations

import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.spatial.distance import pdist

from .core import Dataset, InputError
from .exact import aggregate_over_test_set, resolve_threads, soft_increment_coefficients
from .utilities import distances_to

# tables are drawn in fixed-size blocks, each from its own seeded stream,
# so any block can be regenerated without drawing the ones before it
TABLE_BLOCK = 64

MAGIC = b"KNSV"
FORMAT_VERSION = 1


class LshRetrievalFailure(RuntimeError):
    """Fewer than K* candidates collided with the query."""

    def __init__(self, n_candidates: int, k_star: int, test_index: int | None = None):
        self.n_candidates = n_candidates
        self.k_star = k_star
        self.test_index = test_index
        where = "" if test_index is None else f" for test point {test_index}"
        super().__init__(f"Fail: {n_candidates} candidates < K*={k_star}{where}")


class DegenerateContrastError(InputError):
    pass


def collision_probability(distance: float, r: float) -> float:
    """Pr[h(x) = h(q)] for ||x - q|| = distance, by adaptive quadrature.

    f_h(y) = int_0^r (1/y) f2(z/y) (1 - z/r) dz, with f2 the density of |N(0,1)|.
    """
    if r <= 0:
        raise InputError("bucket width r must be positive")
    if distance < 0:
        raise InputError("distance must be non-negative")
    if distance == 0:
        return 1.0
    y = float(distance)

    def integrand(z):
        t = z / y
        return math.sqrt(2.0 / math.pi) * math.exp(-0.5 * t * t) / y * (1.0 - z / r)

    value, _ = integrate.quad(integrand, 0.0, r, epsabs=1e-10, epsrel=1e-10, limit=200)
    return min(1.0, value)


@dataclass(frozen=True)
class HashFamily:
    """L x M hash functions over R^dim with bucket width r.

    Parameters are regenerated on demand from ``seed``; a family loaded from
    disk carries explicit ``w`` (L, M, dim) and ``b`` (L, M) arrays instead.
    """

    l: int
    m: int
    r: float
    dim: int
    seed: int | None = None
    w_arr: np.ndarray | None = field(default=None, repr=False, compare=False)
    b_arr: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.l < 1 or self.m < 1:
            raise InputError("L and M must be >= 1")
        if not self.r > 0:
            raise InputError("bucket width r must be positive")
        if self.w_arr is None and self.seed is None:
            raise InputError("a hash family needs a seed or explicit parameters")

    def _block(self, bi: int):
        rng = np.random.default_rng([self.seed, bi])
        t = min(TABLE_BLOCK, self.l - bi * TABLE_BLOCK)
        w = rng.standard_normal((t, self.m, self.dim))
        b = rng.uniform(0.0, self.r, size=(t, self.m))
        return w, b

    def params(self, start: int = 0, stop: int | None = None):
        """(w, b) for tables ``start..stop-1``."""
        stop = self.l if stop is None else stop
        if self.w_arr is not None:
            return self.w_arr[start:stop], self.b_arr[start:stop]
        ws, bs = [], []
        for bi in range(start // TABLE_BLOCK, (stop - 1) // TABLE_BLOCK + 1):
            w, b = self._block(bi)
            lo = max(start - bi * TABLE_BLOCK, 0)
            hi = min(stop - bi * TABLE_BLOCK, w.shape[0])
            ws.append(w[lo:hi])
            bs.append(b[lo:hi])
        return np.concatenate(ws), np.concatenate(bs)

    @property
    def w(self) -> np.ndarray:
        return self.params()[0]

    @property
    def b(self) -> np.ndarray:
        return self.params()[1]

    def blocks(self):
        """Yield (start, stop, (w, b)) per block of tables."""
        for start in range(0, self.l, TABLE_BLOCK):
            stop = min(start + TABLE_BLOCK, self.l)
            yield start, stop, self.params(start, stop)

    def codes(self, x, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Integer codes of shape (n, tables, M) for the rows of ``x``."""
        w, b = self.params(start, stop)
        return _codes(np.atleast_2d(np.asarray(x, dtype=np.float64)), w, b, self.r)


def _floored(x, w, b, r):
    # floor(w.x/r + b/r): the one hash evaluation used everywhere, kept as floats
    t, m, d = w.shape
    proj = x @ (w.reshape(t * m, d).T / r)
    proj += b.reshape(-1) / r
    np.floor(proj, out=proj)
    return proj.reshape(x.shape[0], t, m)


def _codes(x, w, b, r):
    return _floored(x, w, b, r).astype(np.int64)


def sample_hash_family(l: int, m: int, r: float, dim: int, seed: int) -> HashFamily:
    return HashFamily(int(l), int(m), float(r), int(dim), int(seed))


@dataclass
class HashTables:
    """One dict per table mapping a packed M-code key to sorted training indices."""

    m: int
    n: int
    tables: list[dict[bytes, np.ndarray]]

    def __len__(self):
        return len(self.tables)

    def __eq__(self, other):
        if not isinstance(other, HashTables) or (self.m, self.n) != (other.m, other.n):
            return False
        if len(self.tables) != len(other.tables):
            return False
        for a, b in zip(self.tables, other.tables):
            if a.keys() != b.keys() or any(not np.array_equal(a[k], b[k]) for k in a):
                return False
        return True


def _pack(codes_row: np.ndarray) -> bytes:
    return np.ascontiguousarray(codes_row, dtype="<i8").tobytes()


def build_tables(family: HashFamily, dataset) -> HashTables:
    x = dataset.x if isinstance(dataset, Dataset) else np.atleast_2d(np.asarray(dataset, float))
    if x.shape[1] != family.dim:
        raise InputError(f"dataset dimension {x.shape[1]} does not match family dimension {family.dim}")
    tables = []
    for start, stop, (w, b) in family.blocks():
        codes = _codes(x, w, b, family.r)
        for t in range(stop - start):
            keys, inverse = np.unique(codes[:, t, :], axis=0, return_inverse=True)
            inverse = inverse.ravel()
            order = np.argsort(inverse, kind="stable")
            bounds = np.searchsorted(inverse[order], np.arange(keys.shape[0] + 1))
            tables.append(
                {_pack(keys[k]): order[bounds[k]:bounds[k + 1]] for k in range(keys.shape[0])}
            )
    return HashTables(family.m, x.shape[0], tables)


def query_candidates(tables: HashTables, family: HashFamily, query) -> np.ndarray:
    """Sorted, de-duplicated training indices sharing a bucket with ``query`` in any table."""
    query = np.asarray(query, dtype=np.float64).ravel()
    if query.size != family.dim:
        raise InputError(f"query dimension {query.size} does not match family dimension {family.dim}")
    found = []
    for start, stop, (w, b) in family.blocks():
        codes = _codes(query[None, :], w, b, family.r)[0]
        for t in range(stop - start):
            bucket = tables.tables[start + t].get(_pack(codes[t]))
            if bucket is not None:
                found.append(bucket)
    if not found:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(found))


def approx_sv_soft(candidates, dataset: Dataset, x_test, y_test, k_star: int, k: int, c: int | None = None,
                   test_index: int | None = None) -> np.ndarray:
    """Soft-label values from the K* nearest candidates only.

    Every point outside the K* nearest candidates, and the K*-th itself,
    gets (1/N)(1/2 - 1/C); nearer ranks follow the exact soft-label
    increments upward from there.
    """
    n = dataset.n
    c = c or dataset.n_classes
    if n < max(2, k):
        raise InputError(f"truncated approximation needs N >= max(2, K) (N={n}, K={k})")
    if not 1 <= k_star <= n:
        raise InputError(f"K* must lie in [1, N], got {k_star}")
    candidates = np.unique(np.asarray(candidates, dtype=np.int64))
    if candidates.size < k_star:
        raise LshRetrievalFailure(int(candidates.size), k_star, test_index)

    dist = distances_to(dataset.x[candidates], x_test)
    top = candidates[np.argsort(dist, kind="stable")[:k_star]]
    match = (dataset.y[top] == y_test).astype(np.float64)

    tail = (0.5 - 1.0 / c) / n
    values = np.full(n, tail)
    ranks = np.arange(1, k_star)
    inc = (match[:-1] - match[1:]) / (n - 1) * soft_increment_coefficients(n, k, ranks)
    head = tail + np.cumsum(inc[::-1])[::-1]
    values[top[:-1]] = head
    return values


def approximation_error_bound(n: int, k: int, k_star: int) -> float:
    """Sup-norm error bound for the truncated approximation."""
    return sum(1.0 / (j + 1) for j in range(2, k)) / n + 1.0 / max(k_star, k)


def default_bucket_width(x, sample: int = 1000, seed: int = 0) -> float:
    """Four times the median pairwise distance, estimated on at most ``sample`` points."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise InputError("need at least two points to estimate a bucket width")
    if x.shape[0] > sample:
        rng = np.random.default_rng(seed)
        x = x[np.sort(rng.choice(x.shape[0], sample, replace=False))]
    med = float(np.median(pdist(x)))
    if med <= 0:
        raise InputError("all sampled points coincide; pass an explicit bucket width")
    return 4.0 * med


@dataclass(frozen=True)
class LshTuning:
    k_star: int
    delta: float
    r: float
    p1: np.ndarray = field(repr=False)
    p2: np.ndarray = field(repr=False)
    p_max: float
    c: float
    m: int
    l: int
    rule: str = "standard"

    def as_dict(self) -> dict:
        return {
            "k_star": self.k_star, "delta": self.delta, "r": self.r, "rule": self.rule,
            "p_max": self.p_max, "c": self.c, "m": self.m, "l": self.l,
            "p1_min": float(self.p1.min()), "p2_min": float(self.p2.min()),
        }


def neighbor_distances(train_x, test_x, k_star: int) -> tuple[np.ndarray, np.ndarray]:
    """Distances to the K*-th and (K*+1)-th nearest training point of each test point."""
    d1, d2 = [], []
    for q in np.atleast_2d(test_x):
        dist = np.partition(distances_to(train_x, q), [k_star - 1, k_star])
        d1.append(dist[k_star - 1])
        d2.append(dist[k_star])
    return np.array(d1), np.array(d2)


def recommend_parameters(dataset: Dataset, testset: Dataset, k_star: int, delta: float, r: float,
                         rule: str = "standard") -> LshTuning:
    """Choose M and L from the collision probabilities at the K*-th / (K*+1)-th neighbor.

    ``rule="standard"``: p_max = max p2, c = max log p1 / log p2,
    M = ceil(ln N / ln(1/p_max)), L = ceil(N^c ln(N_test K* / delta)).

    ``rule="worst-case"`` sizes M from the smallest p2 instead and sets
    c = log(min p1) / log(min p2), so every test point's K*-th neighbor
    collides in a table with probability at least N^-c.
    """
    n = dataset.n
    if not 1 <= k_star < n:
        raise InputError(f"need 1 <= K* < N (K*={k_star}, N={n})")
    if not 0 < delta < 1:
        raise InputError("delta must lie in (0, 1)")
    if rule not in ("standard", "worst-case"):
        raise InputError(f"unknown tuning rule {rule!r}")
    dataset.check_compatible(testset)
    d1, d2 = neighbor_distances(dataset.x, testset.x, k_star)
    p1 = np.array([collision_probability(v, r) for v in d1])
    p2 = np.array([collision_probability(v, r) for v in d2])
    if np.any(p2 >= 1.0):
        bad = int(np.argmax(p2 >= 1.0))
        raise DegenerateContrastError(
            f"test point {bad} coincides with its (K*+1)-th neighbor; no contrast to exploit"
        )
    p_max = float(p2.max())
    if rule == "standard":
        p_ref = p_max
        c = float(np.max(np.log(p1) / np.log(p2)))
    else:
        p_ref = float(p2.min())
        c = float(np.log(p1.min()) / np.log(p_ref))
    m = math.ceil(math.log(n) / math.log(1.0 / p_ref))
    l = math.ceil(n**c * math.log(testset.n * k_star / delta))
    return LshTuning(k_star, delta, r, p1, p2, p_max, c, max(m, 1), max(l, 1), rule)


def knn_retrieved(family: HashFamily, train_x, queries, neighbors, stop_early: bool = True) -> np.ndarray:
    """For each query, whether every listed neighbor collides with it in some table.

    Equivalent to checking ``neighbors[q]`` against :func:`query_candidates`,
    without materializing tables for the whole training set. Pairs already
    found are not hashed again.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    neighbors = np.asarray(neighbors)
    train_x = np.asarray(train_x, dtype=np.float64)
    found = np.zeros(neighbors.shape, dtype=bool)
    for _, stop, (w, b) in family.blocks():
        qi, ni = np.nonzero(~found)
        if qi.size == 0:
            if stop_early:
                break
            continue
        cq = _floored(queries, w, b, family.r)
        cp = _floored(train_x[neighbors[qi, ni]], w, b, family.r)
        found[qi, ni] = (cp == cq[qi]).all(axis=-1).any(axis=-1)
    return found.all(axis=1)


def lsh_shapley(train: Dataset, test: Dataset, k_star: int, k: int = 5, c: int | None = None,
                family: HashFamily | None = None, tables: HashTables | None = None,
                threads=None) -> np.ndarray:
    """Approximate soft-label values summed over the test set, neighbors found by LSH."""
    if family is None:
        raise InputError("lsh_shapley needs a hash family")
    train.check_compatible(test)
    if tables is None:
        tables = build_tables(family, train)

    def one(t):
        cand = query_candidates(tables, family, test.x[t])
        return approx_sv_soft(cand, train, test.x[t], test.y[t], k_star, k, c, test_index=t)

    threads = resolve_threads(threads)
    if threads == 1:
        return aggregate_over_test_set(map(one, range(test.n)))
    with ThreadPoolExecutor(threads) as pool:
        return aggregate_over_test_set(pool.map(one, range(test.n)))


def save_index(path_or_file, family: HashFamily, tables: HashTables):
    """Write family parameters and populated tables in the little-endian KNSV layout.

    Header: magic, version u32, L u32, M u32, r f64, dim u32, N u32; then
    w (L*M*dim f64), b (L*M f64); then per table: bucket count u32 and per
    bucket the key (M i64), size u32 and member indices (u32).
    """
    w, b = family.params()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IIIdII", FORMAT_VERSION, family.l, family.m, family.r, family.dim, tables.n))
    buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    for table in tables.tables:
        buf.write(struct.pack("<I", len(table)))
        for key in sorted(table):
            members = table[key]
            buf.write(key)
            buf.write(struct.pack("<I", members.size))
            buf.write(np.ascontiguousarray(members, dtype="<u4").tobytes())
    data = buf.getvalue()
    if hasattr(path_or_file, "write"):
        path_or_file.write(data)
    else:
        with open(path_or_file, "wb") as fh:
            fh.write(data)


def load_index(path_or_file) -> tuple[HashFamily, HashTables]:
    if hasattr(path_or_file, "read"):
        data = path_or_file.read()
    else:
        with open(path_or_file, "rb") as fh:
            data = fh.read()
    if data[:4] != MAGIC:
        raise InputError("not a KNSV index file")
    version, l, m, r, dim, n = struct.unpack_from("<IIIdII", data, 4)
    if version != FORMAT_VERSION:
        raise InputError(f"unsupported index version {version}")
    off = 4 + struct.calcsize("<IIIdII")
    w = np.frombuffer(data, "<f8", l * m * dim, off).reshape(l, m, dim).astype(np.float64)
    off += 8 * l * m * dim
    b = np.frombuffer(data, "<f8", l * m, off).reshape(l, m).astype(np.float64)
    off += 8 * l * m
    tables = []
    for _ in range(l):
        (n_buckets,) = struct.unpack_from("<I", data, off)
        off += 4
        table = {}
        for _ in range(n_buckets):
            key = data[off:off + 8 * m]
            off += 8 * m
            (size,) = struct.unpack_from("<I", data, off)
            off += 4
            table[key] = np.frombuffer(data, "<u4", size, off).astype(np.int64)
            off += 4 * size
        tables.append(table)
    if off != len(data):
        raise InputError("trailing bytes in index file")
    family = HashFamily(l, m, r, dim, None, w, b)
    return family, HashTables(m, n, tables)
