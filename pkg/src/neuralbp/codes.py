"""Binary linear codes, Tanner graphs, BCH construction and alist I/O.

Parity-check matrices are plain ``numpy.uint8`` arrays with entries in {0, 1}.
GF(2) polynomials are Python ints, bit ``i`` holding the coefficient of ``x**i``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Standard primitive polynomials, bit-encoded.
PRIMITIVE_POLYS = {
    2: 0b111,
    3: 0b1011,
    4: 0b10011,
    5: 0b100101,
    6: 0b1000011,
    7: 0b10001001,
    8: 0b100011101,
    9: 0b1000010001,
    10: 0b10000001001,
}


class AlistError(ValueError):
    """Malformed alist text. ``line`` is 1-based."""

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


def as_binary_matrix(h) -> np.ndarray:
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {h.shape}")
    if not np.isin(h, (0, 1)).all():
        raise ValueError("matrix entries must be 0 or 1")
    out = h.astype(np.uint8)
    out.setflags(write=False)
    return out


def matrix_hash(h) -> str:
    """Short sha256 digest identifying a parity-check matrix (shape included)."""
    h = as_binary_matrix(h)
    digest = hashlib.sha256(f"{h.shape[0]}x{h.shape[1]}:".encode())
    digest.update(np.packbits(h, axis=1).tobytes())
    return digest.hexdigest()[:16]


# ---------------------------------------------------------------------------
# GF(2) linear algebra

def gf2_rref(a):
    """Reduced row echelon form over GF(2). Returns (rref, pivot_columns)."""
    a = np.array(a, dtype=np.uint8) % 2
    rows, cols = a.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        nz = np.nonzero(a[r:, c])[0]
        if nz.size == 0:
            continue
        p = r + nz[0]
        if p != r:
            a[[r, p]] = a[[p, r]]
        others = np.nonzero(a[:, c])[0]
        others = others[others != r]
        a[others] ^= a[r]
        pivots.append(c)
        r += 1
    return a, pivots


def gf2_rank(a) -> int:
    return len(gf2_rref(a)[1])


def generator_from_parity(h):
    """Generator matrix (K x N) for the null space of ``h``.

    Returns ``(g, info_positions)``; ``g`` restricted to ``info_positions`` is
    the identity, so encoding is systematic on those coordinates.
    """
    h = as_binary_matrix(h)
    n = h.shape[1]
    rref, pivots = gf2_rref(h)
    free = [c for c in range(n) if c not in set(pivots)]
    g = np.zeros((len(free), n), dtype=np.uint8)
    for i, f in enumerate(free):
        g[i, f] = 1
        for r, p in enumerate(pivots):
            g[i, p] = rref[r, f]
    return g, np.array(free, dtype=np.int64)


# ---------------------------------------------------------------------------
# Codes and Tanner graphs

@dataclass(frozen=True, eq=False)
class LinearCode:
    h: np.ndarray
    code_id: str = "custom"
    provenance: str = ""
    generator: np.ndarray = field(init=False, repr=False)
    info_positions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = as_binary_matrix(self.h)
        object.__setattr__(self, "h", h)
        g, info = generator_from_parity(h)
        g.setflags(write=False)
        object.__setattr__(self, "generator", g)
        object.__setattr__(self, "info_positions", info)

    @property
    def n(self) -> int:
        return self.h.shape[1]

    @property
    def m_checks(self) -> int:
        return self.h.shape[0]

    @property
    def k(self) -> int:
        return self.generator.shape[0]

    @property
    def rate(self) -> float:
        return self.k / self.n

    @property
    def h_hash(self) -> str:
        return matrix_hash(self.h)

    def syndrome(self, word) -> np.ndarray:
        return syndrome(self, word)

    def is_codeword(self, word):
        return is_codeword(self, word)

    def encode(self, info) -> np.ndarray:
        return encode(self, info)

    def codebook(self) -> np.ndarray:
        """All 2**K codewords, row ``i`` encoding the bits of ``i`` (LSB first)."""
        if self.k > 20:
            raise ValueError(f"codebook too large: K={self.k}")
        idx = np.arange(2 ** self.k)
        info = ((idx[:, None] >> np.arange(self.k)) & 1).astype(np.uint8)
        return encode(self, info)


def syndrome(code: LinearCode, word) -> np.ndarray:
    """H . word^T over GF(2); ``word`` may carry leading batch axes."""
    word = np.asarray(word)
    if word.shape[-1] != code.n:
        raise ValueError(f"word length {word.shape[-1]} != N={code.n}")
    return ((word.astype(np.int64) @ code.h.T.astype(np.int64)) & 1).astype(np.uint8)


def is_codeword(code: LinearCode, word):
    s = syndrome(code, word)
    return ~s.any(axis=-1)


def encode(code: LinearCode, info) -> np.ndarray:
    info = np.asarray(info)
    if info.shape[-1] != code.k:
        raise ValueError(f"info length {info.shape[-1]} != K={code.k}")
    return ((info.astype(np.int64) @ code.generator.astype(np.int64)) & 1).astype(np.uint8)


class TannerGraph:
    """Edge-indexed Tanner graph; edges sorted ascending by (check, variable).

    Besides the edge lists this precomputes padded gather tables used by the
    vectorized decoders: ``chk_pad[c, j]`` is the j-th edge of check ``c`` (or
    the sentinel ``E`` past its degree), likewise ``var_pad`` for variables.
    """

    def __init__(self, h):
        h = as_binary_matrix(h)
        self.h = h
        self.n_checks, self.n_vars = h.shape
        chk, var = np.nonzero(h)  # row-major, hence sorted by (check, var)
        self.edge_chk = chk.astype(np.int64)
        self.edge_var = var.astype(np.int64)
        self.n_edges = E = len(chk)
        self.edges = list(zip(self.edge_chk.tolist(), self.edge_var.tolist()))
        self.var_edges = [np.nonzero(self.edge_var == v)[0] for v in range(self.n_vars)]
        self.chk_edges = [np.nonzero(self.edge_chk == c)[0] for c in range(self.n_checks)]
        self.var_deg = np.array([len(e) for e in self.var_edges], dtype=np.int64)
        self.chk_deg = np.array([len(e) for e in self.chk_edges], dtype=np.int64)

        self.var_slot = np.zeros(E, dtype=np.int64)
        self.chk_slot = np.zeros(E, dtype=np.int64)
        self.var_pad = np.full((self.n_vars, max(1, self.var_deg.max(initial=0))), E, dtype=np.int64)
        self.chk_pad = np.full((self.n_checks, max(1, self.chk_deg.max(initial=0))), E, dtype=np.int64)
        for v, es in enumerate(self.var_edges):
            self.var_pad[v, : len(es)] = es
            self.var_slot[es] = np.arange(len(es))
        for c, es in enumerate(self.chk_edges):
            self.chk_pad[c, : len(es)] = es
            self.chk_slot[es] = np.arange(len(es))
        self.chk_mask = self.chk_pad < E
        self.var_mask = self.var_pad < E
        # edges whose check has no other neighbour carry no extrinsic information
        self.lonely_edge = self.chk_deg[self.edge_chk] < 2

        # (target, source) pairs sharing a variable, grouped by target edge
        dst, src = [], []
        for e in range(E):
            for e2 in self.var_edges[self.edge_var[e]]:
                if e2 != e:
                    dst.append(e)
                    src.append(e2)
        self.pair_dst = np.array(dst, dtype=np.int64)
        self.pair_src = np.array(src, dtype=np.int64)
        self.n_pairs = len(dst)

    def syndrome(self, bits) -> np.ndarray:
        """Per-check parity of ``bits`` (leading batch axes allowed)."""
        bits = np.asarray(bits, dtype=np.uint8)
        on_edges = np.concatenate([bits[..., self.edge_var],
                                   np.zeros(bits.shape[:-1] + (1,), np.uint8)], axis=-1)
        return on_edges[..., self.chk_pad].sum(axis=-1, dtype=np.int64) & 1

    def satisfied(self, bits) -> np.ndarray:
        return ~self.syndrome(bits).any(axis=-1)


def build_tanner(h) -> TannerGraph:
    return TannerGraph(h)


# ---------------------------------------------------------------------------
# alist I/O

def parse_alist(text: str) -> np.ndarray:
    """Parse alist text into an M x N binary matrix.

    Index lists may be zero-padded or ragged. Both the column and the row
    sections are read and must describe the same matrix.
    """
    raw = text.splitlines()
    numbered = [(i + 1, line.split()) for i, line in enumerate(raw)]
    head = [(no, toks) for no, toks in numbered if toks][:4]
    if len(head) < 4:
        raise AlistError(len(raw) + 1, "truncated header")

    def ints(no, toks, count, what):
        try:
            vals = [int(t) for t in toks]
        except ValueError:
            raise AlistError(no, f"non-integer token in {what}") from None
        if count is not None and len(vals) != count:
            raise AlistError(no, f"{what}: expected {count} values, got {len(vals)}")
        return vals

    (l1, t1), (l2, t2), (l3, t3), (l4, t4) = head
    n, m = ints(l1, t1, 2, "dimensions")
    if n < 1 or m < 1:
        raise AlistError(l1, f"invalid dimensions N={n}, M={m}")
    max_col, max_row = ints(l2, t2, 2, "max degrees")
    col_deg = ints(l3, t3, n, "column degrees")
    row_deg = ints(l4, t4, m, "row degrees")
    if max(col_deg) != max_col:
        raise AlistError(l2, f"max column degree {max_col} != {max(col_deg)}")
    if max(row_deg) != max_row:
        raise AlistError(l2, f"max row degree {max_row} != {max(row_deg)}")
    if sum(col_deg) != sum(row_deg):
        raise AlistError(l4, "column and row degree totals differ")

    body = numbered[l4:]
    nonblank = [(no, toks) for no, toks in body if toks]
    if len(nonblank) >= n + m:
        lines = nonblank[: n + m]
    else:
        # zero-degree lists may legitimately be blank lines
        while body and not body[-1][1] and len(body) > n + m:
            body.pop()
        if len(body) < n + m:
            raise AlistError(len(raw) + 1, f"expected {n + m} index lines, found {len(body)}")
        lines = body[: n + m]

    h_cols = np.zeros((m, n), dtype=np.uint8)
    for j, (no, toks) in enumerate(lines[:n]):
        idx = [i for i in ints(no, toks, None, f"column {j + 1} list") if i != 0]
        if len(idx) != col_deg[j]:
            raise AlistError(no, f"column {j + 1}: degree {col_deg[j]} but {len(idx)} indices")
        for i in idx:
            if not 1 <= i <= m:
                raise AlistError(no, f"row index {i} out of range 1..{m}")
            h_cols[i - 1, j] = 1
    h_rows = np.zeros((m, n), dtype=np.uint8)
    for i, (no, toks) in enumerate(lines[n:]):
        idx = [j for j in ints(no, toks, None, f"row {i + 1} list") if j != 0]
        if len(idx) != row_deg[i]:
            raise AlistError(no, f"row {i + 1}: degree {row_deg[i]} but {len(idx)} indices")
        for j in idx:
            if not 1 <= j <= n:
                raise AlistError(no, f"column index {j} out of range 1..{n}")
            h_rows[i, j - 1] = 1
    if not np.array_equal(h_cols, h_rows):
        bad = int(np.nonzero((h_cols != h_rows).any(axis=1))[0][0])
        raise AlistError(lines[n + bad][0], f"row {bad + 1} disagrees with column lists")
    return h_rows


def emit_alist(h) -> str:
    h = as_binary_matrix(h)
    m, n = h.shape
    col_deg = h.sum(axis=0).astype(int)
    row_deg = h.sum(axis=1).astype(int)
    max_col, max_row = int(col_deg.max()), int(row_deg.max())
    out = [f"{n} {m}", f"{max_col} {max_row}",
           " ".join(map(str, col_deg)), " ".join(map(str, row_deg))]
    for j in range(n):
        idx = list(np.nonzero(h[:, j])[0] + 1) + [0] * (max_col - col_deg[j])
        out.append(" ".join(map(str, idx)))
    for i in range(m):
        idx = list(np.nonzero(h[i])[0] + 1) + [0] * (max_row - row_deg[i])
        out.append(" ".join(map(str, idx)))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# GF(2^m) and BCH construction

class Gf2mField:
    """GF(2^m) with log/antilog tables over a primitive polynomial."""

    def __init__(self, m: int, primitive_poly: int | None = None):
        if primitive_poly is None:
            if m not in PRIMITIVE_POLYS:
                raise ValueError(f"no default primitive polynomial for m={m}")
            primitive_poly = PRIMITIVE_POLYS[m]
        if primitive_poly.bit_length() != m + 1:
            raise ValueError("primitive polynomial degree must equal m")
        self.m = m
        self.order = (1 << m) - 1
        self.primitive_poly = primitive_poly
        self.antilog = np.zeros(self.order, dtype=np.int64)
        self.log = np.full(1 << m, -1, dtype=np.int64)
        x = 1
        for i in range(self.order):
            if self.log[x] != -1:
                raise ValueError(f"polynomial {primitive_poly:#x} is not primitive")
            self.antilog[i] = x
            self.log[x] = i
            x <<= 1
            if x >> m:
                x ^= primitive_poly
        if x != 1:
            raise ValueError(f"polynomial {primitive_poly:#x} is not primitive")

    def alpha_pow(self, i: int) -> int:
        return int(self.antilog[i % self.order])

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return int(self.antilog[(self.log[a] + self.log[b]) % self.order])

    def minimal_poly(self, i: int) -> int:
        """Minimal polynomial over GF(2) of alpha**i."""
        coset = cyclotomic_coset(i, self.m)
        # product of (x + alpha^j) with GF(2^m) coefficients, lowest degree first
        poly = [1]
        for j in coset:
            root = self.alpha_pow(j)
            nxt = [0] * (len(poly) + 1)
            for d, c in enumerate(poly):
                nxt[d + 1] ^= c
                nxt[d] ^= self.mul(c, root)
            poly = nxt
        if any(c not in (0, 1) for c in poly):
            raise ArithmeticError("minimal polynomial not over GF(2)")
        return sum(c << d for d, c in enumerate(poly))


def cyclotomic_coset(i: int, m: int) -> list[int]:
    n = (1 << m) - 1
    out, j = [], i % n
    while j not in out:
        out.append(j)
        j = (2 * j) % n
    return out


def poly_mul(a: int, b: int) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        a <<= 1
        b >>= 1
    return out


def poly_divmod(a: int, b: int) -> tuple[int, int]:
    if b == 0:
        raise ZeroDivisionError("division by the zero polynomial")
    q = 0
    db = b.bit_length()
    while a.bit_length() >= db:
        shift = a.bit_length() - db
        q ^= 1 << shift
        a ^= b << shift
    return q, a


def poly_degree(a: int) -> int:
    return a.bit_length() - 1


def bch_generator_poly(field: Gf2mField, t: int) -> int:
    """Generator of the narrow-sense binary BCH code correcting ``t`` errors."""
    if not 1 <= 2 * t < field.order:
        raise ValueError(f"designed error count t={t} out of range for n={field.order}")
    g, seen = 1, set()
    for i in range(1, 2 * t + 1):
        rep = min(cyclotomic_coset(i, field.m))
        if rep in seen:
            continue
        seen.add(rep)
        g = poly_mul(g, field.minimal_poly(i))
    return g


def cyclic_parity_matrix(g: int, n: int) -> np.ndarray:
    """(n-k) x n parity-check matrix of the cyclic code generated by ``g``.

    Rows are successive shifts of the reciprocal parity polynomial
    ``h(x) = (x^n - 1) / g(x)``.
    """
    h, rem = poly_divmod((1 << n) | 1, g)
    if rem:
        raise ValueError(f"g(x) does not divide x^{n} - 1")
    k = poly_degree(h)
    r = n - k
    if r < 1:
        raise ValueError("generator yields a code with no parity checks")
    recip = [(h >> (k - d)) & 1 for d in range(k + 1)]  # h_k, ..., h_0
    out = np.zeros((r, n), dtype=np.uint8)
    for i in range(r):
        out[i, i: i + k + 1] = recip
    return out


def bch_code(m: int, t: int) -> LinearCode:
    field = Gf2mField(m)
    g = bch_generator_poly(field, t)
    n = field.order
    h = cyclic_parity_matrix(g, n)
    k = n - poly_degree(g)
    return LinearCode(h, code_id=f"bch{n}_{k}",
                      provenance=f"cyclic BCH m={m} t={t} g={g:#x} primitive={field.primitive_poly:#x}")


# ---------------------------------------------------------------------------
# Automorphisms of cyclic codes

def automorphism(n: int, a: int, b: int) -> np.ndarray:
    """Index map i -> (2**a * i + b) mod n."""
    return (pow(2, a, n) * np.arange(n) + b) % n


def sample_automorphism(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random element of the group generated by cyclic shifts and Frobenius doubling."""
    m = n.bit_length()
    if n < 3 or n != (1 << m) - 1:
        raise ValueError(f"automorphism sampling needs n = 2^m - 1, got {n}")
    return automorphism(n, int(rng.integers(m)), int(rng.integers(n)))


def apply_permutation(perm, word) -> np.ndarray:
    """Move entry ``i`` of ``word`` to position ``perm[i]`` (last axis)."""
    word = np.asarray(word)
    out = np.empty_like(word)
    out[..., perm] = word
    return out


def invert_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


# ---------------------------------------------------------------------------
# Shipped codes and bundles

HAMMING74_H = np.array([
    [1, 0, 1, 0, 1, 0, 1],
    [0, 1, 1, 0, 0, 1, 1],
    [0, 0, 0, 1, 1, 1, 1],
], dtype=np.uint8)


def _shipped():
    return {
        "hamming74": lambda: LinearCode(HAMMING74_H, "hamming74", "binary-index Hamming(7,4)"),
        "hamming74_cyclic": lambda: bch_code(3, 1),
        "rep3": lambda: LinearCode([[1, 1, 0], [0, 1, 1]], "rep3", "repetition-3, chain checks"),
        "spc4": lambda: LinearCode([[1, 1, 1, 1]], "spc4", "single parity check length 4"),
        "bch15_11": lambda: bch_code(4, 1),
        "bch63_45": lambda: bch_code(6, 3),
        "bch63_36": lambda: bch_code(6, 5),
        "bch127_99": lambda: bch_code(7, 4),
        "bch127_64": lambda: bch_code(7, 10),
    }


SHIPPED_CODES = tuple(_shipped())
_CACHE: dict[str, LinearCode] = {}


def get_code(name: str) -> LinearCode:
    """Shipped code by name, or a bundle manifest / alist file path."""
    if name in _CACHE:
        return _CACHE[name]
    makers = _shipped()
    if name in makers:
        code = makers[name]()
    else:
        path = Path(name)
        if not path.exists():
            raise FileNotFoundError(f"unknown code {name!r} (shipped: {', '.join(SHIPPED_CODES)})")
        if path.suffix == ".alist":
            code = LinearCode(parse_alist(path.read_text()), path.stem, f"alist {path.name}")
        else:
            code = load_bundle(path)
    _CACHE[name] = code
    return code


def read_keyvalue(text: str) -> dict[str, str]:
    out = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {no}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_bundle(code: LinearCode, directory) -> Path:
    """Write ``<id>.alist`` plus a ``<id>.code`` manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    alist = directory / f"{code.code_id}.alist"
    alist.write_text(emit_alist(code.h))
    manifest = directory / f"{code.code_id}.code"
    manifest.write_text(
        f"code_id = {code.code_id}\nn = {code.n}\nk = {code.k}\n"
        f"alist = {alist.name}\nh_hash = {code.h_hash}\nconstruction = {code.provenance}\n")
    return manifest


def load_bundle(path) -> LinearCode:
    path = Path(path)
    kv = read_keyvalue(path.read_text())
    for key in ("code_id", "n", "k", "alist"):
        if key not in kv:
            raise ValueError(f"{path}: manifest missing {key!r}")
    h = parse_alist((path.parent / kv["alist"]).read_text())
    code = LinearCode(h, kv["code_id"], kv.get("construction", ""))
    if code.n != int(kv["n"]) or code.k != int(kv["k"]):
        raise ValueError(f"{path}: manifest says N={kv['n']} K={kv['k']}, "
                         f"matrix gives N={code.n} K={code.k}")
    return code
