"""Deterministic numerical core: seeded streams, PCA, MDA and the model container."""

from __future__ import annotations

import os
import struct
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, IoError

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step. Returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def mix_seed(seed: int, stream_id: int) -> int:
    """Hash (seed, stream_id) into a fresh 64-bit seed."""
    _, a = splitmix64(seed & _MASK64)
    _, b = splitmix64((a ^ ((stream_id * 0xD1B54A32D192ED03) & _MASK64)) & _MASK64)
    return b


class Rng:
    """Seeded random stream.

    The 256-bit SFC64 state is filled from the 64-bit seed by four splitmix64
    outputs, so a given seed gives the same raw stream on every platform.
    Unknown attributes are forwarded to the underlying ``numpy.random.Generator``.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK64
        words = []
        s = self.seed
        for _ in range(4):
            s, out = splitmix64(s)
            words.append(out)
        bitgen = np.random.SFC64()
        state = bitgen.state
        state["state"]["state"] = np.array(words, dtype=np.uint64)
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bitgen.state = state
        self.generator = np.random.Generator(bitgen)

    def substream(self, stream_id: int) -> "Rng":
        return Rng(mix_seed(self.seed, int(stream_id)))

    def __getattr__(self, name):
        return getattr(self.generator, name)

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def rng_stream(seed: int) -> Rng:
    return Rng(seed)


def as_rng(rng) -> Rng:
    if isinstance(rng, Rng):
        return rng
    if rng is None:
        return Rng(0)
    return Rng(int(rng))


# ---------------------------------------------------------------------------
# eigen solvers


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvalues in descending order and
    eigenvectors as columns.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise DegenerateInput("jacobi_eigh needs a square matrix")
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def _fix_signs(rows: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    rows = np.array(rows, dtype=np.float64, copy=True)
    for i in range(rows.shape[0]):
        j = int(np.argmax(np.abs(rows[i])))
        if rows[i, j] < 0:
            rows[i] = -rows[i]
    return rows


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # d_out x d_in
    explained_variance: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.components + self.mean


def fit_pca(samples: np.ndarray, target_dims: int) -> PcaModel:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateInput("PCA needs at least two samples")
    n, d = x.shape
    if not 1 <= target_dims <= min(n - 1, d):
        raise DegenerateInput(f"target_dims={target_dims} out of range for {n}x{d} data")
    mean = x.mean(axis=0)
    xc = x - mean
    # thin SVD of the centred data gives the covariance eigenvectors directly
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    var = s**2 / (n - 1)
    comps = _fix_signs(vt[:target_dims])
    return PcaModel(mean=mean, components=comps, explained_variance=var[:target_dims].copy())


# ---------------------------------------------------------------------------
# MDA


@dataclass(frozen=True)
class MdaModel:
    projection: np.ndarray  # d_out x d_in
    class_means: np.ndarray  # n_classes x d_in
    classes: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.projection.T


def fit_mda(samples: np.ndarray, labels, target_dims: int) -> MdaModel:
    """Multiple discriminant analysis (multi-class Fisher LDA).

    Maximizes between-class over within-class scatter. The within-class scatter
    is regularized by ``1e-6 * trace / d`` on the diagonal; projected features
    have unit pooled within-class variance.
    """
    x = np.asarray(samples, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise DegenerateInput("MDA needs at least two classes")
    n, d = x.shape
    max_dims = classes.size - 1
    if target_dims > max_dims:
        warnings.warn(
            f"MDA target_dims={target_dims} clamped to {max_dims} (classes - 1)",
            stacklevel=2,
        )
        target_dims = max_dims
    if target_dims < 1:
        raise DegenerateInput("target_dims must be positive")
    overall = x.mean(axis=0)
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    means = np.zeros((classes.size, d))
    for i, c in enumerate(classes):
        xc = x[y == c]
        if xc.shape[0] < 2:
            raise DegenerateInput(f"class {c!r} has fewer than 2 samples")
        mu = xc.mean(axis=0)
        means[i] = mu
        dev = xc - mu
        sw += dev.T @ dev
        diff = (mu - overall)[:, None]
        sb += xc.shape[0] * (diff @ diff.T)
    tr = np.trace(sw)
    if tr <= 0:
        raise DegenerateInput("within-class scatter is zero")
    sw += (1e-6 * tr / d) * np.eye(d)
    # reduce the generalized problem to a standard symmetric one via Cholesky
    chol = np.linalg.cholesky(sw)
    linv = np.linalg.inv(chol)
    m = linv @ sb @ linv.T
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    order = np.argsort(-w, kind="stable")[:target_dims]
    # unit within-class variance along each discriminant direction
    proj = (linv.T @ v[:, order]).T * np.sqrt(max(n - classes.size, 1))
    return MdaModel(projection=_fix_signs(proj), class_means=means, classes=classes)


# ---------------------------------------------------------------------------
# model container: b"GCM1" then records of (u32 tag, u64 byte length, f64 payload)

MAGIC = b"GCM1"


def _pack_array(arr) -> bytes:
    a = np.asarray(arr, dtype="<f8")
    head = np.array([a.ndim, *a.shape], dtype="<f8")
    return head.tobytes() + a.ravel().tobytes()


def _unpack_array(payload: bytes) -> np.ndarray:
    vals = np.frombuffer(payload, dtype="<f8")
    ndim = int(vals[0])
    shape = tuple(int(s) for s in vals[1 : 1 + ndim])
    return vals[1 + ndim :].reshape(shape).copy()


def encode_container(kind: int, arrays) -> bytes:
    """Serialize a list of arrays; record 0 holds (kind, record count)."""
    chunks = [MAGIC]
    header = np.array([kind, len(arrays)], dtype="<f8").tobytes()
    chunks.append(struct.pack("<IQ", 0, len(header)) + header)
    for tag, arr in enumerate(arrays, start=1):
        payload = _pack_array(arr)
        chunks.append(struct.pack("<IQ", tag, len(payload)) + payload)
    return b"".join(chunks)


def decode_container(data: bytes):
    if data[:4] != MAGIC:
        raise IoError("not a GCM1 model file")
    pos = 4
    records = {}
    while pos < len(data):
        if pos + 12 > len(data):
            raise IoError("truncated model record header")
        tag, length = struct.unpack_from("<IQ", data, pos)
        pos += 12
        payload = data[pos : pos + length]
        if len(payload) != length:
            raise IoError("truncated model record payload")
        records[tag] = payload
        pos += length
    if 0 not in records:
        raise IoError("model file lacks header record")
    kind, count = np.frombuffer(records[0], dtype="<f8").astype(int)
    arrays = [_unpack_array(records[t]) for t in range(1, count + 1)]
    return int(kind), arrays


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise IoError(f"directory does not exist: {directory}")
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        # mkstemp creates owner-only files; give the result ordinary permissions
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_model(path, kind: int, arrays) -> None:
    atomic_write_bytes(path, encode_container(kind, arrays))


def load_model(path):
    try:
        with open(path, "rb") as fh:
            return decode_container(fh.read())
    except OSError as exc:
        raise IoError(str(exc)) from exc
