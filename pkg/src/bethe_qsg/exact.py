"""Matrix-free exact diagonalization of the transverse-field ±J Ising model.

Basis convention: bit i of the basis index is spin i, bit 0 means sigma^z = +1.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .graph import Region

log = logging.getLogger(__name__)

MAX_SPINS = 20
DUMP_MAGIC = b"BQGS"


class DimensionMismatch(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


class RegionOutOfRange(ValueError):
    pass


class NonPhysicalSpectrum(ValueError):
    pass


def spin_values(n):
    """(n, 2**n) array of sigma^z eigenvalues, row i for spin i."""
    idx = np.arange(2**n, dtype=np.int64)
    bits = (idx[None, :] >> np.arange(n, dtype=np.int64)[:, None]) & 1
    return (1 - 2 * bits).astype(np.int8)


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """H = -sum J_ij z_i z_j - gamma sum x_i - h sum z_i - sum eta_i z_i."""

    instance: object
    gamma: float
    h: float = 0.0
    local_fields: np.ndarray = None  # optional per-site eta_i, used for response checks

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @property
    def n(self):
        return self.instance.n

    def diagonal(self):
        n = self.n
        if n > MAX_SPINS + 4:
            raise ValueError(f"N={n} too large for exact treatment")
        z = spin_values(n)
        diag = np.zeros(2**n)
        for (i, k), c in zip(self.instance.edges, self.instance.couplings):
            diag -= c * (z[i] * z[k])
        fields = np.full(n, self.h, dtype=float)
        if self.local_fields is not None:
            fields = fields + np.asarray(self.local_fields, dtype=float)
        diag -= fields @ z
        return diag

    def dense(self):
        """Full 2^N x 2^N matrix; for small-N checks only."""
        n = self.n
        H = np.diag(self.diagonal())
        idx = np.arange(2**n)
        for i in range(n):
            H[idx, idx ^ (1 << i)] -= self.gamma
        return H


def flip(v, i, n):
    """sigma^x_i applied to a state vector."""
    t = v.reshape(2 ** (n - 1 - i), 2, 2**i)
    return t[:, ::-1, :].reshape(-1)


def sum_sigma_x(v, n):
    t = np.zeros_like(v)
    for i in range(n):
        t += flip(v, i, n)
    return t


def apply_hamiltonian(spec, v, diag=None):
    n = spec.n
    if v.shape != (2**n,):
        raise DimensionMismatch(f"state has shape {v.shape}, expected ({2**n},)")
    if diag is None:
        diag = spec.diagonal()
    out = diag * v
    if spec.gamma:
        out -= spec.gamma * sum_sigma_x(v, n)
    return out


@dataclass(frozen=True, eq=False)
class GroundState:
    amplitudes: np.ndarray
    energy: float
    residual_norm: float
    degenerate: bool = False
    iterations: int = 0

    @property
    def n(self):
        return int(round(np.log2(len(self.amplitudes))))


def lanczos_ground_state(spec, tol=1e-10, max_iter=2000, krylov_dim=60, seed=12345):
    """Lowest eigenpair by restarted Lanczos with full reorthogonalization.

    Each cycle builds up to `krylov_dim` orthonormal vectors and restarts from the
    current Ritz vector; `max_iter` bounds the total number of H applications.
    """
    n = spec.n
    if n > MAX_SPINS:
        raise ValueError(f"N={n} exceeds the exact-diagonalization cap of {MAX_SPINS}")
    dim = 2**n
    diag = spec.diagonal()
    if dim == 1:
        return GroundState(np.ones(1), float(diag[0]), 0.0)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(dim)
    x /= np.linalg.norm(x)
    m = min(krylov_dim, dim)
    n_apply = 0
    second = np.inf
    while True:
        V = np.empty((m, dim))
        alpha = np.zeros(m)
        beta = np.zeros(m)
        V[0] = x
        k = m
        for j in range(m):
            w = apply_hamiltonian(spec, V[j], diag)
            n_apply += 1
            alpha[j] = V[j] @ w
            # two passes of Gram-Schmidt against the whole basis
            w -= V[: j + 1].T @ (V[: j + 1] @ w)
            w -= V[: j + 1].T @ (V[: j + 1] @ w)
            b = np.linalg.norm(w)
            if j + 1 == m:
                break
            if b < 1e-13 * max(1.0, abs(alpha[j])):
                k = j + 1  # invariant subspace reached
                break
            beta[j] = b
            V[j + 1] = w / b
        T = np.diag(alpha[:k]) + np.diag(beta[: k - 1], 1) + np.diag(beta[: k - 1], -1)
        evals, evecs = np.linalg.eigh(T)
        x = evecs[:, 0] @ V[:k]
        x /= np.linalg.norm(x)
        energy = float(evals[0])
        if k > 1:
            # Ritz values bound eigenvalues from above; keep the tightest
            second = min(second, float(evals[1]))
        hx = apply_hamiltonian(spec, x, diag)
        n_apply += 1
        energy = float(x @ hx)
        resid = float(np.linalg.norm(hx - energy * x))
        if resid <= tol or k < m:
            break
        if n_apply >= max_iter:
            raise NoConvergence(f"residual {resid:.3e} after {n_apply} applications")
    # sign convention: largest-magnitude amplitude positive
    if x[np.argmax(np.abs(x))] < 0:
        x = -x
    degenerate = bool(second - energy < 10 * tol)
    if spec.gamma == 0:
        degenerate = bool(np.count_nonzero(diag - diag.min() < 10 * tol) > 1)
    if degenerate:
        log.warning("near-degenerate ground state (gap %.2e); derived quantities unreliable",
                    second - energy)
    return GroundState(x, energy, resid, degenerate, n_apply)


@dataclass(frozen=True, eq=False)
class ReducedDensityMatrix:
    entries: np.ndarray
    region: Region

    @property
    def dim(self):
        return self.entries.shape[0]


def _amplitude_matrix(psi, vertices, n):
    vertices = list(vertices)
    if any(not 0 <= v < n for v in vertices) or len(set(vertices)) != len(vertices):
        raise RegionOutOfRange(f"region {vertices} not a subset of 0..{n - 1}")
    # C-order reshape puts spin i on axis n-1-i
    t = np.asarray(psi).reshape((2,) * n)
    front = [n - 1 - v for v in vertices]
    rest = [a for a in range(n) if a not in front]
    return t.transpose(front + rest).reshape(2 ** len(vertices), -1)


def reduced_density_matrix(psi, region):
    amp = psi.amplitudes if isinstance(psi, GroundState) else np.asarray(psi)
    n = int(round(np.log2(len(amp))))
    mat = _amplitude_matrix(amp, region.vertices, n)
    rho = mat @ mat.T
    return ReducedDensityMatrix(0.5 * (rho + rho.T), region)


def renyi_entropy(rho, alpha):
    """Renyi-alpha entropy (natural log); alpha == 1 gives von Neumann."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    mat = rho.entries if isinstance(rho, ReducedDensityMatrix) else np.asarray(rho)
    p = np.linalg.eigvalsh(mat)
    if p.min() < -1e-8:
        raise NonPhysicalSpectrum(f"eigenvalue {p.min():.3e} < 0")
    p = p[p > 1e-14]
    if alpha == 1:
        return float(-np.sum(p * np.log(p)))
    return float(np.log(np.sum(p**alpha)) / (1 - alpha))


def _z_expectations(psi, n):
    prob = np.asarray(psi) ** 2
    z = spin_values(n).astype(float)
    mz = z @ prob
    zz = (z * prob) @ z.T
    return mz, zz


def quantum_fisher_information(psi):
    """(F_x, F_y, F_z, F_bar) for the collective spin J_a = (1/2) sum sigma^a_i."""
    v = psi.amplitudes if isinstance(psi, GroundState) else np.asarray(psi, dtype=float)
    n = int(round(np.log2(len(v))))
    z = spin_values(n).astype(float)
    # J_z
    sz = z.sum(axis=0)
    p = v**2
    f_z = float(p @ sz**2 - (p @ sz) ** 2)
    # J_x
    xv = sum_sigma_x(v, n)
    f_x = float(xv @ xv - (v @ xv) ** 2)
    # J_y: sigma^y_i = i sigma^x_i sigma^z_i, and <J_y> = 0 for real states
    yv = np.zeros_like(v)
    for i in range(n):
        yv += flip(z[i] * v, i, n)
    f_y = float(yv @ yv)
    return f_x, f_y, f_z, (f_x + f_y + f_z) / 3


def k_entanglement_bound(n, k):
    """Largest mean QFI reachable by k-producible states of n spins."""
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    s, r = divmod(n, k)
    return (s * (k * k + 2 * k - (k == 1)) + r * r + 2 * r - (r == 1)) / 3


def ed_observables(psi):
    """(q_EA, C) with C the connected sigma^z correlation matrix."""
    v = psi.amplitudes if isinstance(psi, GroundState) else np.asarray(psi)
    n = int(round(np.log2(len(v))))
    mz, zz = _z_expectations(v, n)
    c = zz - np.outer(mz, mz)
    return float(np.mean(mz**2)), c


def magnetizations(psi):
    v = psi.amplitudes if isinstance(psi, GroundState) else np.asarray(psi)
    n = int(round(np.log2(len(v))))
    return _z_expectations(v, n)[0]


def dump_ground_state(gs, path):
    """Little-endian dump: 4-byte magic, uint32 N, float64 energy, then 2^N doubles."""
    with open(path, "wb") as f:
        f.write(struct.pack("<4sId", DUMP_MAGIC, gs.n, gs.energy))
        f.write(np.ascontiguousarray(gs.amplitudes, dtype="<f8").tobytes())


def load_ground_state(path):
    with open(path, "rb") as f:
        magic, n, energy = struct.unpack("<4sId", f.read(16))
        if magic != DUMP_MAGIC:
            raise ValueError(f"{path}: not a ground-state dump")
        amps = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)
    if amps.shape != (2**n,):
        raise DimensionMismatch(f"{path}: expected {2**n} amplitudes, found {amps.size}")
    return GroundState(amps, energy, np.nan)
