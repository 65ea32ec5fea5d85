"""Single flipped-spin excitations of the x-polarized vacuum hopping on the interaction graph."""

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh, gmres

from .exact import NoConvergence
from .graph import bfs_distances

DENSE_LIMIT = 64


class SolverBreakdown(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class HoppingModel:
    instance: object
    matrix: sp.csr_matrix

    @classmethod
    def from_instance(cls, instance):
        n = instance.n
        i, k = instance.edges.T
        c = -instance.couplings
        mat = sp.coo_matrix((np.concatenate([c, c]), (np.concatenate([i, k]), np.concatenate([k, i]))),
                            shape=(n, n)).tocsr()
        return cls(instance, mat)

    @property
    def n(self):
        return self.matrix.shape[0]


def extremal_energy(model, tol=1e-10, seed=0):
    """Lowest eigenvalue of the hopping matrix."""
    if model.n <= DENSE_LIMIT:
        return float(np.linalg.eigvalsh(model.matrix.toarray())[0])
    v0 = np.random.default_rng(seed).standard_normal(model.n)
    try:
        val = eigsh(model.matrix, k=1, which="SA", tol=tol, v0=v0, maxiter=100 * model.n,
                    return_eigenvectors=False)
    except ArpackNoConvergence as e:
        raise NoConvergence(str(e)) from e
    return float(val[0])


def gamma_c_first_order(e0):
    """Field at which the one-particle band edge e0 + 2 gamma meets the vacuum."""
    if e0 >= 0:
        raise ValueError("band edge must be negative")
    return abs(e0) / 2


def gamma_c_mean_field(k, j=1.0, rho=0.0):
    """Critical field with the first-order density correction: J sqrt(K) (1 + rho)."""
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    if rho > 0.5:
        warnings.warn("density correction is only meaningful for rho << 1", stacklevel=2)
    return j * math.sqrt(k) * (1 + rho)


def resolvent_column(model, source, energy, eta=1e-3, tol=1e-12):
    """x solving ((E + i eta) - H) x = e_source."""
    n = model.n
    b = np.zeros(n, dtype=complex)
    b[source] = 1.0
    a = (energy + 1j * eta) * sp.identity(n, dtype=complex, format="csr") - model.matrix
    x, info = gmres(a, b, rtol=tol, atol=0.0, restart=min(n, 200), maxiter=1000)
    if info != 0:
        raise SolverBreakdown(f"GMRES did not converge (info={info}); eta too small near the spectrum?")
    return x


def resolvent_propagator(model, source, energy, eta=1e-3):
    """Per-site |G(i, source | E)|."""
    return np.abs(resolvent_column(model, source, energy, eta))


def propagator_profile(model, source, energy, eta=1e-3):
    """{distance: (mean |G|, max |G|)} over the shells around `source`."""
    g = resolvent_propagator(model, source, energy, eta)
    d = bfs_distances(model.instance.graph, source)
    return {int(r): (float(g[d == r].mean()), float(g[d == r].max())) for r in np.unique(d)}


def gauge_transform(instance, flipped):
    """Instance with J_ij -> eps_i eps_j J_ij, eps = -1 on `flipped` vertices."""
    eps = np.ones(instance.n)
    eps[list(flipped)] = -1
    i, k = instance.edges.T
    return instance.with_couplings(instance.couplings * eps[i] * eps[k])


def adjacency_comparison(instance):
    """(signed band edge, unsigned bulk edge): lowest eigenvalue of the signed hopping
    matrix against the lowest non-Perron eigenvalue of -J * adjacency."""
    signed = extremal_energy(HoppingModel.from_instance(instance))
    unsigned = HoppingModel.from_instance(instance.with_couplings(np.abs(instance.couplings)))
    if unsigned.n <= DENSE_LIMIT:
        ev = np.linalg.eigvalsh(unsigned.matrix.toarray())[:2]
    else:
        ev = np.sort(eigsh(unsigned.matrix, k=2, which="SA", return_eigenvectors=False))
    return signed, float(ev[1])


def write_spectrum_scan(rows, path):
    """rows of (n, seed, e0); writes (n, seed, e0, gamma_c_first_order)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("n", "seed", "e0", "gamma_c_first_order"))
        for n, seed, e0 in rows:
            w.writerow((n, seed, repr(e0), repr(gamma_c_first_order(e0))))


def write_propagator_profile(profile, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("distance", "mean_abs_g", "max_abs_g"))
        for r in sorted(profile):
            w.writerow((r, repr(profile[r][0]), repr(profile[r][1])))
