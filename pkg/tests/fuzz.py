"""Random network generators shared by the property and acceptance tests."""
import numpy as np

from contagion_clear import ContingentContract, DynamicSpec, FinancialNetwork, upper_bound_matrix


def regular_network(rng, n=None, density=0.5):
    """Society plus ``n`` banks, every bank owing society something."""
    n = int(rng.integers(2, 9)) if n is None else n
    size = n + 1
    L = np.where(rng.random((size, size)) < density, rng.uniform(0.1, 2.0, (size, size)), 0.0)
    np.fill_diagonal(L, 0.0)
    L[0] = 0.0
    L[1:, 0] = rng.uniform(0.1, 1.5, n)
    x = np.where(rng.random(size) < 0.25, 0.0, rng.uniform(0.0, 2.0, size))
    x[0] = 0.0
    return FinancialNetwork(x, L, has_society=True)


def insured_network(rng, n=None, contracts=None):
    """Regular network with layered insurance (writers only insure lower-indexed firms)."""
    net = regular_network(rng, n)
    L = net.base_liabilities
    out = []
    count = int(rng.integers(1, 4)) if contracts is None else contracts
    for _ in range(count):
        k = int(rng.integers(1, net.size - 1))
        creditors = np.flatnonzero(L[k] > 0)
        j = int(rng.choice(creditors))
        writers = [i for i in range(k + 1, net.size) if i != j]
        if not writers:
            continue
        i = int(rng.choice(writers))
        out.append(ContingentContract("Insurance", i, j, k, eta=float(rng.uniform(0.1, 1.0))))
    net = net.with_contracts(out)
    # insurers hold enough to pay everything they could ever owe
    bound = upper_bound_matrix(net.liabilities, net.x).sum(axis=1)
    x = np.array(net.x)
    for c in out:
        x[c.writer] = max(x[c.writer], bound[c.writer] + rng.uniform(0.0, 0.5))
    return net.with_assets(x)


def dynamic_spec(rng, n=None, horizon=None, contracts=True):
    """Multi-period network with society; every bank owes society at every date."""
    n = int(rng.integers(2, 7)) if n is None else n
    T = int(rng.integers(1, 6)) if horizon is None else horizon
    size = n + 1
    L = np.where(rng.random((T + 1, size, size)) < 0.4, rng.uniform(0.1, 2.0, (T + 1, size, size)), 0.0)
    for t in range(T + 1):
        np.fill_diagonal(L[t], 0.0)
    L[:, 0, :] = 0.0
    L[:, 1:, 0] = rng.uniform(0.05, 1.0, (T + 1, n))
    x = np.where(rng.random((T + 1, size)) < 0.3, 0.0, rng.uniform(0.0, 1.5, (T + 1, size)))
    v0 = np.where(rng.random(size) < 0.5, 0.0, rng.uniform(0.0, 1.0, size))
    out = []
    if contracts:
        for _ in range(int(rng.integers(0, 4))):
            k = int(rng.integers(1, size))
            i = int(rng.choice([m for m in range(1, size) if m != k]))
            j = int(rng.choice([m for m in range(size) if m != i]))
            kind = str(rng.choice(["CDS", "DigitalCDS", "Insurance"]))
            if kind == "Insurance" and (j == k or i < k):
                kind = "CDS"
            out.append(ContingentContract(kind, i, j, k, eta=float(rng.uniform(0.1, 1.0)),
                                          notional=float(rng.uniform(0.1, 1.0))))
    return DynamicSpec(x, L, out, has_society=True, initial_wealth=v0)


def picard_payments(x, L, tol=1e-14, max_iter=200_000):
    """Independent payment iteration ``p <- min(pbar, x + Pi^T p)`` from full payment."""
    x = np.asarray(x, float)
    pbar = L.sum(axis=1)
    size = x.size
    pi = np.full((size, size), 1.0 / (size - 1))
    np.fill_diagonal(pi, 0.0)
    owing = pbar > 0
    pi[owing] = L[owing] / pbar[owing, None]
    p = pbar.copy()
    for _ in range(max_iter):
        nxt = np.minimum(pbar, x + pi.T @ p)
        if np.max(np.abs(nxt - p)) <= tol:
            p = nxt
            break
        p = nxt
    return p, x + pi.T @ p - pbar
