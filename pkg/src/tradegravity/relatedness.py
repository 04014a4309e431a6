"""The three relatedness measures evaluated on active trade cells.

For an active flow of product p from origin o to destination d in a year:

  * product relatedness: the proximity-weighted share of o's exports to d
    that lie in products related to p,
  * importer relatedness: the inverse-distance-weighted share of o's exports
    of p that go to d's neighbors,
  * exporter relatedness: the inverse-distance-weighted share of d's imports
    of p supplied by o's neighbors.

Each is a convex-style average of trade shares, so every value lies in
[0, 1]. Self terms never contribute: the proximity diagonal and the weight
matrix diagonal are both zero.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import TradeDataError

log = logging.getLogger(__name__)

_BOUND_SLACK = 1e-9


class DistanceWeights:
    """Row-stochastic inverse-distance weights over a country sample.

    weight(c, c') = (1/D_cc') / sum_{c'' != c} (1/D_cc''), zero diagonal.
    """

    def __init__(self, countries, matrix):
        self.countries = tuple(countries)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.matrix.flags.writeable = False

    @classmethod
    def from_dyads(cls, countries, dyads):
        countries = tuple(countries)
        if len(countries) < 2:
            raise TradeDataError("distance weights need at least two countries")
        dist = dyads.distance_matrix(countries)
        inv = np.zeros_like(dist)
        off = ~np.eye(len(countries), dtype=bool)
        inv[off] = 1.0 / dist[off]
        rows = inv.sum(axis=1)
        return cls(countries, inv / rows[:, None])

    def weight(self, c_from, c_to):
        i = self.countries.index(c_from)
        j = self.countries.index(c_to)
        return float(self.matrix[i, j])


@dataclass
class RelatednessValues:
    """Per-cell relatedness for one year, aligned with the active cell arrays.

    ``omega`` is NaN for cells whose product has a zero proximity marginal
    (no related products anywhere); such cells are dropped when written out.
    """

    year: int
    o: np.ndarray
    p: np.ndarray
    d: np.ndarray
    omega: np.ndarray
    omega_d: np.ndarray
    omega_o: np.ndarray
    countries: tuple
    products: tuple

    @property
    def n(self):
        return self.o.size

    def cell_keys(self):
        np_, nc = len(self.products), len(self.countries)
        return (self.o.astype(np.int64) * np_ + self.p) * nc + self.d


def _check_bounds(values, label):
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return values
    lo, hi = finite.min(), finite.max()
    if lo < -_BOUND_SLACK or hi > 1.0 + _BOUND_SLACK:
        raise TradeDataError(f"{label} out of [0,1]: min={lo!r} max={hi!r}")
    return np.clip(values, 0.0, 1.0)


def _group_inverse(sorted_key):
    """Row number of each cell's group, for keys already sorted ascending."""
    if sorted_key.size == 0:
        return np.empty(0, dtype=np.int64)
    steps = np.empty(sorted_key.size, dtype=np.int64)
    steps[0] = 0
    steps[1:] = sorted_key[1:] != sorted_key[:-1]
    return np.cumsum(steps)


def _chunked_matmul_gather(cols, data, inverse, col_of_cell, weight_matrix,
                           chunk_rows, threads):
    """out[cell] = (S @ W)[inverse[cell], col_of_cell[cell]] computed by row chunks.

    S is the (n_groups x weight_matrix.shape[0]) sparse matrix assembled from
    (inverse, cols, data). Cells must be sorted so that equal ``inverse``
    values are contiguous and ascending, which keeps each chunk's gather local.
    """
    n_groups = int(inverse.max()) + 1 if inverse.size else 0
    out = np.empty(inverse.size)
    starts = list(range(0, n_groups, chunk_rows))

    cell_bounds = np.searchsorted(inverse, np.arange(0, n_groups + chunk_rows, chunk_rows))

    def work(ci):
        r0 = starts[ci]
        r1 = min(r0 + chunk_rows, n_groups)
        lo, hi = cell_bounds[ci], cell_bounds[min(ci + 1, len(cell_bounds) - 1)]
        sel = slice(lo, hi)
        s = sp.csr_matrix((data[sel], (inverse[sel] - r0, cols[sel])),
                          shape=(r1 - r0, weight_matrix.shape[0]))
        block = s.dot(weight_matrix)
        out[sel] = block[inverse[sel] - r0, col_of_cell[sel]]

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(len(starts))))
    else:
        for ci in range(len(starts)):
            work(ci)
    return out


def product_relatedness(tensor, prox, year, chunk_rows=4096, threads=1):
    """Values for every active cell of the year, aligned with tensor.flows(year).

    Cells whose product has a zero proximity marginal are returned as NaN and
    logged: their relatedness is undefined (0/0).
    """
    o, p, d, v = tensor.flows(year)
    if tensor.n_products == 1:
        return np.zeros(o.size)  # the sum over other products is empty
    nc = tensor.n_countries
    phi = prox.phi
    phi_p = prox.marginals
    x_od = tensor.x_od(year)

    dyad = o.astype(np.int64) * nc + d
    order = np.argsort(dyad, kind="stable")
    inverse = _group_inverse(dyad[order])
    numer = _chunked_matmul_gather(p[order], v[order], inverse, p[order],
                                   phi, chunk_rows, threads)
    omega_sorted = np.full(o.size, np.nan)
    denom = phi_p[p[order]] * x_od[o[order], d[order]]
    defined = phi_p[p[order]] > 0
    omega_sorted[defined] = numer[defined] / denom[defined]
    omega = np.empty_like(omega_sorted)
    omega[order] = omega_sorted
    n_undefined = int((~defined).sum())
    if n_undefined:
        skipped = np.unique(p[order][~defined])
        log.warning("product_relatedness year %s: %d cells skipped, %d products "
                    "have zero proximity marginal", year, n_undefined, skipped.size)
    return _check_bounds(omega, "product relatedness")


def importer_relatedness(tensor, weights, year, chunk_rows=65536, threads=1):
    """Values for every active cell of the year, aligned with tensor.flows(year)."""
    o, p, d, v = tensor.flows(year)
    np_ = tensor.n_products
    x_op = tensor.x_op(year)
    group = o.astype(np.int64) * np_ + p  # cells are already sorted by (o, p)
    inverse = _group_inverse(group)
    numer = _chunked_matmul_gather(d, v, inverse, d, weights.matrix.T,
                                   chunk_rows, threads)
    values = numer / x_op[o, p]
    return _check_bounds(values, "importer relatedness")


def exporter_relatedness(tensor, weights, year, chunk_rows=65536, threads=1):
    """Values for every active cell of the year, aligned with tensor.flows(year)."""
    o, p, d, v = tensor.flows(year)
    nc = tensor.n_countries
    x_pd = tensor.x_pd(year)
    group = p.astype(np.int64) * nc + d
    order = np.argsort(group, kind="stable")
    inverse = _group_inverse(group[order])
    numer = _chunked_matmul_gather(o[order], v[order], inverse, o[order],
                                   weights.matrix.T, chunk_rows, threads)
    values_sorted = numer / x_pd[p[order], d[order]]
    values = np.empty_like(values_sorted)
    values[order] = values_sorted
    return _check_bounds(values, "exporter relatedness")


def compute_relatedness(tensor, prox, weights, year, threads=1):
    """All three measures for the active cells of one year."""
    if tuple(weights.countries) != tuple(tensor.countries):
        raise TradeDataError("distance weights were built for a different country sample")
    if tuple(prox.products) != tuple(tensor.products):
        raise TradeDataError("proximity matrix was built for a different product vocabulary")
    o, p, d, _ = tensor.flows(year)
    return RelatednessValues(
        year=int(year),
        o=o, p=p, d=d,
        omega=product_relatedness(tensor, prox, year, threads=threads),
        omega_d=importer_relatedness(tensor, weights, year, threads=threads),
        omega_o=exporter_relatedness(tensor, weights, year, threads=threads),
        countries=tensor.countries,
        products=tensor.products,
    )


def dense_relatedness(tensor, prox, weights, year):
    """All three measures over the full origin x product x destination cube.

    Intended for research and small worlds; cells whose denominator is zero
    come back NaN. Refuses cubes above 5e7 cells.
    """
    nc, np_ = tensor.n_countries, tensor.n_products
    if nc * nc * np_ > 5e7:
        raise TradeDataError("dense evaluation cube too large; use the active-cell path")
    o, p, d, v = tensor.flows(year)
    x = np.zeros((nc, np_, nc))
    x[o, p, d] = v
    x_od = tensor.x_od(year)
    x_op = tensor.x_op(year)
    x_pd = tensor.x_pd(year)
    phi, phi_p = prox.phi, prox.marginals
    w = weights.matrix

    with np.errstate(invalid="ignore", divide="ignore"):
        omega = np.einsum("pq,oqd->opd", phi, x) / (phi_p[None, :, None] * x_od[:, None, :])
        omega_d = np.einsum("dc,opc->opd", w, x) / x_op[:, :, None]
        omega_o = np.einsum("oc,cpd->opd", w, x) / x_pd[None, :, :]
    for arr in (omega, omega_d, omega_o):
        finite = np.isfinite(arr)
        arr[finite] = np.clip(arr[finite], 0.0, 1.0)
    return omega, omega_d, omega_o


def write_relatedness_csv(values_by_year, path):
    """Write year,origin,product,destination,omega,omega_d,omega_o rows.

    Cells with undefined product relatedness are dropped (and counted in the
    return value) rather than written with holes.
    """
    dropped = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "origin", "product", "destination", "omega", "omega_d", "omega_o"])
        for rel in sorted(values_by_year, key=lambda r: r.year):
            keep = np.isfinite(rel.omega)
            dropped += int((~keep).sum())
            for i in np.flatnonzero(keep):
                w.writerow([rel.year,
                            rel.countries[rel.o[i]],
                            rel.products[rel.p[i]],
                            rel.countries[rel.d[i]],
                            f"{rel.omega[i]:.10g}",
                            f"{rel.omega_d[i]:.10g}",
                            f"{rel.omega_o[i]:.10g}"])
    if dropped:
        log.info("write_relatedness_csv: dropped %d cells with undefined omega", dropped)
    return dropped


def read_relatedness_csv(path, countries, products):
    """Load per-year RelatednessValues previously written by write_relatedness_csv."""
    countries = tuple(countries)
    products = tuple(products)
    cidx = {c: i for i, c in enumerate(countries)}
    pidx = {p: i for i, p in enumerate(products)}
    rows_by_year = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ("year", "origin", "product", "destination", "omega", "omega_d", "omega_o")
        if header is None or tuple(h.strip() for h in header) != expected:
            raise TradeDataError(f"{path}: expected header {','.join(expected)}")
        for row in reader:
            if not row:
                continue
            year = int(row[0])
            try:
                o, p, d = cidx[row[1].strip()], pidx[row[2].strip()], cidx[row[3].strip()]
            except KeyError as exc:
                raise TradeDataError(f"{path}: unknown code {exc} in relatedness row") from None
            rows_by_year.setdefault(year, []).append(
                (o, p, d, float(row[4]), float(row[5]), float(row[6])))
    out = {}
    for year, rows in rows_by_year.items():
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        arr = np.array(rows, dtype=np.float64)
        out[year] = RelatednessValues(
            year=year,
            o=arr[:, 0].astype(np.int32),
            p=arr[:, 1].astype(np.int32),
            d=arr[:, 2].astype(np.int32),
            omega=arr[:, 3], omega_d=arr[:, 4], omega_o=arr[:, 5],
            countries=countries, products=products)
    return out
