"""Revealed comparative advantage and the product-space proximity matrix.

RCA compares a country's export share in a product against the product's
share of world trade, pooled over a year window. Binarizing RCA at a
threshold gives the advantage matrix M, and the proximity of two products is
the conditional probability of co-advantage, taking the more conservative
direction: the joint advantage count divided by the larger of the two
ubiquities.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import TradeDataError

log = logging.getLogger(__name__)


@dataclass
class RcaMatrix:
    """Country-by-product RCA values pooled over an inclusive year window.

    Rows of countries with no exports in the window are NaN (absent); a zero
    export with other trade present is a plain 0.
    """

    values: np.ndarray
    countries: tuple
    products: tuple
    window: tuple

    def value(self, country, product):
        i = self.countries.index(country)
        j = self.products.index(product)
        return float(self.values[i, j])


@dataclass
class AdvantageMatrix:
    """Binary country-by-product matrix: 1 where RCA clears the threshold."""

    entries: np.ndarray
    countries: tuple
    products: tuple
    threshold: float


@dataclass
class ProximityMatrix:
    """Symmetric product-by-product co-advantage similarity in [0, 1].

    The diagonal is zero by convention so that self-similarity never leaks
    into relatedness averages. ``marginals`` holds the row sums.
    """

    phi: np.ndarray
    products: tuple

    def __post_init__(self):
        self.phi.flags.writeable = False
        self.marginals = self.phi.sum(axis=1)
        self.marginals.flags.writeable = False

    def value(self, product_i, product_j):
        i = self.products.index(product_i)
        j = self.products.index(product_j)
        return float(self.phi[i, j])


def compute_rca(tensor, window):
    """RCA over the pooled window: export share within country over share of world.

    ``window`` is an inclusive (first_year, last_year) pair. Years absent from
    the tensor are simply skipped; an empty pooled tensor is an error.
    """
    first, last = int(window[0]), int(window[1])
    if last < first:
        raise TradeDataError(f"empty year window ({first},{last})")
    nc, np_ = tensor.n_countries, tensor.n_products
    pooled = np.zeros((nc, np_))
    seen = False
    for year in range(first, last + 1):
        if tensor.has_year(year):
            pooled += tensor.x_op(year)
            seen = True
    if not seen or pooled.sum() == 0:
        raise TradeDataError(f"no trade flows inside window ({first},{last})")
    country_totals = pooled.sum(axis=1)
    product_totals = pooled.sum(axis=0)
    world_total = pooled.sum()
    values = np.full((nc, np_), np.nan)
    exporters = country_totals > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        share_in_country = pooled[exporters] / country_totals[exporters, None]
        share_of_world = product_totals / world_total
        rca = np.where(share_of_world > 0, share_in_country / share_of_world, 0.0)
    values[exporters] = rca
    return RcaMatrix(values, tensor.countries, tensor.products, (first, last))


def binarize(rca, threshold=1.0):
    """Advantage matrix M: 1 iff RCA >= threshold (NaN rows count as 0)."""
    if threshold <= 0:
        raise TradeDataError(f"binarization threshold must be positive, got {threshold}")
    with np.errstate(invalid="ignore"):
        entries = (rca.values >= threshold).astype(np.uint8)
    return AdvantageMatrix(entries, rca.countries, rca.products, float(threshold))


def compute_proximity(m):
    """Proximity phi_ij = |co-advantage countries| / max(ubiquity_i, ubiquity_j).

    Equivalent to the minimum of the two conditional co-advantage
    probabilities. Pairs where either product has zero ubiquity get phi = 0,
    and the diagonal is forced to 0.
    """
    if m.entries.size == 0:
        raise TradeDataError("empty advantage matrix")
    mf = m.entries.astype(np.float64)
    joint = mf.T @ mf
    ubiquity = mf.sum(axis=0)
    denom = np.maximum.outer(ubiquity, ubiquity)
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(denom > 0, joint / denom, 0.0)
    np.fill_diagonal(phi, 0.0)
    return ProximityMatrix(phi, m.products)


def export_product_space(prox, cutoff, edges_path, histogram_path, bins=50):
    """Write the thresholded edge list and the phi distribution histogram.

    Edges are (product_i, product_j, phi) with i < j and phi >= cutoff, phi
    printed with 6 decimals. The histogram covers all unordered product pairs
    with equal bins on [0, 1] and a running cumulative fraction.

    Returns (n_edges, n_pairs).
    """
    if cutoff < 0:
        raise TradeDataError(f"cutoff must be non-negative (got {cutoff})")
    n = len(prox.products)
    iu, ju = np.triu_indices(n, k=1)
    vals = prox.phi[iu, ju]
    mask = vals >= cutoff
    with open(edges_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["product_i", "product_j", "phi"])
        for i, j, phi in zip(iu[mask], ju[mask], vals[mask]):
            w.writerow([prox.products[i], prox.products[j], f"{phi:.6f}"])
    counts, edges = np.histogram(vals, bins=bins, range=(0.0, 1.0))
    cumulative = np.cumsum(counts)
    total = max(vals.size, 1)
    with open(histogram_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lower", "bin_upper", "count", "cumulative_fraction"])
        for b in range(bins):
            w.writerow([f"{edges[b]:.6f}", f"{edges[b + 1]:.6f}", int(counts[b]),
                        f"{cumulative[b] / total:.6f}"])
    return int(mask.sum()), int(vals.size)


def write_rca_csv(rca, path):
    """Long-form country,product,rca rows; absent (NaN) rows are skipped."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["country", "product", "rca"])
        for i, country in enumerate(rca.countries):
            row = rca.values[i]
            if np.isnan(row[0]) and np.all(np.isnan(row)):
                continue
            for j, product in enumerate(rca.products):
                w.writerow([country, product, f"{row[j]:.10g}"])


def read_proximity_csv(path, products):
    """Rebuild a ProximityMatrix from an edge-list CSV over a known vocabulary."""
    products = tuple(products)
    index = {p: i for i, p in enumerate(products)}
    phi = np.zeros((len(products), len(products)))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != ("product_i", "product_j", "phi"):
            raise TradeDataError(f"{path}: expected header product_i,product_j,phi")
        for row in reader:
            if not row:
                continue
            i, j = index.get(row[0].strip()), index.get(row[1].strip())
            if i is None or j is None:
                raise TradeDataError(f"{path}: unknown product in edge {row[:2]}")
            phi[i, j] = phi[j, i] = float(row[2])
    np.fill_diagonal(phi, 0.0)
    return ProximityMatrix(phi, products)
