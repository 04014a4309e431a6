"""Pooled two-year-ahead gravity regressions with streaming least squares.

The response is the log trade value of a cell two years ahead; the 15
regressors are the three relatedness measures, log initial flows and
marginals, log distance, log GDP per capita and population on both sides,
and four cultural dyad variables. Continuous variables are z-scored over the
regression sample (binary dummies are left alone; the response stays in log
levels unless asked otherwise).

The fitter accumulates the normal equations in one pass over row blocks of a
fixed size combined along a fixed pairwise reduction tree, so results do not
depend on how the row stream was chunked, and accumulator memory stays at
k x k regardless of sample size.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import CoverageError, SingularDesignError, TradeDataError

log = logging.getLogger(__name__)

REGRESSOR_NAMES = (
    "omega", "omega_d", "omega_o",
    "log_x_opd", "log_x_op", "log_x_pd",
    "log_distance",
    "log_gdp_o", "log_gdp_d", "log_pop_o", "log_pop_d",
    "border", "colony", "language", "log_lang_proximity",
)
BINARY_COLUMNS = frozenset({"border", "colony", "language"})
RESPONSE_NAME = "log_x_fwd"
K_PARAMETERS = len(REGRESSOR_NAMES) + 1  # slopes plus intercept

DEFAULT_PERIODS = ((2000, 2006), (2007, 2012), (2012, 2015))


class ExporterClass(str, enum.Enum):
    NEW = "new"
    NASCENT = "nascent"
    EXPERIENCED = "experienced"


class LallCategory(str, enum.Enum):
    PRIMARY = "primary"
    RESOURCE_BASED = "resource_based"
    LOW_TECH = "low_tech"
    MEDIUM_TECH = "medium_tech"
    HIGH_TECH = "high_tech"
    EXCLUDED = "excluded"


# CSV code -> category, ascending technological sophistication for the first five
LALL_CODES = {
    "PP": LallCategory.PRIMARY,
    "RB": LallCategory.RESOURCE_BASED,
    "LT": LallCategory.LOW_TECH,
    "MT": LallCategory.MEDIUM_TECH,
    "HT": LallCategory.HIGH_TECH,
    "SP": LallCategory.EXCLUDED,
}
LALL_RANK_ORDER = (LallCategory.PRIMARY, LallCategory.RESOURCE_BASED,
                   LallCategory.LOW_TECH, LallCategory.MEDIUM_TECH,
                   LallCategory.HIGH_TECH)


@dataclass
class GravityDataset:
    """Regression rows keyed by (t, origin, product, destination)."""

    t: np.ndarray
    o: np.ndarray
    p: np.ndarray
    d: np.ndarray
    response: np.ndarray
    columns: dict
    countries: tuple
    products: tuple

    @property
    def n(self):
        return self.response.size

    def subset(self, mask):
        return GravityDataset(
            t=self.t[mask], o=self.o[mask], p=self.p[mask], d=self.d[mask],
            response=self.response[mask],
            columns={name: col[mask] for name, col in self.columns.items()},
            countries=self.countries, products=self.products)

    def design_matrix(self):
        """n x 16 matrix with the intercept column first."""
        x = np.empty((self.n, K_PARAMETERS))
        x[:, 0] = 1.0
        for j, name in enumerate(REGRESSOR_NAMES, start=1):
            x[:, j] = self.columns[name]
        return x


@dataclass(frozen=True)
class StandardizationSpec:
    """Mean and standard deviation used for each z-scored column."""

    means: dict
    stds: dict
    response_standardized: bool


@dataclass
class RegressionResult:
    names: tuple
    beta: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    pvalue: np.ndarray
    n: int
    r2: float
    adj_r2: float
    resid_se: float
    ortho_rel: float  # max |X'(y - Xb)| / max |X'y|, a fit health diagnostic

    def coefficient(self, name):
        return float(self.beta[self.names.index(name)])

    def to_dict(self, split_key=None):
        out = {
            "split_key": split_key,
            "n": int(self.n),
            "adj_r2": round(float(self.adj_r2), 6),
            "resid_se": round(float(self.resid_se), 6),
            "coefficients": [
                {"name": name,
                 "beta": round(float(self.beta[i]), 6),
                 "se": round(float(self.se[i]), 6),
                 "t": round(float(self.tstat[i]), 6),
                 "p": round(float(self.pvalue[i]), 6)}
                for i, name in enumerate(self.names)],
        }
        return out


@dataclass
class TrendResult:
    slope: float
    se: float
    pvalue: float
    significant: bool


def build_dataset(tensor, relatedness_by_year, country_meta, dyad_meta, period,
                  horizon=2, zeros="drop"):
    """Assemble pooled regression rows for one period.

    Rows are cells with a positive flow at t and, under the default
    ``zeros="drop"`` policy, a positive flow at t+horizon; ``zeros="log1p"``
    keeps exits and uses log1p of the forward value instead. All (t,
    t+horizon) pairs with both endpoints inside the inclusive period are
    stacked. Covariates are joined at year t; a missing covariate for a
    sampled row raises CoverageError naming the key.
    """
    start, end = int(period[0]), int(period[1])
    if end - horizon < start:
        raise TradeDataError(f"period ({start},{end}) shorter than horizon {horizon}")
    if zeros not in ("drop", "log1p"):
        raise TradeDataError(f"unknown zeros policy {zeros!r}")

    countries = tensor.countries
    products = tensor.products
    nc, np_ = len(countries), len(products)
    dyad_fields = dyad_meta.field_matrices(countries)

    chunks = []
    dropped_omega = 0
    for t in range(start, end - horizon + 1):
        if not tensor.has_year(t):
            raise TradeDataError(f"no flows for base year {t} in period ({start},{end})")
        rel = relatedness_by_year.get(t)
        if rel is None:
            raise TradeDataError(f"relatedness not computed for base year {t}")
        if tuple(rel.countries) != countries or tuple(rel.products) != products:
            raise TradeDataError(f"relatedness for year {t} uses a different vocabulary")

        o, p, d, v = tensor.flows(t)
        keys = tensor.cell_keys(t)
        if zeros == "drop":
            if not tensor.has_year(t + horizon):
                raise TradeDataError(f"no flows for forward year {t + horizon}")
            fwd_keys = tensor.cell_keys(t + horizon)
            fwd_vals = tensor.flows(t + horizon)[3]
            pos = np.searchsorted(fwd_keys, keys)
            pos_ok = pos < fwd_keys.size
            found = np.zeros(keys.size, dtype=bool)
            found[pos_ok] = fwd_keys[pos[pos_ok]] == keys[pos_ok]
            response_vals = np.zeros(keys.size)
            response_vals[found] = np.log(fwd_vals[pos[found]])
            keep = found
        else:
            fwd = np.zeros(keys.size)
            if tensor.has_year(t + horizon):
                fwd_keys = tensor.cell_keys(t + horizon)
                fwd_vals = tensor.flows(t + horizon)[3]
                pos = np.searchsorted(fwd_keys, keys)
                pos_ok = pos < fwd_keys.size
                found = np.zeros(keys.size, dtype=bool)
                found[pos_ok] = fwd_keys[pos[pos_ok]] == keys[pos_ok]
                fwd[found] = fwd_vals[pos[found]]
            response_vals = np.log1p(fwd)
            keep = np.ones(keys.size, dtype=bool)

        rel_keys = rel.cell_keys()
        rpos = np.searchsorted(rel_keys, keys)
        rpos_ok = rpos < rel_keys.size
        rel_found = np.zeros(keys.size, dtype=bool)
        rel_found[rpos_ok] = rel_keys[rpos[rpos_ok]] == keys[rpos_ok]
        # cells absent from a relatedness file are the undefined-omega ones
        # its writer dropped; they leave the sample the same way
        rpos = np.where(rel_found, rpos, 0)
        omega = np.where(rel_found, rel.omega[rpos], np.nan)
        omega_defined = np.isfinite(omega)
        dropped_omega += int((keep & ~omega_defined).sum())
        keep &= omega_defined

        if not keep.any():
            continue
        o, p, d, v = o[keep], p[keep], d[keep], v[keep]
        response_vals = response_vals[keep]
        omega = omega[keep]
        omega_d = rel.omega_d[rpos[keep]]
        omega_o = rel.omega_o[rpos[keep]]

        x_op = tensor.x_op(t)
        x_pd = tensor.x_pd(t)

        gdp = np.full(nc, np.nan)
        pop = np.full(nc, np.nan)
        for c in np.unique(np.concatenate([o, d])):
            code = countries[c]
            gdp[c] = country_meta.gdp_per_capita(code, t)
            pop[c] = country_meta.population(code, t)

        dist = dyad_fields["distance"][o, d]
        if np.isnan(dist).any():
            i = int(np.flatnonzero(np.isnan(dist))[0])
            raise CoverageError(
                f"no dyad data for sampled pair ({countries[o[i]]},{countries[d[i]]})")

        cols = {
            "omega": omega,
            "omega_d": omega_d,
            "omega_o": omega_o,
            "log_x_opd": np.log(v),
            "log_x_op": np.log(x_op[o, p]),
            "log_x_pd": np.log(x_pd[p, d]),
            "log_distance": np.log(dist),
            "log_gdp_o": np.log(gdp[o]),
            "log_gdp_d": np.log(gdp[d]),
            "log_pop_o": np.log(pop[o]),
            "log_pop_d": np.log(pop[d]),
            "border": dyad_fields["border"][o, d],
            "colony": dyad_fields["colony"][o, d],
            "language": dyad_fields["language"][o, d],
            "log_lang_proximity": np.log1p(dyad_fields["lang_proximity"][o, d]),
        }
        chunks.append((np.full(o.size, t, dtype=np.int32), o, p, d, response_vals, cols))

    if not chunks:
        raise TradeDataError(f"no regression rows in period ({start},{end})")
    if dropped_omega:
        log.info("build_dataset: dropped %d rows with undefined product relatedness",
                 dropped_omega)
    if len(chunks) == 1:  # skip the concatenate copy for single-year pools
        c = chunks[0]
        dataset = GravityDataset(t=c[0], o=c[1], p=c[2], d=c[3], response=c[4],
                                 columns=c[5], countries=countries, products=products)
    else:
        dataset = GravityDataset(
            t=np.concatenate([c[0] for c in chunks]),
            o=np.concatenate([c[1] for c in chunks]),
            p=np.concatenate([c[2] for c in chunks]),
            d=np.concatenate([c[3] for c in chunks]),
            response=np.concatenate([c[4] for c in chunks]),
            columns={name: np.concatenate([c[5][name] for c in chunks])
                     for name in REGRESSOR_NAMES},
            countries=countries, products=products)
    for name in REGRESSOR_NAMES:
        col = dataset.columns[name]
        if not np.isfinite(col).all():
            raise TradeDataError(f"non-finite values in column {name}")
    return dataset


def standardize(dataset, standardize_response=False):
    """Z-score every continuous column with the sample (n-1) deviation.

    Binary dummies are untouched. The response is z-scored only on request.
    A zero-variance continuous column is an error naming the column.
    """
    if dataset.n < 2:
        raise TradeDataError("cannot standardize fewer than two rows")
    means, stds = {}, {}
    new_cols = {}
    for name in REGRESSOR_NAMES:
        col = dataset.columns[name]
        if name in BINARY_COLUMNS:
            new_cols[name] = col
            continue
        mean = float(np.mean(col))
        std = float(np.std(col, ddof=1))
        if std == 0:
            raise TradeDataError(f"zero-variance column {name} cannot be standardized")
        means[name], stds[name] = mean, std
        new_cols[name] = (col - mean) / std
    response = dataset.response
    if standardize_response:
        mean = float(np.mean(response))
        std = float(np.std(response, ddof=1))
        if std == 0:
            raise TradeDataError("zero-variance response cannot be standardized")
        means[RESPONSE_NAME], stds[RESPONSE_NAME] = mean, std
        response = (response - mean) / std
    out = GravityDataset(t=dataset.t, o=dataset.o, p=dataset.p, d=dataset.d,
                         response=response, columns=new_cols,
                         countries=dataset.countries, products=dataset.products)
    return out, StandardizationSpec(means, stds, standardize_response)


class _Accum:
    """Payload of one reduction-tree node: partial normal equations."""

    __slots__ = ("xtx", "xty", "syy", "sy", "n")

    def __init__(self, xtx, xty, syy, sy, n):
        self.xtx, self.xty, self.syy, self.sy, self.n = xtx, xty, syy, sy, n

    def __add__(self, other):
        return _Accum(self.xtx + other.xtx, self.xty + other.xty,
                      self.syy + other.syy, self.sy + other.sy, self.n + other.n)


class StreamingOLS:
    """One-pass least-squares accumulator over a fixed pairwise reduction tree.

    Rows fed through ``add`` are re-blocked internally to ``block_rows``, so
    the result is bitwise identical however the stream was chunked. Completed
    blocks combine along a binary tree keyed by global block index, which
    makes ``merge`` of block-aligned partial accumulators reproduce the
    single-stream result exactly. Memory is O(k^2 log n_blocks).
    """

    def __init__(self, names, block_rows=4096, start_block=0):
        self.names = tuple(names)
        self.k = len(self.names)
        self.block_rows = int(block_rows)
        self.start_block = int(start_block)
        self._next_block = int(start_block)
        self._nodes = []  # (start_block, level, _Accum), chronological
        self._buf = []
        self._buffered = 0
        self._finalized = False

    @property
    def n_rows(self):
        return sum(node[2].n for node in self._nodes) + self._buffered

    def add(self, x, y):
        """Accumulate a chunk of rows; x is (m, k), y is (m,)."""
        if self._finalized:
            raise TradeDataError("accumulator already finalized")
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.k or y.shape != (x.shape[0],):
            raise TradeDataError(
                f"bad chunk shape {x.shape}/{y.shape} for k={self.k}")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise TradeDataError("non-finite entries in regression chunk")
        pos = 0
        m = x.shape[0]
        while pos < m:
            take = min(self.block_rows - self._buffered, m - pos)
            self._buf.append((x[pos:pos + take], y[pos:pos + take]))
            self._buffered += take
            pos += take
            if self._buffered == self.block_rows:
                self._flush_block()

    def _flush_block(self):
        xs = np.concatenate([b[0] for b in self._buf], axis=0)
        ys = np.concatenate([b[1] for b in self._buf], axis=0)
        self._buf = []
        self._buffered = 0
        self._push(self._block_payload(xs, ys))

    @staticmethod
    def _block_payload(x, y):
        # einsum without optimization stays off the BLAS threading path, so
        # block sums do not depend on the ambient thread configuration
        xtx = np.einsum("ni,nj->ij", x, x, optimize=False)
        xty = np.einsum("ni,n->i", x, y, optimize=False)
        return _Accum(xtx, xty, float(y @ y), float(y.sum()), y.size)

    def _push(self, payload):
        self._nodes.append((self._next_block, 0, payload))
        self._next_block += 1
        self._normalize()

    def _normalize(self):
        nodes = self._nodes
        while len(nodes) >= 2:
            (a, la, pa), (b, lb, pb) = nodes[-2], nodes[-1]
            if la == lb and b == a + 2 ** la and a % 2 ** (la + 1) == 0:
                nodes[-2:] = [(a, la + 1, pa + pb)]
            else:
                break

    def merge(self, other):
        """Absorb an accumulator covering the blocks right after this one."""
        if self._buffered:
            raise TradeDataError("cannot merge into an accumulator with a partial block")
        if other.start_block != self._next_block:
            raise TradeDataError(
                f"merge misaligned: expected start block {self._next_block}, "
                f"got {other.start_block}")
        if other.names != self.names or other.block_rows != self.block_rows:
            raise TradeDataError("merge of incompatible accumulators")
        self._nodes.extend(other._nodes)
        self._next_block = other._next_block
        self._buf = list(other._buf)
        self._buffered = other._buffered
        # re-pair across the seam until stable
        changed = True
        while changed:
            changed = False
            i = 0
            nodes = self._nodes
            while i + 1 < len(nodes):
                (a, la, pa), (b, lb, pb) = nodes[i], nodes[i + 1]
                if la == lb and b == a + 2 ** la and a % 2 ** (la + 1) == 0:
                    nodes[i:i + 2] = [(a, la + 1, pa + pb)]
                    changed = True
                else:
                    i += 1
        return self

    def _total(self):
        if self._buffered:
            xs = np.concatenate([b[0] for b in self._buf], axis=0)
            ys = np.concatenate([b[1] for b in self._buf], axis=0)
            tail = self._block_payload(xs, ys)
        else:
            tail = None
        total = None
        for _, _, payload in self._nodes:  # chronological fold
            total = payload if total is None else total + payload
        if tail is not None:
            total = tail if total is None else total + tail
        if total is None:
            raise TradeDataError("no rows accumulated")
        return total

    def result(self):
        """Solve the accumulated normal equations."""
        total = self._total()
        return solve_normal_equations(total.xtx, total.xty, total.syy, total.sy,
                                      total.n, self.names)


def _cholesky_with_diagnostics(a, names, tol=1e-10):
    """Pivot-free Cholesky; raises SingularDesignError naming dependent columns."""
    k = a.shape[0]
    l = np.zeros_like(a)
    scale = float(np.max(np.abs(np.diag(a)))) or 1.0
    dependent = []
    for j in range(k):
        s = a[j, j] - l[j, :j] @ l[j, :j]
        if s <= tol * scale:
            dependent.append(names[j])
            l[j, j] = np.inf  # neutralize the column, keep scanning for more
            continue
        l[j, j] = np.sqrt(s)
        if j + 1 < k:
            l[j + 1:, j] = (a[j + 1:, j] - l[j + 1:, :j] @ l[j, :j]) / l[j, j]
    if dependent:
        raise SingularDesignError(dependent)
    return l


def solve_normal_equations(xtx, xty, syy, sy, n, names):
    """Classical homoskedastic OLS from accumulated cross products."""
    k = len(names)
    if n <= k:
        raise TradeDataError(f"need more than k={k} rows, got n={n}")
    l = _cholesky_with_diagnostics(xtx, names)
    z = np.linalg.solve(l, xty)
    beta = np.linalg.solve(l.T, z)
    inv = np.linalg.solve(l.T, np.linalg.solve(l, np.eye(k)))

    rss = float(syy - 2.0 * beta @ xty + beta @ (xtx @ beta))
    rss = max(rss, 0.0)
    tss = float(syy - sy * sy / n)
    sigma2 = rss / (n - k)
    se = np.sqrt(np.maximum(sigma2 * np.diag(inv), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = np.where(se > 0, beta / se, np.where(beta == 0, 0.0, np.inf * np.sign(beta)))
    pvalue = 2.0 * stats.t.sf(np.abs(tstat), n - k)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / (n - k)
    resid = xty - xtx @ beta
    denom = float(np.max(np.abs(xty))) or 1.0
    ortho = float(np.max(np.abs(resid))) / denom
    if ortho > 1e-6:
        log.warning("normal-equation residual %.2e exceeds 1e-6; "
                    "the design may be badly conditioned", ortho)
    return RegressionResult(names=tuple(names), beta=beta, se=se, tstat=tstat,
                            pvalue=pvalue, n=int(n), r2=float(r2),
                            adj_r2=float(adj_r2),
                            resid_se=float(np.sqrt(sigma2)), ortho_rel=ortho)


def _accumulate_rows(dataset, names, block_rows, chunk_rows, lo, hi, start_block):
    acc = StreamingOLS(names, block_rows=block_rows, start_block=start_block)
    for c0 in range(lo, hi, chunk_rows):
        c1 = min(c0 + chunk_rows, hi)
        x = np.empty((c1 - c0, K_PARAMETERS))
        x[:, 0] = 1.0
        for j, name in enumerate(REGRESSOR_NAMES, start=1):
            x[:, j] = dataset.columns[name][c0:c1]
        acc.add(x, dataset.response[c0:c1])
    return acc


def fit_ols(dataset, block_rows=4096, chunk_rows=1 << 20, threads=1):
    """Fit the full 16-parameter model on an assembled (usually z-scored) dataset.

    Rows are streamed into the accumulator in slices so the dense design
    matrix is never materialized whole. The block protocol makes the result
    independent of ``chunk_rows``, and with ``threads`` > 1 the row range is
    cut at block boundaries into per-thread partial accumulators whose
    ordered merge reproduces the single-thread result bit for bit.
    """
    names = ("const",) + REGRESSOR_NAMES
    n = dataset.n
    if threads <= 1 or n <= 2 * block_rows:
        return _accumulate_rows(dataset, names, block_rows, chunk_rows, 0, n, 0).result()
    n_blocks = -(-n // block_rows)
    rows_per = -(-n_blocks // threads) * block_rows
    spans = [(lo, min(lo + rows_per, n)) for lo in range(0, n, rows_per)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(
            lambda span: _accumulate_rows(dataset, names, block_rows, chunk_rows,
                                          span[0], span[1], span[0] // block_rows),
            spans))
    total = parts[0]
    for part in parts[1:]:
        total.merge(part)
    return total.result()


def classify_exporter(rca_value, new_threshold=0.2, experienced_threshold=1.0):
    """Three-way exporter experience class from an RCA value."""
    if rca_value < 0 or not np.isfinite(rca_value):
        raise TradeDataError(f"RCA must be finite and non-negative, got {rca_value}")
    if rca_value < new_threshold:
        return ExporterClass.NEW
    if rca_value <= experienced_threshold:
        return ExporterClass.NASCENT
    return ExporterClass.EXPERIENCED


def exporter_class_labels(dataset, rca, new_threshold=0.2, experienced_threshold=1.0):
    """Per-row exporter class labels from a classification RCA matrix.

    Countries absent from the RCA matrix (no exports in its window) count as
    RCA 0, hence new exporters.
    """
    if tuple(rca.countries) != tuple(dataset.countries) or \
            tuple(rca.products) != tuple(dataset.products):
        raise TradeDataError("classification RCA uses a different vocabulary")
    values = np.nan_to_num(rca.values, nan=0.0)
    r = values[dataset.o, dataset.p]
    labels = np.where(r < new_threshold, ExporterClass.NEW.value,
                      np.where(r <= experienced_threshold, ExporterClass.NASCENT.value,
                               ExporterClass.EXPERIENCED.value))
    return labels


class LallConcordance:
    """Product to technology-category mapping loaded from hs4,sitc3,category rows."""

    def __init__(self, mapping):
        self._mapping = dict(mapping)

    @classmethod
    def from_csv(cls, path):
        mapping = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != ("hs4", "sitc3", "category"):
                raise TradeDataError(f"{path}: expected header hs4,sitc3,category")
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                hs4 = row[0].strip()
                code = row[2].strip().upper()
                if code not in LALL_CODES:
                    raise TradeDataError(f"{path}:{line_no}: unknown category code {code!r}")
                cat = LALL_CODES[code]
                if hs4 in mapping and mapping[hs4] is not cat:
                    raise TradeDataError(f"{path}:{line_no}: conflicting category for {hs4}")
                mapping[hs4] = cat
        return cls(mapping)

    def category(self, product):
        try:
            return self._mapping[product]
        except KeyError:
            raise CoverageError(f"product {product} missing from the concordance") from None

    def coverage_report(self, products):
        """Products with no concordance entry."""
        return sorted(p for p in products if p not in self._mapping)


def map_lall(product, concordance):
    """Category for one product; unmapped products raise CoverageError."""
    return concordance.category(product)


def lall_labels(dataset, concordance):
    """Per-row category labels; every product appearing in a row must map."""
    used = sorted(set(np.asarray(dataset.products)[np.unique(dataset.p)]))
    missing = [p for p in concordance.coverage_report(used)]
    if missing:
        raise CoverageError(
            f"{len(missing)} products missing from the concordance: {missing[:10]}")
    per_product = np.array([concordance._mapping.get(p, LallCategory.EXCLUDED).value
                            for p in dataset.products])
    return per_product[dataset.p]


def run_split_regressions(dataset, split, periods=None, horizon=2, rca=None,
                          concordance=None, new_threshold=0.2,
                          experienced_threshold=1.0, standardize_response=False,
                          threads=1):
    """Fit the model within each split cell, re-standardizing per cell.

    ``split`` is one of "none", "period", "exporter", "lall". Period splits
    subset rows by base year (overlapping periods are allowed and duplicate
    rows across cells); exporter splits need the classification ``rca``;
    lall splits need the ``concordance`` and drop the excluded category.
    Cells that are too small or degenerate are skipped with a warning.
    """
    def fit_cell(key, sub):
        if sub.n <= K_PARAMETERS:
            log.warning("split %s cell %s skipped: n=%d <= k=%d", split, key,
                        sub.n, K_PARAMETERS)
            return None
        try:
            z, _ = standardize(sub, standardize_response=standardize_response)
            return fit_ols(z, threads=threads)
        except TradeDataError as exc:
            log.warning("split %s cell %s skipped: %s", split, key, exc)
            return None

    results = {}
    if split == "none":
        res = fit_cell("all", dataset)
        if res is not None:
            results["all"] = res
    elif split == "period":
        if not periods:
            raise TradeDataError("period split needs period definitions")
        for start, end in periods:
            mask = (dataset.t >= start) & (dataset.t <= end - horizon)
            key = f"{start}-{end}"
            res = fit_cell(key, dataset.subset(mask))
            if res is not None:
                results[key] = res
    elif split == "exporter":
        if rca is None:
            raise TradeDataError("exporter split needs a classification RCA matrix")
        labels = exporter_class_labels(dataset, rca, new_threshold, experienced_threshold)
        for cls_ in (ExporterClass.NEW, ExporterClass.NASCENT, ExporterClass.EXPERIENCED):
            res = fit_cell(cls_.value, dataset.subset(labels == cls_.value))
            if res is not None:
                results[cls_.value] = res
    elif split == "lall":
        if concordance is None:
            raise TradeDataError("lall split needs a concordance")
        labels = lall_labels(dataset, concordance)
        n_excluded = int((labels == LallCategory.EXCLUDED.value).sum())
        if n_excluded:
            log.info("lall split: dropping %d special-transaction rows", n_excluded)
        for cat in LALL_RANK_ORDER:
            res = fit_cell(cat.value, dataset.subset(labels == cat.value))
            if res is not None:
                results[cat.value] = res
    else:
        raise TradeDataError(f"unknown split {split!r}")
    return results


def summary_stats(dataset):
    """Per regressor: (name, n, mean, std, min, max); zero variance is flagged."""
    rows = []
    for name in REGRESSOR_NAMES:
        col = dataset.columns[name]
        std = float(np.std(col, ddof=1)) if col.size > 1 else 0.0
        if std == 0:
            log.warning("summary_stats: column %s has zero variance", name)
        rows.append((name, int(col.size), float(np.mean(col)), std,
                     float(np.min(col)), float(np.max(col))))
    return rows


def correlation_matrix(dataset):
    """Pearson correlations of the 15 regressors; unit diagonal."""
    for name in REGRESSOR_NAMES:
        if float(np.std(dataset.columns[name], ddof=1)) == 0:
            raise TradeDataError(f"zero-variance column {name} has no correlation")
    x = np.column_stack([dataset.columns[name] for name in REGRESSOR_NAMES])
    return REGRESSOR_NAMES, np.corrcoef(x, rowvar=False)


def trend_test(coefficients, std_errors):
    """Weighted least-squares trend of five coefficients on category rank 1..5.

    Weights are inverse squared standard errors; the slope's standard error
    uses the weighted residual variance on 3 degrees of freedom, and the
    two-sided p-value comes from the t distribution. Significant means
    p < 0.1.
    """
    y = np.asarray(coefficients, dtype=np.float64)
    se = np.asarray(std_errors, dtype=np.float64)
    if y.shape != (5,) or se.shape != (5,):
        raise TradeDataError("trend test needs exactly five (coefficient, SE) pairs")
    if np.any(se <= 0):
        raise TradeDataError("all coefficient standard errors must be positive")
    x = np.arange(1.0, 6.0)
    w = 1.0 / se ** 2
    xbar = float(np.sum(w * x) / np.sum(w))
    ybar = float(np.sum(w * y) / np.sum(w))
    sxx = float(np.sum(w * (x - xbar) ** 2))
    slope = float(np.sum(w * (x - xbar) * (y - ybar)) / sxx)
    resid = y - (ybar + slope * (x - xbar))
    s2 = float(np.sum(w * resid ** 2) / 3.0)
    slope_se = float(np.sqrt(s2 / sxx))
    if slope_se == 0:
        pvalue = 1.0 if slope == 0 else 0.0
    else:
        pvalue = float(2.0 * stats.t.sf(abs(slope / slope_se), 3))
    return TrendResult(slope=slope, se=slope_se, pvalue=pvalue,
                       significant=pvalue < 0.1)


def trend_over_lall(results_by_category):
    """Trend test for every coefficient across the five categories in rank order.

    ``results_by_category`` maps the five non-excluded category values to
    RegressionResult; all five must be present.
    """
    missing = [c.value for c in LALL_RANK_ORDER if c.value not in results_by_category]
    if missing:
        raise TradeDataError(f"trend needs all five categories, missing {missing}")
    ordered = [results_by_category[c.value] for c in LALL_RANK_ORDER]
    out = {}
    names = ordered[0].names
    for i, name in enumerate(names):
        if name == "const":
            continue
        coefs = [r.beta[i] for r in ordered]
        ses = [r.se[i] for r in ordered]
        out[name] = trend_test(coefs, ses)
    return out


def write_results_json(results, path):
    payload = [res.to_dict(split_key=key) for key, res in sorted(results.items())]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_results_json(path):
    """Rebuild {split_key: RegressionResult} from write_results_json output."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    results = {}
    for entry in payload:
        names = tuple(c["name"] for c in entry["coefficients"])
        beta = np.array([c["beta"] for c in entry["coefficients"]])
        se = np.array([c["se"] for c in entry["coefficients"]])
        tstat = np.array([c["t"] for c in entry["coefficients"]])
        pvalue = np.array([c["p"] for c in entry["coefficients"]])
        results[entry["split_key"]] = RegressionResult(
            names=names, beta=beta, se=se, tstat=tstat, pvalue=pvalue,
            n=entry["n"], r2=float("nan"), adj_r2=entry["adj_r2"],
            resid_se=entry["resid_se"], ortho_rel=float("nan"))
    return results


def write_results_csv(results, path):
    """Table-style rendering: one coefficient row pair per variable and split."""
    keys = sorted(results)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variable"] + keys)
        names = results[keys[0]].names if keys else ()
        for i, name in enumerate(names):
            w.writerow([name] + [f"{results[k].beta[i]:.6f}" for k in keys])
            w.writerow([f"{name}_se"] + [f"({results[k].se[i]:.6f})" for k in keys])
        w.writerow(["n"] + [results[k].n for k in keys])
        w.writerow(["adj_r2"] + [f"{results[k].adj_r2:.6f}" for k in keys])
        w.writerow(["resid_se"] + [f"{results[k].resid_se:.6f}" for k in keys])


def write_trend_csv(trends, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "slope", "se", "p", "significant"])
        for name in sorted(trends):
            t = trends[name]
            w.writerow([name, f"{t.slope:.6f}", f"{t.se:.6f}", f"{t.pvalue:.6f}",
                        str(t.significant).lower()])


def write_summary_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "n", "mean", "std", "min", "max"])
        for name, n, mean, std, lo, hi in rows:
            w.writerow([name, n, f"{mean:.6f}", f"{std:.6f}", f"{lo:.6f}", f"{hi:.6f}"])


def write_correlation_csv(names, matrix, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variable"] + list(names))
        for i, name in enumerate(names):
            w.writerow([name] + [f"{matrix[i, j]:.6f}" for j in range(len(names))])
