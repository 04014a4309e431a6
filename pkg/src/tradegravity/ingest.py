"""Loading, reconciliation, filtering, and indexing of raw bilateral trade flows.

Raw rows arrive as exporter- or importer-reported values for the same
(year, origin, product, destination) cell. Reconciliation collapses the two
reports into one value per cell under a configurable policy and the result is
frozen into an immutable sparse TradeTensor with dense integer indices for
countries and products. Zero and missing flows are both represented as absent
cells, so no log-of-zero can ever reach the math layers.
"""
from __future__ import annotations

import csv
import enum
import logging
import re
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, ParseError, TradeDataError

log = logging.getLogger(__name__)

PRODUCT_RE = re.compile(r"^[0-9]{4}$")
COUNTRY_RE = re.compile(r"^[A-Z]{3}$")

TRADE_COLUMNS = ("year", "origin", "destination", "product", "value", "reporter")
COUNTRY_COLUMNS = ("code", "year", "population", "gdp_per_capita")
DYAD_COLUMNS = ("country_a", "country_b", "distance_km", "border", "colony",
                "language", "lang_proximity")


class Reporter(enum.Enum):
    EXPORTER = "exporter"
    IMPORTER = "importer"


class ReconcilePolicy(str, enum.Enum):
    """How to pick a cell value when both trade partners report it."""

    IMPORTER = "importer"
    EXPORTER = "exporter"
    MAX = "max"
    MEAN = "mean"


@dataclass(frozen=True, slots=True)
class TradeFlowRecord:
    year: int
    origin: str
    destination: str
    product: str
    value: float
    reporter: Reporter


@dataclass(frozen=True, slots=True)
class RejectedRow:
    line_no: int
    reason: str
    raw: str


@dataclass
class ReconcileAudit:
    """Counts of how cells were sourced during reconciliation."""

    exporter_only: int = 0
    importer_only: int = 0
    both_agree: int = 0
    both_discrepant: int = 0

    @property
    def cells(self):
        return self.exporter_only + self.importer_only + self.both_agree + self.both_discrepant


@dataclass
class FilterConfig:
    """Country exclusion rules applied after reconciliation.

    A country is dropped when its population is below ``min_population``, or
    its total trade (exports plus imports) in ``trade_year`` is below
    ``min_trade_value``, or it appears in ``exclude``. ``population_year``
    defaults to ``trade_year``.
    """

    min_population: float = 1.2e6
    min_trade_value: float = 1e9
    trade_year: int = 2008
    population_year: int | None = None
    exclude: tuple[str, ...] = ("IRQ", "TCD", "MAC")


def _locked(a):
    a.flags.writeable = False
    return a


class TradeTensor:
    """Sparse positive trade flows keyed by (year, origin, product, destination).

    Flows are stored per year as parallel coordinate arrays sorted by
    (origin, product, destination) index. All stored values are strictly
    positive; a zero flow is simply absent. Instances are immutable and safe
    to share across threads.
    """

    def __init__(self, countries, products, years, flows):
        self.countries = tuple(countries)
        self.products = tuple(products)
        self.years = tuple(sorted(years))
        self.country_index = {c: i for i, c in enumerate(self.countries)}
        self.product_index = {p: i for i, p in enumerate(self.products)}
        self._flows = {}
        self._marginals = {}
        for year, (o, p, d, v) in flows.items():
            o = _locked(np.ascontiguousarray(o, dtype=np.int32))
            p = _locked(np.ascontiguousarray(p, dtype=np.int32))
            d = _locked(np.ascontiguousarray(d, dtype=np.int32))
            v = _locked(np.ascontiguousarray(v, dtype=np.float64))
            if v.size and v.min() <= 0:
                raise TradeDataError(f"year {year}: non-positive flow value stored in tensor")
            if np.any(o == d):
                raise TradeDataError(f"year {year}: origin equals destination in tensor cell")
            key = self._cell_key(o, p, d)
            if key.size > 1 and np.any(np.diff(key) <= 0):
                raise TradeDataError(f"year {year}: tensor cells not sorted or not unique")
            self._flows[int(year)] = (o, p, d, v)

    @classmethod
    def from_cells(cls, countries, products, cells):
        """Build from a mapping (year, origin, product, destination) -> value."""
        countries = tuple(sorted(countries))
        products = tuple(sorted(products))
        cidx = {c: i for i, c in enumerate(countries)}
        pidx = {p: i for i, p in enumerate(products)}
        per_year = {}
        for (year, o, p, d), v in cells.items():
            per_year.setdefault(int(year), []).append((cidx[o], pidx[p], cidx[d], float(v)))
        flows = {}
        for year, quads in per_year.items():
            quads.sort(key=lambda q: (q[0], q[1], q[2]))
            o = np.array([q[0] for q in quads])
            p = np.array([q[1] for q in quads])
            d = np.array([q[2] for q in quads])
            v = np.array([q[3] for q in quads])
            flows[year] = (o, p, d, v)
        return cls(countries, products, sorted(per_year), flows)

    @property
    def n_countries(self):
        return len(self.countries)

    @property
    def n_products(self):
        return len(self.products)

    def _cell_key(self, o, p, d):
        np_ = len(self.products)
        nc = len(self.countries)
        return (o.astype(np.int64) * np_ + p) * nc + d

    def flows(self, year):
        """Coordinate arrays (o_idx, p_idx, d_idx, value) for one year."""
        try:
            return self._flows[int(year)]
        except KeyError:
            raise TradeDataError(f"no trade flows for year {year}") from None

    def has_year(self, year):
        return int(year) in self._flows

    def n_cells(self, year):
        return self._flows[int(year)][0].size if self.has_year(year) else 0

    def cell_keys(self, year):
        o, p, d, _ = self.flows(year)
        return self._cell_key(o, p, d)

    def value(self, year, origin, product, destination):
        """Flow value for a single cell, 0.0 when absent."""
        if not self.has_year(year):
            return 0.0
        o, p, d, v = self.flows(year)
        key = (self.country_index[origin] * np.int64(len(self.products))
               + self.product_index[product]) * len(self.countries) \
            + self.country_index[destination]
        keys = self.cell_keys(year)
        i = np.searchsorted(keys, key)
        if i < keys.size and keys[i] == key:
            return float(v[i])
        return 0.0

    def _marginal(self, year, which):
        cache = self._marginals.setdefault(int(year), {})
        if which in cache:
            return cache[which]
        o, p, d, v = self.flows(year)
        nc, np_ = len(self.countries), len(self.products)
        if which == "od":
            m = np.zeros((nc, nc))
            np.add.at(m, (o, d), v)
        elif which == "op":
            m = np.zeros((nc, np_))
            np.add.at(m, (o, p), v)
        elif which == "pd":
            m = np.zeros((np_, nc))
            np.add.at(m, (p, d), v)
        else:
            raise ValueError(which)
        cache[which] = _locked(m)
        return m

    def x_od(self, year):
        """Dense origin-by-destination totals for one year."""
        return self._marginal(year, "od")

    def x_op(self, year):
        """Dense origin-by-product export totals for one year."""
        return self._marginal(year, "op")

    def x_pd(self, year):
        """Dense product-by-destination import totals for one year."""
        return self._marginal(year, "pd")

    def total(self, year):
        return float(self.flows(year)[3].sum())

    def country_trade_totals(self, year):
        """Exports plus imports per country for one year."""
        xod = self.x_od(year)
        return xod.sum(axis=1) + xod.sum(axis=0)

    def subset_countries(self, keep):
        """New tensor restricted to flows whose origin and destination are kept.

        The country vocabulary shrinks to ``keep``; the product vocabulary is
        left untouched.
        """
        keep = sorted(set(keep))
        missing = [c for c in keep if c not in self.country_index]
        if missing:
            raise TradeDataError(f"unknown countries in keep set: {missing}")
        old_idx = np.array([self.country_index[c] for c in keep], dtype=np.int64)
        remap = np.full(len(self.countries), -1, dtype=np.int64)
        remap[old_idx] = np.arange(len(keep))
        flows = {}
        for year in self.years:
            o, p, d, v = self.flows(year)
            mask = (remap[o] >= 0) & (remap[d] >= 0)
            no, npd, nd, nv = remap[o[mask]], p[mask], remap[d[mask]], v[mask]
            order = np.lexsort((nd, npd, no))
            flows[year] = (no[order], npd[order], nd[order], nv[order])
        return TradeTensor(keep, self.products, self.years, flows)


class CountryMeta:
    """Per country and year: population and GDP per capita."""

    def __init__(self):
        self._pop = {}
        self._gdp = {}

    @classmethod
    def from_csv(cls, path):
        meta = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != COUNTRY_COLUMNS:
                raise ParseError(path, 1, f"expected header {','.join(COUNTRY_COLUMNS)}")
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 4:
                    raise ParseError(path, line_no, f"expected 4 fields, got {len(row)}")
                code = row[0].strip()
                try:
                    year = int(row[1])
                    pop = float(row[2])
                    gdp = float(row[3])
                except ValueError as exc:
                    raise ParseError(path, line_no, f"unparseable numeric field: {exc}") from None
                if pop <= 0:
                    raise ParseError(path, line_no, f"population must be positive, got {pop}")
                if gdp <= 0:
                    raise ParseError(path, line_no, f"gdp_per_capita must be positive, got {gdp}")
                meta.add(code, year, pop, gdp)
        return meta

    def add(self, code, year, population, gdp_per_capita):
        if population <= 0 or gdp_per_capita <= 0:
            raise TradeDataError(f"{code}/{year}: population and gdp_per_capita must be positive")
        self._pop[(code, int(year))] = float(population)
        self._gdp[(code, int(year))] = float(gdp_per_capita)

    def population(self, code, year):
        try:
            return self._pop[(code, int(year))]
        except KeyError:
            raise CoverageError(f"no population for country {code} in year {year}") from None

    def gdp_per_capita(self, code, year):
        try:
            return self._gdp[(code, int(year))]
        except KeyError:
            raise CoverageError(f"no gdp_per_capita for country {code} in year {year}") from None

    def has(self, code, year):
        return (code, int(year)) in self._pop and (code, int(year)) in self._gdp

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(COUNTRY_COLUMNS)
            for code, year in sorted(self._pop):
                w.writerow([code, year, repr(self._pop[(code, year)]),
                            repr(self._gdp[(code, year)])])


@dataclass(frozen=True, slots=True)
class DyadRecord:
    distance_km: float
    border: int
    colony: int
    language: int
    lang_proximity: float


class DyadMeta:
    """Symmetric pairwise country attributes: distance and cultural ties."""

    def __init__(self):
        self._records = {}

    @staticmethod
    def _key(a, b):
        return (a, b) if a <= b else (b, a)

    @classmethod
    def from_csv(cls, path):
        dyads = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != DYAD_COLUMNS:
                raise ParseError(path, 1, f"expected header {','.join(DYAD_COLUMNS)}")
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 7:
                    raise ParseError(path, line_no, f"expected 7 fields, got {len(row)}")
                a, b = row[0].strip(), row[1].strip()
                try:
                    dist = float(row[2])
                    border, colony, language = int(row[3]), int(row[4]), int(row[5])
                    prox = float(row[6])
                except ValueError as exc:
                    raise ParseError(path, line_no, f"unparseable field: {exc}") from None
                try:
                    dyads.add(a, b, dist, border, colony, language, prox)
                except TradeDataError as exc:
                    raise ParseError(path, line_no, str(exc)) from None
        return dyads

    def add(self, a, b, distance_km, border, colony, language, lang_proximity):
        if a == b:
            raise TradeDataError(f"self-dyad {a}")
        if distance_km <= 0:
            raise TradeDataError(f"dyad ({a},{b}): distance must be positive")
        for name, val in (("border", border), ("colony", colony), ("language", language)):
            if val not in (0, 1):
                raise TradeDataError(f"dyad ({a},{b}): {name} must be 0 or 1, got {val}")
        if lang_proximity < 0:
            raise TradeDataError(f"dyad ({a},{b}): lang_proximity must be non-negative")
        rec = DyadRecord(float(distance_km), int(border), int(colony),
                         int(language), float(lang_proximity))
        key = self._key(a, b)
        old = self._records.get(key)
        if old is not None and old != rec:
            raise TradeDataError(f"conflicting duplicate dyad ({a},{b})")
        self._records[key] = rec

    def record(self, a, b):
        try:
            return self._records[self._key(a, b)]
        except KeyError:
            raise CoverageError(f"no dyad data for country pair ({a},{b})") from None

    def distance(self, a, b):
        return self.record(a, b).distance_km

    def distance_matrix(self, countries):
        """Dense symmetric distance matrix over the sample, zero diagonal."""
        n = len(countries)
        m = np.zeros((n, n))
        for i, a in enumerate(countries):
            for j in range(i + 1, n):
                m[i, j] = m[j, i] = self.distance(a, countries[j])
        return m

    def field_matrices(self, countries):
        """Dense symmetric matrices for every dyad field; NaN marks missing pairs."""
        n = len(countries)
        dist = np.full((n, n), np.nan)
        border = np.full((n, n), np.nan)
        colony = np.full((n, n), np.nan)
        language = np.full((n, n), np.nan)
        prox = np.full((n, n), np.nan)
        np.fill_diagonal(dist, 0.0)
        np.fill_diagonal(border, 0.0)
        np.fill_diagonal(colony, 0.0)
        np.fill_diagonal(language, 0.0)
        np.fill_diagonal(prox, 0.0)
        index = {c: i for i, c in enumerate(countries)}
        for (a, b), rec in self._records.items():
            i, j = index.get(a), index.get(b)
            if i is None or j is None:
                continue
            dist[i, j] = dist[j, i] = rec.distance_km
            border[i, j] = border[j, i] = rec.border
            colony[i, j] = colony[j, i] = rec.colony
            language[i, j] = language[j, i] = rec.language
            prox[i, j] = prox[j, i] = rec.lang_proximity
        return {"distance": dist, "border": border, "colony": colony,
                "language": language, "lang_proximity": prox}

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(DYAD_COLUMNS)
            for (a, b) in sorted(self._records):
                r = self._records[(a, b)]
                w.writerow([a, b, repr(r.distance_km), r.border, r.colony,
                            r.language, repr(r.lang_proximity)])


def load_trade_csv(path, schema=None):
    """Parse a raw trade CSV into records plus a list of rejected rows.

    ``schema`` maps the logical column names (year, origin, destination,
    product, value, reporter) to the actual header names; identity by default.

    Structurally malformed rows (wrong field count, unparseable numbers,
    negative values, unknown reporter) raise ParseError with the line number.
    Rows violating vocabulary rules (bad product or country code, self trade)
    are collected as rejects, as are zero-value rows, which are dropped.
    """
    schema = dict(schema or {})
    colmap = {logical: schema.get(logical, logical) for logical in TRADE_COLUMNS}
    records = []
    rejects = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(path, 1, "empty file, header required")
        header = [h.strip() for h in header]
        positions = {}
        for logical, actual in colmap.items():
            if actual not in header:
                raise ParseError(path, 1, f"missing column '{actual}' for field '{logical}'")
            positions[logical] = header.index(actual)
        width = len(header)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(path, line_no, f"expected {width} fields, got {len(row)}")
            raw = ",".join(row)
            get = lambda logical: row[positions[logical]].strip()
            try:
                year = int(get("year"))
            except ValueError:
                raise ParseError(path, line_no, f"unparseable year '{get('year')}'") from None
            try:
                value = float(get("value"))
            except ValueError:
                raise ParseError(path, line_no, f"unparseable value '{get('value')}'") from None
            if value < 0:
                raise ParseError(path, line_no, f"negative trade value {value}")
            reporter_raw = get("reporter").lower()
            try:
                reporter = Reporter(reporter_raw)
            except ValueError:
                raise ParseError(path, line_no, f"unknown reporter '{get('reporter')}'") from None
            origin, destination, product = get("origin"), get("destination"), get("product")
            if not COUNTRY_RE.match(origin):
                rejects.append(RejectedRow(line_no, "bad_origin_code", raw))
                continue
            if not COUNTRY_RE.match(destination):
                rejects.append(RejectedRow(line_no, "bad_destination_code", raw))
                continue
            if origin == destination:
                rejects.append(RejectedRow(line_no, "self_trade", raw))
                continue
            if not PRODUCT_RE.match(product):
                rejects.append(RejectedRow(line_no, "bad_product_code", raw))
                continue
            if value == 0:
                rejects.append(RejectedRow(line_no, "zero_value", raw))
                continue
            records.append(TradeFlowRecord(year, origin, destination, product, value, reporter))
    if rejects:
        log.info("load_trade_csv: %d records parsed, %d rows rejected", len(records), len(rejects))
    return records, rejects


def write_rejects_report(rejects, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["line", "reason", "row"])
        for r in rejects:
            w.writerow([r.line_no, r.reason, r.raw])


def reconcile(records, policy=ReconcilePolicy.IMPORTER):
    """Collapse exporter- and importer-reported rows into one value per cell.

    Multiple reports from the same side of the same cell are summed before
    the policy applies. Returns the reconciled TradeTensor and an audit of
    {exporter-only, importer-only, agreeing, discrepant} cell counts.
    Discrepancies are data, not failures.
    """
    policy = ReconcilePolicy(policy)
    sides = {}
    for rec in records:
        key = (rec.year, rec.origin, rec.product, rec.destination)
        cell = sides.setdefault(key, [0.0, 0.0])
        cell[0 if rec.reporter is Reporter.EXPORTER else 1] += rec.value

    audit = ReconcileAudit()
    cells = {}
    countries = set()
    products = set()
    for key, (exp_val, imp_val) in sides.items():
        if exp_val > 0 and imp_val > 0:
            if exp_val == imp_val:
                audit.both_agree += 1
            else:
                audit.both_discrepant += 1
            if policy is ReconcilePolicy.IMPORTER:
                value = imp_val
            elif policy is ReconcilePolicy.EXPORTER:
                value = exp_val
            elif policy is ReconcilePolicy.MAX:
                value = max(exp_val, imp_val)
            else:
                value = 0.5 * (exp_val + imp_val)
        elif exp_val > 0:
            audit.exporter_only += 1
            value = exp_val
        else:
            audit.importer_only += 1
            value = imp_val
        cells[key] = value
        countries.add(key[1])
        countries.add(key[3])
        products.add(key[2])
    if not cells:
        raise TradeDataError("no records to reconcile")
    tensor = TradeTensor.from_cells(countries, products, cells)
    return tensor, audit


def filter_countries(tensor, meta, rules=None):
    """Drop countries failing the population, trade-volume, or exclusion rules.

    Returns the filtered tensor and a {country: reason} map of removals.
    Every tensor country must have population coverage at the reference year.
    """
    rules = rules or FilterConfig()
    if not tensor.has_year(rules.trade_year):
        raise TradeDataError(
            f"trade-volume rule needs year {rules.trade_year}, which is absent from the data")
    pop_year = rules.population_year if rules.population_year is not None else rules.trade_year
    totals = tensor.country_trade_totals(rules.trade_year)
    removed = {}
    keep = []
    excluded = set(rules.exclude)
    for i, country in enumerate(tensor.countries):
        if country in excluded:
            removed[country] = "excluded"
            continue
        pop = meta.population(country, pop_year)
        if pop < rules.min_population:
            removed[country] = "population"
            continue
        if totals[i] < rules.min_trade_value:
            removed[country] = "trade_volume"
            continue
        keep.append(country)
    if len(keep) < 2:
        raise TradeDataError("fewer than two countries survive the filter rules")
    if removed:
        log.info("filter_countries: removed %d of %d countries", len(removed),
                 tensor.n_countries)
    return tensor.subset_countries(keep), removed


def write_tensor_csv(tensor, path):
    """Persist a reconciled tensor as year,origin,destination,product,value rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "origin", "destination", "product", "value"])
        for year in tensor.years:
            o, p, d, v = tensor.flows(year)
            for i in range(o.size):
                w.writerow([year, tensor.countries[o[i]], tensor.countries[d[i]],
                            tensor.products[p[i]], repr(float(v[i]))])


def read_tensor_csv(path):
    """Load a tensor previously written by write_tensor_csv."""
    cells = {}
    countries = set()
    products = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ("year", "origin", "destination", "product", "value")
        if header is None or tuple(h.strip() for h in header) != expected:
            raise ParseError(path, 1, f"expected header {','.join(expected)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(path, line_no, f"expected 5 fields, got {len(row)}")
            try:
                year = int(row[0])
                value = float(row[4])
            except ValueError as exc:
                raise ParseError(path, line_no, f"unparseable field: {exc}") from None
            if value <= 0:
                raise ParseError(path, line_no, f"non-positive value {value}")
            key = (year, row[1].strip(), row[3].strip(), row[2].strip())
            if key in cells:
                raise ParseError(path, line_no, f"duplicate cell {key}")
            cells[key] = value
            countries.update((key[1], key[3]))
            products.add(key[2])
    if not cells:
        raise TradeDataError(f"{path}: no flows")
    return TradeTensor.from_cells(countries, products, cells)
