"""Synthetic-world generation and brute-force reference implementations.

The generator draws small but fully consistent worlds: random cities on a
sphere, log-normal base-year flows, and covariates with the right sign
constraints. When a planted coefficient vector is supplied, the final year's
flows are produced by the regression model itself evaluated on the true
z-scored regressors of the base year, which makes end-to-end coefficient
recovery a meaningful test of the whole pipeline.

The brute-force functions are deliberately naive transcriptions that share
nothing with the production code paths beyond numpy primitives.
"""
from __future__ import annotations

import itertools
import logging
import math
import string
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .complexity import binarize, compute_rca, compute_proximity
from .errors import SingularDesignError, TradeDataError
from .gravity import (K_PARAMETERS, REGRESSOR_NAMES, BINARY_COLUMNS,
                      RegressionResult)
from .ingest import CountryMeta, DyadMeta, TradeTensor
from .relatedness import DistanceWeights, compute_relatedness

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0


@dataclass
class SyntheticWorldConfig:
    n_countries: int
    n_products: int
    n_years: int = 3
    start_year: int = 2000
    geometry: str = "sphere"  # or "ring"
    planted_beta: np.ndarray | None = None  # 16 values, intercept first
    noise_sigma: float = 0.0
    sparsity: float = 0.5
    seed: int = 0
    horizon: int = 2
    forward_mode: str = "planted"  # or "persist": copy base support, jitter values

    def __post_init__(self):
        if self.n_countries < 2:
            raise TradeDataError("need at least 2 countries")
        if self.n_products < 1:
            raise TradeDataError("need at least 1 product")
        if not 0 < self.sparsity <= 1:
            raise TradeDataError("sparsity must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise TradeDataError("noise_sigma must be non-negative")
        if self.planted_beta is not None:
            self.planted_beta = np.asarray(self.planted_beta, dtype=np.float64)
            if self.planted_beta.shape != (K_PARAMETERS,):
                raise TradeDataError(f"planted_beta must have {K_PARAMETERS} entries")
            if self.n_years <= self.horizon:
                raise TradeDataError("planted worlds need n_years > horizon")
        if self.geometry not in ("sphere", "ring"):
            raise TradeDataError(f"unknown geometry {self.geometry!r}")
        if self.forward_mode not in ("planted", "persist"):
            raise TradeDataError(f"unknown forward_mode {self.forward_mode!r}")


@dataclass
class SyntheticWorld:
    tensor: TradeTensor
    country_meta: CountryMeta
    dyad_meta: DyadMeta
    config: SyntheticWorldConfig
    proximity_window: tuple


def _country_codes(n):
    codes = []
    for combo in itertools.product(string.ascii_uppercase, repeat=3):
        codes.append("".join(combo))
        if len(codes) == n:
            return codes
    raise TradeDataError("too many countries requested")


def _product_codes(n):
    if n > 9000:
        raise TradeDataError("too many products requested")
    return [f"{1000 + i:04d}" for i in range(n)]


def _sphere_distances(n, rng):
    # resample until no two cities are closer than 1 km
    for _ in range(100):
        z = rng.uniform(-1.0, 1.0, size=n)
        theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
        r = np.sqrt(1.0 - z ** 2)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
        cosang = np.clip(pts @ pts.T, -1.0, 1.0)
        dist = EARTH_RADIUS_KM * np.arccos(cosang)
        np.fill_diagonal(dist, 0.0)
        off = dist[~np.eye(n, dtype=bool)]
        if off.min() > 1.0:
            return dist
        log.info("degenerate geometry (coincident cities), resampling")
    raise TradeDataError("could not sample non-degenerate geometry")


def _ring_distances(n):
    angles = 2.0 * math.pi * np.arange(n) / n
    diff = np.abs(angles[:, None] - angles[None, :])
    diff = np.minimum(diff, 2.0 * math.pi - diff)
    return EARTH_RADIUS_KM * diff


def _draw_flows(rng, n_countries, n_products, sparsity, mu=9.0, sigma=2.0):
    """Sorted coordinate arrays for one year, sampled origin by origin."""
    os_, ps_, ds_, vs_ = [], [], [], []
    for o in range(n_countries):
        mask = rng.random((n_products, n_countries)) < sparsity
        mask[:, o] = False
        p_idx, d_idx = np.nonzero(mask)
        vals = np.exp(rng.normal(mu, sigma, size=p_idx.size))
        os_.append(np.full(p_idx.size, o, dtype=np.int32))
        ps_.append(p_idx.astype(np.int32))
        ds_.append(d_idx.astype(np.int32))
        vs_.append(vals)
    return (np.concatenate(os_), np.concatenate(ps_),
            np.concatenate(ds_), np.concatenate(vs_))


def generate_world(config):
    """Build a seeded world: tensor over the years, country meta, dyad meta.

    Identical configs (same seed) produce identical worlds. In "planted"
    forward mode the last year's flows equal exp(model) evaluated on the true
    regressors of the year `horizon` years earlier, over exactly the cells
    active there (minus cells whose product relatedness is undefined). In
    "persist" mode the last year reuses the base support with jittered
    values, which keeps every cell in the two-year sample.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    countries = _country_codes(cfg.n_countries)
    products = _product_codes(cfg.n_products)
    nc = cfg.n_countries

    if cfg.geometry == "sphere":
        dist = _sphere_distances(nc, rng)
    else:
        dist = _ring_distances(nc)

    border = np.zeros((nc, nc), dtype=np.int64)
    colony = np.zeros((nc, nc), dtype=np.int64)
    language = np.zeros((nc, nc), dtype=np.int64)
    lang_prox = np.zeros((nc, nc))
    iu, ju = np.triu_indices(nc, k=1)
    border[iu, ju] = rng.random(iu.size) < 0.15
    colony[iu, ju] = rng.random(iu.size) < 0.07
    language[iu, ju] = rng.random(iu.size) < 0.15
    has_prox = rng.random(iu.size) < 0.4
    prox_vals = np.where(has_prox, rng.gamma(2.0, 5.0, size=iu.size), 0.0)
    lang_prox[iu, ju] = prox_vals

    dyads = DyadMeta()
    for a, b in zip(iu, ju):
        dyads.add(countries[a], countries[b], float(dist[a, b]), int(border[a, b]),
                  int(colony[a, b]), int(language[a, b]), float(lang_prox[a, b]))

    gdp = np.exp(rng.normal(8.5, 1.0, size=nc))
    pop = np.exp(rng.normal(16.0, 1.0, size=nc))
    meta = CountryMeta()
    years = list(range(cfg.start_year, cfg.start_year + cfg.n_years))
    for i, c in enumerate(countries):
        for year in years:
            meta.add(c, year, pop[i], gdp[i])

    planted = cfg.planted_beta is not None
    if planted:
        base_years = years[:-1]
    elif cfg.forward_mode == "persist":
        base_years = [years[0]]  # skip filler years: only the pooled pair matters
    else:
        base_years = years
    flows = {}
    for year in base_years:
        flows[year] = _draw_flows(rng, nc, cfg.n_products, cfg.sparsity)

    prox_window = (base_years[0], base_years[-1])
    if not planted and cfg.forward_mode != "persist":
        tensor = TradeTensor(countries, products, years, flows)
        return SyntheticWorld(tensor, meta, dyads, cfg, prox_window)

    last_year = years[-1]
    base_t = last_year - cfg.horizon
    if base_t not in flows:
        raise TradeDataError(f"base year {base_t} missing for forward generation")
    base_tensor = TradeTensor(countries, products, base_years, flows)
    o, p, d, v = base_tensor.flows(base_t)

    if not planted:  # persist: same support, jittered values
        fwd = v * np.exp(rng.normal(0.0, 1.0, size=v.size))
        flows[last_year] = (o.copy(), p.copy(), d.copy(), fwd)
        tensor = TradeTensor(countries, products, sorted(flows), flows)
        return SyntheticWorld(tensor, meta, dyads, cfg, prox_window)

    prox = compute_proximity(binarize(compute_rca(base_tensor, prox_window)))
    weights = DistanceWeights.from_dyads(countries, dyads)
    rel = compute_relatedness(base_tensor, prox, weights, base_t)

    defined = np.isfinite(rel.omega)
    o, p, d, v = o[defined], p[defined], d[defined], v[defined]
    x_op = base_tensor.x_op(base_t)
    x_pd = base_tensor.x_pd(base_t)
    cols = {
        "omega": rel.omega[defined],
        "omega_d": rel.omega_d[defined],
        "omega_o": rel.omega_o[defined],
        "log_x_opd": np.log(v),
        "log_x_op": np.log(x_op[o, p]),
        "log_x_pd": np.log(x_pd[p, d]),
        "log_distance": np.log(dist[o, d]),
        "log_gdp_o": np.log(gdp[o]),
        "log_gdp_d": np.log(gdp[d]),
        "log_pop_o": np.log(pop[o]),
        "log_pop_d": np.log(pop[d]),
        "border": np.maximum(border, border.T)[o, d].astype(np.float64),
        "colony": np.maximum(colony, colony.T)[o, d].astype(np.float64),
        "language": np.maximum(language, language.T)[o, d].astype(np.float64),
        "log_lang_proximity": np.log1p(np.maximum(lang_prox, lang_prox.T)[o, d]),
    }
    y = np.full(o.size, cfg.planted_beta[0])
    for j, name in enumerate(REGRESSOR_NAMES, start=1):
        col = cols[name]
        if name not in BINARY_COLUMNS:
            std = np.std(col, ddof=1)
            if std == 0:
                raise TradeDataError(
                    f"degenerate synthetic column {name}; enlarge the world")
            col = (col - np.mean(col)) / std
        y = y + cfg.planted_beta[j] * col
    if cfg.noise_sigma > 0:
        y = y + rng.normal(0.0, cfg.noise_sigma, size=y.size)
    flows[last_year] = (o.copy(), p.copy(), d.copy(), np.exp(y))
    tensor = TradeTensor(countries, products, years, flows)
    return SyntheticWorld(tensor, meta, dyads, cfg, prox_window)


def brute_force_relatedness(tensor, prox, weights, year):
    """Literal nested-loop transcription of the three measures.

    Returns (omega, omega_d, omega_o) arrays aligned with the active cells of
    the year, NaN where the product's proximity marginal is zero. Only meant
    for small worlds.
    """
    countries = list(tensor.countries)
    products = list(tensor.products)
    o_idx, p_idx, d_idx, _ = tensor.flows(year)
    n = o_idx.size
    omega = np.full(n, np.nan)
    omega_d = np.full(n, np.nan)
    omega_o = np.full(n, np.nan)
    for i in range(n):
        o = countries[o_idx[i]]
        p = products[p_idx[i]]
        d = countries[d_idx[i]]

        phi_p = 0.0
        for q in products:
            phi_p += prox.value(p, q)
        if len(products) == 1:
            omega[i] = 0.0  # no other products exist: empty sum
        elif phi_p > 0:
            x_od = 0.0
            for q in products:
                x_od += tensor.value(year, o, q, d)
            total = 0.0
            for q in products:
                if q == p:
                    continue
                total += (prox.value(p, q) / phi_p) * (tensor.value(year, o, q, d) / x_od)
            omega[i] = total

        x_op = 0.0
        for c in countries:
            x_op += tensor.value(year, o, p, c)
        total = 0.0
        for c in countries:
            if c == d:
                continue
            total += weights.weight(d, c) * (tensor.value(year, o, p, c) / x_op)
        omega_d[i] = total

        x_pd = 0.0
        for c in countries:
            x_pd += tensor.value(year, c, p, d)
        total = 0.0
        for c in countries:
            if c == o:
                continue
            total += weights.weight(o, c) * (tensor.value(year, c, p, d) / x_pd)
        omega_o[i] = total
    return omega, omega_d, omega_o


def _full_pivot_inverse(a, tol=1e-12):
    """Gauss-Jordan inversion with full pivoting; raises on singularity."""
    a = np.array(a, dtype=np.float64)
    k = a.shape[0]
    aug = np.hstack([a, np.eye(k)])
    col_perm = list(range(k))
    scale = max(float(np.max(np.abs(a))), 1.0)
    for step in range(k):
        sub = np.abs(aug[step:, step:k])
        r_off, c_off = np.unravel_index(int(np.argmax(sub)), sub.shape)
        pivot_r, pivot_c = step + r_off, step + c_off
        if abs(aug[pivot_r, pivot_c]) <= tol * scale:
            raise SingularDesignError(
                [f"column_{col_perm[j]}" for j in range(step, k)],
                "gram matrix singular under full pivoting")
        aug[[step, pivot_r]] = aug[[pivot_r, step]]
        aug[:, [step, pivot_c]] = aug[:, [pivot_c, step]]
        col_perm[step], col_perm[pivot_c] = col_perm[pivot_c], col_perm[step]
        aug[step] = aug[step] / aug[step, step]
        for r in range(k):
            if r != step:
                aug[r] = aug[r] - aug[r, step] * aug[step]
    inv = np.empty((k, k))
    for j in range(k):
        inv[col_perm[j]] = aug[j, k:]
    return inv


def brute_force_ols(x, y, names):
    """Dense textbook OLS: explicit Gram inversion with full pivoting."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, k = x.shape
    if n > 10 ** 4 * 2:
        raise TradeDataError("brute-force OLS is for desk-scale fits only")
    if n <= k:
        raise TradeDataError("need n > k")
    gram = x.T @ x
    inv = _full_pivot_inverse(gram)
    beta = inv @ (x.T @ y)
    resid = y - x @ beta
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    sigma2 = rss / (n - k)
    se = np.sqrt(np.maximum(sigma2 * np.diag(inv), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = np.where(se > 0, beta / se, np.where(beta == 0, 0.0, np.inf * np.sign(beta)))
    pvalue = 2.0 * stats.t.sf(np.abs(tstat), n - k)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    xty = x.T @ y
    denom = float(np.max(np.abs(xty))) or 1.0
    ortho = float(np.max(np.abs(xty - gram @ beta))) / denom
    return RegressionResult(names=tuple(names), beta=beta, se=se, tstat=tstat,
                            pvalue=pvalue, n=int(n), r2=float(r2),
                            adj_r2=float(1.0 - (1.0 - r2) * (n - 1) / (n - k)),
                            resid_se=float(np.sqrt(sigma2)), ortho_rel=ortho)
