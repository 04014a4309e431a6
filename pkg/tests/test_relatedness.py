import numpy as np
import pytest

import tradegravity as tg


def three_country_dyads():
    dyads = tg.DyadMeta()
    dyads.add("AAA", "BBB", 1000.0, 1, 0, 0, 2.0)
    dyads.add("AAA", "CCC", 2000.0, 0, 0, 1, 0.0)
    dyads.add("BBB", "CCC", 1000.0, 0, 1, 0, 5.0)
    return dyads


def test_distance_weights_rows():
    weights = tg.DistanceWeights.from_dyads(("AAA", "BBB", "CCC"), three_country_dyads())
    assert np.allclose(weights.matrix.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.all(np.diag(weights.matrix) == 0.0)
    assert weights.weight("AAA", "BBB") == pytest.approx(2.0 / 3.0, rel=1e-15)
    assert weights.weight("AAA", "CCC") == pytest.approx(1.0 / 3.0, rel=1e-15)
    assert weights.weight("BBB", "AAA") == pytest.approx(0.5, rel=1e-15)


def test_distance_weights_missing_pair():
    dyads = tg.DyadMeta()
    dyads.add("AAA", "BBB", 1000.0, 0, 0, 0, 0.0)
    with pytest.raises(tg.CoverageError):
        tg.DistanceWeights.from_dyads(("AAA", "BBB", "CCC"), dyads)


def omega_fixture():
    """One dyad, three products, hand-set proximity."""
    cells = {
        (2000, "AAA", "0101", "BBB"): 25.0,
        (2000, "AAA", "0102", "BBB"): 50.0,
        (2000, "AAA", "0103", "BBB"): 25.0,
    }
    tensor = tg.TradeTensor.from_cells(["AAA", "BBB"], ["0101", "0102", "0103"], cells)
    phi = np.array([[0.0, 0.6, 0.4],
                    [0.6, 0.0, 0.0],
                    [0.4, 0.0, 0.0]])
    prox = tg.ProximityMatrix(phi, tensor.products)
    return tensor, prox


def test_product_relatedness_hand_value():
    tensor, prox = omega_fixture()
    omega = tg.product_relatedness(tensor, prox, 2000)
    # cells are sorted by (origin, product, destination)
    assert omega[0] == pytest.approx(0.6 * 0.5 + 0.4 * 0.25, rel=1e-14)  # 0.4
    assert omega[1] == pytest.approx(0.25, rel=1e-14)
    assert omega[2] == pytest.approx(0.25, rel=1e-14)


def test_product_relatedness_sole_product_in_basket():
    # the only product o sends to d: no other products in the o->d basket
    cells = {(2000, "AAA", "0101", "BBB"): 9.0,
             (2000, "AAA", "0102", "CCC"): 4.0}
    tensor = tg.TradeTensor.from_cells(["AAA", "BBB", "CCC"], ["0101", "0102"], cells)
    phi = np.array([[0.0, 0.5], [0.5, 0.0]])
    omega = tg.product_relatedness(tensor, tg.ProximityMatrix(phi, tensor.products), 2000)
    assert omega[0] == 0.0
    assert omega[1] == 0.0


def test_product_relatedness_single_related_product_dense():
    # o ships only p' to d and p' carries all of p's proximity mass: omega = 1
    cells = {(2000, "AAA", "0102", "BBB"): 42.0}
    tensor = tg.TradeTensor.from_cells(["AAA", "BBB"], ["0101", "0102"], cells)
    phi = np.array([[0.0, 0.7], [0.7, 0.0]])
    prox = tg.ProximityMatrix(phi, tensor.products)
    weights = tg.DistanceWeights(("AAA", "BBB"), np.array([[0.0, 1.0], [1.0, 0.0]]))
    omega, _, _ = tg.dense_relatedness(tensor, prox, weights, 2000)
    i = {c: k for k, c in enumerate(tensor.countries)}
    j = {p: k for k, p in enumerate(tensor.products)}
    assert omega[i["AAA"], j["0101"], i["BBB"]] == 1.0
    assert np.isnan(omega[i["AAA"], j["0101"], i["AAA"]])  # x_od = 0 there


def test_single_product_world_omega_zero():
    cells = {(2000, "AAA", "0101", "BBB"): 3.0}
    tensor = tg.TradeTensor.from_cells(["AAA", "BBB"], ["0101"], cells)
    prox = tg.ProximityMatrix(np.zeros((1, 1)), tensor.products)
    assert tg.product_relatedness(tensor, prox, 2000)[0] == 0.0


def test_isolated_product_skipped():
    cells = {(2000, "AAA", "0101", "BBB"): 3.0,
             (2000, "AAA", "0102", "BBB"): 5.0,
             (2000, "AAA", "0103", "BBB"): 7.0}
    tensor = tg.TradeTensor.from_cells(["AAA", "BBB"], ["0101", "0102", "0103"], cells)
    phi = np.zeros((3, 3))
    phi[0, 1] = phi[1, 0] = 0.8  # product 0103 is isolated
    omega = tg.product_relatedness(tensor, tg.ProximityMatrix(phi, tensor.products), 2000)
    assert np.isfinite(omega[0]) and np.isfinite(omega[1])
    assert np.isnan(omega[2])


def importer_fixture():
    cells = {
        (2000, "AAA", "0101", "CCC"): 70.0,   # A ships p only to C
        (2000, "AAA", "0102", "BBB"): 10.0,
        (2000, "BBB", "0101", "CCC"): 30.0,
    }
    tensor = tg.TradeTensor.from_cells(["AAA", "BBB", "CCC"], ["0101", "0102"], cells)
    weights = tg.DistanceWeights.from_dyads(tensor.countries, three_country_dyads())
    return tensor, weights


def test_importer_relatedness_single_destination():
    tensor, weights = importer_fixture()
    values = tg.importer_relatedness(tensor, weights, 2000)
    # active cells sorted: (AAA,0101,CCC), (AAA,0102,BBB), (BBB,0101,CCC)
    assert values[0] == 0.0  # the only destination is d itself
    assert values[1] == 0.0


def test_importer_relatedness_dense_neighbor_weight():
    tensor, weights = importer_fixture()
    prox = tg.ProximityMatrix(np.array([[0.0, 0.3], [0.3, 0.0]]), tensor.products)
    _, omega_d, _ = tg.dense_relatedness(tensor, prox, weights, 2000)
    i = {c: k for k, c in enumerate(tensor.countries)}
    j = {p: k for k, p in enumerate(tensor.products)}
    # evaluated at destination B: A ships p exclusively to C, so the value is w(B,C)
    assert omega_d[i["AAA"], j["0101"], i["BBB"]] == pytest.approx(
        weights.weight("BBB", "CCC"), rel=1e-14)


def test_exporter_relatedness_values():
    tensor, weights = importer_fixture()
    values = tg.exporter_relatedness(tensor, weights, 2000)
    # (AAA,0101,CCC): the other exporter BBB supplies 30% of x_pd
    assert values[0] == pytest.approx(weights.weight("AAA", "BBB") * 0.3, rel=1e-14)
    # (BBB,0101,CCC): AAA supplies 70%
    assert values[2] == pytest.approx(weights.weight("BBB", "AAA") * 0.7, rel=1e-14)
    # (AAA,0102,BBB): sole exporter
    assert values[1] == 0.0


def test_exporter_relabel_symmetry():
    # two symmetric exporters swap values when labels swap
    dyads = tg.DyadMeta()
    dyads.add("AAA", "BBB", 1000.0, 0, 0, 0, 0.0)
    dyads.add("AAA", "CCC", 1000.0, 0, 0, 0, 0.0)
    dyads.add("BBB", "CCC", 1000.0, 0, 0, 0, 0.0)
    cells = {(2000, "AAA", "0101", "CCC"): 60.0,
             (2000, "BBB", "0101", "CCC"): 40.0}
    tensor = tg.TradeTensor.from_cells(["AAA", "BBB", "CCC"], ["0101"], cells)
    weights = tg.DistanceWeights.from_dyads(tensor.countries, dyads)
    values = tg.exporter_relatedness(tensor, weights, 2000)
    swapped = {(2000, "BBB", "0101", "CCC"): 60.0,
               (2000, "AAA", "0101", "CCC"): 40.0}
    tensor2 = tg.TradeTensor.from_cells(["AAA", "BBB", "CCC"], ["0101"], swapped)
    values2 = tg.exporter_relatedness(tensor2, weights, 2000)
    assert values[0] == values2[1] and values[1] == values2[0]


def test_scale_invariance(small_pipeline):
    w, prox, weights, rel = small_pipeline
    tensor = w.tensor
    year = tensor.years[0]
    scaled_cells = {}
    for yr in tensor.years:
        o, p, d, v = tensor.flows(yr)
        for i in range(o.size):
            scaled_cells[(yr, tensor.countries[o[i]], tensor.products[p[i]],
                          tensor.countries[d[i]])] = float(v[i]) * 137.5
    scaled = tg.TradeTensor.from_cells(tensor.countries, tensor.products, scaled_cells)
    rel_scaled = tg.compute_relatedness(scaled, prox, weights, year)
    base = rel[year]
    for a, b in [(base.omega, rel_scaled.omega), (base.omega_d, rel_scaled.omega_d),
                 (base.omega_o, rel_scaled.omega_o)]:
        m = np.isfinite(a)
        assert np.array_equal(m, np.isfinite(b))
        assert np.allclose(a[m], b[m], rtol=1e-12, atol=0)


def test_matches_bruteforce_on_random_worlds():
    for seed in range(8):
        rng = np.random.default_rng(seed)
        cfg = tg.SyntheticWorldConfig(
            n_countries=int(rng.integers(2, 8)), n_products=int(rng.integers(2, 10)),
            n_years=3, sparsity=float(rng.uniform(0.3, 0.9)), seed=seed + 500)
        w = tg.generate_world(cfg)
        prox = tg.compute_proximity(tg.binarize(tg.compute_rca(w.tensor, (2000, 2002))))
        weights = tg.DistanceWeights.from_dyads(w.tensor.countries, w.dyad_meta)
        for year in w.tensor.years:
            rel = tg.compute_relatedness(w.tensor, prox, weights, year)
            bo, bd, bo2 = tg.brute_force_relatedness(w.tensor, prox, weights, year)
            m = np.isfinite(rel.omega)
            assert np.array_equal(m, np.isfinite(bo))
            assert np.allclose(rel.omega[m], bo[m], rtol=1e-12, atol=0)
            assert np.allclose(rel.omega_d, bd, rtol=1e-12, atol=0)
            assert np.allclose(rel.omega_o, bo2, rtol=1e-12, atol=0)


def test_threads_do_not_change_values(small_pipeline):
    w, prox, weights, rel = small_pipeline
    year = w.tensor.years[0]
    threaded = tg.compute_relatedness(w.tensor, prox, weights, year, threads=3)
    base = rel[year]
    for a, b in [(base.omega, threaded.omega), (base.omega_d, threaded.omega_d),
                 (base.omega_o, threaded.omega_o)]:
        assert np.array_equal(np.nan_to_num(a, nan=-1), np.nan_to_num(b, nan=-1))


def test_chunk_size_does_not_change_values(small_pipeline):
    w, prox, weights, rel = small_pipeline
    year = w.tensor.years[0]
    small_chunks = tg.product_relatedness(w.tensor, prox, year, chunk_rows=2)
    base = rel[year].omega
    assert np.array_equal(np.nan_to_num(base, nan=-1), np.nan_to_num(small_chunks, nan=-1))


def test_relatedness_csv_roundtrip(tmp_path, small_pipeline):
    w, prox, weights, rel = small_pipeline
    path = tmp_path / "rel.csv"
    tg.relatedness.write_relatedness_csv(list(rel.values()), path)
    again = tg.relatedness.read_relatedness_csv(path, w.tensor.countries,
                                                w.tensor.products)
    for year, base in rel.items():
        got = again[year]
        keep = np.isfinite(base.omega)
        assert got.n == int(keep.sum())
        # 10 significant digits survive the round trip at 1e-9 relative
        assert np.allclose(got.omega, base.omega[keep], rtol=1e-9, atol=1e-12)
        assert np.allclose(got.omega_d, base.omega_d[keep], rtol=1e-9, atol=1e-12)


def test_vocabulary_mismatch_rejected(small_pipeline):
    w, prox, weights, _ = small_pipeline
    other = tg.DistanceWeights(("XXX", "YYY"), np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(tg.TradeDataError):
        tg.compute_relatedness(w.tensor, prox, other, w.tensor.years[0])
