import numpy as np
import pytest

import tradegravity as tg
from tradegravity.ingest import Reporter, load_trade_csv, write_rejects_report

HEADER = "year,origin,destination,product,value,reporter\n"


def write(tmp_path, body, name="trade.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body)
    return path


def test_load_basic_row(tmp_path):
    path = write(tmp_path, "2003,KOR,CHL,6201,152000,exporter\n")
    records, rejects = load_trade_csv(path)
    assert rejects == []
    assert records == [tg.TradeFlowRecord(2003, "KOR", "CHL", "6201", 152000.0,
                                          Reporter.EXPORTER)]


def test_load_negative_value_raises_with_line(tmp_path):
    path = write(tmp_path, "2003,KOR,CHL,6201,100,exporter\n2003,KOR,CHL,6202,-5,exporter\n")
    with pytest.raises(tg.ParseError) as exc:
        load_trade_csv(path)
    assert exc.value.line_no == 3


def test_load_short_product_rejected_not_raised(tmp_path):
    path = write(tmp_path, "2003,KOR,CHL,62,100,exporter\n2003,KOR,CHL,6201,100,importer\n")
    records, rejects = load_trade_csv(path)
    assert len(records) == 1
    assert len(rejects) == 1
    assert rejects[0].reason == "bad_product_code"
    assert rejects[0].line_no == 2


def test_load_rejects_bad_codes_and_self_trade(tmp_path):
    body = ("2003,K,CHL,6201,1,exporter\n"
            "2003,KOR,ch,6201,1,exporter\n"
            "2003,KOR,KOR,6201,1,exporter\n"
            "2003,KOR,CHL,6201,0,exporter\n")
    _, rejects = load_trade_csv(write(tmp_path, body))
    assert [r.reason for r in rejects] == [
        "bad_origin_code", "bad_destination_code", "self_trade", "zero_value"]


def test_load_unparseable_year_and_reporter_raise(tmp_path):
    with pytest.raises(tg.ParseError):
        load_trade_csv(write(tmp_path, "20x3,KOR,CHL,6201,1,exporter\n"))
    with pytest.raises(tg.ParseError):
        load_trade_csv(write(tmp_path, "2003,KOR,CHL,6201,1,customs\n"))


def test_load_schema_mapping(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("yr,origin,destination,product,value,reporter\n"
                    "2003,KOR,CHL,6201,5,exporter\n")
    records, _ = load_trade_csv(path, schema={"year": "yr"})
    assert records[0].year == 2003
    with pytest.raises(tg.ParseError):
        load_trade_csv(path)  # default schema misses the renamed column


def test_rejects_report_roundtrip(tmp_path):
    _, rejects = load_trade_csv(write(tmp_path, "2003,KOR,KOR,6201,1,exporter\n"))
    out = tmp_path / "rejects.csv"
    write_rejects_report(rejects, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "line,reason,row"
    assert lines[1].startswith("2,self_trade,")


def _rec(year, o, d, p, v, side):
    return tg.TradeFlowRecord(year, o, d, p, v, side)


THREE_RECORDS = [
    _rec(2000, "AAA", "BBB", "0101", 100.0, Reporter.EXPORTER),
    _rec(2000, "AAA", "BBB", "0102", 100.0, Reporter.EXPORTER),
    _rec(2000, "AAA", "BBB", "0102", 120.0, Reporter.IMPORTER),
]


def test_reconcile_agreement_and_single_source():
    records = THREE_RECORDS + [
        _rec(2000, "AAA", "BBB", "0103", 50.0, Reporter.EXPORTER),
        _rec(2000, "AAA", "BBB", "0103", 50.0, Reporter.IMPORTER),
    ]
    tensor, audit = tg.reconcile(records)
    assert tensor.value(2000, "AAA", "0101", "BBB") == 100.0  # single source
    assert tensor.value(2000, "AAA", "0103", "BBB") == 50.0   # agreement
    assert audit.exporter_only == 1
    assert audit.both_agree == 1
    assert audit.both_discrepant == 1


@pytest.mark.parametrize("policy,expected", [
    ("importer", 120.0), ("exporter", 100.0), ("max", 120.0), ("mean", 110.0)])
def test_reconcile_policies(policy, expected):
    tensor, _ = tg.reconcile(THREE_RECORDS, policy=policy)
    assert tensor.value(2000, "AAA", "0102", "BBB") == expected


def test_reconcile_is_idempotent(small_world):
    tensor = small_world.tensor
    records = []
    for year in tensor.years:
        o, p, d, v = tensor.flows(year)
        for i in range(o.size):
            records.append(_rec(year, tensor.countries[o[i]], tensor.countries[d[i]],
                                tensor.products[p[i]], float(v[i]), Reporter.EXPORTER))
    again, audit = tg.reconcile(records)
    assert audit.both_agree == 0 and audit.both_discrepant == 0
    assert again.countries == tensor.countries
    for year in tensor.years:
        for a, b in zip(tensor.flows(year), again.flows(year)):
            assert np.array_equal(a, b)


def _filter_fixture():
    # BIG and MED pass every rule; SML fails population; LOW fails trade; IRQ is listed
    cells = {}
    for i, (o, v) in enumerate([("BIG", 3e9), ("MED", 2e9), ("SML", 2e9),
                                ("LOW", 0.4e9), ("IRQ", 3e9)]):
        d = "BIG" if o != "BIG" else "MED"
        cells[(2008, o, f"010{i + 1}", d)] = v
    tensor = tg.TradeTensor.from_cells(
        ["BIG", "MED", "SML", "LOW", "IRQ"], [f"010{i}" for i in range(1, 6)], cells)
    meta = tg.CountryMeta()
    for c, pop in [("BIG", 50e6), ("MED", 8e6), ("SML", 1.0e6), ("LOW", 9e6),
                   ("IRQ", 30e6)]:
        meta.add(c, 2008, pop, 10000.0)
    return tensor, meta


def test_filter_rules():
    tensor, meta = _filter_fixture()
    filtered, removed = tg.filter_countries(tensor, meta)
    assert removed == {"SML": "population", "LOW": "trade_volume", "IRQ": "excluded"}
    assert set(filtered.countries) == {"BIG", "MED"}
    for year in filtered.years:
        o, _, d, _ = filtered.flows(year)
        assert set(np.concatenate([o, d])) <= set(range(filtered.n_countries))


def test_filter_conservation():
    tensor, meta = _filter_fixture()
    filtered, removed = tg.filter_countries(tensor, meta)
    kept = set(filtered.countries)
    expected = sum(v for (y, o, p, d), v in _iter_cells(tensor)
                   if o in kept and d in kept)
    assert filtered.total(2008) == pytest.approx(expected, rel=1e-12)
    assert filtered.total(2008) <= tensor.total(2008)


def _iter_cells(tensor):
    for year in tensor.years:
        o, p, d, v = tensor.flows(year)
        for i in range(o.size):
            yield (year, tensor.countries[o[i]], tensor.products[p[i]],
                   tensor.countries[d[i]]), float(v[i])


def test_filter_missing_reference_year():
    tensor, meta = _filter_fixture()
    with pytest.raises(tg.TradeDataError, match="2009"):
        tg.filter_countries(tensor, meta, tg.FilterConfig(trade_year=2009))


def test_filter_missing_population_names_country():
    tensor, meta = _filter_fixture()
    sparse_meta = tg.CountryMeta()
    sparse_meta.add("BIG", 2008, 50e6, 10000.0)
    with pytest.raises(tg.CoverageError, match="IRQ|LOW|MED|SML"):
        tg.filter_countries(tensor, sparse_meta,
                            tg.FilterConfig(exclude=()))


def test_marginals_match_bruteforce_exactly(small_world):
    tensor = small_world.tensor
    year = tensor.years[0]
    o, p, d, v = tensor.flows(year)
    nc, np_ = tensor.n_countries, tensor.n_products
    xod = np.zeros((nc, nc))
    xop = np.zeros((nc, np_))
    xpd = np.zeros((np_, nc))
    for i in range(o.size):  # same entry order as the cached computation
        xod[o[i], d[i]] += v[i]
        xop[o[i], p[i]] += v[i]
        xpd[p[i], d[i]] += v[i]
    assert np.array_equal(xod, tensor.x_od(year))
    assert np.array_equal(xop, tensor.x_op(year))
    assert np.array_equal(xpd, tensor.x_pd(year))


def test_tensor_rejects_bad_cells():
    with pytest.raises(tg.TradeDataError):
        tg.TradeTensor.from_cells(["AAA", "BBB"], ["0101"],
                                  {(2000, "AAA", "0101", "BBB"): 0.0})
    with pytest.raises(tg.TradeDataError):
        tg.TradeTensor.from_cells(["AAA", "BBB"], ["0101"],
                                  {(2000, "AAA", "0101", "AAA"): 5.0})


def test_tensor_csv_roundtrip(tmp_path, small_world):
    tensor = small_world.tensor
    path = tmp_path / "reconciled.csv"
    tg.ingest.write_tensor_csv(tensor, path)
    again = tg.ingest.read_tensor_csv(path)
    assert again.countries == tensor.countries
    assert again.products == tensor.products
    for year in tensor.years:
        for a, b in zip(tensor.flows(year), again.flows(year)):
            assert np.array_equal(a, b)


def test_meta_csv_roundtrip(tmp_path, small_world):
    cpath = tmp_path / "country.csv"
    small_world.country_meta.write_csv(cpath)
    meta = tg.CountryMeta.from_csv(cpath)
    c = small_world.tensor.countries[0]
    assert meta.population(c, 2000) == small_world.country_meta.population(c, 2000)

    dpath = tmp_path / "dyad.csv"
    small_world.dyad_meta.write_csv(dpath)
    dyads = tg.DyadMeta.from_csv(dpath)
    a, b = small_world.tensor.countries[:2]
    assert dyads.distance(a, b) == small_world.dyad_meta.distance(a, b)
    assert dyads.distance(b, a) == dyads.distance(a, b)


def test_dyad_missing_pair_names_pair():
    dyads = tg.DyadMeta()
    dyads.add("AAA", "BBB", 100.0, 1, 0, 0, 0.0)
    with pytest.raises(tg.CoverageError, match=r"AAA.*CCC|CCC.*AAA"):
        dyads.distance("AAA", "CCC")
