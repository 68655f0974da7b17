import numpy as np
from hypothesis import given, strategies as st

from retail_marl import rng as rngmod
from retail_marl.ingest import clean, load_transactions
from retail_marl.synthetic import SKUS, synthetic_market, synthetic_transactions

BUNDLED = __import__("pathlib").Path(rngmod.__file__).parent / "data" / "synthetic_transactions.csv"


@given(st.integers(), st.text(max_size=8))
def test_same_key_same_stream(a, b):
    np.testing.assert_array_equal(rngmod.stream("x", a, b).random(4), rngmod.stream("x", a, b).random(4))


def test_distinct_keys_differ():
    draws = {tuple(rngmod.stream("crn", "test", 0, e).random(3)) for e in range(50)}
    assert len(draws) == 50
    assert rngmod.derive_key(1, 2) != rngmod.derive_key(12)
    assert rngmod.derive_key("1") != rngmod.derive_key(1)


def test_global_state_untouched():
    np.random.seed(0)
    before = np.random.random()
    np.random.seed(0)
    rngmod.stream("a").random(10)
    assert np.random.random() == before


def test_market_deterministic():
    a, b = synthetic_market(0), synthetic_market(0)
    np.testing.assert_array_equal(a.panel.quantity, b.panel.quantity)
    assert not np.array_equal(a.panel.quantity, synthetic_market(1).panel.quantity)


def test_transactions_aggregate_to_panel():
    m = synthetic_market(0)
    rows = clean(synthetic_transactions(0))
    totals = np.zeros_like(m.panel.quantity)
    for r in rows:
        totals[(r.timestamp.date() - m.panel.start).days, SKUS.index(r.sku)] += r.quantity
    np.testing.assert_array_equal(totals, m.panel.quantity)


def test_cleaning_drops_planted_lines():
    raw = synthetic_transactions(0)
    kept = clean(raw)
    dropped = [r for r in raw if r not in kept]
    assert dropped and all(r.invoice_id.startswith("C") or r.quantity <= 0 or r.customer_id is None for r in dropped)


def test_bundled_fixture_matches_generator():
    rows, rejects = load_transactions(BUNDLED)
    gen = synthetic_transactions(0)
    assert {r.reason for r in rejects} == {"missing_customer_id"}
    assert len(rejects) == sum(r.customer_id is None for r in gen)
    assert len(rows) + len(rejects) == len(gen)
