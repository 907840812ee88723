import random

import pytest

from enrichbench.services import (
    MISS,
    CacheService,
    LruCache,
    ObjectStore,
    ServerBank,
    TableStore,
    UnknownBlob,
    UnknownTable,
)
from enrichbench.simkernel import constant, exponential


def test_server_bank_fifo_admission_hand_trace():
    # Two servers, 10us service.  Arrivals at 0, 1, 2:
    #   a@0 -> server 1 free -> completes 10
    #   b@1 -> server 2 free -> completes 11
    #   c@2 -> both busy; earliest frees at 10 -> completes 20
    bank = ServerBank(2)
    assert bank.admit(0, 10) == 10
    assert bank.admit(1, 10) == 11
    assert bank.admit(2, 10) == 20


def test_server_bank_idle_gap_resets():
    bank = ServerBank(1)
    assert bank.admit(0, 5) == 5
    # Issued after the server went idle: starts at issue time, not at 5.
    assert bank.admit(100, 5) == 105


def test_subcritical_load_sees_no_queueing_and_littles_law():
    # Open-loop Poisson arrivals, lambda*S well under the concurrency cap:
    # nothing queues, so completion == issue + service for every request, and
    # the time-averaged in-service count matches Little's law within 5%.
    rng = random.Random(17)
    svc_us = 4000
    lam = 0.012  # per us -> lambda*S = 48 servers on average
    bank = ServerBank(128)
    t = 0.0
    busy_us = 0
    horizon = 0
    for _ in range(50_000):
        t += rng.expovariate(lam)
        issued = int(t)
        completion = bank.admit(issued, svc_us)
        assert completion == issued + svc_us  # never delayed
        busy_us += svc_us
        horizon = completion
    avg_in_service = busy_us / horizon
    expected = lam * svc_us
    assert abs(avg_in_service - expected) / expected < 0.05


def test_overloaded_bank_throughput_caps_at_capacity():
    # Deterministic overload: arrivals every 1us, 10us service, 2 servers.
    # Sustained completion rate must approach 2 per 10us.
    bank = ServerBank(2)
    last = 0
    n = 10_000
    for i in range(n):
        last = bank.admit(i, 10)
    assert abs(last - n * 10 / 2) / last < 0.01


def test_table_store_query_hit_and_miss_cost_the_same():
    rng = random.Random(1)
    store = TableStore(constant(4.0), 128, rng)
    store.create_table("device")
    store.insert("device", ("acct-1", "d-9"), True)
    done_hit, value_hit = store.query("device", ("acct-1", "d-9"), issued_at=1000)
    done_miss, value_miss = store.query("device", ("acct-1", "nope"), issued_at=1000)
    assert value_hit is True
    assert value_miss is MISS
    assert done_hit == 1000 + 4000
    assert done_miss == 1000 + 4000  # absent rows still cost a full trip


def test_unknown_table_raises():
    store = TableStore(constant(4.0), 128, random.Random(1))
    with pytest.raises(UnknownTable):
        store.query("nope", "k", issued_at=0)
    with pytest.raises(UnknownTable):
        store.insert("nope", "k", 1)


def test_lru_against_reference_oracle():
    # Reference oracle: a plain dict plus an explicit recency list.
    class RefLru:
        def __init__(self, cap):
            self.cap = cap
            self.d = {}
            self.order = []  # least recent first

        def get(self, k):
            if k in self.d:
                self.order.remove(k)
                self.order.append(k)
                return self.d[k]
            return None

        def put(self, k, v):
            if k in self.d:
                self.order.remove(k)
            self.d[k] = v
            self.order.append(k)
            if len(self.d) > self.cap:
                evicted = self.order.pop(0)
                del self.d[evicted]

    rng = random.Random(23)
    lru = LruCache(50)
    ref = RefLru(50)
    for i in range(100_000):
        key = rng.randrange(200)
        if rng.random() < 0.5:
            got = lru.get(key)
            expected = ref.get(key)
            assert (None if got is MISS else got) == expected
        else:
            lru.put(key, i)
            ref.put(key, i)
    assert len(lru) == len(ref.d)


def test_lru_refreshes_recency_on_hit():
    lru = LruCache(2)
    lru.put("a", 1)
    lru.put("b", 2)
    assert lru.get("a") == 1  # refresh "a"
    lru.put("c", 3)  # evicts "b", the least recently used
    assert lru.get("b") is MISS
    assert lru.get("a") == 1
    assert lru.get("c") == 3


def test_cache_service_costs_one_round_trip_each_way():
    svc = CacheService(constant(0.5), 256, capacity=10, rng=random.Random(2))
    done, value = svc.cache_get("k", issued_at=0)
    assert done == 500 and value is MISS
    ack = svc.cache_put("k", "v", issued_at=done)
    assert ack == done + 500
    done2, value2 = svc.cache_get("k", issued_at=ack)
    assert done2 == ack + 500 and value2 == "v"


def test_object_store_fetch_and_unknown_blob():
    store = ObjectStore(8, random.Random(3))
    store.register_blob("resnet-18", 44_700_000, constant(871.0))
    done, size = store.fetch_blob("resnet-18", issued_at=0)
    assert done == 871_000
    assert size == 44_700_000
    with pytest.raises(UnknownBlob):
        store.fetch_blob("resnet-999", issued_at=0)


def test_stochastic_service_times_draw_from_given_stream():
    # Same seed -> identical completion sequences; the draw stream is the
    # service's own, so an unrelated consumer cannot perturb it.
    def completions(seed):
        store = TableStore(exponential(4.0), 128, random.Random(seed))
        store.create_table("t")
        return [store.query("t", i, issued_at=i * 10)[0] for i in range(100)]

    assert completions(5) == completions(5)
    assert completions(5) != completions(6)
