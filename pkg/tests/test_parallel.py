import pytest

from ofnet.exceptions import ConfigurationError
from ofnet.parallel import parallel_map, thread_count


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("OFNET_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.delenv("OFNET_THREADS")
    assert 1 <= thread_count() <= 4


@pytest.mark.parametrize("bad", ["0", "-2", "two"])
def test_thread_count_invalid(monkeypatch, bad):
    monkeypatch.setenv("OFNET_THREADS", bad)
    with pytest.raises(ConfigurationError):
        thread_count()


@pytest.mark.parametrize("n", ["1", "4"])
def test_parallel_map_keeps_order(monkeypatch, n):
    monkeypatch.setenv("OFNET_THREADS", n)
    assert parallel_map(lambda x: x * x, list(range(20))) == [x * x for x in range(20)]
