import json

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adsteg.channel import (
    MarkovChannel, RemoteChannel, RemoteConfig, ReplayChannel, UniformChannel, cumulative,
    dumps_channel, inverse_cdf, load_channel, next_distribution, sample,
)
from adsteg.evaluation import total_variation
from adsteg.exceptions import (
    ChannelError, ChannelFormatError, ChannelUnusableError, DistributionUnavailableError,
    ScriptExhaustedError,
)

ROW = [0.2, 0.5, 0.3]
QUARTER = 1 << 62


def row_channel():
    return MarkovChannel(np.tile(ROW, (3, 1)), ROW)


# -- sampling ---------------------------------------------------------------------

def test_uniform_inverse_cdf_boundaries():
    ch = UniformChannel(4)
    assert sample(ch, 0, ()) == 0
    # largest seed whose double-precision u stays below 0.25
    assert sample(ch, QUARTER - 512, [1, 2]) == 0
    assert sample(ch, QUARTER - 1, ()) == 1  # rounds up to u = 0.25
    assert sample(ch, QUARTER, ()) == 1
    assert sample(ch, 3 * QUARTER, ()) == 3
    assert sample(ch, (1 << 64) - 1, ()) == 3


def test_degenerate_markov_row():
    ch = MarkovChannel([[1.0, 0.0], [0.0, 1.0]])
    for seed in (0, 12345, (1 << 64) - 1):
        assert sample(ch, seed, [1, 0]) == 0
        assert sample(ch, seed, [0, 1]) == 1


def test_inverse_cdf_skips_trailing_zero_mass():
    cdf = cumulative([0.5, 0.5, 0.0])
    assert inverse_cdf(cdf, 0.9999999999).item() == 1
    assert inverse_cdf(cdf, 1.0).item() == 1


def test_monte_carlo_row_frequencies():
    ch = row_channel()
    rng = np.random.default_rng(7)
    seeds = rng.integers(0, np.iinfo(np.uint64).max, size=1_000_000, dtype=np.uint64, endpoint=True)
    tokens = np.asarray(ch.sample_many(seeds, ()))
    freq = np.bincount(tokens, minlength=3) / len(tokens)
    assert np.all(np.abs(freq - ROW) < 0.002)
    assert total_variation(freq, ROW) < 0.005


@given(st.lists(st.integers(0, (1 << 64) - 1), min_size=1, max_size=50))
def test_scalar_and_vector_paths_agree(seeds):
    for ch in (UniformChannel(7), row_channel()):
        assert ch.sample_many(seeds, (1,)) == [ch.sample(s, (1,)) for s in seeds]


def test_scalar_and_vector_agree_at_cdf_edges():
    ch = row_channel()
    edges = [int(c * 2.0**64) for c in cumulative(ROW)[:-1]]
    seeds = [max(0, e + d) for e in edges for d in range(-3000, 3000, 7)]
    seeds += [(1 << 64) - 1 - d for d in range(100)]
    assert ch.sample_many(seeds, ()) == [ch.sample(s, ()) for s in seeds]


# -- distributions -----------------------------------------------------------------

def test_next_distribution_examples():
    np.testing.assert_array_equal(next_distribution(UniformChannel(8), ()), np.full(8, 0.125))
    ident = MarkovChannel(np.eye(3))
    np.testing.assert_array_equal(next_distribution(ident, [0, 1]), [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(next_distribution(row_channel(), [2]), ROW)


def test_replay_has_no_distribution():
    ch = ReplayChannel(4, {})
    assert not ch.explicit
    with pytest.raises(DistributionUnavailableError):
        ch.next_distribution(())


def test_history_outside_vocabulary():
    with pytest.raises(ChannelError):
        UniformChannel(4).check_history([4])


# -- channel files -------------------------------------------------------------------

def test_load_uniform():
    ch = load_channel("ads-channel/1\nkind uniform\nvocab_size 256\nend_of_text 255\n")
    assert isinstance(ch, UniformChannel)
    assert (ch.vocab_size, ch.end_of_text) == (256, 255)
    assert load_channel(b"ads-channel/1\nkind uniform\nvocab_size 4\n").end_of_text is None


def test_markov_dump_load_roundtrip(markov8):
    again = load_channel(dumps_channel(markov8))
    np.testing.assert_array_equal(again.transition, markov8.transition)
    np.testing.assert_array_equal(again.initial, markov8.initial)
    assert again.end_of_text == 7


def test_row_sum_error():
    text = "ads-channel/1\nkind markov\nvocab_size 2\ninitial 0.5 0.5\nrow 0.5 0.48\nrow 0.5 0.5\n"
    with pytest.raises(ChannelFormatError, match="sums to"):
        load_channel(text)


@pytest.mark.parametrize("text", [
    "kind uniform\nvocab_size 4\n",
    "ads-channel/1\nkind uniform\nvocab_size 1\n",
    "ads-channel/1\nkind uniform\nvocab_size four\n",
    "ads-channel/1\nkind uniform\n",
    "ads-channel/1\nkind uniform\nvocab_size 4\nend_of_text 9\n",
    "ads-channel/1\nkind uniform\nvocab_size 4\nrow 1 0 0 0\n",
    "ads-channel/1\nkind banana\nvocab_size 4\n",
    "ads-channel/1\nkind markov\nvocab_size 2\ninitial 1 0\nrow 1 0\n",
    "ads-channel/1\nkind markov\nvocab_size 2\ninitial 1 0\nrow 1 0\nrow -0.5 1.5\n",
    "ads-channel/1\nkind replay\nvocab_size 2\nentry 1 - 7\n",
    "ads-channel/1\nkind remote\nvocab_size 2\n",
])
def test_malformed_channel_files(text):
    with pytest.raises(ChannelFormatError):
        load_channel(text)


def test_replay_exhaustion():
    script = {(seed, (seed % 3,)): seed % 4 for seed in range(12)}
    ch = load_channel(dumps_channel(ReplayChannel(4, script)))
    assert [ch.sample(s, (s % 3,)) for s in range(12)] == [s % 4 for s in range(12)]
    with pytest.raises(ScriptExhaustedError):
        ch.sample(99, (0,))
    with pytest.raises(ScriptExhaustedError):
        ch.sample(0, (1,))


# -- remote ---------------------------------------------------------------------------

def fake_model(request):
    body = json.loads(request.content)
    return httpx.Response(200, json={"token": (body["seed"] + sum(body["prompt"])) % 10})


def remote(handler, **kw):
    config = kw.pop("config", RemoteConfig(url="http://model.test/generate"))
    return RemoteChannel(config, 10, client=httpx.Client(transport=httpx.MockTransport(handler)), **kw)


def test_remote_request_body_and_sampling():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return fake_model(request)

    ch = remote(handler)
    assert ch.sample(13, [1, 2]) == 6
    assert seen[0] == {"prompt": [1, 2], "seed": 13, "max_new_tokens": 1, "temperature": 1.0, "top_p": 1.0}
    assert len(seen) == 2  # self-check queries twice


def test_remote_sample_many_keeps_order():
    ch = remote(fake_model)
    seeds = list(range(100, 140))
    assert ch.sample_many(seeds, [3]) == [(s + 3) % 10 for s in seeds]


def test_remote_nondeterminism_is_detected():
    counter = iter(range(10**6))
    ch = remote(lambda r: httpx.Response(200, json={"token": next(counter) % 10}))
    with pytest.raises(ChannelUnusableError, match="non-deterministic"):
        ch.sample(1, [])


def test_remote_string_tokens_and_custom_fields(monkeypatch):
    monkeypatch.setenv("MODEL_KEY", "s3cret")
    vocabulary = [f"w{i}" for i in range(10)]
    headers = []

    def handler(request):
        headers.append(request.headers.get("x-api-key"))
        body = json.loads(request.content)
        return httpx.Response(200, json={"out": f"w{body['rng'] % 10}"})

    config = RemoteConfig(url="http://model.test/g", auth_env="MODEL_KEY", auth_header="X-Api-Key",
                          auth_scheme="", seed_field="rng", token_field="out")
    ch = remote(handler, config=config, vocabulary=vocabulary)
    assert ch.sample(27, []) == 7
    assert headers[0] == "s3cret"


def test_remote_failures():
    with pytest.raises(ChannelUnusableError):
        remote(lambda r: httpx.Response(500)).sample(1, [])
    with pytest.raises(ChannelUnusableError):
        remote(lambda r: httpx.Response(200, json={"token": 42})).sample(1, [])
    with pytest.raises(ChannelUnusableError):
        remote(lambda r: httpx.Response(200, json={"token": "w1"})).sample(1, [])
    with pytest.raises(ChannelUnusableError):
        remote(lambda r: httpx.Response(200, text="not json")).sample(1, [])

    def down(request):
        raise httpx.ConnectError("refused")

    with pytest.raises(ChannelUnusableError):
        remote(down).sample(1, [])


def test_remote_missing_auth_env(monkeypatch):
    monkeypatch.delenv("NOPE_KEY", raising=False)
    ch = remote(fake_model, config=RemoteConfig(url="http://x", auth_env="NOPE_KEY"))
    with pytest.raises(ChannelError, match="NOPE_KEY"):
        ch.sample(1, [])


def test_remote_file_and_url_override(monkeypatch):
    text = ("ads-channel/1\nkind remote\nvocab_size 10\nend_of_text 9\nurl http://a.test/gen\n"
            "token_field out\nvocabulary " + " ".join(f"w{i}" for i in range(10)) + "\n")
    ch = load_channel(text)
    assert ch.config.url == "http://a.test/gen" and ch.config.token_field == "out"
    assert not ch.explicit
    assert load_channel(dumps_channel(ch)).vocabulary == ch.vocabulary
    monkeypatch.setenv("ADS_REMOTE_URL", "http://b.test/gen")
    assert load_channel(text).config.url == "http://b.test/gen"
