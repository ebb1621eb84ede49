import math

import numpy as np
import pytest

from adsteg import evaluation as ev
from adsteg.ads import StegoTranscript, StopPolicy, encode
from adsteg.channel import MarkovChannel, ReplayChannel, UniformChannel
from adsteg.exceptions import ConfigError, DistributionUnavailableError
from adsteg.keystream import KeyedPRF


def fake_transcript(decodable, tokens):
    return StegoTranscript(tokens=[0] * tokens, records=[], n_bits=8, prompt=(), stop=StopPolicy(),
                           framed=True, expansion="inclusive", payload_bits=decodable,
                           embedded_bits=decodable, decodable_bits=decodable, terminated_by="disambiguated")


def test_entropy_examples(onehot):
    assert ev.entropy(UniformChannel(4), [()]) == 2.0
    assert ev.entropy(onehot, [(), (0,), (1,)]) == 0.0
    ch = MarkovChannel([[0.5, 0.25, 0.25]] * 3, [1.0, 0.0, 0.0])
    assert ev.entropy(ch, [(2,)]) == pytest.approx(1.5, abs=1e-15)
    assert ev.shannon_entropy([0.5, 0.5, 0.0]) == 1.0
    with pytest.raises(DistributionUnavailableError):
        ev.entropy(ReplayChannel(3, {}), [()])


def test_success_rate_examples():
    assert ev.success_rate("1010", "1010") == 1.0
    assert ev.success_rate("1010", "1000") == 0.75
    assert ev.success_rate("1010", None) == 0.0
    assert ev.success_rate("1010", "") == 0.0
    assert ev.success_rate("1010", "10") == 0.5
    with pytest.raises(ConfigError):
        ev.success_rate("", "1")


def test_embed_rate_examples(key, onehot):
    assert ev.embed_rate(fake_transcript(64, 9)) == pytest.approx(64 / 9)
    assert ev.embed_rate(fake_transcript(48, 6)) == 8.0
    t = encode("1" * 8, key, onehot, n_bits=2, stop="max:20", framed=False)
    assert ev.embed_rate(t) == 0.0
    with pytest.raises(ConfigError):
        ev.embed_rate(fake_transcript(0, 0))


def test_embed_rate_of_a_real_run(key, uniform256):
    t = encode("01" * 32, key, uniform256, n_bits=8, framed=False)
    assert ev.embed_rate(t) == t.decodable_bits / len(t.tokens)
    assert ev.embed_rate(t) <= 8.0


def test_distinct_n():
    assert ev.distinct_n([1, 2, 3, 4], 2) == 1.0
    assert ev.distinct_n([1, 1, 1, 1], 2) == pytest.approx(1 / 3)
    with pytest.raises(ConfigError):
        ev.distinct_n([1, 2], 3)


def test_perplexity():
    assert ev.perplexity(UniformChannel(8), (), [1, 2, 3]) == pytest.approx(8.0)
    ch = MarkovChannel([[1.0, 0.0], [0.0, 1.0]])
    assert ev.perplexity(ch, (0,), [0, 0]) == 1.0
    assert ev.perplexity(ch, (0,), [1]) == math.inf


def test_run_metrics(key, uniform16):
    rt = ev.round_trip("1100" * 16, key, uniform16, 4)
    m = ev.run_metrics(rt.transcript, uniform16, "1100" * 16, rt.decoded)
    assert m.success_rate == 1.0 and m.entropy_per_token == 4.0
    assert m.utilization == pytest.approx(m.embed_rate / 4.0)
    row = ev.metrics_row(m, run=3)
    assert row["run"] == 3 and row["tokens_emitted"] == len(rt.transcript)


def test_capacity_never_exceeds_entropy_on_vocab4():
    result = ev.capacity_sweep(4, [2], message_len=256, repetitions=10, tokens=100, seed=3)
    assert all(r <= 2.0 for r in result.rows[0].rates)
    assert result.rows[0].entropy == 2.0


# -- statistics -------------------------------------------------------------------------

def test_total_variation():
    assert ev.total_variation([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert ev.total_variation([1, 0], [0, 1]) == 1.0


def test_goodness_of_fit_edge_cases():
    assert ev.goodness_of_fit(np.array([5, 0]), np.array([1.0, 0.0])) == (0.0, 1.0)
    assert ev.goodness_of_fit(np.array([4, 1]), np.array([1.0, 0.0])) == (math.inf, 0.0)


def test_distribution_one_hot_is_exact(onehot):
    report = ev.distribution_preservation_test(onehot, (1,), n_bits=3, trials=300)
    assert report.tv_distance == 0.0 and report.passed


def test_distribution_small_sample_sanity():
    report = ev.distribution_preservation_test(UniformChannel(8), (), 3, trials=4000, seed=1)
    assert report.p_value > 1e-4
    assert report.observed.sum() == 4000


def test_game_identical_arms_p_one():
    ch = MarkovChannel([[1.0, 0.0], [0.0, 1.0]])
    report = ev.game_equivalence_test(ch, (0,), 4, trials=500)
    assert report.p_value == 1.0 and not report.rejected
    np.testing.assert_array_equal(report.counts_real, report.counts_uniform)

    def scripted_arm(rng, trials, channel, history, n):
        return [i % 5 for i in range(trials)]

    same = ev.game_equivalence_test(UniformChannel(5), (), 2, 200, real_arm=scripted_arm, other_arm=scripted_arm)
    assert same.p_value == 1.0


def test_game_broken_encoder_is_caught():
    fixed = bytes(32)

    def broken_arm(rng, trials, channel, history, n):
        seed = KeyedPRF(fixed).step_seeds(0, [0], n)[0]
        return [channel.sample(seed, history)] * trials

    report = ev.game_equivalence_test(UniformChannel(16), (), 4, 20_000, seed=5, real_arm=broken_arm)
    assert report.rejected and report.p_value < 0.001


def test_game_small_sample_not_rejected():
    report = ev.game_equivalence_test(UniformChannel(16), (), 4, 5000, seed=11)
    assert not report.rejected


def test_first_tokens_lazy_equals_full(markov8):
    rng = np.random.default_rng(0)
    keys = [rng.bytes(32) for _ in range(50)]
    messages = [format(int(x), "05b") for x in rng.integers(0, 32, size=50)]
    lazy = ev.stego_first_tokens(keys, messages, markov8, (3,), 5)
    full = ev.stego_first_tokens(keys, messages, markov8, (3,), 5, lazy=False)
    assert lazy == full
    # and both match the encoder's actual first token
    for k, m, tok in zip(keys, messages, lazy):
        assert encode(m, k, markov8, prompt=(3,), n_bits=5, stop="max:1", framed=False).tokens == [tok]


# -- sweep and reports -------------------------------------------------------------------

def test_small_sweep_is_reproducible():
    a = ev.capacity_sweep(16, [2, 4], message_len=256, repetitions=3, tokens=30, seed=9)
    b = ev.capacity_sweep(16, [2, 4], message_len=256, repetitions=3, tokens=30, seed=9)
    assert [r.rates for r in a.rows] == [r.rates for r in b.rows]
    with pytest.raises(ConfigError):
        ev.capacity_sweep(16, [4, 2])


def test_report_csv():
    text = ev.report_csv([{"suite": "a", "x": 0.1}, {"suite": "b", "y": 2}])
    lines = text.splitlines()
    assert lines[0] == "format,suite,x,y"
    assert lines[1] == "ads-report/1,a,0.1,"
    assert lines[2] == "ads-report/1,b,,2"



def test_capacity_bounded_by_entropy_on_average(markov8):
    rng = np.random.default_rng(12)
    rates, entropies = [], []
    for _ in range(30):
        t = encode("".join(map(str, rng.integers(0, 2, 1024).tolist())), rng.bytes(32), markov8,
                   n_bits=8, stop="max:150", framed=False)
        rates.append(ev.embed_rate(t))
        entropies.append(ev.entropy(markov8, ev.run_histories((), t.tokens)))
    assert np.mean(rates) < np.mean(entropies)
