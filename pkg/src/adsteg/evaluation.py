"""Metrics and statistical checks for the codec.

Capacity metrics follow the usual definitions: per-token Shannon entropy of
the channel, reliably decodable bits per emitted token, their ratio
(utilisation), and the bit-level success rate. The statistical suites probe
distribution preservation: the stego token must be distributed like a plain
channel sample, and the real encoder must be indistinguishable from one that
ignores the message and picks a uniformly random candidate.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .ads import (
    LazyStepMap,
    StegoTranscript,
    StopMode,
    StopPolicy,
    build_step_map,
    choose_token,
    decode,
    encode,
    init_collision_set,
)
from .bits import check_bits
from .channel import Channel, UniformChannel
from .exceptions import ConfigError, DistributionUnavailableError
from .keystream import KEY_BYTES, KeyedPRF, mask

REPORT_TAG = "ads-report/1"
TV_THRESHOLD = 0.01
ALPHA = 0.001


# -- per-run metrics -----------------------------------------------------------

def shannon_entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def entropy(channel: Channel, histories: Sequence[Sequence[int]]) -> float:
    """Mean next-token entropy in bits over ``histories``."""
    if not channel.explicit:
        raise DistributionUnavailableError(f"{channel.kind} channel has no explicit distribution")
    if not len(histories):
        raise ConfigError("need at least one history")
    return float(np.mean([shannon_entropy(channel.next_distribution(h)) for h in histories]))


def run_histories(prompt: Sequence[int], tokens: Sequence[int]) -> list[tuple[int, ...]]:
    """The history seen before each emitted token."""
    full = tuple(prompt) + tuple(tokens)
    return [full[: len(prompt) + i] for i in range(len(tokens))]


def perplexity(channel: Channel, prompt: Sequence[int], tokens: Sequence[int]) -> float:
    """exp of the mean negative log-likelihood (natural log) of ``tokens``."""
    if not len(tokens):
        raise ConfigError("need at least one token")
    nll = 0.0
    for h, t in zip(run_histories(prompt, tokens), tokens):
        p = channel.next_distribution(h)[t]
        if p <= 0:
            return math.inf
        nll -= math.log(p)
    return math.exp(nll / len(tokens))


def success_rate(original: str, decoded: str | None) -> float:
    """Fraction of positions of ``original`` reproduced by ``decoded``.

    Missing decoded positions count as errors.
    """
    original = check_bits(original)
    if not original:
        raise ConfigError("original bit string is empty")
    decoded = check_bits(decoded or "")[: len(original)]
    hits = sum(a == b for a, b in zip(original, decoded))
    return hits / len(original)


def embed_rate(transcript: StegoTranscript) -> float:
    if not transcript.tokens:
        raise ConfigError("transcript is empty")
    return transcript.decodable_bits / len(transcript.tokens)


def distinct_n(tokens: Sequence[int], n: int) -> float:
    tokens = list(tokens)
    if n < 1 or n > len(tokens):
        raise ConfigError(f"n must be in [1, {len(tokens)}], got {n}")
    grams = [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]
    return len(set(grams)) / len(grams)


@dataclass
class RunMetrics:
    entropy_per_token: float | None
    embed_rate: float
    utilization: float | None
    success_rate: float
    tokens_emitted: int
    wall_time_per_token: float


def run_metrics(transcript: StegoTranscript, channel: Channel, original: str, decoded: str | None) -> RunMetrics:
    """Metrics for one encode/decode pair; entropy only for explicit channels."""
    rate = embed_rate(transcript)
    h = entropy(channel, run_histories(transcript.prompt, transcript.tokens)) if channel.explicit else None
    return RunMetrics(
        entropy_per_token=h,
        embed_rate=rate,
        utilization=(rate / h) if h else None,
        success_rate=success_rate(original, decoded),
        tokens_emitted=len(transcript.tokens),
        wall_time_per_token=transcript.wall_time / len(transcript.tokens),
    )


# -- statistical suites ------------------------------------------------------

def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def _random_keys(rng: np.random.Generator, count: int) -> list[bytes]:
    blob = rng.bytes(KEY_BYTES * count)
    return [blob[i * KEY_BYTES:(i + 1) * KEY_BYTES] for i in range(count)]


def _random_bits(rng: np.random.Generator, nbits: int) -> str:
    return "".join(map(str, rng.integers(0, 2, size=nbits).tolist()))


@dataclass
class PreservationReport:
    n_bits: int
    trials: int
    tv_distance: float
    chi2: float
    p_value: float
    observed: np.ndarray = field(repr=False)
    expected: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.tv_distance < TV_THRESHOLD


def goodness_of_fit(counts: np.ndarray, probs: np.ndarray) -> tuple[float, float]:
    """Pearson chi-square of ``counts`` against ``probs``.

    Mass on a zero-probability token yields ``(inf, 0.0)``; a single
    supported token is a perfect fit.
    """
    support = probs > 0
    if counts[~support].any():
        return math.inf, 0.0
    if support.sum() < 2:
        return 0.0, 1.0
    res = stats.chisquare(counts[support], counts.sum() * probs[support])
    return float(res.statistic), float(res.pvalue)


def distribution_preservation_test(channel: Channel, history: Sequence[int], n_bits: int,
                                   trials: int, seed: int = 0) -> PreservationReport:
    """Single-step encodes under fresh keys and messages vs the channel row.

    Every trial runs the full encoder for one token.
    """
    probs = channel.next_distribution(history)
    rng = np.random.default_rng(seed)
    counts = np.zeros(channel.vocab_size, dtype=np.int64)
    stop = StopPolicy(StopMode.MAX_TOKENS, 1)
    for key in _random_keys(rng, trials):
        t = encode(_random_bits(rng, n_bits), key, channel, prompt=history, n_bits=n_bits,
                   stop=stop, framed=False)
        counts[t.tokens[0]] += 1
    chi2, p = goodness_of_fit(counts, probs)
    return PreservationReport(n_bits, trials, total_variation(counts / trials, probs), chi2, p, counts, probs * trials)


def stego_first_tokens(keys: Sequence[bytes], messages: Sequence[str], channel: Channel,
                       history: Sequence[int], n_bits: int, lazy: bool = True) -> list[int]:
    """First stego token for each ``(key, message)``: the encoder's step 0.

    ``lazy`` samples only the candidate that gets chosen; the resulting
    token is the same as with the full step map.
    """
    cs = init_collision_set(n_bits)
    out = []
    for key, message in zip(keys, messages):
        prf = KeyedPRF(key)
        step_map = LazyStepMap(cs, prf, channel, history) if lazy else build_step_map(cs, prf, channel, history)
        out.append(choose_token(step_map, mask(prf, message[:n_bits]), n_bits))
    return out


def uniform_candidate_tokens(keys: Sequence[bytes], picks: Sequence[int], channel: Channel,
                             history: Sequence[int], n_bits: int) -> list[int]:
    """Message-independent variant: emit the sample of candidate ``picks[i]``."""
    seeds = [KeyedPRF(key).step_seeds(0, [e], n_bits)[0] for key, e in zip(keys, picks)]
    return channel.sample_many(seeds, history)


def _real_arm(rng, trials, channel, history, n_bits):
    keys = _random_keys(rng, trials)
    messages = [format(int(x), f"0{n_bits}b") for x in rng.integers(0, 1 << n_bits, size=trials)]
    return stego_first_tokens(keys, messages, channel, history, n_bits)


def _uniform_arm(rng, trials, channel, history, n_bits):
    keys = _random_keys(rng, trials)
    picks = rng.integers(0, 1 << n_bits, size=trials).tolist()
    return uniform_candidate_tokens(keys, picks, channel, history, n_bits)


@dataclass
class GameReport:
    n_bits: int
    trials: int
    chi2: float
    p_value: float
    counts_real: np.ndarray = field(repr=False)
    counts_uniform: np.ndarray = field(repr=False)

    @property
    def rejected(self) -> bool:
        return self.p_value < ALPHA


def two_sample_chi2(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Chi-square homogeneity test of two histograms over the same bins."""
    table = np.vstack([a, b])
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 0.0, 1.0
    res = stats.chi2_contingency(table, correction=False)
    return float(res.statistic), float(res.pvalue)


def game_equivalence_test(channel: Channel, history: Sequence[int], n_bits: int, trials: int,
                          seed: int = 0, real_arm=None, other_arm=None) -> GameReport:
    """Real encoder (random messages) vs uniform-candidate encoder.

    Each arm draws ``trials`` tokens under fresh keys; the arms can be
    replaced for negative controls. Arms are ``f(rng, trials, channel,
    history, n_bits) -> tokens``.
    """
    rng = np.random.default_rng(seed)
    real_arm = real_arm or _real_arm
    other_arm = other_arm or _uniform_arm
    real = np.bincount(real_arm(rng, trials, channel, history, n_bits), minlength=channel.vocab_size)
    other = np.bincount(other_arm(rng, trials, channel, history, n_bits), minlength=channel.vocab_size)
    chi2, p = two_sample_chi2(real, other)
    return GameReport(n_bits, trials, chi2, p, real, other)


# -- capacity sweep -------------------------------------------------------------

@dataclass
class SweepRow:
    n_bits: int
    embed_rate: float
    wall_time_per_token: float
    entropy: float
    utilization: float
    rates: list[float] = field(default_factory=list, repr=False)


@dataclass
class SweepResult:
    vocab_size: int
    tokens: int
    repetitions: int
    rows: list[SweepRow]


def capacity_sweep(vocab_size: int, n_values: Sequence[int], message_len: int = 2048,
                   repetitions: int = 50, tokens: int = 200, seed: int = 0,
                   expansion: str = "inclusive") -> SweepResult:
    """Mean embedding rate per N on a uniform channel without end-of-text."""
    n_values = list(n_values)
    if n_values != sorted(set(n_values)):
        raise ConfigError("N values must be strictly increasing")
    channel = UniformChannel(vocab_size, None)
    h = entropy(channel, [()])
    rng = np.random.default_rng(seed)
    stop = StopPolicy(StopMode.MAX_TOKENS, tokens)
    rows = []
    for n in n_values:
        rates, times = [], []
        for key in _random_keys(rng, repetitions):
            t = encode(_random_bits(rng, message_len), key, channel, n_bits=n, stop=stop,
                       framed=False, expansion=expansion)
            rates.append(embed_rate(t))
            times.append(t.wall_time / len(t.tokens))
        rate = float(np.mean(rates))
        rows.append(SweepRow(n, rate, float(np.mean(times)), h, rate / h, rates))
    return SweepResult(vocab_size, tokens, repetitions, rows)


# -- round trips --------------------------------------------------------------------

@dataclass
class RoundTrip:
    transcript: StegoTranscript
    decoded: str | None
    status: str
    success_rate: float


def round_trip(message: str, key, channel: Channel, n_bits: int, framed: bool = True,
               stop="disambiguation", prompt: Sequence[int] = (), expansion: str = "inclusive") -> RoundTrip:
    """Encode then decode with the same key; SR compares payload bits."""
    t = encode(message, key, channel, prompt=prompt, n_bits=n_bits, stop=stop, framed=framed, expansion=expansion)
    res = decode(t.tokens, key, channel, prompt=prompt, n_bits=n_bits, framed=framed,
                 message_bits=None if framed else len(message), expansion=expansion)
    return RoundTrip(t, res.message, res.status.value, success_rate(message, res.message) if message else 1.0)


# -- reports ------------------------------------------------------------------------

def report_csv(rows: Sequence[dict]) -> str:
    """``ads-report/1`` CSV: a ``format`` column, then the row fields in order."""
    buf = io.StringIO()
    fields = ["format"]
    for row in rows:
        fields.extend(k for k in row if k not in fields)
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({"format": REPORT_TAG, **{k: _fmt(v) for k, v in row.items()}})
    return buf.getvalue()


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def sweep_rows(result: SweepResult) -> list[dict]:
    return [
        {"suite": "sweep", "vocab_size": result.vocab_size, "n": r.n_bits, "tokens": result.tokens,
         "repetitions": result.repetitions, "embed_rate": r.embed_rate,
         "wall_time_per_token": r.wall_time_per_token, "entropy": r.entropy, "utilization": r.utilization}
        for r in result.rows
    ]


def metrics_row(metrics: RunMetrics, **extra) -> dict:
    return {**extra, **asdict(metrics)}
