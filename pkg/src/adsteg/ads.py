"""Adaptive dynamic sampling codec.

The sender keeps a *collision set*: every candidate message prefix that is
still consistent with the tokens emitted so far. Each step draws one keyed
channel sample per candidate, emits the sample assigned to the true
(masked) prefix, keeps the candidates that drew the same token, and doubles
the set (one more message bit) while it holds at most ``2**(N-1)``
strings. The receiver repeats the same sampling and filtering from the
tokens alone; the shared prefix of its final set is the recovered payload.

Candidates are stored as integers of a common bit length ``l``, so ascending
integer order equals lexicographic order of the bit strings. That order
fixes seed derivation and iteration on both sides.
"""

from __future__ import annotations

import enum
import itertools
import hashlib
import time
from bisect import bisect_left
from collections.abc import Sequence
from dataclasses import dataclass, field

from .bits import check_bits, from_int, to_int
from .channel import Channel
from .exceptions import ConfigError, DesyncError, PrefixLimitError, TranscriptFormatError
from .keystream import FrameStatus, KeyedPRF, MaskedStream, frame, mask, unframe

MIN_N = 1
MAX_N = 15
DEFAULT_MAX_PREFIX_BITS = 1 << 16
TRANSCRIPT_TAG = "ads-transcript/1"


def check_n(n_bits) -> int:
    if isinstance(n_bits, bool) or not isinstance(n_bits, int) or not MIN_N <= n_bits <= MAX_N:
        raise ConfigError(f"N must be an integer in [{MIN_N}, {MAX_N}], got {n_bits!r}")
    return n_bits


EXPANSION_RULES = ("inclusive", "strict")


def check_rule(rule: str) -> str:
    if rule not in EXPANSION_RULES:
        raise ConfigError(f"expansion rule must be one of {EXPANSION_RULES}, got {rule!r}")
    return rule


def needs_doubling(size: int, n_bits: int, rule: str = "inclusive") -> bool:
    """Whether a set of ``size`` candidates is doubled again.

    ``inclusive`` doubles while the result still fits in ``2**N``
    (``size <= 2**(N-1)``), so ``{10}`` at N=2 becomes four 4-bit strings.
    ``strict`` doubles only while ``size < 2**(N-1)``; at N=1 it never
    expands a singleton, which then stops taking new bits.
    """
    half = 1 << (n_bits - 1)
    return size <= half if rule == "inclusive" else size < half


@dataclass(frozen=True)
class CollisionSet:
    candidates: tuple[int, ...]
    length: int
    step: int = 0

    def __post_init__(self):
        if not self.candidates:
            raise DesyncError("collision set is empty")

    def __len__(self):
        return len(self.candidates)

    @classmethod
    def from_bitstrings(cls, strings: Sequence[str], step: int = 0) -> "CollisionSet":
        strings = [check_bits(s) for s in strings]
        lengths = {len(s) for s in strings}
        if len(lengths) != 1:
            raise ConfigError("candidates must share one length")
        values = sorted({to_int(s) for s in strings})
        if len(values) != len(strings):
            raise ConfigError("candidates must be distinct")
        return cls(tuple(values), lengths.pop(), step)

    def bitstrings(self) -> list[str]:
        return [from_int(v, self.length) for v in self.candidates]


def init_collision_set(n_bits: int) -> CollisionSet:
    """All ``2**N`` N-bit strings, in canonical order."""
    n_bits = check_n(n_bits)
    return CollisionSet(tuple(range(1 << n_bits)), n_bits, 0)


@dataclass(frozen=True)
class StepMap:
    """Channel sample assigned to each candidate of one collision set."""

    candidates: tuple[int, ...]
    tokens: tuple[int, ...]
    length: int

    @property
    def assignment(self) -> dict[str, int]:
        return {from_int(c, self.length): t for c, t in zip(self.candidates, self.tokens)}

    def image(self) -> set[int]:
        return set(self.tokens)


class LazyStepMap:
    """A step map that queries the channel only for candidates looked up.

    Looked-up values equal those of :func:`build_step_map`; used where only
    the chosen token matters (single-step statistical games).
    """

    def __init__(self, cs: CollisionSet, key, channel: Channel, history: Sequence[int]):
        self.cs = cs
        self.prf = KeyedPRF.coerce(key)
        self.channel = channel
        self.history = tuple(history)
        self.length = cs.length
        self._members = set(cs.candidates)

    def token_for(self, value: int) -> int:
        if value not in self._members:
            raise DesyncError(f"prefix {from_int(value, self.length)} is not in the collision set")
        seed = self.prf.step_seeds(self.cs.step, [value], self.length)[0]
        return self.channel.sample(seed, self.history)


def build_step_map(cs: CollisionSet, key, channel: Channel, history: Sequence[int]) -> StepMap:
    """Query the channel once per candidate, seeds derived in canonical order."""
    prf = KeyedPRF.coerce(key)
    seeds = prf.step_seeds(cs.step, cs.candidates, cs.length)
    tokens = channel.sample_many(seeds, history)
    return StepMap(cs.candidates, tuple(tokens), cs.length)


def _token_for(step_map, value: int) -> int:
    if isinstance(step_map, LazyStepMap):
        return step_map.token_for(value)
    i = bisect_left(step_map.candidates, value)
    if i == len(step_map.candidates) or step_map.candidates[i] != value:
        raise DesyncError(f"prefix {from_int(value, step_map.length)} is not in the step map")
    return step_map.tokens[i]


def choose_token(step_map, masked_message: str, l: int) -> int:
    """Token assigned to the ``l``-bit prefix of ``masked_message``."""
    masked_message = check_bits(masked_message)
    if len(masked_message) < l:
        raise ConfigError(f"need {l} message bits, got {len(masked_message)}")
    if l != step_map.length:
        raise ConfigError(f"prefix length {l} does not match candidate length {step_map.length}")
    return _token_for(step_map, to_int(masked_message[:l]))


def filter_candidates(cs: CollisionSet, step_map: StepMap, chosen: int) -> CollisionSet:
    """Keep the candidates whose sample equals ``chosen``."""
    kept = tuple(c for c, t in zip(step_map.candidates, step_map.tokens) if t == chosen)
    if not kept:
        raise DesyncError(f"token {chosen} is not in the image of step {cs.step}")
    return CollisionSet(kept, cs.length, cs.step)


def expand(cs: CollisionSet, n_bits: int, max_prefix_bits: int = DEFAULT_MAX_PREFIX_BITS,
           rule: str = "inclusive") -> tuple[CollisionSet, int]:
    """Append 0 and 1 to every candidate while :func:`needs_doubling` holds.

    Returns the expanded set and the number of bits appended. Raises
    :class:`PrefixLimitError` before a doubling would exceed
    ``max_prefix_bits``.
    """
    added = 0
    while needs_doubling(len(cs) << added, n_bits, rule):
        added += 1
    if not added:
        return cs, 0
    if cs.length + added > max_prefix_bits:
        raise PrefixLimitError(f"prefix would grow to {cs.length + added} bits (limit {max_prefix_bits})")
    span = 1 << added
    if len(cs) == 1:
        expanded = tuple(range(cs.candidates[0] << added, (cs.candidates[0] + 1) << added))
    else:
        expanded = tuple(itertools.chain.from_iterable(range(c << added, (c << added) + span) for c in cs.candidates))
    return CollisionSet(expanded, cs.length + added, cs.step), added


def shared_prefix_length(cs: CollisionSet) -> int:
    # sorted: the common prefix of all equals that of the extremes
    diff = cs.candidates[0] ^ cs.candidates[-1]
    return cs.length - diff.bit_length()


def shared_prefix(cs: CollisionSet) -> str:
    n = shared_prefix_length(cs)
    return from_int(cs.candidates[0] >> (cs.length - n), n)


class StopMode(enum.Enum):
    NATURAL_EOS = "eos"
    DISAMBIGUATION = "disambiguation"
    MAX_TOKENS = "max"


@dataclass(frozen=True)
class StopPolicy:
    """When the encoder stops emitting tokens.

    ``max_tokens`` caps every mode; for ``MAX_TOKENS`` it is the budget.
    End-of-text only ends generation in ``NATURAL_EOS`` mode.
    """

    mode: StopMode = StopMode.DISAMBIGUATION
    max_tokens: int | None = None

    def __post_init__(self):
        if self.max_tokens is not None and self.max_tokens < 1:
            raise ConfigError("stop budget must be >= 1")
        if self.mode is StopMode.MAX_TOKENS and self.max_tokens is None:
            raise ConfigError("max-tokens stop needs a budget")

    @classmethod
    def parse(cls, text: "str | StopPolicy") -> "StopPolicy":
        """Parse ``eos``, ``disambiguation``, ``max:T`` or ``<mode>:T``."""
        if isinstance(text, StopPolicy):
            return text
        name, _, budget = str(text).partition(":")
        try:
            mode = StopMode(name)
        except ValueError:
            raise ConfigError(f"unknown stop policy {text!r}") from None
        try:
            limit = int(budget) if budget else None
        except ValueError:
            raise ConfigError(f"bad stop budget in {text!r}") from None
        return cls(mode, limit)

    def __str__(self):
        return self.mode.value if self.max_tokens is None else f"{self.mode.value}:{self.max_tokens}"


@dataclass
class StepRecord:
    step: int
    size_before: int
    size_filtered: int
    size_after: int
    length_before: int
    length_after: int
    token: int


@dataclass
class StegoTranscript:
    tokens: list[int]
    records: list[StepRecord]
    n_bits: int
    prompt: tuple[int, ...]
    stop: StopPolicy
    framed: bool
    expansion: str
    payload_bits: int
    embedded_bits: int
    decodable_bits: int
    terminated_by: str
    wall_time: float = 0.0
    trajectory: list[CollisionSet] | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.tokens)

    @property
    def complete(self) -> bool:
        return self.decodable_bits >= self.payload_bits


@dataclass
class DecodeResult:
    bits: str                     # unmasked shared prefix, padding included
    status: FrameStatus
    message: str | None           # payload bits when status is COMPLETE
    decodable_bits: int
    trajectory: list[CollisionSet] | None = field(default=None, repr=False)


def encode(message, key, channel: Channel, prompt: Sequence[int] = (), n_bits: int = 8,
           stop="disambiguation", framed: bool = True,
           max_prefix_bits: int = DEFAULT_MAX_PREFIX_BITS, expansion: str = "inclusive",
           trace: bool = False) -> StegoTranscript:
    """Embed ``message`` (a bit string) into tokens sampled from ``channel``.

    With ``framed`` the payload is length-prefixed and checksummed so the
    receiver can tell where it ends; otherwise the raw bits are embedded and
    their length must travel out of band.
    """
    message = check_bits(message)
    n_bits = check_n(n_bits)
    stop = StopPolicy.parse(stop)
    check_rule(expansion)
    if not message and not framed:
        raise ConfigError("empty message needs framing")
    prompt = tuple(int(t) for t in prompt)
    channel.check_history(prompt)
    payload = frame(message) if framed else message
    if len(payload) > max_prefix_bits:
        raise ConfigError(f"payload of {len(payload)} bits exceeds the prefix limit {max_prefix_bits}")
    prf = KeyedPRF.coerce(key)
    stream = MaskedStream(prf, payload)

    cs = init_collision_set(n_bits)
    history = list(prompt)
    tokens: list[int] = []
    records: list[StepRecord] = []
    trajectory = [cs] if trace else None
    started = time.perf_counter()
    terminated_by = "max_tokens"
    while stop.max_tokens is None or len(tokens) < stop.max_tokens:
        step_map = build_step_map(cs, prf, channel, history)
        token = _token_for(step_map, stream.prefix_value(cs.length))
        tokens.append(token)
        history.append(token)
        filtered = filter_candidates(cs, step_map, token)
        terminal = False
        try:
            expanded, _ = expand(filtered, n_bits, max_prefix_bits, expansion)
        except PrefixLimitError:
            expanded, terminal = filtered, True
        records.append(StepRecord(cs.step, len(cs), len(filtered), len(expanded), cs.length, expanded.length, token))
        cs = CollisionSet(expanded.candidates, expanded.length, cs.step + 1)
        if trace:
            trajectory.append(cs)
        if terminal:
            terminated_by = "prefix_limit"
            break
        if stop.mode is StopMode.NATURAL_EOS and token == channel.end_of_text:
            terminated_by = "eos"
            break
        if stop.mode is StopMode.DISAMBIGUATION and shared_prefix_length(cs) >= len(payload):
            terminated_by = "disambiguated"
            break
    return StegoTranscript(
        tokens=tokens,
        records=records,
        n_bits=n_bits,
        prompt=prompt,
        stop=stop,
        framed=framed,
        expansion=expansion,
        payload_bits=len(payload),
        embedded_bits=cs.length,
        decodable_bits=shared_prefix_length(cs),
        terminated_by=terminated_by,
        wall_time=time.perf_counter() - started,
        trajectory=trajectory,
    )


def decode(stego: Sequence[int], key, channel: Channel, prompt: Sequence[int] = (), n_bits: int = 8,
           framed: bool = True, message_bits: int | None = None,
           max_prefix_bits: int = DEFAULT_MAX_PREFIX_BITS, expansion: str = "inclusive",
           expect_complete: bool = False, trace: bool = False) -> DecodeResult:
    """Recover the payload from ``stego`` by replaying the encoder's sampling.

    Raises :class:`DesyncError` when a token falls outside the current step
    map's image. In raw mode ``message_bits`` (the out-of-band length)
    decides between COMPLETE and INCOMPLETE.

    ``expect_complete`` declares that the encoder stopped only once the
    payload was disambiguated. A matching decoder then always covers the
    payload, so an INCOMPLETE outcome is reported as :class:`DesyncError`.
    """
    n_bits = check_n(n_bits)
    check_rule(expansion)
    prompt = tuple(int(t) for t in prompt)
    tokens = [int(t) for t in stego]
    channel.check_history(prompt)
    channel.check_history(tokens)
    prf = KeyedPRF.coerce(key)

    cs = init_collision_set(n_bits)
    history = list(prompt)
    trajectory = [cs] if trace else None
    for i, token in enumerate(tokens):
        step_map = build_step_map(cs, prf, channel, history)
        history.append(token)
        filtered = filter_candidates(cs, step_map, token)
        try:
            expanded, _ = expand(filtered, n_bits, max_prefix_bits, expansion)
        except PrefixLimitError:
            if i != len(tokens) - 1:
                raise DesyncError("tokens continue past the encoder's prefix limit") from None
            expanded = filtered
        cs = CollisionSet(expanded.candidates, expanded.length, cs.step + 1)
        if trace:
            trajectory.append(cs)

    prefix = shared_prefix(cs) if tokens else ""
    bits = mask(prf, prefix, 0)
    if framed:
        message, status = unframe(bits, max_prefix_bits)
    elif message_bits is None:
        message, status = bits, FrameStatus.COMPLETE
    elif len(bits) >= message_bits:
        message, status = bits[:message_bits], FrameStatus.COMPLETE
    else:
        message, status = None, FrameStatus.INCOMPLETE
    if expect_complete and status is FrameStatus.INCOMPLETE:
        raise DesyncError(f"decoded only {len(prefix)} bits of a payload the encoder reported as disambiguated")
    return DecodeResult(bits, status, message, len(prefix), trajectory)


# -- transcript files --------------------------------------------------------

def channel_digest(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def dumps_transcript(transcript: StegoTranscript, channel_hash: str, audit: bool = True) -> str:
    """Serialise to ``ads-transcript/1``; no timing data, so re-runs are byte-identical."""
    t = transcript
    lines = [
        TRANSCRIPT_TAG,
        f"channel_sha256 {channel_hash}",
        f"n {t.n_bits}",
        f"framed {'true' if t.framed else 'false'}",
        f"expansion {t.expansion}",
        f"prompt {' '.join(map(str, t.prompt)) or '-'}",
        f"stop {t.stop}",
        f"payload_bits {t.payload_bits}",
        f"embedded_bits {t.embedded_bits}",
        f"decodable_bits {t.decodable_bits}",
        f"terminated_by {t.terminated_by}",
        f"tokens {' '.join(map(str, t.tokens)) or '-'}",
    ]
    if audit:
        for r in t.records:
            lines.append(
                f"step {r.step} {r.size_before} {r.size_filtered} {r.size_after} "
                f"{r.length_before} {r.length_after} {r.token}"
            )
    return "\n".join(lines) + "\n"


def loads_transcript(text: str) -> dict:
    """Parse an ``ads-transcript/1`` document into a plain dict."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != TRANSCRIPT_TAG:
        raise TranscriptFormatError(f"missing {TRANSCRIPT_TAG!r} header")
    out: dict = {"records": []}
    try:
        for ln in lines[1:]:
            key, _, rest = ln.partition(" ")
            if key == "step":
                out["records"].append(StepRecord(*map(int, rest.split())))
            elif key in ("prompt", "tokens"):
                out[key] = [] if rest == "-" else [int(x) for x in rest.split()]
            elif key in ("n", "payload_bits", "embedded_bits", "decodable_bits"):
                out[key] = int(rest)
            elif key == "framed":
                if rest not in ("true", "false"):
                    raise ValueError(f"framed must be true/false, got {rest!r}")
                out[key] = rest == "true"
            elif key == "stop":
                out[key] = StopPolicy.parse(rest)
            elif key == "expansion":
                out[key] = check_rule(rest)
            elif key in ("channel_sha256", "terminated_by"):
                out[key] = rest
            else:
                raise ValueError(f"unknown field {key!r}")
    except (TypeError, ValueError) as exc:
        raise TranscriptFormatError(str(exc)) from exc
    missing = {"channel_sha256", "n", "framed", "prompt", "tokens"} - set(out)
    if missing:
        raise TranscriptFormatError(f"transcript lacks {sorted(missing)}")
    return out


__all__ = [
    "CollisionSet", "StepMap", "LazyStepMap", "StopMode", "StopPolicy", "StepRecord",
    "StegoTranscript", "DecodeResult", "init_collision_set", "build_step_map", "choose_token",
    "filter_candidates", "expand", "shared_prefix", "shared_prefix_length", "encode", "decode",
    "dumps_transcript", "loads_transcript", "channel_digest", "needs_doubling",
]
