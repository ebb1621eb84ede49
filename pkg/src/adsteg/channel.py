"""Seed-controlled sampleable channels.

A channel maps ``(seed, history)`` to one token, deterministically. Local
backends turn the 64-bit seed into ``u = seed / 2**64`` and return the
smallest index whose cumulative probability (accumulated in ascending index
order, double precision) is strictly greater than ``u``. Both sides of a
covert exchange therefore reproduce each other's samples bit for bit.
"""

from __future__ import annotations

import bisect
import io
import itertools
import os
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ChannelError,
    ChannelFormatError,
    ChannelUnusableError,
    DistributionUnavailableError,
    ScriptExhaustedError,
)

FORMAT_TAG = "ads-channel/1"
ROW_TOLERANCE = 1e-12
_TWO_POW_M64 = 2.0 ** -64


def seed_to_uniform(seed: int) -> float:
    return float(seed) * _TWO_POW_M64


def cumulative(probs) -> np.ndarray:
    """Left-to-right running sum in double precision."""
    return np.fromiter(itertools.accumulate(float(p) for p in probs), dtype=np.float64)


def inverse_cdf(cdf: np.ndarray, u):
    """Smallest index ``j`` with ``cdf[j] > u``.

    When rounding leaves ``u`` at or above the final cumulative value, the
    last index carrying probability mass is returned.
    """
    idx = np.searchsorted(cdf, u, side="right")
    last = int(np.searchsorted(cdf, cdf[-1], side="left"))
    return np.minimum(idx, last)


class Channel:
    """Base class; subclasses implement :meth:`sample`."""

    kind = "abstract"
    explicit = False  # exposes next_distribution

    def __init__(self, vocab_size: int, end_of_text: int | None = None):
        if int(vocab_size) < 2:
            raise ChannelFormatError(f"vocab_size must be >= 2, got {vocab_size}")
        self.vocab_size = int(vocab_size)
        if end_of_text is not None and not 0 <= int(end_of_text) < self.vocab_size:
            raise ChannelFormatError(f"end_of_text {end_of_text} outside vocabulary")
        self.end_of_text = None if end_of_text is None else int(end_of_text)

    def check_history(self, history: Sequence[int]) -> None:
        for t in history:
            if not 0 <= t < self.vocab_size:
                raise ChannelError(f"history token {t} outside vocabulary of size {self.vocab_size}")

    def sample(self, seed: int, history: Sequence[int]) -> int:
        raise NotImplementedError

    def sample_many(self, seeds: Sequence[int], history: Sequence[int]) -> list[int]:
        """One sample per seed, in the order given."""
        return [self.sample(s, history) for s in seeds]

    def next_distribution(self, history: Sequence[int]) -> np.ndarray:
        raise DistributionUnavailableError(f"{self.kind} channel has no explicit distribution")

    def __repr__(self):
        return f"{type(self).__name__}(vocab_size={self.vocab_size}, end_of_text={self.end_of_text})"


class _DiscreteChannel(Channel):
    explicit = True

    def _cdf(self, history: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def _cdf_list(self, history: Sequence[int]) -> tuple[list[float], int]:
        raise NotImplementedError

    def sample(self, seed: int, history: Sequence[int]) -> int:
        # scalar twin of inverse_cdf; bisect_right == searchsorted(side="right")
        cdf, last = self._cdf_list(history)
        return min(bisect.bisect_right(cdf, seed_to_uniform(seed)), last)

    def sample_many(self, seeds, history):
        if not len(seeds):
            return []
        u = np.asarray(seeds, dtype=np.uint64).astype(np.float64) * _TWO_POW_M64
        return inverse_cdf(self._cdf(history), u).tolist()


class UniformChannel(_DiscreteChannel):
    """Every token equally likely; ``end_of_text`` may be ``None``."""

    kind = "uniform"

    def __init__(self, vocab_size: int, end_of_text: int | None = None):
        super().__init__(vocab_size, end_of_text)
        self._probs = np.full(self.vocab_size, 1.0 / self.vocab_size)
        self._cdf_row = cumulative(self._probs)
        self._scalar = _scalar_cdf(self._cdf_row)

    def _cdf(self, history):
        return self._cdf_row

    def _cdf_list(self, history):
        return self._scalar

    def next_distribution(self, history):
        return self._probs.copy()


class MarkovChannel(_DiscreteChannel):
    """Order-1 chain over token ids.

    ``initial`` is used for an empty history; otherwise the row of the last
    history token.
    """

    kind = "markov"

    def __init__(self, transition, initial=None, end_of_text: int | None = None):
        transition = np.asarray(transition, dtype=np.float64)
        if transition.ndim != 2 or transition.shape[0] != transition.shape[1]:
            raise ChannelFormatError(f"transition table must be square, got shape {transition.shape}")
        super().__init__(transition.shape[0], end_of_text)
        if initial is None:
            initial = np.full(self.vocab_size, 1.0 / self.vocab_size)
        initial = np.asarray(initial, dtype=np.float64)
        if initial.shape != (self.vocab_size,):
            raise ChannelFormatError("initial row length must equal vocab_size")
        for name, row in itertools.chain([("initial", initial)], ((f"row {i}", r) for i, r in enumerate(transition))):
            _check_row(name, row)
        self.transition = transition
        self.initial = initial
        self._cdf_initial = cumulative(initial)
        self._cdf_rows = np.vstack([cumulative(r) for r in transition])
        self._scalar_initial = _scalar_cdf(self._cdf_initial)
        self._scalar_rows = [_scalar_cdf(r) for r in self._cdf_rows]

    def _cdf(self, history):
        return self._cdf_rows[history[-1]] if len(history) else self._cdf_initial

    def _cdf_list(self, history):
        return self._scalar_rows[history[-1]] if len(history) else self._scalar_initial

    def next_distribution(self, history):
        return (self.transition[history[-1]] if len(history) else self.initial).copy()


def _scalar_cdf(cdf: np.ndarray) -> tuple[list[float], int]:
    return cdf.tolist(), int(np.searchsorted(cdf, cdf[-1], side="left"))


def _check_row(name, row) -> None:
    if not np.all(np.isfinite(row)) or (row < 0).any():
        raise ChannelFormatError(f"{name}: probabilities must be finite and nonnegative")
    total = float(sum(row.tolist()))
    if abs(total - 1.0) > ROW_TOLERANCE:
        raise ChannelFormatError(f"{name}: row sums to {total!r}, not 1 within {ROW_TOLERANCE}")


class ReplayChannel(Channel):
    """Scripted ``(seed, history) -> token`` table, for tests."""

    kind = "replay"

    def __init__(self, vocab_size: int, script: Mapping, end_of_text: int | None = None):
        super().__init__(vocab_size, end_of_text)
        self.script = {}
        for (seed, history), token in script.items():
            if not 0 <= token < self.vocab_size:
                raise ChannelFormatError(f"scripted token {token} outside vocabulary")
            self.script[(int(seed), tuple(history))] = int(token)

    def sample(self, seed, history):
        try:
            return self.script[(int(seed), tuple(history))]
        except KeyError:
            raise ScriptExhaustedError(f"no scripted sample for seed {seed:#x} at history length {len(history)}") from None


@dataclass
class RemoteConfig:
    """Where and how to ask a remote model for one seeded token.

    Field names and the auth header are configurable because every serving
    stack spells them differently.
    """

    url: str
    auth_env: str | None = None
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"
    prompt_field: str = "prompt"
    seed_field: str = "seed"
    token_field: str = "token"
    timeout: float = 30.0
    extra: dict = field(default_factory=lambda: {"max_new_tokens": 1, "temperature": 1.0, "top_p": 1.0})


class RemoteChannel(Channel):
    """Seeded single-token generation over HTTP with a JSON body.

    Every sample is requested twice when ``self_check`` is on; disagreeing
    answers mark the channel unusable, since the codec relies on determinism.
    """

    kind = "remote"

    def __init__(self, config: RemoteConfig, vocab_size: int, end_of_text: int | None = None,
                 vocabulary: Sequence[str] | None = None, self_check: bool = True,
                 max_workers: int = 8, client=None):
        super().__init__(vocab_size, end_of_text)
        self.config = config
        self.vocabulary = None if vocabulary is None else {s: i for i, s in enumerate(vocabulary)}
        self.self_check = self_check
        self.max_workers = max_workers
        if client is None:
            import httpx

            client = httpx.Client(timeout=config.timeout)
        self.client = client

    def _headers(self) -> dict:
        cfg = self.config
        if not cfg.auth_env:
            return {}
        token = os.environ.get(cfg.auth_env)
        if token is None:
            raise ChannelError(f"environment variable {cfg.auth_env} is not set")
        return {cfg.auth_header: f"{cfg.auth_scheme} {token}".strip()}

    def request_body(self, seed: int, history: Sequence[int]) -> dict:
        cfg = self.config
        return {cfg.prompt_field: list(map(int, history)), cfg.seed_field: int(seed), **cfg.extra}

    def _query(self, seed, history) -> int:
        import httpx

        try:
            resp = self.client.post(self.config.url, json=self.request_body(seed, history), headers=self._headers())
            resp.raise_for_status()
            value = resp.json()[self.config.token_field]
        except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
            raise ChannelUnusableError(f"remote sample failed: {exc}") from exc
        return self._resolve(value)

    def _resolve(self, value) -> int:
        if isinstance(value, bool):
            raise ChannelUnusableError(f"unexpected token value {value!r}")
        if isinstance(value, int):
            token = value
        elif isinstance(value, str) and self.vocabulary is not None:
            if value not in self.vocabulary:
                raise ChannelUnusableError(f"token string {value!r} not in declared vocabulary")
            token = self.vocabulary[value]
        else:
            raise ChannelUnusableError(f"unexpected token value {value!r}")
        if not 0 <= token < self.vocab_size:
            raise ChannelUnusableError(f"token id {token} outside vocabulary")
        return token

    def sample(self, seed, history):
        first = self._query(seed, history)
        if self.self_check and self._query(seed, history) != first:
            raise ChannelUnusableError(f"non-deterministic response for seed {seed:#x}")
        return first

    def sample_many(self, seeds, history):
        if self.max_workers <= 1 or len(seeds) <= 1:
            return super().sample_many(seeds, history)
        history = tuple(history)
        with ThreadPoolExecutor(self.max_workers) as pool:
            return list(pool.map(lambda s: self.sample(s, history), seeds))


def sample(channel: Channel, seed: int, history: Sequence[int]) -> int:
    return channel.sample(seed, history)


def next_distribution(channel: Channel, history: Sequence[int]) -> np.ndarray:
    return channel.next_distribution(history)


# -- channel files ---------------------------------------------------------

def _fmt_float(x: float) -> str:
    return repr(float(x))


def dumps_channel(channel: Channel) -> str:
    """Serialise a channel to the ``ads-channel/1`` text format."""
    eot = "none" if channel.end_of_text is None else str(channel.end_of_text)
    lines = [FORMAT_TAG, f"kind {channel.kind}", f"vocab_size {channel.vocab_size}", f"end_of_text {eot}"]
    if isinstance(channel, MarkovChannel):
        lines.append("initial " + " ".join(map(_fmt_float, channel.initial)))
        lines.extend("row " + " ".join(map(_fmt_float, r)) for r in channel.transition)
    elif isinstance(channel, ReplayChannel):
        for (seed, history), token in channel.script.items():
            hist = ",".join(map(str, history)) or "-"
            lines.append(f"entry {seed} {hist} {token}")
    elif isinstance(channel, RemoteChannel):
        cfg = channel.config
        lines.append(f"url {cfg.url}")
        for name in ("auth_env", "auth_header", "auth_scheme", "prompt_field", "seed_field", "token_field"):
            value = getattr(cfg, name)
            if value:
                lines.append(f"{name} {value}")
        if channel.vocabulary is not None:
            lines.append("vocabulary " + " ".join(sorted(channel.vocabulary, key=channel.vocabulary.get)))
    return "\n".join(lines) + "\n"


def load_channel(source, client=None) -> Channel:
    """Parse an ``ads-channel/1`` document from text, bytes or a file object."""
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ChannelFormatError("channel file is not UTF-8 text") from exc
    lines = [ln.strip() for ln in io.StringIO(source)]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != FORMAT_TAG:
        raise ChannelFormatError(f"missing {FORMAT_TAG!r} header")

    header: dict[str, str] = {}
    body: list[tuple[str, list[str]]] = []
    for ln in lines[1:]:
        key, _, rest = ln.partition(" ")
        if key in ("initial", "row", "entry", "vocabulary"):
            body.append((key, rest.split()))
        elif key in header:
            raise ChannelFormatError(f"duplicate field {key!r}")
        else:
            header[key] = rest.strip()
    try:
        kind = header.pop("kind")
        vocab_size = int(header.pop("vocab_size"))
        eot_text = header.pop("end_of_text", "none")
    except KeyError as exc:
        raise ChannelFormatError(f"missing field {exc.args[0]!r}") from None
    except ValueError:
        raise ChannelFormatError("vocab_size must be an integer") from None
    if vocab_size < 2:
        raise ChannelFormatError(f"vocab_size must be >= 2, got {vocab_size}")
    try:
        eot = None if eot_text == "none" else int(eot_text)
    except ValueError:
        raise ChannelFormatError(f"bad end_of_text {eot_text!r}") from None

    try:
        if kind == "uniform":
            _reject_extra(header, body)
            return UniformChannel(vocab_size, eot)
        if kind == "markov":
            _reject_extra(header, [b for b in body if b[0] not in ("initial", "row")])
            initial = [list(map(float, v)) for k, v in body if k == "initial"]
            rows = [list(map(float, v)) for k, v in body if k == "row"]
            if len(initial) != 1:
                raise ChannelFormatError("markov channel needs exactly one initial row")
            if len(rows) != vocab_size or any(len(r) != vocab_size for r in rows + initial):
                raise ChannelFormatError(f"markov channel needs {vocab_size} rows of {vocab_size} entries")
            return MarkovChannel(rows, initial[0], eot)
        if kind == "replay":
            _reject_extra(header, [b for b in body if b[0] != "entry"])
            script = {}
            for _, fields in body:
                if len(fields) != 3:
                    raise ChannelFormatError(f"replay entry needs 3 fields, got {fields}")
                seed, hist, token = fields
                history = () if hist == "-" else tuple(int(t) for t in hist.split(","))
                script[(int(seed), history)] = int(token)
            return ReplayChannel(vocab_size, script, eot)
        if kind == "remote":
            vocab = [v for k, v in body if k == "vocabulary"]
            _reject_extra({}, [b for b in body if b[0] != "vocabulary"])
            known = set(RemoteConfig.__dataclass_fields__) - {"extra"}
            unknown = set(header) - known
            if unknown:
                raise ChannelFormatError(f"unknown remote fields {sorted(unknown)}")
            if "url" not in header:
                raise ChannelFormatError("remote channel needs a url")
            if "timeout" in header:
                header["timeout"] = float(header["timeout"])
            url = os.environ.get("ADS_REMOTE_URL", header.pop("url"))
            return RemoteChannel(RemoteConfig(url=url, **header), vocab_size, eot,
                                 vocabulary=vocab[0] if vocab else None, client=client)
    except ValueError as exc:
        if isinstance(exc, ChannelFormatError):
            raise
        raise ChannelFormatError(f"malformed number in channel file: {exc}") from exc
    raise ChannelFormatError(f"unknown channel kind {kind!r}")


def _reject_extra(header, body) -> None:
    if header or body:
        extra = sorted(header) + sorted({k for k, _ in body})
        raise ChannelFormatError(f"unexpected fields {extra}")
