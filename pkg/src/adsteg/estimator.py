"""scikit-learn style facade over the codec.

``transform`` embeds messages into token sequences, ``inverse_transform``
recovers them. Hyper-parameters round-trip through ``get_params`` /
``set_params`` and ``clone``; the key and channel are bound at ``fit``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import ads
from .bits import bytes_to_bits, check_bits
from .channel import Channel
from .exceptions import ConfigError
from .keystream import KeyedPRF, check_key, key_gen


def check_messages(X) -> list[str]:
    """Coerce an iterable of messages (bytes or bit strings) to bit strings."""
    if isinstance(X, (str, bytes, bytearray)):
        raise ConfigError("expected an iterable of messages, not a single message")
    out = []
    for m in X:
        out.append(bytes_to_bits(bytes(m)) if isinstance(m, (bytes, bytearray)) else check_bits(m))
    return out


class AdaptiveDynamicSampling(TransformerMixin, BaseEstimator):
    """Embed bit strings into samples of a seed-controlled channel.

    Parameters
    ----------
    channel : Channel
        Sampling channel shared by both parties.
    key : bytes, optional
        32-byte shared key. A fresh key is drawn at ``fit`` when omitted and
        exposed as ``key_``.
    n_bits : int
        The collision set never exceeds ``2**n_bits`` candidates.
    prompt : sequence of int
        Fixed history preceding the stego tokens.
    stop : str
        ``"disambiguation"``, ``"eos"`` or ``"max:T"`` (a ``:T`` suffix caps
        any mode).
    framed : bool
        Length-prefix and checksum the payload.
    expansion : {"inclusive", "strict"}
        Doubling rule; both parties must agree.
    max_prefix_bits : int
        Hard cap on the embedded prefix length.
    """

    def __init__(self, channel=None, key=None, n_bits=8, prompt=(), stop="disambiguation",
                 framed=True, expansion="inclusive", max_prefix_bits=ads.DEFAULT_MAX_PREFIX_BITS):
        self.channel = channel
        self.key = key
        self.n_bits = n_bits
        self.prompt = prompt
        self.stop = stop
        self.framed = framed
        self.expansion = expansion
        self.max_prefix_bits = max_prefix_bits

    def fit(self, X=None, y=None):
        """Validate parameters and bind the key; messages are not needed."""
        if not isinstance(self.channel, Channel):
            raise ConfigError("channel must be a Channel instance")
        ads.check_n(self.n_bits)
        ads.check_rule(self.expansion)
        if self.max_prefix_bits < 1:
            raise ConfigError("max_prefix_bits must be positive")
        self.stop_ = ads.StopPolicy.parse(self.stop)
        self.prompt_ = tuple(int(t) for t in self.prompt)
        self.channel.check_history(self.prompt_)
        self.key_ = key_gen() if self.key is None else check_key(self.key)
        self._prf = KeyedPRF(self.key_)
        return self

    def _codec_kwargs(self):
        return dict(prompt=self.prompt_, n_bits=self.n_bits, framed=self.framed,
                    max_prefix_bits=self.max_prefix_bits, expansion=self.expansion)

    def encode(self, message) -> ads.StegoTranscript:
        check_is_fitted(self, "key_")
        (bits,) = check_messages([message])
        return ads.encode(bits, self._prf, self.channel, stop=self.stop_, **self._codec_kwargs())

    def decode(self, tokens, message_bits=None) -> ads.DecodeResult:
        check_is_fitted(self, "key_")
        return ads.decode(tokens, self._prf, self.channel, message_bits=message_bits,
                          expect_complete=self.framed and self.stop_.mode is ads.StopMode.DISAMBIGUATION
                          and self.stop_.max_tokens is None,
                          **self._codec_kwargs())

    def transform(self, X):
        """Encode each message; returns a list of int64 token arrays."""
        return [np.asarray(self.encode(m).tokens, dtype=np.int64) for m in check_messages(X)]

    def inverse_transform(self, X, message_bits=None):
        """Decode each token sequence to its payload bits (``None`` if not recovered).

        Raises :class:`~adsteg.exceptions.DesyncError` on a diverging
        sequence. In raw mode pass ``message_bits`` to trim padding.
        """
        return [self.decode(tokens, message_bits).message for tokens in X]

    def score(self, X, y=None):
        """Mean bit-level success rate of an encode/decode round trip."""
        from .evaluation import success_rate

        messages = check_messages(X)
        rates = []
        for m in messages:
            res = self.decode(self.encode(m).tokens, None if self.framed else len(m))
            rates.append(success_rate(m, res.message) if m else float(res.message == ""))
        return float(np.mean(rates))
