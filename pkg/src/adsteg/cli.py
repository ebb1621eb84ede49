"""Command line interface: keygen, encode, decode, eval and sweep.

Exit codes
----------
0  success / complete payload
2  usage or configuration error
3  payload incomplete (more stego tokens needed)
4  desync or checksum mismatch (wrong key, wrong channel, corruption)
5  channel failure
6  file I/O error
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import ads, evaluation
from .bits import bits_to_bytes, bytes_to_bits
from .channel import load_channel
from .exceptions import (
    ChannelError,
    ChannelFormatError,
    ConfigError,
    DesyncError,
    DistributionUnavailableError,
    TranscriptFormatError,
)
from .keystream import FrameStatus, key_gen, read_key_file, write_key_file

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INCOMPLETE = 3
EXIT_DESYNC = 4
EXIT_CHANNEL = 5
EXIT_IO = 6

CONFIG_KEYS = {"channel", "key", "n", "stop", "framed", "prompt", "out", "trials", "test_seed",
               "expansion", "repetitions", "tokens", "n_list", "vocab_size", "message_len"}


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return data


def _resolve(args) -> argparse.Namespace:
    """Fill unset flags from the config file."""
    config = _load_config(getattr(args, "config", None))
    for name, value in config.items():
        if getattr(args, name, None) is None:
            setattr(args, name, value)
    n = getattr(args, "n", None)
    if n is not None:
        ads.check_n(n)
    if getattr(args, "trials", None) is not None and args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required (flag or config)")


def _parse_prompt(value) -> tuple[int, ...]:
    if value is None or value == "":
        return ()
    if isinstance(value, (list, tuple)):
        return tuple(int(t) for t in value)
    return tuple(int(t) for t in str(value).replace(",", " ").split())


def _read_channel(path):
    data = Path(path).read_bytes()
    return load_channel(data), ads.channel_digest(data)


def _write_output(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# -- subcommands ------------------------------------------------------------------------

def cmd_keygen(args) -> int:
    _require(args, "out")
    path = Path(args.out)
    if path.exists():
        raise ConfigError(f"{path}: refusing to overwrite an existing key file")
    write_key_file(path, key_gen())
    print(f"wrote key to {path}")
    return EXIT_OK


def _message_bits(args) -> str:
    if args.message_hex is not None and args.message_file is not None:
        raise ConfigError("give --message-hex or --message-file, not both")
    if args.message_hex is not None:
        try:
            data = bytes.fromhex(args.message_hex)
        except ValueError:
            raise ConfigError("--message-hex is not valid hex") from None
    elif args.message_file is not None:
        data = Path(args.message_file).read_bytes()
    else:
        raise ConfigError("a message is required (--message-hex or --message-file)")
    return bytes_to_bits(data)


def cmd_encode(args) -> int:
    _require(args, "channel", "key")
    n = 8 if args.n is None else args.n
    framed = True if args.framed is None else args.framed
    message = _message_bits(args)
    if not message and not framed:
        raise ConfigError("an empty message needs --framed")
    channel, digest = _read_channel(args.channel)
    key = read_key_file(args.key)
    transcript = ads.encode(message, key, channel, prompt=_parse_prompt(args.prompt), n_bits=n,
                            stop=args.stop or "disambiguation", framed=framed,
                            expansion=args.expansion or "inclusive")
    _write_output(args.out, ads.dumps_transcript(transcript, digest))
    rate = evaluation.embed_rate(transcript) if transcript.tokens else 0.0
    print(f"tokens_emitted {len(transcript)}", file=sys.stderr)
    print(f"embedded_bits {transcript.embedded_bits}", file=sys.stderr)
    print(f"decodable_bits {transcript.decodable_bits} of {transcript.payload_bits}", file=sys.stderr)
    print(f"embed_rate {rate:.4f}", file=sys.stderr)
    print(f"terminated_by {transcript.terminated_by}", file=sys.stderr)
    if transcript.terminated_by == "prefix_limit":
        print(f"warning: prefix limit reached; {transcript.decodable_bits} bits decodable", file=sys.stderr)
    return EXIT_OK if transcript.complete else EXIT_INCOMPLETE


def cmd_decode(args) -> int:
    _require(args, "channel", "key")
    header = ads.loads_transcript(Path(args.transcript).read_text())
    data = Path(args.channel).read_bytes()
    if ads.channel_digest(data) != header["channel_sha256"]:
        raise ConfigError("transcript was produced with a different channel file (hash mismatch)")
    channel = load_channel(data)
    key = read_key_file(args.key)
    stop = header.get("stop")
    expect_complete = (
        header["framed"]
        and header.get("terminated_by") == "disambiguated"
        and stop is not None and stop.mode is ads.StopMode.DISAMBIGUATION
    )
    result = ads.decode(header["tokens"], key, channel, prompt=header["prompt"], n_bits=header["n"],
                        framed=header["framed"], message_bits=None if header["framed"] else header.get("payload_bits"),
                        expansion=header.get("expansion", "inclusive"), expect_complete=expect_complete)
    print(f"status {result.status.value}")
    print(f"decodable_bits {result.decodable_bits}")
    if result.status is FrameStatus.COMPLETE:
        payload = bits_to_bytes(result.message)
        print(f"message_bits {len(result.message)}")
        print(f"message_hex {payload.hex()}")
        if args.out is not None:
            Path(args.out).write_bytes(payload)
        return EXIT_OK
    return EXIT_INCOMPLETE if result.status is FrameStatus.INCOMPLETE else EXIT_DESYNC


def cmd_eval(args) -> int:
    _require(args, "channel")
    channel, _ = _read_channel(args.channel)
    n = 4 if args.n is None else args.n
    trials = 20000 if args.trials is None else args.trials
    seed = 0 if args.test_seed is None else args.test_seed
    prompt = _parse_prompt(args.prompt)
    rows = []
    if channel.explicit:
        pres = evaluation.distribution_preservation_test(channel, prompt, n, trials, seed)
        # TV thresholds are calibrated for one sample size; the p-value is not
        status = "pass" if pres.p_value >= evaluation.ALPHA else "fail"
        rows.append({"suite": "distribution", "status": status, "n": n,
                     "trials": trials, "tv_distance": pres.tv_distance, "chi2": pres.chi2,
                     "p_value": pres.p_value})
        game = evaluation.game_equivalence_test(channel, prompt, n, trials, seed + 1)
        rows.append({"suite": "game", "status": "fail" if game.rejected else "pass", "n": n,
                     "trials": trials, "chi2": game.chi2, "p_value": game.p_value})
    else:
        for suite in ("distribution", "game"):
            notice = f"skipped: {channel.kind} channel has no explicit distribution"
            print(f"{suite}: {notice}", file=sys.stderr)
            rows.append({"suite": suite, "status": "skipped", "n": n, "reason": notice})

    rng = np.random.default_rng(seed + 2)
    runs = max(1, min(20, trials // 1000))
    for i in range(runs):
        key = rng.bytes(32)
        message = "".join(map(str, rng.integers(0, 2, size=128).tolist()))
        rt = evaluation.round_trip(message, key, channel, n, framed=True,
                                   stop=args.stop or "disambiguation:2000", prompt=prompt)
        if rt.status != FrameStatus.COMPLETE.value:
            status = "incomplete"
        else:
            status = "pass" if rt.success_rate == 1.0 else "fail"
        row = {"suite": "roundtrip", "status": status, "n": n,
               "run": i, "tokens": len(rt.transcript), "decodable_bits": rt.transcript.decodable_bits,
               "embed_rate": evaluation.embed_rate(rt.transcript), "success_rate": rt.success_rate}
        if channel.explicit:
            h = evaluation.entropy(channel, evaluation.run_histories(prompt, rt.transcript.tokens))
            row.update(entropy=h, utilization=row["embed_rate"] / h if h else "")
        rows.append(row)
    _write_output(args.out, evaluation.report_csv(rows))
    failed = [r for r in rows if r["status"] == "fail"]
    print(f"{len(rows)} rows, {len(failed)} failed", file=sys.stderr)
    return EXIT_OK if not failed else 1


def cmd_sweep(args) -> int:
    vocab = 256 if args.vocab_size is None else args.vocab_size
    n_list = args.n_list or "2,4,6,8"
    if isinstance(n_list, str):
        n_list = [int(x) for x in n_list.split(",") if x]
    for n in n_list:
        ads.check_n(n)
    result = evaluation.capacity_sweep(
        vocab, n_list,
        message_len=2048 if args.message_len is None else args.message_len,
        repetitions=50 if args.repetitions is None else args.repetitions,
        tokens=200 if args.tokens is None else args.tokens,
        seed=0 if args.test_seed is None else args.test_seed,
        expansion=args.expansion or "inclusive",
    )
    rows = evaluation.sweep_rows(result)
    if not args.timing:
        for row in rows:
            row.pop("wall_time_per_token")
    _write_output(args.out, evaluation.report_csv(rows))
    for r in result.rows:
        print(f"N={r.n_bits:2d} embed_rate={r.embed_rate:.4f} entropy={r.entropy:.4f} "
              f"utilization={r.utilization:.4f}", file=sys.stderr)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adsteg", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     epilog=__doc__.split("\n", 2)[2])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, channel=True):
        p.add_argument("--config", help="JSON config file; flags override it")
        if channel:
            p.add_argument("--channel", help="ads-channel/1 file")
        p.add_argument("--out", help="output path (default stdout)")

    p = sub.add_parser("keygen", help="write a fresh 256-bit key")
    common(p, channel=False)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("encode", help="embed a message into a transcript")
    common(p)
    p.add_argument("--key")
    p.add_argument("--n", type=int)
    p.add_argument("--stop", help="eos | disambiguation | max:T (suffix :T caps any mode)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--framed", dest="framed", action="store_true", default=None)
    g.add_argument("--raw", dest="framed", action="store_false")
    m = p.add_mutually_exclusive_group()
    m.add_argument("--message-hex")
    m.add_argument("--message-file")
    p.add_argument("--prompt", help="prompt token ids, space or comma separated")
    p.add_argument("--expansion", choices=ads.EXPANSION_RULES)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="recover a message from a transcript")
    common(p)
    p.add_argument("--key")
    p.add_argument("transcript", help="ads-transcript/1 file")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="distribution, game and round-trip checks on a channel")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--test-seed", type=int)
    p.add_argument("--prompt")
    p.add_argument("--stop")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="capacity vs N on uniform channels")
    common(p, channel=False)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--n-list", help="comma separated, e.g. 2,4,6,8")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--tokens", type=int)
    p.add_argument("--message-len", type=int)
    p.add_argument("--test-seed", type=int)
    p.add_argument("--expansion", choices=ads.EXPANSION_RULES)
    p.add_argument("--timing", action="store_true", help="include wall-clock columns (not reproducible)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(_resolve(args))
    except DesyncError as exc:
        print(f"desync: {exc}", file=sys.stderr)
        return EXIT_DESYNC
    except (ConfigError, ChannelFormatError, TranscriptFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ChannelError, DistributionUnavailableError) as exc:
        print(f"channel error: {exc}", file=sys.stderr)
        return EXIT_CHANNEL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
