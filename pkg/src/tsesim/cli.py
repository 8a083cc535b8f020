"""Command line entry point: ``tsesim <verb> ...``.

Exit codes: 0 success, 1 usage error, 2 data error. Logs go to stderr;
data goes to stdout or to the files named by each verb.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys

import numpy as np

from . import __version__
from .audio import AudioClip, read_wav, rescale_to_snr, sum_and_rescale, write_wav
from .config import SimConfig, apply_overrides, load_config_dict
from .errors import TseSimError
from .fusion import (METHODS, AffineProjection, format_matrix, fuse_add, fuse_concat,
                     fuse_film, fuse_multiply, parse_matrix)
from .metrics import eval_pairs, format_db, si_snr
from .rir import SyntheticRirConfig, synth_rir
from .shards import build_catalog, pack_shards, read_record_list
from .simulate import align_lengths, export_batch, fit_noise, generate

logger = logging.getLogger("tsesim")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def version_and_provenance(cfg: SimConfig | None = None) -> dict:
    report = {"tool": "tsesim", "version": __version__}
    if cfg is not None:
        report["config_hash"] = cfg.config_hash()
        report["seed"] = cfg.seed
    return report


def _resolve_seed(args, config_seed=None) -> int:
    if args.seed is not None:
        return args.seed
    if config_seed is not None:
        return int(config_seed)
    seed = secrets.randbelow(2**31)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


# -----------------------------
# verbs
# -----------------------------
def cmd_pack(args) -> int:
    records = read_record_list(args.list)
    if not records:
        raise TseSimError(f"{args.list}: no utterances to pack")
    paths = pack_shards(records, args.out, args.shard_size)
    logger.info("packed %d utterances into %d shards", len(records), len(paths))
    return EXIT_OK


def cmd_catalog(args) -> int:
    catalog = build_catalog(args.source, kind=args.kind)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "catalog.tsv"), "w", encoding="utf-8") as fh:
            fh.write(catalog.to_tsv())
        with open(os.path.join(args.out, "spk2utt"), "w", encoding="utf-8") as fh:
            fh.write(catalog.spk2utt_text())
    else:
        sys.stdout.write(catalog.to_tsv())
    logger.info("%d utterances, %d speakers", len(catalog), len(catalog.spk2utt))
    return EXIT_OK


def build_sim_config(args) -> SimConfig:
    data = load_config_dict(args.config) if args.config else {}
    if args.catalog:
        data["catalog"] = os.path.abspath(args.catalog)
    data = apply_overrides(data, args.set or [])
    data["seed"] = _resolve_seed(args, data.get("seed"))
    return SimConfig.from_dict(data)


def cmd_simulate(args) -> int:
    cfg = build_sim_config(args)
    if not cfg.catalog:
        raise UsageError("simulate needs --catalog or a config with a catalog entry")
    provenance = version_and_provenance(cfg)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    stream = generate(cfg, args.n, workers=args.workers, start=args.start)
    path = export_batch(stream, args.out, args.n, format=args.format, provenance=provenance)
    logger.info("wrote %d examples (config %s, seed %d) -> %s",
                args.n, provenance["config_hash"], cfg.seed, path)
    return EXIT_OK


def cmd_mix(args) -> int:
    if len(args.snr) != len(args.interferer):
        raise UsageError("give one --snr per --interferer")
    target = read_wav(args.target)
    clips = align_lengths([target] + [read_wav(p) for p in args.interferer], args.length_policy)
    wavs = [clips[0]] + [rescale_to_snr(clips[0], c, s) for c, s in zip(clips[1:], args.snr)]
    mixture, gain = sum_and_rescale(wavs, args.peak_ceiling)
    if args.noise:
        if args.noise_snr is None:
            raise UsageError("--noise needs --noise-snr")
        rng = np.random.default_rng(_resolve_seed(args))
        segment = fit_noise(read_wav(args.noise), len(mixture), rng)
        noise = rescale_to_snr(mixture, segment, args.noise_snr)
        mixture = mixture.with_samples(mixture.samples + noise.samples)
    os.makedirs(args.out, exist_ok=True)
    write_wav(mixture, os.path.join(args.out, "mix.wav"))
    write_wav(wavs[0].with_samples(wavs[0].samples * gain), os.path.join(args.out, "ref.wav"))
    logger.info("applied gain %.6g", gain)
    return EXIT_OK


def cmd_rir_gen(args) -> int:
    cfg = SyntheticRirConfig(
        rt60_s=args.rt60,
        direct_delay_s=args.delay,
        direct_to_reverb_db=args.drr,
        length_s=args.length,
        sample_rate=args.sample_rate,
    )
    rir = synth_rir(cfg, _resolve_seed(args))
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_wav(AudioClip(rir.taps, rir.sample_rate), args.out)
    logger.info("%s -> %s", rir.name, args.out)
    return EXIT_OK


def _read_pairs(path) -> list[tuple[str, str]]:
    base = os.path.dirname(os.fspath(path))
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\r\n").split("\t")
            if len(parts) != 2:
                raise TseSimError(f"{path}:{lineno}: expected 'estimate<TAB>reference'")
            pairs.append(tuple(p if os.path.isabs(p) else os.path.join(base, p) for p in parts))
    return pairs


def cmd_metric(args) -> int:
    if args.pairs:
        summary = eval_pairs(_read_pairs(args.pairs))
        rows = ["estimate\treference\tsi_snr_db\tsnr_db\tnum_samples\terror"]
        for p in summary.pairs:
            if p.report is None:
                rows.append(f"{p.estimate}\t{p.reference}\t\t\t\t{p.error}")
            else:
                r = p.report
                rows.append(f"{p.estimate}\t{p.reference}\t{_fmt(r.si_snr_db)}\t{_fmt(r.snr_db)}\t{r.num_samples}\t")
        table = "\n".join(rows) + "\n"
        summary_json = json.dumps(summary.to_dict(), sort_keys=True)
        if args.summary:
            sys.stdout.write(table)
            with open(args.summary, "w", encoding="utf-8") as fh:
                fh.write(summary_json + "\n")
        else:
            sys.stdout.write(table + summary_json + "\n")
        return EXIT_OK if summary.num_ok else EXIT_DATA

    if not (args.estimate and args.reference):
        raise UsageError("metric needs ESTIMATE REFERENCE or --pairs")
    est, ref = read_wav(args.estimate), read_wav(args.reference)
    print(_fmt(si_snr(est, ref)))
    return EXIT_OK


def _fmt(value: float) -> str:
    v = format_db(value)
    return v if isinstance(v, str) else f"{v:.6f}"


def _load_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        try:
            return parse_matrix(fh.read())
        except ValueError as exc:
            raise TseSimError(f"{path}: {exc}") from exc


def _projection(weight, bias, name) -> AffineProjection:
    if weight is None:
        raise UsageError(f"--{name}weight is required for this method")
    b = _load_matrix(bias).reshape(-1) if bias else None
    return AffineProjection(_load_matrix(weight), b)


def cmd_fuse(args) -> int:
    H = _load_matrix(args.H)
    e = _load_matrix(args.e).reshape(-1)
    try:
        if args.method == "concat":
            out = fuse_concat(H, e)
        elif args.method == "add":
            out = fuse_add(H, e, _projection(args.weight, args.bias, ""))
        elif args.method == "multiply":
            out = fuse_multiply(H, e, _projection(args.weight, args.bias, ""))
        else:
            out = fuse_film(H, e, _projection(args.gamma_weight, args.gamma_bias, "gamma-"),
                            _projection(args.beta_weight, args.beta_bias, "beta-"))
    except ValueError as exc:
        raise TseSimError(str(exc)) from exc
    sys.stdout.write(format_matrix(out))
    return EXIT_OK


# -----------------------------
# parser
# -----------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsesim", description="On-the-fly target speaker extraction data simulation.")
    parser.add_argument("--version", action="version", version=f"tsesim {__version__}")
    parser.add_argument("--log-level", default="INFO", help="logging level for stderr (default INFO)")
    sub = parser.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)

    p = sub.add_parser("pack", help="pack raw utterances into tar shards")
    p.add_argument("--list", required=True, help="TSV of utt_id<TAB>spk_id<TAB>wav path")
    p.add_argument("--out", required=True, help="output directory for shard-*.tar and shards.list")
    p.add_argument("--shard-size", type=int, default=1000)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("catalog", help="build a catalog (records + spk2utt) from a list or shard manifest")
    p.add_argument("source")
    p.add_argument("--kind", choices=("auto", "list", "manifest"), default="auto")
    p.add_argument("--out", help="directory for catalog.tsv and spk2utt (default: TSV to stdout)")
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser(
        "simulate", help="generate training triples",
        description="SNRs are target power over interferer power in dB: "
                    "snr_range_db [-5, 5] means each interferer sits between 5 dB "
                    "below and 5 dB above the target.",
    )
    p.add_argument("--config", help="JSON SimConfig")
    p.add_argument("--catalog", help="catalog source (overrides config 'catalog')")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override applied after loading, e.g. noise.enabled=true")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--start", type=int, default=0, help="first example index")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("wav_triplets", "packed_shard"), default="wav_triplets")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mix", help="mix given WAV files at given SNRs (target power over interferer power, dB)")
    p.add_argument("--target", required=True)
    p.add_argument("--interferer", action="append", default=[])
    p.add_argument("--snr", action="append", type=float, default=[])
    p.add_argument("--noise")
    p.add_argument("--noise-snr", type=float)
    p.add_argument("--peak-ceiling", type=float, default=0.9)
    p.add_argument("--length-policy", choices=("truncate_to_shortest", "pad_to_longest"),
                   default="truncate_to_shortest")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="directory for mix.wav and ref.wav")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("rir-gen", help="synthesize one stochastic RIR")
    p.add_argument("--rt60", type=float, required=True)
    p.add_argument("--drr", type=float, default=5.0, help="direct-to-reverberant ratio, dB")
    p.add_argument("--delay", type=float, default=0.005, help="direct path delay, seconds")
    p.add_argument("--length", type=float, help="seconds (default delay + rt60)")
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rir_gen)

    p = sub.add_parser("metric", help="SI-SNR of an estimate against a reference")
    p.add_argument("estimate", nargs="?")
    p.add_argument("reference", nargs="?")
    p.add_argument("--pairs", help="TSV of estimate<TAB>reference paths")
    p.add_argument("--summary", help="write the JSON summary here instead of stdout")
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("fuse", help="apply a speaker fusion kernel to text matrices")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--H", required=True, help="T x D feature matrix")
    p.add_argument("--e", required=True, help="speaker embedding (1 x E or E x 1)")
    p.add_argument("--weight")
    p.add_argument("--bias")
    p.add_argument("--gamma-weight")
    p.add_argument("--gamma-bias")
    p.add_argument("--beta-weight")
    p.add_argument("--beta-bias")
    p.set_defaults(func=cmd_fuse)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"tsesim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_OK if not exc.code else EXIT_USAGE

    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    if args.verb is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tsesim {args.verb}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TseSimError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
