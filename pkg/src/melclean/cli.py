"""Command line interface: one executable, six subcommands.

    synth        render noisy/clean training pairs from a corpus manifest
    train        fit a model on a directory of pairs, write a checkpoint
    enhance      one-shot enhancement of a WAV file through a checkpoint
    stream       chunked online enhancement (bitwise equal to enhance)
    eval         metrics CSV (per file + mean row) for a pair directory
    spectrogram  grayscale logMel PNG of a WAV file

Flags override config-file values; MELCLEAN_SEED provides the seed when
no --seed flag is given. Exit codes, also documented in the README:

    0  success
    1  runtime failure (bad audio, numerical problem, ...)
    2  usage error (unknown flag/subcommand; argparse)
    3  missing input file or directory
    4  malformed configuration file or value
    5  checkpoint does not match the requested model or mode
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import functools
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import dsp
from .audio import read_wav, write_wav
from .config import ConfigError, load_run_config
from .metrics import logmel_mae, lsd, si_sdr
from .model import CheckpointMismatch, build, load_model
from .normalize import offline_gain
from .reconstruct import waveform_from_logmel
from .stream import StreamSession, enhance_frames
from .synth import Corpus, dump_one_pair, make_demo_corpus
from .train import prepare_example, save_checkpoint, train_model

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONFIG = 4
EXIT_CHECKPOINT = 5

ENHANCE_DBFS = -3.0   # fixed inference loudness for offline models


# ------------------------------------------------------------- helpers

def _seed(args, cfg) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("MELCLEAN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"MELCLEAN_SEED must be an integer: {env!r}") \
                from exc
    return cfg.train.seed


def _overrides(args, mapping) -> dict:
    out = {}
    for attr, target in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[target] = str(value)
    return out


_MODEL_FLAGS = {
    "mode": ("model", "mode"), "target": ("model", "target"),
    "depth": ("model", "depth"), "hidden": ("model", "hidden"),
    "d_state": ("model", "d_state"), "norm_k": ("model", "norm_k"),
    "frequency_domain": ("model", "frequency_domain"),
}
_TRAIN_FLAGS = {
    "epochs": ("train", "epochs"), "steps_per_epoch": ("train", "steps_per_epoch"),
    "batch_size": ("train", "batch_size"), "lr0": ("train", "lr0"),
}
_SYNTH_FLAGS = {
    "reverb_prob": ("synth", "reverb_prob"), "snr_range": ("synth", "snr_range"),
    "dbfs_range": ("synth", "dbfs_range"),
}


def _config(args, *flag_maps):
    merged = {}
    for m in flag_maps:
        merged.update(_overrides(args, m))
    return load_run_config(getattr(args, "config", None), merged)


def _load_checkpoint_model(args):
    model = load_model(args.ckpt)
    want = getattr(args, "target", None)
    if want is not None and want != model.config.target:
        raise CheckpointMismatch(
            f"checkpoint was trained for target {model.config.target!r}, "
            f"requested {want!r}")
    return model


def _pair_stems(data_dir) -> list[str]:
    names = os.listdir(data_dir)   # FileNotFoundError on a missing dir
    stems = sorted(n[:-len(".noisy.wav")] for n in names
                   if n.endswith(".noisy.wav"))
    stems = [s for s in stems
             if os.path.exists(os.path.join(data_dir, s + ".clean.wav"))]
    if not stems:
        raise FileNotFoundError(f"no *.noisy.wav/*.clean.wav pairs in "
                                f"{data_dir}")
    return stems


def _reconstruct(model, phase_source, logmel, mus, phase, gl_iters,
                 n_samples):
    cfg = model.config
    phase_spec = None
    if phase == "noisy":
        phase_spec = dsp.stft(phase_source, hop=cfg.hop,
                              centered=not cfg.online)
    wave = waveform_from_logmel(logmel, phase_spec=phase_spec, mus=mus,
                                hop=cfg.hop, centered=not cfg.online,
                                n_samples=n_samples, gl_iters=gl_iters)
    if wave.size < n_samples:   # online framing covers a bit less than N
        wave = np.pad(wave, (0, n_samples - wave.size))
    return wave


def _enhance_to_wave(model, noisy, phase, gl_iters):
    """Full pipeline for one utterance; returns the enhanced waveform at
    the input's original loudness."""
    if model.config.online:
        logmel, mus = enhance_frames(model, noisy)
        return _reconstruct(model, noisy, logmel, mus, phase, gl_iters,
                            noisy.size)
    gain, scaled = offline_gain(noisy, target_dbfs=ENHANCE_DBFS)
    logmel, _ = enhance_frames(model, scaled)
    wave = _reconstruct(model, scaled, logmel, None, phase, gl_iters,
                        noisy.size)
    return wave / gain


# --------------------------------------------------------- subcommands

@functools.lru_cache(maxsize=2)
def _cached_corpus(manifest: str) -> Corpus:
    return Corpus.from_manifest(manifest)


def _synth_one(task) -> str:
    out_dir, manifest, index, seed, reverb_prob, snr, dbfs = task
    return dump_one_pair(out_dir, _cached_corpus(manifest), index, seed,
                         reverb_prob=reverb_prob, snr_range=snr,
                         dbfs_range=dbfs)


def cmd_synth(args) -> int:
    cfg = _config(args, _SYNTH_FLAGS)
    seed = _seed(args, cfg)
    manifest = args.manifest
    if args.demo_corpus:
        manifest = make_demo_corpus(args.demo_corpus, seed=seed)
    elif manifest is None:
        raise ConfigError("synth needs --manifest or --demo-corpus")
    _cached_corpus(manifest)   # validate the manifest before fan-out
    os.makedirs(args.out, exist_ok=True)
    sp = cfg.synth
    tasks = [(args.out, manifest, i, seed, sp.reverb_prob, sp.snr_range,
              sp.dbfs_range) for i in range(args.n)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            stems = list(pool.map(_synth_one, tasks))
    else:
        stems = [_synth_one(t) for t in tasks]
    print(f"wrote {len(stems)} pairs to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args, _MODEL_FLAGS, _TRAIN_FLAGS)
    tcfg = dataclasses.replace(cfg.train, seed=_seed(args, cfg))
    data = [(read_wav(os.path.join(args.data, s + ".noisy.wav")),
             read_wav(os.path.join(args.data, s + ".clean.wav")))
            for s in _pair_stems(args.data)]
    examples = [prepare_example(n, c, cfg.model) for n, c in data]
    holdout = min(args.holdout, len(examples) - 1)
    val = examples[len(examples) - holdout:] if holdout > 0 else []
    examples = examples[:len(examples) - holdout]
    model = build(cfg.model, seed=tcfg.seed)
    result = train_model(model, examples, val, tcfg, csv_path=args.log_csv)
    save_checkpoint(args.out, model)
    val_txt = f" val {result.val_losses[-1]:.6g}" if result.val_losses else ""
    print(f"trained {result.steps} steps: loss {result.initial_loss:.6g} -> "
          f"{result.final_loss:.6g}{val_txt}; checkpoint {args.out}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    model = _load_checkpoint_model(args)
    noisy = read_wav(args.input)
    wave = _enhance_to_wave(model, noisy, args.phase, args.gl_iters)
    write_wav(args.out, wave)
    print(f"enhanced {args.input} -> {args.out} ({wave.size} samples)")
    return EXIT_OK


def cmd_stream(args) -> int:
    model = _load_checkpoint_model(args)
    if not model.config.online:
        raise CheckpointMismatch("stream needs an online-mode checkpoint")
    noisy = read_wav(args.input)
    chunk = max(1, round(args.chunk_ms * dsp.SAMPLE_RATE / 1000.0))
    session = StreamSession(model)
    outs, mus = [], []
    for start in range(0, noisy.size, chunk):
        y, m = session.push(noisy[start:start + chunk])
        outs.append(y)
        mus.append(m)
    session.finalize()
    logmel = np.concatenate(outs, axis=1)
    mu = np.concatenate(mus)
    wave = _reconstruct(model, noisy, logmel, mu, args.phase, args.gl_iters,
                        noisy.size)
    write_wav(args.out, wave)
    print(f"streamed {args.input} in {len(outs)} chunks -> {args.out} "
          f"({logmel.shape[1]} frames)")
    return EXIT_OK


@functools.lru_cache(maxsize=2)
def _cached_model(ckpt: str):
    return load_model(ckpt)


def _logmel_of(samples, cfg, mus=None):
    spec = dsp.stft(samples, hop=cfg.hop, centered=not cfg.online)
    data = spec.data / mus if mus is not None else spec.data
    mel = dsp.power_mel(data, dsp.cached_filterbank())
    return dsp.log_mel(mel, eps=cfg.eps)


def _eval_one(task) -> dict:
    data_dir, stem, ckpt, phase, gl_iters = task
    model = _cached_model(ckpt)
    cfg = model.config
    noisy = read_wav(os.path.join(data_dir, stem + ".noisy.wav"))
    clean = read_wav(os.path.join(data_dir, stem + ".clean.wav"))
    if cfg.online:
        enh_logmel, mus = enhance_frames(model, noisy)
        gain = 1.0
        ref_noisy = noisy
    else:
        gain, ref_noisy = offline_gain(noisy, target_dbfs=ENHANCE_DBFS)
        enh_logmel, mus = enhance_frames(model, ref_noisy)
    clean_lm = _logmel_of(clean * gain, cfg, mus)
    noisy_lm = _logmel_of(ref_noisy, cfg, mus)
    wave = _reconstruct(model, ref_noisy, enh_logmel, mus, phase, gl_iters,
                        noisy.size) / gain
    return {
        "id": stem,
        "logmel_mae_noisy": logmel_mae(noisy_lm, clean_lm),
        "logmel_mae_enhanced": logmel_mae(enh_logmel.astype(np.float64),
                                          clean_lm),
        "lsd_noisy": lsd(np.abs(dsp.stft(noisy, hop=cfg.hop).data),
                         np.abs(dsp.stft(clean, hop=cfg.hop).data)),
        "lsd_enhanced": lsd(np.abs(dsp.stft(wave, hop=cfg.hop).data),
                            np.abs(dsp.stft(clean, hop=cfg.hop).data)),
        "si_sdr_noisy": si_sdr(noisy, clean),
        "si_sdr_enhanced": si_sdr(wave, clean),
    }


def cmd_eval(args) -> int:
    if not os.path.exists(args.ckpt):
        raise FileNotFoundError(args.ckpt)
    stems = _pair_stems(args.data)
    tasks = [(args.data, s, args.ckpt, args.phase, args.gl_iters)
             for s in stems]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_eval_one, tasks))
    else:
        rows = [_eval_one(t) for t in tasks]
    fields = list(rows[0].keys())
    mean_row = {"id": "mean"}
    for f in fields[1:]:
        mean_row[f] = float(np.mean([r[f] for r in rows]))
    out = open(args.out, "w", newline="") if args.out != "-" else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=fields)
        writer.writeheader()
        for row in rows + [mean_row]:
            writer.writerow({k: (v if isinstance(v, str) else f"{v:.6g}")
                             for k, v in row.items()})
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_spectrogram(args) -> int:
    from . import viz
    samples = read_wav(args.input)
    hop = 256 if args.online else 128
    spec = dsp.stft(samples, hop=hop, centered=not args.online)
    logmel = dsp.log_mel(dsp.power_mel(spec, dsp.cached_filterbank()),
                         eps=args.eps)
    width, height = viz.write_png(args.out, logmel, args.eps)
    print(f"wrote {args.out} ({width}x{height})")
    return EXIT_OK


# -------------------------------------------------------------- parser

def _add_common(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int,
                   help="random seed (default: $MELCLEAN_SEED, then config)")


def _add_reconstruct_flags(p):
    p.add_argument("--phase", choices=("noisy", "gl"), default="noisy",
                   help="phase source for waveform synthesis")
    p.add_argument("--gl-iters", type=int, default=32,
                   help="Griffin-Lim iterations when --phase gl")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="melclean",
        description="Mel-domain speech enhancement pipeline")
    sub = ap.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="render noisy/clean pairs")
    _add_common(p)
    p.add_argument("--manifest", help="corpus manifest (role<TAB>path)")
    p.add_argument("--demo-corpus", metavar="DIR",
                   help="generate a synthetic corpus here and use it")
    p.add_argument("--out", required=True, help="output pair directory")
    p.add_argument("--n", type=int, default=16, help="number of pairs")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--reverb-prob", type=float, dest="reverb_prob")
    p.add_argument("--snr-range", dest="snr_range", metavar="LO,HI")
    p.add_argument("--dbfs-range", dest="dbfs_range", metavar="LO,HI")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a pair directory")
    _add_common(p)
    p.add_argument("--data", required=True, help="directory of pairs")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--holdout", type=int, default=0,
                   help="pairs reserved for validation")
    p.add_argument("--log-csv", dest="log_csv", help="per-step loss CSV")
    p.add_argument("--mode", choices=("offline", "online"))
    p.add_argument("--target", choices=("mapping", "mask"))
    p.add_argument("--depth", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--d-state", type=int, dest="d_state")
    p.add_argument("--norm-k", type=int, dest="norm_k")
    p.add_argument("--frequency-domain", choices=("mel", "linear"),
                   dest="frequency_domain")
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int, dest="steps_per_epoch")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr0", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one WAV file")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True, help="noisy WAV")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--out", required=True, help="enhanced WAV")
    p.add_argument("--target", choices=("mapping", "mask"),
                   help="assert the checkpoint's training target")
    _add_reconstruct_flags(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("stream", help="chunked online enhancement")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True, help="noisy WAV")
    p.add_argument("--ckpt", required=True, help="online model checkpoint")
    p.add_argument("--out", required=True, help="enhanced WAV")
    p.add_argument("--target", choices=("mapping", "mask"),
                   help="assert the checkpoint's training target")
    p.add_argument("--chunk-ms", type=float, default=32.0, dest="chunk_ms",
                   help="push chunk size in milliseconds")
    _add_reconstruct_flags(p)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("eval", help="metrics CSV over a pair directory")
    _add_common(p)
    p.add_argument("--data", required=True, help="directory of pairs")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--out", default="-", help="CSV path ('-' for stdout)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    _add_reconstruct_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spectrogram", help="logMel PNG of a WAV file")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True, help="WAV file")
    p.add_argument("--out", required=True, help="PNG path")
    p.add_argument("--eps", type=float, default=dsp.EPS_OFFLINE,
                   help="clip floor; the intensity range is [ln eps, max]")
    p.add_argument("--online", action="store_true",
                   help="causal framing at hop 256 instead of centered 128")
    p.set_defaults(func=cmd_spectrogram)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"melclean: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"melclean: bad configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointMismatch as exc:
        print(f"melclean: checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ValueError, OSError) as exc:
        print(f"melclean: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
