"""Command-line entry point: ``vaemm {enhance,synth,eval}``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, metrics, models, synth, vem
from .mh import MhConfig
from .spectral import ComplexSpectrogram, StftParams, istft, read_wav, stft, write_wav

log = logging.getLogger("vaemm")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, msg, code=EXIT_VALIDATION):
        super().__init__(msg)
        self.code = code


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _vem_config(args) -> vem.VemConfig:
    return vem.VemConfig(
        n_vem_iters=args.iters,
        mh=MhConfig(n_iters=args.mh_iters, burn_in=args.mh_burnin, epsilon=args.epsilon, seed=args.seed),
        nmf_rank=args.nmf_rank,
        seed=args.seed,
        mode=args.mode,
        threads=args.threads,
    )


def _load_inputs(args):
    """Returns (X spectrogram, embeddings or None, bundle, scene meta or None)."""
    scene_meta = None
    if args.scene:
        scene = Path(args.scene)
        if not (scene / "scene.json").exists():
            raise CliError(f"{scene} is not a scene directory", EXIT_IO)
        scene_meta = synth.read_scene_meta(scene)
        model_path = Path(args.model) if args.model else scene / "model.vaemm.json"
        visual = Path(args.visual) if args.visual else scene / "embeddings.csv"
        bundle = models.load_model(model_path)
        params = StftParams(scene_meta["fft_size"], scene_meta["hop"], scene_meta["window"])
        X = ComplexSpectrogram(synth.read_spectrogram(scene / "X.spec"), params,
                               sample_rate=scene_meta["sample_rate"])
    else:
        if not args.input or not args.model:
            raise CliError("--input and --model are required (or use --scene)")
        bundle = models.load_model(args.model)
        visual = Path(args.visual) if args.visual else None
        params = StftParams.for_bins(bundle.F, args.hop)
        X = stft(read_wav(args.input), params)

    v = None
    if vem.MODE_ALIASES[args.mode] != "audio_only":
        if visual is None:
            raise CliError("visual embeddings required for mode " + args.mode)
        if not visual.exists():
            raise CliError(f"visual embeddings required: {visual} not found", EXIT_IO)
        v = models.align_embeddings(models.read_embeddings(visual), X.shape[1])
    return X, v, bundle, scene_meta


def cmd_enhance(args) -> int:
    X, v, bundle, scene_meta = _load_inputs(args)
    config = _vem_config(args)
    result = vem.run(X.values, v, bundle, config)
    enhanced = ComplexSpectrogram(result.enhanced, X.params, X.length, X.sample_rate)

    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    gain = scene_meta["wav_gain"] if scene_meta else 1.0
    audio = istft(enhanced)
    write_wav(out, type(audio)(audio.samples * gain, audio.sample_rate))

    trace = Path(args.trace_dir) if args.trace_dir else out.parent
    trace.mkdir(parents=True, exist_ok=True)
    _write_csv(trace / "pi_trace.csv", ["frame", "pi_n"],
               [[n, _fmt(p)] for n, p in enumerate(result.pi_n)])
    _write_csv(trace / "diagnostics.csv", ["iteration", "q", "pi", "acceptance"],
               [[d["iteration"], _fmt(d["q"]), _fmt(d["pi"]), _fmt(d["acceptance"])]
                for d in result.diagnostics])
    if scene_meta is not None:
        params = X.params
        ref = istft(ComplexSpectrogram(synth.read_spectrogram(Path(args.scene) / "S.spec"), params))
        noisy = istft(X)
        report = metrics.sdr_report(ref, noisy, istft(enhanced))
        _write_report(trace / "sdr.csv", report)
        print(report)

    manifest = {
        "tool": "vaemm", "version": __version__,
        "command": "enhance",
        "inputs": {"input": args.input, "visual": args.visual, "model": args.model, "scene": args.scene},
        "output": str(out),
        "config": {
            "mode": config.mode, "iters": config.n_vem_iters, "mh_iters": config.mh.n_iters,
            "mh_burnin": config.mh.burn_in, "epsilon": config.mh.epsilon,
            "nmf_rank": config.nmf_rank, "seed": config.seed, "threads": config.threads,
            "fft_size": X.params.fft_size, "hop": X.params.hop, "window": X.params.window,
        },
        "started": args._started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    (trace / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return EXIT_OK


def _write_report(path, report: metrics.SdrReport):
    _write_csv(path, ["sdr_in", "sdr_out", "delta"],
               [[_fmt(report.sdr_in), _fmt(report.sdr_out), _fmt(report.delta)]])


def cmd_synth(args) -> int:
    if args.corrupt and args.N < args.block_len:
        raise CliError(f"N={args.N} is shorter than one corruption block ({args.block_len} frames)")
    if min(args.F, args.N, args.L, args.M) < 1 or args.F < 2:
        raise CliError("dimensions must be positive (F >= 2)")
    bundle = synth.toy_bundle(L=args.L, M=args.M, F=args.F, seed=args.seed)
    noise = synth.toy_noise(args.F, args.N, K=args.noise_rank, level=args.noise_level, seed=args.seed)
    scene = synth.generate_scene(bundle, noise, args.pi_true, args.N, args.seed,
                                 corrupt_fraction=args.corrupt or None, block_len=args.block_len)
    meta = synth.write_scene(scene, args.out)
    print(f"wrote scene F={meta['F']} N={meta['N']} to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ref, noisy, enh = (read_wav(p) for p in (args.reference, args.noisy, args.enhanced))
    lengths = [len(ref), len(noisy), len(enh)]
    if max(lengths) - min(lengths) > args.trim_tolerance:
        raise CliError(f"signal lengths {lengths} differ by more than {args.trim_tolerance} samples")
    report = metrics.sdr_report(ref, noisy, enh)
    if args.output:
        _write_report(args.output, report)
    print(report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vaemm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("enhance", help="enhance a noisy recording")
    e.add_argument("--input", help="noisy mono 16-bit WAV")
    e.add_argument("--visual", help="visual embeddings (.csv or binary)")
    e.add_argument("--model", help="model file (.vaemm.json)")
    e.add_argument("--scene", help="synthetic scene directory (uses its X.spec, embeddings and model)")
    e.add_argument("--mode", choices=["a", "av", "mix"], default="mix")
    e.add_argument("--iters", type=int, default=200)
    e.add_argument("--mh-iters", type=int, default=40)
    e.add_argument("--mh-burnin", type=int, default=30)
    e.add_argument("--epsilon", type=float, default=0.01)
    e.add_argument("--nmf-rank", type=int, default=8)
    e.add_argument("--hop", type=int, default=None, help="STFT hop; default fft_size // 4")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--output", required=True, help="enhanced WAV path")
    e.add_argument("--trace-dir", help="where to write traces and manifest (default: next to output)")
    e.set_defaults(func=cmd_enhance)

    s = sub.add_parser("synth", help="generate a synthetic scene directory")
    s.add_argument("--out", required=True)
    s.add_argument("--F", type=int, default=16)
    s.add_argument("--N", type=int, default=300)
    s.add_argument("--L", type=int, default=2)
    s.add_argument("--M", type=int, default=2)
    s.add_argument("--pi-true", type=float, default=0.0)
    s.add_argument("--corrupt", type=float, default=1 / 3, help="fraction of frames; 0 disables")
    s.add_argument("--block-len", type=int, default=20)
    s.add_argument("--noise-level", type=float, default=2.0)
    s.add_argument("--noise-rank", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("eval", help="SDR of noisy and enhanced signals against a reference")
    v.add_argument("--reference", required=True)
    v.add_argument("--noisy", required=True)
    v.add_argument("--enhanced", required=True)
    v.add_argument("--output", help="CSV report path")
    v.add_argument("--trim-tolerance", type=int, default=1024)
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args._started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        return args.func(args)
    except CliError as e:
        print(f"vaemm: error: {e}", file=sys.stderr)
        return e.code
    except FloatingPointError as e:
        print(f"vaemm: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, EOFError) as e:
        print(f"vaemm: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"vaemm: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
