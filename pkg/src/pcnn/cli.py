"""Batch command-line frontend.

Subcommands: enhance, mix, analyze, gradcheck, overfit. Every run writes a
JSON manifest next to its primary output. Exit codes: 0 success, 1 input or
configuration problem, 2 numerical failure (check or target not met).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from pcnn import analysis, audio, checks, model
from pcnn.runtime import single_threaded_blas
from pcnn.spectral import mix_at_snr, ssnr

SAMPLE_RATE = 16000
MAX_TOY_PARAMS = 50_000

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERIC = 2

EXPECTED_TABLE = {
    "receptive_field": ("9x9", "9x9", "9x9"),
    "sampling_rate": ("33.33%", "11.11%", "100%"),
    "weight_scale_split": ("1.00N", "1.00N", "9.00N"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_INVALID)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pcnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance a noisy mono 16 kHz WAV")
    p.add_argument("input", help="noisy input WAV (PCM16 or float32)")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--out", required=True, help="enhanced output WAV")
    p.add_argument("--clean", help="clean reference WAV; prints segmental SNR")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("mix", help="mix clean speech with noise at an exact SNR")
    p.add_argument("clean", help="clean WAV")
    p.add_argument("noise", help="noise WAV (looped or truncated to length)")
    p.add_argument("snr_db", type=float, help="target SNR in dB")
    p.add_argument("--out", required=True, help="mixture output WAV")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("analyze", help="emit the architecture analysis report")
    p.add_argument("--config", help="model config file")
    p.add_argument("--out", default="analysis_report.txt")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--config", help="model config file (default: toy)")
    p.add_argument("--out", default="gradcheck_report.txt")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("overfit", help="train on one synthetic clip until the loss collapses")
    p.add_argument("--config", help="model config file (default: toy)")
    p.add_argument("--seconds", type=float, default=0.25)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--snr-db", type=float, default=2.5, help="mixture SNR of the clip")
    p.add_argument("--out", default="overfit_losses.txt")
    p.add_argument("--save-checkpoint", help="also write the trained parameters")
    p.add_argument("--seed", type=int, default=0)

    return parser


def _load_config(args, default_toy: bool) -> model.ModelConfig:
    if getattr(args, "config", None):
        return model.ModelConfig.from_file(args.config)
    if default_toy:
        return model.toy_config(seed=args.seed)
    return model.ModelConfig(seed=args.seed)


def _require_toy(config: model.ModelConfig) -> None:
    count = analysis.param_count(config)
    if count > MAX_TOY_PARAMS:
        raise ValueError(
            f"this command needs a toy configuration (<= {MAX_TOY_PARAMS} parameters), "
            f"got {count}; shrink channels/num_pcb or pass a smaller --config"
        )


def _read_speech(path) -> tuple[np.ndarray, str]:
    samples, rate, encoding = audio.read_wav(path)
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: sample rate {rate} unsupported; expected {SAMPLE_RATE}; "
                         "resample the file before processing")
    return samples, encoding


def synthetic_clip(seconds: float, snr_db: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic tone pair plus white noise mixed at the requested SNR."""
    n = max(1, int(round(seconds * SAMPLE_RATE)))
    t = np.arange(n) / SAMPLE_RATE
    clean = 0.45 * np.sin(2.0 * np.pi * 220.0 * t) + 0.2 * np.sin(2.0 * np.pi * 523.25 * t)
    noise = np.random.default_rng(seed + 7).standard_normal(n)
    return clean, mix_at_snr(clean, noise, snr_db)


# ---------------------------------------------------------------------------
# command handlers: return (exit_code, metrics)


def cmd_enhance(args) -> tuple[int, dict]:
    noisy, encoding = _read_speech(args.input)
    params = model.load(args.checkpoint)
    with single_threaded_blas():
        enhanced = model.forward(params, noisy)
    clipped = audio.write_wav(args.out, enhanced, SAMPLE_RATE, encoding)
    metrics = {"samples": int(noisy.shape[0]), "clipped_samples": clipped}
    if args.clean:
        reference, _ = _read_speech(args.clean)
        if reference.shape != noisy.shape:
            raise ValueError("--clean reference length does not match the input")
        metrics["ssnr_db"] = ssnr(reference, enhanced)
        print(f"ssnr_db: {metrics['ssnr_db']:.2f}")
    print(f"wrote {args.out} ({metrics['samples']} samples)")
    return EXIT_OK, metrics


def cmd_mix(args) -> tuple[int, dict]:
    clean, encoding = _read_speech(args.clean)
    noise, _ = _read_speech(args.noise)
    if noise.size == 0:
        raise ValueError(f"{args.noise}: empty noise file")
    reps = int(np.ceil(clean.shape[0] / noise.shape[0]))
    noise = np.tile(noise, reps)[:clean.shape[0]]
    mixture = mix_at_snr(clean, noise, args.snr_db)
    scaled = mixture - clean
    measured = 10.0 * np.log10(float(clean @ clean) / float(scaled @ scaled))
    clipped = audio.write_wav(args.out, mixture, SAMPLE_RATE, encoding)
    metrics = {
        "requested_snr_db": args.snr_db,
        "measured_snr_db": measured,
        "clipped_samples": clipped,
        "over_range_samples": int(np.count_nonzero(np.abs(mixture) > 1.0)),
    }
    print(f"measured snr: {measured:.6f} dB")
    if metrics["over_range_samples"]:
        print(f"warning: {metrics['over_range_samples']} samples exceed [-1, 1]")
    return EXIT_OK, metrics


def cmd_analyze(args) -> tuple[int, dict]:
    config = _load_config(args, default_toy=False)
    report = analysis.analyze(config)
    text = report.render()
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text)

    names = [v.name for v in report.variants]
    produced = {
        "receptive_field": tuple(
            f"{report.receptive_fields[n]}x{report.receptive_fields[n]}" for n in names),
        "sampling_rate": tuple(
            analysis.format_rate(report.rates[n][0]) for n in names),
        "weight_scale_split": tuple(
            analysis.format_scale(v.weight_scale_split) for v in report.variants),
    }
    metrics = {
        "total_params": report.params["total"],
        "asymptotic_ratio": report.reference_cost.asymptotic_ratio,
    }
    for key, expected in EXPECTED_TABLE.items():
        if produced[key] != expected:
            print(f"MISMATCH {key}: produced {produced[key]}, expected {expected}",
                  file=sys.stderr)
            metrics["mismatch"] = key
            return EXIT_NUMERIC, metrics
    return EXIT_OK, metrics


def cmd_gradcheck(args) -> tuple[int, dict]:
    config = _load_config(args, default_toy=True)
    _require_toy(config)
    result = checks.run_gradcheck(config, seed=args.seed)
    text = result.render()
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text)
    metrics = {
        "blocks": {r.block: r.max_rel_err for r in result.rows},
        "threshold": result.threshold,
        "passed": result.passed,
    }
    return (EXIT_OK if result.passed else EXIT_NUMERIC), metrics


def cmd_overfit(args) -> tuple[int, dict]:
    config = _load_config(args, default_toy=True)
    _require_toy(config)
    params = model.build(config)
    clean, noisy = synthetic_clip(args.seconds, args.snr_db, config.seed)
    try:
        losses = model.train_toy(params, clean, noisy, steps=args.steps, lr=args.lr)
    except model.TrainingDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC, {"diverged_at_step": exc.step}

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("# step loss\n")
        for i, value in enumerate(losses):
            fh.write(f"{i} {value:.10e}\n")
    if args.save_checkpoint:
        model.save(params, args.save_checkpoint)

    reduction = 1.0 - losses[-1] / losses[0]
    metrics = {
        "steps": len(losses),
        "initial_loss": losses[0],
        "final_loss": losses[-1],
        "reduction": reduction,
    }
    print(f"loss {losses[0]:.5f} -> {losses[-1]:.5f} ({100 * reduction:.1f}% reduction)")
    ok = losses[-1] <= 0.1 * losses[0]
    if not ok:
        print("target not met: final loss above 10% of the initial loss", file=sys.stderr)
    return (EXIT_OK if ok else EXIT_NUMERIC), metrics


_HANDLERS = {
    "enhance": cmd_enhance,
    "mix": cmd_mix,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
    "overfit": cmd_overfit,
}


def _manifest_inputs(args) -> list[str]:
    return [str(getattr(args, key)) for key in ("input", "clean", "noise", "checkpoint")
            if getattr(args, key, None)]


def write_manifest(args, exit_status: int, metrics: dict) -> str:
    outputs = [args.out]
    if getattr(args, "save_checkpoint", None):
        outputs.append(args.save_checkpoint)
    manifest = {
        "command": args.command,
        "config": getattr(args, "config", None),
        "inputs": _manifest_inputs(args),
        "outputs": outputs,
        "seed": args.seed,
        "exit_status": exit_status,
        "metrics": metrics,
    }
    path = f"{args.out}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    metrics: dict = {}
    try:
        code, metrics = _HANDLERS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        metrics = {"error": str(exc)}
        code = EXIT_INVALID
    try:
        write_manifest(args, code, metrics)
    except OSError as exc:
        print(f"error: could not write manifest: {exc}", file=sys.stderr)
        code = code or EXIT_INVALID
    return code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
