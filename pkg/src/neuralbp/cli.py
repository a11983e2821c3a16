"""Command-line front end: ``python -m neuralbp <command> ...``.

Every failure prints a single ``error: <kind>: <message>`` line on stderr and
exits with status 2.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import codes, harness, training
from .decoder import decode, parse_spec, tanner_for
from .mrrd import MrrdConfig, load_config
from .paramio import load_params, save_params


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def parse_snrs(text: str) -> list[float]:
    """``"4,5,6"`` or an inclusive range ``"1:8"`` / ``"1:8:0.5"``."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        lo, hi, step = (parts + [1.0])[:3] if len(parts) == 2 else parts
        if step <= 0 or lo > hi:
            raise CliError(f"bad SNR range {text!r}")
        return [float(v) for v in np.round(np.arange(lo, hi + step / 2, step), 10)]
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise CliError("empty SNR list")
    return values


def parse_vector(text: str) -> np.ndarray:
    if Path(text).is_file():
        text = Path(text).read_text()
    return np.array([float(v) for v in text.replace(",", " ").split()])


def _code(args):
    return codes.get_code(args.code)


def _decoder_parts(args, code):
    """Spec and parameters from --params (bundle) and/or --spec."""
    params = None
    spec = parse_spec(args.spec) if args.spec else None
    if args.params:
        bundle = load_params(args.params)
        bundle.check_code(code)
        if spec is not None and spec.replace(iterations=bundle.spec.iterations,
                                             early_stop=bundle.spec.early_stop) != bundle.spec:
            raise CliError("--spec disagrees with the spec stored in --params")
        spec = bundle.spec if spec is None else spec
        params = bundle.params
    if spec is None:
        spec = parse_spec("bp")
    return spec, params


def _write(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _add_common(p, snr=True, sweep=True):
    p.add_argument("--code", required=True, help="shipped code name, .alist or .code manifest")
    p.add_argument("--spec", help="decoder preset or descriptor")
    p.add_argument("--params", help="parameter bundle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    if snr:
        p.add_argument("--snr", default="1:8", help="Eb/N0 list in dB, e.g. 4,5,6 or 1:8")
    if sweep:
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--min-frame-errors", type=int, default=harness.DEFAULT_MIN_FRAME_ERRORS)
        p.add_argument("--max-frames", type=int, default=harness.DEFAULT_MAX_FRAMES)


def cmd_ber(args):
    code = _code(args)
    spec, params = _decoder_parts(args, code)
    cfg = harness.ExperimentConfig(code, harness.BpFrameDecoder(spec, params),
                                   tuple(parse_snrs(args.snr)), args.min_frame_errors,
                                   args.max_frames, args.seed, args.workers)
    _write(harness.emit_csv(harness.run_ber_sweep(cfg)), args.out)


def cmd_mrrd(args):
    if args.config:
        cfg, code_name = load_config(args.config)
        code = codes.get_code(args.code or code_name)
    else:
        if not args.code:
            raise CliError("mrrd needs --code or --config")
        code = _code(args)
        spec, params = _decoder_parts(args, code)
        cfg = MrrdConfig(args.m, args.c, args.inner_iterations, spec, params, args.seed,
                         args.carry_extrinsic)
    dec = harness.MrrdFrameDecoder(cfg)
    snrs = tuple(parse_snrs(args.snr))
    t0 = time.perf_counter()
    (points,) = harness.compare_decoders(code, [dec], snrs, args.min_frame_errors,
                                         args.max_frames, cfg.seed, args.workers)
    elapsed = time.perf_counter() - t0
    frames = sum(p.frames for p in points)
    prov = harness.provenance(code, dec, cfg.seed, args.workers)
    # wall-clock figures are machine dependent and excluded from byte-level reproducibility
    prov["us_per_frame"] = f"{1e6 * elapsed / max(frames, 1):.1f}"
    _write(harness.emit_csv(harness.BerReport(points, prov)), args.out)


def cmd_train(args):
    code = _code(args)
    spec, init = _decoder_parts(args, code)
    lo, hi = (float(v) for v in args.snr_range.split(","))
    loss = training.LossConfig(args.loss)
    opt = training.OptimizerConfig(args.optimizer, args.lr, args.batch, args.steps)
    result = training.train(code, spec, loss, opt, seed=args.seed, init=init,
                            snr_range_db=(lo, hi))
    out = Path(args.out or f"{code.code_id}.params")
    save_params(out, spec, result.params, code)
    Path(str(out) + ".trace.csv").write_text(result.trace_csv())
    manifest = {"code_id": code.code_id, "h_hash": code.h_hash, "spec": spec.describe(),
                "loss": args.loss, "optimizer": args.optimizer, "learning_rate": repr(args.lr),
                "minibatch_size": str(args.batch), "steps": str(args.steps),
                "snr_range": f"{lo},{hi}", "seed": str(args.seed), "params": out.name}
    Path(str(out) + ".manifest").write_text("".join(f"{k}={v}\n" for k, v in manifest.items()))
    print(f"final_loss={result.losses[-1]!r}")
    print(f"params={out}")


def cmd_gradcheck(args):
    code = _code(args)
    spec = parse_spec(args.spec or "bp-rnn").replace(iterations=args.iterations)
    res = training.gradient_audit(code, spec, args.points, args.seed)
    print(f"max_rel_error={res.max_rel_error!r} points={res.points} excluded={res.excluded}")
    if res.max_rel_error > args.tolerance:
        raise CliError(f"gradient check failed: {res.max_rel_error} > {args.tolerance}")


def cmd_decode(args):
    code = _code(args)
    spec, params = _decoder_parts(args, code)
    llr = parse_vector(args.llr)
    out = decode(spec, params, tanner_for(code), llr)
    lines = []
    for t in range(out.iterations_used):
        lines.append(f"iteration {t + 1}: " + " ".join(f"{v:.6g}" for v in out.marginals[t]))
    lines.append("hard: " + "".join(str(b) for b in out.hard_decisions))
    lines.append(f"valid={int(out.valid)} iterations={int(out.iterations_used)}")
    _write("\n".join(lines) + "\n", args.out)


def cmd_codegen(args):
    code = codes.bch_code(args.m, args.t)
    manifest = codes.write_bundle(code, args.out or ".")
    print(f"{code.code_id} n={code.n} k={code.k} h_hash={code.h_hash} manifest={manifest}")


def cmd_oracle(args):
    code = _code(args)
    if args.mode == "map":
        post = harness.exhaustive_map_oracle(code, parse_vector(args.llr))
        text = " ".join(repr(float(v)) for v in post)
    else:
        word = harness.exhaustive_ml_oracle(code, parse_vector(args.y))
        text = "".join(str(int(b)) for b in word)
    _write(text + "\n", args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="neuralbp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ber", help="BER/FER sweep")
    _add_common(p)
    p.set_defaults(func=cmd_ber)

    p = sub.add_parser("mrrd", help="permutation-decoding sweep")
    p.add_argument("--code")
    p.add_argument("--spec")
    p.add_argument("--params")
    p.add_argument("--config", help="key-value mRRD config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--snr", default="4:6")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--min-frame-errors", type=int, default=harness.DEFAULT_MIN_FRAME_ERRORS)
    p.add_argument("--max-frames", type=int, default=harness.DEFAULT_MAX_FRAMES)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--c", type=int, default=30)
    p.add_argument("--inner-iterations", type=int, default=2)
    p.add_argument("--carry-extrinsic", action="store_true")
    p.set_defaults(func=cmd_mrrd)

    p = sub.add_parser("train", help="train decoder parameters")
    _add_common(p, snr=False, sweep=False)
    p.add_argument("--loss", choices=("final", "multiloss"), default="multiloss")
    p.add_argument("--optimizer", choices=("sgd", "rmsprop", "adam"), default="rmsprop")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=120)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--snr-range", default="1,8")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--code", required=True)
    p.add_argument("--spec")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("decode", help="decode one frame and print per-iteration marginals")
    _add_common(p, snr=False, sweep=False)
    p.add_argument("--llr", required=True, help="comma/space separated LLRs or a file")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("codegen", help="write a BCH code bundle")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_codegen)

    p = sub.add_parser("oracle", help="exhaustive MAP posteriors or ML codeword")
    p.add_argument("--code", required=True)
    p.add_argument("--mode", choices=("map", "ml"), default="map")
    p.add_argument("--llr")
    p.add_argument("--y")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)
    return parser


def _attach_vectors(argv):
    """Turn ``--llr -1,2`` into ``--llr=-1,2`` so argparse does not see an option."""
    out, it = [], iter(argv)
    for tok in it:
        if tok in ("--llr", "--y"):
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(_attach_vectors(argv))
        if args.command == "oracle" and (args.llr if args.mode == "map" else args.y) is None:
            raise CliError("oracle --mode map needs --llr; --mode ml needs --y")
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0
