"""``dpssm`` command line.

Exit codes: 0 ok, 1 check failed, 2 bad config or arguments, 3 I/O failure,
4 bad file format (e.g. weight-file magic), 5 incompatible image shape.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .degradation import DEFAULT_RECIPES, THREE_CLASS_RECIPES, make_clean_images, make_corpus
from .losses import LossConfig, loss_terms, psnr, spectrum_gap, ssim
from .modulation import STATS_COLUMNS
from .network import ShapeError, build_restorer, load_restorer, save_restorer

log = logging.getLogger("dpssm")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_FORMAT, EXIT_SHAPE = range(6)


class CheckFailed(Exception):
    pass


def _int_list(s: str) -> list[int]:
    try:
        out = [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {s!r}")
    return out


def _threads_default() -> list[int]:
    raw = os.environ.get("DPSSM_THREADS")
    return _int_list(raw) if raw else [1]


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _config(args) -> dict:
    return io.load_config(args.config) if getattr(args, "config", None) else dict(io.DEFAULT_RUN_CONFIG)


def _report(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True, default=io._jsonable))


def _fail_on(failures: list[str]) -> None:
    if failures:
        for f in failures:
            print(f"FAILED {f}", file=sys.stderr)
        raise CheckFailed(", ".join(failures))


# --------------------------------------------------------------------------
# subcommands

def cmd_degrade(args) -> None:
    cfg = _config(args)
    files = io.list_images(args.input)
    if not files:
        raise FileNotFoundError(f"no input images in {args.input}")
    images = [io.read_pnm(f) for f in files]
    recipes = cfg.get("recipes", DEFAULT_RECIPES)
    count = cfg.get("count", len(images))
    corpus = make_corpus(images, recipes, count, cfg["data_seed"] if args.seed is None else args.seed)
    out = _out_dir(args.out)
    entries = []
    for i, s in enumerate(corpus):
        ext = ".ppm" if s.degraded.shape[0] == 3 else ".pgm"
        name = f"sample_{i:04d}"
        io.write_pnm(out / f"{name}{ext}", s.degraded)
        io.write_json(out / f"{name}.json", s.spec.to_dict())
        entries.append({"file": name + ext, "spec": name + ".json", "label": s.spec.label,
                        "source": files[s.source].name})
    io.write_json(out / "manifest.json", {"count": len(entries), "samples": entries})
    _report({"written": len(entries), "out": str(out)})


def cmd_init_weights(args) -> None:
    cfg = _config(args)
    r = build_restorer(cfg, cfg["seed"] if args.seed is None else args.seed)
    save_restorer(args.out, r)
    _report({"out": str(args.out), "net_parameters": r.net.num_parameters(),
             "extractor_parameters": r.extractor.num_parameters()})


def cmd_restore(args) -> None:
    restorer = load_restorer(args.weights)
    img = io.read_pnm(args.input)
    try:
        out = restorer.restore(img)
    except ShapeError:
        raise
    except ValueError as exc:  # channel mismatch from the extractor
        raise ShapeError(str(exc)) from exc
    io.write_pnm(args.out, out)
    if args.metrics:
        ref = io.read_pnm(args.metrics)
        if ref.shape != out.shape:
            raise ShapeError(f"reference shape {ref.shape} != output shape {out.shape}")
        q = io.to_uint8(out) / 255.0
        _report({"image_id": Path(args.input).stem, "psnr_db": psnr(ref, q), "ssim": ssim(ref, q),
                 "loss_terms": loss_terms(ref, q)})


def cmd_bench_scan(args) -> None:
    from .bench import BENCH_COLUMNS, bench_scan
    from .plotting import plot_bench
    threads = args.threads or _threads_default()
    res = bench_scan(args.L, args.dinner, args.N, threads, reps=args.reps, seed=args.seed)
    out = _out_dir(args.out)
    io.write_csv(out / "bench_scan.csv", res.rows, BENCH_COLUMNS)
    io.write_json(out / "op_counts.json", res.op_counts)
    plot_bench(res.rows, out / "bench_scan.png")
    sys.stdout.write((out / "bench_scan.csv").read_text())
    for oc in res.op_counts:
        print(f"# ops L={oc['L']}: bi/single = {oc['ratio_bi_over_single']:.1f}, "
              f"bi/(single + C-mod) = {oc['ratio_bi_over_single_plus_cmod']:.4f}")
    _fail_on([f"bench.{r['method']}.L{r['L']}.w{r['workers']}" for r in res.rejected])


def cmd_grad_check(args) -> None:
    from .gradcheck import run_grad_check
    rep = run_grad_check(args.seed, args.instances, args.coords)
    out = _out_dir(args.out)
    io.write_json(out / "grad_check.json", rep)
    _report({k: rep[k] for k in ("scan_max_rel_err", "total_loss_max_rel_err", "micro_net_max_rel_err", "ok")})
    _fail_on(rep["failures"])


def cmd_stats_delta(args) -> None:
    from .plotting import plot_delta_stats
    cfg = _config(args)
    restorer = load_restorer(args.weights) if args.weights else build_restorer(cfg, cfg["seed"])
    c = restorer.net.in_channels
    clean = make_clean_images(max(args.count // 4, 1), args.size, args.seed, c)
    corpus = make_corpus(clean, cfg.get("recipes", DEFAULT_RECIPES), args.count, args.seed)
    rows = restorer.delta_stats(corpus, args.fraction)
    out = _out_dir(args.out)
    io.write_csv(out / "delta_stats.csv", rows, STATS_COLUMNS)
    plot_delta_stats(rows, out / "delta_stats.png")
    sys.stdout.write((out / "delta_stats.csv").read_text())


def cmd_train_toy1d(args) -> None:
    from .plotting import plot_curves, plot_delta_stats
    from .trainer import train_toy1d
    rep = train_toy1d(seed=args.seed, steps=args.steps)
    out = _out_dir(args.out)
    io.write_json(out / "toy1d_report.json", rep)
    io.write_csv(out / "toy1d_delta_stats.csv", rep["delta_stats_per_class"], STATS_COLUMNS)
    plot_delta_stats(rep["delta_stats_per_class"], out / "toy1d_delta_stats.png")
    plot_curves(rep["loss_history"], out / "toy1d_loss.png", "train MSE", logy=True)
    mean = {r["degradation_label"]: r["mean"] for r in rep["delta_stats_per_class"]}
    _report({"mse_modulated": rep["mse_modulated"], "mse_fixed": rep["mse_fixed"], "delta_mean": mean})
    failures = []
    if args.steps == 0:
        if rep["mse_modulated"] != rep["mse_fixed"]:
            failures.append("toy1d.identity_at_init")
    else:
        if not rep["mse_modulated"] <= 0.9 * rep["mse_fixed"]:
            failures.append("toy1d.mse_improvement")
        if not mean["noise"] < mean["blur"]:
            failures.append("toy1d.delta_ordering")
    _fail_on(failures)


def cmd_overfit_2d(args) -> None:
    from .plotting import plot_curves
    from .trainer import overfit_2d
    from .network import DpmambaNet
    cfg = _config(args)
    clean = make_clean_images(2, args.size, args.seed)
    samples = make_corpus(clean, [{"label": "noise", "noise_sigma": 0.1}], 2, args.seed)
    net = DpmambaNet(tuple(cfg["widths"]), cfg["blocks_per_stage"], cfg["state_dim"], cfg["d_emb"], seed=args.seed)
    rep = overfit_2d(net, samples, steps=args.steps, lr=args.lr, loss_cfg=LossConfig(*cfg["lambdas"]))
    out = _out_dir(args.out)
    io.write_json(out / "overfit_2d.json", rep)
    plot_curves({"train PSNR": rep["psnr"]}, out / "overfit_2d_psnr.png", "PSNR (dB)")
    gain = rep["psnr_final"] - rep["psnr_init"]
    _report({"psnr_init": rep["psnr_init"], "psnr_final": rep["psnr_final"], "gain_db": gain})
    _fail_on([] if args.steps == 0 or gain >= 3.0 else ["overfit_2d.psnr_gain"])


def cmd_spectrum_gap(args) -> None:
    from .plotting import plot_spectrum_gap
    ref, img = io.read_pnm(args.ref), io.read_pnm(args.input)
    if ref.shape != img.shape:
        raise ShapeError(f"shape mismatch {ref.shape} vs {img.shape}")
    gap = spectrum_gap(ref, img, args.bins)
    out = _out_dir(args.out)
    rows = [{"freq": float(f), "gap": float(g), "count": int(c)} for f, g, c in zip(gap["freq"], gap["gap"], gap["count"])]
    io.write_csv(out / "spectrum_gap.csv", rows, ("freq", "gap", "count"))
    plot_spectrum_gap(gap, out / "spectrum_gap.png")
    sys.stdout.write((out / "spectrum_gap.csv").read_text())


def cmd_probe(args) -> None:
    from .extractor import ExtractorNet, extract, linear_probe, pretrain_extractor
    cfg = _config(args)
    c = 3
    train = make_corpus(make_clean_images(16, args.size, args.seed, c), THREE_CLASS_RECIPES, args.count, args.seed)
    held = make_corpus(make_clean_images(16, args.size, args.seed + 1, c), THREE_CLASS_RECIPES, args.count,
                       args.seed + 1)
    res = pretrain_extractor(train, cfg["extractor_width"], cfg["d_emb"], args.steps, args.seed, theta=cfg["theta"])
    labels = [s.spec.label for s in held]

    def acc(net):
        return linear_probe(np.stack([extract(s.degraded, net) for s in held]), labels, seed=args.seed)
    rand = ExtractorNet(cfg["extractor_width"], cfg["d_emb"], cfg["theta"], np.random.default_rng(args.seed), c)
    rep = {"pretrained": acc(res.extractor), "random_init": acc(rand), "pretrain_losses": res.losses}
    out = _out_dir(args.out)
    io.write_json(out / "probe.json", rep)
    _report({"accuracy": rep["pretrained"]["accuracy"], "random_init_accuracy": rep["random_init"]["accuracy"]})
    _fail_on([] if rep["pretrained"]["accuracy"] >= 0.80 else ["probe.accuracy"])


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpssm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("degrade", help="synthesize a labeled degraded corpus from PPM/PGM images")
    s.add_argument("--config")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_degrade)

    s = sub.add_parser("init-weights", help="write identity-initialized weights")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_init_weights)

    s = sub.add_parser("restore", help="restore one image")
    s.add_argument("--weights", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--metrics", help="reference image; prints PSNR/SSIM as JSON")
    s.set_defaults(fn=cmd_restore)

    s = sub.add_parser("bench-scan", help="time sequential vs parallel scans")
    s.add_argument("--L", type=_int_list, default=[1024, 4096, 16384])
    s.add_argument("--dinner", type=int, default=16)
    s.add_argument("--N", type=int, default=16)
    s.add_argument("--threads", type=_int_list, help="worker counts (default: $DPSSM_THREADS or 1)")
    s.add_argument("--reps", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="bench_out")
    s.set_defaults(fn=cmd_bench_scan)

    s = sub.add_parser("grad-check", help="finite-difference gradient checks")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--instances", type=int, default=20)
    s.add_argument("--coords", type=int, default=32)
    s.add_argument("--out", default="grad_check_out")
    s.set_defaults(fn=cmd_grad_check)

    s = sub.add_parser("stats-delta", help="per-degradation step-size statistics of the early layers")
    s.add_argument("--weights")
    s.add_argument("--config")
    s.add_argument("--count", type=int, default=14)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--fraction", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="stats_out")
    s.set_defaults(fn=cmd_stats_delta)

    s = sub.add_parser("train-toy1d", help="modulated vs fixed scan on the 1-D mixed-degradation task")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--out", default="toy1d_out")
    s.set_defaults(fn=cmd_train_toy1d)

    s = sub.add_parser("overfit-2d", help="two-image overfit smoke test of the 2-D network")
    s.add_argument("--config")
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--size", type=int, default=48)
    s.add_argument("--lr", type=float, default=2e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="overfit_out")
    s.set_defaults(fn=cmd_overfit_2d)

    s = sub.add_parser("spectrum-gap", help="radial spectrum gap between a reference and an image")
    s.add_argument("--ref", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--bins", type=int, default=16)
    s.add_argument("--out", default="spectrum_out")
    s.set_defaults(fn=cmd_spectrum_gap)

    s = sub.add_parser("probe", help="pre-train the extractor and linear-probe its embeddings")
    s.add_argument("--config")
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--count", type=int, default=90)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="probe_out")
    s.set_defaults(fn=cmd_probe)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except CheckFailed as exc:
        print(f"dpssm: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except io.ConfigError as exc:
        print(f"dpssm: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except io.FormatError as exc:
        print(f"dpssm: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ShapeError as exc:
        print(f"dpssm: shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except OSError as exc:
        print(f"dpssm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"dpssm: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
