"""Command-line interface.

Subcommands cover the full workflow: synthesize noisy inputs, train a
codec on them, denoise, evaluate against a clean reference, run the
classical wavelet baseline, and sweep the rate weight.  Every option
can come from a "key = value" config file (flags win over the file),
and each run echoes its fully resolved configuration next to its
primary output so the exact run can be replayed from that file alone.

Thread control: --threads N (or the DECOMPRESS_THREADS environment
variable) pins the BLAS pool; it must take effect before numpy loads,
so main() sets the environment first and only then imports the
numeric modules.
"""

import argparse
import os
import sys

_LAMBDA_FOR_SIGMA = {15.0: 300.0, 25.0: 1000.0, 50.0: 3000.0}

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _configure_threads(argv):
    """Resolve --threads / DECOMPRESS_THREADS before numpy is imported."""
    n = os.environ.get("DECOMPRESS_THREADS")
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            n = argv[i + 1]
        elif arg.startswith("--threads="):
            n = arg.split("=", 1)[1]
    if n is None:
        return
    try:
        count = max(1, int(n))
    except ValueError:
        return  # argparse will reject it with a proper message later
    for var in _THREAD_VARS:
        os.environ[var] = str(count)


def load_config_file(path) -> dict:
    """Parse "key = value" lines; '#' starts a comment, blanks ignored."""
    from .errors import FormatError
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError("%s:%d: expected 'key = value', got %r"
                                  % (path, lineno, raw.rstrip()))
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _resolve(args, schema):
    """Merge flag values, config-file values, and defaults.

    schema: list of (key, converter, default, required).  Flags (stored
    on args with '-' mapped to '_') take precedence; a key left None
    falls back to the config file, then to the default.  Returns the
    resolved dict; every value is converted.
    """
    from .errors import FormatError
    file_values = {}
    if getattr(args, "config", None):
        file_values = load_config_file(args.config)
    resolved = {}
    for key, conv, default, required in schema:
        attr = key.replace("-", "_")
        value = getattr(args, attr, None)
        if value is None and key in file_values:
            raw = file_values[key]
            if raw != "":
                try:
                    value = conv(raw)
                except ValueError:
                    raise FormatError("config value %s = %r is not a valid %s"
                                      % (key, raw, conv.__name__))
        if value is None:
            value = default
        if value is None and required:
            raise FormatError("missing required option --%s (or %s in the "
                              "config file)" % (key, key))
        resolved[key] = value
    unknown = set(file_values) - {k for k, _, _, _ in schema}
    if unknown:
        raise FormatError("config file has unknown keys: %s"
                          % ", ".join(sorted(unknown)))
    return resolved


def echo_config(resolved: dict, out_path):
    """Write the fully resolved run configuration next to its output."""
    path = str(out_path) + ".config"
    with open(path, "w") as f:
        for key, value in resolved.items():
            f.write("%s = %s\n" % (key, "" if value is None else value))
    return path


def _resolve_lambda(lam, sigma):
    from .errors import FormatError
    if lam is not None:
        return lam
    if sigma is not None and float(sigma) in _LAMBDA_FOR_SIGMA:
        return _LAMBDA_FOR_SIGMA[float(sigma)]
    raise FormatError(
        "no --lambda given and sigma %r has no default rate weight "
        "(defaults exist for 15, 25, 50); pass --lambda explicitly" % (sigma,))


def _load_corpus(path):
    """A corpus argument is one image file or a directory of them."""
    from .errors import FormatError
    from .imageio import read_image
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path)
                       if n.lower().endswith((".pgm", ".png", ".dcf32")))
        if not names:
            raise FormatError("%s: directory holds no .pgm/.png/.dcf32 images"
                              % path)
        return [read_image(os.path.join(path, n)) for n in names], names
    return [read_image(path)], [os.path.basename(path)]


def _stem(path):
    base = os.path.basename(str(path))
    return base.rsplit(".", 1)[0] if "." in base else base


# -- subcommand bodies ------------------------------------------------


def cmd_synth_noise(args):
    from .denoiser import NoiseSpec, add_awgn
    from .imageio import read_image, write_dcf32, write_png
    schema = [("clean", str, None, True),
              ("sigma", float, None, True),
              ("seed", int, 0, False),
              ("out", str, None, True),
              ("preview", str, None, False)]
    cfg = _resolve(args, schema)
    clean = read_image(cfg["clean"])
    noisy = add_awgn(clean, NoiseSpec(sigma=cfg["sigma"], seed=cfg["seed"]))
    write_dcf32(cfg["out"], noisy)
    preview = cfg["preview"] or (str(cfg["out"]) + ".png")
    write_png(preview, noisy)
    echo_config(cfg, cfg["out"])
    print("wrote %s (sigma %g, seed %d) and preview %s"
          % (cfg["out"], cfg["sigma"], cfg["seed"], preview))
    return 0


def _train_schema():
    return [("corpus", str, None, True),
            ("sigma", float, None, False),
            ("lambda", float, None, False),
            ("steps", int, 50_000, False),
            ("batch-size", int, 64, False),
            ("seed", int, 0, False),
            ("max-patches", int, None, False),
            ("learning-rate", float, 2e-4, False),
            ("dtype", str, "float64", False),
            ("log-interval", int, 100, False),
            ("out", str, None, True),
            ("log", str, None, False)]


def _train_config_from(cfg):
    from .training import TrainConfig
    lam = _resolve_lambda(cfg["lambda"], cfg["sigma"])
    cfg["lambda"] = lam
    return TrainConfig(lam=lam,
                       sigma=float("nan") if cfg["sigma"] is None else cfg["sigma"],
                       learning_rate=cfg["learning-rate"],
                       batch_size=cfg["batch-size"],
                       steps=cfg["steps"],
                       seed=cfg["seed"],
                       max_patches=cfg["max-patches"],
                       dtype=cfg["dtype"],
                       log_interval=cfg["log-interval"])


def cmd_train(args):
    from .training import save_checkpoint, train, write_training_log
    cfg = _resolve(args, _train_schema())
    images, _ = _load_corpus(cfg["corpus"])
    train_cfg = _train_config_from(cfg)
    codec, records = train(images, train_cfg)
    save_checkpoint(cfg["out"], codec, lam=train_cfg.lam, sigma=train_cfg.sigma,
                    steps_trained=train_cfg.steps, run_seed=train_cfg.seed)
    if cfg["log"]:
        write_training_log(records, cfg["log"])
    echo_config(cfg, cfg["out"])
    last = records[-1] if records else None
    if last is not None:
        print("trained %d steps (lambda %g): D %.3f, R %.4f bpp -> %s"
              % (train_cfg.steps, train_cfg.lam, last.distortion, last.rate,
                 cfg["out"]))
    else:
        print("trained %d steps (lambda %g) -> %s"
              % (train_cfg.steps, train_cfg.lam, cfg["out"]))
    return 0


def cmd_denoise(args):
    from .denoiser import denoise
    from .imageio import read_image, write_image
    from .training import load_checkpoint
    schema = [("ckpt", str, None, True),
              ("noisy", str, None, True),
              ("out", str, None, True),
              ("batch-patches", int, 512, False)]
    cfg = _resolve(args, schema)
    codec, _ = load_checkpoint(cfg["ckpt"])
    noisy = read_image(cfg["noisy"])
    restored = denoise(noisy, codec, batch_size=cfg["batch-patches"])
    write_image(cfg["out"], restored)
    echo_config(cfg, cfg["out"])
    print("denoised %s -> %s" % (cfg["noisy"], cfg["out"]))
    return 0


def cmd_eval(args):
    from .denoiser import evaluate, write_report
    from .imageio import read_image
    from .training import load_checkpoint
    schema = [("ckpt", str, None, True),
              ("clean", str, None, True),
              ("noisy", str, None, True),
              ("report", str, None, True),
              ("label", str, None, False),
              ("batch-patches", int, 512, False)]
    cfg = _resolve(args, schema)
    codec, meta = load_checkpoint(cfg["ckpt"])
    clean = read_image(cfg["clean"])
    noisy = read_image(cfg["noisy"])
    label = cfg["label"] or _stem(cfg["clean"])
    report = evaluate(clean, noisy, codec, image=label, sigma=meta["sigma"],
                      batch_size=cfg["batch-patches"])
    write_report([report], cfg["report"])
    echo_config(cfg, cfg["report"])
    print("%s: noisy %.4f dB -> denoised %.4f dB at %.4f bpp (%s)"
          % (label, report.psnr_noisy, report.psnr_denoised, report.rate_bpp,
             cfg["report"]))
    return 0


def cmd_baseline(args):
    from .denoiser import DenoiseReport, psnr, write_report
    from .imageio import read_image, write_image
    from .wavelet import bayes_shrink_denoise
    import time
    schema = [("noisy", str, None, True),
              ("sigma", float, None, True),
              ("out", str, None, True),
              ("levels", int, 3, False),
              ("clean", str, None, False),
              ("report", str, None, False)]
    cfg = _resolve(args, schema)
    noisy = read_image(cfg["noisy"])
    start = time.perf_counter()
    restored = bayes_shrink_denoise(noisy, cfg["sigma"], levels=cfg["levels"])
    seconds = time.perf_counter() - start
    write_image(cfg["out"], restored)
    echo_config(cfg, cfg["out"])
    if cfg["clean"]:
        clean = read_image(cfg["clean"])
        row = DenoiseReport(image=_stem(cfg["clean"]), sigma=cfg["sigma"],
                            method="wavelet",
                            psnr_noisy=psnr(clean, noisy),
                            psnr_denoised=psnr(clean, restored),
                            rate_bpp=float("nan"), seconds=seconds)
        if cfg["report"]:
            write_report([row], cfg["report"])
        print("wavelet baseline: noisy %.4f dB -> denoised %.4f dB (%s)"
              % (row.psnr_noisy, row.psnr_denoised, cfg["out"]))
    else:
        print("wavelet baseline -> %s" % cfg["out"])
    return 0


def cmd_rd_sweep(args):
    from .errors import FormatError
    schema = [("corpus", str, None, True),
              ("sigma", float, None, True),
              ("lambdas", str, "300,1000,3000", False),
              ("steps", int, 5000, False),
              ("batch-size", int, 64, False),
              ("seed", int, 0, False),
              ("max-patches", int, 20_000, False),
              ("dtype", str, "float64", False),
              ("log-interval", int, 100, False),
              ("report", str, None, True),
              ("outdir", str, None, False)]
    cfg = _resolve(args, schema)
    try:
        lambdas = [float(v) for v in str(cfg["lambdas"]).split(",") if v.strip()]
    except ValueError:
        raise FormatError("could not parse --lambdas %r as comma-separated "
                          "numbers" % (cfg["lambdas"],))
    if not lambdas:
        raise FormatError("--lambdas resolved to an empty list")
    rows = sweep_rate_weights(cfg, lambdas)
    with open(cfg["report"], "w") as f:
        f.write("lambda,final_distortion,final_rate_bpp,psnr_denoised\n")
        for lam, dist, rate, quality in rows:
            f.write("%r,%r,%r,%r\n" % (lam, dist, rate, quality))
    echo_config(cfg, cfg["report"])
    for lam, dist, rate, quality in rows:
        print("lambda %g: D %.3f, R %.4f bpp, denoised %.4f dB"
              % (lam, dist, rate, quality))
    print("wrote %s" % cfg["report"])
    return 0


def sweep_rate_weights(cfg: dict, lambdas):
    """Train one codec per rate weight on a shared noisy corpus.

    The corpus images are clean; noise at the requested sigma is
    synthesized once (seeded from the run seed), and every rate weight
    trains from the same seed and budget so runs differ only in the
    objective.  The reported final D and R come from one deterministic
    eval-mode pass over the training patch set (hard rounding, no
    quantizer noise), not from the last training batch.  Returns
    (lambda, final D, final R, mean denoised PSNR against the clean
    corpus) per weight, in the given order.
    """
    import numpy as np

    from .denoiser import NoiseSpec, add_awgn, denoise, psnr
    from .rng import Rng
    from .training import (PatchDataset, derive_streams, evaluate_objective,
                           save_checkpoint, train)
    clean_images, names = _load_corpus(cfg["corpus"])
    noise_seed = Rng(cfg["seed"]).next_u64()
    noisy_images = [add_awgn(img, NoiseSpec(sigma=cfg["sigma"],
                                            seed=noise_seed + i))
                    for i, img in enumerate(clean_images)]
    dataset = PatchDataset(noisy_images, size=16, stride=1,
                           max_patches=cfg["max-patches"],
                           seed=derive_streams(cfg["seed"])["subsample"])
    rows = []
    for lam in lambdas:
        train_cfg = _train_config_from({
            "lambda": lam, "sigma": cfg["sigma"],
            "learning-rate": 2e-4, "batch-size": cfg["batch-size"],
            "steps": cfg["steps"], "seed": cfg["seed"],
            "max-patches": cfg["max-patches"], "dtype": cfg["dtype"],
            "log-interval": cfg["log-interval"]})
        codec, _ = train(noisy_images, train_cfg)
        if cfg.get("outdir"):
            os.makedirs(cfg["outdir"], exist_ok=True)
            save_checkpoint(os.path.join(cfg["outdir"],
                                         "lambda_%g.ckpt" % lam),
                            codec, lam=lam, sigma=cfg["sigma"],
                            steps_trained=train_cfg.steps,
                            run_seed=train_cfg.seed)
        dist, rate = evaluate_objective(dataset, codec, lam)
        quality = float(np.mean([psnr(c, denoise(n, codec))
                                 for c, n in zip(clean_images, noisy_images)]))
        rows.append((lam, dist, rate, quality))
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decompress",
        description="Denoise images with a learned compression code.")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS/OpenMP thread count (or set "
                             "DECOMPRESS_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, options):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="key = value file; explicit flags override it")
        for opt, kwargs in options:
            p.add_argument(opt, **kwargs)
        return p

    add("synth-noise", "add Gaussian noise to a clean image", [
        ("--clean", dict(help="clean input image")),
        ("--sigma", dict(type=float, help="noise standard deviation")),
        ("--seed", dict(type=int, help="noise seed (default 0)")),
        ("--out", dict(help="output float map (.dcf32)")),
        ("--preview", dict(help="8-bit preview path (default OUT.png)")),
    ]).set_defaults(func=cmd_synth_noise)

    add("train", "fit a codec to noisy images", [
        ("--corpus", dict(help="noisy image file or directory")),
        ("--sigma", dict(type=float, help="noise level (metadata; picks the "
                                          "default rate weight)")),
        ("--lambda", dict(type=float, dest="lambda_", metavar="LAMBDA",
                          help="rate weight (default from sigma: 15->300, "
                               "25->1000, 50->3000)")),
        ("--steps", dict(type=int, help="optimizer steps (default 50000)")),
        ("--batch-size", dict(type=int, help="patches per step (default 64)")),
        ("--seed", dict(type=int, help="run seed (default 0)")),
        ("--max-patches", dict(type=int, help="subsample the patch set")),
        ("--learning-rate", dict(type=float, help="Adam rate (default 2e-4)")),
        ("--dtype", dict(choices=("float32", "float64"),
                         help="arithmetic width (default float64)")),
        ("--log-interval", dict(type=int, help="steps between log rows")),
        ("--out", dict(help="checkpoint path")),
        ("--log", dict(help="training log CSV path")),
    ]).set_defaults(func=cmd_train)

    add("denoise", "restore a noisy image with a trained codec", [
        ("--ckpt", dict(help="trained checkpoint")),
        ("--noisy", dict(help="noisy input image")),
        ("--out", dict(help="denoised output image")),
        ("--batch-patches", dict(type=int, help="patches per codec batch")),
    ]).set_defaults(func=cmd_denoise)

    add("eval", "denoise and score against a clean reference", [
        ("--ckpt", dict(help="trained checkpoint")),
        ("--clean", dict(help="clean reference image")),
        ("--noisy", dict(help="noisy input image")),
        ("--report", dict(help="output CSV")),
        ("--label", dict(help="image label in the report (default: clean "
                              "file stem)")),
        ("--batch-patches", dict(type=int, help="patches per codec batch")),
    ]).set_defaults(func=cmd_eval)

    add("baseline", "wavelet BayesShrink reference denoiser", [
        ("--noisy", dict(help="noisy input image")),
        ("--sigma", dict(type=float, help="noise standard deviation")),
        ("--out", dict(help="denoised output image")),
        ("--levels", dict(type=int, help="decomposition levels (default 3)")),
        ("--clean", dict(help="optional clean reference for scoring")),
        ("--report", dict(help="optional CSV (needs --clean)")),
    ]).set_defaults(func=cmd_baseline)

    add("rd-sweep", "train at several rate weights and summarize", [
        ("--corpus", dict(help="clean image file or directory")),
        ("--sigma", dict(type=float, help="noise standard deviation")),
        ("--lambdas", dict(help="comma-separated rate weights "
                                "(default 300,1000,3000)")),
        ("--steps", dict(type=int, help="steps per weight (default 5000)")),
        ("--batch-size", dict(type=int, help="patches per step (default 64)")),
        ("--seed", dict(type=int, help="shared run seed (default 0)")),
        ("--max-patches", dict(type=int, help="patch cap (default 20000)")),
        ("--dtype", dict(choices=("float32", "float64"),
                         help="arithmetic width (default float64)")),
        ("--log-interval", dict(type=int, help="steps between log rows")),
        ("--report", dict(help="output CSV")),
        ("--outdir", dict(help="also save one checkpoint per weight here")),
    ]).set_defaults(func=cmd_rd_sweep)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _configure_threads(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "lambda_"):
        setattr(args, "lambda", args.lambda_)
    from .errors import (FormatError, GeometryError, GraphError,
                         NumericGuardError, ShapeError)
    try:
        return args.func(args)
    except (FormatError, GeometryError, GraphError, NumericGuardError,
            ShapeError, ValueError) as exc:
        print("error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print("error: IOError: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
