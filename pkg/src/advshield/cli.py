"""Command line front end: train, attack, defend, evaluate.

One binary with subcommands mirroring the experiment pipeline. Every run is
deterministic given its flags; flags may also come from a key=value config
file, with explicit flags winning. Heavy numeric imports happen inside the
command handlers so that --threads can cap BLAS and JIT pools first.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS", "NUMBA_NUM_THREADS")


@dataclass
class RunConfig:
    """Fully defaulted run parameters; serialized into every artifact."""

    command: str = ""
    data: str = ""              # dataset directory, or "synthetic"
    out: str = "runs"
    seed: int = 0
    threads: int = 0            # 0 leaves library defaults alone
    synthetic_n: int = 200      # train images per class for --data synthetic
    model: str = ""             # classifier checkpoint path
    defense: str = ""           # autoencoder checkpoint path
    epochs: int = 5
    lr: float = 0.05
    batch_size: int = 64
    kind: str = ""              # attack kind for single-recipe flags
    eps: float = 0.6
    alpha: float = 0.015
    steps: int = 40
    restarts: int = 1
    limit: int = 0              # 0 = whole split
    sigma: float = 0.1
    clean_mix: float = 0.25
    bottleneck: int = 32
    recipes: str = ""           # comma-separated "kind:eps[:alpha[:steps]]" list

    def as_meta(self) -> dict:
        return {k: v for k, v in asdict(self).items()}


_DEFAULTS = {f.name: f.default for f in fields(RunConfig)}

# Subcommands override a few defaults where their natural values differ.
_COMMAND_DEFAULTS = {
    "train-classifier": {"epochs": 5, "lr": 0.05},
    "train-defense": {"epochs": 10, "lr": 0.05},
}


def _read_config_file(parser, path):
    cfg = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        parser.error(f"cannot read config file: {exc}")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            parser.error(f"config line {lineno} is not key=value: {raw!r}")
        cfg[key.strip()] = value.strip()
    return cfg

_BOOL_WORDS = {"1": True, "true": True, "yes": True,
               "0": False, "false": False, "no": False}


def _coerce(parser, key, text, like):
    try:
        if isinstance(like, bool):
            return _BOOL_WORDS[text.lower()]
        return type(like)(text)
    except (ValueError, KeyError):
        parser.error(f"config value for {key!r} is not a valid "
                     f"{type(like).__name__}: {text!r}")


def resolve_config(parser, args) -> RunConfig:
    """Layer file values under explicit flags, on top of defaults."""
    file_cfg = _read_config_file(parser, args.config) if args.config else {}
    defaults = dict(_DEFAULTS)
    defaults.update(_COMMAND_DEFAULTS.get(args.command, {}))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
    merged = {"command": args.command}
    for key, default in defaults.items():
        if key == "command":
            continue
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in file_cfg:
            merged[key] = _coerce(parser, key, file_cfg[key], default)
        else:
            merged[key] = default
    return RunConfig(**merged)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run-config.json", "w") as f:
        json.dump(cfg.as_meta(), f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def _load_split(parser, cfg: RunConfig, split: str):
    from . import data

    source = cfg.data or os.environ.get("ADVSHIELD_DATA_DIR", "")
    if not source:
        parser.error("no dataset: pass --data PATH|synthetic "
                     "or set ADVSHIELD_DATA_DIR")
    if source == "synthetic":
        if split == "train":
            return data.synthetic_dataset(seed=1, n_per_class=cfg.synthetic_n)
        return data.synthetic_dataset(seed=2,
                                      n_per_class=max(1, cfg.synthetic_n // 4),
                                      split="test")
    if not Path(source).is_dir():
        parser.error(f"dataset directory not found: {source}")
    return data.load_dataset(source, split)


def _require_file(parser, path, what):
    if not path:
        parser.error(f"--{what} is required for this command")
    if not Path(path).is_file():
        parser.error(f"--{what} checkpoint not found: {path}")
    return path


def _single_recipe(cfg: RunConfig):
    from . import attacks as A

    if cfg.kind == "fgsm":
        return A.AttackConfig("fgsm", cfg.eps, seed=cfg.seed)
    return A.AttackConfig(cfg.kind, cfg.eps, alpha=cfg.alpha, steps=cfg.steps,
                          restarts=cfg.restarts, seed=cfg.seed)


def _parse_recipes(parser, raw: str):
    """Parse "kind:eps[:alpha[:steps]]" comma-separated recipe strings."""
    from . import attacks as A

    out = []
    for token in filter(None, (t.strip() for t in raw.split(","))):
        parts = token.split(":")
        try:
            kind = parts[0]
            eps = float(parts[1])
            alpha = float(parts[2]) if len(parts) > 2 else 0.015
            steps = int(parts[3]) if len(parts) > 3 else 40
            if kind == "fgsm":
                out.append(A.AttackConfig(kind, eps))
            else:
                out.append(A.AttackConfig(kind, eps, alpha=alpha, steps=steps))
        except (IndexError, ValueError) as exc:
            parser.error(f"bad --recipe {token!r}: {exc}")
    return out


def cmd_train_classifier(parser, args) -> int:
    cfg = resolve_config(parser, args)
    from . import classifier as C

    train = _load_split(parser, cfg, "train")
    test = _load_split(parser, cfg, "test")
    model = C.init_classifier(cfg.seed)
    model, report = C.train_classifier(model, train, test, epochs=cfg.epochs,
                                       lr=cfg.lr, batch_size=cfg.batch_size,
                                       seed=cfg.seed)
    model.meta.update(cfg.as_meta())
    out = _outdir(cfg)
    C.save_classifier(out / "classifier.ckpt", model)
    _write_train_report(out, report)
    print(f"classifier.ckpt written; test accuracy "
          f"{report.epoch_accuracies[-1]:.4f}")
    return 0


def _write_train_report(out: Path, report) -> None:
    with open(out / "train-report.json", "w") as f:
        json.dump({"epoch_losses": report.epoch_losses,
                   "epoch_accuracies": report.epoch_accuracies,
                   "seconds": report.seconds}, f, indent=2)
        f.write("\n")


def cmd_attack(parser, args) -> int:
    cfg = resolve_config(parser, args)
    if not cfg.kind:
        parser.error("--kind is required")
    from . import attacks as A
    from . import classifier as C
    from . import evaluate as E

    model = C.load_classifier(_require_file(parser, cfg.model, "model"))
    test = _load_split(parser, cfg, "test")
    if cfg.limit:
        test = test.subset(range(min(cfg.limit, test.n)))
    try:
        acfg = _single_recipe(cfg)
    except ValueError as exc:
        parser.error(str(exc))
    batch = A.run_attack(model, test.images, test.labels, acfg)
    out = _outdir(cfg)
    sidecar = A.save_adversarial(out, batch, test.labels)
    E.render_grid(batch.x_adv[:10], 2, 5, out / "adversarial-grid.pgm")
    print(f"{batch.x_adv.shape[0]} adversarial images written; "
          f"fooled {sidecar['fooled_fraction']:.3f}, "
          f"mean linf {sidecar['linf_mean']:.4f}")
    return 0


def cmd_train_defense(parser, args) -> int:
    cfg = resolve_config(parser, args)
    from . import autoencoder as AE
    from . import classifier as C

    if cfg.recipes:
        attack = _parse_recipes(parser, cfg.recipes)
    elif cfg.kind:
        try:
            attack = _single_recipe(cfg)
        except ValueError as exc:
            parser.error(str(exc))
    else:
        attack = None
    clf = None
    if attack is not None:
        clf = C.load_classifier(_require_file(parser, cfg.model, "model"))
    train = _load_split(parser, cfg, "train")
    ae = AE.init_autoencoder(cfg.seed, bottleneck_channels=cfg.bottleneck)
    dcfg = AE.DefenseTrainConfig(attack=attack, sigma=cfg.sigma,
                                 epochs=cfg.epochs, lr=cfg.lr,
                                 batch_size=cfg.batch_size, seed=cfg.seed,
                                 clean_mix=cfg.clean_mix)
    ae, report = AE.train_defense(ae, clf, train, dcfg)
    ae.meta.update(cfg.as_meta())
    out = _outdir(cfg)
    AE.save_autoencoder(out / "defense.ckpt", ae)
    _write_train_report(out, report)
    print(f"defense.ckpt written; reconstruction mse "
          f"{report.epoch_losses[-1]:.6f}")
    return 0


def cmd_evaluate(parser, args) -> int:
    cfg = resolve_config(parser, args)
    modes = [bool(args.sweep), args.defended, args.latency]
    if sum(modes) != 1:
        parser.error("pick exactly one of --sweep, --defended, --latency")
    from . import autoencoder as AE
    from . import classifier as C
    from . import evaluate as E

    model = C.load_classifier(_require_file(parser, cfg.model, "model"))
    test = _load_split(parser, cfg, "test")
    if cfg.limit:
        test = test.subset(range(min(cfg.limit, test.n)))
    dataset_name = cfg.data or os.environ.get("ADVSHIELD_DATA_DIR", "")
    out = _outdir(cfg)

    if args.sweep:
        grid = [float(t) for t in args.eps_grid.split(",")] if args.eps_grid \
            else [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 1.0, 1.5]
        report = E.epsilon_sweep(model, args.sweep, grid, test,
                                 alpha=cfg.alpha, steps=cfg.steps,
                                 restarts=cfg.restarts, seed=cfg.seed,
                                 dataset_name=dataset_name)
        report.metadata.update({f"config_{k}": str(v)
                                for k, v in cfg.as_meta().items()})
        E.write_report_csv(report, out / f"sweep_{args.sweep}.csv")
        _sweep_grid(model, test, args.sweep, cfg, grid,
                    out / f"sweep_{args.sweep}.pgm")
        for row in report.rows:
            print(f"eps={row.epsilon:<8.4f} accuracy={row.acc_attacked:.4f}")
        return 0

    defense = AE.load_autoencoder(_require_file(parser, cfg.defense, "defense"))
    if args.latency:
        batch = test.images[:cfg.batch_size]
        lat = E.measure_latency(defense, model, batch, warmup=args.warmup,
                                trials=args.trials)
        E.write_latency_csv(lat, out / "latency.csv",
                            metadata={str(k): str(v)
                                      for k, v in cfg.as_meta().items()})
        print(f"per-image latency: median {lat.median_s * 1e3:.3f} ms, "
              f"p95 {lat.p95_s * 1e3:.3f} ms")
        return 0

    if not cfg.kind:
        parser.error("--kind is required with --defended")
    try:
        acfg = _single_recipe(cfg)
    except ValueError as exc:
        parser.error(str(exc))
    report = E.defended_accuracy(model, defense, acfg, test,
                                 dataset_name=dataset_name)
    report.metadata.update({f"config_{k}": str(v)
                            for k, v in cfg.as_meta().items()})
    E.write_report_csv(report, out / f"defended_{cfg.kind}.csv")
    _defended_grid(model, defense, acfg, test,
                   out / f"defended_{cfg.kind}.pgm")
    row = report.rows[0]
    print(f"attacked accuracy {row.acc_attacked:.4f}, "
          f"defended accuracy {row.acc_defended:.4f}")
    return 0


def _sweep_grid(model, test, kind, cfg: RunConfig, grid, path) -> None:
    """Top row clean, bottom row attacked at the largest epsilon."""
    from . import attacks as A
    from . import evaluate as E
    import numpy as np

    eps = max(grid)
    sample = test.images[:5]
    labels = test.labels[:5]
    if eps > 0:
        acfg = A.AttackConfig(kind, eps, alpha=cfg.alpha, steps=cfg.steps,
                              seed=cfg.seed) if kind != "fgsm" \
            else A.AttackConfig(kind, eps)
        attacked = A.run_attack(model, sample, labels, acfg).x_adv
    else:
        attacked = sample
    E.render_grid(np.concatenate([sample, attacked]), 2, 5, path)


def _defended_grid(model, defense, acfg, test, path) -> None:
    """Top row adversarial inputs, bottom row their purified versions."""
    from . import attacks as A
    from . import autoencoder as AE
    from . import evaluate as E
    import numpy as np

    sample = test.images[:5]
    attacked = A.run_attack(model, sample, test.labels[:5], acfg).x_adv
    purified = AE.purify(defense, attacked)
    E.render_grid(np.concatenate([attacked, purified]), 2, 5, path)


def _add_common(sub):
    sub.add_argument("--data", help="dataset directory or 'synthetic' "
                     "(default: $ADVSHIELD_DATA_DIR)")
    sub.add_argument("--out", help="output directory (default runs/)")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--config", help="key=value file; flags win")
    sub.add_argument("--threads", type=int,
                     help="cap BLAS and JIT thread pools")
    sub.add_argument("--synthetic-n", type=int, dest="synthetic_n",
                     help="per-class train size for synthetic data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advshield",
        description="adversarial attack and purification-defense pipeline")
    subs = parser.add_subparsers(dest="command", required=True)

    t = subs.add_parser("train-classifier", help="train the CNN classifier")
    _add_common(t)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.set_defaults(func=cmd_train_classifier)

    a = subs.add_parser("attack", help="generate adversarial examples")
    _add_common(a)
    a.add_argument("--kind", choices=("fgsm", "bim", "pgd"))
    a.add_argument("--eps", type=float)
    a.add_argument("--alpha", type=float)
    a.add_argument("--steps", type=int)
    a.add_argument("--restarts", type=int)
    a.add_argument("--model", help="classifier checkpoint")
    a.add_argument("--limit", type=int, help="attack only the first N images")
    a.set_defaults(func=cmd_attack)

    d = subs.add_parser("train-defense", help="train the purification autoencoder")
    _add_common(d)
    d.add_argument("--attack", dest="kind", choices=("fgsm", "bim", "pgd"),
                   help="single training attack recipe")
    d.add_argument("--eps", type=float)
    d.add_argument("--alpha", type=float)
    d.add_argument("--steps", type=int)
    d.add_argument("--recipe", dest="recipes",
                   help="comma-separated kind:eps[:alpha[:steps]] list, "
                        "cycled per batch")
    d.add_argument("--model", help="classifier checkpoint to attack")
    d.add_argument("--sigma", type=float, help="train-time latent noise")
    d.add_argument("--clean-mix", type=float, dest="clean_mix")
    d.add_argument("--bottleneck", type=int, help="bottleneck channels")
    d.add_argument("--epochs", type=int)
    d.add_argument("--lr", type=float)
    d.add_argument("--batch-size", type=int, dest="batch_size")
    d.set_defaults(func=cmd_train_defense)

    e = subs.add_parser("evaluate", help="sweeps, defended pairs, latency")
    _add_common(e)
    e.add_argument("--sweep", choices=("fgsm", "bim", "pgd"),
                   help="epsilon sweep for this attack kind")
    e.add_argument("--eps-grid", dest="eps_grid",
                   help="comma-separated epsilon list for --sweep")
    e.add_argument("--defended", action="store_true",
                   help="attacked vs defended accuracy pair")
    e.add_argument("--latency", action="store_true",
                   help="purify+classify per-image latency")
    e.add_argument("--kind", choices=("fgsm", "bim", "pgd"))
    e.add_argument("--eps", type=float)
    e.add_argument("--alpha", type=float)
    e.add_argument("--steps", type=int)
    e.add_argument("--restarts", type=int)
    e.add_argument("--model", help="classifier checkpoint")
    e.add_argument("--defense", help="autoencoder checkpoint")
    e.add_argument("--limit", type=int, help="evaluate only the first N images")
    e.add_argument("--batch-size", type=int, dest="batch_size")
    e.add_argument("--warmup", type=int, default=2)
    e.add_argument("--trials", type=int, default=5)
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None):
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    try:
        return args.func(parser, args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
