"""Command-line front end.

Exit codes: 0 success or ACCEPT, 3 REJECT, 1 runtime error, 2 usage or
config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from .config import KEYS, RunConfig, flag_name
from .errors import ConfigError, InsufficientGenuine, SigVerifyError, TooFewSamples
from .evaluation import (
    REPORT_SCHEMA_VERSION,
    dataset_images,
    enrollment_split,
    hyperparameter_grid,
    run_protocol,
    substream,
)
from .featurelearn.patches import sample_patches
from .featurelearn.train import train_features
from .features import extract, extract_many
from .modelfile import dump_model, load_model
from .preprocess import preprocess_pipeline
from .signatures import load_corpus, load_dataset, natural_key, parse_signature
from .synthetic import write_corpus, write_testkit
from .verify import enroll, verify

log = logging.getLogger("sigverify")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_REJECT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser, skip=()):
    g = p.add_argument_group("config keys (override --config)")
    for k in KEYS:
        if k.name not in skip:
            g.add_argument(flag_name(k.name), dest=f"cfg_{k.name}", metavar="V",
                           help=f"{k.help} [default {k.default}]")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sigverify", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("learn-features", help="train a feature bank on an unlabeled corpus")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="output bank file")
    p.add_argument("--config", help="key=value config file")
    _add_config_flags(p)

    p = sub.add_parser("enroll", help="fit and calibrate one user's model")
    p.add_argument("--bank", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--out", required=True, help="models file (created or updated)")
    p.add_argument("--config")
    _add_config_flags(p)

    p = sub.add_parser("verify", help="accept or reject one signature file")
    p.add_argument("--bank", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--signature", required=True)
    p.add_argument("--config")
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="run the verification protocol and write a JSON report")
    p.add_argument("--bank", help="feature bank (not needed with --grid)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--protocol", dest="cfg_forgery_kind", choices=("skilled", "random"))
    p.add_argument("--report", required=True)
    p.add_argument("--grid", help="HIDDEN,...:ITERS,... retrains features per cell (needs --corpus)")
    p.add_argument("--corpus", help="feature-learning corpus for --grid")
    p.add_argument("--emit-roc", action="store_true", help="include ROC points per user")
    p.add_argument("--config")
    _add_config_flags(p, skip=("forgery_kind",))

    p = sub.add_parser("make-testkit", help="write a synthetic dataset or corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=10)
    p.add_argument("--genuine", type=int, default=16)
    p.add_argument("--forgeries", type=int, default=16)
    p.add_argument("--jitter", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corpus", action="store_true",
                   help="write an unlabeled corpus from templates disjoint from the users")
    p.add_argument("--config-out", help="also write the matching layout keys to this file")
    return parser


# -- helpers ---------------------------------------------------------------------

def _config(args) -> RunConfig:
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return RunConfig.from_sources(getattr(args, "config", None), flags)


def _need_dir(path, flag):
    if not Path(path).is_dir():
        raise ConfigError(f"{flag}: {path} is not a directory")


def _need_file(path, flag):
    if not Path(path).is_file():
        raise ConfigError(f"{flag}: {path} does not exist")


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(path, data: bytes):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


def _load_bank(path):
    bank, _, conf = load_model(path)
    if bank is None:
        raise SigVerifyError(f"{path} holds no feature bank")
    return bank, conf


def _check_bank_geometry(bank, cfg: RunConfig, path):
    if bank.patch_h > min(cfg["raster_width"], cfg["raster_height"]):
        raise ConfigError(f"bank {path} patches exceed the configured raster size")


def corpus_patches(corpus_dir, cfg: RunConfig):
    sigs = load_corpus(corpus_dir, cfg.layout())
    pcfg = cfg.preprocess()
    images = []
    for s in sigs:
        try:
            images.append(preprocess_pipeline(s, pcfg))
        except SigVerifyError as exc:
            raise type(exc)(f"{s.source_path}: {exc}") from exc
    rng = substream(cfg["seed"], "patches")
    return sample_patches(images, cfg["n_patches"], cfg["patch"], cfg["patch"], rng), len(sigs)


# -- commands --------------------------------------------------------------------

def cmd_learn_features(args) -> int:
    cfg = _config(args)
    _need_dir(args.corpus, "--corpus")
    patches, n = corpus_patches(args.corpus, cfg)
    bank = train_features(patches, cfg.hyper(), cfg.whitening(), history=cfg["lbfgs_history"])
    _write(args.out, dump_model(bank, [], cfg.as_dict()))
    tr = bank.training_cost_trace
    print(f"corpus: {n} signatures, {patches.patches.shape[0]} patches of "
          f"{cfg['patch']}x{cfg['patch']}x2; whitening kept {bank.whitening.retained_k}"
          f"/{bank.whitening.d} dims")
    print(f"training: {len(tr) - 1} iterations, status {bank.status}; "
          f"cost {tr[0]:.6g} -> {tr[len(tr) // 2]:.6g} -> {tr[-1]:.6g}")
    print(f"final cost: {tr[-1]:.10g}")
    return EXIT_OK


def cmd_enroll(args) -> int:
    cfg = _config(args)
    _need_file(args.bank, "--bank")
    _need_dir(args.dataset, "--dataset")
    bank, _ = _load_bank(args.bank)
    _check_bank_geometry(bank, cfg, args.bank)
    ds = load_dataset(args.dataset, cfg.layout())
    if args.user not in ds:
        raise SigVerifyError(f"unknown user {args.user!r} in {args.dataset}")
    genuine = ds[args.user].genuine
    tr, held = enrollment_split(len(genuine), cfg["train_fraction"], cfg["seed"], args.user)
    pcfg = cfg.preprocess()
    V = extract_many(bank, [preprocess_pipeline(genuine[i], pcfg) for i in tr],
                     cfg["pool_rows"], cfg["pool_cols"])
    try:
        model = enroll(V, cfg["reg"], cfg["quantile"], cfg["slack"], cfg["calibration"], args.user)
    except TooFewSamples as exc:
        raise InsufficientGenuine(f"user {args.user}: {exc}") from exc

    bank_id = _digest(args.bank)
    models = {}
    if Path(args.out).exists():
        _, old, conf = load_model(args.out)
        if conf.get("bank_sha256") != bank_id:
            raise SigVerifyError(f"{args.out} was enrolled against a different bank")
        models = {m.user_id: m for m in old}
    models[args.user] = model
    ordered = [models[u] for u in sorted(models, key=natural_key)]
    snapshot = dict(cfg.as_dict(), bank_sha256=bank_id)
    _write(args.out, dump_model(None, ordered, snapshot))
    print(f"enrolled user {args.user}: train_count={model.train_count} "
          f"threshold={model.threshold:.6f}")
    if len(held):
        print(f"note: {len(held)} genuine signatures held out of training", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _config(args)
    for path, flag in ((args.bank, "--bank"), (args.models, "--models"), (args.signature, "--signature")):
        _need_file(path, flag)
    bank, _ = _load_bank(args.bank)
    _, models, conf = load_model(args.models)
    if conf.get("bank_sha256") not in (None, _digest(args.bank)):
        raise SigVerifyError(f"{args.models} was enrolled against a different bank")
    model = next((m for m in models if m.user_id == args.user), None)
    if model is None:
        raise SigVerifyError(f"unknown user {args.user!r}")
    sig = parse_signature(Path(args.signature).read_bytes(), cfg.layout(), path=args.signature,
                          user_id=args.user)
    v = extract(bank, preprocess_pipeline(sig, cfg.preprocess()), cfg["pool_rows"], cfg["pool_cols"])
    d = verify(model, v)
    print(f"{'ACCEPT' if d.accepted else 'REJECT'} distance={d.distance:.6f} threshold={d.threshold:.6f}")
    return EXIT_OK if d.accepted else EXIT_REJECT


def _parse_grid(text: str):
    try:
        hs, its = text.split(":")
        hidden = [int(x) for x in hs.split(",") if x]
        iters = [int(x) for x in its.split(",") if x]
    except ValueError:
        raise ConfigError(f"--grid: expected HIDDEN,...:ITERS,... got {text!r}") from None
    if not hidden or not iters or min(hidden + iters) < 1:
        raise ConfigError("--grid: sizes and iteration counts must be positive and non-empty")
    return hidden, iters


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    _need_dir(args.dataset, "--dataset")
    grid = _parse_grid(args.grid) if args.grid else None
    if grid:
        if not args.corpus:
            raise ConfigError("--grid needs --corpus to retrain features")
        _need_dir(args.corpus, "--corpus")
    else:
        if not args.bank:
            raise ConfigError("--bank is required without --grid")
        _need_file(args.bank, "--bank")

    ds = load_dataset(args.dataset, cfg.layout())
    images = dataset_images(ds, cfg.preprocess())
    snapshot = cfg.as_dict()
    if grid:
        patches, _ = corpus_patches(args.corpus, cfg)
        table = hyperparameter_grid(ds, patches, grid[0], grid[1], cfg.hyper(), cfg.whitening(),
                                    cfg.protocol(), cfg.preprocess(), images,
                                    cfg["lbfgs_history"], snapshot)
        out = {"schema_version": REPORT_SCHEMA_VERSION, "grid": table["cells"], "config": snapshot}
        text = json.dumps(out, indent=2, sort_keys=True) + "\n"
        for c in table["cells"]:
            print(f"hidden={c['hidden']} iters={c['iterations']} "
                  f"mean_eer={c['mean_eer']:.6f} mean_auc={c['mean_auc']:.6f}")
    else:
        bank, _ = _load_bank(args.bank)
        _check_bank_geometry(bank, cfg, args.bank)
        snapshot["bank_sha256"] = _digest(args.bank)
        report = run_protocol(ds, bank, cfg.protocol(), cfg.preprocess(), images, snapshot)
        text = report.to_json(emit_roc=args.emit_roc)
        print(f"users={len(report.per_user)} protocol={cfg['forgery_kind']} "
              f"mean_eer={report.mean_eer:.6f} mean_auc={report.mean_auc:.6f} "
              f"pooled_eer={report.pooled_eer:.6f}")
    _write(args.report, text.encode())
    return EXIT_OK


def cmd_make_testkit(args) -> int:
    if min(args.users, args.genuine) < 1 or args.forgeries < 0 or not 0 <= args.jitter <= 1:
        raise ConfigError("make-testkit: counts must be positive and jitter in [0, 1]")
    if args.corpus:
        layout = write_corpus(args.out, args.users, args.genuine, args.jitter, args.seed)
    else:
        layout = write_testkit(args.out, args.users, args.genuine, args.forgeries, args.jitter,
                               args.seed)
    keys = (f"genuine_per_user={layout.genuine_per_user}\n"
            f"forgery_per_user={max(layout.forgery_per_user, 0)}\n")
    if args.config_out:
        _write(args.config_out, keys.encode())
    print(f"wrote {args.users} users to {args.out}")
    sys.stdout.write(keys)
    return EXIT_OK


COMMANDS = {
    "learn-features": cmd_learn_features,
    "enroll": cmd_enroll,
    "verify": cmd_verify,
    "evaluate": cmd_evaluate,
    "make-testkit": cmd_make_testkit,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SigVerifyError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
