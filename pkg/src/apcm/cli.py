"""Command-line experiment harness.

Exit codes: 0 success, 1 usage/config error, 2 runtime/data error,
3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import ConfigError, RunConfig, apply_override, config_from_dict, load_config
from .data import (
    DataFormatError,
    Dataset,
    ManifoldSpec,
    clip_unit,
    gen_manifold,
    load_any,
    pad_even,
    save_csv_matrix,
    save_pgm,
    split,
    strip_pad,
)
from .diffcore import ContractError
from .idrp import IdrpModel, TrainingDivergedError, noise_analysis, train, write_noise_csv
from .membank import EmptyMemoryError, MemoryBank
from .metrics import eval_metrics, summarize, write_reports
from .pca import pca_fit
from .verify import check_checkpoint_invertibility, params_identical, run_builtin_checks, CheckResult

log = logging.getLogger("apcm")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


# config / data helpers --------------------------------------------------------------


def resolve_config(args) -> RunConfig:
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
    for item in getattr(args, "set", None) or []:
        apply_override(raw, item)
    if getattr(args, "seed", None) is not None:
        raw.setdefault("train", {})["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        raw["out"] = args.out
    return config_from_dict(raw)


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data.path:
        return load_any(cfg.data.path, header=cfg.data.header)
    return gen_manifold(cfg.data.generator)


def train_test(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    ds = load_dataset(cfg)
    if ds.n < 2:
        raise DataFormatError("need at least two samples to split into train and test")
    return split(ds, cfg.data.train_fraction, cfg.data.split_seed)


def out_dir(cfg: RunConfig, override: str | None = None) -> Path:
    path = Path(override or cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_model(cfg: RunConfig, d_padded: int) -> IdrpModel:
    if cfg.model.d is not None and cfg.model.d != d_padded:
        raise ConfigError(f"model.d = {cfg.model.d} but the (padded) data has d = {d_padded}")
    return IdrpModel(d_padded, cfg.model, seed=cfg.train.seed)


def fit_idrp(cfg: RunConfig, train_set: Dataset):
    x, original_d = pad_even(train_set.values)
    model = build_model(cfg, x.shape[1])
    hist = train(model, x, cfg.train)
    return model, hist, original_d


def write_history(hist, out: Path) -> None:
    hist.to_csv(out / "history.csv")
    rows = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(r).items()} for r in hist.records]
    (out / "history.json").write_text(json.dumps(rows, indent=1) + "\n")


class Codec:
    """Uniform compress/reconstruct over IDRP and PCA checkpoints, with padding."""

    def __init__(self, doc: dict):
        self.kind = doc["kind"]
        self.original_d = doc["model"]["original_d"]
        if self.kind == "idrp":
            self.model = ckpt.idrp_from_doc(doc)
        elif self.kind == "pca":
            self.model = ckpt.pca_from_doc(doc)
        else:
            raise UsageError(f"a {self.kind!r} checkpoint cannot be evaluated")
        self.d = self.model.d

    def prepare(self, values: np.ndarray) -> np.ndarray:
        x = pad_even(values)[0] if self.kind == "idrp" else values
        if x.shape[1] != self.d:
            raise DataFormatError(f"data has {values.shape[1]} features, checkpoint expects {self.original_d}")
        return x

    def roundtrip(self, values: np.ndarray, oracle: bool = False) -> np.ndarray:
        x = self.prepare(values)
        if self.kind == "idrp":
            zc, za = self.model.encode(x)
            x_hat = self.model.reconstruct(zc, za if oracle else None)
        else:
            if oracle:
                raise UsageError("--oracle applies to idrp checkpoints only")
            x_hat = self.model.reconstruct(self.model.compress(x))
        return strip_pad(x_hat, self.original_d)


def eval_rows(codec: Codec, values: np.ndarray, oracle: bool = False):
    x_hat = codec.roundtrip(values, oracle)
    return [(i, eval_metrics(values[i], x_hat[i])) for i in range(len(values))], x_hat


def print_listing(rows, label: str = "Image") -> None:
    for sid, *_, rep in rows:
        print(rep.listing(f"{label} {sid + 1}"))


def eval_data(args, doc: dict) -> np.ndarray:
    if args.data:
        return load_any(args.data, header=args.header).values
    cfg = ckpt.doc_config(doc)
    if cfg is None:
        raise UsageError("checkpoint carries no config; pass --data")
    return train_test(cfg)[1].values


def _save_images(out: Path, tag: str, sample_id: int, values: np.ndarray, shape) -> None:
    save_pgm(clip_unit(values), out / f"{tag}_{sample_id:04d}.pgm", shape=shape)


# commands --------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(cfg)
    train_set, _ = train_test(cfg)
    model, hist, original_d = fit_idrp(cfg, train_set)
    ckpt.save(ckpt.idrp_to_doc(model, cfg, original_d), out / "checkpoint.json")
    write_history(hist, out)
    last = hist.records[-1] if hist.records else None
    print(f"wrote {out / 'checkpoint.json'} ({len(hist)} history rows)")
    if last is not None:
        print(f"final epoch {last.epoch}: total {last.total_loss:.6g}, recon_mse {last.recon_mse:.6g}, aux_mse {last.aux_mse:.6g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    doc = ckpt.load(args.checkpoint)
    codec = Codec(doc)
    values = eval_data(args, doc)
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    rows, _ = eval_rows(codec, values, args.oracle)
    write_reports(rows, out / "eval.csv", out / "eval.json")
    s = summarize([r for _, r in rows])
    (out / "eval_summary.json").write_text(
        json.dumps({"n": len(rows), "mse": s.mse, "mae": s.mae, "psnr_db": "inf" if math.isinf(s.psnr_db) else s.psnr_db}, indent=1) + "\n"
    )
    print_listing(rows[: args.show])
    print(s.listing(f"Mean over {len(rows)}"))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(cfg)
    ds = load_dataset(cfg)
    train_set, test_set = split(ds, cfg.data.train_fraction, cfg.data.split_seed)
    model, hist, original_d = fit_idrp(cfg, train_set)
    idrp_doc = ckpt.idrp_to_doc(model, cfg, original_d)
    pca_doc = ckpt.pca_to_doc(pca_fit(train_set.values, cfg.model.m), cfg, original_d, cfg.train.seed)
    ckpt.save(idrp_doc, out / "idrp_checkpoint.json")
    ckpt.save(pca_doc, out / "pca_checkpoint.json")
    write_history(hist, out)

    x = test_set.values
    idrp_rows, idrp_hat = eval_rows(Codec(idrp_doc), x)
    pca_rows, pca_hat = eval_rows(Codec(pca_doc), x)
    table = []
    for (sid, a), (_, b) in zip(idrp_rows, pca_rows):
        table += [(sid, "idrp", a), (sid, "pca", b)]
    write_reports(table, out / "compare.csv", out / "compare.json", extra_cols=("method",))

    shape = test_set.original_shape if len(test_set.original_shape) == 2 else (1, test_set.d)
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    for i in range(min(args.images, len(x))):
        _save_images(img_dir, "original", i, x[i], shape)
        _save_images(img_dir, "idrp", i, idrp_hat[i], shape)
        _save_images(img_dir, "pca", i, pca_hat[i], shape)

    si = summarize([r for _, r in idrp_rows])
    sp = summarize([r for _, r in pca_rows])
    summary = {"idrp": asdict(si), "pca": asdict(sp), "mse_ratio": si.mse / sp.mse if sp.mse > 0 else None, "n_test": len(x)}
    for v in (summary["idrp"], summary["pca"]):
        if math.isinf(v["psnr_db"]):
            v["psnr_db"] = "inf"
    (out / "compare_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print("IDRP:")
    print_listing(idrp_rows[: args.images])
    print("PCA:")
    print_listing(pca_rows[: args.images])
    print(si.listing("IDRP mean"))
    print(sp.listing("PCA  mean"))
    if summary["mse_ratio"] is not None:
        print(f"MSE ratio IDRP/PCA = {summary['mse_ratio']:.4f}")
    return EXIT_OK


def parse_bank_script(text: str):
    steps = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("write", "read"):
            raise UsageError(f"bank script line {lineno}: expected 'write <a>[-<b>]' or 'read <row>', got {line!r}")
        op, arg = parts
        try:
            if op == "write":
                a, _, b = arg.partition("-")
                lo, hi = int(a), int(b or a)
                if hi < lo:
                    raise ValueError
                steps.append((op, list(range(lo, hi + 1))))
            else:
                steps.append((op, [int(arg)]))
        except ValueError:
            raise UsageError(f"bank script line {lineno}: bad row spec {arg!r}") from None
    return steps


def cmd_bank(args) -> int:
    doc = ckpt.load(args.checkpoint)
    if doc["kind"] != "idrp":
        raise UsageError("bank replay needs an idrp checkpoint")
    codec = Codec(doc)
    model = codec.model
    cfg = ckpt.doc_config(doc)
    if args.data:
        values = load_any(args.data, header=args.header).values
    elif cfg is not None:
        values = load_dataset(cfg).values
    else:
        raise UsageError("checkpoint carries no config; pass --data")
    steps = parse_bank_script(Path(args.script).read_text())
    max_mem = args.max_mem or (cfg.bank.max_mem if cfg else 64)
    bank = ckpt.bank_from_doc(ckpt.load(args.bank)) if args.bank else MemoryBank(max_mem, model.m)
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)

    trace = []
    for step, (op, rows) in enumerate(steps):
        if rows[-1] >= len(values) or rows[0] < 0:
            raise DataFormatError(f"step {step}: row {rows[-1]} outside data with {len(values)} rows")
        x = codec.prepare(values[rows])
        if op == "write":
            slot = bank.write(model, x)
            rec = {"step": step, "op": "write", "rows": f"{rows[0]}-{rows[-1]}", "slot": slot, "similarity": None,
                   "psnr_db": None, "mae": None, "mse": None}
            print(f"write rows {rows[0]}-{rows[-1]} -> slot {slot}; aff = {bank.aff.tolist()}")
        else:
            res = bank.read(model, x[0])
            rep = eval_metrics(values[rows[0]], strip_pad(res.x_mem, codec.original_d))
            rec = {"step": step, "op": "read", "rows": str(rows[0]), "slot": res.slot, "similarity": res.similarity,
                   "psnr_db": "inf" if math.isinf(rep.psnr_db) else rep.psnr_db, "mae": rep.mae, "mse": rep.mse}
            print(f"read row {rows[0]} -> slot {res.slot}, sim = {res.similarity:.6f}; {rep.listing('recon')}; aff = {bank.aff.tolist()}")
        rec["aff"] = bank.aff.tolist()
        trace.append(rec)

    ckpt.save(ckpt.bank_to_doc(bank, cfg, doc["rng"]["seed"]), out / "bank.json")
    (out / "bank_trace.json").write_text(json.dumps(trace, indent=1) + "\n")
    with open(out / "bank_trace.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "op", "rows", "slot", "similarity", "psnr_db", "mae", "mse", "aff"])
        for r in trace:
            w.writerow([r["step"], r["op"], r["rows"], r["slot"], "" if r["similarity"] is None else repr(r["similarity"]),
                        "" if r["psnr_db"] is None else r["psnr_db"], "" if r["mae"] is None else repr(r["mae"]),
                        "" if r["mse"] is None else repr(r["mse"]), " ".join(map(str, r["aff"]))])
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_builtin_checks()
    if args.checkpoint:
        doc = ckpt.load(args.checkpoint)
        if doc["kind"] != "idrp":
            raise UsageError("verify --checkpoint needs an idrp checkpoint")
        cfg = ckpt.doc_config(doc)
        model = ckpt.idrp_from_doc(doc)
        if cfg is not None:
            train_set, test_set = train_test(cfg)
            x = pad_even(np.concatenate([train_set.values, test_set.values]))[0]
        else:
            x = np.random.default_rng(0).uniform(0, 1, (100, model.d))
        results.append(check_checkpoint_invertibility(model, x))
        if cfg is None:
            results.append(CheckResult("checkpoint determinism", False, "checkpoint carries no config to replay"))
        else:
            replay, _, _ = fit_idrp(cfg, train_set)
            ok, detail = params_identical(model.params(), replay.params())
            perms_ok = all(np.array_equal(a.perm, b.perm) for a, b in zip(model.encoder.perms, replay.encoder.perms))
            results.append(CheckResult("checkpoint determinism (replayed training)", ok and perms_ok,
                                       detail if perms_ok else "permutations differ"))
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_noise(args) -> int:
    if args.sweep:
        return _noise_sweep(args)
    if not args.checkpoint:
        raise UsageError("noise needs --checkpoint (or --sweep with --config)")
    doc = ckpt.load(args.checkpoint)
    codec = Codec(doc)
    if codec.kind != "idrp":
        raise UsageError("noise analysis needs an idrp checkpoint")
    values = eval_data(args, doc)
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    records, summary = noise_analysis(codec.model, codec.prepare(values), oracle=args.oracle)
    write_noise_csv(records, out / "noise.csv")
    rows = [{**asdict(r), "psnr_db": "inf" if math.isinf(r.psnr_db) else r.psnr_db} for r in records]
    (out / "noise.json").write_text(json.dumps({"records": rows, "summary": summary}, indent=1) + "\n")
    if args.ood_shift is not None:
        cfg = ckpt.doc_config(doc)
        if cfg is None or cfg.data.path:
            raise UsageError("--ood-shift needs a checkpoint trained on generated data")
        ood = gen_manifold(replace(cfg.data.generator, u_shift=args.ood_shift, seed=cfg.data.generator.seed, n=len(values)))
        _, ood_summary = noise_analysis(codec.model, codec.prepare(ood.values))
        summary["ood_shift"] = args.ood_shift
        summary["ood_recon_err_mean"] = ood_summary["recon_err_mean"]
        summary["ood_aux_err_mean"] = ood_summary["aux_err_mean"]
        (out / "noise.json").write_text(json.dumps({"records": rows, "summary": summary}, indent=1) + "\n")
    for k, v in summary.items():
        print(f"{k}: {v:.6g}")
    return EXIT_OK


def _noise_sweep(args) -> int:
    cfg = resolve_config(args)
    out = out_dir(cfg)
    train_set, test_set = train_test(cfg)
    rows = []
    for depth in args.depths:
        c = replace(cfg, model=replace(cfg.model, n_layers=depth))
        model, hist, original_d = fit_idrp(c, train_set)
        x_test = pad_even(test_set.values)[0]
        _, summary = noise_analysis(model, x_test)
        final = hist.records[-1].recon_mse if hist.records else float("nan")
        rows.append({"depth": depth, "final_train_recon_mse": final,
                     "test_recon_mse": summary["recon_err_mean"] / model.d,
                     "test_aux_err_mean": summary["aux_err_mean"]})
        print(f"N = {depth}: final train recon_mse {final:.6g}, test recon_mse {rows[-1]['test_recon_mse']:.6g}")
    with open(out / "depth_sweep.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    (out / "depth_sweep.json").write_text(
        json.dumps([{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()} for r in rows], indent=1) + "\n"
    )
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    spec = cfg.data.generator
    overrides = {k: v for k, v in (("kind", args.kind), ("n", args.n), ("d", args.d), ("k", args.k)) if v is not None}
    spec = replace(spec, **overrides)
    if spec.kind == "sinusoidal" and not 1 <= spec.k < spec.d:
        raise ConfigError("need 1 <= k < d")
    ds = gen_manifold(spec)
    out = out_dir(cfg)
    save_csv_matrix(ds.values, out / "data.csv")
    (out / "data_spec.json").write_text(json.dumps(asdict(spec), indent=1) + "\n")
    if spec.kind == "blobs" and args.pgm:
        img_dir = out / "pgm"
        img_dir.mkdir(exist_ok=True)
        for i, row in enumerate(ds.values):
            save_pgm(row, img_dir / f"sample_{i:05d}.pgm", shape=ds.original_shape)
    print(f"wrote {ds.n} x {ds.d} samples to {out / 'data.csv'}")
    return EXIT_OK


# parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON run config")
    shared.add_argument("--seed", type=int, help="overrides train.seed")
    shared.add_argument("--out", help="output directory (overrides config 'out')")
    shared.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value, e.g. train.epochs=10")
    shared.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="apcm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", parents=[shared], help="train an IDRP model and write a checkpoint")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", parents=[shared], help="per-sample PSNR/MAE/MSE of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", help="CSV, PGM or directory of PGMs (default: test split from the checkpoint config)")
    sp.add_argument("--header", action="store_true", help="skip one header line in CSV data")
    sp.add_argument("--oracle", action="store_true", help="use the true auxiliary latent instead of the predictor")
    sp.add_argument("--show", type=int, default=4, help="number of per-sample lines to print")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", parents=[shared], help="IDRP vs PCA at equal m on the same split")
    sp.add_argument("--images", type=int, default=4, help="number of test samples to write as PGM")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("bank", parents=[shared], help="replay a memory-bank script")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--script", required=True)
    sp.add_argument("--data", help="rows referenced by the script (default: dataset from the checkpoint config)")
    sp.add_argument("--header", action="store_true")
    sp.add_argument("--bank", help="resume from a saved bank snapshot")
    sp.add_argument("--max-mem", type=int)
    sp.set_defaults(func=cmd_bank)

    sp = sub.add_parser("verify", parents=[shared], help="run the built-in verification suite")
    sp.add_argument("--checkpoint", help="also check invertibility and training determinism of this checkpoint")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("noise", parents=[shared], help="reconstruction-noise analysis or depth sweep")
    sp.add_argument("--checkpoint")
    sp.add_argument("--data")
    sp.add_argument("--header", action="store_true")
    sp.add_argument("--oracle", action="store_true")
    sp.add_argument("--ood-shift", type=float, help="also report errors on generated data with latent shifted by this amount")
    sp.add_argument("--sweep", action="store_true", help="retrain at several flow depths and report recon error per depth")
    sp.add_argument("--depths", type=int, nargs="+", default=[2, 4, 6, 8])
    sp.set_defaults(func=cmd_noise)

    sp = sub.add_parser("gen-data", parents=[shared], help="write a generated dataset as CSV")
    sp.add_argument("--kind", choices=["sinusoidal", "blobs"])
    sp.add_argument("--n", type=int)
    sp.add_argument("--d", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--pgm", action="store_true", help="also write blobs samples as PGM images")
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, EmptyMemoryError, TrainingDivergedError, ckpt.CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
