"""Command-line entry point: gen | train | infer | ensemble | ssd | verify.

Exit codes: 0 success, 1 usage error, 2 assertion or verification failure,
3 I/O error. A `--config FILE` of `key = value` lines (# comments) supplies
defaults; explicit flags win. `MOTIONFORGE_THREADS` caps worker threads.
Commands that write into an output directory hold a `run.lock` file there
for the duration of the run.
"""

import argparse
import contextlib
import csv
import math
import os
import sys

import numpy as np

from . import ensemble as aes
from . import ssd as ssd_lab
from . import verify as verify_mod
from .data import gen_dataset, read_dataset, write_dataset
from .flowio import write_flo, write_png
from .metrics import PSNR_SENTINEL_DB, flow_epe, psnr, ssim
from .model import DenoiserModel, LossConfig, PerceptualProxy
from .pipeline import n_conditions, predict_flow, rectify
from .schedule import build_schedule
from .training import (
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
    train,
)

USAGE_ERROR, ASSERT_ERROR, IO_ERROR = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _threads():
    try:
        return max(1, int(os.environ.get("MOTIONFORGE_THREADS", "1")))
    except ValueError:
        return 1


def load_config(path):
    """Parse `key = value` lines; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = val
    return values


@contextlib.contextmanager
def output_lock(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    lock_path = os.path.join(out_dir, "run.lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OSError(f"output directory is locked by another run: {lock_path}")
    try:
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(lock_path)


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _psnr_csv(value):
    return PSNR_SENTINEL_DB if math.isinf(value) else value


def build_parser():
    parser = _Parser(prog="motionforge",
                     description="image-to-motion estimation lab")
    parser.add_argument("--config", help="key = value defaults file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=["sir", "rsc"], default="sir")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--magnitude", type=float, default=8.0)
    p.add_argument("--noise-scale", type=float, default=0.0)
    p.add_argument("--kind", default="auto",
                   choices=["auto", "checker", "lines", "smooth-noise", "shapes"])

    p = sub.add_parser("train", help="train a denoiser on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--w-diff", type=float, default=1.0)
    p.add_argument("--w-cond", type=float, default=1.0)
    p.add_argument("--w-pct", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=64.0)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--proxy-seed", type=int, default=0)
    p.add_argument("--resume", help="checkpoint directory to continue from")

    p = sub.add_parser("infer", help="predict flows and rectified images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ensemble", help="fuse K seeded one-step inferences")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--border", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ssd", help="sweep sampling step counts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps-list", default="1,4,16")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--assert-trend", type=float, default=None, metavar="MARGIN",
                   help="fail unless PSNR(first) >= PSNR(last) + MARGIN")
    p.add_argument("--assert-flat", type=float, default=None, metavar="TOL",
                   help="fail unless |PSNR(first) - PSNR(last)| < TOL")

    sub.add_parser("verify", help="run the built-in oracle suite")
    return parser


def cmd_gen(args):
    records = gen_dataset(args.task, args.count, args.seed, args.height,
                          args.width, args.magnitude, args.noise_scale,
                          kind=args.kind)
    with output_lock(args.out):
        write_dataset(records, args.out)
    print(f"wrote {len(records)} {args.task} samples to {args.out}")
    return 0


def _load_model(ckpt_dir):
    model, velocity, step, meta = load_checkpoint(ckpt_dir)
    gamma = float(meta["gamma"])
    sched = build_schedule(int(meta["T"]), float(meta["beta_start"]),
                           float(meta["beta_end"]))
    return model, velocity, step, meta, gamma, sched


def cmd_train(args):
    records = read_dataset(args.dataset)
    task = records[0].task
    if args.resume:
        model, velocity, start_step, meta, gamma, sched = _load_model(args.resume)
        if meta["task"] != task:
            raise UsageError(f"checkpoint task {meta['task']} != dataset {task}")
        beta_start, beta_end = float(meta["beta_start"]), float(meta["beta_end"])
    else:
        sched = build_schedule(args.T, args.beta_start, args.beta_end)
        model = DenoiserModel.create(n_conditions(task), 12, args.hidden,
                                     sched, seed=args.seed)
        velocity, start_step, gamma = None, 0, args.gamma
        beta_start, beta_end = args.beta_start, args.beta_end
    loss_cfg = LossConfig(args.w_diff, args.w_cond, args.w_pct)
    proxy = PerceptualProxy(seed=args.proxy_seed) if args.w_pct > 0 else None
    tcfg = TrainConfig(steps=args.steps, batch_size=args.batch, lr=args.lr,
                       momentum=args.momentum, gamma=gamma, seed=args.seed)
    with output_lock(args.out):
        log_path = os.path.join(args.out, "train_log.csv")
        with open(log_path, "w") as log:
            log.write("step,loss_total,loss_diff,loss_cond,loss_pct\n")

            def on_step(row, *_):
                log.write(f"{row['step']},{_fmt(row['total'])},{_fmt(row['diff'])},"
                          f"{_fmt(row['cond'])},{_fmt(row['pct'])}\n")

            history, velocity = train(model, records, sched, loss_cfg, tcfg,
                                      proxy=proxy, threads=_threads(),
                                      velocity=velocity, start_step=start_step,
                                      on_step=on_step)
        ckpt = os.path.join(args.out, "checkpoint")
        save_checkpoint(ckpt, model, velocity, start_step + args.steps,
                        gamma, task,
                        extra={"beta_start": beta_start, "beta_end": beta_end})
    final = history[-1]["total"] if history else float("nan")
    print(f"trained {args.steps} steps; final loss {final:.6f}; "
          f"checkpoint at {ckpt}")
    return 0


def cmd_infer(args):
    model, _, _, meta, gamma, sched = _load_model(args.checkpoint)
    records = read_dataset(args.dataset)
    rows = []
    with output_lock(args.out):
        for i, rec in enumerate(records):
            flow = predict_flow(model, sched, rec, args.steps,
                                [args.seed, i], gamma)
            pred = rectify(rec, flow)
            d = os.path.join(args.out, f"sample_{i:05d}")
            os.makedirs(d, exist_ok=True)
            write_flo(os.path.join(d, "flow_pred.flo"), flow)
            write_png(os.path.join(d, "pred.png"), np.clip(pred, 0.0, 1.0))
            rows.append([f"sample_{i:05d}",
                         _fmt(_psnr_csv(psnr(pred, rec.gt))),
                         _fmt(ssim(pred, rec.gt)),
                         _fmt(flow_epe(flow, rec.flow_gt))])
        _write_csv(os.path.join(args.out, "metrics.csv"),
                   ["sample_id", "psnr_db", "ssim", "flow_epe"], rows)
    mean_psnr = np.mean([float(r[1]) for r in rows])
    print(f"inferred {len(rows)} samples at steps={args.steps}; "
          f"mean PSNR {mean_psnr:.2f} dB")
    return 0


def cmd_ensemble(args):
    model, _, _, meta, gamma, sched = _load_model(args.checkpoint)
    records = read_dataset(args.dataset)
    if any(rec.task != "sir" for rec in records):
        raise UsageError(
            "ensembling applies to stitched-image (sir) records only: "
            "rolling-shutter samples carry no margin mask to fuse with")
    if args.k < 1:
        raise UsageError(f"--k must be >= 1, got {args.k}")
    ks = sorted({2**i for i in range(args.k.bit_length()) if 2**i <= args.k}
                | {args.k})
    per_k = {k: {"psnr": [], "ssim": []} for k in ks}
    with output_lock(args.out):
        for i, rec in enumerate(records):
            result = aes.ensemble_eval(model, sched, rec, ks, [args.seed, i],
                                       gamma, border=args.border)
            for k in ks:
                per_k[k]["psnr"].append(_psnr_csv(result[k]["psnr_db"]))
                per_k[k]["ssim"].append(result[k]["ssim"])
            d = os.path.join(args.out, f"sample_{i:05d}")
            os.makedirs(d, exist_ok=True)
            write_png(os.path.join(d, f"fused_k{max(ks)}.png"),
                      np.clip(result[max(ks)]["fused"], 0.0, 1.0))
        rows = [[k, _fmt(np.mean(per_k[k]["psnr"])), _fmt(np.mean(per_k[k]["ssim"]))]
                for k in ks]
        _write_csv(os.path.join(args.out, "ensemble.csv"),
                   ["k", "psnr_db", "ssim"], rows)
    for k, p, s in rows:
        print(f"k={k}: PSNR {float(p):.2f} dB, SSIM {float(s):.4f}")
    return 0


def cmd_ssd(args):
    model, _, _, meta, gamma, sched = _load_model(args.checkpoint)
    records = read_dataset(args.dataset)
    try:
        steps_list = [int(s) for s in args.steps_list.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --steps-list: {args.steps_list!r}")
    if not steps_list:
        raise UsageError("--steps-list is empty")
    rows = ssd_lab.steps_sweep(model, sched, records, steps_list,
                               args.seed, gamma)
    with output_lock(args.out):
        _write_csv(os.path.join(args.out, "sweep.csv"),
                   ["steps", "psnr_db", "ssim", "flow_epe", "n_samples"],
                   [[r["steps"], _fmt(_psnr_csv(r["psnr_db"])), _fmt(r["ssim"]),
                     _fmt(r["flow_epe"]), r["n_samples"]] for r in rows])
    for r in rows:
        print(f"steps={r['steps']}: PSNR {r['psnr_db']:.2f} dB, "
              f"SSIM {r['ssim']:.4f}, EPE {r['flow_epe']:.3f} px")
    first, last = rows[0]["psnr_db"], rows[-1]["psnr_db"]
    if args.assert_trend is not None and first < last + args.assert_trend:
        print(f"TREND FAIL: PSNR({rows[0]['steps']}) = {first:.3f} < "
              f"PSNR({rows[-1]['steps']}) + {args.assert_trend}")
        return ASSERT_ERROR
    if args.assert_flat is not None and abs(first - last) >= args.assert_flat:
        print(f"FLAT FAIL: |{first:.3f} - {last:.3f}| >= {args.assert_flat}")
        return ASSERT_ERROR
    return 0


def cmd_verify(_args):
    return 0 if verify_mod.run_all() else ASSERT_ERROR


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "infer": cmd_infer,
    "ensemble": cmd_ensemble,
    "ssd": cmd_ssd,
    "verify": cmd_verify,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        # first pass just to find --config; its values become defaults
        config_path = None
        for i, a in enumerate(argv):
            if a == "--config" and i + 1 < len(argv):
                config_path = argv[i + 1]
            elif a.startswith("--config="):
                config_path = a.split("=", 1)[1]
        if config_path:
            values = load_config(config_path)
            for sp in parser._subparsers._group_actions[0].choices.values():
                defaults = {}
                for action in sp._actions:
                    if action.dest in values:
                        raw = values[action.dest]
                        converted = action.type(raw) if action.type else raw
                        if action.choices and converted not in action.choices:
                            raise UsageError(
                                f"config {action.dest} = {raw!r} not in "
                                f"{sorted(action.choices)}")
                        defaults[action.dest] = converted
                sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except ValueError as exc:
        print(f"invalid parameter: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return ASSERT_ERROR
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
