"""Command-line interface.

Subcommands: defaults, build-prior, gradcheck, train, eval, oracle, refine.
Every run derives all randomness from one root seed, writes its resolved
configuration next to its outputs, and renders figures alongside the CSV
artifacts. Errors exit nonzero with a single line `error[<Class>]: message`.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .bundle import load_checkpoint, save_checkpoint
from .config import RunConfig, default_config_text, load_config, resolved_config_text
from .energy import sgld_refine_trace
from .figures import (
    plot_energy_trace,
    plot_mode_comparison,
    plot_per_class_ap,
    plot_rare_class_delta,
    plot_training_curves,
)
from .gradcheck import GRADCHECK_BLOCKS, run_gradcheck
from .graphhead import SceneGraph, build_edges
from .prior import build_prior, load_annotations, save_prior
from .scenes import (
    Benchmark,
    EvalReport,
    evaluate,
    make_benchmark,
    rare_class_report,
    run_inference,
)
from .tensorcore import Rng, derive_seed, save_matrix_csv
from .training import train

__all__ = ["main"]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_lines(path, rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _ensure_out(out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "mode", None) is not None:
        cfg.mode = args.mode
        cfg.__post_init__()
    return cfg


def _write_resolved(cfg: RunConfig, out_dir: str) -> None:
    with open(os.path.join(out_dir, "resolved_config.txt"), "w", encoding="utf-8") as fh:
        fh.write(resolved_config_text(cfg))


def _benchmark(cfg: RunConfig) -> Benchmark:
    return make_benchmark(cfg.scene, cfg.train_scenes, cfg.test_scenes, cfg.seed,
                          cfg.smoothing_eps)


def _eval_mode(cfg: RunConfig, bench: Benchmark, mode: str, mp, theta, clf) -> EvalReport:
    preds = []
    for i, scene in enumerate(bench.test_scenes):
        rng = Rng(derive_seed(cfg.seed, "eval", mode, i))
        probs, _boxes = run_inference(scene, mode, mp, theta, clf, bench.prior,
                                      cfg.sgld, iou_thresh=cfg.iou_thresh, rng=rng)
        preds.append(probs)
    return evaluate(preds, bench.test_scenes, cfg.scene.num_classes, cfg.iou_thresh)


def _write_eval_report(path, report: EvalReport) -> None:
    rows: list[list] = [["metric", "class", "value"]]
    for c, ap in enumerate(report.per_class_ap):
        rows.append(["ap", c, float(ap)])
    for c, freq in enumerate(report.per_class_frequency):
        rows.append(["frequency", c, float(freq)])
    rows.append(["map", "", report.map])
    rows.append(["accuracy", "", report.accuracy])
    _write_lines(path, rows)


def _write_metrics(path, metrics) -> None:
    rows: list[list] = [["epoch", "term1", "term2", "term3", "term4", "term5",
                         "total_loss", "train_accuracy"]]
    for row in metrics:
        rows.append([row.epoch, *[float(t) for t in row.terms],
                     row.total_loss, row.train_accuracy])
    _write_lines(path, rows)


def cmd_defaults(args) -> int:
    text = default_config_text()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_build_prior(args) -> int:
    ann = load_annotations(args.annotations)
    if args.num_classes is not None:
        num_classes = args.num_classes
    elif ann.categories:
        num_classes = max(cid for cid, _name in ann.categories) + 1
    else:
        raise ValueError("annotations declare no categories; pass --num-classes")
    if not ann.images:
        print("warning: annotations contain no images; prior is all zeros")
    prior = build_prior(ann, num_classes, args.smoothing_eps)
    save_prior(prior, args.out)
    zero_frac = float(np.mean(prior.values == 0.0))
    print(f"classes {num_classes}, images {len(ann.images)}, "
          f"zero-entry fraction {zero_frac:.4f}")
    print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(seeds=args.seeds, base_seed=args.seed, perturb=args.perturb)
    for block in report.blocks:
        status = "PASS" if block.passed else "FAIL"
        print(f"{block.name:<14} max_rel_err {block.max_rel_err:.3e}  {status}")
    print(f"gradcheck over {report.seeds} seeds: "
          f"{'all blocks pass' if report.all_passed else 'FAILURES PRESENT'}")
    return 0 if report.all_passed else 1


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _ensure_out(args.out)
    bench = _benchmark(cfg)
    train_mode = "gp" if cfg.mode == "oracle" else cfg.mode
    result = train(bench.train_scenes, cfg.train_config(), bench.prior,
                   cfg.model_spec(), mode=train_mode, iou_thresh=cfg.iou_thresh)
    _write_metrics(os.path.join(out, "metrics.csv"), result.metrics)
    save_checkpoint(os.path.join(out, "checkpoint.bundle"),
                    result.mp, result.theta, result.clf)
    _write_resolved(cfg, out)
    if result.metrics:
        plot_training_curves(result.metrics, os.path.join(out, "training_curves.png"))
        last = result.metrics[-1]
        print(f"trained mode={train_mode} epochs={len(result.metrics)} "
              f"final_loss={last.total_loss:.6f} final_train_accuracy={last.train_accuracy:.4f}")
    else:
        print(f"trained mode={train_mode} epochs=0 (initialized parameters only)")
    print(f"wrote {out}/metrics.csv, {out}/checkpoint.bundle")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    out = _ensure_out(args.out)
    bench = _benchmark(cfg)
    mp, theta, clf = load_checkpoint(args.checkpoint)
    report = _eval_mode(cfg, bench, cfg.mode, mp, theta, clf)
    _write_eval_report(os.path.join(out, "eval_report.csv"), report)
    plot_per_class_ap(report, os.path.join(out, "per_class_ap.png"),
                      rare_classes=bench.world.rare_classes)
    _write_resolved(cfg, out)
    print(f"mode={cfg.mode} mAP={report.map:.6f} accuracy={report.accuracy:.6f}")
    if cfg.mode != "baseline":
        base = _eval_mode(cfg, bench, "baseline", mp, theta, clf)
        rare = rare_class_report(base, report)
        rows: list[list] = [["class", "frequency", "delta_ap"]]
        for r in rare.rows:
            rows.append([r.class_id, r.frequency, r.delta_ap])
        rows.append(["spearman", rare.spearman, str(rare.spearman_defined).lower()])
        _write_lines(os.path.join(out, "rare_class_report.csv"), rows)
        plot_rare_class_delta(rare, os.path.join(out, "rare_class_delta.png"))
        corr = f"{rare.spearman:.4f}" if rare.spearman_defined else "undefined"
        print(f"baseline mAP={base.map:.6f}; frequency/AP-change Spearman {corr}")
    print(f"wrote {out}/eval_report.csv")
    return 0


def cmd_oracle(args) -> int:
    cfg = _resolve_config(args)
    out = _ensure_out(args.out)
    bench = _benchmark(cfg)
    result = train(bench.train_scenes, cfg.train_config(), bench.prior,
                   cfg.model_spec(), mode="gp", iou_thresh=cfg.iou_thresh)
    save_checkpoint(os.path.join(out, "checkpoint.bundle"),
                    result.mp, result.theta, result.clf)
    base = _eval_mode(cfg, bench, "baseline", result.mp, result.theta, result.clf)
    oracle = _eval_mode(cfg, bench, "oracle", result.mp, result.theta, result.clf)
    _write_eval_report(os.path.join(out, "eval_report_baseline.csv"), base)
    _write_eval_report(os.path.join(out, "eval_report_oracle.csv"), oracle)
    plot_mode_comparison({"baseline": base, "oracle": oracle},
                         os.path.join(out, "mode_comparison.png"))
    _write_resolved(cfg, out)
    rel = (oracle.map - base.map) / base.map if base.map > 0 else float("inf")
    print(f"baseline mAP {base.map:.6f}")
    print(f"oracle mAP {oracle.map:.6f}")
    print(f"relative improvement {100.0 * rel:.2f}%")
    return 0


def cmd_refine(args) -> int:
    cfg = _resolve_config(args)
    out = _ensure_out(args.out)
    bench = _benchmark(cfg)
    mp, theta, clf = load_checkpoint(args.checkpoint)
    del mp, clf  # refinement diagnoses the energy model alone
    if not 0 <= args.scene_id < len(bench.test_scenes):
        raise ValueError(
            f"scene id {args.scene_id} out of range [0, {len(bench.test_scenes)})")
    scene = bench.test_scenes[args.scene_id]
    g = SceneGraph(nodes=scene.features.copy(),
                   edges=build_edges(scene.base_probs, bench.prior))
    rng = Rng(derive_seed(cfg.seed, "refine", args.scene_id))
    graphs, energies = sgld_refine_trace(g, theta, cfg.sgld, rng)
    rows: list[list] = [["step", "energy"]]
    for step, value in enumerate(energies):
        rows.append([step, value])
    _write_lines(os.path.join(out, "energy_trace.csv"), rows)
    for step, graph in enumerate(graphs):
        save_matrix_csv(os.path.join(out, f"edges_step_{step:03d}.csv"), graph.edges)
    plot_energy_trace(energies, os.path.join(out, "energy_trace.png"))
    _write_resolved(cfg, out)
    print(f"scene {args.scene_id}: energy {energies[0]:.6f} -> {energies[-1]:.6f} "
          f"over {len(energies) - 1} steps")
    print(f"wrote {out}/energy_trace.csv and {len(graphs)} edge snapshots")
    return 0


def _add_common(sub, config=True, seed=True, mode=False, out=True, checkpoint=False):
    if config:
        sub.add_argument("--config", help="INI config file (defaults apply when omitted)")
    if seed:
        sub.add_argument("--seed", type=int, help="override run.seed")
    if mode:
        sub.add_argument("--mode", choices=["baseline", "gp", "gpr", "oracle"],
                         help="override run.mode")
    if out:
        sub.add_argument("--out", required=True, help="output directory")
    if checkpoint:
        sub.add_argument("--checkpoint", required=True, help="checkpoint bundle path")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="graphprior",
        description="Co-occurrence graph priors with energy-based refinement "
                    "for detection post-processing, on synthetic scenes.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("defaults", help="print the reference configuration")
    d.add_argument("--out", help="write to a file instead of stdout")
    d.set_defaults(fn=cmd_defaults)

    bp = sub.add_parser("build-prior", help="co-occurrence prior from annotation JSON")
    bp.add_argument("--annotations", required=True, help="annotation JSON path")
    bp.add_argument("--out", required=True, help="output CSV path")
    bp.add_argument("--num-classes", type=int, help="class count (default: from categories)")
    bp.add_argument("--smoothing-eps", type=float, default=0.0,
                    help="floor for all prior entries")
    bp.set_defaults(fn=cmd_build_prior)

    gc = sub.add_parser("gradcheck", help="verify analytic gradients by finite differences")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--seeds", type=int, default=20, help="number of random problems")
    gc.add_argument("--perturb", choices=list(GRADCHECK_BLOCKS),
                    help="corrupt one block's gradient (negative control)")
    gc.set_defaults(fn=cmd_gradcheck)

    tr = sub.add_parser("train", help="train on the synthetic benchmark")
    _add_common(tr, mode=True)
    tr.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(ev, mode=True, checkpoint=True)
    ev.set_defaults(fn=cmd_eval)

    orc = sub.add_parser("oracle", help="ground-truth-edge experiment vs baseline")
    _add_common(orc)
    orc.set_defaults(fn=cmd_oracle)

    rf = sub.add_parser("refine", help="dump one scene's refinement chain")
    _add_common(rf, checkpoint=True)
    rf.add_argument("--scene-id", type=int, default=0, help="test-scene index")
    rf.set_defaults(fn=cmd_refine)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # single-line, machine-parsable failure contract
        print(f"error[{type(e).__name__}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
