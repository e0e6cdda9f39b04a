"""Command-line pipeline: train, distill, scout, bench, and parameter tables.

Every subcommand takes `--config <path>` plus optional `--seed` and `--out`
overrides, writes its delimited reports and checkpoints under the output
directory, and renders a matplotlib figure next to each report. Outputs are
reproducible: (config, seed) fully determines everything except wall-clock
timings.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from .bench import BenchConfig, run_bench
from .checkpoint import CheckpointError, load_model, save_model
from .config import ConfigError, RunConfig, load_config
from .distill import distill_train
from .metrics import energy_distance
from .mixture import ring_mixture
from .optim import TrainConfig, TrainingError
from .scout import ScoutConfig, make_scorer, scout_and_refine
from .student import StudentConfig
from .teacher import FieldConfig, freeflow_distill, integrate_ode, train_base_velocity
from . import figures

# reference full-scale configuration, for context next to toy numbers
REFERENCE_ROWS = (
    ("teacher (full scale)", 1152, 16, "675.00M"),
    ("student (full scale)", 384, 6, "4.34M"),
)


class DependencyError(FileNotFoundError):
    """An upstream checkpoint this command needs does not exist."""


def _mixture(cfg: RunConfig):
    m = cfg.mixture
    return ring_mixture(components=m.components, radius=m.radius, scale=m.scale, dim=m.dim)


def _field_config(cfg: RunConfig, condition_on_w):
    t = cfg.teacher_model
    return FieldConfig(
        data_dim=cfg.mixture.dim,
        hidden=t.hidden,
        heads=t.heads,
        mlp_ratio=t.mlp_ratio,
        depth=t.depth,
        cond_dim=t.cond_dim,
        n_classes=cfg.mixture.components,
        condition_on_w=condition_on_w,
    )


def _student_config(cfg: RunConfig):
    s = cfg.student_model
    return StudentConfig(
        data_dim=cfg.mixture.dim,
        hidden=s.hidden,
        heads=s.heads,
        mlp_ratio=s.mlp_ratio,
        rollout_steps=s.steps,
        cond_dim=s.cond_dim,
        n_classes=cfg.mixture.components,
        teacher_hidden=cfg.teacher_model.hidden,
        teacher_depth=cfg.teacher_model.depth,
        rollout_mode=s.rollout_mode,
    )


def _train_config(section, lambda_patches=0.0):
    return TrainConfig(
        total_steps=section.steps,
        batch_size=section.batch,
        lr=section.lr,
        warmup_steps=section.warmup,
        lambda_patches=lambda_patches,
        weight_decay=section.weight_decay,
        clip_norm=section.clip_norm,
        log_every=section.log_every,
    )


def _write_metrics(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


def _require(path, what):
    if not os.path.exists(path):
        raise DependencyError(f"missing upstream checkpoint: {what} at {path}")
    return path


def _prepare(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = RunConfig(**{**_cfg_dict_shallow(cfg), "seed": args.seed})
    if args.out is not None:
        cfg = RunConfig(**{**_cfg_dict_shallow(cfg), "out_dir": args.out})
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg


def _cfg_dict_shallow(cfg: RunConfig):
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}


def _path(cfg, name):
    return os.path.join(cfg.out_dir, name)


def cmd_train_base(args):
    cfg = _prepare(args)
    dist = _mixture(cfg)
    field_cfg = _field_config(cfg, condition_on_w=False)
    train = _train_config(cfg.base_train)
    model, rows = train_base_velocity(
        dist, field_cfg, train, seed=cfg.seed, dtype=cfg.dtype,
        label_drop=cfg.base_train.label_drop,
    )
    save_model(_path(cfg, cfg.artifacts.base_checkpoint), model)
    _write_metrics(_path(cfg, "base_metrics.csv"), rows, ["step", "lr", "loss"])
    figures.save_loss_curves(rows, ["loss"], _path(cfg, "base_loss.png"), "base field training")

    rng = np.random.default_rng([cfg.seed, 0xE0A])
    n = 600
    z = rng.standard_normal((n, field_cfg.data_dim))
    y = rng.integers(0, field_cfg.n_classes, n)
    sampled = integrate_ode(model, z, 256, y, 1.0)
    exact, _ = dist.sample(rng, n)
    dist_val = energy_distance(sampled, exact)
    if field_cfg.data_dim == 2:
        figures.save_sample_scatter(
            {"exact": exact, "256-step euler": sampled},
            _path(cfg, "base_samples.png"),
            f"base field samples (energy distance {dist_val:.3f})",
        )
    print(f"train-base: wrote {cfg.artifacts.base_checkpoint}; "
          f"final loss {rows[-1]['loss']:.5f}; energy distance {dist_val:.4f}")
    return 0


def cmd_distill_freeflow(args):
    cfg = _prepare(args)
    base_path = _require(_path(cfg, cfg.artifacts.base_checkpoint), "base field")
    field = load_model(base_path)
    sec = cfg.freeflow_train
    map_cfg = _field_config(cfg, condition_on_w=True)
    train = _train_config(sec)
    model, rows = freeflow_distill(
        field, map_cfg, train, seed=cfg.seed, dtype=cfg.dtype,
        delta_min=sec.delta_min, pin_fraction=sec.pin_fraction, fd_step=sec.fd_step,
        w_low=sec.w_low, w_high=sec.w_high,
    )
    save_model(_path(cfg, cfg.artifacts.teacher_checkpoint), model)
    _write_metrics(_path(cfg, "freeflow_metrics.csv"), rows, ["step", "lr", "loss"])
    figures.save_loss_curves(rows, ["loss"], _path(cfg, "freeflow_loss.png"),
                             "flow-map distillation")

    rng = np.random.default_rng([cfg.seed, 0xE0B])
    n = 600
    z = rng.standard_normal((n, map_cfg.data_dim))
    y = rng.integers(0, map_cfg.n_classes, n)
    one_step = model.one_step(z, 1.0, y, 1.0)
    exact, _ = _mixture(cfg).sample(rng, n)
    dist_val = energy_distance(one_step, exact)
    if map_cfg.data_dim == 2:
        figures.save_sample_scatter(
            {"exact": exact, "one-step": one_step},
            _path(cfg, "freeflow_samples.png"),
            f"one-step teacher samples (energy distance {dist_val:.3f})",
        )
    print(f"distill-freeflow: wrote {cfg.artifacts.teacher_checkpoint}; "
          f"final loss {rows[-1]['loss']:.5f}; one-step energy distance {dist_val:.4f}")
    return 0


def cmd_distill_slt(args):
    cfg = _prepare(args)
    teacher_path = _require(_path(cfg, cfg.artifacts.teacher_checkpoint), "flow-map teacher")
    teacher = load_model(teacher_path)
    sec = cfg.slt_train
    student_cfg = _student_config(cfg)
    train = _train_config(sec, lambda_patches=sec.lambda_patches)
    model, rows = distill_train(
        teacher, student_cfg, train, seed=cfg.seed, dtype=cfg.dtype,
        sample_delta=sec.sample_delta, w_low=sec.w_low, w_high=sec.w_high,
    )
    save_model(_path(cfg, cfg.artifacts.student_checkpoint), model)
    columns = ["step", "lr", "loss_output", "loss_patches", "loss_total"]
    _write_metrics(_path(cfg, "slt_metrics.csv"), rows, columns)
    figures.save_loss_curves(rows, columns[2:], _path(cfg, "slt_loss.png"),
                             "depth distillation")

    rng = np.random.default_rng([cfg.seed, 0xE0C])
    n = 600
    z = rng.standard_normal((n, student_cfg.data_dim))
    y = rng.integers(0, student_cfg.n_classes, n)
    w = cfg.scout.guidance
    student_samples = model.one_step(z, y, w)
    teacher_samples = teacher.one_step(z, 1.0, y, w)
    dist_val = energy_distance(student_samples, teacher_samples)
    if student_cfg.data_dim == 2:
        figures.save_sample_scatter(
            {"teacher one-step": teacher_samples, "student one-step": student_samples},
            _path(cfg, "slt_samples.png"),
            f"student vs teacher (energy distance {dist_val:.3f})",
        )
    print(f"distill-slt: wrote {cfg.artifacts.student_checkpoint}; "
          f"final loss_output {rows[-1]['loss_output']:.5f}; "
          f"student-teacher energy distance {dist_val:.4f}")
    return 0


def cmd_scout(args):
    cfg = _prepare(args)
    student = load_model(_require(_path(cfg, cfg.artifacts.student_checkpoint), "student"))
    teacher = load_model(_require(_path(cfg, cfg.artifacts.teacher_checkpoint), "flow-map teacher"))
    scorer = make_scorer(cfg.scout.scorer, _mixture(cfg))
    scout_cfg = ScoutConfig(
        n_candidates=cfg.scout.candidates,
        scorer=cfg.scout.scorer,
        class_label=cfg.scout.class_label,
        guidance=cfg.scout.guidance,
        seed=cfg.seed,
    )
    result = scout_and_refine(student, teacher, scorer, scout_cfg)

    report = _path(cfg, "scout_report.csv")
    with open(report, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "score", "selected"])
        for cand in result.candidates:
            writer.writerow([cand.index, repr(cand.score), int(cand.index == result.best_index)])
        fh.write(f"# timings scout_ms={result.scout_ms:.3f} "
                 f"refine_ms={result.refine_ms:.3f} total_ms={result.total_ms:.3f}\n")
    np.savetxt(_path(cfg, "refined_sample.txt"), result.final_sample[None, :])
    figures.save_scout_scatter(
        [c.preview for c in result.candidates],
        [c.score for c in result.candidates],
        result.best_index,
        result.final_sample,
        _mixture(cfg).means,
        _path(cfg, "scout_scatter.png"),
    )
    print(f"scout: best index {result.best_index} of {cfg.scout.candidates}, "
          f"score {result.candidates[result.best_index].score:.4f}; "
          f"scout {result.scout_ms:.1f} ms + refine {result.refine_ms:.1f} ms")
    return 0


def cmd_bench(args):
    cfg = _prepare(args)
    student = load_model(_require(_path(cfg, cfg.artifacts.student_checkpoint), "student"))
    teacher = load_model(_require(_path(cfg, cfg.artifacts.teacher_checkpoint), "flow-map teacher"))
    scorer = make_scorer(cfg.bench.scorer, _mixture(cfg))
    bench_cfg = BenchConfig(
        repeats=cfg.bench.repeats,
        warmup=cfg.bench.warmup,
        n_candidates=cfg.bench.candidates,
        scorer=cfg.bench.scorer,
        class_label=cfg.bench.class_label,
        guidance=cfg.bench.guidance,
        seed=cfg.seed,
    )
    rows = run_bench(student, teacher, scorer, bench_cfg)
    report = _path(cfg, "bench_report.csv")
    with open(report, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "avg_ms", "std_ms", "runs"])
        for row in rows:
            writer.writerow([row.strategy, f"{row.avg_ms:.4f}", f"{row.std_ms:.4f}", row.runs])
    figures.save_bench_bars(rows, _path(cfg, "bench_bars.png"))
    by_name = {r.strategy: r for r in rows}
    ratio = by_name["scout-and-refine"].avg_ms / by_name["teacher-pair"].avg_ms
    for row in rows:
        print(f"bench: {row.strategy:<16} {row.avg_ms:8.3f} ms (std {row.std_ms:.3f}, n={row.runs})")
    print(f"bench: scout-and-refine / teacher-pair ratio = {ratio:.3f}")
    return 0


def cmd_params(args):
    cfg = _prepare(args)
    rng = np.random.default_rng(0)
    from .student import StudentModel
    from .teacher import FlowMapModel, VelocityField

    base = VelocityField(_field_config(cfg, condition_on_w=False), rng, cfg.dtype)
    teacher = FlowMapModel(_field_config(cfg, condition_on_w=True), rng, cfg.dtype)
    student = StudentModel(_student_config(cfg), rng, cfg.dtype)

    rows = [
        ("base-field", cfg.teacher_model.hidden, cfg.teacher_model.heads, base.param_count()),
        ("flow-map-teacher", cfg.teacher_model.hidden, cfg.teacher_model.heads, teacher.param_count()),
        ("student", cfg.student_model.hidden, cfg.student_model.heads, student.param_count()),
    ]

    path = _path(cfg, "params.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "hidden", "heads", "params"])
        for name, hidden, heads, total in rows:
            writer.writerow([name, hidden, heads, total])

    print(f"{'model':<20}{'hidden':>8}{'heads':>8}{'params':>12}")
    for name, hidden, heads, total in rows:
        print(f"{name:<20}{hidden:>8}{heads:>8}{total:>12}")
    ratio = rows[2][3] / rows[1][3]
    print(f"student/teacher parameter ratio: {ratio:.4f}")
    for name, hidden, heads, total in REFERENCE_ROWS:
        print(f"{name:<20}{hidden:>8}{heads:>8}{total:>12}")
    return 0


def _add_common(sub):
    sub.add_argument("--config", required=True, help="path to the JSON run config")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--out", default=None, help="override the output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="depthflow",
        description="depth-wise flow-map distillation lab",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, handler, help_text in (
        ("train-base", cmd_train_base, "train the base velocity field on the toy mixture"),
        ("distill-freeflow", cmd_distill_freeflow, "distill the field into a one-step flow map"),
        ("distill-slt", cmd_distill_slt, "distill the flow map into the shared-block student"),
        ("scout", cmd_scout, "screen candidate noises and refine the best one"),
        ("bench", cmd_bench, "time the sampling strategies"),
        ("params", cmd_params, "print the parameter-count table"),
    ):
        sub = subparsers.add_parser(name, help=help_text)
        _add_common(sub)
        sub.set_defaults(handler=handler)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3 if isinstance(err, DependencyError) else 2
    except (ConfigError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except TrainingError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
