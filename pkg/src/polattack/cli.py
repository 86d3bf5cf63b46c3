"""Command-line entry point.

Subcommands cover the whole experiment cycle:

* ``train``        train one benign policy per manifest task
* ``defend``       fine-tune each benign policy on PGD-perturbed inputs
* ``attack-eval``  reward matrix of every method against a policy
* ``ablate``       DAPGD divergence/iteration grid on the button task
* ``gradcheck``    closed-form oracle and finite-difference suites
* ``report``       re-render a result CSV as a markdown table

Every subcommand accepts ``--manifest`` (a JSON file; defaults apply
when omitted) plus ``--seed``, ``--episodes`` and ``--out`` overrides.
Per-task training seeds derive from the master seed as
``derive_seed(master, 3, task_index)`` for ``train`` and
``derive_seed(master, 4, task_index)`` for ``defend``, so reruns of any
command with the same manifest reproduce their outputs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from .harness import (ExperimentManifest, _load_role_policy, load_manifest,
                      read_csv, run_ablation, run_gradcheck, run_matrix,
                      write_csv, write_markdown)
from .policy import save_weights
from .seeding import derive_seed
from .training import adversarial_train, train

__all__ = ["main"]

_LOG_COLUMNS = ("step", "mean_episode_reward", "policy_loss", "value_loss",
                "entropy")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polattack",
        description="Adversarial observation attacks on Gaussian control "
                    "policies: training, attacks, defenses and reports.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest", "-m", metavar="PATH",
                       help="JSON experiment manifest (defaults when omitted)")
        p.add_argument("--seed", type=int, metavar="N",
                       help="override the manifest master seed")
        p.add_argument("--episodes", type=int, metavar="N",
                       help="override episodes per seed")
        p.add_argument("--out", metavar="DIR",
                       help="override the output directory")
        return p

    p = common(sub.add_parser("train", help="train benign policies"))
    p.set_defaults(func=_cmd_train)

    p = common(sub.add_parser("defend", help="adversarially fine-tune policies"))
    p.set_defaults(func=_cmd_defend)

    p = common(sub.add_parser("attack-eval", help="run the attack matrix"))
    p.add_argument("--policy", choices=("benign", "defended"),
                   default="benign", help="which policy the matrix attacks")
    p.set_defaults(func=_cmd_attack_eval)

    p = common(sub.add_parser("ablate", help="DAPGD divergence ablation"))
    p.set_defaults(func=_cmd_ablate)

    p = common(sub.add_parser("gradcheck", help="gradient and oracle checks"))
    p.add_argument("--cases", type=int, default=100, metavar="N",
                   help="random cases per check (default 100)")
    p.set_defaults(func=_cmd_gradcheck)

    p = common(sub.add_parser("report", help="render a result CSV as markdown"))
    p.add_argument("csv_path", metavar="CSV", help="result CSV to render")
    p.set_defaults(func=_cmd_report)

    return parser


def _manifest(args) -> ExperimentManifest:
    manifest = (load_manifest(args.manifest) if args.manifest
                else ExperimentManifest())
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.episodes is not None:
        updates["episodes_per_seed"] = args.episodes
    if args.out is not None:
        updates["out_dir"] = args.out
    return dataclasses.replace(manifest, **updates) if updates else manifest


def _ensure_parent(path: str):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _write_training_log(trainer, path: str):
    _ensure_parent(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_LOG_COLUMNS)
        for rec in trainer.history_:
            writer.writerow([rec["step"]] +
                            [repr(float(rec[k])) for k in _LOG_COLUMNS[1:]])


def _cmd_train(args) -> int:
    manifest = _manifest(args)
    for task_ix, task in enumerate(manifest.tasks):
        trainer = train(manifest.env_config(task),
                        total_steps=manifest.train_steps,
                        seed=derive_seed(manifest.master_seed, 3, task_ix))
        path = manifest.weights_path(task, "benign")
        _ensure_parent(path)
        save_weights(trainer.policy_, path)
        _write_training_log(trainer, os.path.join(
            manifest.out_dir, f"train_{task.value}.csv"))
        flag = "" if trainer.beats_baseline_ else "  [below random baseline]"
        print(f"trained {task.value}: mean reward {trainer.trained_mean_:.3f} "
              f"(random baseline {trainer.baseline_mean_:.3f}) -> {path}{flag}")
    return 0


def _cmd_defend(args) -> int:
    manifest = _manifest(args)
    for task_ix, task in enumerate(manifest.tasks):
        benign = _load_role_policy(manifest, task, "benign")
        trainer = adversarial_train(
            manifest.env_config(task), benign,
            total_steps=manifest.defense_steps,
            seed=derive_seed(manifest.master_seed, 4, task_ix),
            attack_epsilon=manifest.attack.epsilon,
            attack_alpha=manifest.attack.alpha)
        path = manifest.weights_path(task, "defended")
        _ensure_parent(path)
        save_weights(trainer.policy_, path)
        _write_training_log(trainer, os.path.join(
            manifest.out_dir, f"defend_{task.value}.csv"))
        print(f"defended {task.value}: clean mean reward "
              f"{trainer.trained_mean_:.3f} after defense -> {path}")
    return 0


def _emit(table, out_dir: str, stem: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = write_csv(table, os.path.join(out_dir, f"{stem}.csv"))
    md_path = write_markdown(table, os.path.join(out_dir, f"{stem}.md"))
    errors = [r for r in table.rows if r.error is not None]
    for r in errors:
        print(f"warning: {r.task}/{r.method} failed: {r.error}",
              file=sys.stderr)
    print(f"wrote {csv_path}")
    print(f"wrote {md_path}")


def _cmd_attack_eval(args) -> int:
    manifest = _manifest(args)
    table = run_matrix(manifest, role=args.policy)
    stem = "attack_matrix" if args.policy == "benign" else "postdefense_matrix"
    _emit(table, manifest.out_dir, stem)
    return 0


def _cmd_ablate(args) -> int:
    manifest = _manifest(args)
    table = run_ablation(manifest)
    _emit(table, manifest.out_dir, "ablation")
    by_iters = {}
    for r in table.rows:
        if np.isfinite(r.mean_reward):
            by_iters.setdefault(r.iters, []).append((r.mean_reward, r.divergence))
    for iters in sorted(by_iters):
        _, best = min(by_iters[iters])
        print(f"lowest mean reward at {iters} iterations: {best}")
    return 0


def _cmd_gradcheck(args) -> int:
    manifest = _manifest(args)
    report = run_gradcheck(cases=args.cases, seed=manifest.master_seed)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def _cmd_report(args) -> int:
    table = read_csv(args.csv_path)
    base = os.path.splitext(os.path.basename(args.csv_path))[0] + ".md"
    out_dir = args.out if args.out else os.path.dirname(args.csv_path)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, base) if out_dir else base
    write_markdown(table, path)
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - CLI boundary, exit nonzero
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
