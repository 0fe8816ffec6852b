"""Command-line interface for experiments: training, evaluation, rule grid
search, the policy-switch study, and report emission."""

from __future__ import annotations

import json
import re
from collections import defaultdict
from pathlib import Path

import click

from . import harness, plots
from .config import EnvConfig, TrainConfig, load_env_config, load_run_config
from .marl import train as train_run
from .orders import PROFILES, generate_orders, load_orders, save_orders
from .rules import RuleCombo, grid_search


def _orders(spec: str, seed: int):
    if Path(spec).exists():
        return load_orders(spec)
    if spec.lower() in PROFILES:
        return generate_orders(spec.lower(), seed)
    raise click.BadParameter(f"{spec!r} is neither an order file nor a profile name")


def _env_cfg(path: str | None) -> EnvConfig:
    return load_env_config(path) if path else EnvConfig()


orders_opt = click.option("--orders", "orders_spec", required=True,
                          help="Order CSV path or profile name (lm, hm, desk).")
env_opt = click.option("--env-config", "env_config", default=None,
                       type=click.Path(exists=True), help="Environment parameter INI.")
out_opt = click.option("--out", "out_dir", required=True, type=click.Path(),
                       help="Output directory.")


@click.group()
def main() -> None:
    """Order-picking line control experiments."""


@main.command("gen-orders")
@click.option("--profile", default="lm", help="lm, hm, desk, or o,i,t,s stats.")
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def gen_orders(profile: str, seed: int, out_path: str) -> None:
    """Generate a synthetic order set matching a statistical profile."""
    target = profile if profile.lower() in PROFILES else \
        tuple(int(v) for v in profile.split(","))
    orders = generate_orders(target, seed)
    save_orders(orders, out_path)
    click.echo(f"wrote {out_path}: orders/items/types/shippings = {orders.stats}")


@main.command()
@orders_opt
@env_opt
@out_opt
@click.option("--run-config", "run_config", default=None, type=click.Path(exists=True),
              help="Training run INI; flags below override it.")
@click.option("--framework", default=None, type=click.Choice(["illr", "ilgr", "cdic", "cdsc"]))
@click.option("--advantage", default=None, type=click.Choice(["mc", "td0", "gae"]))
@click.option("--lam", default=None, type=float)
@click.option("--episodes", default=None, type=int)
@click.option("--rollouts", default=None, type=int)
@click.option("--seed", "seeds", multiple=True, type=int, default=(0,))
@click.option("--orders-seed", default=0, type=int)
@click.option("--progress-every", default=0, type=int)
def train(orders_spec, env_config, out_dir, run_config, framework, advantage,
          lam, episodes, rollouts, seeds, orders_seed, progress_every) -> None:
    """Train one framework over one or more master seeds."""
    cfg = load_run_config(run_config) if run_config else TrainConfig()
    for name, value in [("framework", framework), ("advantage", advantage),
                        ("lam", lam), ("episodes", episodes),
                        ("rollouts_per_episode", rollouts)]:
        if value is not None:
            setattr(cfg, name, value)
    cfg.__post_init__()
    orders = _orders(orders_spec, orders_seed)
    env_cfg = _env_cfg(env_config)
    harness.write_manifest(out_dir, "train", list(seeds), cfg, env_cfg,
                           extra={"orders": orders_spec, "orders_seed": orders_seed})
    for seed in seeds:
        ckpt, history = train_run(cfg, orders, env_cfg, seed, out_dir,
                                  progress_every=progress_every)
        click.echo(f"seed {seed}: final makespan {history[-1]['makespan_mean']:.1f}s "
                   f"-> {ckpt}")


@main.command("eval")
@orders_opt
@env_opt
@out_opt
@click.option("--checkpoint", default=None, type=click.Path(exists=True))
@click.option("--rules", "rules_spec", default=None,
              help="Four comma-separated rule indices: fr,pc,pr1,pr2.")
@click.option("--random", "random_policy", is_flag=True)
@click.option("-n", "n_rollouts", default=192, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--orders-seed", default=0, type=int)
@click.option("--greedy", is_flag=True, help="Argmax actions instead of sampling.")
@click.option("--trace", is_flag=True, help="Export a decision/event trace CSV.")
def eval_cmd(orders_spec, env_config, out_dir, checkpoint, rules_spec,
             random_policy, n_rollouts, seed, orders_seed, greedy, trace) -> None:
    """Evaluate a policy source and report makespan statistics."""
    sources = [checkpoint, rules_spec, random_policy or None]
    if sum(s is not None for s in sources) != 1:
        raise click.UsageError("give exactly one of --checkpoint, --rules, --random")
    if random_policy:
        source, label = "random", "random"
    elif rules_spec:
        source = RuleCombo(*(int(v) for v in rules_spec.split(",")))
        label = f"rules_{rules_spec.replace(',', '-')}"
    else:
        source, label = checkpoint, Path(checkpoint).stem
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    orders = _orders(orders_spec, orders_seed)
    env_cfg = _env_cfg(env_config)
    stats = harness.evaluate(source, orders, env_cfg, n_rollouts, seed, greedy=greedy,
                             trace_path=out / f"trace_{label}.csv" if trace else None)
    harness.write_stats_csv(out / f"makespans_{label}.csv",
                            [{"rollout": i, "makespan_s": v}
                             for i, v in enumerate(stats.raw)])
    harness.write_manifest(out, "eval", [seed], env_cfg=env_cfg,
                           extra={"orders": orders_spec, "orders_seed": orders_seed,
                                  "policy": label, "n": n_rollouts, "greedy": greedy,
                                  "stats": stats.row()})
    click.echo(f"{label}: {stats.mean:.1f} +/- {stats.std:.1f} s (n={stats.n})")


@main.command()
@orders_opt
@env_opt
@out_opt
@click.option("--seeds-per-combo", default=2, type=int)
@click.option("--base-seed", default=0, type=int)
@click.option("--orders-seed", default=0, type=int)
@click.option("--top", default=10, type=int, help="How many best combos to print.")
def gridsearch(orders_spec, env_config, out_dir, seeds_per_combo, base_seed,
               orders_seed, top) -> None:
    """Exhaustive search over the 4096 rule combinations."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    orders = _orders(orders_spec, orders_seed)
    env_cfg = _env_cfg(env_config)
    results = grid_search(orders, env_cfg, seeds_per_combo, base_seed, progress=True)
    harness.write_stats_csv(out / "gridsearch.csv", [
        {"combo_id": r.combo.combo_id, "fr": r.combo.fr, "pc": r.combo.pc,
         "pr1": r.combo.pr1, "pr2": r.combo.pr2,
         "mean": r.mean, "std": r.std, "n": r.n} for r in results])
    harness.write_manifest(out, "gridsearch", [base_seed], env_cfg=env_cfg,
                           extra={"orders": orders_spec, "orders_seed": orders_seed,
                                  "seeds_per_combo": seeds_per_combo})
    for r in results[:top]:
        click.echo(f"combo {r.combo.fr},{r.combo.pc},{r.combo.pr1},{r.combo.pr2}: "
                   f"{r.mean:.1f} +/- {r.std:.1f} s")


@main.command("random-baseline")
@orders_opt
@env_opt
@out_opt
@click.option("-n", "n_rollouts", default=192, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--orders-seed", default=0, type=int)
@click.pass_context
def random_baseline(ctx, orders_spec, env_config, out_dir, n_rollouts, seed,
                    orders_seed) -> None:
    """Makespan statistics under uniform-random task selection."""
    ctx.invoke(eval_cmd, orders_spec=orders_spec, env_config=env_config,
               out_dir=out_dir, checkpoint=None, rules_spec=None, random_policy=True,
               n_rollouts=n_rollouts, seed=seed, orders_seed=orders_seed,
               greedy=False, trace=False)


@main.command("switch-study")
@orders_opt
@env_opt
@out_opt
@click.option("--cdsc", "cdsc_ckpt", required=True, type=click.Path(exists=True))
@click.option("--illr", "illr_ckpt", required=True, type=click.Path(exists=True))
@click.option("-n", "n_rollouts", default=64, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--orders-seed", default=0, type=int)
@click.option("--greedy", is_flag=True, help="Evaluate with argmax actions.")
def switch_study_cmd(orders_spec, env_config, out_dir, cdsc_ckpt, illr_ckpt,
                     n_rollouts, seed, orders_seed, greedy) -> None:
    """Swap one coordination-trained policy at a time for its locally-trained
    counterpart and test the makespan change."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    orders = _orders(orders_spec, orders_seed)
    env_cfg = _env_cfg(env_config)
    study = harness.switch_study(cdsc_ckpt, illr_ckpt, orders, env_cfg,
                                 n_rollouts, seed, greedy=greedy)
    (out / "switch_study.json").write_text(json.dumps(study, indent=2))
    plots.switch_bars(study, out / "fig_switch_study.png")
    harness.write_manifest(out, "switch-study", [seed], env_cfg=env_cfg,
                           extra={"orders": orders_spec, "orders_seed": orders_seed,
                                  "cdsc": str(cdsc_ckpt), "illr": str(illr_ckpt)})
    for agent, row in study.items():
        if agent == "baseline":
            click.echo(f"baseline: {row['mean']:.1f} +/- {row['std']:.1f} s")
        else:
            click.echo(f"{agent}: {row['pct_change']:+.1f}% (p={row['p']:.3g})")


@main.command("emit-curves")
@click.option("--metrics-dir", required=True, type=click.Path(exists=True),
              help="Directory with metrics_<label>_s<seed>.csv files.")
@out_opt
@click.option("--window", default=50, type=int)
@click.option("--figures/--no-figures", default=True)
def emit_curves_cmd(metrics_dir, out_dir, window, figures) -> None:
    """Aggregate metric logs into plot-ready CSVs and figures."""
    groups: dict[str, list[Path]] = defaultdict(list)
    for path in sorted(Path(metrics_dir).glob("metrics_*.csv")):
        label = re.sub(r"_s\d+$", "", path.stem[len("metrics_"):])
        groups[label].append(path)
    if not groups:
        raise click.UsageError(f"no metrics_*.csv files in {metrics_dir}")
    written = harness.emit_curves(groups, out_dir, window=window, figures=figures)
    for path in written:
        click.echo(str(path))


if __name__ == "__main__":
    main()
