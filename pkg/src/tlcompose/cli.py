"""Command-line driver: ``tlcompose {translate,train,evaluate,compose,render,check-decomposition}``.

Exit codes: 0 success, 2 configuration/input error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .automaton import product, translate
from .compose import STAGES, CompositionError, CompositionJob, compose_skills, decomposition_check
from .env import GRID_ACTIONS, GridWorld
from .learner import QTable, ReplayBuffer, TrainConfig, greedy_policy, q_learning_train
from .logic import FormulaError, is_temporal_free, parse_formula, robustness, to_text

EXIT_CONFIG = 2
EXIT_VERIFY = 3

ARROWS = {"up": "↑", "down": "↓", "left": "←", "right": "→", "stay": "·"}


class VerificationError(RuntimeError):
    pass


def _macros_from_args(args) -> dict:
    macros = {}
    if getattr(args, "config", None):
        macros.update(ex.load_config(args.config)["env"].get("macros", {}))
    for item in getattr(args, "macro", None) or []:
        name, sep, text = item.partition("=")
        if not sep:
            raise ex.ConfigError(f"--macro expects NAME=FORMULA, got {item!r}")
        macros[name.strip()] = text
    return macros


def cmd_translate(args) -> int:
    macros = _macros_from_args(args)
    formula = parse_formula(args.formula, GridWorld.features if args.grid_features else None, macros)
    fsa = translate(formula)
    jpath, dpath = ex.write_automaton(fsa, args.out_dir, args.name)
    non_terminal = sum(1 for q in range(fsa.n_states) if not fsa.is_terminal(q))
    print(f"formula: {to_text(formula)}")
    print(f"states: {fsa.n_states} (accepting {len(fsa.accepting)}, trap {'yes' if fsa.trap is not None else 'no'}, "
          f"other {non_terminal}); edges: {fsa.n_edges()}")
    print(f"wrote {jpath} and {dpath}")
    return 0


def _overrides(args) -> dict:
    over: dict = {}
    if args.formula is not None:
        over["formula"] = args.formula
    if args.steps is not None:
        over.setdefault("train", {})["steps"] = args.steps
    if args.out is not None:
        over["output"] = args.out
    if getattr(args, "episodes", None) is not None:
        over.setdefault("eval", {})["episodes"] = args.episodes
    if getattr(args, "every", None) is not None:
        over.setdefault("eval", {})["every"] = args.every
    over["seed"] = args.seed
    return over


def cmd_train(args) -> int:
    cfg = ex.load_config(args.config, _overrides(args))
    env_cfg = cfg["env"]
    formula = ex.parse_task(cfg["formula"], env_cfg)
    fsa = translate(formula)
    env = ex.augmented_env(env_cfg, fsa)
    eval_env = ex.augmented_env(env_cfg, fsa)   # roll-outs must not disturb the training episode
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    chash = ex.experiment_hash(cfg)
    tcfg = TrainConfig(gamma=cfg["train"]["gamma"], alpha=cfg["train"]["alpha"],
                       steps=cfg["train"]["steps"], seed=cfg["seed"])

    rows: list[dict] = []
    every, episodes = cfg["eval"]["every"], cfg["eval"]["episodes"]

    def checkpoint(step: int, Q: np.ndarray) -> None:
        rep = ex.evaluate_parallel(eval_env, greedy_policy(Q), episodes, cfg["seed"] + step, args.jobs)
        rows.append({"step": step, "success_rate": rep.success_rate,
                     "mean_episode_len": rep.mean_episode_len, "mean_return": rep.mean_return})

    checkpoint(0, np.zeros((env.n_states, env.n_q, env.n_actions)))
    qt, buffer = q_learning_train(env, tcfg, callback=checkpoint, callback_every=every)
    if not rows or rows[-1]["step"] != tcfg.steps:
        checkpoint(tcfg.steps, qt.values)
    qt.metadata.update({
        "formula": to_text(formula), "formula_source": cfg["formula"],
        "env_config": env_cfg, "env_hash": ex.env_config_hash(env_cfg), "config_hash": chash,
    })
    qt.save(out / "qtable.json")
    buffer.save(out / "buffer.npz")
    ex.write_automaton(fsa, out, "fsa")
    ex.dump_json(out / "config.json", {**cfg, "config_hash": chash})
    ex.write_metrics(out / "metrics.csv", rows,
                     {"formula": cfg["formula"], "config_hash": chash, "seed": str(cfg["seed"])})
    final = rows[-1]
    print(f"trained {cfg['formula']!r} for {tcfg.steps} steps: success {final['success_rate']:.3f} "
          f"over {episodes} episodes; artifacts in {out}")
    return 0


def _policy_env(qt: QTable):
    env_cfg, fsa = ex.rebuild_automaton(qt)
    return env_cfg, ex.augmented_env(env_cfg, fsa)


def cmd_evaluate(args) -> int:
    qt = _load_table(args.qtable)
    _, env = _policy_env(qt)
    rep = ex.evaluate_parallel(env, greedy_policy(qt), args.episodes, args.seed, args.jobs)
    report = {**rep.as_dict(), "formula": qt.metadata.get("formula"),
              "config_hash": qt.metadata.get("config_hash"), "seed": args.seed}
    text = json.dumps(report, sort_keys=True, indent=1)
    if args.report:
        Path(args.report).write_text(text)
    print(text)
    return 0


def _load_table(path) -> QTable:
    try:
        return QTable.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ex.ConfigError(f"cannot load table {path}: {exc}") from None


def cmd_compose(args) -> int:
    q1, q2 = _load_table(args.q1), _load_table(args.q2)
    if q1.metadata.get("env_hash") != q2.metadata.get("env_hash"):
        raise VerificationError("tables were trained on different environment configurations")
    env1, f1 = ex.rebuild_automaton(q1)
    _, f2 = ex.rebuild_automaton(q2)
    pf = product(f1, f2)
    buffers = [ReplayBuffer.load(b) for b in args.buffer or []]
    if args.stage != "c1" and not any(len(b) for b in buffers):
        raise ex.ConfigError(f"stage {args.stage} needs at least one non-empty --buffer")
    grid = ex.grid_from_env_config(env1)
    samples = [grid.sample(s) for s in range(grid.n_states)]
    gamma = float(q1.metadata.get("gamma", 0.95))
    alpha = float(q1.metadata.get("alpha", 0.1))
    job = CompositionJob(q1, q2, pf, ReplayBuffer.merge(*buffers), samples, stage=args.stage,
                         updates=args.updates, gamma=gamma, alpha=alpha, seed=args.seed)
    result = compose_skills(job)
    penv = ex.augmented_env(env1, pf)
    success = {}
    for stage, table in result.stage_tables.items():
        rep = ex.evaluate_parallel(penv, greedy_policy(table), args.episodes, args.seed, args.jobs)
        success[stage] = rep.success_rate
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    composed = result.q
    composed.metadata.update({
        "product_of": [q1.metadata["formula"], q2.metadata["formula"]],
        "env_config": env1, "env_hash": q1.metadata.get("env_hash"),
        "config_hash": ex.config_hash({"q1": q1.metadata.get("config_hash"),
                                       "q2": q2.metadata.get("config_hash"),
                                       "stage": args.stage, "updates": args.updates, "seed": args.seed}),
    })
    composed.save(out / "composed_qtable.json")
    ex.write_automaton(pf, out, "product")
    report = {
        "stage": args.stage, "success_rates": success, "episodes": args.episodes,
        "correction_max": result.correction_max,
        "product_states": pf.n_states, "product_edges": pf.n_edges(),
        "formula": to_text(pf.source) if pf.source is not None else None,
        "config_hash": composed.metadata["config_hash"], "seed": args.seed,
        "buffer_transitions": len(job.buffer),
    }
    ex.dump_json(out / "report.json", report)
    print(json.dumps(report, sort_keys=True, indent=1))
    return 0


def render_table(qt: QTable) -> str:
    env_cfg, fsa = ex.rebuild_automaton(qt)
    grid = ex.grid_from_env_config(env_cfg)
    regions = {}
    for name, text in env_cfg.get("macros", {}).items():
        f = parse_formula(text, GridWorld.features, env_cfg.get("macros", {}))
        if is_temporal_free(f):
            regions[name] = f
    tags = {}
    for s in range(grid.n_states):
        hit = [n for n, f in regions.items() if robustness([grid.sample(s)], f) > 0]
        tags[s] = hit[0] if hit else " "
    policy = greedy_policy(qt)
    blocks = []
    for q in range(fsa.n_states):
        kind = " (accepting)" if q in fsa.accepting else " (trap)" if q == fsa.trap else ""
        lines = [f"q{q}{kind}: {to_text(fsa.labels[q])}"]
        for y in range(grid.height - 1, -1, -1):
            row = []
            for x in range(grid.width):
                s = grid.index(x, y)
                row.append(ARROWS[GRID_ACTIONS[policy[s, q]]] + tags[s])
            lines.append("".join(row).rstrip())
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def cmd_render(args) -> int:
    print(render_table(_load_table(args.qtable)), end="")
    return 0


def cmd_check_decomposition(args) -> int:
    qt = _load_table(args.qtable)
    if not ex.is_product_table(qt):
        raise ex.ConfigError("check-decomposition needs a composed table (product automaton)")
    _, env = _policy_env(qt)
    if args.random_policy:
        rng = np.random.default_rng(args.seed)
        policy = rng.integers(env.n_actions, size=(env.n_states, env.n_q))
    else:
        policy = greedy_policy(qt)
    start = tuple(args.start) if args.start else None
    if start is not None:
        grid = env.mdp
        start = (grid.index(start[0], start[1]), start[2], start[3])
    rep = decomposition_check(env, policy, args.samples, gamma=float(qt.metadata.get("gamma", 0.95)),
                              start=start, seed=args.seed)
    print(json.dumps(rep.as_dict(), sort_keys=True, indent=1))
    if not (rep.passed and rep.exact_reward_identity):
        raise VerificationError("decomposition identity not confirmed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tlcompose", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("translate", help="compile a formula into automaton JSON + DOT")
    t.add_argument("formula")
    t.add_argument("--config", help="experiment config supplying macro bindings")
    t.add_argument("--macro", action="append", metavar="NAME=FORMULA")
    t.add_argument("--out-dir", default=".")
    t.add_argument("--name", default="fsa")
    t.add_argument("--any-features", dest="grid_features", action="store_false",
                   help="accept any feature name instead of the grid's x, y")
    t.set_defaults(func=cmd_translate)

    tr = sub.add_parser("train", help="Q-learning on the automaton-augmented grid world")
    tr.add_argument("config", nargs="?")
    tr.add_argument("--seed", type=int, required=True)
    tr.add_argument("--formula")
    tr.add_argument("--steps", type=int)
    tr.add_argument("--out")
    tr.add_argument("--episodes", type=int, help="evaluation episodes per checkpoint")
    tr.add_argument("--every", type=int, help="checkpoint cadence in update steps")
    tr.add_argument("--jobs", type=int, default=1)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="greedy roll-outs of a stored table")
    ev.add_argument("qtable")
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--jobs", type=int, default=1)
    ev.add_argument("--report")
    ev.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compose", help="compose two trained tables over the product automaton")
    c.add_argument("q1")
    c.add_argument("q2")
    c.add_argument("--buffer", action="append", help="replay buffer file (repeatable)")
    c.add_argument("--stage", choices=STAGES, default="c1")
    c.add_argument("--updates", type=int, default=50_000)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--episodes", type=int, default=100)
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--out", default="runs/composed")
    c.set_defaults(func=cmd_compose)

    r = sub.add_parser("render", help="ASCII arrow field per automaton state")
    r.add_argument("qtable")
    r.set_defaults(func=cmd_render)

    d = sub.add_parser("check-decomposition", help="Monte-Carlo check of the Q decomposition")
    d.add_argument("qtable", help="composed table")
    d.add_argument("--samples", type=int, default=2000)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--random-policy", action="store_true")
    d.add_argument("--start", type=int, nargs=4, metavar=("X", "Y", "Q", "A"))
    d.set_defaults(func=cmd_check_decomposition)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except CompositionError as exc:
        code = EXIT_VERIFY if "differ" in str(exc) or "different automaton" in str(exc) else EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (ex.ConfigError, FormulaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
