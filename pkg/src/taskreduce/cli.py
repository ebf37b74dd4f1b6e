"""Command-line driver: ``taskreduce <command> ...``.

Every command prints one JSON document on stdout. With ``--out DIR`` the
same document (and any CSV table) is also written under ``DIR``.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

import numpy as np

from .learn import LearnerConfig, convergence_trace, model_based_learner, q_learning
from .ltl import LtlSyntaxError, parse_ltl
from .machines import (
    RewardMachine,
    automaton_from_json,
    builtin_automaton,
    build_reach_arm,
    build_safe_arm,
    load_json,
    machine_for,
    machine_from_json,
    validate_machine,
)
from .mdp import (
    FiniteMemoryPolicy,
    MdpShape,
    MdpValidationError,
    PositionalPolicy,
    Simulator,
    Violation,
    as_memory_policy,
    derive_seed,
    load_mdp,
    mdp_from_json,
)
from .reduce import (
    PRESERVE_SLACK,
    ReductionError,
    buchi_product,
    check_optimality_preservation,
    descriptor_from_json,
    descriptor_to_json,
    lambda_sink_reduction,
    map_policy,
    mark_accepting,
    multidiscount_reduction,
    product_rm_reduction,
    reduced_mdp,
    two_discount_reduction,
    validate_reduction,
    wrap_simulator,
)
from .refute import (
    analyze_arm_for_buchi,
    entering_b_rm,
    fig1_mdp,
    fig3_mdp,
    fig4_mdp,
    lemma2_grid,
    pac_indistinguishability_experiment,
    reduction_sweep,
    robustness_experiment,
    synthesize_thm1_counterexample,
)
from .report import dumps, rows_to_csv
from .specs import DEFAULT_BUDGET, DiscountedRM, LimitAvgRM, Ltl, Reach, Safe, UnsupportedSpecError, optimal_value

BUILTIN_MDPS = {"fig1": (fig1_mdp, 3), "fig3": (fig3_mdp, 2), "fig4": (fig4_mdp, 2)}
LAMBDA_SWEEP = (0.5, 0.9, 0.99, 0.999)


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- argument decoding


def load_mdp_arg(text: str, tol: float):
    name, sep, params = text.partition(":")
    if sep and name in BUILTIN_MDPS:
        build, arity = BUILTIN_MDPS[name]
        values = [float(x) for x in params.split(",")]
        if len(values) != arity:
            raise UsageError(f"{name} takes {arity} comma-separated probabilities")
        return build(*values)
    return load_mdp(text, tol)


def _machine(token: str, mdp):
    """``reach-arm=b,c``, ``safe-arm=b`` or a path to a machine JSON file."""
    head, sep, props = token.partition("=")
    if sep and head in ("reach-arm", "safe-arm"):
        build = build_reach_arm if head == "reach-arm" else build_safe_arm
        return build(props.split(","), mdp.propositions, mdp.labels[mdp.initial])
    return machine_from_json(load_json(token), mdp, mdp.propositions)


def parse_spec(text: str, mdp, automaton_path: str | None = None):
    kind, _, rest = text.partition(":")
    if kind in ("reach", "safe"):
        props = [p for p in rest.split(",") if p]
        unknown = [p for p in props if p not in mdp.propositions]
        if not props or unknown:
            raise UsageError(f"unknown or missing propositions in {text!r}")
        return Reach(props) if kind == "reach" else Safe(props)
    if kind == "ltl":
        aut = automaton_from_json(load_json(automaton_path), mdp.propositions) if automaton_path else None
        return Ltl(parse_ltl(rest, mdp.propositions), aut)
    if kind == "discounted":
        token, sep, gamma = rest.rpartition(":")
        if not sep:
            raise UsageError("discounted specs look like discounted:<machine>:<gamma[,gamma...]>")
        g = [float(x) for x in gamma.split(",")]
        return DiscountedRM(_machine(token, mdp), g[0] if len(g) == 1 else tuple(g))
    if kind == "limitavg":
        return LimitAvgRM(_machine(rest, mdp))
    raise UsageError(f"unknown specification kind {kind!r}")


def policy_to_json(policy) -> dict:
    p = as_memory_policy(policy)
    return {"initial": int(p.initial), "update": p.update.tolist(), "act": p.act.tolist()}


def policy_from_json(doc: dict, n_actions: int):
    if "actions" in doc:
        return PositionalPolicy.deterministic(doc["actions"], n_actions)
    return FiniteMemoryPolicy(int(doc["initial"]), np.array(doc["update"]), np.array(doc["act"]))


def emit(args, name: str, doc, table: str | None = None) -> None:
    text = dumps(doc)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(text)
        if table is not None:
            (out / f"{name}.csv").write_text(table)


# ---------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    doc = load_json(args.file)
    if isinstance(doc.get("descriptor"), dict):
        doc = doc["descriptor"]
    violations = []
    if "transitions" in doc:
        kind = "mdp"
        try:
            mdp_from_json(doc, args.tol)
        except MdpValidationError as exc:
            violations = exc.violations
    elif "beta" in doc:
        kind = "reduction"
        rd = descriptor_from_json(doc)
        if args.mdp:
            shape = load_mdp_arg(args.mdp, args.tol).shape
        else:
            shape = MdpShape(rd.n_inner, int(rd.alpha.shape[2]), int(rd.beta[rd.initial]))
        violations = validate_reduction(rd, shape)
    elif doc.get("kind") in ("arm", "rm"):
        kind = "machine"
        mdp = load_mdp_arg(args.mdp, args.tol) if args.mdp else None
        try:
            violations = validate_machine(machine_from_json(doc, mdp, mdp.propositions if mdp else None))
        except (ValueError, KeyError, IndexError) as exc:
            violations = [Violation("format", (), str(exc))]
    else:
        raise UsageError("cannot tell whether the file is an MDP, a machine or a reduction")
    emit(args, "validate", {"kind": kind, "valid": not violations, "violations": [v.to_json() for v in violations]})
    return 0 if not violations else 1


def cmd_solve(args) -> int:
    mdp = load_mdp_arg(args.mdp, args.tol)
    spec = parse_spec(args.spec, mdp, args.automaton)
    value, policy = optimal_value(mdp, spec, args.budget)
    emit(args, "solve", {"spec": args.spec, "value": value, "policy": policy_to_json(policy)})
    return 0


def _buchi_target(mdp, spec, automaton_path):
    if not isinstance(spec, Ltl):
        raise UsageError("this reduction needs an ltl: specification")
    aut = spec.automaton or builtin_automaton(spec.formula, mdp.propositions)
    if aut is None:
        raise UsageError("no built-in automaton for this formula; pass --automaton")
    prod, acc = buchi_product(mdp, aut)
    marked, buchi = mark_accepting(prod, acc, _fresh(prod.propositions))
    return marked, buchi, acc


def _fresh(props):
    name = "acc"
    while name in props:
        name += "_"
    return name


def cmd_reduce(args) -> int:
    mdp = load_mdp_arg(args.mdp, args.tol)
    spec = parse_spec(args.spec, mdp, args.automaton)
    kind, _, param = args.kind.partition(":")
    base, base_spec = mdp, spec
    sweep_params = []
    if kind == "product":
        if not isinstance(spec, (DiscountedRM, LimitAvgRM)):
            raise UsageError("product reduction needs a discounted: or limitavg: specification")
        rd = product_rm_reduction(mdp.shape, spec)
    elif kind == "multidiscount":
        if not isinstance(spec, DiscountedRM):
            raise UsageError("multidiscount reduction needs a discounted: specification")
        rm = machine_for(mdp, spec.machine)
        if rm.n_states != 1:
            raise UsageError("multidiscount expects a single-state reward machine; apply the product reduction first")
        rd = multidiscount_reduction(mdp.shape, rm.rewards[0], spec.gamma)
        base_spec = DiscountedRM(rm, spec.gamma)
    elif kind == "lambda":
        lam = float(param)
        base, base_spec, acc = _buchi_target(mdp, spec, args.automaton)
        rd = lambda_sink_reduction(base.shape, acc, lam)
        sweep_params = sorted(set(LAMBDA_SWEEP) | {lam})
    elif kind == "twodiscount":
        g1, g2 = (float(x) for x in param.split(","))
        base, base_spec, acc = _buchi_target(mdp, spec, args.automaton)
        rd = two_discount_reduction(base.shape, acc, g1, g2)
        sweep_params = [(g1, g2)]
    else:
        raise UsageError(f"unknown reduction kind {args.kind!r}")
    violations = validate_reduction(rd, base.shape)
    res = check_optimality_preservation(base, base_spec, rd, args.budget, args.tol if args.tol_given else PRESERVE_SLACK)
    sweep = []
    for x in sweep_params:
        other = lambda_sink_reduction(base.shape, acc, x) if kind == "lambda" else two_discount_reduction(base.shape, acc, *x)
        r = check_optimality_preservation(base, base_spec, other, args.budget)
        sweep.append({"param": x if kind == "lambda" else list(x), "preserved": r.preserved})
    report = {
        "valid": not violations,
        "violations": [v.to_json() for v in violations],
        "preserved": res.preserved,
        "mode": res.mode,
        "optimum": res.optimum,
        "reduced_optimum": res.bar_optimum,
        "witness": res.witness,
        "sweep": sweep,
    }
    doc = {"kind": args.kind, "descriptor": descriptor_to_json(rd), "report": report}
    emit(args, "reduce", doc)
    return 0 if not violations else 1


def cmd_simulate(args) -> int:
    mdp = load_mdp_arg(args.mdp, args.tol)
    sim = Simulator(mdp, derive_seed(args.seed, 0))
    target = mdp
    if args.reduction:
        rd = descriptor_from_json(load_json(args.reduction))
        sim = wrap_simulator(rd, sim, derive_seed(args.seed, 1))
        target = reduced_mdp(rd, mdp)
    n, m = target.n_states, target.n_actions
    policy = as_memory_policy(policy_from_json(load_json(args.policy), m)) if args.policy else None
    rng = random.Random(derive_seed(args.seed, 2))
    s = sim.reset()
    mem = policy.initial if policy else 0
    rows = []
    visits = [0] * n
    for step in range(args.steps):
        if policy is None:
            a = rng.randrange(m)
        else:
            a = rng.choices(range(m), weights=policy.act[mem, s].tolist())[0]
        s2 = sim.step(a)
        row = {"step": step, "state": s, "action": a, "next": s2}
        if args.reduction:
            row["inner"] = sim.inner.state
        rows.append(row)
        visits[s2] += 1
        if policy is not None:
            mem = int(policy.update[mem, s2])
        s = s2
        if args.reset_every and (step + 1) % args.reset_every == 0:
            s = sim.reset()
            mem = policy.initial if policy else 0
    doc = {
        "steps": args.steps,
        "final_state": s,
        "inner_steps": sim.inner_calls if args.reduction else args.steps,
        "visits": visits,
    }
    emit(args, "simulate", doc, rows_to_csv(rows))
    return 0


def cmd_learn(args) -> int:
    mdp = load_mdp_arg(args.mdp, args.tol)
    spec = parse_spec(args.spec, mdp, args.automaton)
    steps = args.steps if args.steps is not None else (100_000 if args.learner == "q" else 1_000)
    config = LearnerConfig(seed=args.seed, steps=steps, eval_every=args.eval_every)
    inner = Simulator(mdp, derive_seed(args.seed, 0))
    if args.learner == "q":
        if not isinstance(spec, DiscountedRM) or np.ndim(spec.gamma) != 0:
            raise UsageError("Q-learning needs a discounted: specification with one discount factor")
        rm = machine_for(mdp, spec.machine)
        if rm.n_states == 1:
            trace, _ = q_learning(inner, rm.rewards[0], spec.gamma, config)
        else:
            rd = product_rm_reduction(mdp.shape, spec)
            sim = wrap_simulator(rd, inner, derive_seed(args.seed, 1))
            bar_trace, _ = q_learning(sim, rd.spec.machine.rewards[0], spec.gamma, config)
            trace = type(bar_trace)()
            for it, pol in bar_trace.snapshots:
                trace.record(it, map_policy(rd, pol))
    else:
        trace = model_based_learner(inner, spec, config)
    report = convergence_trace(trace, mdp, spec)
    doc = {
        "learner": args.learner,
        "spec": args.spec,
        "steps": steps,
        "optimum": report.optimum,
        "final_value": report.rows[-1]["J"],
        "final_gap": report.final_gap,
        "snapshots": len(trace),
        "final_policy": policy_to_json(trace.snapshots[-1][1]),
    }
    emit(args, "learn", doc, report.to_csv())
    if args.out:
        (Path(args.out) / "learn_policies.json").write_text(dumps(trace.to_json()))
    return 0


def _experiments(args):
    tol = args.tol
    name = args.name
    if name in ("thm1", "all"):
        rm = entering_b_rm() if not args.rm else machine_from_json(load_json(args.rm), fig1_mdp(1, 1, 1), ("b",))
        if not isinstance(rm, RewardMachine):
            rm = rm.to_rm(fig1_mdp(1, 1, 1))
        yield synthesize_thm1_counterexample(rm, args.gamma, tol)
    if name in ("thm3", "all"):
        arm = build_reach_arm(["b"], ("b",)) if not args.arm else machine_from_json(load_json(args.arm), None, ("b",))
        yield analyze_arm_for_buchi(arm, tol)[1]
    if name in ("robustness", "all"):
        yield robustness_experiment(args.delta if args.delta is not None else 0.1, args.eps if args.eps is not None else 0.5, tol)
    if name in ("pac", "all"):
        yield pac_indistinguishability_experiment(
            args.learner,
            args.eps if args.eps is not None else 0.25,
            args.K,
            args.delta,
            args.trials if args.trials is not None else 1000,
            args.seed,
            tol=tol,
        )
    if name in ("lemma2", "all"):
        yield lemma2_grid(args.delta if args.delta is not None and name == "lemma2" else 0.5, args.eps if args.eps is not None and name == "lemma2" else 0.25, tol=tol)
    if name == "sweep":
        if args.kind == "lambda":
            yield reduction_sweep("lambda", LAMBDA_SWEEP)
        else:
            yield reduction_sweep("twodiscount", [(0.5, 0.9), (0.9, 0.99), (0.99, 0.999)])


def cmd_experiment(args) -> int:
    reports = list(_experiments(args))
    docs = []
    for rep in reports:
        docs.append(rep.to_json())
        if args.out:
            rep.write(args.out)
    out = docs[0] if len(docs) == 1 else {"reports": docs, "passed": all(d["passed"] for d in docs)}
    sys.stdout.write(dumps(out))
    return 0 if all(r.passed for r in reports) else 1


# ---------------------------------------------------------------- parser


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="root seed for all randomness (default 0)")
    p.add_argument("--tol", type=float, default=d(None), help="numeric tolerance override")
    p.add_argument("--out", default=d(None), help="directory for output files")
    p.add_argument("--trials", type=int, default=d(None), help="trial count for experiments")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taskreduce", description="Reductions between RL tasks and their counterexamples.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    p = command("validate", "check an MDP, machine or reduction file")
    p.add_argument("file")
    p.add_argument("--mdp", help="MDP the machine or reduction refers to")
    p.set_defaults(func=cmd_validate)

    mdp_help = "MDP JSON file, or fig1:p1,p2,p3 / fig3:p1,p2 / fig4:p1,p2"
    spec_help = "reach:b | safe:b | ltl:'G F b' | discounted:<machine>:<gamma> | limitavg:<machine>"

    p = command("solve", "optimal value and witness policy")
    p.add_argument("mdp", help=mdp_help)
    p.add_argument("--spec", required=True, help=spec_help)
    p.add_argument("--automaton", help="automaton JSON for ltl specs")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.set_defaults(func=cmd_solve)

    p = command("reduce", "build a reduction descriptor and check optimality preservation")
    p.add_argument("mdp", help=mdp_help)
    p.add_argument("--spec", required=True, help=spec_help)
    p.add_argument("--kind", required=True, help="product | multidiscount | lambda:<x> | twodiscount:<g1>,<g2>")
    p.add_argument("--automaton", help="automaton JSON for ltl specs")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.set_defaults(func=cmd_reduce)

    p = command("simulate", "sample a trajectory, optionally through a reduction")
    p.add_argument("mdp", help=mdp_help)
    p.add_argument("--reduction", help="descriptor JSON; the trajectory is then over the reduced MDP")
    p.add_argument("--policy", help='policy JSON: {"actions": [...]} or finite-memory tables; default uniform')
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--reset-every", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = command("learn", "run a learner and score its output policies exactly")
    p.add_argument("mdp", help=mdp_help)
    p.add_argument("--spec", required=True, help=spec_help)
    p.add_argument("--automaton", help="automaton JSON for ltl specs")
    p.add_argument("--learner", choices=("q", "model"), default="q")
    p.add_argument("--steps", type=int)
    p.add_argument("--eval-every", type=int)
    p.set_defaults(func=cmd_learn)

    p = command("experiment", "run a counterexample experiment")
    p.add_argument("name", choices=("thm1", "thm3", "robustness", "pac", "lemma2", "sweep", "all"))
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--rm", help="reward machine JSON over the four-state family (thm1)")
    p.add_argument("--arm", help="abstract reward machine JSON over {b} (thm3)")
    p.add_argument("--delta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--K", type=int, default=21)
    p.add_argument("--learner", choices=("model", "q"), default="model")
    p.add_argument("--kind", choices=("lambda", "twodiscount"), default="lambda")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.tol_given = args.tol is not None
    if args.tol is None:
        args.tol = 1e-9
    if args.tol <= 0:
        print("error: --tol must be positive", file=sys.stderr)
        return 2
    if args.trials is not None and args.trials <= 0:
        print("error: --trials must be positive", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (UsageError, UnsupportedSpecError, ReductionError, MdpValidationError, LtlSyntaxError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
