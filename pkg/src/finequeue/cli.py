"""Command line interface."""

import functools
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import click
import numpy as np
import pandas as pd
import yaml

from . import analytic
from .config import QueueConfig, read_config_file
from .evaluation import (
    avalanche_sweep,
    coalition_check,
    division_sweep,
    map_episodes,
    nashconv,
    play_episode,
    position_utilities,
    trend,
)
from .exceptions import QueueError, ValidationError
from .game.core import revenue
from .game.strategies import as_profile, strategy_from_spec
from .learner.ppo import Hyperparams, train
from .presets import PRESETS, load_preset
from .serialization import (
    check_output,
    iter_episode_log,
    write_json,
    write_table,
)

logger = logging.getLogger(__name__)

#: Options shared by all subcommands that resolve into a :class:`QueueConfig`.
QUEUE_OPTIONS = ("F", "Q", "T", "k", "p", "x", "x0", "w", "burn_in", "seed")
#: Options of the train subcommand that resolve into :class:`Hyperparams`.
LEARNER_OPTIONS = ("n_epochs", "n_train", "buffer_size", "optimizer", "actor_lr", "critic_lr")
#: Queries of the analytic subcommand.
ANALYTIC_QUERIES = (
    "r",
    "alpha",
    "alpha-crit",
    "chernoff",
    "payment-w1",
    "payment-mixed",
    "payment-round2",
    "r21",
    "two-round",
    "total-w1",
    "total-w2",
    "division-compare",
    "conjecture",
    "chernoff-scan",
    "conjecture-scan",
    "proposition-scan",
    "doubling-threshold",
    "critical-position-scan",
    "brute-force-w1",
    "brute-force-w2",
    "coalition",
)


def configure_logging(verbose: int) -> None:
    """Send package logs to standard error; ``-v`` for INFO, ``-vv`` for DEBUG."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    package_logger = logging.getLogger("finequeue")
    package_logger.handlers[:] = [handler]
    package_logger.setLevel(level)


def parse_list(cast: Callable[[str], Any]) -> Callable[..., Optional[List[Any]]]:
    """Click callback turning ``"1,2,4"`` into ``[1, 2, 4]``."""

    def callback(ctx: click.Context, param: click.Parameter, value: Any) -> Optional[List[Any]]:
        if value is None:
            return None
        if isinstance(value, (list, tuple)):
            return [cast(item) for item in value]
        try:
            return [cast(item) for item in str(value).split(",") if item.strip()]
        except ValueError as error:
            raise click.BadParameter(f"Invalid list {value!r}: {error}") from error

    return callback


class QueueGroup(click.Group):
    """Group that reports package errors without a traceback."""

    def invoke(self, ctx: click.Context) -> Any:
        """Run the subcommand, turning :class:`QueueError` into a usage error."""
        try:
            return super().invoke(ctx)
        except QueueError as error:
            raise click.ClickException(str(error)) from error


def queue_params(func: Callable[..., Any]) -> Callable[..., Any]:
    """Set game parameters for all subcommands."""

    @click.option("--F", "F", type=int, help="Fine")
    @click.option("--Q", "Q", type=int, help="Legal cost of a punishment")
    @click.option("--T", "T", type=int, help="Judiciary period")
    @click.option("--k", "k", type=int, help="Agents punished per round")
    @click.option("--p", "p", type=float, help="Probability of ignorance")
    @click.option("--x", "x", type=int, help="Agents entering per round")
    @click.option("--x0", "x0", type=int, help="Initial agents")
    @click.option("--w", "w", type=int, help="Rounds per episode")
    @click.option("--burn-in", "burn_in", type=int, help="Rounds excluded from steady state")
    @click.option("--seed", type=int, help="Master seed")
    @click.option(
        "--preset",
        type=click.Choice(list(PRESETS)),
        help="Start from a ready-made game; other game options override it",
    )
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Callable[..., Any]:
        return func(*args, **kwargs)

    return wrapper


def output_params(func: Callable[..., Any]) -> Callable[..., Any]:
    """Set output parameters."""

    @click.option(
        "--out",
        type=click.Path(dir_okay=False, path_type=Path),
        help="Output results in this file instead of stdout",
    )
    @click.option("--force", is_flag=True, help="Overwrite already existing output file")
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Callable[..., Any]:
        return func(*args, **kwargs)

    return wrapper


def run_params(func: Callable[..., Any]) -> Callable[..., Any]:
    """Set Monte Carlo parameters."""

    @click.option("--episodes", type=int, default=100, show_default=True, help="Episodes")
    @click.option(
        "--workers",
        type=int,
        default=-1,
        show_default=True,
        help="Parallel workers, -1 for all cores",
    )
    @click.option(
        "--brs-literal-formula",
        is_flag=True,
        help="Measure the movement of the basic rational strategy as n - prev_n",
    )
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Callable[..., Any]:
        return func(*args, **kwargs)

    return wrapper


def resolve_config(options: Dict[str, Any]) -> QueueConfig:
    """Pop game parameters from ``options`` and merge them over the config file.

    The file's ``queue`` section in turn overrides the preset, if one is chosen.
    """
    sections = click.get_current_context().find_root().obj or {}
    preset = options.pop("preset", None)
    values = load_preset(preset).config.to_dict() if preset is not None else {}
    values.update(sections.get("queue", {}))
    for name in QUEUE_OPTIONS:
        value = options.pop(name, None)
        if value is not None:
            values[name] = value
    return QueueConfig.from_dict(values)


def write_run_config(
    out: Optional[Path],
    command: str,
    config: QueueConfig,
    options: Dict[str, Any],
    force: bool,
    learner: Optional[Dict[str, Any]] = None,
) -> None:
    """Store the resolved configuration next to ``out`` so the run can be replayed."""
    if out is None:
        return
    path = check_output(out.with_name(out.name + ".config.yaml"), force)
    record: Dict[str, Any] = {
        "queue": config.to_dict(),
        command: {
            name: str(value) if isinstance(value, Path) else value
            for name, value in options.items()
            if name not in ("out", "force") and value is not None
        },
    }
    if learner is not None:
        record["learner"] = learner
    with open(path, "wt") as handle:
        yaml.safe_dump(record, handle, sort_keys=True)


@click.command(short_help="Play queues and report their revenue")
@queue_params
@output_params
@run_params
@click.option("--strategy", default="brs", show_default=True, help="Strategy of every agent")
@click.option(
    "--log",
    "log_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Write the episode logs to this JSON-lines file",
)
@click.option(
    "--positions",
    "positions_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Write the mean utility of every initial position to this file",
)
def simulate(**options: Any) -> None:
    """Simulate queues where every agent follows one strategy."""
    config = resolve_config(options)
    strategy = strategy_from_spec(options["strategy"], options["brs_literal_formula"])
    profile = as_profile(strategy)

    logs = map_episodes(
        functools.partial(play_episode, config, profile, config.seed),
        options["episodes"],
        options["workers"],
    )
    rows = []
    for episode, log in enumerate(logs):
        total, per_round = revenue(log)
        steady_total, steady_per_round = revenue(log, steady_state=True)
        terminals, _ = log.terminals()
        rows.append(
            (
                config.seed,
                episode,
                len(log.rounds),
                len(terminals),
                total,
                per_round,
                steady_total,
                steady_per_round,
            )
        )

    if options["log_path"] is not None:
        path = check_output(options["log_path"], options["force"])
        with open(path, "wt") as handle:
            for episode, log in enumerate(logs):
                metadata = {"strategy": options["strategy"], "episode": episode}
                for line in iter_episode_log(log, metadata):
                    handle.write(line + "\n")

    summary = pd.DataFrame(
        rows,
        columns=[
            "seed",
            "episode",
            "rounds",
            "terminals",
            "revenue",
            "per_round",
            "steady_revenue",
            "steady_per_round",
        ],
    )
    write_table(summary, options["out"], kind="simulation", force=options["force"])
    if options["positions_path"] is not None:
        table = position_utilities(profile, config, options["episodes"], n_jobs=options["workers"])
        write_table(table, options["positions_path"], kind="positions", force=options["force"])
    write_run_config(options["out"], "simulate", config, options, options["force"])
    click.echo(f"seed: {config.seed}", err=True)


def _echo_value(value: Any) -> None:
    if value is analytic.UNBOUNDED:
        click.echo("UNBOUNDED")
    elif isinstance(value, float):
        click.echo(repr(float(value)))
    else:
        click.echo(value)


@click.command(short_help="Closed forms, scans and exact solutions")
@click.argument("query", type=click.Choice(ANALYTIC_QUERIES))
@queue_params
@output_params
@click.option("--n", type=int, default=1, show_default=True, help="Queue position")
@click.option(
    "--mix-prob",
    type=float,
    default=0.0,
    show_default=True,
    help="Probability of skipping the fine; the risk is that of position --n",
)
@click.option("--n-max", type=int, default=32, show_default=True, help="Largest n of a scan")
@click.option(
    "--p-grid", callback=parse_list(float), default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
)
@click.option("--k-grid", callback=parse_list(int), default="1,2,4")
@click.option("--F-grid", "F_grid", callback=parse_list(float), default="1,2,4,8")
@click.option("--Q-grid", "Q_grid", callback=parse_list(float), default="6,12,24,100")
@click.option(
    "--unconditional", is_flag=True, help="Use the unconditional second-round expectation"
)
@click.option("--members", callback=parse_list(int), help="Coalition positions")
@click.option("--size", type=int, default=1, show_default=True, help="Coalition size")
def analytic_cmd(query: str, **options: Any) -> None:
    """Evaluate an analytic QUERY of the one- and two-sorting games."""
    config = resolve_config(options)
    F, Q, p, k, n = config.F, config.Q, config.p, config.k, options["n"]
    conditional = not options["unconditional"]
    out, force = options["out"], options["force"]

    def alpha_crit_at_n() -> float:
        return analytic.alpha_crit(p, analytic.critical_position_w1(F, Q, p, k), n, k)

    scalars: Dict[str, Callable[[], Any]] = {
        "r": lambda: analytic.critical_position_w1(F, Q, p, k),
        "alpha": lambda: analytic.alpha(p, n, k),
        "alpha-crit": alpha_crit_at_n,
        "chernoff": lambda: analytic.chernoff_bound(p, n, k),
        "payment-w1": lambda: analytic.expected_payment_w1(p, n, k, F, Q),
        "payment-mixed": lambda: analytic.expected_payment_mixed(
            p, options["mix_prob"], alpha_crit_at_n(), F, Q
        ),
        "payment-round2": lambda: analytic.expected_payment_round2(p, n, k, F, Q, conditional),
        "r21": lambda: analytic.critical_position_w2_first(F, Q, p, k, conditional),
        "total-w1": lambda: analytic.total_payment_w1(p, config.x0, k, F, Q),
        "total-w2": lambda: analytic.total_payment_w2_lower(p, k, F, Q),
    }
    tables: Dict[str, Callable[[], pd.DataFrame]] = {
        "chernoff-scan": lambda: analytic.chernoff_scan(options["p_grid"], options["n_max"]),
        "conjecture-scan": lambda: analytic.conjecture_scan(
            options["p_grid"], options["n_max"], options["k_grid"]
        ),
        "proposition-scan": lambda: analytic.proposition_scan(
            options["p_grid"], options["k_grid"], options["n_max"]
        ),
        "doubling-threshold": lambda: analytic.doubling_threshold(
            analytic.proposition_scan(options["p_grid"], options["k_grid"], options["n_max"])
        ),
        "critical-position-scan": lambda: analytic.critical_position_scan(
            options["F_grid"], options["Q_grid"], options["p_grid"], options["k_grid"]
        ),
    }
    kinds = {
        "chernoff-scan": "alpha-scan",
        "conjecture-scan": "alpha-scan",
        "proposition-scan": "proposition-scan",
        "doubling-threshold": "doubling-threshold",
        "critical-position-scan": "critical-position-scan",
    }

    if query in scalars:
        _echo_value(scalars[query]())
    elif query in tables:
        write_table(tables[query](), out, kind=kinds[query], force=force)
    elif query == "two-round":
        solution = analytic.solve_two_rounds(F, Q, p, k, options["n_max"])
        report = dict(vars(solution), gap_holds=solution.gap_holds)
        write_json(report, out, force)
    elif query == "division-compare":
        write_json(analytic.division_compare(F, Q, p, k), out, force)
    elif query == "conjecture":
        write_json(analytic.conjecture_caa_probe(p, n, k), out, force)
    elif query == "brute-force-w1":
        write_json(analytic.brute_force_w1(config.x0, F, Q, p, k), out, force)
    elif query == "brute-force-w2":
        write_json(analytic.brute_force_w2(config.x0, F, Q, p, k), out, force)
    else:
        one_round = config.replace(T=1, w=1, x=0)
        write_json(
            analytic.coalition_analysis(one_round, options["size"], options["members"]), out, force
        )


@click.command(short_help="Iterated best response with NashConv tracking")
@queue_params
@output_params
@run_params
@click.option("--iterations", type=int, default=10, show_default=True, help="Outer iterations")
@click.option("--seeds", callback=parse_list(int), help="Comma separated seeds, one run each")
@click.option("--rho", type=float, default=0.05, show_default=True, help="Fraction of deviators")
@click.option("--learner-fraction", type=float, help="Train against the previous policy")
@click.option(
    "--checkpoint-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("checkpoints"),
    show_default=True,
    help="Directory of policy checkpoints",
)
@click.option(
    "--summary",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Write NashConv averaged over seeds to this file",
)
@click.option("--n-epochs", type=int, help="Collect-and-update cycles per iteration")
@click.option("--n-train", type=int, help="Minibatch updates per cycle")
@click.option("--buffer-size", type=int, help="Transitions per cycle")
@click.option("--optimizer", type=click.Choice(["sgd", "adam"]), help="Optimizer")
@click.option("--actor-lr", type=float, help="Actor step size")
@click.option("--critic-lr", type=float, help="Critic step size")
def train_cmd(**options: Any) -> None:
    """Train policies by iterated best response."""
    config = resolve_config(options)
    sections = click.get_current_context().find_root().obj or {}
    hyper_values = dict(sections.get("learner", {}))
    for name in LEARNER_OPTIONS:
        value = options.pop(name, None)
        if value is not None:
            hyper_values[name] = value
    hyper = Hyperparams.from_dict(hyper_values)

    seeds = options["seeds"] or [config.seed]
    histories = []
    diverged = []
    for seed in seeds:
        directory = options["checkpoint_dir"]
        if len(seeds) > 1:
            directory = directory / f"seed-{seed}"
        result = train(
            config.replace(seed=seed),
            hyper,
            options["iterations"],
            seed=seed,
            rho=options["rho"],
            episodes=options["episodes"],
            learner_fraction=options["learner_fraction"],
            checkpoint_dir=directory,
            n_jobs=options["workers"],
        )
        history = result.history.assign(status=result.status)
        histories.append(history)
        if result.status != "complete":
            diverged.append(seed)

    history = pd.concat(histories, ignore_index=True)
    write_table(history, options["out"], kind="nashconv", force=options["force"])
    if options["summary"] is not None:
        write_table(
            summarize_seeds(history),
            options["summary"],
            kind="nashconv-summary",
            force=options["force"],
        )
    write_run_config(
        options["out"], "train", config, options, options["force"], learner=hyper.to_dict()
    )
    if diverged:
        raise click.ClickException(
            f"Training diverged for seed(s) {', '.join(map(str, diverged))}; "
            "results are incomplete."
        )


def summarize_seeds(history: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard error of NashConv over seeds, per iteration."""
    grouped = history.groupby("iteration", sort=True)["nashconv"]
    summary = grouped.agg(["mean", "std", "count"]).reset_index()
    stderr = summary["std"].fillna(0.0) / np.sqrt(summary["count"])
    return pd.DataFrame(
        {
            "iteration": summary["iteration"],
            "mean": summary["mean"],
            "stderr": stderr,
            "seeds": summary["count"],
        }
    )


@click.command(short_help="Utility gain of switching to a new strategy")
@queue_params
@output_params
@run_params
@click.option("--old", default="uniform", show_default=True, help="Strategy of the population")
@click.option("--new", default="crit1", show_default=True, help="Strategy of the deviators")
@click.option("--rho", type=float, default=0.05, show_default=True, help="Fraction of deviators")
@click.option("--unpaired", is_flag=True, help="Estimate the baseline on independent streams")
def nashconv_cmd(**options: Any) -> None:
    """Estimate NashConv of the OLD strategy against the NEW one."""
    config = resolve_config(options)
    literal = options["brs_literal_formula"]
    estimate = nashconv(
        strategy_from_spec(options["old"], literal),
        strategy_from_spec(options["new"], literal),
        options["rho"],
        config,
        options["episodes"],
        paired=not options["unpaired"],
        n_jobs=options["workers"],
    )
    report = {
        "config": config.to_dict(),
        "old": options["old"],
        "new": options["new"],
        "rho": options["rho"],
        "paired": not options["unpaired"],
        "estimate": estimate.to_dict(),
    }
    write_json(report, options["out"], options["force"])


@click.command(short_help="Revenue sweeps: avalanche effect and division problem")
@queue_params
@output_params
@run_params
@click.option(
    "--sweep",
    "sweep_kind",
    type=click.Choice(["avalanche", "division"]),
    default="avalanche",
    show_default=True,
)
@click.option("--axis", type=click.Choice(["p", "x"]), default="p", show_default=True)
@click.option("--mode", type=click.Choice(["time", "group"]), default="time", show_default=True)
@click.option(
    "--capacity",
    type=click.Choice(["fixed_capacity", "fixed_k"]),
    default="fixed_capacity",
    show_default=True,
)
@click.option(
    "--grid", callback=parse_list(float), default="0.9,0.7,0.5,0.3,0.1", show_default=True
)
@click.option("--strategies", callback=parse_list(str), default="brs", show_default=True)
@click.option("--steady-state/--horizon", default=None, help="Count only steady-state revenue")
@click.option(
    "--trend",
    "trend_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Write rank correlations to this file",
)
def sweep(**options: Any) -> None:
    """Sweep a game parameter and estimate revenue of every strategy."""
    config = resolve_config(options)
    literal = options["brs_literal_formula"]
    profiles = {name: strategy_from_spec(name, literal) for name in options["strategies"]}
    grid = options["grid"]

    if options["sweep_kind"] == "avalanche":
        table = avalanche_sweep(
            config,
            options["axis"],
            grid,
            profiles,
            options["episodes"],
            steady_state=bool(options["steady_state"]),
            n_jobs=options["workers"],
        )
    else:
        if any(value != int(value) for value in grid):
            raise ValidationError(f"Division grid must hold integers, got {grid}.")
        table = division_sweep(
            config,
            options["mode"],
            [int(value) for value in grid],
            profiles,
            options["episodes"],
            capacity=options["capacity"],
            steady_state=options["steady_state"] is not False,
            n_jobs=options["workers"],
        )

    write_table(table, options["out"], kind="sweep", force=options["force"])
    if options["trend_path"] is not None:
        write_table(trend(table), options["trend_path"], kind="trend", force=options["force"])
    write_run_config(options["out"], "sweep", config, options, options["force"])


@click.command(short_help="Deviation gain of a cost-sharing coalition")
@queue_params
@output_params
@run_params
@click.option("--size", type=int, default=2, show_default=True, help="Coalition size")
@click.option("--members", callback=parse_list(int), help="Positions of the members")
@click.option("--others", default="crit1", show_default=True, help="Strategy of everyone else")
@click.option("--exact/--monte-carlo", default=None, help="Force the solution method")
def coalition(**options: Any) -> None:
    """Check that some coalition member gains by leaving."""
    config = resolve_config(options)
    others = options["others"]
    if others != "crit1":
        others = strategy_from_spec(others, options["brs_literal_formula"])
    report = coalition_check(
        config,
        options["size"],
        options["episodes"],
        members=options["members"],
        others=others,
        exact=options["exact"],
        n_jobs=options["workers"],
    )
    report.config = config.to_dict()
    write_json(report, options["out"], options["force"])


SUBCOMMANDS: Dict[str, click.Command] = {
    "simulate": simulate,
    "analytic": analytic_cmd,
    "train": train_cmd,
    "nashconv": nashconv_cmd,
    "sweep": sweep,
    "coalition": coalition,
}


def check_sections(sections: Dict[str, Dict[str, Any]]) -> None:
    """Reject keys that no option of the corresponding subcommand accepts."""
    if "queue" in sections:
        QueueConfig.from_dict(sections["queue"])
    if "learner" in sections:
        Hyperparams.from_dict(sections["learner"])
    for name, command in SUBCOMMANDS.items():
        accepted = {param.name for param in command.params}
        unknown = sorted(set(sections.get(name, {})) - accepted)
        if unknown:
            raise ValidationError(f"Unknown option(s) in section {name}: {', '.join(unknown)}.")


@click.group(cls=QueueGroup, context_settings={"auto_envvar_prefix": "FINEQUEUE"})
@click.option("-v", "--verbose", count=True, help="Log INFO messages, twice for DEBUG")
@click.option(
    "--config",
    "config_file",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="YAML run configuration",
)
@click.pass_context
def main(ctx: click.Context, verbose: int, config_file: Optional[Path]) -> None:
    """Simulate, solve and learn the fine-collection Queue."""
    configure_logging(verbose)
    sections = read_config_file(config_file) if config_file is not None else {}
    check_sections(sections)
    ctx.obj = sections
    ctx.default_map = {name: sections[name] for name in SUBCOMMANDS if name in sections}


# Add sub-commands to the main command
for _name, _command in SUBCOMMANDS.items():
    main.add_command(_command, name=_name)
