"""Command line entry point: ``episurv {simulate,fit,summarize,validate,weights}``.

Settings come from a flat TOML file (``--config``) and ``--set key=value``
overrides, where the value uses TOML syntax (``--set p_sens=0.6``,
``--set prior='"beta_process"'``); bare words are taken as strings. Path
flags such as ``--out`` override the matching keys too.

Exit codes: 0 success, 1 usage or configuration error, 2 input validation
failure or a failed ``validate`` check, 3 sampler failure. A fit whose
largest R-hat exceeds 1.01 still exits 0 but prints a warning.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import tomli

from . import io
from .core import ConfigurationError, DomainError, detection_weights
from .estimator import ModelConfig, check_dataset
from .likelihood import EvaluationError
from .sampler import (
    DivergenceWarning,
    InitializationError,
    SamplerConfig,
    diagnostics,
    sample,
    summarize_survival,
)
from .simulator import (
    InsufficientDetectionsError,
    SensitivityScenario,
    TruthDistribution,
    survey_schedules,
    geometric_with_bump,
    simulate,
)
from .validation import run_all

EXIT_OK, EXIT_CONFIG, EXIT_INVALID, EXIT_SAMPLER = 0, 1, 2, 3
RHAT_WARN = 1.01

logger = logging.getLogger("episurv")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Every setting a command may read; unknown keys are rejected."""

    # paths
    schedules: Optional[str] = None
    episodes: Optional[str] = None
    prior_file: Optional[str] = None
    truth: Optional[str] = None
    draws_file: Optional[str] = None
    out: str = "."
    # model
    p_sens: float = 0.8
    mu: Optional[float] = None
    r: float = 1.0
    detect_fraction: Optional[float] = None
    b_min: Optional[int] = None
    b_max: Optional[int] = None
    prior: str = "weak"
    alpha0: float = 0.1
    beta0: float = 1.9
    d_max: Optional[int] = None
    period_end: int = 58
    # sampler
    algorithm: str = "nuts"
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    seed: int = 1
    metric: str = "diag"
    n_leapfrog: int = 24
    max_depth: int = 10
    target_accept: float = 0.8
    # simulate
    n_schedules: int = 20000
    n_d: int = 500
    sim_sensitivity: str = "constant"
    sim_p_sens: float = 0.8
    pre_period: int = 100
    truth_p: float = 0.08
    truth_bump_center: float = 35.0
    truth_bump_width: float = 6.0
    truth_bump_weight: float = 0.1
    truth_max_duration: int = 100
    # validate
    n_cases: int = 100

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        clean = {}
        for key, value in values.items():
            clean[key] = _coerce(key, value, known[key].type)
        return cls(**clean)

    def model(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def sampler(self) -> SamplerConfig:
        try:
            return SamplerConfig(
                algorithm=self.algorithm,
                chains=self.chains,
                warmup=self.warmup,
                draws=self.draws,
                seed=self.seed,
                metric=self.metric,
                n_leapfrog=self.n_leapfrog,
                max_depth=self.max_depth,
                target_accept=self.target_accept,
            )
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None


def _coerce(key, value, type_name: str):
    base = type_name.replace("Optional[", "").rstrip("]")
    if value is None:
        if "Optional" not in type_name:
            raise ConfigurationError(f"{key} may not be empty")
        return None
    if base == "float" and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if base == "int" and isinstance(value, int) and not isinstance(value, bool):
        return value
    if base == "str" and isinstance(value, str):
        return value
    raise ConfigurationError(f"{key} must be of type {base}, got {value!r}")


def _parse_override(text: str) -> tuple:
    if "=" not in text:
        raise UsageError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        value = raw
    return key, value


def load_config(path: Optional[str], overrides: dict) -> RunConfig:
    values = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file {path} does not exist")
        try:
            values = tomli.loads(p.read_text())
        except tomli.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        nested = [k for k, v in values.items() if isinstance(v, dict)]
        if nested:
            raise ConfigurationError(f"{path}: config must be flat, found tables {nested}")
        base = p.parent
        for key in ("schedules", "episodes", "prior_file", "truth", "draws_file", "out"):
            if isinstance(values.get(key), str) and not Path(values[key]).is_absolute():
                values[key] = str(base / values[key])
    values.update(overrides)
    return RunConfig.from_mapping(values)


def _require(cfg: RunConfig, *keys) -> None:
    missing = [k for k in keys if getattr(cfg, k) is None]
    if missing:
        raise ConfigurationError(f"missing setting(s): {', '.join(missing)}")
    for k in keys:
        if k != "out" and not Path(getattr(cfg, k)).is_file():
            raise ConfigurationError(f"{k}: file {getattr(cfg, k)} does not exist")


def _truth(cfg: RunConfig) -> TruthDistribution:
    if cfg.truth is not None:
        return TruthDistribution(io.load_truth(cfg.truth))
    return geometric_with_bump(
        cfg.truth_p,
        cfg.truth_bump_center,
        cfg.truth_bump_width,
        cfg.truth_bump_weight,
        cfg.truth_max_duration,
    )


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.sim_sensitivity not in ("constant", "varying"):
        raise ConfigurationError("sim_sensitivity must be 'constant' or 'varying'")
    out = Path(cfg.out)
    truth = _truth(cfg)
    scenario = (
        SensitivityScenario.varying()
        if cfg.sim_sensitivity == "varying"
        else SensitivityScenario.constant(cfg.sim_p_sens)
    )
    sched_seed, sim_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    schedules = survey_schedules(
        cfg.n_schedules, np.random.default_rng(sched_seed), period_end=cfg.period_end
    )
    result = simulate(
        schedules, truth, scenario, cfg.n_d, sim_seed, cfg.period_end, cfg.pre_period
    )
    io.write_dataset(out, result.dataset)
    io.write_truth(out / "truth.csv", truth.pmf)
    io.write_latent(out / "latent.csv", result.latent)
    b_lo, b_hi = result.start_range
    info = {
        "n_schedules": cfg.n_schedules,
        "n_d": cfg.n_d,
        "n_retained": result.n_retained,
        "retained_fraction": float(result.retained_fraction),
        "b_min": b_lo,
        "b_max": b_hi,
        "period_end": cfg.period_end,
        "d_max": result.dataset.max_span(),
    }
    io.write_key_values(out / "simulation.csv", info)
    # a ready-to-run fit config matching the simulation
    p = cfg.sim_p_sens if scenario.kind == "constant" else cfg.p_sens
    lines = [
        'schedules = "schedules.csv"',
        'episodes = "episodes.csv"',
        f"period_end = {cfg.period_end}",
        f"b_min = {b_lo}",
        f"b_max = {b_hi}",
        f"p_sens = {float(p)!r}",
        f"detect_fraction = {float(result.retained_fraction)!r}",
        "r = 1.0",
    ]
    (out / "fit.toml").write_text("\n".join(lines) + "\n")
    print(f"simulated {cfg.n_d} episodes from {cfg.n_schedules} schedules into {out}")
    return EXIT_OK


def _load_data(cfg: RunConfig):
    _require(cfg, "schedules", "episodes")
    schedules = io.load_schedules(cfg.schedules)
    data = io.load_episodes(cfg.episodes, schedules, cfg.period_end)
    return check_dataset(data)


def cmd_fit(cfg: RunConfig) -> int:
    data = _load_data(cfg)
    model = cfg.model()
    sampler = cfg.sampler()
    post = model.posterior(data)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DivergenceWarning)
        draws = sample(post, sampler)
    out = Path(cfg.out)
    io.write_draws(out / "draws.csv", draws)
    diag = diagnostics(draws)
    io.write_rows(
        out / "diagnostics.csv",
        ["parameter", "rhat", "ess_bulk"],
        ((name, d["rhat"], d["ess_bulk"]) for name, d in diag.items()),
    )
    rhats = np.array([d["rhat"] for d in diag.values()], dtype=float)
    max_rhat = float(np.nanmax(rhats)) if np.any(np.isfinite(rhats)) else float("nan")
    print(f"fit: {len(draws.lp)} draws, d_max {post.d_max}, max R-hat {max_rhat:.4f}")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if max_rhat > RHAT_WARN:
        print(f"warning: max R-hat {max_rhat:.4f} exceeds {RHAT_WARN}", file=sys.stderr)
    return EXIT_OK


def cmd_summarize(cfg: RunConfig) -> int:
    path = cfg.draws_file or str(Path(cfg.out) / "draws.csv")
    if not Path(path).is_file():
        raise ConfigurationError(f"draws file {path} does not exist")
    draws = io.load_draws(path)
    summary = summarize_survival(draws)
    out = Path(cfg.out)
    io.write_survival(out / "survival.csv", summary)
    io.write_key_values(out / "mean_duration.csv", summary.mean_duration_summary())
    md = summary.mean_duration_summary()
    print(f"mean duration {md['median']!r} (95% {md['lo95']!r} to {md['hi95']!r})")
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    results = run_all(cfg.n_cases, cfg.seed)
    out = Path(cfg.out)
    io.write_rows(
        out / "validation.csv",
        ["check", "n_cases", "max_abs_dev", "tolerance", "passed"],
        ((r.name, r.n_cases, float(r.max_abs_dev), r.tolerance, int(r.passed)) for r in results),
    )
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: max |dev| {float(r.max_abs_dev):.3e}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def cmd_weights(cfg: RunConfig) -> int:
    _require(cfg, "schedules")
    schedules = io.load_schedules(cfg.schedules)
    if cfg.d_max is not None:
        d_max = cfg.d_max
    elif cfg.episodes is not None:
        d_max = io.load_episodes(cfg.episodes, schedules, cfg.period_end).max_span()
    else:
        raise ConfigurationError("weights needs d_max or an episodes file")
    window = cfg.model().window(cfg.period_end)
    w = detection_weights(schedules, window, d_max, cfg.period_end)
    io.write_weights(Path(cfg.out) / "weights.csv", w)
    print(f"weights for {w.n_schedules} schedules, window {window.b_min}..{window.b_max}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "summarize": cmd_summarize,
    "validate": cmd_validate,
    "weights": cmd_weights,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="episurv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat TOML settings file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        if name in ("fit", "weights"):
            p.add_argument("--schedules")
            p.add_argument("--episodes")
        if name == "summarize":
            p.add_argument("--draws", dest="draws_file")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
        overrides = dict(_parse_override(s) for s in args.set)
        for key in ("out", "seed", "schedules", "episodes", "draws_file"):
            value = getattr(args, key, None)
            if value is not None:
                overrides[key] = value
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (io.ParseError, DomainError, InsufficientDetectionsError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InitializationError, EvaluationError) as exc:
        print(f"sampler failure: {exc}", file=sys.stderr)
        return EXIT_SAMPLER


if __name__ == "__main__":
    sys.exit(main())
