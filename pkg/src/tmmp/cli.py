"""Command-line interface: simulate, fit, project, validate, compare.

Every stochastic command requires an explicit --seed and writes only
into its --out directory, so pipelines are reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from .datamodel import DataModelSpec
from .errors import SpecError, TmmpError
from .hierarchy import Fixed, sample_from_prior
from .inference import fit_conjugate, fit_mcmc, summarize
from .io import (
    fmt,
    quantile_label,
    read_covariates,
    read_groupings,
    read_observations,
    read_offsets,
    write_rows,
)
from .modelspec import DataBindings, compare_specs, compile_spec, parse_spec, validate_spec
from .process import Link, project_default, project_pooled, simulate

_DEFAULT_QUANTILES = (0.025, 0.1, 0.5, 0.9, 0.975)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except SpecError as exc:
        for finding in exc.findings:
            print(finding, file=sys.stderr)
        return 1
    except TmmpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tmmp",
        description="Temporal models for multiple populations: simulate, fit, project, validate, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_io(p, seed=True):
        p.add_argument("--spec", required=True, help="model specification (.tmmp) file")
        p.add_argument("--covariates", help="covariates CSV (population,time,name,value)")
        p.add_argument("--offsets", help="offsets CSV (population,time,value)")
        p.add_argument("--groupings", help="groupings CSV (population,level1_group,...)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", required=seed, type=int, help="random seed")
        p.add_argument("--populations", help="comma-separated population ids (when not inferable)")
        p.add_argument("--times", help="time grid START:END[:STEP]")

    p_sim = sub.add_parser("simulate", help="draw parameters from priors and synthesize data")
    add_io(p_sim)
    p_sim.add_argument("--obs-variance", type=float, default=0.01,
                       help="sampling variance of synthetic observations (transformed scale)")
    p_sim.set_defaults(handler=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit a specification to observations")
    add_io(p_fit)
    p_fit.add_argument("--obs", required=True, help="observations CSV")
    p_fit.add_argument("--chains", type=int, default=4)
    p_fit.add_argument("--iters", type=int, default=1000)
    p_fit.add_argument("--warmup", type=int, default=1000)
    p_fit.add_argument("--quantiles", default=",".join(str(q) for q in _DEFAULT_QUANTILES))
    p_fit.set_defaults(handler=cmd_fit)

    p_proj = sub.add_parser("project", help="project a fitted model forward")
    add_io(p_proj)
    p_proj.add_argument("--obs", help="observations CSV (accepted for pipeline symmetry; "
                                      "the grid comes from the fit outputs)")
    p_proj.add_argument("--t-star", required=True, type=float, dest="t_star",
                        help="end of the projection period")
    p_proj.add_argument("--proj-mode", choices=("default", "pooled"), dest="proj_mode")
    p_proj.add_argument("--W", type=float, help="pooling weight in [0, 1]")
    p_proj.add_argument("--G", type=float, help="pooled global mean")
    p_proj.add_argument("--V", type=float, help="pooled global variance")
    p_proj.add_argument("--draws", type=int, help="number of projection draws (default: fitted draws)")
    p_proj.add_argument("--quantiles", default=",".join(str(q) for q in _DEFAULT_QUANTILES))
    p_proj.set_defaults(handler=cmd_project)

    p_val = sub.add_parser("validate", help="check a specification file")
    p_val.add_argument("spec", help="specification (.tmmp) file")
    p_val.set_defaults(handler=cmd_validate)

    p_cmp = sub.add_parser("compare", help="side-by-side template comparison")
    p_cmp.add_argument("specs", nargs="+", help="two or more specification files")
    p_cmp.add_argument("--out", help="directory for comparison.csv (optional)")
    p_cmp.set_defaults(handler=cmd_compare)
    return parser


# ------------------------------------------------------------------ shared


def _parse_quantiles(text) -> tuple:
    return tuple(float(q) for q in text.split(",") if q.strip())


def _load_spec(path):
    path = Path(path)
    if not path.exists():
        raise TmmpError(f"spec file not found: {path}")
    return parse_spec(path.read_text("utf-8"))


def _resolve_grid(args, observations=None, covariates=None):
    populations = None
    if args.populations:
        populations = tuple(p.strip() for p in args.populations.split(",") if p.strip())
    times = None
    if args.times:
        parts = [float(x) for x in args.times.split(":")]
        if len(parts) == 2:
            start, end, step = parts[0], parts[1], 1.0
        elif len(parts) == 3:
            start, end, step = parts
        else:
            raise TmmpError("--times expects START:END[:STEP]")
        n = int(np.floor((end - start) / step + 1e-9)) + 1
        times = start + step * np.arange(n)
    pops = set(populations or ())
    if populations is None:
        if observations:
            pops.update(o.population for o in observations)
        if covariates:
            for table in covariates.values():
                pops.update(table.populations)
    if times is None:
        if covariates:
            times = next(iter(covariates.values())).times
        elif observations:
            obs_times = sorted({o.time for o in observations})
            if len(obs_times) == 1:
                times = np.array(obs_times)
            else:
                step = min(np.diff(obs_times))
                n = int(round((obs_times[-1] - obs_times[0]) / step)) + 1
                times = obs_times[0] + step * np.arange(n)
        else:
            raise TmmpError("cannot infer the time grid; pass --times START:END[:STEP]")
    if not pops:
        raise TmmpError("cannot infer populations; pass --populations")
    return tuple(sorted(pops)), np.asarray(times, dtype=float)


def _load_data(args, observations=None):
    covariates = read_covariates(args.covariates) if args.covariates else None
    offsets = read_offsets(args.offsets) if args.offsets else None
    groupings = read_groupings(args.groupings) if args.groupings else None
    populations, times = _resolve_grid(args, observations, covariates)
    return DataBindings(populations, times, covariates=covariates,
                        offsets=offsets, groupings=groupings)


def _kernel_with(kernel, field_values: dict):
    from dataclasses import fields as dc_fields, replace

    valid = {f.name for f in dc_fields(kernel)}
    return replace(kernel, **{k: v for k, v in field_values.items() if k in valid})


def _kernels_by_population(compiled, params, populations):
    base = compiled.model.smoother.kernel
    out = []
    for c, _ in enumerate(populations):
        fields = {}
        for fld, symbol in compiled.setup.kernel_map.items():
            value = params[symbol]
            fields[fld] = float(value[c]) if np.ndim(value) else float(value)
        out.append(_kernel_with(base, fields) if fields else base)
    return out


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    spec = _load_spec(args.spec)
    bindings = _load_data(args)
    compiled = compile_spec(spec, bindings)
    model = compiled.model
    seeds = np.random.SeedSequence(args.seed).spawn(len(compiled.setup.bindings) + 2)
    params = {}
    for i, (symbol, strategy) in enumerate(sorted(compiled.setup.bindings.items())):
        role = compiled.setup.roles.get(symbol, "shared")
        if role == "population":
            values, _ = sample_from_prior(strategy, seeds[i], model.populations)
            params[symbol] = values
        elif role == "vector":
            length = compiled.setup.vector_lengths.get(symbol, 1)
            values, _ = sample_from_prior(strategy, seeds[i], [f"k{j}" for j in range(length)])
            params[symbol] = values
        elif role == "population_time_vector":
            n_cov = len(spec.covariate_names)
            T = model.times.size
            block = np.empty((len(model.populations), T, n_cov))
            child = seeds[i].spawn(T * n_cov)
            for t in range(T):
                for k in range(n_cov):
                    block[:, t, k], _ = sample_from_prior(
                        strategy, child[t * n_cov + k], model.populations
                    )
            params[symbol] = block
        else:
            values, _ = sample_from_prior(strategy, seeds[i], ["shared"])
            params[symbol] = float(values[0])
    kernels = _kernels_by_population(compiled, params, model.populations)
    eta, epsilon, delta = simulate(model, params, bindings.covariates, kernels, seeds[-2])
    out = Path(args.out)
    write_rows(
        out / "eta.csv",
        ["population", "time", "eta"],
        [
            (pop, t, eta[c, j])
            for c, pop in enumerate(model.populations)
            for j, t in enumerate(model.times)
        ],
    )
    datamodel = DataModelSpec(Link(spec.link_name))
    rng = np.random.default_rng(seeds[-1])
    obs_rows = []
    for c, pop in enumerate(model.populations):
        for j, t in enumerate(model.times):
            center = float(datamodel.transformation.apply(eta[c, j]))
            noisy = center + np.sqrt(args.obs_variance) * rng.standard_normal()
            value = float(datamodel.transformation.inverse(noisy))
            obs_rows.append((pop, t, value, args.obs_variance, "synthetic"))
    write_rows(
        out / "observations.csv",
        ["population", "time", "value", "sampling_variance", "source"],
        obs_rows,
    )
    print(f"simulated {len(obs_rows)} observations over {len(model.populations)} "
          f"populations x {model.times.size} times (seed {args.seed})")
    return 0


# --------------------------------------------------------------------- fit


def _conjugate_eligible(compiled, datamodel) -> bool:
    if compiled.setup.free_symbols():
        return False
    if compiled.model.systematic.recursive:
        return False
    return datamodel.transformation.name == compiled.model.link.name


def cmd_fit(args) -> int:
    spec = _load_spec(args.spec)
    observations = read_observations(args.obs)
    bindings = _load_data(args, observations)
    compiled = compile_spec(spec, bindings)
    model = compiled.model
    datamodel = DataModelSpec(Link(spec.link_name))
    quantiles = _parse_quantiles(args.quantiles)
    if _conjugate_eligible(compiled, datamodel):
        params = {s: strat.value for s, strat in compiled.setup.bindings.items()
                  if s not in compiled.setup.kernel_map.values()}
        kernel_values = {s: compiled.setup.bindings[s].value
                         for s in compiled.setup.kernel_map.values()
                         if s in compiled.setup.bindings}
        kernels = _kernels_by_population(compiled, {**params, **kernel_values}, model.populations)
        result = fit_conjugate(
            model, observations, datamodel, params=params, kernels=kernels,
            covariates=bindings.covariates, n_draws=args.chains * args.iters, seed=args.seed,
        )
        mode = "conjugate"
    else:
        result = fit_mcmc(
            model, observations, datamodel, compiled.setup,
            chains=args.chains, iterations=args.iters, warmup=args.warmup,
            seed=args.seed, covariates=bindings.covariates,
        )
        mode = "mcmc"
    out = Path(args.out)
    _write_fit_outputs(out, result, quantiles)
    bad = {
        name: rhat
        for name, (rhat, _) in result.diagnostics.items()
        if np.isfinite(rhat) and rhat > 1.1
    }
    print(f"fit ({mode}): {result.n_draws} draws, outputs in {out}")
    if bad:
        worst = max(bad.items(), key=lambda kv: kv[1])
        print(f"convergence failure: split-rhat {worst[1]:.3f} for {worst[0]}", file=sys.stderr)
        return 2
    return 0


def _write_fit_outputs(out: Path, result, quantiles) -> None:
    draw_rows = []
    for name, series in result.scalar_series().items():
        for chain in range(series.shape[0]):
            for it in range(series.shape[1]):
                draw_rows.append((name, chain, it, series[chain, it]))
    chains, iters, C, K = result.delta.shape
    for chain in range(chains):
        for it in range(iters):
            for c in range(C):
                for k in range(K):
                    draw_rows.append(
                        (f"delta[{result.populations[c]}][{k}]", chain, it,
                         result.delta[chain, it, c, k])
                    )
    write_rows(out / "draws.csv", ["parameter", "chain", "iteration", "value"], draw_rows)
    eta = result.flat_eta()
    write_rows(
        out / "eta_draws.csv",
        ["population", "time", "draw", "eta"],
        [
            (pop, t, n, eta[n, c, j])
            for c, pop in enumerate(result.populations)
            for j, t in enumerate(result.times)
            for n in range(eta.shape[0])
        ],
    )
    summary = summarize(result, quantiles)
    header = ["population", "time"] + [quantile_label(q) for q in quantiles]
    rows = []
    for c, pop in enumerate(result.populations):
        for j, t in enumerate(result.times):
            rows.append([pop, t] + list(summary["eta"][c, j]))
    write_rows(out / "summary.csv", header, rows)
    lines = ["parameter,rhat,ess"]
    for name, (rhat, ess) in sorted(result.diagnostics.items()):
        lines.append(f"{name},{fmt(rhat)},{fmt(ess)}")
    (out / "diagnostics.csv").write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------------- project


def _read_fit_state(out: Path, compiled, populations, times):
    """Rebuild a FittedState from a fit directory's CSV outputs."""
    from .process import FittedState

    draws_path = out / "draws.csv"
    eta_path = out / "eta_draws.csv"
    for path in (draws_path, eta_path):
        if not path.exists():
            raise TmmpError(f"fit output not found: {path} (run 'tmmp fit' first)")
    series: dict[str, dict] = {}
    n_chains = 0
    n_iters = 0
    import csv as _csv

    with draws_path.open(newline="") as handle:
        for row in _csv.DictReader(handle):
            name = row["parameter"]
            chain, it = int(row["chain"]), int(row["iteration"])
            n_chains = max(n_chains, chain + 1)
            n_iters = max(n_iters, it + 1)
            series.setdefault(name, {})[(chain, it)] = float(row["value"])
    n = n_chains * n_iters

    def flat(name):
        values = series[name]
        return np.array(
            [values[(chain, it)] for chain in range(n_chains) for it in range(n_iters)]
        )

    delta_pattern = re.compile(r"^delta\[(?P<pop>.*)\]\[(?P<k>\d+)\]$")
    K = 1 + max(
        int(m.group("k")) for m in (delta_pattern.match(s) for s in series) if m
    )
    delta = np.empty((n, len(populations), K))
    for c, pop in enumerate(populations):
        for k in range(K):
            delta[:, c, k] = flat(f"delta[{pop}][{k}]")
    eta = np.empty((n, len(populations), times.size))
    with eta_path.open(newline="") as handle:
        pop_idx = {p: i for i, p in enumerate(populations)}
        time_idx = {fmt(t): j for j, t in enumerate(times)}
        for row in _csv.DictReader(handle):
            c = pop_idx[row["population"]]
            j = time_idx.get(fmt(float(row["time"])))
            if j is None:
                raise TmmpError(f"eta draw at unexpected time {row['time']}")
            eta[int(row["draw"]), c, j] = float(row["eta"])

    params = {}
    for symbol in compiled.setup.bindings:
        role = compiled.setup.roles.get(symbol, "shared")
        if role == "population":
            cols = [f"{symbol}[{pop}]" for pop in populations]
            if all(c in series for c in cols):
                params[symbol] = np.column_stack([flat(c) for c in cols])
            elif symbol in series:
                params[symbol] = np.column_stack([flat(symbol)] * len(populations))
            else:
                params[symbol] = np.full((n, len(populations)), _fixed_value(compiled, symbol))
        elif role == "vector":
            length = compiled.setup.vector_lengths.get(symbol, 1)
            cols = [f"{symbol}[{k}]" for k in range(length)]
            if all(c in series for c in cols):
                params[symbol] = np.column_stack([flat(c) for c in cols])
            else:
                params[symbol] = np.full((n, length), _fixed_value(compiled, symbol))
        else:
            if symbol in series:
                params[symbol] = flat(symbol)
            else:
                params[symbol] = np.full(n, _fixed_value(compiled, symbol))
    kernels = []
    for j in range(n):
        row_params = {s: (v[j] if np.ndim(v) else v) for s, v in params.items()}
        kernels.append(_kernels_by_population(compiled, row_params, populations))
    return FittedState(populations, times, delta, eta, params=params, kernels=kernels)


def _fixed_value(compiled, symbol):
    strategy = compiled.setup.bindings[symbol]
    if isinstance(strategy, Fixed):
        return strategy.value
    raise TmmpError(f"fit outputs do not contain draws for '{symbol}'")


def _read_fit_grid(eta_path: Path):
    import csv as _csv

    populations, times = set(), set()
    with eta_path.open(newline="") as handle:
        for row in _csv.DictReader(handle):
            populations.add(row["population"])
            times.add(float(row["time"]))
    return tuple(sorted(populations)), np.array(sorted(times))


def cmd_project(args) -> int:
    spec = _load_spec(args.spec)
    out = Path(args.out)
    eta_path = out / "eta_draws.csv"
    if not eta_path.exists():
        raise TmmpError(f"fit output not found: {eta_path} (run 'tmmp fit' first)")
    # the estimation grid is whatever the fit ran on, not the (possibly
    # longer) grid spanned by projection covariates
    populations, times = _read_fit_grid(eta_path)
    bindings = DataBindings(
        populations,
        times,
        covariates=read_covariates(args.covariates) if args.covariates else None,
        offsets=read_offsets(args.offsets) if args.offsets else None,
        groupings=read_groupings(args.groupings) if args.groupings else None,
    )
    compiled = compile_spec(spec, bindings)
    model = compiled.model
    state = _read_fit_state(out, compiled, model.populations, model.times)
    quantiles = _parse_quantiles(args.quantiles)
    n_draws = args.draws or state.n_draws
    mode = args.proj_mode
    if mode is None:
        mode = "pooled" if compiled.projection.name == "pooled" else "default"
    if mode == "pooled":
        settings = compiled.projection.kwargs()
        W = args.W if args.W is not None else settings.get("W")
        G = args.G if args.G is not None else settings.get("G")
        V = args.V if args.V is not None else settings.get("V")
        if W is None or G is None or V is None:
            raise TmmpError("pooled projection needs --W, --G and --V (or spec defaults)")
        result = project_pooled(
            model, state, args.t_star, W=float(W), G=float(G), V=float(V),
            n_draws=n_draws, seed=args.seed, covariates=bindings.covariates,
        )
    else:
        result = project_default(
            model, state, args.t_star, n_draws=n_draws, seed=args.seed,
            covariates=bindings.covariates,
        )
    write_rows(
        out / "projection_draws.csv",
        ["population", "time", "draw", "eta"],
        [
            (pop, t, j, result.eta[j, c, p])
            for c, pop in enumerate(model.populations)
            for p, t in enumerate(result.times)
            for j in range(result.eta.shape[0])
        ],
    )
    header = ["population", "time"] + [quantile_label(q) for q in quantiles]
    rows = []
    if result.times.size:
        grid = np.quantile(result.eta, quantiles, axis=0)
        for c, pop in enumerate(model.populations):
            for p, t in enumerate(result.times):
                rows.append([pop, t] + [grid[qi, c, p] for qi in range(len(quantiles))])
    write_rows(out / "projection_summary.csv", header, rows)
    print(f"projected {result.eta.shape[0]} draws to {fmt(args.t_star)} ({mode}), outputs in {out}")
    return 0


# ---------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    path = Path(args.spec)
    if not path.exists():
        print(f"error: spec file not found: {path}", file=sys.stderr)
        return 1
    try:
        spec = parse_spec(path.read_text("utf-8"))
    except SpecError as exc:
        for finding in exc.findings:
            print(finding)
        return 1
    findings = validate_spec(spec)
    for finding in findings:
        print(finding)
    errors = [f for f in findings if f.severity == "error"]
    if not findings:
        print("ok")
    return 1 if errors else 0


# ----------------------------------------------------------------- compare


def cmd_compare(args) -> int:
    if len(args.specs) < 2:
        print("error: compare needs at least two spec files", file=sys.stderr)
        return 1
    specs, names = [], []
    for path in args.specs:
        specs.append(_load_spec(path))
        names.append(Path(path).stem)
    table = compare_specs(specs, names=names)
    sys.stdout.write(table.render_text())
    if args.out:
        write_rows(Path(args.out) / "comparison.csv", table.csv_rows()[0], table.csv_rows()[1:])
    return 0


if __name__ == "__main__":
    sys.exit(main())
