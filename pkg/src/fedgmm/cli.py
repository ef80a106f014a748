"""Command-line front end: ``fedgmm {bounds,simulate,sweep,attack-check}``."""
from __future__ import annotations

import argparse
import io
import json
import math
import sys

import numpy as np
from scipy import integrate

from . import harness
from .adversary import KILL_OFFSET, attack_density, kill_blob_mass, propose_and_accept, uniform_spread_offset
from .bounds import kill_budget
from .gauss import plateau_density, window_mass
from .harness import ConfigError, ExperimentConfig
from .population import build_mixture

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_ABORTED = 0, 1, 2, 3


class UsageError(ValueError):
    """Bad flag value; reported as a single line with exit code 2."""


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        if "(default" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# flag parsing
# ---------------------------------------------------------------------------


def parse_deltas(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--delta expects comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError("--delta is empty")
    for d in vals:
        if not d > 1.5:
            raise UsageError(f"delta must satisfy delta > 1.5, got {d:g}")
    return vals


def parse_ratios(text: str) -> list[float]:
    """``a:b:step`` (inclusive of b) or a comma list."""
    try:
        if ":" in text:
            a, b, step = (float(t) for t in text.split(":"))
            if step <= 0 or b < a:
                raise UsageError(f"--ratios range needs start <= stop and step > 0, got {text!r}")
            count = int(math.floor((b - a) / step + 1e-9)) + 1
            vals = [round(a + i * step, 12) for i in range(count)]
        else:
            vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--ratios expects start:stop:step or a comma list, got {text!r}") from None
    if not vals:
        raise UsageError("--ratios is empty")
    if any(v < 0 for v in vals):
        raise UsageError("c/k ratios must be non-negative")
    return vals


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _rows_csv(rows, header) -> str:
    buf = io.StringIO(newline="")
    harness.write_csv(rows, buf, header)
    return buf.getvalue()


def _rows_json(rows) -> str:
    return json.dumps(harness._json_safe(list(rows)), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_bounds(args) -> int:
    rows = harness.bound_table(parse_deltas(args.delta), parse_ratios(args.ratios))
    text = _rows_json(rows) if args.format == "json" else _rows_csv(rows, harness.CSV_HEADER)
    _emit(text, args.out)
    return EXIT_OK


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        try:
            cfg = ExperimentConfig.load(args.config)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        except TypeError as exc:
            raise UsageError(f"config {args.config}: {exc}") from None
    else:
        cfg = ExperimentConfig(
            k=args.k,
            c=args.c,
            m=args.m,
            delta=args.delta,
            D=args.D,
            backoff=args.backoff,
            attacks=_attack_specs(args),
            trials=args.trials,
            master_seed=args.seed,
        )
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _attack_specs(args) -> list[dict]:
    if args.attack == "none" or (args.attack == "lower_bound" and args.c == 0):
        return []
    if args.attack == "lower_bound":
        return [{"kind": "lower_bound", "allocation": "optimal", "params": {"mu_prime": args.mu_prime}}]
    if args.attack == "cluster_killer":
        targets = [int(t) for t in args.targets.split(",")] if args.targets else [0]
        return [{"kind": "cluster_killer", "params": {"targets": targets}}]
    return [{"kind": args.attack}]


def _progress(total: int):
    done = [0]

    def tick(_i):
        done[0] += 1
        print(f"trial {done[0]}/{total}", file=sys.stderr)

    return tick


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    cfg.validate()
    report = harness.run_experiment(cfg, progress=_progress(cfg.trials) if args.progress else None)
    if args.format == "csv":
        row = {key: getattr(report, key) for key in _SIM_FIELDS}
        _emit(_rows_csv([row], _SIM_FIELDS), args.out)
    else:
        _emit(report.to_json(), args.out)
    if report.trials_completed == 0:
        print(f"all {report.trials_aborted} trials aborted: {'; '.join(report.abort_reasons)}", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


_SIM_FIELDS = (
    "khat_mean",
    "khat_stderr",
    "fallback_fraction",
    "overlap_violations",
    "bound_lower",
    "bound_upper_theorem",
    "bound_upper_tight",
    "eps_cr",
    "trials_completed",
    "trials_aborted",
)

SWEEP_HEADER = ("delta", "c_over_k", "k", "c", "m", "trials_completed", "trials_aborted") + _SIM_FIELDS[:-2]


def cmd_sweep(args) -> int:
    deltas = parse_deltas(args.delta)
    ratios = parse_ratios(args.ratios)
    rows = []
    any_done = False
    for d in deltas:
        for r in ratios:
            args_c = r * args.k
            cfg = ExperimentConfig(
                k=args.k,
                c=args_c,
                m=args.m,
                delta=d,
                D=args.D if args.D is not None else 9.0 * d,
                backoff=args.backoff,
                attacks=[] if args_c == 0 else [{"kind": "lower_bound", "allocation": "optimal"}],
                trials=args.trials,
                master_seed=args.seed,
                threads=args.threads,
            )
            cfg.validate()
            rep = harness.run_experiment(cfg)
            any_done = any_done or rep.trials_completed > 0
            row = {"delta": d, "c_over_k": r, "k": args.k, "c": args_c, "m": args.m}
            row.update({key: getattr(rep, key) for key in _SIM_FIELDS})
            rows.append(row)
            if args.progress:
                print(f"delta={d:g} c/k={r:g} done", file=sys.stderr)
    text = _rows_json(rows) if args.format == "json" else _rows_csv(rows, SWEEP_HEADER)
    _emit(text, args.out)
    return EXIT_OK if any_done else EXIT_ABORTED


def check_lower_bound(eps: float, delta: float, seed: int = 0) -> list[tuple[str, bool, str]]:
    """Quadrature and sampling checks of the plateau/attack densities."""
    if not eps > 0:
        raise UsageError(f"--eps must be positive, got {eps:g}")
    width = math.sqrt(2 * math.pi) * eps
    mu = 0.0
    mp = -0.5 * width
    brk = [mp, mp + width]
    mass_f = (
        integrate.quad(lambda x: float(plateau_density(x, eps, mp)), -np.inf, brk[0], epsabs=1e-13)[0]
        + integrate.quad(lambda x: float(plateau_density(x, eps, mp)), brk[0], brk[1], epsabs=1e-13)[0]
        + integrate.quad(lambda x: float(plateau_density(x, eps, mp)), brk[1], np.inf, epsabs=1e-13)[0]
    )
    pieces = [(-np.inf, brk[0]), (brk[0], mu), (mu, brk[1]), (brk[1], np.inf)]
    mass_psi = sum(
        integrate.quad(lambda x: float(attack_density(x, eps, mu, mp)), a, b, epsabs=1e-13)[0] for a, b in pieces
    )
    grid = np.linspace(mp - 12, mp + width + 12, 200001)
    psi_min = float(np.min(attack_density(grid, eps, mu, mp)))
    n_prop = 100_000
    rng = np.random.default_rng(seed)
    rate = propose_and_accept(eps, mu, mp, n_prop, rng).size / n_prop
    p = eps / (1 + eps)
    sigma = math.sqrt(p * (1 - p) / n_prop)
    return [
        ("plateau mass", abs(mass_f - (1 + eps)) < 1e-8, f"integral f_eps = {mass_f:.12f} (target {1 + eps:.12f})"),
        ("psi normalization", abs(mass_psi - 1) < 1e-8, f"integral psi = {mass_psi:.12f}"),
        ("psi non-negative", psi_min >= -1e-12, f"min psi on grid = {psi_min:.3e}"),
        ("acceptance rate", abs(rate - p) <= 3 * sigma, f"acceptance {rate:.5f} vs {p:.5f} (3 sigma = {3 * sigma:.5f})"),
    ]


def check_cluster_killer(delta: float) -> list[tuple[str, bool, str]]:
    model = build_mixture(1, delta, 9 * delta)
    shape = model.shape
    blob = kill_blob_mass(model)
    near = window_mass(KILL_OFFSET * delta, shape)
    span = 2 * KILL_OFFSET * delta
    return [
        ("per-blob mass", 0 < blob < shape.rho, f"per-blob mass = {blob:.5f} (units of m)"),
        ("blob survives filter", abs(blob + near - shape.rho) < 1e-12, f"blob + f(1.6 delta) = {blob + near:.12f} = rho"),
        ("clique broken", span >= 3 * delta, f"blob spread {span:g} >= 3 delta = {3 * delta:g}"),
        ("kill budget", kill_budget(shape) > 0, f"kill budget rho - f(3 delta) = {kill_budget(shape):.6f}"),
    ]


def check_uniform_spread(eps: float, delta: float) -> list[tuple[str, bool, str]]:
    model = build_mixture(1, delta, 9 * delta)
    shape = model.shape
    off = uniform_spread_offset(eps, model)
    total = window_mass(off, shape) + eps
    return [
        ("offset", off >= 0, f"placement offset = {off:.6f}"),
        ("survives filter", total >= shape.rho, f"f(offset) + eps = {total:.9f} >= rho = {shape.rho:.9f}"),
    ]


def cmd_attack_check(args) -> int:
    delta = parse_deltas(str(args.delta))[0]
    if args.attack == "lower_bound":
        checks = check_lower_bound(args.eps, delta, args.seed)
    elif args.attack == "cluster_killer":
        checks = check_cluster_killer(delta)
    elif args.attack == "uniform_spread":
        checks = check_uniform_spread(args.eps, delta)
    else:
        raise UsageError(f"unknown attack {args.attack!r}; choose lower_bound, cluster_killer or uniform_spread")
    if args.format == "json":
        payload = [{"check": n, "ok": ok, "detail": d} for n, ok, d in checks]
        _emit(json.dumps(payload, indent=2) + "\n", args.out)
    else:
        _emit("".join(f"{'ok  ' if ok else 'FAIL'} {n}: {d}\n" for n, ok, d in checks), args.out)
    for name, ok, _ in checks:
        if not ok:
            print(f"check failed: {name}", file=sys.stderr)
            return 4
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    p = _Parser(prog="fedgmm", description="Robust personalised mean estimation under Byzantine clients.", formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, tabular=True):
        sp.add_argument("--format", choices=("csv", "json") if tabular else ("text", "json"),
                        default="csv" if tabular else "text", help="output format")
        sp.add_argument("--out", default=None, help="output path (default: stdout)")

    def threads(sp):
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${harness.THREADS_ENV} or 1)")

    b = sub.add_parser("bounds", help="tabulate lower and upper bound curves", formatter_class=fmt)
    b.add_argument("--delta", default="2,3,4", help="window half-widths Delta, comma separated (units of sigma, > 1.5)")
    b.add_argument("--ratios", default="0:1:0.01", help="c/k grid: start:stop:step (inclusive) or comma list")
    common(b)
    b.set_defaults(func=cmd_bounds)

    s = sub.add_parser("simulate", help="run one Monte Carlo experiment", formatter_class=fmt)
    s.add_argument("--config", default=None, help="JSON ExperimentConfig file; overrides the flags below (default: flags)")
    s.add_argument("--k", type=int, default=5, help="number of mixture components")
    s.add_argument("--c", type=float, default=0.0, help="corruption budget (corrupted clients per m)")
    s.add_argument("--m", type=int, default=10000, help="genuine clients per component")
    s.add_argument("--delta", type=float, default=3.0, help="window half-width Delta (units of sigma, > 1.5)")
    s.add_argument("--D", type=float, default=27.0, help="minimum separation of means (units of sigma, >= 9 Delta)")
    s.add_argument("--backoff", type=float, default=None, help="filter backoff (default: max(0.02, m^(-1/3)))")
    s.add_argument("--attack", default="lower_bound",
                   choices=("none", "null", "lower_bound", "uniform_spread", "cluster_killer"),
                   help="adversary strategy")
    s.add_argument("--mu-prime", default="midpoint", choices=("midpoint", "left", "right"),
                   help="lower_bound plateau placement")
    s.add_argument("--targets", default=None, help="cluster_killer target indices, comma separated (default: 0)")
    s.add_argument("--trials", type=int, default=1, help="independent trials")
    s.add_argument("--seed", type=int, default=0, help="master seed")
    s.add_argument("--progress", action="store_true", help="per-trial counter on stderr")
    threads(s)
    common(s)
    s.set_defaults(func=cmd_simulate, format="json")

    w = sub.add_parser("sweep", help="lower_bound attack over a (Delta, c/k) grid; long-format output",
                       formatter_class=fmt)
    w.add_argument("--delta", default="3", help="Delta values, comma separated (> 1.5)")
    w.add_argument("--ratios", default="0.1,0.2,0.3", help="c/k grid: start:stop:step or comma list")
    w.add_argument("--k", type=int, default=25, help="number of mixture components")
    w.add_argument("--m", type=int, default=10000, help="genuine clients per component")
    w.add_argument("--D", type=float, default=None, help="separation (default: 9 Delta)")
    w.add_argument("--backoff", type=float, default=None, help="filter backoff (default: max(0.02, m^(-1/3)))")
    w.add_argument("--trials", type=int, default=4, help="trials per grid point")
    w.add_argument("--seed", type=int, default=0, help="master seed")
    w.add_argument("--progress", action="store_true", help="per-point counter on stderr")
    threads(w)
    common(w)
    w.set_defaults(func=cmd_sweep)

    a = sub.add_parser("attack-check", help="self-checks of an attack's densities and arithmetic",
                       formatter_class=fmt)
    a.add_argument("attack", help="lower_bound | cluster_killer | uniform_spread")
    a.add_argument("--eps", type=float, default=0.3, help="per-component mass (units of m)")
    a.add_argument("--delta", type=float, default=3.0, help="window half-width Delta (> 1.5)")
    a.add_argument("--seed", type=int, default=0, help="seed for the acceptance-rate check")
    common(a, tabular=False)
    a.set_defaults(func=cmd_attack_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"fedgmm: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"fedgmm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
