"""Command-line front end: ``plspoly {fit,diagnose,simulate,verify}``.

Exit codes: 0 success, 1 verification failure, 2 input error, 3 numeric or
capability error.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .checks import Check
from .diagnostics import (
    GRAM_MAX_ORDER,
    IDENTITY_TOL,
    check_filter_theorems,
    check_global_shrinkage,
    check_gram,
    check_mse,
    check_risk,
    expected_rate_bound,
    filter_factors,
    gram_determinant_terms,
    mse_decompositions,
    risk_reports,
)
from .errors import CapabilityError, InputError, NumericError
from .model import SpectralData, SyntheticSpec, generate, load_csv, spectral
from .pls_core import fit_ls, fit_pls
from .report import SCHEMA_VERSION, csv_sections, csv_table, dumps
from .residual_poly import (
    DEFAULT_ENUM_BUDGET,
    residual_family,
    verify_poly_identities,
    weight_expectation_approx,
    weight_table,
)
from .verify import DEFAULT_PROBLEMS, DEFAULT_SEED, SUITES, corrupt_first_value, run_verification

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass(frozen=True)
class RunConfig:
    """Validated command-line configuration."""

    command: str
    design: Optional[Path] = None
    response: Optional[Path] = None
    spec: Optional[SyntheticSpec] = None
    center: bool = False
    k_max: Optional[int] = None
    seed: Optional[int] = None
    out: Optional[Path] = None
    fmt: str = "json"
    rel_tol: float = IDENTITY_TOL
    enum_budget: int = DEFAULT_ENUM_BUDGET
    suites: tuple = SUITES
    problems: int = DEFAULT_PROBLEMS
    workers: Optional[int] = None
    inject_fault: bool = False

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        has_files = ns.design is not None or ns.response is not None
        has_spec = ns.spec is not None
        if ns.command in ("fit", "diagnose"):
            if has_files == has_spec:
                raise InputError("give either --design and --response, or --spec (exactly one source)")
            if has_files and (ns.design is None or ns.response is None):
                raise InputError("--design and --response must be given together")
        if ns.command == "simulate" and not has_spec:
            raise InputError("simulate needs --spec")
        if ns.k_max is not None and ns.k_max < 1:
            raise InputError("--k-max must be at least 1")
        if not ns.rel_tol > 0:
            raise InputError("--rel-tol must be positive")
        if ns.enum_budget < 0:
            raise InputError("--enum-budget must be non-negative")
        spec = SyntheticSpec.from_json(ns.spec) if has_spec else None
        if spec is not None and ns.seed is not None:
            spec = replace(spec, seed=ns.seed)
        suites = SUITES
        if ns.suite:
            names = [x for item in ns.suite for x in item.split(",") if x]
            unknown = sorted(set(names) - set(SUITES) - {"all"})
            if unknown:
                raise InputError(f"unknown suite(s) {unknown}; choose from {list(SUITES)}")
            if "all" not in names:
                suites = tuple(x for x in SUITES if x in names)
        return cls(
            command=ns.command,
            design=None if ns.design is None else Path(ns.design),
            response=None if ns.response is None else Path(ns.response),
            spec=spec,
            center=ns.center,
            k_max=ns.k_max,
            seed=ns.seed,
            out=None if ns.out is None else Path(ns.out),
            fmt=ns.format,
            rel_tol=ns.rel_tol,
            enum_budget=ns.enum_budget,
            suites=suites,
            problems=ns.problems,
            workers=ns.workers,
            inject_fault=ns.inject_fault,
        )


def _load(cfg: RunConfig) -> SpectralData:
    if cfg.spec is not None:
        problem = generate(cfg.spec)
        if cfg.center:
            raise InputError("--center applies to CSV input only")
    else:
        problem = load_csv(cfg.design, cfg.response, center=cfg.center)
    return spectral(problem)


def _emit(cfg: RunConfig, text: str) -> None:
    if cfg.out is None:
        sys.stdout.write(text)
        return
    try:
        cfg.out.write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {cfg.out}: {exc}") from None


def _problem_info(s: SpectralData) -> dict:
    return {
        "n": s.n,
        "p": s.problem.p,
        "rank": s.r,
        "effective_dimension": s.effective_dimension,
        "centered": s.problem.centered,
        "synthetic": s.synthetic,
        "response_sq": s.response_sq,
        "lambdas": s.lambdas,
        "p_hat": s.p_hat[: s.r],
    }


def _k_max(cfg: RunConfig, s: SpectralData) -> int:
    return s.r if cfg.k_max is None else cfg.k_max


def _check_rows(checks: list[Check]) -> list[dict]:
    return [c.as_dict() for c in checks]


# ---------------------------------------------------------------------------
# fit


def cmd_fit(cfg: RunConfig) -> int:
    s = _load(cfg)
    if s.r == 0:
        raise InputError("design has rank 0")
    path = fit_pls(s, _k_max(cfg, s), warn=False)
    polys = residual_family(s, path.k_max)
    ffs = filter_factors(polys, s)
    norms = path.coef_norm_sq()
    if cfg.fmt == "csv":
        header = (["k", "residual_sq", "coef_norm_sq"]
                  + [f"beta_{j + 1}" for j in range(s.problem.p)]
                  + [f"f_{i + 1}" for i in range(s.r)])
        rows = [[k, path.residual_sq_by_k[k], norms[k], *path.beta_by_k[k], *ffs[k].factors]
                for k in range(path.k_max + 1)]
        _emit(cfg, csv_table(header, rows))
        return EXIT_OK
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "problem": _problem_info(s),
        "k_max": path.k_max,
        "requested_k_max": path.requested,
        "truncated": path.truncated,
        "residual_sq": path.residual_sq_by_k,
        "steps": [
            {
                "k": k,
                "residual_sq": path.residual_sq_by_k[k],
                "coef_norm_sq": norms[k],
                "beta": path.beta_by_k[k],
                "filter_factors": ffs[k].factors,
                "truncated_factors": ffs[k].truncated,
                "ritz_values": ffs[k].ritz_values,
            }
            for k in range(path.k_max + 1)
        ],
        "beta_ls": fit_ls(s),
    }
    _emit(cfg, dumps(doc))
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose


def cmd_diagnose(cfg: RunConfig) -> int:
    s = _load(cfg)
    if s.r == 0:
        raise InputError("design has rank 0")
    path = fit_pls(s, _k_max(cfg, s), warn=False)
    polys = residual_family(s, path.k_max)
    ffs = filter_factors(polys, s)
    risks = risk_reports(s, path, cfg.enum_budget)
    checks = check_risk(s, risks, cfg.rel_tol)
    checks += verify_poly_identities(s, path, polys)
    checks += check_filter_theorems(ffs, s, weights_available=cfg.enum_budget > 0, budget=cfg.enum_budget)
    checks += check_global_shrinkage(path, fit_ls(s)).checks

    mse_rows: dict[int, dict] = {}
    if s.synthetic:
        mses = mse_decompositions(s, path, polys)
        checks += check_mse(s, mses, cfg.rel_tol)
        terms = [gram_determinant_terms(s, k, polys[k])
                 for k in range(1, min(path.k_max, s.effective_dimension, GRAM_MAX_ORDER - 1) + 1)]
        checks += check_gram(s, terms, {m.k: m.mse_direct for m in mses}, cfg.rel_tol)
        for m in mses:
            mse_rows[m.k] = m.as_dict()
        for t in terms:
            mse_rows.setdefault(t.k, {}).update(
                gram_signal=t.signal_det, gram_noise=t.noise_det,
                gram_signal_direct=t.signal_direct, gram_noise_direct=t.noise_direct,
                gram_warning=t.warning,
            )

    tables = {}
    for k in range(1, path.k_max + 1):
        try:
            tables[k] = weight_table(s.lambdas, s.p_hat_eff**2, k, cfg.enum_budget).to_dict()
        except CapabilityError as exc:
            tables[k] = {"k": k, "status": "not evaluated", "reason": str(exc)}

    failed = [c for c in checks if not c.passed]
    if cfg.fmt == "csv":
        mse_cols = ["mse_direct", "mse_identity", "mse_alt", "bias_like", "noise_like",
                    "gram_signal", "gram_noise"]
        header = (["k", "empirical_risk", "empirical_risk_formula", "pcr_risk", "upper_bound",
                   "rate_bound", "fit_gap_ls", "fit_gap_pcr"] + mse_cols
                  + [f"f_{i + 1}" for i in range(s.r)])
        rows = []
        for rep in risks:
            m = mse_rows.get(rep.k, {})
            rows.append([rep.k, rep.empirical_risk_direct, rep.empirical_risk_formula, rep.pcr_risk,
                         rep.upper_bound, rep.rate_bound, rep.fit_gap_ls, rep.fit_gap_pcr]
                        + [m.get(c) for c in mse_cols] + list(ffs[rep.k].factors))
        _emit(cfg, csv_table(header, rows))
    else:
        steps = []
        for rep in risks:
            k = rep.k
            steps.append({
                "k": k,
                "empirical_risk": rep.empirical_risk_direct,
                "empirical_risk_formula": rep.empirical_risk_formula,
                "pcr_risk": rep.pcr_risk,
                "upper_bound": rep.upper_bound,
                "rate_bound": rep.rate_bound,
                "expected_rate_bound": expected_rate_bound(s, k) if s.synthetic and k < s.r else None,
                "fit_gap_ls": rep.fit_gap_ls,
                "fit_gap_pcr": rep.fit_gap_pcr,
                "filter_factors": ffs[k].factors,
                "truncated_factors": ffs[k].truncated,
                "ritz_values": ffs[k].ritz_values,
                "mse": mse_rows.get(k) if s.synthetic else "unavailable",
                "weights": tables.get(k),
            })
        doc = {
            "schema_version": SCHEMA_VERSION,
            "command": "diagnose",
            "problem": _problem_info(s),
            "k_max": path.k_max,
            "truncated": path.truncated,
            "rel_tol": cfg.rel_tol,
            "enum_budget": cfg.enum_budget,
            "steps": steps,
            "checks": _check_rows(checks),
            "failed_checks": len(failed),
        }
        _emit(cfg, dumps(doc))
    for c in failed:
        print(f"check failed: {c.name} k={c.k} deviation={c.deviation:.3g} tol={c.tolerance:.3g}",
              file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _one_replication(spec: SyntheticSpec, base: SpectralData, rep: int, k_top: int, budget: int):
    prob = generate(spec, rep)
    u = base.svd.left_vectors
    s = base.with_p_hat(u.T @ prob.response, u.T @ prob.noise)
    path = fit_pls(s, k_top, warn=False)
    polys = residual_family(s, path.k_max)
    mses = mse_decompositions(s, path, polys)
    weights = {}
    for k in range(1, path.k_max + 1):
        try:
            weights[k] = weight_table(s.lambdas, s.p_hat_eff**2, k, budget).weights
        except CapabilityError:
            pass
    risks = path.residual_sq_by_k + [path.residual_sq_by_k[-1]] * (k_top - path.k_max)
    mse = [m.mse_direct for m in mses]
    mse += [mse[-1]] * (k_top + 1 - len(mse))
    return weights, np.array(risks), np.array(mse)


def simulate(spec: SyntheticSpec, k_max: Optional[int] = None, budget: int = DEFAULT_ENUM_BUDGET,
             workers: Optional[int] = None) -> dict:
    """Monte Carlo over noise draws on the fixed design of ``spec``.

    Returns mean tuple weights against their first-order approximation, mean
    empirical risk against the expected rate bound, and mean MSE per step.
    Replication ``i`` uses noise stream ``seed + i``.
    """
    base = spectral(generate(spec, 0))
    k_top = base.r if k_max is None else min(k_max, base.r)
    reps = spec.replications
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda i: _one_replication(spec, base, i, k_top, budget), range(reps)))

    weight_rows = []
    for k in range(1, k_top + 1):
        samples = [w[k] for w, _, _ in results if k in w]
        if not samples:
            continue
        stack = np.vstack(samples)
        mean = stack.mean(axis=0)
        se = stack.std(axis=0, ddof=1) / math.sqrt(len(samples)) if len(samples) > 1 else np.zeros_like(mean)
        try:
            approx = weight_expectation_approx(base.lambdas, base.p_signal[: base.r], spec.noise_sd, k, budget)
        except CapabilityError:
            continue
        table = weight_table(base.lambdas, np.ones(base.r), k, budget)  # for tuple labels
        for t, m, e, a in zip(table.tuples, mean, se, approx.weights):
            gap = float(m - a)
            within = abs(gap) <= max(3.0 * e, 1e-12)
            weight_rows.append({
                "k": k,
                "tuple": " ".join(str(int(j)) for j in t),
                "mean_weight": float(m),
                "standard_error": float(e),
                "approx_weight": float(a),
                "gap": gap,
                "gap_in_se": gap / e if e > 0 else None,
                "status": "within_3se" if within else "first_order_gap",
                "replications": len(samples),
            })

    risks = np.vstack([r for _, r, _ in results]) / base.n
    mses = np.vstack([m for _, _, m in results])
    risk_rows, mse_rows = [], []
    for k in range(k_top + 1):
        col = risks[:, k]
        se = float(col.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
        bound = expected_rate_bound(base, k) if k < base.r else None
        risk_rows.append({
            "k": k,
            "mean_risk_per_n": float(col.mean()),
            "standard_error": se,
            "expected_rate_bound": bound,
            "respected": None if bound is None else bool(col.mean() - 3.0 * se <= bound * (1 + 1e-9)),
        })
        mcol = mses[:, k]
        mse_rows.append({
            "k": k,
            "mean_mse": float(mcol.mean()),
            "standard_error": float(mcol.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0,
        })
    return {"weights": weight_rows, "risk": risk_rows, "mse": mse_rows}


def cmd_simulate(cfg: RunConfig) -> int:
    spec = cfg.spec
    result = simulate(spec, cfg.k_max, cfg.enum_budget, cfg.workers)
    if cfg.fmt == "csv":
        sections = []
        for name, rows in (("weights", result["weights"]), ("risk", result["risk"]), ("mse", result["mse"])):
            header = list(rows[0].keys()) if rows else ["k"]
            sections.append((name, header, [[row[h] for h in header] for row in rows]))
        _emit(cfg, csv_sections(sections))
    else:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "command": "simulate",
            "spec": spec,
            **result,
            "flagged_first_order_gaps": sum(1 for r in result["weights"] if r["status"] != "within_3se"),
        }
        _emit(cfg, dumps(doc))
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(cfg: RunConfig) -> int:
    seed = DEFAULT_SEED if cfg.seed is None else cfg.seed
    report = run_verification(
        n_problems=cfg.problems,
        seed=seed,
        suites=cfg.suites,
        budget=cfg.enum_budget,
        tol=cfg.rel_tol,
        workers=cfg.workers,
        inject_fault=cfg.inject_fault,
    )
    rows = report.summary()
    for row in rows:
        if row["failures"]:
            status = "FAIL"
        else:
            status = "PASS" if row["hard"] else "INFO"
        worst_dev = row["worst_deviation"]
        worst_txt = "n/a" if worst_dev is None else f"{worst_dev:.3e}"
        tol_txt = "n/a" if row["tolerance"] is None else f"{row['tolerance']:.1e}"
        soft = row["soft_worst_deviation"]
        soft_txt = "" if soft is None or not row["hard"] else f" soft_worst={soft:.3e}"
        print(f"{status} {row['suite']:<16} {row['identity']:<24} worst={worst_txt} tol={tol_txt} "
              f"evaluated={row['evaluated']} skipped={row['skipped']}{soft_txt}")
    for f in report.failures:
        c = f.check
        print(f"FAILED {f.suite}/{c.name}: problem {f.index} seed {f.seed} ({f.family}) k={c.k} "
              f"deviation={c.deviation:.3e} tol={c.tolerance:.1e}")
    for note in report.notes:
        print(note)
    print(f"{report.problems} problems, {len(report.findings)} checks, "
          f"{len(report.failures)} failures, {report.elapsed:.1f} s")

    if cfg.out is not None:
        if cfg.fmt == "csv":
            header = list(rows[0].keys()) if rows else ["suite"]
            text = csv_table(header, [[r[h] for h in header] for r in rows])
        else:
            text = dumps({
                "schema_version": SCHEMA_VERSION,
                "command": "verify",
                "seed": seed,
                "problems": report.problems,
                "suites": list(cfg.suites),
                "passed": report.passed,
                "summary": rows,
                "failures": [
                    {"suite": f.suite, "identity": f.check.name, "index": f.index, "seed": f.seed,
                     "family": f.family, "k": f.check.k, "deviation": f.check.deviation,
                     "tolerance": f.check.tolerance}
                    for f in report.failures
                ],
                "notes": report.notes,
            })
        _emit(cfg, text)
    return EXIT_OK if report.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plspoly",
        description="PLS regression through its residual polynomials: fits, diagnostics, "
                    "Monte Carlo experiments and an identity verification suite.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--design", metavar="PATH", help="design matrix CSV (n rows, p columns)")
        p.add_argument("--response", metavar="PATH", help="single-column response CSV")
        p.add_argument("--center", action="store_true", help="center design columns and response")
        p.add_argument("--spec", metavar="PATH", help="synthetic problem spec (JSON)")
        p.add_argument("--k-max", type=int, metavar="N", help="largest PLS step (default: rank)")
        p.add_argument("--seed", type=int, metavar="N", help="override the seed")
        p.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--rel-tol", type=float, default=IDENTITY_TOL, metavar="X",
                       help="relative tolerance of the identity checks (default %(default)g)")
        p.add_argument("--enum-budget", type=int, default=DEFAULT_ENUM_BUDGET, metavar="N",
                       help="maximum number of index tuples to enumerate (default %(default)d)")
        p.add_argument("--suite", action="append", metavar="NAME",
                       help=f"verification suite(s) to run: {', '.join(SUITES)} (default all)")
        p.add_argument("--problems", type=int, default=DEFAULT_PROBLEMS, metavar="N",
                       help="number of random problems for verify (default %(default)d)")
        p.add_argument("--workers", type=int, metavar="N", help="worker threads")
        p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    for name, help_text in (
        ("fit", "PLS path, residual norms and filter factors"),
        ("diagnose", "risk, filter-factor, MSE reports and theorem checks"),
        ("simulate", "Monte Carlo over noise draws for a synthetic spec"),
        ("verify", "run the identity and theorem suites on random problems"),
    ):
        common(sub.add_parser(name, help=help_text, description=help_text))
    return parser


COMMANDS = {"fit": cmd_fit, "diagnose": cmd_diagnose, "simulate": cmd_simulate, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = RunConfig.from_args(ns)
        return COMMANDS[cfg.command](cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
