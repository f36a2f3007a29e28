"""Data ingestion, result persistence, and the command-line surface.

CSV carries bulk numerics (observations, retained draws) with values printed
at 17 significant digits so a write/read round trip is exact for 64-bit
floats; JSON carries structured outputs (summaries, reports, provenance).
Every fit emits a provenance block — seed, canonical config hash, package
version, timestamps — sufficient to re-run bit-identically: repeating any
`fit` or `sample` with the same config and seed reproduces chain CSVs and
result JSON byte for byte, timestamps aside.

Exit code classes: 1 usage (bad flags, malformed config), 2 data (unreadable
or invalid data file), 3 numeric (domain or computation errors inside the
statistical modules). Failures print one machine-readable JSON object to
stderr. All validation runs before any expensive computation starts.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .distributions import (
    LcfusnParams,
    lcfusn_cdf,
    lcfusn_logpdf,
    mixed_moment,
    sample,
    shape_coefficients,
)
from .errors import (
    DomainError,
    EmptyFile,
    LogskewError,
    NonPositiveValue,
    ParseError,
)
from .inference import (
    ChainConfig,
    DataMatrix,
    PriorSpec,
    loglik,
    run_chain,
    summarize,
)
from .model_selection import (
    ComparisonReport,
    LoglikMatrix,
    cpo,
    dic,
    ks_plugin,
    predictive_probability,
)
from .numerics import RandomStream

__all__ = [
    "read_csv",
    "RunConfig",
    "ResultBundle",
    "main",
]

OUTPUT_DIR_ENV = "LOGSKEW_OUT_DIR"

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _fmt(x: float) -> str:
    """17 significant digits: exact round trip for 64-bit floats."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# data ingestion


def read_csv(path, expected_n: int) -> DataMatrix:
    """Read an L x expected_n table of strictly positive observations.

    Comma-separated, one observation per row; a single leading header row is
    auto-detected (any non-numeric cell) and skipped. Row/column numbers in
    errors are 1-based file positions, the header row included. All
    positivity violations are collected before raising, so one pass reports
    every offending row.
    """
    if expected_n < 1:
        raise DomainError("expected_n must be >= 1")
    with open(path, newline="") as handle:
        rows = [(number, [cell.strip() for cell in cells])
                for number, cells in enumerate(csv.reader(handle), start=1)
                if cells and any(cell.strip() for cell in cells)]

    def numeric(text: str) -> bool:
        try:
            float(text)
        except ValueError:
            return False
        return True

    if rows and not all(numeric(cell) for cell in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise EmptyFile(f"{path} contains no data rows")

    values = np.empty((len(rows), expected_n))
    bad_rows = []
    for k, (number, cells) in enumerate(rows):
        if len(cells) != expected_n:
            raise ParseError(number, len(cells) + 1 if len(cells) < expected_n
                             else expected_n + 1,
                             f"expected {expected_n} columns, found {len(cells)}")
        for j, cell in enumerate(cells):
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(number, j + 1, f"not a number: {cell!r}")
            if not math.isfinite(value):
                raise ParseError(number, j + 1, f"not finite: {cell!r}")
            values[k, j] = value
        if np.any(values[k] <= 0.0):
            bad_rows.append(number)
    if bad_rows:
        raise NonPositiveValue(bad_rows)
    return DataMatrix(values)


# ---------------------------------------------------------------------------
# configuration


def _prior_from_dict(spec: dict) -> PriorSpec:
    if "alpha" in spec:
        return PriorSpec.univariate(float(spec["mu0"]), float(spec["v"]),
                                    float(spec["alpha"]), float(spec["beta"]))
    return PriorSpec(np.asarray(spec["mu0"], dtype=np.float64),
                     np.asarray(spec["sigma_mu"], dtype=np.float64),
                     float(spec["d"]),
                     np.asarray(spec["scale"], dtype=np.float64))


def _chain_from_dict(spec: dict) -> ChainConfig:
    kwargs = dict(spec)
    for key in ("init_mu", "init_sigma"):
        if kwargs.get(key) is not None:
            kwargs[key] = np.asarray(kwargs[key], dtype=np.float64)
    if isinstance(kwargs.get("init_delta"), list):
        kwargs["init_delta"] = tuple(kwargs["init_delta"])
    return ChainConfig(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    """One fit invocation, fully resolved.

    Mirrors the JSON config file: prior and chain blocks (validated by
    their owning modules at load time), the model order m, the HPD level,
    and the predictive-probability requests. The hash covers exactly the
    semantic fields — not file paths or the output directory — so it is
    stable across platforms and working directories.
    """

    m: int
    prior: PriorSpec
    chain: ChainConfig
    data_path: str
    output_dir: str
    level: float = 0.95
    predict: tuple = ()

    def __post_init__(self):
        if self.m < 1:
            raise DomainError("m must be >= 1")
        for threshold, direction in self.predict:
            if direction not in ("above", "below"):
                raise DomainError(f"bad predict direction {direction!r}")
            if float(threshold) <= 0.0:
                raise DomainError("predict thresholds must be positive")

    @classmethod
    def from_file(cls, path, *, m=None, data=None, out_dir=None, seed=None):
        """Load a JSON config; keyword arguments override file entries."""
        with open(path) as handle:
            raw = json.load(handle)
        if not isinstance(raw, dict):
            raise ValueError("config root must be a JSON object")
        chain_spec = dict(raw.get("chain", {}))
        if seed is not None:
            chain_spec["seed"] = int(seed)
        order = m if m is not None else raw.get("m")
        if order is None:
            raise ValueError("model order m given neither in config nor --m")
        data_path = data if data is not None else raw.get("data")
        if data_path is None:
            raise ValueError("data path given neither in config nor --data")
        out = out_dir if out_dir is not None else raw.get(
            "output_dir", os.environ.get(OUTPUT_DIR_ENV, "."))
        predict = tuple((float(p["threshold"]), str(p["direction"]))
                        for p in raw.get("predict", ()))
        return cls(m=int(order), prior=_prior_from_dict(raw["prior"]),
                   chain=_chain_from_dict(chain_spec), data_path=str(data_path),
                   output_dir=str(out), level=float(raw.get("level", 0.95)),
                   predict=predict)

    def canonical(self) -> dict:
        """Semantic content in plain-JSON types, for hashing and provenance."""
        chain = asdict(self.chain)
        for key in ("init_mu", "init_sigma", "init_delta"):
            value = chain[key]
            if isinstance(value, np.ndarray):
                chain[key] = value.tolist()
            elif isinstance(value, tuple):
                chain[key] = list(value)
        return {
            "m": self.m,
            "level": self.level,
            "prior": {"mu0": self.prior.mu0.tolist(),
                      "sigma_mu": self.prior.sigma_mu.tolist(),
                      "d": self.prior.d,
                      "scale": self.prior.scale.tolist()},
            "chain": chain,
            "predict": [list(pair) for pair in self.predict],
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.canonical(), sort_keys=True,
                           separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# result persistence


@dataclass(frozen=True)
class ResultBundle:
    """Everything one fit produced, as written to result.json.

    chain_files are relative to the bundle's own directory so a result
    directory can be moved wholesale. comparison is None when the model
    comparison step was skipped (multivariate data: no KS test).
    """

    m: int
    n: int
    level: float
    summaries: dict
    diagnostics: dict
    comparison: dict | None
    chain_files: tuple
    config: dict
    provenance: dict

    def __post_init__(self):
        for key in ("seed", "config_hash", "version", "created"):
            if key not in self.provenance:
                raise DomainError(f"provenance block lacks {key!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["chain_files"] = list(self.chain_files)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ResultBundle":
        raw = dict(raw)
        raw["chain_files"] = tuple(raw["chain_files"])
        return cls(**raw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ResultBundle":
        with open(path) as handle:
            return cls.from_dict(json.load(handle))


def _write_chain_csv(path, names, draws, iterations) -> None:
    lines = [",".join(list(names) + ["iteration"])]
    for row, iteration in zip(draws, iterations):
        lines.append(",".join([_fmt(v) for v in row] + [str(int(iteration))]))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_chain_csv(path) -> np.ndarray:
    """Draw matrix back from a chain CSV, iteration column dropped."""
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    return np.array([[float(cell) for cell in row[:-1]] for row in rows[1:]])


def _pooled_draws(bundle: ResultBundle, bundle_path) -> np.ndarray:
    base = Path(bundle_path).parent
    return np.vstack([_read_chain_csv(base / name)
                      for name in bundle.chain_files])


# ---------------------------------------------------------------------------
# parameter parsing for the evaluation commands


def _parse_floats(text: str) -> list:
    try:
        return [float(cell) for cell in text.split(",")]
    except ValueError:
        raise _UsageError(f"not a comma-separated number list: {text!r}")


def _parse_delta(text: str, n: int, m_flag) -> np.ndarray:
    """Scalar delta (parsimonious, needs m) or ';'-separated matrix rows."""
    if ";" in text or "," in text:
        rows = [_parse_floats(row) for row in text.split(";")]
        if len({len(row) for row in rows}) != 1:
            raise _UsageError("delta rows have unequal lengths")
        matrix = np.array(rows)
        if matrix.shape[0] != n:
            raise _UsageError(f"delta has {matrix.shape[0]} rows, "
                              f"expected n={n}")
        if m_flag is not None and matrix.shape[1] != m_flag:
            raise _UsageError(f"--m {m_flag} conflicts with delta's "
                              f"{matrix.shape[1]} columns")
        return matrix
    return float(text) * np.ones((n, m_flag if m_flag is not None else 1))


def _params_from_args(args) -> LcfusnParams:
    if args.mu is not None:
        mu = np.array(_parse_floats(args.mu))
    elif args.delta is not None and ";" in args.delta:
        mu = np.zeros(len(args.delta.split(";")))
    else:
        mu = np.zeros(1)
    n = mu.shape[0]
    if args.sigma is not None:
        cells = _parse_floats(args.sigma)
        if len(cells) != n * n:
            raise _UsageError(f"sigma needs {n * n} row-major entries, "
                              f"got {len(cells)}")
        sigma = np.array(cells).reshape(n, n)
    else:
        sigma = np.eye(n)
    delta = _parse_delta(args.delta, n, args.m) if args.delta is not None \
        else np.zeros((n, args.m if args.m is not None else 1))
    return LcfusnParams(mu, sigma, delta)


def _each_point(args, n: int):
    for text in args.at:
        point = np.array(_parse_floats(text))
        if point.shape[0] != n:
            raise _UsageError(f"point {text!r} has {point.shape[0]} "
                              f"coordinates, expected {n}")
        yield point


# ---------------------------------------------------------------------------
# subcommands


def _cmd_density(args, out) -> int:
    params = _params_from_args(args)
    for point in _each_point(args, params.n):
        log_pdf = lcfusn_logpdf(point, params)
        print(json.dumps({"point": point.tolist(), "log_pdf": log_pdf,
                          "pdf": math.exp(log_pdf)}), file=out)
    return 0


def _cmd_cdf(args, out) -> int:
    params = _params_from_args(args)
    for point in _each_point(args, params.n):
        res = lcfusn_cdf(point, params)
        print(json.dumps({"point": point.tolist(), "value": res.value,
                          "error_estimate": res.error_estimate,
                          "converged": res.converged}), file=out)
    return 0


def _cmd_moments(args, out) -> int:
    params = _params_from_args(args)
    for text in args.order:
        order = [int(cell) for cell in text.split(",")]
        if len(order) != params.n:
            raise _UsageError(f"order {text!r} has {len(order)} entries, "
                              f"expected {params.n}")
        print(json.dumps({"order": order,
                          "value": mixed_moment(order, params)}), file=out)
    return 0


def _parse_m_range(text: str) -> range:
    parts = text.split("..")
    if len(parts) == 1:
        lo = hi = int(parts[0])
    elif len(parts) == 2:
        lo, hi = int(parts[0]), int(parts[1])
    else:
        raise _UsageError(f"bad m range: {text!r}")
    if lo < 1 or hi < lo:
        raise _UsageError(f"bad m range: {text!r}")
    return range(lo, hi + 1)


def _cmd_shape(args, out) -> int:
    magnitude = abs(float(args.delta))
    for m in _parse_m_range(args.m_range):
        for delta in (magnitude, -magnitude):
            skewness, kurtosis = shape_coefficients(delta * np.ones((1, m)))
            print(json.dumps({"m": m, "delta": delta, "skewness": skewness,
                              "kurtosis": kurtosis}), file=out)
    return 0


def _cmd_sample(args, out) -> int:
    params = _params_from_args(args)
    if args.count < 1:
        raise _UsageError("--count must be >= 1")
    draws = sample(params, args.count, RandomStream(args.seed))
    lines = [",".join(f"y_{j + 1}" for j in range(params.n))]
    lines += [",".join(_fmt(v) for v in row) for row in draws]
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        Path(args.out).write_text(text)
    else:
        out.write(text)
    return 0


def _posterior_mean_params(pooled: np.ndarray, names, n: int):
    means = dict(zip(names, pooled.mean(axis=0)))
    mu = np.array([means[f"mu_{i + 1}"] for i in range(n)])
    sigma = np.empty((n, n))
    for i in range(n):
        for j in range(i + 1):
            sigma[i, j] = sigma[j, i] = means[f"sigma_{i + 1}{j + 1}"]
    return mu, sigma, float(means["delta"])


def _comparison(config: RunConfig, data: DataMatrix, fit, pooled) -> dict:
    table = LoglikMatrix(fit.pooled_loglik())
    mu, sigma, delta = _posterior_mean_params(pooled, fit.names, data.n)
    at_mean = loglik(data, mu, sigma, delta, config.m)
    dic_value, p_d = dic(table, at_mean)
    _, slncpo_sum, slncpo_mean = cpo(table)
    probs = tuple(
        (threshold, direction,
         predictive_probability(pooled, threshold, direction, config.m))
        for threshold, direction in config.predict)
    if data.n != 1:  # no univariate KS test to run
        report = {"dic": dic_value, "p_d": p_d, "slncpo_sum": slncpo_sum,
                  "slncpo_mean": slncpo_mean, "ks_dn": None,
                  "ks_pvalue": None,
                  "predictive_probs": [
                      {"threshold": c, "direction": d, "probability": p}
                      for c, d, p in probs]}
        return report
    dn, pvalue = ks_plugin(data, mu, sigma, delta, config.m)
    return ComparisonReport(dic=dic_value, p_d=p_d, slncpo_sum=slncpo_sum,
                            slncpo_mean=slncpo_mean, ks_dn=dn,
                            ks_pvalue=pvalue,
                            predictive_probs=probs).to_dict()


def _cmd_fit(args, out) -> int:
    config = RunConfig.from_file(args.config, m=args.m, data=args.data,
                                 out_dir=args.out_dir, seed=args.seed)
    data = read_csv(config.data_path, config.prior.n)
    fit = run_chain(data, config.prior, config.chain, config.m)
    pooled = fit.pooled()
    summary = summarize(pooled, names=fit.names, level=config.level)

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chain_files = tuple(f"chain_{c + 1}.csv"
                        for c in range(config.chain.n_chains))
    for c, name in enumerate(chain_files):
        _write_chain_csv(out_dir / name, fit.names, fit.draws[c],
                         fit.iterations)

    bundle = ResultBundle(
        m=config.m, n=data.n, level=config.level,
        summaries={name: asdict(summary[name]) for name in fit.names},
        diagnostics=fit.diagnostics,
        comparison=_comparison(config, data, fit, pooled),
        chain_files=chain_files,
        config=config.canonical(),
        provenance={"seed": config.chain.seed,
                    "config_hash": config.config_hash(),
                    "version": __version__,
                    "created": datetime.now(timezone.utc).isoformat()},
    )
    bundle.save(out_dir / "result.json")
    print(json.dumps(bundle.to_dict(), indent=2), file=out)
    return 0


def _cmd_compare(args, out) -> int:
    rows = []
    for path in args.fits:
        bundle = ResultBundle.load(path)
        if bundle.comparison is None:
            raise DomainError(f"{path} holds no comparison statistics")
        rows.append({"fit": str(path), "m": bundle.m,
                     "dic": bundle.comparison["dic"],
                     "p_d": bundle.comparison["p_d"],
                     "slncpo_mean": bundle.comparison["slncpo_mean"],
                     "slncpo_sum": bundle.comparison["slncpo_sum"],
                     "ks_dn": bundle.comparison["ks_dn"],
                     "ks_pvalue": bundle.comparison["ks_pvalue"]})
    rows.sort(key=lambda row: (row["m"], row["fit"]))
    print(json.dumps(rows, indent=2), file=out)
    return 0


def _cmd_predict(args, out) -> int:
    bundle = ResultBundle.load(args.fit)
    pooled = _pooled_draws(bundle, args.fit)
    requests = [(threshold, "above") for threshold in args.above or ()]
    requests += [(threshold, "below") for threshold in args.below or ()]
    if not requests:
        raise _UsageError("nothing to predict: give --above and/or --below")
    for threshold, direction in requests:
        p = predictive_probability(pooled, threshold, direction, bundle.m)
        print(json.dumps({"threshold": threshold, "direction": direction,
                          "probability": p}), file=out)
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # raise instead of exiting with code 2
        raise _UsageError(message)


def _add_distribution_flags(parser) -> None:
    parser.add_argument("--mu", help="location, comma-separated (default 0)")
    parser.add_argument("--sigma", help="scale matrix, row-major "
                                        "comma-separated (default identity)")
    parser.add_argument("--delta", help="scalar (parsimonious, with --m) or "
                                        "';'-separated matrix rows")
    parser.add_argument("--m", type=int, help="skewing dimension for scalar "
                                              "--delta")


def _build_parser() -> _Parser:
    parser = _Parser(prog="logskew",
                     description="Log-skewed families: evaluation, sampling, "
                                 "Bayesian fitting, model comparison.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, handler in (("density", _cmd_density), ("cdf", _cmd_cdf)):
        p = sub.add_parser(name, help=f"evaluate the {name}")
        _add_distribution_flags(p)
        p.add_argument("--at", action="append", required=True,
                       help="evaluation point, comma-separated (repeatable)")
        p.set_defaults(handler=handler)

    p = sub.add_parser("moments", help="mixed moments E(prod Y_i^t_i)")
    _add_distribution_flags(p)
    p.add_argument("--order", action="append", required=True,
                   help="moment order, comma-separated ints (repeatable)")
    p.set_defaults(handler=_cmd_moments)

    p = sub.add_parser("shape", help="univariate skewness/kurtosis grid")
    p.add_argument("--m-range", required=True, help="e.g. 1..5 or 3")
    p.add_argument("--delta", required=True,
                   help="magnitude; both signs are emitted")
    p.set_defaults(handler=_cmd_shape)

    p = sub.add_parser("sample", help="draw from the distribution")
    _add_distribution_flags(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(handler=_cmd_sample)

    p = sub.add_parser("fit", help="run the data-augmented sampler")
    p.add_argument("--data", help="observations CSV (overrides config)")
    p.add_argument("--m", type=int, help="model order (overrides config)")
    p.add_argument("--config", required=True, help="JSON config path")
    p.add_argument("--out-dir", help=f"output directory (default: config, "
                                     f"then ${OUTPUT_DIR_ENV}, then '.')")
    p.add_argument("--seed", type=int, help="chain seed (overrides config)")
    p.set_defaults(handler=_cmd_fit)

    p = sub.add_parser("compare", help="collate fitted models' statistics")
    p.add_argument("--fits", nargs="+", required=True,
                   help="result.json paths")
    p.set_defaults(handler=_cmd_compare)

    p = sub.add_parser("predict", help="posterior predictive probabilities")
    p.add_argument("--fit", required=True, help="result.json path")
    p.add_argument("--above", type=float, action="append",
                   help="P(Y > threshold) (repeatable)")
    p.add_argument("--below", type=float, action="append",
                   help="P(Y < threshold) (repeatable)")
    p.set_defaults(handler=_cmd_predict)

    return parser


def _fail(out, code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": {"type": kind, "message": message,
                                "code": code}}), file=out)
    return code


def main(argv=None, *, stdout=None, stderr=None) -> int:
    out = stdout if stdout is not None else sys.stdout
    err = stderr if stderr is not None else sys.stderr
    try:
        args = _build_parser().parse_args(argv)
        return args.handler(args, out)
    except _UsageError as exc:
        return _fail(err, EXIT_USAGE, "UsageError", str(exc))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        return _fail(err, EXIT_USAGE, type(exc).__name__, str(exc))
    except (ParseError, NonPositiveValue, EmptyFile, OSError) as exc:
        return _fail(err, EXIT_DATA, type(exc).__name__, str(exc))
    except LogskewError as exc:
        return _fail(err, EXIT_NUMERIC, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
