"""Command-line experiment runner.

    driftcrb crb|mre-map|multisensor|quantized|montecarlo --config cfg.json [--out path] [--seed n] [--strict]

Exit codes: 0 success, 2 configuration error, 3 numeric-domain error,
4 approximation-validity failure under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from contextlib import contextmanager
from importlib import resources
from typing import Any, Callable

import jsonschema
import numpy as np

from . import __version__
from .closed_form import closed_form_crb, max_relative_error
from .errors import DomainError, DriftCrbError
from .fisher import exact_crb_for
from .model import INFINITY, DriftParams, ParamBox, SignalSpec, parse_tau, validate_drift_params
from .simulate import MonteCarloConfig, QuantizerSpec, TrialStreams, monte_carlo_variance
from .studies import (
    MreMapConfig,
    MultisensorConfig,
    QuantizedConfig,
    mre_map,
    multisensor_study,
    quantized_study,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_STRICT = 4

COMMANDS = ("crb", "mre-map", "multisensor", "quantized", "montecarlo")
DEFAULT_EPSILON_LIMIT = 0.1
DENSE_LIMIT = 2000

log = logging.getLogger("driftcrb")


class ConfigError(Exception):
    pass


@contextmanager
def config_errors():
    """Report invalid values found while building inputs as configuration errors."""
    try:
        yield
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


# ------------------------------------------------------------ config helpers


def load_schema() -> dict:
    text = resources.files("driftcrb").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def validate_config(command: str, config: dict) -> None:
    schema = load_schema()
    validator = jsonschema.Draft202012Validator({"$ref": f"#/$defs/{command}", "$defs": schema["$defs"]})
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}")


def config_hash(config: dict) -> str:
    body = {k: v for k, v in config.items() if k != "output"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _signal(config: dict) -> SignalSpec:
    sig = config["signal"]
    P = sig["P"]
    beta = sig.get("beta", [0.0] * (P + 1))
    if len(beta) != P + 1:
        raise ConfigError(f"signal/beta: expected {P + 1} coefficients for P = {P}, got {len(beta)}")
    return SignalSpec(beta, order=P)


def _tau_list(value, default) -> list:
    if value is None:
        return list(default)
    values = value if isinstance(value, list) else [value]
    return [parse_tau(v) for v in values]


def _sensor(raw: dict, tau_default=INFINITY) -> DriftParams:
    tau = parse_tau(raw["tau"]) if "tau" in raw else tau_default
    return DriftParams(raw["sigma2"], raw["gamma"], raw["rho"], tau)


def _box(raw: dict) -> ParamBox:
    return ParamBox(tuple(raw["rho"]), tuple(raw["sigma2"]), tuple(raw["gamma"]))


def _network_sensors(config: dict, seed: int) -> list[DriftParams]:
    tau = parse_tau(config.get("tau", "inf"))
    if "sensors" in config and "box" in config:
        raise ConfigError("give either sensors or box, not both")
    if "sensors" in config:
        return [_sensor(s, tau) for s in config["sensors"]]
    if "box" not in config:
        raise ConfigError("one of sensors or box is required")
    raw = config["box"]
    if "M" not in raw:
        raise ConfigError("box/M: network size is required")
    box = _box(raw)
    if raw.get("layout", "random") == "spaced":
        return box.spaced(raw["M"], tau)
    return box.sample(TrialStreams(seed).network_generator(0), raw["M"], tau)


# ------------------------------------------------------------ serialization


def _clean(value):
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def render_json(command: str, digest: str, seed: int, result: dict) -> str:
    doc = {"meta": {"command": command, "config_sha256": digest, "seed": seed}, "result": _clean(result)}
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def render_csv(command: str, digest: str, seed: int, columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# command: {command}\n# config_sha256: {digest}\n# seed: {seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


# ------------------------------------------------------------ commands


class Outcome:
    def __init__(self, text: str, strict_failures: list[str]):
        self.text = text
        self.strict_failures = strict_failures


def cmd_crb(config: dict, seed: int, digest: str) -> Outcome:
    with config_errors():
        signal = _signal(config)
        sensors = [validate_drift_params(_sensor(s)) for s in config["sensors"]]
    N, P = config["N"], signal.order
    limit = config.get("epsilon", DEFAULT_EPSILON_LIMIT)
    # dense factorization is the auditable default; long records switch to the O(N) route
    exact = exact_crb_for(sensors, N, P, method="dense" if N <= DENSE_LIMIT else "banded").diag
    result: dict[str, Any] = {"N": N, "P": P, "M": len(sensors), "exact": exact}
    failures = []
    try:
        second = closed_form_crb(sensors, N, P, "second")
        first = closed_form_crb(sensors, N, P, "first")
    except DomainError as exc:
        result.update(closed_second=None, closed_first=None, epsilon=None, mre=None,
                      regime=None, negative_variance=None, closed_form_error=str(exc))
        failures.append(f"closed forms unavailable: {exc}")
    else:
        result.update(
            regime=second.regime.value,
            closed_second=second.diag,
            closed_first=first.diag,
            epsilon=second.epsilon,
            mre={"closed_second": max_relative_error(exact, second.diag),
                 "closed_first": max_relative_error(exact, first.diag)},
            negative_variance=second.negative_variance,
        )
        if second.negative_variance:
            failures.append("second-order closed form gives a nonpositive variance")
        if float(np.max(second.epsilon)) > limit:
            failures.append(f"max epsilon_p {float(np.max(second.epsilon)):.3g} exceeds {limit}")
    return Outcome(render_json("crb", digest, seed, result), failures)


MRE_COLUMNS = ["rho", "gamma", "tau_mode", "variant", "N_epsilon", "reason"]


def cmd_mre_map(config: dict, seed: int, digest: str) -> Outcome:
    with config_errors():
        signal = _signal(config)
        taus = _tau_list(config.get("tau"), [INFINITY])
    cfg = MreMapConfig(
        P=signal.order,
        rho=config["grid"]["rho"],
        gamma=config["grid"]["gamma"],
        taus=taus,
        epsilon=config.get("epsilon", 0.05),
        variants=config.get("variants", ["fim", "crb"]),
        N_max=config.get("N_max", 1 << 20),
    )
    rows = mre_map(cfg)
    failures = [f"cell rho={r['rho']}, gamma={r['gamma']}: {r['reason']}" for r in rows if r["reason"]]
    return Outcome(render_csv("mre-map", digest, seed, MRE_COLUMNS, rows), failures)


MULTI_COLUMNS = ["M", "N", "tau_mode", "p", "avg_crb", "avg_crb_closed", "mc_variance",
                 "ci_low", "ci_high", "networks", "trials"]


def cmd_multisensor(config: dict, seed: int, digest: str) -> Outcome:
    with config_errors():
        box = _box(config["box"])
        default_taus = [1] if box.rho[0] >= 1.0 else [1, INFINITY]
        signal = _signal(config)
        taus = _tau_list(config.get("tau"), default_taus)
    cfg = MultisensorConfig(
        box=box,
        signal=signal,
        M_list=config["M_list"],
        N_list=config["N_list"],
        taus=taus,
        networks=config.get("networks", 200),
        trials=config.get("trials", 500),
        seed=seed,
        mode=config.get("mode", "integral"),
    )
    rows = multisensor_study(cfg)
    failures = [f"closed-form Average-CRB nonpositive at M={r['M']}, N={r['N']}, tau={r['tau_mode']}, p={r['p']}"
                for r in rows if not r["avg_crb_closed"] > 0]
    return Outcome(render_csv("multisensor", digest, seed, MULTI_COLUMNS, rows), failures)


QUANT_COLUMNS = ["bits", "p", "sigma2_Q", "modified_crb", "modified_crb_closed", "mc_variance",
                 "ci_low", "ci_high", "clip_rate", "trials"]


def cmd_quantized(config: dict, seed: int, digest: str) -> Outcome:
    q = config["quantizer"]
    bits = q["bits"] if isinstance(q["bits"], list) else [q["bits"]]
    if not q["U1"] > q["U0"]:
        raise ConfigError("quantizer: need U1 > U0")
    with config_errors():
        sensors = [validate_drift_params(s) for s in _network_sensors(config, seed)]
        signal = _signal(config)
    cfg = QuantizedConfig(
        sensors=sensors,
        signal=signal,
        N=config["N"],
        U0=q["U0"],
        U1=q["U1"],
        bits=bits,
        trials=config.get("trials", 10_000),
        seed=seed,
    )
    rows = quantized_study(cfg)
    failures = [f"closed-form Modified-CRB invalid at bits={r['bits']}, p={r['p']}"
                for r in rows if not r["modified_crb_closed"] > 0]
    return Outcome(render_csv("quantized", digest, seed, QUANT_COLUMNS, rows), failures)


def cmd_montecarlo(config: dict, seed: int, digest: str) -> Outcome:
    with config_errors():
        signal = _signal(config)
        sensors = [validate_drift_params(s) for s in _network_sensors(config, seed)]
    quantizer = None
    if "quantizer" in config:
        q = config["quantizer"]
        if isinstance(q["bits"], list):
            raise ConfigError("quantizer/bits: montecarlo takes a single bit depth")
        if not q["U1"] > q["U0"]:
            raise ConfigError("quantizer: need U1 > U0")
        quantizer = QuantizerSpec(q["U0"], q["U1"], q["bits"])
    res = monte_carlo_variance(MonteCarloConfig(sensors, signal, config["N"], config["trials"], seed, quantizer))
    result = {
        "N": config["N"], "P": signal.order, "M": len(sensors),
        "variance": res.variance, "mean": res.mean, "ci_low": res.ci_low, "ci_high": res.ci_high,
        "bias_se": res.bias_se, "clip_rate": res.clip_rate, "trials": res.trials, "seed": res.seed,
        "exact_crb": exact_crb_for(sensors, config["N"], signal.order, method="banded").diag if quantizer is None else None,
    }
    return Outcome(render_json("montecarlo", digest, seed, result), [])


HANDLERS: dict[str, Callable[[dict, int, str], Outcome]] = {
    "crb": cmd_crb,
    "mre-map": cmd_mre_map,
    "multisensor": cmd_multisensor,
    "quantized": cmd_quantized,
    "montecarlo": cmd_montecarlo,
}


# ------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftcrb", description="Estimation bounds for polynomial signals in drifting sensors.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--out", help="output path (default: config 'output' or stdout)")
    parser.add_argument("--seed", type=int, help="master seed, overrides the config")
    parser.add_argument("--strict", action="store_true", help="fail when closed forms leave their validity region")
    return parser


def run(command: str, config: dict, seed: int | None = None, strict: bool = False) -> tuple[int, str]:
    """Validate, execute and render; returns (exit code, output text)."""
    try:
        validate_config(command, config)
        if seed is None:
            seed = config.get("seed", 0)
        if seed < 0:
            raise ConfigError("seed must be nonnegative")
        digest = config_hash(config)
        outcome = HANDLERS[command](config, seed, digest)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG, ""
    except DriftCrbError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_DOMAIN, ""
    for msg in outcome.strict_failures:
        log.warning("%s", msg)
    if strict and outcome.strict_failures:
        return EXIT_STRICT, outcome.text
    return EXIT_OK, outcome.text


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="driftcrb: %(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_CONFIG
    if not isinstance(config, dict):
        log.error("configuration error: top level must be an object")
        return EXIT_CONFIG
    code, text = run(args.command, config, args.seed, args.strict)
    if text:
        out = args.out or config.get("output")
        if out:
            with open(out, "w", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
