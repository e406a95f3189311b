"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 checksum failure.
"""

import argparse
import csv
import itertools
import json
import sys
import warnings

import jsonschema
import numpy as np

from . import channel, codec, lattice, storage
from .channel import ChannelQuantizationError
from .construction import (CodeConfig, RateTargetPolicy, WiretapConfigError,
                           assemble_code, lattice_rate_terms)
from .lattice import QuadratureError
from .sim import leakage_upper_bound, run_trials

EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECKSUM = 2, 3, 4
CONFIG_VERSION = 1
RATES_HEADER = ["alpha", "r", "rate_bits", "capacity_bits", "gap_bits",
                "eps1", "epsb", "epse"]
AUTO_R_EPS = 1e-3

_positive = {"type": "number", "exclusiveMinimum": 0}
CONFIG_SCHEMA = {
    "type": "object",
    "required": ["version", "N", "alpha", "sigma_b", "sigma_e"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "N": {"type": "integer", "minimum": 2},
        "alpha": _positive,
        "r": {"type": "integer", "minimum": 1},
        "chain": {"type": "string", "pattern": r"^\s*Z(\s*/\s*[0-9]*Z)+\s*$"},
        "sigma_b": _positive,
        "sigma_e": _positive,
        "sigma_s": _positive,
        "mode": {"enum": ["mod", "shaped"]},
        "mu": {"type": "integer", "minimum": 8},
        "seed": {"type": "integer", "minimum": 0},
        "policy": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["threshold", "beta", "rate"]},
                "delta_good": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                "delta_bad": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                "delta": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                "beta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
                "backoff": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "oneOf": [{"required": ["r"]}, {"required": ["chain"]}],
    "additionalProperties": False,
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def parse_chain(text):
    """Depth ``r`` of a chain written like ``Z/2Z/4Z``."""
    terms = [t.strip() for t in text.split("/")]
    for j, t in enumerate(terms):
        coef = t[:-1] or "1"
        if not t.endswith("Z") or not coef.isdigit() or int(coef) != 2 ** j:
            raise WiretapConfigError(f"chain term {t!r} is not {2 ** j}Z")
    return len(terms) - 1


def config_from_dict(d):
    """Validate a configuration document and build a :class:`CodeConfig`."""
    try:
        jsonschema.validate(d, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise WiretapConfigError(f"invalid config: {exc.message}") from None
    d = dict(d)
    if "chain" in d:
        d["r"] = parse_chain(d.pop("chain"))
    d.pop("version")
    return CodeConfig.from_dict(d)


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise WiretapConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise WiretapConfigError(f"config is not valid JSON: {exc}") from None
    return config_from_dict(doc)


def parse_sweep(spec):
    """Parse ``key=v1,v2;key=...`` into a dict of value lists.

    Keys are ``alpha``, ``r``, ``sigma_b`` and ``sigma_e``; ``r=auto``
    picks the smallest depth whose bottom-lattice loss for Eve is below
    ``1e-3`` bits.
    """
    out = {}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        key, _, vals = part.partition("=")
        key = key.strip()
        if key not in ("alpha", "r", "sigma_b", "sigma_e") or not vals:
            raise WiretapConfigError(f"bad sweep term {part!r}")
        items = [v.strip() for v in vals.split(",") if v.strip()]
        try:
            if key == "r":
                out[key] = ["auto" if v == "auto" else int(v) for v in items]
            else:
                out[key] = [float(v) for v in items]
        except ValueError:
            raise WiretapConfigError(f"bad sweep value in {part!r}") from None
    return out


def auto_depth(alpha, sigma_b, sigma_e, limit=40):
    for r in range(1, limit + 1):
        if lattice_rate_terms(alpha, r, sigma_b, sigma_e)["epse"] < AUTO_R_EPS:
            return r
    raise WiretapConfigError("no depth reaches the requested bottom-lattice loss")


def rate_rows(cfg, sweep):
    grid = {"alpha": [cfg.alpha], "r": [cfg.r], "sigma_b": [cfg.sigma_b],
            "sigma_e": [cfg.sigma_e]}
    grid.update(sweep)
    rows = []
    for alpha, r, sb, se in itertools.product(grid["alpha"], grid["r"],
                                              grid["sigma_b"], grid["sigma_e"]):
        depth = auto_depth(alpha, sb, se) if r == "auto" else r
        t = lattice_rate_terms(alpha, depth, sb, se)
        rows.append([alpha, depth, t["rate"], t["capacity"], t["gap"],
                     t["eps1"], t["epsb"], t["epse"]])
    return rows


def _build(cfg):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        code = assemble_code(cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return code


def cmd_construct(args):
    cfg = load_config(args.config)
    code = _build(cfg)
    storage.save(code, args.out)
    names = ["A", "B", "C", "D", "F", "I", "S", "dS"]
    print("level " + " ".join(f"{n:>5}" for n in names) + "  bob_cap  eve_cap")
    for l, row in enumerate(code.rates["levels"], start=1):
        print(f"{l:>5} " + " ".join(f"{row[n]:>5}" for n in names)
              + f"  {row['bob_capacity']:.5f}  {row['eve_capacity']:.5f}")
    summary = {k: v for k, v in code.rates.items() if k != "levels"}
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_rates(args):
    cfg = load_config(args.config)
    rows = rate_rows(cfg, parse_sweep(args.sweep or ""))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RATES_HEADER)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return 0


def cmd_simulate(args):
    code = storage.load(args.code)
    sigma = code.config.sigma_b if args.sigma is None else args.sigma
    rep = run_trials(code, sigma, args.trials, seed=args.seed,
                     decoder=args.decoder, blocks=args.blocks)
    d = rep.to_dict()
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(d))
        w.writerow(list(d.values()))
    print(json.dumps(d, sort_keys=True))
    return 0


def _module_checks():
    """Small fixed-size checks of the lattice and channel kernels."""
    chain = lattice.PartitionChain(1.0, 2)
    bsc = channel.bsc(0.11)
    minus, plus = channel.polar_split(bsc)
    z = channel.bhattacharyya(bsc)
    part = channel.make_partition_channel(chain, 1, 0.5, 32)
    return [
        ("lattice: partition capacities telescope", abs(
            lattice.partition_capacity(chain, 1, 0.5) + lattice.partition_capacity(chain, 2, 0.5)
            - lattice.mod_capacity(4.0, 0.5) + lattice.mod_capacity(1.0, 0.5)) < 1e-9),
        ("lattice: flatness factor vanishes for wide noise",
         lattice.flatness_factor(1.0, 3.0) == 0.0),
        ("channel: plus transform squares Z",
         abs(channel.bhattacharyya(plus) - z * z) < 1e-12),
        ("channel: polar split conserves information", abs(
            channel.mutual_information(minus) + channel.mutual_information(plus)
            - 2.0 * channel.mutual_information(bsc)) < 1e-10),
        ("channel: quantised partition channel below capacity",
         channel.mutual_information(part) <= lattice.partition_capacity(chain, 1, 0.5) + 1e-12),
    ]


def _round_trip(code, frames=8):
    rng = np.random.default_rng([code.config.seed, 0xC0DE])
    msg = rng.integers(0, 2, (frames, codec.message_length(code)), dtype=np.uint8)
    if code.shaped:
        smap = codec.ShapingMap(code.config.seed)
        pts = codec.encode_shaped(code, msg, rng, smap).points
        est, _ = codec.decode_shaped(code, pts, 1e-6, smap)
    else:
        pts, _ = codec.encode_mod(code, msg, rng)
        est = codec.decode_mod(code, pts, 1e-6)
    return np.array_equal(est, msg)


def _leakage_ok(code):
    leak = leakage_upper_bound(code)
    count = sum(int((lv.sets.A | lv.sets.C).sum()) for lv in code.levels)
    if isinstance(code.config.policy, RateTargetPolicy):
        # rank-selected indices carry no threshold guarantee
        return 0.0 <= leak <= count
    delta_bad = code.config.policy.deltas(code.N)[1]
    return 0.0 <= leak <= count * (2.0 * delta_bad) ** 0.5 + 1e-15


def verify_code(code):
    """Run the structural and numeric checks; returns ``(name, ok)`` pairs."""
    results = []

    def record(name, fn):
        try:
            ok = bool(fn())
        except AssertionError:
            ok = False
        results.append((name, ok))

    record("construction: index set invariants", lambda: code.check() is None)
    record("construction: sandwich bounds", lambda: all(
        (lv.bob.z_lower <= lv.bob.z_upper).all() and
        (lv.eve.z_lower <= lv.eve.z_upper).all() for lv in code.levels))
    record("construction: eavesdropper degraded", lambda: all(
        (lv.eve.z_upper >= lv.bob.z_lower - 1e-6).all() for lv in code.levels))
    record("codec: zero-noise round trip", lambda: _round_trip(code))
    record("sim: leakage bound within budget", lambda: _leakage_ok(code))
    record("storage: serialisation round trip", lambda: storage.dumps(
        storage.loads(storage.dumps(code))) == storage.dumps(code))
    return results


def cmd_verify(args):
    if args.code:
        code = storage.load(args.code)
    else:
        code = _build(load_config(args.config))
    results = _module_checks() + verify_code(code)
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(ok for _, ok in results) else EXIT_NUMERIC


def build_parser():
    p = argparse.ArgumentParser(prog="polarwiretap",
                                description="Polar lattice codes for the Gaussian wiretap channel")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("construct", help="build a code and write it to disk")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_construct)

    r = sub.add_parser("rates", help="tabulate achievable rates over a sweep")
    r.add_argument("--config", required=True)
    r.add_argument("--sweep", default="")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rates)

    s = sub.add_parser("simulate", help="Monte Carlo frame error rate of a code")
    s.add_argument("--code", required=True)
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma", type=float, default=None)
    s.add_argument("--decoder", choices=["map", "chained"], default="map")
    s.add_argument("--blocks", type=int, default=2)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="check invariants of a new or stored code")
    src = v.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--code")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except storage.ChecksumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKSUM
    except WiretapConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, ChannelQuantizationError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
