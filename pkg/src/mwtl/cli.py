"""
Command-line driver: one JSON config in, per-check CSV files and a summary out.

    mwtl run --config cfg.json --out results/ --seed 7
    mwtl check calderon equiv --config cfg.json
    mwtl gen-weight --config cfg.json

Checks always run in dependency order (weights, reducing, profile, norms,
multiplier) whatever order the config lists them in.  The exit status is 0
exactly when every requested check passes; 2 signals an invalid config.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .grid import TorusGrid, band_limited_field
from .littlewood_paley import AnalysisProfile, calderon_check, lp_pieces, make_pair, make_profile
from .multiplier import MultiplierSymbol, boundedness_report, hormander_constants
from .norms import (NORM_KINDS, SpaceParams, all_norms, c38_check, config_fingerprint,
                    equivalence_report, fs_check, jcf_check, lattice_constant)
from .reducing import build_reducing, verification_json, verify_reducing
from .weights import WeightSpec, ap_characteristic, doubling_exponent, generate_weight

CHECK_ORDER = ("apchar", "doubling", "reduce", "calderon", "norms", "equiv",
               "jcf", "fs", "c38", "hormander", "multiplier")

DEFAULTS = {
    "grid": {"n": 1, "L": 8},
    "m": 2,
    "weight": {"kind": "identity"},
    "p": 2.0,
    "q": 2.0,
    "alpha": 0.0,
    "a": None,
    "lam": None,
    "ell": None,
    "profile": {"c1": 0.5, "c2": 2.0, "jmin": 2, "jmax": None},
    "reducing": {"method": "auto", "n_directions": 128, "verify_trials": 100},
    "corpus": {"size": 10, "seed": 0, "band": [4, 32]},
    "multiplier": {"kind": "riesz", "s": 0.0, "ell": None, "params": {"d": 1}},
    "thresholds": {"calderon": 1e-8, "spread": 50.0, "reduce": None, "jcf": 0.05,
                   "fs": 10.0, "c38": 20.0, "multiplier": 20.0, "eq_slack": 1.1},
    "out": "mwtl_out",
    "checks": list(CHECK_ORDER),
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _merge(base: dict, over: dict, path: str = "") -> dict:
    """Overlay ``over`` on the defaults; nested sections merge key by key."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        name = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config field '{name}'")
        # the weight spec is validated as a whole by WeightSpec
        if isinstance(base[k], dict) and k != "weight" and path == "":
            if not isinstance(v, dict):
                raise ConfigError(f"config field '{name}' must be an object")
            out[k] = _merge(base[k], v, name + ".") if k != "multiplier" else {**base[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _field(name: str, fn, *args):
    try:
        return fn(*args)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"config field '{name}': {exc}") from None


@dataclass
class RunConfig:
    """Validated run configuration with every default filled in."""

    raw: dict
    grid: TorusGrid
    weight: WeightSpec
    profile: AnalysisProfile
    params: SpaceParams
    checks: list[str]
    out: Path

    @classmethod
    def from_dict(cls, obj: dict, seed: int | None = None, out=None) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        raw = _merge(DEFAULTS, obj)
        if seed is not None:
            if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
                raise ConfigError("config field 'seed': must be an unsigned 64-bit integer")
            raw["corpus"]["seed"] = seed
        if out is not None:
            raw["out"] = str(out)
        g = raw["grid"]
        grid = _field("grid", lambda: TorusGrid(int(g["n"]), int(g["L"])))
        m = raw["m"]
        if not isinstance(m, int) or m < 1:
            raise ConfigError("config field 'm': must be a positive integer")
        weight = _field("weight", WeightSpec.from_json, raw["weight"])
        pr = raw["profile"]
        if pr["jmax"] is None:
            pr["jmax"] = int(math.floor(math.log2(grid.N / 2 / float(pr["c2"]))))
        profile = _field("profile", make_profile, pr["c1"], pr["c2"], (pr["jmin"], pr["jmax"]), grid)
        q = raw["q"]
        q = math.inf if q in ("inf", "Infinity") else q
        params = _field("p", SpaceParams, raw["alpha"], raw["p"], q, raw["a"], raw["lam"])
        red = raw["reducing"]
        if red["method"] not in ("auto", "gram2", "john"):
            raise ConfigError("config field 'reducing.method': expected auto, gram2 or john")
        if red["method"] == "auto":
            red["method"] = "gram2" if params.p == 2 else "john"
        c = raw["corpus"]
        if not isinstance(c["size"], int) or c["size"] < 1:
            raise ConfigError("config field 'corpus.size': must be a positive integer")
        if not isinstance(c["seed"], int) or c["seed"] < 0:
            raise ConfigError("config field 'corpus.seed': must be a nonnegative integer")
        lo, hi = _field("corpus.band", lambda: tuple(float(b) for b in c["band"]))
        if not 0 < lo <= hi:
            raise ConfigError("config field 'corpus.band': need 0 < low <= high")
        checks = raw["checks"]
        if not isinstance(checks, list) or any(ch not in CHECK_ORDER for ch in checks):
            raise ConfigError(f"config field 'checks': entries must come from {list(CHECK_ORDER)}")
        checks = [ch for ch in CHECK_ORDER if ch in checks]
        return cls(raw, grid, weight, profile, params, checks, Path(raw["out"]))

    @property
    def m(self) -> int:
        return self.raw["m"]


class Runner:
    """Executes the checks of one config, sharing intermediate objects between them."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.summary: dict = {}
        self._cache: dict = {}

    # -- shared state ---------------------------------------------------------
    @property
    def W(self):
        if "W" not in self._cache:
            self._cache["W"] = generate_weight(self.cfg.weight, self.cfg.grid, self.cfg.m)
        return self._cache["W"]

    @property
    def beta(self) -> float:
        if "beta" not in self._cache:
            self._cache["beta"] = doubling_exponent(self.W, self.cfg.params.p)
        return self._cache["beta"]

    @property
    def params(self) -> SpaceParams:
        return self.cfg.params.resolve(self.beta, self.cfg.grid.n)

    @property
    def family(self):
        if "family" not in self._cache:
            red = self.cfg.raw["reducing"]
            fam = build_reducing(self.W, self.cfg.params.p, red["method"],
                                 levels=self.cfg.profile.scales, n_directions=red["n_directions"],
                                 seed=self._seed32)
            self._cache["family"] = fam
            self._cache["constants"] = verify_reducing(fam, self.W, trials=red["verify_trials"],
                                                       seed=self._seed32 + 1)
        return self._cache["family"]

    @property
    def _seed32(self) -> int:
        # sklearn-style random_state seeds must fit in 32 bits
        return self.cfg.raw["corpus"]["seed"] % (2 ** 32 - 1)

    @property
    def constants(self) -> tuple[float, float]:
        self.family
        return self._cache["constants"]

    @property
    def corpus(self):
        if "corpus" not in self._cache:
            c = self.cfg.raw["corpus"]
            lo, hi = c["band"]
            self._cache["corpus"] = [
                band_limited_field(self.cfg.grid, self.cfg.m, band=(lo, hi), seed=c["seed"] + i)
                for i in range(c["size"])]
        return self._cache["corpus"]

    @property
    def symbol(self) -> MultiplierSymbol:
        spec = dict(self.cfg.raw["multiplier"])
        if self.cfg.raw["ell"] is not None:
            spec["ell"] = self.cfg.raw["ell"]
        if spec.get("ell") is None:
            # smallest integer strictly above the theorem threshold
            thr = self.cfg.grid.n / self.params.r + self.beta / self.params.p + self.cfg.grid.n / 2
            spec["ell"] = int(math.floor(thr)) + 1
        return _field("multiplier", MultiplierSymbol.from_json, spec)

    def thr(self, name):
        return self.cfg.raw["thresholds"][name]

    def out(self, name: str) -> Path:
        return self.cfg.out / name

    # -- checks ---------------------------------------------------------------
    def check_apchar(self):
        rep = ap_characteristic(self.W, self.cfg.params.p)
        rep.write_csv(self.out("apchar.csv"))
        return {"value": rep.value, "pass": bool(math.isfinite(rep.value))}

    def check_doubling(self):
        b = self.beta
        _write_rows(self.out("doubling.csv"), ["p", "beta"], [[self.cfg.params.p, b]])
        return {"beta": b, "pass": bool(math.isfinite(b))}

    def check_reduce(self):
        fam = self.family
        fam.write_csv(self.out("reducing.csv"))
        C1, C2 = self.constants
        red = self.cfg.raw["reducing"]
        ver = verification_json(fam, (C1, C2), red["verify_trials"], self._seed32 + 1)
        bound = self.thr("reduce")
        if bound is None:
            root = math.sqrt(self.cfg.m)
            exact = fam.method == "gram2" and self.cfg.params.p == 2
            bound = 1.0 + 1e-9 if exact else (root * (1 + 1e-3) if self.cfg.params.p >= 1 else 2 * root)
        ver.update(ratio=C2 / C1, bound=bound, **{"pass": bool(C2 / C1 <= bound)})
        return ver

    def check_calderon(self):
        pair = make_pair(self.cfg.profile)
        res = [calderon_check(pair, f) for f in self.corpus]
        _write_rows(self.out("calderon.csv"), ["member_id", "residual"], list(enumerate(res)))
        worst = max(res)
        return {"residual": worst, "pass": bool(worst < self.thr("calderon"))}

    def check_norms(self):
        fam = self.family
        rows, ok = [], True
        cid = self._config_id()
        for i, f in enumerate(self.corpus):
            vals = all_norms(f, self.W, fam, self.params, self.cfg.profile)
            ok &= vals["star"] >= vals["F"] - 1e-9 and all(math.isfinite(v) and v >= 0 for v in vals.values())
            rows += [[cid, i, k, vals[k]] for k in NORM_KINDS]
        _write_rows(self.out("norms.csv"), ["config_id", "member_id", "norm_kind", "value"], rows)
        return {"members": len(self.corpus), "pass": bool(ok)}

    def check_equiv(self):
        rep = equivalence_report(self.corpus, self.W, self.family, self.params, self.cfg.profile,
                                 config_id=self._config_id())
        rep.write_csv(self.out("equiv.csv"))
        agg = rep.aggregate_json()
        _write_json(self.out("equiv.json"), agg)
        worst = max((a["spread"] for a in agg), default=1.0)
        C1, C2 = self.constants
        eq = rep.aggregate.get("F_AQ/F", {"spread": 1.0})["spread"]
        eq_bound = (C2 / C1) * self.thr("eq_slack")
        return {"max_spread": worst, "spread_F_AQ": eq, "bound_F_AQ": eq_bound,
                "pass": bool(worst <= self.thr("spread") and eq <= eq_bound)}

    def _scalar_fields(self):
        return [np.abs(f.values[..., 0]) for f in self.corpus]

    def check_jcf(self):
        n = self.cfg.grid.n
        eta = n + 1.0
        rows, ok = [], True
        for j in self.cfg.profile.scales:
            lat = lattice_constant(self.cfg.grid, j, eta)
            worst = max(jcf_check(h, self.cfg.grid, j, eta) for h in self._scalar_fields())
            ok &= worst <= lat * (1 + self.thr("jcf"))
            rows.append([j, eta, worst, lat])
        _write_rows(self.out("jcf.csv"), ["level", "eta", "ratio", "lattice_constant"], rows)
        return {"max_ratio": max(r[2] for r in rows), "pass": bool(ok)}

    def _fs_exponents(self):
        p, q = self.cfg.params.p, self.cfg.params.q
        return (p if p > 1 else 2.0), (q if q > 1 else 2.0)

    def check_fs(self):
        p, q = self._fs_exponents()
        val = fs_check(self._scalar_fields(), self.cfg.grid, p, q)
        _write_rows(self.out("fs.csv"), ["p", "q", "ratio"], [[p, q, val]])
        return {"ratio": val, "p": p, "q": q, "pass": bool(val <= self.thr("fs"))}

    def check_c38(self):
        p, q = self.cfg.params.p, self.cfg.params.q
        scales = list(self.cfg.profile.scales)
        rows = []
        for i, f in enumerate(self.corpus):
            pieces = np.abs(lp_pieces(f, self.cfg.profile)[..., 0])
            rows.append([i, c38_check(self.W, self.family, p, q, list(pieces), scales)])
        _write_rows(self.out("c38.csv"), ["member_id", "ratio"], rows)
        worst = max(r[1] for r in rows)
        return {"max_ratio": worst, "pass": bool(math.isfinite(worst) and worst <= self.thr("c38"))}

    def check_hormander(self):
        rep = hormander_constants(self.symbol, self.cfg.grid)
        rep.write_csv(self.out("hormander.csv"))
        consts = {";".join(map(str, s)): v for s, v in rep.constants.items()}
        return {"A_sigma": consts, "pass": bool(all(math.isfinite(v) for v in consts.values()))}

    def check_multiplier(self):
        sym = self.symbol
        rep = boundedness_report(self.corpus, self.W, self.params, sym, self.cfg.profile, self.beta)
        _write_rows(self.out("multiplier.csv"), ["member_id", "ratio"], list(enumerate(rep.ratios)))
        return {"max_ratio": rep.max_ratio, "min_ratio": rep.min_ratio, "ell": sym.ell,
                "ell_valid": rep.ell_valid, "ell_threshold": rep.ell_threshold,
                "pass": bool(rep.max_ratio <= self.thr("multiplier"))}

    # -- driver ---------------------------------------------------------------
    def _config_id(self) -> str:
        # the output location does not change any computed value
        return config_fingerprint({k: v for k, v in self.cfg.raw.items() if k != "out"})

    def resolved_config(self) -> dict:
        out = copy.deepcopy(self.cfg.raw)
        P = self.params
        out.update(a=P.a, lam=P.lam, beta=self.beta, flags=P.flags(self.beta, self.cfg.grid.n),
                   config_id=self._config_id(), version=__version__)
        if "multiplier" in self.cfg.checks or "hormander" in self.cfg.checks:
            out["multiplier"] = self.symbol.to_json()
        return out

    def run(self) -> dict:
        self.cfg.out.mkdir(parents=True, exist_ok=True)
        for name in self.cfg.checks:
            self.summary[name] = getattr(self, f"check_{name}")()
        _write_json(self.out("summary.json"), self.summary)
        _write_json(self.out("config.resolved.json"), self.resolved_config())
        return self.summary

    def gen_weight(self) -> Path:
        self.cfg.out.mkdir(parents=True, exist_ok=True)
        vals = self.W.values.reshape(self.cfg.grid.size, self.cfg.m, self.cfg.m)
        rows = [[x, r, c, repr(float(np.real(vals[x, r, c]))), repr(float(np.imag(vals[x, r, c])))]
                for x in range(vals.shape[0]) for r in range(self.cfg.m) for c in range(self.cfg.m)]
        _write_rows(self.out("weight.csv"), ["sample_index", "row", "col", "re", "im"], rows)
        _write_json(self.out("weight_spec.json"), self.cfg.weight.to_json())
        return self.out("weight.csv")


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def load_config(path, seed=None, out=None) -> RunConfig:
    if path is None:
        obj = {}
    else:
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return RunConfig.from_dict(obj, seed=seed, out=out)


def run(config, seed=None, out=None) -> dict:
    """Run a config (dict, path or :class:`RunConfig`) and return the summary."""
    if isinstance(config, RunConfig):
        cfg = config
    elif isinstance(config, dict):
        cfg = RunConfig.from_dict(config, seed=seed, out=out)
    else:
        cfg = load_config(config, seed=seed, out=out)
    return Runner(cfg).run()


_SUBCOMMANDS = {"apchar": ["apchar"], "reduce": ["reduce"], "norms": ["norms"],
                "equiv": ["equiv"], "multiplier": ["hormander", "multiplier"]}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mwtl", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration (defaults when omitted)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=_u64, help="corpus and direction seed (overrides the config)")

    common(sub.add_parser("run", help="run the checks listed in the config"))
    common(sub.add_parser("gen-weight", help="sample the configured weight to weight.csv"))
    for name, checks in _SUBCOMMANDS.items():
        common(sub.add_parser(name, help=f"run the {' and '.join(checks)} check"))
    chk = sub.add_parser("check", help="run the named checks")
    chk.add_argument("names", nargs="+", choices=CHECK_ORDER)
    common(chk)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if args.command == "gen-weight":
            print(Runner(cfg).gen_weight())
            return 0
        if args.command != "run":
            names = args.names if args.command == "check" else _SUBCOMMANDS[args.command]
            cfg.checks = [ch for ch in CHECK_ORDER if ch in names]
            cfg.raw["checks"] = list(cfg.checks)
        summary = Runner(cfg).run()
    except ConfigError as exc:
        print(f"mwtl: {exc}", file=sys.stderr)
        return 2
    failed = [k for k, v in summary.items() if not v["pass"]]
    for k in summary:
        print(f"{k}: {'pass' if summary[k]['pass'] else 'FAIL'}")
    if failed:
        print(f"mwtl: failing checks: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
