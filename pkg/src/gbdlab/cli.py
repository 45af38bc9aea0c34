"""Batch front-end: experiment configuration, I/O and report emission.

Exit codes: 0 on success, 2 when an experiment ran but an audited inequality
failed, 1 on usage or runtime errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import suites
from .compactness import (
    cauchy_check,
    convergence_check,
    energy_report,
    generate_sequence,
    lsc_check,
)
from .errors import ConfigError, GbdLabError
from .fields import dyadic_cubes
from .fileio import (
    read_field,
    read_partition,
    write_csv,
    write_field,
    write_partition,
    write_pgm,
)
from .partition import build_partition
from .rigidity import DEFAULT_FIT_CONSTANT, pk_fit, pk_verify
from .slicing import (
    SliceMeasures,
    default_directions,
    small_jump_variation_of_slice,
    extract_slice,
)

CONFIG_SCHEMA = "gbdlab-config/1"

COMMON_KEYS = {"schema", "out", "seed", "jobs", "directions", "sigma", "eta",
               "delta0", "jmax", "p"}
COMMAND_KEYS = {
    "energy": {"field"},
    "slice-measure": {"field"},
    "pk-fit": {"field", "cube", "budget", "collect_h"},
    "partition": {"suite", "fields", "K", "h", "budget", "noise_amp0",
                  "noise_decay", "tau_bound", "tau_div"},
    "compactness": {"suite", "fields", "K", "h", "budget", "noise_amp0",
                    "noise_decay", "tau_bound", "tau_div", "mode", "e"},
    "lsc-check": {"suite", "fields", "K", "h", "partition", "mode",
                  "tail_fraction", "slack"},
}

SUITES = {
    "two_piece": suites.two_piece_spec,
    "three_stripe": suites.three_stripe_spec,
    "smooth_single": suites.smooth_single_spec,
    "noisy_two_piece": suites.noisy_two_piece_spec,
    "gsbdp_rotation": suites.gsbdp_rotation_spec,
}


def parse_config(path) -> dict:
    """Flat ``key = value`` document; blank lines and # comments ignored."""
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {ln}: expected key = value", key=line)
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    schema = out.get("schema")
    if schema is not None and schema != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r}", key="schema")
    return out


def _check_keys(command: str, cfg: dict) -> None:
    allowed = COMMON_KEYS | COMMAND_KEYS[command]
    for key in cfg:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r} for {command}", key=key)


def _build_sequence(cfg: dict, seed: int):
    if "fields" in cfg:
        paths = [p for p in cfg["fields"].split(",") if p]
        fields = [read_field(p) for p in paths]
        return None, fields
    name = cfg.get("suite", "two_piece")
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}", key="suite")
    kwargs = {}
    if "K" in cfg:
        kwargs["K"] = int(cfg["K"])
    if "h" in cfg:
        kwargs["h"] = float(cfg["h"])
    if name in ("two_piece", "noisy_two_piece"):
        if "noise_amp0" in cfg:
            kwargs["noise_amp0"] = float(cfg["noise_amp0"])
        if "noise_decay" in cfg:
            kwargs["noise_decay"] = float(cfg["noise_decay"])
    spec = SUITES[name](**kwargs)
    fields = [generate_sequence(spec, k) for k in range(1, spec.K + 1)]
    return spec, fields


def _sigmas(args, cfg, default=(2.0, 4.0, 8.0, 16.0, 32.0)):
    raw = args.sigma if args.sigma else cfg.get("sigma")
    if raw is None:
        return tuple(default)
    return tuple(float(s) for s in str(raw).split(",") if s)


def _directions(args, cfg, d):
    n = args.directions or cfg.get("directions")
    return default_directions(d, int(n) if n else None)


def cmd_energy(args, cfg, out: Path) -> int:
    field = read_field(cfg["field"])
    p = args.p or float(cfg.get("p", 2.0))
    rep = energy_report(field, p, directions=_directions(args, cfg, field.domain.d))
    write_csv(out / "energy.csv", "energy",
              ["mu_total", "p_energy", "jump_area", "p", "excluded_cells",
               "convention"],
              [[rep.mu_total, rep.p_energy, rep.jump_area, rep.p,
                rep.excluded_cells, rep.convention]])
    return 0


def cmd_slice_measure(args, cfg, out: Path) -> int:
    field = read_field(cfg["field"])
    dirs = _directions(args, cfg, field.domain.d)
    sigmas = [s for s in _sigmas(args, cfg) if s > 1.0]
    measures = SliceMeasures(field, dirs, collect_lines=True)
    cols = ["kind", "direction_index", "xi", "y", "mu_line", "ac_variation",
            "jump_count"] + [f"I_sigma_{s:g}" for s in sigmas]
    rows = []
    per_dir_i = {i: [0.0] * len(sigmas) for i in range(len(dirs))}
    for rec in measures.line_records or []:
        i = rec["direction"]
        sf = extract_slice(field, dirs[i], rec["y"])
        ivals = [small_jump_variation_of_slice(sf, s) for s in sigmas]
        for j, v in enumerate(ivals):
            per_dir_i[i][j] += rec["weight"] * v
        rows.append(
            ["line", i, _vec(dirs[i]), _vec(rec["y"]), rec["mu_line"],
             rec["ac"], rec["jump_count"]] + ivals
        )
    for i in range(len(dirs)):
        total = measures.directional(i)
        rows.append(["aggregate", i, _vec(dirs[i]), "", total, "", ""]
                    + per_dir_i[i])
    write_csv(out / "slice_measure.csv", "slice-measure", cols, rows)
    return 0


def _vec(v) -> str:
    return "(" + " ".join(format(float(x), ".17g") for x in np.asarray(v)) + ")"


def cmd_pk_fit(args, cfg, out: Path) -> int:
    field = read_field(cfg["field"])
    box = None
    if "cube" in cfg:
        vals = [float(x) for x in cfg["cube"].split(",")]
        d = field.domain.d
        if len(vals) != 2 * d:
            raise ConfigError("cube needs lo/hi per axis", key="cube")
        box = np.asarray(vals, dtype=float).reshape(d, 2)
    fit = pk_fit(
        field, box,
        budget=int(cfg.get("budget", 256)),
        seed=args.seed,
        directions=_directions(args, cfg, field.domain.d),
        collect_h=str(cfg.get("collect_h", "false")).lower() == "true",
    )
    check = pk_verify(fit, field)
    w = fit.motion.w
    rows = [[
        _vec(0.5 * (fit.box[:, 0] + fit.box[:, 1])), fit.delta,
        fit.jump_density, fit.early_exit, fit.residual, check.ratio,
        fit.omega_volume / fit.delta ** field.domain.d,
        _vec(w[np.triu_indices(field.domain.d, k=1)]), _vec(fit.motion.b),
        fit.f_value if fit.f_value is not None else "",
        fit.h_value if fit.h_value is not None else "",
        fit.candidates_tried,
    ]]
    write_csv(out / "pk_fit.csv", "pk-fit",
              ["center", "delta", "jump_density", "early_exit", "residual",
               "ratio", "omega_fraction", "spin", "translation", "f_value",
               "h_value", "candidates"],
              rows)
    return 0


def _partition_common(args, cfg, out: Path):
    spec, fields = _build_sequence(cfg, args.seed)
    kwargs = dict(seed=args.seed)
    if args.eta or "eta" in cfg:
        kwargs["eta"] = args.eta or float(cfg["eta"])
    if args.delta0 or "delta0" in cfg:
        kwargs["delta0"] = args.delta0 or float(cfg["delta0"])
    if args.jmax is not None or "jmax" in cfg:
        kwargs["j_max"] = args.jmax if args.jmax is not None else int(cfg["jmax"])
    if args.directions or "directions" in cfg:
        kwargs["directions"] = _directions(args, cfg, fields[0].domain.d)
    if "budget" in cfg:
        kwargs["budget"] = int(cfg["budget"])
    if "tau_bound" in cfg:
        kwargs["tau_bound"] = float(cfg["tau_bound"])
    if "tau_div" in cfg:
        kwargs["tau_div"] = float(cfg["tau_div"])
    result = build_partition(fields, **kwargs)
    return spec, fields, result


def _emit_partition(result, out: Path) -> None:
    write_partition(result.partition, out / "partition.json")
    write_pgm(out / "labels.pgm", result.partition.labels.astype(float))
    rows = []
    for cl in result.classes:
        rows.append([cl.index, len(cl.members), str(cl.representative)])
    write_csv(out / "classes.csv", "partition-classes",
              ["class", "members", "representative"], rows)
    stats = result.report["scale_stats"]
    write_csv(out / "scales.csv", "partition-scales",
              ["level", "delta", "n_good", "n_bad", "b_volume", "eta_j"],
              [[s["level"], s["delta"], s["n_good"], s["n_bad"],
                s["b_volume"], s["eta_j"]] for s in stats])


def cmd_partition(args, cfg, out: Path) -> int:
    _, _, result = _partition_common(args, cfg, out)
    _emit_partition(result, out)
    return 0


def cmd_compactness(args, cfg, out: Path) -> int:
    spec, fields, result = _partition_common(args, cfg, out)
    _emit_partition(result, out)
    conv = convergence_check(fields, result.motions, eta_js=result.eta_js)
    write_csv(out / "convergence.csv", "convergence",
              ["k", "q50", "q90", "q99", "max", "truncated_l1"],
              [[k + 1] + [conv.quantiles[k][i] for i in range(4)]
               + [conv.truncated_l1[k]] for k in range(len(fields))])
    write_pgm(out / "deviation.pgm",
              np.linalg.norm(conv.limit, axis=-1))
    sigmas = _sigmas(args, cfg)
    mode = cfg.get("mode", spec.energy_mode if spec else "gbd")
    limit = None
    lsc = lsc_check(fields, result.partition, limit, sigmas=sigmas,
                    mode="gbd" if mode == "gbd" else "gsbdp")
    write_csv(out / "lsc.csv", "lsc-ledger",
              ["sigma", "k", "area"],
              [[r["sigma"], r["k"], r["area"]] for r in lsc.rows])
    e = np.zeros(fields[0].domain.d)
    e[0] = 1.0
    if "e" in cfg:
        e = np.asarray([float(x) for x in cfg["e"].split(",")])
        e = e / np.linalg.norm(e)
    violations = [] if lsc.holds else ["lsc"]
    cau_rows = []
    for level in range(len(result.classifications)):
        for s in sigmas:
            rep = cauchy_check(fields, result, e, s, level)
            cau_rows.append([level, s, float(rep.lhs.max()), rep.bound,
                             rep.holds])
            if not rep.holds:
                violations.append(f"cauchy(level={level}, sigma={s:g})")
    write_csv(out / "cauchy.csv", "cauchy",
              ["level", "sigma", "max_lhs", "bound", "holds"], cau_rows)
    if conv.holds is False:
        violations.append("escape-set")
    write_csv(out / "verdict.csv", "verdict",
              ["check", "holds"],
              [["lsc", lsc.holds], ["escape", conv.holds],
               ["cauchy", not any(v.startswith("cauchy") for v in violations)]])
    return 2 if violations else 0


def cmd_lsc_check(args, cfg, out: Path) -> int:
    spec, fields = _build_sequence(cfg, args.seed)
    mode = cfg.get("mode", "gbd")
    if "partition" in cfg:
        partition, _ = read_partition(cfg["partition"])
    else:
        result = build_partition(fields, seed=args.seed)
        partition = result.partition
    lsc = lsc_check(
        fields, partition, None, sigmas=_sigmas(args, cfg), mode=mode,
        tail_fraction=float(cfg.get("tail_fraction", 0.2)),
        slack=float(cfg.get("slack", 0.05)),
    )
    write_csv(out / "lsc.csv", "lsc-ledger",
              ["sigma", "k", "area"],
              [[r["sigma"], r["k"], r["area"]] for r in lsc.rows])
    write_csv(out / "lsc_verdict.csv", "lsc-verdict",
              ["lhs", "rhs", "slack", "holds"],
              [[lsc.lhs, lsc.rhs, lsc.slack, lsc.holds]])
    return 0 if lsc.holds else 2


COMMANDS = {
    "energy": cmd_energy,
    "slice-measure": cmd_slice_measure,
    "pk-fit": cmd_pk_fit,
    "partition": cmd_partition,
    "compactness": cmd_compactness,
    "lsc-check": cmd_lsc_check,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gbdlab",
        description="slice measures, rigid-motion fits and partition experiments",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, default=None)
    parser.add_argument("--out", type=Path, default=Path("gbdlab-out"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--directions", type=int, default=None)
    parser.add_argument("--sigma", type=str, default=None)
    parser.add_argument("--eta", type=float, default=None)
    parser.add_argument("--delta0", type=float, default=None)
    parser.add_argument("--jmax", type=int, default=None)
    parser.add_argument("--p", type=float, default=None)
    parser.add_argument("--field", type=str, default=None,
                        help="input field header (shortcut for config key)")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else {}
        if args.field:
            cfg["field"] = args.field
        _check_keys(args.command, cfg)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except GbdLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
