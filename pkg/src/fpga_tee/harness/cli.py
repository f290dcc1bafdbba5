"""Command-line entry point: ``fpga-tee <command> ...``.

Exit status: 0 when every expectation holds, 1 on an expectation mismatch,
2 on a configuration, trace or calibration error.
"""

from __future__ import annotations

import argparse
import itertools
import random
import sys
from pathlib import Path

from .. import attestation as att
from .. import crypto
from ..errors import AdversaryError, CalibrationError, ConfigError, TeeError, TraceError
from ..shield.config import Mode
from ..sim.costmodel import CostModelParams
from ..trust_chain import PortEvent, boot, monitor_event
from .calibrate import calibrate, load_targets
from .scenario import _device, default_params, load_scenario, run_scenario, workload_for

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG = 0, 1, 2


def _load(args):
    scn = load_scenario(args.scenario)
    if args.seed is not None:
        scn = scn.with_seed(args.seed)
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        scn = scn.with_setting(key.strip(), value.strip())
    return scn


def _params(args, scn=None) -> CostModelParams:
    if args.params:
        return CostModelParams.load(args.params)
    if scn is not None and scn.params_path:
        return CostModelParams.load(scn.base_dir / scn.params_path)
    return default_params()


def _emit(report, args) -> int:
    where = report.write(args.out)
    sys.stdout.write(report.to_text())
    print(f"report_sha256={report.digest()}")
    print(f"written={where}")
    return EXIT_OK if report.ok else EXIT_MISMATCH


def cmd_run(args) -> int:
    scn = _load(args)
    return _emit(run_scenario(scn, _params(args, scn)), args)


def _shorthand(kind: str, scn, rng: random.Random) -> str:
    """Expand a bare attack name against the scenario's first region."""
    workload = workload_for(scn)
    cfg = workload.cfg if workload else scn.cfg
    if not cfg.regions:
        raise AdversaryError("scenario has no memory regions to attack")
    # prefer a read-write region: replay needs the owner to overwrite a chunk
    r = next((r for r in cfg.regions if r.mode is Mode.READ_WRITE), cfg.regions[0])
    name = r.name or str(r.region_id)
    if kind == "flipbit":
        return f"flipbit {name} 0 data {rng.randrange(8 * r.c_mem)}"
    if kind == "splice":
        if r.n_chunks < 2:
            raise AdversaryError(f"region {name} has a single chunk")
        return f"splice {name} 0 1"
    return f"replay {name} 0"


def cmd_attack(args) -> int:
    scn = _load(args)
    rng = random.Random(f"cli-attack:{scn.seed}")
    actions = []
    for spec in args.action:
        if spec.strip().lower() in ("flipbit", "splice", "replay"):
            spec = _shorthand(spec.strip().lower(), scn, rng)
        actions.append((spec, args.expect))
    report = run_scenario(scn, _params(args, scn), extra_attacks=actions)
    return _emit(report, args)


def cmd_attest(args) -> int:
    """Run only the trust chain and attestation protocol for a device/scenario file."""
    scn = _load(args)
    rng = random.Random(f"scenario:{scn.seed}")
    workload = workload_for(scn)
    cfg = workload.cfg if workload else scn.cfg
    identity, registry = _device(scn, rng)
    if scn.trusted_kernel:
        registry.trust_kernel(crypto.hash(scn.kernel))
    ctx = boot(identity, scn.kernel)
    if scn.tamper:
        monitor_event(ctx, PortEvent(scn.tamper))
    vendor = att.IpVendor.create(registry, cfg, rng)
    channel = att.ProxyChannel()
    out = att.run_protocol(ctx, vendor, att.DataOwner(1), channel, rng)
    verdict = "ok" if out.ok else type(out.error).__name__
    print(f"device_serial={identity.device_serial}")
    print(f"kernel_hash={ctx.kernel_hash.hex()}")
    names = {att.MSG_CHALLENGE: "challenge", att.MSG_REPORT: "report",
             att.MSG_BITSTR_KEY: "bitstr_key", att.MSG_LOAD_KEY: "load_key"}
    for n, wire in enumerate(channel.sent):
        print(f"msg[{n}] {names.get(wire[0], wire[0])} bytes={len(wire)}")
    for blob in channel.relayed:
        print(f"relayed bitstream bytes={len(blob)}")
    print(f"protocol={verdict}")
    print(f"stage={out.stage}")
    if out.error is not None:
        print(f"error={out.error}")
    print(f"session_keys_equal={str(out.keys_agree).lower()}")
    expected = scn.expect.get("protocol", "ok")
    print(f"expect.protocol={'pass' if verdict == expected else 'FAIL'} expected={expected}")
    out_dir = Path(args.out) / scn.name
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "transcript.hex").write_text(channel.transcript_hex())
    return EXIT_OK if verdict == expected else EXIT_MISMATCH


def cmd_sweep(args) -> int:
    base = _load(args)
    axes = []
    for item in args.vary:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise ConfigError(f"--vary expects key=v1,v2,..., got {item!r}")
        axes.append([(key.strip(), v.strip()) for v in values.split(",")])
    params = _params(args, base)
    keys = [axis[0][0] for axis in axes]
    print("\t".join(keys + ["overhead_pct", "slowdown", "bottleneck", "result"]))
    status = EXIT_OK
    for combo in itertools.product(*axes):
        scn = base
        for key, value in combo:
            scn = scn.with_setting(key, value)
        suffix = "-".join(f"{k}={v}" for k, v in combo)
        scn.name = f"{base.name}.{suffix}"
        report = run_scenario(scn, params)
        report.write(args.out)
        f = report.fields
        slowdown = (f.get("model.secured_cycles", 0) / f["model.baseline_cycles"]
                    if "model.baseline_cycles" in f else float("nan"))
        print("\t".join([v for _, v in combo]
                        + [str(f.get("model.overhead_pct", "-")), f"{slowdown:.4f}",
                           str(f.get("model.bottleneck", "-")),
                           "pass" if report.ok else "FAIL"]))
        if not report.ok:
            status = EXIT_MISMATCH
    return status


def cmd_calibrate(args) -> int:
    targets = load_targets(args.targets)
    try:
        result = calibrate(targets)
    except CalibrationError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(result.table())
    out = Path(args.params or Path(args.out) / "calibrated_params.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    result.params.save(out)
    print(f"params written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # accepted before or after the subcommand; the subparser copy must not
        # clobber a value given up front, hence SUPPRESS there
        flags = argparse.ArgumentParser(add_help=False)
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        flags.add_argument("--seed", type=int, default=d(None), help="override the scenario seed")
        flags.add_argument("--out", default=d("out"), help="report directory (default: out)")
        flags.add_argument("--params", default=d(None), help="cost-model parameter file")
        return flags

    common = global_flags(True)
    parser = argparse.ArgumentParser(prog="fpga-tee", parents=[global_flags(False)],
                                     description="Cloud-FPGA TEE workflow simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attest", parents=[common], help="run boot and attestation only")
    p.add_argument("scenario", help="scenario or device file")
    p.set_defaults(func=cmd_attest)

    p = sub.add_parser("run", parents=[common], help="run a scenario end to end")
    p.add_argument("scenario")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="preset argument or config key to change (repeatable)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attack", parents=[common], help="run a scenario with extra attacks")
    p.add_argument("scenario")
    p.add_argument("--action", action="append", required=True,
                   help="flipbit | splice | replay, or a full action spec (repeatable)")
    p.add_argument("--expect", default="auth_failure", choices=["auth_failure", "undetected"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", parents=[common], help="overhead table over parameter values")
    p.add_argument("scenario")
    p.add_argument("--vary", action="append", required=True, metavar="KEY=V1,V2,...")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", parents=[common], help="fit cost parameters to targets")
    p.add_argument("targets", help="TSV of <scenario path> <overhead pct>")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TraceError, CalibrationError, AdversaryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TeeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
