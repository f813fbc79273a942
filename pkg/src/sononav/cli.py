"""Command-line front end.

Subcommands: simulate, serve, record, replay, quantify, operator-study,
repeatability. Batch experiments run in-process; serve/record/replay speak
the binary session protocol over TCP (serve also exposes the HTTP/WebSocket
service API). Exit codes: 0 success, 1 config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, SononavError
from .experiments import (
    OperatorStudyConfig,
    RepeatabilityConfig,
    quantify_batch,
    run_operator_study,
    run_repeatability,
)
from .quant import VOI
from .session import SessionConfig, SessionSource, build_session_messages, session_header
from .stream.codec import StreamDecoder
from .stream.server import LogSource, serve_session
from .stream.sessionlog import SessionRecorder, read_session_log, write_session_log

log = logging.getLogger("sononav")


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return json.dumps(
            {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        )


def _setup_logging(json_logs: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(
        _JsonFormatter() if json_logs else logging.Formatter("%(levelname)s %(name)s: %(message)s")
    )
    logging.basicConfig(level=logging.INFO, handlers=[handler], force=True)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems are config errors (exit 1)
        raise ConfigError(message)


def _triple(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected x,y,z triple, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _load_session_config(args) -> SessionConfig:
    cfg = SessionConfig.from_json_file(args.config)
    if getattr(args, "seed", None) is not None:
        doc = cfg.to_dict()
        doc["seed"] = args.seed
        doc["motion"]["seed"] = args.seed
        cfg = SessionConfig.from_dict(doc)
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load_session_config(args)
    messages = build_session_messages(cfg)
    write_session_log(args.out, session_header(cfg), messages)
    log.info("wrote %d messages to %s", len(messages), args.out)
    return 0


def _cmd_serve(args) -> int:
    from .service.app import create_app, preload_session

    import uvicorn

    if args.console and not Path(args.console).is_dir():
        raise ConfigError(f"console directory not found: {args.console}")
    app = create_app(console_dir=args.console)
    if args.config:
        cfg = _load_session_config(args)
        preload_session(app, cfg, endpoint=args.endpoint, max_speed=args.max_speed)
    uvicorn.run(app, host=args.host, port=args.http_port, log_level="info")
    return 0


def _cmd_record(args) -> int:
    host, _, port = args.connect.rpartition(":")

    async def connect_with_retry():
        deadline = asyncio.get_running_loop().time() + args.connect_timeout
        while True:
            try:
                return await asyncio.open_connection(host or "127.0.0.1", int(port))
            except OSError:
                if asyncio.get_running_loop().time() >= deadline:
                    raise
                await asyncio.sleep(0.1)

    async def run() -> int:
        reader, writer = await connect_with_retry()
        decoder = StreamDecoder()
        with SessionRecorder(args.out, {"recorded_from": args.connect}) as rec:
            while True:
                chunk = await reader.read(65536)
                if not chunk:
                    break
                for msg in decoder.feed(chunk):
                    rec.write(msg)
                    if args.max_messages and rec.n_messages >= args.max_messages:
                        writer.close()
                        return 0
        writer.close()
        return 0

    asyncio.run(run())
    log.info("recorded stream from %s into %s", args.connect, args.out)
    return 0


def _cmd_replay(args) -> int:
    session = read_session_log(args.log)

    async def run() -> None:
        service = await serve_session(
            LogSource(session.messages),
            endpoint=args.endpoint,
            max_speed=args.max_speed,
            min_subscribers=args.wait_subscribers,
        )
        log.info("replaying %d messages on port %d", len(session.messages), service.port)
        await service.wait_finished()
        await asyncio.sleep(0.2)
        await service.stop()

    asyncio.run(run())
    return 0


def _cmd_quantify(args) -> int:
    voi = None
    if args.voi_center is not None or args.voi_radii is not None:
        if args.voi_center is None or args.voi_radii is None:
            raise ConfigError("--voi-center and --voi-radii must be given together")
        voi = VOI.ellipsoid(args.voi_center, args.voi_radii)
    csv_text = quantify_batch(
        args.logs,
        voi=voi,
        realign=args.realign,
        dynamic_range=args.dynamic_range,
        min_span=args.min_span,
    )
    if args.out:
        Path(args.out).write_text(csv_text)
        log.info("wrote %s", args.out)
    else:
        sys.stdout.write(csv_text)
    return 0


def _overlay_config(args, keys: dict[str, str]) -> dict:
    """Config-file values override flags, per the experiment contract."""
    values = {dest: getattr(args, dest) for dest in keys.values() if getattr(args, dest) is not None}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        for key, dest in keys.items():
            if key in doc:
                values[dest] = doc[key]
    return values


def _cmd_operator_study(args) -> int:
    values = _overlay_config(
        args,
        {
            "n_operators": "n_operators",
            "duration_s": "duration",
            "sample_rate_hz": "rate",
            "seed": "seed",
        },
    )
    cfg = OperatorStudyConfig(
        n_operators=int(values.get("n_operators", 5)),
        duration_s=float(values.get("duration", 240.0)),
        sample_rate_hz=float(values.get("rate", 10.0)),
        seed=int(values.get("seed", 0)),
    )
    result = run_operator_study(cfg, out_dir=args.out_dir)
    log.info("operator study: %d runs -> %s", len(result.runs), args.out_dir)
    return 0


def _cmd_repeatability(args) -> int:
    values = _overlay_config(
        args,
        {
            "n_patients": "n_patients",
            "seed": "seed",
            "breathing_amplitude_mm": "breathing",
            "drift_rate_mm_per_min": "drift",
        },
    )
    cfg = RepeatabilityConfig(
        n_patients=int(values.get("n_patients", 8)),
        seed=int(values.get("seed", 0)),
        breathing_amplitude_mm=float(values.get("breathing", 2.0)),
        drift_rate_mm_per_min=float(values.get("drift", 1.5)),
    )
    report = run_repeatability(cfg, out_dir=args.out_dir)
    for (param, condition), res in sorted(report.icc.items()):
        log.info("%s %s: ICC %.3f (%.3f, %.3f) %s", param, condition, res.icc, *res.ci95, res.band)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="sononav", description=__doc__)
    parser.add_argument("--json", action="store_true", help="machine-readable JSON logs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a configured session into a log file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("serve", help="run the HTTP/WebSocket service (optionally preloading a live session)")
    p.add_argument("--config", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--http-port", type=int, default=8000)
    p.add_argument("--endpoint", default="127.0.0.1:0", help="TCP endpoint for byte-stream subscribers")
    p.add_argument("--max-speed", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--console", default=None, help="serve the operator console from this directory")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("record", help="subscribe to a running session and record it")
    p.add_argument("--connect", required=True, help="host:port of a serving session")
    p.add_argument("--out", required=True)
    p.add_argument("--max-messages", type=int, default=0)
    p.add_argument("--connect-timeout", type=float, default=10.0)
    p.set_defaults(func=_cmd_record)

    p = sub.add_parser("replay", help="serve a recorded session log")
    p.add_argument("--log", required=True)
    p.add_argument("--endpoint", default="127.0.0.1:0")
    p.add_argument("--max-speed", action="store_true")
    p.add_argument("--wait-subscribers", type=int, default=1)
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("quantify", help="fit replenishment parameters from session logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--voi-center", type=_triple, default=None)
    p.add_argument("--voi-radii", type=_triple, default=None)
    p.add_argument("--realign", action="store_true")
    p.add_argument("--dynamic-range", type=float, default=60.0)
    p.add_argument("--min-span", type=float, default=60.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_quantify)

    p = sub.add_parser("operator-study", help="simulated hold study across feedback methods")
    p.add_argument("--config", default=None)
    p.add_argument("--n-operators", dest="n_operators", type=int, default=None)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_operator_study)

    p = sub.add_parser("repeatability", help="tracking vs no-tracking repeatability study")
    p.add_argument("--config", default=None)
    p.add_argument("--n-patients", dest="n_patients", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--breathing", type=float, default=None)
    p.add_argument("--drift", type=float, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_repeatability)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _setup_logging(args.json)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SononavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
