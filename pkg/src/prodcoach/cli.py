"""Operational CLI: serve the API, replay a user, export a dashboard snapshot.

Gateway settings come from COACH_LLM_* environment variables; paths come
from flags. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analytics
from .affect import AffectEngine
from .errors import CoachError
from .gateway import build_gateway, gateway_config_from_env
from .models import Role, rfc3339
from .prompts import load_templates
from .sessions import CoachService, SystemClock
from .store import EventLog, replay


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prodcoach")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP API")
    serve.add_argument("--addr", default="127.0.0.1:8000", help="host:port to bind")
    serve.add_argument("--data-dir", default="./data", help="event log directory")
    serve.add_argument("--templates-dir", default=None, help="prompt templates directory")

    rep = sub.add_parser("replay", help="print a user's reconstructed state")
    rep.add_argument("--user", required=True)
    rep.add_argument("--data-dir", default="./data")

    export = sub.add_parser("export-dashboard", help="write a user's dashboard snapshot JSON")
    export.add_argument("--user", required=True)
    export.add_argument("--out", required=True)
    export.add_argument("--data-dir", default="./data")

    return parser


def _replay_summary(state) -> dict:
    return {
        "account": {
            "user_id": state.account.user_id,
            "name": state.account.name,
            "major": state.account.major,
            "year": state.account.year.value,
            "coach_name": state.account.coach_name,
            "coach_personality": state.account.coach_personality,
            "speech_enabled": state.account.speech_enabled,
        },
        "profile_extracted": state.profile is not None,
        "last_seq": state.last_seq,
        "sessions": [
            {
                "session_id": s.session_id,
                "kind": s.kind,
                "started_at": rfc3339(s.started_at),
                "ended": s.ended,
                "turns": len(s.turns),
                "student_turns": sum(1 for t in s.turns if t.role is Role.STUDENT),
            }
            for s in state.sessions.values()
        ],
        "lessons": {
            lesson.value: {"status": record.status, "confidence": record.confidence}
            for lesson, record in state.records.items()
        },
    }


def _cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    host, _, port = args.addr.rpartition(":")
    if not host or not port.isdigit():
        print(f"error: --addr must be host:port, got {args.addr!r}", file=sys.stderr)
        return 1
    try:
        templates = load_templates(args.templates_dir)
        gateway = build_gateway(gateway_config_from_env())
    except (CoachError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    service = CoachService(
        log=EventLog(args.data_dir),
        gateway=gateway,
        templates=templates,
        affect=AffectEngine(),
    )
    uvicorn.run(create_app(service), host=host, port=int(port), log_level="info")
    return 0


def _cmd_replay(args) -> int:
    try:
        state = replay(EventLog(args.data_dir), args.user)
    except CoachError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_replay_summary(state), indent=2, ensure_ascii=False))
    return 0


def _cmd_export_dashboard(args) -> int:
    try:
        state = replay(EventLog(args.data_dir), args.user)
        snapshot = analytics.build_snapshot(state, SystemClock().now())
    except CoachError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.write_text(
        json.dumps(snapshot.to_json_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {out}")
    return 0


_COMMANDS = {
    "serve": _cmd_serve,
    "replay": _cmd_replay,
    "export-dashboard": _cmd_export_dashboard,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
