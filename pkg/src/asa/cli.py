"""Operator command line: a thin client over the manager HTTP API.

No business logic lives here - every validation happens server-side and
422 bodies are printed verbatim, so this tool and the dashboard can never
disagree about what is valid.

Exit codes: 0 success, 1 usage error, 2 server-reported error, 3 transport
failure. --json switches human-readable tables to canonical JSON.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Any

import requests

from .jsonutil import canonical_dumps

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SERVER = 2
EXIT_TRANSPORT = 3

DEFAULT_MANAGER = "http://127.0.0.1:8080"


class ServerError(Exception):
    def __init__(self, status: int, body: Any):
        super().__init__(f"HTTP {status}")
        self.status = status
        self.body = body


class Client:
    def __init__(self, base_url: str):
        self.base = base_url.rstrip("/")
        self.session = requests.Session()

    def request(self, method: str, path: str, body: Any = None, params: dict | None = None) -> Any:
        url = f"{self.base}{path}"
        resp = self.session.request(method, url, json=body, params=params, timeout=30)
        try:
            doc = resp.json()
        except ValueError:
            doc = {"error": resp.text}
        if resp.status_code >= 400:
            raise ServerError(resp.status_code, doc)
        return doc

    def stream(self, path: str, params: dict | None = None):
        """Yield (event, data) pairs from a server-sent event stream."""
        url = f"{self.base}{path}"
        with self.session.get(url, params=params, stream=True, timeout=(10, None)) as resp:
            if resp.status_code >= 400:
                try:
                    doc = resp.json()
                except ValueError:
                    doc = {"error": resp.text}
                raise ServerError(resp.status_code, doc)
            event = None
            for raw in resp.iter_lines():
                line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
                if line.startswith("event: "):
                    event = line[7:]
                elif line.startswith("data: ") and event is not None:
                    yield event, json.loads(line[6:])
                elif not line:
                    event = None


def _read_json_file(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _print_json(doc: Any) -> None:
    print(canonical_dumps(doc))


def _table(rows: list[dict], columns: list[str]) -> None:
    if not rows:
        print("(empty)")
        return
    widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows)) for c in columns}
    print("  ".join(c.ljust(widths[c]) for c in columns))
    for r in rows:
        print("  ".join(str(r.get(c, "")).ljust(widths[c]) for c in columns))


def _run_row(doc: dict) -> dict:
    return {
        "run_id": doc["run_id"],
        "state": doc["state"],
        "node": doc.get("node_id") or "-",
        "attempts": doc["attempts"],
        "batch": doc.get("batch_id") or "-",
        "detail": doc.get("detail", ""),
    }


# --- subcommand handlers ------------------------------------------------------


def cmd_scenario(client: Client, args, as_json: bool) -> int:
    if args.action == "add":
        out = client.request("POST", "/scenarios", _read_json_file(args.file))
        _print_json(out) if as_json else print(f"scenario {out['id']} revision {out['revision']}")
    elif args.action == "get":
        out = client.request("GET", f"/scenarios/{args.id}")
        _print_json(out if as_json else out["body"])
    elif args.action == "list":
        out = client.request("GET", "/scenarios")
        if as_json:
            _print_json(out)
        else:
            _table(
                [{"id": e["id"], "revision": e["revision"], "name": e["body"].get("name", "")} for e in out],
                ["id", "revision", "name"],
            )
    elif args.action == "rm":
        out = client.request("DELETE", f"/scenarios/{args.id}")
        _print_json(out) if as_json else print(f"deleted {args.id}")
    return EXIT_OK


def cmd_template(client: Client, args, as_json: bool) -> int:
    if args.action == "add":
        out = client.request("POST", "/templates", _read_json_file(args.file))
        _print_json(out) if as_json else print(f"template {out['id']} revision {out['revision']}")
    elif args.action == "get":
        out = client.request("GET", f"/templates/{args.id}")
        _print_json(out if as_json else out["body"])
    elif args.action == "list":
        out = client.request("GET", "/templates")
        if as_json:
            _print_json(out)
        else:
            _table(
                [
                    {
                        "id": e["id"],
                        "revision": e["revision"],
                        "placeholders": ",".join(p["name"] for p in e["body"].get("placeholders", [])),
                    }
                    for e in out
                ],
                ["id", "revision", "placeholders"],
            )
    return EXIT_OK


def cmd_batch(client: Client, args, as_json: bool) -> int:
    if args.action == "submit":
        body: dict[str, Any] = {"template_id": args.template, "batch_seed": args.seed}
        if args.bindings:
            body["bindings"] = _read_json_file(args.bindings)
        elif args.factorial:
            body["doe"] = {"kind": "full_factorial", "factors": _read_json_file(args.factorial)}
        elif args.lhs is not None:
            if not args.ranges:
                print("--lhs requires --ranges FILE", file=sys.stderr)
                return EXIT_USAGE
            body["doe"] = {
                "kind": "latin_hypercube",
                "n": args.lhs,
                "ranges": _read_json_file(args.ranges),
                "seed": args.lhs_seed if args.lhs_seed is not None else args.seed,
            }
        else:
            print("one of --bindings, --factorial, --lhs is required", file=sys.stderr)
            return EXIT_USAGE
        out = client.request("POST", "/batches", body)
        if as_json:
            _print_json(out)
        else:
            print(f"batch {out['batch_id']}: {len(out['run_ids'])} runs")
    elif args.action == "list":
        out = client.request("GET", "/batches")
        if as_json:
            _print_json(out)
        else:
            _table(
                [{"batch_id": b["batch_id"], "runs": len(b["run_ids"]), "rollup": b["rollup"]} for b in out],
                ["batch_id", "runs", "rollup"],
            )
    elif args.action == "show":
        out = client.request("GET", f"/batches/{args.id}")
        _print_json(out) if as_json else print(canonical_dumps(out["rollup"]))
    return EXIT_OK


def cmd_run(client: Client, args, as_json: bool) -> int:
    if args.action == "list":
        params = {}
        if args.batch:
            params["batch"] = args.batch
        if args.state:
            params["state"] = args.state
        out = client.request("GET", "/runs", params=params)
        _print_json(out) if as_json else _table([_run_row(r) for r in out], ["run_id", "state", "node", "attempts", "batch"])
    elif args.action == "show":
        out = client.request("GET", f"/runs/{args.id}")
        _print_json(out) if as_json else _table([_run_row(out)], ["run_id", "state", "node", "attempts", "batch", "detail"])
    elif args.action == "control":
        command = _parse_command(args.command)
        out = client.request("POST", f"/runs/{args.id}/control", command)
        _print_json(out) if as_json else print(f"{out['run_id']}: {out['state']}")
    elif args.action == "watch":
        for event, data in client.stream(f"/runs/{args.id}/stream"):
            if event != "run":
                continue
            if as_json:
                _print_json(data)
            else:
                print(f"{data['run_id']}: {data['state']} {data.get('detail', '')}".rstrip())
            if data.get("state") in ("COMPLETED", "STOPPED", "FAILED"):
                break
    return EXIT_OK


def _parse_command(words: list[str]) -> dict:
    kind = words[0]
    if kind in ("play", "pause", "resume", "stop"):
        return {"type": kind}
    if kind == "speed":
        if len(words) != 2:
            raise ValueError("usage: speed FACTOR")
        return {"type": "set_speed", "factor": float(words[1])}
    if kind == "set":
        if len(words) != 4:
            raise ValueError("usage: set AGENT PATH VALUE")
        raw = words[3]
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        return {"type": "set_param", "agent_id": words[1], "param_path": words[2], "value": value}
    raise ValueError(f"unknown control {kind!r}")


def cmd_analyze(client: Client, args, as_json: bool) -> int:
    from .analysis import BatchSummary, MetricStats, RunMetricRow, export_table_csv

    metrics = _read_json_file(args.metrics)
    out = client.request("POST", "/analysis", {"batch_id": args.batch, "metrics": metrics})
    if args.out:
        summary_doc = out["summary"]
        table = [
            RunMetricRow(index=row["index"], bindings=row["bindings"], values=row["values"])
            for row in summary_doc["table"]
        ]
        stats = {
            name: MetricStats(
                mean=s["mean"], std=s["std"], min=s["min"], max=s["max"], n=s["n"],
                undefined=s["undefined"], ci95=tuple(s["ci95"]) if s["ci95"] else None,
            )
            for name, s in summary_doc["metrics"].items()
        }
        export_table_csv(BatchSummary(metrics=stats, table=table), args.out)
    if as_json:
        _print_json(out)
    else:
        for name, s in sorted(out["summary"]["metrics"].items()):
            print(f"{name}: mean={s['mean']} std={s['std']} min={s['min']} max={s['max']} n={s['n']}")
        if args.out:
            print(f"table written to {args.out}")
    return EXIT_OK


# --- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # --manager/--json accepted both before and after the subcommand; SUPPRESS
    # keeps the subparser from clobbering a value given at the top level
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manager", default=argparse.SUPPRESS, help="manager URL (or ASA_MANAGER env)")
    common.add_argument(
        "--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable canonical JSON output"
    )
    parser = argparse.ArgumentParser(prog="asa", description="simulation cluster client", parents=[common])
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=lambda **kw: argparse.ArgumentParser(parents=[common], **kw))

    p = sub.add_parser("scenario", help="scenario CRUD")
    p.add_argument("action", choices=["add", "get", "list", "rm"])
    p.add_argument("file", nargs="?", help="scenario JSON file (for add)")
    p.add_argument("--id", default=None, help="explicit id (get/rm) or... ")
    p.set_defaults(fn=cmd_scenario)

    p = sub.add_parser("template", help="template CRUD")
    p.add_argument("action", choices=["add", "get", "list"])
    p.add_argument("file", nargs="?", help="template JSON file (for add)")
    p.add_argument("--id", default=None)
    p.set_defaults(fn=cmd_template)

    p = sub.add_parser("batch", help="submit and inspect batches")
    p.add_argument("action", choices=["submit", "list", "show"])
    p.add_argument("id", nargs="?", help="batch id (for show)")
    p.add_argument("--template", help="template id")
    p.add_argument("--bindings", help="JSON file: list of binding sets")
    p.add_argument("--factorial", help="JSON file: factor name -> value list")
    p.add_argument("--lhs", type=int, default=None, help="latin hypercube sample count")
    p.add_argument("--ranges", help="JSON file: dimension -> [lo, hi] (with --lhs)")
    p.add_argument("--lhs-seed", type=int, default=None, help="design sampling seed (defaults to --seed)")
    p.add_argument("--seed", type=int, default=0, help="batch seed")
    p.set_defaults(fn=cmd_batch)

    p = sub.add_parser("run", help="inspect and control runs")
    p.add_argument("action", choices=["list", "show", "control", "watch"])
    p.add_argument("id", nargs="?", help="run id")
    p.add_argument("command", nargs="*", help="control: play|pause|resume|stop|speed F|set AGENT PATH VALUE")
    p.add_argument("--batch", default=None, help="filter by batch (list)")
    p.add_argument("--state", default=None, help="filter by state (list)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("analyze", help="compute batch metrics server-side")
    p.add_argument("--batch", required=True)
    p.add_argument("--metrics", required=True, help="JSON file: list of metric specs")
    p.add_argument("--out", default=None, help="write per-run table CSV here")
    p.set_defaults(fn=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    args.json = getattr(args, "json", False)
    args.manager = getattr(args, "manager", None)

    # positional sanity that argparse cannot express
    if args.cmd in ("scenario", "template") and args.action == "add" and not args.file:
        print(f"{args.cmd} add requires a JSON file", file=sys.stderr)
        return EXIT_USAGE
    if args.cmd in ("scenario", "template") and args.action in ("get", "rm") and not (args.file or args.id):
        print(f"{args.cmd} {args.action} requires an id", file=sys.stderr)
        return EXIT_USAGE
    if args.cmd in ("scenario", "template") and args.action in ("get", "rm") and args.id is None:
        args.id = args.file
    if args.cmd == "batch" and args.action == "submit" and not args.template:
        print("batch submit requires --template", file=sys.stderr)
        return EXIT_USAGE
    if args.cmd == "batch" and args.action == "show" and not args.id:
        print("batch show requires an id", file=sys.stderr)
        return EXIT_USAGE
    if args.cmd == "run" and args.action in ("show", "control", "watch") and not args.id:
        print(f"run {args.action} requires a run id", file=sys.stderr)
        return EXIT_USAGE
    if args.cmd == "run" and args.action == "control" and not args.command:
        print("run control requires a command", file=sys.stderr)
        return EXIT_USAGE

    base = args.manager or os.environ.get("ASA_MANAGER") or DEFAULT_MANAGER
    if not base.startswith("http"):
        base = f"http://{base}"
    client = Client(base)
    try:
        return args.fn(client, args, args.json)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ServerError as exc:
        print(canonical_dumps(exc.body), file=sys.stderr)
        return EXIT_SERVER
    except (requests.ConnectionError, requests.Timeout) as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
