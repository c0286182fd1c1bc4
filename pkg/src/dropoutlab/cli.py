"""Command-line interface: a thin HTTP client over the service API.

By default requests run against the in-process app (no socket); pass
--server to target a running instance instead. Exit codes: 0 success,
1 usage error, 2 runtime/config error. Setting DROPOUTLAB_OUT_DIR
redirects relative output paths into that directory.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from pathlib import Path

import httpx

from . import __version__

USAGE_EXIT = 1
RUNTIME_EXIT = 2
OUT_DIR_ENV = "DROPOUTLAB_OUT_DIR"


def _out_path(path: str) -> Path:
    p = Path(path)
    base = os.environ.get(OUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
        p.parent.mkdir(parents=True, exist_ok=True)
    return p


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dropoutlab",
                     description="Train dropout models and select evaluation-time "
                                 "family members (power mean, rate multiplier, "
                                 "temperature).")
    parser.add_argument("--version", action="version", version=f"dropoutlab {__version__}")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service; default runs in-process")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("config", help="path to the experiment config JSON")
    p.add_argument("--out", default=None,
                   help="checkpoint output path (default: <config>.ckpt.json)")

    p = sub.add_parser("eval", help="evaluate one family member on a split")
    p.add_argument("checkpoint")
    p.add_argument("--alpha", default="det",
                   help="power-mean exponent in [0, 1], or 'det' (default)")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="evaluation dropout-rate multiplier in [0, 1]")
    p.add_argument("--temp", type=float, default=1.0, help="softmax temperature")
    p.add_argument("--samples", type=int, default=None, help="MC sample count")
    p.add_argument("--split", default="valid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-targets", type=int, default=None)

    p = sub.add_parser("sweep", help="grid sweep over (split, alpha, lambda, temp)")
    p.add_argument("checkpoint")
    p.add_argument("grid", help="path to the sweep grid JSON")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("bounds", help="MAP lower-bound decomposition report")
    p.add_argument("checkpoint")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--split", default="train")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--max-targets", type=int, default=None)
    p.add_argument("--out", default=None, help="write the report JSON here")

    p = sub.add_parser("tune-temp", help="linear search for the softmax temperature")
    p.add_argument("checkpoint")
    p.add_argument("--grid", default="0.5,4.0,71",
                   help="temperature grid as tmin,tmax,n")
    p.add_argument("--split", default="valid")
    p.add_argument("--mode", choices=["det", "mc"], default="det")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-targets", type=int, default=256)

    p = sub.add_parser("buckets", help="per-word-frequency XE report")
    p.add_argument("checkpoint")
    p.add_argument("--thresholds", nargs="+", default=None,
                   help="bucket specs like '500<' (freq > 500) or '<100'")
    p.add_argument("--splits", nargs="+", default=["train", "valid"])
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-targets", type=int, default=None)
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")

    sub.add_parser("selftest", help="run the built-in oracle and sandwich suites")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def _fail(message: str) -> int:
    sys.stderr.write(f"dropoutlab: error: {message}\n")
    return RUNTIME_EXIT


def _read_text(path: str, what: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p.read_text(encoding="utf-8")


def _parse_grid_arg(text: str) -> tuple[float, float, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(f"--grid expects tmin,tmax,n, got {text!r}")
    return float(parts[0]), float(parts[1]), int(parts[2])


async def _post(client: httpx.AsyncClient, path: str, payload: dict) -> dict:
    resp = await client.post(path, json=payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        raise RuntimeError(f"{path} failed ({resp.status_code}): {detail}")
    return resp.json()


async def _run(args: argparse.Namespace) -> int:
    if args.server:
        client = httpx.AsyncClient(base_url=args.server, timeout=None)
    else:
        from .service.app import app

        client = httpx.AsyncClient(transport=httpx.ASGITransport(app=app),
                                   base_url="http://dropoutlab.internal", timeout=None)
    try:
        return await _dispatch(client, args)
    finally:
        await client.aclose()


async def _dispatch(client: httpx.AsyncClient, args: argparse.Namespace) -> int:
    cmd = args.command

    if cmd == "train":
        config = json.loads(_read_text(args.config, "config file"))
        out = args.out or str(Path(args.config).with_suffix("")) + ".ckpt.json"
        resp = await _post(client, "/train", {"config": config})
        out = _out_path(out)
        out.write_text(resp["checkpoint_json"], encoding="utf-8")
        xe = resp.get("final_train_xe")
        xe_text = "n/a" if xe is None else f"{xe:.4f}"
        print(f"trained {resp['steps']} steps (final train XE {xe_text}); "
              f"checkpoint written to {out}")
        return 0

    if cmd == "eval":
        alpha = args.alpha if args.alpha == "det" else float(args.alpha)
        payload = {
            "checkpoint_json": _read_text(args.checkpoint, "checkpoint"),
            "split": args.split, "alpha": alpha, "lambda": args.lam,
            "temperature": args.temp, "samples": args.samples, "seed": args.seed,
            "max_targets": args.max_targets,
        }
        resp = await _post(client, "/eval", payload)
        print(f"split={args.split} alpha={alpha} lambda={args.lam} temp={args.temp} "
              f"xe={resp['xe']!r} perplexity={resp['perplexity']!r} "
              f"targets={resp['n_targets']}")
        return 0

    if cmd == "sweep":
        payload = {
            "checkpoint_json": _read_text(args.checkpoint, "checkpoint"),
            "grid": json.loads(_read_text(args.grid, "grid file")),
            "workers": args.workers,
        }
        resp = await _post(client, "/sweep", payload)
        out = _out_path(args.out)
        out.write_text(resp["csv"], encoding="utf-8")
        print(f"wrote {resp['n_rows']} rows to {out}")
        return 0

    if cmd == "bounds":
        payload = {
            "checkpoint_json": _read_text(args.checkpoint, "checkpoint"),
            "split": args.split, "alpha": args.alpha, "lambda": args.lam,
            "samples": args.samples, "seed": args.seed,
            "weight_decay": args.weight_decay, "max_targets": args.max_targets,
        }
        resp = await _post(client, "/bounds", payload)
        text = json.dumps(resp, indent=2, sort_keys=True) + "\n"
        if args.out:
            out = _out_path(args.out)
            out.write_text(text, encoding="utf-8")
            print(f"wrote bound report to {out}")
        else:
            sys.stdout.write(text)
        return 0

    if cmd == "tune-temp":
        t_min, t_max, steps = _parse_grid_arg(args.grid)
        payload = {
            "checkpoint_json": _read_text(args.checkpoint, "checkpoint"),
            "split": args.split, "t_min": t_min, "t_max": t_max, "steps": steps,
            "mode": args.mode, "alpha": args.alpha, "lambda": args.lam,
            "samples": args.samples, "seed": args.seed, "max_targets": args.max_targets,
        }
        resp = await _post(client, "/tune-temp", payload)
        print(f"t_opt={resp['t_opt']!r} xe={resp['xe']!r}")
        return 0

    if cmd == "buckets":
        payload = {
            "checkpoint_json": _read_text(args.checkpoint, "checkpoint"),
            "thresholds": args.thresholds, "splits": args.splits,
            "seed": args.seed, "max_targets": args.max_targets,
            "methods": [
                {"alpha": "det", "lambda": 1.0, "samples": args.samples},
                {"alpha": 1.0, "lambda": 0.8, "samples": args.samples},
                {"alpha": 1.0, "lambda": 1.0, "samples": args.samples},
            ],
        }
        resp = await _post(client, "/buckets", payload)
        if args.out:
            out = _out_path(args.out)
            out.write_text(resp["csv"], encoding="utf-8")
            print(f"wrote bucket report to {out}")
        else:
            sys.stdout.write(resp["csv"])
        return 0

    if cmd == "selftest":
        resp = await _post(client, "/selftest", {})
        for check in resp["checks"]:
            status = "PASS" if check["passed"] else "FAIL"
            print(f"[{status}] {check['name']}: {check['detail']}")
        return 0 if resp["passed"] else RUNTIME_EXIT

    raise RuntimeError(f"unhandled command {cmd!r}")


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.command == "serve":
        import uvicorn

        from .service.app import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    try:
        return asyncio.run(_run(args))
    except (RuntimeError, FileNotFoundError, ValueError, json.JSONDecodeError) as e:
        return _fail(str(e))
    except httpx.HTTPError as e:
        return _fail(f"transport error: {e}")


if __name__ == "__main__":
    raise SystemExit(main())
