"""Sandbox driver: line-delimited JSON requests on stdin, one response per line on stdout."""

import contextlib
import io
import json
import os
import random
import sys
import traceback

OUTPUT_CAP = int(os.environ.get("FLOWLENS_OUTPUT_CAP", str(1 << 20)))
SEED = 0
FIGURE_DIR = "figures"


def seed():
    random.seed(SEED)
    np = sys.modules.get("numpy")
    if np is None:
        try:
            import numpy as np
        except ImportError:
            return
    np.random.seed(SEED)


def fresh_namespace():
    return {"__name__": "__main__", "__builtins__": __builtins__}


def cap(text):
    if len(text.encode("utf-8", "replace")) <= OUTPUT_CAP:
        return text
    return text.encode("utf-8", "replace")[:OUTPUT_CAP].decode("utf-8", "ignore") + "\n[output truncated]\n"


def list_figures():
    if not os.path.isdir(FIGURE_DIR):
        return {}
    out = {}
    for f in os.listdir(FIGURE_DIR):
        path = os.path.join(FIGURE_DIR, f)
        st = os.stat(path)
        out[path] = (st.st_mtime_ns, st.st_size)
    return out


def response(rid, status="ok", stdout="", stderr="", error=None, preview=None, figures=()):
    out = {
        "id": rid,
        "status": status,
        "stdout": stdout,
        "stderr": stderr,
        "probes": [],
        "figures": sorted(figures),
    }
    if preview is not None:
        out["preview"] = preview
    if error is not None:
        out["error"] = error
    return out


def error_body(kind, message, tb=""):
    return {"type": kind, "message": message, "traceback": tb}


def do_exec(rid, code, ns):
    before = list_figures()
    out, err = io.StringIO(), io.StringIO()
    error = None
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        try:
            exec(compile(code, "<unit>", "exec"), ns)
        except KeyboardInterrupt:
            raise
        except BaseException as exc:  # noqa: BLE001 - user code may raise anything
            user_tb = exc.__traceback__.tb_next if exc.__traceback__ else None
            text = "".join(traceback.format_exception(type(exc), exc, user_tb))
            error = error_body(type(exc).__name__, str(exc), text)
    after = list_figures()
    figures = [p for p, stamp in after.items() if before.get(p) != stamp]
    status = "error" if error else "ok"
    return response(rid, status, cap(out.getvalue()), cap(err.getvalue()), error, figures=figures)


def do_preview(rid, var, limit, ns):
    if var not in ns:
        return response(rid, "error", error=error_body("unknown", "unknown variable: %s" % var))
    value = ns[var]
    pd = sys.modules.get("pandas")
    if pd is not None and isinstance(value, pd.Series):
        value = value.to_frame()
    if pd is None or not isinstance(value, pd.DataFrame):
        return response(rid, "error", error=error_body("type", "non-table variable: %s" % var))
    limit = max(0, int(limit if limit is not None else 10))
    head = value.head(limit)
    rows = [[str(cell) for cell in row] for row in head.itertuples(index=False, name=None)]
    preview = {"columns": [str(c) for c in value.columns], "rows": rows}
    return response(rid, preview=preview)


def do_reset(rid, ns):
    ns.clear()
    ns.update(fresh_namespace())
    plt = sys.modules.get("matplotlib.pyplot")
    if plt is not None:
        plt.close("all")
    seed()
    return response(rid)


def main():
    # keep the protocol channel private; stray writes to fd 1 go to stderr
    channel = os.fdopen(os.dup(1), "w", encoding="utf-8")
    os.dup2(2, 1)
    sys.stdout = io.TextIOWrapper(os.fdopen(1, "wb", closefd=False), encoding="utf-8")
    ns = fresh_namespace()
    seed()
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        rid = None
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise ValueError("request must be an object")
            rid = req.get("id")
            op = req.get("op")
            if op == "exec":
                code = req.get("code")
                if not isinstance(code, str):
                    raise ValueError("exec needs code")
                resp = do_exec(rid, code, ns)
            elif op == "preview":
                resp = do_preview(rid, req.get("var"), req.get("limit"), ns)
            elif op == "reset":
                resp = do_reset(rid, ns)
            else:
                raise ValueError("unknown op %r" % (op,))
        except Exception as exc:  # noqa: BLE001
            resp = response(rid, "error", error=error_body("protocol", str(exc)))
        channel.write(json.dumps(resp) + "\n")
        channel.flush()


if __name__ == "__main__":
    main()
