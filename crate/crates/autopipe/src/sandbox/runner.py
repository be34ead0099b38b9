# Stage-program runner. Invoked as: python3 -I runner.py <job.json>
#
# Builds a restricted namespace (pandas/numpy/datetime plus math and text
# utilities, no filesystem/network/process/env access), executes the stage
# code against deep copies of the inputs, and writes a structured result
# record. User code never sees this module's globals.

import io
import json
import os
import resource
import signal
import sys
import time
import traceback
import tracemalloc
from contextlib import redirect_stdout


class StageTimeout(BaseException):
    pass


class SandboxViolation(BaseException):
    pass


ALLOWED_ROOTS = {
    "math", "re", "datetime", "statistics", "json", "itertools", "functools",
    "collections", "string", "random", "decimal", "fractions", "heapq",
    "bisect", "textwrap", "unicodedata", "calendar", "time", "numpy", "pandas",
}
CAPABILITY_ROOTS = {
    "os", "sys", "subprocess", "socket", "pathlib", "shutil", "ctypes",
    "multiprocessing", "threading", "importlib", "io", "builtins", "signal",
    "resource", "gc", "inspect", "pickle", "marshal", "code", "codeop",
    "platform", "tempfile", "glob", "urllib", "http", "ftplib", "smtplib",
    "xmlrpc", "asyncio", "concurrent", "sqlite3", "ssl", "select", "mmap",
    "fcntl", "pty", "tty", "webbrowser",
}

_real_import = __import__


def _guarded_import(name, *args, **kwargs):
    root = name.split(".")[0]
    if root in ALLOWED_ROOTS:
        return _real_import(name, *args, **kwargs)
    if root in CAPABILITY_ROOTS:
        raise SandboxViolation(
            "module '%s' is not allowed in the sandbox" % name)
    raise ImportError("package '%s' is not available in the sandbox" % name)


def _denied(name):
    def stub(*args, **kwargs):
        raise SandboxViolation("%s is not allowed in the sandbox" % name)
    return stub


def _restricted_builtins():
    import builtins
    table = dict(vars(builtins))
    for banned in ("open", "input", "breakpoint", "exit", "quit", "help"):
        table[banned] = _denied(banned + "()")
    table["__import__"] = _guarded_import
    return table


def _dtype_name(dtype):
    s = str(dtype)
    if s.startswith(("int", "Int", "uint", "UInt")):
        return "integer"
    if s.startswith(("float", "Float")):
        return "real"
    if s in ("bool", "boolean"):
        return "boolean"
    if s.startswith("datetime64"):
        return "datetime"
    return "text"


def _load_table(pd, np, csv_path, schema_path):
    with open(schema_path) as f:
        schema = json.load(f)
    df = pd.read_csv(csv_path, dtype=str, keep_default_na=False)
    for col in schema["columns"]:
        name, dtype = col["name"], col["dtype"]
        if name not in df.columns:
            continue
        raw = df[name].replace("", np.nan)
        if dtype == "integer":
            s = pd.to_numeric(raw, errors="coerce")
            df[name] = s.astype("int64") if not s.isna().any() else s.astype("Int64")
        elif dtype == "real":
            df[name] = pd.to_numeric(raw, errors="coerce").astype("float64")
        elif dtype == "boolean":
            df[name] = raw.map({"true": True, "false": False})
        elif dtype == "datetime":
            df[name] = pd.to_datetime(raw, errors="coerce")
        else:
            df[name] = raw
    return df


def _write_table(df, csv_path, schema_path):
    df.to_csv(csv_path, index=False, date_format="%Y-%m-%d %H:%M:%S")
    columns = [{"name": str(c), "dtype": _dtype_name(df[c].dtype)}
               for c in df.columns]
    with open(schema_path, "w") as f:
        json.dump({"columns": columns, "row_count": int(len(df))}, f)


def main():
    with open(sys.argv[1]) as f:
        job = json.load(f)

    import pandas as pd
    import numpy as np

    with open(job["code_file"]) as f:
        code = f.read()

    inputs = [_load_table(pd, np, spec["csv"], spec["schema"])
              for spec in job["inputs"]]

    if job.get("memory_bytes"):
        # The cap bounds allocation beyond the already-resident interpreter.
        page = os.sysconf("SC_PAGE_SIZE")
        with open("/proc/self/statm") as f:
            vms_now = int(f.read().split()[0]) * page
        cap = vms_now + int(job["memory_bytes"])
        resource.setrlimit(resource.RLIMIT_AS, (cap, cap))

    import math
    import re as re_mod
    import datetime as datetime_mod
    import statistics
    import itertools
    import collections
    import functools

    namespace = {
        "__builtins__": _restricted_builtins(),
        "__name__": "__stage__",
        "pd": pd, "pandas": pd,
        "np": np, "numpy": np,
        "math": math, "re": re_mod, "datetime": datetime_mod,
        "json": json, "statistics": statistics, "itertools": itertools,
        "collections": collections, "functools": functools,
    }

    result = {
        "ok": False,
        "error_kind": None,
        "message": "",
        "traceback": "",
        "stdout": "",
        "elapsed_s": 0.0,
        "peak_bytes": 0,
        "approximate": False,
    }

    def on_alarm(signum, frame):
        raise StageTimeout(
            "stage exceeded the %.3fs wall-clock limit" % job["wall_clock_s"])

    signal.signal(signal.SIGALRM, on_alarm)

    captured = io.StringIO()
    tracemalloc.start()
    started = time.monotonic()
    try:
        compiled = compile(code, "<stage>", "exec")
        copies = [df.copy(deep=True) for df in inputs]
        signal.setitimer(signal.ITIMER_REAL, float(job["wall_clock_s"]))
        try:
            with redirect_stdout(captured):
                exec(compiled, namespace)
                fn = namespace.get(job["stage_name"])
                if fn is None:
                    raise NameError(
                        "stage function %r not defined at top level"
                        % job["stage_name"])
                out = fn(*copies)
        finally:
            signal.setitimer(signal.ITIMER_REAL, 0.0)
        if not isinstance(out, pd.DataFrame):
            result["error_kind"] = "bad_return_type"
            result["message"] = (
                "stage returned %s, expected a DataFrame" % type(out).__name__)
        else:
            _write_table(out, job["output_csv"], job["output_schema"])
            result["ok"] = True
    except StageTimeout as e:
        result["error_kind"] = "timeout"
        result["message"] = str(e)
        result["traceback"] = traceback.format_exc()
    except SandboxViolation as e:
        result["error_kind"] = "sandbox_violation"
        result["message"] = str(e)
        result["traceback"] = traceback.format_exc()
    except BaseException as e:
        result["error_kind"] = "exception"
        result["message"] = "%s: %s" % (type(e).__name__, e)
        result["traceback"] = traceback.format_exc()
    finally:
        result["elapsed_s"] = time.monotonic() - started
        result["peak_bytes"] = tracemalloc.get_traced_memory()[1]
        tracemalloc.stop()
        result["stdout"] = captured.getvalue()
        with open(job["result_file"], "w") as f:
            json.dump(result, f)


if __name__ == "__main__":
    main()
