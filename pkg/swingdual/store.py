"""SQLite result store: finished table rows and reusable continuation tables.

Rows are appended with the full experiment config as JSON. Fitted
ContinuationTables are kept as .npz blobs keyed by a fingerprint of
everything Step 1 depends on, so a table run with several rights counts or
a rerun can skip the regression.

Read-only connections use the immutable URI form (mode=ro&immutable=1) plus
query_only, as for any archived database handed to someone else.
"""
from __future__ import annotations
import sqlite3, os, io, json, time, hashlib
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

from . import RESULT_SCHEMA_VERSION
from .logging_util import warn, debug, info
from .regress import ContinuationTable

MAX_CACHE_KIB = 512 * 1024
MIN_CACHE_KIB = 16
DEFAULT_CACHE_KIB = 16 * 1024
MAX_BUSY_MS = 600_000
MIN_BUSY_MS = 0
DEFAULT_BUSY_MS = 30_000

SCHEMA = """
CREATE TABLE IF NOT EXISTS settings (key TEXT PRIMARY KEY, value TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS results (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    created TEXT NOT NULL,
    preset TEXT NOT NULL,
    delta INTEGER NOT NULL,
    rights INTEGER NOT NULL,
    lower REAL, upper REAL, ci_low REAL, ci_high REAL,
    std_lower REAL, std_upper REAL, seconds REAL,
    config TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS continuation_tables (
    fingerprint TEXT PRIMARY KEY,
    created TEXT NOT NULL,
    blob BLOB NOT NULL
);
"""


@dataclass
class StoreConfig:
    cache_kib: int = DEFAULT_CACHE_KIB
    busy_ms: int = DEFAULT_BUSY_MS

    @classmethod
    def from_env(cls) -> "StoreConfig":
        def _int(name: str, default: int) -> int:
            raw = os.environ.get(name)
            if raw is None:
                return default
            try:
                return int(raw)
            except ValueError:
                warn("invalid_env_int", key=name, value=raw, default=default)
                return default
        cache_kib = _int("SWINGDUAL_STORE_CACHE_KIB", DEFAULT_CACHE_KIB)
        busy_ms = _int("SWINGDUAL_STORE_BUSY_MS", DEFAULT_BUSY_MS)
        adjusted = {}
        if cache_kib < MIN_CACHE_KIB or cache_kib > MAX_CACHE_KIB:
            adjusted["cache_kib"] = cache_kib
            cache_kib = min(MAX_CACHE_KIB, max(MIN_CACHE_KIB, cache_kib))
        if busy_ms < MIN_BUSY_MS or busy_ms > MAX_BUSY_MS:
            adjusted["busy_ms"] = busy_ms
            busy_ms = min(MAX_BUSY_MS, max(MIN_BUSY_MS, busy_ms))
        if adjusted:
            warn("store_config_clamped", original=adjusted, clamped={"cache_kib": cache_kib, "busy_ms": busy_ms})
        return cls(cache_kib=cache_kib, busy_ms=busy_ms)


def fingerprint(**parts: Any) -> str:
    """Stable hash of the inputs a continuation table depends on."""
    text = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _now() -> str:
    return time.strftime('%Y-%m-%dT%H:%M:%SZ', time.gmtime())


class ResultStore:
    """Result store.

    Responsibilities:
      - Provide connections in read-only immutable or writable mode
      - Create the schema on first write
      - Append result rows and cache fitted continuation tables
      - Health check utility
    """
    def __init__(self, path: str, config: Optional[StoreConfig] = None):
        if os.path.isdir(path):
            raise ValueError(f"Path points to a directory, expected file: {path}")
        self.path = path
        self.config = config or StoreConfig.from_env()

    # --- Public API -----------------------------------------------------------------
    def connect(self, write: bool) -> sqlite3.Connection:
        """Return a configured sqlite3.Connection.

        write=False enforces immutable read-only access and raises
        sqlite3.OperationalError with a clear message if the file is missing.
        """
        if not write and not os.path.exists(self.path):
            raise sqlite3.OperationalError(f"Database not found and immutable read requested: {self.path}")
        if write:
            conn = sqlite3.connect(self.path, check_same_thread=False)
        else:
            conn = sqlite3.connect(f"file:{self.path}?mode=ro&immutable=1", uri=True, check_same_thread=False)
        conn.row_factory = sqlite3.Row
        self._apply_pragmas(conn, write)
        return conn

    def init_schema(self) -> None:
        conn = self.connect(write=True)
        try:
            with conn:
                conn.executescript(SCHEMA)
                conn.execute("INSERT OR REPLACE INTO settings (key, value) VALUES ('schema_version', ?)",
                             (RESULT_SCHEMA_VERSION,))
        finally:
            conn.close()

    def record_row(self, row, config: Dict[str, Any], preset: str) -> int:
        """Append one ResultRow; returns its id."""
        self.init_schema()
        conn = self.connect(write=True)
        try:
            with conn:
                cur = conn.execute(
                    "INSERT INTO results (created, preset, delta, rights, lower, upper, ci_low, ci_high,"
                    " std_lower, std_upper, seconds, config) VALUES (?,?,?,?,?,?,?,?,?,?,?,?)",
                    (_now(), preset, int(row.delta), int(row.rights), row.lower, row.upper, row.ci_low,
                     row.ci_high, row.std_lower, row.std_upper, row.seconds,
                     json.dumps(config, sort_keys=True, default=str)),
                )
                return int(cur.lastrowid)
        finally:
            conn.close()

    def rows(self, limit: int = 100) -> List[Dict[str, Any]]:
        conn = self.connect(write=False)
        try:
            cur = conn.execute("SELECT * FROM results ORDER BY id DESC LIMIT ?", (int(limit),))
            return [dict(r) for r in cur.fetchall()]
        finally:
            conn.close()

    def save_table(self, key: str, table: ContinuationTable) -> None:
        buf = io.BytesIO()
        table.save(buf)
        self.init_schema()
        conn = self.connect(write=True)
        try:
            with conn:
                conn.execute("INSERT OR REPLACE INTO continuation_tables (fingerprint, created, blob) VALUES (?,?,?)",
                             (key, _now(), buf.getvalue()))
        finally:
            conn.close()
        debug("table_cached", fingerprint=key, bytes=len(buf.getvalue()))

    def load_table(self, key: str) -> Optional[ContinuationTable]:
        if not os.path.exists(self.path):
            return None
        # writable connection: sees WAL pages another worker may not have checkpointed yet
        conn = self.connect(write=True)
        try:
            row = conn.execute("SELECT blob FROM continuation_tables WHERE fingerprint = ?", (key,)).fetchone()
        except sqlite3.OperationalError:  # schema not created yet
            return None
        finally:
            conn.close()
        if row is None:
            return None
        info("table_cache_hit", fingerprint=key)
        return ContinuationTable.load(io.BytesIO(row["blob"]))

    def health_check(self) -> Dict[str, Any]:
        """Return core pragma values, schema version and row counts."""
        try:
            conn = self.connect(write=False)
        except Exception as e:
            return {"ok": False, "error": str(e)}
        try:
            out = {
                "journal_mode": conn.execute("PRAGMA journal_mode").fetchone()[0],
                "cache_size": conn.execute("PRAGMA cache_size").fetchone()[0],
                "busy_timeout": conn.execute("PRAGMA busy_timeout").fetchone()[0],
            }
            try:
                version = conn.execute("SELECT value FROM settings WHERE key='schema_version'").fetchone()
                out["schema_version"] = version[0] if version else None
                out["results"] = conn.execute("SELECT COUNT(*) FROM results").fetchone()[0]
                out["continuation_tables"] = conn.execute("SELECT COUNT(*) FROM continuation_tables").fetchone()[0]
            except sqlite3.OperationalError as e:
                return {"ok": False, "path": self.path, "error": str(e), **out}
            return {"ok": True, "path": self.path, **out}
        finally:
            conn.close()

    # --- Internal -------------------------------------------------------------------
    def _apply_pragmas(self, conn: sqlite3.Connection, write: bool) -> None:
        mode = "write" if write else "immutable_ro"
        pragmas = [(f"busy_timeout={self.config.busy_ms}", "busy_timeout"),
                   (f"cache_size=-{self.config.cache_kib}", "cache_size")]
        if write:
            pragmas += [("journal_mode=WAL", "journal_mode"), ("synchronous=NORMAL", "synchronous")]
        else:
            pragmas += [("query_only=ON", "query_only")]
        for p, tag in pragmas:
            try:
                conn.execute(f"PRAGMA {p}")
            except Exception as e:
                warn("pragma_failed", pragma=p, tag=tag, mode=mode, path=self.path, error=str(e))


def cli_dump_store(argv=None):  # pragma: no cover - thin CLI wrapper
    """CLI helper: print StoreConfig, health_check and the latest rows as JSON."""
    import argparse
    ap = argparse.ArgumentParser(description='Dump result store config, health and recent rows')
    ap.add_argument('db', help='Path to SQLite result database')
    ap.add_argument('--limit', type=int, default=10, help='Number of recent rows to show')
    args = ap.parse_args(argv)
    store = ResultStore(args.db)
    health = store.health_check()
    out = {'config': store.config.__dict__.copy(), 'health_check': health,
           'rows': store.rows(args.limit) if health.get('ok') else []}
    print(json.dumps(out, indent=2))


if __name__ == '__main__':  # pragma: no cover
    cli_dump_store()
