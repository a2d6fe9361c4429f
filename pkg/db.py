import json
import logging
import sqlite3
import time
import uuid
from typing import Any, Dict, Iterable, List, Optional

from config import Settings

logger = logging.getLogger(__name__)


def _db_file(db_file: Optional[str]) -> str:
    return db_file or Settings.from_env().db_file


def init_db(db_file: Optional[str] = None):
    """Initialize the run registry if it doesn't exist."""
    try:
        conn = sqlite3.connect(_db_file(db_file))
        cursor = conn.cursor()

        cursor.execute('''
        CREATE TABLE IF NOT EXISTS runs (
            run_id TEXT PRIMARY KEY,
            command TEXT,
            scenario TEXT,
            seed INTEGER,
            created REAL,
            summary TEXT
        )
        ''')

        cursor.execute('''
        CREATE TABLE IF NOT EXISTS events (
            run_id TEXT,
            t_us REAL,
            event TEXT,
            station TEXT,
            src TEXT,
            dst TEXT,
            kind TEXT,
            detail TEXT
        )
        ''')
        cursor.execute("CREATE INDEX IF NOT EXISTS idx_events_run ON events (run_id, t_us)")

        conn.commit()
        conn.close()
        logger.debug("Run database initialized")
    except Exception as e:
        logger.error(f"Error initializing database: {e}")
        raise


def save_run(command: str, scenario: str, seed: int, summary: Dict[str, Any],
             db_file: Optional[str] = None, run_id: Optional[str] = None) -> str:
    """Store one run and return its id."""
    run_id = run_id or uuid.uuid4().hex[:12]
    init_db(db_file)
    conn = sqlite3.connect(_db_file(db_file))
    try:
        cursor = conn.cursor()
        cursor.execute(
            "INSERT INTO runs (run_id, command, scenario, seed, created, summary) VALUES (?, ?, ?, ?, ?, ?)",
            (run_id, command, scenario, seed, time.time(), json.dumps(summary, sort_keys=True))
        )
        conn.commit()
        logger.info(f"💾 Recorded {command} run {run_id} ({scenario}, seed {seed})")
        return run_id
    except sqlite3.IntegrityError as e:
        logger.error(f"Integrity error saving run {run_id}: {e}")
        raise
    finally:
        conn.close()


def save_events(run_id: str, rows: Iterable, db_file: Optional[str] = None) -> int:
    """Store event rows (anything with the EventRow fields) for a run."""
    init_db(db_file)
    conn = sqlite3.connect(_db_file(db_file))
    try:
        cursor = conn.cursor()
        values = [
            (run_id, row.t_us, row.event, row.station, row.src, row.dst, row.kind, row.detail)
            for row in rows
        ]
        cursor.executemany(
            "INSERT INTO events (run_id, t_us, event, station, src, dst, kind, detail) VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
            values
        )
        conn.commit()
        return len(values)
    finally:
        conn.close()


def get_run(run_id: str, db_file: Optional[str] = None) -> Optional[Dict]:
    """Get a stored run by id."""
    init_db(db_file)
    conn = sqlite3.connect(_db_file(db_file))
    try:
        cursor = conn.cursor()
        cursor.execute(
            "SELECT run_id, command, scenario, seed, created, summary FROM runs WHERE run_id = ?",
            (run_id,)
        )
        row = cursor.fetchone()
        if not row:
            logger.info(f"No run with id {run_id}")
            return None
        return {
            "run_id": row[0],
            "command": row[1],
            "scenario": row[2],
            "seed": row[3],
            "created": row[4],
            "summary": json.loads(row[5]) if row[5] else {},
        }
    finally:
        conn.close()


def list_runs(command: Optional[str] = None, db_file: Optional[str] = None) -> List[Dict]:
    init_db(db_file)
    conn = sqlite3.connect(_db_file(db_file))
    try:
        cursor = conn.cursor()
        if command:
            cursor.execute(
                "SELECT run_id, command, scenario, seed, created FROM runs WHERE command = ? ORDER BY created",
                (command,)
            )
        else:
            cursor.execute("SELECT run_id, command, scenario, seed, created FROM runs ORDER BY created")
        return [
            {"run_id": r[0], "command": r[1], "scenario": r[2], "seed": r[3], "created": r[4]}
            for r in cursor.fetchall()
        ]
    finally:
        conn.close()


def get_events(run_id: str, event: Optional[str] = None, db_file: Optional[str] = None) -> List[Dict]:
    """Event rows of a run in time order, optionally one event type only."""
    init_db(db_file)
    conn = sqlite3.connect(_db_file(db_file))
    try:
        cursor = conn.cursor()
        query = "SELECT t_us, event, station, src, dst, kind, detail FROM events WHERE run_id = ?"
        params: tuple = (run_id,)
        if event:
            query += " AND event = ?"
            params += (event,)
        cursor.execute(query + " ORDER BY t_us, rowid", params)
        keys = ("t_us", "event", "station", "src", "dst", "kind", "detail")
        return [dict(zip(keys, r)) for r in cursor.fetchall()]
    finally:
        conn.close()
