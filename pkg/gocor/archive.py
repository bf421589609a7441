import json
import logging
import sqlite3
from pathlib import Path
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


class RunArchive:
    def __init__(self, db_path="archive/runs.db"):
        """Open (and create if needed) the archive of CLI command runs"""
        self.db_path = db_path

        Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)

        self.init_database()

    def init_database(self):
        """Create the runs table"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                command TEXT NOT NULL,
                passed BOOLEAN NOT NULL,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                config TEXT,
                summary TEXT
            )
        """)

        cursor.execute("CREATE INDEX IF NOT EXISTS idx_run_command ON runs(command)")
        cursor.execute("CREATE INDEX IF NOT EXISTS idx_run_created ON runs(created_at)")

        conn.commit()
        conn.close()

    def save_run(self, command: str, passed: bool, config: Optional[Dict] = None,
                 summary: Optional[Dict] = None) -> int:
        """Store one command's configuration and result summary"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute("""
            INSERT INTO runs (command, passed, config, summary)
            VALUES (?, ?, ?, ?)
        """, (command, passed, json.dumps(config or {}, sort_keys=True), json.dumps(summary or {}, sort_keys=True)))

        run_id = cursor.lastrowid
        conn.commit()
        conn.close()

        logger.info(f"archived {command} run {run_id} ({'passed' if passed else 'failed'})")
        return run_id

    @staticmethod
    def _row_to_dict(row) -> Dict:
        return {
            'id': row[0],
            'command': row[1],
            'passed': bool(row[2]),
            'created_at': row[3],
            'config': json.loads(row[4] or '{}'),
            'summary': json.loads(row[5] or '{}'),
        }

    def get_run(self, run_id: int) -> Optional[Dict]:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute("""
            SELECT id, command, passed, created_at, config, summary
            FROM runs WHERE id = ?
        """, (run_id,))

        result = cursor.fetchone()
        conn.close()

        return self._row_to_dict(result) if result else None

    def get_latest_runs(self, n: int = 5, command: Optional[str] = None) -> List[Dict]:
        """The n most recent runs, optionally of one command only"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        if command is None:
            cursor.execute("""
                SELECT id, command, passed, created_at, config, summary
                FROM runs ORDER BY id DESC LIMIT ?
            """, (n,))
        else:
            cursor.execute("""
                SELECT id, command, passed, created_at, config, summary
                FROM runs WHERE command = ? ORDER BY id DESC LIMIT ?
            """, (command, n))

        results = cursor.fetchall()
        conn.close()

        return [self._row_to_dict(row) for row in results]

    def get_statistics(self) -> Dict:
        """Run counts and pass rate, overall and per command"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute("SELECT COUNT(*), COALESCE(SUM(passed), 0) FROM runs")
        total_runs, passed_runs = cursor.fetchone()

        cursor.execute("""
            SELECT command, COUNT(*), COALESCE(SUM(passed), 0) FROM runs
            GROUP BY command ORDER BY command
        """)
        per_command = {cmd: {'runs': count, 'passed': passed} for cmd, count, passed in cursor.fetchall()}

        conn.close()

        return {
            'total_runs': total_runs,
            'passed_runs': passed_runs,
            'pass_rate': passed_runs / total_runs if total_runs > 0 else 0,
            'per_command': per_command,
        }
