"""
Artifact registry for Portrait Lab
"""

import json
import sqlite3
import logging
from pathlib import Path
from typing import Dict, Any, List, Optional

from .config import config


class Database:
    """SQLite registry of the artifacts and metric reports the CLI writes"""

    def __init__(self, db_path: Path = config.DB_PATH):
        self.db_path = Path(db_path)
        self.conn = None
        self.cursor = None

        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self.initialize()

    def initialize(self):
        """Open the connection and create tables if they don't exist"""
        try:
            self.conn = sqlite3.connect(str(self.db_path))
            self.conn.row_factory = sqlite3.Row
            self.cursor = self.conn.cursor()
            self._create_tables()
            self.conn.commit()
        except sqlite3.Error as e:
            logging.error(f"Database initialization error: {str(e)}")
            raise

    def _create_tables(self):
        self.cursor.execute('''
        CREATE TABLE IF NOT EXISTS artifacts (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            kind TEXT NOT NULL,
            path TEXT NOT NULL,
            sha256 TEXT,
            config_hash TEXT,
            metadata TEXT,
            created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
        )
        ''')

        self.cursor.execute('''
        CREATE TABLE IF NOT EXISTS reports (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            name TEXT NOT NULL,
            path TEXT,
            config_hash TEXT,
            aggregates TEXT NOT NULL,
            created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
        )
        ''')

    def add_artifact(self, kind: str, path, sha256: str = "", config_hash: str = "",
                     metadata: Optional[Dict[str, Any]] = None) -> int:
        """Record a written checkpoint, dataset, corpus, grid or video"""
        try:
            self.cursor.execute('''
            INSERT INTO artifacts (kind, path, sha256, config_hash, metadata)
            VALUES (?, ?, ?, ?, ?)
            ''', (kind, str(path), sha256, config_hash, json.dumps(metadata or {}, sort_keys=True)))

            self.conn.commit()

            return self.cursor.lastrowid
        except sqlite3.Error as e:
            logging.error(f"Error adding artifact: {str(e)}")
            self.conn.rollback()
            raise

    def get_artifacts(self, kind: Optional[str] = None) -> List[Dict[str, Any]]:
        """All artifacts, newest first, optionally of one kind"""
        try:
            if kind is not None:
                self.cursor.execute('''
                SELECT * FROM artifacts WHERE kind = ? ORDER BY id DESC
                ''', (kind,))
            else:
                self.cursor.execute('''
                SELECT * FROM artifacts ORDER BY id DESC
                ''')

            rows = [dict(row) for row in self.cursor.fetchall()]
            for row in rows:
                row["metadata"] = json.loads(row["metadata"] or "{}")
            return rows
        except sqlite3.Error as e:
            logging.error(f"Error getting artifacts: {str(e)}")
            raise

    def find_artifact(self, sha256: str) -> Optional[Dict[str, Any]]:
        try:
            self.cursor.execute('''
            SELECT * FROM artifacts WHERE sha256 = ? ORDER BY id DESC LIMIT 1
            ''', (sha256,))

            row = self.cursor.fetchone()
            return dict(row) if row else None
        except sqlite3.Error as e:
            logging.error(f"Error looking up artifact {sha256}: {str(e)}")
            raise

    def add_report(self, name: str, aggregates: Dict[str, float], path=None, config_hash: str = "") -> int:
        """Record the aggregates of a metric report"""
        try:
            self.cursor.execute('''
            INSERT INTO reports (name, path, config_hash, aggregates)
            VALUES (?, ?, ?, ?)
            ''', (name, str(path) if path else None, config_hash, json.dumps(aggregates, sort_keys=True)))

            self.conn.commit()

            return self.cursor.lastrowid
        except sqlite3.Error as e:
            logging.error(f"Error adding report: {str(e)}")
            self.conn.rollback()
            raise

    def get_reports(self, name: Optional[str] = None) -> List[Dict[str, Any]]:
        try:
            if name is not None:
                self.cursor.execute('''
                SELECT * FROM reports WHERE name = ? ORDER BY id DESC
                ''', (name,))
            else:
                self.cursor.execute('''
                SELECT * FROM reports ORDER BY id DESC
                ''')

            rows = [dict(row) for row in self.cursor.fetchall()]
            for row in rows:
                row["aggregates"] = json.loads(row["aggregates"])
            return rows
        except sqlite3.Error as e:
            logging.error(f"Error getting reports: {str(e)}")
            raise

    def close(self):
        """Close the database connection"""
        if self.conn:
            self.conn.close()
