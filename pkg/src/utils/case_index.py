"""
case_index.py - SQLite snapshot of review cases

The event log is authoritative; this index is a cache rebuilt from it
whenever the stored sequence number disagrees with the log.
"""

import os
import sqlite3

import pandas as pd

from src.utils.logger import get_logger

logger = get_logger("case_index")

INDEX_FILENAME = "case_index.db"


class CaseIndex:
    """
    Snapshot store for cases, hash records and findings.
    Queries return pandas DataFrames.
    """

    def __init__(self, db_file=None):
        """
        Open (and create if needed) the index.

        Args:
            db_file (str, optional): Path to the SQLite file.
                If None, 'case_index.db' in the current directory is used.
        """
        if db_file is None:
            db_file = os.path.join(os.getcwd(), INDEX_FILENAME)

        self.db_file = db_file
        self.conn = None

        try:
            self.connect()
            self.create_tables()
        except sqlite3.Error as e:
            logger.error(f"Case index initialization error: {e}")
            raise

    def connect(self):
        """Connect to the SQLite database."""
        self.conn = sqlite3.connect(self.db_file)
        self.conn.execute("PRAGMA foreign_keys = ON")
        logger.debug(f"Connected to case index: {self.db_file}")

    def close(self):
        """Close the database connection."""
        if self.conn:
            self.conn.close()
            self.conn = None

    def create_tables(self):
        """Create the snapshot tables if they don't exist."""
        cursor = self.conn.cursor()

        cursor.execute('''
        CREATE TABLE IF NOT EXISTS cases (
            case_id TEXT PRIMARY KEY,
            state TEXT,
            author TEXT,
            editor TEXT,
            download_link TEXT,
            baseline_key TEXT,
            acceptance_key TEXT,
            last_seq INTEGER NOT NULL,
            last_digest TEXT NOT NULL
        )
        ''')

        cursor.execute('''
        CREATE TABLE IF NOT EXISTS hash_records (
            case_id TEXT NOT NULL REFERENCES cases(case_id) ON DELETE CASCADE,
            record_key TEXT NOT NULL,
            kind TEXT NOT NULL,
            instance INTEGER NOT NULL,
            raw_digest TEXT NOT NULL,
            manifest_digest TEXT NOT NULL,
            stability TEXT NOT NULL,
            source_link TEXT NOT NULL,
            sealed_at TEXT NOT NULL,
            sealed_by TEXT NOT NULL,
            PRIMARY KEY (case_id, record_key)
        )
        ''')

        cursor.execute('''
        CREATE TABLE IF NOT EXISTS findings (
            case_id TEXT NOT NULL REFERENCES cases(case_id) ON DELETE CASCADE,
            finding_id TEXT NOT NULL,
            category TEXT NOT NULL,
            role TEXT NOT NULL,
            flow_ref TEXT NOT NULL,
            measure TEXT NOT NULL,
            detectable INTEGER NOT NULL,
            disposition TEXT NOT NULL,
            verdict TEXT,
            raised_by TEXT,
            raised_at TEXT,
            evidence TEXT,
            PRIMARY KEY (case_id, finding_id)
        )
        ''')

        cursor.execute('CREATE INDEX IF NOT EXISTS idx_findings_category ON findings(category)')
        self.conn.commit()

    def sync_case(self, case):
        """
        Replace the snapshot rows of one case.

        Args:
            case (ReviewCase): The case as replayed from its log.
        """
        with self.conn:
            self.conn.execute("DELETE FROM cases WHERE case_id = ?", (case.case_id,))
            self.conn.execute(
                "INSERT INTO cases VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    case.case_id,
                    case.state.value if case.state else None,
                    case.author,
                    case.editor,
                    case.dataset_ref.download_link if case.dataset_ref else None,
                    case.baseline_key,
                    case.acceptance_key,
                    case.last_seq,
                    case.last_digest,
                ),
            )
            self.conn.executemany(
                "INSERT INTO hash_records VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                [
                    (
                        case.case_id,
                        key,
                        rec.checkpoint.kind.value,
                        rec.checkpoint.instance,
                        rec.raw_digest.hex,
                        rec.content_manifest.manifest_digest.hex,
                        rec.stability.verdict.value,
                        rec.source_link,
                        rec.sealed_at,
                        rec.sealed_by,
                    )
                    for key, rec in case.records.items()
                ],
            )
            self.conn.executemany(
                "INSERT INTO findings VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                [
                    (
                        case.case_id,
                        f.finding_id,
                        f.category.value,
                        f.role.value,
                        f.flow_ref,
                        f.measure.value,
                        int(f.detectable),
                        f.disposition.value,
                        f.resolution.verdict.value if f.resolution else None,
                        f.raised_by,
                        f.raised_at,
                        "; ".join(f.evidence),
                    )
                    for f in case.findings
                ],
            )
        logger.debug(f"Snapshot of {case.case_id} at seq {case.last_seq}")

    def last_seq(self, case_id):
        """Sequence number the snapshot was taken at, or None."""
        row = self.conn.execute("SELECT last_seq FROM cases WHERE case_id = ?", (case_id,)).fetchone()
        return row[0] if row else None

    def get_cases(self, state=None):
        """
        Get case rows, optionally filtered by state.

        Returns:
            pandas.DataFrame: One row per case
        """
        query = "SELECT * FROM cases WHERE 1=1"
        params = []
        if state:
            query += " AND state = ?"
            params.append(state)
        query += " ORDER BY case_id"
        return pd.read_sql_query(query, self.conn, params=params)

    def get_hash_records(self, case_id=None):
        query = "SELECT * FROM hash_records WHERE 1=1"
        params = []
        if case_id:
            query += " AND case_id = ?"
            params.append(case_id)
        query += " ORDER BY case_id, sealed_at, record_key"
        df = pd.read_sql_query(query, self.conn, params=params)
        df['sealed_at'] = pd.to_datetime(df['sealed_at'], utc=True)
        return df

    def get_findings(self, case_id=None, category=None, disposition=None):
        """
        Get findings with optional filtering.

        Args:
            case_id (str, optional): Only this case.
            category (str, optional): Finding category, e.g. 'DataLoss'.
            disposition (str, optional): 'Open', 'Resolved' or 'Escalated'.

        Returns:
            pandas.DataFrame: Findings in the order they were raised
        """
        query = "SELECT * FROM findings WHERE 1=1"
        params = []
        if case_id:
            query += " AND case_id = ?"
            params.append(case_id)
        if category:
            query += " AND category = ?"
            params.append(category)
        if disposition:
            query += " AND disposition = ?"
            params.append(disposition)
        query += " ORDER BY case_id, raised_at, finding_id"
        df = pd.read_sql_query(query, self.conn, params=params)
        df['detectable'] = df['detectable'].astype(bool)
        return df

    def export_findings_csv(self, csv_file, case_id=None):
        """
        Export findings to CSV.

        Returns:
            int: Number of findings written
        """
        df = self.get_findings(case_id=case_id)
        directory = os.path.dirname(os.path.abspath(csv_file))
        os.makedirs(directory, exist_ok=True)
        df.to_csv(csv_file, index=False)
        logger.info(f"Exported {len(df)} findings to {csv_file}")
        return len(df)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
