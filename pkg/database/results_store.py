"""DuckDB store for per-sample uncertainty scores."""
import json
import logging
import os
from typing import Dict, Iterable, Optional, Union

import duckdb
import pandas as pd

from config import settings
from utils.exceptions import UsageError

logger = logging.getLogger(__name__)

GROUP_COLUMNS = ("group_tag", "domain_flag", "predicted_class", "true_class")
RECORD_COLUMNS = ("sample", "method", "score", "predicted_class", "true_class", "domain_flag", "group_tag")


class ResultsStore:
    """Persist score records per run and aggregate them with SQL."""

    def __init__(self, db_path: Optional[str] = None):
        """Initialize the store (lazy connection)."""
        self._db_path = db_path or settings.results_db_path
        if self._db_path != ":memory:":
            directory = os.path.dirname(self._db_path)
            if directory:
                os.makedirs(directory, exist_ok=True)
        self._conn = None

    @property
    def conn(self) -> duckdb.DuckDBPyConnection:
        """Lazy connection - connect and create the schema on first use."""
        if self._conn is None:
            # aggregates must not depend on thread scheduling
            self._conn = duckdb.connect(self._db_path, config={"threads": 1})
            self._initialize_schema()
        return self._conn

    def _initialize_schema(self):
        self._conn.execute(
            """
            CREATE TABLE IF NOT EXISTS runs (
                run_id VARCHAR PRIMARY KEY,
                experiment VARCHAR,
                seed UBIGINT,
                config_json VARCHAR,
                created_at TIMESTAMP DEFAULT current_timestamp
            )
        """
        )
        self._conn.execute(
            """
            CREATE TABLE IF NOT EXISTS score_records (
                run_id VARCHAR,
                experiment VARCHAR,
                "sample" INTEGER,
                method VARCHAR,
                score DOUBLE,
                predicted_class INTEGER,
                true_class INTEGER,
                domain_flag VARCHAR,
                group_tag VARCHAR
            )
        """
        )
        self._conn.execute("CREATE INDEX IF NOT EXISTS idx_score_records_run ON score_records(run_id, method)")

    def record_run(self, run_id: str, experiment: str, seed: int, config: Optional[Dict] = None):
        """Register (or replace) a run."""
        self.conn.execute(
            """
            INSERT OR REPLACE INTO runs (run_id, experiment, seed, config_json)
            VALUES (?, ?, ?, ?)
        """,
            (run_id, experiment, int(seed), json.dumps(config or {}, sort_keys=True)),
        )

    def insert_records(self, run_id: str, experiment: str, records: Union[pd.DataFrame, Iterable]) -> int:
        """
        Append score records of a run; earlier records of the same run and
        experiment are replaced.

        Args:
            run_id: Run identifier
            experiment: Experiment kind (``eval-ood``, ``eval-flip``, ...)
            records: Frame from the scorer (optionally with ``group_tag``) or
                an iterable of ScoreRecord

        Returns:
            Number of rows written
        """
        if isinstance(records, pd.DataFrame):
            frame = records.copy()
        else:
            frame = pd.DataFrame([r.to_dict() for r in records])
            if not frame.empty and "sample" not in frame:
                frame.insert(0, "sample", range(len(frame)))
        for column in RECORD_COLUMNS:
            if column not in frame:
                frame[column] = None
        frame = frame[list(RECORD_COLUMNS)].astype({"score": "float64"})
        frame["true_class"] = frame["true_class"].astype("Int64")
        frame["domain_flag"] = frame["domain_flag"].astype("object")
        frame["group_tag"] = frame["group_tag"].astype("object")
        frame.insert(0, "experiment", experiment)
        frame.insert(0, "run_id", run_id)

        self.conn.execute("DELETE FROM score_records WHERE run_id = ? AND experiment = ?", (run_id, experiment))
        self.conn.register("incoming_records", frame)
        try:
            self.conn.execute(
                """
                INSERT INTO score_records
                SELECT run_id, experiment, CAST("sample" AS INTEGER), method, score,
                       CAST(predicted_class AS INTEGER), CAST(true_class AS INTEGER),
                       CAST(domain_flag AS VARCHAR), CAST(group_tag AS VARCHAR)
                FROM incoming_records
            """
            )
        finally:
            self.conn.unregister("incoming_records")
        logger.debug("stored %d score records for run %s (%s)", len(frame), run_id, experiment)
        return len(frame)

    def group_summary(self, run_id: str, method: str, group_column: str = "group_tag") -> pd.DataFrame:
        """Count, mean, median and sample std of one method's scores per group."""
        if group_column not in GROUP_COLUMNS:
            raise UsageError(f"cannot group by '{group_column}'; choose from {GROUP_COLUMNS}")
        return self.conn.execute(
            f"""
            SELECT {group_column} AS "group",
                   COUNT(*) AS count,
                   AVG(score) AS mean,
                   MEDIAN(score) AS median,
                   STDDEV_SAMP(score) AS std
            FROM score_records
            WHERE run_id = ? AND method = ?
            GROUP BY {group_column}
            ORDER BY {group_column}
        """,
            (run_id, method),
        ).df()

    def records(self, run_id: str, method: Optional[str] = None) -> pd.DataFrame:
        query = "SELECT * FROM score_records WHERE run_id = ?"
        params = [run_id]
        if method is not None:
            query += " AND method = ?"
            params.append(method)
        return self.conn.execute(query + " ORDER BY experiment, method, \"sample\"", params).df()

    def runs(self) -> pd.DataFrame:
        """All recorded runs with their record counts."""
        return self.conn.execute(
            """
            SELECT r.run_id, r.experiment, r.seed, COUNT(s.run_id) AS records
            FROM runs r LEFT JOIN score_records s ON s.run_id = r.run_id
            GROUP BY r.run_id, r.experiment, r.seed
            ORDER BY r.run_id
        """
        ).df()

    def close(self):
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
