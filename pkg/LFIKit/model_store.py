import sqlite3, json, os
from typing import Union


class ModelStore:
    """Class for keeping experiment runs and their trained models in sqlite."""

    def __init__(self, db_path: str):
        """
        Initialize ModelStore object.

        Args:
            db_path (str): path to the database file (":memory:" works too).
        """
        self.db_path = db_path
        self.conn: sqlite3.Connection = self.connect_to_db()
        self.conn.row_factory = sqlite3.Row

    def connect_to_db(self) -> sqlite3.Connection:
        """
        Establishes connection to the database. If db doesn't exist,
        creates one and adds tables.

        Returns:
            sqlite3.Connection: connection to the database.
        """
        db_exists = os.path.isfile(self.db_path)
        self.conn = sqlite3.connect(self.db_path)
        if not db_exists:
            self.create_tables()
        return self.conn

    def create_tables(self) -> None:
        """Creates the runs and models tables."""
        cursor = self.conn.cursor()
        try:
            cursor.execute(
                """
                CREATE TABLE runs (
                    id INTEGER PRIMARY KEY,
                    config_hash TEXT,
                    simulator TEXT,
                    algorithm TEXT,
                    seed INTEGER,
                    exit_code INTEGER
                )
                """
            )
            cursor.execute(
                """
                CREATE TABLE models (
                    id INTEGER PRIMARY KEY,
                    run_id INTEGER REFERENCES runs(id),
                    kind TEXT,
                    document TEXT
                )
                """
            )
        except Exception:
            self.conn.close()
            if os.path.isfile(self.db_path):
                os.remove(self.db_path)
            raise
        finally:
            cursor.close()
        self.conn.commit()

    def add_run(
        self,
        config_hash: str,
        simulator: str,
        algorithm: str,
        seed: int,
        exit_code: int
    ) -> int:
        """
        Registers a finished run.

        Returns:
            int: id of the new run.
        """
        cursor = self.conn.cursor()
        try:
            cursor.execute(
                """
                INSERT INTO runs
                (config_hash, simulator, algorithm, seed, exit_code)
                VALUES (?, ?, ?, ?, ?)
                """,
                (config_hash, simulator, algorithm, seed, exit_code)
            )
            run_id = cursor.lastrowid
        finally:
            cursor.close()
        self.conn.commit()
        return run_id

    def add_model(self, run_id: int, document: dict) -> int:
        """
        Stores a model document ("kind" tag plus parameters) of a run.

        Raises:
            ValueError: If the document has no kind tag.
        """
        if "kind" not in document:
            raise ValueError("Model document needs a 'kind' entry.")
        cursor = self.conn.cursor()
        try:
            cursor.execute(
                "INSERT INTO models (run_id, kind, document) VALUES (?, ?, ?)",
                (run_id, document["kind"], json.dumps(document))
            )
            model_id = cursor.lastrowid
        finally:
            cursor.close()
        self.conn.commit()
        return model_id

    def get_model(self, id: int) -> Union[dict, None]:
        """Returns the model document with the given id, None if absent."""
        cursor = self.conn.cursor()
        try:
            cursor.execute("SELECT document FROM models WHERE id=?", (id,))
            row = cursor.fetchone()
        finally:
            cursor.close()
        return None if row is None else json.loads(row["document"])

    def get_models_by_run(self, run_id: int) -> list[sqlite3.Row]:
        cursor = self.conn.cursor()
        try:
            cursor.execute(
                "SELECT id, kind, document FROM models WHERE run_id=?",
                (run_id,)
            )
            data = cursor.fetchall()
        finally:
            cursor.close()
        return data

    def get_runs_by_config_hash(self, config_hash: str) -> list[sqlite3.Row]:
        cursor = self.conn.cursor()
        try:
            cursor.execute(
                "SELECT * FROM runs WHERE config_hash=?", (config_hash,)
            )
            data = cursor.fetchall()
        finally:
            cursor.close()
        return data

    def delete_run(self, run_id: int) -> None:
        """Deletes a run together with its models."""
        cursor = self.conn.cursor()
        try:
            cursor.execute("DELETE FROM models WHERE run_id=?", (run_id,))
            cursor.execute("DELETE FROM runs WHERE id=?", (run_id,))
        finally:
            cursor.close()
        self.conn.commit()

    def close(self) -> None:
        """Closes connection to the database."""
        self.conn.close()
