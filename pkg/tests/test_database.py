"""
Tests for the artifact registry
"""

import sqlite3

import pytest

from portrait_lab.database import Database


@pytest.fixture
def db(tmp_path):
    database = Database(tmp_path / "registry" / "portrait_lab.db")
    yield database
    database.close()


def test_tables_are_created(db):
    db.cursor.execute("SELECT name FROM sqlite_master WHERE type='table'")
    names = {row["name"] for row in db.cursor.fetchall()}
    assert {"artifacts", "reports"} <= names


def test_artifacts_newest_first(db):
    first = db.add_artifact("generator", "/tmp/gen.pt", sha256="aa", config_hash="c1", metadata={"steps": 2})
    second = db.add_artifact("dataset", "/tmp/data", sha256="bb")
    rows = db.get_artifacts()
    assert [r["id"] for r in rows] == [second, first]
    assert rows[1]["metadata"] == {"steps": 2}
    assert [r["kind"] for r in db.get_artifacts("generator")] == ["generator"]


def test_find_artifact_by_digest(db):
    db.add_artifact("grid", "/tmp/a.png", sha256="feed")
    db.add_artifact("grid", "/tmp/b.png", sha256="feed")
    assert db.find_artifact("feed")["path"] == "/tmp/b.png"
    assert db.find_artifact("beef") is None


def test_reports_store_aggregates(db):
    db.add_report("eval-quality", {"psnr": 24.5, "ssim": 0.8}, path="/tmp/q.json", config_hash="h")
    db.add_report("eval-video", {"inconsistency": 0.05})
    assert db.get_reports("eval-quality")[0]["aggregates"] == {"psnr": 24.5, "ssim": 0.8}
    assert db.get_reports("eval-video")[0]["path"] is None
    assert len(db.get_reports()) == 2


def test_reopening_keeps_rows(tmp_path):
    path = tmp_path / "portrait_lab.db"
    first = Database(path)
    first.add_artifact("flow", "/tmp/flow.pt")
    first.close()
    second = Database(path)
    assert len(second.get_artifacts("flow")) == 1
    second.close()


def test_errors_propagate(db):
    db.conn.close()
    with pytest.raises(sqlite3.Error):
        db.add_artifact("flow", "/tmp/flow.pt")
