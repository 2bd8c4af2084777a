//! Persistence: a single-file SQLite store for experiments, metrics, fault
//! traces and monitor captures, plus RFC-4180 CSV export of the metric table.
//!
//! The store is single-writer, multi-reader; campaign workers funnel their
//! results to one writer. Result rows (metrics, fault_trace, monitors) are
//! append-only. The schema lives in `docs/schema.md`.

use std::path::Path;

use rusqlite::{params, Connection, OptionalExtension};

use crate::injector::{FaultTraceRow, MonitorPayload, MonitorRecord};
use crate::tensor::{tensor_from_bytes, tensor_to_bytes, DenseTensor, TensorValue};
use crate::{Error, Result};

pub const SCHEMA_VERSION: i64 = 1;

const SCHEMA_SQL: &str = r#"
CREATE TABLE IF NOT EXISTS meta (
  key   TEXT PRIMARY KEY,
  value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS experiments (
  experiment_id INTEGER PRIMARY KEY AUTOINCREMENT,
  config_hash   TEXT NOT NULL,
  model_id      TEXT NOT NULL,
  dataset_id    TEXT NOT NULL,
  started_ms    INTEGER NOT NULL,
  ended_ms      INTEGER,
  version       TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS metrics (
  metric_id     INTEGER PRIMARY KEY AUTOINCREMENT,
  experiment_id INTEGER NOT NULL REFERENCES experiments(experiment_id),
  rate          REAL NOT NULL,
  layer         TEXT NOT NULL,
  seed          INTEGER NOT NULL,
  accuracy      REAL,
  fault_count   INTEGER NOT NULL,
  wall_time_s   REAL NOT NULL,
  error         TEXT
);
CREATE INDEX IF NOT EXISTS idx_metrics_cell ON metrics(experiment_id, rate, layer, seed);
CREATE TABLE IF NOT EXISTS fault_trace (
  trace_id      INTEGER PRIMARY KEY AUTOINCREMENT,
  experiment_id INTEGER NOT NULL REFERENCES experiments(experiment_id),
  rate          REAL NOT NULL,
  layer         TEXT NOT NULL,
  seed          INTEGER NOT NULL,
  target        TEXT NOT NULL,
  site          TEXT NOT NULL,
  kind          TEXT NOT NULL,
  element_index INTEGER NOT NULL,
  bit_position  INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_trace_cell ON fault_trace(experiment_id, rate, layer, seed);
CREATE TABLE IF NOT EXISTS monitors (
  monitor_id    INTEGER PRIMARY KEY AUTOINCREMENT,
  experiment_id INTEGER NOT NULL REFERENCES experiments(experiment_id),
  layer         TEXT NOT NULL,
  target        TEXT NOT NULL,
  capture       TEXT NOT NULL,
  input_index   INTEGER NOT NULL,
  timestamp_ms  INTEGER NOT NULL,
  tensor        BLOB,
  min           REAL,
  max           REAL,
  mean          REAL,
  nan_count     INTEGER
);
"#;

/// Immutable description of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentMeta {
    pub config_hash: String,
    pub model_id: String,
    pub dataset_id: String,
    pub version: String,
}

/// One accuracy cell: `(rate, layer, seed)` with its outcome. `accuracy` is
/// None exactly when `error` carries the cell's failure tag.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub rate: f64,
    pub layer: String,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub fault_count: u64,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

pub struct ResultStore {
    conn: Connection,
}

fn init_schema(conn: &Connection) -> Result<()> {
    conn.execute_batch(SCHEMA_SQL)?;
    let found: Option<String> = conn
        .query_row(
            "SELECT value FROM meta WHERE key = 'schema_version'",
            [],
            |r| r.get(0),
        )
        .optional()?;
    match found {
        None => {
            conn.execute(
                "INSERT INTO meta (key, value) VALUES ('schema_version', ?1)",
                params![SCHEMA_VERSION.to_string()],
            )?;
            Ok(())
        }
        Some(v) => {
            let found: i64 = v.parse().unwrap_or(-1);
            if found != SCHEMA_VERSION {
                return Err(Error::SchemaVersionMismatch {
                    found,
                    expected: SCHEMA_VERSION,
                });
            }
            Ok(())
        }
    }
}

/// Prints a float with six significant digits, plain decimal notation.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(5 - exp);
    let rounded = (x * scale).round() / scale;
    format!("{rounded}")
}

impl ResultStore {
    /// Opens (or creates) a store file; reopening is idempotent. A store
    /// written by a different schema version is rejected.
    pub fn open(path: &Path) -> Result<ResultStore> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "foreign_keys", true)?;
        init_schema(&conn)?;
        Ok(ResultStore { conn })
    }

    pub fn open_in_memory() -> Result<ResultStore> {
        let conn = Connection::open_in_memory()?;
        conn.pragma_update(None, "foreign_keys", true)?;
        init_schema(&conn)?;
        Ok(ResultStore { conn })
    }

    pub fn schema_version(&self) -> Result<i64> {
        let v: String = self.conn.query_row(
            "SELECT value FROM meta WHERE key = 'schema_version'",
            [],
            |r| r.get(0),
        )?;
        Ok(v.parse().unwrap_or(-1))
    }

    /// Registers an experiment and returns its id. The end timestamp is
    /// filled by [`ResultStore::finish_experiment`]; every other table is
    /// append-only.
    pub fn begin_experiment(&mut self, meta: &ExperimentMeta, started_ms: i64) -> Result<i64> {
        self.conn.execute(
            "INSERT INTO experiments (config_hash, model_id, dataset_id, started_ms, version)
             VALUES (?1, ?2, ?3, ?4, ?5)",
            params![
                meta.config_hash,
                meta.model_id,
                meta.dataset_id,
                started_ms,
                meta.version
            ],
        )?;
        Ok(self.conn.last_insert_rowid())
    }

    /// Sets the end timestamp once; the single sanctioned in-place write.
    pub fn finish_experiment(&mut self, experiment_id: i64, ended_ms: i64) -> Result<()> {
        let n = self.conn.execute(
            "UPDATE experiments SET ended_ms = ?2 WHERE experiment_id = ?1 AND ended_ms IS NULL",
            params![experiment_id, ended_ms],
        )?;
        if n == 0 {
            return Err(Error::InvalidParameter(format!(
                "experiment {experiment_id} missing or already finished"
            )));
        }
        Ok(())
    }

    pub fn record_metric(&mut self, experiment_id: i64, row: &MetricRow) -> Result<()> {
        self.conn.execute(
            "INSERT INTO metrics (experiment_id, rate, layer, seed, accuracy, fault_count, wall_time_s, error)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            params![
                experiment_id,
                row.rate,
                row.layer,
                row.seed as i64,
                row.accuracy,
                row.fault_count as i64,
                row.wall_time_s,
                row.error
            ],
        )?;
        Ok(())
    }

    /// Persists the fault trace of one cell in a single transaction.
    pub fn record_fault_rows(
        &mut self,
        experiment_id: i64,
        rate: f64,
        layer: &str,
        seed: u64,
        rows: &[FaultTraceRow],
    ) -> Result<()> {
        let tx = self.conn.transaction()?;
        {
            let mut stmt = tx.prepare_cached(
                "INSERT INTO fault_trace
                 (experiment_id, rate, layer, seed, target, site, kind, element_index, bit_position)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
            )?;
            for r in rows {
                stmt.execute(params![
                    experiment_id,
                    rate,
                    layer,
                    seed as i64,
                    r.target.as_str(),
                    r.site.as_str(),
                    r.kind.as_str(),
                    r.element_index as i64,
                    r.bit_position as i64
                ])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    pub fn record_monitor(&mut self, experiment_id: i64, rec: &MonitorRecord) -> Result<()> {
        let mut capture = "summary";
        let mut blob: Option<Vec<u8>> = None;
        let mut summary: (Option<f64>, Option<f64>, Option<f64>, Option<i64>) =
            (None, None, None, None);
        match &rec.payload {
            MonitorPayload::Full(t) => {
                capture = "full";
                blob = Some(tensor_to_bytes(&TensorValue::Dense(t.clone())));
            }
            MonitorPayload::Summary {
                min,
                max,
                mean,
                nan_count,
            } => {
                summary = (
                    Some(*min as f64),
                    Some(*max as f64),
                    Some(*mean as f64),
                    Some(*nan_count as i64),
                );
            }
        }
        let (min, max, mean, nan_count) = summary;
        self.conn.execute(
            "INSERT INTO monitors
             (experiment_id, layer, target, capture, input_index, timestamp_ms, tensor, min, max, mean, nan_count)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)",
            params![
                experiment_id,
                rec.layer,
                rec.target.as_str(),
                capture,
                rec.input_index as i64,
                rec.timestamp_ms,
                blob,
                min,
                max,
                mean,
                nan_count
            ],
        )?;
        Ok(())
    }

    pub fn metric_count(&self) -> Result<u64> {
        let n: i64 = self
            .conn
            .query_row("SELECT COUNT(*) FROM metrics", [], |r| r.get(0))?;
        Ok(n as u64)
    }

    pub fn monitor_count(&self, experiment_id: i64) -> Result<u64> {
        let n: i64 = self.conn.query_row(
            "SELECT COUNT(*) FROM monitors WHERE experiment_id = ?1",
            params![experiment_id],
            |r| r.get(0),
        )?;
        Ok(n as u64)
    }

    pub fn trace_count(
        &self,
        experiment_id: i64,
        rate: f64,
        layer: &str,
        seed: u64,
    ) -> Result<u64> {
        let n: i64 = self.conn.query_row(
            "SELECT COUNT(*) FROM fault_trace
             WHERE experiment_id = ?1 AND rate = ?2 AND layer = ?3 AND seed = ?4",
            params![experiment_id, rate, layer, seed as i64],
            |r| r.get(0),
        )?;
        Ok(n as u64)
    }

    /// All metric rows, deterministically ordered by
    /// (experiment_id, rate, layer, seed).
    pub fn metric_rows(&self, experiment_id: Option<i64>) -> Result<Vec<(i64, MetricRow)>> {
        let sql = format!(
            "SELECT experiment_id, rate, layer, seed, accuracy, fault_count, wall_time_s, error
             FROM metrics {} ORDER BY experiment_id, rate, layer, seed",
            if experiment_id.is_some() {
                "WHERE experiment_id = ?1"
            } else {
                ""
            }
        );
        let mut stmt = self.conn.prepare(&sql)?;
        let map = |r: &rusqlite::Row<'_>| -> rusqlite::Result<(i64, MetricRow)> {
            Ok((
                r.get(0)?,
                MetricRow {
                    rate: r.get(1)?,
                    layer: r.get(2)?,
                    seed: r.get::<_, i64>(3)? as u64,
                    accuracy: r.get(4)?,
                    fault_count: r.get::<_, i64>(5)? as u64,
                    wall_time_s: r.get(6)?,
                    error: r.get(7)?,
                },
            ))
        };
        let rows = match experiment_id {
            Some(id) => stmt.query_map(params![id], map)?,
            None => stmt.query_map([], map)?,
        };
        let mut out = Vec::new();
        for r in rows {
            out.push(r?);
        }
        Ok(out)
    }

    /// Experiment ids with their model ids, oldest first.
    pub fn experiments(&self) -> Result<Vec<(i64, String)>> {
        let mut stmt = self
            .conn
            .prepare("SELECT experiment_id, model_id FROM experiments ORDER BY experiment_id")?;
        let rows = stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?;
        let mut out = Vec::new();
        for r in rows {
            out.push(r?);
        }
        Ok(out)
    }

    /// Reads back the full-tensor payload of one monitor row.
    pub fn monitor_tensor(&self, monitor_id: i64) -> Result<DenseTensor> {
        let blob: Vec<u8> = self.conn.query_row(
            "SELECT tensor FROM monitors WHERE monitor_id = ?1",
            params![monitor_id],
            |r| r.get(0),
        )?;
        match tensor_from_bytes(&blob)? {
            TensorValue::Dense(t) => Ok(t),
            other => Err(Error::ShapeMismatch(format!(
                "monitor blob is not dense: {other:?}"
            ))),
        }
    }

    pub fn monitor_ids(&self, experiment_id: i64) -> Result<Vec<i64>> {
        let mut stmt = self.conn.prepare(
            "SELECT monitor_id FROM monitors WHERE experiment_id = ?1 ORDER BY monitor_id",
        )?;
        let rows = stmt.query_map(params![experiment_id], |r| r.get(0))?;
        let mut out = Vec::new();
        for r in rows {
            out.push(r?);
        }
        Ok(out)
    }

    /// Writes the metric table as CSV: header row, deterministic row order,
    /// accuracy at six significant digits. Re-exporting an unchanged store
    /// yields byte-identical output.
    pub fn export_metrics_csv(&self, w: &mut dyn std::io::Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "experiment_id",
            "rate",
            "layer",
            "seed",
            "accuracy",
            "fault_count",
            "wall_time_s",
            "error",
        ])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        for (exp, row) in self.metric_rows(None)? {
            wtr.write_record([
                exp.to_string(),
                format!("{}", row.rate),
                row.layer.clone(),
                row.seed.to_string(),
                row.accuracy.map(format_sig6).unwrap_or_default(),
                row.fault_count.to_string(),
                format!("{}", row.wall_time_s),
                row.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Imports rows written by [`ResultStore::export_metrics_csv`], creating
    /// stub experiment rows for unseen experiment ids.
    pub fn import_metrics_csv(&mut self, r: impl std::io::Read) -> Result<usize> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut n = 0usize;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Io(std::io::Error::other(e)))?;
            let exp: i64 = rec[0]
                .parse()
                .map_err(|_| Error::Config(format!("bad experiment_id {:?}", &rec[0])))?;
            let exists: Option<i64> = self
                .conn
                .query_row(
                    "SELECT experiment_id FROM experiments WHERE experiment_id = ?1",
                    params![exp],
                    |r| r.get(0),
                )
                .optional()?;
            if exists.is_none() {
                self.conn.execute(
                    "INSERT INTO experiments (experiment_id, config_hash, model_id, dataset_id, started_ms, version)
                     VALUES (?1, 'imported', 'imported', 'imported', 0, 'imported')",
                    params![exp],
                )?;
            }
            let parse_f64 = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Config(format!("bad float {s:?}")))
                }
            };
            let row = MetricRow {
                rate: parse_f64(&rec[1])?.ok_or_else(|| Error::Config("missing rate".into()))?,
                layer: rec[2].to_string(),
                seed: rec[3]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seed {:?}", &rec[3])))?,
                accuracy: parse_f64(&rec[4])?,
                fault_count: rec[5]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad fault_count {:?}", &rec[5])))?,
                wall_time_s: parse_f64(&rec[6])?.unwrap_or(0.0),
                error: if rec[7].is_empty() {
                    None
                } else {
                    Some(rec[7].to_string())
                },
            };
            self.record_metric(exp, &row)?;
            n += 1;
        }
        Ok(n)
    }

    /// Number of user data tables (experiments, metrics, fault_trace,
    /// monitors).
    pub fn data_table_count(&self) -> Result<u64> {
        let n: i64 = self.conn.query_row(
            "SELECT COUNT(*) FROM sqlite_master
             WHERE type = 'table' AND name IN ('experiments', 'metrics', 'fault_trace', 'monitors')",
            [],
            |r| r.get(0),
        )?;
        Ok(n as u64)
    }
}
