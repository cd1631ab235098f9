//! CSV ingestion and emission.
//!
//! The sole on-disk table format: UTF-8, header row required, columns are the
//! schema's feature names plus the target name (any column order), cells are
//! category labels, target cells are `0` or `1`.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::{Dataset, Row, Schema};

impl Dataset {
    pub fn load_csv(path: impl AsRef<Path>, schema: Arc<Schema>) -> Result<Dataset> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;

        let headers = reader
            .headers()
            .map_err(|e| Error::Csv {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?
            .clone();
        let header_names: Vec<&str> = headers.iter().collect();

        // column position of each schema feature, then the target
        let mut feature_cols = Vec::with_capacity(schema.feature_count());
        for f in schema.features() {
            let pos = header_names
                .iter()
                .position(|h| *h == f.name)
                .ok_or_else(|| Error::MissingColumn {
                    name: f.name.clone(),
                })?;
            feature_cols.push(pos);
        }
        let target_col = header_names
            .iter()
            .position(|h| *h == schema.target_name())
            .ok_or_else(|| Error::MissingColumn {
                name: schema.target_name().to_string(),
            })?;
        if header_names.len() != schema.feature_count() + 1 {
            return Err(Error::Schema(format!(
                "header has {} columns, schema expects {}",
                header_names.len(),
                schema.feature_count() + 1
            )));
        }

        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Csv {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?;
            let mut xs = Vec::with_capacity(schema.feature_count());
            for (j, &col) in feature_cols.iter().enumerate() {
                let cell = record.get(col).unwrap_or("");
                let idx = schema.category_index(j, cell).ok_or_else(|| {
                    Error::UnknownCategory {
                        column: schema.features()[j].name.clone(),
                        value: cell.to_string(),
                        row: i + 1,
                    }
                })?;
                xs.push(idx);
            }
            let target_cell = record.get(target_col).unwrap_or("");
            let y = match target_cell {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(Error::UnknownCategory {
                        column: schema.target_name().to_string(),
                        value: other.to_string(),
                        row: i + 1,
                    })
                }
            };
            rows.push(Row { xs, y });
        }
        Dataset::new(schema, rows, None)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let mut header: Vec<&str> = self
            .schema()
            .features()
            .iter()
            .map(|f| f.name.as_str())
            .collect();
        header.push(self.schema().target_name());
        writer.write_record(&header).map_err(|e| Error::Csv {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        for row in self.rows() {
            let mut record: Vec<&str> = Vec::with_capacity(header.len());
            for (j, &x) in row.xs.iter().enumerate() {
                record.push(&self.schema().features()[j].categories[x]);
            }
            let y = if row.y == 1 { "1" } else { "0" };
            record.push(y);
            writer.write_record(&record).map_err(|e| Error::Csv {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?;
        }
        writer.flush()?;
        Ok(())
    }
}
