//! Plain CSV writers. Floats carry 17 significant digits so downstream
//! slope fits see full precision; group lists are serialized as
//! semicolon-joined level indices.

use std::fmt::Write as _;
use std::path::Path;

use crate::AppError;

/// Full-precision float field.
pub fn num(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{x}")
    } else {
        format!("{x:.16e}")
    }
}

pub struct CsvFile {
    columns: usize,
    body: String,
}

impl CsvFile {
    pub fn new(header: &[&str]) -> Self {
        let mut body = String::new();
        let _ = writeln!(body, "{}", header.join(","));
        CsvFile {
            columns: header.len(),
            body,
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.columns, "csv row width mismatch");
        let _ = writeln!(self.body, "{}", fields.join(","));
    }

    pub fn write(self, dir: &Path, name: &str) -> Result<(), AppError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| AppError::config(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(name);
        std::fs::write(&path, self.body)
            .map_err(|e| AppError::config(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}
