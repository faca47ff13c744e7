//! Checkpoints: named parameter tensors in a plain-text format.
//!
//! Layout (stable across runs, documented here and in the README):
//!
//! ```text
//! zshot-checkpoint v1
//! tensor <name> <rows> <cols>
//! <row 0: cols space-separated values>
//! ...
//! ```
//!
//! Values are written with Rust's shortest-roundtrip `f64` formatting, so a
//! load reproduces the saved bits exactly.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::autodiff::Param;

const HEADER: &str = "zshot-checkpoint v1";

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    Format { path: String, detail: String },
    MissingTensor { path: String, name: String },
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint io error: {e}"),
            CheckpointError::Format { path, detail } => {
                write!(f, "malformed checkpoint {path}: {detail}")
            }
            CheckpointError::MissingTensor { path, name } => {
                write!(f, "checkpoint {path} holds no tensor `{name}`")
            }
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

pub fn save_params(path: &Path, params: &[&Param]) -> Result<(), CheckpointError> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for p in params {
        out.push_str(&format!("tensor {} {} {}\n", p.name, p.shape.0, p.shape.1));
        for r in 0..p.shape.0 {
            let row = &p.data[r * p.shape.1..(r + 1) * p.shape.1];
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Vec<Param>, CheckpointError> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == HEADER => {}
        other => {
            return Err(CheckpointError::Format {
                path: display,
                detail: format!("expected header `{HEADER}`, got {other:?}"),
            })
        }
    }
    let mut params = Vec::new();
    let mut pending: Option<(String, usize, usize, Vec<f64>)> = None;
    for (line_no, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("tensor ") {
            if let Some((name, rows, cols, data)) = pending.take() {
                finish_tensor(&display, name, rows, cols, data, &mut params)?;
            }
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(CheckpointError::Format {
                    path: display,
                    detail: format!("line {}: expected `tensor <name> <rows> <cols>`", line_no + 2),
                });
            }
            let rows = fields[1].parse::<usize>().map_err(|e| CheckpointError::Format {
                path: display.clone(),
                detail: format!("line {}: {e}", line_no + 2),
            })?;
            let cols = fields[2].parse::<usize>().map_err(|e| CheckpointError::Format {
                path: display.clone(),
                detail: format!("line {}: {e}", line_no + 2),
            })?;
            pending = Some((fields[0].to_string(), rows, cols, Vec::with_capacity(rows * cols)));
        } else {
            let Some((_, _, cols, data)) = pending.as_mut() else {
                return Err(CheckpointError::Format {
                    path: display,
                    detail: format!("line {}: values before any tensor header", line_no + 2),
                });
            };
            let mut count = 0usize;
            for field in line.split_whitespace() {
                let v = field.parse::<f64>().map_err(|e| CheckpointError::Format {
                    path: display.clone(),
                    detail: format!("line {}: {e}", line_no + 2),
                })?;
                data.push(v);
                count += 1;
            }
            if count != *cols {
                return Err(CheckpointError::Format {
                    path: display,
                    detail: format!("line {}: expected {cols} values, got {count}", line_no + 2),
                });
            }
        }
    }
    if let Some((name, rows, cols, data)) = pending.take() {
        finish_tensor(&display, name, rows, cols, data, &mut params)?;
    }
    Ok(params)
}

fn finish_tensor(
    path: &str,
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    params: &mut Vec<Param>,
) -> Result<(), CheckpointError> {
    if data.len() != rows * cols {
        return Err(CheckpointError::Format {
            path: path.to_string(),
            detail: format!(
                "tensor `{name}` declares {rows}x{cols} but holds {} values",
                data.len()
            ),
        });
    }
    params.push(Param::new(name, (rows, cols), data));
    Ok(())
}

/// Pulls a named tensor out of a loaded checkpoint, enforcing its shape.
pub fn take_tensor(
    path: &Path,
    params: &mut Vec<Param>,
    name: &str,
    shape: (usize, usize),
) -> Result<Param, CheckpointError> {
    let idx = params.iter().position(|p| p.name == name).ok_or_else(|| {
        CheckpointError::MissingTensor {
            path: path.display().to_string(),
            name: name.to_string(),
        }
    })?;
    let p = params.remove(idx);
    if p.shape != shape {
        return Err(CheckpointError::Format {
            path: path.display().to_string(),
            detail: format!(
                "tensor `{name}` has shape {}x{}, expected {}x{}",
                p.shape.0, p.shape.1, shape.0, shape.1
            ),
        });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use std::path::PathBuf;

    fn temp_path(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!("zshot_ckpt_{tag}_{}.txt", std::process::id()))
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let mut rng = Rng::new(77);
        let a = Param::new("layer.w", (3, 4), rng.normal_vec(12, 1.37));
        let b = Param::new("layer.b", (1, 4), rng.normal_vec(4, 0.01));
        let path = temp_path("roundtrip");
        save_params(&path, &[&a, &b]).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].name, "layer.w");
        assert_eq!(loaded[0].shape, (3, 4));
        for (x, y) in a.data.iter().zip(&loaded[0].data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in b.data.iter().zip(&loaded[1].data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn take_tensor_enforces_name_and_shape() {
        let a = Param::new("w", (2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let path = temp_path("take");
        save_params(&path, &[&a]).unwrap();
        let mut loaded = load_params(&path).unwrap();
        assert!(take_tensor(&path, &mut loaded.clone(), "missing", (2, 2)).is_err());
        assert!(take_tensor(&path, &mut loaded.clone(), "w", (4, 1)).is_err());
        let got = take_tensor(&path, &mut loaded, "w", (2, 2)).unwrap();
        assert_eq!(got.data, vec![1.0, 2.0, 3.0, 4.0]);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn malformed_files_are_rejected() {
        let path = temp_path("bad");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(matches!(
            load_params(&path),
            Err(CheckpointError::Format { .. })
        ));
        std::fs::write(
            &path,
            "zshot-checkpoint v1\ntensor w 2 2\n1 2\n3\n",
        )
        .unwrap();
        assert!(matches!(
            load_params(&path),
            Err(CheckpointError::Format { .. })
        ));
        std::fs::remove_file(&path).unwrap();
    }
}
