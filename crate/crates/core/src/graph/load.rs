use std::fs;
use std::path::Path;

use super::{Graph, GraphError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureFormat {
    /// `.bin` files are binary, everything else CSV.
    #[default]
    Auto,
    Csv,
    Binary,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    pub feature_format: FeatureFormat,
    pub label_file: Option<std::path::PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Loads an edge list plus vertex features. The vertex count is the number
/// of feature rows.
pub fn load_graph(edge_file: &Path, feature_file: &Path, options: &LoadOptions) -> Result<Graph> {
    let features = load_features(feature_file, options.feature_format)?;
    let vertices = features.rows();
    let (edges, values) = load_edges(edge_file, vertices)?;
    let graph = Graph::new(vertices, edges, values, features)?;
    match &options.label_file {
        Some(path) => graph.with_labels(load_labels(path)?),
        None => Ok(graph),
    }
}

fn load_edges(path: &Path, vertices: usize) -> Result<(Vec<(usize, usize)>, Option<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut edges = Vec::new();
    let mut values = Vec::new();
    let mut any_value = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(path, line, "expected `src dest [value]`"));
        }
        let id = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, line, format!("`{s}` is not a vertex id")))
        };
        let (src, dest) = (id(fields[0])?, id(fields[1])?);
        if src >= vertices || dest >= vertices {
            return Err(parse_err(
                path,
                line,
                format!("edge {src} -> {dest} outside 0..{vertices}"),
            ));
        }
        let value = match fields.get(2) {
            Some(s) => {
                any_value = true;
                let v: f64 = s
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("`{s}` is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(path, line, "edge value must be finite"));
                }
                v
            }
            None => 1.0,
        };
        edges.push((src, dest));
        values.push(value);
    }
    Ok((edges, any_value.then_some(values)))
}

fn load_features(path: &Path, format: FeatureFormat) -> Result<Tensor> {
    let binary = match format {
        FeatureFormat::Binary => true,
        FeatureFormat::Csv => false,
        FeatureFormat::Auto => path.extension().is_some_and(|e| e == "bin"),
    };
    if binary {
        load_binary_features(path)
    } else {
        load_csv_features(path)
    }
}

fn load_csv_features(path: &Path) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut width = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if width.is_some_and(|w| w != record.len()) {
            return Err(parse_err(
                path,
                line,
                format!("row has {} columns, expected {}", record.len(), width.unwrap()),
            ));
        }
        width = Some(record.len());
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{field}` is not a number")))?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(Tensor::new(vec![rows, width.unwrap_or(0)], data)?)
}

fn load_binary_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 16 {
        return Err(parse_err(path, 0, "binary feature header is truncated"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[k * 8..k * 8 + 8].try_into().unwrap());
    let (rows, cols) = (word(0) as usize, word(1) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| parse_err(path, 0, "binary feature header overflows"))?;
    if bytes.len() - 16 != expected {
        return Err(parse_err(
            path,
            0,
            format!("{rows}x{cols} payload needs {expected} bytes, found {}", bytes.len() - 16),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(vec![rows, cols], data)?)
}

/// Writes features in the binary layout read by [`load_graph`].
pub fn write_binary_features(path: &Path, features: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + features.len() * 8);
    bytes.extend_from_slice(&(features.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(features.row_width() as u64).to_le_bytes());
    for v in features.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// One integer class per line; blank lines are skipped.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let content = raw.trim();
        if content.is_empty() {
            continue;
        }
        labels.push(
            content
                .parse()
                .map_err(|_| parse_err(path, idx + 1, format!("`{content}` is not a class")))?,
        );
    }
    Ok(labels)
}
