//! Report records and their two renderings: an aligned table and JSON lines.

use serde::Serialize;

use crate::args::ReportFormat;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorNames {
    pub q: String,
    pub k: String,
    pub v: String,
    pub o: String,
}

/// One report line: which command, which layer, the outcome and its details.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub command: &'static str,
    pub layer: usize,
    pub status: Status,
    #[serde(flatten)]
    pub detail: Detail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Detail {
    Inspect {
        d_model: usize,
        heads: usize,
        d_v: usize,
        n_original: u64,
        tensors: TensorNames,
    },
    Compress {
        ranks: [usize; 3],
        n_original: u64,
        n_compressed: u64,
        cr: f64,
        relative_error: f64,
        fit: f64,
        iterations: usize,
        converged: bool,
    },
    Reconstruct {
        ranks: [usize; 3],
        relative_change: f64,
    },
    Verify {
        check: String,
        /// `None` when the measured value is not finite.
        value: Option<f64>,
        threshold: f64,
    },
    /// The layer could not be processed.
    Error { error: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Pass,
    Fail,
    Error,
}

impl Record {
    pub fn ok(command: &'static str, layer: usize, detail: Detail) -> Self {
        Self { command, layer, status: Status::Ok, detail }
    }

    pub fn error(command: &'static str, layer: usize, error: impl Into<String>) -> Self {
        Self { command, layer, status: Status::Error, detail: Detail::Error { error: error.into() } }
    }

    /// A verify check that passes when `value <= threshold` (so NaN fails).
    pub fn check(layer: usize, check: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            command: "verify",
            layer,
            status: if value <= threshold { Status::Pass } else { Status::Fail },
            detail: Detail::Verify {
                check: check.into(),
                value: value.is_finite().then_some(value),
                threshold,
            },
        }
    }

    fn is_error(&self) -> bool {
        matches!(self.detail, Detail::Error { .. })
    }

    fn header(&self) -> &'static [&'static str] {
        match self.detail {
            Detail::Inspect { .. } => &["layer", "d_model", "heads", "d_v", "n_original", "q", "k", "v", "o"],
            Detail::Compress { .. } => &[
                "layer", "ranks", "n_original", "n_compressed", "cr", "rel_error", "fit", "iters", "converged",
            ],
            Detail::Reconstruct { .. } => &["layer", "ranks", "rel_change"],
            Detail::Verify { .. } => &["layer", "check", "value", "threshold", "status"],
            Detail::Error { .. } => &[],
        }
    }

    fn cells(&self) -> Vec<String> {
        let ranks = |r: &[usize; 3]| format!("({},{},{})", r[0], r[1], r[2]);
        let mut row = vec![self.layer.to_string()];
        match &self.detail {
            Detail::Inspect { d_model, heads, d_v, n_original, tensors } => row.extend([
                d_model.to_string(),
                heads.to_string(),
                d_v.to_string(),
                n_original.to_string(),
                tensors.q.clone(),
                tensors.k.clone(),
                tensors.v.clone(),
                tensors.o.clone(),
            ]),
            Detail::Compress { ranks: r, n_original, n_compressed, cr, relative_error, fit, iterations, converged } => {
                row.extend([
                    ranks(r),
                    n_original.to_string(),
                    n_compressed.to_string(),
                    sig4(*cr),
                    sig4(*relative_error),
                    sig4(*fit),
                    iterations.to_string(),
                    converged.to_string(),
                ])
            }
            Detail::Reconstruct { ranks: r, relative_change } => row.extend([ranks(r), sig4(*relative_change)]),
            Detail::Verify { check, value, threshold } => row.extend([
                check.clone(),
                value.map_or_else(|| "non-finite".into(), sig4),
                sig4(*threshold),
                if self.status == Status::Pass { "PASS" } else { "FAIL" }.into(),
            ]),
            Detail::Error { .. } => {}
        }
        row
    }
}

/// Formats `x` with four significant figures.
pub fn sig4(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..4).contains(&mag) {
        let decimals = (3 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.3e}")
    }
}

/// Renders a stream of records. Error records go to stderr in table mode.
pub fn render(records: &[Record], format: ReportFormat) -> (String, String) {
    let mut out = String::new();
    let mut err = String::new();
    match format {
        ReportFormat::Jsonl => {
            for r in records {
                out.push_str(&serde_json::to_string(r).expect("plain record"));
                out.push('\n');
            }
        }
        ReportFormat::Table => {
            let rows: Vec<&Record> = records.iter().filter(|r| !r.is_error()).collect();
            if let Some(first) = rows.first() {
                let header: Vec<String> = first.header().iter().map(|s| s.to_string()).collect();
                let body: Vec<Vec<String>> = rows.iter().map(|r| r.cells()).collect();
                let mut widths: Vec<usize> = header.iter().map(String::len).collect();
                for row in &body {
                    for (w, c) in widths.iter_mut().zip(row) {
                        *w = (*w).max(c.len());
                    }
                }
                for row in std::iter::once(&header).chain(&body) {
                    let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                    out.push_str(line.join("  ").trim_end());
                    out.push('\n');
                }
            }
            for r in records {
                if let Detail::Error { error } = &r.detail {
                    err.push_str(&format!("error: {} layer {}: {error}\n", r.command, r.layer));
                }
            }
        }
    }
    (out, err)
}
