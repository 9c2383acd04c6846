//! Ablation grids and metrics files.
//!
//! Output layout for `emit_metrics(results, out)`:
//!
//! ```text
//! out/summary.csv                 one row per cell, final accuracies
//! out/cell_000/round_metrics.csv  round-indexed curves
//! out/cell_000/config.json        resolved config echo
//! ```
//!
//! Numbers are written with 6 significant digits.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::{FederationConfig, NoiseKind};
use crate::error::{Error, Result};
use crate::federation::{run_federation, with_worker_pool, ExperimentResult};

/// Which parts of the method are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Method {
    pub use_symmetric_loss: bool,
    pub use_collaboration: bool,
}

impl Method {
    pub const FULL: Method = Method {
        use_symmetric_loss: true,
        use_collaboration: true,
    };
    pub const CE_LOCAL: Method = Method {
        use_symmetric_loss: false,
        use_collaboration: false,
    };
    pub const SL_LOCAL: Method = Method {
        use_symmetric_loss: true,
        use_collaboration: false,
    };
    pub const CE_COLLAB: Method = Method {
        use_symmetric_loss: false,
        use_collaboration: true,
    };

    pub fn of(cfg: &FederationConfig) -> Method {
        Method {
            use_symmetric_loss: cfg.use_symmetric_loss,
            use_collaboration: cfg.use_collaboration,
        }
    }

    pub fn apply(self, cfg: &mut FederationConfig) {
        cfg.use_symmetric_loss = self.use_symmetric_loss;
        cfg.use_collaboration = self.use_collaboration;
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match (self.use_symmetric_loss, self.use_collaboration) {
            (true, true) => "full",
            (false, false) => "ce-local",
            (true, false) => "sl-local",
            (false, true) => "ce-collab",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Method::FULL),
            "ce-local" => Ok(Method::CE_LOCAL),
            "sl-local" => Ok(Method::SL_LOCAL),
            "ce-collab" => Ok(Method::CE_COLLAB),
            _ => Err(Error::Config(format!(
                "unknown method `{s}`; expected full, ce-local, sl-local or ce-collab"
            ))),
        }
    }
}

/// Parses a comma-separated list.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.parse()
                .map_err(|e| Error::Config(format!("bad list entry `{x}`: {e}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub index: usize,
    pub config: FederationConfig,
}

/// Expands the grid in `mu`-major, then kind, then method order.
///
/// Every cell keeps the base seed. Cells then share data splits, partitions
/// and initial weights, and differ only along the grid axes; adding a cell
/// never changes an existing one.
pub fn grid_cells(
    base: &FederationConfig,
    mus: &[f64],
    kinds: &[NoiseKind],
    methods: &[Method],
) -> Result<Vec<GridCell>> {
    if mus.is_empty() || kinds.is_empty() || methods.is_empty() {
        return Err(Error::Config("grid axes must be non-empty".into()));
    }
    let mut cells = Vec::new();
    for &mu in mus {
        for &kind in kinds {
            for &method in methods {
                let mut cfg = base.clone();
                cfg.noise_rate = mu;
                cfg.noise_kind = kind;
                method.apply(&mut cfg);
                cfg.validate()?;
                cells.push(GridCell {
                    index: cells.len(),
                    config: cfg,
                });
            }
        }
    }
    Ok(cells)
}

#[derive(Debug)]
pub struct CellOutcome {
    pub cell: GridCell,
    pub result: Result<ExperimentResult>,
}

/// Runs every cell; a failing cell is recorded and the rest still run.
pub fn run_grid(
    base: &FederationConfig,
    mus: &[f64],
    kinds: &[NoiseKind],
    methods: &[Method],
) -> Result<Vec<CellOutcome>> {
    let cells = grid_cells(base, mus, kinds, methods)?;
    Ok(with_worker_pool(|| {
        cells
            .into_par_iter()
            .map(|cell| {
                let result = run_federation(&cell.config);
                CellOutcome { cell, result }
            })
            .collect()
    }))
}

/// Formats `x` with 6 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else {
            format!("{x}")
        };
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..=9).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

fn summary_header(max_clients: usize) -> String {
    let mut cols: Vec<String> = [
        "cell",
        "noise_kind",
        "noise_rate",
        "method",
        "seed",
        "rounds",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..max_clients).map(|i| format!("client_{i}")));
    cols.push("average".into());
    cols.join(",")
}

pub fn summary_csv(results: &[ExperimentResult]) -> String {
    let p = results
        .iter()
        .map(|r| r.final_row.per_client_accuracy.len())
        .max()
        .unwrap_or(0);
    let mut out = summary_header(p);
    out.push('\n');
    for (i, r) in results.iter().enumerate() {
        let c = &r.config;
        let mut row = vec![
            i.to_string(),
            c.noise_kind.to_string(),
            fmt_sig(c.noise_rate),
            Method::of(c).to_string(),
            c.seed.to_string(),
            c.rounds.to_string(),
        ];
        for k in 0..p {
            row.push(
                r.final_row
                    .per_client_accuracy
                    .get(k)
                    .map(|&a| fmt_sig(a))
                    .unwrap_or_default(),
            );
        }
        row.push(fmt_sig(r.final_row.average_accuracy));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn round_metrics_csv(result: &ExperimentResult) -> String {
    let p = result.final_row.per_client_accuracy.len();
    let mut cols = vec!["round".to_string()];
    cols.extend((0..p).map(|i| format!("client_{i}")));
    cols.extend(
        [
            "average_accuracy",
            "mean_pairwise_kl",
            "mean_local_loss",
            "mean_alignment_loss",
        ]
        .map(String::from),
    );
    let mut out = cols.join(",");
    out.push('\n');
    for m in &result.per_round {
        let mut row = vec![m.round.to_string()];
        row.extend(m.per_client_accuracy.iter().map(|&a| fmt_sig(a)));
        row.push(fmt_sig(m.average_accuracy));
        row.push(fmt_sig(m.mean_pairwise_kl));
        row.push(fmt_sig(m.mean_local_loss));
        row.push(fmt_sig(m.mean_alignment_loss));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn emit_metrics(results: &[ExperimentResult], out_dir: impl AsRef<Path>) -> Result<()> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join("summary.csv"), &summary_csv(results))?;
    for (i, r) in results.iter().enumerate() {
        let dir = out.join(format!("cell_{i:03}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join("round_metrics.csv"), &round_metrics_csv(r))?;
        write(&dir.join("config.json"), &r.config.to_json())?;
    }
    Ok(())
}

/// A parsed CSV: header plus rows of raw fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn parse(text: &str) -> Result<Csv> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
        let (_, h) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header: Vec<String> = h.split(',').map(String::from).collect();
        let mut rows = Vec::new();
        for (i, l) in lines {
            let row: Vec<String> = l.split(',').map(String::from).collect();
            if row.len() != header.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{} fields, header has {}", row.len(), header.len()),
                });
            }
            rows.push(row);
        }
        Ok(Csv { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric value at (`row`, `name`); `None` for blanks or missing columns.
    pub fn get_f64(&self, row: usize, name: &str) -> Option<f64> {
        let c = self.column(name)?;
        self.rows.get(row)?.get(c)?.parse().ok()
    }

    pub fn to_text(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}
