use std::io::{Read, Write};

use orbe_core::experiment::BenchResultRow;

pub const HEADER: [&str; 9] = [
    "size",
    "nu",
    "seed",
    "time_rvi_s",
    "be_rvi_pct",
    "time_bestcase_s",
    "be_bestcase_pct",
    "time_deriv_s",
    "be_deriv_pct",
];

/// Writes the rows; the `error` column appears only if some row failed.
pub fn write_rows<W: Write>(out: W, rows: &[BenchResultRow]) -> csv::Result<()> {
    let with_error = rows.iter().any(|r| r.error.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = HEADER.to_vec();
    if with_error {
        header.push("error");
    }
    w.write_record(&header)?;
    for r in rows {
        // Display for f64 is the shortest string that parses back exactly.
        let mut rec = vec![
            r.size.to_string(),
            r.nu.to_string(),
            r.seed.to_string(),
            r.time_rvi_s.to_string(),
            r.be_rvi_pct.to_string(),
            r.time_bestcase_s.to_string(),
            r.be_bestcase_pct.to_string(),
            r.time_deriv_s.to_string(),
            r.be_deriv_pct.to_string(),
        ];
        if with_error {
            rec.push(r.error.clone().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> csv::Result<Vec<BenchResultRow>> {
    let mut rd = csv::Reader::from_reader(input);
    rd.deserialize::<BenchResultRow>()
        .map(|r| {
            r.map(|mut row| {
                if row.error.as_deref() == Some("") {
                    row.error = None;
                }
                row
            })
        })
        .collect()
}

/// Means of one (size, nu) cell over its successful runs.
#[derive(Clone, Debug, PartialEq)]
pub struct CellMeans {
    pub size: usize,
    pub nu: f64,
    pub runs: usize,
    pub failed: usize,
    pub time_rvi_s: f64,
    pub be_rvi_pct: f64,
    pub time_bestcase_s: f64,
    pub be_bestcase_pct: f64,
    pub time_deriv_s: f64,
    pub be_deriv_pct: f64,
}

impl CellMeans {
    /// Total best-case pipeline time over total plain time.
    pub fn bestcase_ratio(&self) -> f64 {
        self.time_bestcase_s / self.time_rvi_s
    }

    pub fn deriv_ratio(&self) -> f64 {
        self.time_deriv_s / self.time_rvi_s
    }
}

/// Per-(size, nu) means, in first-appearance order.
pub fn cell_means(rows: &[BenchResultRow]) -> Vec<CellMeans> {
    let mut keys: Vec<(usize, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(s, n)| s == r.size && n == r.nu) {
            keys.push((r.size, r.nu));
        }
    }
    keys.into_iter()
        .map(|(size, nu)| {
            let cell: Vec<&BenchResultRow> = rows.iter().filter(|r| r.size == size && r.nu == nu).collect();
            let ok: Vec<&&BenchResultRow> = cell.iter().filter(|r| r.error.is_none()).collect();
            let mean = |f: fn(&BenchResultRow) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            CellMeans {
                size,
                nu,
                runs: ok.len(),
                failed: cell.len() - ok.len(),
                time_rvi_s: mean(|r| r.time_rvi_s),
                be_rvi_pct: mean(|r| r.be_rvi_pct),
                time_bestcase_s: mean(|r| r.time_bestcase_s),
                be_bestcase_pct: mean(|r| r.be_bestcase_pct),
                time_deriv_s: mean(|r| r.time_deriv_s),
                be_deriv_pct: mean(|r| r.be_deriv_pct),
            }
        })
        .collect()
}
