use std::fmt::Write as _;

pub const CSV_HEADER: &str =
    "iter,critic_loss,gen_loss,penalty_mean,grad_norm_mean,grad_norm_min,grad_norm_max,expected_margin,w1_exact,wall_ms";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricRow {
    pub iter: usize,
    pub critic_loss: f64,
    pub gen_loss: Option<f64>,
    pub penalty_mean: f64,
    pub grad_norm_mean: f64,
    pub grad_norm_min: f64,
    pub grad_norm_max: f64,
    pub expected_margin: Option<f64>,
    pub w1_exact: Option<f64>,
    pub wall_ms: Option<f64>,
    /// `E f(real) − E f(fake)` on the batches used for `w1_exact`.
    pub heldout_ipm: Option<f64>,
}

impl MetricRow {
    pub fn is_finite(&self) -> bool {
        let opt = |v: Option<f64>| v.is_none_or(f64::is_finite);
        [
            self.critic_loss,
            self.penalty_mean,
            self.grad_norm_mean,
            self.grad_norm_min,
            self.grad_norm_max,
        ]
        .iter()
        .all(|v| v.is_finite())
            && opt(self.gen_loss)
            && opt(self.expected_margin)
            && opt(self.w1_exact)
            && opt(self.wall_ms)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<MetricRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl RunRecord {
    pub fn push(&mut self, row: MetricRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.iter < row.iter));
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    /// Metrics as CSV; absent values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{}", csv_row(r));
        }
        out
    }
}

/// Shortest round-trip decimal; negative zero prints as `0`.
fn num(v: f64) -> String {
    (v + 0.0).to_string()
}

pub fn csv_row(r: &MetricRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.iter,
        num(r.critic_loss),
        cell(r.gen_loss),
        num(r.penalty_mean),
        num(r.grad_norm_mean),
        num(r.grad_norm_min),
        num(r.grad_norm_max),
        cell(r.expected_margin),
        cell(r.w1_exact),
        cell(r.wall_ms),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut rec = RunRecord::default();
        rec.push(MetricRow {
            iter: 10,
            critic_loss: -0.5,
            penalty_mean: 0.25,
            grad_norm_mean: 1.0,
            grad_norm_min: 0.5,
            grad_norm_max: 1.5,
            w1_exact: Some(2.0),
            ..MetricRow::default()
        });
        assert_eq!(rec.to_csv(), format!("{CSV_HEADER}\n10,-0.5,,0.25,1,0.5,1.5,,2,\n"));
    }
}
