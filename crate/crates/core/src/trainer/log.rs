/// One router-row update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    /// Trajectory index for SDT, update index for the LTC paradigm.
    pub iter: usize,
    pub t: usize,
    pub l_mse: f64,
    pub lambda: f64,
    pub reg: f64,
    /// Router CUR after the update.
    pub cur: f64,
}

pub const LOG_HEADER: &str = "iter,t,l_mse,lambda,reg,cur\n";

impl LogRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{}\n",
            self.iter, self.t, self.l_mse, self.lambda, self.reg, self.cur
        )
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    for r in rows {
        out.push_str(&r.csv_line());
    }
    out
}
