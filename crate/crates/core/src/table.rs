//! Plain CSV emission: header row, `.` decimal separator, `\n` line endings.
//!
//! Floats are written with the shortest representation that round-trips;
//! plain notation in `[1e-5, 1e16)`, exponent notation elsewhere.

use std::fmt::Write as _;

pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone)]
pub struct Csv {
    buf: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Csv { buf, width: header.len() }
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.width);
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            self.buf.push_str(&fmt_f64(*v));
        }
        self.buf.push('\n');
    }

    /// Row whose first column is an integer index.
    pub fn indexed_row(&mut self, index: usize, values: &[f64]) {
        debug_assert_eq!(values.len() + 1, self.width);
        let _ = write!(self.buf, "{index}");
        for v in values {
            self.buf.push(',');
            self.buf.push_str(&fmt_f64(*v));
        }
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// Parse a CSV produced by [`Csv`] back into its header and float rows.
pub fn parse(text: &str) -> Option<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines.next()?.split(',').map(str::to_owned).collect::<Vec<_>>();
    let mut rows = Vec::new();
    for line in lines {
        let row = line.split(',').map(|s| s.parse::<f64>().ok()).collect::<Option<Vec<_>>>()?;
        if row.len() != header.len() {
            return None;
        }
        rows.push(row);
    }
    Some((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let mut c = Csv::new(&["index", "E"]);
        c.indexed_row(0, &[-2.0]);
        c.indexed_row(1, &[1e-300]);
        assert_eq!(c.finish(), "index,E\n0,-2\n1,1e-300\n");
    }

    proptest! {
        #[test]
        fn floats_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
