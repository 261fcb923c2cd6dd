use std::io::Write;

use crate::error::{Error, Result};

/// Equal-width bins shared by several labelled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` sorted edges.
    pub edges: Vec<f64>,
    pub labels: Vec<String>,
    /// `counts[label][bin]`.
    pub counts: Vec<Vec<usize>>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }
}

/// Bins every labelled sample over the pooled `[min, max]` range. A
/// degenerate range is widened to `[v, v + 1]`.
pub fn histogram(samples: &[(&str, &[f64])], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let pooled = samples.iter().flat_map(|(_, s)| s.iter().copied());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in pooled {
        if !v.is_finite() {
            return Err(Error::NonFinite("histogram"));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return Err(Error::Empty("histogram"));
    }
    if lo == hi {
        hi = lo + 1.0;
    }
    let width = hi - lo;
    let edges = (0..=bins)
        .map(|k| lo + width * k as f64 / bins as f64)
        .collect();
    let counts = samples
        .iter()
        .map(|(_, s)| {
            let mut c = vec![0; bins];
            for &v in s.iter() {
                let b = (((v - lo) / width) * bins as f64).floor() as usize;
                c[b.min(bins - 1)] += 1;
            }
            c
        })
        .collect();
    Ok(Histogram {
        edges,
        labels: samples.iter().map(|(l, _)| l.to_string()).collect(),
        counts,
    })
}

/// Columns `bin_lo, bin_hi` followed by one count column per label.
pub fn write_histogram_csv<W: Write>(out: W, h: &Histogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
    header.extend(h.labels.iter().cloned());
    w.write_record(&header)?;
    for b in 0..h.bins() {
        let mut row = vec![h.edges[b].to_string(), h.edges[b + 1].to_string()];
        row.extend(h.counts.iter().map(|c| c[b].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
