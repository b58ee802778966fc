//! Small statistics helpers for the experiment summaries.

use tsens_core::error::{Error, Result};

/// Sample Pearson correlation coefficient. Requires equal lengths of at
/// least 3 and rejects constant series, whose correlation is undefined.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(
            "pearson: series lengths differ".into(),
        ));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument(
            "pearson: need at least 3 points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument(
            "pearson: undefined correlation for a constant series".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
