//! Rate-distortion curves and Bjøntegaard delta metrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `(bpp, quality)` points with strictly increasing, positive bpp.
#[derive(Clone, Debug, PartialEq)]
pub struct RDCurve {
    points: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct CsvPoint {
    bpp: f64,
    quality: f64,
}

impl RDCurve {
    /// Sorts by bpp. Fewer than three points is a valid curve, but BD
    /// metrics refuse it.
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("RD curve needs at least one point".into()));
        }
        if points.iter().any(|&(r, q)| !(r.is_finite() && q.is_finite() && r > 0.0)) {
            return Err(Error::Domain("RD points need finite quality and positive finite bpp".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Domain("RD curve bpp values must be distinct".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with header `bpp,quality`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for &(bpp, quality) in &self.points {
            w.serialize(CsvPoint { bpp, quality }).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let pts = r
            .deserialize::<CsvPoint>()
            .map(|p| p.map(|p| (p.bpp, p.quality)).map_err(csv_err))
            .collect::<Result<Vec<_>>>()?;
        Self::new(pts)
    }

    fn need_fit(&self) -> Result<()> {
        if self.points.len() < 3 {
            return Err(Error::Domain(format!("BD metrics need at least 3 points, curve has {}", self.points.len())));
        }
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Least-squares polynomial coefficients (constant term first).
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = x.len();
    let m = DMatrix::from_fn(n, degree + 1, |i, j| x[i].powi(j as i32));
    let svd = m.svd(true, true);
    let c = svd
        .solve(&DVector::from_column_slice(y), 1e-12)
        .map_err(|e| Error::NumericFailure { iteration: 0, reason: e.to_string() })?;
    Ok(c.iter().copied().collect())
}

/// Integral of the polynomial over `[a, b]`.
pub fn poly_integral(c: &[f64], a: f64, b: f64) -> f64 {
    let prim = |x: f64| c.iter().enumerate().map(|(k, ck)| ck * x.powi(k as i32 + 1) / (k + 1) as f64).sum::<f64>();
    prim(b) - prim(a)
}

fn span(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Mean vertical gap `test - anchor` between fits of `y(x)` over the common
/// `x` interval.
fn mean_gap(ax: &[f64], ay: &[f64], tx: &[f64], ty: &[f64]) -> Result<f64> {
    let deg = |n: usize| 3.min(n - 1);
    let ca = polyfit(ax, ay, deg(ax.len()))?;
    let ct = polyfit(tx, ty, deg(tx.len()))?;
    let (alo, ahi) = span(ax);
    let (tlo, thi) = span(tx);
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if !(hi > lo) {
        return Err(Error::UndefinedOverlap(format!("[{alo}, {ahi}] and [{tlo}, {thi}] do not overlap")));
    }
    Ok((poly_integral(&ct, lo, hi) - poly_integral(&ca, lo, hi)) / (hi - lo))
}

fn split(c: &RDCurve) -> (Vec<f64>, Vec<f64>) {
    c.points.iter().map(|&(r, q)| (r.log10(), q)).unzip()
}

/// Average bitrate change of `test` against `anchor` at equal quality, in
/// percent; negative means `test` needs fewer bits.
pub fn bd_rate(anchor: &RDCurve, test: &RDCurve) -> Result<f64> {
    anchor.need_fit()?;
    test.need_fit()?;
    let (ar, aq) = split(anchor);
    let (tr, tq) = split(test);
    let gap = mean_gap(&aq, &ar, &tq, &tr)?;
    Ok((10f64.powf(gap) - 1.0) * 100.0)
}

/// Average quality change of `test` against `anchor` at equal bitrate.
pub fn bd_psnr(anchor: &RDCurve, test: &RDCurve) -> Result<f64> {
    anchor.need_fit()?;
    test.need_fit()?;
    let (ar, aq) = split(anchor);
    let (tr, tq) = split(test);
    mean_gap(&ar, &aq, &tr, &tq)
}

/// Common interval as a fraction of the narrower curve's span, on the
/// quality axis (`rate_axis = false`) or the log-rate axis.
pub fn overlap_fraction(a: &RDCurve, b: &RDCurve, rate_axis: bool) -> f64 {
    let pick = |c: &RDCurve| -> Vec<f64> {
        c.points.iter().map(|&(r, q)| if rate_axis { r.log10() } else { q }).collect()
    };
    let ((alo, ahi), (blo, bhi)) = (span(&pick(a)), span(&pick(b)));
    let common = (ahi.min(bhi) - alo.max(blo)).max(0.0);
    let narrow = (ahi - alo).min(bhi - blo);
    if narrow > 0.0 {
        common / narrow
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(pts: &[(f64, f64)]) -> RDCurve {
        RDCurve::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn curve_invariants() {
        assert!(RDCurve::new(vec![]).is_err());
        assert!(RDCurve::new(vec![(0.0, 1.0)]).is_err());
        assert!(RDCurve::new(vec![(1.0, f64::NAN)]).is_err());
        assert!(RDCurve::new(vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
        let c = curve(&[(2.0, 30.0), (1.0, 25.0)]);
        assert_eq!(c.points()[0], (1.0, 25.0));
        assert!(matches!(bd_rate(&c, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn identical_and_doubled() {
        let a = curve(&[(0.1, 20.0), (0.2, 24.0), (0.4, 27.0), (0.8, 29.0)]);
        assert_eq!(bd_rate(&a, &a).unwrap(), 0.0);
        assert_eq!(bd_psnr(&a, &a).unwrap(), 0.0);
        let b = curve(&a.points().iter().map(|&(r, q)| (2.0 * r, q)).collect::<Vec<_>>());
        assert!((bd_rate(&a, &b).unwrap() - 100.0).abs() < 1e-6);
        assert!((bd_rate(&b, &a).unwrap() + 50.0).abs() < 1e-6);
    }

    #[test]
    fn disjoint_curves() {
        let a = curve(&[(0.1, 20.0), (0.2, 21.0), (0.3, 22.0)]);
        let b = curve(&[(1.0, 30.0), (2.0, 31.0), (3.0, 32.0)]);
        assert!(matches!(bd_rate(&a, &b), Err(Error::UndefinedOverlap(_))));
        assert!(matches!(bd_psnr(&a, &b), Err(Error::UndefinedOverlap(_))));
        assert_eq!(overlap_fraction(&a, &b, true), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let a = curve(&[(0.123456789, 20.1), (0.2, 24.000000001), (1.0 / 3.0, 27.0)]);
        assert_eq!(RDCurve::from_csv(&a.to_csv().unwrap()).unwrap(), a);
    }

    #[test]
    fn polyfit_recovers_cubic() {
        let x: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 2.0 * v + 0.5 * v * v * v).collect();
        let c = polyfit(&x, &y, 3).unwrap();
        for (got, want) in c.iter().zip([1.0, -2.0, 0.0, 0.5]) {
            assert!((got - want).abs() < 1e-9);
        }
        assert!((poly_integral(&c, 0.0, 2.0) - (2.0 - 4.0 + 2.0)).abs() < 1e-9);
    }
}
