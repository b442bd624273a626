//! Bjøntegaard-delta rate between two rate-distortion curves.
//!
//! Each curve is fitted with a least-squares cubic `ln(rate) = p(psnr)`
//! (interpolating when the curve has exactly four points); the fitted
//! polynomials are integrated analytically over the common PSNR interval.

use std::fmt::Write as _;

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub rate: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    pub label: String,
    pub points: Vec<RdPoint>,
}

/// Cubic fitted in a normalized abscissa `t = (psnr - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicFit {
    /// Coefficients of `t^0 .. t^3`.
    pub coef: [f64; 4],
    pub center: f64,
    pub scale: f64,
}

impl CubicFit {
    pub fn eval(&self, psnr: f64) -> f64 {
        let t = (psnr - self.center) / self.scale;
        self.coef.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    /// Exact integral of the fitted polynomial over `[lo, hi]` (in psnr).
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let prim = |psnr: f64| {
            let t = (psnr - self.center) / self.scale;
            self.coef
                .iter()
                .enumerate()
                .map(|(k, c)| c * t.powi(k as i32 + 1) / (k as f64 + 1.0))
                .sum::<f64>()
        };
        self.scale * (prim(hi) - prim(lo))
    }
}

/// Least-squares polynomial of degree 3 through `(xs, ys)`.
pub fn fit_cubic(xs: &[f64], ys: &[f64]) -> Result<CubicFit, EvalError> {
    if xs.len() != ys.len() || xs.len() < 4 {
        return Err(EvalError::Curve(format!("cubic fit needs >= 4 points, got {}", xs.len())));
    }
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (lo + hi);
    let scale = (0.5 * (hi - lo)).max(1e-12);
    // Normal equations in the normalized variable (t in [-1, 1]).
    let mut a = [[0.0f64; 5]; 4];
    for (&x, &y) in xs.iter().zip(ys) {
        let t = (x - center) / scale;
        let pows = [1.0, t, t * t, t * t * t];
        for i in 0..4 {
            for j in 0..4 {
                a[i][j] += pows[i] * pows[j];
            }
            a[i][4] += pows[i] * y;
        }
    }
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[piv][col].abs() < 1e-12 {
            return Err(EvalError::Curve("degenerate PSNR values (repeated points)".into()));
        }
        a.swap(col, piv);
        for row in 0..4 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..5 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let coef = [a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]];
    Ok(CubicFit { coef, center, scale })
}

impl RdCurve {
    pub fn new(label: impl Into<String>, points: Vec<RdPoint>) -> Self {
        RdCurve {
            label: label.into(),
            points,
        }
    }

    /// Points sorted by rate after checking the curve is usable: at least
    /// four finite points, positive rates, PSNR strictly increasing with rate.
    pub fn validated(&self) -> Result<Vec<RdPoint>, EvalError> {
        if self.points.len() < 4 {
            return Err(EvalError::Curve(format!(
                "curve {:?} has {} points, need at least 4",
                self.label,
                self.points.len()
            )));
        }
        if let Some(p) = self.points.iter().find(|p| !p.rate.is_finite() || !p.psnr.is_finite() || p.rate <= 0.0) {
            return Err(EvalError::Curve(format!(
                "curve {:?} has an invalid point (rate {}, psnr {})",
                self.label, p.rate, p.psnr
            )));
        }
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        if pts.windows(2).any(|w| w[1].psnr <= w[0].psnr || w[1].rate == w[0].rate) {
            return Err(EvalError::Curve(format!(
                "curve {:?} is not monotone (psnr must rise strictly with rate)",
                self.label
            )));
        }
        Ok(pts)
    }

    /// Cubic fit of `ln(rate)` against PSNR.
    pub fn fit(&self) -> Result<CubicFit, EvalError> {
        let pts = self.validated()?;
        let xs: Vec<f64> = pts.iter().map(|p| p.psnr).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.rate.ln()).collect();
        fit_cubic(&xs, &ys)
    }

    pub fn psnr_range(&self) -> (f64, f64) {
        let lo = self.points.iter().map(|p| p.psnr).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|p| p.psnr).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// `rate,psnr` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rate,psnr\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{}", p.rate, p.psnr);
        }
        s
    }

    pub fn from_csv(label: impl Into<String>, text: &str) -> Result<Self, EvalError> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.chars().any(|c| c.is_ascii_alphabetic())) {
                continue;
            }
            let mut f = line.split(',').map(str::trim);
            let parse = |s: Option<&str>| s.and_then(|s| s.parse::<f64>().ok());
            match (parse(f.next()), parse(f.next()), f.next()) {
                (Some(rate), Some(psnr), None) => points.push(RdPoint { rate, psnr }),
                _ => return Err(EvalError::Parse(format!("line {}: expected `rate,psnr`, got {line:?}", i + 1))),
            }
        }
        Ok(RdCurve::new(label, points))
    }
}

/// Overlapping PSNR interval of two curves.
pub fn common_interval(anchor: &RdCurve, test: &RdCurve) -> Result<(f64, f64), EvalError> {
    let (a_lo, a_hi) = anchor.psnr_range();
    let (t_lo, t_hi) = test.psnr_range();
    let (lo, hi) = (a_lo.max(t_lo), a_hi.min(t_hi));
    if hi <= lo {
        return Err(EvalError::NoOverlap { lo, hi });
    }
    Ok((lo, hi))
}

/// Mean of `ln(rate_test) - ln(rate_anchor)` over the common PSNR interval.
pub fn bd_log_offset(anchor: &RdCurve, test: &RdCurve) -> Result<f64, EvalError> {
    let fa = anchor.fit()?;
    let ft = test.fit()?;
    let (lo, hi) = common_interval(anchor, test)?;
    Ok((ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo))
}

/// BD-rate in percent; negative values are bitrate savings of `test`.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64, EvalError> {
    Ok((bd_log_offset(anchor, test)?.exp() - 1.0) * 100.0)
}
