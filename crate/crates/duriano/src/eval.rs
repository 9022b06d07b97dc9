//! Objective evaluation of synthesized singing: pairwise Pearson
//! correlation of pitch contours and mean-normalized Gaussian fits of the
//! pitch distribution. Contours use 0.0 for unvoiced frames; only frames
//! voiced in both systems enter a correlation, and contours of different
//! lengths are resampled to the shorter one first.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("contours differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} {what}, got {got}")]
    TooFew {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("degenerate contour: zero variance")]
    DegenerateContour,
    #[error("no voiced frames")]
    NoVoicedFrames,
    #[error("voiced mean must be positive, got {0}")]
    NonPositiveMean(f64),
}

/// Sample Pearson correlation over frames voiced in both contours.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y.iter())
        .filter(|(&a, &b)| a > 0.0 && b > 0.0)
        .map(|(&a, &b)| (a, b))
        .collect();
    if pairs.len() < 2 {
        return Err(EvalError::TooFew {
            what: "mutually voiced frames",
            need: 2,
            got: pairs.len(),
        });
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in &pairs {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateContour);
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Resample a contour to `target_length`: linear interpolation where both
/// bracketing frames are voiced, nearest assignment otherwise, and 0 when
/// the nearest frame is unvoiced.
pub fn resample_contour(x: &[f64], target_length: usize) -> Vec<f64> {
    assert!(target_length >= 2, "target_length must be >= 2");
    let n = x.len();
    if n == 0 {
        return vec![0.0; target_length];
    }
    if n == 1 {
        return vec![x[0]; target_length];
    }
    let mut out = Vec::with_capacity(target_length);
    let scale = (n - 1) as f64 / (target_length - 1) as f64;
    for t in 0..target_length {
        let pos = (t as f64 * scale).clamp(0.0, (n - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (pos.ceil() as usize).min(n - 1);
        let frac = pos - lo as f64;
        let nearest = if frac < 0.5 { lo } else { hi };
        let v = if x[nearest] <= 0.0 {
            0.0
        } else if x[lo] > 0.0 && x[hi] > 0.0 {
            x[lo] * (1.0 - frac) + x[hi] * frac
        } else {
            x[nearest]
        };
        out.push(v);
    }
    out
}

/// Divide the voiced frames by their mean; unvoiced frames are dropped
/// from the returned sample set.
pub fn normalize_mean_one(x: &[f64]) -> Result<Vec<f64>, EvalError> {
    let voiced: Vec<f64> = x.iter().copied().filter(|&v| v > 0.0).collect();
    if voiced.is_empty() {
        return Err(EvalError::NoVoicedFrames);
    }
    let mean = voiced.iter().sum::<f64>() / voiced.len() as f64;
    if mean <= 0.0 {
        return Err(EvalError::NonPositiveMean(mean));
    }
    Ok(voiced.into_iter().map(|v| v / mean).collect())
}

/// Maximum-likelihood Gaussian parameters (single component).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma: f64,
}

pub fn fit_gaussian(samples: &[f64]) -> Result<GaussianFit, EvalError> {
    if samples.len() < 2 {
        return Err(EvalError::TooFew {
            what: "samples",
            need: 2,
            got: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    Ok(GaussianFit {
        mu,
        sigma: var.sqrt(),
    })
}

/// Labeled pitch contours to compare, e.g. original vs. score-driven vs.
/// f0-driven synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourSet {
    pub labels: Vec<String>,
    pub contours: Vec<Vec<f64>>,
}

impl ContourSet {
    pub fn new() -> Self {
        ContourSet {
            labels: Vec::new(),
            contours: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, contour: Vec<f64>) {
        self.labels.push(label.into());
        self.contours.push(contour);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Default for ContourSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Symmetric correlation matrix with unit diagonal plus one Gaussian fit
/// per system.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub fits: Vec<GaussianFit>,
}

#[allow(clippy::needless_range_loop)]
pub fn eval_report(set: &ContourSet) -> Result<EvalReport, EvalError> {
    let n = set.len();
    if n < 2 {
        return Err(EvalError::TooFew {
            what: "systems",
            need: 2,
            got: n,
        });
    }
    let mut matrix = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let len = set.contours[i].len().min(set.contours[j].len()).max(2);
            let a = resample_contour(&set.contours[i], len);
            let b = resample_contour(&set.contours[j], len);
            let r = pearson(&a, &b)?;
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    let mut fits = Vec::with_capacity(n);
    for contour in &set.contours {
        fits.push(fit_gaussian(&normalize_mean_one(contour)?)?);
    }
    Ok(EvalReport {
        labels: set.labels.clone(),
        matrix,
        fits,
    })
}

/// Two tab-separated blocks: the correlation matrix (with header row and
/// labeled rows), a blank line, then `system<TAB>mu<TAB>sigma` rows.
pub fn report_to_tsv(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("\t{}\n", report.labels.join("\t")));
    for (i, label) in report.labels.iter().enumerate() {
        out.push_str(label);
        for v in &report.matrix[i] {
            out.push_str(&format!("\t{v:.4}"));
        }
        out.push('\n');
    }
    out.push('\n');
    for (label, fit) in report.labels.iter().zip(report.fits.iter()) {
        out.push_str(&format!("{label}\t{:.4}\t{:.4}\n", fit.mu, fit.sigma));
    }
    out
}
