//! Special functions and structured-determinant kernels.
//!
//! Everything here is a pure function of its inputs. The determinant
//! ratios (`y_ratio`, `delta_ratios`, `cofactor_d`) are the building
//! blocks of the closed-form SE expressions; they are evaluated through
//! a divided-difference reduction followed by a column-pivoted LU
//! factorization carried in log-magnitude + sign form, with an
//! arbitrary-precision fallback for near-degenerate spectra.

pub(crate) mod extended;

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum SpecfunError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Repeated (or numerically tied) eigenvalues; every determinant ratio
    /// becomes 0/0. Callers may perturb and retry.
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
}

pub type Result<T> = std::result::Result<T, SpecfunError>;

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

// ---------------------------------------------------------------------------
// digamma
// ---------------------------------------------------------------------------

/// Coefficients B_{2k}/(2k) of the asymptotic expansion
/// psi(x) ~ ln x - 1/(2x) - sum_k B_{2k}/(2k x^{2k}).
const DIGAMMA_ASYMP: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// Digamma function psi(x) for x > 0.
///
/// Recurrence-shifts the argument above 12, then applies the Bernoulli
/// asymptotic series; absolute error stays below 1e-12 on [1e-3, 1e6].
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(SpecfunError::Domain(format!(
            "digamma requires x > 0, got {x}"
        )));
    }
    let mut result = 0.0;
    let mut z = x;
    while z < 12.0 {
        result -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    let mut term = inv2;
    let mut tail = 0.0;
    for c in DIGAMMA_ASYMP {
        tail += c * term;
        term *= inv2;
    }
    Ok(result + z.ln() - 0.5 / z - tail)
}

// ---------------------------------------------------------------------------
// exponential integral
// ---------------------------------------------------------------------------

/// E_n(x) = integral over t in [1, inf) of e^{-xt} t^{-n} dt.
///
/// E_1 uses a power series for x <= 1 and a modified-Lentz continued
/// fraction above; higher orders come from the continued fraction directly
/// (x > 1) or the upward recurrence E_{n+1} = (e^{-x} - x E_n)/n (x <= 1).
/// Relative error <= 1e-10 over the supported domain.
pub fn exp_integral(n: u32, x: f64) -> Result<f64> {
    Ok(scaled_exp_integral(n, x)? * (-x).exp())
}

/// e^x * E_n(x), the exponentially scaled form.
///
/// This is the quantity the exact MMSE expression needs: E_n(x) underflows
/// for large x while the product stays O(1/x).
pub fn scaled_exp_integral(n: u32, x: f64) -> Result<f64> {
    if n < 1 {
        return Err(SpecfunError::InvalidArgument(
            "exponential integral order must be >= 1".into(),
        ));
    }
    if !x.is_finite() || x < 0.0 || (x == 0.0 && n == 1) {
        return Err(SpecfunError::Domain(format!(
            "E_{n}({x}) is divergent or undefined"
        )));
    }
    if x == 0.0 {
        return Ok(1.0 / f64::from(n - 1));
    }
    if x > 1.0 {
        // Continued fraction evaluated for the requested order directly;
        // the upward recurrence amplifies cancellation when x >> n.
        return Ok(expint_cont_frac(n, x));
    }
    // Series for E_1, then scale and recurse upward.
    let e1 = -EULER_GAMMA - x.ln() + {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            let kf = f64::from(k);
            term *= -x / kf;
            let contrib = -term / kf;
            sum += contrib;
            if contrib.abs() < 1e-18 * sum.abs().max(1.0) {
                break;
            }
        }
        sum
    };
    let mut f = e1 * x.exp();
    for m in 1..n {
        f = (1.0 - x * f) / f64::from(m);
    }
    Ok(f)
}

/// Modified Lentz continued fraction for e^x E_n(x), valid for x > 1.
fn expint_cont_frac(n: u32, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let nf = f64::from(n);
    let mut b = x + nf;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..400 {
        let a = -f64::from(i) * (nf - 1.0 + f64::from(i));
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// ln(n!) as an exact-in-spirit log-domain factorial. The closed forms only
/// ever need the gamma function at positive integers, so a general gamma
/// implementation is not carried.
pub fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

// ---------------------------------------------------------------------------
// eigenvalue spectrum
// ---------------------------------------------------------------------------

/// Strictly ascending, strictly positive eigenvalues of a steering Gram
/// matrix, with the conditioning metadata the determinant ratios need.
#[derive(Debug, Clone)]
pub struct EigenSpectrum {
    betas: Vec<f64>,
    log_vandermonde: f64,
    min_rel_gap: f64,
    min_neighbor_gap: f64,
}

/// Relative gap under which the spectrum is flagged as ill-conditioned.
pub const CONDITIONING_GAP: f64 = 1e-8;

/// Neighbor-relative gap under which the divided-difference path loses the
/// log column to cancellation; evaluation switches to extended precision.
const EXTENDED_GAP: f64 = 1e-6;

impl EigenSpectrum {
    /// Builds a spectrum from ascending positive eigenvalues.
    ///
    /// Rejects non-positive entries (no limiting convention is assumed for
    /// rank-deficient Gram matrices) and ties, which make every ratio 0/0.
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(SpecfunError::InvalidArgument("empty spectrum".into()));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !b.is_finite() || b <= 0.0 {
                return Err(SpecfunError::Domain(format!(
                    "eigenvalue {i} = {b}; spectrum must be strictly positive"
                )));
            }
            if i > 0 && b <= betas[i - 1] {
                return Err(SpecfunError::DegenerateSpectrum(format!(
                    "eigenvalues {i_prev} and {i} are not strictly ascending ({a} vs {b})",
                    i_prev = i - 1,
                    a = betas[i - 1],
                )));
            }
        }
        let top = *betas.last().expect("nonempty");
        let mut log_v = 0.0;
        for j in 1..betas.len() {
            for i in 0..j {
                log_v += (betas[j] - betas[i]).ln();
            }
        }
        let mut min_rel_gap = f64::INFINITY;
        let mut min_neighbor_gap = f64::INFINITY;
        for w in betas.windows(2) {
            min_rel_gap = min_rel_gap.min((w[1] - w[0]) / top);
            min_neighbor_gap = min_neighbor_gap.min((w[1] - w[0]) / w[1]);
        }
        if betas.len() == 1 {
            min_rel_gap = 1.0;
            min_neighbor_gap = 1.0;
        }
        Ok(Self {
            betas,
            log_vandermonde: log_v,
            min_rel_gap,
            min_neighbor_gap,
        })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Number of eigenvalues (the direction count P).
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// prod_{i<j} (beta_j - beta_i); positive for an ascending spectrum.
    /// Overflows to +inf for widely spread spectra; prefer the log form.
    pub fn vandermonde(&self) -> f64 {
        self.log_vandermonde.exp()
    }

    pub fn log_vandermonde(&self) -> f64 {
        self.log_vandermonde
    }

    /// min_{i<j} (beta_j - beta_i) / beta_P.
    pub fn min_rel_gap(&self) -> f64 {
        self.min_rel_gap
    }

    /// True when the minimum relative gap falls below 1e-8; downstream
    /// determinant ratios then run their extended-precision fallback.
    pub fn is_ill_conditioned(&self) -> bool {
        self.min_rel_gap < CONDITIONING_GAP
    }

    pub(crate) fn needs_extended(&self) -> bool {
        self.is_ill_conditioned() || self.min_neighbor_gap < EXTENDED_GAP
    }
}

// ---------------------------------------------------------------------------
// determinant ratios via divided differences
// ---------------------------------------------------------------------------

/// Table of complete homogeneous symmetric polynomials:
/// `h[m][p]` = h_m(beta_1..beta_p). Every entry is a sum of products of
/// positive numbers, so the table is cancellation-free.
fn homogeneous_table(betas: &[f64], max_deg: usize) -> Vec<Vec<f64>> {
    let p_max = betas.len();
    let mut h = vec![vec![0.0; p_max + 1]; max_deg + 1];
    for entry in &mut h[0] {
        *entry = 1.0;
    }
    for m in 1..=max_deg {
        for p in 1..=p_max {
            let prev = h[m][p - 1];
            h[m][p] = prev + betas[p - 1] * h[m - 1][p];
        }
        h[m][0] = 0.0;
    }
    h
}

/// Newton divided differences of `vals` on the nodes: returns
/// dd[p] = [beta_1..beta_{p+1}] f for p = 0..P-1.
fn divided_differences(betas: &[f64], vals: &[f64]) -> Vec<f64> {
    let n = betas.len();
    let mut work = vals.to_vec();
    let mut out = Vec::with_capacity(n);
    out.push(work[0]);
    for level in 1..n {
        for i in 0..n - level {
            work[i] = (work[i + 1] - work[i]) / (betas[i + level] - betas[i]);
        }
        out.push(work[0]);
    }
    out
}

/// Determinant of a square matrix by LU with column-wise pivot selection,
/// accumulated as (sign, ln|det|).
fn logdet_lu(mut a: Vec<Vec<f64>>) -> (f64, f64) {
    let n = a.len();
    let mut sign = 1.0;
    let mut logabs = 0.0;
    for c in 0..n {
        let mut piv = c;
        for r in c + 1..n {
            if a[r][c].abs() > a[piv][c].abs() {
                piv = r;
            }
        }
        if a[piv][c] == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        if piv != c {
            a.swap(piv, c);
            sign = -sign;
        }
        let pivot = a[c][c];
        sign *= pivot.signum();
        logabs += pivot.abs().ln();
        for r in c + 1..n {
            let factor = a[r][c] / pivot;
            for k in c..n {
                a[r][k] -= factor * a[c][k];
            }
        }
    }
    (sign, logabs)
}

/// |Y_n| / prod_{i<j}(beta_j - beta_i), where Y_n is the Vandermonde matrix
/// with column n (1-based) replaced by beta_p^{n-1} ln beta_p.
///
/// The matrix is first reduced row-wise to divided differences, which
/// cancels the Vandermonde factor analytically: polynomial columns become
/// complete homogeneous symmetric polynomials and only the log column is
/// differenced numerically.
pub fn y_ratio(spectrum: &EigenSpectrum, n: usize) -> Result<f64> {
    let p = spectrum.len();
    if n < 1 || n > p {
        return Err(SpecfunError::InvalidArgument(format!(
            "column index {n} outside 1..={p}"
        )));
    }
    if spectrum.needs_extended() {
        return extended::y_ratio_ext(spectrum.betas(), n);
    }
    let v = y_ratio_dd(spectrum.betas(), n);
    if v.is_finite() {
        Ok(v)
    } else {
        extended::y_ratio_ext(spectrum.betas(), n)
    }
}

fn y_ratio_dd(betas: &[f64], n: usize) -> f64 {
    let p = betas.len();
    let h = homogeneous_table(betas, p);
    let g: Vec<f64> = betas
        .iter()
        .map(|&b| b.powi(n as i32 - 1) * b.ln())
        .collect();
    let dd = divided_differences(betas, &g);
    let mut m = vec![vec![0.0; p]; p];
    for (row, mrow) in m.iter_mut().enumerate() {
        for (col, entry) in mrow.iter_mut().enumerate() {
            *entry = if col + 1 == n {
                dd[row]
            } else if col >= row {
                h[col - row][row + 1]
            } else {
                0.0
            };
        }
    }
    let (sign, logabs) = logdet_lu(m);
    sign * logabs.exp()
}

/// The pair (E{|W_K|}, E{|W_{K-1}|}) for the unit-fading semi-correlated
/// Wishart W_m = H_m^H diag(beta) H_m, expressed as the determinant ratios
/// |Delta_1| / (prod Gamma(K-i+1) V) and |Delta_2| / (prod Gamma(K-i) V).
///
/// For K = 1 the second ratio is 1 by the empty-determinant convention
/// (it falls out of the reduction as the determinant of a unit triangular
/// matrix, so no special casing is applied).
pub fn delta_ratios(spectrum: &EigenSpectrum, k: usize) -> Result<(f64, f64)> {
    let p = spectrum.len();
    if k < 1 || k > p {
        return Err(SpecfunError::InvalidArgument(format!(
            "user count {k} outside 1..={p}"
        )));
    }
    if spectrum.needs_extended() {
        return extended::delta_ratios_ext(spectrum.betas(), k);
    }
    let (d1, d2) = delta_ratios_dd(spectrum.betas(), k);
    if d1.is_finite() && d2.is_finite() {
        Ok((d1, d2))
    } else {
        extended::delta_ratios_ext(spectrum.betas(), k)
    }
}

fn delta_ratios_dd(betas: &[f64], k: usize) -> (f64, f64) {
    let p = betas.len();
    let h = homogeneous_table(betas, p + 1);
    // Gamma factors are pulled out of the columns and re-applied in the
    // log domain, together with the denominator factorials.
    let build = |split: usize| -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; p]; p];
        for (row, mrow) in m.iter_mut().enumerate() {
            for (col, entry) in mrow.iter_mut().enumerate() {
                let q = col + 1;
                let deg = if q <= split { q - 1 } else { q };
                *entry = if deg >= row {
                    h[deg - row][row + 1]
                } else {
                    0.0
                };
            }
        }
        m
    };
    let (s1, la1) = logdet_lu(build(p - k));
    let (s2, la2) = logdet_lu(build(p - k + 1));
    let mut lg1 = 0.0;
    for q in p - k + 1..=p {
        lg1 += ln_factorial((q - p + k) as u64); // ln Gamma(q-P+K+1)
    }
    for i in 1..=k {
        lg1 -= ln_factorial((k - i) as u64); // ln Gamma(K-i+1)
    }
    let mut lg2 = 0.0;
    for q in p - k + 2..=p {
        lg2 += ln_factorial((q - p + k - 1) as u64); // ln Gamma(q-P+K)
    }
    for i in 1..k {
        lg2 -= ln_factorial((k - i - 1) as u64); // ln Gamma(K-i)
    }
    (s1 * (la1 + lg1).exp(), s2 * (la2 + lg2).exp())
}

// ---------------------------------------------------------------------------
// Vandermonde cofactors
// ---------------------------------------------------------------------------

/// (l, n)th cofactor (1-based) of the P x P matrix D with [D]_{p,q} =
/// beta_p^{q-1}.
///
/// Uses the closed form D_{l,n} = (-1)^{l+n} V(beta w/o l) e_{P-n}(beta w/o l):
/// both factors are products/sums of positive terms, so the cofactor carries
/// an exact sign and a cancellation-free magnitude.
pub fn cofactor_d(spectrum: &EigenSpectrum, l: usize, n: usize) -> Result<f64> {
    let (sign, log_mag) = cofactor_d_log(spectrum, l, n)?;
    Ok(sign * log_mag.exp())
}

/// Log-magnitude form of [`cofactor_d`]: returns (sign, ln|D_{l,n}|).
pub(crate) fn cofactor_d_log(spectrum: &EigenSpectrum, l: usize, n: usize) -> Result<(f64, f64)> {
    let (sign, log_rel) = cofactor_over_vandermonde_log(spectrum, l, n)?;
    let lidx = l - 1;
    let betas = spectrum.betas();
    let mut log_gaps = 0.0;
    for (i, &b) in betas.iter().enumerate() {
        if i != lidx {
            log_gaps += (b - betas[lidx]).abs().ln();
        }
    }
    Ok((sign, log_rel + spectrum.log_vandermonde() + log_gaps))
}

/// (sign, ln|D_{l,n}| - ln V): the cofactor relative to the full
/// Vandermonde determinant, which is the combination the exact MMSE
/// expression and eigenvalue PDF actually need.
pub(crate) fn cofactor_over_vandermonde_log(
    spectrum: &EigenSpectrum,
    l: usize,
    n: usize,
) -> Result<(f64, f64)> {
    let p = spectrum.len();
    if l < 1 || l > p || n < 1 || n > p {
        return Err(SpecfunError::InvalidArgument(format!(
            "cofactor index ({l},{n}) outside 1..={p}"
        )));
    }
    let betas = spectrum.betas();
    let lidx = l - 1;
    let e = elementary_symmetric_excluding(betas, lidx, p - n);
    let mut log_gaps = 0.0;
    for (i, &b) in betas.iter().enumerate() {
        if i != lidx {
            log_gaps += (b - betas[lidx]).abs().ln();
        }
    }
    let sign = if (l + n) % 2 == 0 { 1.0 } else { -1.0 };
    Ok((sign, e.ln() - log_gaps))
}

/// e_k of the spectrum with index `skip` removed; all-positive recurrence.
fn elementary_symmetric_excluding(betas: &[f64], skip: usize, k: usize) -> f64 {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for (i, &b) in betas.iter().enumerate() {
        if i == skip {
            continue;
        }
        for j in (1..=k).rev() {
            e[j] += b * e[j - 1];
        }
    }
    e[k]
}
