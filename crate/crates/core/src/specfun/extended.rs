//! Arbitrary-precision fallback for near-degenerate spectra.
//!
//! Small-aperture steering sets produce Gram eigenvalues spanning twenty
//! decades and beyond; at that spread the f64 divided-difference path (and,
//! worse, any f64 eigensolver) runs out of mantissa. This module re-evaluates
//! the determinant ratios, the exact MMSE sum, and the eigenvalue PDF in
//! `astro_float` arithmetic, and provides a Jacobi eigensolver that recovers
//! the tiny Gram eigenvalues with full relative accuracy.
//!
//! Every entry point runs at 320 bits and re-runs at increasing precision
//! until two consecutive evaluations agree, so callers get f64-exact results
//! without tuning.

use astro_float::{BigFloat, Consts, Radix, RoundingMode};

use super::{Result, SpecfunError};

const RM: RoundingMode = RoundingMode::ToEven;
const BASE_BITS: usize = 320;
const STEP_BITS: usize = 192;
const MAX_BITS: usize = 1280;

/// Euler-Mascheroni to 425 digits (enough for MAX_BITS).
const EULER_GAMMA_DIGITS: &str = "5.7721566490153286060651209008240243104215933593992359880576723488486772677766467093694706329174674951463144724980708248096050401448654283622417399764492353625350033374293733773767394279259525824709491600873520394816567085323315177661152862119950150798479374508570574002992135478614669402960432542151905877553526733139925401296742051375413954911168510280798423487758720503843109399736137255306088933126760017247953783675927135e-1";

struct Ctx {
    p: usize,
    cc: Consts,
}

impl Ctx {
    fn new(bits: usize) -> Self {
        Self {
            p: bits,
            cc: Consts::new().expect("constants cache"),
        }
    }

    fn f(&self, v: f64) -> BigFloat {
        BigFloat::from_f64(v, self.p)
    }

    fn usize(&self, v: usize) -> BigFloat {
        BigFloat::from_f64(v as f64, self.p)
    }

    fn gamma_const(&mut self) -> BigFloat {
        BigFloat::parse(EULER_GAMMA_DIGITS, Radix::Dec, self.p, RM, &mut self.cc)
    }

    fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, self.p, RM)
    }

    fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, self.p, RM)
    }

    fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, self.p, RM)
    }

    fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, self.p, RM)
    }

    fn ln(&mut self, a: &BigFloat) -> BigFloat {
        a.ln(self.p, RM, &mut self.cc)
    }

    fn exp(&mut self, a: &BigFloat) -> BigFloat {
        a.exp(self.p, RM, &mut self.cc)
    }

    fn sqrt(&self, a: &BigFloat) -> BigFloat {
        a.sqrt(self.p, RM)
    }

    fn sin(&mut self, a: &BigFloat) -> BigFloat {
        a.sin(self.p, RM, &mut self.cc)
    }

    fn cos(&mut self, a: &BigFloat) -> BigFloat {
        a.cos(self.p, RM, &mut self.cc)
    }

    fn powi(&self, a: &BigFloat, n: usize) -> BigFloat {
        a.powi(n, self.p, RM)
    }

    fn pi(&mut self) -> BigFloat {
        self.cc.pi(self.p, RM)
    }

    fn lt(&self, a: &BigFloat, b: &BigFloat) -> bool {
        matches!(a.cmp(b), Some(o) if o < 0)
    }

    fn abs_lt(&self, a: &BigFloat, b: &BigFloat) -> bool {
        matches!(a.abs_cmp(b), Some(o) if o < 0)
    }

    /// |scale| * 2^(margin - p): relative convergence threshold. A margin
    /// larger than p yields a large value (used to seed Lentz iterations).
    fn eps_of(&self, scale: &BigFloat, margin: i32) -> BigFloat {
        let k = self.p as i32 - margin;
        let pow2 = if k >= 0 {
            self.powi(&self.f(0.5), k as usize)
        } else {
            self.powi(&self.f(2.0), (-k) as usize)
        };
        let mag = if scale.is_negative() {
            scale.neg()
        } else {
            scale.clone()
        };
        self.mul(&mag, &pow2)
    }
}

/// Round-trip through the decimal formatter; astro-float prints the full
/// mantissa, and f64 parsing is correctly rounded.
fn to_f64(v: &BigFloat) -> f64 {
    if v.is_zero() {
        return 0.0;
    }
    if v.is_nan() {
        return f64::NAN;
    }
    if v.is_inf() {
        return if v.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
    }
    format!("{v}").parse::<f64>().unwrap_or(f64::NAN)
}

fn adaptive_eval<F>(mut eval: F) -> Result<f64>
where
    F: FnMut(usize) -> f64,
{
    let mut bits = BASE_BITS;
    let mut prev = eval(bits);
    while bits < MAX_BITS {
        bits += STEP_BITS;
        let cur = eval(bits);
        let scale = prev.abs().max(cur.abs()).max(1e-280);
        if (cur - prev).abs() <= 1e-12 * scale && cur.is_finite() {
            return Ok(cur);
        }
        prev = cur;
    }
    if prev.is_finite() {
        Ok(prev)
    } else {
        Err(SpecfunError::Domain(
            "extended-precision evaluation did not converge".into(),
        ))
    }
}

// ---------------------------------------------------------------------------
// determinants
// ---------------------------------------------------------------------------

fn det_lu(ctx: &Ctx, mut a: Vec<Vec<BigFloat>>) -> BigFloat {
    let n = a.len();
    let mut det = ctx.f(1.0);
    for c in 0..n {
        let mut piv = c;
        for r in c + 1..n {
            if ctx.abs_lt(&a[piv][c], &a[r][c]) {
                piv = r;
            }
        }
        if a[piv][c].is_zero() {
            return ctx.f(0.0);
        }
        if piv != c {
            a.swap(piv, c);
            det = det.neg();
        }
        let pivot = a[c][c].clone();
        det = ctx.mul(&det, &pivot);
        for r in c + 1..n {
            let factor = ctx.div(&a[r][c], &pivot);
            for k in c..n {
                let upd = ctx.mul(&factor, &a[c][k]);
                a[r][k] = ctx.sub(&a[r][k], &upd);
            }
        }
    }
    det
}

fn vandermonde_big(ctx: &Ctx, b: &[BigFloat]) -> BigFloat {
    let mut v = ctx.f(1.0);
    for j in 1..b.len() {
        for i in 0..j {
            let gap = ctx.sub(&b[j], &b[i]);
            v = ctx.mul(&v, &gap);
        }
    }
    v
}

pub(crate) fn y_ratio_ext(betas: &[f64], n: usize) -> Result<f64> {
    adaptive_eval(|bits| {
        let mut ctx = Ctx::new(bits);
        let b: Vec<BigFloat> = betas.iter().map(|&x| ctx.f(x)).collect();
        let p = b.len();
        let mut m = vec![vec![ctx.f(0.0); p]; p];
        for (row, bi) in b.iter().enumerate() {
            let ln_b = ctx.ln(bi);
            for col in 0..p {
                let pow = ctx.powi(bi, col);
                m[row][col] = if col + 1 == n {
                    ctx.mul(&pow, &ln_b)
                } else {
                    pow
                };
            }
        }
        let det = det_lu(&ctx, m);
        let v = vandermonde_big(&ctx, &b);
        to_f64(&ctx.div(&det, &v))
    })
}

pub(crate) fn delta_ratios_ext(betas: &[f64], k: usize) -> Result<(f64, f64)> {
    let d1 = adaptive_eval(|bits| delta_ratio_at(bits, betas, k, false))?;
    let d2 = adaptive_eval(|bits| delta_ratio_at(bits, betas, k, true))?;
    Ok((d1, d2))
}

fn delta_ratio_at(bits: usize, betas: &[f64], k: usize, second: bool) -> f64 {
    let ctx = Ctx::new(bits);
    let b: Vec<BigFloat> = betas.iter().map(|&x| ctx.f(x)).collect();
    let p = b.len();
    let split = if second { p - k + 1 } else { p - k };
    let mut m = vec![vec![ctx.f(0.0); p]; p];
    for (row, bi) in b.iter().enumerate() {
        for col in 0..p {
            let q = col + 1;
            m[row][col] = if q <= split {
                ctx.powi(bi, q - 1)
            } else {
                let g = if second { q + k - p - 1 } else { q + k - p };
                ctx.mul(&ctx.powi(bi, q), &factorial_big(&ctx, g as u64))
            };
        }
    }
    let mut denom = vandermonde_big(&ctx, &b);
    if second {
        for i in 1..k {
            denom = ctx.mul(&denom, &factorial_big(&ctx, (k - i - 1) as u64));
        }
    } else {
        for i in 1..=k {
            denom = ctx.mul(&denom, &factorial_big(&ctx, (k - i) as u64));
        }
    }
    to_f64(&ctx.div(&det_lu(&ctx, m), &denom))
}

fn factorial_big(ctx: &Ctx, n: u64) -> BigFloat {
    let mut f = ctx.f(1.0);
    for i in 2..=n {
        f = ctx.mul(&f, &ctx.f(i as f64));
    }
    f
}

// ---------------------------------------------------------------------------
// scaled exponential integral and the exact MMSE sum
// ---------------------------------------------------------------------------

/// e^x E_n(x) in extended precision; series + upward recurrence for x <= 8,
/// continued fraction above.
fn scaled_expint_big(ctx: &mut Ctx, n: u32, x: &BigFloat) -> BigFloat {
    let one = ctx.f(1.0);
    if ctx.lt(x, &ctx.f(8.0)) {
        let gamma = ctx.gamma_const();
        let ln_x = ctx.ln(x);
        let mut sum = ctx.f(0.0);
        let mut term = ctx.f(1.0);
        let tol = ctx.eps_of(&one, 8);
        for k in 1..100_000u32 {
            let kf = ctx.f(f64::from(k));
            term = ctx.mul(&term, &ctx.div(&x.neg(), &kf));
            let contrib = ctx.div(&term, &kf).neg();
            sum = ctx.add(&sum, &contrib);
            if ctx.abs_lt(&contrib, &tol) {
                break;
            }
        }
        let e1 = ctx.add(&ctx.sub(&gamma.neg(), &ln_x), &sum);
        let ex = ctx.exp(x);
        let mut f = ctx.mul(&e1, &ex);
        for m in 1..n {
            let num = ctx.sub(&one, &ctx.mul(x, &f));
            f = ctx.div(&num, &ctx.f(f64::from(m)));
        }
        f
    } else {
        // modified Lentz on the standard E_n continued fraction
        let tiny = ctx.eps_of(&one, -(2 * ctx.p as i32) + 60);
        let nf = ctx.f(f64::from(n));
        let mut b = ctx.add(x, &nf);
        let mut c = ctx.div(&one, &tiny);
        let mut d = ctx.div(&one, &b);
        let mut h = d.clone();
        let two = ctx.f(2.0);
        let tol = ctx.eps_of(&one, 8);
        for i in 1..200_000u32 {
            let a = ctx
                .mul(&ctx.f(f64::from(i)), &ctx.add(&nf, &ctx.f(f64::from(i) - 1.0)))
                .neg();
            b = ctx.add(&b, &two);
            d = ctx.div(&one, &ctx.add(&ctx.mul(&a, &d), &b));
            c = ctx.add(&b, &ctx.div(&a, &c));
            let del = ctx.mul(&c, &d);
            h = ctx.mul(&h, &del);
            if ctx.abs_lt(&ctx.sub(&del, &one), &tol) {
                break;
            }
        }
        h
    }
}

/// Full exact MMSE sum SE, evaluated entirely in extended precision.
pub(crate) fn mmse_sum_ext(betas: &[f64], k: usize, p_u: f64) -> Result<f64> {
    adaptive_eval(|bits| {
        let mut ctx = Ctx::new(bits);
        let b: Vec<BigFloat> = betas.iter().map(|&x| ctx.f(x)).collect();
        let p = b.len();
        let pu = ctx.f(p_u);
        let one = ctx.f(1.0);
        let mut total = ctx.f(0.0);
        for l in 0..p {
            let mut denom = one.clone();
            for (i, bi) in b.iter().enumerate() {
                if i != l {
                    denom = ctx.mul(&denom, &ctx.sub(&b[l], bi));
                }
            }
            let x = ctx.div(&one, &ctx.mul(&b[l], &pu));
            let mut inner = ctx.f(0.0);
            for n in p - k + 1..=p {
                let h = (n + k - p) as u32;
                let f = scaled_expint_big(&mut ctx, h, &x);
                let e = elementary_excluding_big(&ctx, &b, l, p - n);
                let pow = ctx.powi(&b[l], n - 1);
                let sign = if (l + 1 + n) % 2 == 0 { 1.0 } else { -1.0 };
                let term = ctx.mul(&ctx.mul(&pow, &e), &ctx.mul(&f, &ctx.f(sign)));
                inner = ctx.add(&inner, &term);
            }
            total = ctx.add(&total, &ctx.div(&inner, &denom));
        }
        let ln2 = ctx.ln(&ctx.f(2.0));
        to_f64(&ctx.div(&ctx.mul(&total, &ctx.usize(k)), &ln2))
    })
}

/// Marginal eigenvalue density evaluated in extended precision.
pub(crate) fn eigen_pdf_ext(x: f64, betas: &[f64], k: usize) -> Result<f64> {
    adaptive_eval(|bits| {
        let mut ctx = Ctx::new(bits);
        let b: Vec<BigFloat> = betas.iter().map(|&v| ctx.f(v)).collect();
        let p = b.len();
        let xb = ctx.f(x);
        let mut total = ctx.f(0.0);
        for l in 0..p {
            let mut denom = ctx.f(1.0);
            for (i, bi) in b.iter().enumerate() {
                if i != l {
                    denom = ctx.mul(&denom, &ctx.sub(&b[l], bi));
                }
            }
            let decay = ctx.exp(&ctx.div(&xb, &b[l]).neg());
            for n in p - k + 1..=p {
                let e = elementary_excluding_big(&ctx, &b, l, p - n);
                let sign = if (l + 1 + n) % 2 == 0 { 1.0 } else { -1.0 };
                // x^{K+n-P-1} beta_l^{P-K-1+n-1-(n-1)}: keep the paper split
                let xpow = ctx.powi(&xb, k + n - p - 1);
                let bpow = if p >= k + 1 {
                    ctx.powi(&b[l], p - k - 1)
                } else {
                    ctx.div(&ctx.f(1.0), &b[l]) // P = K: beta^{-1}
                };
                let gam = factorial_big(&ctx, (k + n - p - 1) as u64);
                let num = ctx.mul(&ctx.mul(&xpow, &decay), &ctx.mul(&bpow, &e));
                let term = ctx.mul(&ctx.div(&num, &gam), &ctx.f(sign));
                total = ctx.add(&total, &ctx.div(&term, &denom));
            }
        }
        to_f64(&ctx.div(&total, &ctx.usize(k)))
    })
}

fn elementary_excluding_big(ctx: &Ctx, b: &[BigFloat], skip: usize, k: usize) -> BigFloat {
    let mut e = vec![ctx.f(0.0); k + 1];
    e[0] = ctx.f(1.0);
    for (i, bi) in b.iter().enumerate() {
        if i == skip {
            continue;
        }
        for j in (1..=k).rev() {
            let upd = ctx.mul(bi, &e[j - 1]);
            e[j] = ctx.add(&e[j], &upd);
        }
    }
    e[k].clone()
}

// ---------------------------------------------------------------------------
// spectrum refinement
// ---------------------------------------------------------------------------

/// Recomputes the steering Gram in extended precision and diagonalizes it
/// with cyclic Jacobi rotations, which preserve the relative accuracy of
/// eigenvalues far below f64 eigensolver noise. Entries returned ascending;
/// values below 2^-(bits/2) of the largest are clamped to exactly zero
/// (genuinely singular geometry, e.g. duplicate directions).
pub(crate) fn refine_spectrum(doas: &[f64], m: usize, d0: f64) -> Vec<f64> {
    let bits = 384;
    let mut ctx = Ctx::new(bits);
    let p = doas.len();
    let sins: Vec<BigFloat> = doas.iter().map(|&t| ctx.sin(&ctx.f(t))).collect();
    let spacing = ctx.div(&ctx.f(d0), &ctx.usize(m));
    let pi = ctx.pi();
    let mb = ctx.usize(m);
    let pb = ctx.usize(p);
    let mut re = vec![vec![ctx.f(0.0); p]; p];
    let mut im = vec![vec![ctx.f(0.0); p]; p];
    for r in 0..p {
        for c in 0..p {
            // half-phase of the geometric sum for entry (r, c)
            let ds = ctx.sub(&sins[r], &sins[c]);
            let half = ctx.mul(&ctx.mul(&pi, &spacing), &ds);
            let sh = ctx.sin(&half);
            let (er, ei) = if sh.is_zero() || ctx.abs_lt(&sh, &ctx.eps_of(&ctx.f(1.0), 16)) {
                (ctx.div(&mb, &pb), ctx.f(0.0))
            } else {
                let smh = ctx.sin(&ctx.mul(&mb, &half));
                let mag = ctx.div(&ctx.div(&smh, &sh), &pb);
                let ang = ctx.mul(&ctx.sub(&mb, &ctx.f(1.0)), &half);
                let cr = ctx.cos(&ang);
                let ci = ctx.sin(&ang);
                (ctx.mul(&mag, &cr), ctx.mul(&mag, &ci))
            };
            re[r][c] = er;
            im[r][c] = ei;
        }
    }
    let eigs = jacobi_hermitian(&mut ctx, &mut re, &mut im);
    let top = eigs
        .iter()
        .cloned()
        .fold(ctx.f(0.0), |acc, v| if ctx.lt(&acc, &v) { v } else { acc });
    let floor = ctx.eps_of(&top, (bits / 2) as i32);
    let mut out: Vec<f64> = eigs
        .iter()
        .map(|v| {
            if ctx.lt(v, &floor) {
                0.0
            } else {
                to_f64(v)
            }
        })
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    out
}

/// Cyclic Jacobi for a Hermitian matrix held as separate re/im parts.
/// Returns the diagonal after convergence (unsorted).
fn jacobi_hermitian(
    ctx: &mut Ctx,
    re: &mut [Vec<BigFloat>],
    im: &mut [Vec<BigFloat>],
) -> Vec<BigFloat> {
    let n = re.len();
    let one = ctx.f(1.0);
    for _sweep in 0..60 {
        // largest diagonal magnitude sets the rotation threshold
        let mut diag_scale = ctx.f(0.0);
        for (i, row) in re.iter().enumerate() {
            if ctx.abs_lt(&diag_scale, &row[i]) {
                diag_scale = row[i].clone();
            }
        }
        let thresh = ctx.eps_of(&diag_scale, 24);
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq_re = re[p][q].clone();
                let apq_im = im[p][q].clone();
                let mag2 = ctx.add(
                    &ctx.mul(&apq_re, &apq_re),
                    &ctx.mul(&apq_im, &apq_im),
                );
                let mag = ctx.sqrt(&mag2);
                if mag.is_zero() || ctx.abs_lt(&mag, &thresh) {
                    continue;
                }
                rotated = true;
                // phase u = a_pq / |a_pq|
                let ur = ctx.div(&apq_re, &mag);
                let ui = ctx.div(&apq_im, &mag);
                // rotation angle from the equivalent real 2x2 problem
                let diff = ctx.sub(&re[q][q], &re[p][p]);
                let theta = ctx.div(&diff, &ctx.mul(&ctx.f(2.0), &mag));
                let theta_abs = if theta.is_negative() {
                    theta.neg()
                } else {
                    theta.clone()
                };
                let root = ctx.sqrt(&ctx.add(&ctx.mul(&theta, &theta), &one));
                let t_mag = ctx.div(&one, &ctx.add(&theta_abs, &root));
                let t = if theta.is_negative() {
                    t_mag.clone()
                } else {
                    t_mag.neg()
                };
                let c = ctx.div(&one, &ctx.sqrt(&ctx.add(&ctx.mul(&t, &t), &one)));
                let s = ctx.mul(&t, &c);
                // U = [[c, -s], [s*conj(u), c*conj(u)]] on the (p, q) plane
                let u10r = ctx.mul(&s, &ur);
                let u10i = ctx.mul(&s, &ui).neg();
                let u11r = ctx.mul(&c, &ur);
                let u11i = ctx.mul(&c, &ui).neg();
                // column update: A <- A U
                for r in 0..n {
                    let xr = re[r][p].clone();
                    let xi = im[r][p].clone();
                    let yr = re[r][q].clone();
                    let yi = im[r][q].clone();
                    re[r][p] = ctx.add(
                        &ctx.mul(&xr, &c),
                        &ctx.sub(&ctx.mul(&yr, &u10r), &ctx.mul(&yi, &u10i)),
                    );
                    im[r][p] = ctx.add(
                        &ctx.mul(&xi, &c),
                        &ctx.add(&ctx.mul(&yr, &u10i), &ctx.mul(&yi, &u10r)),
                    );
                    re[r][q] = ctx.add(
                        &ctx.mul(&xr, &s).neg(),
                        &ctx.sub(&ctx.mul(&yr, &u11r), &ctx.mul(&yi, &u11i)),
                    );
                    im[r][q] = ctx.add(
                        &ctx.mul(&xi, &s).neg(),
                        &ctx.add(&ctx.mul(&yr, &u11i), &ctx.mul(&yi, &u11r)),
                    );
                }
                // row update: A <- U^H A
                for cidx in 0..n {
                    let xr = re[p][cidx].clone();
                    let xi = im[p][cidx].clone();
                    let yr = re[q][cidx].clone();
                    let yi = im[q][cidx].clone();
                    // conj(u10) = s*u, conj(u11) = c*u
                    let c10r = ctx.mul(&s, &ur);
                    let c10i = ctx.mul(&s, &ui);
                    let c11r = ctx.mul(&c, &ur);
                    let c11i = ctx.mul(&c, &ui);
                    re[p][cidx] = ctx.add(
                        &ctx.mul(&xr, &c),
                        &ctx.sub(&ctx.mul(&yr, &c10r), &ctx.mul(&yi, &c10i)),
                    );
                    im[p][cidx] = ctx.add(
                        &ctx.mul(&xi, &c),
                        &ctx.add(&ctx.mul(&yr, &c10i), &ctx.mul(&yi, &c10r)),
                    );
                    re[q][cidx] = ctx.add(
                        &ctx.mul(&xr, &s).neg(),
                        &ctx.sub(&ctx.mul(&yr, &c11r), &ctx.mul(&yi, &c11i)),
                    );
                    im[q][cidx] = ctx.add(
                        &ctx.mul(&xi, &s).neg(),
                        &ctx.add(&ctx.mul(&yr, &c11i), &ctx.mul(&yi, &c11r)),
                    );
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (0..n).map(|i| re[i][i].clone()).collect()
}
