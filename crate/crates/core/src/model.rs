//! Array geometry, steering sets, large-scale fading, and channel draws.
//!
//! The physical picture: a base station with `M` antennas on a uniform
//! linear array whose *total* length is fixed at `d0` wavelengths, so the
//! element spacing is d0/M. All users are seen through the same set of `P`
//! incident directions; the channel factors as G = A H D^{1/2} with A the
//! steering matrix, H i.i.d. complex Gaussian and D the diagonal of
//! large-scale gains.

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::specfun::extended;

#[derive(Debug, Clone, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

// ---------------------------------------------------------------------------
// scenario description
// ---------------------------------------------------------------------------

/// Cell geometry for the pathloss + shadowing fading model.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGeometry {
    /// Hexagon circumradius in meters.
    pub radius_m: f64,
    /// Exclusion radius around the base station in meters.
    pub r_min_m: f64,
    /// Pathloss exponent v in (r/r_min)^-v.
    pub pathloss_exponent: f64,
    /// Log-normal shadowing standard deviation in dB.
    pub shadowing_sigma_db: f64,
}

impl Default for CellGeometry {
    fn default() -> Self {
        Self {
            radius_m: 1000.0,
            r_min_m: 100.0,
            pathloss_exponent: 3.8,
            shadowing_sigma_db: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingMode {
    /// All large-scale gains are exactly one.
    Unit,
    /// zeta_k = s_k (r_k / r_min)^-v with log-normal shadowing s_k and
    /// positions uniform over the hexagonal cell.
    PathlossShadowing,
}

/// Whether one large-scale profile is drawn per estimate or redrawn on
/// every Monte-Carlo trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProfileMode {
    #[default]
    Fixed,
    RedrawnPerTrial,
}

/// Full experiment description.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// Base-station antenna count M.
    pub m: usize,
    /// User count K.
    pub k: usize,
    /// Incident-direction count P.
    pub p: usize,
    /// Normalized total array aperture d0 = d M / lambda.
    pub d0: f64,
    /// Per-user transmit SNR (linear).
    pub p_u: f64,
    /// Directions of arrival in radians, in [-pi/2, pi/2]; length P.
    pub doas: Vec<f64>,
    pub fading: FadingMode,
    pub cell: CellGeometry,
    pub profile_mode: ProfileMode,
    /// Master seed; every random quantity derives from it.
    pub seed: u64,
}

impl ScenarioConfig {
    /// Unit-fading scenario with directions drawn uniformly from
    /// [-pi/2, pi/2] using the dedicated DOA stream of `seed`.
    pub fn unit_fading(m: usize, k: usize, p: usize, d0: f64, p_u: f64, seed: u64) -> Self {
        let doas = draw_doas(p, seed);
        Self {
            m,
            k,
            p,
            d0,
            p_u,
            doas,
            fading: FadingMode::Unit,
            cell: CellGeometry::default(),
            profile_mode: ProfileMode::Fixed,
            seed,
        }
    }

    /// Per-element spacing as a fraction of the wavelength.
    pub fn spacing_ratio(&self) -> f64 {
        self.d0 / self.m as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.k < 1 || self.p < 1 {
            return Err(ModelError::InvalidArgument(
                "M, K and P must all be at least 1".into(),
            ));
        }
        if !(self.k <= self.p && self.p <= self.m) {
            return Err(ModelError::InvalidArgument(format!(
                "K <= P <= M is required, got K={}, P={}, M={}",
                self.k, self.p, self.m
            )));
        }
        if !(self.d0 > 0.0) || !self.d0.is_finite() {
            return Err(ModelError::InvalidArgument(format!(
                "aperture d0 must be positive, got {}",
                self.d0
            )));
        }
        if !(self.p_u > 0.0) || !self.p_u.is_finite() {
            return Err(ModelError::InvalidArgument(format!(
                "transmit SNR p_u must be positive, got {}",
                self.p_u
            )));
        }
        if self.doas.len() != self.p {
            return Err(ModelError::DimensionMismatch(format!(
                "expected {} DOAs, got {}",
                self.p,
                self.doas.len()
            )));
        }
        for (i, &t) in self.doas.iter().enumerate() {
            if !t.is_finite() || !((-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2).contains(&t)) {
                return Err(ModelError::InvalidArgument(format!(
                    "DOA {i} = {t} outside [-pi/2, pi/2]"
                )));
            }
        }
        if self.fading == FadingMode::PathlossShadowing {
            let c = &self.cell;
            if !(c.radius_m > c.r_min_m && c.r_min_m > 0.0) {
                return Err(ModelError::InvalidArgument(format!(
                    "cell requires radius_m > r_min_m > 0, got {} and {}",
                    c.radius_m, c.r_min_m
                )));
            }
            if c.pathloss_exponent < 0.0 || c.shadowing_sigma_db < 0.0 {
                return Err(ModelError::InvalidArgument(
                    "pathloss exponent and shadowing sigma must be nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// random streams
// ---------------------------------------------------------------------------

/// Counter-based substreams: every consumer derives an independent ChaCha
/// stream from (master seed, purpose), so results do not depend on
/// execution order or worker count.
pub mod streams {
    use super::*;

    const ATTEMPT_STRIDE: u64 = 1 << 40;
    /// Stream for the fixed large-scale profile draw.
    pub const PROFILE: u64 = u64::MAX - 1;
    /// Stream for drawing random DOAs.
    pub const DOA: u64 = u64::MAX - 2;

    /// Stream index for a Monte-Carlo trial; `attempt` increments when a
    /// singular draw forces a resample.
    pub fn trial(index: u64, attempt: u32) -> u64 {
        index + u64::from(attempt) * ATTEMPT_STRIDE
    }

    /// ChaCha8 generator pinned to (seed, stream).
    pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }
}

/// Directions drawn uniformly from [-pi/2, pi/2], sorted ascending.
pub fn draw_doas(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = streams::rng(seed, streams::DOA);
    let mut doas: Vec<f64> = (0..p)
        .map(|_| rng.random_range(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2))
        .collect();
    doas.sort_by(|a, b| a.partial_cmp(b).expect("finite angles"));
    doas
}

// ---------------------------------------------------------------------------
// steering
// ---------------------------------------------------------------------------

/// Normalized steering vector of a uniform linear array:
/// entry m is exp(-j 2 pi (d/lambda) m sin theta) / sqrt(P).
pub fn steering_vector(
    theta: f64,
    m: usize,
    spacing_ratio: f64,
    p: usize,
) -> Result<Vec<Complex<f64>>> {
    if m < 1 || p < 1 {
        return Err(ModelError::InvalidArgument(
            "antenna and direction counts must be at least 1".into(),
        ));
    }
    if !theta.is_finite() {
        return Err(ModelError::InvalidArgument(format!(
            "DOA must be finite, got {theta}"
        )));
    }
    if !(spacing_ratio > 0.0) || !spacing_ratio.is_finite() {
        return Err(ModelError::InvalidArgument(format!(
            "spacing ratio must be positive, got {spacing_ratio}"
        )));
    }
    let norm = 1.0 / (p as f64).sqrt();
    let step = -2.0 * std::f64::consts::PI * spacing_ratio * theta.sin();
    Ok((0..m)
        .map(|i| {
            let phase = step * i as f64;
            Complex::new(phase.cos(), phase.sin()) * norm
        })
        .collect())
}

/// Steering matrix A, its Gram A^H A, and the Gram eigenvalues.
#[derive(Debug, Clone)]
pub struct SteeringSet {
    a: DMatrix<Complex<f64>>,
    gram: DMatrix<Complex<f64>>,
    betas: Vec<f64>,
    refined: bool,
    singular: bool,
}

impl SteeringSet {
    /// M x P steering matrix.
    pub fn a(&self) -> &DMatrix<Complex<f64>> {
        &self.a
    }

    /// P x P Gram matrix A^H A.
    pub fn gram(&self) -> &DMatrix<Complex<f64>> {
        &self.gram
    }

    /// Gram eigenvalues, ascending. Sum equals M (trace identity).
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// True when the f64 eigensolve bottomed out in rounding noise and the
    /// spectrum was recomputed in extended precision.
    pub fn refined(&self) -> bool {
        self.refined
    }

    /// True when the Gram matrix is singular (e.g. duplicate directions);
    /// `betas` then contains exact zeros.
    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn antennas(&self) -> usize {
        self.a.nrows()
    }

    pub fn directions(&self) -> usize {
        self.a.ncols()
    }
}

/// Builds the steering set for the given directions, antenna count, and
/// total aperture (spacing ratio d0/M).
///
/// Gram entries use the closed geometric-series form. When the smallest
/// f64 eigenvalue falls into eigensolver noise (strongly correlated
/// geometries), the spectrum is recomputed with the extended-precision
/// Jacobi solver, which keeps tiny eigenvalues positive and relatively
/// accurate. Duplicate DOAs yield exact zero eigenvalues and set the
/// singular flag rather than failing.
pub fn build_steering_set(doas: &[f64], m: usize, d0: f64) -> Result<SteeringSet> {
    let p = doas.len();
    if p == 0 {
        return Err(ModelError::InvalidArgument("no directions given".into()));
    }
    if p > m {
        return Err(ModelError::InvalidArgument(format!(
            "direction count P={p} exceeds antenna count M={m}"
        )));
    }
    if !(d0 > 0.0) || !d0.is_finite() {
        return Err(ModelError::InvalidArgument(format!(
            "aperture d0 must be positive, got {d0}"
        )));
    }
    let spacing = d0 / m as f64;
    let mut a = DMatrix::<Complex<f64>>::zeros(m, p);
    for (c, &theta) in doas.iter().enumerate() {
        let col = steering_vector(theta, m, spacing, p)?;
        for (r, v) in col.into_iter().enumerate() {
            a[(r, c)] = v;
        }
    }
    let gram = gram_closed_form(doas, m, spacing);

    let mut betas: Vec<f64> = gram
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    betas.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    let top = betas.last().copied().unwrap_or(0.0);
    let noise_floor = 1e3 * f64::EPSILON * top.max(f64::MIN_POSITIVE);
    let mut refined = false;
    if betas.first().copied().unwrap_or(0.0) < noise_floor {
        betas = extended::refine_spectrum(doas, m, d0);
        refined = true;
    }
    let singular = betas.iter().any(|&b| b <= 0.0);
    Ok(SteeringSet {
        a,
        gram,
        betas,
        refined,
        singular,
    })
}

/// Gram of the steering matrix via the closed geometric-series form:
/// [A^H A]_{pq} = e^{j (M-1) x/2} sin(M x/2) / (P sin(x/2)) with
/// x = 2 pi (d0/M)(sin theta_p - sin theta_q).
fn gram_closed_form(doas: &[f64], m: usize, spacing: f64) -> DMatrix<Complex<f64>> {
    let p = doas.len();
    let sins: Vec<f64> = doas.iter().map(|t| t.sin()).collect();
    let mf = m as f64;
    DMatrix::from_fn(p, p, |r, c| {
        if r == c {
            return Complex::new(mf / p as f64, 0.0);
        }
        let half = std::f64::consts::PI * spacing * (sins[r] - sins[c]);
        let sh = half.sin();
        if sh.abs() < 1e-12 {
            // x a multiple of 2 pi: every term of the sum is 1
            return Complex::new(mf / p as f64, 0.0);
        }
        let mag = (mf * half).sin() / sh / p as f64;
        let ang = (mf - 1.0) * half;
        Complex::new(ang.cos() * mag, ang.sin() * mag)
    })
}

// ---------------------------------------------------------------------------
// large-scale fading
// ---------------------------------------------------------------------------

/// Per-user large-scale power gains zeta_k (and the sampled distances when
/// the pathloss model produced them).
#[derive(Debug, Clone)]
pub struct LargeScaleProfile {
    zetas: Vec<f64>,
    distances: Option<Vec<f64>>,
}

impl LargeScaleProfile {
    pub fn unit(k: usize) -> Self {
        Self {
            zetas: vec![1.0; k],
            distances: None,
        }
    }

    pub fn zetas(&self) -> &[f64] {
        &self.zetas
    }

    pub fn distances(&self) -> Option<&[f64]> {
        self.distances.as_deref()
    }

    pub fn users(&self) -> usize {
        self.zetas.len()
    }

    pub fn is_unit(&self) -> bool {
        self.zetas.iter().all(|&z| z == 1.0)
    }
}

/// zeta for a user at distance `r_m` with shadowing `shadow_db` (in dB).
pub fn large_scale_gain(r_m: f64, shadow_db: f64, cell: &CellGeometry) -> f64 {
    let s = 10f64.powf(shadow_db / 10.0);
    s * (r_m / cell.r_min_m).powf(-cell.pathloss_exponent)
}

/// Uniform position over the hexagonal cell (circumradius `radius_m`),
/// excluding the disc of radius `r_min_m`; rejection-sampled from the
/// bounding box. Returns the distance to the base station.
fn sample_hexagon_distance(cell: &CellGeometry, rng: &mut impl Rng) -> f64 {
    let r = cell.radius_m;
    let apothem = r * 3f64.sqrt() / 2.0;
    loop {
        let x: f64 = rng.random_range(-r..=r);
        let y: f64 = rng.random_range(-apothem..=apothem);
        let inside = y.abs() <= apothem && x.abs() + y.abs() / 3f64.sqrt() <= r;
        if !inside {
            continue;
        }
        let d = x.hypot(y);
        if d >= cell.r_min_m {
            return d;
        }
    }
}

/// Draws the large-scale profile for a scenario.
///
/// Unit mode returns all ones without consuming randomness, so unit and
/// pathloss scenarios with the same seed share their small-scale draws.
pub fn sample_large_scale(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<LargeScaleProfile> {
    config.validate()?;
    match config.fading {
        FadingMode::Unit => Ok(LargeScaleProfile::unit(config.k)),
        FadingMode::PathlossShadowing => {
            let cell = &config.cell;
            let mut zetas = Vec::with_capacity(config.k);
            let mut distances = Vec::with_capacity(config.k);
            for _ in 0..config.k {
                let d = sample_hexagon_distance(cell, rng);
                let shadow_db: f64 =
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                        * cell.shadowing_sigma_db;
                zetas.push(large_scale_gain(d, shadow_db, cell));
                distances.push(d);
            }
            Ok(LargeScaleProfile {
                zetas,
                distances: Some(distances),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// channel sampling
// ---------------------------------------------------------------------------

/// One draw of the uplink channel G = A H D^{1/2}.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    g: DMatrix<Complex<f64>>,
    h: DMatrix<Complex<f64>>,
    profile: LargeScaleProfile,
}

impl ChannelRealization {
    /// M x K channel matrix.
    pub fn g(&self) -> &DMatrix<Complex<f64>> {
        &self.g
    }

    /// P x K small-scale response.
    pub fn h(&self) -> &DMatrix<Complex<f64>> {
        &self.h
    }

    pub fn profile(&self) -> &LargeScaleProfile {
        &self.profile
    }
}

/// Assembles G from explicit parts; used by tests that pin H.
pub fn assemble_channel(
    steering: &SteeringSet,
    profile: &LargeScaleProfile,
    h: DMatrix<Complex<f64>>,
) -> Result<ChannelRealization> {
    if h.nrows() != steering.directions() || h.ncols() != profile.users() {
        return Err(ModelError::DimensionMismatch(format!(
            "H is {}x{}, expected {}x{}",
            h.nrows(),
            h.ncols(),
            steering.directions(),
            profile.users()
        )));
    }
    let mut g = steering.a() * &h;
    for (k, &z) in profile.zetas().iter().enumerate() {
        let scale = Complex::new(z.sqrt(), 0.0);
        for r in 0..g.nrows() {
            g[(r, k)] *= scale;
        }
    }
    Ok(ChannelRealization {
        g,
        h,
        profile: profile.clone(),
    })
}

/// Draws H with i.i.d. circularly-symmetric unit-variance complex Gaussian
/// entries and assembles G = A H D^{1/2}.
pub fn sample_channel(
    steering: &SteeringSet,
    profile: &LargeScaleProfile,
    rng: &mut impl Rng,
) -> Result<ChannelRealization> {
    let p = steering.directions();
    let k = profile.users();
    let mut h = DMatrix::<Complex<f64>>::zeros(p, k);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for c in 0..k {
        for r in 0..p {
            let re: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            let im: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            h[(r, c)] = Complex::new(re * half, im * half);
        }
    }
    assemble_channel(steering, profile, h)
}

#[cfg(test)]
mod tests;
