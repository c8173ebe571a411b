//! Implantation statistics of defect pairs and localization of two emitters from their
//! spin-selective difference images.
//!
//! Lengths are in nm throughout.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::decoherence::substream;
use crate::error::{NvError, Result};
use crate::fit::linear_least_squares;
use crate::hamiltonian::{angular_factor, normalize, NvOrientation, SpinConstants, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApertureSpec {
    pub width_nm: f64,
    pub height_nm: f64,
}

impl Default for ApertureSpec {
    fn default() -> Self {
        ApertureSpec {
            width_nm: 50.0,
            height_nm: 40.0,
        }
    }
}

impl ApertureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_nm > 0.0 && self.height_nm > 0.0) {
            return Err(NvError::InvalidArgument("aperture dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StraggleKind {
    /// `sigma_nm` is the standard deviation along each lateral axis.
    PerAxis,
    /// `sigma_nm` is the RMS lateral radius, `√2` times the per-axis value.
    Radial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StraggleModel {
    pub sigma_nm: f64,
    pub kind: StraggleKind,
}

impl StraggleModel {
    pub fn per_axis(sigma_nm: f64) -> Self {
        StraggleModel {
            sigma_nm,
            kind: StraggleKind::PerAxis,
        }
    }

    pub fn sigma_axis(&self) -> f64 {
        match self.kind {
            StraggleKind::PerAxis => self.sigma_nm,
            StraggleKind::Radial => self.sigma_nm / 2f64.sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_nm > 0.0 && self.sigma_nm.is_finite()) {
            return Err(NvError::InvalidArgument("straggle must be positive".into()));
        }
        Ok(())
    }
}

const CHUNK: usize = 4096;

/// Lateral stopping positions: a uniform point of the aperture plus Gaussian scatter per axis.
pub fn sample_landings(aperture: &ApertureSpec, straggle: &StraggleModel, n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    aperture.validate()?;
    straggle.validate()?;
    if n == 0 {
        return Err(NvError::InvalidArgument("need at least one ion".into()));
    }
    let normal = Normal::new(0.0, straggle.sigma_axis()).map_err(|e| NvError::InvalidArgument(e.to_string()))?;
    let chunks: Vec<Vec<[f64; 2]>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ch| {
            let mut rng = substream(seed, ch as u64);
            let m = CHUNK.min(n - ch * CHUNK);
            (0..m)
                .map(|_| {
                    let x = (rng.gen::<f64>() - 0.5) * aperture.width_nm + normal.sample(&mut rng);
                    let y = (rng.gen::<f64>() - 0.5) * aperture.height_nm + normal.sample(&mut rng);
                    [x, y]
                })
                .collect()
        })
        .collect();
    Ok(chunks.concat())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Consecutive landings `(2k, 2k+1)` form one independent pair.
    Independent,
    /// Every unordered pair of landings (quadratic cost).
    AllPairs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistanceStats {
    pub d0_nm: f64,
    pub fraction: f64,
    /// Binomial standard error of `fraction`.
    pub std_err: f64,
    pub n_pairs: u64,
    pub bin_nm: f64,
    /// Pair counts per distance bin starting at zero; distances past the last bin are dropped.
    pub counts: Vec<u64>,
}

/// `P(d < d0)` for two independent isotropic Gaussian landings of per-axis spread `sigma_axis`.
pub fn rayleigh_fraction(sigma_axis: f64, d0: f64) -> f64 {
    1.0 - (-d0 * d0 / (4.0 * sigma_axis * sigma_axis)).exp()
}

pub fn pair_distance_stats(landings: &[[f64; 2]], d0: f64, pairing: Pairing, bin_nm: f64, max_nm: f64) -> Result<PairDistanceStats> {
    if landings.len() < 2 {
        return Err(NvError::InvalidArgument("need at least two landings".into()));
    }
    if !(d0 >= 0.0 && bin_nm > 0.0 && max_nm > 0.0) {
        return Err(NvError::InvalidArgument("distances must be positive".into()));
    }
    let nbins = (max_nm / bin_nm).ceil() as usize;
    let dist = |p: &[f64; 2], q: &[f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let tally = |ds: &mut dyn Iterator<Item = f64>| {
        let mut counts = vec![0u64; nbins];
        let (mut close, mut total) = (0u64, 0u64);
        for d in ds {
            total += 1;
            if d < d0 {
                close += 1;
            }
            let b = (d / bin_nm) as usize;
            if b < nbins {
                counts[b] += 1;
            }
        }
        (counts, close, total)
    };
    let (counts, close, total) = match pairing {
        Pairing::Independent => tally(&mut landings.chunks_exact(2).map(|p| dist(&p[0], &p[1]))),
        Pairing::AllPairs => landings
            .par_iter()
            .enumerate()
            .map(|(i, p)| tally(&mut landings[i + 1..].iter().map(|q| dist(p, q))))
            .reduce(
                || (vec![0u64; nbins], 0, 0),
                |mut a, b| {
                    a.0.iter_mut().zip(&b.0).for_each(|(x, y)| *x += y);
                    (a.0, a.1 + b.1, a.2 + b.2)
                },
            ),
    };
    let f = close as f64 / total as f64;
    Ok(PairDistanceStats {
        d0_nm: d0,
        fraction: f,
        std_err: (f * (1.0 - f) / total as f64).sqrt(),
        n_pairs: total,
        bin_nm,
        counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StraggleRow {
    pub energy_kev: f64,
    pub sigma_nm: f64,
    pub depth_nm: f64,
}

/// Fraction of independent ion pairs landing closer than `d_strong`.
pub fn pair_yield(
    row: &StraggleRow,
    aperture: &ApertureSpec,
    kind: StraggleKind,
    d_strong: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let straggle = StraggleModel {
        sigma_nm: row.sigma_nm,
        kind,
    };
    let land = sample_landings(aperture, &straggle, n.max(2), seed)?;
    Ok(pair_distance_stats(&land, d_strong, Pairing::Independent, d_strong.max(1.0), d_strong.max(1.0))?.fraction)
}

pub fn yield_table(
    rows: &[StraggleRow],
    aperture: &ApertureSpec,
    kind: StraggleKind,
    d_strong: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(NvError::InvalidArgument("straggle table is empty".into()));
    }
    rows.iter().map(|r| pair_yield(r, aperture, kind, d_strong, n, seed)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub pitch_nm: f64,
    /// Centre of pixel (0, 0).
    pub origin_nm: [f64; 2],
}

impl GridSpec {
    /// Square grid centred on the origin.
    pub fn centred(n: usize, pitch_nm: f64) -> Self {
        let o = -0.5 * (n as f64 - 1.0) * pitch_nm;
        GridSpec {
            nx: n,
            ny: n,
            pitch_nm,
            origin_nm: [o, o],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || !(self.pitch_nm > 0.0) {
            return Err(NvError::InvalidArgument("grid needs pixels and a positive pitch".into()));
        }
        Ok(())
    }

    pub fn position(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin_nm[0] + ix as f64 * self.pitch_nm,
            self.origin_nm[1] + iy as f64 * self.pitch_nm,
        ]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Raw confocal scan, row-major (`counts[iy * nx + ix]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfocalImage {
    pub grid: GridSpec,
    pub counts: Vec<f64>,
}

impl ConfocalImage {
    pub fn new(grid: GridSpec, counts: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if counts.len() != grid.len() {
            return Err(NvError::Dimension(format!("{} counts for a {}×{} grid", counts.len(), grid.nx, grid.ny)));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(NvError::InvalidArgument("counts must be finite and non-negative".into()));
        }
        Ok(ConfocalImage { grid, counts })
    }

    /// `self − other`, the fluorescence removed by the pulse that produced `other`.
    pub fn subtract(&self, other: &ConfocalImage) -> Result<DifferenceImage> {
        if self.grid != other.grid {
            return Err(NvError::Dimension("scans are on different grids".into()));
        }
        Ok(DifferenceImage {
            grid: self.grid,
            values: self.counts.iter().zip(&other.counts).map(|(a, b)| a - b).collect(),
        })
    }
}

/// Signed difference of two scans on the same grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceImage {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfModel {
    pub sigma_x_nm: f64,
    pub sigma_y_nm: f64,
    /// Counts per pixel at the centre of one bright emitter.
    pub amplitude: f64,
}

impl Default for PsfModel {
    fn default() -> Self {
        PsfModel {
            sigma_x_nm: 150.0,
            sigma_y_nm: 150.0,
            amplitude: 2000.0,
        }
    }
}

impl PsfModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_x_nm > 0.0 && self.sigma_y_nm > 0.0 && self.amplitude >= 0.0) {
            return Err(NvError::InvalidArgument("PSF widths must be positive".into()));
        }
        Ok(())
    }

    pub fn value(&self, p: [f64; 2], centre: [f64; 2]) -> f64 {
        let dx = (p[0] - centre[0]) / self.sigma_x_nm;
        let dy = (p[1] - centre[1]) / self.sigma_y_nm;
        self.amplitude * (-0.5 * (dx * dx + dy * dy)).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingSettings {
    pub grid: GridSpec,
    pub psf: PsfModel,
    /// Fractional fluorescence drop of each defect after its π pulse.
    pub contrasts: [f64; 2],
    pub background: f64,
    pub shot_noise: bool,
}

impl Default for ImagingSettings {
    fn default() -> Self {
        ImagingSettings {
            grid: GridSpec::centred(100, 20.0),
            psf: PsfModel::default(),
            contrasts: [0.3, 0.3],
            background: 200.0,
            shot_noise: true,
        }
    }
}

/// Difference images of two emitters from three scans per pixel: a reference, one with a π
/// pulse on A, one with a π pulse on B. Each scan carries independent Poisson noise when
/// `shot_noise` is set.
pub fn synth_difference_images(positions: [[f64; 2]; 2], s: &ImagingSettings, seed: u64) -> Result<(DifferenceImage, DifferenceImage)> {
    s.grid.validate()?;
    s.psf.validate()?;
    if s.contrasts.iter().any(|c| !(0.0..=1.0).contains(c)) || !(s.background >= 0.0) {
        return Err(NvError::InvalidArgument("contrasts in [0, 1] and non-negative background required".into()));
    }
    let g = s.grid;
    let mut rng = substream(seed, 0);
    let mut scan = |wa: f64, wb: f64| -> Result<ConfocalImage> {
        let mut counts = Vec::with_capacity(g.len());
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let p = g.position(ix, iy);
                let mean = s.background + wa * s.psf.value(p, positions[0]) + wb * s.psf.value(p, positions[1]);
                counts.push(if s.shot_noise && mean > 0.0 {
                    Poisson::new(mean).map_err(|e| NvError::InvalidArgument(e.to_string()))?.sample(&mut rng)
                } else {
                    mean
                });
            }
        }
        ConfocalImage::new(g, counts)
    };
    let reference = scan(1.0, 1.0)?;
    let pulsed_a = scan(1.0 - s.contrasts[0], 1.0)?;
    let pulsed_b = scan(1.0, 1.0 - s.contrasts[1])?;
    Ok((reference.subtract(&pulsed_a)?, reference.subtract(&pulsed_b)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Direct,
    Fft,
}

/// Lag map `C(s) = Σ_x a(x) b(x + s)` over all `(2nx − 1) × (2ny − 1)` lags, row-major with
/// lag `(sx, sy)` at index `(sy + ny − 1) · (2nx − 1) + sx + nx − 1`.
pub fn cross_correlation(a: &DifferenceImage, b: &DifferenceImage, method: CorrelationMethod) -> Result<Vec<f64>> {
    if a.grid != b.grid {
        return Err(NvError::Dimension("images are on different grids".into()));
    }
    let (nx, ny) = (a.grid.nx, a.grid.ny);
    let (lx, ly) = (2 * nx - 1, 2 * ny - 1);
    match method {
        CorrelationMethod::Direct => {
            let rows: Vec<Vec<f64>> = (0..ly)
                .into_par_iter()
                .map(|j| {
                    let sy = j as isize - (ny as isize - 1);
                    (0..lx)
                        .map(|i| {
                            let sx = i as isize - (nx as isize - 1);
                            let mut acc = 0.0;
                            for y in 0..ny as isize {
                                let yb = y + sy;
                                if yb < 0 || yb >= ny as isize {
                                    continue;
                                }
                                for x in 0..nx as isize {
                                    let xb = x + sx;
                                    if xb < 0 || xb >= nx as isize {
                                        continue;
                                    }
                                    acc += a.values[y as usize * nx + x as usize] * b.values[yb as usize * nx + xb as usize];
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect();
            Ok(rows.concat())
        }
        CorrelationMethod::Fft => {
            let (px, py) = (2 * nx, 2 * ny);
            let mut planner = FftPlanner::<f64>::new();
            let fx = planner.plan_fft_forward(px);
            let fy = planner.plan_fft_forward(py);
            let ix = planner.plan_fft_inverse(px);
            let iy = planner.plan_fft_inverse(py);
            let fft2 = |img: &DifferenceImage| {
                let mut buf = vec![Complex::new(0.0, 0.0); px * py];
                for y in 0..ny {
                    for x in 0..nx {
                        buf[y * px + x] = Complex::new(img.values[y * nx + x], 0.0);
                    }
                }
                transform_2d(&mut buf, px, py, fx.as_ref(), fy.as_ref());
                buf
            };
            let fa = fft2(a);
            let fb = fft2(b);
            let mut prod: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(p, q)| p.conj() * q).collect();
            transform_2d(&mut prod, px, py, ix.as_ref(), iy.as_ref());
            let norm = (px * py) as f64;
            let mut out = Vec::with_capacity(lx * ly);
            for j in 0..ly {
                let sy = j as isize - (ny as isize - 1);
                let ry = sy.rem_euclid(py as isize) as usize;
                for i in 0..lx {
                    let sx = i as isize - (nx as isize - 1);
                    let rx = sx.rem_euclid(px as isize) as usize;
                    out.push(prod[ry * px + rx].re / norm);
                }
            }
            Ok(out)
        }
    }
}

fn transform_2d(buf: &mut [Complex<f64>], px: usize, py: usize, fx: &dyn rustfft::Fft<f64>, fy: &dyn rustfft::Fft<f64>) {
    for row in buf.chunks_exact_mut(px) {
        fx.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); py];
    for x in 0..px {
        for y in 0..py {
            col[y] = buf[y * px + x];
        }
        fy.process(&mut col);
        for y in 0..py {
            buf[y * px + x] = col[y];
        }
    }
}

/// Half-width (in lag pixels) of the window around the maximum used for the cap fit.
const CAP_RADIUS: isize = 4;

/// Displacement `r_B − r_A` [nm]: the lag of the cross-correlation maximum, refined by an
/// elliptical Gaussian (log-quadratic, amplitude-weighted least squares) fitted to the cap.
///
/// Both difference images subtract the same reference scan, so its shot noise adds
/// `Σ var(reference)` to the zero-lag value alone; that lag is left out of the search and fit.
pub fn locate_by_convolution(a: &DifferenceImage, b: &DifferenceImage) -> Result<[f64; 2]> {
    let c = cross_correlation(a, b, CorrelationMethod::Fft)?;
    let (nx, ny) = (a.grid.nx as isize, a.grid.ny as isize);
    let lx = 2 * nx - 1;
    let zero_lag = ((ny - 1) * lx + nx - 1) as usize;
    let (imax, &cmax) = c
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != zero_lag)
        .max_by(|p, q| p.1.partial_cmp(q.1).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or_else(|| NvError::InvalidArgument("empty images".into()))?;
    if !(cmax > 0.0) {
        return Err(NvError::InvalidArgument("convolution is flat; no emitter found".into()));
    }
    let (cx, cy) = (imax as isize % lx, imax as isize / lx);
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for dy in -CAP_RADIUS..=CAP_RADIUS {
        for dx in -CAP_RADIUS..=CAP_RADIUS {
            let (x, y) = (cx + dx, cy + dy);
            if x < 0 || x >= lx || y < 0 || y >= 2 * ny - 1 {
                continue;
            }
            let idx = (y * lx + x) as usize;
            let v = c[idx];
            if idx == zero_lag || v <= 0.05 * cmax {
                continue;
            }
            let (u, w) = (dx as f64, dy as f64);
            let wt = v / cmax;
            rows.push([wt, wt * u, wt * w, wt * u * u, wt * w * w, wt * u * w]);
            rhs.push(wt * (v / cmax).ln());
        }
    }
    if rows.len() < 6 {
        return Err(NvError::Fit("convolution cap too narrow to fit".into()));
    }
    let m = nalgebra::DMatrix::from_fn(rows.len(), 6, |i, j| rows[i][j]);
    let p = linear_least_squares(&m, &nalgebra::DVector::from_vec(rhs))?;
    // Stationary point of p0 + p1 u + p2 w + p3 u² + p4 w² + p5 uw.
    let (a11, a22, a12) = (2.0 * p[3], 2.0 * p[4], p[5]);
    let det = a11 * a22 - a12 * a12;
    if !(a11 < 0.0 && det > 0.0) {
        return Err(NvError::Fit("convolution cap is not a maximum".into()));
    }
    let u = (-p[1] * a22 + p[2] * a12) / det;
    let w = (-p[2] * a11 + p[1] * a12) / det;
    if u.abs() > CAP_RADIUS as f64 || w.abs() > CAP_RADIUS as f64 {
        return Err(NvError::Fit("cap fit left the fitting window".into()));
    }
    let pitch = a.grid.pitch_nm;
    Ok([
        ((cx - (nx - 1)) as f64 + u) * pitch,
        ((cy - (ny - 1)) as f64 + w) * pitch,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRun {
    pub displacements: Vec<[f64; 2]>,
    pub mean_distance_nm: f64,
    pub std_distance_nm: f64,
}

/// Independent repetitions of the three-scan measurement for emitters separated by
/// `separation` (B relative to A, centred on the grid).
pub fn localize_repetitions(separation: [f64; 2], s: &ImagingSettings, reps: usize, seed: u64) -> Result<LocalizationRun> {
    if reps == 0 {
        return Err(NvError::InvalidArgument("need at least one repetition".into()));
    }
    let pos = [
        [-0.5 * separation[0], -0.5 * separation[1]],
        [0.5 * separation[0], 0.5 * separation[1]],
    ];
    let displacements: Vec<[f64; 2]> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let (a, b) = synth_difference_images(pos, s, seed.wrapping_add(r))?;
            locate_by_convolution(&a, &b)
        })
        .collect::<Result<_>>()?;
    let d: Vec<f64> = displacements.iter().map(|v| v[0].hypot(v[1])).collect();
    let mean = d.iter().sum::<f64>() / reps as f64;
    let var = if reps > 1 {
        d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
    } else {
        0.0
    };
    Ok(LocalizationRun {
        displacements,
        mean_distance_nm: mean,
        std_distance_nm: var.sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRange {
    pub r_min_nm: f64,
    pub r_max_nm: f64,
    pub z_min_nm: f64,
    pub z_max_nm: f64,
}

const AZIMUTH_STEPS: usize = 720;
const DEPTH_STEPS: usize = 2000;

/// Three-dimensional distances consistent with a lateral separation and a coupling magnitude.
///
/// The pair vector is `(ℓ cos φ, ℓ sin φ, z)` in a lab frame whose z axis is
/// `surface_normal` (crystal coordinates); the in-plane direction φ is left free. A candidate
/// `(φ, z)` is consistent when `P |g(n)| / r³ = |nu_dip|`.
pub fn absolute_distance(
    lateral_nm: f64,
    nu_dip_hz: f64,
    a: &NvOrientation,
    b: &NvOrientation,
    surface_normal: Vec3,
    k: &SpinConstants,
) -> Result<DistanceRange> {
    if !(lateral_nm >= 0.0 && nu_dip_hz.abs() > 0.0) {
        return Err(NvError::InvalidArgument("need a lateral distance and a nonzero coupling".into()));
    }
    let nu = nu_dip_hz.abs();
    let (gmax, _) = crate::hamiltonian::max_angular_factor(a, b, 0.25);
    let r_cap = (gmax * k.dipolar_prefactor_hz_nm3 / nu).cbrt();
    if lateral_nm > r_cap * (1.0 + 1e-9) {
        return Err(NvError::InvalidArgument(format!(
            "lateral distance {lateral_nm} nm exceeds the coupling's maximum distance {r_cap:.3} nm"
        )));
    }
    if lateral_nm >= r_cap * (1.0 - 1e-9) {
        return Ok(DistanceRange {
            r_min_nm: lateral_nm,
            r_max_nm: lateral_nm,
            z_min_nm: 0.0,
            z_max_nm: 0.0,
        });
    }
    let ez = normalize(&surface_normal);
    let trial = if ez[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let ex = normalize(&crate::hamiltonian::cross(&trial, &ez));
    let ey = crate::hamiltonian::cross(&ez, &ex);
    let z_top = (r_cap * r_cap - lateral_nm * lateral_nm).max(0.0).sqrt();
    let mismatch = |phi: f64, z: f64| {
        let (c, s) = (phi.cos(), phi.sin());
        let v: Vec3 = std::array::from_fn(|i| lateral_nm * (c * ex[i] + s * ey[i]) + z * ez[i]);
        let r = (lateral_nm * lateral_nm + z * z).sqrt();
        k.dipolar_prefactor_hz_nm3 * angular_factor(&a.axis, &b.axis, &normalize(&v)).abs() - nu * r.powi(3)
    };
    let roots: Vec<(f64, f64)> = (0..AZIMUTH_STEPS)
        .into_par_iter()
        .flat_map_iter(|ip| {
            let phi = ip as f64 * std::f64::consts::TAU / AZIMUTH_STEPS as f64;
            let mut out = Vec::new();
            let mut prev = mismatch(phi, 0.0);
            let mut z_prev = 0.0;
            for iz in 1..=DEPTH_STEPS {
                let z = z_top * iz as f64 / DEPTH_STEPS as f64;
                let cur = mismatch(phi, z);
                if prev == 0.0 || prev.signum() != cur.signum() {
                    let zr = crate::fit::bisect(|zz| mismatch(phi, zz), z_prev, z, 1e-9).unwrap_or(z_prev);
                    out.push(((lateral_nm * lateral_nm + zr * zr).sqrt(), zr));
                }
                prev = cur;
                z_prev = z;
            }
            out
        })
        .collect();
    if roots.is_empty() {
        return Err(NvError::InvalidArgument("no pair geometry matches the lateral distance and coupling".into()));
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| roots.iter().map(pick).fold(init, f);
    Ok(DistanceRange {
        r_min_nm: fold(f64::min, f64::INFINITY, |p| p.0),
        r_max_nm: fold(f64::max, 0.0, |p| p.0),
        z_min_nm: fold(f64::min, f64::INFINITY, |p| p.1),
        z_max_nm: fold(f64::max, 0.0, |p| p.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn area_cdf_oracle(w: f64, h: f64, d0: f64) -> f64 {
        // 1D integral of the triangular x-difference density against the y-difference CDF.
        let n = 200_000;
        let step = 2.0 * w / n as f64;
        (0..n)
            .map(|i| {
                let x = -w + (i as f64 + 0.5) * step;
                if x.abs() >= d0 {
                    return 0.0;
                }
                let y = (d0 * d0 - x * x).sqrt();
                let py = if y < h { 1.0 - (1.0 - y / h).powi(2) } else { 1.0 };
                (w - x.abs()) / (w * w) * py * step
            })
            .sum()
    }

    #[test]
    fn rectangle_oracle_value() {
        assert!((area_cdf_oracle(50.0, 40.0, 30.0) - 0.70497).abs() < 1e-5);
    }

    #[test]
    fn vanishing_straggle_fills_the_aperture() {
        let ap = ApertureSpec::default();
        let land = sample_landings(&ap, &StraggleModel::per_axis(1e-9), 20_000, 4).unwrap();
        assert!(land.iter().all(|p| p[0].abs() <= 25.0 && p[1].abs() <= 20.0));
        let mean_x = land.iter().map(|p| p[0]).sum::<f64>() / land.len() as f64;
        let var_x = land.iter().map(|p| p[0] * p[0]).sum::<f64>() / land.len() as f64;
        assert!(mean_x.abs() < 0.5 && (var_x - 2500.0 / 12.0).abs() < 8.0);
        let row = StraggleRow {
            energy_kev: 1.0,
            sigma_nm: 1e-9,
            depth_nm: 0.0,
        };
        let y = pair_yield(&row, &ap, StraggleKind::PerAxis, 30.0, 200_000, 8).unwrap();
        let err = (0.70497f64 * 0.29503 / 100_000.0).sqrt();
        assert!((y - 0.70497).abs() < 3.0 * err, "{y}");
    }

    #[test]
    fn sample_spread_matches_straggle() {
        let n = 100_000;
        let land = sample_landings(&ApertureSpec::default(), &StraggleModel::per_axis(118.9), n, 1).unwrap();
        let var_x = land.iter().map(|p| p[0] * p[0]).sum::<f64>() / n as f64;
        // Aperture adds w²/12 to the per-axis variance.
        let want = 118.9f64.powi(2) + 2500.0 / 12.0;
        let se = want * (2.0 / n as f64).sqrt();
        assert!((var_x - want).abs() < 3.0 * se);
        assert_eq!(land, sample_landings(&ApertureSpec::default(), &StraggleModel::per_axis(118.9), n, 1).unwrap());
    }

    #[test]
    fn rayleigh_limit_without_aperture() {
        let ap = ApertureSpec {
            width_nm: 1e-9,
            height_nm: 1e-9,
        };
        let land = sample_landings(&ap, &StraggleModel::per_axis(118.9), 100_000, 2).unwrap();
        let st = pair_distance_stats(&land, 30.0, Pairing::Independent, 5.0, 1000.0).unwrap();
        let want = rayleigh_fraction(118.9, 30.0);
        assert!((want - 0.01579).abs() < 1e-4);
        assert!((st.fraction - want).abs() < 3.0 * st.std_err);
        assert!((pair_distance_stats(&land, 1e6, Pairing::Independent, 5.0, 10.0).unwrap().fraction - 1.0).abs() < 1e-15);
    }

    #[test]
    fn all_pairs_counts_every_pair() {
        let land = [[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]];
        let st = pair_distance_stats(&land, 6.0, Pairing::AllPairs, 1.0, 20.0).unwrap();
        assert_eq!(st.n_pairs, 3);
        assert!((st.fraction - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(st.counts[5], 2);
        assert_eq!(st.counts[10], 1);
    }

    #[test]
    fn yield_grows_as_straggle_shrinks() {
        let ap = ApertureSpec::default();
        let row = |s| StraggleRow {
            energy_kev: 1000.0,
            sigma_nm: s,
            depth_nm: 730.0,
        };
        let y = yield_table(&[row(118.9), row(59.45)], &ap, StraggleKind::PerAxis, 30.0, 100_000, 3).unwrap();
        assert!(y[1] > y[0]);
        assert!((1.0..=3.5).contains(&(100.0 * y[0])), "{}", y[0]);
        let radial = pair_yield(&row(118.9), &ap, StraggleKind::Radial, 30.0, 100_000, 3).unwrap();
        assert!(radial > y[0]);
        assert!(yield_table(&[], &ap, StraggleKind::PerAxis, 30.0, 10, 0).is_err());
    }

    fn noiseless() -> ImagingSettings {
        ImagingSettings {
            shot_noise: false,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_difference_is_one_psf() {
        let s = ImagingSettings {
            contrasts: [1.0, 0.0],
            ..noiseless()
        };
        let pos = [[10.0, -5.0], [-30.0, 20.0]];
        let (a, b) = synth_difference_images(pos, &s, 0).unwrap();
        for iy in 0..s.grid.ny {
            for ix in 0..s.grid.nx {
                let p = s.grid.position(ix, iy);
                assert!((a.values[iy * s.grid.nx + ix] - s.psf.value(p, pos[0])).abs() < 1e-9);
            }
        }
        assert!(b.values.iter().all(|v| *v == 0.0));
        assert!(locate_by_convolution(&b, &b).is_err());
    }

    #[test]
    fn direct_and_fft_correlations_agree() {
        let s = ImagingSettings {
            grid: GridSpec::centred(32, 25.0),
            psf: PsfModel {
                sigma_x_nm: 90.0,
                sigma_y_nm: 120.0,
                amplitude: 300.0,
            },
            ..Default::default()
        };
        let (a, b) = synth_difference_images([[0.0, 0.0], [40.0, 10.0]], &s, 6).unwrap();
        let d = cross_correlation(&a, &b, CorrelationMethod::Direct).unwrap();
        let f = cross_correlation(&a, &b, CorrelationMethod::Fft).unwrap();
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in d.iter().zip(&f) {
            assert!((x - y).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn noiseless_localization_is_unbiased() {
        let s = noiseless();
        let (a, b) = synth_difference_images([[0.0, 0.0], [0.0, 0.0]], &s, 0).unwrap();
        let z = locate_by_convolution(&a, &b).unwrap();
        assert!(z[0].abs() < 1e-9 && z[1].abs() < 1e-9);
        for sep in [[21.8, 0.0], [15.0, -13.0], [7.3, 31.1]] {
            let run = localize_repetitions(sep, &s, 1, 0).unwrap();
            let d = run.displacements[0];
            assert!((d[0] - sep[0]).abs() < 0.1 && (d[1] - sep[1]).abs() < 0.1, "{d:?}");
        }
    }

    #[test]
    fn common_translation_leaves_displacement() {
        let s = noiseless();
        let loc = |shift: [f64; 2]| {
            let (a, b) = synth_difference_images([[shift[0], shift[1]], [shift[0] + 21.8, shift[1] + 4.0]], &s, 0).unwrap();
            locate_by_convolution(&a, &b).unwrap()
        };
        let base = loc([0.0, 0.0]);
        for shift in [[40.0, 0.0], [-60.0, 20.0], [13.0, -7.0]] {
            let d = loc(shift);
            assert!((d[0] - base[0]).abs() < 1e-6 && (d[1] - base[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn noisy_centroid_error_is_small_against_psf() {
        let run = localize_repetitions([21.8, 0.0], &ImagingSettings::default(), 42, 100).unwrap();
        assert!(run.std_distance_nm < 0.1 * 150.0);
    }

    #[test]
    fn distance_range_from_lateral_and_coupling() {
        let k = SpinConstants::default();
        let (a, b) = (NvOrientation::nv_a(), NvOrientation::nv_b());
        let r = absolute_distance(21.8, 4.93e3, &a, &b, [0.0, 0.0, 1.0], &k).unwrap();
        assert!(r.r_min_nm >= 21.8 - 1e-9 && r.r_max_nm <= 26.1);
        assert!(r.r_min_nm < 24.0 && r.r_max_nm > 22.0, "{r:?}");
        let rmax = crate::hamiltonian::max_distance_from_coupling(4.93e3, &a, &b, &k, 0.25).unwrap();
        let edge = absolute_distance(rmax, 4.93e3, &a, &b, [0.0, 0.0, 1.0], &k).unwrap();
        assert_eq!(edge.z_max_nm, 0.0);
        assert!(absolute_distance(rmax + 1.0, 4.93e3, &a, &b, [0.0, 0.0, 1.0], &k).is_err());
    }
}
