//! Linear (open-boundary) convolution of nodal fields with truncated
//! kernels, by direct summation or zero-padded FFT.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Grid;

/// Gaussian stencils stop at this many standard deviations.
pub const GAUSSIAN_RADIUS_SIGMAS: f64 = 7.0;
/// Exponential stencils stop at this many multiples of `1/kappa`.
pub const EXPONENTIAL_RADIUS_SCALES: f64 = 28.0;

// 8-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Convolution weights `W[k]` so that `(K * rho)(x_i) ~ sum_k W[k] rho[i - k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    radius: [usize; 2],
    weights: Vec<f64>,
}

impl Stencil {
    fn build(grid: &Grid, radius: [usize; 2], w: impl Fn(i64, i64) -> f64) -> Self {
        let [r0, r1] = radius;
        let mut weights = Vec::with_capacity((2 * r0 + 1) * (2 * r1 + 1));
        for k0 in -(r0 as i64)..=r0 as i64 {
            for k1 in -(r1 as i64)..=r1 as i64 {
                weights.push(w(k0, k1));
            }
        }
        let _ = grid;
        Self { radius, weights }
    }

    fn radius_for(grid: &Grid, length: f64) -> [usize; 2] {
        let mut r = [0usize; 2];
        for (a, ra) in r.iter_mut().enumerate().take(grid.dim()) {
            *ra = ((length / grid.spacing(a)).ceil() as usize).clamp(1, grid.points()[a] - 1);
        }
        r
    }

    /// Sampled Gaussian of standard deviation `sigma` per axis, times the
    /// node volume.
    pub fn gaussian(grid: &Grid, sigma: f64) -> Self {
        let radius = Self::radius_for(grid, GAUSSIAN_RADIUS_SIGMAS * sigma);
        let dim = grid.dim() as i32;
        let norm = grid.cell_volume() / (2.0 * PI * sigma * sigma).powf(dim as f64 / 2.0);
        let (h0, h1) = (grid.spacing(0), grid.spacing(1));
        Self::build(grid, radius, |k0, k1| {
            let x = k0 as f64 * h0;
            let y = if dim == 2 { k1 as f64 * h1 } else { 0.0 };
            norm * (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
    }

    /// Exponential smoothing kernel integrated exactly against the
    /// piecewise-(bi)linear interpolant of the field, so the stencil stays
    /// accurate when `1/kappa` is comparable to or below the grid spacing.
    pub fn exponential(grid: &Grid, kappa: f64) -> Self {
        let radius = Self::radius_for(grid, EXPONENTIAL_RADIUS_SCALES / kappa);
        let h0 = grid.spacing(0);
        if grid.dim() == 1 {
            let peak = 0.5 * kappa;
            return Self::build(grid, radius, |k0, _| {
                let m = if k0.abs() <= 2 { 16 } else { 2 };
                let x = k0 as f64 * h0;
                // hat(s) = 1 - |s|/h on [-h, h]
                hat_integral(h0, m, 1.0 / kappa, |s| peak * (-kappa * (x - s).abs()).exp())
            });
        }
        let h1 = grid.spacing(1);
        let peak = kappa * kappa / (2.0 * PI);
        Self::build(grid, radius, |k0, k1| {
            let near = k0.abs().max(k1.abs());
            let m = match near {
                0 | 1 => 16,
                2 | 3 => 6,
                _ => 2,
            };
            let (x, y) = (k0 as f64 * h0, k1 as f64 * h1);
            hat_integral(h0, m, 1.0 / kappa, |s0| {
                hat_integral(h1, m, 1.0 / kappa, |s1| {
                    let (dx, dy) = (x - s0, y - s1);
                    peak * (-kappa * (dx * dx + dy * dy).sqrt()).exp()
                })
            })
        })
    }

    pub fn radius(&self) -> [usize; 2] {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, k0: i64, k1: i64) -> f64 {
        let [r0, r1] = self.radius;
        if k0.unsigned_abs() as usize > r0 || k1.unsigned_abs() as usize > r1 {
            return 0.0;
        }
        let w1 = 2 * r1 + 1;
        self.weights[(k0 + r0 as i64) as usize * w1 + (k1 + r1 as i64) as usize]
    }

    /// Sum of all weights; the kernel's integral up to truncation.
    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// `int_{-h}^{h} f(s) (1 - |s|/h) ds` with each half split into `m` panels.
/// When `f` varies on a length `scale` much shorter than a panel, the end
/// panels are refined geometrically toward `s = 0` and `s = h`, where the
/// kernel cusps sit.
fn hat_integral(h: f64, m: usize, scale: f64, f: impl Fn(f64) -> f64) -> f64 {
    let panel = h / m as f64;
    let mut cuts: Vec<f64> = (0..=m).map(|p| p as f64 * panel).collect();
    if panel > 2.0 * scale {
        let mut inner = Vec::new();
        let mut w = 0.5 * panel;
        while w > 0.125 * scale {
            inner.push(w);
            w *= 0.5;
        }
        cuts.extend(inner.iter().copied());
        cuts.extend(inner.iter().map(|w| h - w));
        cuts.sort_by(f64::total_cmp);
    }
    let mut total = 0.0;
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let s = mid + half * x;
            let hat = 1.0 - s / h;
            total += half * w * hat * (f(s) + f(-s));
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvolutionMethod {
    Direct,
    Fft,
    /// FFT unless the stencil is tiny.
    #[default]
    Auto,
}

struct FftPlan {
    len: [usize; 2],
    forward: [Arc<dyn Fft<f64>>; 2],
    inverse: [Arc<dyn Fft<f64>>; 2],
    spectrum: Vec<Complex64>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("len", &self.len).finish()
    }
}

/// Applies one stencil on one grid. Outputs are truncated to the grid:
/// whatever the kernel spreads past the boundary is lost.
#[derive(Debug)]
pub struct Convolver {
    grid: Grid,
    stencil: Stencil,
    fft: Option<FftPlan>,
}

/// Smallest integer >= n whose prime factors are all in {2, 3, 5, 7}.
fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

impl Convolver {
    pub fn new(grid: Grid, stencil: Stencil, method: ConvolutionMethod) -> Self {
        let use_fft = match method {
            ConvolutionMethod::Direct => false,
            ConvolutionMethod::Fft => true,
            ConvolutionMethod::Auto => stencil.len() > 32,
        };
        let fft = use_fft.then(|| Self::plan(&grid, &stencil));
        Self { grid, stencil, fft }
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    pub fn uses_fft(&self) -> bool {
        self.fft.is_some()
    }

    fn plan(grid: &Grid, stencil: &Stencil) -> FftPlan {
        let n = grid.points();
        let r = stencil.radius();
        let len = [
            if n[0] > 1 { fast_len(n[0] + r[0]) } else { 1 },
            if n[1] > 1 { fast_len(n[1] + r[1]) } else { 1 },
        ];
        let mut planner = FftPlanner::<f64>::new();
        let forward = [planner.plan_fft_forward(len[0]), planner.plan_fft_forward(len[1])];
        let inverse = [planner.plan_fft_inverse(len[0]), planner.plan_fft_inverse(len[1])];
        let mut plan = FftPlan { len, forward, inverse, spectrum: Vec::new() };
        let mut buf = vec![Complex64::new(0.0, 0.0); len[0] * len[1]];
        let (r0, r1) = (r[0] as i64, r[1] as i64);
        for k0 in -r0..=r0 {
            for k1 in -r1..=r1 {
                let i0 = k0.rem_euclid(len[0] as i64) as usize;
                let i1 = k1.rem_euclid(len[1] as i64) as usize;
                buf[i0 * len[1] + i1].re += stencil.get(k0, k1);
            }
        }
        fft2(&plan, &mut buf, false);
        plan.spectrum = buf;
        plan
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.apply_pair(input, None).0
    }

    /// Convolve one or two fields. With FFT both are processed by a single
    /// complex transform (one as the real part, one as the imaginary part).
    pub fn apply_pair(&self, a: &[f64], b: Option<&[f64]>) -> (Vec<f64>, Option<Vec<f64>>) {
        assert_eq!(a.len(), self.grid.len());
        if let Some(b) = b {
            assert_eq!(b.len(), self.grid.len());
        }
        match &self.fft {
            None => (self.direct(a), b.map(|b| self.direct(b))),
            Some(plan) => {
                let [n0, n1] = self.grid.points();
                let [l0, l1] = plan.len;
                let mut buf = vec![Complex64::new(0.0, 0.0); l0 * l1];
                for i0 in 0..n0 {
                    for i1 in 0..n1 {
                        let idx = i0 * n1 + i1;
                        buf[i0 * l1 + i1] = Complex64::new(a[idx], b.map_or(0.0, |b| b[idx]));
                    }
                }
                fft2(plan, &mut buf, false);
                for (z, k) in buf.iter_mut().zip(&plan.spectrum) {
                    *z *= k;
                }
                fft2(plan, &mut buf, true);
                let scale = 1.0 / (l0 * l1) as f64;
                let mut out_a = vec![0.0; n0 * n1];
                let mut out_b = b.map(|_| vec![0.0; n0 * n1]);
                for i0 in 0..n0 {
                    for i1 in 0..n1 {
                        let z = buf[i0 * l1 + i1];
                        out_a[i0 * n1 + i1] = z.re * scale;
                        if let Some(ob) = out_b.as_mut() {
                            ob[i0 * n1 + i1] = z.im * scale;
                        }
                    }
                }
                (out_a, out_b)
            }
        }
    }

    fn direct(&self, input: &[f64]) -> Vec<f64> {
        let [n0, n1] = self.grid.points();
        let [r0, r1] = self.stencil.radius();
        let (r0, r1) = (r0 as i64, r1 as i64);
        let mut out = vec![0.0; n0 * n1];
        for i0 in 0..n0 as i64 {
            for i1 in 0..n1 as i64 {
                let mut acc = 0.0;
                for k0 in (-r0).max(i0 - n0 as i64 + 1)..=r0.min(i0) {
                    let j0 = (i0 - k0) as usize;
                    for k1 in (-r1).max(i1 - n1 as i64 + 1)..=r1.min(i1) {
                        let j1 = (i1 - k1) as usize;
                        acc += self.stencil.get(k0, k1) * input[j0 * n1 + j1];
                    }
                }
                out[i0 as usize * n1 + i1 as usize] = acc;
            }
        }
        out
    }
}

/// In-place 2D FFT (row-column); axes of length 1 are skipped.
fn fft2(plan: &FftPlan, buf: &mut [Complex64], inverse: bool) {
    let [l0, l1] = plan.len;
    let pick = |axis: usize| if inverse { &plan.inverse[axis] } else { &plan.forward[axis] };
    if l1 > 1 {
        pick(1).process(buf);
    }
    if l0 > 1 {
        if l1 == 1 {
            pick(0).process(buf);
        } else {
            let mut t = vec![Complex64::new(0.0, 0.0); l0 * l1];
            for i0 in 0..l0 {
                for i1 in 0..l1 {
                    t[i1 * l0 + i0] = buf[i0 * l1 + i1];
                }
            }
            pick(0).process(&mut t);
            for i1 in 0..l1 {
                for i0 in 0..l0 {
                    buf[i0 * l1 + i1] = t[i1 * l0 + i0];
                }
            }
        }
    }
}
